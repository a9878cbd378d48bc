//! Three-class hospital-readmission classification toolkit: feature
//! engineering for the Diabetes 130-US-hospitals data, undersample+SMOTE
//! class balancing, six from-scratch classifiers, cross-validated grid
//! search, macro/micro evaluation and sign-test model comparison — all
//! deterministic under one master seed.

pub mod balance;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod learners;
pub mod pipeline;
pub mod seed;
pub mod stats;
pub mod synth;
pub mod tune;

pub use balance::{smote, undersample_majority, BalanceConfig, BalancedDataset};
pub use eval::{confusion, cross_validate, metrics, split, ConfusionMatrix, EvalReport, FoldPlan};
pub use features::{build_matrix, default_plan, EncodingPlan, FeatureMatrix};
pub use ingest::{clean, load_id_mappings, load_raw, missing_profile, RawTable};
pub use learners::{fit, Family, LearnerSpec, ParamValue, TrainedModel};
pub use pipeline::RunConfig;
pub use stats::{boxplot_summary, sign_test, BoxplotSummary, SignTestResult};
pub use tune::{builtin_grid, grid_search, summarize, GridSearchResult, ParamGrid};
