//! The six classifier families behind one fit/predict contract.
//!
//! Each family lives in its own module with a concrete model type; this
//! module adds the named-parameter layer ([`LearnerSpec`]) used by the
//! tuner and the CLI, validates parameter names and domains, and wraps the
//! fitted model with timing and persistence.

pub mod boosting;
pub mod forest;
pub mod logistic;
pub mod naive_bayes;
pub mod svm;
pub mod tree;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMatrix;

use boosting::{BoostConfig, GradientBoostingModel};
use forest::{DecisionTreeModel, ForestConfig, RandomForestModel};
use logistic::{LogisticConfig, SoftmaxRegression};
use naive_bayes::GaussianNb;
use svm::{LinearSvmOvr, SvmConfig};
use tree::{MaxFeatures, TreeConfig};

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("cannot fit on empty data")]
    EmptyData,
    #[error("{family}: unknown parameter '{name}'")]
    UnknownParam { family: Family, name: String },
    #[error("{family}: parameter '{name}' {reason} (got {value})")]
    BadParamValue {
        family: Family,
        name: String,
        reason: String,
        value: String,
    },
    #[error("row width {got} does not match training width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file: {0}")]
    Serde(#[from] serde_json::Error),
}

/// The classifier families exercised by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    NaiveBayes,
    DecisionTree,
    RandomForest,
    GradientBoosting,
    LogisticRegression,
    Svm,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::NaiveBayes,
        Family::GradientBoosting,
        Family::RandomForest,
        Family::DecisionTree,
        Family::LogisticRegression,
        Family::Svm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::NaiveBayes => "naive_bayes",
            Family::DecisionTree => "decision_tree",
            Family::RandomForest => "random_forest",
            Family::GradientBoosting => "gradient_boosting",
            Family::LogisticRegression => "logistic_regression",
            Family::Svm => "svm",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Family::NaiveBayes => "Naive Bayes",
            Family::DecisionTree => "Decision Tree",
            Family::RandomForest => "Random Forest",
            Family::GradientBoosting => "Gradient Boosting",
            Family::LogisticRegression => "Logistic Regression",
            Family::Svm => "SVM",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive_bayes" | "nb" => Ok(Family::NaiveBayes),
            "decision_tree" | "dt" => Ok(Family::DecisionTree),
            "random_forest" | "rf" => Ok(Family::RandomForest),
            "gradient_boosting" | "gb" => Ok(Family::GradientBoosting),
            "logistic_regression" | "lr" => Ok(Family::LogisticRegression),
            "svm" => Ok(Family::Svm),
            other => Err(format!("unknown learner family '{other}'")),
        }
    }
}

/// A hyperparameter value: integer, real, or a token like "auto" / "none".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Str(String),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Float(v) => write!(f, "{v}"),
            ParamValue::Str(v) => f.write_str(v),
        }
    }
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(v) => Some(*v as f64),
            ParamValue::Float(v) => Some(*v),
            ParamValue::Str(_) => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            ParamValue::Int(v) => Some(*v),
            ParamValue::Float(v) if v.fract() == 0.0 => Some(*v as i64),
            _ => None,
        }
    }

    pub fn is_numeric(&self) -> bool {
        !matches!(self, ParamValue::Str(_))
    }
}

/// Named parameter assignments, in insertion order.
pub type Params = Vec<(String, ParamValue)>;

/// A classifier family plus hyperparameters and a seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub family: Family,
    pub params: Params,
    pub seed: u64,
}

impl LearnerSpec {
    pub fn new(family: Family, seed: u64) -> Self {
        LearnerSpec {
            family,
            params: Vec::new(),
            seed,
        }
    }

    pub fn with(mut self, name: &str, value: ParamValue) -> Self {
        self.params.push((name.to_string(), value));
        self
    }

    pub fn get(&self, name: &str) -> Option<&ParamValue> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }
}

struct ParamReader<'a> {
    spec: &'a LearnerSpec,
    allowed: &'static [&'static str],
}

impl<'a> ParamReader<'a> {
    fn new(spec: &'a LearnerSpec, allowed: &'static [&'static str]) -> Result<Self, LearnError> {
        for (name, _) in &spec.params {
            if !allowed.contains(&name.as_str()) {
                return Err(LearnError::UnknownParam {
                    family: spec.family,
                    name: name.clone(),
                });
            }
        }
        Ok(ParamReader { spec, allowed })
    }

    fn bad(&self, name: &str, reason: &str, value: &ParamValue) -> LearnError {
        LearnError::BadParamValue {
            family: self.spec.family,
            name: name.to_string(),
            reason: reason.to_string(),
            value: value.to_string(),
        }
    }

    fn float(&self, name: &str, default: f64, min_exclusive: f64) -> Result<f64, LearnError> {
        debug_assert!(self.allowed.contains(&name));
        match self.spec.get(name) {
            None => Ok(default),
            Some(v) => {
                let x = v
                    .as_f64()
                    .ok_or_else(|| self.bad(name, "must be a number", v))?;
                if x <= min_exclusive || !x.is_finite() {
                    return Err(self.bad(name, "is out of range", v));
                }
                Ok(x)
            }
        }
    }

    fn count(&self, name: &str, default: usize, min: usize) -> Result<usize, LearnError> {
        match self.spec.get(name) {
            None => Ok(default),
            Some(v) => {
                let x = v
                    .as_int()
                    .ok_or_else(|| self.bad(name, "must be an integer", v))?;
                if x < min as i64 {
                    return Err(self.bad(name, &format!("must be at least {min}"), v));
                }
                Ok(x as usize)
            }
        }
    }

    /// `max_depth`: positive integer or "none" for unlimited.
    fn max_depth(&self, name: &str) -> Result<Option<u32>, LearnError> {
        match self.spec.get(name) {
            None => Ok(None),
            Some(ParamValue::Str(s)) if s.eq_ignore_ascii_case("none") => Ok(None),
            Some(v) => {
                let x = v
                    .as_int()
                    .ok_or_else(|| self.bad(name, "must be an integer or \"none\"", v))?;
                if x < 0 {
                    return Err(self.bad(name, "must be non-negative", v));
                }
                Ok(Some(x as u32))
            }
        }
    }

    /// `max_features`: a count, "auto" (sqrt p) or "none"/"all".
    fn max_features(&self, name: &str, default: MaxFeatures) -> Result<MaxFeatures, LearnError> {
        match self.spec.get(name) {
            None => Ok(default),
            Some(ParamValue::Str(s)) if s.eq_ignore_ascii_case("auto") => Ok(MaxFeatures::Sqrt),
            Some(ParamValue::Str(s))
                if s.eq_ignore_ascii_case("none") || s.eq_ignore_ascii_case("all") =>
            {
                Ok(MaxFeatures::All)
            }
            Some(v) => {
                let x = v
                    .as_int()
                    .ok_or_else(|| self.bad(name, "must be a count, \"auto\" or \"none\"", v))?;
                if x < 1 {
                    return Err(self.bad(name, "must be at least 1", v));
                }
                Ok(MaxFeatures::Count(x as usize))
            }
        }
    }

    fn flag(&self, name: &str, default: bool) -> Result<bool, LearnError> {
        match self.spec.get(name) {
            None => Ok(default),
            Some(ParamValue::Str(s)) if s == "true" => Ok(true),
            Some(ParamValue::Str(s)) if s == "false" => Ok(false),
            Some(v) => Err(self.bad(name, "must be \"true\" or \"false\"", v)),
        }
    }
}

/// Default epoch budget for the SVM trainer (the family exposes only C).
pub const SVM_EPOCHS: usize = 60;

#[derive(Debug, Clone, Serialize, Deserialize)]
enum ModelKind {
    Nb(GaussianNb),
    Tree(DecisionTreeModel),
    Forest(RandomForestModel),
    Boost(GradientBoostingModel),
    LogReg(SoftmaxRegression),
    Svm(LinearSvmOvr),
}

/// An immutable fitted model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedModel {
    pub family: Family,
    pub n_features: usize,
    pub n_classes: usize,
    /// Training wall time; volatile, excluded from serialized models so
    /// saved files stay byte-reproducible (wall times live in the
    /// timings files).
    #[serde(skip_serializing, default)]
    pub train_seconds: f64,
    kind: ModelKind,
}

/// Fit a model, inferring the class count from the labels.
pub fn fit(spec: &LearnerSpec, data: &FeatureMatrix) -> Result<TrainedModel, LearnError> {
    fit_k(spec, data, data.n_classes().max(2))
}

/// Fit a model with an explicit class count (folds may miss a class).
pub fn fit_k(
    spec: &LearnerSpec,
    data: &FeatureMatrix,
    n_classes: usize,
) -> Result<TrainedModel, LearnError> {
    if data.n_rows() == 0 {
        return Err(LearnError::EmptyData);
    }
    let started = Instant::now();
    let kind = match spec.family {
        Family::NaiveBayes => {
            ParamReader::new(spec, &[])?;
            ModelKind::Nb(GaussianNb::fit(data, n_classes))
        }
        Family::DecisionTree => {
            let r = ParamReader::new(
                spec,
                &[
                    "max_depth",
                    "min_samples_split",
                    "min_samples_leaf",
                    "max_features",
                ],
            )?;
            let cfg = TreeConfig {
                max_depth: r.max_depth("max_depth")?,
                min_samples_split: r.count("min_samples_split", 2, 2)? as u64,
                min_samples_leaf: r.count("min_samples_leaf", 1, 1)? as u64,
                max_features: r.max_features("max_features", MaxFeatures::All)?,
            };
            ModelKind::Tree(DecisionTreeModel::fit(data, &cfg, spec.seed, n_classes))
        }
        Family::RandomForest => {
            let r = ParamReader::new(
                spec,
                &[
                    "n_estimators",
                    "max_depth",
                    "min_samples_split",
                    "max_features",
                    "bootstrap",
                ],
            )?;
            let cfg = ForestConfig {
                n_estimators: r.count("n_estimators", 100, 1)?,
                tree: TreeConfig {
                    max_depth: r.max_depth("max_depth")?,
                    min_samples_split: r.count("min_samples_split", 2, 2)? as u64,
                    min_samples_leaf: 1,
                    max_features: r.max_features("max_features", MaxFeatures::Sqrt)?,
                },
                bootstrap: r.flag("bootstrap", true)?,
            };
            ModelKind::Forest(RandomForestModel::fit(data, &cfg, spec.seed, n_classes))
        }
        Family::GradientBoosting => {
            let r = ParamReader::new(spec, &["learning_rate", "n_estimators", "max_depth"])?;
            let cfg = BoostConfig {
                learning_rate: r.float("learning_rate", 0.1, 0.0)?,
                n_estimators: r.count("n_estimators", 100, 0)?,
                max_depth: r.max_depth("max_depth")?.unwrap_or(3),
            };
            ModelKind::Boost(GradientBoostingModel::fit(data, &cfg, n_classes))
        }
        Family::LogisticRegression => {
            let r = ParamReader::new(spec, &["C", "max_iter"])?;
            let cfg = LogisticConfig {
                c: r.float("C", 1.0, 0.0)?,
                max_iter: r.count("max_iter", LogisticConfig::default().max_iter, 0)?,
            };
            ModelKind::LogReg(SoftmaxRegression::fit(data, &cfg, n_classes))
        }
        Family::Svm => {
            let r = ParamReader::new(spec, &["C"])?;
            let cfg = SvmConfig {
                c: r.float("C", 1.0, 0.0)?,
                epochs: SVM_EPOCHS,
            };
            ModelKind::Svm(LinearSvmOvr::fit(data, &cfg, spec.seed, n_classes))
        }
    };
    Ok(TrainedModel {
        family: spec.family,
        n_features: data.n_features(),
        n_classes,
        train_seconds: started.elapsed().as_secs_f64(),
        kind,
    })
}

impl TrainedModel {
    fn predict_one(&self, row: &[f64]) -> u8 {
        match &self.kind {
            ModelKind::Nb(m) => m.predict_row(row),
            ModelKind::Tree(m) => m.predict_row(row),
            ModelKind::Forest(m) => m.predict_row(row),
            ModelKind::Boost(m) => m.predict_row(row),
            ModelKind::LogReg(m) => m.predict_row(row),
            ModelKind::Svm(m) => m.predict_row(row),
        }
    }

    /// One label per row; prediction ties resolve to the lowest class.
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<u8>, LearnError> {
        if x.n_features() != self.n_features {
            return Err(LearnError::WidthMismatch {
                expected: self.n_features,
                got: x.n_features(),
            });
        }
        Ok((0..x.n_rows())
            .into_par_iter()
            .map(|i| self.predict_one(x.row(i)))
            .collect())
    }

    /// Predict from a row-major slice; its length must be a multiple of
    /// the training width.
    pub fn predict_rows(&self, rows: &[f64]) -> Result<Vec<u8>, LearnError> {
        if self.n_features == 0 || !rows.len().is_multiple_of(self.n_features) {
            return Err(LearnError::WidthMismatch {
                expected: self.n_features,
                got: rows.len(),
            });
        }
        Ok(rows
            .chunks(self.n_features)
            .map(|r| self.predict_one(r))
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), LearnError> {
        let file = File::create(path)?;
        serde_json::to_writer(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TrainedModel, LearnError> {
        let file = File::open(path)?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}

/// Model manifest: family, params, seed, wall time, feature width.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelManifest {
    pub family: Family,
    pub params: BTreeMap<String, ParamValue>,
    pub seed: u64,
    pub n_features: usize,
    pub n_classes: usize,
    /// Volatile; skipped when the manifest is written to report files.
    #[serde(skip_serializing, default)]
    pub train_seconds: f64,
}

impl ModelManifest {
    pub fn new(spec: &LearnerSpec, model: &TrainedModel) -> Self {
        ModelManifest {
            family: spec.family,
            params: spec.params.iter().cloned().collect(),
            seed: spec.seed,
            n_features: model.n_features,
            n_classes: model.n_classes,
            train_seconds: model.train_seconds,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> FeatureMatrix {
        let rows: Vec<(Vec<f64>, u8)> = (0..24)
            .map(|i| (vec![i as f64, (i % 4) as f64], (i / 8) as u8))
            .collect();
        FeatureMatrix::new(
            vec!["a".into(), "b".into()],
            rows.iter().flat_map(|(r, _)| r.clone()).collect(),
            rows.iter().map(|(_, l)| *l).collect(),
        )
    }

    #[test]
    fn unknown_param_is_rejected() {
        let spec = LearnerSpec::new(Family::Svm, 0).with("gamma", ParamValue::Float(0.1));
        match fit(&spec, &toy()).unwrap_err() {
            LearnError::UnknownParam { name, .. } => assert_eq!(name, "gamma"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_param_value_is_rejected() {
        let spec = LearnerSpec::new(Family::GradientBoosting, 0)
            .with("learning_rate", ParamValue::Float(-1.0));
        assert!(matches!(
            fit(&spec, &toy()),
            Err(LearnError::BadParamValue { .. })
        ));
    }

    #[test]
    fn empty_data_is_an_error() {
        let empty = FeatureMatrix::new(vec!["a".into()], vec![], vec![]);
        let spec = LearnerSpec::new(Family::NaiveBayes, 0);
        assert!(matches!(fit(&spec, &empty), Err(LearnError::EmptyData)));
    }

    #[test]
    fn predict_empty_is_empty() {
        let model = fit(&LearnerSpec::new(Family::DecisionTree, 0), &toy()).unwrap();
        let empty = FeatureMatrix::new(vec!["a".into(), "b".into()], vec![], vec![]);
        assert_eq!(model.predict(&empty).unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let model = fit(&LearnerSpec::new(Family::NaiveBayes, 0), &toy()).unwrap();
        let narrow = FeatureMatrix::new(vec!["a".into()], vec![1.0], vec![0]);
        assert!(matches!(
            model.predict(&narrow),
            Err(LearnError::WidthMismatch {
                expected: 2,
                got: 1
            })
        ));
        assert!(model.predict_rows(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn unrestricted_tree_memorizes_consistent_data() {
        let x = toy();
        let model = fit(&LearnerSpec::new(Family::DecisionTree, 0), &x).unwrap();
        assert_eq!(model.predict(&x).unwrap(), x.labels());
    }

    #[test]
    fn all_families_fit_and_are_seed_deterministic() {
        let x = toy();
        for family in Family::ALL {
            let spec = LearnerSpec::new(family, 9);
            let a = fit(&spec, &x).unwrap();
            let b = fit(&spec, &x).unwrap();
            assert_eq!(
                a.predict(&x).unwrap(),
                b.predict(&x).unwrap(),
                "family {family} not deterministic"
            );
        }
    }

    #[test]
    fn save_load_roundtrip_preserves_predictions() {
        let x = toy();
        let dir = tempfile::tempdir().unwrap();
        for family in Family::ALL {
            let spec = LearnerSpec::new(family, 4);
            let model = fit(&spec, &x).unwrap();
            let path = dir.path().join(format!("{family}.json"));
            model.save(&path).unwrap();
            let loaded = TrainedModel::load(&path).unwrap();
            assert_eq!(model.predict(&x).unwrap(), loaded.predict(&x).unwrap());
        }
    }

    #[test]
    fn single_point_models_predict_own_label() {
        let x = FeatureMatrix::new(vec!["a".into()], vec![2.0], vec![1]);
        for family in [
            Family::NaiveBayes,
            Family::DecisionTree,
            Family::RandomForest,
        ] {
            let model = fit_k(&LearnerSpec::new(family, 0), &x, 3).unwrap();
            assert_eq!(model.predict(&x).unwrap(), vec![1], "family {family}");
        }
    }
}
