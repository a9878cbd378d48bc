//! In-process walkthrough on a synthetic sample: clean, encode, balance,
//! train two models and compare them with the sign test.
//!
//! Run with:
//!
//! ```bash
//! cargo run --release --example end_to_end
//! ```

use readmit_core::balance::{smote, undersample_majority, BalanceConfig};
use readmit_core::eval::{cross_validate, FoldPlan};
use readmit_core::features::{build_matrix, default_plan};
use readmit_core::ingest::{clean, RawTable};
use readmit_core::learners::{Family, LearnerSpec, ParamValue};
use readmit_core::stats::sign_test;
use readmit_core::synth::generate;

fn main() {
    let (csv_text, _) = generate(4000, 11);
    let table = RawTable::from_reader(csv_text.as_bytes()).unwrap();
    let outcome = clean(&table).unwrap();
    println!("{}", outcome.report);

    let (matrix, manifest) = build_matrix(&outcome.table, &default_plan(true)).unwrap();
    println!("encoded {} features", manifest.n_features);

    let cfg = BalanceConfig {
        seed: 7,
        ..Default::default()
    };
    let undersampled = undersample_majority(&matrix, &cfg).unwrap();
    let balanced = smote(&undersampled, &cfg).unwrap().matrix;
    println!("balanced class counts: {:?}", balanced.class_histogram(3));

    let plan = FoldPlan::new(balanced.labels(), 5, true, 3).unwrap();
    let gb =
        LearnerSpec::new(Family::GradientBoosting, 1).with("n_estimators", ParamValue::Int(40));
    let nb = LearnerSpec::new(Family::NaiveBayes, 1);
    let cv_gb = cross_validate(&gb, &balanced, &plan).unwrap();
    let cv_nb = cross_validate(&nb, &balanced, &plan).unwrap();
    println!(
        "gradient boosting mean accuracy {:.4}, naive Bayes {:.4}",
        cv_gb.mean.accuracy, cv_nb.mean.accuracy
    );

    let a: Vec<f64> = cv_gb.folds.iter().map(|f| f.accuracy).collect();
    let b: Vec<f64> = cv_nb.folds.iter().map(|f| f.accuracy).collect();
    let test = sign_test(&a, &b, 0.05).unwrap();
    println!(
        "sign test: wins {} / {} (ties {}), p = {:.5}, {:?}",
        test.wins_a, test.wins_b, test.ties, test.p_value_two_sided, test.decision
    );
}
