//! Confusion matrices, macro/micro metrics, seeded splits and stratified
//! cross-validation.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMatrix;
use crate::learners::{fit_k, LearnError, LearnerSpec};
use crate::seed::rng_for;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("y_true and y_pred lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("label {label} is outside 0..{k}")]
    LabelOutOfRange { label: u8, k: usize },
    #[error("cannot compute metrics of an empty confusion matrix")]
    EmptyMatrix,
    #[error("split fraction must be in (0,1), got {0}")]
    BadFraction(f64),
    #[error("stratified split requires every class non-empty (class {0} is empty)")]
    EmptyClass(usize),
    #[error("cross-validation needs k >= 2, got {0}")]
    BadFoldCount(usize),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// K x K counts; entry (i, j) counts instances of true class i predicted
/// as class j.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, true_class: usize, pred_class: usize) -> u64 {
        self.counts[true_class * self.k + pred_class]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, true_class: usize) -> u64 {
        (0..self.k).map(|j| self.get(true_class, j)).sum()
    }

    pub fn col_sum(&self, pred_class: usize) -> u64 {
        (0..self.k).map(|i| self.get(i, pred_class)).sum()
    }

    /// CSV grid: header row of predicted classes, one row per true class.
    pub fn write_csv<W: Write>(&self, writer: W, class_names: &[&str]) -> Result<(), EvalError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["true\\predicted".to_string()];
        header.extend((0..self.k).map(|j| class_names.get(j).unwrap_or(&"?").to_string()));
        wtr.write_record(&header)?;
        for i in 0..self.k {
            let mut row = vec![class_names.get(i).unwrap_or(&"?").to_string()];
            row.extend((0..self.k).map(|j| self.get(i, j).to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Exact confusion counts.
pub fn confusion(y_true: &[u8], y_pred: &[u8], k: usize) -> Result<ConfusionMatrix, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    let mut counts = vec![0u64; k * k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t as usize >= k {
            return Err(EvalError::LabelOutOfRange { label: t, k });
        }
        if p as usize >= k {
            return Err(EvalError::LabelOutOfRange { label: p, k });
        }
        counts[t as usize * k + p as usize] += 1;
    }
    Ok(ConfusionMatrix { k, counts })
}

/// Scalar metrics of one evaluation. Zero-denominator precision/recall are
/// defined as 0 and the affected classes listed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub undefined_precision_classes: Vec<usize>,
    pub undefined_recall_classes: Vec<usize>,
    /// Fit+evaluate wall time; volatile, excluded from deterministic files.
    #[serde(skip_serializing, default)]
    pub wall_time_s: f64,
}

/// Per-class precision/recall from the confusion matrix, macro means over
/// classes, micro scores from pooled TP/FP/FN.
pub fn metrics(cm: &ConfusionMatrix) -> Result<EvalReport, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let k = cm.k();
    let mut sum_p = 0.0;
    let mut sum_r = 0.0;
    let mut sum_f1 = 0.0;
    let mut undefined_precision_classes = Vec::new();
    let mut undefined_recall_classes = Vec::new();
    let mut tp_total = 0u64;
    for c in 0..k {
        let tp = cm.get(c, c);
        tp_total += tp;
        let pred = cm.col_sum(c);
        let truth = cm.row_sum(c);
        let p = if pred == 0 {
            undefined_precision_classes.push(c);
            0.0
        } else {
            tp as f64 / pred as f64
        };
        let r = if truth == 0 {
            undefined_recall_classes.push(c);
            0.0
        } else {
            tp as f64 / truth as f64
        };
        sum_p += p;
        sum_r += r;
        sum_f1 += if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        };
    }
    // pooled TP / (TP + FP) = trace / total = pooled recall = accuracy
    let micro = tp_total as f64 / total as f64;
    Ok(EvalReport {
        confusion: cm.clone(),
        accuracy: micro,
        macro_precision: sum_p / k as f64,
        macro_recall: sum_r / k as f64,
        macro_f1: sum_f1 / k as f64,
        micro_precision: micro,
        micro_recall: micro,
        micro_f1: micro,
        undefined_precision_classes,
        undefined_recall_classes,
        wall_time_s: 0.0,
    })
}

/// Seeded shuffle then partition. The training side receives the ceiling
/// of `train_fraction * n` (per class when stratified).
pub fn split(
    m: &FeatureMatrix,
    train_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<(FeatureMatrix, FeatureMatrix), EvalError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(EvalError::BadFraction(train_fraction));
    }
    let mut rng = rng_for(seed, "split", 0);
    let mut train_rows: Vec<usize> = Vec::new();
    let mut test_rows: Vec<usize> = Vec::new();
    if stratified {
        let k = m.n_classes().max(1);
        for class in 0..k {
            let mut rows: Vec<usize> = (0..m.n_rows())
                .filter(|&i| m.labels()[i] == class as u8)
                .collect();
            if rows.is_empty() {
                return Err(EvalError::EmptyClass(class));
            }
            rows.shuffle(&mut rng);
            let n_train = (train_fraction * rows.len() as f64).ceil() as usize;
            train_rows.extend(&rows[..n_train]);
            test_rows.extend(&rows[n_train..]);
        }
    } else {
        let mut rows: Vec<usize> = (0..m.n_rows()).collect();
        rows.shuffle(&mut rng);
        let n_train = (train_fraction * rows.len() as f64).ceil() as usize;
        train_rows.extend(&rows[..n_train]);
        test_rows.extend(&rows[n_train..]);
    }
    Ok((m.select_rows(&train_rows), m.select_rows(&test_rows)))
}

/// Fold assignments for k-fold cross-validation. Stratified by default in
/// the pipeline: rows are shuffled within each class and the concatenated
/// list is dealt round-robin, so fold sizes differ by at most one overall
/// and per class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<u32>,
    pub stratified: bool,
    pub seed: u64,
}

impl FoldPlan {
    pub fn new(
        labels: &[u8],
        k: usize,
        stratified: bool,
        seed: u64,
    ) -> Result<FoldPlan, EvalError> {
        if k < 2 {
            return Err(EvalError::BadFoldCount(k));
        }
        let mut rng = rng_for(seed, "folds", 0);
        let n = labels.len();
        let ordered: Vec<usize> = if stratified {
            let n_classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(1);
            let mut out = Vec::with_capacity(n);
            for class in 0..n_classes {
                let mut rows: Vec<usize> = (0..n).filter(|&i| labels[i] == class as u8).collect();
                rows.shuffle(&mut rng);
                out.extend(rows);
            }
            out
        } else {
            let mut rows: Vec<usize> = (0..n).collect();
            rows.shuffle(&mut rng);
            rows
        };
        let mut assignments = vec![0u32; n];
        for (pos, &row) in ordered.iter().enumerate() {
            assignments[row] = (pos % k) as u32;
        }
        Ok(FoldPlan {
            k,
            assignments,
            stratified,
            seed,
        })
    }

    pub fn fold_rows(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, &f) in self.assignments.iter().enumerate() {
            if f as usize == fold {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }
}

/// Mean of each scalar metric over folds (metrics only; fold confusion
/// matrices stay in the per-fold reports).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
}

impl MeanMetrics {
    pub fn of(folds: &[EvalReport]) -> MeanMetrics {
        let n = folds.len() as f64;
        let mean = |f: fn(&EvalReport) -> f64| folds.iter().map(f).sum::<f64>() / n;
        MeanMetrics {
            accuracy: mean(|r| r.accuracy),
            macro_precision: mean(|r| r.macro_precision),
            macro_recall: mean(|r| r.macro_recall),
            macro_f1: mean(|r| r.macro_f1),
            micro_precision: mean(|r| r.micro_precision),
            micro_recall: mean(|r| r.micro_recall),
            micro_f1: mean(|r| r.micro_f1),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvResult {
    pub folds: Vec<EvalReport>,
    pub mean: MeanMetrics,
}

/// Train on the complement of each fold, evaluate on the fold. Folds run
/// in parallel; results are identical to serial execution because every
/// fold derives its work purely from the plan and the learner seed.
pub fn cross_validate(
    spec: &LearnerSpec,
    m: &FeatureMatrix,
    plan: &FoldPlan,
) -> Result<CvResult, EvalError> {
    let k_classes = m.n_classes().max(2);
    let folds: Result<Vec<EvalReport>, EvalError> = (0..plan.k)
        .into_par_iter()
        .map(|fold| {
            let started = Instant::now();
            let (train_rows, test_rows) = plan.fold_rows(fold);
            let train = m.select_rows(&train_rows);
            let test = m.select_rows(&test_rows);
            let model = fit_k(spec, &train, k_classes)?;
            let pred = model.predict(&test)?;
            let cm = confusion(test.labels(), &pred, k_classes)?;
            let mut report = metrics(&cm)?;
            report.wall_time_s = started.elapsed().as_secs_f64();
            Ok(report)
        })
        .collect();
    let folds = folds?;
    let mean = MeanMetrics::of(&folds);
    Ok(CvResult { folds, mean })
}

/// Evaluate an already-chosen spec on a seeded train/test split.
pub fn train_test_evaluate(
    spec: &LearnerSpec,
    m: &FeatureMatrix,
    train_fraction: f64,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    let started = Instant::now();
    let k_classes = m.n_classes().max(2);
    let (train, test) = split(m, train_fraction, seed, true)?;
    let model = fit_k(spec, &train, k_classes)?;
    let pred = model.predict(&test)?;
    let cm = confusion(test.labels(), &pred, k_classes)?;
    let mut report = metrics(&cm)?;
    report.wall_time_s = started.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::Family;
    use approx::assert_relative_eq;

    #[test]
    fn confusion_hand_count() {
        let cm = confusion(&[0, 0, 1, 1, 2], &[0, 0, 0, 1, 2], 3).unwrap();
        assert_eq!(cm.get(0, 0), 2);
        assert_eq!(cm.get(1, 0), 1);
        assert_eq!(cm.get(1, 1), 1);
        assert_eq!(cm.get(2, 2), 1);
        assert_eq!(cm.total(), 5);
    }

    #[test]
    fn confusion_diagonal_when_equal() {
        let y = [0u8, 1, 2, 1, 0];
        let cm = confusion(&y, &y, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(cm.get(i, j), 0);
                }
            }
        }
    }

    #[test]
    fn confusion_empty_inputs_zero_matrix() {
        let cm = confusion(&[], &[], 3).unwrap();
        assert_eq!(cm.total(), 0);
    }

    #[test]
    fn confusion_label_out_of_range() {
        assert!(matches!(
            confusion(&[3], &[0], 3),
            Err(EvalError::LabelOutOfRange { label: 3, k: 3 })
        ));
    }

    #[test]
    fn confusion_row_and_column_sums() {
        let y_true = [0u8, 0, 1, 1, 1, 2, 2, 0];
        let y_pred = [0u8, 1, 1, 1, 2, 2, 0, 0];
        let cm = confusion(&y_true, &y_pred, 3).unwrap();
        for c in 0..3u8 {
            let truth = y_true.iter().filter(|&&l| l == c).count() as u64;
            let predicted = y_pred.iter().filter(|&&l| l == c).count() as u64;
            assert_eq!(cm.row_sum(c as usize), truth);
            assert_eq!(cm.col_sum(c as usize), predicted);
        }
    }

    #[test]
    fn metrics_hand_computation() {
        let cm = confusion(&[0, 0, 1, 1, 2], &[0, 0, 0, 1, 2], 3).unwrap();
        let r = metrics(&cm).unwrap();
        assert_relative_eq!(r.accuracy, 0.8);
        assert_relative_eq!(
            r.macro_precision,
            (2.0 / 3.0 + 1.0 + 1.0) / 3.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(r.macro_recall, (1.0 + 0.5 + 1.0) / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn metrics_perfect_diagonal() {
        let cm = confusion(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        let r = metrics(&cm).unwrap();
        for v in [
            r.accuracy,
            r.macro_precision,
            r.macro_recall,
            r.macro_f1,
            r.micro_f1,
        ] {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn metrics_zero_denominator_class_reported() {
        // class 2 never true and never predicted
        let cm = confusion(&[0, 1], &[0, 1], 3).unwrap();
        let r = metrics(&cm).unwrap();
        assert_eq!(r.undefined_precision_classes, vec![2]);
        assert_eq!(r.undefined_recall_classes, vec![2]);
        assert_relative_eq!(r.macro_precision, 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn micro_identity_on_random_matrices() {
        use rand::Rng;
        let mut rng = crate::seed::rng_for(3, "test", 0);
        for _ in 0..50 {
            let n = rng.gen_range(1..60);
            let y_true: Vec<u8> = (0..n).map(|_| rng.gen_range(0..4)).collect();
            let y_pred: Vec<u8> = (0..n).map(|_| rng.gen_range(0..4)).collect();
            let r = metrics(&confusion(&y_true, &y_pred, 4).unwrap()).unwrap();
            assert_eq!(r.micro_precision, r.accuracy);
            assert_eq!(r.micro_recall, r.accuracy);
            assert_eq!(r.micro_f1, r.accuracy);
        }
    }

    fn balanced_matrix(n_per_class: usize) -> FeatureMatrix {
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for c in 0..3u8 {
            for i in 0..n_per_class {
                values.push(f64::from(c) * 10.0 + (i % 5) as f64);
                values.push(i as f64);
                labels.push(c);
            }
        }
        FeatureMatrix::new(vec!["a".into(), "b".into()], values, labels)
    }

    #[test]
    fn split_sizes_and_determinism() {
        let m = balanced_matrix(20);
        let (train, test) = split(&m, 0.8, 7, true).unwrap();
        assert_eq!(train.n_rows(), 48);
        assert_eq!(test.n_rows(), 12);
        assert_eq!(train.class_histogram(3), vec![16, 16, 16]);
        let (train2, _) = split(&m, 0.8, 7, true).unwrap();
        assert_eq!(train, train2);
    }

    #[test]
    fn split_three_rows_train_gets_ceiling() {
        let m = FeatureMatrix::new(vec!["a".into()], vec![1.0, 2.0, 3.0], vec![0, 0, 0]);
        let (train, test) = split(&m, 0.5, 0, false).unwrap();
        assert_eq!((train.n_rows(), test.n_rows()), (2, 1));
    }

    #[test]
    fn fold_plan_balanced_assignments() {
        let m = balanced_matrix(17); // 51 rows, k=5
        let plan = FoldPlan::new(m.labels(), 5, true, 3).unwrap();
        let mut fold_sizes = [0usize; 5];
        for &f in &plan.assignments {
            fold_sizes[f as usize] += 1;
        }
        assert_eq!(fold_sizes.iter().sum::<usize>(), 51);
        assert!(fold_sizes.iter().max().unwrap() - fold_sizes.iter().min().unwrap() <= 1);
        for class in 0..3u8 {
            let mut per_fold = [0usize; 5];
            for (i, &f) in plan.assignments.iter().enumerate() {
                if m.labels()[i] == class {
                    per_fold[f as usize] += 1;
                }
            }
            assert!(per_fold.iter().max().unwrap() - per_fold.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn cross_validate_covers_every_row_once() {
        let m = balanced_matrix(10);
        let plan = FoldPlan::new(m.labels(), 5, true, 1).unwrap();
        let mut seen = vec![0usize; m.n_rows()];
        for fold in 0..5 {
            let (_, test) = plan.fold_rows(fold);
            for i in test {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn separable_data_scores_one_on_every_fold() {
        let m = balanced_matrix(10);
        let plan = FoldPlan::new(m.labels(), 5, true, 2).unwrap();
        let spec = LearnerSpec::new(Family::DecisionTree, 0);
        let cv = cross_validate(&spec, &m, &plan).unwrap();
        for fold in &cv.folds {
            assert_eq!(fold.accuracy, 1.0);
        }
        assert_eq!(cv.mean.accuracy, 1.0);
    }

    #[test]
    fn mean_of_identical_reports_is_that_report() {
        let cm = confusion(&[0, 1, 2, 0], &[0, 1, 1, 0], 3).unwrap();
        let r = metrics(&cm).unwrap();
        let mean = MeanMetrics::of(&[r.clone(), r.clone(), r.clone()]);
        assert_eq!(mean.accuracy, r.accuracy);
        assert_eq!(mean.macro_f1, r.macro_f1);
    }

    #[test]
    fn macro_metrics_invariant_under_relabeling() {
        use rand::Rng;
        let mut rng = crate::seed::rng_for(8, "relabel", 0);
        let n = 40;
        let y_true: Vec<u8> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let y_pred: Vec<u8> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let perm = [2u8, 0, 1];
        let pt: Vec<u8> = y_true.iter().map(|&l| perm[l as usize]).collect();
        let pp: Vec<u8> = y_pred.iter().map(|&l| perm[l as usize]).collect();
        let a = metrics(&confusion(&y_true, &y_pred, 3).unwrap()).unwrap();
        let b = metrics(&confusion(&pt, &pp, 3).unwrap()).unwrap();
        assert_relative_eq!(a.macro_precision, b.macro_precision, epsilon = 1e-12);
        assert_relative_eq!(a.macro_recall, b.macro_recall, epsilon = 1e-12);
        assert_relative_eq!(a.macro_f1, b.macro_f1, epsilon = 1e-12);
    }
}
