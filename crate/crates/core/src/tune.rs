//! Grid search under shared-fold cross-validation, rankings, and the
//! top/bottom parameter summaries used to explain tuning results.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{cross_validate, EvalError, FoldPlan};
use crate::features::FeatureMatrix;
use crate::learners::{Family, LearnerSpec, ParamValue, Params};
use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum TuneError {
    #[error("naive_bayes has no tunable grid")]
    NoGrid,
    #[error("grid is empty")]
    EmptyGrid,
    #[error("budget {budget} allows no configuration at k={k}")]
    BudgetTooSmall { budget: usize, k: usize },
    #[error("summary needs at least 2n configurations (n={n}, got {got})")]
    TooFewConfigs { n: usize, got: usize },
    #[error("configuration {params} failed: {source}")]
    ConfigFailed {
        params: String,
        #[source]
        source: EvalError,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("grid file: {0}")]
    BadGridFile(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// A hyperparameter grid: named axes, each with its list of values. The
/// Cartesian product is enumerated with the first axis slowest, which
/// defines the axis-lexicographic order used for tie-breaking and budget
/// truncation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamGrid {
    pub family: Family,
    pub axes: Vec<(String, Vec<ParamValue>)>,
}

impl ParamGrid {
    pub fn n_configs(&self) -> usize {
        self.axes.iter().map(|(_, vs)| vs.len()).product()
    }

    /// Configuration at a given axis-lexicographic index.
    pub fn config(&self, mut index: usize) -> Params {
        let mut out = Vec::with_capacity(self.axes.len());
        for (name, values) in self.axes.iter().rev() {
            let v = values[index % values.len()].clone();
            out.push((name.clone(), v));
            index /= values.len();
        }
        out.reverse();
        out
    }

    /// Load a grid override from JSON: {"family": "...", "axes": {...}}.
    /// Axis order follows the file.
    pub fn from_json_file(path: &Path) -> Result<ParamGrid, TuneError> {
        #[derive(Deserialize)]
        struct GridFile {
            family: String,
            axes: serde_json::Map<String, serde_json::Value>,
        }
        let text = std::fs::read_to_string(path)?;
        let parsed: GridFile =
            serde_json::from_str(&text).map_err(|e| TuneError::BadGridFile(e.to_string()))?;
        let family: Family = parsed.family.parse().map_err(TuneError::BadGridFile)?;
        let mut axes = Vec::new();
        for (name, values) in parsed.axes {
            let list = values
                .as_array()
                .ok_or_else(|| TuneError::BadGridFile(format!("axis '{name}' is not a list")))?;
            let mut vs = Vec::with_capacity(list.len());
            for v in list {
                vs.push(match v {
                    serde_json::Value::Number(n) if n.is_i64() => {
                        ParamValue::Int(n.as_i64().unwrap())
                    }
                    serde_json::Value::Number(n) => ParamValue::Float(n.as_f64().unwrap()),
                    serde_json::Value::String(s) => ParamValue::Str(s.clone()),
                    other => {
                        return Err(TuneError::BadGridFile(format!(
                            "axis '{name}' holds unsupported value {other}"
                        )))
                    }
                });
            }
            axes.push((name, vs));
        }
        if axes.is_empty() {
            return Err(TuneError::EmptyGrid);
        }
        Ok(ParamGrid { family, axes })
    }
}

/// 15 geometrically spaced values with the endpoints pinned exactly.
pub fn logspace(lo_exp: f64, hi_exp: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    let mut out: Vec<f64> = (0..n)
        .map(|i| {
            let e = lo_exp + (hi_exp - lo_exp) * i as f64 / (n - 1) as f64;
            10f64.powf(e)
        })
        .collect();
    out[0] = 10f64.powf(lo_exp);
    out[n - 1] = 10f64.powf(hi_exp);
    out
}

/// The published per-family grids. Sizes: GB 54, RF 81, DT 192, LR 60,
/// SVM 4; naive Bayes has none.
pub fn builtin_grid(family: Family) -> Result<ParamGrid, TuneError> {
    let ints = |vs: &[i64]| vs.iter().map(|&v| ParamValue::Int(v)).collect::<Vec<_>>();
    let floats = |vs: &[f64]| vs.iter().map(|&v| ParamValue::Float(v)).collect::<Vec<_>>();
    let axes: Vec<(String, Vec<ParamValue>)> = match family {
        Family::NaiveBayes => return Err(TuneError::NoGrid),
        Family::GradientBoosting => vec![
            ("learning_rate".into(), floats(&[1.0, 0.5, 0.1])),
            ("n_estimators".into(), ints(&[50, 100, 150])),
            ("max_depth".into(), ints(&[1, 2, 3, 4, 5, 6])),
        ],
        Family::RandomForest => vec![
            ("n_estimators".into(), ints(&[100, 200, 500])),
            ("max_depth".into(), ints(&[6, 10, 20])),
            ("min_samples_split".into(), ints(&[2, 3, 4])),
            (
                "max_features".into(),
                vec![
                    ParamValue::Int(5),
                    ParamValue::Int(61),
                    ParamValue::Str("auto".into()),
                ],
            ),
        ],
        Family::DecisionTree => vec![
            (
                "max_depth".into(),
                vec![
                    ParamValue::Int(2),
                    ParamValue::Int(5),
                    ParamValue::Int(10),
                    ParamValue::Str("none".into()),
                ],
            ),
            ("min_samples_split".into(), ints(&[2, 3, 4, 5])),
            ("min_samples_leaf".into(), ints(&[1, 2, 3])),
            (
                "max_features".into(),
                vec![
                    ParamValue::Int(10),
                    ParamValue::Int(30),
                    ParamValue::Int(61),
                    ParamValue::Str("auto".into()),
                ],
            ),
        ],
        Family::LogisticRegression => vec![
            ("C".into(), floats(&logspace(-4.0, 4.0, 15))),
            ("max_iter".into(), ints(&[5000, 10000, 20000, 30000])),
        ],
        Family::Svm => vec![("C".into(), floats(&[0.1, 1.0, 10.0, 100.0]))],
    };
    Ok(ParamGrid { family, axes })
}

/// One evaluated configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridRow {
    pub config_index: usize,
    pub params: Params,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// 1-based; rank 1 is the best mean accuracy, ties broken by
    /// axis-lexicographic configuration order.
    pub rank: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub family: Family,
    pub k_folds: usize,
    pub seed: u64,
    /// All evaluated rows, sorted by rank.
    pub rows: Vec<GridRow>,
    pub best: Params,
    /// Configurations skipped by the fit budget, in truncation order.
    pub truncated_configs: usize,
}

fn params_string(params: &Params) -> String {
    params
        .iter()
        .map(|(n, v)| format!("{n}={v}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Exhaustive grid search: every configuration is scored with the same
/// fold plan so comparisons share their data splits. `budget` caps total
/// fits; configurations beyond floor(budget/k) are skipped in
/// axis-lexicographic order.
pub fn grid_search(
    grid: &ParamGrid,
    m: &FeatureMatrix,
    k: usize,
    seed: u64,
    budget: Option<usize>,
) -> Result<GridSearchResult, TuneError> {
    let total = grid.n_configs();
    if total == 0 {
        return Err(TuneError::EmptyGrid);
    }
    let evaluated = match budget {
        None => total,
        Some(b) => {
            let allowed = b / k;
            if allowed == 0 {
                return Err(TuneError::BudgetTooSmall { budget: b, k });
            }
            allowed.min(total)
        }
    };

    let plan = FoldPlan::new(m.labels(), k, true, derive_seed(seed, "grid-folds", 0))?;
    let mut rows: Vec<GridRow> = (0..evaluated)
        .into_par_iter()
        .map(|idx| {
            let params = grid.config(idx);
            let spec = LearnerSpec {
                family: grid.family,
                params: params.clone(),
                seed: derive_seed(seed, "grid-config", idx as u64),
            };
            let cv = cross_validate(&spec, m, &plan).map_err(|e| TuneError::ConfigFailed {
                params: params_string(&params),
                source: e,
            })?;
            Ok(GridRow {
                config_index: idx,
                params,
                fold_accuracies: cv.folds.iter().map(|f| f.accuracy).collect(),
                mean_accuracy: cv.mean.accuracy,
                rank: 0,
            })
        })
        .collect::<Result<_, TuneError>>()?;

    rows.sort_by(|a, b| {
        b.mean_accuracy
            .total_cmp(&a.mean_accuracy)
            .then(a.config_index.cmp(&b.config_index))
    });
    for (i, row) in rows.iter_mut().enumerate() {
        row.rank = i + 1;
    }
    let best = rows[0].params.clone();
    Ok(GridSearchResult {
        family: grid.family,
        k_folds: k,
        seed,
        rows,
        best,
        truncated_configs: total - evaluated,
    })
}

impl GridSearchResult {
    /// CSV: one row per configuration — params, fold accuracies, mean, rank.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TuneError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let param_names: Vec<&str> = self.rows[0]
            .params
            .iter()
            .map(|(n, _)| n.as_str())
            .collect();
        let mut header: Vec<String> = param_names.iter().map(|s| s.to_string()).collect();
        for f in 0..self.k_folds {
            header.push(format!("acc_fold{}", f + 1));
        }
        header.push("mean_accuracy".into());
        header.push("rank".into());
        wtr.write_record(&header)?;
        for row in &self.rows {
            let mut rec: Vec<String> = row.params.iter().map(|(_, v)| v.to_string()).collect();
            rec.extend(row.fold_accuracies.iter().map(|a| format!("{a}")));
            rec.push(format!("{}", row.mean_accuracy));
            rec.push(row.rank.to_string());
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Per-parameter summary over the top-n and bottom-n ranked
/// configurations. Numeric axes get mean and population standard
/// deviation; axes holding any token value get frequency tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AxisSummary {
    Numeric {
        param: String,
        top_mean: f64,
        top_std: f64,
        bottom_mean: f64,
        bottom_std: f64,
    },
    Categorical {
        param: String,
        top_frequency: Vec<(String, usize)>,
        bottom_frequency: Vec<(String, usize)>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamSummary {
    pub n: usize,
    pub per_param: Vec<AxisSummary>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn frequency(values: &[&ParamValue]) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v.to_string()).or_default() += 1;
    }
    let mut out: Vec<(String, usize)> = counts.into_iter().collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

/// Summarize the top-n and bottom-n configurations of a ranked result.
pub fn summarize(result: &GridSearchResult, n: usize) -> Result<ParamSummary, TuneError> {
    if result.rows.len() < 2 * n {
        return Err(TuneError::TooFewConfigs {
            n,
            got: result.rows.len(),
        });
    }
    let top = &result.rows[..n];
    let bottom = &result.rows[result.rows.len() - n..];
    let param_names: Vec<String> = result.rows[0]
        .params
        .iter()
        .map(|(name, _)| name.clone())
        .collect();

    let mut per_param = Vec::new();
    for name in &param_names {
        fn pick<'r>(rows: &'r [GridRow], name: &str) -> Vec<&'r ParamValue> {
            rows.iter()
                .map(|r| {
                    r.params
                        .iter()
                        .find(|(n2, _)| n2 == name)
                        .map(|(_, v)| v)
                        .expect("every row carries every axis")
                })
                .collect()
        }
        let top_vals = pick(top, name);
        let bottom_vals = pick(bottom, name);
        let numeric = top_vals
            .iter()
            .chain(bottom_vals.iter())
            .all(|v| v.is_numeric())
            && result
                .rows
                .iter()
                .flat_map(|r| r.params.iter())
                .filter(|(n2, _)| n2 == name)
                .all(|(_, v)| v.is_numeric());
        if numeric {
            let nums =
                |vs: &[&ParamValue]| vs.iter().map(|v| v.as_f64().unwrap()).collect::<Vec<_>>();
            let (top_mean, top_std) = mean_std(&nums(&top_vals));
            let (bottom_mean, bottom_std) = mean_std(&nums(&bottom_vals));
            per_param.push(AxisSummary::Numeric {
                param: name.clone(),
                top_mean,
                top_std,
                bottom_mean,
                bottom_std,
            });
        } else {
            per_param.push(AxisSummary::Categorical {
                param: name.clone(),
                top_frequency: frequency(&top_vals),
                bottom_frequency: frequency(&bottom_vals),
            });
        }
    }
    Ok(ParamSummary { n, per_param })
}

/// Tuning verdict: an accuracy movement above one percentage point counts
/// as significant on this dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Significance {
    Significant,
    Insignificant,
}

pub const SIGNIFICANCE_THRESHOLD: f64 = 0.01;

pub fn significance(before: f64, after: f64) -> Significance {
    if (after - before).abs() > SIGNIFICANCE_THRESHOLD {
        Significance::Significant
    } else {
        Significance::Insignificant
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn builtin_grid_sizes() {
        assert_eq!(
            builtin_grid(Family::GradientBoosting).unwrap().n_configs(),
            54
        );
        assert_eq!(builtin_grid(Family::RandomForest).unwrap().n_configs(), 81);
        assert_eq!(builtin_grid(Family::DecisionTree).unwrap().n_configs(), 192);
        assert_eq!(
            builtin_grid(Family::LogisticRegression)
                .unwrap()
                .n_configs(),
            60
        );
        assert_eq!(builtin_grid(Family::Svm).unwrap().n_configs(), 4);
        assert!(matches!(
            builtin_grid(Family::NaiveBayes),
            Err(TuneError::NoGrid)
        ));
    }

    #[test]
    fn logspace_endpoints_exact() {
        let vs = logspace(-4.0, 4.0, 15);
        assert_eq!(vs.len(), 15);
        assert_eq!(vs[0], 1e-4);
        assert_eq!(vs[14], 1e4);
        for w in vs.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn config_enumeration_is_axis_lexicographic() {
        let grid = ParamGrid {
            family: Family::GradientBoosting,
            axes: vec![
                ("a".into(), vec![ParamValue::Int(0), ParamValue::Int(1)]),
                (
                    "b".into(),
                    vec![ParamValue::Int(0), ParamValue::Int(1), ParamValue::Int(2)],
                ),
            ],
        };
        let seq: Vec<(i64, i64)> = (0..6)
            .map(|i| {
                let c = grid.config(i);
                (c[0].1.as_int().unwrap(), c[1].1.as_int().unwrap())
            })
            .collect();
        assert_eq!(seq, vec![(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]);
    }

    fn toy_matrix() -> FeatureMatrix {
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for c in 0..3u8 {
            for i in 0..10 {
                values.push(f64::from(c) * 5.0 + (i % 3) as f64 * 0.1);
                labels.push(c);
            }
        }
        FeatureMatrix::new(vec!["x".into()], values, labels)
    }

    #[test]
    fn grid_search_row_count_and_best() {
        let grid = ParamGrid {
            family: Family::DecisionTree,
            axes: vec![(
                "max_depth".into(),
                vec![ParamValue::Int(1), ParamValue::Int(3)],
            )],
        };
        let res = grid_search(&grid, &toy_matrix(), 5, 1, None).unwrap();
        assert_eq!(res.rows.len(), 2);
        assert_eq!(res.rows[0].rank, 1);
        // separable with one feature at depth >= 2: depth 3 must win
        assert_eq!(res.best[0].1, ParamValue::Int(3));
        assert!(res.rows[0].mean_accuracy >= res.rows[1].mean_accuracy);
    }

    #[test]
    fn single_config_grid_best_is_that_config() {
        let grid = ParamGrid {
            family: Family::NaiveBayes,
            axes: vec![],
        };
        assert_eq!(grid.n_configs(), 1); // empty product
        let res = grid_search(&grid, &toy_matrix(), 5, 1, None).unwrap();
        assert_eq!(res.rows.len(), 1);
        assert!(res.best.is_empty());
    }

    #[test]
    fn budget_caps_configurations() {
        let grid = builtin_grid(Family::Svm).unwrap(); // 4 configs
        let res = grid_search(&grid, &toy_matrix(), 5, 1, Some(10)).unwrap();
        assert_eq!(res.rows.len(), 2); // floor(10/5)
        assert_eq!(res.truncated_configs, 2);
        let evaluated: Vec<usize> = {
            let mut v: Vec<usize> = res.rows.iter().map(|r| r.config_index).collect();
            v.sort_unstable();
            v
        };
        assert_eq!(evaluated, vec![0, 1]); // truncation order documented
        assert!(matches!(
            grid_search(&grid, &toy_matrix(), 5, 1, Some(4)),
            Err(TuneError::BudgetTooSmall { .. })
        ));
    }

    #[test]
    fn grid_search_same_seed_identical() {
        let grid = ParamGrid {
            family: Family::DecisionTree,
            axes: vec![(
                "max_depth".into(),
                vec![ParamValue::Int(1), ParamValue::Int(2)],
            )],
        };
        let a = grid_search(&grid, &toy_matrix(), 5, 9, None).unwrap();
        let b = grid_search(&grid, &toy_matrix(), 5, 9, None).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    fn synthetic_result(accs: &[f64], xs: &[i64]) -> GridSearchResult {
        let mut rows: Vec<GridRow> = accs
            .iter()
            .zip(xs)
            .enumerate()
            .map(|(i, (&a, &x))| GridRow {
                config_index: i,
                params: vec![("x".into(), ParamValue::Int(x))],
                fold_accuracies: vec![a],
                mean_accuracy: a,
                rank: 0,
            })
            .collect();
        rows.sort_by(|a, b| b.mean_accuracy.total_cmp(&a.mean_accuracy));
        for (i, r) in rows.iter_mut().enumerate() {
            r.rank = i + 1;
        }
        GridSearchResult {
            family: Family::DecisionTree,
            k_folds: 1,
            seed: 0,
            best: rows[0].params.clone(),
            rows,
            truncated_configs: 0,
        }
    }

    #[test]
    fn summarize_hand_example() {
        // accuracies 4,3,2,1 with x=1,2,3,4: top-2 mean 1.5, bottom-2 mean 3.5
        let res = synthetic_result(&[0.4, 0.3, 0.2, 0.1], &[1, 2, 3, 4]);
        let s = summarize(&res, 2).unwrap();
        match &s.per_param[0] {
            AxisSummary::Numeric {
                top_mean,
                bottom_mean,
                top_std,
                ..
            } => {
                assert_relative_eq!(*top_mean, 1.5);
                assert_relative_eq!(*bottom_mean, 3.5);
                assert_relative_eq!(*top_std, 0.5); // population std of {1,2}
            }
            other => panic!("expected numeric summary, got {other:?}"),
        }
    }

    #[test]
    fn summarize_all_tied_top_equals_bottom() {
        let res = synthetic_result(&[0.5, 0.5, 0.5, 0.5], &[7, 7, 7, 7]);
        let s = summarize(&res, 2).unwrap();
        match &s.per_param[0] {
            AxisSummary::Numeric {
                top_mean,
                bottom_mean,
                ..
            } => assert_eq!(top_mean, bottom_mean),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn summarize_categorical_axis_uses_frequency() {
        let mut res = synthetic_result(&[0.4, 0.3, 0.2, 0.1], &[1, 2, 3, 4]);
        for (i, row) in res.rows.iter_mut().enumerate() {
            row.params = vec![(
                "max_features".into(),
                if i % 2 == 0 {
                    ParamValue::Str("auto".into())
                } else {
                    ParamValue::Int(5)
                },
            )];
        }
        let s = summarize(&res, 2).unwrap();
        assert!(matches!(&s.per_param[0], AxisSummary::Categorical { .. }));
    }

    #[test]
    fn summarize_needs_enough_rows() {
        let res = synthetic_result(&[0.4, 0.3], &[1, 2]);
        assert!(matches!(
            summarize(&res, 2),
            Err(TuneError::TooFewConfigs { .. })
        ));
    }

    #[test]
    fn grid_override_file_parses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.json");
        std::fs::write(
            &path,
            r#"{"family": "gb", "axes": {"learning_rate": [0.1, 0.5], "max_depth": [1, 3], "max_features": ["auto"]}}"#,
        )
        .unwrap();
        let grid = ParamGrid::from_json_file(&path).unwrap();
        assert_eq!(grid.family, Family::GradientBoosting);
        assert_eq!(grid.n_configs(), 4);
        assert!(grid
            .axes
            .iter()
            .any(|(n, vs)| n == "max_features" && vs[0] == ParamValue::Str("auto".into())));

        std::fs::write(&path, r#"{"family": "gb", "axes": {"bad": [true]}}"#).unwrap();
        assert!(matches!(
            ParamGrid::from_json_file(&path),
            Err(TuneError::BadGridFile(_))
        ));
    }

    #[test]
    fn significance_thresholds() {
        assert_eq!(significance(0.5351, 0.6199), Significance::Significant);
        assert_eq!(significance(0.64161, 0.64769), Significance::Insignificant);
        assert_eq!(significance(0.42, 0.42), Significance::Insignificant);
    }
}
