//! Model comparison statistics: the exact paired sign test over per-fold
//! scores and Tukey boxplot summaries with outlier attribution.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learners::Params;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("paired score vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("boxplot needs at least 4 values, got {0}")]
    TooFewValues(usize),
    #[error("sign test supports at most 64 non-tied pairs, got {0}")]
    TooManyPairs(usize),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    RejectNull,
    FailToReject,
}

/// Result of the paired sign test. The primary decision uses the exact
/// two-sided binomial p-value at p = 1/2 over the non-tied pairs; when a
/// critical value w is supplied, the max(wins) >= w comparison is reported
/// alongside.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignTestResult {
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
    pub n_effective: usize,
    pub p_value_two_sided: f64,
    pub alpha: f64,
    pub critical_value: Option<usize>,
    pub critical_value_reached: Option<bool>,
    pub decision: Decision,
}

/// Exact two-sided binomial tail at p = 1/2: the probability mass of all
/// outcomes at least as far from n/2 as the observed win count.
fn binomial_two_sided_p(n: usize, wins: usize) -> Result<f64, StatsError> {
    if n == 0 {
        return Ok(1.0);
    }
    if n > 64 {
        // the u128 Pascal row stops being exact past 64 pairs
        return Err(StatsError::TooManyPairs(n));
    }
    let mut row = vec![0u128; n + 1];
    row[0] = 1;
    for i in 1..=n {
        for j in (1..=i).rev() {
            row[j] += row[j - 1];
        }
    }
    let observed = (2 * wins as i64 - n as i64).abs();
    let mass: u128 = (0..=n)
        .filter(|&j| (2 * j as i64 - n as i64).abs() >= observed)
        .map(|j| row[j])
        .sum();
    Ok(mass as f64 / 2f64.powi(n as i32))
}

/// Paired sign test: strict inequalities count wins, exact ties drop out
/// of `n_effective`.
pub fn sign_test(
    scores_a: &[f64],
    scores_b: &[f64],
    alpha: f64,
) -> Result<SignTestResult, StatsError> {
    sign_test_with_critical(scores_a, scores_b, alpha, None)
}

pub fn sign_test_with_critical(
    scores_a: &[f64],
    scores_b: &[f64],
    alpha: f64,
    critical_value: Option<usize>,
) -> Result<SignTestResult, StatsError> {
    if scores_a.is_empty() {
        return Err(StatsError::Empty);
    }
    if scores_a.len() != scores_b.len() {
        return Err(StatsError::LengthMismatch(scores_a.len(), scores_b.len()));
    }
    let mut wins_a = 0;
    let mut wins_b = 0;
    let mut ties = 0;
    for (a, b) in scores_a.iter().zip(scores_b) {
        if a > b {
            wins_a += 1;
        } else if b > a {
            wins_b += 1;
        } else {
            ties += 1;
        }
    }
    let n_effective = wins_a + wins_b;
    let p_value_two_sided = binomial_two_sided_p(n_effective, wins_a)?;
    Ok(SignTestResult {
        wins_a,
        wins_b,
        ties,
        n_effective,
        p_value_two_sided,
        alpha,
        critical_value,
        critical_value_reached: critical_value.map(|w| wins_a.max(wins_b) >= w),
        decision: if p_value_two_sided < alpha {
            Decision::RejectNull
        } else {
            Decision::FailToReject
        },
    })
}

/// Tukey five-number summary with 1.5 IQR fences. Quartiles use linear
/// interpolation at position (n-1) * q over the sorted values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxplotSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub iqr: f64,
    pub lower_fence: f64,
    pub upper_fence: f64,
    /// Values strictly outside the fences, with their configurations.
    pub outliers: Vec<(f64, Params)>,
}

fn interpolated_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn boxplot_summary(values: &[(f64, Params)]) -> Result<BoxplotSummary, StatsError> {
    if values.len() < 4 {
        return Err(StatsError::TooFewValues(values.len()));
    }
    let mut sorted: Vec<f64> = values.iter().map(|(v, _)| *v).collect();
    sorted.sort_by(f64::total_cmp);
    let q1 = interpolated_quantile(&sorted, 0.25);
    let median = interpolated_quantile(&sorted, 0.5);
    let q3 = interpolated_quantile(&sorted, 0.75);
    let iqr = q3 - q1;
    let lower_fence = q1 - 1.5 * iqr;
    let upper_fence = q3 + 1.5 * iqr;
    let outliers: Vec<(f64, Params)> = values
        .iter()
        .filter(|(v, _)| *v < lower_fence || *v > upper_fence)
        .cloned()
        .collect();
    Ok(BoxplotSummary {
        min: sorted[0],
        q1,
        median,
        q3,
        max: *sorted.last().unwrap(),
        iqr,
        lower_fence,
        upper_fence,
        outliers,
    })
}

/// For each parameter, the value histogram among the outlier
/// configurations. Empty when there are no outliers.
pub fn outlier_attribution(summary: &BoxplotSummary) -> Vec<(String, Vec<(String, usize)>)> {
    let mut per_param: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for (_, params) in &summary.outliers {
        for (name, value) in params {
            *per_param
                .entry(name.clone())
                .or_default()
                .entry(value.to_string())
                .or_default() += 1;
        }
    }
    per_param
        .into_iter()
        .map(|(name, hist)| {
            let mut h: Vec<(String, usize)> = hist.into_iter().collect();
            h.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            (name, h)
        })
        .collect()
}

/// Plot-ready CSV of scored configurations: score, rank, params, outlier flag.
pub fn write_boxplot_csv<W: Write>(
    writer: W,
    values: &[(f64, Params)],
    summary: &BoxplotSummary,
) -> Result<(), StatsError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["score", "rank", "params", "is_outlier"])?;
    let mut ranked: Vec<(usize, &(f64, Params))> = values.iter().enumerate().collect();
    ranked.sort_by(|a, b| b.1 .0.total_cmp(&a.1 .0).then(a.0.cmp(&b.0)));
    for (rank, (_, (score, params))) in ranked.iter().enumerate() {
        let is_outlier = *score < summary.lower_fence || *score > summary.upper_fence;
        let params_text = params
            .iter()
            .map(|(n, v)| format!("{n}={v}"))
            .collect::<Vec<_>>()
            .join(" ");
        wtr.write_record([
            format!("{score}"),
            (rank + 1).to_string(),
            params_text,
            is_outlier.to_string(),
        ])?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::ParamValue;
    use approx::assert_relative_eq;

    #[test]
    fn all_wins_hits_exact_tail() {
        let a = vec![1.0; 10];
        let b = vec![0.0; 10];
        let r = sign_test(&a, &b, 0.05).unwrap();
        assert_eq!((r.wins_a, r.wins_b, r.ties), (10, 0, 0));
        assert_relative_eq!(r.p_value_two_sided, 2.0 / 1024.0, epsilon = 1e-15);
        assert_eq!(r.decision, Decision::RejectNull);
    }

    #[test]
    fn identical_vectors_all_ties() {
        let a = vec![0.5; 10];
        let r = sign_test(&a, &a, 0.05).unwrap();
        assert_eq!(r.ties, 10);
        assert_eq!(r.n_effective, 0);
        assert_eq!(r.p_value_two_sided, 1.0);
        assert_eq!(r.decision, Decision::FailToReject);
    }

    #[test]
    fn antisymmetry() {
        let a = [0.3, 0.5, 0.2, 0.9, 0.9];
        let b = [0.1, 0.6, 0.2, 0.5, 0.8];
        let ab = sign_test(&a, &b, 0.05).unwrap();
        let ba = sign_test(&b, &a, 0.05).unwrap();
        assert_eq!(ab.wins_a, ba.wins_b);
        assert_eq!(ab.wins_b, ba.wins_a);
        assert_eq!(ab.ties, ba.ties);
        assert_eq!(ab.p_value_two_sided, ba.p_value_two_sided);
    }

    #[test]
    fn shift_invariance() {
        let a = [0.3, 0.5, 0.2, 0.9];
        let b = [0.1, 0.6, 0.2, 0.5];
        let shifted_a: Vec<f64> = a.iter().map(|v| v + 0.125).collect();
        let shifted_b: Vec<f64> = b.iter().map(|v| v + 0.125).collect();
        let r1 = sign_test(&a, &b, 0.05).unwrap();
        let r2 = sign_test(&shifted_a, &shifted_b, 0.05).unwrap();
        assert_eq!(r1.wins_a, r2.wins_a);
        assert_eq!(r1.p_value_two_sided, r2.p_value_two_sided);
    }

    #[test]
    fn p_value_matches_exhaustive_enumeration() {
        // enumerate all 2^n equally likely win patterns and count those at
        // least as extreme as the observed count
        for n in 1..=12usize {
            for wins in 0..=n {
                let observed = (2 * wins as i64 - n as i64).abs();
                let mut extreme = 0u64;
                for pattern in 0u64..(1 << n) {
                    let w = pattern.count_ones() as i64;
                    if (2 * w - n as i64).abs() >= observed {
                        extreme += 1;
                    }
                }
                let oracle = extreme as f64 / (1u64 << n) as f64;
                let p = super::binomial_two_sided_p(n, wins).unwrap();
                assert_relative_eq!(p, oracle, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn length_mismatch_and_empty_are_errors() {
        assert!(matches!(
            sign_test(&[1.0], &[1.0, 2.0], 0.05),
            Err(StatsError::LengthMismatch(1, 2))
        ));
        assert!(matches!(sign_test(&[], &[], 0.05), Err(StatsError::Empty)));
    }

    #[test]
    fn critical_value_reported_alongside() {
        let a = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let b = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let r = sign_test_with_critical(&a, &b, 0.05, Some(8)).unwrap();
        assert_eq!((r.wins_a, r.wins_b), (6, 4));
        assert_eq!(r.critical_value_reached, Some(false));
        assert_eq!(r.decision, Decision::FailToReject);
    }

    fn plain(values: &[f64]) -> Vec<(f64, Params)> {
        values.iter().map(|&v| (v, Params::new())).collect()
    }

    #[test]
    fn boxplot_one_through_nine() {
        let s = boxplot_summary(&plain(&[1., 2., 3., 4., 5., 6., 7., 8., 9.])).unwrap();
        assert_eq!(s.q1, 3.0);
        assert_eq!(s.median, 5.0);
        assert_eq!(s.q3, 7.0);
        assert_eq!(s.iqr, 4.0);
        assert_eq!(s.lower_fence, -3.0);
        assert_eq!(s.upper_fence, 13.0);
        assert!(s.outliers.is_empty());
    }

    #[test]
    fn boxplot_detects_outlier() {
        let s = boxplot_summary(&plain(&[1., 2., 3., 4., 100.])).unwrap();
        assert_eq!(s.q1, 2.0);
        assert_eq!(s.q3, 4.0);
        assert_eq!(s.upper_fence, 7.0);
        assert_eq!(s.outliers.len(), 1);
        assert_eq!(s.outliers[0].0, 100.0);
    }

    #[test]
    fn boxplot_constant_vector_has_no_outliers() {
        let s = boxplot_summary(&plain(&[2.0, 2.0, 2.0, 2.0, 2.0])).unwrap();
        assert_eq!(s.iqr, 0.0);
        assert_eq!(s.lower_fence, 2.0);
        assert_eq!(s.upper_fence, 2.0);
        assert!(s.outliers.is_empty());
    }

    #[test]
    fn boxplot_too_few_values() {
        assert!(matches!(
            boxplot_summary(&plain(&[1.0, 2.0, 3.0])),
            Err(StatsError::TooFewValues(3))
        ));
    }

    #[test]
    fn boxplot_order_invariant() {
        let forward = plain(&[5., 1., 9., 3., 7., 2., 100.]);
        let mut reversed = forward.clone();
        reversed.reverse();
        let a = boxplot_summary(&forward).unwrap();
        let b = boxplot_summary(&reversed).unwrap();
        assert_eq!(a.q1, b.q1);
        assert_eq!(a.q3, b.q3);
        let mut oa: Vec<f64> = a.outliers.iter().map(|(v, _)| *v).collect();
        let mut ob: Vec<f64> = b.outliers.iter().map(|(v, _)| *v).collect();
        oa.sort_by(f64::total_cmp);
        ob.sort_by(f64::total_cmp);
        assert_eq!(oa, ob);
    }

    fn gb_params(lr: f64, depth: i64, n: i64) -> Params {
        vec![
            ("learning_rate".into(), ParamValue::Float(lr)),
            ("max_depth".into(), ParamValue::Int(depth)),
            ("n_estimators".into(), ParamValue::Int(n)),
        ]
    }

    #[test]
    fn outlier_attribution_histograms() {
        // four low outliers under a tight cluster of ordinary scores
        let cluster: Vec<f64> = (0..20).map(|i| 64.0 + 0.05 * i as f64).collect();
        let mut values = plain(&cluster);
        values.push((60.33, gb_params(1.0, 6, 150)));
        values.push((60.30, gb_params(0.1, 1, 150)));
        values.push((58.48, gb_params(0.1, 1, 100)));
        values.push((55.08, gb_params(0.1, 1, 50)));
        let s = boxplot_summary(&values).unwrap();
        assert_eq!(s.outliers.len(), 4);
        let attribution = outlier_attribution(&s);
        let depth_hist = &attribution
            .iter()
            .find(|(n, _)| n == "max_depth")
            .unwrap()
            .1;
        assert_eq!(depth_hist[0], ("1".to_string(), 3));
        let lr_hist = &attribution
            .iter()
            .find(|(n, _)| n == "learning_rate")
            .unwrap()
            .1;
        assert_eq!(lr_hist[0], ("0.1".to_string(), 3));
    }

    #[test]
    fn attribution_single_outlier_and_empty() {
        let mut values = plain(&[1.0, 1.1, 0.9, 1.05]);
        values.push((9.0, gb_params(0.5, 2, 50)));
        let s = boxplot_summary(&values).unwrap();
        let attribution = outlier_attribution(&s);
        assert!(attribution.iter().all(|(_, h)| h.len() == 1 && h[0].1 == 1));

        let none = boxplot_summary(&plain(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert!(outlier_attribution(&none).is_empty());
    }
}
