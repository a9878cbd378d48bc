//! Gaussian naive Bayes: one mean/variance per feature per class,
//! log-space posteriors, variance smoothing proportional to the largest
//! feature variance.

use serde::{Deserialize, Serialize};

use crate::features::FeatureMatrix;

pub const VAR_SMOOTHING: f64 = 1e-9;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianNb {
    pub n_classes: usize,
    pub n_features: usize,
    log_priors: Vec<f64>,
    means: Vec<f64>, // class-major, n_classes * n_features
    vars: Vec<f64>,
}

impl GaussianNb {
    pub fn fit(x: &FeatureMatrix, n_classes: usize) -> GaussianNb {
        let n = x.n_rows();
        let p = x.n_features();
        let mut counts = vec![0usize; n_classes];
        let mut means = vec![0.0; n_classes * p];
        let mut vars = vec![0.0; n_classes * p];

        for i in 0..n {
            let c = x.labels()[i] as usize;
            counts[c] += 1;
            for (j, &v) in x.row(i).iter().enumerate() {
                means[c * p + j] += v;
            }
        }
        for c in 0..n_classes {
            if counts[c] > 0 {
                for j in 0..p {
                    means[c * p + j] /= counts[c] as f64;
                }
            }
        }
        for i in 0..n {
            let c = x.labels()[i] as usize;
            for (j, &v) in x.row(i).iter().enumerate() {
                let d = v - means[c * p + j];
                vars[c * p + j] += d * d;
            }
        }
        for c in 0..n_classes {
            if counts[c] > 0 {
                for j in 0..p {
                    vars[c * p + j] /= counts[c] as f64;
                }
            }
        }

        // smoothing: epsilon = 1e-9 * max variance over the whole data
        let mut grand_mean = vec![0.0; p];
        for i in 0..n {
            for (j, &v) in x.row(i).iter().enumerate() {
                grand_mean[j] += v;
            }
        }
        grand_mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut max_var = 0.0f64;
        for (j, gm) in grand_mean.iter().enumerate() {
            let mut v = 0.0;
            for i in 0..n {
                let d = x.value(i, j) - gm;
                v += d * d;
            }
            max_var = max_var.max(v / n as f64);
        }
        let eps = (VAR_SMOOTHING * max_var).max(f64::MIN_POSITIVE);
        vars.iter_mut().for_each(|v| *v += eps);

        let log_priors = counts.iter().map(|&c| (c as f64 / n as f64).ln()).collect();
        GaussianNb {
            n_classes,
            n_features: p,
            log_priors,
            means,
            vars,
        }
    }

    pub fn joint_log_likelihood(&self, row: &[f64]) -> Vec<f64> {
        let p = self.n_features;
        (0..self.n_classes)
            .map(|c| {
                let mut ll = self.log_priors[c];
                for (j, xj) in row.iter().enumerate() {
                    let var = self.vars[c * p + j];
                    let d = xj - self.means[c * p + j];
                    ll += -0.5 * (2.0 * std::f64::consts::PI * var).ln() - d * d / (2.0 * var);
                }
                ll
            })
            .collect()
    }

    pub fn predict_row(&self, row: &[f64]) -> u8 {
        argmax_lowest(&self.joint_log_likelihood(row))
    }

    /// Normalized posteriors via log-sum-exp.
    pub fn predict_proba_row(&self, row: &[f64]) -> Vec<f64> {
        let ll = self.joint_log_likelihood(row);
        let max = ll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = ll.iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.iter().map(|&e| e / sum).collect()
    }
}

/// Index of the maximum, ties resolved to the lowest index.
pub fn argmax_lowest(scores: &[f64]) -> u8 {
    let mut best = 0usize;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn single_feature() -> FeatureMatrix {
        FeatureMatrix::new(
            vec!["f0".into()],
            vec![0.0, 0.0, 4.0, 4.0],
            vec![0, 0, 1, 1],
        )
    }

    #[test]
    fn matches_direct_density_oracle() {
        let m = single_feature();
        let nb = GaussianNb::fit(&m, 2);

        // oracle: densities computed directly from per-class mean/variance
        // with eps = 1e-9 * variance of the single feature over all rows
        let eps = 1e-9 * 4.0;
        let log_density = |x: f64, mean: f64| {
            let var = 0.0 + eps;
            -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x - mean) * (x - mean) / (2.0 * var)
        };
        let ll = nb.joint_log_likelihood(&[1.0]);
        assert_relative_eq!(
            ll[0],
            (0.5f64).ln() + log_density(1.0, 0.0),
            max_relative = 1e-12
        );
        assert_relative_eq!(
            ll[1],
            (0.5f64).ln() + log_density(1.0, 4.0),
            max_relative = 1e-12
        );
        assert_eq!(nb.predict_row(&[1.0]), 0);
        assert_eq!(nb.predict_row(&[3.0]), 1);
    }

    #[test]
    fn posteriors_sum_to_one() {
        let m = single_feature();
        let nb = GaussianNb::fit(&m, 2);
        for x in [-3.0, 0.5, 2.0, 7.0] {
            let probs = nb.predict_proba_row(&[x]);
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_point_predicts_own_label() {
        let m = FeatureMatrix::new(vec!["f0".into()], vec![3.0], vec![2]);
        let nb = GaussianNb::fit(&m, 3);
        assert_eq!(nb.predict_row(&[3.0]), 2);
    }
}
