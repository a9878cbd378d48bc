//! Multinomial softmax regression with L2 penalty, trained by full-batch
//! gradient descent with a backtracking (Armijo) step size. The intercept
//! column is not penalized.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::FeatureMatrix;

use super::naive_bayes::argmax_lowest;

pub const GRADIENT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct LogisticConfig {
    /// Inverse regularization strength; the penalty is ||W||^2 / (2C).
    pub c: f64,
    pub max_iter: usize,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            c: 1.0,
            max_iter: 2000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SoftmaxRegression {
    pub n_classes: usize,
    pub n_features: usize,
    /// class-major, each row has n_features weights then the intercept
    weights: Vec<f64>,
    pub iterations_run: usize,
}

const CHUNK: usize = 1024;

/// Cross-entropy sum plus L2 penalty, and its gradient. The data pass is
/// chunked with a fixed size and folded in chunk order, so the result is
/// identical for any thread count.
fn loss_and_grad(x: &FeatureMatrix, w: &[f64], k: usize, c: f64, grad: &mut [f64]) -> f64 {
    let p = x.n_features();
    let d = p + 1;
    let n = x.n_rows();

    let parts: Vec<(f64, Vec<f64>)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let start = chunk * CHUNK;
            let end = (start + CHUNK).min(n);
            let mut g = vec![0.0; k * d];
            let mut loss = 0.0;
            let mut logits = vec![0.0; k];
            for i in start..end {
                let row = x.row(i);
                for (cls, logit) in logits.iter_mut().enumerate() {
                    let wrow = &w[cls * d..(cls + 1) * d];
                    let mut s = wrow[p]; // intercept
                    for (wj, xj) in wrow[..p].iter().zip(row) {
                        s += wj * xj;
                    }
                    *logit = s;
                }
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for l in &mut logits {
                    *l = (*l - max).exp();
                    sum += *l;
                }
                let y = x.labels()[i] as usize;
                loss -= (logits[y] / sum).max(1e-300).ln();
                for (cls, &e) in logits.iter().enumerate() {
                    let diff = e / sum - f64::from(cls == y);
                    let grow = &mut g[cls * d..(cls + 1) * d];
                    for (gj, xj) in grow[..p].iter_mut().zip(row) {
                        *gj += diff * xj;
                    }
                    grow[p] += diff;
                }
            }
            (loss, g)
        })
        .collect();

    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    // penalty: (1/(2C)) * ||W||^2 over non-intercept weights
    for cls in 0..k {
        for j in 0..p {
            let wj = w[cls * d + j];
            loss += wj * wj / (2.0 * c);
            grad[cls * d + j] += wj / c;
        }
    }
    loss
}

impl SoftmaxRegression {
    pub fn fit(x: &FeatureMatrix, cfg: &LogisticConfig, n_classes: usize) -> SoftmaxRegression {
        let k = n_classes.max(x.n_classes()).max(2);
        let p = x.n_features();
        let d = p + 1;
        let mut w = vec![0.0; k * d];
        let mut grad = vec![0.0; k * d];
        let mut trial = vec![0.0; k * d];
        let mut trial_grad = vec![0.0; k * d];
        let mut step = 1.0;
        let mut iterations_run = 0;

        let mut loss = loss_and_grad(x, &w, k, cfg.c, &mut grad);
        for _ in 0..cfg.max_iter {
            let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
            if gnorm2.sqrt() < GRADIENT_TOLERANCE {
                break;
            }
            // Armijo backtracking from twice the last accepted step
            step *= 2.0;
            let mut accepted = false;
            for _ in 0..60 {
                for ((t, &wv), &g) in trial.iter_mut().zip(&w).zip(&grad) {
                    *t = wv - step * g;
                }
                let trial_loss = loss_and_grad(x, &trial, k, cfg.c, &mut trial_grad);
                if trial_loss <= loss - 1e-4 * step * gnorm2 {
                    w.copy_from_slice(&trial);
                    grad.copy_from_slice(&trial_grad);
                    loss = trial_loss;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            iterations_run += 1;
            if !accepted {
                break;
            }
        }

        SoftmaxRegression {
            n_classes: k,
            n_features: p,
            weights: w,
            iterations_run,
        }
    }

    pub fn decision_scores(&self, row: &[f64]) -> Vec<f64> {
        let p = self.n_features;
        let d = p + 1;
        (0..self.n_classes)
            .map(|cls| {
                let wrow = &self.weights[cls * d..(cls + 1) * d];
                wrow[p] + wrow[..p].iter().zip(row).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect()
    }

    pub fn predict_row(&self, row: &[f64]) -> u8 {
        argmax_lowest(&self.decision_scores(row))
    }
}

/// Loss at a given weight vector; test hook for gradient checking.
pub fn loss_at(x: &FeatureMatrix, w: &[f64], k: usize, c: f64) -> f64 {
    let mut grad = vec![0.0; w.len()];
    loss_and_grad(x, w, k, c, &mut grad)
}

/// Analytic gradient at a given weight vector; test hook.
pub fn gradient_at(x: &FeatureMatrix, w: &[f64], k: usize, c: f64) -> Vec<f64> {
    let mut grad = vec![0.0; w.len()];
    loss_and_grad(x, w, k, c, &mut grad);
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for i in 0..60 {
            let c = i % 3;
            let cx = [0.0, 3.0, -3.0][c];
            let cy = [0.0, 3.0, 3.0][c];
            values.push(cx + rng.gen::<f64>() - 0.5);
            values.push(cy + rng.gen::<f64>() - 0.5);
            labels.push(c as u8);
        }
        FeatureMatrix::new(vec!["x".into(), "y".into()], values, labels)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let x = toy();
        let k = 3;
        let d = x.n_features() + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w: Vec<f64> = (0..k * d).map(|_| rng.gen::<f64>() - 0.5).collect();
        let c = 0.7;
        let analytic = gradient_at(&x, &w, k, c);
        for j in 0..w.len() {
            let h = 1e-6 * (1.0 + w[j].abs());
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[j] += h;
            wm[j] -= h;
            let numeric = (loss_at(&x, &wp, k, c) - loss_at(&x, &wm, k, c)) / (2.0 * h);
            let denom = numeric.abs().max(analytic[j].abs()).max(1e-8);
            assert!(
                (numeric - analytic[j]).abs() / denom < 1e-5,
                "coord {j}: analytic {} vs numeric {numeric}",
                analytic[j]
            );
        }
    }

    #[test]
    fn separable_data_is_learned() {
        let x = toy();
        let model = SoftmaxRegression::fit(
            &x,
            &LogisticConfig {
                c: 10.0,
                max_iter: 300,
            },
            3,
        );
        let correct = (0..x.n_rows())
            .filter(|&i| model.predict_row(x.row(i)) == x.labels()[i])
            .count();
        assert!(correct >= 58, "only {correct}/60 correct");
    }

    #[test]
    fn extreme_regularization_predicts_prior_argmax() {
        // class 1 is the majority; near-zero C forces weights to zero and
        // the unpenalized intercept carries the priors
        let x = FeatureMatrix::new(
            vec!["f".into()],
            vec![0.0, 1.0, 2.0, 3.0, 10.0],
            vec![1, 1, 1, 0, 2],
        );
        let model = SoftmaxRegression::fit(
            &x,
            &LogisticConfig {
                c: 1e-9,
                max_iter: 500,
            },
            3,
        );
        for probe in [0.0, 3.0, 10.0, -4.0] {
            assert_eq!(model.predict_row(&[probe]), 1);
        }
    }

    #[test]
    fn tie_breaks_to_lowest_class() {
        // symmetric two-point data: optimum is symmetric, scores tie at 0
        let x = FeatureMatrix::new(vec!["f".into()], vec![-1.0, 1.0], vec![0, 1]);
        let model = SoftmaxRegression::fit(
            &x,
            &LogisticConfig {
                c: 1e-12,
                max_iter: 50,
            },
            2,
        );
        assert_eq!(model.predict_row(&[0.0]), 0);
    }
}
