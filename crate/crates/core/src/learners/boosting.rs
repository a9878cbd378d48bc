//! Multinomial deviance gradient boosting: K score functions updated each
//! round by one regression tree per class fit to the softmax residuals
//! 1{y=k} - p_k, with Friedman leaf steps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::FeatureMatrix;

use super::naive_bayes::argmax_lowest;
use super::tree::{grow_reg_tree, presort, MultinomialLeaf, RegTree};

#[derive(Debug, Clone, Copy)]
pub struct BoostConfig {
    pub learning_rate: f64,
    pub n_estimators: usize,
    pub max_depth: u32,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            learning_rate: 0.1,
            n_estimators: 100,
            max_depth: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradientBoostingModel {
    pub n_classes: usize,
    pub learning_rate: f64,
    log_priors: Vec<f64>,
    /// round-major: rounds x n_classes trees
    trees: Vec<RegTree>,
}

fn softmax_rows(scores: &[f64], n: usize, k: usize, out: &mut [f64]) {
    // fixed chunking keeps the reduction order identical under any thread count
    out.par_chunks_mut(1024 * k)
        .zip(scores.par_chunks(1024 * k))
        .for_each(|(out_chunk, score_chunk)| {
            for (o, s) in out_chunk.chunks_mut(k).zip(score_chunk.chunks(k)) {
                let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (oo, &ss) in o.iter_mut().zip(s) {
                    *oo = (ss - max).exp();
                    sum += *oo;
                }
                o.iter_mut().for_each(|v| *v /= sum);
            }
        });
    debug_assert_eq!(scores.len(), n * k);
}

impl GradientBoostingModel {
    pub fn fit(x: &FeatureMatrix, cfg: &BoostConfig, n_classes: usize) -> GradientBoostingModel {
        Self::fit_traced(x, cfg, n_classes).0
    }

    /// Fit and also return the training multinomial deviance before any
    /// round and after each round.
    pub fn fit_traced(
        x: &FeatureMatrix,
        cfg: &BoostConfig,
        n_classes: usize,
    ) -> (GradientBoostingModel, Vec<f64>) {
        let n = x.n_rows();
        let k = n_classes.max(x.n_classes()).max(2);
        let mut counts = vec![0usize; k];
        for &l in x.labels() {
            counts[l as usize] += 1;
        }
        let log_priors: Vec<f64> = counts.iter().map(|&c| (c as f64 / n as f64).ln()).collect();

        let pre = presort(x);
        let ones = vec![1u32; n];
        let root_lists = pre.filtered(&ones);

        let mut scores: Vec<f64> = (0..n * k).map(|i| log_priors[i % k]).collect();
        let mut probs = vec![0.0; n * k];
        let mut trees: Vec<RegTree> = Vec::with_capacity(cfg.n_estimators * k);
        let mut deviances = Vec::with_capacity(cfg.n_estimators + 1);

        let deviance = |probs: &[f64]| -> f64 {
            let mut d = 0.0;
            for (i, &l) in x.labels().iter().enumerate() {
                d -= probs[i * k + l as usize].max(1e-300).ln();
            }
            d
        };

        softmax_rows(&scores, n, k, &mut probs);
        deviances.push(deviance(&probs));

        for _round in 0..cfg.n_estimators {
            let residuals: Vec<Vec<f64>> = (0..k)
                .map(|c| {
                    (0..n)
                        .map(|i| f64::from(x.labels()[i] as usize == c) - probs[i * k + c])
                        .collect()
                })
                .collect();
            let round_trees: Vec<RegTree> = residuals
                .par_iter()
                .map(|res| {
                    let leaf = MultinomialLeaf {
                        residuals: res,
                        n_classes: k,
                    };
                    grow_reg_tree(&pre, res, root_lists.clone(), cfg.max_depth, &leaf)
                })
                .collect();
            for (c, tree) in round_trees.iter().enumerate() {
                let updates: Vec<f64> = (0..n)
                    .into_par_iter()
                    .map(|i| tree.predict_row(x.row(i)))
                    .collect();
                for (i, u) in updates.into_iter().enumerate() {
                    scores[i * k + c] += cfg.learning_rate * u;
                }
            }
            trees.extend(round_trees);
            softmax_rows(&scores, n, k, &mut probs);
            deviances.push(deviance(&probs));
        }

        (
            GradientBoostingModel {
                n_classes: k,
                learning_rate: cfg.learning_rate,
                log_priors,
                trees,
            },
            deviances,
        )
    }

    pub fn decision_scores(&self, row: &[f64]) -> Vec<f64> {
        let mut scores = self.log_priors.clone();
        for (t, tree) in self.trees.iter().enumerate() {
            scores[t % self.n_classes] += self.learning_rate * tree.predict_row(row);
        }
        scores
    }

    pub fn predict_row(&self, row: &[f64]) -> u8 {
        argmax_lowest(&self.decision_scores(row))
    }
}
