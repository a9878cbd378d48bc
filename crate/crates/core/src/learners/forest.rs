//! Single CART classifier and bagged random forest on top of the shared
//! tree engine.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::FeatureMatrix;
use crate::seed::{derive_seed, rng_for};

use super::tree::{grow_class_tree, presort, ClassTree, MaxFeatures, TreeConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionTreeModel {
    pub tree: ClassTree,
    pub n_classes: usize,
}

impl DecisionTreeModel {
    pub fn fit(
        x: &FeatureMatrix,
        cfg: &TreeConfig,
        seed: u64,
        n_classes: usize,
    ) -> DecisionTreeModel {
        let n_classes = n_classes.max(x.n_classes()).max(2);
        let weights = vec![1u32; x.n_rows()];
        let pre = presort(x);
        let mut rng = rng_for(seed, "dtree", 0);
        let tree = grow_class_tree(
            &pre,
            x.labels(),
            n_classes,
            &weights,
            pre.filtered(&weights),
            cfg,
            &mut rng,
        );
        DecisionTreeModel { tree, n_classes }
    }

    pub fn predict_row(&self, row: &[f64]) -> u8 {
        self.tree.predict_row(row)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub trees: Vec<ClassTree>,
    pub n_classes: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ForestConfig {
    pub n_estimators: usize,
    pub tree: TreeConfig,
    /// Test hook: disabling makes one tree on all features identical to a
    /// plain decision tree.
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_estimators: 100,
            tree: TreeConfig {
                max_features: MaxFeatures::Sqrt,
                ..Default::default()
            },
            bootstrap: true,
        }
    }
}

impl RandomForestModel {
    pub fn fit(
        x: &FeatureMatrix,
        cfg: &ForestConfig,
        seed: u64,
        n_classes: usize,
    ) -> RandomForestModel {
        let n = x.n_rows();
        let n_classes = n_classes.max(x.n_classes()).max(2);
        let pre = presort(x);
        let trees: Vec<ClassTree> = (0..cfg.n_estimators)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng_for(derive_seed(seed, "forest", t as u64), "tree", 0);
                let mut weights = vec![0u32; n];
                if cfg.bootstrap {
                    for _ in 0..n {
                        weights[rng.gen_range(0..n)] += 1;
                    }
                } else {
                    weights.iter_mut().for_each(|w| *w = 1);
                }
                grow_class_tree(
                    &pre,
                    x.labels(),
                    n_classes,
                    &weights,
                    pre.filtered(&weights),
                    &cfg.tree,
                    &mut rng,
                )
            })
            .collect();
        RandomForestModel { trees, n_classes }
    }

    /// Majority vote over trees; ties go to the lowest class index.
    pub fn predict_row(&self, row: &[f64]) -> u8 {
        let mut votes = vec![0u32; self.n_classes];
        for tree in &self.trees {
            votes[tree.predict_row(row) as usize] += 1;
        }
        let mut best = 0usize;
        for (c, &v) in votes.iter().enumerate().skip(1) {
            if v > votes[best] {
                best = c;
            }
        }
        best as u8
    }
}
