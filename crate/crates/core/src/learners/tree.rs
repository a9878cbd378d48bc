//! CART trees shared by the decision-tree, random-forest and boosting
//! learners. Rows are presorted once per feature into index arrays; a node
//! owns a contiguous segment of every array and splitting partitions those
//! segments in place (stably, through one reused scratch buffer), so
//! growing a tree is O(p * n * depth) after the initial sort with no
//! per-node allocation. Values are also cached feature-major so split
//! scans walk memory sequentially.
//!
//! Classification split scoring is done in exact integer arithmetic
//! (weighted Gini compared as rationals in u128), so the chosen split is
//! reproducible bit-for-bit and ties resolve to the lowest feature index,
//! then the lowest threshold.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::FeatureMatrix;

/// How many candidate features each split considers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MaxFeatures {
    All,
    /// floor(sqrt(p)), at least 1.
    Sqrt,
    /// A fixed count, clamped to p at fit time.
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, p: usize) -> usize {
        match self {
            MaxFeatures::All => p,
            MaxFeatures::Sqrt => (p as f64).sqrt().floor().max(1.0) as usize,
            MaxFeatures::Count(c) => c.clamp(1, p),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TreeConfig {
    pub max_depth: Option<u32>,
    /// Minimum (weighted) samples a node needs to be split.
    pub min_samples_split: u64,
    /// Minimum (weighted) samples in each child.
    pub min_samples_leaf: u64,
    pub max_features: MaxFeatures,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: MaxFeatures::All,
        }
    }
}

/// Per-feature row orderings plus a feature-major value cache, built once
/// per training matrix and shared by every tree grown on it.
pub struct Presorted {
    /// per feature: row indices ascending by value, ties by row index
    order: Vec<Vec<u32>>,
    /// feature-major values: columns[f * n_rows + r]
    columns: Vec<f64>,
    n_rows: usize,
}

pub fn presort(x: &FeatureMatrix) -> Presorted {
    let n = x.n_rows();
    let p = x.n_features();
    let mut columns = vec![0.0f64; n * p];
    for r in 0..n {
        for (f, &v) in x.row(r).iter().enumerate() {
            columns[f * n + r] = v;
        }
    }
    let order = (0..p)
        .into_par_iter()
        .map(|f| {
            let col = &columns[f * n..(f + 1) * n];
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_unstable_by(|&a, &b| {
                col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b))
            });
            idx
        })
        .collect();
    Presorted {
        order,
        columns,
        n_rows: n,
    }
}

impl Presorted {
    pub fn n_features(&self) -> usize {
        self.order.len()
    }

    #[inline]
    fn value(&self, row: u32, feature: usize) -> f64 {
        self.columns[feature * self.n_rows + row as usize]
    }

    /// Working arrays for one tree: each feature's ordering restricted to
    /// rows with nonzero weight.
    pub fn filtered(&self, weights: &[u32]) -> Vec<Vec<u32>> {
        self.order
            .iter()
            .map(|list| {
                list.iter()
                    .copied()
                    .filter(|&r| weights[r as usize] > 0)
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SplitNode {
    feature: u32,
    threshold: f64,
    left: u32,
    right: u32,
}

/// Flat classification tree.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassTree {
    splits: Vec<Option<SplitNode>>,
    leaf_class: Vec<u8>,
    pub n_features: usize,
}

impl ClassTree {
    pub fn predict_row(&self, row: &[f64]) -> u8 {
        let mut node = 0usize;
        loop {
            match &self.splits[node] {
                Some(s) => {
                    node = if row[s.feature as usize] <= s.threshold {
                        s.left as usize
                    } else {
                        s.right as usize
                    };
                }
                None => return self.leaf_class[node],
            }
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.splits.len()
    }

    /// The root's (feature, threshold), or None for a single-leaf tree.
    pub fn root_split(&self) -> Option<(usize, f64)> {
        self.splits[0]
            .as_ref()
            .map(|s| (s.feature as usize, s.threshold))
    }
}

/// Flat regression tree (used by gradient boosting).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegTree {
    splits: Vec<Option<SplitNode>>,
    leaf_value: Vec<f64>,
}

impl RegTree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut node = 0usize;
        loop {
            match &self.splits[node] {
                Some(s) => {
                    node = if row[s.feature as usize] <= s.threshold {
                        s.left as usize
                    } else {
                        s.right as usize
                    };
                }
                None => return self.leaf_value[node],
            }
        }
    }
}

/// Draw `m` distinct feature indices, returned ascending so the candidate
/// scan order (and therefore tie-breaking) does not depend on draw order.
fn sample_features(rng: &mut ChaCha8Rng, p: usize, m: usize) -> Vec<usize> {
    if m >= p {
        return (0..p).collect();
    }
    let mut pool: Vec<usize> = (0..p).collect();
    for i in 0..m {
        let j = rng.gen_range(i..p);
        pool.swap(i, j);
    }
    let mut chosen = pool[..m].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Stably partition each feature's segment by `side`, reusing `tmp`.
/// Returns the left-block length (identical for every feature).
fn partition_segments(
    arrays: &mut [Vec<u32>],
    start: usize,
    end: usize,
    side: &[u8],
    tmp: &mut Vec<u32>,
) -> usize {
    let mut n_left = 0;
    for array in arrays.iter_mut() {
        let seg = &mut array[start..end];
        tmp.clear();
        let mut write = 0;
        for pos in 0..seg.len() {
            let r = seg[pos];
            if side[r as usize] == 1 {
                seg[write] = r;
                write += 1;
            } else {
                tmp.push(r);
            }
        }
        seg[write..].copy_from_slice(tmp);
        n_left = write;
    }
    n_left
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    // score compared as numer/denom rationals; larger is better
    numer: u128,
    denom: u128,
}

struct Work {
    start: usize,
    end: usize,
    depth: u32,
    slot: usize,
}

/// Grow a Gini CART classifier over the rows present in `arrays` (every
/// per-feature array must hold the same row set). `weights` are sample
/// multiplicities (bootstrap copies count individually).
pub fn grow_class_tree(
    pre: &Presorted,
    labels: &[u8],
    n_classes: usize,
    weights: &[u32],
    mut arrays: Vec<Vec<u32>>,
    cfg: &TreeConfig,
    rng: &mut ChaCha8Rng,
) -> ClassTree {
    let p = pre.n_features();
    let m_rows = arrays.first().map_or(0, Vec::len);
    let m_features = cfg.max_features.resolve(p);
    let mut splits: Vec<Option<SplitNode>> = vec![None];
    let mut leaf_class: Vec<u8> = vec![0];
    let mut side = vec![0u8; pre.n_rows];
    let mut tmp: Vec<u32> = Vec::with_capacity(m_rows);
    let mut left_counts = vec![0u64; n_classes];
    let mut stack = vec![Work {
        start: 0,
        end: m_rows,
        depth: 0,
        slot: 0,
    }];

    while let Some(work) = stack.pop() {
        let rows = &arrays[0][work.start..work.end];
        let mut counts = vec![0u64; n_classes];
        for &r in rows {
            counts[labels[r as usize] as usize] += u64::from(weights[r as usize]);
        }
        let total_w: u64 = counts.iter().sum();
        let majority = counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(c, _)| c as u8)
            .unwrap_or(0);
        leaf_class[work.slot] = majority;

        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_capped = cfg.max_depth.is_some_and(|d| work.depth >= d);
        if pure || depth_capped || total_w < cfg.min_samples_split || rows.len() < 2 {
            continue;
        }

        let candidates = sample_features(rng, p, m_features);
        let sum_sq_total: u64 = counts.iter().map(|&c| c * c).sum();
        let mut best: Option<BestSplit> = None;

        for &f in &candidates {
            let seg = &arrays[f][work.start..work.end];
            left_counts.iter_mut().for_each(|c| *c = 0);
            let mut left_w = 0u64;
            let mut left_sq = 0u64;
            for pos in 0..seg.len() - 1 {
                let r = seg[pos] as usize;
                let w = u64::from(weights[r]);
                let c = labels[r] as usize;
                left_sq += w * w + 2 * w * left_counts[c];
                left_counts[c] += w;
                left_w += w;
                let v = pre.value(seg[pos], f);
                let v_next = pre.value(seg[pos + 1], f);
                if v_next <= v {
                    continue;
                }
                let right_w = total_w - left_w;
                if left_w < cfg.min_samples_leaf || right_w < cfg.min_samples_leaf {
                    continue;
                }
                let cross: u64 = counts
                    .iter()
                    .zip(left_counts.iter())
                    .map(|(&t, &l)| t * l)
                    .sum();
                let right_sq = sum_sq_total + left_sq - 2 * cross;
                // score = sum_sq_left/w_left + sum_sq_right/w_right, as a rational
                let numer = u128::from(left_sq) * u128::from(right_w)
                    + u128::from(right_sq) * u128::from(left_w);
                let denom = u128::from(left_w) * u128::from(right_w);
                let better = match &best {
                    None => true,
                    Some(b) => numer * b.denom > b.numer * denom,
                };
                if better {
                    best = Some(BestSplit {
                        feature: f,
                        threshold: 0.5 * (v + v_next),
                        numer,
                        denom,
                    });
                }
            }
        }

        // split only if it strictly beats the parent's Gini
        let improving = best
            .as_ref()
            .is_some_and(|b| b.numer * u128::from(total_w) > u128::from(sum_sq_total) * b.denom);
        if !improving {
            continue;
        }
        let best = best.unwrap();

        for &r in &arrays[best.feature][work.start..work.end] {
            side[r as usize] = u8::from(pre.value(r, best.feature) <= best.threshold);
        }
        let n_left = partition_segments(&mut arrays, work.start, work.end, &side, &mut tmp);

        let left_slot = splits.len();
        let right_slot = left_slot + 1;
        splits.push(None);
        splits.push(None);
        leaf_class.push(0);
        leaf_class.push(0);
        splits[work.slot] = Some(SplitNode {
            feature: best.feature as u32,
            threshold: best.threshold,
            left: left_slot as u32,
            right: right_slot as u32,
        });
        stack.push(Work {
            start: work.start + n_left,
            end: work.end,
            depth: work.depth + 1,
            slot: right_slot,
        });
        stack.push(Work {
            start: work.start,
            end: work.start + n_left,
            depth: work.depth + 1,
            slot: left_slot,
        });
    }

    ClassTree {
        splits,
        leaf_class,
        n_features: p,
    }
}

/// Leaf aggregation for the regression tree.
pub trait LeafValue {
    fn leaf(&self, rows: &[u32]) -> f64;
}

/// Friedman's multinomial leaf step: ((K-1)/K) * sum(r) / sum(|r|(1-|r|)).
pub struct MultinomialLeaf<'a> {
    pub residuals: &'a [f64],
    pub n_classes: usize,
}

impl LeafValue for MultinomialLeaf<'_> {
    fn leaf(&self, rows: &[u32]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for &r in rows {
            let res = self.residuals[r as usize];
            num += res;
            den += res.abs() * (1.0 - res.abs());
        }
        if den.abs() < 1e-150 {
            0.0
        } else {
            let k = self.n_classes as f64;
            (k - 1.0) / k * num / den
        }
    }
}

/// Grow a squared-error regression tree on `targets` (all weights 1).
pub fn grow_reg_tree<L: LeafValue>(
    pre: &Presorted,
    targets: &[f64],
    mut arrays: Vec<Vec<u32>>,
    max_depth: u32,
    leaf: &L,
) -> RegTree {
    let p = pre.n_features();
    let m_rows = arrays.first().map_or(0, Vec::len);
    let mut splits: Vec<Option<SplitNode>> = vec![None];
    let mut leaf_value: Vec<f64> = vec![0.0];
    let mut side = vec![0u8; pre.n_rows];
    let mut tmp: Vec<u32> = Vec::with_capacity(m_rows);
    let mut stack = vec![Work {
        start: 0,
        end: m_rows,
        depth: 0,
        slot: 0,
    }];

    while let Some(work) = stack.pop() {
        let rows = &arrays[0][work.start..work.end];
        let n = rows.len() as f64;
        let total: f64 = rows.iter().map(|&r| targets[r as usize]).sum();
        leaf_value[work.slot] = leaf.leaf(rows);
        if work.depth >= max_depth || rows.len() < 2 {
            continue;
        }

        let parent_score = total * total / n;
        let mut best: Option<(usize, f64, f64)> = None; // (feature, threshold, score)
        for f in 0..p {
            let seg = &arrays[f][work.start..work.end];
            let mut left_sum = 0.0;
            let mut left_n = 0.0;
            for pos in 0..seg.len() - 1 {
                left_sum += targets[seg[pos] as usize];
                left_n += 1.0;
                let v = pre.value(seg[pos], f);
                let v_next = pre.value(seg[pos + 1], f);
                if v_next <= v {
                    continue;
                }
                let right_sum = total - left_sum;
                let right_n = n - left_n;
                let score = left_sum * left_sum / left_n + right_sum * right_sum / right_n;
                if best.as_ref().is_none_or(|&(_, _, s)| score > s) {
                    best = Some((f, 0.5 * (v + v_next), score));
                }
            }
        }
        let Some((feature, threshold, score)) = best else {
            continue;
        };
        if score <= parent_score + 1e-12 * parent_score.abs().max(1.0) {
            continue;
        }

        for &r in &arrays[feature][work.start..work.end] {
            side[r as usize] = u8::from(pre.value(r, feature) <= threshold);
        }
        let n_left = partition_segments(&mut arrays, work.start, work.end, &side, &mut tmp);

        let left_slot = splits.len();
        let right_slot = left_slot + 1;
        splits.push(None);
        splits.push(None);
        leaf_value.push(0.0);
        leaf_value.push(0.0);
        splits[work.slot] = Some(SplitNode {
            feature: feature as u32,
            threshold,
            left: left_slot as u32,
            right: right_slot as u32,
        });
        stack.push(Work {
            start: work.start + n_left,
            end: work.end,
            depth: work.depth + 1,
            slot: right_slot,
        });
        stack.push(Work {
            start: work.start,
            end: work.start + n_left,
            depth: work.depth + 1,
            slot: left_slot,
        });
    }

    RegTree { splits, leaf_value }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    fn toy(rows: &[(&[f64], u8)]) -> FeatureMatrix {
        let p = rows[0].0.len();
        let names = (0..p).map(|i| format!("f{i}")).collect();
        FeatureMatrix::new(
            names,
            rows.iter().flat_map(|(r, _)| r.iter().copied()).collect(),
            rows.iter().map(|(_, l)| *l).collect(),
        )
    }

    fn fit_all(x: &FeatureMatrix, cfg: &TreeConfig) -> ClassTree {
        let pre = presort(x);
        let weights = vec![1u32; x.n_rows()];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        grow_class_tree(
            &pre,
            x.labels(),
            x.n_classes(),
            &weights,
            pre.filtered(&weights),
            cfg,
            &mut rng,
        )
    }

    #[test]
    fn memorizes_consistent_data() {
        let x = toy(&[
            (&[0.0, 3.0], 0),
            (&[1.0, 2.5], 1),
            (&[2.0, 1.0], 2),
            (&[3.0, 0.5], 1),
            (&[4.0, 2.0], 0),
        ]);
        let tree = fit_all(&x, &TreeConfig::default());
        for i in 0..x.n_rows() {
            assert_eq!(tree.predict_row(x.row(i)), x.labels()[i]);
        }
    }

    #[test]
    fn depth_zero_is_majority_leaf() {
        let x = toy(&[(&[0.0], 1), (&[1.0], 1), (&[2.0], 0)]);
        let cfg = TreeConfig {
            max_depth: Some(0),
            ..Default::default()
        };
        let tree = fit_all(&x, &cfg);
        assert_eq!(tree.n_nodes(), 1);
        assert_eq!(tree.predict_row(&[5.0]), 1);
    }

    #[test]
    fn majority_tie_goes_to_lowest_class() {
        let x = toy(&[(&[0.0], 2), (&[0.0], 1)]);
        let cfg = TreeConfig {
            max_depth: Some(0),
            ..Default::default()
        };
        let tree = fit_all(&x, &cfg);
        assert_eq!(tree.predict_row(&[0.0]), 1);
    }

    #[test]
    fn partition_is_stable_and_consistent() {
        let mut arrays = vec![vec![0u32, 1, 2, 3, 4], vec![4u32, 3, 2, 1, 0]];
        let side = [1u8, 0, 1, 0, 1];
        let mut tmp = Vec::new();
        let n_left = partition_segments(&mut arrays, 0, 5, &side, &mut tmp);
        assert_eq!(n_left, 3);
        assert_eq!(arrays[0], vec![0, 2, 4, 1, 3]);
        assert_eq!(arrays[1], vec![4, 2, 0, 3, 1]);
    }

    #[test]
    fn regression_tree_fits_step() {
        let x = toy(&[(&[0.0], 0), (&[1.0], 0), (&[10.0], 0), (&[11.0], 0)]);
        let targets = [-1.0, -1.0, 1.0, 1.0];
        struct Mean<'a>(&'a [f64]);
        impl LeafValue for Mean<'_> {
            fn leaf(&self, rows: &[u32]) -> f64 {
                rows.iter().map(|&r| self.0[r as usize]).sum::<f64>() / rows.len() as f64
            }
        }
        let pre = presort(&x);
        let weights = vec![1u32; 4];
        let tree = grow_reg_tree(&pre, &targets, pre.filtered(&weights), 3, &Mean(&targets));
        assert_eq!(tree.predict_row(&[0.5]), -1.0);
        assert_eq!(tree.predict_row(&[10.5]), 1.0);
    }
}
