//! Class balancing: undersample the majority class to the size of ">30",
//! then oversample the remaining minorities with SMOTE until all classes
//! are equal. Synthetic rows are convex combinations of two original rows
//! of the same class; the parent rows are recorded so the combination can
//! be verified exactly.
//!
//! SMOTE interpolates in the encoded feature space, so one-hot blocks of
//! synthetic rows can sum to fractional values. That is expected; the
//! block-sums-to-one invariant applies to encoder output, not to
//! synthesized rows.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMatrix;
use crate::seed::rng_for;

#[derive(Debug, Error)]
pub enum BalanceError {
    #[error("class '{0}' has no rows")]
    EmptyClass(usize),
    #[error("class {class} has a single row; SMOTE needs at least one neighbor")]
    NoNeighbor { class: usize },
    #[error("target {target} is below the current size {size} of class {class}")]
    TargetTooSmall {
        class: usize,
        size: usize,
        target: usize,
    },
    #[error("undersample expects class 0 to be the largest (got histogram {0:?})")]
    MajorityNotLargest(Vec<usize>),
}

/// Balancing configuration. `target_per_class` of `None` means "auto":
/// undersampling targets the size of class 1 (">30"), oversampling targets
/// the post-undersample maximum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalanceConfig {
    pub seed: u64,
    pub k_neighbors: usize,
    pub target_per_class: Option<usize>,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        BalanceConfig {
            seed: 0,
            k_neighbors: 5,
            target_per_class: None,
        }
    }
}

/// Row provenance in a balanced dataset. Synthetic rows carry the indices
/// (into the balanced matrix) of the two original parent rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Original,
    Synthetic { base: u32, neighbor: u32 },
}

impl Provenance {
    pub fn tag(&self) -> &'static str {
        match self {
            Provenance::Original => "original",
            Provenance::Synthetic { .. } => "synthetic",
        }
    }
}

/// A feature matrix plus per-row provenance.
#[derive(Debug, Clone)]
pub struct BalancedDataset {
    pub matrix: FeatureMatrix,
    pub provenance: Vec<Provenance>,
}

/// Keep every row of class 1 (">30") and of the minorities, and a seeded
/// uniform subset of class 0 ("NO") of the same size as class 1. Relative
/// row order is preserved.
pub fn undersample_majority(
    m: &FeatureMatrix,
    cfg: &BalanceConfig,
) -> Result<FeatureMatrix, BalanceError> {
    let k = m.n_classes().max(2);
    let hist = m.class_histogram(k);
    if hist.get(1).copied().unwrap_or(0) == 0 {
        return Err(BalanceError::EmptyClass(1));
    }
    if hist.iter().skip(1).any(|&c| c > hist[0]) {
        return Err(BalanceError::MajorityNotLargest(hist));
    }
    let target = hist[1];
    let majority: Vec<usize> = (0..m.n_rows()).filter(|&i| m.labels()[i] == 0).collect();
    let chosen = if majority.len() <= target {
        majority
    } else {
        let mut pool = majority;
        let mut rng = rng_for(cfg.seed, "undersample", 0);
        // partial Fisher-Yates: first `target` slots end up a uniform subset
        for i in 0..target {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        let mut kept = pool[..target].to_vec();
        kept.sort_unstable();
        kept
    };
    let mut keep: Vec<usize> = (0..m.n_rows())
        .filter(|&i| m.labels()[i] != 0)
        .chain(chosen)
        .collect();
    keep.sort_unstable();
    Ok(m.select_rows(&keep))
}

/// Reduce every class above `target` to a seeded uniform subset of that
/// size, preserving relative row order. Classes at or below `target` are
/// untouched.
pub fn downsample_to(
    m: &FeatureMatrix,
    target: usize,
    seed: u64,
) -> Result<FeatureMatrix, BalanceError> {
    let k = m.n_classes().max(1);
    let mut keep: Vec<usize> = Vec::with_capacity(m.n_rows());
    for class in 0..k {
        let mut members: Vec<usize> = (0..m.n_rows())
            .filter(|&i| m.labels()[i] == class as u8)
            .collect();
        if members.len() > target {
            let mut rng = rng_for(seed, "downsample", class as u64);
            for i in 0..target {
                let j = rng.gen_range(i..members.len());
                members.swap(i, j);
            }
            members.truncate(target);
            members.sort_unstable();
        }
        keep.extend(members);
    }
    keep.sort_unstable();
    Ok(m.select_rows(&keep))
}

/// Exact k-nearest same-class neighbors by squared Euclidean distance,
/// ties broken by row index. Brute force: deterministic and fine at the
/// class sizes this pipeline sees.
fn knn_within_class(m: &FeatureMatrix, members: &[usize], k: usize) -> Vec<Vec<usize>> {
    members
        .par_iter()
        .map(|&query| {
            let q = m.row(query);
            let mut dists: Vec<(f64, usize)> = members
                .iter()
                .filter(|&&other| other != query)
                .map(|&other| {
                    let d2: f64 = m
                        .row(other)
                        .iter()
                        .zip(q)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (d2, other)
                })
                .collect();
            let k = k.min(dists.len());
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < dists.len() {
                dists.select_nth_unstable_by(k - 1, cmp);
                dists.truncate(k);
            }
            dists.sort_by(cmp);
            dists.into_iter().map(|(_, i)| i).collect()
        })
        .collect()
}

/// SMOTE: for each class below target, repeatedly pick a seeded random
/// original member, one of its k nearest same-class original neighbors,
/// and emit `x + u * (x' - x)` with `u ~ Uniform(0,1)` until the class
/// reaches the target. Classes at or above target are left untouched.
pub fn smote(m: &FeatureMatrix, cfg: &BalanceConfig) -> Result<BalancedDataset, BalanceError> {
    let k_classes = m.n_classes().max(1);
    let hist = m.class_histogram(k_classes);
    let target = cfg
        .target_per_class
        .unwrap_or_else(|| hist.iter().copied().max().unwrap_or(0));
    for (class, &size) in hist.iter().enumerate() {
        if size > target {
            return Err(BalanceError::TargetTooSmall {
                class,
                size,
                target,
            });
        }
    }

    let p = m.n_features();
    let mut values = m.values().to_vec();
    let mut labels = m.labels().to_vec();
    let mut provenance = vec![Provenance::Original; m.n_rows()];

    for class in 0..k_classes {
        let members: Vec<usize> = (0..m.n_rows())
            .filter(|&i| m.labels()[i] == class as u8)
            .collect();
        let deficit = target - members.len();
        if deficit == 0 {
            continue;
        }
        if members.is_empty() {
            return Err(BalanceError::EmptyClass(class));
        }
        if members.len() == 1 {
            return Err(BalanceError::NoNeighbor { class });
        }
        let neighbors = knn_within_class(m, &members, cfg.k_neighbors);
        let mut rng = rng_for(cfg.seed, "smote", class as u64);
        for _ in 0..deficit {
            let b = rng.gen_range(0..members.len());
            let base = members[b];
            let nn = &neighbors[b];
            let neighbor = nn[rng.gen_range(0..nn.len())];
            let u: f64 = rng.gen();
            let base_row = &m.values()[base * p..(base + 1) * p];
            let nb_row = &m.values()[neighbor * p..(neighbor + 1) * p];
            values.extend(base_row.iter().zip(nb_row).map(|(x, xp)| x + u * (xp - x)));
            labels.push(class as u8);
            provenance.push(Provenance::Synthetic {
                base: base as u32,
                neighbor: neighbor as u32,
            });
        }
    }

    let matrix = FeatureMatrix::new(m.feature_names().to_vec(), values, labels);
    Ok(BalancedDataset { matrix, provenance })
}

/// Verify that every synthetic row is a convex combination of its recorded
/// parents: a consistent `u` in the unit interval is re-derived across
/// coordinates within 1e-9 relative tolerance.
pub fn verify_convexity(ds: &BalancedDataset) -> Result<(), String> {
    let m = &ds.matrix;
    let p = m.n_features();
    for (i, prov) in ds.provenance.iter().enumerate() {
        let Provenance::Synthetic { base, neighbor } = prov else {
            continue;
        };
        let (a, b, s) = (m.row(*base as usize), m.row(*neighbor as usize), m.row(i));
        if ds.provenance[*base as usize] != Provenance::Original
            || ds.provenance[*neighbor as usize] != Provenance::Original
        {
            return Err(format!("row {i}: parent is not an original row"));
        }
        if m.labels()[*base as usize] != m.labels()[i]
            || m.labels()[*neighbor as usize] != m.labels()[i]
        {
            return Err(format!("row {i}: parent class differs"));
        }
        let mut u_est: Option<f64> = None;
        for j in 0..p {
            let span = b[j] - a[j];
            let scale = a[j].abs().max(b[j].abs()).max(1.0);
            if span.abs() <= 1e-12 * scale {
                if (s[j] - a[j]).abs() > 1e-9 * scale {
                    return Err(format!(
                        "row {i}, feature {j}: off-segment on degenerate coordinate"
                    ));
                }
                continue;
            }
            let u = (s[j] - a[j]) / span;
            if !(-1e-9..=1.0 + 1e-9).contains(&u) {
                return Err(format!("row {i}, feature {j}: u={u} outside [0,1]"));
            }
            match u_est {
                None => u_est = Some(u),
                Some(prev) => {
                    if (u - prev).abs() > 1e-9 * prev.abs().max(1.0) {
                        return Err(format!(
                            "row {i}, feature {j}: inconsistent u ({u} vs {prev})"
                        ));
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[(&[f64], u8)]) -> FeatureMatrix {
        let p = rows[0].0.len();
        let names = (0..p).map(|i| format!("f{i}")).collect();
        let values = rows.iter().flat_map(|(r, _)| r.iter().copied()).collect();
        let labels = rows.iter().map(|(_, l)| *l).collect();
        FeatureMatrix::new(names, values, labels)
    }

    fn counted_matrix(counts: [usize; 3]) -> FeatureMatrix {
        let mut rows: Vec<(Vec<f64>, u8)> = Vec::new();
        for (class, &c) in counts.iter().enumerate() {
            for i in 0..c {
                rows.push((
                    vec![class as f64 * 10.0 + (i % 7) as f64, i as f64],
                    class as u8,
                ));
            }
        }
        let borrowed: Vec<(&[f64], u8)> = rows.iter().map(|(r, l)| (r.as_slice(), *l)).collect();
        matrix(&borrowed)
    }

    #[test]
    fn undersample_matches_class_one() {
        let m = counted_matrix([523, 346, 110]);
        let cfg = BalanceConfig {
            seed: 9,
            ..Default::default()
        };
        let out = undersample_majority(&m, &cfg).unwrap();
        assert_eq!(out.class_histogram(3), vec![346, 346, 110]);
    }

    #[test]
    fn undersample_equal_counts_is_identity() {
        let m = counted_matrix([50, 50, 50]);
        let out = undersample_majority(&m, &BalanceConfig::default()).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn undersample_same_seed_same_subset() {
        let m = counted_matrix([200, 120, 40]);
        let cfg = BalanceConfig {
            seed: 42,
            ..Default::default()
        };
        let a = undersample_majority(&m, &cfg).unwrap();
        let b = undersample_majority(&m, &cfg).unwrap();
        assert_eq!(a, b);
        let cfg2 = BalanceConfig {
            seed: 43,
            ..Default::default()
        };
        let c = undersample_majority(&m, &cfg2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn undersample_empty_class_one_errors() {
        let m = counted_matrix([10, 0, 3]);
        assert!(matches!(
            undersample_majority(&m, &BalanceConfig::default()),
            Err(BalanceError::EmptyClass(1))
        ));
    }

    #[test]
    fn downsample_caps_classes_above_target() {
        let m = counted_matrix([50, 30, 10]);
        let out = downsample_to(&m, 20, 3).unwrap();
        assert_eq!(out.class_histogram(3), vec![20, 20, 10]);
        let again = downsample_to(&m, 20, 3).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn smote_two_point_class_stays_on_segment() {
        let m = matrix(&[
            (&[0.0, 0.0], 0),
            (&[1.0, 1.0], 0),
            (&[5.0, 5.0], 1),
            (&[6.0, 5.0], 1),
            (&[5.0, 6.0], 1),
            (&[6.0, 6.0], 1),
        ]);
        let cfg = BalanceConfig {
            seed: 1,
            k_neighbors: 1,
            target_per_class: Some(4),
        };
        let out = smote(&m, &cfg).unwrap();
        assert_eq!(out.matrix.class_histogram(2), vec![4, 4]);
        verify_convexity(&out).unwrap();
        // synthetic rows of class 0 lie on the diagonal segment (t, t)
        for (i, prov) in out.provenance.iter().enumerate() {
            if matches!(prov, Provenance::Synthetic { .. }) && out.matrix.labels()[i] == 0 {
                let r = out.matrix.row(i);
                assert!((r[0] - r[1]).abs() < 1e-12);
                assert!((0.0..=1.0).contains(&r[0]));
            }
        }
    }

    #[test]
    fn smote_duplicate_points_synthesize_the_point() {
        let m = matrix(&[
            (&[2.0, 3.0], 0),
            (&[2.0, 3.0], 0),
            (&[9.0, 9.0], 1),
            (&[9.5, 9.0], 1),
            (&[9.0, 9.5], 1),
        ]);
        let cfg = BalanceConfig {
            seed: 7,
            k_neighbors: 5,
            target_per_class: Some(3),
        };
        let out = smote(&m, &cfg).unwrap();
        let synth: Vec<&[f64]> = (0..out.matrix.n_rows())
            .filter(|&i| {
                matches!(out.provenance[i], Provenance::Synthetic { .. })
                    && out.matrix.labels()[i] == 0
            })
            .map(|i| out.matrix.row(i))
            .collect();
        assert_eq!(synth.len(), 1);
        assert_eq!(synth[0], &[2.0, 3.0]);
    }

    #[test]
    fn smote_uniform_histogram_and_determinism() {
        let m = counted_matrix([40, 40, 12]);
        let cfg = BalanceConfig {
            seed: 5,
            k_neighbors: 5,
            target_per_class: None,
        };
        let a = smote(&m, &cfg).unwrap();
        assert_eq!(a.matrix.class_histogram(3), vec![40, 40, 40]);
        verify_convexity(&a).unwrap();
        let b = smote(&m, &cfg).unwrap();
        assert_eq!(a.matrix, b.matrix);
        assert_eq!(a.provenance, b.provenance);
    }

    #[test]
    fn smote_single_row_class_errors() {
        let m = matrix(&[(&[0.0], 0), (&[1.0], 0), (&[2.0], 1)]);
        let cfg = BalanceConfig {
            seed: 0,
            k_neighbors: 1,
            target_per_class: Some(2),
        };
        assert!(matches!(
            smote(&m, &cfg),
            Err(BalanceError::NoNeighbor { class: 1 })
        ));
    }

    #[test]
    fn smote_target_below_current_size_errors() {
        let m = counted_matrix([10, 5, 5]);
        let cfg = BalanceConfig {
            seed: 0,
            k_neighbors: 2,
            target_per_class: Some(6),
        };
        assert!(matches!(
            smote(&m, &cfg),
            Err(BalanceError::TargetTooSmall { class: 0, .. })
        ));
    }
}
