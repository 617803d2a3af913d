//! Maximum margin interval forests: MMITs grown on row and feature
//! subsamples, averaged with weights inversely proportional to each tree's
//! out-of-bag error.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::leaf::LeafRule;
use crate::loss::{mean_squared_hinge_error, HingeLossSpec};
use crate::mmit::{tree_cv_table, TreeGrid, TreeGrower, TreeLimits, TreeNode};
use crate::model::Regressor;
use crate::seed::{derive_seed, rng};

pub const DEFAULT_TREES: usize = 100;

/// OOB errors are clamped to at least this before inversion.
pub const MIN_OOB_ERROR: f64 = 1e-12;

/// Seed path component for the shared CV split, distinct from tree indices.
const SHARED_CV_STREAM: u64 = u64::MAX;

/// `w_i = (1/e_i) / sum_j (1/e_j)` with each `e` clamped to
/// [`MIN_OOB_ERROR`].
pub fn compute_weights(errors: &[f64]) -> Vec<f64> {
    let inv: Vec<f64> = errors.iter().map(|&e| 1.0 / e.max(MIN_OOB_ERROR)).collect();
    let total: f64 = inv.iter().sum();
    inv.iter().map(|v| v / total).collect()
}

/// Where per-tree limits come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForestCv {
    /// 5-fold CV on each tree's own training subsample.
    #[default]
    PerTree,
    /// One CV over the whole training set, reused by every tree.
    Shared,
}

impl ForestCv {
    pub fn name(&self) -> &'static str {
        match self {
            Self::PerTree => "per_tree",
            Self::Shared => "shared",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub grid: TreeGrid,
    pub cv: ForestCv,
    pub loss: HingeLossSpec,
    pub rule: LeafRule,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: DEFAULT_TREES,
            grid: TreeGrid::mmif(),
            cv: ForestCv::PerTree,
            loss: HingeLossSpec::squared(),
            rule: LeafRule::Exact,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestMember {
    pub tree: TreeNode,
    pub limits: TreeLimits,
    pub feature_subset: Vec<usize>,
    pub train_rows: Vec<usize>,
    pub oob_indices: Vec<usize>,
    pub oob_error: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmifModel {
    pub members: Vec<ForestMember>,
}

impl MmifModel {
    pub fn weights(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.weight).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl Regressor for MmifModel {
    fn predict(&self, x: &[f64]) -> f64 {
        self.members.iter().map(|m| m.weight * m.tree.predict(x)).sum()
    }
}

/// Rows per tree (`floor(2n/3)`) and features per tree (`ceil(m/3)`).
pub fn subsample_sizes(n: usize, m: usize) -> (usize, usize) {
    (2 * n / 3, m.div_ceil(3))
}

pub fn train_mmif(train: &Dataset, config: &ForestConfig, seed: u64) -> Result<MmifModel> {
    let n = train.n_rows();
    let m = train.n_cols();
    if n < 5 {
        return Err(Error::InvalidParameter(format!("forest needs at least 5 rows, got {n}")));
    }
    if m == 0 {
        return Err(Error::Empty("features"));
    }
    if config.n_trees == 0 {
        return Err(Error::InvalidParameter("forest needs at least one tree".into()));
    }
    let (n_rows, n_feats) = subsample_sizes(n, m);

    let shared = match config.cv {
        ForestCv::PerTree => None,
        ForestCv::Shared => {
            let rows: Vec<usize> = (0..n).collect();
            let features: Vec<usize> = (0..m).collect();
            let cv_seed = derive_seed(seed, &[SHARED_CV_STREAM]);
            Some(select_limits(train, &rows, &features, config, cv_seed)?)
        }
    };

    let members: Vec<Result<ForestMember>> = (0..config.n_trees)
        .into_par_iter()
        .map(|i| {
            let tree_seed = derive_seed(seed, &[i as u64]);
            let mut r = rng(tree_seed);
            let mut rows = index::sample(&mut r, n, n_rows).into_vec();
            rows.sort_unstable();
            let mut features = index::sample(&mut r, m, n_feats).into_vec();
            features.sort_unstable();
            let mut in_bag = vec![false; n];
            rows.iter().for_each(|&i| in_bag[i] = true);
            let oob: Vec<usize> = (0..n).filter(|&i| !in_bag[i]).collect();

            let limits = match shared {
                Some(l) => l,
                None => select_limits(train, &rows, &features, config, derive_seed(tree_seed, &[1]))?,
            };
            let tree = TreeGrower::new(train, config.loss, config.rule, limits)
                .with_features(&features)
                .grow(&rows)?;
            let preds: Vec<f64> = oob.iter().map(|&i| tree.predict(train.row(i))).collect();
            let oob_targets: Vec<_> = oob.iter().map(|&i| *train.target(i)).collect();
            let oob_error = mean_squared_hinge_error(&preds, &oob_targets)?;
            Ok(ForestMember {
                tree,
                limits,
                feature_subset: features,
                train_rows: rows,
                oob_indices: oob,
                oob_error,
                weight: 0.0,
            })
        })
        .collect();
    let mut members = members.into_iter().collect::<Result<Vec<_>>>()?;
    let errors: Vec<f64> = members.iter().map(|m| m.oob_error).collect();
    for (member, w) in members.iter_mut().zip(compute_weights(&errors)) {
        member.weight = w;
    }
    Ok(MmifModel { members })
}

fn select_limits(
    data: &Dataset,
    rows: &[usize],
    features: &[usize],
    config: &ForestConfig,
    seed: u64,
) -> Result<TreeLimits> {
    let (cells, table) = tree_cv_table(data, rows, features, &config.grid, config.loss, config.rule, seed)?;
    let best = table
        .best()
        .ok_or_else(|| Error::Diverged("every tree configuration produced NaN error".into()))?;
    Ok(cells[best])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval::IntervalTarget;

    #[test]
    fn weight_examples() {
        assert_eq!(compute_weights(&[1.0, 1.0, 2.0]), vec![0.4, 0.4, 0.2]);
        let w = compute_weights(&[3.0; 4]);
        assert!(w.iter().all(|&v| v == 0.25));
        let w = compute_weights(&[0.0, 1.0]);
        assert!((w[0] - 1.0).abs() < 1e-11);
        assert!((w[1] - 1e-12).abs() < 1e-20);
    }

    #[test]
    fn subsample_sizes_round_as_documented() {
        assert_eq!(subsample_sizes(200, 20), (133, 7));
        assert_eq!(subsample_sizes(5, 1), (3, 1));
        assert_eq!(subsample_sizes(9, 2), (6, 1));
    }

    fn toy() -> Dataset {
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![(i as f64 * 0.7).sin() * 5.0, (i * 11 % 30) as f64, i as f64])
            .collect();
        let targets = rows
            .iter()
            .map(|r| IntervalTarget::new(r[0].abs() - 0.3, r[0].abs() + 0.3).unwrap())
            .collect();
        Dataset::from_rows("toy", &rows, targets).unwrap()
    }

    #[test]
    fn members_are_well_formed() {
        let data = toy();
        let config = ForestConfig {
            n_trees: 7,
            ..ForestConfig::default()
        };
        let forest = train_mmif(&data, &config, 3).unwrap();
        let total: f64 = forest.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        for m in &forest.members {
            assert_eq!(m.train_rows.len(), 20);
            assert_eq!(m.feature_subset.len(), 1);
            assert_eq!(m.train_rows.len() + m.oob_indices.len(), 30);
            assert!(m.oob_indices.iter().all(|i| !m.train_rows.contains(i)));
        }
        let again = train_mmif(&data, &config, 3).unwrap();
        assert_eq!(forest, again);
    }

    #[test]
    fn single_tree_forest_is_that_tree() {
        let data = toy();
        let config = ForestConfig {
            n_trees: 1,
            cv: ForestCv::Shared,
            ..ForestConfig::default()
        };
        let forest = train_mmif(&data, &config, 9).unwrap();
        assert_eq!(forest.members[0].weight, 1.0);
        for i in 0..data.n_rows() {
            assert_eq!(forest.predict(data.row(i)), forest.members[0].tree.predict(data.row(i)));
        }
    }

    #[test]
    fn too_few_rows_rejected() {
        let rows: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        let data = Dataset::from_rows("tiny", &rows, vec![IntervalTarget::exact(0.0).unwrap(); 4]).unwrap();
        assert!(train_mmif(&data, &ForestConfig::default(), 0).is_err());
    }
}
