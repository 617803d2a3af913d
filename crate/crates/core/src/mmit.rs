//! Maximum margin interval trees: CART-shaped regression trees whose leaves
//! hold the hinge-loss-optimal constant of the samples reaching them.
//!
//! Growth is greedy and each node's split depends only on the samples that
//! reach it, so a tree grown without limits contains every smaller tree as a
//! truncation. Cross-validation over `(max_depth, min_sample)` exploits this:
//! one full tree per fold answers the whole grid.

use serde::{Deserialize, Serialize};

use crate::baselines::CV_FOLDS;
use crate::dataset::{make_folds, Dataset};
use crate::error::{Error, Result};
use crate::leaf::{tie_slack, LeafRule, LeafSweep};
use crate::loss::{mean_squared_hinge_error, HingeLossSpec};
use crate::model::{CvTable, Hyperparams, Regressor};

/// Splits must improve the summed training cost by more than this, scaled by
/// `max(1, parent cost)`.
pub const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    /// Internal node. `value` and `achieved_loss` describe the node as if it
    /// were a leaf, which is what truncated prediction returns.
    Split {
        feature: usize,
        threshold: f64,
        value: f64,
        achieved_loss: f64,
        n_samples: usize,
        gain: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: f64,
        /// Mean hinge loss of the node's samples at `value`.
        achieved_loss: f64,
        n_samples: usize,
    },
}

/// Stopping limits applied during growth or at prediction time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeLimits {
    /// `None` is unbounded depth; `Some(0)` is a single leaf.
    pub max_depth: Option<usize>,
    /// Nodes with fewer samples are not split. Values 0, 1 and 2 coincide.
    pub min_sample: usize,
}

impl TreeLimits {
    pub const UNLIMITED: TreeLimits = TreeLimits {
        max_depth: None,
        min_sample: 0,
    };

    pub fn new(max_depth: Option<usize>, min_sample: usize) -> Self {
        Self { max_depth, min_sample }
    }

    fn allows_split(&self, depth: usize, n_samples: usize) -> bool {
        self.max_depth.is_none_or(|d| depth < d) && n_samples >= self.min_sample.max(2)
    }

    pub fn label(&self) -> String {
        let depth = self.max_depth.map_or("inf".to_string(), |d| d.to_string());
        format!("max_depth={depth},min_sample={}", self.min_sample)
    }

    pub fn hyperparams(&self) -> Hyperparams {
        let mut h = Hyperparams::new();
        h.insert(
            "max_depth".into(),
            self.max_depth.map_or("inf".to_string(), |d| d.to_string()),
        );
        h.insert("min_sample".into(), self.min_sample.to_string());
        h
    }
}

impl TreeNode {
    pub fn value(&self) -> f64 {
        match self {
            Self::Split { value, .. } | Self::Leaf { value, .. } => *value,
        }
    }

    pub fn n_samples(&self) -> usize {
        match self {
            Self::Split { n_samples, .. } | Self::Leaf { n_samples, .. } => *n_samples,
        }
    }

    pub fn achieved_loss(&self) -> f64 {
        match self {
            Self::Split { achieved_loss, .. } | Self::Leaf { achieved_loss, .. } => *achieved_loss,
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.leaf_for(x).value()
    }

    /// The leaf `x` is routed to.
    pub fn leaf_for(&self, x: &[f64]) -> &TreeNode {
        let mut node = self;
        while let Self::Split {
            feature,
            threshold,
            left,
            right,
            ..
        } = node
        {
            node = if x[*feature] <= *threshold { left } else { right };
        }
        node
    }

    /// Prediction of the tree as if it had been grown under `limits`.
    pub fn predict_truncated(&self, x: &[f64], limits: &TreeLimits) -> f64 {
        let mut node = self;
        let mut depth = 0;
        while let Self::Split {
            feature,
            threshold,
            left,
            right,
            n_samples,
            ..
        } = node
        {
            if !limits.allows_split(depth, *n_samples) {
                break;
            }
            node = if x[*feature] <= *threshold { left } else { right };
            depth += 1;
        }
        node.value()
    }

    /// A copy with every node beyond `limits` collapsed into a leaf.
    pub fn truncated(&self, limits: &TreeLimits) -> TreeNode {
        self.truncate_at(limits, 0)
    }

    fn truncate_at(&self, limits: &TreeLimits, depth: usize) -> TreeNode {
        match self {
            Self::Split {
                feature,
                threshold,
                value,
                achieved_loss,
                n_samples,
                gain,
                left,
                right,
            } if limits.allows_split(depth, *n_samples) => Self::Split {
                feature: *feature,
                threshold: *threshold,
                value: *value,
                achieved_loss: *achieved_loss,
                n_samples: *n_samples,
                gain: *gain,
                left: Box::new(left.truncate_at(limits, depth + 1)),
                right: Box::new(right.truncate_at(limits, depth + 1)),
            },
            node => Self::Leaf {
                value: node.value(),
                achieved_loss: node.achieved_loss(),
                n_samples: node.n_samples(),
            },
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Self::Leaf { .. } => 0,
            Self::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            Self::Leaf { .. } => 1,
            Self::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// The best split of a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
    /// Summed hinge loss of each child at its own optimal constant.
    pub left_cost: f64,
    pub right_cost: f64,
}

/// Summed hinge loss of `samples` at their optimal constant, and that
/// constant.
pub fn node_cost(data: &Dataset, samples: &[usize], loss: HingeLossSpec, rule: LeafRule) -> (f64, f64) {
    let targets: Vec<_> = samples.iter().map(|&i| *data.target(i)).collect();
    let mut sweep = LeafSweep::new(&targets, loss, rule);
    let value = sweep.solve_all().value;
    (value, sweep.direct_loss(value, &|_| true))
}

/// Exhaustive search over `features` for the split of `samples` with the
/// largest cost reduction. Thresholds are midpoints between consecutive
/// distinct values. Gains within the tie tolerance of the best count as
/// tied and resolve to the lowest feature, then the lowest threshold; every
/// accepted split must beat [`MIN_GAIN`].
pub fn split_search(
    data: &Dataset,
    samples: &[usize],
    features: &[usize],
    loss: HingeLossSpec,
    rule: LeafRule,
) -> Option<Split> {
    let s = samples.len();
    if s < 2 {
        return None;
    }
    let targets: Vec<_> = samples.iter().map(|&i| *data.target(i)).collect();
    let mut sweep = LeafSweep::new(&targets, loss, rule);
    let parent_value = sweep.solve_all().value;
    let parent_cost = sweep.direct_loss(parent_value, &|_| true);

    let mut features = features.to_vec();
    features.sort_unstable();
    features.dedup();

    let mut evaluated: Vec<Split> = Vec::new();
    let mut order: Vec<usize> = (0..s).collect();
    let mut in_left = vec![false; s];
    let mut values = vec![0.0; s];
    for &f in &features {
        for (local, &row) in samples.iter().enumerate() {
            values[local] = data.feature(row, f);
        }
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        in_left.iter_mut().for_each(|v| *v = false);
        for k in 0..s - 1 {
            in_left[order[k]] = true;
            let (lo, hi) = (values[order[k]], values[order[k + 1]]);
            if lo == hi {
                continue;
            }
            let mid = 0.5 * (lo + hi);
            let threshold = if mid < hi { mid } else { lo };
            let left_member = |o: usize| in_left[o];
            let right_member = |o: usize| !in_left[o];
            let left_value = sweep.solve(left_member).value;
            let right_value = sweep.solve(right_member).value;
            let left_cost = sweep.direct_loss(left_value, &left_member);
            let right_cost = sweep.direct_loss(right_value, &right_member);
            evaluated.push(Split {
                feature: f,
                threshold,
                gain: parent_cost - (left_cost + right_cost),
                left_cost,
                right_cost,
            });
        }
    }

    let required = MIN_GAIN * parent_cost.max(1.0);
    let best = evaluated.iter().map(|c| c.gain).fold(f64::NEG_INFINITY, f64::max);
    if !(best > required) {
        return None;
    }
    // the slack can exceed a tiny best gain; a tie must still clear the bar
    let limit = best - tie_slack(best);
    evaluated.into_iter().find(|c| c.gain >= limit && c.gain > required)
}

/// Growth settings shared by every node of one tree.
#[derive(Debug, Clone)]
pub struct TreeGrower<'a> {
    data: &'a Dataset,
    loss: HingeLossSpec,
    rule: LeafRule,
    features: Vec<usize>,
    limits: TreeLimits,
}

impl<'a> TreeGrower<'a> {
    pub fn new(data: &'a Dataset, loss: HingeLossSpec, rule: LeafRule, limits: TreeLimits) -> Self {
        Self {
            data,
            loss,
            rule,
            features: (0..data.n_cols()).collect(),
            limits,
        }
    }

    /// Restrict splits to the given columns.
    pub fn with_features(mut self, features: &[usize]) -> Self {
        self.features = features.to_vec();
        self
    }

    pub fn grow(&self, rows: &[usize]) -> Result<TreeNode> {
        if rows.is_empty() {
            return Err(Error::Empty("tree training rows"));
        }
        Ok(self.grow_node(rows.to_vec(), 0))
    }

    pub fn grow_all(&self) -> Result<TreeNode> {
        let rows: Vec<usize> = (0..self.data.n_rows()).collect();
        self.grow(&rows)
    }

    fn grow_node(&self, samples: Vec<usize>, depth: usize) -> TreeNode {
        let (value, cost) = node_cost(self.data, &samples, self.loss, self.rule);
        let n = samples.len();
        let achieved_loss = cost / n as f64;
        let split = if self.limits.allows_split(depth, n) {
            split_search(self.data, &samples, &self.features, self.loss, self.rule)
        } else {
            None
        };
        let Some(split) = split else {
            return TreeNode::Leaf {
                value,
                achieved_loss,
                n_samples: n,
            };
        };
        assert!(
            split.left_cost + split.right_cost < cost,
            "accepted split must lower the training cost: {} + {} vs {cost} (gain {})",
            split.left_cost,
            split.right_cost,
            split.gain
        );
        let (left, right): (Vec<usize>, Vec<usize>) = samples
            .iter()
            .partition(|&&i| self.data.feature(i, split.feature) <= split.threshold);
        TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            value,
            achieved_loss,
            n_samples: n,
            gain: split.gain,
            left: Box::new(self.grow_node(left, depth + 1)),
            right: Box::new(self.grow_node(right, depth + 1)),
        }
    }
}

/// Hyperparameter grid over tree limits.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeGrid {
    pub max_depths: Vec<Option<usize>>,
    pub min_samples: Vec<usize>,
}

impl TreeGrid {
    pub fn mmit() -> Self {
        Self {
            max_depths: vec![Some(0), Some(1), Some(5), Some(10), Some(20), None],
            min_samples: vec![0, 1, 2, 4, 8, 16, 20],
        }
    }

    pub fn mmif() -> Self {
        Self {
            max_depths: vec![Some(2), Some(5), Some(10), Some(15), Some(20), Some(25)],
            min_samples: vec![2, 5, 10, 20, 50],
        }
    }

    /// Cells in tie-break preference order: shallower first, then larger
    /// `min_sample` (both favor smaller trees).
    pub fn cells(&self) -> Vec<TreeLimits> {
        let mut depths = self.max_depths.clone();
        depths.sort_by_key(|d| d.unwrap_or(usize::MAX));
        depths.dedup();
        let mut mins = self.min_samples.clone();
        mins.sort_unstable_by(|a, b| b.cmp(a));
        mins.dedup();
        depths
            .iter()
            .flat_map(|&d| mins.iter().map(move |&m| TreeLimits::new(d, m)))
            .collect()
    }

    /// The least restrictive limits covering every cell.
    pub fn envelope(&self) -> TreeLimits {
        let max_depth = if self.max_depths.iter().any(Option::is_none) {
            None
        } else {
            self.max_depths.iter().flatten().max().copied()
        };
        TreeLimits::new(max_depth, self.min_samples.iter().copied().min().unwrap_or(0))
    }
}

/// Cross-validated error of every grid cell, computed from one envelope tree
/// per fold. `rows` indexes `data`; folds are drawn over those rows.
pub fn tree_cv_table(
    data: &Dataset,
    rows: &[usize],
    features: &[usize],
    grid: &TreeGrid,
    loss: HingeLossSpec,
    rule: LeafRule,
    seed: u64,
) -> Result<(Vec<TreeLimits>, CvTable)> {
    let cells = grid.cells();
    if cells.is_empty() {
        return Err(Error::InvalidParameter("empty tree grid".into()));
    }
    let k = CV_FOLDS.min(rows.len());
    if k < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 rows for cross-validation, got {}",
            rows.len()
        )));
    }
    let folds = make_folds(rows.len(), k, seed)?;
    let grower = TreeGrower::new(data, loss, rule, grid.envelope()).with_features(features);
    let mut sums = vec![0.0; cells.len()];
    for (fit_local, test_local) in folds.splits() {
        let fit_rows: Vec<usize> = fit_local.iter().map(|&i| rows[i]).collect();
        let tree = grower.grow(&fit_rows)?;
        let test_targets: Vec<_> = test_local.iter().map(|&i| *data.target(rows[i])).collect();
        for (c, limits) in cells.iter().enumerate() {
            let preds: Vec<f64> = test_local
                .iter()
                .map(|&i| tree.predict_truncated(data.row(rows[i]), limits))
                .collect();
            sums[c] += mean_squared_hinge_error(&preds, &test_targets)?;
        }
    }
    let table = CvTable {
        labels: cells.iter().map(TreeLimits::label).collect(),
        mean_errors: sums.iter().map(|s| s / k as f64).collect(),
    };
    Ok((cells, table))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmitModel {
    pub tree: TreeNode,
    pub limits: TreeLimits,
}

impl Regressor for MmitModel {
    fn predict(&self, x: &[f64]) -> f64 {
        self.tree.predict(x)
    }
}

pub fn train_mmit(train: &Dataset, limits: TreeLimits, loss: HingeLossSpec, rule: LeafRule) -> Result<MmitModel> {
    let tree = TreeGrower::new(train, loss, rule, limits).grow_all()?;
    Ok(MmitModel { tree, limits })
}

/// Select limits from `grid` by 5-fold CV on mean squared hinge error and
/// refit on all of `train`.
pub fn mmit_cv_select(
    train: &Dataset,
    grid: &TreeGrid,
    loss: HingeLossSpec,
    rule: LeafRule,
    seed: u64,
) -> Result<(MmitModel, CvTable)> {
    let rows: Vec<usize> = (0..train.n_rows()).collect();
    let features: Vec<usize> = (0..train.n_cols()).collect();
    let (cells, table) = tree_cv_table(train, &rows, &features, grid, loss, rule, seed)?;
    let best = table
        .best()
        .ok_or_else(|| Error::Diverged("every tree configuration produced NaN error".into()))?;
    Ok((train_mmit(train, cells[best], loss, rule)?, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval::IntervalTarget;
    use crate::leaf::best_constant;

    fn t(l: f64, u: f64) -> IntervalTarget {
        IntervalTarget::new(l, u).unwrap()
    }

    fn separable() -> Dataset {
        let rows: Vec<Vec<f64>> = [-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]
            .iter()
            .enumerate()
            .map(|(i, &x)| vec![i as f64 * 0.37 % 1.0, x])
            .collect();
        let targets = rows
            .iter()
            .map(|r| if r[1] < 0.0 { t(-2.0, -1.0) } else { t(1.0, 2.0) })
            .collect();
        Dataset::from_rows("sep", &rows, targets).unwrap()
    }

    #[test]
    fn separable_feature_is_chosen() {
        let data = separable();
        let rows: Vec<usize> = (0..6).collect();
        let split = split_search(&data, &rows, &[0, 1], HingeLossSpec::squared(), LeafRule::Exact).unwrap();
        assert_eq!(split.feature, 1);
        assert_eq!(split.threshold, 0.0);
        assert_eq!(split.left_cost, 0.0);
        assert_eq!(split.right_cost, 0.0);
    }

    #[test]
    fn identical_targets_do_not_split() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let data = Dataset::from_rows("same", &rows, vec![t(1.0, 2.0); 5]).unwrap();
        let idx: Vec<usize> = (0..5).collect();
        assert!(split_search(&data, &idx, &[0], HingeLossSpec::squared(), LeafRule::Exact).is_none());
    }

    /// The best gain here is far below the tie slack; the useless split on
    /// the first feature must not win the tie-break.
    #[test]
    fn tiny_gain_is_not_tied_with_zero() {
        let d = 2e-5;
        let rows = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let targets = vec![t(0.0, 0.0), t(0.0, 0.0), t(d, d), t(d, d)];
        let data = Dataset::from_rows("tiny", &rows, targets).unwrap();
        let split = split_search(&data, &[0, 1, 2, 3], &[0, 1], HingeLossSpec::squared(), LeafRule::Exact).unwrap();
        assert_eq!(split.feature, 1);
        assert!(split.gain > 0.0);
        let model = train_mmit(&data, TreeLimits::UNLIMITED, HingeLossSpec::squared(), LeafRule::Exact).unwrap();
        assert_eq!(model.tree.n_leaves(), 2);
    }

    #[test]
    fn depth_zero_is_constant() {
        let data = separable();
        let model = train_mmit(&data, TreeLimits::new(Some(0), 2), HingeLossSpec::squared(), LeafRule::Exact).unwrap();
        let c = best_constant(data.targets(), &HingeLossSpec::squared()).unwrap();
        assert_eq!(model.tree.n_leaves(), 1);
        assert_eq!(model.predict(&[0.0, 5.0]), c);
    }

    #[test]
    fn truncation_matches_direct_growth() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![(i * 7 % 40) as f64, (i * 13 % 40) as f64]).collect();
        let targets = rows
            .iter()
            .map(|r| {
                let y = (r[0] / 6.0).sin() + 0.05 * r[1];
                t(y - 0.2, y + 0.2)
            })
            .collect();
        let data = Dataset::from_rows("trunc", &rows, targets).unwrap();
        let loss = HingeLossSpec::squared();
        let full = train_mmit(&data, TreeLimits::UNLIMITED, loss, LeafRule::Exact).unwrap();
        for limits in TreeGrid::mmit().cells() {
            let direct = train_mmit(&data, limits, loss, LeafRule::Exact).unwrap();
            assert_eq!(full.tree.truncated(&limits), direct.tree, "{}", limits.label());
            for r in &rows {
                assert_eq!(full.tree.predict_truncated(r, &limits), direct.predict(r));
            }
        }
    }

    #[test]
    fn json_roundtrip() {
        let data = separable();
        let model = train_mmit(&data, TreeLimits::UNLIMITED, HingeLossSpec::squared(), LeafRule::Exact).unwrap();
        let json = model.tree.to_json().unwrap();
        assert!(json.contains("\"kind\": \"split\""));
        let back: TreeNode = serde_json::from_str(&json).unwrap();
        assert_eq!(back, model.tree);
    }

    #[test]
    fn grid_sizes_and_order() {
        let cells = TreeGrid::mmit().cells();
        assert_eq!(cells.len(), 42);
        assert_eq!(cells[0], TreeLimits::new(Some(0), 20));
        assert_eq!(cells[41], TreeLimits::new(None, 0));
        assert_eq!(TreeGrid::mmif().cells().len(), 30);
        assert_eq!(TreeGrid::mmif().envelope(), TreeLimits::new(Some(25), 2));
    }
}
