//! The featureless constant model and interval k-nearest neighbours.

use crate::dataset::{make_folds, Dataset, Standardizer};
use crate::error::{Error, Result};
use crate::interval::IntervalTarget;
use crate::leaf::{LeafRule, LeafSweep};
use crate::loss::{mean_squared_hinge_error, HingeLossSpec};
use crate::model::{CvTable, Regressor};

pub const CV_FOLDS: usize = 5;

/// Predicts the same value everywhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantModel {
    pub value: f64,
}

impl Regressor for ConstantModel {
    fn predict(&self, _x: &[f64]) -> f64 {
        self.value
    }
}

/// The constant minimizing the mean squared hinge error of the training
/// targets.
pub fn train_constant(train: &Dataset, rule: LeafRule) -> Result<ConstantModel> {
    let value = rule.solve(train.targets(), &HingeLossSpec::squared())?;
    Ok(ConstantModel { value })
}

/// k-nearest neighbours on standardized features; the prediction is the leaf
/// value of the neighbours' targets.
#[derive(Debug, Clone)]
pub struct KnnModel {
    k: usize,
    loss: HingeLossSpec,
    rule: LeafRule,
    stats: Standardizer,
    n_cols: usize,
    rows: Vec<f64>,
    targets: Vec<IntervalTarget>,
}

pub fn train_knn(train: &Dataset, k: usize, loss: HingeLossSpec, rule: LeafRule) -> Result<KnnModel> {
    if k == 0 || k > train.n_rows() {
        return Err(Error::InvalidParameter(format!(
            "k must be in 1..={}, got {k}",
            train.n_rows()
        )));
    }
    let stats = Standardizer::fit(train);
    let mut rows = Vec::with_capacity(train.n_rows() * train.n_cols());
    for i in 0..train.n_rows() {
        rows.extend(stats.transform_row(train.row(i)));
    }
    Ok(KnnModel {
        k,
        loss,
        rule,
        stats,
        n_cols: train.n_cols(),
        rows,
        targets: train.targets().to_vec(),
    })
}

impl KnnModel {
    pub fn k(&self) -> usize {
        self.k
    }

    /// Training rows ordered by Euclidean distance to `x` (raw features);
    /// equal distances keep the lower row index first.
    pub fn neighbor_order(&self, x: &[f64]) -> Vec<usize> {
        let z = self.stats.transform_row(x);
        let dist: Vec<f64> = self
            .rows
            .chunks_exact(self.n_cols)
            .map(|r| r.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum())
            .collect();
        let mut order: Vec<usize> = (0..dist.len()).collect();
        order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
        order
    }

    pub fn neighbors(&self, x: &[f64]) -> Vec<usize> {
        let mut order = self.neighbor_order(x);
        order.truncate(self.k);
        order
    }
}

impl Regressor for KnnModel {
    fn predict(&self, x: &[f64]) -> f64 {
        let nb = self.neighbors(x);
        let mut sweep = LeafSweep::new(nb.iter().map(|&i| &self.targets[i]), self.loss, self.rule);
        sweep.solve_all().value
    }
}

/// Candidate neighbour counts `1..=ceil(sqrt(n))`.
pub fn knn_grid(n: usize) -> Vec<usize> {
    let top = (n as f64).sqrt().ceil() as usize;
    (1..=top.max(1)).collect()
}

/// Choose `k` by 5-fold cross-validation on mean squared hinge error (ties
/// go to the smaller `k`), then fit on all of `train`.
pub fn knn_cv_select(train: &Dataset, loss: HingeLossSpec, rule: LeafRule, seed: u64) -> Result<(KnnModel, CvTable)> {
    let grid = knn_grid(train.n_rows());
    let folds = make_folds(train.n_rows(), CV_FOLDS, seed)?;
    let mut sums = vec![0.0; grid.len()];
    for (tr_rows, te_rows) in folds.splits() {
        let tr = train.subset(&tr_rows);
        let te = train.subset(&te_rows);
        let kmax = *grid.last().expect("nonempty grid");
        let model = train_knn(&tr, kmax.min(tr.n_rows()), loss, rule)?;
        let mut preds = vec![Vec::with_capacity(te.n_rows()); grid.len()];
        for i in 0..te.n_rows() {
            let order = model.neighbor_order(te.row(i));
            for (g, &k) in grid.iter().enumerate() {
                let k = k.min(order.len());
                let mut sweep = LeafSweep::new(order[..k].iter().map(|&r| &model.targets[r]), loss, rule);
                preds[g].push(sweep.solve_all().value);
            }
        }
        for (g, p) in preds.iter().enumerate() {
            sums[g] += mean_squared_hinge_error(p, te.targets())?;
        }
    }
    let table = CvTable {
        labels: grid.iter().map(|k| format!("k={k}")).collect(),
        mean_errors: sums.iter().map(|s| s / CV_FOLDS as f64).collect(),
    };
    let best = table.best().ok_or_else(|| Error::Diverged("no finite KNN cross-validation error".into()))?;
    Ok((train_knn(train, grid[best], loss, rule)?, table))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(l: f64, u: f64) -> IntervalTarget {
        IntervalTarget::new(l, u).unwrap()
    }

    fn small() -> Dataset {
        let rows = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![5.0, 5.0], vec![6.0, 5.0]];
        let targets = vec![t(2.0, 5.0), t(1.0, 3.0), t(10.0, 11.0), t(9.0, f64::INFINITY)];
        Dataset::from_rows("small", &rows, targets).unwrap()
    }

    #[test]
    fn constant_model() {
        let m = train_constant(&small(), LeafRule::Exact).unwrap();
        assert_eq!(m.predict(&[0.0, 0.0]), m.predict(&[100.0, -3.0]));
    }

    #[test]
    fn knn_with_all_rows_is_constant() {
        let ds = small();
        let knn = train_knn(&ds, 4, HingeLossSpec::squared(), LeafRule::Exact).unwrap();
        let c = train_constant(&ds, LeafRule::Exact).unwrap();
        for x in [[0.0, 0.0], [3.0, 3.0], [10.0, -1.0]] {
            assert_eq!(knn.predict(&x), c.value);
        }
    }

    #[test]
    fn one_neighbor_returns_its_leaf_value() {
        let ds = small();
        let knn = train_knn(&ds, 1, HingeLossSpec::squared(), LeafRule::Exact).unwrap();
        assert_eq!(knn.predict(&[0.0, 1.0]), 2.0);
    }

    #[test]
    fn k_out_of_range() {
        let ds = small();
        assert!(train_knn(&ds, 0, HingeLossSpec::squared(), LeafRule::Exact).is_err());
        assert!(train_knn(&ds, 5, HingeLossSpec::squared(), LeafRule::Exact).is_err());
    }

    #[test]
    fn grid_bounds() {
        assert_eq!(knn_grid(160), (1..=13).collect::<Vec<_>>());
        assert_eq!(knn_grid(16), (1..=4).collect::<Vec<_>>());
    }

    #[test]
    fn distance_ties_prefer_lower_index() {
        let rows = vec![vec![1.0], vec![-1.0], vec![10.0], vec![-10.0]];
        let targets = vec![t(0.0, 1.0), t(5.0, 6.0), t(7.0, 8.0), t(7.0, 8.0)];
        let ds = Dataset::from_rows("tie", &rows, targets).unwrap();
        let knn = train_knn(&ds, 1, HingeLossSpec::squared(), LeafRule::Exact).unwrap();
        assert_eq!(knn.neighbors(&[0.0]), vec![0]);
    }
}
