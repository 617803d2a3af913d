//! Newton-boosted regression trees on the AFT negative log-likelihood.
//!
//! Targets are exponentiated before the likelihood sees them and the model
//! accumulates scores on the log scale, so the raw score is the prediction
//! on the original scale. Left-censored targets `(-inf, y_u)` become
//! `(0, exp y_u)` and the likelihood keeps rewarding ever smaller
//! predictions for them; this is reproduced deliberately. An opt-in
//! preprocessing step ([`clamp_left_censored`]) replaces the missing lower
//! bound with a finite one.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aft::{aft_grad_hess, aft_loss, AftDistribution, AftLossSpec};
use crate::baselines::CV_FOLDS;
use crate::dataset::{make_folds, Dataset};
use crate::error::{Error, Result};
use crate::interval::IntervalTarget;
use crate::leaf::best_constant;
use crate::linear::soft_threshold;
use crate::loss::{mean_squared_hinge_error, HingeLossSpec};
use crate::model::{CvTable, Hyperparams, Regressor};
use crate::seed::{derive_seed, rng};

pub const DEFAULT_ROUNDS: usize = 100;
pub const DEFAULT_SEARCH_CELLS: usize = 200;
/// Largest bound that can be exponentiated without overflow.
pub const MAX_EXP_BOUND: f64 = 700.0;
/// Splits must reduce the regularized objective by more than this.
pub const MIN_SPLIT_GAIN: f64 = 1e-6;

pub const LEARNING_RATES: [f64; 4] = [0.001, 0.01, 0.1, 1.0];
pub const MAX_DEPTHS: [usize; 9] = [2, 3, 4, 5, 6, 7, 8, 9, 10];
pub const MIN_CHILD_WEIGHTS: [f64; 5] = [0.001, 0.1, 1.0, 10.0, 100.0];
pub const REGULARIZATION: [f64; 6] = [0.001, 0.01, 0.1, 1.0, 10.0, 100.0];
pub const SCALES: [f64; 6] = [0.5, 0.8, 1.1, 1.4, 1.7, 2.0];

/// `(y_l, y_u) -> (exp y_l, exp y_u)` with `exp(-inf) = 0`.
pub fn transform_targets_exp(targets: &[IntervalTarget]) -> Result<Vec<IntervalTarget>> {
    targets
        .iter()
        .map(|t| {
            for b in [t.lower(), t.upper()] {
                if b.is_finite() && b > MAX_EXP_BOUND {
                    return Err(Error::ExpOverflow(b));
                }
            }
            IntervalTarget::new(t.lower().exp(), t.upper().exp())
        })
        .collect()
}

/// Replace every missing lower bound with `value` (or with the upper bound
/// when that is smaller).
pub fn clamp_left_censored(targets: &[IntervalTarget], value: f64) -> Result<Vec<IntervalTarget>> {
    if !value.is_finite() {
        return Err(Error::InvalidParameter(format!("clamp value must be finite, got {value}")));
    }
    targets
        .iter()
        .map(|t| {
            if t.has_finite_lower() {
                Ok(*t)
            } else {
                IntervalTarget::new(value.min(t.upper()), t.upper())
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_child_weight: f64,
    pub reg_alpha: f64,
    pub reg_lambda: f64,
    /// Scale of the AFT error distribution.
    pub sigma: f64,
    pub distribution: AftDistribution,
    pub n_rounds: usize,
}

impl BoostConfig {
    /// Every cell of the search grid for one distribution.
    pub fn grid(distribution: AftDistribution) -> Vec<BoostConfig> {
        let mut out = Vec::with_capacity(38_880);
        for learning_rate in LEARNING_RATES {
            for max_depth in MAX_DEPTHS {
                for min_child_weight in MIN_CHILD_WEIGHTS {
                    for reg_alpha in REGULARIZATION {
                        for reg_lambda in REGULARIZATION {
                            for sigma in SCALES {
                                out.push(BoostConfig {
                                    learning_rate,
                                    max_depth,
                                    min_child_weight,
                                    reg_alpha,
                                    reg_lambda,
                                    sigma,
                                    distribution,
                                    n_rounds: DEFAULT_ROUNDS,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn label(&self) -> String {
        format!(
            "distribution={},learning_rate={},max_depth={},min_child_weight={},reg_alpha={},reg_lambda={},sigma={}",
            self.distribution.name(),
            self.learning_rate,
            self.max_depth,
            self.min_child_weight,
            self.reg_alpha,
            self.reg_lambda,
            self.sigma
        )
    }

    pub fn hyperparams(&self) -> Hyperparams {
        let mut h = Hyperparams::new();
        h.insert("distribution".into(), self.distribution.name().into());
        h.insert("learning_rate".into(), self.learning_rate.to_string());
        h.insert("max_depth".into(), self.max_depth.to_string());
        h.insert("min_child_weight".into(), self.min_child_weight.to_string());
        h.insert("reg_alpha".into(), self.reg_alpha.to_string());
        h.insert("reg_lambda".into(), self.reg_lambda.to_string());
        h.insert("sigma".into(), self.sigma.to_string());
        h
    }

    fn validate(&self) -> Result<AftLossSpec> {
        let ok = self.learning_rate >= 0.0
            && self.min_child_weight >= 0.0
            && self.reg_alpha >= 0.0
            && self.reg_lambda >= 0.0
            && [self.learning_rate, self.min_child_weight, self.reg_alpha, self.reg_lambda]
                .iter()
                .all(|v| v.is_finite());
        if !ok {
            return Err(Error::InvalidParameter(format!("invalid boosting config: {}", self.label())));
        }
        AftLossSpec::new(self.distribution, self.sigma)
    }
}

/// `0.5 * [S(G_L, H_L) + S(G_R, H_R) - S(G, H)]` with
/// `S(G, H) = soft_threshold(G, alpha)^2 / (H + lambda)`.
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, alpha: f64, lambda: f64) -> f64 {
    let score = |g: f64, h: f64| {
        let t = soft_threshold(g, alpha);
        t * t / (h + lambda)
    };
    0.5 * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr))
}

/// Newton leaf value `-soft_threshold(G, alpha) / (H + lambda)`, unshrunk.
pub fn leaf_weight(g: f64, h: f64, alpha: f64, lambda: f64) -> f64 {
    -soft_threshold(g, alpha) / (h + lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoostNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// A regression tree stored as a node array with the root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostTree {
    pub nodes: Vec<BoostNode>,
}

impl BoostTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                BoostNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
                BoostNode::Leaf { value } => return value,
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, BoostNode::Leaf { .. })).count()
    }
}

/// Features in column-major order with each column's row order presorted.
struct Columns {
    values: Vec<Vec<f64>>,
    sorted: Vec<Vec<u32>>,
    n_rows: usize,
}

impl Columns {
    fn new(data: &Dataset) -> Self {
        let n = data.n_rows();
        let values: Vec<Vec<f64>> = (0..data.n_cols())
            .map(|j| (0..n).map(|i| data.feature(i, j)).collect())
            .collect();
        let sorted = values
            .iter()
            .map(|col| {
                let mut order: Vec<u32> = (0..n as u32).collect();
                order.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                order
            })
            .collect();
        Self {
            values,
            sorted,
            n_rows: n,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
    gl: f64,
    hl: f64,
}

/// Grow one tree level by level with exact greedy split search. Returns the
/// tree and the (shrunk) leaf value reached by every training row.
fn build_tree(cols: &Columns, grad: &[f64], hess: &[f64], config: &BoostConfig) -> (BoostTree, Vec<f64>) {
    const NONE: u32 = u32::MAX;
    let n = cols.n_rows;
    let (alpha, lambda, mcw) = (config.reg_alpha, config.reg_lambda, config.min_child_weight);
    let mut nodes = vec![BoostNode::Leaf { value: 0.0 }];
    // tree node of each row, and each level node's (node id, G, H)
    let mut row_node = vec![0usize; n];
    let mut level: Vec<(usize, f64, f64)> = vec![(0, grad.iter().sum(), hess.iter().sum())];
    let mut depth = 0;
    while !level.is_empty() {
        let mut best: Vec<Option<Candidate>> = vec![None; level.len()];
        if depth < config.max_depth {
            let mut slot = vec![NONE; nodes.len()];
            for (k, &(id, _, _)) in level.iter().enumerate() {
                slot[id] = k as u32;
            }
            let mut gl = vec![0.0; level.len()];
            let mut hl = vec![0.0; level.len()];
            let mut last = vec![f64::NAN; level.len()];
            for (f, order) in cols.sorted.iter().enumerate() {
                let col = &cols.values[f];
                gl.iter_mut().for_each(|v| *v = 0.0);
                hl.iter_mut().for_each(|v| *v = 0.0);
                last.iter_mut().for_each(|v| *v = f64::NAN);
                for &r in order {
                    let r = r as usize;
                    let k = slot[row_node[r]];
                    if k == NONE {
                        continue;
                    }
                    let k = k as usize;
                    let v = col[r];
                    if !last[k].is_nan() && v != last[k] {
                        let (_, g, h) = level[k];
                        let (gr, hr) = (g - gl[k], h - hl[k]);
                        if hl[k] >= mcw && hr >= mcw {
                            let gain = split_gain(gl[k], hl[k], gr, hr, alpha, lambda);
                            if gain > MIN_SPLIT_GAIN && best[k].is_none_or(|b| gain > b.gain) {
                                let mid = 0.5 * (last[k] + v);
                                best[k] = Some(Candidate {
                                    feature: f,
                                    threshold: if mid < v { mid } else { last[k] },
                                    gain,
                                    gl: gl[k],
                                    hl: hl[k],
                                });
                            }
                        }
                    }
                    gl[k] += grad[r];
                    hl[k] += hess[r];
                    last[k] = v;
                }
            }
        }
        let mut next = Vec::new();
        for (k, &(id, g, h)) in level.iter().enumerate() {
            match best[k] {
                Some(c) => {
                    let left = nodes.len();
                    nodes.push(BoostNode::Leaf { value: 0.0 });
                    nodes.push(BoostNode::Leaf { value: 0.0 });
                    nodes[id] = BoostNode::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        left,
                        right: left + 1,
                    };
                    next.push((left, c.gl, c.hl));
                    next.push((left + 1, g - c.gl, h - c.hl));
                }
                None => {
                    nodes[id] = BoostNode::Leaf {
                        value: config.learning_rate * leaf_weight(g, h, alpha, lambda),
                    };
                }
            }
        }
        for (r, node) in row_node.iter_mut().enumerate() {
            if let BoostNode::Split {
                feature,
                threshold,
                left,
                right,
            } = nodes[*node]
            {
                *node = if cols.values[feature][r] <= threshold { left } else { right };
            }
        }
        level = next;
        depth += 1;
    }
    let leaf_values = row_node
        .iter()
        .map(|&id| match nodes[id] {
            BoostNode::Leaf { value } => value,
            BoostNode::Split { .. } => unreachable!("rows end in leaves"),
        })
        .collect();
    (BoostTree { nodes }, leaf_values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AftBoostModel {
    pub config: BoostConfig,
    pub base_score: f64,
    pub trees: Vec<BoostTree>,
    /// Mean training NLL after each round, preceded by the base score's.
    pub nll_trace: Vec<f64>,
}

impl Regressor for AftBoostModel {
    fn predict(&self, x: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

fn mean_nll(preds: &[f64], targets: &[IntervalTarget], spec: &AftLossSpec) -> Result<f64> {
    let mut total = 0.0;
    for (p, t) in preds.iter().zip(targets) {
        total += aft_loss(*p, t, spec)?;
    }
    Ok(total / preds.len() as f64)
}

/// Boost for `config.n_rounds` rounds. `train` holds targets on the original
/// (log) scale.
pub fn train_gbm_aft(train: &Dataset, config: &BoostConfig) -> Result<AftBoostModel> {
    let spec = config.validate()?;
    let n = train.n_rows();
    if n == 0 {
        return Err(Error::Empty("training rows"));
    }
    let exp_targets = transform_targets_exp(train.targets())?;
    let base_score = best_constant(train.targets(), &HingeLossSpec::squared())?;
    let cols = Columns::new(train);
    let mut preds = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut nll_trace = vec![mean_nll(&preds, &exp_targets, &spec)?];
    let mut trees = Vec::with_capacity(config.n_rounds);
    for round in 0..config.n_rounds {
        for i in 0..n {
            let (g, h) = aft_grad_hess(preds[i], &exp_targets[i], &spec)?;
            grad[i] = g;
            hess[i] = h;
        }
        let (tree, leaf_values) = build_tree(&cols, &grad, &hess, config);
        for (p, v) in preds.iter_mut().zip(&leaf_values) {
            *p += v;
        }
        if preds.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged(format!("non-finite score after round {round}")));
        }
        nll_trace.push(mean_nll(&preds, &exp_targets, &spec)?);
        trees.push(tree);
    }
    Ok(AftBoostModel {
        config: *config,
        base_score,
        trees,
        nll_trace,
    })
}

/// Which grid cells cross-validation visits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSearch {
    /// A seeded uniform sample of this many cells, visited in grid order.
    Random(usize),
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AftSearch {
    pub distributions: Vec<AftDistribution>,
    pub search: GridSearch,
    pub n_rounds: usize,
}

impl Default for AftSearch {
    fn default() -> Self {
        Self {
            distributions: AftDistribution::ALL.to_vec(),
            search: GridSearch::Random(DEFAULT_SEARCH_CELLS),
            n_rounds: DEFAULT_ROUNDS,
        }
    }
}

impl AftSearch {
    /// The configurations to evaluate, in grid order.
    pub fn cells(&self, seed: u64) -> Vec<BoostConfig> {
        let mut all: Vec<BoostConfig> = self.distributions.iter().flat_map(|&d| BoostConfig::grid(d)).collect();
        for c in &mut all {
            c.n_rounds = self.n_rounds;
        }
        match self.search {
            GridSearch::Exhaustive => all,
            GridSearch::Random(k) if k >= all.len() => all,
            GridSearch::Random(k) => {
                let mut picks = index::sample(&mut rng(seed), all.len(), k).into_vec();
                picks.sort_unstable();
                picks.into_iter().map(|i| all[i]).collect()
            }
        }
    }
}

/// 5-fold CV on mean squared hinge error of the log-scale predictions,
/// then a refit of the best cell on all of `train`. Cells whose training
/// fails score NaN and are never selected.
pub fn gbm_cv_select(train: &Dataset, search: &AftSearch, seed: u64) -> Result<(AftBoostModel, CvTable)> {
    let cells = search.cells(derive_seed(seed, &[1]));
    if cells.is_empty() {
        return Err(Error::InvalidParameter("empty boosting grid".into()));
    }
    let folds = make_folds(train.n_rows(), CV_FOLDS, derive_seed(seed, &[0]))?;
    let splits: Vec<(Dataset, Dataset)> = folds
        .splits()
        .iter()
        .map(|(fit, test)| (train.subset(fit), train.subset(test)))
        .collect();
    let errors: Vec<f64> = cells
        .par_iter()
        .map(|config| {
            let mut sum = 0.0;
            for (fit, test) in &splits {
                let err = train_gbm_aft(fit, config)
                    .and_then(|m| mean_squared_hinge_error(&m.predict_dataset(test), test.targets()));
                match err {
                    Ok(e) if e.is_finite() => sum += e,
                    _ => return f64::NAN,
                }
            }
            sum / splits.len() as f64
        })
        .collect();
    let table = CvTable {
        labels: cells.iter().map(BoostConfig::label).collect(),
        mean_errors: errors,
    };
    let best = table
        .best()
        .ok_or_else(|| Error::Diverged("every boosting configuration failed".into()))?;
    Ok((train_gbm_aft(train, &cells[best])?, table))
}
