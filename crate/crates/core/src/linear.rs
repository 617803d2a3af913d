//! L1-regularized linear interval regression trained with FISTA.
//!
//! The objective is `(1/n) sum hinge(x_i . beta + beta0) + lambda ||beta||_1`
//! with an unpenalized intercept. Steps use a backtracking estimate of the
//! gradient's Lipschitz constant and momentum is reset whenever an
//! accelerated step would increase the objective, so accepted iterates
//! never go uphill.

use serde::{Deserialize, Serialize};

use crate::baselines::CV_FOLDS;
use crate::dataset::{make_folds, Dataset, Standardizer};
use crate::error::{Error, Result};
use crate::interval::IntervalTarget;
use crate::leaf::best_constant;
use crate::loss::{hinge_loss, hinge_subgrad, mean_squared_hinge_error, HingeLossSpec};
use crate::model::Regressor;

pub const LAMBDA_START: f64 = 0.001;
pub const LAMBDA_FACTOR: f64 = 1.2;
pub const MAX_PATH_STEPS: usize = 400;
pub const MAX_ITERATIONS: usize = 10_000;
pub const RELATIVE_TOLERANCE: f64 = 1e-8;

const MAX_LIPSCHITZ: f64 = 1e20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub beta: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    /// Standardization applied to raw inputs before the linear map, if any.
    pub stats: Option<Standardizer>,
}

impl LinearModel {
    pub fn zeros(n_features: usize, intercept: f64) -> Self {
        Self {
            beta: vec![0.0; n_features],
            intercept,
            lambda: 0.0,
            stats: None,
        }
    }

    /// `z . beta + beta0` for inputs already in the model's feature space.
    pub fn predict_standardized(&self, z: &[f64]) -> f64 {
        z.iter().zip(&self.beta).map(|(a, b)| a * b).sum::<f64>() + self.intercept
    }

    pub fn n_nonzero(&self) -> usize {
        self.beta.iter().filter(|b| **b != 0.0).count()
    }

    /// Coefficients and intercept acting on raw (unstandardized) inputs.
    pub fn raw_coefficients(&self) -> (Vec<f64>, f64) {
        match &self.stats {
            None => (self.beta.clone(), self.intercept),
            Some(s) => {
                let mut intercept = self.intercept;
                let beta = self
                    .beta
                    .iter()
                    .enumerate()
                    .map(|(j, b)| {
                        if s.stds[j] > 0.0 {
                            intercept -= b * s.means[j] / s.stds[j];
                            b / s.stds[j]
                        } else {
                            0.0
                        }
                    })
                    .collect();
                (beta, intercept)
            }
        }
    }
}

impl Regressor for LinearModel {
    fn predict(&self, x: &[f64]) -> f64 {
        match &self.stats {
            None => self.predict_standardized(x),
            Some(s) => {
                let mut acc = self.intercept;
                for (j, (&v, &b)) in x.iter().zip(&self.beta).enumerate() {
                    if b != 0.0 {
                        acc += b * s.transform_value(j, v);
                    }
                }
                acc
            }
        }
    }
}

/// Outcome of one FISTA solve.
#[derive(Debug, Clone)]
pub struct LinearFit {
    pub model: LinearModel,
    pub objective: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit first.
    pub converged: bool,
    /// Objective at the starting point followed by every accepted iterate.
    pub objective_trace: Vec<f64>,
}

/// Dense design matrix with its targets; the smooth part of the objective.
struct Problem<'a> {
    x: Vec<f64>,
    n: usize,
    m: usize,
    targets: &'a [IntervalTarget],
    loss: HingeLossSpec,
}

impl<'a> Problem<'a> {
    fn new(data: &'a Dataset, loss: HingeLossSpec) -> Self {
        let mut x = Vec::with_capacity(data.n_rows() * data.n_cols());
        for i in 0..data.n_rows() {
            x.extend_from_slice(data.row(i));
        }
        Self {
            x,
            n: data.n_rows(),
            m: data.n_cols(),
            targets: data.targets(),
            loss,
        }
    }

    fn prediction(&self, i: usize, beta: &[f64], b0: f64) -> f64 {
        self.x[i * self.m..(i + 1) * self.m]
            .iter()
            .zip(beta)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            + b0
    }

    fn value(&self, beta: &[f64], b0: f64) -> f64 {
        (0..self.n)
            .map(|i| hinge_loss(self.prediction(i, beta, b0), &self.targets[i], &self.loss))
            .sum::<f64>()
            / self.n as f64
    }

    /// Smooth loss value and gradient with respect to `(beta, b0)`.
    fn value_grad(&self, beta: &[f64], b0: f64, grad: &mut [f64], grad0: &mut f64) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        *grad0 = 0.0;
        let mut total = 0.0;
        let inv_n = 1.0 / self.n as f64;
        for i in 0..self.n {
            let y = self.prediction(i, beta, b0);
            let t = &self.targets[i];
            total += hinge_loss(y, t, &self.loss);
            let d = hinge_subgrad(y, t, &self.loss) * inv_n;
            if d != 0.0 {
                for (g, a) in grad.iter_mut().zip(&self.x[i * self.m..(i + 1) * self.m]) {
                    *g += d * a;
                }
                *grad0 += d;
            }
        }
        total * inv_n
    }
}

#[inline]
pub fn soft_threshold(z: f64, threshold: f64) -> f64 {
    if z > threshold {
        z - threshold
    } else if z < -threshold {
        z + threshold
    } else {
        0.0
    }
}

fn l1(beta: &[f64]) -> f64 {
    beta.iter().map(|b| b.abs()).sum()
}

/// Minimize the L1-penalized mean hinge loss at a fixed `lambda`, starting
/// from `init` (or `beta = 0` and the best constant intercept).
pub fn fit_linear_at_lambda(
    train: &Dataset,
    lambda: f64,
    loss: HingeLossSpec,
    init: Option<&LinearModel>,
) -> Result<LinearFit> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let prob = Problem::new(train, loss);
    let m = prob.m;
    let (mut beta, mut b0) = match init {
        Some(model) => {
            if model.beta.len() != m {
                return Err(Error::LengthMismatch {
                    left: model.beta.len(),
                    right: m,
                });
            }
            (model.beta.clone(), model.intercept)
        }
        None => (vec![0.0; m], best_constant(prob.targets, &loss)?),
    };

    let objective = |beta: &[f64], smooth: f64| smooth + lambda * l1(beta);
    let mut f_x = objective(&beta, prob.value(&beta, b0));
    let mut trace = vec![f_x];

    let mut y_beta = beta.clone();
    let mut y_b0 = b0;
    let mut prev_beta = beta.clone();
    let mut t = 1.0f64;
    let mut lip = 1.0f64;
    let mut grad = vec![0.0; m];
    let mut grad0 = 0.0;
    let mut z_beta = vec![0.0; m];
    let mut converged = false;
    let mut just_restarted = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let f_y = prob.value_grad(&y_beta, y_b0, &mut grad, &mut grad0);
        let z_b0 = loop {
            for j in 0..m {
                z_beta[j] = soft_threshold(y_beta[j] - grad[j] / lip, lambda / lip);
            }
            let z_b0 = y_b0 - grad0 / lip;
            let mut linear = grad0 * (z_b0 - y_b0);
            let mut dist2 = (z_b0 - y_b0) * (z_b0 - y_b0);
            for j in 0..m {
                let d = z_beta[j] - y_beta[j];
                linear += grad[j] * d;
                dist2 += d * d;
            }
            let f_z = prob.value(&z_beta, z_b0);
            let bound = f_y + linear + 0.5 * lip * dist2;
            if f_z <= bound + 1e-12 * bound.abs().max(1.0) || lip >= MAX_LIPSCHITZ {
                break z_b0;
            }
            lip *= 2.0;
        };
        let f_z = objective(&z_beta, prob.value(&z_beta, z_b0));

        if f_z <= f_x {
            let change = f_x - f_z;
            prev_beta.copy_from_slice(&beta);
            let prev_b0 = b0;
            beta.copy_from_slice(&z_beta);
            b0 = z_b0;
            trace.push(f_z);
            let scale = f_x.abs().max(f64::MIN_POSITIVE);
            f_x = f_z;
            if change <= RELATIVE_TOLERANCE * scale {
                converged = true;
                break;
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let momentum = (t - 1.0) / t_next;
            for j in 0..m {
                y_beta[j] = beta[j] + momentum * (beta[j] - prev_beta[j]);
            }
            y_b0 = b0 + momentum * (b0 - prev_b0);
            t = t_next;
            just_restarted = false;
        } else {
            if just_restarted {
                // a plain proximal step from the current iterate failed to
                // descend: nothing left to gain at this precision
                converged = true;
                break;
            }
            t = 1.0;
            y_beta.copy_from_slice(&beta);
            y_b0 = b0;
            just_restarted = true;
        }
    }

    Ok(LinearFit {
        model: LinearModel {
            beta,
            intercept: b0,
            lambda,
            stats: None,
        },
        objective: f_x,
        iterations,
        converged,
        objective_trace: trace,
    })
}

/// Cross-validation record of the regularization path.
#[derive(Debug, Clone)]
pub struct LinearPathReport {
    pub lambdas: Vec<f64>,
    pub cv_errors: Vec<f64>,
    pub selected: usize,
    pub nonzero_counts: Vec<usize>,
}

/// Fit along `lambda = 0.001 * 1.2^j` with warm starts until every
/// coefficient is zero (on the full training set and on every CV fold),
/// pick the lambda with the lowest 5-fold mean squared hinge error (ties to
/// the larger lambda) and return the full-data fit at that lambda.
pub fn fit_linear_path_cv(train: &Dataset, loss: HingeLossSpec, seed: u64) -> Result<(LinearModel, LinearPathReport)> {
    if train.n_rows() < CV_FOLDS {
        return Err(Error::InvalidParameter(format!(
            "linear path CV needs at least {CV_FOLDS} rows, got {}",
            train.n_rows()
        )));
    }
    let stats = Standardizer::fit(train);
    let full = stats.transform(train);
    let folds = make_folds(train.n_rows(), CV_FOLDS, seed)?;
    let fold_data: Vec<(Dataset, Dataset)> = folds
        .splits()
        .into_iter()
        .map(|(tr, te)| {
            let tr = train.subset(&tr);
            let te = train.subset(&te);
            let s = Standardizer::fit(&tr);
            (s.transform(&tr), s.transform(&te))
        })
        .collect();

    let mut full_models: Vec<LinearModel> = Vec::new();
    let mut fold_models: Vec<Option<LinearModel>> = vec![None; fold_data.len()];
    let mut lambdas = Vec::new();
    let mut cv_errors = Vec::new();
    let mut nonzero_counts = Vec::new();
    let mut lambda = LAMBDA_START;

    for _ in 0..MAX_PATH_STEPS {
        let fit = fit_linear_at_lambda(&full, lambda, loss, full_models.last())?;
        let mut all_zero = fit.model.n_nonzero() == 0;
        let mut err_sum = 0.0;
        for ((tr, te), warm) in fold_data.iter().zip(fold_models.iter_mut()) {
            let f = fit_linear_at_lambda(tr, lambda, loss, warm.as_ref())?;
            let preds: Vec<f64> = (0..te.n_rows()).map(|i| f.model.predict_standardized(te.row(i))).collect();
            err_sum += mean_squared_hinge_error(&preds, te.targets())?;
            all_zero &= f.model.n_nonzero() == 0;
            *warm = Some(f.model);
        }
        lambdas.push(lambda);
        cv_errors.push(err_sum / fold_data.len() as f64);
        nonzero_counts.push(fit.model.n_nonzero());
        full_models.push(fit.model);
        if all_zero {
            break;
        }
        lambda *= LAMBDA_FACTOR;
    }
    if full_models.last().map_or(true, |m| m.n_nonzero() != 0) {
        return Err(Error::Diverged(format!(
            "regularization path did not reach an all-zero model within {MAX_PATH_STEPS} steps"
        )));
    }

    let mut selected = 0;
    for (j, &e) in cv_errors.iter().enumerate() {
        if e <= cv_errors[selected] {
            selected = j;
        }
    }
    let mut model = full_models.swap_remove(selected);
    model.stats = Some(stats);
    Ok((
        model,
        LinearPathReport {
            lambdas,
            cv_errors,
            selected,
            nonzero_counts,
        },
    ))
}
