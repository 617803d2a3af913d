//! Fully connected networks trained on the hinge interval loss with
//! full-batch Adam and early stopping.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::CV_FOLDS;
use crate::dataset::{make_folds, Dataset, Standardizer};
use crate::error::{Error, Result};
use crate::interval::IntervalTarget;
use crate::leaf::best_constant;
use crate::loss::{hinge_loss, hinge_subgrad, mean_squared_hinge_error, HingeLossSpec};
use crate::model::{CvTable, Hyperparams, Regressor};
use crate::seed::{derive_seed, rng};

pub const LEARNING_RATE: f64 = 0.001;
pub const MAX_EPOCHS: usize = 1000;
pub const PATIENCE: usize = 50;
pub const VALIDATION_FRACTION: f64 = 0.2;
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    pub const ALL: [Activation; 2] = [Activation::Relu, Activation::Sigmoid];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Relu => "relu",
            Self::Sigmoid => "sigmoid",
        }
    }

    #[inline]
    fn apply(&self, z: f64) -> f64 {
        match self {
            Self::Relu => z.max(0.0),
            Self::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(&self, z: f64, a: f64) -> f64 {
        match self {
            Self::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Sigmoid => a * (1.0 - a),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub activation: Activation,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl MlpConfig {
    pub fn new(num_layers: usize, hidden_size: usize, activation: Activation, seed: u64) -> Self {
        Self {
            num_layers,
            hidden_size,
            activation,
            learning_rate: LEARNING_RATE,
            max_epochs: MAX_EPOCHS,
            patience: PATIENCE,
            seed,
        }
    }

    /// The 2 x 3 x 2 search grid over depth, width and activation.
    pub fn grid(seed: u64) -> Vec<MlpConfig> {
        let mut out = Vec::new();
        for num_layers in [1, 2] {
            for hidden_size in [5, 10, 20] {
                for activation in Activation::ALL {
                    out.push(Self::new(num_layers, hidden_size, activation, seed));
                }
            }
        }
        out
    }

    /// Layer widths from input to output.
    pub fn sizes(&self, n_inputs: usize) -> Vec<usize> {
        let mut sizes = vec![n_inputs];
        sizes.extend(std::iter::repeat_n(self.hidden_size, self.num_layers));
        sizes.push(1);
        sizes
    }

    pub fn n_params(&self, n_inputs: usize) -> usize {
        self.sizes(n_inputs).windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn label(&self) -> String {
        format!(
            "num_layers={},hidden_size={},activation={}",
            self.num_layers,
            self.hidden_size,
            self.activation.name()
        )
    }

    fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_size == 0 {
            return Err(Error::InvalidParameter(format!("network needs hidden units: {}", self.label())));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Network parameters in one flat vector: for each layer, the weight matrix
/// (row-major, `out x in`) followed by the bias vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

impl Network {
    /// Weights and biases drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init(sizes: Vec<usize>, activation: Activation, seed: u64) -> Self {
        let mut r = rng(seed);
        let mut params = Vec::new();
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0].max(1) as f64).sqrt();
            for _ in 0..w[0] * w[1] + w[1] {
                params.push(r.random_range(-bound..bound));
            }
        }
        Self {
            sizes,
            activation,
            params,
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    fn layer_offset(&self, l: usize) -> usize {
        self.sizes[..=l].windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        let mut a = x.to_vec();
        let mut offset = 0;
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let last = l + 1 == self.n_layers();
            a = (0..n_out)
                .map(|o| {
                    let z = dot(&w[o * n_in..(o + 1) * n_in], &a) + b[o];
                    if last {
                        z
                    } else {
                        self.activation.apply(z)
                    }
                })
                .collect();
            offset += n_in * n_out + n_out;
        }
        a[0]
    }

    pub fn mean_loss(&self, xs: &[&[f64]], targets: &[IntervalTarget], loss: &HingeLossSpec) -> f64 {
        xs.iter()
            .zip(targets)
            .map(|(x, t)| hinge_loss(self.forward(x), t, loss))
            .sum::<f64>()
            / xs.len() as f64
    }

    /// Mean hinge loss over the batch and its gradient with respect to
    /// [`Network::params`].
    pub fn loss_grad(&self, xs: &[&[f64]], targets: &[IntervalTarget], loss: &HingeLossSpec) -> (f64, Vec<f64>) {
        let n_layers = self.n_layers();
        let offsets: Vec<usize> = (0..n_layers).map(|l| self.layer_offset(l)).collect();
        let mut grad = vec![0.0; self.params.len()];
        let mut total = 0.0;
        let inv_n = 1.0 / xs.len() as f64;
        // pre-activations and activations per layer; acts[0] is the input
        let mut zs: Vec<Vec<f64>> = self.sizes[1..].iter().map(|&s| vec![0.0; s]).collect();
        let mut acts: Vec<Vec<f64>> = self.sizes.iter().map(|&s| vec![0.0; s]).collect();
        let mut deltas: Vec<Vec<f64>> = self.sizes[1..].iter().map(|&s| vec![0.0; s]).collect();

        for (x, t) in xs.iter().zip(targets) {
            acts[0].copy_from_slice(x);
            for l in 0..n_layers {
                let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
                let off = offsets[l];
                let last = l + 1 == n_layers;
                for o in 0..n_out {
                    let w = &self.params[off + o * n_in..off + (o + 1) * n_in];
                    let z = dot(w, &acts[l]) + self.params[off + n_in * n_out + o];
                    zs[l][o] = z;
                    acts[l + 1][o] = if last { z } else { self.activation.apply(z) };
                }
            }
            let out = acts[n_layers][0];
            total += hinge_loss(out, t, loss);
            let d = hinge_subgrad(out, t, loss) * inv_n;
            if d == 0.0 {
                continue;
            }
            deltas[n_layers - 1][0] = d;
            for l in (0..n_layers).rev() {
                let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
                let off = offsets[l];
                for o in 0..n_out {
                    let delta = deltas[l][o];
                    if delta == 0.0 {
                        continue;
                    }
                    let gw = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                    for (g, a) in gw.iter_mut().zip(&acts[l]) {
                        *g += delta * a;
                    }
                    grad[off + n_in * n_out + o] += delta;
                }
                if l > 0 {
                    let (below, current) = deltas.split_at_mut(l);
                    let prev = &mut below[l - 1];
                    for i in 0..n_in {
                        let back: f64 = (0..n_out)
                            .map(|o| self.params[off + o * n_in + i] * current[0][o])
                            .sum();
                        prev[i] = back * self.activation.derivative(zs[l - 1][i], acts[l][i]);
                    }
                }
            }
        }
        (total * inv_n, grad)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        }
    }
}

/// Affine map between the original target scale and the one the network
/// is trained on: `y = center + scale * output`.
///
/// The hinge loss is homogeneous (`loss(c + s*a, c + s*t, s*eps) = s^p *
/// loss(a, t, eps)`), so training on rescaled targets has the same
/// minimizers while keeping outputs of order one for the fixed step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScale {
    pub center: f64,
    pub scale: f64,
}

impl TargetScale {
    pub const IDENTITY: TargetScale = TargetScale {
        center: 0.0,
        scale: 1.0,
    };

    /// Center at the best constant; scale by the RMS distance of the finite
    /// bounds from it.
    pub fn fit(targets: &[IntervalTarget], loss: &HingeLossSpec) -> Result<Self> {
        let center = best_constant(targets, loss)?;
        let (mut sq, mut count) = (0.0, 0usize);
        for t in targets {
            for b in [t.lower(), t.upper()] {
                if b.is_finite() {
                    sq += (b - center) * (b - center);
                    count += 1;
                }
            }
        }
        let scale = if count > 0 { (sq / count as f64).sqrt() } else { 0.0 };
        let scale = if scale > 0.0 && scale.is_finite() { scale } else { 1.0 };
        Ok(Self { center, scale })
    }

    pub fn to_network(&self, t: &IntervalTarget) -> Result<IntervalTarget> {
        IntervalTarget::new((t.lower() - self.center) / self.scale, (t.upper() - self.center) / self.scale)
    }

    pub fn loss_to_network(&self, loss: &HingeLossSpec) -> Result<HingeLossSpec> {
        HingeLossSpec::new(loss.p(), loss.epsilon() / self.scale)
    }

    #[inline]
    pub fn from_network(&self, output: f64) -> f64 {
        self.center + self.scale * output
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub network: Network,
    pub stats: Standardizer,
    pub target_scale: TargetScale,
    pub config: MlpConfig,
    /// Epoch of the returned snapshot (0 = initialization).
    pub best_epoch: usize,
    pub epochs_run: usize,
}

impl Regressor for MlpModel {
    fn predict(&self, x: &[f64]) -> f64 {
        self.target_scale
            .from_network(self.network.forward(&self.stats.transform_row(x)))
    }
}

/// Train on standardized features and rescaled targets, keeping the snapshot with the lowest
/// validation loss among those whose training loss does not exceed the
/// initial one.
pub fn train_mlp(train: &Dataset, config: &MlpConfig, loss: HingeLossSpec) -> Result<MlpModel> {
    config.validate()?;
    let n = train.n_rows();
    if n == 0 {
        return Err(Error::Empty("training rows"));
    }
    let stats = Standardizer::fit(train);
    let rows: Vec<Vec<f64>> = (0..n).map(|i| stats.transform_row(train.row(i))).collect();
    let target_scale = TargetScale::fit(train.targets(), &loss)?;
    let targets = train
        .targets()
        .iter()
        .map(|t| target_scale.to_network(t))
        .collect::<Result<Vec<_>>>()?;
    let loss = target_scale.loss_to_network(&loss)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng(derive_seed(config.seed, &[0])));
    let n_val = if n >= 5 {
        (n as f64 * VALIDATION_FRACTION).floor() as usize
    } else {
        0
    };
    let (val_idx, fit_idx) = order.split_at(n_val);
    let fit_x: Vec<&[f64]> = fit_idx.iter().map(|&i| rows[i].as_slice()).collect();
    let fit_t: Vec<IntervalTarget> = fit_idx.iter().map(|&i| targets[i]).collect();
    let val_x: Vec<&[f64]> = val_idx.iter().map(|&i| rows[i].as_slice()).collect();
    let val_t: Vec<IntervalTarget> = val_idx.iter().map(|&i| targets[i]).collect();

    let mut network = Network::init(config.sizes(train.n_cols()), config.activation, derive_seed(config.seed, &[1]));
    let mut adam = Adam::new(network.params.len(), config.learning_rate);
    let mut best = network.clone();
    let mut best_monitor = f64::INFINITY;
    let mut best_epoch = 0;
    let mut initial_fit_loss = f64::INFINITY;
    let mut epoch = 0;
    loop {
        let (fit_loss, grad) = network.loss_grad(&fit_x, &fit_t, &loss);
        if !fit_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged(format!(
                "training loss became {fit_loss} at epoch {epoch} ({})",
                config.label()
            )));
        }
        if epoch == 0 {
            initial_fit_loss = fit_loss;
        }
        let monitor = if val_x.is_empty() {
            fit_loss
        } else {
            network.mean_loss(&val_x, &val_t, &loss)
        };
        if monitor < best_monitor && fit_loss <= initial_fit_loss {
            best_monitor = monitor;
            best = network.clone();
            best_epoch = epoch;
        }
        if epoch >= config.max_epochs || epoch - best_epoch > config.patience {
            break;
        }
        adam.step(&mut network.params, &grad);
        epoch += 1;
    }
    Ok(MlpModel {
        network: best,
        stats,
        target_scale,
        config: *config,
        best_epoch,
        epochs_run: epoch,
    })
}

/// 5-fold CV over `grid` (each config's seed is replaced by a derived one),
/// refitting the config with the lowest mean error; exact ties go to the
/// config with fewer parameters.
pub fn mlp_cv_select(
    train: &Dataset,
    grid: &[MlpConfig],
    loss: HingeLossSpec,
    seed: u64,
) -> Result<(MlpModel, CvTable)> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty network grid".into()));
    }
    let folds = make_folds(train.n_rows(), CV_FOLDS, derive_seed(seed, &[0]))?;
    let splits = folds.splits();
    let errors: Vec<f64> = grid
        .par_iter()
        .enumerate()
        .map(|(c, config)| -> Result<f64> {
            let mut sum = 0.0;
            for (f, (fit_rows, test_rows)) in splits.iter().enumerate() {
                let fit = train.subset(fit_rows);
                let test = train.subset(test_rows);
                let cfg = MlpConfig {
                    seed: derive_seed(seed, &[1, c as u64, f as u64]),
                    ..*config
                };
                let model = train_mlp(&fit, &cfg, loss)?;
                sum += mean_squared_hinge_error(&model.predict_dataset(&test), test.targets())?;
            }
            Ok(sum / splits.len() as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    let m = train.n_cols();
    let best = (0..grid.len())
        .filter(|&c| !errors[c].is_nan())
        .min_by(|&a, &b| {
            errors[a]
                .total_cmp(&errors[b])
                .then(grid[a].n_params(m).cmp(&grid[b].n_params(m)))
                .then(a.cmp(&b))
        })
        .ok_or_else(|| Error::Diverged("every network configuration produced NaN error".into()))?;
    let table = CvTable {
        labels: grid.iter().map(MlpConfig::label).collect(),
        mean_errors: errors,
    };
    let final_config = MlpConfig {
        seed: derive_seed(seed, &[2]),
        ..grid[best]
    };
    Ok((train_mlp(train, &final_config, loss)?, table))
}

pub fn mlp_hyperparams(config: &MlpConfig) -> Hyperparams {
    let mut h = Hyperparams::new();
    h.insert("num_layers".into(), config.num_layers.to_string());
    h.insert("hidden_size".into(), config.hidden_size.to_string());
    h.insert("activation".into(), config.activation.name().into());
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(l: f64, u: f64) -> IntervalTarget {
        IntervalTarget::new(l, u).unwrap()
    }

    #[test]
    fn grid_has_twelve_configs() {
        let grid = MlpConfig::grid(0);
        assert_eq!(grid.len(), 12);
        assert_eq!(grid[0].n_params(3), 3 * 5 + 5 + 5 + 1);
        assert_eq!(grid[11].sizes(3), vec![3, 20, 20, 1]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let spec = HingeLossSpec::squared();
        let xs = [[0.3, -1.2], [1.5, 0.2], [-0.7, 0.9], [0.1, 0.1], [2.0, -0.4]];
        let targets = [t(5.0, 6.0), t(f64::NEG_INFINITY, -3.0), t(-1.0, -0.5), t(4.0, f64::INFINITY), t(2.0, 2.0)];
        let x: Vec<&[f64]> = xs.iter().map(|r| r.as_slice()).collect();
        for layers in [1, 2] {
            for act in Activation::ALL {
                let mut net = Network::init(MlpConfig::new(layers, 4, act, 0).sizes(2), act, 17);
                let (_, grad) = net.loss_grad(&x, &targets, &spec);
                for k in 0..net.params.len() {
                    let h = 1e-6;
                    let orig = net.params[k];
                    net.params[k] = orig + h;
                    let up = net.mean_loss(&x, &targets, &spec);
                    net.params[k] = orig - h;
                    let down = net.mean_loss(&x, &targets, &spec);
                    net.params[k] = orig;
                    let fd = (up - down) / (2.0 * h);
                    assert!(
                        (fd - grad[k]).abs() <= 1e-4 * fd.abs().max(grad[k].abs()).max(1e-2),
                        "param {k}: fd {fd} vs {}",
                        grad[k]
                    );
                }
            }
        }
    }

    #[test]
    fn vacuous_targets_give_zero_gradient() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let data = Dataset::from_rows("vac", &rows, vec![t(f64::NEG_INFINITY, f64::INFINITY); 10]).unwrap();
        let mut config = MlpConfig::new(1, 5, Activation::Relu, 4);
        config.max_epochs = 1;
        let model = train_mlp(&data, &config, HingeLossSpec::squared()).unwrap();
        let init = Network::init(config.sizes(2), config.activation, derive_seed(4, &[1]));
        assert_eq!(model.network, init);
    }

    #[test]
    fn fits_a_linear_band() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![-2.0 + i as f64 * 0.1]).collect();
        let targets = rows.iter().map(|r| t(r[0] - 0.1, r[0] + 0.1)).collect();
        let data = Dataset::from_rows("band", &rows, targets).unwrap();
        let mut config = MlpConfig::new(1, 10, Activation::Relu, 1);
        config.max_epochs = 2000;
        config.patience = 2000;
        let loss = HingeLossSpec::squared();
        let model = train_mlp(&data, &config, loss).unwrap();
        let preds = model.predict_dataset(&data);
        let train_loss = crate::loss::mean_hinge_loss(&preds, data.targets(), &loss).unwrap();
        assert!(train_loss < 1e-3, "loss {train_loss}");
    }

    #[test]
    fn nan_inputs_diverge() {
        let rows = vec![vec![1.0], vec![2.0]];
        let data = Dataset::from_rows("nan", &rows, vec![t(0.0, 1.0), t(f64::MAX / 2.0, f64::MAX)]).unwrap();
        let config = MlpConfig::new(1, 3, Activation::Relu, 0);
        assert!(matches!(
            train_mlp(&data, &config, HingeLossSpec::squared()),
            Err(Error::Diverged(_))
        ));
    }
}
