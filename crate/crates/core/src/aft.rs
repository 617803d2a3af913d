//! Accelerated failure time negative log-likelihood for interval targets.
//!
//! Targets here live on the positive (exponentiated) scale while predictions
//! live on the log scale. A lower bound of `0` or `-inf` means "no lower
//! bound" and an upper bound of `+inf` means "no upper bound".

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::IntervalTarget;

/// Likelihood values are clamped below at this before taking the log.
pub const LIKELIHOOD_FLOOR: f64 = 1e-15;
/// Hessians are clamped below at this for Newton stability.
pub const HESSIAN_FLOOR: f64 = 1e-6;

/// Error distribution of the log survival time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AftDistribution {
    Normal,
    Logistic,
    Extreme,
}

impl AftDistribution {
    pub const ALL: [AftDistribution; 3] = [Self::Normal, Self::Logistic, Self::Extreme];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Normal => "normal",
            Self::Logistic => "logistic",
            Self::Extreme => "extreme",
        }
    }

    pub fn pdf(&self, z: f64) -> f64 {
        if z.is_infinite() {
            return 0.0;
        }
        match self {
            Self::Normal => (-0.5 * z * z).exp() / (2.0 * PI).sqrt(),
            Self::Logistic => {
                let e = (-z.abs()).exp();
                e / ((1.0 + e) * (1.0 + e))
            }
            Self::Extreme => (z - z.exp()).exp(),
        }
    }

    pub fn cdf(&self, z: f64) -> f64 {
        match self {
            Self::Normal => 0.5 * libm::erfc(-z / SQRT_2),
            Self::Logistic => logistic(z),
            Self::Extreme => -(-z.exp()).exp_m1(),
        }
    }

    /// Survival function `1 - cdf(z)`, computed without cancellation.
    pub fn sf(&self, z: f64) -> f64 {
        match self {
            Self::Normal => 0.5 * libm::erfc(z / SQRT_2),
            Self::Logistic => logistic(-z),
            Self::Extreme => (-z.exp()).exp(),
        }
    }

    /// Derivative of the density.
    fn dpdf(&self, z: f64) -> f64 {
        if z.is_infinite() {
            return 0.0;
        }
        let f = self.pdf(z);
        match self {
            Self::Normal => -z * f,
            Self::Logistic => f * (1.0 - 2.0 * logistic(z)),
            Self::Extreme => f * (1.0 - z.exp()),
        }
    }

    /// `f'(z)/f(z)` and `f''(z)/f(z)` in closed form, valid in the tails.
    fn density_ratios(&self, z: f64) -> (f64, f64) {
        match self {
            Self::Normal => (-z, z * z - 1.0),
            Self::Logistic => {
                let s = 1.0 - 2.0 * logistic(z);
                (s, s * s - 2.0 * self.pdf(z))
            }
            Self::Extreme => {
                let w = z.exp();
                (1.0 - w, (1.0 - w) * (1.0 - w) - w)
            }
        }
    }

    /// Limit of `f(z)/cdf(z)` as `z -> -inf` (prediction far above an upper bound).
    fn lower_tail_ratio(&self, z: f64) -> f64 {
        match self {
            Self::Normal => -z,
            Self::Logistic | Self::Extreme => 1.0,
        }
    }

    /// Limit of `f(z)/sf(z)` as `z -> +inf` (prediction far below a lower bound).
    fn upper_tail_ratio(&self, z: f64) -> f64 {
        match self {
            Self::Normal => z,
            Self::Logistic => 1.0,
            Self::Extreme => z.exp(),
        }
    }
}

impl std::str::FromStr for AftDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Self::Normal),
            "logistic" => Ok(Self::Logistic),
            "extreme" => Ok(Self::Extreme),
            other => Err(Error::InvalidParameter(format!("unknown AFT distribution `{other}`"))),
        }
    }
}

#[inline]
fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AftLossSpec {
    distribution: AftDistribution,
    sigma: f64,
}

impl AftLossSpec {
    pub fn new(distribution: AftDistribution, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("AFT scale must be positive, got {sigma}")));
        }
        Ok(Self { distribution, sigma })
    }

    pub fn distribution(&self) -> AftDistribution {
        self.distribution
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Standardized log-bounds of a positive-scale target.
enum Standardized {
    /// `y_l = y_u`: the standardized log value and `y_u` itself.
    Exact { z: f64, y: f64 },
    /// `z_l < z_u`, either possibly infinite.
    Censored { z_lower: f64, z_upper: f64 },
}

fn standardize(y_hat: f64, target: &IntervalTarget, spec: &AftLossSpec) -> Result<Standardized> {
    let (lo, hi) = (target.lower(), target.upper());
    let bad = |reason| Err(Error::InvalidTarget { lower: lo, upper: hi, reason });
    if lo.is_finite() && lo < 0.0 {
        return bad("AFT targets must be nonnegative");
    }
    if !(hi > 0.0) {
        return bad("AFT upper bound must be positive");
    }
    if !y_hat.is_finite() {
        return Err(Error::InvalidParameter(format!("prediction must be finite, got {y_hat}")));
    }
    let sigma = spec.sigma;
    if lo == hi {
        return Ok(Standardized::Exact {
            z: (hi.ln() - y_hat) / sigma,
            y: hi,
        });
    }
    let z_lower = if lo > 0.0 { (lo.ln() - y_hat) / sigma } else { f64::NEG_INFINITY };
    let z_upper = if hi.is_finite() { (hi.ln() - y_hat) / sigma } else { f64::INFINITY };
    Ok(Standardized::Censored { z_lower, z_upper })
}

/// Probability mass `F(z_u) - F(z_l)`, using survival functions on the
/// right half to avoid cancellation.
fn interval_mass(dist: AftDistribution, z_lower: f64, z_upper: f64) -> f64 {
    if z_lower > 0.0 {
        dist.sf(z_lower) - dist.sf(z_upper)
    } else {
        dist.cdf(z_upper) - dist.cdf(z_lower)
    }
}

/// Negative log-likelihood of a log-scale prediction `y_hat` for a
/// positive-scale interval target.
pub fn aft_loss(y_hat: f64, target: &IntervalTarget, spec: &AftLossSpec) -> Result<f64> {
    let dist = spec.distribution;
    let likelihood = match standardize(y_hat, target, spec)? {
        Standardized::Exact { z, y } => dist.pdf(z) / (spec.sigma * y),
        Standardized::Censored { z_lower, z_upper } => interval_mass(dist, z_lower, z_upper),
    };
    Ok(-likelihood.max(LIKELIHOOD_FLOOR).ln())
}

/// First and second derivatives of [`aft_loss`] with respect to `y_hat`.
/// The second derivative is clamped below at [`HESSIAN_FLOOR`].
pub fn aft_grad_hess(y_hat: f64, target: &IntervalTarget, spec: &AftLossSpec) -> Result<(f64, f64)> {
    let dist = spec.distribution;
    let sigma = spec.sigma;
    let (grad, hess) = match standardize(y_hat, target, spec)? {
        Standardized::Exact { z, .. } => {
            let (r1, r2) = dist.density_ratios(z);
            (r1 / sigma, (r1 * r1 - r2) / (sigma * sigma))
        }
        Standardized::Censored { z_lower, z_upper } => {
            let mass = interval_mass(dist, z_lower, z_upper);
            let num = dist.pdf(z_upper) - dist.pdf(z_lower);
            let dnum = dist.dpdf(z_upper) - dist.dpdf(z_lower);
            let grad = num / (sigma * mass);
            let hess = (num * num - mass * dnum) / (sigma * sigma * mass * mass);
            if mass > 1e-300 && grad.is_finite() && hess.is_finite() {
                (grad, hess)
            } else if z_upper < 0.0 {
                // Far above the upper bound.
                (dist.lower_tail_ratio(z_upper) / sigma, 1.0 / (sigma * sigma))
            } else {
                // Far below the lower bound.
                (-dist.upper_tail_ratio(z_lower) / sigma, 1.0 / (sigma * sigma))
            }
        }
    };
    Ok((grad, hess.max(HESSIAN_FLOOR)))
}
