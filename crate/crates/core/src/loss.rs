//! Hinge interval loss and the squared hinge evaluation metric.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::IntervalTarget;

/// Parameters of the hinge interval loss: exponent `p` and margin `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HingeLossSpec {
    p: u8,
    epsilon: f64,
}

impl HingeLossSpec {
    pub fn new(p: u8, epsilon: f64) -> Result<Self> {
        if p != 1 && p != 2 {
            return Err(Error::InvalidParameter(format!("hinge exponent must be 1 or 2, got {p}")));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("hinge margin must be finite and >= 0, got {epsilon}")));
        }
        Ok(Self { p, epsilon })
    }

    /// Squared hinge with no margin; the loss used for evaluation and, by
    /// default, for training.
    pub const fn squared() -> Self {
        Self { p: 2, epsilon: 0.0 }
    }

    /// Absolute hinge with no margin.
    pub const fn absolute() -> Self {
        Self { p: 1, epsilon: 0.0 }
    }

    pub fn p(&self) -> u8 {
        self.p
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `r^p` for a nonnegative violation `r`.
    #[inline]
    pub(crate) fn power(&self, r: f64) -> f64 {
        if self.p == 1 {
            r
        } else {
            r * r
        }
    }
}

impl Default for HingeLossSpec {
    fn default() -> Self {
        Self::squared()
    }
}

/// Violation of the lower bound, `y_l - y_hat + eps`; `None` when the bound
/// is `-inf`.
#[inline]
fn lower_violation(y_hat: f64, target: &IntervalTarget, eps: f64) -> Option<f64> {
    target.has_finite_lower().then(|| target.lower() - y_hat + eps)
}

#[inline]
fn upper_violation(y_hat: f64, target: &IntervalTarget, eps: f64) -> Option<f64> {
    target.has_finite_upper().then(|| y_hat - target.upper() + eps)
}

/// `ReLU(y_l - y_hat + eps)^p + ReLU(y_hat - y_u + eps)^p`; a term against an
/// infinite bound is exactly zero.
#[inline]
pub fn hinge_loss(y_hat: f64, target: &IntervalTarget, spec: &HingeLossSpec) -> f64 {
    let eps = spec.epsilon;
    let mut loss = 0.0;
    if let Some(r) = lower_violation(y_hat, target, eps) {
        if r > 0.0 {
            loss += spec.power(r);
        }
    }
    if let Some(r) = upper_violation(y_hat, target, eps) {
        if r > 0.0 {
            loss += spec.power(r);
        }
    }
    loss
}

/// Derivative of [`hinge_loss`] with respect to `y_hat`. Zero at kinks.
#[inline]
pub fn hinge_subgrad(y_hat: f64, target: &IntervalTarget, spec: &HingeLossSpec) -> f64 {
    let eps = spec.epsilon;
    let mut g = 0.0;
    if let Some(r) = lower_violation(y_hat, target, eps) {
        if r > 0.0 {
            g -= if spec.p == 1 { 1.0 } else { 2.0 * r };
        }
    }
    if let Some(r) = upper_violation(y_hat, target, eps) {
        if r > 0.0 {
            g += if spec.p == 1 { 1.0 } else { 2.0 * r };
        }
    }
    g
}

/// Mean hinge loss of `predictions` against `targets` under `spec`.
pub fn mean_hinge_loss(predictions: &[f64], targets: &[IntervalTarget], spec: &HingeLossSpec) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: targets.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    let total: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(&y, t)| hinge_loss(y, t, spec))
        .sum();
    Ok(total / predictions.len() as f64)
}

/// Mean squared hinge error: the mean hinge loss with `p = 2`, `eps = 0`.
/// This is the evaluation metric for every model.
pub fn mean_squared_hinge_error(predictions: &[f64], targets: &[IntervalTarget]) -> Result<f64> {
    mean_hinge_loss(predictions, targets, &HingeLossSpec::squared())
}

#[cfg(test)]
mod tests {
    use super::*;

    const INF: f64 = f64::INFINITY;

    fn t(l: f64, u: f64) -> IntervalTarget {
        IntervalTarget::new(l, u).unwrap()
    }

    #[test]
    fn hinge_examples() {
        let sq = HingeLossSpec::squared();
        assert_eq!(hinge_loss(5.0, &t(3.0, 7.0), &sq), 0.0);
        assert_eq!(hinge_loss(2.0, &t(3.0, 7.0), &sq), 1.0);
        let abs1 = HingeLossSpec::new(1, 1.0).unwrap();
        assert_eq!(hinge_loss(2.0, &t(3.0, INF), &abs1), 2.0);
        let sq_half = HingeLossSpec::new(2, 0.5).unwrap();
        assert_eq!(hinge_loss(0.0, &t(-INF, -1.0), &sq_half), 2.25);
    }

    #[test]
    fn subgrad_examples() {
        let sq = HingeLossSpec::squared();
        assert_eq!(hinge_subgrad(5.0, &t(3.0, 7.0), &sq), 0.0);
        assert_eq!(hinge_subgrad(2.0, &t(3.0, 7.0), &sq), -2.0);
        assert_eq!(hinge_subgrad(9.0, &t(3.0, 7.0), &HingeLossSpec::absolute()), 1.0);
        // kink of the absolute hinge
        assert_eq!(hinge_subgrad(3.0, &t(3.0, 7.0), &HingeLossSpec::absolute()), 0.0);
    }

    #[test]
    fn unbounded_target_never_penalizes() {
        let target = t(-INF, INF);
        for y in [-1e300, -3.0, 0.0, 7.5, 1e300] {
            assert_eq!(hinge_loss(y, &target, &HingeLossSpec::new(2, 3.0).unwrap()), 0.0);
        }
    }

    #[test]
    fn metric_examples() {
        let targets = [t(3.0, 7.0), t(3.0, 7.0)];
        assert_eq!(mean_squared_hinge_error(&[5.0, 2.0], &targets).unwrap(), 0.5);
        assert_eq!(mean_squared_hinge_error(&[4.0, 6.5], &targets).unwrap(), 0.0);
        assert_eq!(mean_squared_hinge_error(&[0.0], &[t(-INF, -2.0)]).unwrap(), 4.0);
        assert!(mean_squared_hinge_error(&[], &[]).is_err());
        assert!(mean_squared_hinge_error(&[1.0], &[]).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(HingeLossSpec::new(3, 0.0).is_err());
        assert!(HingeLossSpec::new(2, -0.1).is_err());
        assert!(HingeLossSpec::new(1, 0.0).is_ok());
    }
}
