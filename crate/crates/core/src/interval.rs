//! Interval-valued regression targets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the two bounds of a target relate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensoringKind {
    /// Finite `lower == upper`.
    Uncensored,
    /// Finite lower bound, upper bound `+inf`.
    Right,
    /// Lower bound `-inf`, finite upper bound.
    Left,
    /// Finite `lower < upper`.
    Interval,
    /// `(-inf, +inf)`: any prediction is acceptable.
    Unbounded,
}

/// A target interval `(lower, upper)` with `lower <= upper`.
///
/// Either bound may be infinite in the outward direction only. NaN is
/// rejected, as are `(+inf, +inf)` and `(-inf, -inf)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalTarget {
    lower: f64,
    upper: f64,
}

impl IntervalTarget {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        let bad = |reason| Err(Error::InvalidTarget { lower, upper, reason });
        if lower.is_nan() || upper.is_nan() {
            return bad("NaN bound");
        }
        if lower > upper {
            return bad("lower bound exceeds upper bound");
        }
        if lower == f64::INFINITY || upper == f64::NEG_INFINITY {
            return bad("both bounds infinite and equal");
        }
        Ok(Self { lower, upper })
    }

    /// Uncensored target `(y, y)`.
    pub fn exact(y: f64) -> Result<Self> {
        Self::new(y, y)
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn has_finite_lower(&self) -> bool {
        self.lower.is_finite()
    }

    pub fn has_finite_upper(&self) -> bool {
        self.upper.is_finite()
    }

    pub fn is_finite(&self) -> bool {
        self.lower.is_finite() && self.upper.is_finite()
    }

    pub fn censoring_kind(&self) -> CensoringKind {
        match (self.lower.is_finite(), self.upper.is_finite()) {
            (true, true) if self.lower == self.upper => CensoringKind::Uncensored,
            (true, true) => CensoringKind::Interval,
            (true, false) => CensoringKind::Right,
            (false, true) => CensoringKind::Left,
            (false, false) => CensoringKind::Unbounded,
        }
    }

    /// True when `y` lies inside the closed interval.
    pub fn contains(&self, y: f64) -> bool {
        self.lower <= y && y <= self.upper
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds() {
        let inf = f64::INFINITY;
        assert_eq!(IntervalTarget::new(2.0, 2.0).unwrap().censoring_kind(), CensoringKind::Uncensored);
        assert_eq!(IntervalTarget::new(2.0, inf).unwrap().censoring_kind(), CensoringKind::Right);
        assert_eq!(IntervalTarget::new(-inf, 2.0).unwrap().censoring_kind(), CensoringKind::Left);
        assert_eq!(IntervalTarget::new(1.0, 2.0).unwrap().censoring_kind(), CensoringKind::Interval);
        assert_eq!(IntervalTarget::new(-inf, inf).unwrap().censoring_kind(), CensoringKind::Unbounded);
    }

    #[test]
    fn rejects_invalid() {
        let inf = f64::INFINITY;
        assert!(IntervalTarget::new(f64::NAN, 1.0).is_err());
        assert!(IntervalTarget::new(0.0, f64::NAN).is_err());
        assert!(IntervalTarget::new(5.0, 2.0).is_err());
        assert!(IntervalTarget::new(inf, inf).is_err());
        assert!(IntervalTarget::new(-inf, -inf).is_err());
    }
}
