//! The uniform interface every trained model satisfies.

use std::collections::BTreeMap;

use crate::dataset::Dataset;

/// Selected hyperparameters, rendered as strings for reports.
pub type Hyperparams = BTreeMap<String, String>;

/// A trained model mapping a raw feature row to a scalar prediction.
pub trait Regressor: Send + Sync + std::fmt::Debug {
    fn predict(&self, x: &[f64]) -> f64;

    fn predict_dataset(&self, data: &Dataset) -> Vec<f64> {
        (0..data.n_rows()).map(|i| self.predict(data.row(i))).collect()
    }
}

/// Index of the first minimum of `scores` (NaN never wins).
pub(crate) fn argmin_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_nan() {
            continue;
        }
        match best {
            Some(b) if scores[b] <= s => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Mean cross-validated error of each configuration in a grid, in grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct CvTable {
    pub labels: Vec<String>,
    pub mean_errors: Vec<f64>,
}

impl CvTable {
    pub fn best(&self) -> Option<usize> {
        argmin_first(&self.mean_errors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmin_prefers_first_and_skips_nan() {
        assert_eq!(argmin_first(&[3.0, 1.0, 1.0, 2.0]), Some(1));
        assert_eq!(argmin_first(&[f64::NAN, 5.0]), Some(1));
        assert_eq!(argmin_first(&[f64::NAN]), None);
        assert_eq!(argmin_first(&[]), None);
    }
}
