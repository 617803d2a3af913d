//! Simulated interval datasets: one signal feature among noise features,
//! targets built around `x`, `sin(x)` or `|x|`, shifted by noise and then
//! partly censored.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::interval::IntervalTarget;
use crate::seed::rng;

pub const FEATURE_RANGE: f64 = 10.0;
pub const MIN_HALF_WIDTH: f64 = 0.1;
pub const HALF_WIDTH_NOISE_SD: f64 = 0.3;
pub const CENSORED_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Linear,
    Sin,
    Abs,
}

impl SynthKind {
    pub const ALL: [SynthKind; 3] = [Self::Linear, Self::Sin, Self::Abs];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Sin => "sin",
            Self::Abs => "abs",
        }
    }

    pub fn signal(&self, x: f64) -> f64 {
        match self {
            Self::Linear => x,
            Self::Sin => x.sin(),
            Self::Abs => x.abs(),
        }
    }
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "sin" => Ok(Self::Sin),
            "abs" => Ok(Self::Abs),
            other => Err(Error::InvalidParameter(format!("unknown synthetic kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub n_instances: usize,
    pub n_features: usize,
    pub seed: u64,
}

impl SynthSpec {
    /// The 200 x 20 configuration of the simulated benchmark datasets.
    pub fn standard(kind: SynthKind, seed: u64) -> Self {
        Self {
            kind,
            n_instances: 200,
            n_features: 20,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_features == 0 || self.n_instances == 0 {
            return Err(Error::InvalidParameter("synthetic data needs at least one row and one feature".into()));
        }
        Ok(())
    }

    fn signal_draw(&self, rng: &mut ChaCha8Rng) -> usize {
        rng.random_range(0..self.n_features)
    }

    /// Index of the single informative column.
    pub fn signal_column(&self) -> usize {
        self.signal_draw(&mut rng(self.seed))
    }

    pub fn dataset_name(&self) -> String {
        format!("simulated.{}", self.kind.name())
    }
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng(spec.seed);
    let n = spec.n_instances;
    let m = spec.n_features;
    let signal = spec.signal_draw(&mut rng);

    let features: Vec<f64> = (0..n * m)
        .map(|_| rng.random_range(-FEATURE_RANGE..FEATURE_RANGE))
        .collect();

    let width_noise = Normal::new(0.0, HALF_WIDTH_NOISE_SD).expect("valid sd");
    let mut bounds = Vec::with_capacity(n);
    for i in 0..n {
        let center = spec.kind.signal(features[i * m + signal]);
        let half_width = MIN_HALF_WIDTH + width_noise.sample(&mut rng).abs();
        let (lo, hi) = (center - half_width, center + half_width);
        let shift = Normal::new(0.0, lo.abs() / 10.0).expect("valid sd").sample(&mut rng);
        bounds.push((lo + shift, hi + shift));
    }

    let n_censored = (CENSORED_FRACTION * n as f64).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    for &i in &order[..n_censored] {
        bounds[i].1 = f64::INFINITY;
    }
    for &i in &order[n_censored..2 * n_censored] {
        bounds[i].0 = f64::NEG_INFINITY;
    }

    let targets = bounds
        .into_iter()
        .map(|(lo, hi)| IntervalTarget::new(lo, hi))
        .collect::<Result<Vec<_>>>()?;
    let names = (1..=m).map(|j| format!("x{j}")).collect();
    Dataset::new(spec.dataset_name(), names, features, targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval::CensoringKind;

    #[test]
    fn shape_and_censoring_census() {
        let spec = SynthSpec::standard(SynthKind::Linear, 7);
        let ds = generate_synthetic(&spec).unwrap();
        assert_eq!(ds.n_rows(), 200);
        assert_eq!(ds.n_cols(), 20);
        let count = |k| ds.targets().iter().filter(|t| t.censoring_kind() == k).count();
        assert_eq!(count(CensoringKind::Right), 40);
        assert_eq!(count(CensoringKind::Left), 40);
        assert_eq!(count(CensoringKind::Interval), 120);
    }

    #[test]
    fn deterministic() {
        for kind in SynthKind::ALL {
            let spec = SynthSpec::standard(kind, 11);
            let a = generate_synthetic(&spec).unwrap();
            let b = generate_synthetic(&spec).unwrap();
            let mut ba = Vec::new();
            let mut bb = Vec::new();
            a.write_csv(&mut ba).unwrap();
            b.write_csv(&mut bb).unwrap();
            assert_eq!(ba, bb);
        }
    }

    #[test]
    fn targets_follow_signal_column() {
        let spec = SynthSpec::standard(SynthKind::Abs, 3);
        let ds = generate_synthetic(&spec).unwrap();
        let j = spec.signal_column();
        // Interval-censored rows are centred near |x_j| up to width and shift noise.
        for i in 0..ds.n_rows() {
            let t = ds.target(i);
            if t.is_finite() {
                let mid = 0.5 * (t.lower() + t.upper());
                assert!((mid - ds.feature(i, j).abs()).abs() < 6.0);
            }
        }
    }
}
