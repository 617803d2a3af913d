//! Interval regression: models that predict a single value for targets
//! known only as intervals `(y_l, y_u)`, plus the cross-validation
//! benchmark used to compare them.

pub mod aft;
pub mod aft_boost;
pub mod baselines;
pub mod bench;
pub mod dataset;
pub mod error;
pub mod interval;
pub mod leaf;
pub mod linear;
pub mod loss;
pub mod mlp;
pub mod mmif;
pub mod mmit;
pub mod model;
pub mod models;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
pub use interval::{CensoringKind, IntervalTarget};
pub use loss::{hinge_loss, hinge_subgrad, mean_squared_hinge_error, HingeLossSpec};
