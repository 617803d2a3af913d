//! The seven benchmarked models behind one training entry point.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aft_boost::{clamp_left_censored, gbm_cv_select, AftSearch, GridSearch, DEFAULT_SEARCH_CELLS};
use crate::baselines::{knn_cv_select, train_constant};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::leaf::LeafRule;
use crate::linear::fit_linear_path_cv;
use crate::loss::HingeLossSpec;
use crate::mlp::{mlp_cv_select, mlp_hyperparams, Activation, MlpConfig};
use crate::mmif::{train_mmif, ForestConfig, ForestCv};
use crate::mmit::{mmit_cv_select, TreeGrid};
use crate::model::{Hyperparams, Regressor};

/// Random-search cells for AFT boosting under the fast profile.
pub const FAST_AFT_CELLS: usize = 20;
pub const FAST_MLP_EPOCHS: usize = 300;
pub const FAST_MLP_PATIENCE: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Aft,
    Constant,
    Knn,
    Linear,
    Mlp,
    Mmif,
    Mmit,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        Self::Aft,
        Self::Constant,
        Self::Knn,
        Self::Linear,
        Self::Mlp,
        Self::Mmif,
        Self::Mmit,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Aft => "aft",
            Self::Constant => "constant",
            Self::Knn => "knn",
            Self::Linear => "linear",
            Self::Mlp => "mlp",
            Self::Mmif => "mmif",
            Self::Mmit => "mmit",
        }
    }

    /// Fit on `train`, running the model's own hyperparameter selection.
    pub fn train(&self, train: &Dataset, profile: &Profile, seed: u64) -> Result<TrainedModel> {
        let loss = profile.loss;
        let rule = profile.rule;
        let (model, hyperparams): (Box<dyn Regressor>, Hyperparams) = match self {
            Self::Constant => (Box::new(train_constant(train, rule)?), Hyperparams::new()),
            Self::Knn => {
                let (m, _) = knn_cv_select(train, loss, rule, seed)?;
                let h = Hyperparams::from([("k".to_string(), m.k().to_string())]);
                (Box::new(m), h)
            }
            Self::Linear => {
                let (m, _) = fit_linear_path_cv(train, loss, seed)?;
                let h = Hyperparams::from([
                    ("lambda".to_string(), m.lambda.to_string()),
                    ("nonzero".to_string(), m.n_nonzero().to_string()),
                ]);
                (Box::new(m), h)
            }
            Self::Mmit => {
                let (m, _) = mmit_cv_select(train, &TreeGrid::mmit(), loss, rule, seed)?;
                let h = m.limits.hyperparams();
                (Box::new(m), h)
            }
            Self::Mmif => {
                let config = profile.forest_config();
                let m = train_mmif(train, &config, seed)?;
                let h = Hyperparams::from([
                    ("n_trees".to_string(), config.n_trees.to_string()),
                    ("cv".to_string(), config.cv.name().to_string()),
                ]);
                (Box::new(m), h)
            }
            Self::Mlp => {
                let (m, _) = mlp_cv_select(train, &profile.mlp_grid(), loss, seed)?;
                let h = mlp_hyperparams(&m.config);
                (Box::new(m), h)
            }
            Self::Aft => {
                let prepared = match profile.clamp_left_censored {
                    Some(v) => train.with_targets(clamp_left_censored(train.targets(), v)?)?,
                    None => train.clone(),
                };
                let (m, _) = gbm_cv_select(&prepared, &profile.aft_search(), seed)?;
                let mut h = m.config.hyperparams();
                if let Some(v) = profile.clamp_left_censored {
                    h.insert("clamp_left_censored".into(), v.to_string());
                }
                (Box::new(m), h)
            }
        };
        Ok(TrainedModel { model, hyperparams })
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|m| m.name()).collect();
                Error::InvalidParameter(format!("unknown model '{s}' (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Debug)]
pub struct TrainedModel {
    pub model: Box<dyn Regressor>,
    pub hyperparams: Hyperparams,
}

/// Settings shared by every model in a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    /// Shrink the expensive searches (see [`Profile::forest_config`],
    /// [`Profile::mlp_grid`], [`Profile::aft_search`]).
    pub fast: bool,
    pub exhaustive_aft: bool,
    pub clamp_left_censored: Option<f64>,
    pub loss: HingeLossSpec,
    pub rule: LeafRule,
}

impl Default for Profile {
    fn default() -> Self {
        Self {
            fast: false,
            exhaustive_aft: false,
            clamp_left_censored: None,
            loss: HingeLossSpec::squared(),
            rule: LeafRule::Exact,
        }
    }
}

impl Profile {
    pub fn fast() -> Self {
        Self {
            fast: true,
            ..Self::default()
        }
    }

    /// Per-tree CV normally; one shared CV in the fast profile.
    pub fn forest_config(&self) -> ForestConfig {
        ForestConfig {
            cv: if self.fast { ForestCv::Shared } else { ForestCv::PerTree },
            loss: self.loss,
            rule: self.rule,
            ..ForestConfig::default()
        }
    }

    /// The full 12-config grid normally; one hidden layer of 5 or 10 units
    /// with a shorter training budget in the fast profile.
    pub fn mlp_grid(&self) -> Vec<MlpConfig> {
        if !self.fast {
            return MlpConfig::grid(0);
        }
        let mut grid = Vec::new();
        for hidden in [5, 10] {
            for activation in Activation::ALL {
                let mut c = MlpConfig::new(1, hidden, activation, 0);
                c.max_epochs = FAST_MLP_EPOCHS;
                c.patience = FAST_MLP_PATIENCE;
                grid.push(c);
            }
        }
        grid
    }

    /// 200 sampled cells normally, 20 in the fast profile, or every cell
    /// when `exhaustive_aft` is set.
    pub fn aft_search(&self) -> AftSearch {
        let search = if self.exhaustive_aft {
            GridSearch::Exhaustive
        } else if self.fast {
            GridSearch::Random(FAST_AFT_CELLS)
        } else {
            GridSearch::Random(DEFAULT_SEARCH_CELLS)
        };
        AftSearch {
            search,
            ..AftSearch::default()
        }
    }
}
