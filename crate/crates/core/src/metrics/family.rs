use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model class of the attacker / V-information predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilyKind {
    Constant,
    Logistic,
    Mlp { hidden_width: usize, depth: usize },
}

/// Optional dimensionality reduction applied before the predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Reducer {
    None,
    /// Mean over non-overlapping windows of this size.
    PoolMean { window: usize },
    /// Max over non-overlapping windows of this size.
    PoolMax { window: usize },
    /// Seeded Gaussian projection to `dim` features.
    RandomProjection { dim: usize, seed: u64 },
}

impl fmt::Display for Reducer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reducer::None => write!(f, "none"),
            Reducer::PoolMean { window } => write!(f, "pool_mean({window})"),
            Reducer::PoolMax { window } => write!(f, "pool_max({window})"),
            Reducer::RandomProjection { dim, seed } => write!(f, "random_projection({dim},{seed})"),
        }
    }
}

fn default_lr() -> f64 {
    1.0
}
fn default_epochs() -> usize {
    300
}
fn default_l2() -> f64 {
    1e-2
}
fn default_reducer() -> Reducer {
    Reducer::None
}

/// A predictive family plus the training recipe used to approximate the
/// infimum over it. Every family contains the constant predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictiveFamily {
    pub kind: FamilyKind,
    /// Upper bound on the gradient-descent step; the logistic trainer
    /// shrinks it further to stay below the inverse curvature.
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_l2")]
    pub l2: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_reducer")]
    pub reducer: Reducer,
}

impl PredictiveFamily {
    pub fn constant() -> Self {
        PredictiveFamily::new(FamilyKind::Constant)
    }

    pub fn logistic() -> Self {
        PredictiveFamily::new(FamilyKind::Logistic)
    }

    pub fn mlp(hidden_width: usize, depth: usize) -> Self {
        PredictiveFamily {
            lr: 0.1,
            ..PredictiveFamily::new(FamilyKind::Mlp {
                hidden_width,
                depth,
            })
        }
    }

    fn new(kind: FamilyKind) -> Self {
        PredictiveFamily {
            kind,
            lr: default_lr(),
            epochs: default_epochs(),
            l2: default_l2(),
            seed: 0,
            reducer: Reducer::None,
        }
    }

    pub fn with_reducer(mut self, reducer: Reducer) -> Self {
        self.reducer = reducer;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.l2 >= 0.0) {
            return Err(Error::InvalidConfig("family needs lr > 0 and l2 >= 0".into()));
        }
        if let FamilyKind::Mlp { hidden_width, depth } = self.kind {
            if hidden_width == 0 || depth == 0 {
                return Err(Error::InvalidConfig("mlp needs hidden_width, depth >= 1".into()));
            }
        }
        match self.reducer {
            Reducer::PoolMean { window: 0 } | Reducer::PoolMax { window: 0 } => {
                Err(Error::InvalidConfig("pool window must be >= 1".into()))
            }
            Reducer::RandomProjection { dim: 0, .. } => {
                Err(Error::InvalidConfig("projection dim must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    /// Short label used in CSV output.
    pub fn label(&self) -> String {
        let kind = match self.kind {
            FamilyKind::Constant => "constant".to_string(),
            FamilyKind::Logistic => "logistic".to_string(),
            FamilyKind::Mlp { hidden_width, depth } => format!("mlp({hidden_width}x{depth})"),
        };
        match self.reducer {
            Reducer::None => kind,
            r => format!("{kind}+{r}"),
        }
    }
}

impl FromStr for PredictiveFamily {
    type Err = Error;

    /// Accepts `constant`, `logistic` or `mlp` (a 32-wide, one-hidden-layer net).
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(PredictiveFamily::constant()),
            "logistic" => Ok(PredictiveFamily::logistic()),
            "mlp" => Ok(PredictiveFamily::mlp(32, 1)),
            other => Err(Error::InvalidConfig(format!("unknown family `{other}`"))),
        }
    }
}
