//! DIF procedures returning a common decision record.

mod logistic;
mod lord;
mod mh;

pub use logistic::{lr_dif, mlr_dif, DecisionRule, LogisticDetails, LogisticOptions, MultilevelDetails, MultilevelOptions, SignificanceTest};
pub use lord::{lord_test, LordDetails, LordOptions};
pub use mh::{mh_dif, mh_test, stratify, EtsClass, MhResult, StratumTable, MAX_DISTINCT_LEVELS};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifMethod {
    Mh,
    Lr,
    Mlr,
    Lord,
}

impl fmt::Display for DifMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DifMethod::Mh => "mh",
            DifMethod::Lr => "lr",
            DifMethod::Mlr => "mlr",
            DifMethod::Lord => "lord",
        })
    }
}

impl FromStr for DifMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mh" => Ok(DifMethod::Mh),
            "lr" => Ok(DifMethod::Lr),
            "mlr" => Ok(DifMethod::Mlr),
            "lord" => Ok(DifMethod::Lord),
            other => Err(Error::Config(format!("unknown DIF method {other:?} (expected mh, lr, mlr or lord)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    NoDif,
    UniformDif,
    NonuniformDif,
    /// DIF detected without a uniform/non-uniform distinction.
    Dif,
}

impl Verdict {
    pub fn is_dif(self) -> bool {
        self != Verdict::NoDif
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::NoDif => "no_dif",
            Verdict::UniformDif => "uniform_dif",
            Verdict::NonuniformDif => "nonuniform_dif",
            Verdict::Dif => "dif",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DifDetails {
    Mh(MhResult),
    Lr(Box<LogisticDetails>),
    Mlr(Box<MultilevelDetails>),
    Lord(Box<LordDetails>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifDecision {
    pub method: DifMethod,
    pub statistic: f64,
    pub df: usize,
    pub p: f64,
    /// Method-specific effect size: Δ̂ for MH, the group coefficient for
    /// the logistic methods, `b̂F − b̂R` for Lord.
    pub effect: Option<f64>,
    pub alpha: f64,
    pub verdict: Verdict,
    pub details: DifDetails,
}

pub(crate) fn check_alpha(alpha: f64) -> crate::error::Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}
