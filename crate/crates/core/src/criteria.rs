//! Penalties and penalized-contrast selection.
//!
//! Every penalty here is proportional to the model dimension `D`:
//! AIC is `D / n`, BIC `ln(n) D / 2n`, the shape `lambda D / n` covers the
//! calibrated criterion, and the theoretical lower bound carries an
//! explicit `ln n` correction with an unknown constant `kappa`.

use std::cmp::Ordering;
use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::em::FittedModel;
use crate::error::{Error, Result};
use crate::model::{dimension, ModelIndex};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    Aic,
    Bic,
    Theoretical { kappa: f64 },
    /// `lambda D / n` with `lambda` coming from the slope heuristics.
    SlopeCalibrated { lambda: f64 },
    RawLambda { lambda: f64 },
}

pub fn pen_aic(dimension: usize, n: usize) -> f64 {
    dimension as f64 / n as f64
}

pub fn pen_bic(dimension: usize, n: usize) -> f64 {
    (n as f64).ln() / (2.0 * n as f64) * dimension as f64
}

pub fn pen_lambda(lambda: f64, dimension: usize, n: usize) -> f64 {
    lambda * dimension as f64 / n as f64
}

/// `max(ln n / 2 + ln L / 2, ln 2 / 2 + ln L)`; the first branch whenever
/// `n >= 2L`.
pub fn theoretical_log_term(n: usize, n_variables: usize) -> f64 {
    log_term((n as f64).ln(), n_variables)
}

fn log_term(ln_n: f64, n_variables: usize) -> f64 {
    let ln_l = (n_variables as f64).ln();
    f64::max(0.5 * ln_n + 0.5 * ln_l, 0.5 * LN_2 + ln_l)
}

/// `(5 + sqrt(max(...)))^2`, the multiplier of `D / n` at `kappa = 1`,
/// as a function of `ln n`.
pub fn theoretical_multiplier(ln_n: f64, n_variables: usize) -> f64 {
    let root = 5.0 + log_term(ln_n, n_variables).sqrt();
    root * root
}

/// `kappa (5 + sqrt(max(...)))^2 D / n`.
pub fn pen_theoretical(dimension: usize, n: usize, n_variables: usize, kappa: f64) -> f64 {
    kappa * theoretical_multiplier((n as f64).ln(), n_variables) * dimension as f64 / n as f64
}

impl Penalty {
    pub fn for_dimension(&self, dimension: usize, n: usize, n_variables: usize) -> f64 {
        match *self {
            Penalty::Aic => pen_aic(dimension, n),
            Penalty::Bic => pen_bic(dimension, n),
            Penalty::Theoretical { kappa } => pen_theoretical(dimension, n, n_variables, kappa),
            Penalty::SlopeCalibrated { lambda } | Penalty::RawLambda { lambda } => {
                pen_lambda(lambda, dimension, n)
            }
        }
    }

    pub fn evaluate(&self, index: &ModelIndex, n: usize, states: &[usize]) -> f64 {
        self.for_dimension(dimension(index, states), n, states.len())
    }
}

/// Penalized contrast `gamma_n(P_hat) + pen`; `+inf` propagates.
pub fn criterion(fitted: &FittedModel, penalty: &Penalty) -> f64 {
    fitted.contrast + penalty.for_dimension(fitted.dimension, fitted.n, fitted.n_variables)
}

/// Orders candidates by criterion, then dimension, then `K`, then `S`
/// lexicographically.
fn rank(a: (f64, &FittedModel), b: (f64, &FittedModel)) -> Ordering {
    a.0.total_cmp(&b.0)
        .then(a.1.dimension.cmp(&b.1.dimension))
        .then(a.1.index.k().cmp(&b.1.index.k()))
        .then_with(|| a.1.index.vars().cmp(b.1.index.vars()))
}

/// Minimizer of the criterion over `pool`.
pub fn select_under_penalty<'a, I>(pool: I, penalty: &Penalty) -> Result<&'a FittedModel>
where
    I: IntoIterator<Item = &'a FittedModel>,
{
    pool.into_iter()
        .map(|f| (criterion(f, penalty), f))
        .min_by(|a, b| rank(*a, *b))
        .map(|(_, f)| f)
        .ok_or(Error::EmptyPool)
}

/// A selection criterion as chosen by a user: fixed penalties, or the
/// slope-calibrated one which needs a calibration run first.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    Aic,
    Bic,
    Slope,
    Theoretical { kappa: f64 },
}

impl SelectionRule {
    /// The penalty of a fixed rule; `None` for `Slope`.
    pub fn fixed_penalty(&self) -> Option<Penalty> {
        match *self {
            SelectionRule::Aic => Some(Penalty::Aic),
            SelectionRule::Bic => Some(Penalty::Bic),
            SelectionRule::Theoretical { kappa } => Some(Penalty::Theoretical { kappa }),
            SelectionRule::Slope => None,
        }
    }
}

impl std::fmt::Display for SelectionRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SelectionRule::Aic => f.write_str("aic"),
            SelectionRule::Bic => f.write_str("bic"),
            SelectionRule::Slope => f.write_str("slope"),
            SelectionRule::Theoretical { kappa } => write!(f, "theoretical:{kappa}"),
        }
    }
}

impl std::str::FromStr for SelectionRule {
    type Err = Error;

    /// `aic`, `bic`, `slope` or `theoretical:KAPPA`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "aic" => Ok(SelectionRule::Aic),
            "bic" => Ok(SelectionRule::Bic),
            "slope" => Ok(SelectionRule::Slope),
            other => {
                let kappa = other
                    .strip_prefix("theoretical:")
                    .and_then(|k| k.parse::<f64>().ok())
                    .filter(|k| k.is_finite() && *k > 0.0)
                    .ok_or_else(|| {
                        Error::InvalidConfig(format!(
                            "unknown criterion {s:?}; expected aic, bic, slope or theoretical:KAPPA"
                        ))
                    })?;
                Ok(SelectionRule::Theoretical { kappa })
            }
        }
    }
}
