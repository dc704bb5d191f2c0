//! Data-driven calibration of the penalty `lambda * D / n` with the slope
//! heuristics.
//!
//! Below the minimal multiplier `lambda_min` the selected dimension
//! explodes; above it, it collapses. `lambda_min` is located as the biggest
//! drop of the selected dimension along a `lambda` grid, where the drop is
//! measured over a sliding window of `h` grid intervals so that a run of
//! small successive jumps counts as one. The final penalty is
//! `2 * lambda_min * D / n`.

use serde::{Deserialize, Serialize};

use crate::criteria::{select_under_penalty, Penalty, SelectionRule};
use crate::em::FittedModel;
use crate::error::{Error, Result};
use crate::explorer::{uniform_grid, ModelPool};
use crate::model::ModelIndex;

/// Selected model and dimension at every grid value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionPath {
    pub lambda_grid: Vec<f64>,
    pub selected: Vec<ModelIndex>,
    pub dimensions: Vec<usize>,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidConfig("lambda grid must be non-empty and strictly ascending".into()));
    }
    Ok(())
}

pub fn dimension_path(pool: &ModelPool, grid: &[f64]) -> Result<DimensionPath> {
    check_grid(grid)?;
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut selected = Vec::with_capacity(grid.len());
    let mut dimensions = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let best = select_under_penalty(pool.fits(), &Penalty::RawLambda { lambda })?;
        selected.push(best.index.clone());
        dimensions.push(best.dimension);
    }
    Ok(DimensionPath {
        lambda_grid: grid.to_vec(),
        selected,
        dimensions,
    })
}

/// Location of the detected jump. Indices are zero-based grid positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub lambda_min: f64,
    pub i_init: usize,
    pub i_end: usize,
    pub drop: usize,
}

/// Sliding-window dimension jump over `h` grid intervals.
///
/// `i_end` is the first index maximizing `D[i - h] - D[i]`; `i_init` the
/// last index of the window from which the full drop is already realized;
/// the estimate is the midpoint of `lambda[i_init]` and `lambda[i_end]`.
pub fn dimension_jump(path: &DimensionPath, h: usize) -> Result<Jump> {
    let d = &path.dimensions;
    let r = d.len();
    if h == 0 || h >= r {
        return Err(Error::InvalidConfig(format!("window h = {h} must lie in 1..={}", r.saturating_sub(1))));
    }
    let drop_at = |i: usize| d[i - h] as i64 - d[i] as i64;
    let mut i_end = h;
    for i in h + 1..r {
        if drop_at(i) > drop_at(i_end) {
            i_end = i;
        }
    }
    let drop = drop_at(i_end);
    if drop <= 0 {
        return Err(Error::FlatPath);
    }
    let i_init = (i_end - h..i_end)
        .rev()
        .find(|&j| d[j] as i64 - d[i_end] as i64 == drop)
        .unwrap_or(i_end - h);
    let lambda = &path.lambda_grid;
    Ok(Jump {
        lambda_min: 0.5 * (lambda[i_init] + lambda[i_end]),
        i_init,
        i_end,
        drop: drop as usize,
    })
}

/// Sub-pool used by the slope regression.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionFilter {
    /// The half of the pool with the largest dimensions.
    #[default]
    LargestHalf,
    All,
    /// Models with at least this dimension.
    MinDimension(usize),
}

/// Minus the least-squares slope of `gamma_n` against `D / n`.
pub fn slope_regression(pool: &ModelPool, filter: RegressionFilter) -> Result<f64> {
    let mut models: Vec<&FittedModel> = pool.fits().filter(|f| f.contrast.is_finite()).collect();
    if models.is_empty() {
        return Err(Error::EmptyPool);
    }
    models.sort_by(|a, b| b.dimension.cmp(&a.dimension).then_with(|| a.index.cmp(&b.index)));
    let models: Vec<&FittedModel> = match filter {
        RegressionFilter::All => models,
        RegressionFilter::LargestHalf => {
            let keep = models.len().div_ceil(2);
            models.into_iter().take(keep).collect()
        }
        RegressionFilter::MinDimension(min) => models.into_iter().filter(|f| f.dimension >= min).collect(),
    };
    let points: Vec<(f64, f64)> = models
        .iter()
        .map(|f| (f.dimension as f64 / f.n as f64, f.contrast))
        .collect();
    let m = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / m;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateRegression);
    }
    Ok(-sxy / sxx)
}

/// Window of the dimension jump, as grid intervals or as a `lambda` width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowSpec {
    Intervals(usize),
    Width(f64),
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec::Width(0.15)
    }
}

impl WindowSpec {
    /// `h = max(1, round(w / step))`, capped at `r - 1`.
    pub fn intervals(&self, grid: &[f64]) -> usize {
        let r = grid.len();
        let h = match *self {
            WindowSpec::Intervals(h) => h,
            WindowSpec::Width(w) => {
                let step = (grid[r - 1] - grid[0]) / (r - 1) as f64;
                ((w / step).round() as usize).max(1)
            }
        };
        h.clamp(1, r.saturating_sub(1).max(1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSource {
    DimensionJump,
    SlopeRegression,
    WidenedGrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// Path over the grid that produced the estimate (the widened grid when
    /// that fallback was taken).
    pub path: DimensionPath,
    pub window_h: usize,
    pub jump: Option<Jump>,
    pub lambda_min_hat: f64,
    pub source: LambdaSource,
    /// `2 * lambda_min_hat`.
    pub final_lambda: f64,
    pub final_selection: ModelIndex,
    pub final_dimension: usize,
    pub notes: Vec<String>,
}

/// Calibrates `lambda_min` and selects under `2 lambda_min D / n`.
///
/// If the path has no jump, falls back to the slope regression, then to a
/// grid widened to `2 ln n`; `FlatPath` if both fail.
pub fn calibrate_and_select(pool: &ModelPool, grid: &[f64], window: WindowSpec) -> Result<CalibrationResult> {
    let path = dimension_path(pool, grid)?;
    let h = window.intervals(grid);
    let mut notes = Vec::new();

    let (path, h, jump, lambda_min_hat, source) = match dimension_jump(&path, h) {
        Ok(j) => {
            let l = j.lambda_min;
            (path, h, Some(j), l, LambdaSource::DimensionJump)
        }
        Err(Error::FlatPath) => {
            notes.push("no dimension jump on the grid".to_string());
            match slope_regression(pool, RegressionFilter::LargestHalf) {
                Ok(l) if l.is_finite() && l > 0.0 => {
                    notes.push("lambda_min from slope regression over the largest-dimension half of the pool".into());
                    (path, h, None, l, LambdaSource::SlopeRegression)
                }
                other => {
                    notes.push(match other {
                        Ok(l) => format!("slope regression gave unusable lambda {l}"),
                        Err(e) => format!("slope regression failed: {e}"),
                    });
                    let n = pool.fits().next().map_or(1, |f| f.n) as f64;
                    let hi = (2.0 * n.ln()).max(2.0 * grid[grid.len() - 1]);
                    let wide = uniform_grid(grid[0], hi, grid.len().max(2))?;
                    let wide_path = dimension_path(pool, &wide)?;
                    let h = window.intervals(&wide);
                    let j = dimension_jump(&wide_path, h)?;
                    notes.push(format!("grid widened to [{}, {hi}]", grid[0]));
                    let l = j.lambda_min;
                    (wide_path, h, Some(j), l, LambdaSource::WidenedGrid)
                }
            }
        }
        Err(e) => return Err(e),
    };

    let final_lambda = 2.0 * lambda_min_hat;
    let winner = select_under_penalty(pool.fits(), &Penalty::RawLambda { lambda: final_lambda })?;
    Ok(CalibrationResult {
        path,
        window_h: h,
        jump,
        lambda_min_hat,
        source,
        final_lambda,
        final_selection: winner.index.clone(),
        final_dimension: winner.dimension,
        notes,
    })
}

/// Outcome of selecting under a [`SelectionRule`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub rule: SelectionRule,
    pub fitted: FittedModel,
    /// Present for the slope rule.
    pub calibration: Option<CalibrationResult>,
}

/// Selects from `pool` under `rule`; `grid` and `window` are used by the
/// slope rule only.
pub fn select_with_rule(pool: &ModelPool, rule: SelectionRule, grid: &[f64], window: WindowSpec) -> Result<Selection> {
    match rule.fixed_penalty() {
        Some(penalty) => Ok(Selection {
            rule,
            fitted: select_under_penalty(pool.fits(), &penalty)?.clone(),
            calibration: None,
        }),
        None => {
            let cal = calibrate_and_select(pool, grid, window)?;
            let fitted = pool.get(&cal.final_selection).expect("selection comes from the pool").clone();
            Ok(Selection {
                rule,
                fitted,
                calibration: Some(cal),
            })
        }
    }
}
