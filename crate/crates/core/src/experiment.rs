//! Simulation experiments: selection consistency as `n` grows, and the
//! Hellinger risk of selected models against the oracle.
//!
//! Replicates are independent tasks run in parallel. Replicate `r` at size
//! `n` simulates with seed `derive(seed, [n, r, 0])` and fits with root
//! seed `derive(seed, [n, r, 1])`, so results do not depend on scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{select_with_rule, WindowSpec};
use crate::criteria::SelectionRule;
use crate::data::Dataset;
use crate::em::FittedModel;
use crate::error::{Error, Result};
use crate::explorer::{build_pool, exhaustive_pool, fit_seeded, ExplorerConfig, ModelPool};
use crate::metrics::{hellinger_sq_exact_many, hellinger_sq_mc, MixtureDensity, MAX_ENUMERATED};
use crate::model::{collection_size, ModelIndex};
use crate::seed;
use crate::simulate::{simulate, TrueModelSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// `em.rng_seed` is replaced per replicate.
    pub explorer: ExplorerConfig,
    pub window: WindowSpec,
    /// Fit every model with `K <= K_max` instead of exploring, when the
    /// budget allows.
    pub exhaustive: bool,
    /// Monte Carlo draws for spaces too large to enumerate.
    pub mc_draws: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            explorer: ExplorerConfig::default(),
            window: WindowSpec::default(),
            exhaustive: false,
            mc_draws: 100_000,
        }
    }
}

struct Replicate {
    data: Dataset,
    config: ExplorerConfig,
    mc_seed: u64,
}

fn replicate(truth: &TrueModelSpec, n: usize, r: usize, config: &ExperimentConfig, seed: u64) -> Result<Replicate> {
    let keys = |role: u64| seed::derive(seed, &[n as u64, r as u64, role]);
    let mut explorer = config.explorer.clone();
    explorer.em.rng_seed = keys(1);
    Ok(Replicate {
        data: simulate(truth, n, keys(0))?,
        config: explorer,
        mc_seed: keys(2),
    })
}

fn exhaustive_fits(config: &ExperimentConfig, n_variables: usize) -> bool {
    config.exhaustive && collection_size(config.explorer.k_max, n_variables) <= config.explorer.exhaustive_budget
}

fn pool_for(rep: &Replicate, exhaustive: bool) -> Result<ModelPool> {
    if exhaustive {
        exhaustive_pool(&rep.data, rep.config.k_max, &rep.config)
    } else {
        build_pool(&rep.data, &rep.config)
    }
}

/// Squared Hellinger distance from the truth to each fit; exact when the
/// space is enumerable.
fn distances(truth: &TrueModelSpec, fits: &[&FittedModel], mc_draws: usize, mc_seed: u64) -> Result<Vec<f64>> {
    let densities = fits
        .iter()
        .map(|f| MixtureDensity::from_fit(truth.space(), f))
        .collect::<Result<Vec<_>>>()?;
    if truth.space().size() <= MAX_ENUMERATED as f64 {
        let refs: Vec<&MixtureDensity> = densities.iter().collect();
        hellinger_sq_exact_many(truth.density(), &refs)
    } else {
        densities
            .iter()
            .enumerate()
            .map(|(i, q)| {
                hellinger_sq_mc(truth.density(), q, mc_draws, seed::derive(mc_seed, &[i as u64])).map(|m| m.estimate)
            })
            .collect()
    }
}

/// Monte Carlo estimate of a model's Hellinger risk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub index: ModelIndex,
    pub mean: f64,
    pub std_error: f64,
    /// Replicates with a successful fit.
    pub replicates: usize,
    pub failures: usize,
    pub values: Vec<f64>,
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / m;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

impl RiskEstimate {
    fn from_values(index: ModelIndex, values: Vec<f64>, failures: usize) -> Self {
        let (mean, std_error) = mean_and_se(&values);
        Self {
            index,
            mean,
            std_error,
            replicates: values.len(),
            failures,
            values,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub oracle: ModelIndex,
    /// One entry per candidate, in candidate order.
    pub risks: Vec<RiskEstimate>,
}

/// Per-candidate `h^2` on every replicate; `None` marks a failed fit.
type RiskMatrix = Vec<Vec<Option<f64>>>;

fn risk_table(candidates: &[ModelIndex], per_replicate: &RiskMatrix) -> Result<OracleEstimate> {
    let risks: Vec<RiskEstimate> = candidates
        .iter()
        .enumerate()
        .map(|(c, index)| {
            let values: Vec<f64> = per_replicate.iter().filter_map(|row| row[c]).collect();
            let failures = per_replicate.len() - values.len();
            RiskEstimate::from_values(index.clone(), values, failures)
        })
        .collect();
    let oracle = risks
        .iter()
        .filter(|r| r.replicates > 0)
        .min_by(|a, b| a.mean.total_cmp(&b.mean).then_with(|| a.index.cmp(&b.index)))
        .ok_or_else(|| Error::AllFitsFailed("no candidate could be fitted on any replicate".into()))?
        .index
        .clone();
    Ok(OracleEstimate { oracle, risks })
}

/// Candidate `h^2` values on one replicate, reusing fits already in `pool`.
fn candidate_risks(
    truth: &TrueModelSpec,
    rep: &Replicate,
    candidates: &[ModelIndex],
    pool: &ModelPool,
    mc_draws: usize,
) -> Result<Vec<Option<f64>>> {
    let fits: Vec<Option<FittedModel>> = candidates
        .par_iter()
        .map(|m| match pool.get(m) {
            Some(f) => Some(f.clone()),
            None if pool.failures().contains_key(m) => None,
            None => fit_seeded(&rep.data, m, &rep.config.em).ok(),
        })
        .collect();
    let ok: Vec<&FittedModel> = fits.iter().flatten().collect();
    let mut values = distances(truth, &ok, mc_draws, rep.mc_seed)?.into_iter();
    Ok(fits.iter().map(|f| f.as_ref().and_then(|_| values.next())).collect())
}

/// Risk of every candidate by Monte Carlo over `n_replicates` datasets of
/// size `n`, and its minimizer. Failed fits are excluded and counted.
pub fn estimate_oracle(
    truth: &TrueModelSpec,
    n: usize,
    n_replicates: usize,
    candidates: &[ModelIndex],
    config: &ExperimentConfig,
    seed: u64,
) -> Result<OracleEstimate> {
    if candidates.is_empty() {
        return Err(Error::InvalidConfig("the oracle needs at least one candidate".into()));
    }
    if n_replicates == 0 {
        return Err(Error::InvalidConfig("at least one replicate is required".into()));
    }
    for m in candidates {
        m.check_variables(truth.space().n_variables())?;
    }
    let per_replicate: RiskMatrix = (0..n_replicates)
        .into_par_iter()
        .map(|r| {
            let rep = replicate(truth, n, r, config, seed)?;
            candidate_risks(truth, &rep, candidates, &ModelPool::new(), config.mc_draws)
        })
        .collect::<Result<_>>()?;
    risk_table(candidates, &per_replicate)
}

/// `h^2` of one rule's selection on one replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedRisk {
    pub replicate: usize,
    pub rule: SelectionRule,
    pub index: Option<ModelIndex>,
    pub hellinger_sq: Option<f64>,
    /// `h^2` of the oracle model's fit on the same replicate.
    pub oracle_hellinger_sq: Option<f64>,
    /// Selected over oracle; unstable when the oracle distance is tiny.
    pub ratio: Option<f64>,
    pub excess: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleRisk {
    pub rule: SelectionRule,
    pub mean_hellinger_sq: f64,
    pub std_error: f64,
    pub mean_ratio: f64,
    pub mean_excess: f64,
    pub replicates: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub n: usize,
    pub n_replicates: usize,
    /// Whether the candidates are the whole collection up to `K_max`.
    pub exhaustive: bool,
    pub oracle: OracleEstimate,
    pub selections: Vec<SelectedRisk>,
    pub summary: Vec<RuleRisk>,
}

/// Oracle risk table plus the risk of each rule's selection.
///
/// Candidates are the whole collection when the budget allows, otherwise
/// the models explored on the first replicate. Selections on a replicate
/// reuse that replicate's candidate fits.
pub fn oracle_experiment(
    truth: &TrueModelSpec,
    n: usize,
    n_replicates: usize,
    rules: &[SelectionRule],
    config: &ExperimentConfig,
    seed: u64,
) -> Result<OracleReport> {
    if n_replicates == 0 {
        return Err(Error::InvalidConfig("at least one replicate is required".into()));
    }
    let n_vars = truth.space().n_variables();
    let exhaustive = collection_size(config.explorer.k_max, n_vars) <= config.explorer.exhaustive_budget;
    let candidates: Vec<ModelIndex> = if exhaustive {
        ModelIndex::collection(config.explorer.k_max, n_vars)
    } else {
        let first = replicate(truth, n, 0, config, seed)?;
        build_pool(&first.data, &first.config)?.fits().map(|f| f.index.clone()).collect()
    };

    struct Outcome {
        risks: Vec<Option<f64>>,
        selections: Vec<(SelectionRule, Result<(ModelIndex, f64)>)>,
    }
    let outcomes: Vec<Outcome> = (0..n_replicates)
        .into_par_iter()
        .map(|r| -> Result<Outcome> {
            let rep = replicate(truth, n, r, config, seed)?;
            let pool = pool_for(&rep, exhaustive)?;
            let risks = candidate_risks(truth, &rep, &candidates, &pool, config.mc_draws)?;
            let grid = rep.config.grid.resolve(n)?;
            let mut selections = Vec::with_capacity(rules.len());
            for &rule in rules {
                let picked = select_with_rule(&pool, rule, &grid, config.window).and_then(|sel| {
                    let index = sel.fitted.index.clone();
                    let h2 = match candidates.iter().position(|c| *c == index).and_then(|c| risks[c]) {
                        Some(v) => v,
                        None => distances(truth, &[&sel.fitted], config.mc_draws, rep.mc_seed)?[0],
                    };
                    Ok((index, h2))
                });
                selections.push((rule, picked));
            }
            Ok(Outcome { risks, selections })
        })
        .collect::<Result<_>>()?;

    let matrix: RiskMatrix = outcomes.iter().map(|o| o.risks.clone()).collect();
    let oracle = risk_table(&candidates, &matrix)?;
    let oracle_pos = candidates.iter().position(|c| *c == oracle.oracle).expect("oracle is a candidate");

    let mut selections = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        let oracle_h2 = o.risks[oracle_pos];
        for (rule, picked) in o.selections {
            selections.push(match picked {
                Ok((index, h2)) => SelectedRisk {
                    replicate: r,
                    rule,
                    index: Some(index),
                    hellinger_sq: Some(h2),
                    oracle_hellinger_sq: oracle_h2,
                    ratio: oracle_h2.map(|o| h2 / o),
                    excess: oracle_h2.map(|o| h2 - o),
                    error: None,
                },
                Err(e) => SelectedRisk {
                    replicate: r,
                    rule,
                    index: None,
                    hellinger_sq: None,
                    oracle_hellinger_sq: oracle_h2,
                    ratio: None,
                    excess: None,
                    error: Some(e.to_string()),
                },
            });
        }
    }
    let summary = rules
        .iter()
        .map(|&rule| {
            let mine: Vec<&SelectedRisk> = selections.iter().filter(|s| s.rule == rule).collect();
            let h2: Vec<f64> = mine.iter().filter_map(|s| s.hellinger_sq).collect();
            let (mean, se) = mean_and_se(&h2);
            let ratios: Vec<f64> = mine.iter().filter_map(|s| s.ratio).collect();
            let excess: Vec<f64> = mine.iter().filter_map(|s| s.excess).collect();
            RuleRisk {
                rule,
                mean_hellinger_sq: mean,
                std_error: se,
                mean_ratio: mean_and_se(&ratios).0,
                mean_excess: mean_and_se(&excess).0,
                replicates: h2.len(),
                failures: mine.len() - h2.len(),
            }
        })
        .collect();
    Ok(OracleReport {
        n,
        n_replicates,
        exhaustive,
        oracle,
        selections,
        summary,
    })
}

/// One selection in the consistency experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub n: usize,
    pub rule: SelectionRule,
    pub replicate: usize,
    pub index: Option<ModelIndex>,
    pub dimension: Option<usize>,
    /// `K_hat = K0`.
    pub k_correct: bool,
    /// `S_hat` contains the true `S0`.
    pub covers_truth: bool,
    /// `S_hat` contains the required variables.
    pub covers_required: bool,
    /// Final multiplier of the slope rule.
    pub lambda: Option<f64>,
    pub error: Option<String>,
}

/// Counts over the replicates of one `(n, rule)`; failed replicates count
/// as misses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencySummary {
    pub n: usize,
    pub rule: SelectionRule,
    pub replicates: usize,
    pub failures: usize,
    pub k_correct: usize,
    pub covers_truth: usize,
    pub covers_required: usize,
    pub prop_k_correct: f64,
    pub prop_covers_truth: f64,
    pub prop_covers_required: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub truth: ModelIndex,
    /// Zero-based.
    pub required: Vec<usize>,
    pub rows: Vec<ConsistencyRow>,
    pub summary: Vec<ConsistencySummary>,
}

/// Runs the full pipeline (pool, calibration where needed, selection) on
/// `n_replicates` datasets for every `n` and tabulates how often each rule
/// recovers `K0` and covers `S0` (or `required`, zero-based, defaulting to
/// `S0`).
pub fn consistency_experiment(
    truth: &TrueModelSpec,
    n_values: &[usize],
    n_replicates: usize,
    rules: &[SelectionRule],
    required: Option<&[usize]>,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<ConsistencyReport> {
    if n_values.is_empty() || n_replicates == 0 || rules.is_empty() {
        return Err(Error::InvalidConfig("sizes, replicates and criteria must be non-empty".into()));
    }
    let k0 = truth.index().k();
    let s0 = truth.index().vars().to_vec();
    let required = required.map_or_else(|| s0.clone(), |r| r.to_vec());
    let exhaustive = exhaustive_fits(config, truth.space().n_variables());
    let tasks: Vec<(usize, usize)> = n_values
        .iter()
        .flat_map(|&n| (0..n_replicates).map(move |r| (n, r)))
        .collect();
    let per_task: Vec<Vec<ConsistencyRow>> = tasks
        .par_iter()
        .map(|&(n, r)| {
            let fail = |rule, e: &Error| ConsistencyRow {
                n,
                rule,
                replicate: r,
                index: None,
                dimension: None,
                k_correct: false,
                covers_truth: false,
                covers_required: false,
                lambda: None,
                error: Some(e.to_string()),
            };
            let prepared = replicate(truth, n, r, config, seed).and_then(|rep| {
                let pool = pool_for(&rep, exhaustive)?;
                let grid = rep.config.grid.resolve(n)?;
                Ok((pool, grid))
            });
            let (pool, grid) = match prepared {
                Ok(p) => p,
                Err(e) => return rules.iter().map(|&rule| fail(rule, &e)).collect(),
            };
            rules
                .iter()
                .map(|&rule| match select_with_rule(&pool, rule, &grid, config.window) {
                    Ok(sel) => {
                        let index = sel.fitted.index;
                        let covers = |set: &[usize]| set.iter().all(|&l| index.contains(l));
                        ConsistencyRow {
                            n,
                            rule,
                            replicate: r,
                            dimension: Some(sel.fitted.dimension),
                            k_correct: index.k() == k0,
                            covers_truth: covers(&s0),
                            covers_required: covers(&required),
                            lambda: sel.calibration.map(|c| c.final_lambda),
                            index: Some(index),
                            error: None,
                        }
                    }
                    Err(e) => fail(rule, &e),
                })
                .collect()
        })
        .collect();
    let rows: Vec<ConsistencyRow> = per_task.into_iter().flatten().collect();
    let mut summary = Vec::new();
    for &n in n_values {
        for &rule in rules {
            let mine: Vec<&ConsistencyRow> = rows.iter().filter(|row| row.n == n && row.rule == rule).collect();
            let count = |f: fn(&ConsistencyRow) -> bool| mine.iter().filter(|row| f(row)).count();
            let total = mine.len();
            let (k_correct, covers_truth, covers_required) =
                (count(|r| r.k_correct), count(|r| r.covers_truth), count(|r| r.covers_required));
            summary.push(ConsistencySummary {
                n,
                rule,
                replicates: total,
                failures: count(|r| r.error.is_some()),
                k_correct,
                covers_truth,
                covers_required,
                prop_k_correct: k_correct as f64 / total as f64,
                prop_covers_truth: covers_truth as f64 / total as f64,
                prop_covers_required: covers_required as f64 / total as f64,
            });
        }
    }
    Ok(ConsistencyReport {
        truth: truth.index().clone(),
        required,
        rows,
        summary,
    })
}

impl ConsistencyReport {
    pub fn summary_for(&self, n: usize, rule: SelectionRule) -> Option<&ConsistencySummary> {
        self.summary.iter().find(|s| s.n == n && s.rule == rule)
    }
}

impl OracleReport {
    pub fn summary_for(&self, rule: SelectionRule) -> Option<&RuleRisk> {
        self.summary.iter().find(|s| s.rule == rule)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CaseKind, SampleSpace};
    use crate::em::EmConfig;
    use crate::explorer::GridSpec;
    use crate::model::MixtureParams;

    fn tiny_truth() -> TrueModelSpec {
        let space = SampleSpace::new(CaseKind::Haploid, vec![2, 2]).unwrap();
        let index = ModelIndex::new(2, vec![0]).unwrap();
        let params = MixtureParams {
            pi: vec![0.5, 0.5],
            alpha: vec![vec![vec![0.9, 0.1]], vec![vec![0.1, 0.9]]],
            beta: vec![vec![0.3, 0.7]],
        };
        TrueModelSpec::new(space, index, params).unwrap()
    }

    fn quick() -> ExperimentConfig {
        ExperimentConfig {
            explorer: ExplorerConfig {
                k_max: 3,
                grid: GridSpec {
                    lo: None,
                    hi: None,
                    count: 20,
                },
                em: EmConfig {
                    n_restarts: 3,
                    ..EmConfig::default()
                },
                ..ExplorerConfig::default()
            },
            exhaustive: true,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn oracle_risks_are_in_range_and_seeded() {
        let truth = tiny_truth();
        let candidates = ModelIndex::collection(2, 2);
        let a = estimate_oracle(&truth, 200, 4, &candidates, &quick(), 7).unwrap();
        let b = estimate_oracle(&truth, 200, 4, &candidates, &quick(), 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.risks.len(), candidates.len());
        for r in &a.risks {
            assert!(r.mean >= 0.0 && r.mean <= 2.0 && r.std_error >= 0.0);
            assert_eq!(r.replicates + r.failures, 4);
        }
    }

    #[test]
    fn consistency_rows_and_proportions() {
        let truth = tiny_truth();
        let rules = [SelectionRule::Aic, SelectionRule::Bic, SelectionRule::Slope];
        let report = consistency_experiment(&truth, &[60, 120], 3, &rules, None, &quick(), 1).unwrap();
        assert_eq!(report.rows.len(), 2 * 3 * 3);
        for s in &report.summary {
            assert_eq!(s.replicates, 3);
            for p in [s.prop_k_correct, s.prop_covers_truth, s.prop_covers_required] {
                assert!((0.0..=1.0).contains(&p));
            }
        }
    }
}
