//! Maximum-likelihood fitting inside one model `M_(K,S)` by EM.
//!
//! Each restart starts from a random hard partition followed by one M-step,
//! runs a short screening phase, and only the best restart by
//! log-likelihood is iterated to convergence ("small EM").

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{dimension, log_sum_exp_sorted, shared_vars, LogTables, MixtureParams, ModelIndex};
use crate::seed;

/// Total responsibility below which a cluster is considered dead.
pub const EMPTY_CLUSTER_MASS: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iterations: usize,
    /// Stop when the relative log-likelihood change drops below this...
    pub relative_tolerance: f64,
    /// ...and the last M-step moved no coordinate by more than this.
    pub parameter_tolerance: f64,
    pub n_restarts: usize,
    pub short_run_iterations: usize,
    pub rng_seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            relative_tolerance: 1e-8,
            parameter_tolerance: 1e-7,
            n_restarts: 10,
            short_run_iterations: 20,
            rng_seed: 0,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.n_restarts == 0 || self.short_run_iterations == 0 {
            return Err(Error::InvalidConfig("EM iteration and restart counts must be >= 1".into()));
        }
        if !(self.relative_tolerance > 0.0) || !(self.parameter_tolerance > 0.0) {
            return Err(Error::InvalidConfig("EM tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Posterior cluster memberships, `n x K` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Responsibilities {
    k: usize,
    values: Vec<f64>,
}

impl Responsibilities {
    /// Builds from row-major values, normalizing every row.
    pub fn from_rows(k: usize, mut values: Vec<f64>) -> Result<Self> {
        if k == 0 || !values.len().is_multiple_of(k) {
            return Err(Error::InvalidConfig("responsibility matrix has the wrong shape".into()));
        }
        for (i, row) in values.chunks_mut(k).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&t| !(t >= 0.0)) || !(sum > 0.0) {
                return Err(Error::AllComponentsZero { row: i + 1 });
            }
            row.iter_mut().for_each(|t| *t /= sum);
        }
        Ok(Self { k, values })
    }

    /// Hard assignment of each row to one cluster.
    pub fn hard(k: usize, labels: &[usize]) -> Result<Self> {
        let mut values = vec![0.0; labels.len() * k];
        for (i, &z) in labels.iter().enumerate() {
            if z >= k {
                return Err(Error::InvalidConfig(format!("label {z} out of range for K = {k}")));
            }
            values[i * k + z] = 1.0;
        }
        Ok(Self { k, values })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.values.len() / self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.k)
    }
}

/// E-step returning the responsibilities and the log-likelihood of `params`.
pub(crate) fn e_step_with_loglik(
    ds: &Dataset,
    index: &ModelIndex,
    params: &MixtureParams,
) -> Result<(Responsibilities, f64)> {
    let tables = LogTables::new(ds.case_kind(), ds.n_variables(), index, params);
    let k = tables.k();
    let mut values = vec![0.0; ds.n() * k];
    let mut sorted = vec![0.0; k];
    let mut loglik = 0.0;
    for (i, (x, row)) in ds.observations().zip(values.chunks_mut(k)).enumerate() {
        tables.component_terms(x, row);
        sorted.copy_from_slice(row);
        let lse = log_sum_exp_sorted(&mut sorted);
        if lse == f64::NEG_INFINITY {
            return Err(Error::AllComponentsZero { row: i + 1 });
        }
        let mut sum = 0.0;
        for t in row.iter_mut() {
            *t = (*t - lse).exp();
            sum += *t;
        }
        row.iter_mut().for_each(|t| *t /= sum);
        loglik += lse + tables.shared_term(x);
    }
    Ok((Responsibilities { k, values }, loglik))
}

/// `tau_ik ∝ pi_k prod_{l in S} P(x_i^l | Z = k)`, normalized per row.
pub fn e_step(ds: &Dataset, index: &ModelIndex, params: &MixtureParams) -> Result<Responsibilities> {
    e_step_with_loglik(ds, index, params).map(|(r, _)| r)
}

fn normalized(counts: Vec<f64>) -> Vec<f64> {
    let total: f64 = counts.iter().sum();
    counts.into_iter().map(|c| c / total).collect()
}

/// Closed-form maximizer of the expected complete log-likelihood: weighted
/// state counts (allele counts for diploid data) per cluster for the
/// clustering variables, pooled counts for the others.
pub fn m_step(ds: &Dataset, index: &ModelIndex, resp: &Responsibilities) -> Result<MixtureParams> {
    let k = index.k();
    if resp.k() != k || resp.n() != ds.n() {
        return Err(Error::InvalidConfig("responsibilities do not match the model".into()));
    }
    let ploidy = ds.space().ploidy();
    let states = ds.states();
    let vars = index.vars();
    let shared = shared_vars(index, ds.n_variables());

    let mut mass = vec![0.0; k];
    let mut alpha: Vec<Vec<Vec<f64>>> = (0..k)
        .map(|_| vars.iter().map(|&l| vec![0.0; states[l]]).collect())
        .collect();
    let mut beta: Vec<Vec<f64>> = shared.iter().map(|&l| vec![0.0; states[l]]).collect();

    for (x, tau) in ds.observations().zip(resp.rows()) {
        for (c, &w) in tau.iter().enumerate() {
            mass[c] += w;
            if w == 0.0 {
                continue;
            }
            for (s, &l) in vars.iter().enumerate() {
                for &code in &x[l * ploidy..(l + 1) * ploidy] {
                    alpha[c][s][code as usize] += w;
                }
            }
        }
        for (s, &l) in shared.iter().enumerate() {
            for &code in &x[l * ploidy..(l + 1) * ploidy] {
                beta[s][code as usize] += 1.0;
            }
        }
    }
    if let Some(c) = mass.iter().position(|&m| m < EMPTY_CLUSTER_MASS) {
        return Err(Error::EmptyCluster { cluster: c + 1 });
    }
    Ok(MixtureParams {
        pi: normalized(mass),
        alpha: alpha
            .into_iter()
            .map(|rows| rows.into_iter().map(normalized).collect())
            .collect(),
        beta: beta.into_iter().map(normalized).collect(),
    })
}

/// Outcome of iterating EM from one starting point.
#[derive(Clone, Debug)]
pub struct EmRun {
    pub params: MixtureParams,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Iterates EM from `init` for at most `max_iterations` M-steps. The
/// returned parameters are the ones whose log-likelihood ends the trace.
pub fn run_em(
    ds: &Dataset,
    index: &ModelIndex,
    init: MixtureParams,
    max_iterations: usize,
    config: &EmConfig,
) -> Result<EmRun> {
    let mut params = init;
    let mut trace: Vec<f64> = Vec::new();
    let mut last_step = f64::INFINITY;
    let mut iterations = 0;
    loop {
        let (resp, loglik) = e_step_with_loglik(ds, index, &params)?;
        let converged = trace.last().is_some_and(|&prev| {
            let rel = (loglik - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
            rel < config.relative_tolerance && last_step < config.parameter_tolerance
        });
        trace.push(loglik);
        if converged || iterations >= max_iterations {
            return Ok(EmRun {
                params,
                loglik_trace: trace,
                iterations,
                converged,
            });
        }
        let next = m_step(ds, index, &resp)?;
        last_step = next.max_abs_diff(&params);
        params = next;
        iterations += 1;
    }
}

/// Random hard partition with every cluster non-empty (requires `K <= n`).
fn random_partition<R: Rng>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut labels = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        labels[i] = if pos < k { pos } else { rng.gen_range(0..k) };
    }
    labels
}

/// A model fitted by EM together with its diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub index: ModelIndex,
    pub params: MixtureParams,
    /// `-loglik / n` at `params`.
    pub contrast: f64,
    pub dimension: usize,
    pub n: usize,
    pub n_variables: usize,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub n_restarts_used: usize,
    pub failed_restarts: usize,
    pub converged: bool,
    /// Contrast gap between the best and second-best screened restarts.
    pub rho_slack: Option<f64>,
}

impl FittedModel {
    pub fn final_loglik(&self) -> f64 {
        -self.contrast * self.n as f64
    }
}

/// Fits `index` on `ds` with the small-EM restart strategy. Deterministic
/// for a fixed `config.rng_seed`.
pub fn fit(ds: &Dataset, index: &ModelIndex, config: &EmConfig) -> Result<FittedModel> {
    config.validate()?;
    index.check_variables(ds.n_variables())?;
    let k = index.k();
    if k > ds.n() {
        return Err(Error::TooManyClusters { k, n: ds.n() });
    }
    // With a single cluster every start is the same partition.
    let restarts = if k == 1 { 1 } else { config.n_restarts };

    let mut screened: Vec<(usize, EmRun)> = Vec::with_capacity(restarts);
    let mut last_err = None;
    for r in 0..restarts {
        let mut rng = seed::rng(config.rng_seed, &[r as u64]);
        let labels = random_partition(ds.n(), k, &mut rng);
        let run = Responsibilities::hard(k, &labels)
            .and_then(|resp| m_step(ds, index, &resp))
            .and_then(|init| run_em(ds, index, init, config.short_run_iterations, config));
        match run {
            Ok(run) => screened.push((r, run)),
            Err(e) => last_err = Some(e),
        }
    }
    let failed_restarts = restarts - screened.len();
    // Best first; ties go to the earlier restart.
    screened.sort_by(|(ra, a), (rb, b)| {
        let (la, lb) = (a.loglik_trace.last(), b.loglik_trace.last());
        lb.partial_cmp(&la)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(ra.cmp(rb))
    });
    let n = ds.n() as f64;
    let rho_slack = match screened.as_slice() {
        [(_, a), (_, b), ..] => {
            let (la, lb) = (a.loglik_trace[a.loglik_trace.len() - 1], b.loglik_trace[b.loglik_trace.len() - 1]);
            Some((la - lb) / n)
        }
        _ => None,
    };

    for (_, run) in screened {
        let EmRun {
            params,
            mut loglik_trace,
            iterations,
            converged,
        } = run;
        let (params, iterations, converged) = if converged {
            (params, iterations, true)
        } else {
            match run_em(ds, index, params, config.max_iterations, config) {
                Ok(more) => {
                    loglik_trace.extend_from_slice(&more.loglik_trace[1..]);
                    (more.params, iterations + more.iterations, more.converged)
                }
                Err(e) => {
                    last_err = Some(e);
                    continue;
                }
            }
        };
        let loglik = *loglik_trace.last().expect("trace is never empty");
        return Ok(FittedModel {
            index: index.clone(),
            params,
            contrast: -loglik / n,
            dimension: dimension(index, ds.states()),
            n: ds.n(),
            n_variables: ds.n_variables(),
            loglik_trace,
            iterations,
            n_restarts_used: restarts,
            failed_restarts,
            converged,
            rho_slack,
        });
    }
    Err(last_err.unwrap_or(Error::EmptyCluster { cluster: 1 }))
}
