//! Distances between mixture densities and MAP clustering.
//!
//! Exact quantities enumerate the whole product sample space (at most
//! [`MAX_ENUMERATED`] points); larger spaces use the Monte Carlo Hellinger
//! estimator.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CaseKind, Dataset, SampleSpace};
use crate::em::FittedModel;
use crate::error::{Error, Result};
use crate::model::{LogTables, MixtureParams, ModelIndex};
use crate::seed;

/// Largest sample space enumerated exactly.
pub const MAX_ENUMERATED: usize = 1_000_000;

/// A fully specified mixture density over a sample space.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureDensity {
    pub space: SampleSpace,
    pub index: ModelIndex,
    pub params: MixtureParams,
}

impl MixtureDensity {
    pub fn new(space: SampleSpace, index: ModelIndex, params: MixtureParams) -> Result<Self> {
        params.validate(&index, &space)?;
        Ok(Self { space, index, params })
    }

    /// Density of a fitted model on `space`.
    pub fn from_fit(space: &SampleSpace, fitted: &FittedModel) -> Result<Self> {
        Self::new(space.clone(), fitted.index.clone(), fitted.params.clone())
    }

    pub(crate) fn log_tables(&self) -> LogTables {
        LogTables::new(self.space.case_kind, self.space.n_variables(), &self.index, &self.params)
    }

    /// Frequencies of variable `l` in cluster `k`.
    pub fn freqs(&self, k: usize, l: usize) -> &[f64] {
        match self.index.vars().binary_search(&l) {
            Ok(s) => &self.params.alpha[k][s],
            Err(_) => {
                let c = l - self.index.vars().iter().filter(|&&v| v < l).count();
                &self.params.beta[c]
            }
        }
    }

    pub fn log_density(&self, x: &[u16]) -> f64 {
        let mut scratch = vec![0.0; self.index.k()];
        self.log_tables().log_density(x, &mut scratch)
    }

    pub fn sampler(&self) -> Sampler {
        let k = self.index.k();
        let nonzero = |w: &[f64]| WeightedIndex::new(w.iter().copied()).expect("frequencies lie on the simplex");
        Sampler {
            ploidy: self.space.ploidy(),
            clusters: nonzero(&self.params.pi),
            states: (0..k)
                .map(|c| (0..self.space.n_variables()).map(|l| nonzero(self.freqs(c, l))).collect())
                .collect(),
        }
    }
}

/// Draws observations (and their cluster) from a [`MixtureDensity`].
pub struct Sampler {
    ploidy: usize,
    clusters: WeightedIndex<f64>,
    states: Vec<Vec<WeightedIndex<f64>>>,
}

impl Sampler {
    /// Appends one observation's codes to `out` and returns its cluster.
    pub fn sample_into<R: Rng>(&self, rng: &mut R, out: &mut Vec<u16>) -> usize {
        let z = self.clusters.sample(rng);
        for dist in &self.states[z] {
            let a = dist.sample(rng) as u16;
            if self.ploidy == 2 {
                let b = dist.sample(rng) as u16;
                out.extend_from_slice(&[a.min(b), a.max(b)]);
            } else {
                out.push(a);
            }
        }
        z
    }
}

/// Per-variable, per-outcome, per-cluster probabilities of one density.
struct OutcomeTables {
    pi: Vec<f64>,
    /// `[l][g][k]`
    probs: Vec<Vec<Vec<f64>>>,
}

impl OutcomeTables {
    fn new(d: &MixtureDensity) -> Self {
        let k = d.index.k();
        let probs = (0..d.space.n_variables())
            .map(|l| {
                d.space
                    .outcome_codes(l)
                    .into_iter()
                    .map(|[a, b]| {
                        (0..k)
                            .map(|c| {
                                let f = d.freqs(c, l);
                                match d.space.case_kind {
                                    CaseKind::Haploid => f[a as usize],
                                    CaseKind::Diploid => {
                                        let het = if a != b { 2.0 } else { 1.0 };
                                        het * f[a as usize] * f[b as usize]
                                    }
                                }
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self {
            pi: d.params.pi.clone(),
            probs,
        }
    }
}

fn check_enumerable(space: &SampleSpace) -> Result<()> {
    let size = space.size();
    if size > MAX_ENUMERATED as f64 {
        return Err(Error::SpaceTooLarge {
            size,
            limit: MAX_ENUMERATED,
        });
    }
    Ok(())
}

/// Calls `visit` with the density of every member of `densities` at every
/// point of their common sample space.
///
/// Points are visited in odometer order with per-cluster prefix products
/// cached per level, so each point costs about `K` multiplications.
pub fn enumerate_space(densities: &[&MixtureDensity], mut visit: impl FnMut(&[f64])) -> Result<()> {
    let Some(first) = densities.first() else {
        return Ok(());
    };
    let space = &first.space;
    if densities.iter().any(|d| &d.space != space) {
        return Err(Error::InvalidConfig("densities live on different sample spaces".into()));
    }
    check_enumerable(space)?;
    let n_vars = space.n_variables();
    let radix: Vec<usize> = (0..n_vars).map(|l| space.outcomes(l)).collect();
    let tables: Vec<OutcomeTables> = densities.iter().map(|d| OutcomeTables::new(d)).collect();
    // prefix[d][level][k]: pi_k times the product over the first `level` variables
    let mut prefix: Vec<Vec<Vec<f64>>> = tables
        .iter()
        .map(|t| {
            let mut levels = vec![vec![0.0; t.pi.len()]; n_vars + 1];
            levels[0].clone_from(&t.pi);
            levels
        })
        .collect();
    let mut digits = vec![0usize; n_vars];
    let mut values = vec![0.0; densities.len()];
    let mut dirty = 0;
    loop {
        for (t, pre) in tables.iter().zip(prefix.iter_mut()) {
            for l in dirty..n_vars {
                let (head, tail) = pre.split_at_mut(l + 1);
                let row = &t.probs[l][digits[l]];
                for ((out, &p), &f) in tail[0].iter_mut().zip(&head[l]).zip(row) {
                    *out = p * f;
                }
            }
        }
        for (v, pre) in values.iter_mut().zip(&prefix) {
            *v = pre[n_vars].iter().sum();
        }
        visit(&values);
        // advance the odometer, last variable fastest
        let mut l = n_vars;
        loop {
            if l == 0 {
                return Ok(());
            }
            l -= 1;
            digits[l] += 1;
            if digits[l] < radix[l] {
                break;
            }
            digits[l] = 0;
        }
        dirty = l;
    }
}

/// Total mass of `p` over its sample space.
pub fn total_mass(p: &MixtureDensity) -> Result<f64> {
    let mut sum = 0.0;
    enumerate_space(&[p], |v| sum += v[0])?;
    Ok(sum)
}

/// Squared Hellinger distance `sum_x (sqrt p(x) - sqrt q(x))^2`, in `[0, 2]`.
pub fn hellinger_sq_exact(p: &MixtureDensity, q: &MixtureDensity) -> Result<f64> {
    let mut sum = 0.0;
    enumerate_space(&[p, q], |v| {
        let d = v[0].sqrt() - v[1].sqrt();
        sum += d * d;
    })?;
    Ok(sum)
}

/// Squared Hellinger distances from `truth` to every candidate, in one pass
/// over the space.
pub fn hellinger_sq_exact_many(truth: &MixtureDensity, candidates: &[&MixtureDensity]) -> Result<Vec<f64>> {
    let mut all: Vec<&MixtureDensity> = vec![truth];
    all.extend_from_slice(candidates);
    let mut sums = vec![0.0; candidates.len()];
    enumerate_space(&all, |v| {
        let root = v[0].sqrt();
        for (s, &q) in sums.iter_mut().zip(&v[1..]) {
            let d = root - q.sqrt();
            *s += d * d;
        }
    })?;
    Ok(sums)
}

/// `sum_x p(x) ln(p(x) / q(x))`, `+inf` when `q` misses mass of `p`.
pub fn kl_exact(p: &MixtureDensity, q: &MixtureDensity) -> Result<f64> {
    let mut sum = 0.0;
    enumerate_space(&[p, q], |v| {
        if v[0] > 0.0 {
            sum += if v[1] > 0.0 {
                v[0] * (v[0] / v[1]).ln()
            } else {
                f64::INFINITY
            };
        }
    })?;
    Ok(sum)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    /// Estimate clipped to `[0, 2]`.
    pub estimate: f64,
    pub raw: f64,
    pub std_error: f64,
    pub draws: usize,
}

/// Monte Carlo estimate of `2 - 2 E_p[sqrt(q(X) / p(X))]`.
pub fn hellinger_sq_mc(p: &MixtureDensity, q: &MixtureDensity, n_draws: usize, seed: u64) -> Result<McEstimate> {
    if p.space != q.space {
        return Err(Error::InvalidConfig("densities live on different sample spaces".into()));
    }
    if n_draws < 2 {
        return Err(Error::InvalidConfig("at least two Monte Carlo draws are needed".into()));
    }
    let mut rng = seed::rng(seed, &[]);
    let sampler = p.sampler();
    let (tp, tq) = (p.log_tables(), q.log_tables());
    let mut scratch = vec![0.0; p.index.k().max(q.index.k())];
    let mut x = Vec::with_capacity(p.space.n_variables() * p.space.ploidy());
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n_draws {
        x.clear();
        sampler.sample_into(&mut rng, &mut x);
        let lp = tp.log_density(&x, &mut scratch[..p.index.k()]);
        let lq = tq.log_density(&x, &mut scratch[..q.index.k()]);
        let ratio = (0.5 * (lq - lp)).exp();
        sum += ratio;
        sum_sq += ratio * ratio;
    }
    let m = n_draws as f64;
    let mean = sum / m;
    let var = ((sum_sq - m * mean * mean) / (m - 1.0)).max(0.0);
    let raw = 2.0 - 2.0 * mean;
    Ok(McEstimate {
        estimate: raw.clamp(0.0, 2.0),
        raw,
        std_error: 2.0 * (var / m).sqrt(),
        draws: n_draws,
    })
}

/// Squared Hellinger distance, exact when the space is small enough and
/// Monte Carlo otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HellingerValue {
    pub value: f64,
    /// `None` for exact values.
    pub std_error: Option<f64>,
}

pub fn hellinger_sq(p: &MixtureDensity, q: &MixtureDensity, mc_draws: usize, seed: u64) -> Result<HellingerValue> {
    if p.space.size() <= MAX_ENUMERATED as f64 {
        Ok(HellingerValue {
            value: hellinger_sq_exact(p, q)?,
            std_error: None,
        })
    } else {
        let mc = hellinger_sq_mc(p, q, mc_draws, seed)?;
        Ok(HellingerValue {
            value: mc.estimate,
            std_error: Some(mc.std_error),
        })
    }
}

/// MAP cluster of every row (zero-based); `None` when every component gives
/// the row zero density. Ties go to the smallest cluster.
pub fn map_classify(ds: &Dataset, index: &ModelIndex, params: &MixtureParams) -> Vec<Option<usize>> {
    let tables = LogTables::new(ds.case_kind(), ds.n_variables(), index, params);
    let mut terms = vec![0.0; index.k()];
    ds.observations()
        .map(|x| {
            tables.component_terms(x, &mut terms);
            let mut best: Option<(usize, f64)> = None;
            for (k, &t) in terms.iter().enumerate() {
                if t > f64::NEG_INFINITY && best.is_none_or(|(_, b)| t > b) {
                    best = Some((k, t));
                }
            }
            best.map(|(k, _)| k)
        })
        .collect()
}

/// Fraction of rows whose predicted cluster matches the true one under the
/// best relabeling of predicted clusters. Unclassifiable rows never match.
pub fn best_permutation_agreement(predicted: &[Option<usize>], truth: &[usize]) -> f64 {
    assert_eq!(predicted.len(), truth.len());
    if truth.is_empty() {
        return 1.0;
    }
    let kp = predicted.iter().flatten().max().map_or(0, |&k| k + 1);
    let kt = truth.iter().max().map_or(0, |&k| k + 1);
    let m = kp.max(kt);
    let mut table = vec![vec![0usize; m]; m];
    for (p, &t) in predicted.iter().zip(truth) {
        if let Some(p) = p {
            table[*p][t] += 1;
        }
    }
    let mut perm: Vec<usize> = (0..m).collect();
    let mut best = 0;
    permute(&mut perm, 0, &mut |perm| {
        let score = perm.iter().enumerate().map(|(p, &t)| table[p][t]).sum();
        best = best.max(score);
    });
    best as f64 / truth.len() as f64
}

fn permute(v: &mut [usize], at: usize, f: &mut impl FnMut(&[usize])) {
    if at == v.len() {
        f(v);
        return;
    }
    for i in at..v.len() {
        v.swap(at, i);
        permute(v, at + 1, f);
        v.swap(at, i);
    }
}
