//! Mixture models `M_(K,S)`: indices, parameters, exact densities and the
//! dimension / complexity arithmetic used by the penalties.
//!
//! For an observation `x` the density is
//!
//! ```text
//! P(x) = [ sum_k pi_k prod_{l in S} P(x^l | alpha_{k,l}) ] * prod_{l not in S} P(x^l | beta_l)
//! ```
//!
//! with `P(x^l | f) = f[x^l]` for haploid data and
//! `P({a,b} | f) = (2 - 1{a=b}) f[a] f[b]` for diploid genotypes.

use std::f64::consts::{E, LN_2, PI};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{CaseKind, Dataset, SampleSpace};
use crate::error::{Error, Result};

/// Simplex tolerance for every frequency vector.
pub const SIMPLEX_TOL: f64 = 1e-10;

/// A model `(K, S)`: cluster count and the sorted, zero-based clustering
/// variables. `K = 1` forces `S` empty and `K >= 2` forces `S` non-empty.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "IndexRepr", into = "IndexRepr")]
pub struct ModelIndex {
    k: usize,
    vars: Vec<usize>,
}

/// External form of a model index: variables are one-based.
#[derive(Serialize, Deserialize)]
struct IndexRepr {
    k: usize,
    s: Vec<usize>,
}

impl TryFrom<IndexRepr> for ModelIndex {
    type Error = Error;

    fn try_from(r: IndexRepr) -> Result<Self> {
        if r.s.contains(&0) {
            return Err(Error::InvalidIndex("variables are numbered from 1".into()));
        }
        ModelIndex::new(r.k, r.s.into_iter().map(|l| l - 1).collect())
    }
}

impl From<ModelIndex> for IndexRepr {
    fn from(m: ModelIndex) -> Self {
        IndexRepr {
            k: m.k,
            s: m.vars.iter().map(|l| l + 1).collect(),
        }
    }
}

impl ModelIndex {
    pub fn new(k: usize, mut vars: Vec<usize>) -> Result<Self> {
        vars.sort_unstable();
        vars.dedup();
        match (k, vars.is_empty()) {
            (0, _) => Err(Error::InvalidIndex("K must be at least 1".into())),
            (1, false) => Err(Error::InvalidIndex("K = 1 requires S to be empty".into())),
            (k, true) if k >= 2 => Err(Error::InvalidIndex(format!(
                "K = {k} requires a non-empty S"
            ))),
            _ => Ok(Self { k, vars }),
        }
    }

    /// The single-cluster model `(1, {})`.
    pub fn single() -> Self {
        Self { k: 1, vars: Vec::new() }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn vars(&self) -> &[usize] {
        &self.vars
    }

    pub fn contains(&self, l: usize) -> bool {
        self.vars.binary_search(&l).is_ok()
    }

    pub fn check_variables(&self, n_variables: usize) -> Result<()> {
        match self.vars.last() {
            Some(&l) if l >= n_variables => Err(Error::InvalidIndex(format!(
                "variable {} out of range 1..={n_variables}",
                l + 1
            ))),
            _ => Ok(()),
        }
    }

    /// Bit mask of `S`, used as a task key.
    pub fn var_mask(&self) -> u64 {
        self.vars.iter().fold(0u64, |m, &l| m | (1u64 << (l % 64)))
    }

    /// Every model of the collection with `K <= k_max` over `n_variables`.
    pub fn collection(k_max: usize, n_variables: usize) -> Vec<ModelIndex> {
        let mut out = vec![ModelIndex::single()];
        for k in 2..=k_max {
            for mask in 1u64..(1u64 << n_variables) {
                let vars = (0..n_variables).filter(|l| mask & (1 << l) != 0).collect();
                out.push(ModelIndex { k, vars });
            }
        }
        out
    }
}

/// `1 + (K_max - 1)(2^L - 1)`.
pub fn collection_size(k_max: usize, n_variables: usize) -> usize {
    let subsets = 1usize
        .checked_shl(n_variables as u32)
        .map_or(usize::MAX, |p| p - 1);
    k_max
        .saturating_sub(1)
        .saturating_mul(subsets)
        .saturating_add(1)
}

impl fmt::Display for ModelIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "K={} S={{", self.k)?;
        for (i, l) in self.vars.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}", l + 1)?;
        }
        f.write_str("}")
    }
}

/// `theta = (pi, alpha, beta)`.
///
/// `alpha[k][s][j]` is the frequency of state `j` of the `s`-th clustering
/// variable (in `S` order) in cluster `k`; `beta[c][j]` the shared frequency
/// of the `c`-th non-clustering variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub pi: Vec<f64>,
    pub alpha: Vec<Vec<Vec<f64>>>,
    pub beta: Vec<Vec<f64>>,
}

fn check_simplex(v: &[f64], what: impl Fn() -> String) -> Result<()> {
    let sum: f64 = v.iter().sum();
    if v.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidParams(format!("{} is not on the simplex", what())));
    }
    Ok(())
}

impl MixtureParams {
    /// Checks shapes against `(index, space)` and the simplex constraints.
    pub fn validate(&self, index: &ModelIndex, space: &SampleSpace) -> Result<()> {
        index.check_variables(space.n_variables())?;
        let shared = shared_vars(index, space.n_variables());
        if self.pi.len() != index.k() || self.alpha.len() != index.k() {
            return Err(Error::InvalidParams(format!(
                "expected {} clusters",
                index.k()
            )));
        }
        check_simplex(&self.pi, || "pi".into())?;
        for (k, rows) in self.alpha.iter().enumerate() {
            if rows.len() != index.vars().len() {
                return Err(Error::InvalidParams(format!(
                    "cluster {} has {} clustering variables, expected {}",
                    k + 1,
                    rows.len(),
                    index.vars().len()
                )));
            }
            for (row, &l) in rows.iter().zip(index.vars()) {
                if row.len() != space.states[l] {
                    return Err(Error::InvalidParams(format!(
                        "alpha[{}][{}] has {} states, expected {}",
                        k + 1,
                        l + 1,
                        row.len(),
                        space.states[l]
                    )));
                }
                check_simplex(row, || format!("alpha[{}][{}]", k + 1, l + 1))?;
            }
        }
        if self.beta.len() != shared.len() {
            return Err(Error::InvalidParams(format!(
                "expected {} shared variables",
                shared.len()
            )));
        }
        for (row, &l) in self.beta.iter().zip(&shared) {
            if row.len() != space.states[l] {
                return Err(Error::InvalidParams(format!(
                    "beta[{}] has {} states, expected {}",
                    l + 1,
                    row.len(),
                    space.states[l]
                )));
            }
            check_simplex(row, || format!("beta[{}]", l + 1))?;
        }
        Ok(())
    }

    /// Uniform frequencies and equal weights.
    pub fn uniform(index: &ModelIndex, space: &SampleSpace) -> Self {
        let flat = |a: usize| vec![1.0 / a as f64; a];
        let k = index.k();
        Self {
            pi: vec![1.0 / k as f64; k],
            alpha: (0..k)
                .map(|_| index.vars().iter().map(|&l| flat(space.states[l])).collect())
                .collect(),
            beta: shared_vars(index, space.n_variables())
                .into_iter()
                .map(|l| flat(space.states[l]))
                .collect(),
        }
    }

    /// Relabels clusters: new cluster `c` is old cluster `perm[c]`.
    pub fn permute_clusters(&self, perm: &[usize]) -> Self {
        Self {
            pi: perm.iter().map(|&c| self.pi[c]).collect(),
            alpha: perm.iter().map(|&c| self.alpha[c].clone()).collect(),
            beta: self.beta.clone(),
        }
    }

    /// Largest absolute coordinate difference between two same-shaped
    /// parameter sets.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let d = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        };
        let mut m = d(&self.pi, &other.pi);
        for (a, b) in self.alpha.iter().zip(&other.alpha) {
            for (x, y) in a.iter().zip(b) {
                m = m.max(d(x, y));
            }
        }
        for (x, y) in self.beta.iter().zip(&other.beta) {
            m = m.max(d(x, y));
        }
        m
    }
}

/// Non-clustering variables of `index`, ascending.
pub fn shared_vars(index: &ModelIndex, n_variables: usize) -> Vec<usize> {
    (0..n_variables).filter(|&l| !index.contains(l)).collect()
}

fn ln(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// `ln sum exp(terms)` with the terms sorted first, so the value does not
/// depend on the order the components were listed in.
pub(crate) fn log_sum_exp_sorted(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(|a, b| b.total_cmp(a));
    let max = match terms.first() {
        Some(&m) if m > f64::NEG_INFINITY => m,
        _ => return f64::NEG_INFINITY,
    };
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    max + sum.ln()
}

/// Log-frequency tables of one parameter set, for fast repeated evaluation.
pub(crate) struct LogTables {
    diploid: bool,
    log_pi: Vec<f64>,
    /// `(l, ln alpha[k][..])` for every clustering variable, per cluster.
    clustering: Vec<(usize, Vec<Vec<f64>>)>,
    shared: Vec<(usize, Vec<f64>)>,
}

impl LogTables {
    pub(crate) fn new(case_kind: CaseKind, n_variables: usize, index: &ModelIndex, params: &MixtureParams) -> Self {
        let logs = |v: &[f64]| v.iter().copied().map(ln).collect::<Vec<_>>();
        let clustering = index
            .vars()
            .iter()
            .enumerate()
            .map(|(s, &l)| (l, params.alpha.iter().map(|a| logs(&a[s])).collect()))
            .collect();
        let shared = shared_vars(index, n_variables)
            .into_iter()
            .zip(&params.beta)
            .map(|(l, b)| (l, logs(b)))
            .collect();
        Self {
            diploid: case_kind == CaseKind::Diploid,
            log_pi: logs(&params.pi),
            clustering,
            shared,
        }
    }

    pub(crate) fn k(&self) -> usize {
        self.log_pi.len()
    }

    #[inline]
    fn factor(&self, table: &[f64], x: &[u16], l: usize) -> f64 {
        if self.diploid {
            let (a, b) = (x[2 * l] as usize, x[2 * l + 1] as usize);
            let het = if a != b { LN_2 } else { 0.0 };
            het + table[a] + table[b]
        } else {
            table[x[l] as usize]
        }
    }

    /// `ln pi_k + sum_{l in S} ln P(x^l | Z = k)` for every `k`.
    pub(crate) fn component_terms(&self, x: &[u16], out: &mut [f64]) {
        for (k, slot) in out.iter_mut().enumerate() {
            let mut t = self.log_pi[k];
            for (l, tables) in &self.clustering {
                t += self.factor(&tables[k], x, *l);
            }
            *slot = t;
        }
    }

    /// `sum_{l not in S} ln P(x^l | beta_l)`.
    pub(crate) fn shared_term(&self, x: &[u16]) -> f64 {
        self.shared
            .iter()
            .map(|(l, table)| self.factor(table, x, *l))
            .sum()
    }

    pub(crate) fn log_density(&self, x: &[u16], scratch: &mut [f64]) -> f64 {
        self.component_terms(x, scratch);
        let mix = log_sum_exp_sorted(scratch);
        if mix == f64::NEG_INFINITY {
            return mix;
        }
        mix + self.shared_term(x)
    }
}

/// `ln P_(K,S,theta)(x)` for one observation given as zero-based codes
/// (`L * ploidy` entries, diploid pairs in either order).
pub fn log_density(space: &SampleSpace, x: &[u16], index: &ModelIndex, params: &MixtureParams) -> f64 {
    let tables = LogTables::new(space.case_kind, space.n_variables(), index, params);
    let mut scratch = vec![0.0; index.k()];
    tables.log_density(x, &mut scratch)
}

/// `P_(K,S,theta)(x)`; zero when a required frequency is zero.
pub fn density(space: &SampleSpace, x: &[u16], index: &ModelIndex, params: &MixtureParams) -> f64 {
    log_density(space, x, index, params).exp()
}

/// `sum_i ln P(X_i)`; `-inf` as soon as one observation has zero density.
pub fn log_likelihood(ds: &Dataset, index: &ModelIndex, params: &MixtureParams) -> f64 {
    let tables = LogTables::new(ds.case_kind(), ds.n_variables(), index, params);
    let mut scratch = vec![0.0; index.k()];
    ds.observations()
        .map(|x| tables.log_density(x, &mut scratch))
        .sum()
}

/// Log-likelihood contrast `gamma_n = -loglik / n`.
pub fn contrast(ds: &Dataset, index: &ModelIndex, params: &MixtureParams) -> f64 {
    -log_likelihood(ds, index, params) / ds.n() as f64
}

/// Number of free parameters
/// `D = K - 1 + K sum_{l in S} (A_l - 1) + sum_{l not in S} (A_l - 1)`.
pub fn dimension(index: &ModelIndex, states: &[usize]) -> usize {
    let k = index.k();
    let clustering: usize = index.vars().iter().map(|&l| states[l] - 1).sum();
    let total: usize = states.iter().map(|a| a - 1).sum();
    k - 1 + k * clustering + (total - clustering)
}

/// The complexity constant `C_(K,S)` bounding the bracketing entropy of a
/// model.
pub fn complexity_constant(index: &ModelIndex, states: &[usize]) -> f64 {
    let k = index.k() as f64;
    let multi = if index.k() >= 2 { 1.0 } else { 0.0 };
    let d = dimension(index, states) as f64;
    let l = states.len() as f64;
    let s = index.vars().len() as f64;
    let log_states: f64 = states.iter().map(|&a| (a as f64 + 1.0).ln()).sum();
    let log_states_s: f64 = index
        .vars()
        .iter()
        .map(|&l| (states[l] as f64 + 1.0).ln())
        .sum();
    0.5 * ((2.0 * PI * E).ln() * d
        + (4.0 * PI * E).ln() * (multi + l + (k - 1.0) * s)
        + multi * (k + 1.0).ln()
        + log_states
        + (k - 1.0) * log_states_s)
}

/// The constant `xi` of the risk bound.
pub fn xi_constant(case_kind: CaseKind, n_variables: usize, max_states: usize) -> f64 {
    let l = n_variables as f64;
    let numerator = 4.0 * (max_states as f64).sqrt() * l.sqrt();
    let denominator = match case_kind {
        CaseKind::Haploid => 2f64.powf(l + 1.0) - 1.0,
        CaseKind::Diploid => 2.0 * (1.0 + 3.0 * 2f64.sqrt()).powf(l) - 1.0,
    };
    numerator / denominator
}

/// Whether the bound applies: `xi < 1` or `n > xi^2 K`.
pub fn theorem_precondition(n: usize, k: usize, xi: f64) -> bool {
    xi < 1.0 || (n as f64) > xi * xi * k as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space(case: CaseKind, states: &[usize]) -> SampleSpace {
        SampleSpace::new(case, states.to_vec()).unwrap()
    }

    #[test]
    fn index_constraint() {
        assert!(ModelIndex::new(1, vec![0]).is_err());
        assert!(ModelIndex::new(2, vec![]).is_err());
        assert!(ModelIndex::new(0, vec![]).is_err());
        let m = ModelIndex::new(3, vec![2, 0, 2]).unwrap();
        assert_eq!(m.vars(), &[0, 2]);
        assert_eq!(m.to_string(), "K=3 S={1,3}");
    }

    #[test]
    fn index_json_is_one_based() {
        let m = ModelIndex::new(2, vec![0, 3]).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"{"k":2,"s":[1,4]}"#);
        assert_eq!(serde_json::from_str::<ModelIndex>(&json).unwrap(), m);
        assert!(serde_json::from_str::<ModelIndex>(r#"{"k":2,"s":[0]}"#).is_err());
    }

    #[test]
    fn hardy_weinberg_factor() {
        let sp = space(CaseKind::Diploid, &[2]);
        let m = ModelIndex::single();
        let p = MixtureParams::uniform(&m, &sp);
        assert!((density(&sp, &[0, 0], &m, &p) - 0.25).abs() < 1e-15);
        assert!((density(&sp, &[0, 1], &m, &p) - 0.5).abs() < 1e-15);
        assert_eq!(density(&sp, &[1, 0], &m, &p), density(&sp, &[0, 1], &m, &p));
    }

    #[test]
    fn uniform_haploid_product() {
        let sp = space(CaseKind::Haploid, &[2, 2, 2]);
        let m = ModelIndex::single();
        let p = MixtureParams::uniform(&m, &sp);
        for x in [[0, 0, 0], [1, 0, 1], [1, 1, 1]] {
            assert!((density(&sp, &x, &m, &p) - 0.125).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_weight_gives_pure_component() {
        let sp = space(CaseKind::Haploid, &[2, 3]);
        let m = ModelIndex::new(2, vec![0, 1]).unwrap();
        let p = MixtureParams {
            pi: vec![1.0, 0.0],
            alpha: vec![
                vec![vec![0.3, 0.7], vec![0.2, 0.5, 0.3]],
                vec![vec![0.9, 0.1], vec![0.1, 0.1, 0.8]],
            ],
            beta: vec![],
        };
        p.validate(&m, &sp).unwrap();
        for a in 0..2u16 {
            for b in 0..3u16 {
                let want = p.alpha[0][0][a as usize] * p.alpha[0][1][b as usize];
                assert!((density(&sp, &[a, b], &m, &p) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_frequency_gives_zero_density_and_infinite_contrast() {
        let sp = space(CaseKind::Haploid, &[2]);
        let m = ModelIndex::single();
        let p = MixtureParams {
            pi: vec![1.0],
            alpha: vec![vec![]],
            beta: vec![vec![1.0, 0.0]],
        };
        assert_eq!(density(&sp, &[1], &m, &p), 0.0);
        let ds = Dataset::from_codes(sp, vec![0, 1], None).unwrap();
        assert_eq!(contrast(&ds, &m, &p), f64::INFINITY);
    }

    #[test]
    fn contrast_is_a_per_observation_average() {
        let sp = space(CaseKind::Diploid, &[2]);
        let m = ModelIndex::single();
        let p = MixtureParams::uniform(&m, &sp);
        let one = Dataset::from_codes(sp.clone(), vec![0, 0], None).unwrap();
        assert!((log_likelihood(&one, &m, &p) - 0.25f64.ln()).abs() < 1e-15);
        assert!((contrast(&one, &m, &p) + 0.25f64.ln()).abs() < 1e-15);
        let ds = Dataset::from_codes(sp.clone(), vec![0, 0, 0, 1, 1, 1], None).unwrap();
        let twice = Dataset::from_codes(sp, vec![0, 0, 0, 1, 1, 1, 0, 0, 0, 1, 1, 1], None).unwrap();
        assert!((contrast(&ds, &m, &p) - contrast(&twice, &m, &p)).abs() < 1e-15);
    }

    #[test]
    fn validate_rejects_off_simplex() {
        let sp = space(CaseKind::Haploid, &[2, 2]);
        let m = ModelIndex::new(2, vec![1]).unwrap();
        let mut p = MixtureParams::uniform(&m, &sp);
        p.validate(&m, &sp).unwrap();
        p.alpha[1][0] = vec![0.5, 0.6];
        assert!(p.validate(&m, &sp).is_err());
        let mut p = MixtureParams::uniform(&m, &sp);
        p.beta.clear();
        assert!(p.validate(&m, &sp).is_err());
    }

    #[test]
    fn dimension_examples() {
        let m = ModelIndex::new(3, (0..5).collect()).unwrap();
        assert_eq!(dimension(&m, &[3; 6]), 34);
        assert_eq!(dimension(&ModelIndex::single(), &[3; 6]), 12);
        let m = ModelIndex::new(5, (0..8).collect()).unwrap();
        assert_eq!(dimension(&m, &[10; 10]), 382);
    }

    #[test]
    fn complexity_constant_single_variable() {
        let c = complexity_constant(&ModelIndex::single(), &[2]);
        let want = 0.5 * ((2.0 * PI * E).ln() + (4.0 * PI * E).ln() + 3f64.ln());
        assert!((c - want).abs() < 1e-14);
    }

    #[test]
    fn complexity_increases_with_states() {
        let m = ModelIndex::new(3, vec![0, 2]).unwrap();
        let base = [3, 4, 2, 5];
        let c0 = complexity_constant(&m, &base);
        for l in 0..base.len() {
            let mut more = base;
            more[l] += 1;
            assert!(complexity_constant(&m, &more) > c0);
        }
    }

    #[test]
    fn xi_examples() {
        let xi = xi_constant(CaseKind::Haploid, 10, 10);
        assert!((xi - 40.0 / 2047.0).abs() < 1e-15);
        assert!((xi - 0.019541).abs() < 1e-6);
        let xi = xi_constant(CaseKind::Haploid, 1, 2);
        assert!((xi - 4.0 * 2f64.sqrt() / 3.0).abs() < 1e-15);
        assert!(!theorem_precondition(3, 1, xi));
        assert!(theorem_precondition(4, 1, xi));
        for case in [CaseKind::Haploid, CaseKind::Diploid] {
            for l in 2..20 {
                assert!(xi_constant(case, l + 1, 10) < xi_constant(case, l, 10));
            }
        }
    }

    #[test]
    fn collection_counts() {
        assert_eq!(collection_size(10, 10), 9208);
        assert_eq!(ModelIndex::collection(3, 3).len(), 15);
        assert_eq!(ModelIndex::collection(5, 6).len(), 253);
        assert_eq!(ModelIndex::collection(2, 1).len(), 2);
    }
}
