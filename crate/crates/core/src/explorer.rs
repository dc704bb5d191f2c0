//! Gathering a sub-collection of competitive models.
//!
//! The full collection has `1 + (K_max - 1)(2^L - 1)` models, far too many
//! to fit in general. For each `K` and each penalty of a `lambda` grid, a
//! backward stepwise search over `S` (optionally followed by a forward
//! pass) records every model it fits; the union is the explored pool.
//! Fits are cached, so a `(K, S)` seen under several penalties is fitted
//! once.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::{select_under_penalty, Penalty};
use crate::data::Dataset;
use crate::em::{fit, EmConfig, FittedModel};
use crate::error::{Error, Result};
use crate::model::{collection_size, ModelIndex};
use crate::seed;

/// Uniform grid `lo = lambda_1 < ... < lambda_r = hi`.
pub fn uniform_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if count < 2 {
        return Err(Error::InvalidConfig("a lambda grid needs at least 2 points".into()));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidConfig(format!("invalid lambda range {lo}..{hi}")));
    }
    let step = (hi - lo) / (count - 1) as f64;
    let mut grid: Vec<f64> = (0..count).map(|i| lo + step * i as f64).collect();
    grid[count - 1] = hi;
    Ok(grid)
}

/// Grid endpoints and size; missing endpoints default to `1/2` and `ln n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub count: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lo: None,
            hi: None,
            count: 50,
        }
    }
}

impl GridSpec {
    pub fn resolve(&self, n: usize) -> Result<Vec<f64>> {
        uniform_grid(
            self.lo.unwrap_or(0.5),
            self.hi.unwrap_or((n as f64).ln()),
            self.count,
        )
    }
}

impl std::str::FromStr for GridSpec {
    type Err = Error;

    /// `"lo:hi:count"`; either endpoint may be left empty for its default.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("grid {s:?} is not lo:hi:count"));
        let parts: Vec<&str> = s.split(':').collect();
        let [lo, hi, count] = parts.as_slice() else {
            return Err(bad());
        };
        let end = |p: &str| -> Result<Option<f64>> {
            if p.trim().is_empty() {
                Ok(None)
            } else {
                p.trim().parse().map(Some).map_err(|_| bad())
            }
        };
        Ok(Self {
            lo: end(lo)?,
            hi: end(hi)?,
            count: count.trim().parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorerConfig {
    pub k_max: usize,
    pub grid: GridSpec,
    pub enable_forward: bool,
    /// EM settings; `rng_seed` is the root of every per-model seed.
    pub em: EmConfig,
    /// Largest number of fits the exhaustive mode may run.
    pub exhaustive_budget: usize,
}

impl Default for ExplorerConfig {
    fn default() -> Self {
        Self {
            k_max: 5,
            grid: GridSpec::default(),
            enable_forward: true,
            em: EmConfig::default(),
            exhaustive_budget: 10_000,
        }
    }
}

impl ExplorerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_max == 0 {
            return Err(Error::InvalidConfig("K_max must be at least 1".into()));
        }
        if self.grid.count < 2 {
            return Err(Error::InvalidConfig("a lambda grid needs at least 2 points".into()));
        }
        self.em.validate()
    }
}

/// Fits `index` with a seed derived from the root seed and the model
/// itself, so a model gets the same fit whichever search reaches it.
pub fn fit_seeded(ds: &Dataset, index: &ModelIndex, em: &EmConfig) -> Result<FittedModel> {
    let config = EmConfig {
        rng_seed: seed::derive(em.rng_seed, &[index.k() as u64, index.var_mask()]),
        ..em.clone()
    };
    fit(ds, index, &config)
}

/// Fitted models keyed by index, first writer wins.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelPool {
    fits: BTreeMap<ModelIndex, FittedModel>,
    failures: BTreeMap<ModelIndex, String>,
    provenance: BTreeMap<ModelIndex, String>,
}

impl ModelPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_fits(fits: impl IntoIterator<Item = FittedModel>) -> Self {
        let mut pool = Self::new();
        for f in fits {
            pool.insert(f.index.clone(), Ok(f), "external");
        }
        pool
    }

    /// Records a fit outcome unless the index is already present.
    pub fn insert(&mut self, index: ModelIndex, outcome: Result<FittedModel>, source: &str) {
        if self.contains(&index) {
            return;
        }
        self.provenance.insert(index.clone(), source.to_string());
        match outcome {
            Ok(f) => {
                self.fits.insert(index, f);
            }
            Err(e) => {
                self.failures.insert(index, e.to_string());
            }
        }
    }

    pub fn contains(&self, index: &ModelIndex) -> bool {
        self.fits.contains_key(index) || self.failures.contains_key(index)
    }

    pub fn get(&self, index: &ModelIndex) -> Option<&FittedModel> {
        self.fits.get(index)
    }

    /// Successful fits in index order.
    pub fn fits(&self) -> impl Iterator<Item = &FittedModel> + Clone {
        self.fits.values()
    }

    pub fn failures(&self) -> &BTreeMap<ModelIndex, String> {
        &self.failures
    }

    pub fn provenance(&self, index: &ModelIndex) -> Option<&str> {
        self.provenance.get(index).map(String::as_str)
    }

    /// Number of successful fits.
    pub fn len(&self) -> usize {
        self.fits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fits.is_empty()
    }

    pub fn merge(&mut self, other: ModelPool) {
        let ModelPool {
            fits,
            failures,
            mut provenance,
        } = other;
        for (index, f) in fits {
            let source = provenance.remove(&index).unwrap_or_default();
            self.insert(index, Ok(f), &source);
        }
        for (index, e) in failures {
            if !self.contains(&index) {
                let source = provenance.remove(&index).unwrap_or_default();
                self.provenance.insert(index.clone(), source);
                self.failures.insert(index, e);
            }
        }
    }

    /// Fits every candidate not yet in the pool, in parallel.
    fn ensure(&mut self, ds: &Dataset, candidates: &[ModelIndex], em: &EmConfig, source: &str) {
        let missing: Vec<&ModelIndex> = candidates.iter().filter(|m| !self.contains(m)).collect();
        let outcomes: Vec<Result<FittedModel>> = missing
            .par_iter()
            .map(|m| fit_seeded(ds, m, em))
            .collect();
        for (m, outcome) in missing.into_iter().zip(outcomes) {
            self.insert(m.clone(), outcome, source);
        }
    }

    fn best_of(&self, candidates: &[ModelIndex], penalty: &Penalty) -> Option<ModelIndex> {
        let fitted = candidates.iter().filter_map(|m| self.fits.get(m));
        select_under_penalty(fitted, penalty).ok().map(|f| f.index.clone())
    }

    fn into_result(self) -> Result<Self> {
        if self.fits.is_empty() {
            let reason = self
                .failures
                .values()
                .next()
                .cloned()
                .unwrap_or_else(|| "no models".into());
            return Err(Error::AllFitsFailed(reason));
        }
        Ok(self)
    }
}

fn with_var(k: usize, vars: &[usize], extra: usize) -> ModelIndex {
    let mut v = vars.to_vec();
    v.push(extra);
    ModelIndex::new(k, v).expect("non-empty S")
}

fn without_var(k: usize, vars: &[usize], drop: usize) -> ModelIndex {
    let v = vars.iter().copied().filter(|&l| l != drop).collect();
    ModelIndex::new(k, v).expect("S keeps at least one variable")
}

/// Stepwise search over `S` for a fixed `K` under `penalty`. Every fitted
/// model lands in `pool`; the returned list holds every model encountered.
pub fn explore_k(
    ds: &Dataset,
    k: usize,
    penalty: &Penalty,
    config: &ExplorerConfig,
    pool: &mut ModelPool,
) -> Result<Vec<ModelIndex>> {
    let tag = format!("explorer K={k} {penalty:?}");
    if k == 0 {
        return Err(Error::InvalidConfig("K must be at least 1".into()));
    }
    if k == 1 {
        let single = vec![ModelIndex::single()];
        pool.ensure(ds, &single, &config.em, &tag);
        return Ok(single);
    }
    let n_vars = ds.n_variables();
    let mut seen: Vec<ModelIndex> = Vec::new();

    let full = ModelIndex::new(k, (0..n_vars).collect())?;
    pool.ensure(ds, std::slice::from_ref(&full), &config.em, &tag);
    seen.push(full.clone());
    let mut current = full;
    while current.vars().len() > 1 {
        let candidates: Vec<ModelIndex> = current
            .vars()
            .iter()
            .map(|&l| without_var(k, current.vars(), l))
            .collect();
        pool.ensure(ds, &candidates, &config.em, &tag);
        let best = pool.best_of(&candidates, penalty);
        seen.extend(candidates);
        match best {
            Some(b) => current = b,
            None => break,
        }
    }

    if config.enable_forward {
        let singles: Vec<ModelIndex> = (0..n_vars)
            .map(|l| ModelIndex::new(k, vec![l]).expect("singleton"))
            .collect();
        pool.ensure(ds, &singles, &config.em, &tag);
        let mut current = pool.best_of(&singles, penalty);
        seen.extend(singles);
        while let Some(cur) = current.filter(|c| c.vars().len() < n_vars) {
            let candidates: Vec<ModelIndex> = (0..n_vars)
                .filter(|&l| !cur.contains(l))
                .map(|l| with_var(k, cur.vars(), l))
                .collect();
            pool.ensure(ds, &candidates, &config.em, &tag);
            current = pool.best_of(&candidates, penalty);
            seen.extend(candidates);
        }
    }
    seen.sort();
    seen.dedup();
    Ok(seen)
}

/// Union of `explore_k` over `K = 1..=K_max` and every grid penalty.
pub fn build_pool(ds: &Dataset, config: &ExplorerConfig) -> Result<ModelPool> {
    config.validate()?;
    let grid = config.grid.resolve(ds.n())?;
    let per_k: Vec<Result<ModelPool>> = (1..=config.k_max)
        .into_par_iter()
        .map(|k| {
            let mut pool = ModelPool::new();
            for &lambda in &grid {
                explore_k(ds, k, &Penalty::RawLambda { lambda }, config, &mut pool)?;
            }
            Ok(pool)
        })
        .collect();
    let mut pool = ModelPool::new();
    for p in per_k {
        pool.merge(p?);
    }
    pool.into_result()
}

/// Fits every model with `K <= K_max`.
pub fn exhaustive_pool(ds: &Dataset, k_max: usize, config: &ExplorerConfig) -> Result<ModelPool> {
    config.em.validate()?;
    let models = collection_size(k_max, ds.n_variables());
    if models > config.exhaustive_budget || ds.n_variables() >= 63 {
        return Err(Error::BudgetExceeded {
            models,
            budget: config.exhaustive_budget,
        });
    }
    let mut pool = ModelPool::new();
    pool.ensure(ds, &ModelIndex::collection(k_max, ds.n_variables()), &config.em, "exhaustive");
    pool.into_result()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CaseKind, SampleSpace};

    fn toy(n_vars: usize) -> Dataset {
        let space = SampleSpace::new(CaseKind::Haploid, vec![2; n_vars]).unwrap();
        let codes = (0..40 * n_vars).map(|i| ((i * 7 + i / 3) % 2) as u16).collect();
        Dataset::from_codes(space, codes, None).unwrap()
    }

    fn quick() -> ExplorerConfig {
        ExplorerConfig {
            k_max: 3,
            grid: GridSpec {
                lo: None,
                hi: None,
                count: 4,
            },
            em: EmConfig {
                n_restarts: 2,
                short_run_iterations: 5,
                max_iterations: 50,
                ..EmConfig::default()
            },
            ..ExplorerConfig::default()
        }
    }

    #[test]
    fn grid_parsing_and_defaults() {
        let g: GridSpec = "0.5:3:6".parse().unwrap();
        assert_eq!(g.resolve(100).unwrap(), vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0]);
        let g: GridSpec = "::50".parse().unwrap();
        let grid = g.resolve(500).unwrap();
        assert_eq!(grid.len(), 50);
        assert_eq!(grid[0], 0.5);
        assert_eq!(grid[49], 500f64.ln());
        assert!("1:2".parse::<GridSpec>().is_err());
        assert!(uniform_grid(2.0, 1.0, 5).is_err());
        assert!(uniform_grid(0.5, 1.0, 1).is_err());
    }

    #[test]
    fn single_cluster_explores_only_the_empty_set() {
        let ds = toy(3);
        let mut pool = ModelPool::new();
        let seen = explore_k(&ds, 1, &Penalty::Bic, &quick(), &mut pool).unwrap();
        assert_eq!(seen, vec![ModelIndex::single()]);
        assert_eq!(pool.len(), 1);
    }

    #[test]
    fn one_variable_gives_one_model_per_k() {
        let ds = toy(1);
        let mut pool = ModelPool::new();
        let seen = explore_k(&ds, 2, &Penalty::Bic, &quick(), &mut pool).unwrap();
        assert_eq!(seen, vec![ModelIndex::new(2, vec![0]).unwrap()]);
    }

    #[test]
    fn pools_respect_the_collection_and_are_reproducible() {
        let ds = toy(3);
        let a = build_pool(&ds, &quick()).unwrap();
        let b = build_pool(&ds, &quick()).unwrap();
        assert_eq!(a, b);
        for f in a.fits() {
            assert_eq!(f.index.k() == 1, f.index.vars().is_empty());
        }
        let ex = exhaustive_pool(&ds, 3, &quick()).unwrap();
        assert_eq!(ex.len() + ex.failures().len(), 15);
        for f in a.fits() {
            assert_eq!(ex.get(&f.index).unwrap().contrast, f.contrast);
        }
    }

    #[test]
    fn first_writer_wins() {
        let ds = toy(2);
        let m = ModelIndex::single();
        let f = fit_seeded(&ds, &m, &quick().em).unwrap();
        let mut g = f.clone();
        g.contrast += 1.0;
        let mut pool = ModelPool::new();
        pool.insert(m.clone(), Ok(f.clone()), "a");
        pool.insert(m.clone(), Ok(g), "b");
        assert_eq!(pool.get(&m), Some(&f));
        assert_eq!(pool.provenance(&m), Some("a"));
    }

    #[test]
    fn budget_is_enforced() {
        let ds = toy(4);
        let config = ExplorerConfig {
            exhaustive_budget: 10,
            ..quick()
        };
        assert!(matches!(
            exhaustive_pool(&ds, 3, &config),
            Err(Error::BudgetExceeded { models: 31, budget: 10 })
        ));
    }
}
