//! Data-generating truths and sampling from them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CaseKind, Dataset, SampleSpace};
use crate::error::{Error, Result};
use crate::metrics::MixtureDensity;
use crate::model::{MixtureParams, ModelIndex};
use crate::seed;

/// A mixture designated as the truth `P0`.
///
/// JSON form:
///
/// ```json
/// {
///   "case_kind": "diploid",
///   "states": [3, 3],
///   "k": 2,
///   "s": [1],
///   "pi": [0.5, 0.5],
///   "alpha": [[[0.8, 0.1, 0.1]], [[0.1, 0.1, 0.8]]],
///   "beta": [[0.2, 0.3, 0.5]]
/// }
/// ```
///
/// `s` is one-based; `alpha[k][i]` belongs to the `i`-th variable of `s` and
/// `beta` lists the remaining variables in increasing order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecRepr", into = "SpecRepr")]
pub struct TrueModelSpec {
    density: MixtureDensity,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecRepr {
    case_kind: CaseKind,
    states: Vec<usize>,
    k: usize,
    s: Vec<usize>,
    pi: Vec<f64>,
    alpha: Vec<Vec<Vec<f64>>>,
    beta: Vec<Vec<f64>>,
}

impl TryFrom<SpecRepr> for TrueModelSpec {
    type Error = Error;

    fn try_from(r: SpecRepr) -> Result<Self> {
        if r.s.contains(&0) {
            return Err(Error::InvalidSpec("variables in s are numbered from 1".into()));
        }
        let space = SampleSpace::new(r.case_kind, r.states).map_err(spec_error)?;
        let index = ModelIndex::new(r.k, r.s.iter().map(|l| l - 1).collect()).map_err(spec_error)?;
        TrueModelSpec::new(
            space,
            index,
            MixtureParams {
                pi: r.pi,
                alpha: r.alpha,
                beta: r.beta,
            },
        )
    }
}

impl From<TrueModelSpec> for SpecRepr {
    fn from(t: TrueModelSpec) -> Self {
        let MixtureDensity { space, index, params } = t.density;
        SpecRepr {
            case_kind: space.case_kind,
            states: space.states,
            k: index.k(),
            s: index.vars().iter().map(|l| l + 1).collect(),
            pi: params.pi,
            alpha: params.alpha,
            beta: params.beta,
        }
    }
}

fn spec_error(e: Error) -> Error {
    match e {
        Error::InvalidSpec(_) => e,
        other => Error::InvalidSpec(other.to_string()),
    }
}

impl TrueModelSpec {
    /// Validates the parameters and that every variable of `S` separates at
    /// least two clusters.
    pub fn new(space: SampleSpace, index: ModelIndex, params: MixtureParams) -> Result<Self> {
        let density = MixtureDensity::new(space, index, params).map_err(spec_error)?;
        for (s, &l) in density.index.vars().iter().enumerate() {
            let rows = &density.params.alpha;
            if rows.iter().all(|cluster| cluster[s] == rows[0][s]) {
                return Err(Error::InvalidSpec(format!(
                    "variable {} is in s but has the same frequencies in every cluster",
                    l + 1
                )));
            }
        }
        Ok(Self { density })
    }

    pub fn density(&self) -> &MixtureDensity {
        &self.density
    }

    pub fn space(&self) -> &SampleSpace {
        &self.density.space
    }

    pub fn index(&self) -> &ModelIndex {
        &self.density.index
    }

    pub fn params(&self) -> &MixtureParams {
        &self.density.params
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }
}

/// `n` observations from `truth`, deterministic per seed.
pub fn simulate(truth: &TrueModelSpec, n: usize, seed: u64) -> Result<Dataset> {
    simulate_with_labels(truth, n, seed).map(|(ds, _)| ds)
}

/// As [`simulate`], also returning each row's zero-based cluster.
pub fn simulate_with_labels(truth: &TrueModelSpec, n: usize, seed: u64) -> Result<(Dataset, Vec<usize>)> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let space = truth.space();
    let sampler = truth.density.sampler();
    let mut rng = seed::rng(seed, &[]);
    let mut codes = Vec::with_capacity(n * space.n_variables() * space.ploidy());
    let clusters = (0..n).map(|_| sampler.sample_into(&mut rng, &mut codes)).collect();
    Ok((Dataset::from_codes(space.clone(), codes, None)?, clusters))
}

/// How strongly a variable separates the clusters of a generated design.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Differentiation {
    Strong,
    Weak,
    /// Shared by all clusters.
    Null,
    /// Mass moved onto the cluster's peak state, in `(0, 1]`.
    Custom(f64),
}

impl Differentiation {
    pub fn strength(self) -> f64 {
        match self {
            Differentiation::Strong => 0.6,
            Differentiation::Weak => 0.25,
            Differentiation::Null => 0.0,
            Differentiation::Custom(s) => s,
        }
    }
}

/// Truth with equal weights where cluster `k` puts `(1 - s) / A + s` on
/// its peak state and `(1 - s) / A` elsewhere. Peaks of a variable are
/// consecutive states from a seeded offset, so they differ across clusters
/// whenever `K <= A`. Null variables are uniform.
pub fn design(
    case_kind: CaseKind,
    states: Vec<usize>,
    k: usize,
    roles: &[Differentiation],
    seed: u64,
) -> Result<TrueModelSpec> {
    if roles.len() != states.len() {
        return Err(Error::InvalidSpec("one differentiation per variable is required".into()));
    }
    if let Some(bad) = roles.iter().map(|r| r.strength()).find(|s| !(0.0..=1.0).contains(s)) {
        return Err(Error::InvalidSpec(format!("strength {bad} is outside [0, 1]")));
    }
    let space = SampleSpace::new(case_kind, states).map_err(spec_error)?;
    let vars: Vec<usize> = (0..roles.len()).filter(|&l| roles[l].strength() > 0.0).collect();
    let index = ModelIndex::new(k, vars).map_err(spec_error)?;
    let mut rng = seed::rng(seed, &[]);
    let offsets: Vec<usize> = space.states.iter().map(|&a| rng.gen_range(0..a)).collect();
    let profile = |l: usize, cluster: usize| -> Vec<f64> {
        let a = space.states[l];
        let s = roles[l].strength();
        let peak = (offsets[l] + cluster) % a;
        (0..a)
            .map(|j| (1.0 - s) / a as f64 + if j == peak { s } else { 0.0 })
            .collect()
    };
    let params = MixtureParams {
        pi: vec![1.0 / k as f64; k],
        alpha: (0..k)
            .map(|c| index.vars().iter().map(|&l| profile(l, c)).collect())
            .collect(),
        beta: crate::model::shared_vars(&index, space.n_variables())
            .into_iter()
            .map(|l| vec![1.0 / space.states[l] as f64; space.states[l]])
            .collect(),
    };
    TrueModelSpec::new(space, index, params)
}

/// Diploid, three clusters, six loci with four alleles: two strong, two
/// weak and two null loci.
pub fn consistency_design(seed: u64) -> Result<TrueModelSpec> {
    use Differentiation::*;
    design(CaseKind::Diploid, vec![4; 6], 3, &[Strong, Strong, Weak, Weak, Null, Null], seed)
}

/// Diploid, three clusters, six loci with three alleles: three strong loci,
/// a moderate fourth, a weak fifth and a null sixth.
pub fn oracle_design(seed: u64) -> Result<TrueModelSpec> {
    use Differentiation::*;
    design(
        CaseKind::Diploid,
        vec![3; 6],
        3,
        &[Strong, Strong, Strong, Custom(0.4), Custom(0.1), Null],
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::total_mass;

    #[test]
    fn json_roundtrip_and_schema() {
        let t = oracle_design(4).unwrap();
        let text = t.to_json();
        assert_eq!(TrueModelSpec::from_json(&text).unwrap(), t);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["s"], serde_json::json!([1, 2, 3, 4, 5]));
        assert_eq!(v["case_kind"], "diploid");
        assert!((total_mass(t.density()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spec_rejects_fake_clustering_variables() {
        let text = r#"{"case_kind":"haploid","states":[2,2],"k":2,"s":[1],
            "pi":[0.5,0.5],"alpha":[[[0.3,0.7]],[[0.3,0.7]]],"beta":[[0.5,0.5]]}"#;
        let err = TrueModelSpec::from_json(text).unwrap_err();
        assert!(matches!(err, Error::InvalidSpec(_)), "{err}");
        let text = r#"{"case_kind":"haploid","states":[2,2],"k":2,"s":[1],
            "pi":[0.5,0.6],"alpha":[[[0.3,0.7]],[[0.7,0.3]]],"beta":[[0.5,0.5]]}"#;
        assert!(matches!(TrueModelSpec::from_json(text), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn same_seed_same_data() {
        let t = consistency_design(1).unwrap();
        assert_eq!(simulate(&t, 50, 9).unwrap(), simulate(&t, 50, 9).unwrap());
        assert_ne!(simulate(&t, 50, 9).unwrap(), simulate(&t, 50, 10).unwrap());
    }

    #[test]
    fn degenerate_weights_draw_one_component() {
        let space = SampleSpace::new(CaseKind::Haploid, vec![3]).unwrap();
        let index = ModelIndex::new(2, vec![0]).unwrap();
        let params = MixtureParams {
            pi: vec![1.0, 0.0],
            alpha: vec![vec![vec![0.2, 0.3, 0.5]], vec![vec![1.0, 0.0, 0.0]]],
            beta: vec![],
        };
        let t = TrueModelSpec::new(space, index, params).unwrap();
        let (ds, z) = simulate_with_labels(&t, 10_000, 3).unwrap();
        assert!(z.iter().all(|&c| c == 0));
        let mut counts = [0.0; 3];
        for x in ds.observations() {
            counts[x[0] as usize] += 1.0;
        }
        // chi-square with 2 degrees of freedom, far below the 0.1% quantile 13.8
        let expected = [2000.0, 3000.0, 5000.0];
        let chi2: f64 = counts.iter().zip(expected).map(|(o, e)| (o - e) * (o - e) / e).sum();
        assert!(chi2 < 13.8, "chi2 = {chi2}");
    }

    #[test]
    fn diploid_heterozygote_rate() {
        let space = SampleSpace::new(CaseKind::Diploid, vec![2]).unwrap();
        let index = ModelIndex::single();
        let t = TrueModelSpec::new(space.clone(), index.clone(), MixtureParams::uniform(&index, &space)).unwrap();
        let n = 10_000;
        let ds = simulate(&t, n, 5).unwrap();
        let het = ds.observations().filter(|x| x[0] != x[1]).count() as f64 / n as f64;
        let se = (0.25 / n as f64).sqrt();
        assert!((het - 0.5).abs() < 3.0 * se, "het = {het}");
    }

    #[test]
    fn designs_have_distinct_peaks() {
        let t = consistency_design(0).unwrap();
        assert_eq!(t.index().vars(), &[0, 1, 2, 3]);
        for s in 0..4 {
            let peaks: Vec<usize> = t
                .params()
                .alpha
                .iter()
                .map(|c| c[s].iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0)
                .collect();
            assert!(peaks[0] != peaks[1] && peaks[1] != peaks[2] && peaks[0] != peaks[2]);
        }
    }
}
