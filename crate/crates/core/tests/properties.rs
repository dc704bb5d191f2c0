use std::f64::consts::{LN_2, PI};

use proptest::prelude::*;

use mixsel_core::calibration::{dimension_jump, DimensionPath};
use mixsel_core::data::{CaseKind, Dataset, SampleSpace};
use mixsel_core::em::{fit, EmConfig};
use mixsel_core::explorer::uniform_grid;
use mixsel_core::metrics::{hellinger_sq_exact, total_mass, MixtureDensity};
use mixsel_core::model::{complexity_constant, dimension, log_likelihood, MixtureParams, ModelIndex};

fn simplex(weights: Vec<f64>) -> Vec<f64> {
    let s: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / s).collect()
}

fn arb_space(max_vars: usize, max_states: usize) -> impl Strategy<Value = SampleSpace> {
    (any::<bool>(), prop::collection::vec(2..=max_states, 1..=max_vars)).prop_map(|(diploid, states)| {
        let case = if diploid { CaseKind::Diploid } else { CaseKind::Haploid };
        SampleSpace::new(case, states).unwrap()
    })
}

fn arb_index(n_vars: usize, k_max: usize) -> impl Strategy<Value = ModelIndex> {
    (1..=k_max, prop::collection::vec(any::<bool>(), n_vars)).prop_map(move |(k, mask)| {
        if k == 1 {
            return ModelIndex::single();
        }
        let mut vars: Vec<usize> = (0..n_vars).filter(|&l| mask[l]).collect();
        if vars.is_empty() {
            vars.push(0);
        }
        ModelIndex::new(k, vars).unwrap()
    })
}

/// Positive parameters shaped for `(index, space)`, drawn from a flat list
/// of weights.
fn params_from(index: &ModelIndex, space: &SampleSpace, weights: &[f64]) -> MixtureParams {
    let mut it = weights.iter().cycle().copied();
    let mut take = |a: usize| simplex((0..a).map(|_| it.next().unwrap()).collect());
    let shape = MixtureParams::uniform(index, space);
    MixtureParams {
        pi: take(index.k()),
        alpha: shape.alpha.iter().map(|c| c.iter().map(|v| take(v.len())).collect()).collect(),
        beta: shape.beta.iter().map(|v| take(v.len())).collect(),
    }
}

fn arb_model(max_vars: usize, max_states: usize, k_max: usize) -> impl Strategy<Value = MixtureDensity> {
    arb_space(max_vars, max_states)
        .prop_flat_map(move |space| {
            let n = space.n_variables();
            (Just(space), arb_index(n, k_max), prop::collection::vec(0.05f64..1.0, 7..40))
        })
        .prop_map(|(space, index, w)| {
            let params = params_from(&index, &space, &w);
            MixtureDensity::new(space, index, params).unwrap()
        })
}

fn arb_dataset(space: SampleSpace, n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Dataset> {
    let width = space.n_variables() * space.ploidy();
    let max = *space.states.iter().max().unwrap() as u16;
    prop::collection::vec(prop::collection::vec(0..max, width), n).prop_map(move |rows| {
        let codes: Vec<u16> = rows
            .into_iter()
            .flat_map(|row| {
                row.into_iter()
                    .enumerate()
                    .map(|(c, v)| v % space.states[c / space.ploidy()] as u16)
                    .collect::<Vec<_>>()
            })
            .collect();
        Dataset::from_codes(space.clone(), codes, None).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mass_is_one(d in arb_model(3, 4, 3)) {
        prop_assert!((total_mass(&d).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn relabeling_clusters_keeps_the_likelihood(
        (d, ds, seed) in arb_model(3, 3, 4).prop_flat_map(|d| {
            let space = d.space.clone();
            (Just(d), arb_dataset(space, 1..=30), any::<u64>())
        })
    ) {
        let k = d.index.k();
        let mut perm: Vec<usize> = (0..k).collect();
        perm.rotate_left((seed as usize) % k);
        let moved = d.params.permute_clusters(&perm);
        prop_assert_eq!(
            log_likelihood(&ds, &d.index, &d.params).to_bits(),
            log_likelihood(&ds, &d.index, &moved).to_bits()
        );
    }

    #[test]
    fn em_traces_never_decrease(
        (ds, index, seed) in arb_space(3, 3).prop_flat_map(|space| {
            let n = space.n_variables();
            (arb_dataset(space, 12..=40), arb_index(n, 3), any::<u64>())
        })
    ) {
        let config = EmConfig { rng_seed: seed, n_restarts: 3, ..EmConfig::default() };
        if let Ok(f) = fit(&ds, &index, &config) {
            for w in f.loglik_trace.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-8, "{} -> {}", w[0], w[1]);
            }
            prop_assert_eq!(f.final_loglik().to_bits(), (-f.contrast * ds.n() as f64).to_bits());
            let again = fit(&ds, &index, &config).unwrap();
            prop_assert_eq!(again, f);
        }
    }

    #[test]
    fn complexity_sandwich(
        (index, states) in (1usize..=10, prop::collection::vec(2usize..=12, 1..=10))
            .prop_flat_map(|(k_max, states)| (arb_index(states.len(), k_max), Just(states)))
    ) {
        let d = dimension(&index, &states) as f64;
        let c = complexity_constant(&index, &states);
        prop_assert!((1.0 + (2.0 * PI).ln()) / 2.0 * d <= c);
        prop_assert!(c <= (2.0 + (2.0 * PI).ln() + LN_2 / 2.0) * d);
    }

    #[test]
    fn hellinger_is_a_metric_on_root_densities(
        (p, q, r) in arb_space(2, 3).prop_flat_map(|space| {
            let n = space.n_variables();
            let one = || (arb_index(n, 3), prop::collection::vec(0.05f64..1.0, 7..30));
            (Just(space), one(), one(), one())
        }).prop_map(|(space, a, b, c)| {
            let mk = |(m, w): (ModelIndex, Vec<f64>)| {
                let params = params_from(&m, &space, &w);
                MixtureDensity::new(space.clone(), m, params).unwrap()
            };
            (mk(a), mk(b), mk(c))
        })
    ) {
        let h = |a: &MixtureDensity, b: &MixtureDensity| hellinger_sq_exact(a, b).unwrap();
        let (pq, qp, pr, qr) = (h(&p, &q), h(&q, &p), h(&p, &r), h(&q, &r));
        prop_assert!((pq - qp).abs() < 1e-12);
        prop_assert!((0.0..=2.0 + 1e-12).contains(&pq));
        prop_assert!(pr.sqrt() <= pq.sqrt() + qr.sqrt() + 1e-9);
    }

    #[test]
    fn jump_lies_in_the_grid_and_grows_with_the_window(
        steps in prop::collection::vec((any::<bool>(), 0usize..30), 2..40),
        h in 1usize..6,
    ) {
        let mut d = 500usize;
        let dims: Vec<usize> = steps.iter().map(|&(down, by)| {
            let cur = d;
            if down { d = d.saturating_sub(by); }
            cur
        }).collect();
        let grid = uniform_grid(0.5, 7.0, dims.len()).unwrap();
        let path = DimensionPath {
            selected: dims.iter().map(|_| ModelIndex::single()).collect(),
            lambda_grid: grid.clone(),
            dimensions: dims.clone(),
        };
        let r = dims.len();
        if h < r {
            if let Ok(j) = dimension_jump(&path, h) {
                prop_assert!(grid[0] <= j.lambda_min && j.lambda_min <= grid[r - 1]);
                if h + 1 < r {
                    let wider = dimension_jump(&path, h + 1).unwrap();
                    prop_assert!(wider.drop >= j.drop);
                }
            }
        }
    }
}

#[test]
fn dimension_matches_parameter_shapes() {
    // free coordinates = all coordinates minus one per simplex
    for n_vars in 1..=4 {
        let space = SampleSpace::new(CaseKind::Haploid, (0..n_vars).map(|l| 2 + l).collect()).unwrap();
        for m in ModelIndex::collection(4, n_vars) {
            let p = MixtureParams::uniform(&m, &space);
            let vectors = 1 + p.alpha.iter().map(Vec::len).sum::<usize>() + p.beta.len();
            let coords = p.pi.len()
                + p.alpha.iter().flatten().map(Vec::len).sum::<usize>()
                + p.beta.iter().map(Vec::len).sum::<usize>();
            assert_eq!(dimension(&m, &space.states), coords - vectors, "{m}");
        }
    }
}
