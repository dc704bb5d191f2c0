use mixsel_core::calibration::{calibrate_and_select, slope_regression, RegressionFilter, WindowSpec};
use mixsel_core::criteria::{select_under_penalty, Penalty};
use mixsel_core::data::{parse_table, CaseKind, LoadOptions, SampleSpace};
use mixsel_core::em::{fit, EmConfig, FittedModel};
use mixsel_core::experiment::{estimate_oracle, ExperimentConfig};
use mixsel_core::explorer::{build_pool, exhaustive_pool, explore_k, uniform_grid, ExplorerConfig, ModelPool};
use mixsel_core::metrics::{
    best_permutation_agreement, hellinger_sq_exact, hellinger_sq_mc, map_classify,
};
use mixsel_core::model::{MixtureParams, ModelIndex};
use mixsel_core::simulate::{consistency_design, simulate, simulate_with_labels, TrueModelSpec};
use mixsel_core::Error;

/// Two clusters putting 0.85 on disjoint halves of each variable's states.
fn separated(n_vars: usize, states: usize, noise: &[usize]) -> TrueModelSpec {
    let space = SampleSpace::new(CaseKind::Haploid, vec![states; n_vars]).unwrap();
    let vars: Vec<usize> = (0..n_vars).filter(|l| !noise.contains(l)).collect();
    let index = ModelIndex::new(2, vars.clone()).unwrap();
    let half = states / 2;
    let profile = |low: bool| -> Vec<f64> {
        let inside = if low { half } else { states - half };
        (0..states)
            .map(|j| {
                if (j < half) == low {
                    0.85 / inside as f64
                } else {
                    0.15 / (states - inside) as f64
                }
            })
            .collect()
    };
    let params = MixtureParams {
        pi: vec![0.5, 0.5],
        alpha: vec![
            vars.iter().map(|_| profile(true)).collect(),
            vars.iter().map(|_| profile(false)).collect(),
        ],
        beta: noise.iter().map(|_| vec![1.0 / states as f64; states]).collect(),
    };
    TrueModelSpec::new(space, index, params).unwrap()
}

#[test]
fn single_cluster_fit_returns_empirical_frequencies() {
    let truth = consistency_design(3).unwrap();
    let ds = simulate(&truth, 257, 8).unwrap();
    let f = fit(&ds, &ModelIndex::single(), &EmConfig::default()).unwrap();
    assert_eq!(f.iterations, 1);
    for l in 0..ds.n_variables() {
        // allele counting by hand
        let mut counts = vec![0.0; ds.states()[l]];
        for x in ds.observations() {
            counts[x[2 * l] as usize] += 1.0;
            counts[x[2 * l + 1] as usize] += 1.0;
        }
        for (got, c) in f.params.beta[l].iter().zip(&counts) {
            assert!((got - c / (2.0 * ds.n() as f64)).abs() < 1e-15);
        }
    }
}

#[test]
fn well_separated_clusters_are_recovered() {
    let truth = separated(4, 4, &[]);
    let (ds, z) = simulate_with_labels(&truth, 400, 21).unwrap();
    let m = ModelIndex::new(2, vec![0, 1, 2, 3]).unwrap();
    let f = fit(&ds, &m, &EmConfig::default()).unwrap();
    assert!(f.converged);
    for p in &f.params.pi {
        assert!((p - 0.5).abs() < 0.1, "pi = {:?}", f.params.pi);
    }
    let labels = map_classify(&ds, &m, &f.params);
    assert!(best_permutation_agreement(&labels, &z) >= 0.9);
}

#[test]
fn backward_search_drops_the_noise_variable() {
    let truth = separated(4, 4, &[2]);
    let ds = simulate(&truth, 500, 5).unwrap();
    let config = ExplorerConfig {
        k_max: 2,
        enable_forward: false,
        ..ExplorerConfig::default()
    };
    let mut pool = ModelPool::new();
    explore_k(&ds, 2, &Penalty::Bic, &config, &mut pool).unwrap();
    let best = select_under_penalty(pool.fits(), &Penalty::Bic).unwrap();
    assert!(!best.index.contains(2), "{}", best.index);

    let all = exhaustive_pool(&ds, 2, &config).unwrap();
    assert_eq!(all.len(), 1 + 15);
    let exhaustive_best = select_under_penalty(all.fits(), &Penalty::Bic).unwrap();
    assert_eq!(exhaustive_best.index, best.index);
}

#[test]
fn pools_do_not_depend_on_the_thread_count() {
    let truth = separated(3, 3, &[2]);
    let ds = simulate(&truth, 150, 2).unwrap();
    let config = ExplorerConfig {
        k_max: 3,
        ..ExplorerConfig::default()
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| build_pool(&ds, &config).unwrap())
    };
    let a = run(1);
    let b = run(3);
    assert_eq!(a, b);
    let grid = config.grid.resolve(ds.n()).unwrap();
    assert_eq!(
        calibrate_and_select(&a, &grid, WindowSpec::default()).unwrap(),
        calibrate_and_select(&b, &grid, WindowSpec::default()).unwrap()
    );
}

/// Pool whose contrast drops steeply up to dimension 20 and then linearly
/// with slope `lambda0` per unit of `D / n`, with small deterministic
/// wiggles.
fn staircase_pool(lambda0: f64, n: usize) -> ModelPool {
    let fits = ModelIndex::collection(5, 6)
        .into_iter()
        .enumerate()
        .map(|(i, m)| {
            let d = 1 + i % 120;
            let bias = if d < 20 { 0.05 * (20 - d) as f64 } else { 0.0 };
            let wiggle = 1e-4 * ((i * 7919) % 13) as f64;
            FittedModel {
                dimension: d,
                contrast: 5.0 + bias - lambda0 * d as f64 / n as f64 + wiggle,
                n,
                n_variables: 6,
                params: MixtureParams { pi: vec![], alpha: vec![], beta: vec![] },
                index: m,
                loglik_trace: vec![],
                iterations: 0,
                n_restarts_used: 1,
                failed_restarts: 0,
                converged: true,
                rho_slack: None,
            }
        });
    ModelPool::from_fits(fits)
}

#[test]
fn regression_and_dimension_jump_agree_on_a_planted_staircase() {
    let n = 500;
    for lambda0 in [1.0, 1.7, 3.2] {
        let pool = staircase_pool(lambda0, n);
        let grid = uniform_grid(0.5, (n as f64).ln(), 50).unwrap();
        let cal = calibrate_and_select(&pool, &grid, WindowSpec::default()).unwrap();
        let slope = slope_regression(&pool, RegressionFilter::LargestHalf).unwrap();
        let rel = (slope - cal.lambda_min_hat).abs() / cal.lambda_min_hat;
        assert!(rel <= 0.25, "jump {} vs regression {slope}", cal.lambda_min_hat);
        assert!((slope - lambda0).abs() / lambda0 < 0.05);
    }
}

#[test]
fn mc_hellinger_is_unbiased() {
    let p = separated(2, 3, &[]).density().clone();
    let q = separated(2, 3, &[1]).density().clone();
    let exact = hellinger_sq_exact(&p, &q).unwrap();
    let runs: Vec<_> = (0..200).map(|s| hellinger_sq_mc(&p, &q, 2000, s).unwrap()).collect();
    let mean_err = runs.iter().map(|m| m.raw - exact).sum::<f64>() / 200.0;
    let pooled_se = (runs.iter().map(|m| m.std_error * m.std_error).sum::<f64>()).sqrt() / 200.0;
    assert!(mean_err.abs() <= 3.0 * pooled_se, "bias {mean_err} vs se {pooled_se}");
}

#[test]
fn true_model_is_near_the_oracle_for_large_samples() {
    let truth = separated(2, 2, &[1]);
    let candidates = ModelIndex::collection(2, 2);
    let config = ExperimentConfig {
        explorer: ExplorerConfig {
            em: EmConfig {
                n_restarts: 3,
                ..EmConfig::default()
            },
            ..ExplorerConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let est = estimate_oracle(&truth, 100_000, 3, &candidates, &config, 4).unwrap();
    let min = est.risks.iter().map(|r| r.mean).fold(f64::INFINITY, f64::min);
    let own = est.risks.iter().find(|r| &r.index == truth.index()).unwrap();
    assert!(own.mean <= min + 2.0 * own.std_error.max(1e-12), "{own:?} vs {min}");
    assert!(est.risks.iter().all(|r| (0.0..=2.0).contains(&r.mean)));
}

#[test]
fn loading_reindexes_labels() {
    let text = "a\t10\nb\t30\nc\t20\na\t10\n";
    let ds = parse_table(text.as_bytes(), CaseKind::Haploid, &LoadOptions::default()).unwrap();
    assert_eq!(ds.states(), &[3, 3]);
    assert_eq!(ds.labels(1), &["10", "20", "30"]);
    assert_eq!(ds.observation(1), &[1, 2]);

    let ragged = "1,2\n1\n";
    assert!(matches!(
        parse_table(ragged.as_bytes(), CaseKind::Haploid, &LoadOptions::default()),
        Err(Error::RaggedRow { row: 2, .. })
    ));
    let diploid = "A/B C/C\nB/A C/D\n";
    let ds = parse_table(diploid.as_bytes(), CaseKind::Diploid, &LoadOptions::default()).unwrap();
    assert_eq!(&ds.observation(0)[..2], &[0, 1]);
    assert_eq!(&ds.observation(1)[..2], &[0, 1]);
    assert_eq!(ds.labels(1), &["C", "D"]);
}
