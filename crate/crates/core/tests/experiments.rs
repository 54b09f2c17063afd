use cutboot::evaluation::{
    elpd_comparison, epi_loo_comparison, median, quartiles, v0_sweep, ElpdExperimentConfig,
    EpiLooConfig, V0SweepConfig,
};
use cutboot::baselines::NestedMcmcConfig;

#[test]
fn quartiles_of_small_samples() {
    assert_eq!(quartiles(&[4.0, 1.0, 3.0, 2.0, 5.0]), (2.0, 3.0, 4.0));
    assert_eq!(median(&[2.0, 1.0]), 1.5);
    assert!(median(&[]).is_nan());
}

#[test]
fn elpd_rows_cover_every_method_and_replicate() {
    let cfg = ElpdExperimentConfig {
        n2_grid: vec![50],
        replicates: 3,
        test_points: 200,
        n_draws: 200,
        ..Default::default()
    };
    let rows = elpd_comparison(&cfg).unwrap();
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.n1 == 5 && r.elpd_sum.is_finite()));
    assert_eq!(rows, elpd_comparison(&cfg).unwrap());
}

#[test]
fn calibrated_v0_is_closest_to_the_correct_cut_posterior() {
    let cfg = V0SweepConfig {
        replicates: 10,
        n_draws: 1000,
        ..Default::default()
    };
    let rows = v0_sweep(&cfg).unwrap();
    let med = |v0: f64| median(&rows.iter().filter(|r| r.v0 == v0).map(|r| r.ks).collect::<Vec<_>>());
    let best = cfg
        .v0_grid
        .iter()
        .copied()
        .min_by(|a, b| med(*a).total_cmp(&med(*b)))
        .unwrap();
    assert_eq!(best, 0.5);
}

#[test]
fn epi_loo_rows_are_finite() {
    let cfg = EpiLooConfig {
        replicates: 1,
        n_draws: 100,
        nested: NestedMcmcConfig {
            inner_chain_length: 50,
            inner_burnin: 20,
            ..Default::default()
        },
        ..Default::default()
    };
    let rows = epi_loo_comparison(&cfg).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.loo.is_finite() && r.failed_folds == 0));
}
