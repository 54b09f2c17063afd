use cutboot::asymptotics::estimate_info;
use cutboot::evaluation::{
    coverage_experiment, coverage_of, elpd_loo, elpd_module2, CoverageExperimentConfig,
    CoverageMethod, CoverageTarget,
};
use cutboot::model::PriorWeight;
use cutboot::rng;
use cutboot::sampler::{pbmi_scenario1, Draw, SampleSet, SamplerConfig, Scenario};
use cutboot::zoo::{
    biased_data_model, biased_generate, causal_generate, causal_model, toy_generate,
    toy_population_info, CausalGeneratorConfig, GeneratorSpec,
};
use rand::Rng;
use rand_distr::StandardNormal;

#[test]
fn oracle_sampler_attains_nominal_coverage() {
    // draws centred at an estimator that is itself N(truth, 1)
    let truth = [0.5, -1.0];
    let replicates = 400;
    let (ran, dropped, covered) = coverage_of(replicates, &truth, CoverageTarget::Theta2, 0.95, |r| {
        let mut g = rng::stream(13, 0, r as u64);
        let est: Vec<f64> = truth.iter().map(|t| t + g.sample::<f64, _>(StandardNormal)).collect();
        let draws = (0..2000)
            .map(|_| {
                Draw::new(
                    vec![est[0] + g.sample::<f64, _>(StandardNormal)],
                    vec![est[1] + g.sample::<f64, _>(StandardNormal)],
                    true,
                )
            })
            .collect();
        Ok(SampleSet::new(draws, Scenario::S1, 0, "oracle"))
    });
    assert_eq!((ran, dropped), (replicates, 0));
    let p = covered as f64 / ran as f64;
    let se = (0.95 * 0.05 / ran as f64).sqrt();
    assert!((p - 0.95).abs() < 3.0 * se, "coverage {p}");
}

#[test]
fn well_specified_toy_coverage_is_nominal() {
    let cfg = CoverageExperimentConfig {
        replicates: 100,
        n_grid: vec![500],
        nominal_level: 0.95,
        generator: GeneratorSpec::Toy {
            rho: 0.0,
            sigma2: 1.0,
            n: 500,
            seed: 0,
        },
        methods: vec![CoverageMethod::PbmiS1, CoverageMethod::PbmiS2, CoverageMethod::CutBayes],
        target: CoverageTarget::Theta2,
        n_draws: 300,
        seed: 3,
    };
    let rows = coverage_experiment(&cfg).unwrap();
    assert_eq!(rows.len(), 3);
    for row in rows {
        // 100 replicates: allow three binomial standard errors
        assert!((0.88..=1.0).contains(&row.coverage), "{row:?}");
        assert_eq!(row.dropped, 0);
    }
}

fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * (x - mean).powi(2) / var
}

#[test]
fn degenerate_sampler_loo_is_plug_in_cross_validation() {
    let model = biased_data_model(None).unwrap();
    let data = biased_generate(1.0, 0.5, 10, 25, 1).unwrap();
    let theta1 = data.data1.iter().sum::<f64>() / data.n1() as f64;
    let loo = elpd_loo(data.n2(), |i| {
        let rest: Vec<f64> = data
            .data2
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, x)| *x)
            .collect();
        let theta2 = rest.iter().sum::<f64>() / rest.len() as f64 - theta1;
        let set = SampleSet::new(vec![Draw::new(vec![theta1], vec![theta2], true)], Scenario::S1, 0, "mle");
        Ok(elpd_module2(&model.module2, &set, &data.data2[i..=i])?.value)
    })
    .unwrap();
    let n = data.n2() as f64;
    let total: f64 = data.data2.iter().sum();
    let want: f64 = data
        .data2
        .iter()
        .map(|x| normal_logpdf(*x, (total - x) / (n - 1.0), 1.0))
        .sum();
    assert!((loo.value - want).abs() < 1e-10, "{} vs {want}", loo.value);
    assert_eq!(loo.failed_folds, 0);
}

#[test]
fn failed_folds_are_dropped_and_counted() {
    let loo = elpd_loo(4, |i| {
        if i == 2 {
            Err(cutboot::Error::InvalidArgument("boom".into()))
        } else {
            Ok(-1.0)
        }
    })
    .unwrap();
    assert_eq!(loo.failed_folds, 1);
    assert_eq!(loo.value, -3.0);
    assert!(loo.pointwise[2].is_none());
}

#[test]
fn plug_in_information_error_shrinks_with_n() {
    let (rho, sigma2) = (0.5, 1.0);
    let pop = toy_population_info(rho, sigma2);
    let model = cutboot::zoo::toy_model();
    let errors: Vec<f64> = [500, 5000, 50_000]
        .iter()
        .map(|&n| {
            let data = toy_generate(rho, sigma2, n, 31).unwrap();
            let est = estimate_info(&model, &data, &pop.evaluated_at).unwrap();
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
            rel(est.i2[(0, 0)], pop.i2[(0, 0)])
                + rel(est.j2[(0, 0)], pop.j2[(0, 0)])
                + rel(est.rj[(0, 0)], pop.rj[(0, 0)])
                + rel(est.ri.as_ref().unwrap()[(0, 0)], pop.ri.as_ref().unwrap()[(0, 0)])
                + rel(est.i1[(0, 0)], pop.i1[(0, 0)])
        })
        .collect();
    assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
}

#[test]
fn randomized_treatment_effect_is_recovered() {
    let cfg = CausalGeneratorConfig {
        n: 2000,
        confounding: 0.0,
        effect: 1.0,
        seed: 17,
        ..Default::default()
    };
    let data = causal_generate(&cfg).unwrap();
    let model = causal_model(cfg.covariates);
    let zero = PriorWeight::zero();
    let set = pbmi_scenario1(&model, &data, 2000, &zero, &zero, &SamplerConfig::default(), 3).unwrap();
    let effect = set.coordinate(model.module1.covariates + 1);
    let m = effect.iter().sum::<f64>() / effect.len() as f64;
    let sd = (effect.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (effect.len() - 1) as f64).sqrt();
    assert!((m - 1.0).abs() < 2.0 * sd, "mean {m}, sd {sd}");
}
