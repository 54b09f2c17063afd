use cutboot::asymptotics::{
    covariance_report, estimate_info, risk_traces, sigma_cut_laplace, sigma_scenario1,
    sigma_scenario2,
};
use cutboot::model::{ParameterSplit, PriorWeight};
use cutboot::optimize::{fit_mle, OptimizerConfig};
use cutboot::sampler::{pbmi_scenario1, pbmi_scenario2, SamplerConfig};
use cutboot::zoo::{
    biased_data_model, biased_generate, counterexample_generate, counterexample_model,
    counterexample_population, toy_generate, toy_model, toy_population_info,
};
use nalgebra::DMatrix;

fn frobenius_relative(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

fn plug_in<M1, M2>(
    model: &cutboot::model::CutModel<M1, M2>,
    data: &cutboot::model::CutDataset<M1::Obs, M2::Obs>,
) -> cutboot::asymptotics::InfoMatrices
where
    M1: cutboot::model::ModuleOne,
    M2: cutboot::model::ModuleTwo,
{
    let mle = fit_mle(model, data, &OptimizerConfig::default()).unwrap();
    let at = ParameterSplit::new(mle.theta1_hat, mle.theta2_hat).unwrap();
    estimate_info(model, data, &at).unwrap()
}

#[test]
fn scenario1_bootstrap_covariance_matches_sandwich() {
    let n = 2000;
    let model = toy_model();
    let data = toy_generate(0.0, 1.0, n, 11).unwrap();
    let zero = PriorWeight::zero();
    let set = pbmi_scenario1(&model, &data, 1500, &zero, &zero, &SamplerConfig::default(), 5).unwrap();
    let empirical = set.covariance() * n as f64;
    let sigma = sigma_scenario1(&plug_in(&model, &data)).unwrap();
    let err = frobenius_relative(&empirical, &sigma);
    assert!(err < 0.15, "relative error {err}\n{empirical}\n{sigma}");
}

#[test]
fn scenario2_bootstrap_covariance_matches_cross_term_sandwich() {
    let n = 2000;
    let model = toy_model();
    let data = toy_generate(0.8, 1.0, n, 12).unwrap();
    let zero = PriorWeight::zero();
    let set = pbmi_scenario2(&model, &data, 1500, &zero, &zero, &SamplerConfig::default(), 6).unwrap();
    let empirical = set.covariance() * n as f64;
    let info = plug_in(&model, &data);
    let sigma = sigma_scenario2(&info).unwrap();
    let err = frobenius_relative(&empirical, &sigma);
    assert!(err < 0.15, "relative error {err}\n{empirical}\n{sigma}");
    // the shared weights move the cross block away from the cut posterior's
    let cut = sigma_cut_laplace(&info).unwrap();
    assert!(empirical[(0, 1)] > cut[(0, 1)] + 0.1);
}

#[test]
fn toy_population_blocks() {
    let m = toy_population_info(0.8, 1.0);
    let r = covariance_report(&m).unwrap();
    let s2 = r.sigma_s2.unwrap();
    assert!((s2[(0, 1)] + 0.06).abs() < 1e-12);
    assert!((s2[(1, 1)] - 0.0542).abs() < 1e-12);
    assert!((r.sigma_b[(0, 1)] + 0.3).abs() < 1e-12);
    assert!((r.sigma_b[(1, 1)] - 0.19).abs() < 1e-12);
}

#[test]
fn scenario1_theta1_draws_ignore_module_two_data() {
    let model = biased_data_model(None).unwrap();
    let a = biased_generate(1.0, 0.5, 20, 50, 3).unwrap();
    let mut b = a.clone();
    for x in b.data2.iter_mut() {
        *x += 10.0;
    }
    let zero = PriorWeight::zero();
    let cfg = SamplerConfig::default();
    let sa = pbmi_scenario1(&model, &a, 200, &zero, &zero, &cfg, 9).unwrap();
    let sb = pbmi_scenario1(&model, &b, 200, &zero, &zero, &cfg, 9).unwrap();
    for (x, y) in sa.draws.iter().zip(&sb.draws) {
        assert_eq!(x.theta1, y.theta1);
        assert!((y.theta2[0] - x.theta2[0] - 10.0).abs() < 1e-6);
    }
}

#[test]
fn counterexample_traces_from_population_matrices() {
    let want = [(1.0, -0.21), (2.0, -0.36)];
    for (sigma, trace_pb) in want {
        let pop = counterexample_population(sigma);
        let sb = sigma_cut_laplace(&pop.info).unwrap();
        let spb = sigma_scenario1(&pop.info).unwrap();
        let t = risk_traces(pop.if2, pop.jf2, &sb, &spb).unwrap();
        assert!((t.trace_bayes + 0.25).abs() < 1e-10, "{}", t.trace_bayes);
        assert!((t.trace_pb - trace_pb).abs() < 1e-10, "{}", t.trace_pb);
    }
}

#[test]
fn counterexample_traces_from_simulated_data() {
    let model = counterexample_model();
    let data = counterexample_generate(2.0, 20_000, 17).unwrap();
    let mle = fit_mle(&model, &data, &OptimizerConfig::default()).unwrap();
    let at = ParameterSplit::new(mle.theta1_hat, mle.theta2_hat).unwrap();
    let info = estimate_info(&model, &data, &at).unwrap();
    let sb = sigma_cut_laplace(&info).unwrap();
    let spb = sigma_scenario1(&info).unwrap();
    let t = cutboot::asymptotics::prediction_risk_traces(&model, &data, &at, &sb, &spb).unwrap();
    assert!((t.trace_bayes + 0.25).abs() < 0.05, "{}", t.trace_bayes);
    assert!((t.trace_pb + 0.36).abs() < 0.05, "{}", t.trace_pb);
}
