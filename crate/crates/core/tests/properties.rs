use cutboot::asymptotics::{
    check_covariance, covariance_report, fd_hessian_m1, fd_hessian_m2, sigma_scenario1,
    sigma_scenario2, InfoMatrices,
};
use cutboot::evaluation::{elpd_module1, elpd_module2, ks_dissimilarity};
use cutboot::model::{
    weighted_objective_m1, weighted_objective_m2, ModuleOne, ModuleTwo, ParameterSplit,
    PriorWeight,
};
use cutboot::optimize::{fit_mle, OptimizerConfig};
use cutboot::sampler::{Draw, SampleSet, Scenario};
use cutboot::zoo::{
    biased_data_model, causal_generate, causal_model, epi_generate, epi_model, toy_generate,
    toy_model, CausalGeneratorConfig, EpiGeneratorConfig, OffsetMode, ToyObs,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn pd_matrix(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0..2.0_f64, d * d).prop_map(move |v| {
        let a = DMatrix::from_vec(d, d, v);
        &a * a.transpose() + DMatrix::identity(d, d) * 0.5
    })
}

// I1, I2 and RI are blocks of one joint score covariance
fn info_matrices() -> impl Strategy<Value = InfoMatrices> {
    (1usize..=3, 1usize..=3).prop_flat_map(|(d1, d2)| {
        (
            pd_matrix(d1 + d2),
            pd_matrix(d1),
            pd_matrix(d2),
            prop::collection::vec(-1.0..1.0_f64, d1 * d2),
            0.1..10.0_f64,
        )
            .prop_map(move |(k, j1, j2, rj, alpha)| InfoMatrices {
                i1: k.view((0, 0), (d1, d1)).into_owned(),
                j1,
                i2: k.view((d1, d1), (d2, d2)).into_owned(),
                j2,
                ri: Some(k.view((0, d1), (d1, d2)).into_owned()),
                rj: DMatrix::from_vec(d1, d2, rj),
                evaluated_at: ParameterSplit::new(vec![0.0; d1], vec![0.0; d2]).unwrap(),
                alpha,
            })
    })
}

fn sample_set(points: &[(f64, f64)]) -> SampleSet {
    let draws = points
        .iter()
        .map(|&(a, b)| Draw::new(vec![a], vec![b], true))
        .collect();
    SampleSet::new(draws, Scenario::S1, 0, "test")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ks_is_symmetric(
        a in prop::collection::vec(-5.0..5.0_f64, 1..40),
        b in prop::collection::vec(-5.0..5.0_f64, 1..40),
    ) {
        let ab = ks_dissimilarity(&a, &b).unwrap();
        prop_assert_eq!(ab, ks_dissimilarity(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn ks_ignores_increasing_transforms(
        a in prop::collection::vec(-3.0..3.0_f64, 1..40),
        b in prop::collection::vec(-3.0..3.0_f64, 1..40),
    ) {
        let base = ks_dissimilarity(&a, &b).unwrap();
        for f in [|x: f64| x.exp(), |x: f64| x * x * x, |x: f64| 3.0 * x - 1.0] {
            let fa: Vec<f64> = a.iter().map(|x| f(*x)).collect();
            let fb: Vec<f64> = b.iter().map(|x| f(*x)).collect();
            prop_assert_eq!(base, ks_dissimilarity(&fa, &fb).unwrap());
        }
    }

    #[test]
    fn ks_zero_for_permuted_copies(a in prop::collection::vec(-3.0..3.0_f64, 1..40)) {
        let mut b = a.clone();
        b.reverse();
        prop_assert_eq!(ks_dissimilarity(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn objective_is_homogeneous_in_weights(
        w in prop::collection::vec(0.0..3.0_f64, 8),
        v in prop::collection::vec(0.0..3.0_f64, 8),
        w0 in 0.0..2.0_f64,
        c in 0.1..5.0_f64,
        t1 in -2.0..2.0_f64,
        t2 in -2.0..2.0_f64,
    ) {
        let model = biased_data_model(None).unwrap();
        let x: Vec<f64> = (0..8).map(|i| i as f64 * 0.3 - 1.0).collect();
        let base1 = weighted_objective_m1(&model.module1, &x, &w, &PriorWeight::Scalar(w0), &[t1]).unwrap();
        let cw: Vec<f64> = w.iter().map(|a| c * a).collect();
        let scaled1 = weighted_objective_m1(&model.module1, &x, &cw, &PriorWeight::Scalar(c * w0), &[t1]).unwrap();
        prop_assert!((scaled1 - c * base1).abs() <= 1e-10 * (1.0 + scaled1.abs()));
        let base2 = weighted_objective_m2(&model.module2, &x, &v, &PriorWeight::Scalar(w0), &[t1], &[t2]).unwrap();
        let cv: Vec<f64> = v.iter().map(|a| c * a).collect();
        let scaled2 = weighted_objective_m2(&model.module2, &x, &cv, &PriorWeight::Scalar(c * w0), &[t1], &[t2]).unwrap();
        prop_assert!((scaled2 - c * base2).abs() <= 1e-10 * (1.0 + scaled2.abs()));
    }

    #[test]
    fn unit_weights_give_plain_loglik(t1 in -2.0..2.0_f64, t2 in -2.0..2.0_f64, seed in 0u64..1000) {
        let model = toy_model();
        let data = toy_generate(0.2, 1.0, 15, seed).unwrap();
        let ones = vec![1.0; 15];
        let zero = PriorWeight::zero();
        let got1 = weighted_objective_m1(&model.module1, &data.data1, &ones, &zero, &[t1]).unwrap();
        let want1: f64 = data.data1.iter().map(|x| model.module1.loglik(x, &[t1])).sum();
        prop_assert!((got1 - want1).abs() <= 1e-12 * want1.abs().max(1.0));
        let got2 = weighted_objective_m2(&model.module2, &data.data2, &ones, &zero, &[t1], &[t2]).unwrap();
        let want2: f64 = data.data2.iter().map(|x: &ToyObs| model.module2.loglik(x, &[t1], &[t2])).sum();
        prop_assert!((got2 - want2).abs() <= 1e-12 * want2.abs().max(1.0));
    }

    #[test]
    fn covariance_outputs_are_symmetric_psd(m in info_matrices()) {
        let report = covariance_report(&m).unwrap();
        check_covariance(&report.sigma_b, "sigma_b").unwrap();
        check_covariance(report.sigma_s1.as_ref().unwrap(), "sigma_s1").unwrap();
        check_covariance(report.sigma_s2.as_ref().unwrap(), "sigma_s2").unwrap();
    }

    #[test]
    fn scenario2_without_cross_term_is_scenario1_at_unit_alpha(m in info_matrices()) {
        let (d1, d2) = (m.d1(), m.d2());
        let mut m = m;
        m.ri = Some(DMatrix::zeros(d1, d2));
        m.alpha = 1.0;
        let a = sigma_scenario2(&m).unwrap();
        let b = sigma_scenario1(&m).unwrap();
        let scale = b.abs().max().max(1.0);
        prop_assert!((a - b).abs().max() <= 1e-12 * scale);
    }

    #[test]
    fn elpd_ignores_draw_order_and_duplication(
        draws in prop::collection::vec((-1.0..1.0_f64, -1.0..1.0_f64), 1..30),
        points in prop::collection::vec(-2.0..2.0_f64, 1..10),
    ) {
        let model = biased_data_model(None).unwrap();
        let base = sample_set(&draws);
        let mut reversed = draws.clone();
        reversed.reverse();
        let doubled: Vec<(f64, f64)> = draws.iter().flat_map(|d| [*d, *d]).collect();
        let e = elpd_module1(&model.module1, &base, &points).unwrap().value;
        for other in [sample_set(&reversed), sample_set(&doubled)] {
            let v = elpd_module1(&model.module1, &other, &points).unwrap().value;
            prop_assert!((v - e).abs() <= 1e-10 * e.abs().max(1.0));
        }
        let e2 = elpd_module2(&model.module2, &base, &points).unwrap().value;
        let v2 = elpd_module2(&model.module2, &sample_set(&doubled), &points).unwrap().value;
        prop_assert!((v2 - e2).abs() <= 1e-10 * e2.abs().max(1.0));
    }

    #[test]
    fn epi_finite_difference_hessians_match_analytic(
        t1 in prop::collection::vec(0.1..0.9_f64, 13),
        a in -3.0..0.0_f64,
        b in -2.0..4.0_f64,
    ) {
        let data = epi_generate(&EpiGeneratorConfig::default()).unwrap();
        let ds = data.to_dataset().unwrap();
        let model = epi_model(data.len(), OffsetMode::Literal);
        for obs in ds.data2.iter() {
            let exact = model.module2.hessian_full(obs, &t1, &[a, b]).unwrap();
            let fd = fd_hessian_m2(&model.module2, obs, &t1, &[a, b]);
            let scale = exact.abs().max().max(1.0);
            prop_assert!((&exact - &fd).abs().max() < 1e-4 * scale);
        }
        for obs in ds.data1.iter().step_by(50) {
            let exact = model.module1.hessian(obs, &t1).unwrap();
            let fd = fd_hessian_m1(&model.module1, obs, &t1);
            let scale = exact.abs().max().max(1.0);
            prop_assert!((&exact - &fd).abs().max() < 1e-4 * scale);
        }
    }

    #[test]
    fn logistic_finite_difference_hessian_matches_analytic(
        t in prop::collection::vec(-1.5..1.5_f64, 4),
    ) {
        let model = causal_model(3);
        let data = causal_generate(&CausalGeneratorConfig { n: 40, ..Default::default() }).unwrap();
        for obs in data.data1.iter() {
            let exact = model.module1.hessian(obs, &t).unwrap();
            let fd = fd_hessian_m1(&model.module1, obs, &t);
            prop_assert!((&exact - &fd).abs().max() < 1e-4 * exact.abs().max().max(1.0));
        }
    }
}

#[test]
fn fit_mle_is_bit_identical_across_calls() {
    let model = causal_model(3);
    let data = causal_generate(&CausalGeneratorConfig { n: 500, ..Default::default() }).unwrap();
    let cfg = OptimizerConfig::default();
    let a = fit_mle(&model, &data, &cfg).unwrap();
    let b = fit_mle(&model, &data, &cfg).unwrap();
    assert_eq!(a, b);
}
