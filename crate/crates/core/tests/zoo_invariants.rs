use cutboot::asymptotics::estimate_info;
use cutboot::model::{check_gradients_m1, check_gradients_m2, ModuleOne, ModuleTwo, ParameterSplit};
use cutboot::zoo::{
    biased_data_model, biased_generate, causal_generate, causal_model, counterexample_generate,
    counterexample_model, counterexample_population, epi_generate, epi_model, toy_generate,
    toy_model, toy_population_info, CausalGeneratorConfig, EpiGeneratorConfig, OffsetMode,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const POINTS: usize = 100;
const TOL: f64 = 1e-5;

fn uniform(r: &mut ChaCha8Rng, lo: f64, hi: f64, d: usize) -> Vec<f64> {
    (0..d).map(|_| r.random_range(lo..hi)).collect()
}

fn assert_passes<M1: ModuleOne, M2: ModuleTwo>(
    m1: &M1,
    m2: &M2,
    x1: &[M1::Obs],
    x2: &[M2::Obs],
    t1: &[f64],
    t2: &[f64],
) {
    let a = check_gradients_m1(m1, x1, t1, TOL).unwrap();
    assert!(a.passed, "module 1 at {t1:?}: {a:?}");
    let b = check_gradients_m2(m2, x2, t1, t2, TOL).unwrap();
    assert!(b.passed, "module 2 at {t1:?}, {t2:?}: {b:?}");
}

#[test]
fn toy_gradients() {
    let model = toy_model();
    let data = toy_generate(0.5, 1.0, 30, 1).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..POINTS {
        let (t1, t2) = (uniform(&mut r, -3.0, 3.0, 1), uniform(&mut r, -3.0, 3.0, 1));
        assert_passes(&model.module1, &model.module2, &data.data1, &data.data2, &t1, &t2);
    }
}

#[test]
fn biased_gradients() {
    let model = biased_data_model(Some((2.0, 0.3))).unwrap();
    let data = biased_generate(1.0, 0.5, 10, 30, 2).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..POINTS {
        let (t1, t2) = (uniform(&mut r, -3.0, 3.0, 1), uniform(&mut r, -3.0, 3.0, 1));
        assert_passes(&model.module1, &model.module2, &data.data1, &data.data2, &t1, &t2);
    }
}

#[test]
fn counterexample_gradients() {
    let model = counterexample_model();
    let data = counterexample_generate(1.5, 30, 3).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..POINTS {
        let (t1, t2) = (uniform(&mut r, -3.0, 3.0, 1), uniform(&mut r, -3.0, 3.0, 1));
        assert_passes(&model.module1, &model.module2, &data.data1, &data.data2, &t1, &t2);
    }
}

#[test]
fn causal_gradients() {
    let model = causal_model(3);
    let data = causal_generate(&CausalGeneratorConfig {
        n: 60,
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..POINTS {
        let t1 = uniform(&mut r, -1.5, 1.5, 4);
        let t2 = uniform(&mut r, -1.5, 1.5, 7);
        assert_passes(&model.module1, &model.module2, &data.data1, &data.data2, &t1, &t2);
    }
}

#[test]
fn epi_gradients_both_offsets() {
    let data = epi_generate(&EpiGeneratorConfig {
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    let ds = data.to_dataset().unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(5);
    for offset in [OffsetMode::Literal, OffsetMode::Log] {
        let model = epi_model(data.len(), offset);
        for _ in 0..POINTS {
            let t1 = uniform(&mut r, 0.05, 0.95, data.len());
            let t2 = vec![r.random_range(-3.0..0.0), r.random_range(-2.0..4.0)];
            assert_passes(&model.module1, &model.module2, &ds.data1, &ds.data2, &t1, &t2);
        }
    }
}

fn assert_close(name: &str, est: &DMatrix<f64>, want: &DMatrix<f64>, tol: f64) {
    for (e, w) in est.iter().zip(want.iter()) {
        let err = (e - w).abs() / w.abs().max(0.05);
        assert!(err < tol, "{name}: estimated {est}, analytic {want}");
    }
}

#[test]
fn toy_information_matches_population_values() {
    let (rho, sigma2) = (0.8, 1.0);
    let model = toy_model();
    let data = toy_generate(rho, sigma2, 100_000, 6).unwrap();
    let pop = toy_population_info(rho, sigma2);
    let at = pop.evaluated_at.clone();
    let est = estimate_info(&model, &data, &at).unwrap();
    assert_close("I1", &est.i1, &pop.i1, 0.05);
    assert_close("J1", &est.j1, &pop.j1, 0.05);
    assert_close("I2", &est.i2, &pop.i2, 0.05);
    assert_close("J2", &est.j2, &pop.j2, 0.05);
    assert_close("RJ", &est.rj, &pop.rj, 0.05);
    assert_close("RI", est.ri.as_ref().unwrap(), pop.ri.as_ref().unwrap(), 0.05);
}

#[test]
fn counterexample_information_matches_population_values() {
    let model = counterexample_model();
    let data = counterexample_generate(2.0, 100_000, 7).unwrap();
    let pop = counterexample_population(2.0);
    let at = ParameterSplit::new(vec![0.0], vec![0.0]).unwrap();
    let est = estimate_info(&model, &data, &at).unwrap();
    assert_close("I1", &est.i1, &pop.info.i1, 0.05);
    assert_close("J1", &est.j1, &pop.info.j1, 0.05);
    assert_close("I2", &est.i2, &pop.info.i2, 0.05);
    assert_close("J2", &est.j2, &pop.info.j2, 0.05);
    assert_close("RJ", &est.rj, &pop.info.rj, 0.05);
    assert!(est.ri.is_none());
}

#[test]
fn generators_repeat_per_seed() {
    let a = toy_generate(0.3, 1.0, 50, 9).unwrap();
    let b = toy_generate(0.3, 1.0, 50, 9).unwrap();
    assert_eq!(a.data1, b.data1);
    assert_eq!(a.data2, b.data2);
    let c = toy_generate(0.3, 1.0, 50, 10).unwrap();
    assert_ne!(a.data1, c.data1);
    let e1 = epi_generate(&EpiGeneratorConfig::default()).unwrap();
    let e2 = epi_generate(&EpiGeneratorConfig::default()).unwrap();
    assert_eq!(e1, e2);
    let cfg = CausalGeneratorConfig::default();
    assert_eq!(causal_generate(&cfg).unwrap().data2, causal_generate(&cfg).unwrap().data2);
}
