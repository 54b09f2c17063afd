//! Posterior bootstrap for two-module cut models.
//!
//! Scenario 1 draws independent exponential weights for the two datasets;
//! Scenario 2 reuses the module-1 weights on module 2 (paired data). Each
//! draw owns a random stream keyed by its index, and every optimization is
//! warm-started at the maximum likelihood estimate, so output does not
//! depend on the number of worker threads.

use std::fmt;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CutDataset, CutModel, ModuleOne, ModuleTwo, PriorWeight};
use crate::optimize::{
    fit_mle, maximize, stage_two_start, MleEstimates, OptimizerConfig, StageOneObjective,
    StageTwoObjective,
};
use crate::rng;
use crate::zoo::EpiData;

/// Largest tolerated share of failed draws.
pub const MAX_FAILURE_RATE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    S1,
    S2,
    CutBayes,
    FullBayes,
    FullPb,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::S1 => "s1",
            Scenario::S2 => "s2",
            Scenario::CutBayes => "cut-bayes",
            Scenario::FullBayes => "full-bayes",
            Scenario::FullPb => "full-pb",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Scenario::S1,
            Scenario::S2,
            Scenario::CutBayes,
            Scenario::FullBayes,
            Scenario::FullPb,
        ]
        .into_iter()
        .find(|x| x.as_str() == s)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
    pub converged: bool,
}

impl Draw {
    pub fn new(theta1: Vec<f64>, theta2: Vec<f64>, converged: bool) -> Self {
        Self {
            theta1,
            theta2,
            converged,
        }
    }

    pub fn stacked(&self) -> Vec<f64> {
        self.theta1.iter().chain(&self.theta2).copied().collect()
    }
}

/// All draws of a run, including failed ones, which summaries skip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub draws: Vec<Draw>,
    pub scenario: Scenario,
    pub seed: u64,
    pub w0: PriorWeight,
    pub v0: PriorWeight,
    pub model_id: String,
}

impl SampleSet {
    pub fn new(draws: Vec<Draw>, scenario: Scenario, seed: u64, model_id: impl Into<String>) -> Self {
        Self {
            draws,
            scenario,
            seed,
            w0: PriorWeight::zero(),
            v0: PriorWeight::zero(),
            model_id: model_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.draws
            .first()
            .map_or((0, 0), |d| (d.theta1.len(), d.theta2.len()))
    }

    pub fn retained(&self) -> impl Iterator<Item = &Draw> + '_ {
        self.draws.iter().filter(|d| d.converged)
    }

    pub fn failures(&self) -> usize {
        self.draws.iter().filter(|d| !d.converged).count()
    }

    pub fn failure_rate(&self) -> f64 {
        if self.draws.is_empty() {
            0.0
        } else {
            self.failures() as f64 / self.draws.len() as f64
        }
    }

    /// Values of stacked coordinate `i` over retained draws.
    pub fn coordinate(&self, i: usize) -> Vec<f64> {
        let d1 = self.dims().0;
        self.retained()
            .map(|d| if i < d1 { d.theta1[i] } else { d.theta2[i - d1] })
            .collect()
    }

    /// Retained draws as rows of an `m x (d1 + d2)` matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        let (d1, d2) = self.dims();
        let rows: Vec<Vec<f64>> = self.retained().map(Draw::stacked).collect();
        DMatrix::from_fn(rows.len(), d1 + d2, |r, c| rows[r][c])
    }

    pub fn mean(&self) -> Vec<f64> {
        let m = self.matrix();
        let n = m.nrows().max(1) as f64;
        m.row_sum().iter().map(|s| s / n).collect()
    }

    /// Sample covariance (divisor `m - 1`) of the stacked draws.
    pub fn covariance(&self) -> DMatrix<f64> {
        covariance_of(&self.matrix())
    }
}

pub(crate) fn covariance_of(rows: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, d) = rows.shape();
    if m < 2 {
        return DMatrix::zeros(d, d);
    }
    let mean = rows.row_mean();
    let mut centered = rows.clone();
    for mut r in centered.row_iter_mut() {
        r -= &mean;
    }
    let c = centered.transpose() * &centered / (m as f64 - 1.0);
    (&c + c.transpose()) * 0.5
}

/// `n` i.i.d. unit-rate exponential weights.
pub fn draw_exp_weights<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(Exp1)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub optimizer: OptimizerConfig,
    /// Replace every exponential weight by 1 (debugging aid).
    pub unit_weights: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            unit_weights: false,
        }
    }
}

fn weights(n: usize, rng: &mut ChaCha8Rng, unit: bool) -> Vec<f64> {
    if unit {
        vec![1.0; n]
    } else {
        draw_exp_weights(n, rng)
    }
}

fn check_failures(draws: &[Draw]) -> Result<()> {
    let failed = draws.iter().filter(|d| !d.converged).count();
    if failed as f64 > MAX_FAILURE_RATE * draws.len() as f64 {
        return Err(Error::TooManyFailures {
            failed,
            total: draws.len(),
        });
    }
    if failed > 0 {
        log::warn!("{failed} of {} draws did not converge", draws.len());
    }
    Ok(())
}

fn failed_draw(d1: usize, d2: usize) -> Draw {
    Draw::new(vec![f64::NAN; d1], vec![f64::NAN; d2], false)
}

/// Solves the weighted stage-2 problem at `theta1`, warm-started at `start`
/// with a data-driven fallback when `start` is infeasible.
pub(crate) fn solve_stage_two<M2: ModuleTwo>(
    module: &M2,
    data2: &[M2::Obs],
    weights: Option<&[f64]>,
    v0: &PriorWeight,
    theta1: &[f64],
    start: &[f64],
    config: &OptimizerConfig,
) -> Option<(Vec<f64>, bool)> {
    let prepared = module.prepare(theta1, data2);
    let obj = StageTwoObjective {
        module,
        data: &prepared,
        weights,
        prior_weight: v0,
        theta1,
    };
    let run = match maximize(&obj, start, config) {
        Ok(r) => r,
        Err(Error::InfeasibleStart) => {
            let alt = stage_two_start(module, &prepared, theta1, &config.initial_point_policy);
            maximize(&obj, &alt, config).ok()?
        }
        Err(_) => return None,
    };
    Some((run.0, run.1.converged))
}

fn validate_run<M1: ModuleOne, M2: ModuleTwo>(
    model: &CutModel<M1, M2>,
    n_draws: usize,
    w0: &PriorWeight,
    v0: &PriorWeight,
) -> Result<()> {
    if n_draws == 0 {
        return Err(Error::InvalidArgument("N must be >= 1".into()));
    }
    w0.validate(model.module1.dim(), model.module1.prior_factorizes())?;
    v0.validate(model.module2.dim(), model.module2.prior_factorizes())?;
    Ok(())
}

fn run_pbmi<M1: ModuleOne, M2: ModuleTwo>(
    model: &CutModel<M1, M2>,
    data: &CutDataset<M1::Obs, M2::Obs>,
    n_draws: usize,
    w0: &PriorWeight,
    v0: &PriorWeight,
    config: &SamplerConfig,
    seed: u64,
    scenario: Scenario,
) -> Result<SampleSet> {
    data.validate()?;
    validate_run(model, n_draws, w0, v0)?;
    if scenario == Scenario::S2 && !data.paired {
        return Err(Error::RequiresPairedData);
    }
    let mle = fit_mle(model, data, &config.optimizer)?;
    let (d1, d2) = model.dims();
    let draws: Vec<Draw> = (0..n_draws as u64)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::stream(seed, rng::domain::PBMI_DRAW, k);
            let w = weights(data.n1(), &mut r, config.unit_weights);
            let v = match scenario {
                Scenario::S2 => None,
                _ => Some(weights(data.n2(), &mut r, config.unit_weights)),
            };
            pbmi_draw(model, data, &mle, &w, v.as_deref(), w0, v0, &config.optimizer)
                .unwrap_or_else(|| failed_draw(d1, d2))
        })
        .collect();
    check_failures(&draws)?;
    let mut set = SampleSet::new(draws, scenario, seed, model.id.clone());
    set.w0 = w0.clone();
    set.v0 = v0.clone();
    Ok(set)
}

#[allow(clippy::too_many_arguments)]
fn pbmi_draw<M1: ModuleOne, M2: ModuleTwo>(
    model: &CutModel<M1, M2>,
    data: &CutDataset<M1::Obs, M2::Obs>,
    mle: &MleEstimates,
    w: &[f64],
    v: Option<&[f64]>,
    w0: &PriorWeight,
    v0: &PriorWeight,
    config: &OptimizerConfig,
) -> Option<Draw> {
    let obj1 = StageOneObjective {
        module: &model.module1,
        data: &data.data1,
        weights: Some(w),
        prior_weight: w0,
    };
    let (theta1, diag1) = maximize(&obj1, &mle.theta1_hat, config).ok()?;
    // Scenario 2: the module-1 weights are reused on the paired module-2 rows
    let v = v.unwrap_or(w);
    let (theta2, ok2) = solve_stage_two(
        &model.module2,
        &data.data2,
        Some(v),
        v0,
        &theta1,
        &mle.theta2_hat,
        config,
    )?;
    Some(Draw::new(theta1, theta2, diag1.converged && ok2))
}

/// Scenario 1: independent weight vectors for the two modules.
pub fn pbmi_scenario1<M1: ModuleOne, M2: ModuleTwo>(
    model: &CutModel<M1, M2>,
    data: &CutDataset<M1::Obs, M2::Obs>,
    n_draws: usize,
    w0: &PriorWeight,
    v0: &PriorWeight,
    config: &SamplerConfig,
    seed: u64,
) -> Result<SampleSet> {
    run_pbmi(model, data, n_draws, w0, v0, config, seed, Scenario::S1)
}

/// Scenario 2: one weight vector shared by both stages on paired data.
pub fn pbmi_scenario2<M1: ModuleOne, M2: ModuleTwo>(
    model: &CutModel<M1, M2>,
    data: &CutDataset<M1::Obs, M2::Obs>,
    n_draws: usize,
    w0: &PriorWeight,
    v0: &PriorWeight,
    config: &SamplerConfig,
    seed: u64,
) -> Result<SampleSet> {
    run_pbmi(model, data, n_draws, w0, v0, config, seed, Scenario::S2)
}

/// Stage-1 sampler for independent binomial groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultigroupVariant {
    /// Exponential weights on the disaggregated Bernoulli trials.
    WeightedBernoulli,
    /// Exact `Beta(1 + Z, 1 + n1 - Z)` draws.
    ConjugateBeta,
    /// Weighted trials plus `T` weighted pseudo-trials from the Beta(1, 1)
    /// prior predictive.
    Pseudosample(usize),
}

/// `n_draws` stage-1 vectors, one success probability per group.
pub fn pbmi_multigroup_stage1(
    data: &EpiData,
    n_draws: usize,
    variant: MultigroupVariant,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    data.validate()?;
    if n_draws == 0 {
        return Err(Error::InvalidArgument("N must be >= 1".into()));
    }
    let draws = (0..n_draws as u64)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::stream(seed, rng::domain::MULTIGROUP_STAGE_ONE, k);
            data.groups
                .iter()
                .map(|g| match variant {
                    MultigroupVariant::ConjugateBeta => {
                        Beta::new(1.0 + g.z as f64, 1.0 + (g.n1 - g.z) as f64)
                            .expect("valid beta parameters")
                            .sample(&mut r)
                    }
                    MultigroupVariant::WeightedBernoulli => {
                        let (s, t) = weighted_counts(g.z, g.n1, &mut r);
                        s / t
                    }
                    MultigroupVariant::Pseudosample(m) => {
                        let (mut s, mut t) = weighted_counts(g.z, g.n1, &mut r);
                        let p: f64 = r.random();
                        for _ in 0..m {
                            let success = r.random::<f64>() < p;
                            let w: f64 = r.sample(Exp1);
                            t += w;
                            if success {
                                s += w;
                            }
                        }
                        s / t
                    }
                })
                .collect()
        })
        .collect();
    Ok(draws)
}

// (weight on successes, total weight) over z successes among n trials
fn weighted_counts(z: u64, n: u64, r: &mut ChaCha8Rng) -> (f64, f64) {
    let mut s = 0.0;
    let mut t = 0.0;
    for j in 0..n {
        let w: f64 = r.sample(Exp1);
        t += w;
        if j < z {
            s += w;
        }
    }
    (s, t)
}

/// Stage 2 of Scenario 1 given externally produced `theta1` draws: for each
/// draw a fresh module-2 weight vector is drawn and the weighted module-2
/// objective maximized.
pub fn pbmi_stage2_given_theta1<M1: ModuleOne, M2: ModuleTwo>(
    model: &CutModel<M1, M2>,
    data2: &[M2::Obs],
    theta1_draws: &[Vec<f64>],
    v0: &PriorWeight,
    config: &SamplerConfig,
    seed: u64,
) -> Result<SampleSet> {
    let (d1, d2) = model.dims();
    if theta1_draws.is_empty() || data2.is_empty() {
        return Err(Error::InvalidArgument("need theta1 draws and module-2 data".into()));
    }
    if let Some(t) = theta1_draws.iter().find(|t| t.len() != d1) {
        return Err(Error::DimensionMismatch {
            context: "theta1 draw",
            expected: d1,
            actual: t.len(),
        });
    }
    v0.validate(d2, model.module2.prior_factorizes())?;
    // warm start: unweighted stage-2 fit at the average theta1
    let center: Vec<f64> = (0..d1)
        .map(|i| theta1_draws.iter().map(|t| t[i]).sum::<f64>() / theta1_draws.len() as f64)
        .collect();
    let prepared = model.module2.prepare(&center, data2);
    let init = stage_two_start(
        &model.module2,
        &prepared,
        &center,
        &config.optimizer.initial_point_policy,
    );
    let reference = solve_stage_two(
        &model.module2,
        data2,
        None,
        &PriorWeight::zero(),
        &center,
        &init,
        &config.optimizer,
    )
    .map_or(init, |(t, _)| t);
    let draws: Vec<Draw> = theta1_draws
        .par_iter()
        .enumerate()
        .map(|(k, theta1)| {
            let mut r = rng::stream(seed, rng::domain::STAGE_TWO_GIVEN, k as u64);
            let v = weights(data2.len(), &mut r, config.unit_weights);
            match solve_stage_two(
                &model.module2,
                data2,
                Some(&v),
                v0,
                theta1,
                &reference,
                &config.optimizer,
            ) {
                Some((theta2, ok)) => Draw::new(theta1.clone(), theta2, ok),
                None => failed_draw(d1, d2),
            }
        })
        .collect();
    check_failures(&draws)?;
    let mut set = SampleSet::new(draws, Scenario::S1, seed, model.id.clone());
    set.v0 = v0.clone();
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{biased_data_model, biased_generate, toy_generate, toy_model, EpiGroup};

    #[test]
    fn exp_weights_moments() {
        let mut r = rng::stream(1, 99, 0);
        let w = draw_exp_weights(1_000_000, &mut r);
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!((0.995..=1.005).contains(&mean), "{mean}");
        assert!((0.99..=1.01).contains(&var), "{var}");
        assert!(w.iter().all(|x| *x > 0.0));
        let again = draw_exp_weights(1_000_000, &mut rng::stream(1, 99, 0));
        assert_eq!(w, again);
    }

    #[test]
    fn biased_draws_are_weighted_means() {
        let model = biased_data_model(None).unwrap();
        let data = biased_generate(1.0, 0.5, 15, 40, 3).unwrap();
        let seed = 21;
        let set = pbmi_scenario1(
            &model,
            &data,
            25,
            &PriorWeight::zero(),
            &PriorWeight::zero(),
            &SamplerConfig::default(),
            seed,
        )
        .unwrap();
        for (k, d) in set.draws.iter().enumerate() {
            let mut r = rng::stream(seed, rng::domain::PBMI_DRAW, k as u64);
            let w = draw_exp_weights(data.n1(), &mut r);
            let v = draw_exp_weights(data.n2(), &mut r);
            let t1 = w.iter().zip(&data.data1).map(|(a, b)| a * b).sum::<f64>()
                / w.iter().sum::<f64>();
            let m2 = v.iter().zip(&data.data2).map(|(a, b)| a * b).sum::<f64>()
                / v.iter().sum::<f64>();
            assert!((d.theta1[0] - t1).abs() < 1e-8);
            assert!((d.theta2[0] - (m2 - t1)).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_module_one_data() {
        let model = biased_data_model(None).unwrap();
        let data = CutDataset::new(vec![2.5; 12], vec![0.0, 1.0, 3.0], false).unwrap();
        let set = pbmi_scenario1(
            &model,
            &data,
            30,
            &PriorWeight::zero(),
            &PriorWeight::zero(),
            &SamplerConfig::default(),
            4,
        )
        .unwrap();
        assert!(set.draws.iter().all(|d| (d.theta1[0] - 2.5).abs() < 1e-10));
    }

    #[test]
    fn unit_weights_reproduce_mle() {
        let model = toy_model();
        let data = toy_generate(0.3, 1.0, 50, 8).unwrap();
        let cfg = SamplerConfig {
            unit_weights: true,
            ..Default::default()
        };
        let mle = fit_mle(&model, &data, &cfg.optimizer).unwrap();
        let z = PriorWeight::zero();
        for set in [
            pbmi_scenario1(&model, &data, 10, &z, &z, &cfg, 1).unwrap(),
            pbmi_scenario2(&model, &data, 10, &z, &z, &cfg, 1).unwrap(),
        ] {
            for d in &set.draws {
                assert!((d.theta1[0] - mle.theta1_hat[0]).abs() < 1e-9);
                assert!((d.theta2[0] - mle.theta2_hat[0]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn scenario2_needs_pairs() {
        let model = biased_data_model(None).unwrap();
        let data = biased_generate(1.0, 1.0, 5, 5, 0).unwrap();
        let z = PriorWeight::zero();
        let err = pbmi_scenario2(&model, &data, 5, &z, &z, &SamplerConfig::default(), 0);
        assert!(matches!(err, Err(Error::RequiresPairedData)));
        assert_eq!(Error::RequiresPairedData.to_string(), "Scenario 2 requires paired data");
    }

    #[test]
    fn single_pair_is_reproducible() {
        let model = toy_model();
        let data = toy_generate(0.5, 1.0, 1, 2).unwrap();
        let z = PriorWeight::Scalar(1.0);
        let a = pbmi_scenario2(&model, &data, 5, &z, &z, &SamplerConfig::default(), 9).unwrap();
        let b = pbmi_scenario2(&model, &data, 5, &z, &z, &SamplerConfig::default(), 9).unwrap();
        assert_eq!(a, b);
    }

    fn one_group(z: u64, n1: u64) -> EpiData {
        EpiData::new(vec![EpiGroup { z, n1, y: 3, t: 0.0 }]).unwrap()
    }

    #[test]
    fn multigroup_zero_successes() {
        let draws =
            pbmi_multigroup_stage1(&one_group(0, 20), 50, MultigroupVariant::WeightedBernoulli, 1)
                .unwrap();
        assert!(draws.iter().all(|d| d[0] == 0.0));
    }

    #[test]
    fn multigroup_conjugate_mean() {
        let draws =
            pbmi_multigroup_stage1(&one_group(3, 10), 100_000, MultigroupVariant::ConjugateBeta, 5)
                .unwrap();
        let mean = draws.iter().map(|d| d[0]).sum::<f64>() / draws.len() as f64;
        assert!((mean - 4.0 / 12.0).abs() < 0.005, "{mean}");
    }

    #[test]
    fn multigroup_weighted_mean() {
        let draws = pbmi_multigroup_stage1(
            &one_group(30, 100),
            100_000,
            MultigroupVariant::WeightedBernoulli,
            6,
        )
        .unwrap();
        let mean = draws.iter().map(|d| d[0]).sum::<f64>() / draws.len() as f64;
        assert!((mean - 0.3).abs() < 0.01, "{mean}");
    }

    #[test]
    fn multigroup_pseudosamples_stay_in_unit_interval() {
        let draws =
            pbmi_multigroup_stage1(&one_group(0, 5), 200, MultigroupVariant::Pseudosample(4), 2)
                .unwrap();
        assert!(draws.iter().all(|d| d[0] >= 0.0 && d[0] < 1.0));
        assert!(draws.iter().any(|d| d[0] > 0.0));
    }
}
