//! Reference samplers for the cut posterior: exact conjugate draws for the
//! Gaussian zoo models and a nested random-walk Metropolis scheme.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::estimate_info;
use crate::error::{Error, Result};
use crate::model::{
    stage_one_value, stage_two_value, CutDataset, CutModel, ModuleOne, ModuleTwo, ParameterSplit,
    PriorWeight,
};
use crate::optimize::{fit_mle, OptimizerConfig};
use crate::rng;
use crate::sampler::{solve_stage_two, Draw, SampleSet, Scenario};
use crate::zoo::{BiasedShift, BivariateShift, GaussianLocation, ToyObs, ToyRegression};

/// Normal posterior `(mean, variance)` of a Gaussian location with known
/// variance. Empty data returns the prior.
pub fn gaussian_location_posterior(module: &GaussianLocation, data: &[f64]) -> (f64, f64) {
    let precision = data.len() as f64 / module.variance + 1.0 / module.prior_variance;
    let sum = data.iter().sum::<f64>() / module.variance + module.prior_mean / module.prior_variance;
    (sum / precision, 1.0 / precision)
}

/// Module 2 with a scalar `theta2` whose conditional posterior given
/// `theta1` is Normal.
pub trait ConjugateModuleTwo: ModuleTwo {
    /// `(mean, variance)` of `theta2 | x2, theta1`.
    fn conditional_posterior(&self, data: &[Self::Obs], theta1: f64) -> (f64, f64);
}

impl ConjugateModuleTwo for BiasedShift {
    fn conditional_posterior(&self, data: &[f64], theta1: f64) -> (f64, f64) {
        let precision = data.len() as f64 / self.variance + 1.0 / self.prior_variance;
        let s = data.iter().map(|x| x - theta1).sum::<f64>() / self.variance;
        (s / precision, 1.0 / precision)
    }
}

impl ConjugateModuleTwo for ToyRegression {
    fn conditional_posterior(&self, data: &[ToyObs], theta1: f64) -> (f64, f64) {
        let precision = data.iter().map(|o| o.x * o.x).sum::<f64>() + 1.0 / self.prior_variance;
        let s = data.iter().map(|o| o.x * (o.y - theta1)).sum::<f64>();
        (s / precision, 1.0 / precision)
    }
}

impl ConjugateModuleTwo for BivariateShift {
    fn conditional_posterior(&self, data: &[[f64; 2]], theta1: f64) -> (f64, f64) {
        // precision [[1, 0.5], [0.5, 1]]
        let precision = data.len() as f64 + 1.0 / self.prior_variance;
        let s = data.iter().map(|o| o[1] + 0.5 * (o[0] - theta1)).sum::<f64>();
        (s / precision, 1.0 / precision)
    }
}

/// Exact cut-posterior draws: `theta1` from its module-1 posterior, then
/// `theta2` from its conditional posterior given that `theta1`.
pub fn cut_exact_gaussian<M2: ConjugateModuleTwo>(
    model: &CutModel<GaussianLocation, M2>,
    data: &CutDataset<f64, M2::Obs>,
    n_draws: usize,
    seed: u64,
) -> Result<SampleSet> {
    if n_draws == 0 {
        return Err(Error::InvalidArgument("N must be >= 1".into()));
    }
    let (m1, v1) = gaussian_location_posterior(&model.module1, &data.data1);
    let draws = (0..n_draws as u64)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::stream(seed, rng::domain::EXACT_CUT, k);
            let t1 = m1 + v1.sqrt() * r.sample::<f64, _>(StandardNormal);
            let (m2, v2) = model.module2.conditional_posterior(&data.data2, t1);
            let t2 = m2 + v2.sqrt() * r.sample::<f64, _>(StandardNormal);
            Draw::new(vec![t1], vec![t2], true)
        })
        .collect();
    Ok(SampleSet::new(draws, Scenario::CutBayes, seed, model.id.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NestedMcmcConfig {
    pub outer_draws: usize,
    pub outer_burnin: usize,
    pub thinning: usize,
    pub inner_chain_length: usize,
    pub inner_burnin: usize,
    /// Random-walk standard deviations per coordinate; derived from the
    /// plug-in information matrices when absent.
    pub outer_scales: Option<Vec<f64>>,
    pub inner_scales: Option<Vec<f64>>,
}

impl Default for NestedMcmcConfig {
    fn default() -> Self {
        Self {
            outer_draws: 4000,
            outer_burnin: 1000,
            thinning: 5,
            inner_chain_length: 200,
            inner_burnin: 100,
            outer_scales: None,
            inner_scales: None,
        }
    }
}

impl NestedMcmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_draws == 0 || self.thinning == 0 || self.inner_chain_length == 0 {
            return Err(Error::InvalidArgument(
                "outer_draws, thinning and inner_chain_length must be >= 1".into(),
            ));
        }
        if self.inner_burnin >= self.inner_chain_length {
            return Err(Error::InvalidArgument(
                "inner_burnin must be smaller than inner_chain_length".into(),
            ));
        }
        for s in self.outer_scales.iter().chain(&self.inner_scales) {
            if s.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::InvalidArgument("proposal scales must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedDiagnostics {
    pub outer_acceptance: Option<f64>,
    pub inner_acceptance: Vec<f64>,
    /// Inner chains with acceptance outside `[0.05, 0.8]`.
    pub poor_inner_chains: usize,
    pub outer_scales: Option<Vec<f64>>,
    pub inner_scales: Vec<f64>,
    pub warnings: Vec<String>,
}

fn rw_step<F: Fn(&[f64]) -> f64>(
    target: &F,
    state: &mut Vec<f64>,
    current: &mut f64,
    scales: &[f64],
    r: &mut ChaCha8Rng,
) -> bool {
    let proposal: Vec<f64> = state
        .iter()
        .zip(scales)
        .map(|(x, s)| x + s * r.sample::<f64, _>(StandardNormal))
        .collect();
    let lp = target(&proposal);
    let u: f64 = r.random();
    if lp.is_finite() && u.ln() < lp - *current {
        *state = proposal;
        *current = lp;
        true
    } else {
        false
    }
}

/// `2.4 sqrt(diag(J^{-1}) / n) / sqrt(d)`
fn default_scales(j: &nalgebra::DMatrix<f64>, n: usize) -> Option<Vec<f64>> {
    let d = j.nrows();
    let inv = j.clone().try_inverse()?;
    let s: Vec<f64> = (0..d)
        .map(|i| 2.4 * (inv[(i, i)] / n as f64).sqrt() / (d as f64).sqrt())
        .collect();
    s.iter().all(|v| v.is_finite() && *v > 0.0).then_some(s)
}

struct Tuning {
    theta1: Vec<f64>,
    theta2: Vec<f64>,
    outer: Option<Vec<f64>>,
    inner: Option<Vec<f64>>,
}

fn tune<M1: ModuleOne, M2: ModuleTwo>(
    model: &CutModel<M1, M2>,
    data: &CutDataset<M1::Obs, M2::Obs>,
) -> Tuning {
    let cfg = OptimizerConfig::default();
    let fallback = || Tuning {
        theta1: model.module1.initial_point(&data.data1),
        theta2: model.module2.initial_point(&data.data2, &model.module1.initial_point(&data.data1)),
        outer: None,
        inner: None,
    };
    let Ok(mle) = fit_mle(model, data, &cfg) else {
        return fallback();
    };
    let at = ParameterSplit {
        theta1: mle.theta1_hat.clone(),
        theta2: mle.theta2_hat.clone(),
    };
    let (outer, inner) = match estimate_info(model, data, &at) {
        Ok(info) => (
            default_scales(&info.j1, data.n1()),
            default_scales(&info.j2, data.n2()),
        ),
        Err(_) => (None, None),
    };
    Tuning {
        theta1: mle.theta1_hat,
        theta2: mle.theta2_hat,
        outer,
        inner,
    }
}

/// Two-stage cut sampler: a thinned random-walk chain on the module-1
/// posterior, then for every retained `theta1` an independent inner chain on
/// `theta2 | theta1`, whose final state is kept.
pub fn cut_nested_metropolis<M1: ModuleOne, M2: ModuleTwo>(
    model: &CutModel<M1, M2>,
    data: &CutDataset<M1::Obs, M2::Obs>,
    config: &NestedMcmcConfig,
    seed: u64,
) -> Result<(SampleSet, NestedDiagnostics)> {
    config.validate()?;
    data.validate()?;
    let tuning = tune(model, data);
    let outer_scales = config
        .outer_scales
        .clone()
        .or(tuning.outer.clone())
        .ok_or_else(|| Error::InvalidArgument("outer proposal scales cannot be derived; set them explicitly".into()))?;
    if outer_scales.len() != model.module1.dim() {
        return Err(Error::DimensionMismatch {
            context: "outer proposal scales",
            expected: model.module1.dim(),
            actual: outer_scales.len(),
        });
    }
    let full_prior = PriorWeight::Scalar(1.0);
    let target = |t: &[f64]| {
        let v = stage_one_value(&model.module1, &data.data1, None, &full_prior, t);
        if v.is_nan() { f64::NEG_INFINITY } else { v }
    };
    let mut state = tuning.theta1.clone();
    let mut current = target(&state);
    if !current.is_finite() {
        return Err(Error::InfeasibleStart);
    }
    let mut r = rng::stream(seed, rng::domain::OUTER_CHAIN, 0);
    let total = config.outer_burnin + config.outer_draws * config.thinning;
    let mut accepted = 0usize;
    let mut theta1_draws = Vec::with_capacity(config.outer_draws);
    for it in 0..total {
        if rw_step(&target, &mut state, &mut current, &outer_scales, &mut r) {
            accepted += 1;
        }
        if it >= config.outer_burnin && (it - config.outer_burnin + 1) % config.thinning == 0 {
            theta1_draws.push(state.clone());
        }
    }
    let (set, mut diag) = inner_chains(
        model,
        &data.data2,
        &theta1_draws,
        &tuning.theta2,
        config,
        tuning.inner,
        seed,
    )?;
    diag.outer_acceptance = Some(accepted as f64 / total as f64);
    diag.outer_scales = Some(outer_scales);
    Ok((set, diag))
}

/// Nested sampler with externally supplied module-1 draws (for example exact
/// Beta draws); only the inner chains are run.
pub fn cut_nested_given_theta1<M1: ModuleOne, M2: ModuleTwo>(
    model: &CutModel<M1, M2>,
    data2: &[M2::Obs],
    theta1_draws: &[Vec<f64>],
    config: &NestedMcmcConfig,
    seed: u64,
) -> Result<(SampleSet, NestedDiagnostics)> {
    config.validate()?;
    if theta1_draws.is_empty() || data2.is_empty() {
        return Err(Error::InvalidArgument("need theta1 draws and module-2 data".into()));
    }
    let d1 = model.module1.dim();
    let center: Vec<f64> = (0..d1)
        .map(|i| theta1_draws.iter().map(|t| t[i]).sum::<f64>() / theta1_draws.len() as f64)
        .collect();
    let cfg = OptimizerConfig::default();
    let prepared = model.module2.prepare(&center, data2);
    let init = model.module2.initial_point(&prepared, &center);
    let theta2 = solve_stage_two(&model.module2, data2, None, &PriorWeight::Scalar(1.0), &center, &init, &cfg)
        .map_or(init, |(t, _)| t);
    // conditional information at the centre for default inner scales
    let inner = {
        let mut j2 = nalgebra::DMatrix::zeros(model.module2.dim(), model.module2.dim());
        let d1 = center.len();
        for obs in prepared.iter() {
            if let Some(h) = model.module2.hessian_full(obs, &center, &theta2) {
                j2 -= h.view((d1, d1), (theta2.len(), theta2.len()));
            } else {
                j2 -= crate::asymptotics::fd_hessian_m2(&model.module2, obs, &center, &theta2)
                    .view((d1, d1), (theta2.len(), theta2.len()));
            }
        }
        j2 /= prepared.len() as f64;
        default_scales(&j2, prepared.len())
    };
    inner_chains(model, data2, theta1_draws, &theta2, config, inner, seed)
}

fn inner_chains<M1: ModuleOne, M2: ModuleTwo>(
    model: &CutModel<M1, M2>,
    data2: &[M2::Obs],
    theta1_draws: &[Vec<f64>],
    theta2_start: &[f64],
    config: &NestedMcmcConfig,
    derived_scales: Option<Vec<f64>>,
    seed: u64,
) -> Result<(SampleSet, NestedDiagnostics)> {
    let d2 = model.module2.dim();
    let scales = config
        .inner_scales
        .clone()
        .or(derived_scales)
        .ok_or_else(|| Error::InvalidArgument("inner proposal scales cannot be derived; set them explicitly".into()))?;
    if scales.len() != d2 {
        return Err(Error::DimensionMismatch {
            context: "inner proposal scales",
            expected: d2,
            actual: scales.len(),
        });
    }
    let full_prior = PriorWeight::Scalar(1.0);
    let opt = OptimizerConfig::default();
    let results: Vec<(Draw, f64)> = theta1_draws
        .par_iter()
        .enumerate()
        .map(|(k, theta1)| {
            let mut r = rng::stream(seed, rng::domain::INNER_CHAIN, k as u64);
            let prepared = model.module2.prepare(theta1, data2);
            let target = |t: &[f64]| {
                let v = stage_two_value(&model.module2, &prepared, None, &full_prior, theta1, t);
                if v.is_nan() { f64::NEG_INFINITY } else { v }
            };
            // start each chain at the conditional posterior mode
            let mut state = solve_stage_two(
                &model.module2,
                data2,
                None,
                &full_prior,
                theta1,
                theta2_start,
                &opt,
            )
            .map_or_else(|| theta2_start.to_vec(), |(t, _)| t);
            let mut current = target(&state);
            if !current.is_finite() {
                return (Draw::new(theta1.clone(), vec![f64::NAN; d2], false), 0.0);
            }
            let mut accepted = 0usize;
            for _ in 0..config.inner_chain_length {
                if rw_step(&target, &mut state, &mut current, &scales, &mut r) {
                    accepted += 1;
                }
            }
            let rate = accepted as f64 / config.inner_chain_length as f64;
            (Draw::new(theta1.clone(), state, true), rate)
        })
        .collect();
    let (draws, rates): (Vec<Draw>, Vec<f64>) = results.into_iter().unzip();
    let poor = rates.iter().filter(|a| !(0.05..=0.8).contains(*a)).count();
    let mut warnings = Vec::new();
    if config.inner_burnin == 0 {
        warnings.push("inner chains run without burn-in".to_string());
    }
    if poor as f64 > 0.1 * rates.len() as f64 {
        warnings.push(format!(
            "{poor} of {} inner chains have acceptance outside [0.05, 0.8]",
            rates.len()
        ));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let set = SampleSet::new(draws, Scenario::CutBayes, seed, model.id.clone());
    Ok((
        set,
        NestedDiagnostics {
            outer_acceptance: None,
            inner_acceptance: rates,
            poor_inner_chains: poor,
            outer_scales: None,
            inner_scales: scales,
            warnings,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::biased_data_model;

    #[test]
    fn empty_module_one_data_gives_prior() {
        let m = biased_data_model(None).unwrap();
        assert_eq!(gaussian_location_posterior(&m.module1, &[]), (0.0, 1.0));
    }

    #[test]
    fn four_ones_update() {
        let m = biased_data_model(None).unwrap();
        let (mean, var) = gaussian_location_posterior(&m.module1, &[1.0; 4]);
        assert!((mean - 0.8).abs() < 1e-15 && (var - 0.2).abs() < 1e-15);
    }

    #[test]
    fn theta2_conditional_mean() {
        let m = biased_data_model(None).unwrap();
        let data2 = vec![1.0; 100];
        let (mean, var) = m.module2.conditional_posterior(&data2, 0.3);
        assert!((mean - 100.0 * (1.0 - 0.3) / 200.0).abs() < 1e-12);
        assert!((var - 1.0 / 200.0).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let mut c = NestedMcmcConfig::default();
        assert!(c.validate().is_ok());
        c.inner_burnin = c.inner_chain_length;
        assert!(c.validate().is_err());
        c.inner_burnin = 0;
        assert!(c.validate().is_ok());
        c.inner_scales = Some(vec![0.0]);
        assert!(c.validate().is_err());
    }
}
