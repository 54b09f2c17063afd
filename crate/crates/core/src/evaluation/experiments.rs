//! Replicated comparison studies on the biased-data and epidemiological
//! models.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{elpd_loo, elpd_module1, elpd_module2, ks_dissimilarity, quantile_sorted, LooResult};
use crate::asymptotics::plug_in_prior_weights;
use crate::baselines::{cut_exact_gaussian, cut_nested_given_theta1, NestedMcmcConfig};
use crate::error::{Error, Result};
use crate::model::PriorWeight;
use crate::optimize::OptimizerConfig;
use crate::rng;
use crate::sampler::{
    pbmi_multigroup_stage1, pbmi_scenario1, pbmi_stage2_given_theta1, MultigroupVariant,
    SampleSet, SamplerConfig,
};
use crate::zoo::{
    biased_data_model, biased_generate, epi_generate, epi_model, full_model_bayes,
    full_model_posterior_bootstrap, EpiData, EpiGeneratorConfig, OffsetMode,
};

/// Median of unsorted values; NaN for an empty slice.
pub fn median(values: &[f64]) -> f64 {
    quartiles(values).1
}

/// First quartile, median and third quartile (type-7).
pub fn quartiles(values: &[f64]) -> (f64, f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    (
        quantile_sorted(&v, 0.25),
        quantile_sorted(&v, 0.5),
        quantile_sorted(&v, 0.75),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ElpdMethod {
    Pbmi,
    CutBayes,
    FullBayes,
    FullPb,
}

impl ElpdMethod {
    pub const ALL: [ElpdMethod; 4] = [Self::Pbmi, Self::CutBayes, Self::FullBayes, Self::FullPb];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pbmi => "pbmi",
            Self::CutBayes => "cut-bayes",
            Self::FullBayes => "full-bayes",
            Self::FullPb => "full-pb",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElpdExperimentConfig {
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    pub n2_grid: Vec<usize>,
    /// `n1 = round(n1_ratio * n2)`, at least 1.
    pub n1_ratio: f64,
    pub replicates: usize,
    /// Fresh module-1 points scored per replicate.
    pub test_points: usize,
    pub n_draws: usize,
    pub seed: u64,
}

impl Default for ElpdExperimentConfig {
    fn default() -> Self {
        Self {
            sigma1_sq: 1.0,
            sigma2_sq: 0.5,
            n2_grid: vec![100, 1000],
            n1_ratio: 0.1,
            replicates: 50,
            test_points: 1000,
            n_draws: 2000,
            seed: 0,
        }
    }
}

impl ElpdExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma1_sq > 0.0 && self.sigma2_sq > 0.0) {
            return Err(Error::InvalidArgument("variances must be positive".into()));
        }
        if self.n2_grid.is_empty() || self.n2_grid.contains(&0) {
            return Err(Error::InvalidArgument("n2_grid needs positive sizes".into()));
        }
        if !(self.n1_ratio > 0.0) || self.replicates == 0 || self.test_points == 0 || self.n_draws == 0 {
            return Err(Error::InvalidArgument(
                "n1_ratio, replicates, test_points and N must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn n1_for(&self, n2: usize) -> usize {
        ((self.n1_ratio * n2 as f64).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElpdRow {
    pub n1: usize,
    pub n2: usize,
    pub replicate: usize,
    pub method: String,
    pub elpd_sum: f64,
    pub elpd_mean: f64,
}

/// Module-1 predictive scores of PBMI, the cut posterior, and Bayes and
/// posterior bootstrap on the full model, all under the unit-variance
/// working model. PBMI and full PB use plug-in calibrated prior weights.
pub fn elpd_comparison(config: &ElpdExperimentConfig) -> Result<Vec<ElpdRow>> {
    config.validate()?;
    let model = biased_data_model(None)?;
    let sampler = SamplerConfig::default();
    let mut rows = Vec::new();
    for (gi, &n2) in config.n2_grid.iter().enumerate() {
        let n1 = config.n1_for(n2);
        for r in 0..config.replicates {
            let key = (gi * config.replicates + r) as u64;
            let data_seed = rng::child_seed(config.seed, rng::domain::GENERATOR, key);
            let draw_seed = rng::child_seed(config.seed, rng::domain::REPLICATE, key);
            let data = biased_generate(config.sigma1_sq, config.sigma2_sq, n1, n2, data_seed)?;
            let mut g = rng::stream(data_seed, rng::domain::GENERATOR, 1);
            let s1 = config.sigma1_sq.sqrt();
            let test: Vec<f64> = (0..config.test_points)
                .map(|_| s1 * g.sample::<f64, _>(StandardNormal))
                .collect();
            let (w0, v0) = plug_in_prior_weights(&model, &data, &OptimizerConfig::default())?;
            for method in ElpdMethod::ALL {
                let set = match method {
                    ElpdMethod::Pbmi => {
                        pbmi_scenario1(&model, &data, config.n_draws, &w0, &v0, &sampler, draw_seed)?
                    }
                    ElpdMethod::CutBayes => cut_exact_gaussian(&model, &data, config.n_draws, draw_seed)?,
                    ElpdMethod::FullBayes => full_model_bayes(&model, &data, config.n_draws, draw_seed)?,
                    ElpdMethod::FullPb => full_model_posterior_bootstrap(
                        &model,
                        &data,
                        config.n_draws,
                        (w0.coordinate(0), v0.coordinate(0)),
                        draw_seed,
                    )?,
                };
                let e = elpd_module1(&model.module1, &set, &test)?;
                rows.push(ElpdRow {
                    n1,
                    n2,
                    replicate: r,
                    method: method.as_str().into(),
                    elpd_sum: e.value,
                    elpd_mean: e.value / test.len() as f64,
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct V0SweepConfig {
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    pub n1: usize,
    pub n2: usize,
    pub v0_grid: Vec<f64>,
    pub replicates: usize,
    pub n_draws: usize,
    pub seed: u64,
}

impl Default for V0SweepConfig {
    fn default() -> Self {
        Self {
            sigma1_sq: 1.0,
            sigma2_sq: 0.5,
            n1: 10,
            n2: 100,
            v0_grid: vec![0.125, 0.25, 0.5, 1.0, 2.0],
            replicates: 50,
            n_draws: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsRow {
    pub v0: f64,
    pub replicate: usize,
    pub ks: f64,
}

/// KS dissimilarity on `theta2` between PBMI under the working model (plug-in
/// `w0`, `v0` from the grid) and the exact cut posterior of the correctly
/// specified model. Every `v0` reuses the same weights.
pub fn v0_sweep(config: &V0SweepConfig) -> Result<Vec<KsRow>> {
    if config.v0_grid.is_empty() || config.v0_grid.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidArgument("v0 grid needs non-negative values".into()));
    }
    if config.replicates == 0 || config.n_draws == 0 || config.n1 == 0 || config.n2 == 0 {
        return Err(Error::InvalidArgument("sizes must be positive".into()));
    }
    let working = biased_data_model(None)?;
    let correct = biased_data_model(Some((config.sigma1_sq, config.sigma2_sq)))?;
    let sampler = SamplerConfig::default();
    let mut rows = Vec::new();
    for r in 0..config.replicates {
        let data_seed = rng::child_seed(config.seed, rng::domain::GENERATOR, r as u64);
        let draw_seed = rng::child_seed(config.seed, rng::domain::REPLICATE, r as u64);
        let data = biased_generate(config.sigma1_sq, config.sigma2_sq, config.n1, config.n2, data_seed)?;
        let exact = cut_exact_gaussian(&correct, &data, config.n_draws, draw_seed ^ 1)?;
        let reference = exact.coordinate(1);
        let (w0, _) = plug_in_prior_weights(&working, &data, &OptimizerConfig::default())?;
        for &v0 in &config.v0_grid {
            let set = pbmi_scenario1(
                &working,
                &data,
                config.n_draws,
                &w0,
                &PriorWeight::Scalar(v0),
                &sampler,
                draw_seed,
            )?;
            let theta2: Vec<f64> = set.retained().map(|d| d.theta2[0]).collect();
            rows.push(KsRow {
                v0,
                replicate: r,
                ks: ks_dissimilarity(&theta2, &reference)?,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LooMethod {
    /// Weighted-Bernoulli stage 1, posterior bootstrap stage 2.
    Pbmi,
    /// Conjugate Beta stage 1, nested Metropolis stage 2.
    CutBayes,
}

impl LooMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pbmi => "pbmi",
            Self::CutBayes => "cut-bayes",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpiLooConfig {
    pub generator: EpiGeneratorConfig,
    pub replicates: usize,
    pub n_draws: usize,
    pub nested: NestedMcmcConfig,
    pub seed: u64,
}

impl Default for EpiLooConfig {
    fn default() -> Self {
        Self {
            generator: EpiGeneratorConfig {
                overdispersion: 0.5,
                ..Default::default()
            },
            replicates: 20,
            n_draws: 1000,
            nested: NestedMcmcConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooRow {
    pub replicate: usize,
    pub method: String,
    pub loo: f64,
    pub failed_folds: usize,
}

/// Leave-one-out predictive score over the module-2 outcomes of `data`.
/// Stage-1 draws are computed once and shared by every fold.
pub fn epi_loo(
    data: &EpiData,
    offset: OffsetMode,
    method: LooMethod,
    n_draws: usize,
    nested: &NestedMcmcConfig,
    seed: u64,
) -> Result<LooResult> {
    let model = epi_model(data.len(), offset);
    let full = data.to_dataset()?;
    let variant = match method {
        LooMethod::Pbmi => MultigroupVariant::WeightedBernoulli,
        LooMethod::CutBayes => MultigroupVariant::ConjugateBeta,
    };
    let theta1 = pbmi_multigroup_stage1(data, n_draws, variant, seed)?;
    let sampler = SamplerConfig::default();
    elpd_loo(full.n2(), |i| {
        let fold = data.without_outcome(i)?;
        let fold_seed = rng::child_seed(seed, rng::domain::REPLICATE, i as u64);
        let set: SampleSet = match method {
            LooMethod::Pbmi => pbmi_stage2_given_theta1(
                &model,
                &fold.data2,
                &theta1,
                &PriorWeight::zero(),
                &sampler,
                fold_seed,
            )?,
            LooMethod::CutBayes => cut_nested_given_theta1(&model, &fold.data2, &theta1, nested, fold_seed)?.0,
        };
        Ok(elpd_module2(&model.module2, &set, &full.data2[i..=i])?.value)
    })
}

/// LOO scores of PBMI and the cut posterior on replicated synthetic epi data.
pub fn epi_loo_comparison(config: &EpiLooConfig) -> Result<Vec<LooRow>> {
    if config.replicates == 0 || config.n_draws == 0 {
        return Err(Error::InvalidArgument("replicates and N must be positive".into()));
    }
    let mut rows = Vec::new();
    for r in 0..config.replicates {
        let data_seed = rng::child_seed(config.seed, rng::domain::GENERATOR, r as u64);
        let draw_seed = rng::child_seed(config.seed, rng::domain::REPLICATE, r as u64);
        let data = epi_generate(&EpiGeneratorConfig {
            seed: data_seed,
            ..config.generator.clone()
        })?;
        for method in [LooMethod::Pbmi, LooMethod::CutBayes] {
            let loo = epi_loo(&data, config.generator.offset, method, config.n_draws, &config.nested, draw_seed)?;
            rows.push(LooRow {
                replicate: r,
                method: method.as_str().into(),
                loo: loo.value,
                failed_folds: loo.failed_folds,
            });
        }
    }
    Ok(rows)
}
