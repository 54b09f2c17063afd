//! Built-in cut models and their data generators.

mod biased;
mod causal;
mod counterexample;
mod epi;
mod toy;

pub use biased::{
    biased_data_model, biased_generate, full_model_bayes, full_model_posterior_bootstrap,
    full_model_mle, BiasedShift, BiasedDataModel,
};
pub use causal::{
    assign_quintiles, causal_generate, causal_load_csv, causal_model, causal_write_csv,
    stratum_balance_warnings, CausalGeneratorConfig, CausalModel, CausalRow, LogisticPropensity,
    StratifiedOutcome,
};
pub use counterexample::{
    counterexample_generate, counterexample_model, counterexample_population, BivariateShift,
    CounterexampleModel, CounterexamplePopulation,
};
pub use epi::{
    epi_generate, epi_load_csv, epi_model, epi_write_csv, BernoulliTrial, EpiData,
    EpiGeneratorConfig, EpiGroup, EpiModel, EpiOutcome, GroupedBernoulli, OffsetMode,
    PoissonLogLinear,
};
pub use toy::{toy_generate, toy_model, toy_population_info, ToyModel, ToyObs, ToyRegression};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::model::ModuleOne;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Normal location module `x ~ N(theta, variance)` with a `N(prior_mean,
/// prior_variance)` prior. Module 1 of the toy, biased-data and
/// counterexample models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianLocation {
    pub variance: f64,
    pub prior_mean: f64,
    pub prior_variance: f64,
}

impl GaussianLocation {
    pub fn new(variance: f64, prior_mean: f64, prior_variance: f64) -> Self {
        Self {
            variance,
            prior_mean,
            prior_variance,
        }
    }
}

impl ModuleOne for GaussianLocation {
    type Obs = f64;

    fn dim(&self) -> usize {
        1
    }

    fn loglik(&self, obs: &f64, theta1: &[f64]) -> f64 {
        let r = obs - theta1[0];
        -0.5 * (LN_2PI + self.variance.ln()) - r * r / (2.0 * self.variance)
    }

    fn grad(&self, obs: &f64, theta1: &[f64], out: &mut [f64]) {
        out[0] = (obs - theta1[0]) / self.variance;
    }

    fn log_prior_terms(&self, theta1: &[f64]) -> Vec<f64> {
        let r = theta1[0] - self.prior_mean;
        vec![-0.5 * (LN_2PI + self.prior_variance.ln()) - r * r / (2.0 * self.prior_variance)]
    }

    fn log_prior_grad(&self, theta1: &[f64], out: &mut [f64]) {
        out[0] = -(theta1[0] - self.prior_mean) / self.prior_variance;
    }

    fn hessian(&self, _obs: &f64, _theta1: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_element(1, 1, -1.0 / self.variance))
    }

    fn initial_point(&self, data: &[f64]) -> Vec<f64> {
        vec![data.iter().sum::<f64>() / data.len().max(1) as f64]
    }
}

/// Data-generator knobs for the built-in models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum GeneratorSpec {
    Toy {
        rho: f64,
        sigma2: f64,
        n: usize,
        seed: u64,
    },
    Biased {
        sigma1_sq: f64,
        sigma2_sq: f64,
        n1: usize,
        n2: usize,
        seed: u64,
    },
    Counterexample {
        sigma: f64,
        n: usize,
        seed: u64,
    },
}

impl GeneratorSpec {
    /// Pseudo-true `(theta1*, theta2*)` under the generator.
    pub fn pseudo_true(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            GeneratorSpec::Toy { .. } => (vec![0.0], vec![toy::TOY_THETA2_STAR]),
            GeneratorSpec::Biased { .. } => (vec![0.0], vec![1.0]),
            GeneratorSpec::Counterexample { .. } => (vec![0.0], vec![0.0]),
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        match &mut s {
            GeneratorSpec::Toy { seed: s, .. }
            | GeneratorSpec::Biased { seed: s, .. }
            | GeneratorSpec::Counterexample { seed: s, .. } => *s = seed,
        }
        s
    }

    pub fn with_n(&self, n: usize) -> Self {
        let mut s = self.clone();
        match &mut s {
            GeneratorSpec::Toy { n: m, .. } | GeneratorSpec::Counterexample { n: m, .. } => *m = n,
            GeneratorSpec::Biased { n1, n2, .. } => {
                let ratio = *n1 as f64 / *n2 as f64;
                *n2 = n;
                *n1 = ((n as f64) * ratio).round().max(1.0) as usize;
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::check_gradients_m1;

    #[test]
    fn gaussian_location_gradient_check() {
        let m = GaussianLocation::new(0.7, 0.2, 3.0);
        let obs = [-1.0, 0.3, 2.5];
        let rep = check_gradients_m1(&m, &obs, &[0.4], 1e-5).unwrap();
        assert!(rep.passed, "{rep:?}");
    }
}
