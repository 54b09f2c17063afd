//! Toy regression model: `z ~ N(theta1, 1)`, `y ~ N(theta1 + theta2 x, 1)`.
//!
//! The generator draws `x ~ N(3, 1)` and `(z, y)` jointly Normal with mean
//! `(0, 1 + x)` and covariance `[[1, rho], [rho, sigma2]]`. `rho != 0`
//! correlates the two modules; `sigma2 != 1` misspecifies module 2.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{GaussianLocation, LN_2PI};
use crate::asymptotics::InfoMatrices;
use crate::error::{Error, Result};
use crate::model::{CutDataset, CutModel, ModuleTwo, ParameterSplit};
use crate::rng;

/// Pseudo-true slope: `E[x (1 + x)] / E[x^2] = 13 / 10` for `x ~ N(3, 1)`.
pub(crate) const TOY_THETA2_STAR: f64 = 1.3;

const PRIOR_VARIANCE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyObs {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyRegression {
    pub prior_variance: f64,
}

impl ModuleTwo for ToyRegression {
    type Obs = ToyObs;

    fn dim(&self) -> usize {
        1
    }

    fn dim_theta1(&self) -> usize {
        1
    }

    fn loglik(&self, obs: &ToyObs, theta1: &[f64], theta2: &[f64]) -> f64 {
        let r = obs.y - theta1[0] - theta2[0] * obs.x;
        -0.5 * LN_2PI - 0.5 * r * r
    }

    fn grad_theta2(&self, obs: &ToyObs, theta1: &[f64], theta2: &[f64], out: &mut [f64]) {
        out[0] = obs.x * (obs.y - theta1[0] - theta2[0] * obs.x);
    }

    fn grad_theta1(&self, obs: &ToyObs, theta1: &[f64], theta2: &[f64], out: &mut [f64]) {
        out[0] = obs.y - theta1[0] - theta2[0] * obs.x;
    }

    fn log_prior_terms(&self, theta2: &[f64]) -> Vec<f64> {
        let norm = -0.5 * (LN_2PI + self.prior_variance.ln());
        vec![norm - theta2[0] * theta2[0] / (2.0 * self.prior_variance)]
    }

    fn log_prior_grad(&self, theta2: &[f64], out: &mut [f64]) {
        out[0] = -theta2[0] / self.prior_variance;
    }

    fn hessian_full(&self, obs: &ToyObs, _t1: &[f64], _t2: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_slice(
            2,
            2,
            &[-1.0, -obs.x, -obs.x, -obs.x * obs.x],
        ))
    }

    fn initial_point(&self, data: &[ToyObs], theta1: &[f64]) -> Vec<f64> {
        let (sxy, sxx) = data.iter().fold((0.0, 0.0), |(a, b), o| {
            (a + o.x * (o.y - theta1[0]), b + o.x * o.x)
        });
        vec![if sxx > 0.0 { sxy / sxx } else { 0.0 }]
    }
}

pub type ToyModel = CutModel<GaussianLocation, ToyRegression>;

/// Toy model with independent `N(0, 10^2)` priors.
pub fn toy_model() -> ToyModel {
    CutModel::new(
        "toy",
        GaussianLocation::new(1.0, 0.0, PRIOR_VARIANCE),
        ToyRegression {
            prior_variance: PRIOR_VARIANCE,
        },
    )
}

/// Paired toy dataset. Requires `rho^2 < sigma2` so the error covariance is
/// positive definite.
pub fn toy_generate(
    rho: f64,
    sigma2: f64,
    n: usize,
    seed: u64,
) -> Result<CutDataset<f64, ToyObs>> {
    if !(sigma2 > 0.0) || !rho.is_finite() || rho * rho >= sigma2 {
        return Err(Error::InvalidArgument(format!(
            "covariance not positive definite (rho = {rho}, sigma2 = {sigma2})"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let mut r = rng::stream(seed, rng::domain::GENERATOR, 0);
    let cond_sd = (sigma2 - rho * rho).sqrt();
    let mut z = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let x = 3.0 + r.sample::<f64, _>(StandardNormal);
        let e1: f64 = r.sample(StandardNormal);
        let e2: f64 = r.sample(StandardNormal);
        z.push(e1);
        rows.push(ToyObs {
            x,
            y: 1.0 + x + rho * e1 + cond_sd * e2,
        });
    }
    CutDataset::new(z, rows, true)
}

/// Population information matrices at the pseudo-true `(0, 1.3)`.
///
/// With residual `r = 1 - 0.3 x + e_y`: `I2 = E[x^2 (1 - 0.3x)^2] + sigma2 E[x^2]
/// = 0.82 + 10 sigma2`, `J2 = E[x^2] = 10`, `RJ = E[x] = 3`, `RI = 3 rho`.
pub fn toy_population_info(rho: f64, sigma2: f64) -> InfoMatrices {
    let s = |v: f64| DMatrix::from_element(1, 1, v);
    InfoMatrices {
        i1: s(1.0),
        j1: s(1.0),
        i2: s(0.82 + 10.0 * sigma2),
        j2: s(10.0),
        ri: Some(s(3.0 * rho)),
        rj: s(3.0),
        evaluated_at: ParameterSplit {
            theta1: vec![0.0],
            theta2: vec![TOY_THETA2_STAR],
        },
        alpha: 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{check_gradients_m1, check_gradients_m2, weighted_objective_m2, PriorWeight};

    #[test]
    fn single_observation_at_zero_residual() {
        let m = toy_model();
        let v = weighted_objective_m2(
            &m.module2,
            &[ToyObs { x: 3.0, y: 4.0 }],
            &[1.0],
            &PriorWeight::zero(),
            &[0.0],
            &[4.0 / 3.0],
        )
        .unwrap();
        assert!((v + 0.5 * LN_2PI).abs() < 1e-12);
        assert!((v - (-0.918_938_533_204_672_7)).abs() < 1e-12);
    }

    #[test]
    fn gradients_at_reference_point() {
        let m = toy_model();
        let data = toy_generate(0.3, 1.5, 20, 1).unwrap();
        let r1 = check_gradients_m1(&m.module1, &data.data1, &[0.3], 1e-5).unwrap();
        let r2 = check_gradients_m2(&m.module2, &data.data2, &[0.3], &[1.1], 1e-5).unwrap();
        assert!(r1.passed && r2.passed, "{r1:?} {r2:?}");
    }

    #[test]
    fn generator_rejects_non_pd_covariance() {
        assert!(toy_generate(1.5, 1.0, 10, 0).is_err());
        assert!(toy_generate(0.999, 1.0, 10, 0).is_ok());
    }

    #[test]
    fn generator_is_deterministic() {
        let a = toy_generate(0.8, 1.0, 50, 9).unwrap();
        let b = toy_generate(0.8, 1.0, 50, 9).unwrap();
        assert_eq!(a.data1, b.data1);
        assert_eq!(a.data2, b.data2);
        assert!(a.paired);
    }
}
