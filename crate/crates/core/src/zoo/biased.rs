//! Biased-data model: `x1 ~ N(theta1, s1)`, `x2 ~ N(theta1 + theta2, s2)` with
//! `N(0, 1)` and `N(0, 0.1^2)` priors. The working model fixes `s1 = s2 = 1`;
//! passing the generator variances yields the correctly specified variant.

use nalgebra::{DMatrix, Matrix2, Vector2};
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{GaussianLocation, LN_2PI};
use crate::error::{Error, Result};
use crate::model::{CutDataset, CutModel, ModuleTwo};
use crate::rng;
use crate::sampler::{Draw, SampleSet, Scenario};

pub const THETA1_PRIOR_VARIANCE: f64 = 1.0;
pub const THETA2_PRIOR_VARIANCE: f64 = 0.01;

/// Module 2 of the biased-data model: a shift of the module-1 location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasedShift {
    pub variance: f64,
    pub prior_variance: f64,
}

impl ModuleTwo for BiasedShift {
    type Obs = f64;

    fn dim(&self) -> usize {
        1
    }

    fn dim_theta1(&self) -> usize {
        1
    }

    fn loglik(&self, obs: &f64, theta1: &[f64], theta2: &[f64]) -> f64 {
        let r = obs - theta1[0] - theta2[0];
        -0.5 * (LN_2PI + self.variance.ln()) - r * r / (2.0 * self.variance)
    }

    fn grad_theta2(&self, obs: &f64, theta1: &[f64], theta2: &[f64], out: &mut [f64]) {
        out[0] = (obs - theta1[0] - theta2[0]) / self.variance;
    }

    fn grad_theta1(&self, obs: &f64, theta1: &[f64], theta2: &[f64], out: &mut [f64]) {
        out[0] = (obs - theta1[0] - theta2[0]) / self.variance;
    }

    fn log_prior_terms(&self, theta2: &[f64]) -> Vec<f64> {
        let norm = -0.5 * (LN_2PI + self.prior_variance.ln());
        vec![norm - theta2[0] * theta2[0] / (2.0 * self.prior_variance)]
    }

    fn log_prior_grad(&self, theta2: &[f64], out: &mut [f64]) {
        out[0] = -theta2[0] / self.prior_variance;
    }

    fn hessian_full(&self, _obs: &f64, _t1: &[f64], _t2: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_element(2, 2, -1.0 / self.variance))
    }

    fn initial_point(&self, data: &[f64], theta1: &[f64]) -> Vec<f64> {
        vec![data.iter().sum::<f64>() / data.len().max(1) as f64 - theta1[0]]
    }
}

pub type BiasedDataModel = CutModel<GaussianLocation, BiasedShift>;

/// Working model with unit variances, or the correctly specified variant when
/// `model_variances = Some((s1, s2))`.
pub fn biased_data_model(model_variances: Option<(f64, f64)>) -> Result<BiasedDataModel> {
    let (v1, v2) = model_variances.unwrap_or((1.0, 1.0));
    if !(v1 > 0.0 && v2 > 0.0) {
        return Err(Error::InvalidArgument("model variances must be positive".into()));
    }
    Ok(CutModel::new(
        "biased",
        GaussianLocation::new(v1, 0.0, THETA1_PRIOR_VARIANCE),
        BiasedShift {
            variance: v2,
            prior_variance: THETA2_PRIOR_VARIANCE,
        },
    ))
}

/// Independent samples `x1 ~ N(0, sigma1_sq)` and `x2 ~ N(1, sigma2_sq)`.
pub fn biased_generate(
    sigma1_sq: f64,
    sigma2_sq: f64,
    n1: usize,
    n2: usize,
    seed: u64,
) -> Result<CutDataset<f64, f64>> {
    if !(sigma1_sq > 0.0 && sigma2_sq > 0.0) {
        return Err(Error::InvalidArgument("variances must be positive".into()));
    }
    if n1 == 0 || n2 == 0 {
        return Err(Error::InvalidArgument("sizes must be >= 1".into()));
    }
    let mut r = rng::stream(seed, rng::domain::GENERATOR, 0);
    let (s1, s2) = (sigma1_sq.sqrt(), sigma2_sq.sqrt());
    let x1 = (0..n1)
        .map(|_| s1 * r.sample::<f64, _>(StandardNormal))
        .collect();
    let x2 = (0..n2)
        .map(|_| 1.0 + s2 * r.sample::<f64, _>(StandardNormal))
        .collect();
    CutDataset::new(x1, x2, false)
}

/// Precision matrix and linear term of the joint (non-cut) Gaussian
/// objective with data weights `w`, `v` and prior weights `w0`, `v0`.
fn joint_normal_equations(
    model: &BiasedDataModel,
    data: &CutDataset<f64, f64>,
    w: Option<&[f64]>,
    v: Option<&[f64]>,
    prior_weights: (f64, f64),
) -> (Matrix2<f64>, Vector2<f64>) {
    let m1 = &model.module1;
    let m2 = &model.module2;
    let (sw, swx) = data.data1.iter().enumerate().fold((0.0, 0.0), |(a, b), (j, x)| {
        let wj = w.map_or(1.0, |w| w[j]);
        (a + wj, b + wj * x)
    });
    let (sv, svx) = data.data2.iter().enumerate().fold((0.0, 0.0), |(a, b), (j, x)| {
        let vj = v.map_or(1.0, |v| v[j]);
        (a + vj, b + vj * x)
    });
    let (a1, a2) = (sw / m1.variance, sv / m2.variance);
    let (p1, p2) = (
        prior_weights.0 / m1.prior_variance,
        prior_weights.1 / m2.prior_variance,
    );
    let h = Matrix2::new(a1 + a2 + p1, a2, a2, a2 + p2);
    let b = Vector2::new(
        swx / m1.variance + svx / m2.variance + p1 * m1.prior_mean,
        svx / m2.variance,
    );
    (h, b)
}

/// Posterior mode of the joint (feedback-including) model, priors included.
pub fn full_model_mle(model: &BiasedDataModel, data: &CutDataset<f64, f64>) -> Result<[f64; 2]> {
    let (h, b) = joint_normal_equations(model, data, None, None, (1.0, 1.0));
    let sol = h
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Unsupported("singular joint normal equations".into()))?;
    Ok([sol[0], sol[1]])
}

/// Exact draws from the joint posterior of the full (uncut) model.
pub fn full_model_bayes(
    model: &BiasedDataModel,
    data: &CutDataset<f64, f64>,
    n_draws: usize,
    seed: u64,
) -> Result<SampleSet> {
    let (h, b) = joint_normal_equations(model, data, None, None, (1.0, 1.0));
    let cov = h
        .try_inverse()
        .ok_or_else(|| Error::Unsupported("singular joint posterior precision".into()))?;
    let mean = cov * b;
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::NotPositiveSemiDefinite("joint posterior covariance".into()))?
        .l();
    let draws = (0..n_draws)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::stream(seed, rng::domain::BASELINE, k as u64);
            let z = Vector2::new(r.sample(StandardNormal), r.sample(StandardNormal));
            let t = mean + chol * z;
            Draw::new(vec![t[0]], vec![t[1]], true)
        })
        .collect();
    Ok(SampleSet::new(
        draws,
        Scenario::FullBayes,
        seed,
        model.id.clone(),
    ))
}

/// Posterior bootstrap on the full (uncut) model: each draw maximizes the
/// jointly weighted log-likelihood plus weighted log priors.
pub fn full_model_posterior_bootstrap(
    model: &BiasedDataModel,
    data: &CutDataset<f64, f64>,
    n_draws: usize,
    prior_weights: (f64, f64),
    seed: u64,
) -> Result<SampleSet> {
    let draws = (0..n_draws)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::stream(seed, rng::domain::BASELINE, k as u64);
            let w: Vec<f64> = (0..data.n1()).map(|_| r.sample(Exp1)).collect();
            let v: Vec<f64> = (0..data.n2()).map(|_| r.sample(Exp1)).collect();
            let (h, b) = joint_normal_equations(model, data, Some(&w), Some(&v), prior_weights);
            match h.lu().solve(&b) {
                Some(t) => Draw::new(vec![t[0]], vec![t[1]], true),
                None => Draw::new(vec![f64::NAN], vec![f64::NAN], false),
            }
        })
        .collect();
    let mut set = SampleSet::new(draws, Scenario::FullPb, seed, model.id.clone());
    set.w0 = crate::model::PriorWeight::Scalar(prior_weights.0);
    set.v0 = crate::model::PriorWeight::Scalar(prior_weights.1);
    Ok(set)
}
