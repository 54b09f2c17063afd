//! Prediction counterexample: module 1 `x1 ~ N(theta1, 1)`, module 2
//! `x2 ~ N((theta1, theta2), S1)` with `S1^{-1} = [[1, 0.5], [0.5, 1]]`.
//! Data are generated as `x1 ~ N(0, sigma^2)` and `x2 ~ N(0, S1 M S1)` with
//! `M = [[0.8, 0.3], [0.3, 0.8]]`, so that the score covariance of module 2
//! is exactly `M`.

use nalgebra::{DMatrix, Matrix2, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{GaussianLocation, LN_2PI};
use crate::asymptotics::InfoMatrices;
use crate::error::{Error, Result};
use crate::model::{CutDataset, CutModel, ModuleTwo, ParameterSplit};
use crate::rng;

/// Precision of the working module-2 covariance.
pub(crate) fn working_precision() -> Matrix2<f64> {
    Matrix2::new(1.0, 0.5, 0.5, 1.0)
}

fn score_covariance() -> Matrix2<f64> {
    Matrix2::new(0.8, 0.3, 0.3, 0.8)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BivariateShift {
    pub prior_variance: f64,
}

impl BivariateShift {
    fn residual(obs: &[f64; 2], theta1: &[f64], theta2: &[f64]) -> Vector2<f64> {
        Vector2::new(obs[0] - theta1[0], obs[1] - theta2[0])
    }
}

impl ModuleTwo for BivariateShift {
    type Obs = [f64; 2];

    fn dim(&self) -> usize {
        1
    }

    fn dim_theta1(&self) -> usize {
        1
    }

    fn loglik(&self, obs: &[f64; 2], theta1: &[f64], theta2: &[f64]) -> f64 {
        let p = working_precision();
        let r = Self::residual(obs, theta1, theta2);
        // log det(S1) = -log det(P) = ln(4/3)
        -LN_2PI - 0.5 * (4.0_f64 / 3.0).ln() - 0.5 * r.dot(&(p * r))
    }

    fn grad_theta2(&self, obs: &[f64; 2], theta1: &[f64], theta2: &[f64], out: &mut [f64]) {
        let g = working_precision() * Self::residual(obs, theta1, theta2);
        out[0] = g[1];
    }

    fn grad_theta1(&self, obs: &[f64; 2], theta1: &[f64], theta2: &[f64], out: &mut [f64]) {
        let g = working_precision() * Self::residual(obs, theta1, theta2);
        out[0] = g[0];
    }

    fn log_prior_terms(&self, theta2: &[f64]) -> Vec<f64> {
        let norm = -0.5 * (LN_2PI + self.prior_variance.ln());
        vec![norm - theta2[0] * theta2[0] / (2.0 * self.prior_variance)]
    }

    fn log_prior_grad(&self, theta2: &[f64], out: &mut [f64]) {
        out[0] = -theta2[0] / self.prior_variance;
    }

    fn hessian_full(&self, _obs: &[f64; 2], _t1: &[f64], _t2: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_iterator(2, 2, (-working_precision()).iter().copied()))
    }

    fn initial_point(&self, data: &[[f64; 2]], theta1: &[f64]) -> Vec<f64> {
        // stage-2 MLE: theta2 = mean(x_b) + 0.5 (mean(x_a) - theta1)
        let n = data.len().max(1) as f64;
        let (sa, sb) = data.iter().fold((0.0, 0.0), |(a, b), o| (a + o[0], b + o[1]));
        vec![sb / n + 0.5 * (sa / n - theta1[0])]
    }
}

pub type CounterexampleModel = CutModel<GaussianLocation, BivariateShift>;

pub fn counterexample_model() -> CounterexampleModel {
    CutModel::new(
        "counterexample",
        GaussianLocation::new(1.0, 0.0, 1.0),
        BivariateShift {
            prior_variance: 1.0,
        },
    )
}

/// Independent module datasets of size `n` each.
pub fn counterexample_generate(
    sigma: f64,
    n: usize,
    seed: u64,
) -> Result<CutDataset<f64, [f64; 2]>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let s1 = working_precision()
        .try_inverse()
        .expect("working precision is invertible");
    let cov = s1 * score_covariance() * s1;
    let l = cov.cholesky().expect("generator covariance is PD").l();
    let mut r = rng::stream(seed, rng::domain::GENERATOR, 0);
    let x1 = (0..n)
        .map(|_| sigma * r.sample::<f64, _>(StandardNormal))
        .collect();
    let x2 = (0..n)
        .map(|_| {
            let z = Vector2::new(r.sample(StandardNormal), r.sample(StandardNormal));
            let x = l * z;
            [x[0], x[1]]
        })
        .collect();
    CutDataset::new(x1, x2, false)
}

/// Population matrices at `(theta1*, theta2*) = (0, 0)`.
#[derive(Debug, Clone)]
pub struct CounterexamplePopulation {
    pub info: InfoMatrices,
    pub if2: DMatrix<f64>,
    pub jf2: DMatrix<f64>,
}

/// Score covariance of module 2 in `theta2` is the `(2, 2)` entry of `M`,
/// so `I2 = 0.8`; `RJ` is the off-diagonal of the working precision.
pub fn counterexample_population(sigma: f64) -> CounterexamplePopulation {
    let s = |v: f64| DMatrix::from_element(1, 1, v);
    let to_dyn = |m: Matrix2<f64>| DMatrix::from_iterator(2, 2, m.iter().copied());
    CounterexamplePopulation {
        info: InfoMatrices {
            i1: s(sigma * sigma),
            j1: s(1.0),
            i2: s(0.8),
            j2: s(1.0),
            ri: None,
            rj: s(0.5),
            evaluated_at: ParameterSplit {
                theta1: vec![0.0],
                theta2: vec![0.0],
            },
            alpha: 1.0,
        },
        if2: to_dyn(score_covariance()),
        jf2: to_dyn(working_precision()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::check_gradients_m2;

    #[test]
    fn gradients_match_differences() {
        let m = counterexample_model();
        let d = counterexample_generate(1.5, 25, 4).unwrap();
        let rep = check_gradients_m2(&m.module2, &d.data2, &[0.2], &[-0.4], 1e-5).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn generator_covariance() {
        let d = counterexample_generate(2.0, 200_000, 11).unwrap();
        let n = d.n2() as f64;
        let s1 = working_precision().try_inverse().unwrap();
        let target = s1 * score_covariance() * s1;
        let mut c = Matrix2::zeros();
        for x in &d.data2 {
            let v = Vector2::new(x[0], x[1]);
            c += v * v.transpose() / n;
        }
        assert!((c - target).abs().max() < 0.02, "{c} vs {target}");
        let v1 = d.data1.iter().map(|x| x * x).sum::<f64>() / n;
        assert!((v1 - 4.0).abs() < 0.05);
    }

    #[test]
    fn rejects_bad_sigma() {
        assert!(counterexample_generate(0.0, 10, 0).is_err());
        assert!(counterexample_generate(-1.0, 10, 0).is_err());
    }
}
