//! Plug-in information matrices and the limiting covariances of the
//! posterior bootstrap and of the cut posterior.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{opt_rows, rows};
use crate::model::{CutDataset, CutModel, ModuleOne, ModuleTwo, ParameterSplit, PriorWeight};
use crate::optimize::{fit_mle, OptimizerConfig};

/// Largest accepted condition number of `J1` and `J2`.
pub const MAX_CONDITION: f64 = 1e12;

/// Relative central-difference step for numerical Hessians.
pub const HESSIAN_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoMatrices {
    #[serde(with = "rows")]
    pub i1: DMatrix<f64>,
    #[serde(with = "rows")]
    pub j1: DMatrix<f64>,
    #[serde(with = "rows")]
    pub i2: DMatrix<f64>,
    #[serde(with = "rows")]
    pub j2: DMatrix<f64>,
    /// Cross score covariance, `d1 x d2`; only estimable from paired data.
    #[serde(with = "opt_rows")]
    pub ri: Option<DMatrix<f64>>,
    /// Negative mixed second derivative of module 2, `d1 x d2`.
    #[serde(with = "rows")]
    pub rj: DMatrix<f64>,
    pub evaluated_at: ParameterSplit,
    /// `n1 / n2`
    pub alpha: f64,
}

impl InfoMatrices {
    pub fn d1(&self) -> usize {
        self.j1.nrows()
    }

    pub fn d2(&self) -> usize {
        self.j2.nrows()
    }

    fn check_shapes(&self) -> Result<()> {
        let (d1, d2) = (self.d1(), self.d2());
        let ok = self.i1.shape() == (d1, d1)
            && self.j1.shape() == (d1, d1)
            && self.i2.shape() == (d2, d2)
            && self.j2.shape() == (d2, d2)
            && self.rj.shape() == (d1, d2)
            && self.ri.as_ref().is_none_or(|r| r.shape() == (d1, d2));
        if !ok {
            return Err(Error::InvalidArgument("information matrix shapes are inconsistent".into()));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(symmetrize(m)).eigenvalues;
    let max = eig.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn checked_inverse(m: &DMatrix<f64>, which: &'static str) -> Result<DMatrix<f64>> {
    let condition = condition_number(m);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularInformation { which, condition });
    }
    m.clone()
        .try_inverse()
        .ok_or(Error::SingularInformation { which, condition })
}

fn step_for(x: f64) -> f64 {
    HESSIAN_STEP * x.abs().max(1.0)
}

/// Central-difference Hessian of the module-1 log-likelihood at one
/// observation, from the analytic gradient.
pub fn fd_hessian_m1<M: ModuleOne>(module: &M, obs: &M::Obs, theta1: &[f64]) -> DMatrix<f64> {
    let d = theta1.len();
    let mut h = DMatrix::zeros(d, d);
    let mut x = theta1.to_vec();
    let mut gp = vec![0.0; d];
    let mut gm = vec![0.0; d];
    for j in 0..d {
        let s = step_for(theta1[j]);
        x[j] = theta1[j] + s;
        module.grad(obs, &x, &mut gp);
        x[j] = theta1[j] - s;
        module.grad(obs, &x, &mut gm);
        x[j] = theta1[j];
        for i in 0..d {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * s);
        }
    }
    symmetrize(&h)
}

fn stacked_grad_m2<M: ModuleTwo>(
    module: &M,
    obs: &M::Obs,
    theta1: &[f64],
    theta2: &[f64],
    g1: &mut [f64],
    g2: &mut [f64],
) -> Vec<f64> {
    module.grad_theta1(obs, theta1, theta2, g1);
    module.grad_theta2(obs, theta1, theta2, g2);
    g1.iter().chain(g2.iter()).copied().collect()
}

/// Central-difference Hessian of the module-2 log-likelihood over the
/// stacked `(theta1, theta2)`.
pub fn fd_hessian_m2<M: ModuleTwo>(
    module: &M,
    obs: &M::Obs,
    theta1: &[f64],
    theta2: &[f64],
) -> DMatrix<f64> {
    let (d1, d2) = (theta1.len(), theta2.len());
    let d = d1 + d2;
    let mut h = DMatrix::zeros(d, d);
    let mut t1 = theta1.to_vec();
    let mut t2 = theta2.to_vec();
    let mut g1 = vec![0.0; d1];
    let mut g2 = vec![0.0; d2];
    for j in 0..d {
        let (base, s) = if j < d1 {
            (theta1[j], step_for(theta1[j]))
        } else {
            (theta2[j - d1], step_for(theta2[j - d1]))
        };
        let set = |v: f64, t1: &mut Vec<f64>, t2: &mut Vec<f64>| {
            if j < d1 {
                t1[j] = v
            } else {
                t2[j - d1] = v
            }
        };
        set(base + s, &mut t1, &mut t2);
        let gp = stacked_grad_m2(module, obs, &t1, &t2, &mut g1, &mut g2);
        set(base - s, &mut t1, &mut t2);
        let gm = stacked_grad_m2(module, obs, &t1, &t2, &mut g1, &mut g2);
        set(base, &mut t1, &mut t2);
        for i in 0..d {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * s);
        }
    }
    symmetrize(&h)
}

fn hessian_m1<M: ModuleOne>(module: &M, obs: &M::Obs, theta1: &[f64]) -> DMatrix<f64> {
    module
        .hessian(obs, theta1)
        .unwrap_or_else(|| fd_hessian_m1(module, obs, theta1))
}

fn hessian_m2<M: ModuleTwo>(module: &M, obs: &M::Obs, t1: &[f64], t2: &[f64]) -> DMatrix<f64> {
    module
        .hessian_full(obs, t1, t2)
        .unwrap_or_else(|| fd_hessian_m2(module, obs, t1, t2))
}

/// Empirical information matrices at `at` (usually the two-stage MLE).
pub fn estimate_info<M1: ModuleOne, M2: ModuleTwo>(
    model: &CutModel<M1, M2>,
    data: &CutDataset<M1::Obs, M2::Obs>,
    at: &ParameterSplit,
) -> Result<InfoMatrices> {
    data.validate()?;
    let (d1, d2) = model.dims();
    if at.d1() != d1 || at.d2() != d2 {
        return Err(Error::DimensionMismatch {
            context: "evaluation point",
            expected: d1 + d2,
            actual: at.d1() + at.d2(),
        });
    }
    let (t1, t2) = (&at.theta1[..], &at.theta2[..]);
    let n1 = data.n1() as f64;
    let n2 = data.n2() as f64;

    let mut i1 = DMatrix::zeros(d1, d1);
    let mut j1 = DMatrix::zeros(d1, d1);
    let mut g = vec![0.0; d1];
    let mut scores1 = Vec::with_capacity(if data.paired { data.n1() } else { 0 });
    for obs in &data.data1 {
        model.module1.grad(obs, t1, &mut g);
        let gv = DMatrix::from_column_slice(d1, 1, &g);
        i1 += &gv * gv.transpose();
        j1 -= hessian_m1(&model.module1, obs, t1);
        if data.paired {
            scores1.push(gv);
        }
    }
    i1 /= n1;
    j1 /= n1;

    let prepared = model.module2.prepare(t1, &data.data2);
    let mut i2 = DMatrix::zeros(d2, d2);
    let mut j2 = DMatrix::zeros(d2, d2);
    let mut rj = DMatrix::zeros(d1, d2);
    let mut ri = DMatrix::zeros(d1, d2);
    let mut g2 = vec![0.0; d2];
    for (k, obs) in prepared.iter().enumerate() {
        model.module2.grad_theta2(obs, t1, t2, &mut g2);
        let gv = DMatrix::from_column_slice(d2, 1, &g2);
        i2 += &gv * gv.transpose();
        let h = hessian_m2(&model.module2, obs, t1, t2);
        j2 -= h.view((d1, d1), (d2, d2));
        rj -= h.view((0, d1), (d1, d2));
        if data.paired {
            ri += &scores1[k] * gv.transpose();
        }
    }
    i2 /= n2;
    j2 /= n2;
    rj /= n2;
    ri /= n2;

    let info = InfoMatrices {
        i1: symmetrize(&i1),
        j1: symmetrize(&j1),
        i2: symmetrize(&i2),
        j2: symmetrize(&j2),
        ri: data.paired.then_some(ri),
        rj,
        evaluated_at: at.clone(),
        alpha: data.alpha(),
    };
    for (m, which) in [(&info.j1, "J1"), (&info.j2, "J2")] {
        let condition = condition_number(m);
        if !(condition <= MAX_CONDITION) {
            return Err(Error::SingularInformation { which, condition });
        }
    }
    Ok(info)
}

struct Blocks {
    j1_inv: DMatrix<f64>,
    j2_inv: DMatrix<f64>,
    s1: DMatrix<f64>,
}

fn blocks(m: &InfoMatrices) -> Result<Blocks> {
    m.check_shapes()?;
    let j1_inv = checked_inverse(&m.j1, "J1")?;
    let j2_inv = checked_inverse(&m.j2, "J2")?;
    let s1 = symmetrize(&(&j1_inv * &m.i1 * &j1_inv));
    Ok(Blocks { j1_inv, j2_inv, s1 })
}

fn assemble(top: DMatrix<f64>, off: DMatrix<f64>, bottom: DMatrix<f64>) -> DMatrix<f64> {
    let (d1, d2) = (top.nrows(), bottom.nrows());
    let mut s = DMatrix::zeros(d1 + d2, d1 + d2);
    s.view_mut((0, 0), (d1, d1)).copy_from(&top);
    s.view_mut((0, d1), (d1, d2)).copy_from(&off);
    s.view_mut((d1, 0), (d2, d1)).copy_from(&off.transpose());
    s.view_mut((d1, d1), (d2, d2)).copy_from(&symmetrize(&bottom));
    s
}

/// Limiting covariance of the Scenario-1 bootstrap, scaled by `n2`.
pub fn sigma_scenario1(m: &InfoMatrices) -> Result<DMatrix<f64>> {
    let b = blocks(m)?;
    let a = m.alpha;
    let top = &b.s1 / a;
    let off = -(&b.s1 * &m.rj * &b.j2_inv) / a;
    let inner = &m.i2 + m.rj.transpose() * &b.s1 * &m.rj / a;
    let bottom = &b.j2_inv * inner * &b.j2_inv;
    Ok(assemble(top, off, bottom))
}

fn s2_block(m: &InfoMatrices, ri: &DMatrix<f64>, j1_inv: &DMatrix<f64>) -> DMatrix<f64> {
    ri.transpose() * j1_inv * &m.rj + m.rj.transpose() * j1_inv * ri
}

fn s3_block(ri: &DMatrix<f64>, b: &Blocks, rj: &DMatrix<f64>) -> DMatrix<f64> {
    &b.j1_inv * ri * &b.j2_inv - &b.s1 * rj * &b.j2_inv
}

/// Limiting covariance of the Scenario-2 bootstrap on paired data.
pub fn sigma_scenario2(m: &InfoMatrices) -> Result<DMatrix<f64>> {
    let ri = m.ri.as_ref().ok_or(Error::MissingCrossInformation)?;
    let b = blocks(m)?;
    let s2 = s2_block(m, ri, &b.j1_inv);
    let s3 = s3_block(ri, &b, &m.rj);
    let inner = &m.i2 + m.rj.transpose() * &b.s1 * &m.rj - s2;
    let bottom = &b.j2_inv * inner * &b.j2_inv;
    Ok(assemble(b.s1.clone(), s3, bottom))
}

/// Covariance of the normal limit of the cut posterior, scaled by `n2`.
pub fn sigma_cut_laplace(m: &InfoMatrices) -> Result<DMatrix<f64>> {
    let b = blocks(m)?;
    let a = m.alpha;
    let top = &b.j1_inv / a;
    let off = -(&b.j1_inv * &m.rj * &b.j2_inv) / a;
    let bottom = &b.j2_inv + &b.j2_inv * m.rj.transpose() * &b.j1_inv * &m.rj * &b.j2_inv / a;
    Ok(assemble(symmetrize(&top), off, bottom))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    #[serde(with = "opt_rows")]
    pub sigma_s1: Option<DMatrix<f64>>,
    #[serde(with = "opt_rows")]
    pub sigma_s2: Option<DMatrix<f64>>,
    #[serde(with = "rows")]
    pub sigma_b: DMatrix<f64>,
    #[serde(with = "rows")]
    pub s1_block: DMatrix<f64>,
    #[serde(with = "opt_rows")]
    pub s2_block: Option<DMatrix<f64>>,
    #[serde(with = "opt_rows")]
    pub s3_block: Option<DMatrix<f64>>,
    pub alpha: f64,
}

/// Every covariance that the matrices support. The Scenario-2 entries are
/// absent without cross information.
pub fn covariance_report(m: &InfoMatrices) -> Result<CovarianceReport> {
    let b = blocks(m)?;
    let sigma_b = sigma_cut_laplace(m)?;
    let sigma_s1 = sigma_scenario1(m)?;
    let (sigma_s2, s2, s3) = match &m.ri {
        Some(ri) => (
            Some(sigma_scenario2(m)?),
            Some(s2_block(m, ri, &b.j1_inv)),
            Some(s3_block(ri, &b, &m.rj)),
        ),
        None => (None, None, None),
    };
    for (name, s) in [("sigma_s1", Some(&sigma_s1)), ("sigma_s2", sigma_s2.as_ref()), ("sigma_b", Some(&sigma_b))] {
        if let Some(s) = s {
            check_covariance(s, name)?;
        }
    }
    Ok(CovarianceReport {
        sigma_s1: Some(sigma_s1),
        sigma_s2,
        sigma_b,
        s1_block: b.s1,
        s2_block: s2,
        s3_block: s3,
        alpha: m.alpha,
    })
}

/// Symmetric to `1e-10` and PSD up to `-1e-8` times the spectral norm.
pub fn check_covariance(s: &DMatrix<f64>, name: &str) -> Result<()> {
    if !s.is_square() {
        return Err(Error::NotPositiveSemiDefinite(format!("{name} is not square")));
    }
    let asym = (s - s.transpose()).abs().max() * 0.5;
    let scale = s.abs().max().max(1.0);
    if asym > 1e-10 * scale {
        return Err(Error::NotPositiveSemiDefinite(format!(
            "{name} is not symmetric (antisymmetric part {asym:e})"
        )));
    }
    let eig = SymmetricEigen::new(symmetrize(s)).eigenvalues;
    let norm = eig.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, v| a.min(*v));
    if min < -1e-8 * norm {
        return Err(Error::NotPositiveSemiDefinite(format!(
            "{name} has eigenvalue {min:e}"
        )));
    }
    Ok(())
}

/// Square root of a symmetric PSD matrix; eigenvalues in `[-1e-8, 0)` are
/// clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < 0.0 {
            if *v >= -1e-8 {
                *v = 0.0;
            } else {
                return Err(Error::NotPositiveSemiDefinite(format!("eigenvalue {v:e}")));
            }
        }
        *v = v.sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&vals) * q.transpose())
}

fn calibrated(i: &DMatrix<f64>, j: &DMatrix<f64>, factorizes: bool, which: &'static str) -> Result<PriorWeight> {
    let root = psd_sqrt(i)?;
    let m = &root * checked_inverse(j, which)? * &root;
    if !factorizes {
        return Ok(PriorWeight::Scalar(m.trace()));
    }
    if m.nrows() == 1 {
        return Ok(PriorWeight::Scalar(m[(0, 0)]));
    }
    Ok(PriorWeight::PerCoordinate(m.diagonal().iter().copied().collect()))
}

/// Prior weights `w0 = diag(I1^{1/2} J1^{-1} I1^{1/2})` and the module-2
/// analogue `v0`; the trace replaces the diagonal for a non-factorizing prior.
pub fn calibrate_prior_weights(
    m: &InfoMatrices,
    factorizes1: bool,
    factorizes2: bool,
) -> Result<(PriorWeight, PriorWeight)> {
    m.check_shapes()?;
    Ok((
        calibrated(&m.i1, &m.j1, factorizes1, "J1")?,
        calibrated(&m.i2, &m.j2, factorizes2, "J2")?,
    ))
}

/// Calibrated `(w0, v0)` from the plug-in matrices at the two-stage MLE.
pub fn plug_in_prior_weights<M1: ModuleOne, M2: ModuleTwo>(
    model: &CutModel<M1, M2>,
    data: &CutDataset<M1::Obs, M2::Obs>,
    config: &OptimizerConfig,
) -> Result<(PriorWeight, PriorWeight)> {
    let mle = fit_mle(model, data, config)?;
    let at = ParameterSplit::new(mle.theta1_hat, mle.theta2_hat)?;
    let m = estimate_info(model, data, &at)?;
    calibrate_prior_weights(
        &m,
        model.module1.prior_factorizes(),
        model.module2.prior_factorizes(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRiskTerms {
    #[serde(with = "rows")]
    pub if2: DMatrix<f64>,
    #[serde(with = "rows")]
    pub jf2: DMatrix<f64>,
    pub trace_bayes: f64,
    pub trace_pb: f64,
}

/// `tr{(If2 - Jf2) Sigma}` for the cut posterior and the bootstrap. Larger
/// is better: the trace enters the predictive risk with a negative sign.
pub fn risk_traces(
    if2: DMatrix<f64>,
    jf2: DMatrix<f64>,
    sigma_b: &DMatrix<f64>,
    sigma_pb: &DMatrix<f64>,
) -> Result<PredictionRiskTerms> {
    let d = if2.nrows();
    for (name, m) in [("If2", &if2), ("Jf2", &jf2), ("sigma_b", sigma_b), ("sigma_pb", sigma_pb)] {
        if m.shape() != (d, d) {
            return Err(Error::DimensionMismatch {
                context: name,
                expected: d,
                actual: m.nrows(),
            });
        }
    }
    let diff = &if2 - &jf2;
    Ok(PredictionRiskTerms {
        trace_bayes: (&diff * sigma_b).trace(),
        trace_pb: (&diff * sigma_pb).trace(),
        if2,
        jf2,
    })
}

/// Empirical If2 (score outer products) and Jf2 (negative Hessians) of the
/// module-2 log-likelihood in the full `(theta1, theta2)`, then the traces.
pub fn prediction_risk_traces<M1: ModuleOne, M2: ModuleTwo>(
    model: &CutModel<M1, M2>,
    data: &CutDataset<M1::Obs, M2::Obs>,
    at: &ParameterSplit,
    sigma_b: &DMatrix<f64>,
    sigma_pb: &DMatrix<f64>,
) -> Result<PredictionRiskTerms> {
    let (d1, d2) = model.dims();
    if at.d1() != d1 || at.d2() != d2 {
        return Err(Error::DimensionMismatch {
            context: "evaluation point",
            expected: d1 + d2,
            actual: at.d1() + at.d2(),
        });
    }
    let d = d1 + d2;
    let (t1, t2) = (&at.theta1[..], &at.theta2[..]);
    let prepared = model.module2.prepare(t1, &data.data2);
    let mut if2 = DMatrix::zeros(d, d);
    let mut jf2 = DMatrix::zeros(d, d);
    let mut g1 = vec![0.0; d1];
    let mut g2 = vec![0.0; d2];
    for obs in prepared.iter() {
        let g = stacked_grad_m2(&model.module2, obs, t1, t2, &mut g1, &mut g2);
        let gv = DMatrix::from_column_slice(d, 1, &g);
        if2 += &gv * gv.transpose();
        jf2 -= hessian_m2(&model.module2, obs, t1, t2);
    }
    let n = prepared.len() as f64;
    risk_traces(symmetrize(&(if2 / n)), symmetrize(&(jf2 / n)), sigma_b, sigma_pb)
}
