//! Two-module cut model abstraction.
//!
//! Module 1 owns `theta1` and sees only its own observations. Module 2 owns
//! `theta2` and borrows `theta1`. Observations are opaque to the engine: each
//! module declares its own observation type and evaluates per-observation
//! log-likelihoods and analytic gradients.

use std::borrow::Cow;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// First module: likelihood `f1(x | theta1)` and prior `pi1(theta1)`.
///
/// Out-of-support parameters must yield `f64::NEG_INFINITY` from `loglik`
/// and `log_prior_terms` rather than panicking.
pub trait ModuleOne: Sync {
    type Obs: Sync + Send;

    fn dim(&self) -> usize;

    fn loglik(&self, obs: &Self::Obs, theta1: &[f64]) -> f64;

    /// Writes the gradient of `loglik` with respect to `theta1` into `out`.
    fn grad(&self, obs: &Self::Obs, theta1: &[f64], out: &mut [f64]);

    /// Log prior split into independent components when the prior factorizes
    /// (one entry per coordinate), otherwise a single entry.
    fn log_prior_terms(&self, theta1: &[f64]) -> Vec<f64>;

    /// Gradient of the log prior. Coordinate `i` must only depend on the
    /// component `i` term when the prior factorizes.
    fn log_prior_grad(&self, theta1: &[f64], out: &mut [f64]);

    fn prior_factorizes(&self) -> bool {
        true
    }

    /// Analytic Hessian of `loglik`, if the module provides one.
    fn hessian(&self, _obs: &Self::Obs, _theta1: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    /// Data-driven starting point for the stage-1 optimizer.
    fn initial_point(&self, _data: &[Self::Obs]) -> Vec<f64> {
        vec![0.0; self.dim()]
    }
}

/// Second module: likelihood `f2(x | theta1, theta2)` and prior `pi2(theta2)`.
pub trait ModuleTwo: Sync {
    type Obs: Sync + Send + Clone;

    fn dim(&self) -> usize;

    /// Dimension of the borrowed `theta1` block.
    fn dim_theta1(&self) -> usize;

    fn loglik(&self, obs: &Self::Obs, theta1: &[f64], theta2: &[f64]) -> f64;

    fn grad_theta2(&self, obs: &Self::Obs, theta1: &[f64], theta2: &[f64], out: &mut [f64]);

    fn grad_theta1(&self, obs: &Self::Obs, theta1: &[f64], theta2: &[f64], out: &mut [f64]);

    fn log_prior_terms(&self, theta2: &[f64]) -> Vec<f64>;

    fn log_prior_grad(&self, theta2: &[f64], out: &mut [f64]);

    fn prior_factorizes(&self) -> bool {
        true
    }

    /// Analytic Hessian of `loglik` over the stacked `(theta1, theta2)`.
    fn hessian_full(
        &self,
        _obs: &Self::Obs,
        _theta1: &[f64],
        _theta2: &[f64],
    ) -> Option<DMatrix<f64>> {
        None
    }

    /// Conditions the observations on `theta1` before a stage-2 solve.
    ///
    /// Models whose stage-2 design depends on the whole dataset through
    /// `theta1` (propensity-score strata) rebuild their rows here. The
    /// default borrows the data unchanged.
    fn prepare<'a>(&self, _theta1: &[f64], data: &'a [Self::Obs]) -> Cow<'a, [Self::Obs]> {
        Cow::Borrowed(data)
    }

    fn initial_point(&self, _data: &[Self::Obs], _theta1: &[f64]) -> Vec<f64> {
        vec![0.0; self.dim()]
    }
}

/// A named pair of modules.
#[derive(Debug, Clone)]
pub struct CutModel<M1, M2> {
    pub id: String,
    pub module1: M1,
    pub module2: M2,
}

impl<M1: ModuleOne, M2: ModuleTwo> CutModel<M1, M2> {
    pub fn new(id: impl Into<String>, module1: M1, module2: M2) -> Self {
        debug_assert_eq!(module1.dim(), module2.dim_theta1());
        Self {
            id: id.into(),
            module1,
            module2,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.module1.dim(), self.module2.dim())
    }
}

/// Joint parameter `(theta1, theta2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSplit {
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
}

impl ParameterSplit {
    pub fn new(theta1: Vec<f64>, theta2: Vec<f64>) -> Result<Self> {
        if theta1.is_empty() || theta2.is_empty() {
            return Err(Error::InvalidArgument(
                "both parameter blocks need at least one coordinate".into(),
            ));
        }
        if theta1.iter().chain(&theta2).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteParameter("ParameterSplit"));
        }
        Ok(Self { theta1, theta2 })
    }

    pub fn d1(&self) -> usize {
        self.theta1.len()
    }

    pub fn d2(&self) -> usize {
        self.theta2.len()
    }

    pub fn stacked(&self) -> Vec<f64> {
        self.theta1.iter().chain(&self.theta2).copied().collect()
    }
}

/// Observations for both modules.
///
/// `paired` means row `j` of both lists describes the same unit.
#[derive(Debug, Clone)]
pub struct CutDataset<O1, O2> {
    pub data1: Vec<O1>,
    pub data2: Vec<O2>,
    pub paired: bool,
}

impl<O1, O2> CutDataset<O1, O2> {
    pub fn new(data1: Vec<O1>, data2: Vec<O2>, paired: bool) -> Result<Self> {
        let d = Self {
            data1,
            data2,
            paired,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data1.is_empty() || self.data2.is_empty() {
            return Err(Error::InvalidArgument(
                "both modules need at least one observation".into(),
            ));
        }
        if self.paired && self.data1.len() != self.data2.len() {
            return Err(Error::DimensionMismatch {
                context: "paired dataset",
                expected: self.data1.len(),
                actual: self.data2.len(),
            });
        }
        Ok(())
    }

    pub fn n1(&self) -> usize {
        self.data1.len()
    }

    pub fn n2(&self) -> usize {
        self.data2.len()
    }

    /// Realized sample-size ratio `n1 / n2`.
    pub fn alpha(&self) -> f64 {
        self.n1() as f64 / self.n2() as f64
    }
}

/// Weight applied to the log prior: a scalar, or one weight per prior
/// component when the prior factorizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriorWeight {
    Scalar(f64),
    PerCoordinate(Vec<f64>),
}

impl Default for PriorWeight {
    fn default() -> Self {
        PriorWeight::Scalar(0.0)
    }
}

impl PriorWeight {
    pub fn zero() -> Self {
        PriorWeight::Scalar(0.0)
    }

    pub fn is_zero(&self) -> bool {
        match self {
            PriorWeight::Scalar(c) => *c == 0.0,
            PriorWeight::PerCoordinate(v) => v.iter().all(|c| *c == 0.0),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        match self {
            PriorWeight::Scalar(w) => PriorWeight::Scalar(w * c),
            PriorWeight::PerCoordinate(v) => {
                PriorWeight::PerCoordinate(v.iter().map(|w| w * c).collect())
            }
        }
    }

    /// Checks nonnegativity and shape against a prior with `dim` coordinates.
    pub fn validate(&self, dim: usize, factorizes: bool) -> Result<()> {
        match self {
            PriorWeight::Scalar(c) => {
                if !c.is_finite() || *c < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "prior weight must be finite and nonnegative, got {c}"
                    )));
                }
            }
            PriorWeight::PerCoordinate(v) => {
                if !factorizes {
                    return Err(Error::InvalidArgument(
                        "per-coordinate prior weights need a factorizing prior".into(),
                    ));
                }
                if v.len() != dim {
                    return Err(Error::DimensionMismatch {
                        context: "prior weight vector",
                        expected: dim,
                        actual: v.len(),
                    });
                }
                if v.iter().any(|c| !c.is_finite() || *c < 0.0) {
                    return Err(Error::InvalidArgument(
                        "prior weights must be finite and nonnegative".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// `w0^T log pi(theta)` from the prior's component terms. Zero weights
    /// drop their component entirely, so `0 * (-inf)` never occurs.
    pub fn weigh_terms(&self, terms: &[f64]) -> f64 {
        match self {
            PriorWeight::Scalar(c) => {
                if *c == 0.0 {
                    0.0
                } else {
                    c * terms.iter().sum::<f64>()
                }
            }
            PriorWeight::PerCoordinate(w) => w
                .iter()
                .zip(terms)
                .filter(|(w, _)| **w != 0.0)
                .map(|(w, t)| w * t)
                .sum(),
        }
    }

    /// Weight multiplying coordinate `i` of the log-prior gradient.
    pub fn coordinate(&self, i: usize) -> f64 {
        match self {
            PriorWeight::Scalar(c) => *c,
            PriorWeight::PerCoordinate(v) => v[i],
        }
    }
}

fn check_finite(theta: &[f64], context: &'static str) -> Result<()> {
    if theta.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFiniteParameter(context));
    }
    Ok(())
}

fn check_weights(weights: &[f64], n: usize, context: &'static str) -> Result<()> {
    if weights.len() != n {
        return Err(Error::DimensionMismatch {
            context,
            expected: n,
            actual: weights.len(),
        });
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "{context}: weights must be finite and nonnegative"
        )));
    }
    Ok(())
}

/// Weighted stage-1 objective `sum_j w_j l1(x_j, theta1) + w0^T log pi1(theta1)`.
pub fn weighted_objective_m1<M: ModuleOne>(
    module: &M,
    data1: &[M::Obs],
    weights: &[f64],
    w0: &PriorWeight,
    theta1: &[f64],
) -> Result<f64> {
    check_weights(weights, data1.len(), "module-1 weights")?;
    w0.validate(module.dim(), module.prior_factorizes())?;
    if theta1.len() != module.dim() {
        return Err(Error::DimensionMismatch {
            context: "theta1",
            expected: module.dim(),
            actual: theta1.len(),
        });
    }
    check_finite(theta1, "theta1")?;
    Ok(stage_one_value(module, data1, Some(weights), w0, theta1))
}

/// Weighted stage-2 objective with `theta1` held fixed.
pub fn weighted_objective_m2<M: ModuleTwo>(
    module: &M,
    data2: &[M::Obs],
    weights: &[f64],
    v0: &PriorWeight,
    theta1: &[f64],
    theta2: &[f64],
) -> Result<f64> {
    check_weights(weights, data2.len(), "module-2 weights")?;
    v0.validate(module.dim(), module.prior_factorizes())?;
    if theta1.len() != module.dim_theta1() {
        return Err(Error::DimensionMismatch {
            context: "theta1",
            expected: module.dim_theta1(),
            actual: theta1.len(),
        });
    }
    if theta2.len() != module.dim() {
        return Err(Error::DimensionMismatch {
            context: "theta2",
            expected: module.dim(),
            actual: theta2.len(),
        });
    }
    check_finite(theta1, "theta1")?;
    check_finite(theta2, "theta2")?;
    let prepared = module.prepare(theta1, data2);
    Ok(stage_two_value(
        module,
        &prepared,
        Some(weights),
        v0,
        theta1,
        theta2,
    ))
}

/// Unchecked stage-1 objective; `None` weights mean all ones.
pub(crate) fn stage_one_value<M: ModuleOne>(
    module: &M,
    data: &[M::Obs],
    weights: Option<&[f64]>,
    w0: &PriorWeight,
    theta: &[f64],
) -> f64 {
    let mut total = 0.0;
    match weights {
        Some(w) => {
            for (obs, &wj) in data.iter().zip(w) {
                if wj != 0.0 {
                    total += wj * module.loglik(obs, theta);
                }
            }
        }
        None => {
            for obs in data {
                total += module.loglik(obs, theta);
            }
        }
    }
    if !w0.is_zero() {
        total += w0.weigh_terms(&module.log_prior_terms(theta));
    }
    total
}

pub(crate) fn stage_one_grad<M: ModuleOne>(
    module: &M,
    data: &[M::Obs],
    weights: Option<&[f64]>,
    w0: &PriorWeight,
    theta: &[f64],
    out: &mut [f64],
) {
    let d = theta.len();
    let mut scratch = vec![0.0; d];
    out.iter_mut().for_each(|g| *g = 0.0);
    for (j, obs) in data.iter().enumerate() {
        let wj = weights.map_or(1.0, |w| w[j]);
        if wj == 0.0 {
            continue;
        }
        module.grad(obs, theta, &mut scratch);
        for (o, s) in out.iter_mut().zip(&scratch) {
            *o += wj * s;
        }
    }
    if !w0.is_zero() {
        module.log_prior_grad(theta, &mut scratch);
        for i in 0..d {
            out[i] += w0.coordinate(i) * scratch[i];
        }
    }
}

pub(crate) fn stage_two_value<M: ModuleTwo>(
    module: &M,
    data: &[M::Obs],
    weights: Option<&[f64]>,
    v0: &PriorWeight,
    theta1: &[f64],
    theta2: &[f64],
) -> f64 {
    let mut total = 0.0;
    for (j, obs) in data.iter().enumerate() {
        let wj = weights.map_or(1.0, |w| w[j]);
        if wj != 0.0 {
            total += wj * module.loglik(obs, theta1, theta2);
        }
    }
    if !v0.is_zero() {
        total += v0.weigh_terms(&module.log_prior_terms(theta2));
    }
    total
}

pub(crate) fn stage_two_grad<M: ModuleTwo>(
    module: &M,
    data: &[M::Obs],
    weights: Option<&[f64]>,
    v0: &PriorWeight,
    theta1: &[f64],
    theta2: &[f64],
    out: &mut [f64],
) {
    let d = theta2.len();
    let mut scratch = vec![0.0; d];
    out.iter_mut().for_each(|g| *g = 0.0);
    for (j, obs) in data.iter().enumerate() {
        let wj = weights.map_or(1.0, |w| w[j]);
        if wj == 0.0 {
            continue;
        }
        module.grad_theta2(obs, theta1, theta2, &mut scratch);
        for (o, s) in out.iter_mut().zip(&scratch) {
            *o += wj * s;
        }
    }
    if !v0.is_zero() {
        module.log_prior_grad(theta2, &mut scratch);
        for i in 0..d {
            out[i] += v0.coordinate(i) * scratch[i];
        }
    }
}

/// Outcome of comparing analytic gradients against central differences.
#[derive(Debug, Clone, Serialize)]
pub struct GradientReport {
    /// Largest error over observations and coordinates, scaled by
    /// `max(|analytic|, |numeric|, 1)`.
    pub max_relative_error: f64,
    /// Observation index and coordinate where the maximum occurred;
    /// `None` for the observation when the prior gradient is the culprit.
    pub worst: Option<(Option<usize>, usize)>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Central-difference step used by the gradient checks.
pub const GRADIENT_CHECK_STEP: f64 = 1e-6;

fn scaled_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

fn central_difference<F: Fn(&[f64]) -> f64>(f: &F, point: &[f64], i: usize) -> Result<f64> {
    let mut x = point.to_vec();
    let h = GRADIENT_CHECK_STEP * point[i].abs().max(1.0);
    x[i] = point[i] + h;
    let up = f(&x);
    x[i] = point[i] - h;
    let down = f(&x);
    if !up.is_finite() || !down.is_finite() {
        return Err(Error::SupportBoundary(format!(
            "coordinate {i} at {} is within one difference step of the boundary",
            point[i]
        )));
    }
    Ok((up - down) / (2.0 * h))
}

struct ErrorTracker {
    max: f64,
    worst: Option<(Option<usize>, usize)>,
}

impl ErrorTracker {
    fn new() -> Self {
        Self {
            max: 0.0,
            worst: None,
        }
    }

    fn record(&mut self, err: f64, obs: Option<usize>, coord: usize) {
        if err > self.max || self.worst.is_none() {
            self.max = self.max.max(err);
            self.worst = Some((obs, coord));
        }
    }

    fn finish(self, tolerance: f64) -> GradientReport {
        GradientReport {
            max_relative_error: self.max,
            worst: self.worst,
            tolerance,
            passed: self.max <= tolerance,
        }
    }
}

/// Checks module-1 likelihood and prior gradients at `theta1`.
pub fn check_gradients_m1<M: ModuleOne>(
    module: &M,
    observations: &[M::Obs],
    theta1: &[f64],
    tol: f64,
) -> Result<GradientReport> {
    let d = module.dim();
    if theta1.len() != d {
        return Err(Error::DimensionMismatch {
            context: "theta1",
            expected: d,
            actual: theta1.len(),
        });
    }
    let mut tracker = ErrorTracker::new();
    let mut g = vec![0.0; d];
    for (j, obs) in observations.iter().enumerate() {
        if !module.loglik(obs, theta1).is_finite() {
            return Err(Error::SupportBoundary(format!(
                "module-1 log-likelihood not finite at observation {j}"
            )));
        }
        module.grad(obs, theta1, &mut g);
        let f = |t: &[f64]| module.loglik(obs, t);
        for i in 0..d {
            let fd = central_difference(&f, theta1, i)?;
            tracker.record(scaled_error(g[i], fd), Some(j), i);
        }
    }
    let terms = module.log_prior_terms(theta1);
    if terms.iter().all(|t| t.is_finite()) {
        module.log_prior_grad(theta1, &mut g);
        let f = |t: &[f64]| module.log_prior_terms(t).iter().sum::<f64>();
        for i in 0..d {
            let fd = central_difference(&f, theta1, i)?;
            tracker.record(scaled_error(g[i], fd), None, i);
        }
    } else {
        return Err(Error::SupportBoundary("module-1 prior not finite".into()));
    }
    Ok(tracker.finish(tol))
}

/// Checks module-2 gradients in both parameter blocks. Coordinates of the
/// report index the stacked `(theta1, theta2)` vector.
pub fn check_gradients_m2<M: ModuleTwo>(
    module: &M,
    observations: &[M::Obs],
    theta1: &[f64],
    theta2: &[f64],
    tol: f64,
) -> Result<GradientReport> {
    let (d1, d2) = (module.dim_theta1(), module.dim());
    if theta1.len() != d1 || theta2.len() != d2 {
        return Err(Error::DimensionMismatch {
            context: "module-2 gradient check point",
            expected: d1 + d2,
            actual: theta1.len() + theta2.len(),
        });
    }
    let prepared = module.prepare(theta1, observations);
    let mut tracker = ErrorTracker::new();
    let mut g1 = vec![0.0; d1];
    let mut g2 = vec![0.0; d2];
    for (j, obs) in prepared.iter().enumerate() {
        if !module.loglik(obs, theta1, theta2).is_finite() {
            return Err(Error::SupportBoundary(format!(
                "module-2 log-likelihood not finite at observation {j}"
            )));
        }
        module.grad_theta1(obs, theta1, theta2, &mut g1);
        module.grad_theta2(obs, theta1, theta2, &mut g2);
        let f1 = |t: &[f64]| module.loglik(obs, t, theta2);
        for i in 0..d1 {
            let fd = central_difference(&f1, theta1, i)?;
            tracker.record(scaled_error(g1[i], fd), Some(j), i);
        }
        let f2 = |t: &[f64]| module.loglik(obs, theta1, t);
        for i in 0..d2 {
            let fd = central_difference(&f2, theta2, i)?;
            tracker.record(scaled_error(g2[i], fd), Some(j), d1 + i);
        }
    }
    let terms = module.log_prior_terms(theta2);
    if !terms.iter().all(|t| t.is_finite()) {
        return Err(Error::SupportBoundary("module-2 prior not finite".into()));
    }
    module.log_prior_grad(theta2, &mut g2);
    let f = |t: &[f64]| module.log_prior_terms(t).iter().sum::<f64>();
    for i in 0..d2 {
        let fd = central_difference(&f, theta2, i)?;
        tracker.record(scaled_error(g2[i], fd), None, d1 + i);
    }
    Ok(tracker.finish(tol))
}
