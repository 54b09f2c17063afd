//! Quasi-Newton maximization of the weighted stage objectives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    stage_one_grad, stage_one_value, stage_two_grad, stage_two_value, CutDataset, CutModel,
    ModuleOne, ModuleTwo, PriorWeight,
};

/// A smooth function to be maximized.
pub trait Objective {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    fn gradient(&self, x: &[f64], out: &mut [f64]);
}

impl<F, G> Objective for (usize, F, G)
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64], &mut [f64]),
{
    fn dim(&self) -> usize {
        self.0
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.1)(x)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        (self.2)(x, out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialPointPolicy {
    Zeros,
    DataDriven,
    UserSupplied { theta1: Vec<f64>, theta2: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// Convergence threshold on the sup-norm of the objective gradient. The
    /// stage objectives are divided by their total data weight, so for them
    /// this is a per-observation tolerance.
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    pub initial_point_policy: InitialPointPolicy,
    pub restarts: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tolerance: 1e-6,
            step_tolerance: 1e-13,
            initial_point_policy: InitialPointPolicy::DataDriven,
            restarts: 1,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be >= 1".into()));
        }
        if !(self.gradient_tolerance > 0.0) || !(self.step_tolerance > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidArgument("restarts must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub gradient_norm: f64,
    pub value: f64,
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximizes `objective` from `init` with BFGS and Armijo backtracking.
///
/// Non-finite objective values during a line search are treated as
/// infeasible and shrink the step. Non-convergence is reported in the
/// diagnostics rather than as an error.
pub fn maximize<O: Objective + ?Sized>(
    objective: &O,
    init: &[f64],
    config: &OptimizerConfig,
) -> Result<(Vec<f64>, Diagnostics)> {
    config.validate()?;
    let d = objective.dim();
    if init.len() != d {
        return Err(Error::DimensionMismatch {
            context: "optimizer start",
            expected: d,
            actual: init.len(),
        });
    }
    let mut best: Option<(Vec<f64>, Diagnostics)> = None;
    for r in 0..config.restarts {
        let start = restart_point(init, r);
        let run = bfgs(objective, &start, config);
        let run = match run {
            Ok(run) => run,
            Err(e) if r == 0 => return Err(e),
            Err(_) => continue,
        };
        // strict comparison keeps the lowest index on ties
        let better = match &best {
            None => true,
            Some((_, b)) => run.1.value > b.value,
        };
        if better {
            best = Some(run);
        }
    }
    Ok(best.expect("first restart either succeeds or returns"))
}

fn restart_point(init: &[f64], r: usize) -> Vec<f64> {
    let mut x = init.to_vec();
    if r > 0 && !x.is_empty() {
        let i = (r - 1) % x.len();
        let sign = if (r - 1) / x.len() % 2 == 0 { 1.0 } else { -1.0 };
        x[i] += sign * 0.5 * (1.0 + x[i].abs()) * ((r + 1) / 2) as f64;
    }
    x
}

fn bfgs<O: Objective + ?Sized>(
    objective: &O,
    init: &[f64],
    config: &OptimizerConfig,
) -> Result<(Vec<f64>, Diagnostics)> {
    let d = init.len();
    let mut x = init.to_vec();
    let mut fx = objective.value(&x);
    let mut evaluations = 1;
    if !fx.is_finite() {
        return Err(Error::InfeasibleStart);
    }
    let mut g = vec![0.0; d];
    objective.gradient(&x, &mut g);
    // inverse Hessian approximation of the negated objective
    let mut h = identity(d);
    let mut scaled = false;
    let mut iterations = 0;
    let mut converged = sup_norm(&g) <= config.gradient_tolerance;

    let mut x_new = vec![0.0; d];
    let mut g_new = vec![0.0; d];
    let mut p = vec![0.0; d];
    while !converged && iterations < config.max_iterations {
        iterations += 1;
        // ascent direction p = H g
        for i in 0..d {
            p[i] = (0..d).map(|j| h[i * d + j] * g[j]).sum();
        }
        let mut slope = dot(&g, &p);
        if !(slope > 0.0) {
            h = identity(d);
            scaled = false;
            p.copy_from_slice(&g);
            slope = dot(&g, &p);
        }
        let mut step = if scaled {
            1.0
        } else {
            (1.0 / sup_norm(&p)).min(1.0)
        };
        let mut accepted = false;
        for _ in 0..80 {
            for i in 0..d {
                x_new[i] = x[i] + step * p[i];
            }
            let f_new = objective.value(&x_new);
            evaluations += 1;
            let required = 1e-4 * step * slope;
            // below roundoff of f only non-decrease can be asked for
            let resolvable = required > 4.0 * f64::EPSILON * fx.abs();
            if f_new.is_finite() && (f_new >= fx + required || (!resolvable && f_new >= fx)) {
                accepted = true;
                fx = f_new;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            if scaled {
                // retry once along the raw gradient before giving up
                h = identity(d);
                scaled = false;
                continue;
            }
            break;
        }
        objective.gradient(&x_new, &mut g_new);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g.iter().zip(&g_new).map(|(a, b)| a - b).collect();
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        converged = sup_norm(&g) <= config.gradient_tolerance;
        if converged {
            break;
        }
        let x_scale = 1.0 + sup_norm(&x);
        if sup_norm(&s) <= config.step_tolerance * x_scale {
            break;
        }
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if !scaled {
                let gamma = sy / dot(&y, &y);
                h = identity(d);
                h.iter_mut().for_each(|v| *v *= gamma);
                scaled = true;
            }
            bfgs_update(&mut h, &s, &y, sy);
        }
    }
    let diag = Diagnostics {
        converged,
        iterations,
        evaluations,
        gradient_norm: sup_norm(&g),
        value: fx,
    };
    Ok((x, diag))
}

fn identity(d: usize) -> Vec<f64> {
    let mut h = vec![0.0; d * d];
    for i in 0..d {
        h[i * d + i] = 1.0;
    }
    h
}

// H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let d = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..d)
        .map(|i| (0..d).map(|j| h[i * d + j] * y[j]).sum())
        .collect();
    let yhy = dot(y, &hy);
    for i in 0..d {
        for j in 0..d {
            h[i * d + j] += -rho * (hy[i] * s[j] + s[i] * hy[j])
                + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

// total data weight; objectives are divided by it so that the gradient
// tolerance is per observation
fn weight_scale(weights: Option<&[f64]>, n: usize) -> f64 {
    let total = weights.map_or(n as f64, |w| w.iter().sum());
    if total > 0.0 && total.is_finite() { total } else { 1.0 }
}

/// Stage-1 objective `sum_j w_j l1 + w0^T log pi1` as an [`Objective`],
/// divided by the total data weight.
pub struct StageOneObjective<'a, M: ModuleOne> {
    pub module: &'a M,
    pub data: &'a [M::Obs],
    pub weights: Option<&'a [f64]>,
    pub prior_weight: &'a PriorWeight,
}

impl<M: ModuleOne> Objective for StageOneObjective<'_, M> {
    fn dim(&self) -> usize {
        self.module.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let v = stage_one_value(self.module, self.data, self.weights, self.prior_weight, x);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v / weight_scale(self.weights, self.data.len())
        }
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        stage_one_grad(
            self.module,
            self.data,
            self.weights,
            self.prior_weight,
            x,
            out,
        );
        let c = weight_scale(self.weights, self.data.len());
        out.iter_mut().for_each(|g| *g /= c);
    }
}

/// Stage-2 objective over `theta2` with `theta1` fixed, divided by the total
/// data weight. `data` must already be conditioned on `theta1` via
/// [`ModuleTwo::prepare`].
pub struct StageTwoObjective<'a, M: ModuleTwo> {
    pub module: &'a M,
    pub data: &'a [M::Obs],
    pub weights: Option<&'a [f64]>,
    pub prior_weight: &'a PriorWeight,
    pub theta1: &'a [f64],
}

impl<M: ModuleTwo> Objective for StageTwoObjective<'_, M> {
    fn dim(&self) -> usize {
        self.module.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let v = stage_two_value(
            self.module,
            self.data,
            self.weights,
            self.prior_weight,
            self.theta1,
            x,
        );
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v / weight_scale(self.weights, self.data.len())
        }
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        stage_two_grad(
            self.module,
            self.data,
            self.weights,
            self.prior_weight,
            self.theta1,
            x,
            out,
        );
        let c = weight_scale(self.weights, self.data.len());
        out.iter_mut().for_each(|g| *g /= c);
    }
}

/// Two-stage maximum likelihood estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleEstimates {
    pub theta1_hat: Vec<f64>,
    pub theta2_hat: Vec<f64>,
    pub converged: [bool; 2],
    pub final_gradient_norms: [f64; 2],
}

pub(crate) fn stage_one_start<M: ModuleOne>(
    module: &M,
    data: &[M::Obs],
    policy: &InitialPointPolicy,
) -> Vec<f64> {
    match policy {
        InitialPointPolicy::Zeros => vec![0.0; module.dim()],
        InitialPointPolicy::DataDriven => module.initial_point(data),
        InitialPointPolicy::UserSupplied { theta1, .. } => theta1.clone(),
    }
}

pub(crate) fn stage_two_start<M: ModuleTwo>(
    module: &M,
    data: &[M::Obs],
    theta1: &[f64],
    policy: &InitialPointPolicy,
) -> Vec<f64> {
    match policy {
        InitialPointPolicy::Zeros => vec![0.0; module.dim()],
        InitialPointPolicy::DataDriven => module.initial_point(data, theta1),
        InitialPointPolicy::UserSupplied { theta2, .. } => theta2.clone(),
    }
}

/// Maximizes module 1 alone, then module 2 at the module-1 estimate.
pub fn fit_mle<M1: ModuleOne, M2: ModuleTwo>(
    model: &CutModel<M1, M2>,
    data: &CutDataset<M1::Obs, M2::Obs>,
    config: &OptimizerConfig,
) -> Result<MleEstimates> {
    data.validate()?;
    let no_prior = PriorWeight::zero();
    let start1 = stage_one_start(&model.module1, &data.data1, &config.initial_point_policy);
    let obj1 = StageOneObjective {
        module: &model.module1,
        data: &data.data1,
        weights: None,
        prior_weight: &no_prior,
    };
    let (theta1, diag1) = maximize(&obj1, &start1, config)?;
    if !diag1.converged {
        return Err(Error::StageOneFailed {
            gradient_norm: diag1.gradient_norm,
        });
    }
    let prepared = model.module2.prepare(&theta1, &data.data2);
    let start2 = stage_two_start(
        &model.module2,
        &prepared,
        &theta1,
        &config.initial_point_policy,
    );
    let obj2 = StageTwoObjective {
        module: &model.module2,
        data: &prepared,
        weights: None,
        prior_weight: &no_prior,
        theta1: &theta1,
    };
    let (theta2, diag2) = maximize(&obj2, &start2, config)?;
    Ok(MleEstimates {
        theta1_hat: theta1,
        theta2_hat: theta2,
        converged: [diag1.converged, diag2.converged],
        final_gradient_norms: [diag1.gradient_norm, diag2.gradient_norm],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic() -> (usize, impl Fn(&[f64]) -> f64, impl Fn(&[f64], &mut [f64])) {
        (
            1,
            |x: &[f64]| -(x[0] - 2.0).powi(2),
            |x: &[f64], g: &mut [f64]| g[0] = -2.0 * (x[0] - 2.0),
        )
    }

    #[test]
    fn quadratic_maximum() {
        let (x, diag) = maximize(&quadratic(), &[0.0], &OptimizerConfig::default()).unwrap();
        assert!(diag.converged);
        assert!((x[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn result_never_worse_than_start() {
        let f = quadratic();
        for start in [-10.0, 0.0, 2.0, 7.5] {
            let (x, diag) = maximize(&f, &[start], &OptimizerConfig::default()).unwrap();
            assert!(diag.value >= f.value(&[start]));
            assert!((x[0] - 2.0).abs() < 1e-8);
        }
    }

    #[test]
    fn infeasible_start_is_an_error() {
        let f = (
            1,
            |x: &[f64]| if x[0] > 0.0 { -x[0].ln().powi(2) } else { f64::NEG_INFINITY },
            |x: &[f64], g: &mut [f64]| g[0] = -2.0 * x[0].ln() / x[0],
        );
        assert!(matches!(
            maximize(&f, &[-1.0], &OptimizerConfig::default()),
            Err(Error::InfeasibleStart)
        ));
        // line search backs off the -inf region
        let (x, diag) = maximize(&f, &[0.05], &OptimizerConfig::default()).unwrap();
        assert!(diag.converged);
        assert!((x[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rosenbrock_converges() {
        let f = (
            2,
            |x: &[f64]| -((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)),
            |x: &[f64], g: &mut [f64]| {
                g[0] = 2.0 * (1.0 - x[0]) + 400.0 * x[0] * (x[1] - x[0] * x[0]);
                g[1] = -200.0 * (x[1] - x[0] * x[0]);
            },
        );
        let cfg = OptimizerConfig {
            max_iterations: 1000,
            ..Default::default()
        };
        let (x, diag) = maximize(&f, &[-1.2, 1.0], &cfg).unwrap();
        assert!(diag.converged, "{diag:?}");
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn non_convergence_is_flagged() {
        let cfg = OptimizerConfig {
            max_iterations: 1,
            ..Default::default()
        };
        let f = (
            2,
            |x: &[f64]| -((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)),
            |x: &[f64], g: &mut [f64]| {
                g[0] = 2.0 * (1.0 - x[0]) + 400.0 * x[0] * (x[1] - x[0] * x[0]);
                g[1] = -200.0 * (x[1] - x[0] * x[0]);
            },
        );
        let (_, diag) = maximize(&f, &[-1.2, 1.0], &cfg).unwrap();
        assert!(!diag.converged);
    }

    #[test]
    fn restarts_keep_best() {
        // two local maxima at x = -1 (value 0) and x = 2 (value 1)
        let f = (
            1,
            |x: &[f64]| {
                let a = -(x[0] + 1.0).powi(2);
                let b = 1.0 - (x[0] - 2.0).powi(2);
                a.max(b)
            },
            |x: &[f64], g: &mut [f64]| {
                let a = -(x[0] + 1.0).powi(2);
                let b = 1.0 - (x[0] - 2.0).powi(2);
                g[0] = if a > b {
                    -2.0 * (x[0] + 1.0)
                } else {
                    -2.0 * (x[0] - 2.0)
                };
            },
        );
        let cfg = OptimizerConfig {
            restarts: 4,
            ..Default::default()
        };
        let (x, _) = maximize(&f, &[-1.5], &cfg).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-6, "{x:?}");
    }
}
