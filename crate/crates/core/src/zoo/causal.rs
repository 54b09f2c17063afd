//! Propensity-score model.
//!
//! Module 1 is a logistic regression of treatment `z` on covariates. Module 2
//! regresses the outcome on treatment and the quintile stratum of the fitted
//! propensity score:
//! `y = b_treat z + b_0 + sum_{k=2..5} b_k [stratum = k] + N(0, sigma^2)`,
//! with `theta2 = (b_treat, b_0, b_2, b_3, b_4, b_5, log sigma)`.
//!
//! The stratum of a unit depends on every unit's score, so strata are
//! recomputed in [`ModuleTwo::prepare`] for each `theta1` and the module-2
//! likelihood is piecewise constant in `theta1` (zero `theta1` gradient).

use std::borrow::Cow;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::LN_2PI;
use crate::error::{Error, Result};
use crate::model::{CutDataset, CutModel, ModuleOne, ModuleTwo};
use crate::rng;

pub const STRATA: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalRow {
    pub z: f64,
    pub y: f64,
    pub x: Vec<f64>,
    /// Propensity quintile in `1..=5`; 0 until assigned.
    pub stratum: u8,
}

fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

// ln(1 + e^t) without overflow
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn linear_predictor(theta1: &[f64], x: &[f64]) -> f64 {
    theta1[0] + theta1[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
}

/// Logistic regression with intercept and a flat prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticPropensity {
    pub covariates: usize,
}

impl ModuleOne for LogisticPropensity {
    type Obs = CausalRow;

    fn dim(&self) -> usize {
        self.covariates + 1
    }

    fn loglik(&self, obs: &CausalRow, theta1: &[f64]) -> f64 {
        let eta = linear_predictor(theta1, &obs.x);
        obs.z * eta - softplus(eta)
    }

    fn grad(&self, obs: &CausalRow, theta1: &[f64], out: &mut [f64]) {
        let r = obs.z - logistic(linear_predictor(theta1, &obs.x));
        out[0] = r;
        for (o, v) in out[1..].iter_mut().zip(&obs.x) {
            *o = r * v;
        }
    }

    fn log_prior_terms(&self, _theta1: &[f64]) -> Vec<f64> {
        vec![0.0; self.dim()]
    }

    fn log_prior_grad(&self, _theta1: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
    }

    fn hessian(&self, obs: &CausalRow, theta1: &[f64]) -> Option<DMatrix<f64>> {
        let p = logistic(linear_predictor(theta1, &obs.x));
        let d = self.dim();
        let row: Vec<f64> = std::iter::once(1.0).chain(obs.x.iter().copied()).collect();
        Some(DMatrix::from_fn(d, d, |i, j| -p * (1.0 - p) * row[i] * row[j]))
    }

    fn initial_point(&self, data: &[CausalRow]) -> Vec<f64> {
        let mean = data.iter().map(|r| r.z).sum::<f64>() / data.len().max(1) as f64;
        let mut t = vec![0.0; self.dim()];
        if mean > 0.0 && mean < 1.0 {
            t[0] = (mean / (1.0 - mean)).ln();
        }
        t
    }
}

/// Quintile strata from scores: units are ranked and split into five
/// groups of (near) equal size; tied scores share the stratum of their
/// lowest rank.
pub fn assign_quintiles(scores: &[f64]) -> Vec<u8> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut strata = vec![0u8; n];
    let mut prev: Option<(f64, u8)> = None;
    for (rank, &i) in order.iter().enumerate() {
        let s = match prev {
            Some((score, s)) if score == scores[i] => s,
            _ => (rank * STRATA / n) as u8 + 1,
        };
        strata[i] = s;
        prev = Some((scores[i], s));
    }
    strata
}

/// Strata lacking treated or untreated units.
pub fn stratum_balance_warnings(rows: &[CausalRow]) -> Vec<String> {
    let mut counts = [[0usize; 2]; STRATA];
    for r in rows {
        if (1..=STRATA as u8).contains(&r.stratum) {
            counts[r.stratum as usize - 1][(r.z > 0.5) as usize] += 1;
        }
    }
    counts
        .iter()
        .enumerate()
        .filter(|(_, c)| c[0] == 0 || c[1] == 0)
        .map(|(k, c)| {
            format!(
                "stratum {} has {} untreated and {} treated units",
                k + 1,
                c[0],
                c[1]
            )
        })
        .collect()
}

/// Stratified Gaussian outcome regression, flat priors on all of `theta2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratifiedOutcome {
    pub covariates: usize,
}

impl StratifiedOutcome {
    fn mean(obs: &CausalRow, theta2: &[f64]) -> f64 {
        let mut mu = theta2[0] * obs.z + theta2[1];
        if obs.stratum >= 2 {
            mu += theta2[obs.stratum as usize];
        }
        mu
    }
}

impl ModuleTwo for StratifiedOutcome {
    type Obs = CausalRow;

    fn dim(&self) -> usize {
        STRATA + 2
    }

    fn dim_theta1(&self) -> usize {
        self.covariates + 1
    }

    fn loglik(&self, obs: &CausalRow, _theta1: &[f64], theta2: &[f64]) -> f64 {
        let log_sigma = theta2[STRATA + 1];
        let r = (obs.y - Self::mean(obs, theta2)) * (-log_sigma).exp();
        -0.5 * LN_2PI - log_sigma - 0.5 * r * r
    }

    fn grad_theta2(&self, obs: &CausalRow, _theta1: &[f64], theta2: &[f64], out: &mut [f64]) {
        let log_sigma = theta2[STRATA + 1];
        let inv_var = (-2.0 * log_sigma).exp();
        let r = obs.y - Self::mean(obs, theta2);
        out.iter_mut().for_each(|g| *g = 0.0);
        out[0] = r * obs.z * inv_var;
        out[1] = r * inv_var;
        if obs.stratum >= 2 {
            out[obs.stratum as usize] = r * inv_var;
        }
        out[STRATA + 1] = -1.0 + r * r * inv_var;
    }

    fn grad_theta1(&self, _obs: &CausalRow, _t1: &[f64], _t2: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
    }

    fn log_prior_terms(&self, _theta2: &[f64]) -> Vec<f64> {
        vec![0.0; self.dim()]
    }

    fn log_prior_grad(&self, _theta2: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
    }

    fn prepare<'a>(&self, theta1: &[f64], data: &'a [CausalRow]) -> Cow<'a, [CausalRow]> {
        let scores: Vec<f64> = data
            .iter()
            .map(|r| logistic(linear_predictor(theta1, &r.x)))
            .collect();
        let strata = assign_quintiles(&scores);
        Cow::Owned(
            data.iter()
                .zip(strata)
                .map(|(r, s)| CausalRow {
                    stratum: s,
                    ..r.clone()
                })
                .collect(),
        )
    }

    fn initial_point(&self, data: &[CausalRow], _theta1: &[f64]) -> Vec<f64> {
        let n = data.len().max(1) as f64;
        let mean = data.iter().map(|r| r.y).sum::<f64>() / n;
        let var = data.iter().map(|r| (r.y - mean).powi(2)).sum::<f64>() / n;
        let mut t = vec![0.0; self.dim()];
        t[1] = mean;
        t[STRATA + 1] = 0.5 * var.max(1e-12).ln();
        t
    }
}

pub type CausalModel = CutModel<LogisticPropensity, StratifiedOutcome>;

pub fn causal_model(covariates: usize) -> CausalModel {
    CutModel::new(
        "causal",
        LogisticPropensity { covariates },
        StratifiedOutcome { covariates },
    )
}

/// Synthetic observational study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CausalGeneratorConfig {
    pub n: usize,
    pub covariates: usize,
    /// Strength of measured confounding through `x1` and `x2`.
    pub confounding: f64,
    /// Strength of an unmeasured confounder entering both treatment and outcome.
    pub hidden_confounding: f64,
    pub effect: f64,
    /// Probability that an outcome is replaced by an exact zero.
    pub zero_inflation: f64,
    pub seed: u64,
}

impl Default for CausalGeneratorConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            covariates: 3,
            confounding: 1.0,
            hidden_confounding: 0.0,
            effect: 1.0,
            zero_inflation: 0.0,
            seed: 0,
        }
    }
}

fn rows_to_dataset(rows: Vec<CausalRow>) -> Result<CutDataset<CausalRow, CausalRow>> {
    let first = rows
        .first()
        .map(|r| r.z)
        .ok_or_else(|| Error::Data("empty causal dataset".into()))?;
    if rows.iter().all(|r| r.z == first) {
        return Err(Error::Data("treatment indicator z is constant".into()));
    }
    if rows.iter().any(|r| r.z != 0.0 && r.z != 1.0) {
        return Err(Error::Data("treatment indicator z must be 0 or 1".into()));
    }
    CutDataset::new(rows.clone(), rows, true)
}

pub fn causal_generate(cfg: &CausalGeneratorConfig) -> Result<CutDataset<CausalRow, CausalRow>> {
    if cfg.n < 2 {
        return Err(Error::InvalidArgument("n must be >= 2".into()));
    }
    if !(0.0..1.0).contains(&cfg.zero_inflation) {
        return Err(Error::InvalidArgument("zero_inflation must lie in [0, 1)".into()));
    }
    let mut r = rng::stream(cfg.seed, rng::domain::GENERATOR, 0);
    let rows = (0..cfg.n)
        .map(|_| {
            let x: Vec<f64> = (0..cfg.covariates)
                .map(|_| r.sample(StandardNormal))
                .collect();
            let x1 = x.first().copied().unwrap_or(0.0);
            let x2 = x.get(1).copied().unwrap_or(0.0);
            let u: f64 = r.sample(StandardNormal);
            let logit = -0.3 + cfg.confounding * (x1 + 0.5 * x2) + cfg.hidden_confounding * u;
            let z = if r.random::<f64>() < logistic(logit) { 1.0 } else { 0.0 };
            let eps: f64 = r.sample(StandardNormal);
            let mut y = cfg.effect * z
                + cfg.confounding * (x1 - 0.5 * x2)
                + cfg.hidden_confounding * u
                + eps;
            if r.random::<f64>() < cfg.zero_inflation {
                y = 0.0;
            }
            CausalRow {
                z,
                y,
                x,
                stratum: 0,
            }
        })
        .collect();
    rows_to_dataset(rows)
}

/// Reads columns `z, y, x1..xp`. Non-binary covariates are standardized to
/// mean 0 and variance 1.
pub fn causal_load_csv(path: impl AsRef<Path>) -> Result<CutDataset<CausalRow, CausalRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Data(format!("missing column `{name}`")))
    };
    let zi = find("z")?;
    let yi = find("y")?;
    let mut xi = Vec::new();
    for p in 1.. {
        match find(&format!("x{p}")) {
            Ok(i) => xi.push(i),
            Err(_) => break,
        }
    }
    let parse = |s: &str, line: usize| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::Data(format!("line {line}: cannot parse `{s}`")))
    };
    let mut rows = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = line + 2;
        let x = xi
            .iter()
            .map(|&i| parse(&rec[i], line))
            .collect::<Result<Vec<_>>>()?;
        rows.push(CausalRow {
            z: parse(&rec[zi], line)?,
            y: parse(&rec[yi], line)?,
            x,
            stratum: 0,
        });
    }
    let n = rows.len() as f64;
    for j in 0..xi.len() {
        let binary = rows.iter().all(|r| r.x[j] == 0.0 || r.x[j] == 1.0);
        if binary {
            continue;
        }
        let mean = rows.iter().map(|r| r.x[j]).sum::<f64>() / n;
        let sd = (rows.iter().map(|r| (r.x[j] - mean).powi(2)).sum::<f64>() / n).sqrt();
        if sd > 0.0 {
            for r in rows.iter_mut() {
                r.x[j] = (r.x[j] - mean) / sd;
            }
        }
    }
    rows_to_dataset(rows)
}

pub fn causal_write_csv<W: std::io::Write>(rows: &[CausalRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let p = rows.first().map_or(0, |r| r.x.len());
    let mut header = vec!["z".to_string(), "y".to_string()];
    header.extend((1..=p).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![format!("{}", r.z), format!("{:.16e}", r.y)];
        rec.extend(r.x.iter().map(|v| format!("{v:.16e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
