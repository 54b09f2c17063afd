//! Grouped epidemiological model.
//!
//! Module 1: `Z_i ~ Binomial(n1_i, theta1_i)` per group, Beta(1, 1) priors,
//! stored as disaggregated Bernoulli trials so observation weights act on
//! individual trials. Module 2: `Y_i ~ Poisson(mu_i)` with
//! `log mu_i = theta21 + theta22 theta1_i + T_i` (or `+ log T_i`) and
//! `N(0, 1000)` priors.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::LN_2PI;
use crate::error::{Error, Result};
use crate::model::{CutDataset, CutModel, ModuleOne, ModuleTwo};
use crate::rng;

pub const EPI_PRIOR_VARIANCE: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BernoulliTrial {
    pub group: usize,
    pub success: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpiOutcome {
    pub y: f64,
    pub group: usize,
    pub t: f64,
}

/// One row of the grouped data: `z` successes out of `n1` trials, outcome
/// count `y` and exposure term `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpiGroup {
    pub z: u64,
    pub n1: u64,
    pub y: u64,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpiData {
    pub groups: Vec<EpiGroup>,
}

impl EpiData {
    pub fn new(groups: Vec<EpiGroup>) -> Result<Self> {
        let d = Self { groups };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::Data("no groups".into()));
        }
        for (i, g) in self.groups.iter().enumerate() {
            if g.n1 == 0 {
                return Err(Error::Data(format!("group {i}: n1 must be positive")));
            }
            if g.z > g.n1 {
                return Err(Error::Data(format!(
                    "group {i}: Z = {} exceeds n1 = {}",
                    g.z, g.n1
                )));
            }
            if !g.t.is_finite() {
                return Err(Error::Data(format!("group {i}: T is not finite")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn trials(&self) -> Vec<BernoulliTrial> {
        self.groups
            .iter()
            .enumerate()
            .flat_map(|(g, row)| {
                (0..row.n1).map(move |j| BernoulliTrial {
                    group: g,
                    success: j < row.z,
                })
            })
            .collect()
    }

    pub fn outcomes(&self) -> Vec<EpiOutcome> {
        self.groups
            .iter()
            .enumerate()
            .map(|(g, row)| EpiOutcome {
                y: row.y as f64,
                group: g,
                t: row.t,
            })
            .collect()
    }

    pub fn to_dataset(&self) -> Result<CutDataset<BernoulliTrial, EpiOutcome>> {
        self.validate()?;
        CutDataset::new(self.trials(), self.outcomes(), false)
    }

    /// Dataset with module-2 row `i` removed; module 1 keeps every group.
    pub fn without_outcome(&self, i: usize) -> Result<CutDataset<BernoulliTrial, EpiOutcome>> {
        let mut outcomes = self.outcomes();
        outcomes.remove(i);
        CutDataset::new(self.trials(), outcomes, false)
    }

    pub fn proportions(&self) -> Vec<f64> {
        self.groups
            .iter()
            .map(|g| g.z as f64 / g.n1 as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupedBernoulli {
    pub groups: usize,
}

impl ModuleOne for GroupedBernoulli {
    type Obs = BernoulliTrial;

    fn dim(&self) -> usize {
        self.groups
    }

    fn loglik(&self, obs: &BernoulliTrial, theta1: &[f64]) -> f64 {
        let p = theta1[obs.group];
        if !(p > 0.0 && p < 1.0) {
            return f64::NEG_INFINITY;
        }
        if obs.success {
            p.ln()
        } else {
            (1.0 - p).ln()
        }
    }

    fn grad(&self, obs: &BernoulliTrial, theta1: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
        let p = theta1[obs.group];
        out[obs.group] = if obs.success { 1.0 / p } else { -1.0 / (1.0 - p) };
    }

    fn log_prior_terms(&self, theta1: &[f64]) -> Vec<f64> {
        theta1
            .iter()
            .map(|&p| if p > 0.0 && p < 1.0 { 0.0 } else { f64::NEG_INFINITY })
            .collect()
    }

    fn log_prior_grad(&self, _theta1: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
    }

    fn hessian(&self, obs: &BernoulliTrial, theta1: &[f64]) -> Option<DMatrix<f64>> {
        let mut h = DMatrix::zeros(self.groups, self.groups);
        let p = theta1[obs.group];
        h[(obs.group, obs.group)] = if obs.success {
            -1.0 / (p * p)
        } else {
            -1.0 / ((1.0 - p) * (1.0 - p))
        };
        Some(h)
    }

    fn initial_point(&self, data: &[BernoulliTrial]) -> Vec<f64> {
        let mut s = vec![0.0_f64; self.groups];
        let mut n = vec![0.0; self.groups];
        for t in data {
            n[t.group] += 1.0;
            if t.success {
                s[t.group] += 1.0;
            }
        }
        s.iter()
            .zip(&n)
            .map(|(s, n)| ((s + 0.5) / (n + 1.0)).clamp(1e-6, 1.0 - 1e-6))
            .collect()
    }
}

/// How the exposure term enters the linear predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetMode {
    /// `+ T_i`
    #[default]
    Literal,
    /// `+ log T_i`
    Log,
}

impl OffsetMode {
    pub fn apply(self, t: f64) -> f64 {
        match self {
            OffsetMode::Literal => t,
            OffsetMode::Log => t.ln(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonLogLinear {
    pub groups: usize,
    pub offset: OffsetMode,
    pub prior_variance: f64,
}

impl PoissonLogLinear {
    pub fn log_mean(&self, obs: &EpiOutcome, theta1: &[f64], theta2: &[f64]) -> f64 {
        theta2[0] + theta2[1] * theta1[obs.group] + self.offset.apply(obs.t)
    }
}

impl ModuleTwo for PoissonLogLinear {
    type Obs = EpiOutcome;

    fn dim(&self) -> usize {
        2
    }

    fn dim_theta1(&self) -> usize {
        self.groups
    }

    fn loglik(&self, obs: &EpiOutcome, theta1: &[f64], theta2: &[f64]) -> f64 {
        let eta = self.log_mean(obs, theta1, theta2);
        obs.y * eta - eta.exp() - ln_gamma(obs.y + 1.0)
    }

    fn grad_theta2(&self, obs: &EpiOutcome, theta1: &[f64], theta2: &[f64], out: &mut [f64]) {
        let r = obs.y - self.log_mean(obs, theta1, theta2).exp();
        out[0] = r;
        out[1] = r * theta1[obs.group];
    }

    fn grad_theta1(&self, obs: &EpiOutcome, theta1: &[f64], theta2: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
        let r = obs.y - self.log_mean(obs, theta1, theta2).exp();
        out[obs.group] = r * theta2[1];
    }

    fn log_prior_terms(&self, theta2: &[f64]) -> Vec<f64> {
        theta2
            .iter()
            .map(|b| -0.5 * (LN_2PI + self.prior_variance.ln()) - b * b / (2.0 * self.prior_variance))
            .collect()
    }

    fn log_prior_grad(&self, theta2: &[f64], out: &mut [f64]) {
        for (o, b) in out.iter_mut().zip(theta2) {
            *o = -b / self.prior_variance;
        }
    }

    fn hessian_full(&self, obs: &EpiOutcome, theta1: &[f64], theta2: &[f64]) -> Option<DMatrix<f64>> {
        let d1 = self.groups;
        let g = obs.group;
        let mu = self.log_mean(obs, theta1, theta2).exp();
        let r = obs.y - mu;
        let p = theta1[g];
        let mut h = DMatrix::zeros(d1 + 2, d1 + 2);
        h[(g, g)] = -mu * theta2[1] * theta2[1];
        h[(g, d1)] = -mu * theta2[1];
        h[(g, d1 + 1)] = r - mu * theta2[1] * p;
        h[(d1, d1)] = -mu;
        h[(d1, d1 + 1)] = -mu * p;
        h[(d1 + 1, d1 + 1)] = -mu * p * p;
        h.fill_lower_triangle_with_upper_triangle();
        Some(h)
    }

    fn initial_point(&self, data: &[EpiOutcome], theta1: &[f64]) -> Vec<f64> {
        // intercept-only fit: exp(b0) = sum(y) / sum(exp(offset))
        let sy: f64 = data.iter().map(|o| o.y).sum();
        let se: f64 = data.iter().map(|o| self.offset.apply(o.t).exp()).sum();
        let _ = theta1;
        vec![((sy + 0.5) / se).ln(), 0.0]
    }
}

pub type EpiModel = CutModel<GroupedBernoulli, PoissonLogLinear>;

pub fn epi_model(groups: usize, offset: OffsetMode) -> EpiModel {
    CutModel::new(
        "epi",
        GroupedBernoulli { groups },
        PoissonLogLinear {
            groups,
            offset,
            prior_variance: EPI_PRIOR_VARIANCE,
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpiGeneratorConfig {
    pub theta1: Vec<f64>,
    pub theta2: [f64; 2],
    pub n1: Vec<u64>,
    pub t: Vec<f64>,
    pub offset: OffsetMode,
    /// Variance inflation of the outcome: `mu` is multiplied by a mean-one
    /// Gamma variable with variance `overdispersion`; 0 gives Poisson data.
    pub overdispersion: f64,
    pub seed: u64,
}

impl Default for EpiGeneratorConfig {
    fn default() -> Self {
        let groups = 13;
        Self {
            theta1: (0..groups).map(|i| 0.05 + 0.025 * i as f64).collect(),
            theta2: [-2.0, 8.0],
            n1: (0..groups).map(|i| 100 + 25 * (i as u64 % 5)).collect(),
            t: (0..groups).map(|i| 2.0 + 0.15 * ((i * 7) % 13) as f64).collect(),
            offset: OffsetMode::Literal,
            overdispersion: 0.0,
            seed: 0,
        }
    }
}

pub fn epi_generate(cfg: &EpiGeneratorConfig) -> Result<EpiData> {
    let k = cfg.theta1.len();
    if k == 0 || cfg.n1.len() != k || cfg.t.len() != k {
        return Err(Error::InvalidArgument(
            "theta1, n1 and T must have the same positive length".into(),
        ));
    }
    if cfg.theta1.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
        return Err(Error::InvalidArgument("theta1 entries must lie in (0, 1)".into()));
    }
    if cfg.n1.iter().any(|&n| n == 0) {
        return Err(Error::InvalidArgument("n1 entries must be positive".into()));
    }
    if !(cfg.overdispersion >= 0.0) {
        return Err(Error::InvalidArgument("overdispersion must be >= 0".into()));
    }
    let mut r = rng::stream(cfg.seed, rng::domain::GENERATOR, 0);
    let mut groups = Vec::with_capacity(k);
    for i in 0..k {
        let z = (0..cfg.n1[i])
            .filter(|_| r.random::<f64>() < cfg.theta1[i])
            .count() as u64;
        let mut mu = (cfg.theta2[0] + cfg.theta2[1] * cfg.theta1[i] + cfg.offset.apply(cfg.t[i])).exp();
        if cfg.overdispersion > 0.0 {
            let shape = 1.0 / cfg.overdispersion;
            let g = Gamma::new(shape, cfg.overdispersion)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            mu *= g.sample(&mut r);
        }
        let y = if mu > 0.0 {
            Poisson::new(mu)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?
                .sample(&mut r) as u64
        } else {
            0
        };
        groups.push(EpiGroup {
            z,
            n1: cfg.n1[i],
            y,
            t: cfg.t[i],
        });
    }
    EpiData::new(groups)
}

/// Reads columns `Z, n1, Y, T`, one row per group.
pub fn epi_load_csv(path: impl AsRef<Path>) -> Result<EpiData> {
    #[derive(Deserialize)]
    struct Row {
        #[serde(rename = "Z")]
        z: u64,
        n1: u64,
        #[serde(rename = "Y")]
        y: u64,
        #[serde(rename = "T")]
        t: f64,
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut groups = Vec::new();
    for row in reader.deserialize() {
        let row: Row = row?;
        groups.push(EpiGroup {
            z: row.z,
            n1: row.n1,
            y: row.y,
            t: row.t,
        });
    }
    EpiData::new(groups)
}

pub fn epi_write_csv<W: std::io::Write>(data: &EpiData, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["Z", "n1", "Y", "T"])?;
    for g in &data.groups {
        w.write_record([
            g.z.to_string(),
            g.n1.to_string(),
            g.y.to_string(),
            format!("{:.16e}", g.t),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{check_gradients_m1, check_gradients_m2};
    use crate::optimize::{maximize, OptimizerConfig};

    #[test]
    fn poisson_gradients_match_differences() {
        let data = epi_generate(&EpiGeneratorConfig {
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        let m = epi_model(13, OffsetMode::Literal);
        let t1: Vec<f64> = data.proportions().iter().map(|p| p.clamp(0.02, 0.98)).collect();
        let rep = check_gradients_m2(&m.module2, &data.outcomes(), &t1, &[-1.8, 7.5], 1e-5).unwrap();
        assert!(rep.passed, "{rep:?}");
        let rep = check_gradients_m1(&m.module1, &data.trials()[..40], &t1, 1e-5).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn intercept_gradient_is_residual_sum() {
        let m = epi_model(2, OffsetMode::Literal);
        let obs = EpiOutcome { y: 7.0, group: 1, t: 0.5 };
        let mut g = [0.0; 2];
        m.module2.grad_theta2(&obs, &[0.1, 0.3], &[0.2, 1.0], &mut g);
        let mu = (0.2_f64 + 0.3 + 0.5).exp();
        assert!((g[0] - (7.0 - mu)).abs() < 1e-12);
    }

    #[test]
    fn single_group_intercept_mle_is_closed_form() {
        let m = epi_model(1, OffsetMode::Literal);
        let obs = [EpiOutcome { y: 12.0, group: 0, t: 1.7 }];
        let theta1 = [0.3];
        let f = (
            1,
            |b: &[f64]| m.module2.loglik(&obs[0], &theta1, &[b[0], 0.0]),
            |b: &[f64], out: &mut [f64]| {
                let mut g = [0.0; 2];
                m.module2.grad_theta2(&obs[0], &theta1, &[b[0], 0.0], &mut g);
                out[0] = g[0];
            },
        );
        let (b, diag) = maximize(&f, &[0.0], &OptimizerConfig::default()).unwrap();
        assert!(diag.converged);
        // mu_hat = Y / exp(T)
        assert!((b[0].exp() - 12.0 / 1.7_f64.exp()).abs() < 1e-6);
    }

    #[test]
    fn z_above_n1_rejected() {
        let g = EpiGroup { z: 5, n1: 4, y: 1, t: 0.0 };
        assert!(EpiData::new(vec![g]).is_err());
        let g = EpiGroup { z: 0, n1: 0, y: 1, t: 0.0 };
        assert!(EpiData::new(vec![g]).is_err());
    }

    #[test]
    fn bernoulli_outside_support_is_neg_inf() {
        let m = GroupedBernoulli { groups: 1 };
        let t = BernoulliTrial { group: 0, success: true };
        assert_eq!(m.loglik(&t, &[1.2]), f64::NEG_INFINITY);
        assert_eq!(m.log_prior_terms(&[0.0])[0], f64::NEG_INFINITY);
    }

    #[test]
    fn csv_round_trip() {
        let data = epi_generate(&EpiGeneratorConfig::default()).unwrap();
        let mut buf = Vec::new();
        epi_write_csv(&data, &mut buf).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("epi.csv");
        std::fs::write(&path, &buf).unwrap();
        assert_eq!(epi_load_csv(&path).unwrap(), data);
    }
}
