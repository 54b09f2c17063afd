use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use cutboot::baselines::NestedMcmcConfig;
use cutboot::model::PriorWeight;
use cutboot::optimize::OptimizerConfig;
use serde::{Deserialize, Serialize};

/// Options shared by every subcommand. Each may come from a flag or from the
/// JSON run file given by `--config`; the run file wins on conflict.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// toy | biased | counterexample | causal | epi
    #[arg(long)]
    pub model: Option<String>,
    /// pbmi_s1 | pbmi_s2 | cut_bayes_exact | cut_bayes_mcmc (comma list for coverage)
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub n1: Option<usize>,
    #[arg(long)]
    pub n2: Option<usize>,
    /// Sample sizes for coverage experiments, comma separated.
    #[arg(long)]
    pub n_grid: Option<String>,
    /// Number of posterior draws.
    #[arg(long = "N")]
    #[serde(rename = "N")]
    pub n_draws: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number, comma list, or "calibrate".
    #[arg(long)]
    pub w0: Option<String>,
    #[arg(long)]
    pub v0: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long)]
    pub sigma1sq: Option<f64>,
    #[arg(long)]
    pub sigma2sq: Option<f64>,
    /// Module-1 scale of the counterexample generator.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub covariates: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub confounding: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub effect: Option<f64>,
    #[arg(long)]
    pub overdispersion: Option<f64>,
    /// literal | log exposure offset for the epi model.
    #[arg(long)]
    pub offset: Option<String>,
    /// weighted_bernoulli | conjugate_beta | pseudosample:<m>
    #[arg(long)]
    pub stage1: Option<String>,
    #[arg(long, env = "CUTBOOT_WORKERS")]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV dataset to load instead of simulating.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// theta1 | theta2 | joint
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub mass: Option<f64>,
    /// samples.csv to evaluate.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Use population rather than plug-in matrices.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub population: Option<bool>,
    #[arg(skip)]
    pub optimizer: Option<OptimizerConfig>,
    #[arg(skip)]
    pub nested: Option<NestedMcmcConfig>,
}

macro_rules! merge_fields {
    ($flags:ident, $file:ident, $($f:ident),+ $(,)?) => {{
        let mut out = $flags;
        $(
            if let Some(v) = $file.$f {
                if out.$f.as_ref().is_some_and(|cur| {
                    serde_json::to_value(cur).ok() != serde_json::to_value(&v).ok()
                }) {
                    log::warn!("`{}` set by both flag and run file; using the run file", stringify!($f));
                }
                out.$f = Some(v);
            }
        )+
        out
    }};
}

impl RunConfig {
    /// Flags overlaid by the run file named in `--config`.
    pub fn resolve(flags: RunConfig, config: Option<&Path>) -> Result<RunConfig> {
        let Some(path) = config else {
            return Ok(flags);
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read run file {}", path.display()))?;
        let file: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("invalid run file {}", path.display()))?;
        Ok(merge_fields!(
            flags, file, model, method, n, n1, n2, n_grid, n_draws, seed, w0, v0, rho, sigma2,
            sigma1sq, sigma2sq, sigma, covariates, confounding, effect, overdispersion, offset,
            stage1, workers, out, data, replicates, target, level, mass, input, population,
            optimizer, nested,
        ))
    }

    pub fn model(&self) -> Result<&str> {
        match self.model.as_deref() {
            Some(m @ ("toy" | "biased" | "counterexample" | "causal" | "epi")) => Ok(m),
            Some(m) => bail!("unknown model `{m}`"),
            None => bail!("--model is required"),
        }
    }

    pub fn out_dir(&self) -> Result<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&dir)
            .with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(dir)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        self.optimizer.clone().unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightSpec {
    Calibrate,
    Fixed(PriorWeight),
}

pub fn parse_weight(raw: Option<&str>, name: &str) -> Result<WeightSpec> {
    let Some(raw) = raw else {
        return Ok(WeightSpec::Fixed(PriorWeight::zero()));
    };
    let raw = raw.trim();
    if raw == "calibrate" {
        return Ok(WeightSpec::Calibrate);
    }
    let values = raw
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("--{name} must be a number, a comma list or \"calibrate\""))?;
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        bail!("--{name} must be finite and nonnegative");
    }
    Ok(WeightSpec::Fixed(match values.as_slice() {
        [v] => PriorWeight::Scalar(*v),
        _ => PriorWeight::PerCoordinate(values),
    }))
}

pub fn parse_list<T: std::str::FromStr>(raw: &str, name: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(|s| s.trim().parse::<T>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| anyhow::anyhow!("cannot parse --{name} list `{raw}`"))
}
