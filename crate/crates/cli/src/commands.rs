use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use cutboot::asymptotics::{
    calibrate_prior_weights, covariance_report, estimate_info, prediction_risk_traces, risk_traces,
    sigma_scenario1, InfoMatrices,
};
use cutboot::baselines::{cut_exact_gaussian, cut_nested_given_theta1, cut_nested_metropolis, NestedMcmcConfig};
use cutboot::evaluation::{
    coverage_experiment, elpd_comparison, epi_loo_comparison, hdr_region, quartiles, v0_sweep,
    CoverageExperimentConfig, CoverageMethod, CoverageTarget, ElpdExperimentConfig, ElpdMethod,
    EpiLooConfig, HdrOptions, V0SweepConfig,
};
use cutboot::io::{digest, matrix_json, read_samples_csv, unix_time, write_samples_csv, RunManifest};
use cutboot::model::{CutDataset, CutModel, ModuleOne, ModuleTwo, ParameterSplit, PriorWeight};
use cutboot::optimize::{fit_mle, MleEstimates};
use cutboot::sampler::{
    pbmi_multigroup_stage1, pbmi_scenario1, pbmi_scenario2, pbmi_stage2_given_theta1,
    MultigroupVariant, SampleSet, SamplerConfig,
};
use cutboot::zoo::{
    biased_data_model, causal_model, counterexample_model, counterexample_population, epi_model,
    toy_model, toy_population_info, GeneratorSpec,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{parse_list, parse_weight, RunConfig, WeightSpec};
use crate::data::{self, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    PbmiS1,
    PbmiS2,
    CutExact,
    CutMcmc,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "pbmi_s1" => Method::PbmiS1,
            "pbmi_s2" => Method::PbmiS2,
            "cut_bayes_exact" => Method::CutExact,
            "cut_bayes_mcmc" => Method::CutMcmc,
            m => bail!("unknown method `{m}`"),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::PbmiS1 => "pbmi_s1",
            Method::PbmiS2 => "pbmi_s2",
            Method::CutExact => "cut_bayes_exact",
            Method::CutMcmc => "cut_bayes_mcmc",
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Settings actually given, for manifests.
fn settings(cfg: &RunConfig) -> Result<Value> {
    let mut v = serde_json::to_value(cfg)?;
    if let Value::Object(m) = &mut v {
        m.retain(|_, x| !x.is_null());
    }
    Ok(v)
}

fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, extra: Value) -> Result<()> {
    let mut m = json!({
        "command": command,
        "seed": cfg.seed(),
        "settings": settings(cfg)?,
        "timestamp": unix_time(),
    });
    if let (Value::Object(a), Value::Object(b)) = (&mut m, extra) {
        a.extend(b);
    }
    write_json(&dir.join("manifest.json"), &m)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn simulate(cfg: &RunConfig) -> Result<()> {
    let model = cfg.model()?;
    let data = data::simulate(cfg)?;
    let dir = cfg.out_dir()?;
    let bytes = data::to_bytes(&data)?;
    std::fs::write(dir.join(format!("{model}_data.csv")), &bytes)?;
    write_manifest(&dir, "simulate", cfg, json!({ "model": model, "data_sha256": digest(&bytes) }))
}

struct FitRun {
    method: Method,
    n_draws: usize,
    seed: u64,
    w0: WeightSpec,
    v0: WeightSpec,
    sampler: SamplerConfig,
    nested: NestedMcmcConfig,
}

struct FitOutput {
    set: SampleSet,
    mle: Option<MleEstimates>,
    calibrated: bool,
    diagnostics: Option<Value>,
}

type ExactSampler<'a> = &'a dyn Fn(usize, u64) -> cutboot::Result<SampleSet>;

fn resolve_weights<M1: ModuleOne, M2: ModuleTwo>(
    model: &CutModel<M1, M2>,
    data: &CutDataset<M1::Obs, M2::Obs>,
    run: &FitRun,
    mle: Option<&MleEstimates>,
) -> Result<(PriorWeight, PriorWeight)> {
    let fixed = |w: &WeightSpec| match w {
        WeightSpec::Fixed(p) => Some(p.clone()),
        WeightSpec::Calibrate => None,
    };
    if let (Some(w0), Some(v0)) = (fixed(&run.w0), fixed(&run.v0)) {
        return Ok((w0, v0));
    }
    let mle = mle.context("calibration needs the two-stage MLE")?;
    let at = ParameterSplit::new(mle.theta1_hat.clone(), mle.theta2_hat.clone())?;
    let info = estimate_info(model, data, &at)?;
    let (cw0, cv0) = calibrate_prior_weights(
        &info,
        model.module1.prior_factorizes(),
        model.module2.prior_factorizes(),
    )?;
    Ok((fixed(&run.w0).unwrap_or(cw0), fixed(&run.v0).unwrap_or(cv0)))
}

fn fit_generic<M1: ModuleOne, M2: ModuleTwo>(
    model: &CutModel<M1, M2>,
    data: &CutDataset<M1::Obs, M2::Obs>,
    run: &FitRun,
    exact: Option<ExactSampler<'_>>,
) -> Result<FitOutput> {
    if run.method == Method::PbmiS2 && !data.paired {
        return Err(cutboot::Error::RequiresPairedData.into());
    }
    if run.method == Method::CutExact && exact.is_none() {
        bail!(cutboot::Error::Unsupported(
            "exact sampler unavailable for this model".into()
        ));
    }
    let calibrating = run.w0 == WeightSpec::Calibrate || run.v0 == WeightSpec::Calibrate;
    let mle = match fit_mle(model, data, &run.sampler.optimizer) {
        Ok(m) => Some(m),
        Err(e) if !calibrating => {
            log::warn!("MLE unavailable: {e}");
            None
        }
        Err(e) => return Err(e.into()),
    };
    let (w0, v0) = resolve_weights(model, data, run, mle.as_ref())?;
    let mut diagnostics = None;
    let set = match run.method {
        Method::PbmiS1 => pbmi_scenario1(model, data, run.n_draws, &w0, &v0, &run.sampler, run.seed)?,
        Method::PbmiS2 => pbmi_scenario2(model, data, run.n_draws, &w0, &v0, &run.sampler, run.seed)?,
        Method::CutExact => exact.expect("checked above")(run.n_draws, run.seed)?,
        Method::CutMcmc => {
            let cfg = NestedMcmcConfig {
                outer_draws: run.n_draws,
                ..run.nested.clone()
            };
            let (set, diag) = cut_nested_metropolis(model, data, &cfg, run.seed)?;
            diagnostics = Some(serde_json::to_value(diag)?);
            set
        }
    };
    Ok(FitOutput {
        set,
        mle,
        calibrated: calibrating,
        diagnostics,
    })
}

fn multigroup_variant(cfg: &RunConfig) -> Result<MultigroupVariant> {
    Ok(match cfg.stage1.as_deref() {
        None | Some("weighted_bernoulli") => MultigroupVariant::WeightedBernoulli,
        Some("conjugate_beta") => MultigroupVariant::ConjugateBeta,
        Some(s) if s.starts_with("pseudosample:") => MultigroupVariant::Pseudosample(
            s["pseudosample:".len()..]
                .parse()
                .context("pseudosample count must be a nonnegative integer")?,
        ),
        Some(s) => bail!("unknown stage-1 variant `{s}`"),
    })
}

fn fit_epi(cfg: &RunConfig, data: &cutboot::zoo::EpiData, run: &FitRun) -> Result<FitOutput> {
    let model = epi_model(data.len(), data::offset(cfg)?);
    let ds = data.to_dataset()?;
    match run.method {
        Method::PbmiS2 => return Err(cutboot::Error::RequiresPairedData.into()),
        Method::CutExact => bail!(cutboot::Error::Unsupported(
            "exact sampler unavailable for this model".into()
        )),
        _ => {}
    }
    let variant = match run.method {
        Method::CutMcmc => MultigroupVariant::ConjugateBeta,
        _ => multigroup_variant(cfg)?,
    };
    let theta1 = pbmi_multigroup_stage1(data, run.n_draws, variant, run.seed)?;
    let calibrating = run.v0 == WeightSpec::Calibrate;
    let mle = match fit_mle(&model, &ds, &run.sampler.optimizer) {
        Ok(m) => Some(m),
        Err(e) if !calibrating => {
            log::warn!("MLE unavailable: {e}");
            None
        }
        Err(e) => return Err(e.into()),
    };
    let mut diagnostics = Some(json!({ "stage1": format!("{variant:?}") }));
    let set = match run.method {
        Method::CutMcmc => {
            let (set, diag) = cut_nested_given_theta1(&model, &ds.data2, &theta1, &run.nested, run.seed)?;
            diagnostics = Some(serde_json::to_value(diag)?);
            set
        }
        _ => {
            let epi_run = FitRun {
                w0: WeightSpec::Fixed(PriorWeight::zero()),
                v0: run.v0.clone(),
                sampler: run.sampler.clone(),
                nested: run.nested.clone(),
                ..*run
            };
            let (_, v0) = resolve_weights(&model, &ds, &epi_run, mle.as_ref())?;
            pbmi_stage2_given_theta1(&model, &ds.data2, &theta1, &v0, &run.sampler, run.seed)?
        }
    };
    Ok(FitOutput {
        set,
        mle,
        calibrated: calibrating,
        diagnostics,
    })
}

fn coordinate_names(set: &SampleSet) -> Vec<String> {
    let (d1, d2) = set.dims();
    (1..=d1)
        .map(|i| format!("theta1_{i}"))
        .chain((1..=d2).map(|i| format!("theta2_{i}")))
        .collect()
}

fn summarize(cfg: &RunConfig, method: Method, out: &FitOutput, wall: f64) -> Value {
    let set = &out.set;
    let d = set.dims().0 + set.dims().1;
    let probs = [0.025, 0.25, 0.5, 0.75, 0.975];
    let mut quantiles = serde_json::Map::new();
    let cols: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let mut c = set.coordinate(i);
            c.sort_by(f64::total_cmp);
            c
        })
        .collect();
    for p in probs {
        let q: Vec<f64> = cols
            .iter()
            .map(|c| cutboot::evaluation::quantile_sorted(c, p))
            .collect();
        quantiles.insert(format!("{p}"), json!(q));
    }
    json!({
        "model": cfg.model.clone(),
        "method": method.as_str(),
        "scenario": set.scenario,
        "N": set.len(),
        "retained": set.retained().count(),
        "failure_rate": set.failure_rate(),
        "coordinates": coordinate_names(set),
        "mean": set.mean(),
        "quantiles": quantiles,
        "covariance": matrix_json(&set.covariance()),
        "w0": set.w0,
        "v0": set.v0,
        "calibrated": out.calibrated,
        "mle": out.mle,
        "diagnostics": out.diagnostics,
        "wall_time_seconds": wall,
    })
}

pub fn fit(cfg: &RunConfig) -> Result<()> {
    let model = cfg.model()?;
    let method = Method::parse(cfg.method.as_deref().unwrap_or("pbmi_s1"))?;
    if method == Method::CutExact && matches!(model, "causal" | "epi") {
        bail!(cutboot::Error::Unsupported(
            "exact sampler unavailable for this model".into()
        ));
    }
    if method == Method::PbmiS2 && matches!(model, "biased" | "counterexample" | "epi") {
        return Err(cutboot::Error::RequiresPairedData.into());
    }
    let run = FitRun {
        method,
        n_draws: cfg.n_draws.unwrap_or(2000),
        seed: cfg.seed(),
        w0: parse_weight(cfg.w0.as_deref(), "w0")?,
        v0: parse_weight(cfg.v0.as_deref(), "v0")?,
        sampler: SamplerConfig {
            optimizer: cfg.optimizer(),
            ..Default::default()
        },
        nested: cfg.nested.clone().unwrap_or_default(),
    };
    if run.n_draws == 0 {
        bail!("--N must be >= 1");
    }
    let dir = cfg.out_dir()?;
    let data = data::obtain(cfg)?;
    let bytes = data::to_bytes(&data)?;
    let start = Instant::now();
    let out = match &data {
        Dataset::Toy(d) => {
            let m = toy_model();
            fit_generic(&m, d, &run, Some(&|n, s| cut_exact_gaussian(&m, d, n, s)))?
        }
        Dataset::Biased(d) => {
            let m = biased_data_model(None)?;
            fit_generic(&m, d, &run, Some(&|n, s| cut_exact_gaussian(&m, d, n, s)))?
        }
        Dataset::Counterexample(d) => {
            let m = counterexample_model();
            fit_generic(&m, d, &run, Some(&|n, s| cut_exact_gaussian(&m, d, n, s)))?
        }
        Dataset::Causal(d) => {
            let p = d.data1.first().map_or(0, |r| r.x.len());
            fit_generic(&causal_model(p), d, &run, None)?
        }
        Dataset::Epi(d) => fit_epi(cfg, d, &run)?,
    };
    let wall = start.elapsed().as_secs_f64();
    let mut csv_bytes = Vec::new();
    write_samples_csv(&out.set, &mut csv_bytes)?;
    std::fs::write(dir.join("samples.csv"), csv_bytes)?;
    write_json(&dir.join("summary.json"), &summarize(cfg, method, &out, wall))?;
    let manifest = RunManifest::for_samples(&out.set, digest(&bytes), settings(cfg)?);
    write_json(&dir.join("manifest.json"), &manifest)
}

fn report_json(info: &InfoMatrices) -> Result<Value> {
    let report = covariance_report(info)?;
    let difference = report
        .sigma_s2
        .as_ref()
        .map(|s2| matrix_json(&(s2 - &report.sigma_b)));
    let mut v = serde_json::to_value(&report)?;
    v["sigma_s2_minus_sigma_b"] = json!(difference);
    Ok(v)
}

fn asymptotics_generic<M1: ModuleOne, M2: ModuleTwo>(
    model: &CutModel<M1, M2>,
    data: &CutDataset<M1::Obs, M2::Obs>,
    cfg: &RunConfig,
    traces: bool,
) -> Result<Value> {
    let mle = fit_mle(model, data, &cfg.optimizer())?;
    let at = ParameterSplit::new(mle.theta1_hat.clone(), mle.theta2_hat.clone())?;
    let info = estimate_info(model, data, &at)?;
    let mut v = report_json(&info)?;
    let (w0, v0) = calibrate_prior_weights(
        &info,
        model.module1.prior_factorizes(),
        model.module2.prior_factorizes(),
    )?;
    v["calibrated"] = json!({ "w0": w0, "v0": v0 });
    v["info"] = serde_json::to_value(&info)?;
    v["mle"] = serde_json::to_value(&mle)?;
    if traces {
        let sb = cutboot::asymptotics::sigma_cut_laplace(&info)?;
        let spb = sigma_scenario1(&info)?;
        v["traces"] = serde_json::to_value(prediction_risk_traces(model, data, &at, &sb, &spb)?)?;
    }
    Ok(v)
}

pub fn asymptotics(cfg: &RunConfig) -> Result<()> {
    let model = cfg.model()?;
    let wants_s2 = cfg.method.as_deref() == Some("pbmi_s2");
    if let Some(m) = cfg.method.as_deref() {
        Method::parse(m)?;
    }
    let dir = cfg.out_dir()?;
    let mut v = if cfg.population.unwrap_or(false) {
        match model {
            "toy" => {
                let info = toy_population_info(cfg.rho.unwrap_or(0.0), cfg.sigma2.unwrap_or(1.0));
                let mut v = report_json(&info)?;
                v["info"] = serde_json::to_value(&info)?;
                v
            }
            "counterexample" => {
                if wants_s2 {
                    return Err(cutboot::Error::MissingCrossInformation.into());
                }
                let pop = counterexample_population(cfg.sigma.unwrap_or(1.0));
                let mut v = report_json(&pop.info)?;
                let sb = cutboot::asymptotics::sigma_cut_laplace(&pop.info)?;
                let spb = sigma_scenario1(&pop.info)?;
                v["traces"] = serde_json::to_value(risk_traces(pop.if2, pop.jf2, &sb, &spb)?)?;
                v["info"] = serde_json::to_value(&pop.info)?;
                v
            }
            _ => bail!("population matrices are available for toy and counterexample only"),
        }
    } else {
        let data = data::obtain(cfg)?;
        let paired = match &data {
            Dataset::Toy(d) => d.paired,
            Dataset::Biased(d) => d.paired,
            Dataset::Counterexample(d) => d.paired,
            Dataset::Causal(d) => d.paired,
            Dataset::Epi(_) => false,
        };
        if wants_s2 && !paired {
            return Err(cutboot::Error::MissingCrossInformation.into());
        }
        match &data {
            Dataset::Toy(d) => asymptotics_generic(&toy_model(), d, cfg, false)?,
            Dataset::Biased(d) => asymptotics_generic(&biased_data_model(None)?, d, cfg, false)?,
            Dataset::Counterexample(d) => asymptotics_generic(&counterexample_model(), d, cfg, true)?,
            Dataset::Causal(d) => {
                let p = d.data1.first().map_or(0, |r| r.x.len());
                asymptotics_generic(&causal_model(p), d, cfg, false)?
            }
            Dataset::Epi(d) => {
                let m = epi_model(d.len(), data::offset(cfg)?);
                asymptotics_generic(&m, &d.to_dataset()?, cfg, false)?
            }
        }
    };
    v["model"] = json!(model);
    v["population"] = json!(cfg.population.unwrap_or(false));
    write_json(&dir.join("covariance.json"), &v)?;
    write_manifest(&dir, "asymptotics", cfg, json!({ "model": model }))
}

fn generator_spec(cfg: &RunConfig) -> Result<GeneratorSpec> {
    let seed = cfg.seed();
    Ok(match cfg.model()? {
        "toy" => GeneratorSpec::Toy {
            rho: cfg.rho.unwrap_or(0.0),
            sigma2: cfg.sigma2.unwrap_or(1.0),
            n: cfg.n.unwrap_or(2000),
            seed,
        },
        "biased" => {
            let n2 = cfg.n2.or(cfg.n).unwrap_or(100);
            GeneratorSpec::Biased {
                sigma1_sq: cfg.sigma1sq.unwrap_or(1.0),
                sigma2_sq: cfg.sigma2sq.unwrap_or(0.5),
                n1: cfg.n1.unwrap_or((n2 / 10).max(1)),
                n2,
                seed,
            }
        }
        "counterexample" => GeneratorSpec::Counterexample {
            sigma: cfg.sigma.unwrap_or(1.0),
            n: cfg.n.unwrap_or(2000),
            seed,
        },
        m => bail!("coverage experiments support toy, biased and counterexample, not {m}"),
    })
}

fn coverage(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let generator = generator_spec(cfg)?;
    let default_n = match &generator {
        GeneratorSpec::Toy { n, .. } | GeneratorSpec::Counterexample { n, .. } => *n,
        GeneratorSpec::Biased { n2, .. } => *n2,
    };
    let n_grid = match &cfg.n_grid {
        Some(raw) => parse_list(raw, "n-grid")?,
        None => vec![default_n],
    };
    let methods = match &cfg.method {
        Some(raw) => raw
            .split(',')
            .map(|m| match m.trim() {
                "pbmi_s1" => Ok(CoverageMethod::PbmiS1),
                "pbmi_s2" => Ok(CoverageMethod::PbmiS2),
                "cut_bayes" | "cut_bayes_exact" => Ok(CoverageMethod::CutBayes),
                other => Err(anyhow::anyhow!("method `{other}` not available for coverage")),
            })
            .collect::<Result<Vec<_>>>()?,
        None => {
            let mut all = vec![CoverageMethod::PbmiS1, CoverageMethod::CutBayes];
            if matches!(generator, GeneratorSpec::Toy { .. }) {
                all.insert(1, CoverageMethod::PbmiS2);
            }
            all
        }
    };
    if methods.contains(&CoverageMethod::PbmiS2) && !matches!(generator, GeneratorSpec::Toy { .. }) {
        return Err(cutboot::Error::RequiresPairedData.into());
    }
    let target = match cfg.target.as_deref() {
        None | Some("theta2") => CoverageTarget::Theta2,
        Some("theta1") => CoverageTarget::Theta1,
        Some("joint") => CoverageTarget::Joint,
        Some(t) => bail!("unknown target `{t}`"),
    };
    let config = CoverageExperimentConfig {
        replicates: cfg.replicates.unwrap_or(200),
        n_grid,
        nominal_level: cfg.level.unwrap_or(0.95),
        generator,
        methods,
        target,
        n_draws: cfg.n_draws.unwrap_or(1000),
        seed: cfg.seed(),
    };
    let rows = coverage_experiment(&config)?;
    write_rows(&dir.join("coverage.csv"), &rows)
}

fn hdr(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let input = cfg.input.as_ref().context("--input samples.csv is required for --kind hdr")?;
    let file = std::fs::File::open(input).with_context(|| format!("cannot open {}", input.display()))?;
    let set = read_samples_csv(file)?;
    let d1 = set.dims().0;
    let grid = hdr_region(
        &set.coordinate(0),
        &set.coordinate(d1),
        cfg.mass.unwrap_or(0.95),
        &HdrOptions::default(),
    )?;
    let mut v = serde_json::to_value(&grid)?;
    v["x_coordinate"] = json!("theta1_1");
    v["y_coordinate"] = json!("theta2_1");
    v["area"] = json!(grid.area());
    write_json(&dir.join("hdr.json"), &v)
}

fn check_biased(cfg: &RunConfig, kind: &str) -> Result<()> {
    match cfg.model.as_deref() {
        None | Some("biased") => Ok(()),
        Some(m) => bail!("--kind {kind} runs on the biased model, not {m}"),
    }
}

fn elpd(cfg: &RunConfig, dir: &Path) -> Result<()> {
    check_biased(cfg, "elpd-compare")?;
    let d = ElpdExperimentConfig::default();
    let config = ElpdExperimentConfig {
        sigma1_sq: cfg.sigma1sq.unwrap_or(d.sigma1_sq),
        sigma2_sq: cfg.sigma2sq.unwrap_or(d.sigma2_sq),
        n2_grid: match (&cfg.n_grid, cfg.n2) {
            (Some(raw), _) => parse_list(raw, "n-grid")?,
            (None, Some(n2)) => vec![n2],
            (None, None) => d.n2_grid.clone(),
        },
        replicates: cfg.replicates.unwrap_or(d.replicates),
        n_draws: cfg.n_draws.unwrap_or(d.n_draws),
        seed: cfg.seed(),
        ..d
    };
    let rows = elpd_comparison(&config)?;
    write_rows(&dir.join("elpd.csv"), &rows)?;
    let mut summary = Vec::new();
    for &n2 in &config.n2_grid {
        for m in ElpdMethod::ALL {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.n2 == n2 && r.method == m.as_str())
                .map(|r| r.elpd_mean)
                .collect();
            let (q1, med, q3) = quartiles(&v);
            summary.push(json!({ "n2": n2, "method": m.as_str(), "q1": q1, "median": med, "q3": q3 }));
        }
    }
    write_json(&dir.join("elpd_summary.json"), &summary)
}

fn ks(cfg: &RunConfig, dir: &Path) -> Result<()> {
    check_biased(cfg, "ks")?;
    let d = V0SweepConfig::default();
    let config = V0SweepConfig {
        sigma1_sq: cfg.sigma1sq.unwrap_or(d.sigma1_sq),
        sigma2_sq: cfg.sigma2sq.unwrap_or(d.sigma2_sq),
        n1: cfg.n1.unwrap_or(d.n1),
        n2: cfg.n2.unwrap_or(d.n2),
        v0_grid: match &cfg.v0 {
            Some(raw) => parse_list(raw, "v0")?,
            None => d.v0_grid.clone(),
        },
        replicates: cfg.replicates.unwrap_or(d.replicates),
        n_draws: cfg.n_draws.unwrap_or(d.n_draws),
        seed: cfg.seed(),
    };
    let rows = v0_sweep(&config)?;
    write_rows(&dir.join("ks.csv"), &rows)?;
    let summary: Vec<Value> = config
        .v0_grid
        .iter()
        .map(|&v0| {
            let v: Vec<f64> = rows.iter().filter(|r| r.v0 == v0).map(|r| r.ks).collect();
            let (q1, med, q3) = quartiles(&v);
            json!({ "v0": v0, "q1": q1, "median": med, "q3": q3 })
        })
        .collect();
    write_json(&dir.join("ks_summary.json"), &summary)
}

fn loo(cfg: &RunConfig, dir: &Path) -> Result<()> {
    match cfg.model.as_deref() {
        None | Some("epi") => {}
        Some(m) => bail!("--kind loo runs on the epi model, not {m}"),
    }
    let d = EpiLooConfig::default();
    let config = EpiLooConfig {
        generator: cutboot::zoo::EpiGeneratorConfig {
            overdispersion: cfg.overdispersion.unwrap_or(d.generator.overdispersion),
            offset: data::offset(cfg)?,
            ..d.generator.clone()
        },
        replicates: cfg.replicates.unwrap_or(d.replicates),
        n_draws: cfg.n_draws.unwrap_or(d.n_draws),
        nested: cfg.nested.clone().unwrap_or(d.nested.clone()),
        seed: cfg.seed(),
    };
    let rows = epi_loo_comparison(&config)?;
    write_rows(&dir.join("loo.csv"), &rows)
}

pub fn evaluate(cfg: &RunConfig, kind: &str) -> Result<()> {
    let dir = cfg.out_dir()?;
    match kind {
        "coverage" => coverage(cfg, &dir)?,
        "hdr" => hdr(cfg, &dir)?,
        "elpd-compare" => elpd(cfg, &dir)?,
        "ks" => ks(cfg, &dir)?,
        "loo" => loo(cfg, &dir)?,
        k => bail!("unknown evaluation kind `{k}`"),
    }
    write_manifest(&dir, "evaluate", cfg, json!({ "kind": kind }))
}
