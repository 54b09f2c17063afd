use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use cutboot::io::format_float;
use cutboot::model::CutDataset;
use cutboot::zoo::{
    biased_generate, causal_generate, causal_load_csv, causal_write_csv, counterexample_generate,
    epi_generate, epi_load_csv, epi_write_csv, toy_generate, CausalGeneratorConfig, CausalRow,
    EpiData, EpiGeneratorConfig, OffsetMode, ToyObs,
};
use serde::Deserialize;

use crate::config::RunConfig;

pub enum Dataset {
    Toy(CutDataset<f64, ToyObs>),
    Biased(CutDataset<f64, f64>),
    Counterexample(CutDataset<f64, [f64; 2]>),
    Causal(CutDataset<CausalRow, CausalRow>),
    Epi(EpiData),
}

pub fn offset(cfg: &RunConfig) -> Result<OffsetMode> {
    match cfg.offset.as_deref() {
        None | Some("literal") => Ok(OffsetMode::Literal),
        Some("log") => Ok(OffsetMode::Log),
        Some(o) => bail!("unknown offset `{o}` (expected literal or log)"),
    }
}

pub fn epi_generator(cfg: &RunConfig) -> Result<EpiGeneratorConfig> {
    Ok(EpiGeneratorConfig {
        offset: offset(cfg)?,
        overdispersion: cfg.overdispersion.unwrap_or(0.0),
        seed: cfg.seed(),
        ..Default::default()
    })
}

/// Loads `--data` when given, otherwise simulates from the model's generator.
pub fn obtain(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data {
        Some(path) => load(cfg.model()?, path),
        None => simulate(cfg),
    }
}

pub fn simulate(cfg: &RunConfig) -> Result<Dataset> {
    let seed = cfg.seed();
    Ok(match cfg.model()? {
        "toy" => Dataset::Toy(toy_generate(
            cfg.rho.unwrap_or(0.0),
            cfg.sigma2.unwrap_or(1.0),
            cfg.n.unwrap_or(800),
            seed,
        )?),
        "biased" => {
            let n2 = cfg.n2.or(cfg.n).unwrap_or(100);
            Dataset::Biased(biased_generate(
                cfg.sigma1sq.unwrap_or(1.0),
                cfg.sigma2sq.unwrap_or(0.5),
                cfg.n1.unwrap_or((n2 / 10).max(1)),
                n2,
                seed,
            )?)
        }
        "counterexample" => Dataset::Counterexample(counterexample_generate(
            cfg.sigma.unwrap_or(1.0),
            cfg.n.unwrap_or(1000),
            seed,
        )?),
        "causal" => {
            let d = CausalGeneratorConfig::default();
            Dataset::Causal(causal_generate(&CausalGeneratorConfig {
                n: cfg.n.unwrap_or(d.n),
                covariates: cfg.covariates.unwrap_or(d.covariates),
                confounding: cfg.confounding.unwrap_or(d.confounding),
                effect: cfg.effect.unwrap_or(d.effect),
                seed,
                ..d
            })?)
        }
        "epi" => Dataset::Epi(epi_generate(&epi_generator(cfg)?)?),
        _ => unreachable!("model validated"),
    })
}

#[derive(Deserialize)]
struct ToyRecord {
    z: f64,
    x: f64,
    y: f64,
}

#[derive(Deserialize)]
struct BiasedRecord {
    module: u8,
    x: f64,
}

#[derive(Deserialize)]
struct CounterexampleRecord {
    module: u8,
    x1: f64,
    x2: Option<f64>,
}

fn records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot open {}", path.display()))?;
    let rows = r
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .with_context(|| format!("malformed dataset {}", path.display()))?;
    if rows.is_empty() {
        bail!("dataset {} has no rows", path.display());
    }
    Ok(rows)
}

fn split_modules<T, A, B>(
    rows: Vec<T>,
    module: impl Fn(&T) -> u8,
    one: impl Fn(&T) -> A,
    two: impl Fn(&T) -> Result<B>,
) -> Result<(Vec<A>, Vec<B>)> {
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for row in &rows {
        match module(row) {
            1 => a.push(one(row)),
            2 => b.push(two(row)?),
            m => bail!("module column must be 1 or 2, got {m}"),
        }
    }
    Ok((a, b))
}

pub fn load(model: &str, path: &Path) -> Result<Dataset> {
    Ok(match model {
        "toy" => {
            let rows: Vec<ToyRecord> = records(path)?;
            let z = rows.iter().map(|r| r.z).collect();
            let obs = rows.iter().map(|r| ToyObs { x: r.x, y: r.y }).collect();
            Dataset::Toy(CutDataset::new(z, obs, true)?)
        }
        "biased" => {
            let (a, b) = split_modules(records::<BiasedRecord>(path)?, |r| r.module, |r| r.x, |r| Ok(r.x))?;
            Dataset::Biased(CutDataset::new(a, b, false)?)
        }
        "counterexample" => {
            let (a, b) = split_modules(
                records::<CounterexampleRecord>(path)?,
                |r| r.module,
                |r| r.x1,
                |r| {
                    r.x2
                        .map(|x2| [r.x1, x2])
                        .context("module-2 rows need both x1 and x2")
                },
            )?;
            Dataset::Counterexample(CutDataset::new(a, b, false)?)
        }
        "causal" => Dataset::Causal(causal_load_csv(path)?),
        "epi" => Dataset::Epi(epi_load_csv(path)?),
        _ => unreachable!("model validated"),
    })
}

pub fn write(data: &Dataset, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    match data {
        Dataset::Toy(d) => {
            w.write_record(["z", "x", "y"])?;
            for (z, o) in d.data1.iter().zip(&d.data2) {
                w.write_record([format_float(*z), format_float(o.x), format_float(o.y)])?;
            }
        }
        Dataset::Biased(d) => {
            w.write_record(["module", "x"])?;
            for x in &d.data1 {
                w.write_record(["1".into(), format_float(*x)])?;
            }
            for x in &d.data2 {
                w.write_record(["2".into(), format_float(*x)])?;
            }
        }
        Dataset::Counterexample(d) => {
            w.write_record(["module", "x1", "x2"])?;
            for x in &d.data1 {
                w.write_record(["1".into(), format_float(*x), String::new()])?;
            }
            for x in &d.data2 {
                w.write_record(["2".into(), format_float(x[0]), format_float(x[1])])?;
            }
        }
        Dataset::Causal(d) => {
            let inner = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
            causal_write_csv(&d.data1, inner)?;
            return Ok(());
        }
        Dataset::Epi(d) => {
            let inner = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
            epi_write_csv(d, inner)?;
            return Ok(());
        }
    }
    w.flush()?;
    Ok(())
}

pub fn to_bytes(data: &Dataset) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(data, &mut buf)?;
    Ok(buf)
}
