//! `cutboot`: simulate data, draw from PBMI and cut posteriors, compute
//! asymptotic covariances and run evaluation studies.

mod commands;
mod config;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "cutboot", version, about = "Posterior bootstrap for two-module cut models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset from a built-in model.
    Simulate(Common),
    /// Draw a sample set with the chosen method.
    Fit(Common),
    /// Plug-in or population covariance matrices.
    Asymptotics(Common),
    /// Coverage, HDR, elpd, KS or LOO studies.
    Evaluate {
        /// coverage | hdr | elpd-compare | ks | loo
        #[arg(long)]
        kind: String,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(clap::Args)]
struct Common {
    /// JSON run file; its values override flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    run: RunConfig,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use cutboot::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::TooManyFailures { .. } => 3,
                E::SingularInformation { .. }
                | E::NotPositiveSemiDefinite(_)
                | E::StageOneFailed { .. }
                | E::StageTwoFailed { .. }
                | E::NonFiniteParameter(_)
                | E::InfeasibleStart
                | E::SupportBoundary(_) => 4,
                _ => 2,
            };
        }
    }
    2
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (common, kind) = match cli.command {
        Command::Simulate(ref c) | Command::Fit(ref c) | Command::Asymptotics(ref c) => (c, None),
        Command::Evaluate { ref kind, ref common } => (common, Some(kind.clone())),
    };
    let cfg = RunConfig::resolve(common.run.clone(), common.config.as_deref())?;
    if let Some(w) = cfg.workers {
        if w == 0 {
            anyhow::bail!("--workers must be >= 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(w).build_global()?;
    }
    match cli.command {
        Command::Simulate(_) => commands::simulate(&cfg),
        Command::Fit(_) => commands::fit(&cfg),
        Command::Asymptotics(_) => commands::asymptotics(&cfg),
        Command::Evaluate { .. } => commands::evaluate(&cfg, kind.as_deref().unwrap_or_default()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_kinds_map_to_exit_codes() {
        let wrap = |e: cutboot::Error| anyhow::Error::from(e).context("fit");
        assert_eq!(exit_code(&wrap(cutboot::Error::TooManyFailures { failed: 9, total: 10 })), 3);
        assert_eq!(exit_code(&wrap(cutboot::Error::StageOneFailed { gradient_norm: 1.0 })), 4);
        assert_eq!(exit_code(&wrap(cutboot::Error::RequiresPairedData)), 2);
        assert_eq!(exit_code(&anyhow::anyhow!("bad flag")), 2);
    }
}
