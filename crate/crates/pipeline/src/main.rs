use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use phasemap_core::mapper::FeatureKind;
use phasemap_pipeline::{cmd_energy, cmd_features, cmd_map, cmd_report, cmd_sweep, PipelineConfig, PipelineError};

#[derive(Parser)]
#[command(name = "phasemap", version, about = "iPEPS sweeps and unsupervised phase-diagram mapping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Worker threads (overrides the configuration).
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    /// Global seed (overrides the configuration).
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory (overrides the configuration).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize every grid cell and replica missing from the store.
    Sweep(Common),
    /// Contract stored states: energies, ρ² and the post-selected view.
    Energy(Common),
    /// Export the feature grid as CSV.
    Features {
        #[command(flatten)]
        common: Common,
        /// Feature kind (defaults to the configured one).
        #[arg(long, value_name = "lambda|rho2")]
        kind: Option<FeatureKind>,
    },
    /// Run the iterative anomaly-detection mapping.
    Map {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "lambda|rho2")]
        kind: Option<FeatureKind>,
    },
    /// Summarize the store and the last mapping run.
    Report(Common),
}

fn load(c: &Common) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = PipelineConfig::load(&c.config)?;
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.output = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Exit status: 0 ok, 2 when some records failed but the run completed.
fn run(cli: Cli) -> Result<u8, PipelineError> {
    match cli.command {
        Command::Sweep(c) => {
            let s = cmd_sweep(&load(&c)?)?;
            println!("computed {}, skipped {}, failed {}, not converged {}", s.computed, s.skipped, s.failed, s.unconverged);
            Ok(if s.failed > 0 { 2 } else { 0 })
        }
        Command::Energy(c) => {
            let s = cmd_energy(&load(&c)?)?;
            println!("computed {}, skipped {}, failed {}, CTM not converged {}", s.computed, s.skipped, s.failed, s.ctm_unconverged);
            Ok(if s.failed > 0 { 2 } else { 0 })
        }
        Command::Features { common, kind } => {
            let cfg = load(&common)?;
            let path = cmd_features(&cfg, kind.unwrap_or(cfg.feature_kind()))?;
            println!("{}", path.display());
            Ok(0)
        }
        Command::Map { common, kind } => {
            let cfg = load(&common)?;
            let kind = kind.unwrap_or(cfg.feature_kind());
            let r = cmd_map(&cfg, kind)?;
            println!("{} iteration(s), {} boundary cell(s); see {}", r.maps.len(), r.boundaries.len(), cfg.output.join("maps").join(kind.name()).display());
            Ok(0)
        }
        Command::Report(c) => {
            print!("{}", cmd_report(&load(&c)?)?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
