//! `windrom`: config-driven driver for snapshots, training, studies,
//! evaluations, Monte Carlo runs and the HTTP service.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 invalid configuration.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod manifest;

use config::{parse_override, ConfigError, PipelineConfig};

pub const MESH_FILE: &str = "mesh.txt";
pub const PODI_FILE: &str = "podi.bin";
pub const PODG_FILE: &str = "podg.bin";
pub const SNAPSHOT_DIR: &str = "snapshots";

#[derive(Parser)]
#[command(name = "windrom", version, about = "Reduced-order urban wind and contaminant transport")]
struct Cli {
    /// Upper bound on worker threads.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
    /// Log more (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration field, e.g. `--set uq.spec.samples=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainMethod {
    Podi,
    Podg,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum FieldArg {
    Wind,
    Concentration,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Podi,
    Podg,
}

#[derive(Subcommand)]
enum Command {
    /// Print mesh statistics; with --out, also write the mesh and a manifest.
    MeshInfo {
        /// Mesh file; defaults to the configured mesh.
        path: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the full-order wind model on the training grid.
    Snapshot {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train reduced models from snapshots.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum, default_value = "podi")]
        method: TrainMethod,
        /// Output directory of `snapshot`; solved afresh when absent.
        #[arg(long)]
        snapshots: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained model at one parameter point.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory of `train`.
        #[arg(long)]
        artifacts: Option<PathBuf>,
        #[arg(long = "w-i")]
        w_i: f64,
        #[arg(long = "w-d")]
        w_d: Option<f64>,
        /// Output times [s]; defaults to the end time.
        #[arg(long = "t", value_delimiter = ',')]
        times: Vec<f64>,
        #[arg(long, value_enum, default_value = "concentration")]
        field: FieldArg,
        #[arg(long, value_enum, default_value = "podi")]
        model: ModelArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy and speed-up studies.
    Bench {
        #[command(subcommand)]
        study: BenchCommand,
    },
    /// Monte Carlo propagation of wind uncertainty.
    Uq {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        artifacts: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve evaluations over HTTP.
    Serve {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        artifacts: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// PODG against PODI over the basis sizes.
    Compare {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Error against the number of snapshots.
    DataStudy {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Training on part of the speed range, testing on all of it.
    Extrapolation {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

impl ConfigArgs {
    fn load(&self, extra: Vec<(String, toml::Value)>) -> Result<PipelineConfig, ConfigError> {
        let mut overrides = self.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>, _>>()?;
        overrides.extend(extra);
        PipelineConfig::load(self.config.as_deref(), &overrides)
    }
}

fn path_override(key: &str, p: &Option<PathBuf>) -> anyhow::Result<Option<(String, toml::Value)>> {
    Ok(match p {
        Some(p) => Some((key.to_string(), toml::Value::String(std::path::absolute(p)?.to_string_lossy().into_owned()))),
        None => None,
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let jobs = cli.jobs.map(|n| n as usize);
    if let Some(n) = jobs {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let ctx = commands::Context { jobs };
    match cli.command {
        Command::MeshInfo { path, cfg, out } => {
            let extra = path_override("mesh.path", &path)?.into_iter().collect();
            commands::mesh_info(&ctx, &cfg.load(extra)?, out.as_deref())
        }
        Command::Snapshot { cfg, out } => commands::snapshot(&ctx, &cfg.load(vec![])?, &out),
        Command::Train { cfg, method, snapshots, out } => {
            let (podi, podg) = match method {
                TrainMethod::Podi => (true, false),
                TrainMethod::Podg => (false, true),
                TrainMethod::Both => (true, true),
            };
            commands::train(&ctx, &cfg.load(vec![])?, podi, podg, snapshots.as_deref(), &out)
        }
        Command::Evaluate { cfg, artifacts, w_i, w_d, times, field, model, out } => {
            let extra = path_override("artifacts.dir", &artifacts)?.into_iter().collect();
            let field = match field {
                FieldArg::Wind => windrom_service::Field::Wind,
                FieldArg::Concentration => windrom_service::Field::Concentration,
            };
            let mu = windrom::ParameterPoint { w_i, w_d };
            commands::evaluate(&ctx, &cfg.load(extra)?, mu, field, &times, model.into(), &out)
        }
        Command::Bench { study } => {
            let (kind, cfg, out) = match study {
                BenchCommand::Compare { cfg, out } => (commands::Study::Compare, cfg, out),
                BenchCommand::DataStudy { cfg, out } => (commands::Study::Data, cfg, out),
                BenchCommand::Extrapolation { cfg, out } => (commands::Study::Extrapolation, cfg, out),
            };
            commands::bench(&ctx, &cfg.load(vec![])?, kind, &out)
        }
        Command::Uq { cfg, artifacts, samples, seed, out } => {
            let mut extra: Vec<_> = path_override("artifacts.dir", &artifacts)?.into_iter().collect();
            extra.extend(samples.map(|n| ("uq.spec.samples".to_string(), toml::Value::Integer(n as i64))));
            extra.extend(seed.map(|s| ("uq.spec.seed".to_string(), toml::Value::Integer(s as i64))));
            commands::uq(&ctx, &cfg.load(extra)?, &out)
        }
        Command::Serve { cfg, artifacts, port } => {
            let mut extra: Vec<_> = path_override("artifacts.dir", &artifacts)?.into_iter().collect();
            extra.extend(port.map(|p| ("service.port".to_string(), toml::Value::Integer(p.into()))));
            commands::serve(&ctx, &cfg.load(extra)?)
        }
    }
}

impl From<ModelArg> for windrom_service::ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Podi => Self::Podi,
            ModelArg::Podg => Self::Podg,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp_millis().init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => match e.downcast_ref::<ConfigError>() {
            Some(c) => {
                eprintln!("error: {c}");
                ExitCode::from(3)
            }
            None => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        },
    }
}
