use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tmd_core::config::RunConfig;
use tmd_core::pipeline::{self, SweepAxis};
use tmd_core::synthetic::{QualityModel, SyntheticConfig};
use tmd_core::{Error, Result};

#[derive(Parser)]
#[command(name = "tmd", version, about = "Token-level Mahalanobis distance uncertainty scoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// JSON run configuration
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set tau=0.5` or `--set huq.enabled=true`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Layer,
    Tau,
    #[value(name = "n_components")]
    NComponents,
    #[value(name = "train_size")]
    TrainSize,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthQuality {
    Binary,
    Graded,
    Claims,
}

#[derive(Subcommand)]
enum Command {
    /// Check an embedding store against its manifest
    Validate(ConfigArgs),
    /// Fit a supervised model and write it to `model`
    Fit(ConfigArgs),
    /// Score the test split and write `scores`
    Score(ConfigArgs),
    /// Evaluate `scores` with baselines; writes eval.json and rejection_curve.csv
    Eval(ConfigArgs),
    /// PRR along one ablation axis; writes sweep_<axis>.csv
    Sweep {
        #[arg(long, value_enum)]
        axis: Axis,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Rejection table at `rejection_grid`; writes rejection_table.csv
    Report(ConfigArgs),
    /// Write a synthetic corpus and a config.json for it
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Generator settings as JSON; missing keys take their defaults
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_enum)]
        quality: Option<SynthQuality>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load(args: &ConfigArgs) -> Result<RunConfig> {
    RunConfig::load(args.config.as_deref(), &args.set)
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Validate(a) => {
            let report = pipeline::cmd_validate(&load(&a)?)?;
            for issue in &report.issues {
                println!("{issue}");
            }
            if report.is_valid() {
                println!("ok");
                Ok(0)
            } else {
                Ok(1)
            }
        }
        Command::Fit(a) => {
            let outcome = pipeline::cmd_fit(&load(&a)?)?;
            println!("t1={} t2={}", outcome.t1.len(), outcome.t2.len());
            Ok(0)
        }
        Command::Score(a) => {
            let rows = pipeline::cmd_score(&load(&a)?)?;
            println!("{} rows", rows.len());
            Ok(0)
        }
        Command::Eval(a) => {
            let report = pipeline::cmd_eval(&load(&a)?)?;
            for (k, v) in &report.prr {
                println!("prr[{k}]={v}");
            }
            if let (Some(r), Some(p)) = (report.roc_auc, report.pr_auc) {
                println!("roc_auc={r} pr_auc={p}");
            }
            Ok(0)
        }
        Command::Sweep { axis, cfg } => {
            let axis = match axis {
                Axis::Layer => SweepAxis::Layer,
                Axis::Tau => SweepAxis::Tau,
                Axis::NComponents => SweepAxis::NComponents,
                Axis::TrainSize => SweepAxis::TrainSize,
            };
            let table = pipeline::cmd_sweep(&load(&cfg)?, axis)?;
            for (k, v) in table.column(&table.primary) {
                println!("{axis}={k} prr={v}");
            }
            Ok(0)
        }
        Command::Report(a) => {
            for (f, q) in pipeline::cmd_report(&load(&a)?)? {
                println!("{f},{q}");
            }
            Ok(0)
        }
        Command::Synth { out, spec, quality, seed } => {
            let mut synth = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                    serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", p.display())))?
                }
                None => SyntheticConfig::default(),
            };
            if let Some(q) = quality {
                synth.quality = match q {
                    SynthQuality::Binary => QualityModel::Binary { p_correct: 0.6 },
                    SynthQuality::Graded => QualityModel::Graded { threshold: 0.5 },
                    SynthQuality::Claims => QualityModel::Claims { p_nonfactual: 0.4 },
                };
            }
            if let Some(s) = seed {
                synth.seed = s;
            }
            pipeline::cmd_synth(&out, &synth)?;
            println!("{}", out.join("config.json").display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let threads = match std::env::var("TMD_THREADS") {
        Ok(v) => match v.parse::<usize>() {
            Ok(n) if n > 0 => Some(n),
            _ => {
                eprintln!("error: TMD_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(1);
            }
        },
        Err(_) => None,
    };
    let result = pipeline::run_with_threads(threads, || run(cli)).and_then(|r| r);
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
