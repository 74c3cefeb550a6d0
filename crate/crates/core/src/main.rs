use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tkae::harness::{cmd_classify, cmd_gen, cmd_impute, cmd_oneclass, cmd_tck, cmd_train, ExperimentConfig};
use tkae::Result;

/// Recurrent autoencoders with kernel alignment for multivariate time series.
///
/// Log verbosity follows TKAE_LOG (error, warn, info, debug, trace).
#[derive(Parser)]
#[command(name = "tkae", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV.
    Gen(Common),
    /// Build the prior kernel and its ensemble model.
    Tck(Common),
    /// Train a model over several seeds and report test reconstruction error.
    Train(Common),
    /// Compare imputers on injected missing values.
    Impute(Common),
    /// Anomaly detection by reconstruction error.
    Oneclass(Common),
    /// kNN classification of learned representations.
    Classify(Common),
}

#[derive(Args)]
struct Common {
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    /// Extra overrides, e.g. `--set alpha=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| tkae::Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            cfg.set(k.trim(), v)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(r) = self.runs {
            cfg.n_runs = r;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    let report = match &cli.command {
        Command::Gen(c) => {
            cmd_gen(&c.resolve()?)?;
            None
        }
        Command::Tck(c) => Some(cmd_tck(&c.resolve()?)?),
        Command::Train(c) => Some(cmd_train(&c.resolve()?)?),
        Command::Impute(c) => Some(cmd_impute(&c.resolve()?)?),
        Command::Oneclass(c) => Some(cmd_oneclass(&c.resolve()?)?),
        Command::Classify(c) => Some(cmd_classify(&c.resolve()?)?),
    };
    if let Some(r) = report {
        for (name, m) in &r.metrics {
            println!("{name}: {:.6} ± {:.6} over {} runs", m.mean, m.std, m.runs.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TKAE_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
