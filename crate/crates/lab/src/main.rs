use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vluci_lab::commands::{cmd_diagnose, cmd_eval, cmd_experiment, cmd_gen, cmd_train};
use vluci_lab::{ExperimentSpec, Result};

/// Synthetic benchmark, training and evaluation for variational confounder learning.
#[derive(Parser)]
#[command(name = "vluci-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SpecArgs {
    /// JSON experiment spec; omitted fields take their defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed taken from the spec file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RepeatArgs {
    /// Overrides `n_repeats`.
    #[arg(long)]
    repeats: Option<usize>,
    /// Worker threads for independent repeats.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with its ground-truth sidecar.
    Gen(SpecArgs),
    /// Train on the observational table of a dataset directory.
    Train {
        #[command(flatten)]
        common: SpecArgs,
        /// Dataset directory written by `gen`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Score a checkpoint against held-out rows and ground truth.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeated 80/20 experiment with and without the learned confounder.
    Experiment {
        #[command(flatten)]
        common: SpecArgs,
        #[command(flatten)]
        repeats: RepeatArgs,
    },
    /// Paired confounded / confounder-free posterior KL comparison.
    Diagnose {
        #[command(flatten)]
        common: SpecArgs,
        #[command(flatten)]
        repeats: RepeatArgs,
    },
}

fn load_spec(path: Option<&Path>) -> Result<ExperimentSpec> {
    match path {
        Some(p) => ExperimentSpec::load(p),
        None => Ok(ExperimentSpec::default()),
    }
}

fn repeated(common: &SpecArgs, r: &RepeatArgs) -> Result<ExperimentSpec> {
    let mut spec = load_spec(common.spec.as_deref())?;
    if let Some(s) = common.seed {
        spec.base_seed = s;
    }
    if let Some(n) = r.repeats {
        spec.n_repeats = n;
    }
    spec.validate()?;
    Ok(spec)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => {
            let spec = load_spec(a.spec.as_deref())?;
            let dir = cmd_gen(&spec, a.seed, &a.out)?;
            println!("dataset written to {}", dir.display());
        }
        Command::Train { common, data } => {
            let spec = load_spec(common.spec.as_deref())?;
            let path = cmd_train(&spec, common.seed, &data, &common.out)?;
            println!("checkpoint written to {}", path.display());
        }
        Command::Eval { checkpoint, data, out } => {
            let e = cmd_eval(&checkpoint, &data, &out)?;
            let show = |v: Option<f64>| v.map_or_else(|| "unavailable".to_string(), |v| format!("{v:.4}"));
            println!("rows                  {}", e.rows);
            println!("|corr(Cu_hat, Cu)|    {}", show(e.recovery_corr));
            println!("corr(t_hat_X, t_X)    {}", show(e.direct_t_corr));
            println!("corr(y_hat_X, y_X)    {}", show(e.direct_y_corr));
            println!("mean posterior KL     {:.4}", e.mean_kl);
        }
        Command::Experiment { common, repeats } => {
            let spec = repeated(&common, &repeats)?;
            let report = cmd_experiment(&spec, &common.out, repeats.parallel)?;
            print!("{}", vluci_lab::report::aggregate_markdown(&report.aggregate));
            if !report.failures.is_empty() {
                println!("{} repeat(s) failed and were excluded", report.failures.len());
            }
        }
        Command::Diagnose { common, repeats } => {
            let spec = repeated(&common, &repeats)?;
            let r = cmd_diagnose(&spec, &common.out, repeats.parallel)?;
            println!("mean KL, confounded      {:.4} ({})", r.mean_kl_confounded, r.verdict_confounded);
            println!("mean KL, no confounder   {:.4} ({})", r.mean_kl_unconfounded, r.verdict_unconfounded);
            println!("ratio                    {:.3}", r.kl_ratio);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
