//! File-level entry points behind the CLI subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use vluci::synth::{generate, split_indices, SynthConfig};
use vluci::vluci::{VluciConfig, VluciModel};

use crate::checkpoint::{self, CheckpointHeader};
use crate::dataset::{self, read_dataset, read_observational_dir, write_dataset};
use crate::error::{LabError, Result};
use crate::protocol::{evaluate, run_diagnose, run_experiment, DiagnoseReport, Evaluation, ExperimentReport};
use crate::report::{aggregate_csv, aggregate_markdown, band_csv, direct_effects_csv, loss_csv, runs_csv, write_text};
use crate::spec::ExperimentSpec;

pub const SPEC_ECHO: &str = "spec.json";
pub const CHECKPOINT: &str = "model.vlck";
pub const LOSS: &str = "loss.csv";
pub const EVAL: &str = "eval.json";
pub const BAND: &str = "band.csv";
pub const DIRECT_EFFECTS: &str = "direct_effects.csv";
pub const REPORT: &str = "report.json";
pub const RUNS: &str = "runs.csv";
pub const AGGREGATE: &str = "aggregate.csv";
pub const TABLE: &str = "table.md";
pub const DIAGNOSE: &str = "diagnose.json";

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(LabError::io(dir))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serialises");
    write_text(path, &(text + "\n"))
}

fn echo_spec(out: &Path, spec: &ExperimentSpec) -> Result<()> {
    write_text(&out.join(SPEC_ECHO), &(spec.to_json_pretty() + "\n"))
}

/// Generates the synthetic dataset of `spec.synth` (seed overridable) into `out`.
pub fn cmd_gen(spec: &ExperimentSpec, seed: Option<u64>, out: &Path) -> Result<PathBuf> {
    spec.validate()?;
    let cfg = SynthConfig { seed: seed.unwrap_or(spec.synth.seed), ..spec.synth.clone() };
    let ds = generate(&cfg)?;
    write_dataset(out, &ds, cfg.confounded)?;
    echo_spec(out, &ExperimentSpec { synth: cfg, ..spec.clone() })?;
    Ok(out.to_path_buf())
}

/// Trains on the 80% training split of the observational table in `data`.
/// Only `observational.csv` is opened.
pub fn cmd_train(spec: &ExperimentSpec, seed: Option<u64>, data: &Path, out: &Path) -> Result<PathBuf> {
    spec.validate()?;
    let obs = read_observational_dir(data)?;
    let cfg = VluciConfig { seed: seed.unwrap_or(spec.vluci.seed), ..spec.vluci.clone() };
    let (train_idx, _) = split_indices(obs.len(), cfg.seed)?;
    let train = obs.select(&train_idx);
    let mut model = VluciModel::new(&cfg, obs.x.cols())?;
    let history = model.train(&train, &cfg)?;
    ensure_dir(out)?;
    write_text(&out.join(LOSS), &loss_csv(&history))?;
    let path = out.join(CHECKPOINT);
    let split_seed = cfg.seed;
    checkpoint::save(&path, &model, &CheckpointHeader { config: cfg, trained: true, split_seed })?;
    Ok(path)
}

/// Scores a checkpoint on the held-out rows of `data`. Without the sidecar
/// the ground-truth fields of the report are `null`.
pub fn cmd_eval(checkpoint_path: &Path, data: &Path, out: &Path) -> Result<Evaluation> {
    let ck = checkpoint::load(checkpoint_path)?;
    let ds = read_dataset(data)?;
    let (_, test_idx) = split_indices(ds.len(), ck.header.split_seed)?;
    let test = ds.select(&test_idx);
    let evaluation = evaluate(&ck.model, &test.obs, test.truth.as_ref())?;
    let post = ck.model.posterior(&test.obs.x, &test.obs.t, &test.obs.y)?;
    let (t_hat, y_hat) = ck.model.direct_effects(&test.obs.x)?;
    ensure_dir(out)?;
    write_json(&out.join(EVAL), &evaluation)?;
    let cu_true = test.truth.as_ref().map(|g| g.cu.col(0));
    write_text(&out.join(BAND), &band_csv(cu_true.as_deref(), &post.mu.col(0), &post.std_dev().col(0)))?;
    let truth = test.truth.as_ref().map(|g| (g.t_x_true.as_slice(), g.y_x_true.as_slice()));
    write_text(&out.join(DIRECT_EFFECTS), &direct_effects_csv(&t_hat, &y_hat, truth))?;
    Ok(evaluation)
}

pub fn cmd_experiment(spec: &ExperimentSpec, out: &Path, threads: usize) -> Result<ExperimentReport> {
    let report = run_experiment(spec, threads)?;
    ensure_dir(out)?;
    echo_spec(out, spec)?;
    write_json(&out.join(REPORT), &report)?;
    write_text(&out.join(RUNS), &runs_csv(&report.runs))?;
    write_text(&out.join(AGGREGATE), &aggregate_csv(&report.aggregate))?;
    write_text(&out.join(TABLE), &aggregate_markdown(&report.aggregate))?;
    Ok(report)
}

pub fn cmd_diagnose(spec: &ExperimentSpec, out: &Path, threads: usize) -> Result<DiagnoseReport> {
    let report = run_diagnose(spec, threads)?;
    ensure_dir(out)?;
    echo_spec(out, spec)?;
    write_json(&out.join(DIAGNOSE), &report)?;
    Ok(report)
}

pub use dataset::sidecar_paths;
