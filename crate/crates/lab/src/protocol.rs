//! The repeated-split experiment and the paired prior-collapse diagnostic.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use vluci::estimators::{augment, fit, EstimatorKind};
use vluci::math::{mean, pearson, sample_variance};
use vluci::metrics::{aggregate, ate_error, sqrt_pehe, AggregateTable, RunMetrics};
use vluci::nn::Matrix;
use vluci::synth::{generate, split_80_20, GroundTruth, Observational, SynthConfig, SynthDataset};
use vluci::vluci::{LossReport, VluciConfig, VluciModel};

use crate::error::{LabError, Result};
use crate::spec::ExperimentSpec;

/// Mean posterior KL below which the posterior is read as the prior.
pub const COLLAPSE_THRESHOLD: f64 = 0.05;

/// Largest tolerated share of failed repeats.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

pub const VERDICT_SIGNAL: &str = "confounding signal detected";
pub const VERDICT_PRIOR: &str = "posterior ≈ prior";

pub fn verdict(mean_kl: f64) -> &'static str {
    if mean_kl < COLLAPSE_THRESHOLD {
        VERDICT_PRIOR
    } else {
        VERDICT_SIGNAL
    }
}

/// How well a trained model recovers the hidden structure of one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub rows: usize,
    /// `|corr(posterior mean, true confounder)|`; for several latent or true
    /// dimensions, the mean over true dimensions of the best-matching latent.
    pub recovery_corr: Option<f64>,
    pub direct_t_corr: Option<f64>,
    pub direct_y_corr: Option<f64>,
    pub mean_kl: f64,
    /// Sample variance of the posterior mean, averaged over latent dimensions.
    pub posterior_mean_variance: f64,
}

pub fn recovery_corr(mu: &Matrix, cu: &Matrix) -> f64 {
    let per_true: Vec<f64> = (0..cu.cols())
        .map(|j| {
            let truth = cu.col(j);
            (0..mu.cols()).map(|k| pearson(&mu.col(k), &truth).abs()).fold(0.0, f64::max)
        })
        .collect();
    mean(&per_true)
}

pub fn evaluate(model: &VluciModel, obs: &Observational, truth: Option<&GroundTruth>) -> Result<Evaluation> {
    let post = model.posterior(&obs.x, &obs.t, &obs.y)?;
    let (t_hat, y_hat) = model.direct_effects(&obs.x)?;
    let mean_kl = model.prior_collapse_diagnostic(&obs.x, &obs.t, &obs.y)?;
    let variances: Vec<f64> = (0..post.mu.cols()).map(|k| sample_variance(&post.mu.col(k))).collect();
    Ok(Evaluation {
        rows: obs.len(),
        recovery_corr: truth.map(|g| recovery_corr(&post.mu, &g.cu)),
        direct_t_corr: truth.map(|g| pearson(&t_hat, &g.t_x_true)),
        direct_y_corr: truth.map(|g| pearson(&y_hat, &g.y_x_true)),
        mean_kl,
        posterior_mean_variance: mean(&variances),
    })
}

/// A trained model together with the data it was trained and evaluated on.
pub struct TrainedRepeat {
    pub seed: u64,
    pub train: SynthDataset,
    pub test: SynthDataset,
    pub model: VluciModel,
    pub history: Vec<LossReport>,
}

/// Generates the dataset of `seed`, splits it and trains VLUCI on the training part.
pub fn train_repeat(synth: &SynthConfig, vluci: &VluciConfig, seed: u64) -> Result<TrainedRepeat> {
    let ds = generate(&SynthConfig { seed, ..synth.clone() })?;
    let (train, test) = split_80_20(&ds, seed)?;
    let cfg = VluciConfig { seed, ..vluci.clone() };
    let mut model = VluciModel::new(&cfg, train.obs.x.cols())?;
    let history = model.train(&train.obs, &cfg)?;
    Ok(TrainedRepeat { seed, train, test, model, history })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatRecord {
    pub seed: u64,
    /// Held-out evaluation of the VLUCI model of this repeat.
    pub test: Evaluation,
    pub final_loss: LossReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatFailure {
    pub seed: u64,
    pub error: String,
}

/// Fits every estimator with and without the learned confounder.
pub fn estimator_runs(rep: &TrainedRepeat, kinds: &[EstimatorKind]) -> Result<Vec<RunMetrics>> {
    let (tr, te) = (&rep.train, &rep.test);
    let cu_tr = rep.model.infer_confounder(&tr.obs.x, &tr.obs.t, &tr.obs.y)?;
    let cu_te = rep.model.infer_confounder(&te.obs.x, &te.obs.t, &te.obs.y)?;
    let missing = || LabError::Data("ground truth is required to score estimators".into());
    let ite_tr = tr.truth.as_ref().ok_or_else(missing)?.ite();
    let ite_te = te.truth.as_ref().ok_or_else(missing)?.ite();
    let mut runs = Vec::with_capacity(2 * kinds.len());
    for kind in kinds {
        let kind = kind.with_seed(rep.seed);
        for augmented in [false, true] {
            let (f_tr, f_te) = if augmented {
                (augment(&tr.obs.x, &cu_tr)?, augment(&te.obs.x, &cu_te)?)
            } else {
                (tr.obs.x.clone(), te.obs.x.clone())
            };
            let fitted = fit(&kind, &f_tr, &tr.obs.t, &tr.obs.y)?;
            let p_tr = fitted.predict(&f_tr)?;
            let p_te = fitted.predict(&f_te)?;
            runs.push(RunMetrics {
                estimator: kind.name().to_string(),
                seed: rep.seed,
                augmented,
                sqrt_pehe_train: sqrt_pehe(&ite_tr, &p_tr.ite_hat)?,
                sqrt_pehe_test: sqrt_pehe(&ite_te, &p_te.ite_hat)?,
                eps_ate_train: ate_error(&ite_tr, &p_tr.ite_hat)?,
                eps_ate_test: ate_error(&ite_te, &p_te.ite_hat)?,
            });
        }
    }
    Ok(runs)
}

pub fn run_repeat(spec: &ExperimentSpec, seed: u64) -> Result<(RepeatRecord, Vec<RunMetrics>)> {
    let rep = train_repeat(&spec.synth, &spec.vluci, seed)?;
    let test = evaluate(&rep.model, &rep.test.obs, rep.test.truth.as_ref())?;
    let runs = estimator_runs(&rep, &spec.estimators)?;
    let final_loss = *rep.history.last().expect("at least one epoch");
    Ok((RepeatRecord { seed, test, final_loss }, runs))
}

/// Applies `job` to every seed on up to `threads` worker threads. Results keep
/// seed order, so the outcome does not depend on the thread count.
pub fn map_seeds<T: Send>(seeds: &[u64], threads: usize, job: impl Fn(u64) -> Result<T> + Sync) -> Vec<Result<T>> {
    let threads = threads.clamp(1, seeds.len().max(1));
    if threads == 1 {
        return seeds.iter().map(|&s| job(s)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..seeds.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= seeds.len() {
                    break;
                }
                let out = job(seeds[i]);
                slots.lock().expect("result slots")[i] = Some(out);
            });
        }
    });
    slots.into_inner().expect("result slots").into_iter().map(|r| r.expect("every seed ran")).collect()
}

/// Splits results into successes and failures, erroring when too many failed.
fn partition<T>(seeds: &[u64], results: Vec<Result<T>>) -> Result<(Vec<T>, Vec<RepeatFailure>)> {
    let total = results.len();
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    let mut first = None;
    for (&seed, r) in seeds.iter().zip(results) {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                failures.push(RepeatFailure { seed, error: e.to_string() });
                first.get_or_insert(e);
            }
        }
    }
    if failures.len() as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return Err(LabError::Repeats { failed: failures.len(), total, first: Box::new(first.expect("a failure")) });
    }
    Ok((ok, failures))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub spec_hash: String,
    pub version: String,
    pub base_seed: u64,
    pub seeds: Vec<u64>,
}

impl Provenance {
    pub fn of(spec: &ExperimentSpec) -> Self {
        Self {
            spec_hash: spec.hash(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            base_seed: spec.base_seed,
            seeds: spec.seeds(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub provenance: Provenance,
    pub aggregate: AggregateTable,
    pub repeats: Vec<RepeatRecord>,
    pub runs: Vec<RunMetrics>,
    pub failures: Vec<RepeatFailure>,
}

pub fn run_experiment(spec: &ExperimentSpec, threads: usize) -> Result<ExperimentReport> {
    spec.validate()?;
    let seeds = spec.seeds();
    let results = map_seeds(&seeds, threads, |seed| run_repeat(spec, seed));
    let (ok, failures) = partition(&seeds, results)?;
    let mut repeats = Vec::with_capacity(ok.len());
    let mut runs = Vec::new();
    for (rec, r) in ok {
        repeats.push(rec);
        runs.extend(r);
    }
    let aggregate = aggregate(&runs)?;
    Ok(ExperimentReport { provenance: Provenance::of(spec), aggregate, repeats, runs, failures })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosePair {
    pub seed: u64,
    pub kl_confounded: f64,
    pub kl_unconfounded: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub provenance: Provenance,
    pub pairs: Vec<DiagnosePair>,
    pub failures: Vec<RepeatFailure>,
    pub mean_kl_confounded: f64,
    pub mean_kl_unconfounded: f64,
    /// `mean_kl_confounded / mean_kl_unconfounded`.
    pub kl_ratio: f64,
    pub threshold: f64,
    pub verdict_confounded: String,
    pub verdict_unconfounded: String,
}

/// Trains on matched confounded and confounder-free datasets for every seed
/// and compares the held-out posterior KL.
pub fn run_diagnose(spec: &ExperimentSpec, threads: usize) -> Result<DiagnoseReport> {
    spec.validate()?;
    let seeds = spec.seeds();
    let results = map_seeds(&seeds, threads, |seed| {
        let kl = |confounded: bool| -> Result<f64> {
            let synth = SynthConfig { confounded, ..spec.synth.clone() };
            let rep = train_repeat(&synth, &spec.vluci, seed)?;
            Ok(rep.model.prior_collapse_diagnostic(&rep.test.obs.x, &rep.test.obs.t, &rep.test.obs.y)?)
        };
        Ok(DiagnosePair { seed, kl_confounded: kl(true)?, kl_unconfounded: kl(false)? })
    });
    let (pairs, failures) = partition(&seeds, results)?;
    let conf: Vec<f64> = pairs.iter().map(|p| p.kl_confounded).collect();
    let unconf: Vec<f64> = pairs.iter().map(|p| p.kl_unconfounded).collect();
    let (mc, mu) = (mean(&conf), mean(&unconf));
    Ok(DiagnoseReport {
        provenance: Provenance::of(spec),
        pairs,
        failures,
        mean_kl_confounded: mc,
        mean_kl_unconfounded: mu,
        kl_ratio: if mu > 0.0 { mc / mu } else { f64::INFINITY },
        threshold: COLLAPSE_THRESHOLD,
        verdict_confounded: verdict(mc).to_string(),
        verdict_unconfounded: verdict(mu).to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_threshold() {
        assert_eq!(verdict(0.0), VERDICT_PRIOR);
        assert_eq!(verdict(0.049), VERDICT_PRIOR);
        assert_eq!(verdict(0.05), VERDICT_SIGNAL);
    }

    #[test]
    fn threads_do_not_reorder_results() {
        let seeds: Vec<u64> = (10..30).collect();
        let job = |s: u64| if s % 7 == 0 { Err(LabError::Data(format!("seed {s}"))) } else { Ok(s * s) };
        let a: Vec<String> = map_seeds(&seeds, 1, job).into_iter().map(|r| format!("{r:?}")).collect();
        let b: Vec<String> = map_seeds(&seeds, 4, job).into_iter().map(|r| format!("{r:?}")).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn failures_are_counted_until_the_limit() {
        let seeds = [0, 1, 2, 3, 4];
        let one_bad = vec![Ok(0), Err(LabError::Data("x".into())), Ok(2), Ok(3), Ok(4)];
        let (ok, failed) = partition(&seeds, one_bad).unwrap();
        assert_eq!(ok, vec![0, 2, 3, 4]);
        assert_eq!(failed, vec![RepeatFailure { seed: 1, error: "data error: x".into() }]);

        let two_bad = vec![
            Ok(0),
            Err(LabError::Divergence { term: "l_kl".into(), epoch: 3 }),
            Err(LabError::Data("y".into())),
            Ok(3),
            Ok(4),
        ];
        let e = partition(&seeds, two_bad).unwrap_err();
        assert_eq!(e.exit_code(), 4);
        assert!(e.to_string().contains("2 of 5"), "{e}");
    }

    #[test]
    fn recovery_uses_the_best_latent_and_ignores_sign() {
        let truth = Matrix::column(&[1.0, 2.0, 3.0, 4.0]);
        let mu = Matrix::from_rows(&[&[0.3, -1.0], &[0.1, -2.0], &[0.4, -3.0], &[0.1, -4.0]]).unwrap();
        assert!((recovery_corr(&mu, &truth) - 1.0).abs() < 1e-12);
    }
}
