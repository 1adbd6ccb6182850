//! Counterfactual estimators used to measure what a learned confounder adds:
//! an S-learner, a TARNet-style T-learner (shared trunk, one head per arm) and
//! inverse probability weighting.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{config_err, data_err, Result};
use crate::math;
use crate::nn::{Activation, AdamConfig, AdamState, Matrix, Mlp};
use crate::rng::{self, streams};
use crate::synth::check_binary;
use crate::vluci::{apply_noise, draw_noise, VluciModel};

/// Propensity clamp used by inverse probability weighting.
pub const PROPENSITY_CLIP: (f64, f64) = (0.01, 0.99);

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct EstimatorParams {
    /// Hidden layers of the outcome (or propensity) network; the shared trunk for the T-learner.
    pub hidden: Vec<usize>,
    /// Hidden layers of each T-learner head.
    pub head_hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for EstimatorParams {
    fn default() -> Self {
        Self { hidden: vec![64, 64], head_hidden: vec![32], epochs: 40, batch_size: 64, learning_rate: 1e-3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum EstimatorKind {
    SLearner(EstimatorParams),
    TLearner(EstimatorParams),
    Ipw(EstimatorParams),
}

impl EstimatorKind {
    pub fn s_learner() -> Self {
        EstimatorKind::SLearner(EstimatorParams::default())
    }

    pub fn t_learner() -> Self {
        EstimatorKind::TLearner(EstimatorParams { hidden: vec![64], ..EstimatorParams::default() })
    }

    pub fn ipw() -> Self {
        EstimatorKind::Ipw(EstimatorParams { hidden: vec![32], ..EstimatorParams::default() })
    }

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::SLearner(_) => "s_learner",
            EstimatorKind::TLearner(_) => "t_learner",
            EstimatorKind::Ipw(_) => "ipw",
        }
    }

    pub fn params(&self) -> &EstimatorParams {
        match self {
            EstimatorKind::SLearner(p) | EstimatorKind::TLearner(p) | EstimatorKind::Ipw(p) => p,
        }
    }

    fn params_mut(&mut self) -> &mut EstimatorParams {
        match self {
            EstimatorKind::SLearner(p) | EstimatorKind::TLearner(p) | EstimatorKind::Ipw(p) => p,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut k = self.clone();
        k.params_mut().seed = seed;
        k
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.params();
        if p.epochs == 0 || p.batch_size == 0 {
            return Err(config_err!("{}: epochs and batch_size must be positive", self.name()));
        }
        if p.hidden.iter().chain(&p.head_hidden).any(|&d| d == 0) {
            return Err(config_err!("{}: zero-width hidden layer", self.name()));
        }
        if matches!(self, EstimatorKind::TLearner(_)) && p.hidden.is_empty() {
            return Err(config_err!("t_learner needs at least one trunk layer"));
        }
        AdamConfig::with_lr(p.learning_rate).validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualPrediction {
    pub y0_hat: Vec<f64>,
    pub y1_hat: Vec<f64>,
    pub ite_hat: Vec<f64>,
    pub interval_low: Option<Vec<f64>>,
    pub interval_high: Option<Vec<f64>>,
}

impl CounterfactualPrediction {
    fn new(y0_hat: Vec<f64>, y1_hat: Vec<f64>) -> Self {
        let ite_hat = y1_hat.iter().zip(&y0_hat).map(|(a, b)| a - b).collect();
        Self { y0_hat, y1_hat, ite_hat, interval_low: None, interval_high: None }
    }
}

/// Column-wise `[X | cu_hat]`.
pub fn augment(x: &Matrix, cu_hat: &Matrix) -> Result<Matrix> {
    x.hcat(cu_hat)
}

/// Affine map between the outcome and the standardised target the networks fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeScale {
    pub mean: f64,
    pub sd: f64,
}

impl OutcomeScale {
    /// Sample mean and standard deviation, with unit scale for a constant outcome.
    pub fn fit(y: &[f64]) -> Self {
        let sd = if y.len() > 1 { math::sqrt(math::sample_variance(y)) } else { 0.0 };
        Self { mean: math::mean(y), sd: if sd > 1e-12 { sd } else { 1.0 } }
    }

    fn forward(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| (v - self.mean) / self.sd).collect()
    }

    fn inverse(&self, z: Vec<f64>) -> Vec<f64> {
        z.into_iter().map(|v| self.mean + self.sd * v).collect()
    }
}

#[derive(Debug, Clone)]
pub enum FittedEstimator {
    SLearner { net: Mlp, scale: OutcomeScale },
    TLearner { trunk: Mlp, head0: Mlp, head1: Mlp, scale: OutcomeScale },
    Ipw { propensity: Mlp, y0: f64, y1: f64 },
}

impl FittedEstimator {
    pub fn feature_dim(&self) -> usize {
        match self {
            FittedEstimator::SLearner { net, .. } => net.in_dim() - 1,
            FittedEstimator::TLearner { trunk, .. } => trunk.in_dim(),
            FittedEstimator::Ipw { propensity, .. } => propensity.in_dim(),
        }
    }

    pub fn predict(&self, features: &Matrix) -> Result<CounterfactualPrediction> {
        if features.cols() != self.feature_dim() {
            return Err(config_err!("estimator expects {} features, got {}", self.feature_dim(), features.cols()));
        }
        let n = features.rows();
        Ok(match self {
            FittedEstimator::SLearner { net, scale } => {
                let y0 = net.apply(&features.hcat(&Matrix::zeros(n, 1))?)?.into_vec();
                let y1 = net.apply(&features.hcat(&Matrix::filled(n, 1, 1.0))?)?.into_vec();
                CounterfactualPrediction::new(scale.inverse(y0), scale.inverse(y1))
            }
            FittedEstimator::TLearner { trunk, head0, head1, scale } => {
                let h = trunk.apply(features)?;
                let y0 = head0.apply(&h)?.into_vec();
                let y1 = head1.apply(&h)?.into_vec();
                CounterfactualPrediction::new(scale.inverse(y0), scale.inverse(y1))
            }
            FittedEstimator::Ipw { y0, y1, .. } => CounterfactualPrediction::new(vec![*y0; n], vec![*y1; n]),
        })
    }
}

fn check_inputs(features: &Matrix, t: &[f64], y: &[f64]) -> Result<()> {
    if t.len() != features.rows() || y.len() != features.rows() {
        return Err(config_err!("features have {} rows, t {}, y {}", features.rows(), t.len(), y.len()));
    }
    check_binary(t)?;
    if !features.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(data_err!("estimator inputs contain non-finite values"));
    }
    let treated = t.iter().filter(|&&v| v == 1.0).count();
    if treated == 0 || treated == t.len() {
        return Err(data_err!(
            "positivity violated: {} treated and {} control rows",
            treated,
            t.len() - treated
        ));
    }
    Ok(())
}

fn layer_dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut d = vec![input];
    d.extend_from_slice(hidden);
    d.push(output);
    d
}

/// Squared-error (or cross-entropy for `Sigmoid` heads) fit of `net` on `(inputs, targets)`.
fn fit_net<R: Rng>(net: &mut Mlp, inputs: &Matrix, targets: &[f64], p: &EstimatorParams, rng: &mut R) -> Result<()> {
    let mut adam = AdamState::for_net(net, AdamConfig::with_lr(p.learning_rate))?;
    let classify = net.activations().last() == Some(&Activation::Sigmoid);
    let mut idx: Vec<usize> = (0..inputs.rows()).collect();
    for _ in 0..p.epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(p.batch_size) {
            let xb = inputs.select_rows(chunk);
            let tb: Vec<f64> = chunk.iter().map(|&i| targets[i]).collect();
            let out = net.forward(&xb)?;
            let b = chunk.len() as f64;
            let grad: Vec<f64> = out
                .as_slice()
                .iter()
                .zip(&tb)
                .map(|(&o, &t)| {
                    if classify {
                        let o = o.clamp(1e-15, 1.0 - 1e-15);
                        (o - t) / (o * (1.0 - o)) / b
                    } else {
                        2.0 * (o - t) / b
                    }
                })
                .collect();
            net.backprop(&Matrix::column(&grad))?;
            adam.update(net)?;
        }
    }
    Ok(())
}

fn fit_t_learner<R: Rng>(features: &Matrix, t: &[f64], y: &[f64], p: &EstimatorParams, rng: &mut R) -> Result<FittedEstimator> {
    let scale = OutcomeScale::fit(y);
    let y = &scale.forward(y)[..];
    let trunk_dims = layer_dims(features.cols(), &p.hidden[..p.hidden.len() - 1], p.hidden[p.hidden.len() - 1]);
    let mut trunk = Mlp::new(&trunk_dims, Activation::Relu, Activation::Relu)?;
    let head_dims = layer_dims(*p.hidden.last().unwrap(), &p.head_hidden, 1);
    let mut head0 = Mlp::new(&head_dims, Activation::Relu, Activation::Identity)?;
    let mut head1 = head0.clone();
    for net in [&mut trunk, &mut head0, &mut head1] {
        net.init_glorot(rng);
    }
    let adam_cfg = AdamConfig::with_lr(p.learning_rate);
    let mut opt = [
        AdamState::for_net(&trunk, adam_cfg)?,
        AdamState::for_net(&head0, adam_cfg)?,
        AdamState::for_net(&head1, adam_cfg)?,
    ];
    let mut idx: Vec<usize> = (0..features.rows()).collect();
    for _ in 0..p.epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(p.batch_size) {
            let h = trunk.forward(&features.select_rows(chunk))?;
            let b = chunk.len() as f64;
            let mut dh = Matrix::zeros(h.rows(), h.cols());
            for (arm, head) in [(0.0, &mut head0), (1.0, &mut head1)] {
                let rows: Vec<usize> = (0..chunk.len()).filter(|&r| t[chunk[r]] == arm).collect();
                if rows.is_empty() {
                    continue;
                }
                let out = head.forward(&h.select_rows(&rows))?;
                let grad: Vec<f64> =
                    rows.iter().zip(out.as_slice()).map(|(&r, &o)| 2.0 * (o - y[chunk[r]]) / b).collect();
                let dh_arm = head.backprop(&Matrix::column(&grad))?;
                for (k, &r) in rows.iter().enumerate() {
                    dh.row_mut(r).copy_from_slice(dh_arm.row(k));
                }
            }
            trunk.backprop(&dh)?;
            opt[0].update(&mut trunk)?;
            opt[1].update(&mut head0)?;
            opt[2].update(&mut head1)?;
        }
    }
    Ok(FittedEstimator::TLearner { trunk, head0, head1, scale })
}

fn fit_propensity<R: Rng>(features: &Matrix, t: &[f64], p: &EstimatorParams, rng: &mut R) -> Result<Mlp> {
    let mut net = Mlp::new(&layer_dims(features.cols(), &p.hidden, 1), Activation::Relu, Activation::Sigmoid)?;
    net.init_glorot(rng);
    fit_net(&mut net, features, t, p, rng)?;
    Ok(net)
}

/// Horvitz-Thompson arm means `(E[y(0)], E[y(1)])` with propensities clamped to [`PROPENSITY_CLIP`].
pub fn horvitz_thompson_means(e: &[f64], t: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if e.len() != t.len() || y.len() != t.len() || t.is_empty() {
        return Err(config_err!("propensity, treatment and outcome lengths differ"));
    }
    check_binary(t)?;
    let n = t.len() as f64;
    let (mut m1, mut m0) = (0.0, 0.0);
    for i in 0..t.len() {
        let ei = e[i].clamp(PROPENSITY_CLIP.0, PROPENSITY_CLIP.1);
        m1 += t[i] * y[i] / ei;
        m0 += (1.0 - t[i]) * y[i] / (1.0 - ei);
    }
    Ok((m0 / n, m1 / n))
}

/// `mean(t y / e) - mean((1 - t) y / (1 - e))`.
pub fn horvitz_thompson(e: &[f64], t: &[f64], y: &[f64]) -> Result<f64> {
    let (m0, m1) = horvitz_thompson_means(e, t, y)?;
    Ok(m1 - m0)
}

pub fn fit(kind: &EstimatorKind, features: &Matrix, t: &[f64], y: &[f64]) -> Result<FittedEstimator> {
    kind.validate()?;
    check_inputs(features, t, y)?;
    let p = kind.params();
    let mut rng = rng::stream(p.seed, streams::INIT);
    match kind {
        EstimatorKind::SLearner(p) => {
            let mut net = Mlp::new(&layer_dims(features.cols() + 1, &p.hidden, 1), Activation::Relu, Activation::Identity)?;
            net.init_glorot(&mut rng);
            let inputs = features.hcat(&Matrix::column(t))?;
            let scale = OutcomeScale::fit(y);
            fit_net(&mut net, &inputs, &scale.forward(y), p, &mut rng)?;
            Ok(FittedEstimator::SLearner { net, scale })
        }
        EstimatorKind::TLearner(p) => fit_t_learner(features, t, y, p, &mut rng),
        EstimatorKind::Ipw(p) => {
            let propensity = fit_propensity(features, t, p, &mut rng)?;
            let e = propensity.apply(features)?.into_vec();
            let (y0, y1) = horvitz_thompson_means(&e, t, y)?;
            Ok(FittedEstimator::Ipw { propensity, y0, y1 })
        }
    }
}

/// Fits on `(features, t, y)` and predicts both potential outcomes for `eval_features`.
pub fn fit_predict(
    kind: &EstimatorKind,
    features: &Matrix,
    t: &[f64],
    y: &[f64],
    eval_features: &Matrix,
) -> Result<CounterfactualPrediction> {
    fit(kind, features, t, y)?.predict(eval_features)
}

/// Average treatment effect by inverse probability weighting with a fitted propensity network.
pub fn ipw_ate(features: &Matrix, t: &[f64], y: &[f64], params: &EstimatorParams) -> Result<f64> {
    match fit(&EstimatorKind::Ipw(params.clone()), features, t, y)? {
        FittedEstimator::Ipw { y0, y1, .. } => Ok(y1 - y0),
        _ => unreachable!(),
    }
}

/// Per-row ITE interval from `samples` posterior draws of the confounder.
///
/// The estimator must have been fitted on `[X | Cu]`. Bounds are the empirical
/// quantiles `(1 - level) / 2` and `1 - (1 - level) / 2` of the per-draw ITEs.
pub fn counterfactual_interval(
    model: &VluciModel,
    estimator: &FittedEstimator,
    x: &Matrix,
    t: &[f64],
    y: &[f64],
    samples: usize,
    level: f64,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if samples < 20 {
        return Err(config_err!("interval estimation needs at least 20 samples, got {samples}"));
    }
    if !(0.0..=1.0).contains(&level) {
        return Err(config_err!("interval level must lie in [0, 1], got {level}"));
    }
    let post = model.posterior(x, t, y)?;
    let mut rng = rng::stream(seed, streams::INTERVAL);
    let eps = draw_noise(&mut rng, samples, post.rows(), post.dim());
    let mut draws: Vec<Vec<f64>> = vec![Vec::with_capacity(samples); x.rows()];
    for cu in apply_noise(&post, &eps) {
        let pred = estimator.predict(&augment(x, &cu)?)?;
        for (d, v) in draws.iter_mut().zip(pred.ite_hat) {
            d.push(v);
        }
    }
    let (q_lo, q_hi) = ((1.0 - level) / 2.0, 1.0 - (1.0 - level) / 2.0);
    let mut lo = Vec::with_capacity(x.rows());
    let mut hi = Vec::with_capacity(x.rows());
    for d in &draws {
        let s = math::sorted(d);
        lo.push(math::quantile_sorted(&s, q_lo));
        hi.push(math::quantile_sorted(&s, q_hi));
    }
    Ok((lo, hi))
}

/// Attaches interval bounds, widening them to contain the point estimate.
pub fn with_interval(mut pred: CounterfactualPrediction, lo: Vec<f64>, hi: Vec<f64>) -> CounterfactualPrediction {
    let lo = lo.iter().zip(&pred.ite_hat).map(|(l, i)| l.min(*i)).collect();
    let hi = hi.iter().zip(&pred.ite_hat).map(|(h, i)| h.max(*i)).collect();
    pred.interval_low = Some(lo);
    pred.interval_high = Some(hi);
    pred
}

pub fn estimator_names(kinds: &[EstimatorKind]) -> Vec<String> {
    kinds.iter().map(|k| String::from(k.name())).collect()
}
