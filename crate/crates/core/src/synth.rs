//! Synthetic observational data with hidden confounders and full ground truth.
//!
//! Mechanism (sigmoid `f`, weights `W ~ U(weight_low, weight_high)`):
//!
//! ```text
//! Cu ~ N(0, I)
//! X  ~ N(0, S),   S = eigen-clipped (R + R^T) / 2,  R ~ U(-1, 1)^{d x d}
//! p  = mix_cu * f(Cu W_cu_t) + mix_x * f(X W_x_t) + mix_noise * eps_t,  clamped to [0.001, 0.999]
//! t  ~ Bernoulli(p)
//! mu(tau) = f(Cu W_cu_y) + f(tau W_t_y) + f(X W_x_y) + eps_y,  eps_y ~ N(0, outcome_noise_sd^2)
//! y  ~ N(mu(t), 1)
//! ```
//!
//! `eps_y` is drawn once per sample and shared by both potential outcomes, so
//! `mu(1) - mu(0) = f(W_t_y) - 1/2` for every row. Without confounding the `Cu`
//! weights are zero (the draws still happen, keeping paired datasets aligned).

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{config_err, data_err, Result};
use crate::math::sigmoid;
use crate::nn::Matrix;

pub const EIGEN_FLOOR: f64 = 1e-3;
pub const PROPENSITY_MIN: f64 = 0.001;
pub const PROPENSITY_MAX: f64 = 0.999;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SynthConfig {
    pub n_samples: usize,
    pub x_dim: usize,
    pub cu_dim: usize,
    pub mix_cu: f64,
    pub mix_x: f64,
    pub mix_noise: f64,
    pub weight_low: f64,
    pub weight_high: f64,
    pub outcome_noise_sd: f64,
    pub confounded: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 5000,
            x_dim: 8,
            cu_dim: 1,
            mix_cu: 0.35,
            mix_x: 0.6,
            mix_noise: 0.05,
            weight_low: 1.0,
            weight_high: 4.0,
            outcome_noise_sd: 0.2,
            confounded: true,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(config_err!("synth.n_samples must be positive"));
        }
        if self.x_dim == 0 {
            return Err(config_err!("synth.x_dim must be positive"));
        }
        if self.cu_dim == 0 {
            return Err(config_err!("synth.cu_dim must be positive"));
        }
        let mix = self.mix_cu + self.mix_x + self.mix_noise;
        if (mix - 1.0).abs() > 1e-12 {
            return Err(config_err!("synth.mix_cu + mix_x + mix_noise must equal 1, got {mix}"));
        }
        if !(self.weight_low < self.weight_high) {
            return Err(config_err!(
                "synth.weight_low ({}) must be below weight_high ({})",
                self.weight_low,
                self.weight_high
            ));
        }
        if !(self.outcome_noise_sd >= 0.0 && self.outcome_noise_sd.is_finite()) {
            return Err(config_err!("synth.outcome_noise_sd must be a finite non-negative number"));
        }
        Ok(())
    }
}

/// The sampled structural weights.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MechanismWeights {
    pub cu_t: Vec<f64>,
    pub x_t: Vec<f64>,
    pub cu_y: Vec<f64>,
    pub x_y: Vec<f64>,
    pub t_y: f64,
}

impl MechanismWeights {
    pub fn sample<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Self {
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| cfg.weight_low + (cfg.weight_high - cfg.weight_low) * rng.random::<f64>())
                .collect()
        };
        let mut cu_t = draw(cfg.cu_dim);
        let x_t = draw(cfg.x_dim);
        let mut cu_y = draw(cfg.cu_dim);
        let x_y = draw(cfg.x_dim);
        let t_y = draw(1)[0];
        if !cfg.confounded {
            cu_t.fill(0.0);
            cu_y.fill(0.0);
        }
        Self { cu_t, x_t, cu_y, x_y, t_y }
    }

    /// True individual effect `f(W_t_y) - f(0)`, identical for every sample.
    pub fn true_ite(&self) -> f64 {
        sigmoid(self.t_y) - 0.5
    }
}

/// What a practitioner would actually observe.
#[derive(Debug, Clone, PartialEq)]
pub struct Observational {
    pub x: Matrix,
    /// Binary treatment stored as `0.0` / `1.0`.
    pub t: Vec<f64>,
    pub y: Vec<f64>,
}

impl Observational {
    pub fn new(x: Matrix, t: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let obs = Self { x, t, y };
        obs.validate()?;
        Ok(obs)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x.rows();
        if self.t.len() != n || self.y.len() != n {
            return Err(data_err!(
                "observational columns disagree: X has {n} rows, t {}, y {}",
                self.t.len(),
                self.y.len()
            ));
        }
        check_binary(&self.t)?;
        if !self.x.is_finite() || self.y.iter().any(|v| !v.is_finite()) {
            return Err(data_err!("observational data contains non-finite values"));
        }
        Ok(())
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(idx),
            t: idx.iter().map(|&i| self.t[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

pub(crate) fn check_binary(t: &[f64]) -> Result<()> {
    match t.iter().position(|&v| v != 0.0 && v != 1.0) {
        Some(i) => Err(data_err!("treatment at row {i} is {} (expected 0 or 1)", t[i])),
        None => Ok(()),
    }
}

/// Hidden per-row ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub cu: Matrix,
    pub mu_y0: Vec<f64>,
    pub mu_y1: Vec<f64>,
    pub propensity: Vec<f64>,
    pub t_x_true: Vec<f64>,
    pub y_x_true: Vec<f64>,
}

impl GroundTruth {
    pub fn ite(&self) -> Vec<f64> {
        self.mu_y1.iter().zip(&self.mu_y0).map(|(a, b)| a - b).collect()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            cu: self.cu.select_rows(idx),
            mu_y0: pick(&self.mu_y0),
            mu_y1: pick(&self.mu_y1),
            propensity: pick(&self.propensity),
            t_x_true: pick(&self.t_x_true),
            y_x_true: pick(&self.y_x_true),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub obs: Observational,
    /// `None` when the ground-truth sidecar is unavailable.
    pub truth: Option<GroundTruth>,
    pub weights: Option<MechanismWeights>,
    pub covariance: Option<Matrix>,
}

impl SynthDataset {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            obs: self.obs.select(idx),
            truth: self.truth.as_ref().map(|g| g.select(idx)),
            weights: self.weights.clone(),
            covariance: self.covariance.clone(),
        }
    }
}

/// `(R + R^T) / 2`.
pub fn symmetrize(raw: &Matrix) -> Matrix {
    let d = raw.rows();
    let mut out = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            out.set(i, j, 0.5 * (raw.get(i, j) + raw.get(j, i)));
        }
    }
    out
}

/// Raises every eigenvalue of a symmetric matrix to at least `floor` and
/// rebuilds it; the result is exactly symmetric.
pub fn clip_eigenvalues(sym: &Matrix, floor: f64) -> Matrix {
    let d = sym.rows();
    let m = DMatrix::from_row_slice(d, d, sym.as_slice());
    let eig = m.symmetric_eigen();
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let mut out = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            out.set(i, j, rebuilt[(i, j)]);
        }
    }
    symmetrize(&out)
}

pub fn min_eigenvalue(sym: &Matrix) -> f64 {
    let d = sym.rows();
    DMatrix::from_row_slice(d, d, sym.as_slice()).symmetric_eigenvalues().min()
}

pub fn gen_covariance<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<Matrix> {
    if d == 0 {
        return Err(config_err!("covariance dimension must be at least 1"));
    }
    let raw: Vec<f64> = (0..d * d).map(|_| -1.0 + 2.0 * rng.random::<f64>()).collect();
    let raw = Matrix::from_vec(d, d, raw)?;
    Ok(clip_eigenvalues(&symmetrize(&raw), EIGEN_FLOOR))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exogenous {
    pub x: Matrix,
    pub cu: Matrix,
    pub covariance: Matrix,
}

pub fn gen_exogenous<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Result<Exogenous> {
    cfg.validate()?;
    let d = cfg.x_dim;
    let covariance = gen_covariance(d, rng)?;
    let chol = DMatrix::from_row_slice(d, d, covariance.as_slice())
        .cholesky()
        .ok_or_else(|| data_err!("clipped covariance is not positive definite"))?;
    let l = chol.l();
    let n = cfg.n_samples;
    let mut x = Matrix::zeros(n, d);
    let mut z = vec![0.0; d];
    for r in 0..n {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let row = x.row_mut(r);
        for i in 0..d {
            row[i] = (0..=i).map(|k| l[(i, k)] * z[k]).sum();
        }
    }
    let cu_data = (0..n * cfg.cu_dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let cu = Matrix::from_vec(n, cfg.cu_dim, cu_data)?;
    Ok(Exogenous { x, cu, covariance })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Clamped treatment probability for one row given its treatment noise draw.
pub fn treatment_probability(cu: &[f64], x: &[f64], w: &MechanismWeights, cfg: &SynthConfig, eps_t: f64) -> f64 {
    let p = cfg.mix_cu * sigmoid(dot(cu, &w.cu_t)) + cfg.mix_x * sigmoid(dot(x, &w.x_t)) + cfg.mix_noise * eps_t;
    p.clamp(PROPENSITY_MIN, PROPENSITY_MAX)
}

pub fn gen_treatment<R: Rng + ?Sized>(
    x: &Matrix,
    cu: &Matrix,
    w: &MechanismWeights,
    cfg: &SynthConfig,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows();
    let mut t = Vec::with_capacity(n);
    let mut propensity = Vec::with_capacity(n);
    for r in 0..n {
        let eps_t: f64 = rng.sample(StandardNormal);
        let p = treatment_probability(cu.row(r), x.row(r), w, cfg, eps_t);
        let u: f64 = rng.random();
        t.push(if u < p { 1.0 } else { 0.0 });
        propensity.push(p);
    }
    (t, propensity)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcomes {
    pub y: Vec<f64>,
    pub mu_y0: Vec<f64>,
    pub mu_y1: Vec<f64>,
    pub t_x_true: Vec<f64>,
    pub y_x_true: Vec<f64>,
}

pub fn gen_outcomes<R: Rng + ?Sized>(
    x: &Matrix,
    cu: &Matrix,
    t: &[f64],
    w: &MechanismWeights,
    cfg: &SynthConfig,
    rng: &mut R,
) -> Outcomes {
    let n = x.rows();
    let mut out = Outcomes {
        y: Vec::with_capacity(n),
        mu_y0: Vec::with_capacity(n),
        mu_y1: Vec::with_capacity(n),
        t_x_true: Vec::with_capacity(n),
        y_x_true: Vec::with_capacity(n),
    };
    let (f0, f1) = (sigmoid(0.0), sigmoid(w.t_y));
    for r in 0..n {
        let eps_y = cfg.outcome_noise_sd * rng.sample::<f64, _>(StandardNormal);
        let y_x = sigmoid(dot(x.row(r), &w.x_y));
        let shared = sigmoid(dot(cu.row(r), &w.cu_y)) + y_x + eps_y;
        let (mu0, mu1) = (shared + f0, shared + f1);
        let mu = if t[r] == 1.0 { mu1 } else { mu0 };
        out.y.push(mu + rng.sample::<f64, _>(StandardNormal));
        out.mu_y0.push(mu0);
        out.mu_y1.push(mu1);
        out.t_x_true.push(cfg.mix_x * sigmoid(dot(x.row(r), &w.x_t)));
        out.y_x_true.push(y_x);
    }
    out
}

/// Full dataset for `cfg`, driven by a ChaCha8 stream seeded from `cfg.seed`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let exo = gen_exogenous(cfg, &mut rng)?;
    let weights = MechanismWeights::sample(cfg, &mut rng);
    let (t, propensity) = gen_treatment(&exo.x, &exo.cu, &weights, cfg, &mut rng);
    let o = gen_outcomes(&exo.x, &exo.cu, &t, &weights, cfg, &mut rng);
    Ok(SynthDataset {
        obs: Observational { x: exo.x, t, y: o.y },
        truth: Some(GroundTruth {
            cu: exo.cu,
            mu_y0: o.mu_y0,
            mu_y1: o.mu_y1,
            propensity,
            t_x_true: o.t_x_true,
            y_x_true: o.y_x_true,
        }),
        weights: Some(weights),
        covariance: Some(exo.covariance),
    })
}

/// Shuffled `(train, test)` row indices with sizes `floor(0.8 n)` and the rest.
pub fn split_indices(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 5 {
        return Err(data_err!("need at least 5 rows to split, got {n}"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n * 4 / 5;
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

pub fn split_80_20(ds: &SynthDataset, seed: u64) -> Result<(SynthDataset, SynthDataset)> {
    let (train, test) = split_indices(ds.len(), seed)?;
    Ok((ds.select(&train), ds.select(&test)))
}
