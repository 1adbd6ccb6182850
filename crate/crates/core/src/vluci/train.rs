//! Three-stage mini-batch optimisation.
//!
//! Per batch: (i) prediction networks on the cross-entropy and MSE fits,
//! (ii) generator on KL plus reconstruction, (iii) reconstructors on the
//! reconstruction errors. Each stage runs its own forward/backward pass and
//! `strip` is recomputed with the current prediction networks every time.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::loss::{self, kl_to_prior, kl_to_prior_grad, PosteriorGaussian, LOGVAR_MAX, LOGVAR_MIN};
use super::{apply_noise, draw_noise, generator_input, LossWeights, VluciConfig, VluciModel};
use crate::error::{config_err, Error, Result};
use crate::math;
use crate::nn::{AdamState, Matrix};
use crate::rng::{self, streams};
use crate::synth::Observational;

/// Component losses of one batch (unweighted).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BatchLosses {
    pub l_tx: f64,
    pub l_yx: f64,
    pub l_kl: f64,
    pub l_rec_t: f64,
    pub l_rec_y: f64,
}

impl BatchLosses {
    fn check_finite(&self, epoch: usize) -> Result<()> {
        for (term, v) in [
            ("l_tX", self.l_tx),
            ("l_yX", self.l_yx),
            ("l_kl", self.l_kl),
            ("l_recT", self.l_rec_t),
            ("l_recY", self.l_rec_y),
        ] {
            if !v.is_finite() {
                return Err(Error::Divergence { term, epoch });
            }
        }
        Ok(())
    }
}

/// Epoch averages of the batch losses; `total` is the weighted sum.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossReport {
    pub epoch: usize,
    pub l_tx: f64,
    pub l_yx: f64,
    pub l_kl: f64,
    pub l_rec_t: f64,
    pub l_rec_y: f64,
    pub total: f64,
}

struct VariationalPass {
    kl: f64,
    rec_t: f64,
    rec_y: f64,
    d_t_res: Vec<f64>,
    d_y_res: Vec<f64>,
}

/// Forward + backward through generator, reparameterisation and reconstructors.
/// Gradients of the weighted variational terms accumulate into all four nets;
/// the returned `d_*_res` are derivatives with respect to the residual inputs.
fn variational_pass(
    model: &mut VluciModel,
    t_res: &[f64],
    y_res: &[f64],
    t: &[f64],
    eps: &[Matrix],
    w: &LossWeights,
) -> Result<VariationalPass> {
    let b = t.len();
    let input = generator_input(t_res, y_res);
    let mu = model.gen_mu.forward(&input)?;
    let lv_raw = model.gen_logvar.forward(&input)?;
    let post = PosteriorGaussian::new(mu, lv_raw.clone())?;
    let kl = kl_to_prior(&post);
    let (mut dmu, mut dlv) = kl_to_prior_grad(&post);
    for v in dmu.as_mut_slice().iter_mut().chain(dlv.as_mut_slice()) {
        *v *= w.kl;
    }

    let s = eps.len() as f64;
    let sd = post.std_dev();
    let samples = apply_noise(&post, eps);
    let t_col = Matrix::column(t);
    let (mut rec_t, mut rec_y) = (0.0, 0.0);
    let mut d_t_res = vec![0.0; b];
    let mut d_y_res = vec![0.0; b];
    for (cu, e) in samples.iter().zip(eps) {
        let rt = model.rec_t.forward(cu)?;
        rec_t += loss::mse(t_res, rt.as_slice()) / s;
        let g_rt = loss::mse_grad(t_res, rt.as_slice(), w.rec_t / s);
        for (d, g) in d_t_res.iter_mut().zip(&g_rt) {
            *d -= g;
        }
        let dcu_t = model.rec_t.backprop(&Matrix::column(&g_rt))?;

        let ry = model.rec_y.forward(&cu.hcat(&t_col)?)?;
        rec_y += loss::mse(y_res, ry.as_slice()) / s;
        let g_ry = loss::mse_grad(y_res, ry.as_slice(), w.rec_y / s);
        for (d, g) in d_y_res.iter_mut().zip(&g_ry) {
            *d -= g;
        }
        let dcu_y = model.rec_y.backprop(&Matrix::column(&g_ry))?;

        let k = cu.cols();
        for r in 0..b {
            for j in 0..k {
                let dc = dcu_t.get(r, j) + dcu_y.get(r, j);
                let i = r * k + j;
                dmu.as_mut_slice()[i] += dc;
                dlv.as_mut_slice()[i] += dc * e.as_slice()[i] * 0.5 * sd.as_slice()[i];
            }
        }
    }
    for (d, &raw) in dlv.as_mut_slice().iter_mut().zip(lv_raw.as_slice()) {
        if !(LOGVAR_MIN..=LOGVAR_MAX).contains(&raw) {
            *d = 0.0;
        }
    }
    let din_mu = model.gen_mu.backprop(&dmu)?;
    let din_lv = model.gen_logvar.backprop(&dlv)?;
    for r in 0..b {
        d_t_res[r] += din_mu.get(r, 0) + din_lv.get(r, 0);
        d_y_res[r] += din_mu.get(r, 1) + din_lv.get(r, 1);
    }
    Ok(VariationalPass { kl, rec_t, rec_y, d_t_res, d_y_res })
}

/// Unweighted `(KL, rec_t, rec_y)` for fixed noise, without touching any gradient.
pub fn variational_losses(
    model: &VluciModel,
    t_res: &[f64],
    y_res: &[f64],
    t: &[f64],
    eps: &[Matrix],
) -> Result<(f64, f64, f64)> {
    let post = model.encode_posterior(t_res, y_res)?;
    let samples = apply_noise(&post, eps);
    let (rt, ry) = model.loss_reconstruction(&samples, t, t_res, y_res)?;
    Ok((kl_to_prior(&post), rt, ry))
}

/// Zeroes every gradient, then accumulates `d total / d params` for all six
/// networks, with the reparameterisation noise fixed to `eps`.
///
/// With `detach_strip` the residuals are treated as constants, so the
/// prediction networks only receive the gradients of their own fits.
pub fn full_gradient(
    model: &mut VluciModel,
    batch: &Observational,
    eps: &[Matrix],
    w: &LossWeights,
    detach_strip: bool,
) -> Result<BatchLosses> {
    for net in model.nets_mut() {
        net.zero_grads();
        net.clear_tape();
    }
    let (x, t, y) = (&batch.x, &batch.t[..], &batch.y[..]);
    let b = t.len();
    let t_col = Matrix::column(t);

    let y_hat = model.pred_y.forward(&x.hcat(&t_col)?)?;
    let l_yx = loss::mse(y, y_hat.as_slice());
    model.pred_y.backprop(&Matrix::column(&loss::mse_grad(y, y_hat.as_slice(), w.y_x)))?;

    let t_hat = model.pred_t.forward(x)?;
    let l_tx = loss::loss_t_x(t, t_hat.as_slice())?;
    let mut d_t_hat: Vec<f64> = loss::loss_t_x_grad(t, t_hat.as_slice()).iter().map(|g| g * w.t_x).collect();

    let x0 = x.hcat(&Matrix::zeros(b, 1))?;
    let y0 = if detach_strip { model.pred_y.apply(&x0)? } else { model.pred_y.forward(&x0)? };
    let t_res: Vec<f64> = t.iter().zip(t_hat.as_slice()).map(|(a, p)| a - p).collect();
    let y_res: Vec<f64> = y.iter().zip(y0.as_slice()).map(|(a, p)| a - p).collect();

    let vp = variational_pass(model, &t_res, &y_res, t, eps, w)?;
    if !detach_strip {
        for (d, g) in d_t_hat.iter_mut().zip(&vp.d_t_res) {
            *d -= g;
        }
        let d_y0: Vec<f64> = vp.d_y_res.iter().map(|g| -g).collect();
        model.pred_y.backprop(&Matrix::column(&d_y0))?;
    }
    model.pred_t.backprop(&Matrix::column(&d_t_hat))?;
    Ok(BatchLosses { l_tx, l_yx, l_kl: vp.kl, l_rec_t: vp.rec_t, l_rec_y: vp.rec_y })
}

/// Optimiser state and random streams of one training run.
pub struct Trainer {
    cfg: VluciConfig,
    /// Same order as [`VluciModel::nets`].
    opt: [AdamState; 6],
    batch_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    epoch: usize,
}

const PRED: [usize; 2] = [0, 1];
const GEN: [usize; 2] = [2, 3];
const REC: [usize; 2] = [4, 5];

impl Trainer {
    pub fn new(model: &VluciModel, cfg: &VluciConfig) -> Result<Self> {
        cfg.validate()?;
        if model.cu_dim() != cfg.cu_dim {
            return Err(config_err!("model latent dim {} differs from config {}", model.cu_dim(), cfg.cu_dim));
        }
        let nets = model.nets();
        let adam = cfg.adam();
        let opt = [
            AdamState::for_net(nets[0], adam)?,
            AdamState::for_net(nets[1], adam)?,
            AdamState::for_net(nets[2], adam)?,
            AdamState::for_net(nets[3], adam)?,
            AdamState::for_net(nets[4], adam)?,
            AdamState::for_net(nets[5], adam)?,
        ];
        Ok(Self {
            cfg: cfg.clone(),
            opt,
            batch_rng: rng::stream(cfg.seed, streams::BATCHES),
            noise_rng: rng::stream(cfg.seed, streams::REPARAM),
            epoch: 0,
        })
    }

    /// Optimizer steps taken so far, per network.
    pub fn step_counts(&self) -> [u64; 6] {
        core::array::from_fn(|i| self.opt[i].step_count())
    }

    fn step_nets(&mut self, model: &mut VluciModel, which: [usize; 2]) -> Result<()> {
        let mut nets = model.nets_mut();
        for (i, net) in nets.iter_mut().enumerate() {
            if which.contains(&i) {
                self.opt[i].update(net)?;
            } else {
                net.zero_grads();
            }
        }
        Ok(())
    }

    fn noise(&mut self, rows: usize) -> Vec<Matrix> {
        draw_noise(&mut self.noise_rng, self.cfg.mc_samples, rows, self.cfg.cu_dim)
    }

    /// Stage (i): fit `pred_t` and `pred_y`.
    pub fn prediction_step(&mut self, model: &mut VluciModel, batch: &Observational) -> Result<BatchLosses> {
        let w = self.cfg.weights;
        let losses = if self.cfg.stop_gradient_between_stages {
            let t_col = Matrix::column(&batch.t);
            let t_hat = model.pred_t.forward(&batch.x)?;
            let l_tx = loss::loss_t_x(&batch.t, t_hat.as_slice())?;
            let g: Vec<f64> = loss::loss_t_x_grad(&batch.t, t_hat.as_slice()).iter().map(|g| g * w.t_x).collect();
            model.pred_t.backprop(&Matrix::column(&g))?;
            let y_hat = model.pred_y.forward(&batch.x.hcat(&t_col)?)?;
            let l_yx = loss::mse(&batch.y, y_hat.as_slice());
            model.pred_y.backprop(&Matrix::column(&loss::mse_grad(&batch.y, y_hat.as_slice(), w.y_x)))?;
            BatchLosses { l_tx, l_yx, ..Default::default() }
        } else {
            let eps = self.noise(batch.len());
            full_gradient(model, batch, &eps, &w, false)?
        };
        self.step_nets(model, PRED)?;
        Ok(losses)
    }

    fn variational_step(&mut self, model: &mut VluciModel, batch: &Observational, which: [usize; 2]) -> Result<BatchLosses> {
        let (t_res, y_res) = model.strip(&batch.x, &batch.t, &batch.y)?;
        let eps = self.noise(batch.len());
        let w = self.cfg.weights;
        let vp = variational_pass(model, &t_res, &y_res, &batch.t, &eps, &w)?;
        self.step_nets(model, which)?;
        Ok(BatchLosses { l_kl: vp.kl, l_rec_t: vp.rec_t, l_rec_y: vp.rec_y, ..Default::default() })
    }

    /// Stage (ii): update the generator on KL plus its share of reconstruction.
    pub fn generator_step(&mut self, model: &mut VluciModel, batch: &Observational) -> Result<BatchLosses> {
        self.variational_step(model, batch, GEN)
    }

    /// Stage (iii): update the reconstructors.
    pub fn reconstructor_step(&mut self, model: &mut VluciModel, batch: &Observational) -> Result<BatchLosses> {
        self.variational_step(model, batch, REC)
    }

    /// One pass over `data` in shuffled mini-batches.
    pub fn run_epoch(&mut self, model: &mut VluciModel, data: &Observational) -> Result<LossReport> {
        let epoch = self.epoch;
        let mut idx: Vec<usize> = (0..data.len()).collect();
        idx.shuffle(&mut self.batch_rng);
        let warm = epoch < self.cfg.warmup_epochs;
        let mut sum = BatchLosses::default();
        let mut n_batches = 0.0;
        for chunk in idx.chunks(self.cfg.batch_size) {
            let batch = data.select(chunk);
            let p = self.prediction_step(model, &batch)?;
            p.check_finite(epoch)?;
            let v = if warm {
                let (t_res, y_res) = model.strip(&batch.x, &batch.t, &batch.y)?;
                let eps = self.noise(batch.len());
                let (l_kl, l_rec_t, l_rec_y) = variational_losses(model, &t_res, &y_res, &batch.t, &eps)?;
                BatchLosses { l_kl, l_rec_t, l_rec_y, ..Default::default() }
            } else {
                let v = self.generator_step(model, &batch)?;
                self.reconstructor_step(model, &batch)?;
                v
            };
            let b = BatchLosses { l_tx: p.l_tx, l_yx: p.l_yx, ..v };
            b.check_finite(epoch)?;
            sum.l_tx += b.l_tx;
            sum.l_yx += b.l_yx;
            sum.l_kl += b.l_kl;
            sum.l_rec_t += b.l_rec_t;
            sum.l_rec_y += b.l_rec_y;
            n_batches += 1.0;
        }
        self.epoch += 1;
        let avg = BatchLosses {
            l_tx: sum.l_tx / n_batches,
            l_yx: sum.l_yx / n_batches,
            l_kl: sum.l_kl / n_batches,
            l_rec_t: sum.l_rec_t / n_batches,
            l_rec_y: sum.l_rec_y / n_batches,
        };
        let total = self.cfg.weights.total(&avg);
        if !total.is_finite() || model.nets().iter().any(|n| n.params().iter().any(|p| !p.is_finite())) {
            return Err(Error::Divergence { term: "total", epoch });
        }
        Ok(LossReport {
            epoch,
            l_tx: avg.l_tx,
            l_yx: avg.l_yx,
            l_kl: avg.l_kl,
            l_rec_t: avg.l_rec_t,
            l_rec_y: avg.l_rec_y,
            total,
        })
    }
}

impl VluciModel {
    /// Runs the full optimisation on observational data only and returns the
    /// per-epoch loss trajectory.
    pub fn train(&mut self, data: &Observational, cfg: &VluciConfig) -> Result<Vec<LossReport>> {
        data.validate()?;
        if data.x.cols() != self.x_dim() {
            return Err(config_err!("data has {} covariates, model expects {}", data.x.cols(), self.x_dim()));
        }
        if data.is_empty() {
            return Err(crate::error::data_err!("cannot train on an empty dataset"));
        }
        let mut trainer = Trainer::new(self, cfg)?;
        let mut history = Vec::with_capacity(cfg.epochs);
        for _ in 0..cfg.epochs {
            history.push(trainer.run_epoch(self, data)?);
        }
        self.set_trained();
        Ok(history)
    }
}

/// Mean of `total` over the first and last `frac` of the trajectory.
pub fn head_tail_means(history: &[LossReport], frac: f64) -> (f64, f64) {
    let k = ((history.len() as f64 * frac) as usize).max(1);
    let totals: Vec<f64> = history.iter().map(|r| r.total).collect();
    (math::mean(&totals[..k]), math::mean(&totals[totals.len() - k..]))
}
