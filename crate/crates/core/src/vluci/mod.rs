//! The VLUCI model: prediction networks that estimate the direct effect of the
//! covariates, a variational generator for `q(Cu | t', y')`, and reconstructor
//! networks for the stripped treatment and outcome.

mod loss;
mod train;

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

pub use loss::{
    kl_to_prior, kl_to_prior_grad, loss_t_x, loss_t_x_grad, loss_y_x, PosteriorGaussian, LOGVAR_MAX, LOGVAR_MIN,
};
pub use train::{full_gradient, head_tail_means, variational_losses, BatchLosses, LossReport, Trainer};

use crate::error::{config_err, data_err, Error, Result};
use crate::nn::{Activation, AdamConfig, Matrix, Mlp};
use crate::rng::{self, streams};
use crate::synth::check_binary;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LossWeights {
    pub t_x: f64,
    pub y_x: f64,
    pub kl: f64,
    pub rec_t: f64,
    pub rec_y: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { t_x: 1.0, y_x: 1.0, kl: 1.0, rec_t: 1.0, rec_y: 1.0 }
    }
}

impl LossWeights {
    pub fn total(&self, l: &BatchLosses) -> f64 {
        self.t_x * l.l_tx + self.y_x * l.l_yx + self.kl * l.l_kl + self.rec_t * l.l_rec_t + self.rec_y * l.l_rec_y
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct VluciConfig {
    pub cu_dim: usize,
    pub pred_t_hidden: Vec<usize>,
    pub pred_y_hidden: Vec<usize>,
    pub gen_hidden: Vec<usize>,
    pub rec_t_hidden: Vec<usize>,
    pub rec_y_hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
    pub warmup_epochs: usize,
    pub stop_gradient_between_stages: bool,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for VluciConfig {
    fn default() -> Self {
        Self {
            cu_dim: 1,
            pred_t_hidden: vec![64, 64],
            pred_y_hidden: vec![64, 64],
            gen_hidden: vec![32, 32],
            rec_t_hidden: vec![32, 32],
            rec_y_hidden: vec![32, 32],
            hidden_activation: Activation::Tanh,
            epochs: 60,
            batch_size: 256,
            learning_rate: 2e-3,
            weights: LossWeights::default(),
            warmup_epochs: 0,
            stop_gradient_between_stages: true,
            mc_samples: 1,
            seed: 0,
        }
    }
}

impl VluciConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cu_dim == 0 {
            return Err(config_err!("vluci.cu_dim must be positive"));
        }
        if self.epochs == 0 {
            return Err(config_err!("vluci.epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(config_err!("vluci.batch_size must be at least 1"));
        }
        if self.mc_samples == 0 {
            return Err(config_err!("vluci.mc_samples must be at least 1"));
        }
        let w = &self.weights;
        for (name, v) in [("t_x", w.t_x), ("y_x", w.y_x), ("kl", w.kl), ("rec_t", w.rec_t), ("rec_y", w.rec_y)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config_err!("vluci.weights.{name} must be a finite non-negative number, got {v}"));
            }
        }
        for (name, h) in [
            ("pred_t_hidden", &self.pred_t_hidden),
            ("pred_y_hidden", &self.pred_y_hidden),
            ("gen_hidden", &self.gen_hidden),
            ("rec_t_hidden", &self.rec_t_hidden),
            ("rec_y_hidden", &self.rec_y_hidden),
        ] {
            if h.contains(&0) {
                return Err(config_err!("vluci.{name} contains a zero-width layer"));
            }
        }
        self.adam().validate().map_err(|_| config_err!("vluci.learning_rate must be positive, got {}", self.learning_rate))
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::with_lr(self.learning_rate)
    }
}

fn dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut d = Vec::with_capacity(hidden.len() + 2);
    d.push(input);
    d.extend_from_slice(hidden);
    d.push(output);
    d
}

#[derive(Debug, Clone)]
pub struct VluciModel {
    /// `X -> P(t = 1 | X)`.
    pub pred_t: Mlp,
    /// `(X, t) -> E[y | X, t]`.
    pub pred_y: Mlp,
    /// `(t', y') -> mu`.
    pub gen_mu: Mlp,
    /// `(t', y') -> log sigma^2`.
    pub gen_logvar: Mlp,
    /// `Cu -> t'`.
    pub rec_t: Mlp,
    /// `(Cu, t) -> y'`.
    pub rec_y: Mlp,
    x_dim: usize,
    cu_dim: usize,
    trained: bool,
}

impl VluciModel {
    /// All six networks with zero parameters.
    pub fn zeroed(cfg: &VluciConfig, x_dim: usize) -> Result<Self> {
        if x_dim == 0 {
            return Err(config_err!("covariate dimension must be positive"));
        }
        let h = cfg.hidden_activation;
        let k = cfg.cu_dim;
        Ok(Self {
            pred_t: Mlp::new(&dims(x_dim, &cfg.pred_t_hidden, 1), h, Activation::Sigmoid)?,
            pred_y: Mlp::new(&dims(x_dim + 1, &cfg.pred_y_hidden, 1), h, Activation::Identity)?,
            gen_mu: Mlp::new(&dims(2, &cfg.gen_hidden, k), h, Activation::Identity)?,
            gen_logvar: Mlp::new(&dims(2, &cfg.gen_hidden, k), h, Activation::Identity)?,
            rec_t: Mlp::new(&dims(k, &cfg.rec_t_hidden, 1), h, Activation::Identity)?,
            rec_y: Mlp::new(&dims(k + 1, &cfg.rec_y_hidden, 1), h, Activation::Identity)?,
            x_dim,
            cu_dim: k,
            trained: false,
        })
    }

    /// Glorot-initialised model; the draws come from `(cfg.seed, INIT)`.
    pub fn new(cfg: &VluciConfig, x_dim: usize) -> Result<Self> {
        cfg.validate()?;
        let mut model = Self::zeroed(cfg, x_dim)?;
        let mut rng = rng::stream(cfg.seed, streams::INIT);
        for net in model.nets_mut() {
            net.init_glorot(&mut rng);
        }
        Ok(model)
    }

    /// Reassembles a model from its six networks, checking that their shapes agree.
    pub fn from_nets(nets: [Mlp; 6], trained: bool) -> Result<Self> {
        let [pred_t, pred_y, gen_mu, gen_logvar, rec_t, rec_y] = nets;
        let x_dim = pred_t.in_dim();
        let cu_dim = gen_mu.out_dim();
        let ok = pred_t.out_dim() == 1
            && pred_y.in_dim() == x_dim + 1
            && pred_y.out_dim() == 1
            && gen_mu.in_dim() == 2
            && gen_logvar.in_dim() == 2
            && gen_logvar.out_dim() == cu_dim
            && rec_t.in_dim() == cu_dim
            && rec_t.out_dim() == 1
            && rec_y.in_dim() == cu_dim + 1
            && rec_y.out_dim() == 1;
        if !ok {
            return Err(config_err!("network shapes are mutually inconsistent"));
        }
        Ok(Self { pred_t, pred_y, gen_mu, gen_logvar, rec_t, rec_y, x_dim, cu_dim, trained })
    }

    pub fn nets(&self) -> [&Mlp; 6] {
        [&self.pred_t, &self.pred_y, &self.gen_mu, &self.gen_logvar, &self.rec_t, &self.rec_y]
    }

    pub fn nets_mut(&mut self) -> [&mut Mlp; 6] {
        [
            &mut self.pred_t,
            &mut self.pred_y,
            &mut self.gen_mu,
            &mut self.gen_logvar,
            &mut self.rec_t,
            &mut self.rec_y,
        ]
    }

    pub fn x_dim(&self) -> usize {
        self.x_dim
    }

    pub fn cu_dim(&self) -> usize {
        self.cu_dim
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Marks externally supplied parameters as ready for inference.
    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    fn check_rows(&self, x: &Matrix, t: &[f64], y: &[f64]) -> Result<()> {
        if x.cols() != self.x_dim {
            return Err(config_err!("covariates have {} columns, model expects {}", x.cols(), self.x_dim));
        }
        if t.len() != x.rows() || y.len() != x.rows() {
            return Err(config_err!("X has {} rows but t has {} and y has {}", x.rows(), t.len(), y.len()));
        }
        check_binary(t)
    }

    /// Estimated direct effects of the covariates: `pred_t(X)` and `pred_y(X, t = 0)`.
    pub fn direct_effects(&self, x: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
        let t_hat = self.pred_t.apply(x)?.into_vec();
        let y0 = self.pred_y.apply(&x.hcat(&Matrix::zeros(x.rows(), 1))?)?.into_vec();
        Ok((t_hat, y0))
    }

    /// Residuals `t' = t - pred_t(X)` and `y' = y - pred_y(X, 0)`.
    pub fn strip(&self, x: &Matrix, t: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_rows(x, t, y)?;
        let (t_hat, y0) = self.direct_effects(x)?;
        let t_res = t.iter().zip(&t_hat).map(|(a, b)| a - b).collect();
        let y_res = y.iter().zip(&y0).map(|(a, b)| a - b).collect();
        Ok((t_res, y_res))
    }

    pub fn encode_posterior(&self, t_res: &[f64], y_res: &[f64]) -> Result<PosteriorGaussian> {
        if t_res.len() != y_res.len() {
            return Err(config_err!("t' has {} rows, y' has {}", t_res.len(), y_res.len()));
        }
        let input = generator_input(t_res, y_res);
        if !input.is_finite() {
            return Err(data_err!("stripped residuals contain non-finite values"));
        }
        PosteriorGaussian::new(self.gen_mu.apply(&input)?, self.gen_logvar.apply(&input)?)
    }

    /// Average reconstruction errors `(MSE(t', rec_t(Cu)), MSE(y', rec_y(Cu, t)))`
    /// over the supplied Monte Carlo samples.
    pub fn loss_reconstruction(
        &self,
        cu_samples: &[Matrix],
        t: &[f64],
        t_res: &[f64],
        y_res: &[f64],
    ) -> Result<(f64, f64)> {
        if cu_samples.is_empty() {
            return Err(config_err!("at least one confounder sample is required"));
        }
        let (mut lt, mut ly) = (0.0, 0.0);
        let t_col = Matrix::column(t);
        for cu in cu_samples {
            if cu.rows() != t.len() || t_res.len() != t.len() || y_res.len() != t.len() {
                return Err(config_err!("reconstruction inputs disagree in row count"));
            }
            lt += loss_y_x(t_res, self.rec_t.apply(cu)?.as_slice())?;
            ly += loss_y_x(y_res, self.rec_y.apply(&cu.hcat(&t_col)?)?.as_slice())?;
        }
        let s = cu_samples.len() as f64;
        Ok((lt / s, ly / s))
    }

    fn ensure_trained(&self) -> Result<()> {
        if self.trained {
            Ok(())
        } else {
            Err(Error::State(alloc::string::String::from("model has not been trained")))
        }
    }

    /// Posterior mean of `Cu` for each row, used as the learned confounder.
    pub fn infer_confounder(&self, x: &Matrix, t: &[f64], y: &[f64]) -> Result<Matrix> {
        self.ensure_trained()?;
        let (t_res, y_res) = self.strip(x, t, y)?;
        Ok(self.encode_posterior(&t_res, &y_res)?.mu)
    }

    pub fn posterior(&self, x: &Matrix, t: &[f64], y: &[f64]) -> Result<PosteriorGaussian> {
        let (t_res, y_res) = self.strip(x, t, y)?;
        self.encode_posterior(&t_res, &y_res)
    }

    /// Mean per-row `KL(q || N(0, I))`. Values near zero mean the posterior has
    /// collapsed onto the prior, i.e. no confounding signal was found.
    pub fn prior_collapse_diagnostic(&self, x: &Matrix, t: &[f64], y: &[f64]) -> Result<f64> {
        Ok(kl_to_prior(&self.posterior(x, t, y)?))
    }

    pub(crate) fn set_trained(&mut self) {
        self.trained = true;
    }
}

pub(crate) fn generator_input(t_res: &[f64], y_res: &[f64]) -> Matrix {
    let mut data = Vec::with_capacity(2 * t_res.len());
    for (a, b) in t_res.iter().zip(y_res) {
        data.push(*a);
        data.push(*b);
    }
    Matrix::from_vec(t_res.len(), 2, data).expect("two columns")
}

/// Standard normal noise for `samples` reparameterised draws.
pub fn draw_noise<R: Rng + ?Sized>(rng: &mut R, samples: usize, rows: usize, dim: usize) -> Vec<Matrix> {
    (0..samples)
        .map(|_| {
            let data = (0..rows * dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            Matrix::from_vec(rows, dim, data).expect("sized")
        })
        .collect()
}

/// `mu + exp(logvar / 2) * eps` for each noise matrix.
pub fn apply_noise(post: &PosteriorGaussian, eps: &[Matrix]) -> Vec<Matrix> {
    let sd = post.std_dev();
    eps.iter()
        .map(|e| {
            let mut cu = post.mu.clone();
            for ((c, s), z) in cu.as_mut_slice().iter_mut().zip(sd.as_slice()).zip(e.as_slice()) {
                *c += s * z;
            }
            cu
        })
        .collect()
}

/// `S` reparameterised samples from the posterior.
pub fn reparameterize<R: Rng + ?Sized>(post: &PosteriorGaussian, rng: &mut R, samples: usize) -> Result<Vec<Matrix>> {
    if samples == 0 {
        return Err(config_err!("at least one sample is required"));
    }
    let eps = draw_noise(rng, samples, post.rows(), post.dim());
    Ok(apply_noise(post, &eps))
}
