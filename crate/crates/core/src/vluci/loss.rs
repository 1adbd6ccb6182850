//! The five VLUCI objectives and their derivatives.

use alloc::vec::Vec;

use crate::error::{config_err, Result};
use crate::math;
use crate::nn::Matrix;
use crate::synth::check_binary;

/// Log-variance bounds of the variational posterior.
pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

const PROB_FLOOR: f64 = 1e-15;

/// Diagonal Gaussian `q(Cu | t', y')` for a batch of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGaussian {
    pub mu: Matrix,
    pub logvar: Matrix,
}

impl PosteriorGaussian {
    pub fn new(mu: Matrix, logvar: Matrix) -> Result<Self> {
        if mu.rows() != logvar.rows() || mu.cols() != logvar.cols() {
            return Err(config_err!("posterior mean and log-variance shapes differ"));
        }
        Ok(Self { mu, logvar: logvar.map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX)) })
    }

    pub fn rows(&self) -> usize {
        self.mu.rows()
    }

    pub fn dim(&self) -> usize {
        self.mu.cols()
    }

    pub fn std_dev(&self) -> Matrix {
        self.logvar.map(|lv| math::exp(0.5 * lv))
    }

    /// Per-row `KL(q || N(0, I))`.
    pub fn kl_per_row(&self) -> Vec<f64> {
        (0..self.rows())
            .map(|r| {
                self.mu
                    .row(r)
                    .iter()
                    .zip(self.logvar.row(r))
                    .map(|(&m, &lv)| 0.5 * (math::exp(lv) + m * m - 1.0 - lv))
                    .sum()
            })
            .collect()
    }
}

/// Mean binary cross-entropy between labels `t` and probabilities `t_hat`.
pub fn loss_t_x(t: &[f64], t_hat: &[f64]) -> Result<f64> {
    same_len(t, t_hat)?;
    check_binary(t)?;
    let n = t.len() as f64;
    Ok(t.iter()
        .zip(t_hat)
        .map(|(&ti, &pi)| {
            let p = pi.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            -(ti * math::ln(p) + (1.0 - ti) * math::ln(1.0 - p))
        })
        .sum::<f64>()
        / n)
}

/// `d loss_t_x / d t_hat`.
pub fn loss_t_x_grad(t: &[f64], t_hat: &[f64]) -> Vec<f64> {
    let n = t.len() as f64;
    t.iter()
        .zip(t_hat)
        .map(|(&ti, &pi)| {
            let p = pi.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            (p - ti) / (p * (1.0 - p)) / n
        })
        .collect()
}

/// Mean squared error.
pub fn loss_y_x(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    same_len(y, y_hat)?;
    Ok(mse(y, y_hat))
}

pub(crate) fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// `d mse(target, pred) / d pred`, scaled by `weight`.
pub(crate) fn mse_grad(target: &[f64], pred: &[f64], weight: f64) -> Vec<f64> {
    let n = target.len() as f64;
    target.iter().zip(pred).map(|(t, p)| weight * 2.0 * (p - t) / n).collect()
}

/// Batch mean of `KL(N(mu, diag(exp(logvar))) || N(0, I))`.
pub fn kl_to_prior(post: &PosteriorGaussian) -> f64 {
    let per_row = post.kl_per_row();
    if per_row.is_empty() {
        return 0.0;
    }
    math::mean(&per_row)
}

/// Gradients of [`kl_to_prior`] with respect to `mu` and the (clamped) `logvar`.
pub fn kl_to_prior_grad(post: &PosteriorGaussian) -> (Matrix, Matrix) {
    let b = post.rows() as f64;
    let dmu = post.mu.map(|m| m / b);
    let dlv = post.logvar.map(|lv| 0.5 * (math::exp(lv) - 1.0) / b);
    (dmu, dlv)
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(config_err!("length mismatch: {} vs {}", a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(config_err!("loss of an empty batch"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn cross_entropy_examples() {
        assert!(loss_t_x(&[1.0], &[1.0 - 1e-12]).unwrap() < 1e-11);
        assert!((loss_t_x(&[1.0, 0.0], &[0.5, 0.5]).unwrap() - core::f64::consts::LN_2).abs() < 1e-12);
        assert!((loss_t_x(&[0.0], &[0.9]).unwrap() - 2.302585092994046).abs() < 1e-9);
        assert!(matches!(loss_t_x(&[0.5], &[0.5]), Err(Error::Data(_))));
    }

    #[test]
    fn mse_examples() {
        assert_eq!(loss_y_x(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(loss_y_x(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(loss_y_x(&[1.0, 3.0], &[2.0, 5.0]).unwrap(), 2.5);
        assert!(loss_y_x(&[1.0], &[1.0, 2.0]).is_err());
    }

    fn post1(mu: f64, lv: f64) -> PosteriorGaussian {
        PosteriorGaussian::new(Matrix::column(&[mu]), Matrix::column(&[lv])).unwrap()
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_to_prior(&post1(0.0, 0.0)), 0.0);
        assert!((kl_to_prior(&post1(1.0, 0.0)) - 0.5).abs() < 1e-15);
        assert!((kl_to_prior(&post1(0.0, 1.0)) - 0.5 * (core::f64::consts::E - 2.0)).abs() < 1e-15);
        assert!((kl_to_prior(&post1(0.0, 1.0)) - 0.3591).abs() < 1e-4);
    }

    #[test]
    fn logvar_is_clamped() {
        let p = PosteriorGaussian::new(Matrix::column(&[0.0, 0.0]), Matrix::column(&[-50.0, 50.0])).unwrap();
        assert_eq!(p.logvar.as_slice(), &[LOGVAR_MIN, LOGVAR_MAX]);
    }

    #[test]
    fn kl_gradient_matches_differences() {
        let mu = Matrix::from_rows(&[&[0.3, -1.2], &[0.8, 0.1]]).unwrap();
        let lv = Matrix::from_rows(&[&[-0.4, 0.9], &[0.2, -2.0]]).unwrap();
        let post = PosteriorGaussian::new(mu.clone(), lv.clone()).unwrap();
        let (dmu, dlv) = kl_to_prior_grad(&post);
        let h = 1e-6;
        for i in 0..4 {
            let mut m2 = mu.clone();
            m2.as_mut_slice()[i] += h;
            let mut m3 = mu.clone();
            m3.as_mut_slice()[i] -= h;
            let fd = (kl_to_prior(&PosteriorGaussian::new(m2, lv.clone()).unwrap())
                - kl_to_prior(&PosteriorGaussian::new(m3, lv.clone()).unwrap()))
                / (2.0 * h);
            assert!((fd - dmu.as_slice()[i]).abs() < 1e-8);
            let mut l2 = lv.clone();
            l2.as_mut_slice()[i] += h;
            let mut l3 = lv.clone();
            l3.as_mut_slice()[i] -= h;
            let fd = (kl_to_prior(&PosteriorGaussian::new(mu.clone(), l2).unwrap())
                - kl_to_prior(&PosteriorGaussian::new(mu.clone(), l3).unwrap()))
                / (2.0 * h);
            assert!((fd - dlv.as_slice()[i]).abs() < 1e-8);
        }
    }
}
