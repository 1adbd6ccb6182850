//! Dense feed-forward network with layer-wise reverse-mode differentiation.
//!
//! Parameters live in one flat vector. For each layer the row-major weight
//! block `(out_dim, in_dim)` is followed by its `out_dim` biases; `grads`
//! mirrors that layout exactly.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::Matrix;
use crate::error::{config_err, data_err, Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Activation {
    Sigmoid,
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Sigmoid => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
            Activation::Identity => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Activation::Sigmoid,
            1 => Activation::Relu,
            2 => Activation::Tanh,
            3 => Activation::Identity,
            _ => return None,
        })
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => math::sigmoid(z),
            Activation::Relu => z.max(0.0),
            Activation::Tanh => math::tanh(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                if z.abs() > math::SIGMOID_CLAMP {
                    0.0
                } else {
                    a * (1.0 - a)
                }
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone)]
struct Tape {
    /// Input of each layer; `inputs[0]` is the network input.
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
}

/// Multilayer perceptron with flat parameter and gradient storage.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "MlpRecord", into = "MlpRecord"))]
pub struct Mlp {
    layer_dims: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
    grads: Vec<f64>,
    tape: Option<Tape>,
}

/// Serializable view of an [`Mlp`]: architecture plus parameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MlpRecord {
    pub layer_dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub params: Vec<f64>,
}

impl From<Mlp> for MlpRecord {
    fn from(net: Mlp) -> Self {
        Self { layer_dims: net.layer_dims, activations: net.activations, params: net.params }
    }
}

impl TryFrom<MlpRecord> for Mlp {
    type Error = Error;

    fn try_from(rec: MlpRecord) -> Result<Self> {
        let mut net = Mlp::with_activations(&rec.layer_dims, &rec.activations)?;
        if rec.params.len() != net.params.len() {
            return Err(config_err!(
                "parameter vector has {} entries, architecture needs {}",
                rec.params.len(),
                net.params.len()
            ));
        }
        net.params = rec.params;
        Ok(net)
    }
}

impl Mlp {
    /// Zero-initialised network. Hidden layers use `hidden`, the last layer `output`.
    pub fn new(layer_dims: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        let n_layers = layer_dims.len().saturating_sub(1);
        let mut acts = vec![hidden; n_layers];
        if let Some(last) = acts.last_mut() {
            *last = output;
        }
        Self::with_activations(layer_dims, &acts)
    }

    pub fn with_activations(layer_dims: &[usize], activations: &[Activation]) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(config_err!("an mlp needs at least input and output dims"));
        }
        if layer_dims.contains(&0) {
            return Err(config_err!("layer dims must be positive, got {layer_dims:?}"));
        }
        if activations.len() != layer_dims.len() - 1 {
            return Err(config_err!(
                "{} activations given for {} layers",
                activations.len(),
                layer_dims.len() - 1
            ));
        }
        let n = param_count(layer_dims);
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            activations: activations.to_vec(),
            params: vec![0.0; n],
            grads: vec![0.0; n],
            tape: None,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_glorot<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let mut offset = 0;
        for l in 0..self.n_layers() {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let limit = math::sqrt(6.0 / (fan_in + fan_out) as f64);
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite glorot bound");
            for w in &mut self.params[offset..offset + fan_in * fan_out] {
                *w = dist.sample(rng);
            }
            offset += fan_in * fan_out;
            self.params[offset..offset + fan_out].fill(0.0);
            offset += fan_out;
        }
    }

    pub fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn in_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn out_dim(&self) -> usize {
        self.layer_dims[self.layer_dims.len() - 1]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn zero_grads(&mut self) {
        self.grads.fill(0.0);
    }

    /// Drops a recorded forward pass without differentiating it.
    pub fn clear_tape(&mut self) {
        self.tape = None;
    }

    pub fn has_tape(&self) -> bool {
        self.tape.is_some()
    }

    pub(crate) fn grads_and_params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.params, &mut self.grads)
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.in_dim() {
            return Err(config_err!(
                "input has {} columns, network expects {}",
                batch.cols(),
                self.in_dim()
            ));
        }
        if !batch.is_finite() {
            return Err(data_err!("network input contains non-finite values"));
        }
        Ok(())
    }

    /// Inference-only forward pass; records nothing.
    pub fn apply(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_input(batch)?;
        let mut a = batch.clone();
        let mut offset = 0;
        for l in 0..self.n_layers() {
            let (z, next) = self.affine(l, &a, &mut offset);
            a = z.map(|v| self.activations[l].apply(v));
            offset = next;
        }
        Ok(a)
    }

    /// Forward pass that records activations for a subsequent [`Mlp::backprop`].
    pub fn forward(&mut self, batch: &Matrix) -> Result<Matrix> {
        self.check_input(batch)?;
        let mut tape = Tape {
            inputs: Vec::with_capacity(self.n_layers()),
            pre: Vec::with_capacity(self.n_layers()),
            post: Vec::with_capacity(self.n_layers()),
        };
        let mut a = batch.clone();
        let mut offset = 0;
        for l in 0..self.n_layers() {
            let (z, next) = self.affine(l, &a, &mut offset);
            let out = z.map(|v| self.activations[l].apply(v));
            tape.inputs.push(a);
            tape.pre.push(z);
            a = out.clone();
            tape.post.push(out);
            offset = next;
        }
        self.tape = Some(tape);
        Ok(a)
    }

    fn affine(&self, l: usize, a: &Matrix, offset: &mut usize) -> (Matrix, usize) {
        let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
        let w = &self.params[*offset..*offset + n_in * n_out];
        let b = &self.params[*offset + n_in * n_out..*offset + n_in * n_out + n_out];
        let mut z = Matrix::zeros(a.rows(), n_out);
        for r in 0..a.rows() {
            let x = a.row(r);
            let zr = z.row_mut(r);
            for o in 0..n_out {
                let wr = &w[o * n_in..(o + 1) * n_in];
                let mut acc = b[o];
                for (wi, xi) in wr.iter().zip(x) {
                    acc += wi * xi;
                }
                zr[o] = acc;
            }
        }
        (z, *offset + n_in * n_out + n_out)
    }

    /// Reverse pass of the recorded forward. `upstream` is `dloss/doutput`;
    /// parameter gradients are accumulated into `grads` and `dloss/dinput` is returned.
    pub fn backprop(&mut self, upstream: &Matrix) -> Result<Matrix> {
        let tape = self
            .tape
            .take()
            .ok_or_else(|| Error::State(String::from("backprop called without a recorded forward pass")))?;
        let rows = tape.inputs[0].rows();
        if upstream.rows() != rows || upstream.cols() != self.out_dim() {
            return Err(config_err!(
                "upstream gradient is {}x{}, expected {}x{}",
                upstream.rows(),
                upstream.cols(),
                rows,
                self.out_dim()
            ));
        }
        let mut offsets = Vec::with_capacity(self.n_layers());
        let mut off = 0;
        for l in 0..self.n_layers() {
            offsets.push(off);
            off += self.layer_dims[l] * self.layer_dims[l + 1] + self.layer_dims[l + 1];
        }

        let mut delta = upstream.clone();
        for l in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let act = self.activations[l];
            let (z, a, x) = (&tape.pre[l], &tape.post[l], &tape.inputs[l]);
            for (d, (&zv, &av)) in delta.as_mut_slice().iter_mut().zip(z.as_slice().iter().zip(a.as_slice())) {
                *d *= act.derivative(zv, av);
            }
            let base = offsets[l];
            let mut dx = Matrix::zeros(rows, n_in);
            let (w_all, g_all) = (&self.params[base..], &mut self.grads[base..]);
            for r in 0..rows {
                let xr = x.row(r);
                let dr = delta.row(r);
                let dxr = dx.row_mut(r);
                for o in 0..n_out {
                    let dz = dr[o];
                    if dz == 0.0 {
                        continue;
                    }
                    let gw = &mut g_all[o * n_in..(o + 1) * n_in];
                    for (g, xi) in gw.iter_mut().zip(xr) {
                        *g += dz * xi;
                    }
                    let wr = &w_all[o * n_in..(o + 1) * n_in];
                    for (dxi, wi) in dxr.iter_mut().zip(wr) {
                        *dxi += dz * wi;
                    }
                    g_all[n_in * n_out + o] += dz;
                }
            }
            delta = dx;
        }
        Ok(delta)
    }
}

pub fn param_count(layer_dims: &[usize]) -> usize {
    layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}
