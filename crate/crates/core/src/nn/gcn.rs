//! Stacked graph convolutions `H^(l) = σ(Â H^(l-1) θ_l + b_l)` with a
//! linear final layer, plus exact reverse-mode gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{Layer, ModelParams};
use crate::error::{Error, Result};
use crate::linalg::{Csr, Matrix, Real};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the pre-activation `z`.
    #[inline]
    fn derivative<T: Real>(self, z: T) -> T {
        match self {
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                T::one() - t * t
            }
            Activation::Linear => T::one(),
        }
    }
}

/// Node features fed to the first layer.
#[derive(Clone, Copy, Debug)]
pub enum Input<'a, T> {
    Dense(&'a Matrix<T>),
    Sparse(&'a Csr<T>),
}

impl<T: Real> Input<'_, T> {
    pub fn rows(&self) -> usize {
        match self {
            Input::Dense(m) => m.rows(),
            Input::Sparse(s) => s.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Input::Dense(m) => m.cols(),
            Input::Sparse(s) => s.cols(),
        }
    }
}

#[derive(Clone, Debug)]
enum OwnedInput<T> {
    Dense(Matrix<T>),
    Sparse(Csr<T>),
}

impl<T: Real> OwnedInput<T> {
    fn matmul(&self, w: &Matrix<T>) -> Result<Matrix<T>> {
        match self {
            OwnedInput::Dense(m) => m.matmul(w),
            OwnedInput::Sparse(s) => s.spmm(w),
        }
    }

    fn t_matmul(&self, g: &Matrix<T>) -> Result<Matrix<T>> {
        match self {
            OwnedInput::Dense(m) => m.t_matmul(g),
            OwnedInput::Sparse(s) => s.t_spmm(g),
        }
    }
}

/// Training-mode forward settings; `None` everywhere means inference.
pub struct Dropout<'r, R: Rng> {
    pub rate: f64,
    pub rng: &'r mut R,
}

/// Intermediate values retained for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    /// Post-dropout input of every layer.
    inputs: Vec<OwnedInput<T>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Matrix<T>>,
    /// Inverted-dropout scale per hidden unit (0 or 1/keep), one per hidden layer.
    masks: Vec<Option<Vec<T>>>,
    /// Hidden activations `H^(1)..H^(s-1)` before dropout.
    pub activations: Vec<Matrix<T>>,
    activation: Activation,
}

impl<T: Real> ForwardTrace<T> {
    /// Activations of the last hidden layer (the node representations).
    pub fn last_hidden(&self) -> Option<&Matrix<T>> {
        self.activations.last()
    }
}

fn propagate<T: Real>(adj: Option<&Csr<T>>, m: Matrix<T>) -> Result<Matrix<T>> {
    match adj {
        Some(a) => a.spmm(&m),
        None => Ok(m),
    }
}

fn propagate_t<T: Real>(adj: Option<&Csr<T>>, m: Matrix<T>) -> Result<Matrix<T>> {
    match adj {
        Some(a) => a.t_spmm(&m),
        None => Ok(m),
    }
}

fn dropout_mask<T: Real, R: Rng>(len: usize, rate: f64, rng: &mut R) -> Vec<T> {
    let keep = 1.0 - rate;
    let scale = T::from_f64(1.0 / keep);
    (0..len)
        .map(|_| if rng.random::<f64>() < keep { scale } else { T::zero() })
        .collect()
}

/// Runs the network. `adj = None` propagates with the identity, i.e. a
/// plain multi-layer perceptron.
pub fn gcn_forward<T: Real, R: Rng>(
    params: &ModelParams<T>,
    adj: Option<&Csr<T>>,
    x: Input<'_, T>,
    activation: Activation,
    mut dropout: Option<Dropout<'_, R>>,
) -> Result<(Matrix<T>, ForwardTrace<T>)> {
    if x.cols() != params.input_dim() {
        return Err(Error::Shape {
            op: "gcn_forward",
            detail: format!("input has {} columns, model expects {}", x.cols(), params.input_dim()),
        });
    }
    if let Some(a) = adj {
        if a.cols() != x.rows() {
            return Err(Error::Shape {
                op: "gcn_forward",
                detail: format!("adjacency is {}x{}, input has {} rows", a.rows(), a.cols(), x.rows()),
            });
        }
    }
    let rate = dropout.as_ref().map_or(0.0, |d| d.rate);
    let active = rate > 0.0;

    let first = match x {
        Input::Dense(m) => {
            let mut m = m.clone();
            if let (true, Some(d)) = (active, dropout.as_mut()) {
                let mask = dropout_mask::<T, R>(m.as_slice().len(), rate, d.rng);
                m.as_mut_slice().iter_mut().zip(mask).for_each(|(v, s)| *v = *v * s);
            }
            OwnedInput::Dense(m)
        }
        Input::Sparse(s) => {
            let mut s = s.clone();
            if let (true, Some(d)) = (active, dropout.as_mut()) {
                let mask = dropout_mask::<T, R>(s.nnz(), rate, d.rng);
                s.values_mut().iter_mut().zip(mask).for_each(|(v, m)| *v = *v * m);
            }
            OwnedInput::Sparse(s)
        }
    };

    let s = params.depth();
    let mut trace = ForwardTrace {
        inputs: Vec::with_capacity(s),
        pre: Vec::with_capacity(s.saturating_sub(1)),
        masks: Vec::with_capacity(s.saturating_sub(1)),
        activations: Vec::with_capacity(s.saturating_sub(1)),
        activation,
    };
    let mut current = first;
    for (l, layer) in params.layers.iter().enumerate() {
        let mut z = propagate(adj, current.matmul(&layer.weight)?)?;
        if let Some(b) = &layer.bias {
            for i in 0..z.rows() {
                z.row_mut(i).iter_mut().zip(b).for_each(|(v, &bj)| *v = *v + bj);
            }
        }
        if !z.is_finite() {
            return Err(Error::NonFinite { layer: l });
        }
        trace.inputs.push(current);
        if l + 1 == s {
            return Ok((z, trace));
        }
        let h = z.map(|v| activation.apply(v));
        let mut next = h.clone();
        let mask = if active {
            let d = dropout.as_mut().expect("active implies dropout");
            let mask = dropout_mask::<T, R>(next.as_slice().len(), rate, d.rng);
            next.as_mut_slice().iter_mut().zip(&mask).for_each(|(v, &m)| *v = *v * m);
            Some(mask)
        } else {
            None
        };
        trace.pre.push(z);
        trace.masks.push(mask);
        trace.activations.push(h);
        current = OwnedInput::Dense(next);
    }
    Err(Error::Shape {
        op: "gcn_forward",
        detail: "model has no layers".into(),
    })
}

/// Inference-mode forward pass.
pub fn gcn_predict<T: Real>(
    params: &ModelParams<T>,
    adj: Option<&Csr<T>>,
    x: Input<'_, T>,
    activation: Activation,
) -> Result<(Matrix<T>, ForwardTrace<T>)> {
    gcn_forward::<T, rand_chacha::ChaCha8Rng>(params, adj, x, activation, None)
}

/// Gradients of the traced computation given `∂L/∂logits`. `weight_decay`
/// adds `wd·θ_1` (the gradient of `wd/2·‖θ_1‖²`) to the first layer.
pub fn backward<T: Real>(
    params: &ModelParams<T>,
    trace: &ForwardTrace<T>,
    adj: Option<&Csr<T>>,
    grad_logits: &Matrix<T>,
    weight_decay: T,
) -> Result<ModelParams<T>> {
    let s = params.depth();
    if trace.inputs.len() != s {
        return Err(Error::Shape {
            op: "backward",
            detail: format!("trace has {} layers, model {}", trace.inputs.len(), s),
        });
    }
    if grad_logits.cols() != params.output_dim() || grad_logits.rows() != trace.inputs[0_usize].rows() {
        return Err(Error::Shape {
            op: "backward",
            detail: format!(
                "grad is {}x{}, expected {}x{}",
                grad_logits.rows(),
                grad_logits.cols(),
                trace.inputs[0].rows(),
                params.output_dim()
            ),
        });
    }

    let mut grads: Vec<Layer<T>> = Vec::with_capacity(s);
    let mut dz = grad_logits.clone();
    for l in (0..s).rev() {
        let layer = &params.layers[l];
        let db = layer.bias.as_ref().map(|_| {
            let mut acc = vec![T::zero(); dz.cols()];
            for i in 0..dz.rows() {
                acc.iter_mut().zip(dz.row(i)).for_each(|(a, &g)| *a = *a + g);
            }
            acc
        });
        let dp = propagate_t(adj, dz)?;
        let mut dw = trace.inputs[l].t_matmul(&dp)?;
        if l == 0 && weight_decay != T::zero() {
            dw.as_mut_slice()
                .iter_mut()
                .zip(layer.weight.as_slice())
                .for_each(|(g, &w)| *g = *g + weight_decay * w);
        }
        grads.push(Layer { weight: dw, bias: db });
        if l == 0 {
            break;
        }
        let mut dh = dp.matmul_t(&layer.weight)?;
        if let Some(mask) = &trace.masks[l - 1] {
            dh.as_mut_slice().iter_mut().zip(mask).for_each(|(g, &m)| *g = *g * m);
        }
        let pre = &trace.pre[l - 1];
        dh.as_mut_slice()
            .iter_mut()
            .zip(pre.as_slice())
            .for_each(|(g, &z)| *g = *g * trace.activation.derivative(z));
        dz = dh;
    }
    grads.reverse();
    Ok(ModelParams { layers: grads })
}

impl<T: Real> OwnedInput<T> {
    fn rows(&self) -> usize {
        match self {
            OwnedInput::Dense(m) => m.rows(),
            OwnedInput::Sparse(s) => s.rows(),
        }
    }
}
