//! Small dense-array toolkit with reverse-mode gradients: dense layers, 1D
//! convolutions and their transposes, batch normalization, ReLU/Tanh and
//! Adam/AdamW.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use graph::{Activation, Gradients, Graph, Mode, RunningStats, Var};
pub use kernels::{conv1d_output_length, transposed_output_length, ConvSpec, BN_EPS, BN_MOMENTUM};
pub use layers::{BatchNorm1d, Conv1d, ConvTranspose1d, Dense};
pub use optim::{adam_step, OptimHyper, OptimKind};
pub use params::{ParamId, ParameterStore};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Running mean and (unbiased) variance buffers of a normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningBuffers {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningBuffers {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

pub fn conv1d_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: &ConvSpec) -> Result<Tensor> {
    kernels::conv1d_fwd(x, w, b, spec, false).map(|(y, _)| y)
}

pub fn transposed_conv1d_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: &ConvSpec) -> Result<Tensor> {
    kernels::conv_transpose1d_fwd(x, w, b, spec)
}

pub fn dense_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    kernels::dense_fwd(x, w, b)
}

pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    match kind {
        Activation::Relu => x.map(|v| v.max(0.0)),
        Activation::Tanh => x.map(f64::tanh),
    }
}

pub fn batch_norm1d(
    x: &Tensor,
    scale: &Tensor,
    shift: &Tensor,
    running: &mut RunningBuffers,
    mode: Mode,
) -> Result<Tensor> {
    let (b, c, l) = kernels::bn_dims(x)?;
    if running.mean.len() != c || running.var.len() != c {
        return Err(Error::shape(format!("running stats for {} channels, input has {c}", running.mean.len())));
    }
    let (mean, var) = match mode {
        Mode::Train => {
            if b < 2 {
                return Err(Error::DegenerateBatch);
            }
            let (m, v) = kernels::channel_stats(x)?;
            let n = (b * l) as f64;
            for ch in 0..c {
                running.mean[ch] = (1.0 - BN_MOMENTUM) * running.mean[ch] + BN_MOMENTUM * m[ch];
                running.var[ch] = (1.0 - BN_MOMENTUM) * running.var[ch] + BN_MOMENTUM * v[ch] * n / (n - 1.0);
            }
            (m, v)
        }
        Mode::Eval => (running.mean.clone(), running.var.clone()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    kernels::bn_apply(x, &mean, &inv_std, scale, shift).map(|(y, _)| y)
}

/// Zeroes the store's gradients, accumulates `grads` and takes one step.
pub fn optimizer_step(store: &mut ParameterStore, grads: &Gradients, hyper: &OptimHyper) -> Result<()> {
    store.zero_grad();
    store.accumulate(grads)?;
    adam_step(store, hyper);
    Ok(())
}
