use super::graph::{Graph, Mode, RunningStats, Var};
use super::kernels::ConvSpec;
use super::params::{ParamId, ParameterStore};
use super::tensor::Tensor;
use crate::error::Result;
use crate::rng::RngStream;

/// Affine layer `x W^T + b` with `W: (out, in)`.
#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Dense {
    pub fn new(store: &mut ParameterStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Self {
        let w = store.add_uniform(&format!("{name}.weight"), &[fan_out, fan_in], fan_in, rng);
        let b = store.add_uniform(&format!("{name}.bias"), &[fan_out], fan_in, rng);
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.dense(x, w, Some(b))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub spec: ConvSpec,
}

impl Conv1d {
    pub fn new(store: &mut ParameterStore, name: &str, spec: ConvSpec, rng: &mut RngStream) -> Self {
        let fan_in = spec.m_in * spec.kernel;
        let w = store.add_uniform(&format!("{name}.weight"), &spec.weight_shape(), fan_in, rng);
        let b = store.add_uniform(&format!("{name}.bias"), &[spec.m_out], fan_in, rng);
        Self { w, b, spec }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.conv1d(x, w, Some(b), self.spec)
    }
}

/// Transposed convolution mapping `spec.m_out` channels back to `spec.m_in`.
#[derive(Clone, Copy, Debug)]
pub struct ConvTranspose1d {
    pub w: ParamId,
    pub b: ParamId,
    pub spec: ConvSpec,
}

impl ConvTranspose1d {
    pub fn new(store: &mut ParameterStore, name: &str, spec: ConvSpec, rng: &mut RngStream) -> Self {
        let fan_in = spec.m_out * spec.kernel;
        let w = store.add_uniform(&format!("{name}.weight"), &spec.weight_shape(), fan_in, rng);
        let b = store.add_uniform(&format!("{name}.bias"), &[spec.m_in], fan_in, rng);
        Self { w, b, spec }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.conv_transpose1d(x, w, Some(b), self.spec)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BatchNorm1d {
    pub scale: ParamId,
    pub shift: ParamId,
    pub stats: RunningStats,
    pub channels: usize,
}

impl BatchNorm1d {
    pub fn new(store: &mut ParameterStore, name: &str, channels: usize) -> Self {
        let scale = store.add(&format!("{name}.weight"), Tensor::full(&[channels], 1.0), true);
        let shift = store.add(&format!("{name}.bias"), Tensor::zeros(&[channels]), true);
        let mean = store.add(&format!("{name}.running_mean"), Tensor::zeros(&[channels]), false);
        let var = store.add(&format!("{name}.running_var"), Tensor::full(&[channels], 1.0), false);
        Self {
            scale,
            shift,
            stats: RunningStats { mean, var },
            channels,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, x: Var, mode: Mode) -> Result<Var> {
        let scale = g.param(store, self.scale);
        let shift = g.param(store, self.shift);
        g.batch_norm(x, scale, shift, self.stats, store, mode)
    }
}
