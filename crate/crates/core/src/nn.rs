//! Parameterized layers built on the primitive operation set.

use crate::autograd::{Graph, Var};
use crate::error::{Result, TensorError};
use crate::ops::ConvSpec;
use crate::params::{ParamBuilder, ParamId};
use crate::tensor::Real;

pub const NORM_EPS: f64 = 1e-5;

/// Affine map over the last axis; weight is stored `(in, out)`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        let weight = b.fan_in_uniform("weight", &[in_dim, out_dim], in_dim);
        let bias = bias.then(|| b.constant("bias", &[out_dim], 0.0));
        Linear { weight, bias, in_dim, out_dim }
    }

    pub fn forward<'g, T: Real>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let shape = x.shape();
        if shape.last() != Some(&self.in_dim) {
            return Err(TensorError::shape("linear", &[&shape, &[self.in_dim, self.out_dim]]));
        }
        let rows = shape.iter().product::<usize>() / self.in_dim;
        let mut y = x.reshape(&[rows, self.in_dim])?.matmul(g.param(self.weight))?;
        if let Some(bias) = self.bias {
            y = y.add(g.param(bias))?;
        }
        let mut out_shape = shape;
        *out_shape.last_mut().expect("rank >= 1") = self.out_dim;
        y.reshape(&out_shape)
    }
}

/// Learnable-affine layer normalization over the feature (last) axis.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub scale: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, dim: usize) -> Self {
        LayerNorm { scale: b.constant("scale", &[dim], 1.0), shift: b.constant("shift", &[dim], 0.0) }
    }

    pub fn forward<'g, T: Real>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        x.normalize_last(NORM_EPS)?.mul(g.param(self.scale))?.add(g.param(self.shift))
    }
}

/// Per-sample, per-channel normalization over the spatial axes of
/// `(N, C, *spatial)` with a learnable per-channel affine.
#[derive(Clone, Debug)]
pub struct InstanceNorm {
    pub scale: ParamId,
    pub shift: ParamId,
    pub channels: usize,
}

impl InstanceNorm {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, channels: usize) -> Self {
        InstanceNorm {
            scale: b.constant("scale", &[channels], 1.0),
            shift: b.constant("shift", &[channels], 0.0),
            channels,
        }
    }

    pub fn forward<'g, T: Real>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let shape = x.shape();
        if shape.len() < 3 || shape[1] != self.channels {
            return Err(TensorError::shape("instance_norm", &[&shape, &[self.channels]]));
        }
        let spatial: usize = shape[2..].iter().product();
        let scale = g.param(self.scale).reshape(&[self.channels, 1])?;
        let shift = g.param(self.shift).reshape(&[self.channels, 1])?;
        x.reshape(&[shape[0], self.channels, spatial])?
            .normalize_last(NORM_EPS)?
            .mul(scale)?
            .add(shift)?
            .reshape(&shape)
    }
}

/// Convolution layer with weight `(C_out, C_in, *kernel)` and bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: ConvSpec,
}

impl Conv {
    pub fn new<T: Real>(
        b: &mut ParamBuilder<'_, T>,
        in_ch: usize,
        out_ch: usize,
        kernel: &[usize],
        spec: ConvSpec,
        bias: bool,
    ) -> Self {
        let kvol: usize = kernel.iter().product();
        let mut shape = vec![out_ch, in_ch];
        shape.extend_from_slice(kernel);
        let weight = b.fan_in_uniform("weight", &shape, in_ch * kvol);
        let bias = bias.then(|| b.constant("bias", &[out_ch], 0.0));
        Conv { weight, bias, spec }
    }

    pub fn forward<'g, T: Real>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        x.conv(g.param(self.weight), self.bias.map(|b| g.param(b)), &self.spec)
    }
}

/// Transposed convolution with weight `(C_in, C_out, *kernel)` and bias.
#[derive(Clone, Debug)]
pub struct ConvTranspose {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spec: ConvSpec,
}

impl ConvTranspose {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, in_ch: usize, out_ch: usize, kernel: &[usize], spec: ConvSpec) -> Self {
        let kvol: usize = kernel.iter().product();
        let mut shape = vec![in_ch, out_ch];
        shape.extend_from_slice(kernel);
        let weight = b.fan_in_uniform("weight", &shape, in_ch * kvol);
        let bias = b.constant("bias", &[out_ch], 0.0);
        ConvTranspose { weight, bias, spec }
    }

    pub fn forward<'g, T: Real>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        x.conv_transpose(g.param(self.weight), Some(g.param(self.bias)), &self.spec)
    }
}

/// Two-layer perceptron `dim -> hidden -> out` with GELU in between.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, dim: usize, hidden: usize, out: usize) -> Self {
        FeedForward { fc1: Linear::new(&mut b.sub("fc1"), dim, hidden, true), fc2: Linear::new(&mut b.sub("fc2"), hidden, out, true) }
    }

    pub fn forward<'g, T: Real>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let h = self.fc1.forward(g, x)?.gelu()?;
        self.fc2.forward(g, h)
    }
}
