//! Separable nearest / (bi-, tri-)linear resizing.
//!
//! Sampling uses half-pixel centers (corner alignment off): output index `j`
//! maps to source coordinate `(j + 0.5) * in / out - 0.5` for linear mode and
//! to `floor(j * in / out)` for nearest mode. Multi-axis resizing applies the
//! 1-D rule axis by axis, which equals the tensor-product interpolant.

use serde::{Deserialize, Serialize};

use super::split_axis;
use crate::autograd::Var;
use crate::error::{Result, TensorError};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Nearest,
    Linear,
}

/// Per output index: two source indices and their weights.
pub(crate) fn resample_weights(in_len: usize, out_len: usize, mode: Interpolation) -> Vec<(usize, usize, f64, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|j| match mode {
            Interpolation::Nearest => {
                let i = ((j as f64 * scale).floor() as usize).min(in_len - 1);
                (i, i, 1.0, 0.0)
            }
            Interpolation::Linear => {
                let src = ((j as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(in_len - 1);
                let i1 = (i0 + 1).min(in_len - 1);
                let frac = src - i0 as f64;
                if i0 == i1 {
                    (i0, i1, 1.0, 0.0)
                } else {
                    (i0, i1, 1.0 - frac, frac)
                }
            }
        })
        .collect()
}

fn apply<T: Real>(x: &[T], outer: usize, inner: usize, in_len: usize, table: &[(usize, usize, T, T)], transpose: bool) -> Vec<T> {
    let out_len = table.len();
    if !transpose {
        let mut y = vec![T::zero(); outer * out_len * inner];
        for o in 0..outer {
            for (j, &(i0, i1, w0, w1)) in table.iter().enumerate() {
                let dst = &mut y[(o * out_len + j) * inner..(o * out_len + j + 1) * inner];
                let a = &x[(o * in_len + i0) * inner..(o * in_len + i0 + 1) * inner];
                let b = &x[(o * in_len + i1) * inner..(o * in_len + i1 + 1) * inner];
                for ((d, &av), &bv) in dst.iter_mut().zip(a).zip(b) {
                    *d = w0 * av + w1 * bv;
                }
            }
        }
        y
    } else {
        // x has out_len along the axis; scatter back to in_len.
        let mut y = vec![T::zero(); outer * in_len * inner];
        for o in 0..outer {
            for (j, &(i0, i1, w0, w1)) in table.iter().enumerate() {
                let src = &x[(o * out_len + j) * inner..(o * out_len + j + 1) * inner];
                for (k, &g) in src.iter().enumerate() {
                    y[(o * in_len + i0) * inner + k] += w0 * g;
                    y[(o * in_len + i1) * inner + k] += w1 * g;
                }
            }
        }
        y
    }
}

/// Resizes one axis of a plain tensor, outside any graph.
pub(crate) fn resample_tensor<T: Real>(x: &Tensor<T>, axis: usize, out_len: usize, mode: Interpolation) -> Tensor<T> {
    let (outer, in_len, inner) = split_axis(x.shape(), axis);
    let table: Vec<_> = resample_weights(in_len, out_len, mode)
        .into_iter()
        .map(|(a, b, w0, w1)| (a, b, T::of(w0), T::of(w1)))
        .collect();
    let mut shape = x.shape().to_vec();
    shape[axis] = out_len;
    Tensor::from_parts(shape, apply(x.data(), outer, inner, in_len, &table, false))
}

impl<'g, T: Real> Var<'g, T> {
    /// Resizes a single axis to `out_len` samples.
    pub fn resample_axis(self, axis: usize, out_len: usize, mode: Interpolation) -> Result<Var<'g, T>> {
        let x = self.value();
        if axis >= x.ndim() || out_len == 0 {
            return Err(TensorError::invalid("resample", format!("axis {axis} / length {out_len} for {:?}", x.shape())));
        }
        let (outer, in_len, inner) = split_axis(x.shape(), axis);
        let table: Vec<_> = resample_weights(in_len, out_len, mode)
            .into_iter()
            .map(|(a, b, w0, w1)| (a, b, T::of(w0), T::of(w1)))
            .collect();
        let mut shape = x.shape().to_vec();
        shape[axis] = out_len;
        let out = Tensor::from_parts(shape, apply(x.data(), outer, inner, in_len, &table, false));
        let in_shape = x.shape().to_vec();
        self.graph.record("resample", out, &[self], move |g| {
            vec![Some(Tensor::from_parts(in_shape.clone(), apply(g.data(), outer, inner, in_len, &table, true)))]
        })
    }

    /// Resizes the spatial axes of an `(N, C, *spatial)` tensor.
    pub fn resize(self, spatial: &[usize], mode: Interpolation) -> Result<Var<'g, T>> {
        let shape = self.shape();
        if shape.len() != spatial.len() + 2 {
            return Err(TensorError::shape("resize", &[&shape, spatial]));
        }
        let mut y = self;
        for (d, &len) in spatial.iter().enumerate() {
            if shape[d + 2] != len {
                y = y.resample_axis(d + 2, len, mode)?;
            }
        }
        Ok(y)
    }

    /// Spatial upsampling by an integer factor.
    pub fn upsample(self, factor: usize, mode: Interpolation) -> Result<Var<'g, T>> {
        let target: Vec<usize> = self.shape()[2..].iter().map(|&s| s * factor).collect();
        self.resize(&target, mode)
    }
}
