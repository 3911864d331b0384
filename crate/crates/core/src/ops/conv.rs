//! Convolution and transposed convolution over 1, 2 or 3 spatial axes.
//!
//! Both lower to im2col + gemm on a geometry normalized to three spatial
//! axes (missing leading axes have extent 1). Column buffers are built in
//! chunks of output rows so that memory stays bounded for large volumes.

use crate::autograd::Var;
use crate::error::{Result, TensorError};
use crate::tensor::{gemm, Real, Strides, Tensor};

/// Upper bound on the number of elements in one im2col chunk.
const CHUNK_ELEMS: usize = 1 << 22;

/// Stride and zero padding per spatial axis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: Vec<usize>,
    pub padding: Vec<usize>,
}

impl ConvSpec {
    pub fn new(stride: &[usize], padding: &[usize]) -> Self {
        ConvSpec { stride: stride.to_vec(), padding: padding.to_vec() }
    }

    /// Same stride and padding on each of `rank` spatial axes.
    pub fn uniform(rank: usize, stride: usize, padding: usize) -> Self {
        ConvSpec { stride: vec![stride; rank], padding: vec![padding; rank] }
    }
}

fn pad3(v: &[usize], fill: usize) -> [usize; 3] {
    let mut out = [fill; 3];
    out[3 - v.len()..].copy_from_slice(v);
    out
}

/// Sliding-window geometry of a convolution reading `input` and producing `out`.
#[derive(Clone, Copy, Debug)]
struct Geom {
    channels: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    out: [usize; 3],
}

impl Geom {
    fn new(channels: usize, input: &[usize], kernel: &[usize], spec: &ConvSpec, op: &'static str) -> Result<Self> {
        let (input, kernel) = (pad3(input, 1), pad3(kernel, 1));
        let (stride, pad) = (pad3(&spec.stride, 1), pad3(&spec.padding, 0));
        let mut out = [0; 3];
        for d in 0..3 {
            if stride[d] == 0 || input[d] + 2 * pad[d] < kernel[d] {
                return Err(TensorError::invalid(
                    op,
                    format!("kernel {kernel:?} with stride {stride:?}, padding {pad:?} does not fit input {input:?}"),
                ));
            }
            out[d] = (input[d] + 2 * pad[d] - kernel[d]) / stride[d] + 1;
        }
        Ok(Geom { channels, input, kernel, stride, pad, out })
    }

    fn kvol(&self) -> usize {
        self.kernel.iter().product()
    }

    fn in_vol(&self) -> usize {
        self.input.iter().product()
    }

    fn out_vol(&self) -> usize {
        self.out.iter().product()
    }

    fn rows(&self) -> usize {
        self.out[0] * self.out[1]
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1; 3] && self.stride == [1; 3] && self.pad == [0; 3]
    }

    fn rows_per_chunk(&self) -> usize {
        (CHUNK_ELEMS / (self.channels * self.kvol() * self.out[2]).max(1)).clamp(1, self.rows())
    }

    /// Valid output columns `[lo, hi)` for kernel offset `k` along the last axis.
    fn valid_cols(&self, k: usize) -> (usize, usize) {
        let (s, p, w) = (self.stride[2], self.pad[2], self.input[2]);
        let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
        let hi = if w + p > k { (w + p - k).div_ceil(s) } else { 0 };
        (lo.min(self.out[2]), hi.min(self.out[2]))
    }

    /// Visits every (column-row, output-row) segment of the rows `r0..r1`,
    /// passing the input row offset (or `None` when padding) and kernel column.
    fn segments(&self, r0: usize, r1: usize, mut f: impl FnMut(usize, usize, Option<usize>, usize)) {
        let [_, ih_n, iw_n] = self.input;
        let [kd_n, kh_n, kw_n] = self.kernel;
        let ncols = (r1 - r0) * self.out[2];
        for c in 0..self.channels {
            for kd in 0..kd_n {
                for kh in 0..kh_n {
                    for kw in 0..kw_n {
                        let row = ((c * kd_n + kd) * kh_n + kh) * kw_n + kw;
                        for r in r0..r1 {
                            let (od, oh) = (r / self.out[1], r % self.out[1]);
                            let id = (od * self.stride[0] + kd) as isize - self.pad[0] as isize;
                            let ih = (oh * self.stride[1] + kh) as isize - self.pad[1] as isize;
                            let inside = id >= 0 && (id as usize) < self.input[0] && ih >= 0 && (ih as usize) < ih_n;
                            let src = inside.then(|| ((c * self.input[0] + id as usize) * ih_n + ih as usize) * iw_n);
                            f(row * ncols + (r - r0) * self.out[2], r, src, kw);
                        }
                    }
                }
            }
        }
    }

    /// Gathers input patches for output rows `r0..r1` into `cols`
    /// (`channels * kvol` rows by `(r1 - r0) * out[2]` columns).
    fn im2col<T: Real>(&self, x: &[T], r0: usize, r1: usize, cols: &mut [T]) {
        let ow = self.out[2];
        let sw = self.stride[2];
        self.segments(r0, r1, |dst, _, src, kw| {
            let seg = &mut cols[dst..dst + ow];
            let Some(src) = src else {
                seg.fill(T::zero());
                return;
            };
            let (lo, hi) = self.valid_cols(kw);
            seg[..lo].fill(T::zero());
            seg[hi.max(lo)..].fill(T::zero());
            if lo < hi {
                let first = src + lo * sw + kw - self.pad[2];
                if sw == 1 {
                    seg[lo..hi].copy_from_slice(&x[first..first + (hi - lo)]);
                } else {
                    for (j, v) in seg[lo..hi].iter_mut().enumerate() {
                        *v = x[first + j * sw];
                    }
                }
            }
        });
    }

    /// Adjoint of [`Geom::im2col`]: scatters-adds `cols` back into `x`.
    fn col2im<T: Real>(&self, cols: &[T], r0: usize, r1: usize, x: &mut [T]) {
        let sw = self.stride[2];
        self.segments(r0, r1, |dst, _, src, kw| {
            let Some(src) = src else { return };
            let (lo, hi) = self.valid_cols(kw);
            if lo < hi {
                let first = src + lo * sw + kw - self.pad[2];
                let seg = &cols[dst + lo..dst + hi];
                if sw == 1 {
                    for (v, &c) in x[first..first + (hi - lo)].iter_mut().zip(seg) {
                        *v += c;
                    }
                } else {
                    for (j, &c) in seg.iter().enumerate() {
                        x[first + j * sw] += c;
                    }
                }
            }
        });
    }
}

fn check_conv_shapes(
    op: &'static str,
    x: &Tensor<impl Real>,
    w: &Tensor<impl Real>,
    bias: Option<&[usize]>,
    spec: &ConvSpec,
    weight_in_axis: usize,
) -> Result<usize> {
    let rank = x.ndim().wrapping_sub(2);
    let ok = (1..=3).contains(&rank)
        && w.ndim() == rank + 2
        && w.shape()[weight_in_axis] == x.shape()[1]
        && spec.stride.len() == rank
        && spec.padding.len() == rank
        && bias.is_none_or(|b| b.len() == 1 && b[0] == w.shape()[1 - weight_in_axis]);
    if !ok {
        let mut shapes = vec![x.shape(), w.shape()];
        if let Some(b) = bias {
            shapes.push(b);
        }
        return Err(TensorError::shape(op, &shapes));
    }
    Ok(rank)
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T], batch: usize, vol: usize) {
    let ch = bias.len();
    for n in 0..batch {
        for (c, &b) in bias.iter().enumerate() {
            for v in &mut out[(n * ch + c) * vol..(n * ch + c + 1) * vol] {
                *v += b;
            }
        }
    }
}

fn bias_grad<T: Real>(g: &[T], batch: usize, ch: usize, vol: usize) -> Tensor<T> {
    let mut gb = vec![T::zero(); ch];
    for n in 0..batch {
        for (c, acc) in gb.iter_mut().enumerate() {
            *acc += g[(n * ch + c) * vol..(n * ch + c + 1) * vol].iter().copied().sum::<T>();
        }
    }
    Tensor::from_parts(vec![ch], gb)
}

impl<'g, T: Real> Var<'g, T> {
    /// Cross-correlation of `self` `(N, C_in, *spatial)` with `weight`
    /// `(C_out, C_in, *kernel)`, plus optional per-channel `bias`.
    pub fn conv(self, weight: Var<'g, T>, bias: Option<Var<'g, T>>, spec: &ConvSpec) -> Result<Var<'g, T>> {
        let (x, w) = (self.value(), weight.value());
        let b = bias.map(|b| b.value());
        let rank = check_conv_shapes("conv", &x, &w, b.as_ref().map(|b| b.shape()), spec, 1)?;
        let (batch, cin, cout) = (x.shape()[0], x.shape()[1], w.shape()[0]);
        let geom = Geom::new(cin, &x.shape()[2..], &w.shape()[2..], spec, "conv")?;
        let (in_vol, out_vol, ckv, ow) = (geom.in_vol(), geom.out_vol(), cin * geom.kvol(), geom.out[2]);
        let chunk = geom.rows_per_chunk();
        let mut out = vec![T::zero(); batch * cout * out_vol];
        let mut cols = vec![T::zero(); if geom.is_pointwise() { 0 } else { ckv * chunk * ow }];
        for n in 0..batch {
            let xn = &x.data()[n * cin * in_vol..(n + 1) * cin * in_vol];
            let on = &mut out[n * cout * out_vol..(n + 1) * cout * out_vol];
            if geom.is_pointwise() {
                gemm(cout, cin, out_vol, T::one(), w.data(), Strides::row_major(cin), xn,
                    Strides::row_major(out_vol), T::zero(), on, Strides::row_major(out_vol));
                continue;
            }
            for r0 in (0..geom.rows()).step_by(chunk) {
                let r1 = (r0 + chunk).min(geom.rows());
                let nc = (r1 - r0) * ow;
                geom.im2col(xn, r0, r1, &mut cols[..ckv * nc]);
                gemm(cout, ckv, nc, T::one(), w.data(), Strides::row_major(ckv), &cols[..ckv * nc],
                    Strides::row_major(nc), T::zero(), &mut on[r0 * ow..], Strides::row_major(out_vol));
            }
        }
        if let Some(b) = &b {
            add_bias(&mut out, b.data(), batch, out_vol);
        }
        let mut out_shape = vec![batch, cout];
        out_shape.extend_from_slice(&geom.out[3 - rank..]);
        let out = Tensor::from_parts(out_shape, out);
        let need_input = self.is_tracked();
        let has_bias = b.is_some();
        let mut parents = vec![self, weight];
        parents.extend(bias);
        self.graph.record("conv", out, &parents, move |g| {
            let gd = g.data();
            let mut gx = vec![T::zero(); if need_input { x.numel() } else { 0 }];
            let mut gw = vec![T::zero(); w.numel()];
            let mut cols = vec![T::zero(); if geom.is_pointwise() { 0 } else { ckv * chunk * ow }];
            for n in 0..batch {
                let xn = &x.data()[n * cin * in_vol..(n + 1) * cin * in_vol];
                let gn = &gd[n * cout * out_vol..(n + 1) * cout * out_vol];
                if geom.is_pointwise() {
                    gemm(cout, out_vol, cin, T::one(), gn, Strides::row_major(out_vol), xn,
                        Strides::transposed(out_vol), T::one(), &mut gw, Strides::row_major(cin));
                    if need_input {
                        gemm(cin, cout, out_vol, T::one(), w.data(), Strides::transposed(cin), gn,
                            Strides::row_major(out_vol), T::zero(), &mut gx[n * cin * in_vol..],
                            Strides::row_major(out_vol));
                    }
                    continue;
                }
                for r0 in (0..geom.rows()).step_by(chunk) {
                    let r1 = (r0 + chunk).min(geom.rows());
                    let nc = (r1 - r0) * ow;
                    let cols = &mut cols[..ckv * nc];
                    geom.im2col(xn, r0, r1, cols);
                    gemm(cout, nc, ckv, T::one(), &gn[r0 * ow..], Strides::row_major(out_vol), cols,
                        Strides::transposed(nc), T::one(), &mut gw, Strides::row_major(ckv));
                    if need_input {
                        gemm(ckv, cout, nc, T::one(), w.data(), Strides::transposed(ckv), &gn[r0 * ow..],
                            Strides::row_major(out_vol), T::zero(), cols, Strides::row_major(nc));
                        geom.col2im(cols, r0, r1, &mut gx[n * cin * in_vol..(n + 1) * cin * in_vol]);
                    }
                }
            }
            let mut grads = vec![
                need_input.then(|| Tensor::from_parts(x.shape().to_vec(), gx)),
                Some(Tensor::from_parts(w.shape().to_vec(), gw)),
            ];
            if has_bias {
                grads.push(Some(bias_grad(gd, batch, cout, out_vol)));
            }
            grads
        })
    }

    /// Transposed convolution of `self` `(N, C_in, *spatial)` with `weight`
    /// `(C_in, C_out, *kernel)`. Output extent per axis is
    /// `(in - 1) * stride - 2 * padding + kernel`.
    pub fn conv_transpose(self, weight: Var<'g, T>, bias: Option<Var<'g, T>>, spec: &ConvSpec) -> Result<Var<'g, T>> {
        let (x, w) = (self.value(), weight.value());
        let b = bias.map(|b| b.value());
        let rank = check_conv_shapes("conv_transpose", &x, &w, b.as_ref().map(|b| b.shape()), spec, 0)?;
        let (batch, cin, cout) = (x.shape()[0], x.shape()[1], w.shape()[1]);
        let small = &x.shape()[2..];
        let mut big = Vec::with_capacity(rank);
        for d in 0..rank {
            let full = (small[d] - 1) * spec.stride[d] + w.shape()[2 + d];
            if full <= 2 * spec.padding[d] {
                return Err(TensorError::invalid("conv_transpose", format!("padding {:?} consumes the output", spec.padding)));
            }
            big.push(full - 2 * spec.padding[d]);
        }
        // Geometry of the adjoint convolution: reads the big grid, produces the small one.
        let geom = Geom::new(cout, &big, &w.shape()[2..], spec, "conv_transpose")?;
        debug_assert_eq!(&geom.out[3 - rank..], small);
        let (small_vol, big_vol, ckv, ow) = (geom.out_vol(), geom.in_vol(), cout * geom.kvol(), geom.out[2]);
        let chunk = geom.rows_per_chunk();
        let mut out = vec![T::zero(); batch * cout * big_vol];
        let mut cols = vec![T::zero(); ckv * chunk * ow];
        for n in 0..batch {
            let xn = &x.data()[n * cin * small_vol..(n + 1) * cin * small_vol];
            let on = &mut out[n * cout * big_vol..(n + 1) * cout * big_vol];
            for r0 in (0..geom.rows()).step_by(chunk) {
                let r1 = (r0 + chunk).min(geom.rows());
                let nc = (r1 - r0) * ow;
                let cols = &mut cols[..ckv * nc];
                gemm(ckv, cin, nc, T::one(), w.data(), Strides::transposed(ckv), &xn[r0 * ow..],
                    Strides::row_major(small_vol), T::zero(), cols, Strides::row_major(nc));
                geom.col2im(cols, r0, r1, on);
            }
        }
        if let Some(b) = &b {
            add_bias(&mut out, b.data(), batch, big_vol);
        }
        let mut out_shape = vec![batch, cout];
        out_shape.extend_from_slice(&big);
        let out = Tensor::from_parts(out_shape, out);
        let need_input = self.is_tracked();
        let has_bias = b.is_some();
        let mut parents = vec![self, weight];
        parents.extend(bias);
        self.graph.record("conv_transpose", out, &parents, move |g| {
            let gd = g.data();
            let mut gx = vec![T::zero(); if need_input { x.numel() } else { 0 }];
            let mut gw = vec![T::zero(); w.numel()];
            let mut cols = vec![T::zero(); ckv * chunk * ow];
            for n in 0..batch {
                let xn = &x.data()[n * cin * small_vol..(n + 1) * cin * small_vol];
                let gn = &gd[n * cout * big_vol..(n + 1) * cout * big_vol];
                for r0 in (0..geom.rows()).step_by(chunk) {
                    let r1 = (r0 + chunk).min(geom.rows());
                    let nc = (r1 - r0) * ow;
                    let cols = &mut cols[..ckv * nc];
                    geom.im2col(gn, r0, r1, cols);
                    gemm(cin, nc, ckv, T::one(), &xn[r0 * ow..], Strides::row_major(small_vol), cols,
                        Strides::transposed(nc), T::one(), &mut gw, Strides::row_major(ckv));
                    if need_input {
                        gemm(cin, ckv, nc, T::one(), w.data(), Strides::row_major(ckv), cols,
                            Strides::row_major(nc), T::zero(), &mut gx[n * cin * small_vol + r0 * ow..],
                            Strides::row_major(small_vol));
                    }
                }
            }
            let mut grads = vec![
                need_input.then(|| Tensor::from_parts(x.shape().to_vec(), gx)),
                Some(Tensor::from_parts(w.shape().to_vec(), gw)),
            ];
            if has_bias {
                grads.push(Some(bias_grad(gd, batch, cout, big_vol)));
            }
            grads
        })
    }
}
