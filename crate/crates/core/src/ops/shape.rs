use super::{for_each_row, split_axis};
use crate::autograd::{Graph, Var};
use crate::error::{Result, TensorError};
use crate::tensor::{contiguous_strides, numel, Real, Tensor};

pub(crate) fn permute_tensor<T: Real>(x: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let in_strides = contiguous_strides(x.shape());
    let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
    let src: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let zero = vec![0; perm.len()];
    let inner = out_shape[out_shape.len() - 1];
    let last = src[src.len() - 1];
    let xd = x.data();
    let mut data = vec![T::zero(); x.numel()];
    for_each_row(&out_shape, &src, &zero, |start, off, _| {
        for (j, v) in data[start..start + inner].iter_mut().enumerate() {
            *v = xd[off + j * last];
        }
    });
    Tensor::from_parts(out_shape, data)
}

fn narrow_tensor<T: Real>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Tensor<T> {
    let (outer, n, inner) = split_axis(x.shape(), axis);
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * n + start) * inner;
        data.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    Tensor::from_parts(shape, data)
}

impl<'g, T: Real> Var<'g, T> {
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g, T>> {
        let x = self.value();
        let out = x.reshaped(shape)?;
        let in_shape = x.shape().to_vec();
        self.graph.record("reshape", out, &[self], move |g| {
            vec![Some(g.reshaped(&in_shape).expect("reshape preserves size"))]
        })
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(self, perm: &[usize]) -> Result<Var<'g, T>> {
        let x = self.value();
        let mut seen = vec![false; x.ndim()];
        let valid = perm.len() == x.ndim()
            && perm.iter().all(|&p| p < x.ndim() && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(TensorError::invalid(
                "permute",
                format!("{perm:?} is not a permutation of the axes of {:?}", x.shape()),
            ));
        }
        let out = permute_tensor(&x, perm);
        let mut inverse = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        self.graph.record("permute", out, &[self], move |g| vec![Some(permute_tensor(g, &inverse))])
    }

    /// Swaps two axes.
    pub fn transpose(self, a: usize, b: usize) -> Result<Var<'g, T>> {
        let nd = self.shape().len();
        if a >= nd || b >= nd {
            return Err(TensorError::invalid("transpose", format!("axes ({a}, {b}) out of range for rank {nd}")));
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(a, b);
        self.permute(&perm)
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        if axis >= x.ndim() || len == 0 || start + len > x.shape()[axis] {
            return Err(TensorError::invalid(
                "narrow",
                format!("range {start}..{} on axis {axis} of {:?}", start + len, x.shape()),
            ));
        }
        let out = narrow_tensor(&x, axis, start, len);
        let in_shape = x.shape().to_vec();
        self.graph.record("narrow", out, &[self], move |g| {
            let (outer, n, inner) = split_axis(&in_shape, axis);
            let mut data = vec![T::zero(); numel(&in_shape)];
            let gd = g.data();
            for o in 0..outer {
                let dst = (o * n + start) * inner;
                let src = o * len * inner;
                data[dst..dst + len * inner].copy_from_slice(&gd[src..src + len * inner]);
            }
            vec![Some(Tensor::from_parts(in_shape.clone(), data))]
        })
    }
}

impl<T: Real> Graph<T> {
    /// Joins variables along `axis`; all other extents must agree.
    pub fn concat<'g>(&'g self, parts: &[Var<'g, T>], axis: usize) -> Result<Var<'g, T>> {
        let values: Vec<Tensor<T>> = parts.iter().map(|p| p.value()).collect();
        let Some(first) = values.first() else {
            return Err(TensorError::invalid("concat", "no operands"));
        };
        let rank = first.ndim();
        let compatible = axis < rank
            && values.iter().all(|v| {
                v.ndim() == rank && (0..rank).all(|d| d == axis || v.shape()[d] == first.shape()[d])
            });
        if !compatible {
            let shapes: Vec<&[usize]> = values.iter().map(|v| v.shape()).collect();
            return Err(TensorError::shape("concat", &shapes));
        }
        let lens: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for (v, &len) in values.iter().zip(&lens) {
                let base = o * len * inner;
                data.extend_from_slice(&v.data()[base..base + len * inner]);
            }
        }
        let out = Tensor::from_parts(shape, data);
        self.record("concat", out, parts, move |g| {
            let mut start = 0;
            lens.iter()
                .map(|&len| {
                    let part = narrow_tensor(g, axis, start, len);
                    start += len;
                    Some(part)
                })
                .collect()
        })
    }
}
