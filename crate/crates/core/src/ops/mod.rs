//! Differentiable primitives on [`Var`](crate::autograd::Var).
//!
//! Every primitive validates shapes up front, returns
//! [`TensorError::ShapeMismatch`](crate::error::TensorError) naming itself on
//! violation, and registers a backward rule with the graph.

mod conv;
mod elementwise;
mod linalg;
mod norm;
mod reduce;
mod resample;
mod shape;

pub use conv::ConvSpec;
pub use resample::Interpolation;

pub(crate) use resample::resample_tensor;

use crate::tensor::{numel, Real, Tensor};

/// Numpy-style broadcast of two shapes, aligned on trailing axes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` laid against the (broadcast) `out` shape; broadcast
/// axes get stride 0.
fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let nd = out.len();
    let own = crate::tensor::contiguous_strides(shape);
    (0..nd)
        .map(|i| {
            if i + shape.len() < nd {
                0
            } else {
                let j = i + shape.len() - nd;
                if shape[j] == 1 {
                    0
                } else {
                    own[j]
                }
            }
        })
        .collect()
}

/// Visits each innermost row of `out`, passing the row's flat start and the
/// matching offsets into two broadcast operands.
fn for_each_row(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let nd = out.len();
    let inner = out[nd - 1];
    let outer = numel(&out[..nd - 1]);
    let mut idx = vec![0usize; nd - 1];
    let (mut oa, mut ob) = (0usize, 0usize);
    for r in 0..outer {
        f(r * inner, oa, ob);
        for d in (0..nd - 1).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

pub(crate) fn broadcast_zip<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    out: &[usize],
    f: impl Fn(T, T) -> T,
) -> Tensor<T> {
    if a.shape() == out && b.shape() == out {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::from_parts(out.to_vec(), data);
    }
    let sa = aligned_strides(a.shape(), out);
    let sb = aligned_strides(b.shape(), out);
    let (la, lb) = (sa[out.len() - 1], sb[out.len() - 1]);
    let inner = out[out.len() - 1];
    let (ad, bd) = (a.data(), b.data());
    let mut data = vec![T::zero(); numel(out)];
    for_each_row(out, &sa, &sb, |start, oa, ob| {
        let row = &mut data[start..start + inner];
        for (j, v) in row.iter_mut().enumerate() {
            *v = f(ad[oa + j * la], bd[ob + j * lb]);
        }
    });
    Tensor::from_parts(out.to_vec(), data)
}

/// Sums `grad` over the axes along which `shape` was broadcast.
pub(crate) fn sum_to_shape<T: Real>(grad: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if grad.shape() == shape {
        return grad.clone();
    }
    let out = grad.shape();
    let st = aligned_strides(shape, out);
    let zero = vec![0; out.len()];
    let l = st[out.len() - 1];
    let inner = out[out.len() - 1];
    let g = grad.data();
    let mut data = vec![T::zero(); numel(shape)];
    for_each_row(out, &st, &zero, |start, off, _| {
        for j in 0..inner {
            data[off + j * l] += g[start + j];
        }
    });
    Tensor::from_parts(shape.to_vec(), data)
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 3, 4], &[3, 1]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[1, 5], &[4, 1]), Some(vec![4, 5]));
        assert_eq!(broadcast_shape(&[2, 3], &[4]), None);
    }

    #[test]
    fn sum_to_shape_reduces_broadcast_axes() {
        let g = Tensor::<f64>::from_f64(&[2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(sum_to_shape(&g, &[1, 3]).data(), &[5., 7., 9.]);
        assert_eq!(sum_to_shape(&g, &[2, 1]).data(), &[6., 15.]);
        assert_eq!(sum_to_shape(&g, &[3]).data(), &[5., 7., 9.]);
    }
}
