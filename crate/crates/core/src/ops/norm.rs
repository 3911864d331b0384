use crate::autograd::Var;
use crate::error::Result;
use crate::tensor::{Real, Tensor};

impl<'g, T: Real> Var<'g, T> {
    /// Zero-mean, unit-variance standardization over the last axis (biased
    /// variance), without affine terms.
    pub fn normalize_last(self, eps: f64) -> Result<Var<'g, T>> {
        let x = self.value();
        let n = *x.shape().last().expect("rank >= 1");
        let rows = x.numel() / n;
        let nf = T::of(n as f64);
        let eps = T::of(eps);
        let xd = x.data();
        let mut y = vec![T::zero(); x.numel()];
        let mut inv_std = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &xd[r * n..(r + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[r] = inv;
            for (o, &v) in y[r * n..(r + 1) * n].iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
        }
        let y = Tensor::from_parts(x.shape().to_vec(), y);
        let saved = y.clone();
        self.graph.record("normalize", y, &[self], move |g| {
            let (yd, gd) = (saved.data(), g.data());
            let mut dx = vec![T::zero(); yd.len()];
            for r in 0..rows {
                let (yr, gr) = (&yd[r * n..(r + 1) * n], &gd[r * n..(r + 1) * n]);
                let g_mean = gr.iter().copied().sum::<T>() / nf;
                let gy_mean = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() / nf;
                for k in 0..n {
                    dx[r * n + k] = inv_std[r] * (gr[k] - g_mean - yr[k] * gy_mean);
                }
            }
            vec![Some(Tensor::from_parts(saved.shape().to_vec(), dx))]
        })
    }
}
