//! Flip and right-angle rotation augmentation.
//!
//! Transforms are pure voxel permutations, so masks stay binary and image
//! and mask stay aligned. Rotations turn the last two axes; when those
//! extents differ only the half turn keeps the shape and is the only one
//! drawn.

use denseformer::metrics::BinaryMask;
use denseformer::tensor::contiguous_strides;
use denseformer::Tensor;
use rand::Rng;

use crate::config::AugmentConfig;
use crate::error::{HarnessError, Result};

/// A drawn transform: per-axis flips, then `quarter_turns` in-plane turns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transform {
    pub flips: Vec<bool>,
    pub quarter_turns: usize,
}

impl Transform {
    pub fn identity(rank: usize) -> Self {
        Transform { flips: vec![false; rank], quarter_turns: 0 }
    }

    pub fn draw(rng: &mut impl Rng, extents: &[usize], cfg: &AugmentConfig) -> Self {
        let rank = extents.len();
        let flips = (0..rank).map(|_| cfg.flip && rng.random_bool(0.5)).collect();
        let quarter_turns = if !cfg.rotate || rank < 2 {
            0
        } else if extents[rank - 2] == extents[rank - 1] {
            rng.random_range(0..4)
        } else {
            2 * rng.random_range(0..2)
        };
        Transform { flips, quarter_turns }
    }

    /// `source[out]` is the input voxel that lands on output voxel `out`.
    pub fn source_indices(&self, extents: &[usize]) -> Result<Vec<usize>> {
        let rank = extents.len();
        if self.flips.len() != rank {
            return Err(HarnessError::Config(format!("transform for rank {} applied to {extents:?}", self.flips.len())));
        }
        let turns = self.quarter_turns % 4;
        if turns % 2 == 1 && (rank < 2 || extents[rank - 2] != extents[rank - 1]) {
            return Err(HarnessError::Config(format!("quarter turn needs square last axes, got {extents:?}")));
        }
        let strides = contiguous_strides(extents);
        let voxels: usize = extents.iter().product();
        let mut idx = vec![0; rank];
        let mut src = vec![0; rank];
        let mut out = Vec::with_capacity(voxels);
        for flat in 0..voxels {
            for d in 0..rank {
                idx[d] = flat / strides[d] % extents[d];
            }
            // Undo the turns first (they were applied last), then the flips.
            src.copy_from_slice(&idx);
            if turns > 0 {
                let (a, b) = (rank - 2, rank - 1);
                let (i, j) = (src[a], src[b]);
                (src[a], src[b]) = match turns {
                    1 => (j, extents[a] - 1 - i),
                    2 => (extents[a] - 1 - i, extents[b] - 1 - j),
                    _ => (extents[b] - 1 - j, i),
                };
            }
            for d in 0..rank {
                if self.flips[d] {
                    src[d] = extents[d] - 1 - src[d];
                }
            }
            out.push(src.iter().zip(&strides).map(|(i, s)| i * s).sum());
        }
        Ok(out)
    }

    /// Applies the transform to a `(C, *extents)` image and its mask.
    pub fn apply(&self, image: &Tensor<f32>, mask: &BinaryMask) -> Result<(Tensor<f32>, BinaryMask)> {
        let extents = mask.shape();
        if image.shape().len() != extents.len() + 1 || image.shape()[1..] != *extents {
            return Err(HarnessError::Dataset(format!("image {:?} does not match mask {extents:?}", image.shape())));
        }
        let src = self.source_indices(extents)?;
        let voxels = src.len();
        let data = image.data();
        let mut out = Vec::with_capacity(data.len());
        for channel in data.chunks_exact(voxels) {
            out.extend(src.iter().map(|&s| channel[s]));
        }
        let m = mask.data();
        let mask = BinaryMask::new(extents, src.iter().map(|&s| m[s]).collect())?;
        Ok((Tensor::new(image.shape(), out)?, mask))
    }
}
