//! Multi-path embedding: one transformer path per modality, then fusion.
//!
//! Each modality is patch-embedded with a strided convolution, gets a learned
//! positional embedding, passes through its own DCT stack and is folded back
//! onto the patch grid. The per-path grids are concatenated on channels,
//! mixed by a 1x1 convolution and upsampled to 1/8 of the input resolution.
//! From there the fused feature is upsampled step by step and projected to the
//! encoder width at every requested scale.

use crate::autograd::{Graph, Var};
use crate::dct::{DctConfig, DctStack, TokenSequence};
use crate::error::{Result, TensorError};
use crate::nn::Conv;
use crate::ops::{ConvSpec, Interpolation};
use crate::params::{ParamBuilder, ParamId};
use crate::tensor::Real;

/// Scales are written as exponents: scale `s` means resolution `1 / 2^s`.
pub const FUSED_SCALE: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct MpeConfig {
    pub patch: usize,
    /// Token width `l`.
    pub embed_dim: usize,
    /// Fused channel count `k`.
    pub fused_channels: usize,
    pub depth: usize,
    pub dct: DctConfig,
    pub modalities: usize,
    /// Spatial extents of the input volume (2 or 3 axes).
    pub extents: Vec<usize>,
}

impl MpeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.modalities == 0 {
            return Err(TensorError::config("mpe: at least one modality is required"));
        }
        if !(2..=3).contains(&self.extents.len()) {
            return Err(TensorError::config(format!("mpe: expected 2 or 3 spatial axes, got {:?}", self.extents)));
        }
        if self.patch < 8 || self.patch % 8 != 0 {
            return Err(TensorError::config(format!("mpe: patch size {} must be a positive multiple of 8", self.patch)));
        }
        if let Some(&bad) = self.extents.iter().find(|&&e| e == 0 || e % self.patch != 0) {
            return Err(TensorError::config(format!(
                "mpe: extent {bad} is not divisible by the patch size {}; pad or crop the volume to a multiple of {}",
                self.patch, self.patch
            )));
        }
        if self.dct.token_dim != self.embed_dim {
            return Err(TensorError::config("mpe: DCT token width must equal the embedding width"));
        }
        if self.fused_channels == 0 || self.embed_dim == 0 {
            return Err(TensorError::config("mpe: widths must be positive"));
        }
        self.dct.validate()
    }

    pub fn grid(&self) -> Vec<usize> {
        self.extents.iter().map(|e| e / self.patch).collect()
    }

    pub fn n_tokens(&self) -> usize {
        self.grid().iter().product()
    }

    pub fn rank(&self) -> usize {
        self.extents.len()
    }
}

/// Patch embedding, DCT stack and reshape for one modality.
#[derive(Clone, Debug)]
pub struct EmbeddingPath {
    pub patch_conv: Conv,
    pub pos_embed: ParamId,
    pub stack: DctStack,
}

impl EmbeddingPath {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, cfg: &MpeConfig) -> Result<Self> {
        let rank = cfg.rank();
        let patch_conv = Conv::new(
            &mut b.sub("patch_embed"),
            1,
            cfg.embed_dim,
            &vec![cfg.patch; rank],
            ConvSpec::uniform(rank, cfg.patch, 0),
            true,
        );
        let pos_embed = b.normal("pos_embed", &[cfg.n_tokens(), cfg.embed_dim], 0.02);
        let stack = DctStack::new(&mut b.sub("dct"), &cfg.dct, cfg.depth)?;
        Ok(EmbeddingPath { patch_conv, pos_embed, stack })
    }

    /// `(N, 1, *extents)` to `(N, n_tokens, l)` tokens.
    pub fn embed<'g, T: Real>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<TokenSequence<'g, T>> {
        let f = self.patch_conv.forward(g, x)?;
        let shape = f.shape();
        let n: usize = shape[2..].iter().product();
        let pos = g.param(self.pos_embed);
        if pos.shape() != [n, shape[1]] {
            return Err(TensorError::shape("patch_embed", &[&shape, &pos.shape()]));
        }
        let tokens = f.reshape(&[shape[0], shape[1], n])?.transpose(1, 2)?.add(pos)?;
        TokenSequence::new(tokens)
    }

    /// `(N, 1, *extents)` to `(N, l, *grid)`.
    pub fn forward<'g, T: Real>(&self, g: &'g Graph<T>, x: Var<'g, T>, grid: &[usize]) -> Result<Var<'g, T>> {
        let z = self.stack.forward(g, self.embed(g, x)?)?;
        let mut shape = vec![z.batch(), z.dim()];
        shape.extend_from_slice(grid);
        z.var().transpose(1, 2)?.reshape(&shape)
    }
}

#[derive(Clone, Debug)]
pub struct Mpe {
    pub paths: Vec<EmbeddingPath>,
    pub fusion: Conv,
    pub cfg: MpeConfig,
}

impl Mpe {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, cfg: &MpeConfig) -> Result<Self> {
        cfg.validate()?;
        let paths = (0..cfg.modalities)
            .map(|i| EmbeddingPath::new(&mut b.sub(format!("path{i}")), cfg))
            .collect::<Result<Vec<_>>>()?;
        let rank = cfg.rank();
        let fusion = Conv::new(
            &mut b.sub("fusion"),
            cfg.modalities * cfg.embed_dim,
            cfg.fused_channels,
            &vec![1; rank],
            ConvSpec::uniform(rank, 1, 0),
            true,
        );
        Ok(Mpe { paths, fusion, cfg: cfg.clone() })
    }

    /// Per-modality grids for an `(N, C, *extents)` stack.
    pub fn path_features<'g, T: Real>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<Vec<Var<'g, T>>> {
        let shape = x.shape();
        if shape.len() != self.cfg.rank() + 2 || shape[1] != self.cfg.modalities || shape[2..] != self.cfg.extents[..] {
            let mut expected = vec![shape.first().copied().unwrap_or(1), self.cfg.modalities];
            expected.extend_from_slice(&self.cfg.extents);
            return Err(TensorError::shape("mpe", &[&shape, &expected]));
        }
        let grid = self.cfg.grid();
        self.paths
            .iter()
            .enumerate()
            .map(|(i, path)| path.forward(g, x.narrow(1, i, 1)?, &grid))
            .collect()
    }

    /// Concatenate, mix and upsample path grids to the 1/8 scale.
    pub fn fuse<'g, T: Real>(&self, g: &'g Graph<T>, features: &[Var<'g, T>]) -> Result<Var<'g, T>> {
        let first = features.first().ok_or_else(|| TensorError::invalid("fuse_paths", "no path features"))?;
        if features.len() != self.cfg.modalities || features.iter().any(|f| f.shape() != first.shape()) {
            let shapes: Vec<Vec<usize>> = features.iter().map(|f| f.shape()).collect();
            return Err(TensorError::ShapeMismatch { op: "fuse_paths", shapes });
        }
        let joined = if features.len() == 1 { *first } else { g.concat(features, 1)? };
        let mixed = self.fusion.forward(g, joined)?;
        let factor = self.cfg.patch / 8;
        if factor == 1 {
            Ok(mixed)
        } else {
            mixed.upsample(factor, Interpolation::Linear)
        }
    }

    /// Fused feature `(N, k, *extents / 8)`.
    pub fn forward<'g, T: Real>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let features = self.path_features(g, x)?;
        self.fuse(g, &features)
    }
}

/// 1x1 projections of the fused feature to the encoder widths at each
/// injection scale.
#[derive(Clone, Debug)]
pub struct ScaleAdapters {
    /// `(scale exponent, adapter)`, finest scale first.
    pub adapters: Vec<(usize, Conv)>,
}

impl ScaleAdapters {
    /// `widths[s]` is the encoder width at scale `s`.
    pub fn new<T: Real>(
        b: &mut ParamBuilder<'_, T>,
        fused_channels: usize,
        scales: &[usize],
        widths: &[usize],
        rank: usize,
    ) -> Result<Self> {
        let mut scales = scales.to_vec();
        scales.sort_unstable();
        scales.dedup();
        let adapters = scales
            .iter()
            .map(|&s| {
                if s > FUSED_SCALE || s >= widths.len() {
                    return Err(TensorError::config(format!("unknown injection scale 1/{}", 1usize << s)));
                }
                let conv = Conv::new(
                    &mut b.sub(format!("adapter{s}")),
                    fused_channels,
                    widths[s],
                    &vec![1; rank],
                    ConvSpec::uniform(rank, 1, 0),
                    true,
                );
                Ok((s, conv))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ScaleAdapters { adapters })
    }

    pub fn scales(&self) -> Vec<usize> {
        self.adapters.iter().map(|(s, _)| *s).collect()
    }

    /// Features per scale, finest first. Each coarser-to-finer step is a x2
    /// linear upsampling of the unprojected fused feature.
    pub fn forward<'g, T: Real>(&self, g: &'g Graph<T>, fused: Var<'g, T>) -> Result<Vec<(usize, Var<'g, T>)>> {
        let mut out = Vec::with_capacity(self.adapters.len());
        let mut current = fused;
        let mut current_scale = FUSED_SCALE;
        for (s, adapter) in self.adapters.iter().rev() {
            while current_scale > *s {
                current = current.upsample(2, Interpolation::Linear)?;
                current_scale -= 1;
            }
            out.push((*s, adapter.forward(g, current)?));
        }
        out.reverse();
        Ok(out)
    }
}
