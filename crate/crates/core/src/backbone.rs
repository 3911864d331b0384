//! U-shaped encoder-decoder with multi-path feature injection.
//!
//! The encoder sees the modalities concatenated on the channel axis and runs
//! four stages at scales 1, 1/2, 1/4 and 1/8. Wherever an injection scale is
//! configured, the projected multi-path feature is added to the stage output.
//! The decoder mirrors the encoder with transposed convolutions and skip
//! concatenations and emits one prediction map per scale.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::dct::DctConfig;
use crate::error::{Result, TensorError};
use crate::metrics::BinaryMask;
use crate::mpe::{Mpe, MpeConfig, ScaleAdapters};
use crate::nn::{Conv, ConvTranspose, InstanceNorm};
use crate::ops::ConvSpec;
use crate::params::{seeded_rng, ParamBuilder, ParamStore};
use crate::tensor::{Real, Tensor};

/// Number of encoder stages and decoder outputs.
pub const STAGES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "2d")]
    Planar,
    #[serde(rename = "3d")]
    Volumetric,
}

impl Mode {
    pub fn rank(self) -> usize {
        match self {
            Mode::Planar => 2,
            Mode::Volumetric => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub mode: Mode,
    pub modalities: usize,
    /// Spatial extents of the network input.
    pub extents: Vec<usize>,
    pub classes: usize,
    pub patch: usize,
    pub embed_dim: usize,
    pub fused_channels: usize,
    pub dct_depth: usize,
    pub growth: usize,
    pub layers_per_block: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    /// Encoder width at scales 1, 1/2, 1/4, 1/8.
    pub channels: Vec<usize>,
    /// Scale exponents receiving the multi-path feature.
    pub injection_scales: Vec<usize>,
    /// Without the embedding branch the model is a plain U-shaped network.
    pub use_mpe: bool,
}

impl ModelConfig {
    pub fn new(mode: Mode, modalities: usize, extents: &[usize]) -> Self {
        ModelConfig {
            mode,
            modalities,
            extents: extents.to_vec(),
            classes: 2,
            patch: 16,
            embed_dim: 128,
            fused_channels: 128,
            dct_depth: 6,
            growth: 32,
            layers_per_block: 4,
            heads: 4,
            mlp_ratio: 2.0,
            channels: vec![32, 64, 128, 256],
            injection_scales: vec![1, 2, 3],
            use_mpe: true,
        }
    }

    pub fn rank(&self) -> usize {
        self.mode.rank()
    }

    pub fn dct(&self) -> DctConfig {
        DctConfig {
            token_dim: self.embed_dim,
            growth: self.growth,
            layers_per_block: self.layers_per_block,
            heads: self.heads,
            mlp_ratio: self.mlp_ratio,
        }
    }

    pub fn mpe(&self) -> MpeConfig {
        MpeConfig {
            patch: self.patch,
            embed_dim: self.embed_dim,
            fused_channels: self.fused_channels,
            depth: self.dct_depth,
            dct: self.dct(),
            modalities: self.modalities,
            extents: self.extents.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.extents.len() != self.rank() {
            return Err(TensorError::config(format!(
                "{:?} mode needs {} spatial extents, got {:?}",
                self.mode,
                self.rank(),
                self.extents
            )));
        }
        if self.modalities == 0 || self.classes < 2 {
            return Err(TensorError::config("need at least one modality and two classes"));
        }
        if self.channels.len() != STAGES || self.channels.contains(&0) {
            return Err(TensorError::config(format!("channel plan must list {STAGES} positive widths")));
        }
        let step = 1usize << (STAGES - 1);
        if let Some(&bad) = self.extents.iter().find(|&&e| e == 0 || e % step != 0) {
            return Err(TensorError::config(format!("extent {bad} is not divisible by {step}")));
        }
        if let Some(&bad) = self.injection_scales.iter().find(|&&s| s >= STAGES) {
            return Err(TensorError::config(format!("unknown injection scale exponent {bad}")));
        }
        if self.use_mpe {
            self.mpe().validate()?;
        }
        Ok(())
    }

    /// Spatial extents at scale `1 / 2^s`.
    pub fn extents_at(&self, s: usize) -> Vec<usize> {
        self.extents.iter().map(|e| e >> s).collect()
    }
}

/// Registered multimodal case: `(C, *extents)` intensities plus voxel spacing.
#[derive(Clone, Debug)]
pub struct ModalityStack<T: Real> {
    pub image: Tensor<T>,
    pub spacing: Vec<f64>,
}

impl<T: Real> ModalityStack<T> {
    pub fn new(image: Tensor<T>, spacing: Vec<f64>) -> Result<Self> {
        if image.ndim() < 3 || spacing.len() != image.ndim() - 1 {
            return Err(TensorError::invalid(
                "modality_stack",
                format!("image {:?} does not match spacing {spacing:?}", image.shape()),
            ));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(TensorError::invalid("modality_stack", format!("spacing must be positive: {spacing:?}")));
        }
        Ok(ModalityStack { image, spacing })
    }

    pub fn modalities(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn extents(&self) -> &[usize] {
        &self.image.shape()[1..]
    }

    /// Stacks cases into an `(N, C, *extents)` batch.
    pub fn batch(cases: &[&ModalityStack<T>]) -> Result<Tensor<T>> {
        let first = cases.first().ok_or_else(|| TensorError::invalid("batch", "no cases"))?;
        let mut data = Vec::with_capacity(first.image.numel() * cases.len());
        for case in cases {
            if case.image.shape() != first.image.shape() {
                return Err(TensorError::shape("batch", &[first.image.shape(), case.image.shape()]));
            }
            data.extend_from_slice(case.image.data());
        }
        let mut shape = vec![cases.len()];
        shape.extend_from_slice(first.image.shape());
        Tensor::new(&shape, data)
    }
}

/// 3x3 convolution, instance normalization and ReLU.
#[derive(Clone, Debug)]
pub struct ConvUnit {
    pub conv: Conv,
    pub norm: InstanceNorm,
}

impl ConvUnit {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, in_ch: usize, out_ch: usize, rank: usize, stride: usize) -> Self {
        let conv = Conv::new(&mut b.sub("conv"), in_ch, out_ch, &vec![3; rank], ConvSpec::uniform(rank, stride, 1), false);
        ConvUnit { conv, norm: InstanceNorm::new(&mut b.sub("norm"), out_ch) }
    }

    pub fn forward<'g, T: Real>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        self.norm.forward(g, self.conv.forward(g, x)?)?.relu()
    }
}

/// Two conv units; the first one downsamples in every stage but the first.
#[derive(Clone, Debug)]
pub struct Stage {
    pub units: [ConvUnit; 2],
}

impl Stage {
    fn new<T: Real>(b: &mut ParamBuilder<'_, T>, in_ch: usize, out_ch: usize, rank: usize, stride: usize) -> Self {
        Stage {
            units: [
                ConvUnit::new(&mut b.sub("unit0"), in_ch, out_ch, rank, stride),
                ConvUnit::new(&mut b.sub("unit1"), out_ch, out_ch, rank, 1),
            ],
        }
    }

    fn forward<'g, T: Real>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        self.units[1].forward(g, self.units[0].forward(g, x)?)
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub stages: Vec<Stage>,
}

impl Encoder {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, cfg: &ModelConfig) -> Self {
        let rank = cfg.rank();
        let stages = (0..STAGES)
            .map(|s| {
                let in_ch = if s == 0 { cfg.modalities } else { cfg.channels[s - 1] };
                Stage::new(&mut b.sub(format!("stage{s}")), in_ch, cfg.channels[s], rank, if s == 0 { 1 } else { 2 })
            })
            .collect();
        Encoder { stages }
    }

    /// Stage features, finest first. `injected` pairs a scale exponent with a
    /// tensor that must match that stage's output exactly.
    pub fn forward<'g, T: Real>(
        &self,
        g: &'g Graph<T>,
        x: Var<'g, T>,
        injected: &[(usize, Var<'g, T>)],
    ) -> Result<Vec<Var<'g, T>>> {
        let mut features = Vec::with_capacity(STAGES);
        let mut h = x;
        for (s, stage) in self.stages.iter().enumerate() {
            h = stage.forward(g, h)?;
            for (_, extra) in injected.iter().filter(|(scale, _)| *scale == s) {
                if extra.shape() != h.shape() {
                    return Err(TensorError::invalid(
                        "encoder",
                        format!("injection at scale 1/{} has shape {:?}, stage has {:?}", 1 << s, extra.shape(), h.shape()),
                    ));
                }
                h = h.add(*extra)?;
            }
            features.push(h);
        }
        Ok(features)
    }
}

#[derive(Clone, Debug)]
pub struct DecoderStage {
    pub up: ConvTranspose,
    pub stage: Stage,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    /// Indexed by target scale 0..3.
    pub stages: Vec<DecoderStage>,
    /// One 1x1 prediction head per scale 0..=3.
    pub heads: Vec<Conv>,
}

/// Four prediction maps `O^i` of shape `(N, classes, *extents / 2^i)`.
pub struct MultiScaleOutput<'g, T: Real> {
    pub outputs: Vec<Var<'g, T>>,
}

impl<'g, T: Real> MultiScaleOutput<'g, T> {
    /// Downsampling factor of output `i`.
    pub fn scale_factor(i: usize) -> usize {
        1 << i
    }

    pub fn full_resolution(&self) -> Var<'g, T> {
        self.outputs[0]
    }
}

impl Decoder {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, cfg: &ModelConfig) -> Self {
        let rank = cfg.rank();
        let ch = &cfg.channels;
        let stages = (0..STAGES - 1)
            .map(|s| {
                let mut sb = b.sub(format!("stage{s}"));
                DecoderStage {
                    up: ConvTranspose::new(&mut sb.sub("up"), ch[s + 1], ch[s], &vec![2; rank], ConvSpec::uniform(rank, 2, 0)),
                    stage: Stage::new(&mut sb, 2 * ch[s], ch[s], rank, 1),
                }
            })
            .collect();
        let heads = (0..STAGES)
            .map(|s| {
                Conv::new(
                    &mut b.sub(format!("head{s}")),
                    ch[s],
                    cfg.classes,
                    &vec![1; rank],
                    ConvSpec::uniform(rank, 1, 0),
                    true,
                )
            })
            .collect();
        Decoder { stages, heads }
    }

    /// Runs from the deepest feature upward. With `all_outputs` false only the
    /// full-resolution head is evaluated and the returned list has one entry.
    pub fn forward<'g, T: Real>(
        &self,
        g: &'g Graph<T>,
        features: &[Var<'g, T>],
        all_outputs: bool,
    ) -> Result<Vec<Var<'g, T>>> {
        if features.len() != STAGES {
            return Err(TensorError::invalid("decoder", format!("expected {STAGES} stage features, got {}", features.len())));
        }
        let mut outputs = vec![None; STAGES];
        let mut h = features[STAGES - 1];
        if all_outputs {
            outputs[STAGES - 1] = Some(self.heads[STAGES - 1].forward(g, h)?);
        }
        for s in (0..STAGES - 1).rev() {
            let dec = &self.stages[s];
            let up = dec.up.forward(g, h)?;
            h = dec.stage.forward(g, g.concat(&[up, features[s]], 1)?)?;
            if all_outputs || s == 0 {
                outputs[s] = Some(self.heads[s].forward(g, h)?);
            }
        }
        Ok(outputs.into_iter().flatten().collect())
    }
}

/// What the encoder receives from the embedding branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Injection {
    /// Features computed by the embedding branch.
    Computed,
    /// Zero tensors at every injection scale.
    Zero,
    /// Nothing is added.
    Disabled,
}

#[derive(Clone, Debug)]
pub struct HDenseFormer {
    pub cfg: ModelConfig,
    pub mpe: Option<Mpe>,
    pub adapters: Option<ScaleAdapters>,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl HDenseFormer {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let (mpe, adapters) = if cfg.use_mpe {
            let mpe = Mpe::new(&mut b.sub("mpe"), &cfg.mpe())?;
            let adapters =
                ScaleAdapters::new(&mut b.sub("adapters"), cfg.fused_channels, &cfg.injection_scales, &cfg.channels, cfg.rank())?;
            (Some(mpe), Some(adapters))
        } else {
            (None, None)
        };
        let encoder = Encoder::new(&mut b.sub("encoder"), cfg);
        let decoder = Decoder::new(&mut b.sub("decoder"), cfg);
        Ok(HDenseFormer { cfg: cfg.clone(), mpe, adapters, encoder, decoder })
    }

    /// Builds the model and its freshly initialized parameters from `seed`.
    pub fn init<T: Real>(cfg: &ModelConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(seed);
        let model = Self::new(&mut ParamBuilder::new(&mut store, &mut rng), cfg)?;
        Ok((model, store))
    }

    fn check_input(&self, x: &Var<'_, impl Real>) -> Result<()> {
        let shape = x.shape();
        if shape.len() != self.cfg.rank() + 2 || shape[1] != self.cfg.modalities || shape[2..] != self.cfg.extents[..] {
            let mut expected = vec![shape.first().copied().unwrap_or(1), self.cfg.modalities];
            expected.extend_from_slice(&self.cfg.extents);
            return Err(TensorError::shape("model", &[&shape, &expected]));
        }
        Ok(())
    }

    /// Encoder-ready features per injection scale.
    pub fn injected<'g, T: Real>(
        &self,
        g: &'g Graph<T>,
        x: Var<'g, T>,
        injection: Injection,
    ) -> Result<Vec<(usize, Var<'g, T>)>> {
        match (injection, &self.mpe, &self.adapters) {
            (Injection::Computed, Some(mpe), Some(adapters)) => adapters.forward(g, mpe.forward(g, x)?),
            (Injection::Zero, _, _) => {
                let n = x.shape()[0];
                Ok(self
                    .cfg
                    .injection_scales
                    .iter()
                    .map(|&s| {
                        let mut shape = vec![n, self.cfg.channels[s]];
                        shape.extend(self.cfg.extents_at(s));
                        (s, g.constant(Tensor::zeros(&shape)))
                    })
                    .collect())
            }
            _ => Ok(Vec::new()),
        }
    }

    pub fn forward_with<'g, T: Real>(
        &self,
        g: &'g Graph<T>,
        x: Var<'g, T>,
        injection: Injection,
        all_outputs: bool,
    ) -> Result<Vec<Var<'g, T>>> {
        self.check_input(&x)?;
        let injected = self.injected(g, x, injection)?;
        let features = self.encoder.forward(g, x, &injected)?;
        self.decoder.forward(g, &features, all_outputs)
    }

    /// Training forward pass with all four outputs.
    pub fn forward<'g, T: Real>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<MultiScaleOutput<'g, T>> {
        Ok(MultiScaleOutput { outputs: self.forward_with(g, x, Injection::Computed, true)? })
    }

    /// Full-resolution logits only.
    pub fn predict<'g, T: Real>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
        Ok(self.forward_with(g, x, Injection::Computed, false)?[0])
    }
}

/// Foreground mask from `(N, classes, *spatial)` logits: a voxel is
/// foreground when its highest-scoring class is not class 0. Ties resolve
/// to the lower class.
pub fn segment<T: Real>(logits: &Tensor<T>) -> Result<BinaryMask> {
    let shape = logits.shape();
    if shape.len() < 3 || shape[1] < 2 {
        return Err(TensorError::shape("segment", &[shape]));
    }
    let (n, classes) = (shape[0], shape[1]);
    let voxels: usize = shape[2..].iter().product();
    let d = logits.data();
    let mut out = Vec::with_capacity(n * voxels);
    for b in 0..n {
        for v in 0..voxels {
            let mut best = 0;
            for c in 1..classes {
                if d[(b * classes + c) * voxels + v] > d[(b * classes + best) * voxels + v] {
                    best = c;
                }
            }
            out.push(u8::from(best != 0));
        }
    }
    let mut mask_shape = vec![n];
    mask_shape.extend_from_slice(&shape[2..]);
    BinaryMask::new(&mask_shape, out)
}
