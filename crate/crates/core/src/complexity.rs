//! Closed-form parameter and FLOP counts.
//!
//! FLOPs count multiply-accumulates of linear maps, convolutions and the two
//! attention matrix products, at two FLOPs per MAC, for a batch of one.
//! Normalizations, softmax, activations, bias additions and interpolation are
//! not counted. Parameter counts are exact and match the tensors the model
//! constructors register.

use std::fmt::{self, Write as _};

use crate::backbone::{ModelConfig, STAGES};
use crate::dct::{hidden_width, DctConfig};
use crate::error::{Result, TensorError};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub name: String,
    pub params: u64,
    pub flops: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ComplexityReport {
    pub params: u64,
    pub flops: u64,
    pub breakdown: Vec<Entry>,
}

impl ComplexityReport {
    fn push(&mut self, name: impl Into<String>, params: u64, flops: u64) {
        self.params += params;
        self.flops += flops;
        self.breakdown.push(Entry { name: name.into(), params, flops });
    }

    fn absorb(&mut self, prefix: &str, other: ComplexityReport) {
        for e in other.breakdown {
            self.push(format!("{prefix}.{}", e.name), e.params, e.flops);
        }
    }

    /// Sum of the breakdown entries whose name starts with `prefix`.
    pub fn params_under(&self, prefix: &str) -> u64 {
        self.breakdown.iter().filter(|e| e.name.starts_with(prefix)).map(|e| e.params).sum()
    }

    /// `key=value` lines, one per total.
    pub fn key_values(&self, label: &str) -> String {
        format!("{label}.params={}\n{label}.flops={}\n", self.params, self.flops)
    }
}

impl fmt::Display for ComplexityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.breakdown.iter().map(|e| e.name.len()).max().unwrap_or(0).max(5);
        writeln!(f, "{:<width$}  {:>14}  {:>18}", "layer", "params", "flops")?;
        for e in &self.breakdown {
            writeln!(f, "{:<width$}  {:>14}  {:>18}", e.name, e.params, e.flops)?;
        }
        write!(f, "{:<width$}  {:>14}  {:>18}", "total", self.params, self.flops)
    }
}

fn positive(values: &[(&str, usize)]) -> Result<()> {
    match values.iter().find(|(_, v)| *v == 0) {
        Some((name, _)) => Err(TensorError::config(format!("complexity: {name} must be positive"))),
        None => Ok(()),
    }
}

/// `(params, flops)` of a biased linear map applied to `rows` vectors.
fn linear(rows: usize, inp: usize, out: usize) -> (u64, u64) {
    let (r, i, o) = (rows as u64, inp as u64, out as u64);
    (i * o + o, 2 * r * i * o)
}

fn layer_norm(dim: usize) -> (u64, u64) {
    (2 * dim as u64, 0)
}

fn attention(report: &mut ComplexityReport, name: &str, dim: usize, n: usize) {
    let (p, f) = linear(n, dim, dim);
    report.push(format!("{name}.qkv_out"), 4 * p, 4 * f);
    let (n, d) = (n as u64, dim as u64);
    report.push(format!("{name}.scores"), 0, 2 * n * n * d);
    report.push(format!("{name}.mix"), 0, 2 * n * n * d);
}

fn feedforward(report: &mut ComplexityReport, name: &str, dim: usize, hidden: usize, out: usize, n: usize) {
    let (p1, f1) = linear(n, dim, hidden);
    let (p2, f2) = linear(n, hidden, out);
    report.push(name, p1 + p2, f1 + f2);
}

/// Pre-norm transformer stack at width `dim`.
pub fn count_transformer(dim: usize, layers: usize, mlp_ratio: f64, heads: usize, n_tokens: usize) -> Result<ComplexityReport> {
    positive(&[("dim", dim), ("layers", layers), ("heads", heads), ("n_tokens", n_tokens)])?;
    if dim % heads != 0 {
        return Err(TensorError::config(format!("complexity: {heads} heads do not divide {dim}")));
    }
    let hidden = hidden_width(dim, mlp_ratio)?;
    let mut r = ComplexityReport::default();
    for i in 0..layers {
        let (p, f) = layer_norm(dim);
        r.push(format!("layer{i}.attn_norm"), p, f);
        attention(&mut r, &format!("layer{i}.attn"), dim, n_tokens);
        r.push(format!("layer{i}.ff_norm"), p, f);
        feedforward(&mut r, &format!("layer{i}.ff"), dim, hidden, dim, n_tokens);
    }
    Ok(r)
}

/// One densely connected block.
pub fn count_dct_block(cfg: &DctConfig, n_tokens: usize) -> Result<ComplexityReport> {
    cfg.validate()?;
    positive(&[("n_tokens", n_tokens)])?;
    let g = cfg.growth;
    let hidden = hidden_width(g, cfg.mlp_ratio)?;
    let mut r = ComplexityReport::default();
    for j in 1..=cfg.layers_per_block {
        let (p, f) = linear(n_tokens, cfg.projection_width(j), g);
        r.push(format!("layer{j}.projection"), p, f);
        let (p, f) = layer_norm(g);
        r.push(format!("layer{j}.attn_norm"), p, f);
        attention(&mut r, &format!("layer{j}.attn"), g, n_tokens);
        r.push(format!("layer{j}.ff_norm"), p, f);
        feedforward(&mut r, &format!("layer{j}.ff"), g, hidden, g, n_tokens);
    }
    let (p, f) = linear(n_tokens, cfg.concat_width(), cfg.token_dim);
    r.push("terminal", p, f);
    Ok(r)
}

pub fn count_dct_stack(cfg: &DctConfig, depth: usize, n_tokens: usize) -> Result<ComplexityReport> {
    positive(&[("depth", depth)])?;
    let block = count_dct_block(cfg, n_tokens)?;
    let mut r = ComplexityReport::default();
    for i in 0..depth {
        r.absorb(&format!("block{i}"), block.clone());
    }
    Ok(r)
}

/// `(params, flops)` of a convolution producing `out_voxels` outputs.
fn conv(out_voxels: usize, inp: usize, out: usize, kvol: usize, bias: bool) -> (u64, u64) {
    let (v, i, o, k) = (out_voxels as u64, inp as u64, out as u64, kvol as u64);
    (i * o * k + if bias { o } else { 0 }, 2 * v * i * o * k)
}

/// Whole model with all four prediction heads, batch of one.
pub fn count_model(cfg: &ModelConfig) -> Result<ComplexityReport> {
    cfg.validate()?;
    let rank = cfg.rank() as u32;
    let ch = &cfg.channels;
    let voxels = |s: usize| -> usize { cfg.extents_at(s).iter().product() };
    let k3 = 3usize.pow(rank);
    let mut r = ComplexityReport::default();

    if cfg.use_mpe {
        let mpe = cfg.mpe();
        let n = mpe.n_tokens();
        for i in 0..cfg.modalities {
            let (p, f) = conv(n, 1, cfg.embed_dim, cfg.patch.pow(rank), true);
            r.push(format!("mpe.path{i}.patch_embed"), p, f);
            r.push(format!("mpe.path{i}.pos_embed"), (n * cfg.embed_dim) as u64, 0);
            r.absorb(&format!("mpe.path{i}.dct"), count_dct_stack(&mpe.dct, cfg.dct_depth, n)?);
        }
        let (p, f) = conv(n, cfg.modalities * cfg.embed_dim, cfg.fused_channels, 1, true);
        r.push("mpe.fusion", p, f);
        let mut scales = cfg.injection_scales.clone();
        scales.sort_unstable();
        scales.dedup();
        for s in scales {
            let (p, f) = conv(voxels(s), cfg.fused_channels, ch[s], 1, true);
            r.push(format!("adapters.adapter{s}"), p, f);
        }
    }

    for s in 0..STAGES {
        let inp = if s == 0 { cfg.modalities } else { ch[s - 1] };
        let (p, f) = conv(voxels(s), inp, ch[s], k3, false);
        r.push(format!("encoder.stage{s}.unit0"), p + 2 * ch[s] as u64, f);
        let (p, f) = conv(voxels(s), ch[s], ch[s], k3, false);
        r.push(format!("encoder.stage{s}.unit1"), p + 2 * ch[s] as u64, f);
    }

    for s in 0..STAGES - 1 {
        // Every input voxel scatters a 2^rank kernel, so MACs are counted at
        // the output resolution with one tap per output voxel.
        let (p, _) = conv(1, ch[s + 1], ch[s], 2usize.pow(rank), true);
        let (_, f) = conv(voxels(s), ch[s + 1], ch[s], 1, true);
        r.push(format!("decoder.stage{s}.up"), p, f);
        let (p, f) = conv(voxels(s), 2 * ch[s], ch[s], k3, false);
        r.push(format!("decoder.stage{s}.unit0"), p + 2 * ch[s] as u64, f);
        let (p, f) = conv(voxels(s), ch[s], ch[s], k3, false);
        r.push(format!("decoder.stage{s}.unit1"), p + 2 * ch[s] as u64, f);
    }
    for s in 0..STAGES {
        let (p, f) = conv(voxels(s), ch[s], cfg.classes, 1, true);
        r.push(format!("decoder.head{s}"), p, f);
    }
    Ok(r)
}

/// Side-by-side comparison of a standard 12-layer transformer with a stack of
/// three densely connected blocks, as aligned text.
pub fn table1(dims: &[usize], n_tokens: usize) -> Result<String> {
    let mut s = String::new();
    writeln!(
        s,
        "{:>6}  {:>14}  {:>16}  {:>14}  {:>16}  {:>9}  {:>9}",
        "dim", "transf_params", "transf_gflops", "dct_params", "dct_gflops", "p_ratio", "f_ratio"
    )
    .unwrap();
    for &d in dims {
        let t = count_transformer(d, 12, 2.0, 4, n_tokens)?;
        let c = count_dct_stack(&DctConfig::new(d), 3, n_tokens)?;
        writeln!(
            s,
            "{:>6}  {:>14}  {:>16.6}  {:>14}  {:>16.6}  {:>9.3}  {:>9.3}",
            d,
            t.params,
            t.flops as f64 / 1e9,
            c.params,
            c.flops as f64 / 1e9,
            t.params as f64 / c.params as f64,
            t.flops as f64 / c.flops as f64
        )
        .unwrap();
    }
    Ok(s)
}
