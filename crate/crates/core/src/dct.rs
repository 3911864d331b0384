//! Densely connected transformer blocks.
//!
//! A block keeps a list `[z0, z1, ..]` of token maps. Layer `j` projects the
//! concatenation of everything before it down to the growth width `g`, runs a
//! pre-norm attention sublayer with a residual connection and a feedforward
//! map, and appends its output to the list. After the last layer the whole
//! list is mapped back to the input width.
//!
//! Token maps are `(batch, n_tokens, dim)` tensors.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Result, TensorError};
use crate::nn::{FeedForward, LayerNorm, Linear};
use crate::params::ParamBuilder;
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DctConfig {
    /// Width `d` of the block input and output.
    pub token_dim: usize,
    /// Width `g` of each layer's output.
    pub growth: usize,
    pub layers_per_block: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
}

impl DctConfig {
    pub fn new(token_dim: usize) -> Self {
        DctConfig { token_dim, growth: 32, layers_per_block: 4, heads: 4, mlp_ratio: 2.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.token_dim == 0 || self.growth == 0 || self.layers_per_block == 0 || self.heads == 0 {
            return Err(TensorError::config(format!("dct: all widths and counts must be positive: {self:?}")));
        }
        if self.growth % self.heads != 0 {
            return Err(TensorError::config(format!(
                "dct: growth {} is not divisible by {} heads",
                self.growth, self.heads
            )));
        }
        hidden_width(self.growth, self.mlp_ratio).map(|_| ())
    }

    /// Input width of the projection in front of layer `j` (1-based).
    pub fn projection_width(&self, j: usize) -> usize {
        self.token_dim + (j - 1) * self.growth
    }

    /// Input width of the terminal map.
    pub fn concat_width(&self) -> usize {
        self.token_dim + self.layers_per_block * self.growth
    }
}

/// Hidden width of a feedforward map over `dim` features.
pub fn hidden_width(dim: usize, mlp_ratio: f64) -> Result<usize> {
    let h = (mlp_ratio * dim as f64).round();
    if !(h >= 1.0) {
        return Err(TensorError::config(format!("mlp ratio {mlp_ratio} gives an empty hidden layer for width {dim}")));
    }
    Ok(h as usize)
}

/// Checked `(batch, n_tokens, dim)` token map.
#[derive(Clone, Copy)]
pub struct TokenSequence<'g, T: Real> {
    var: Var<'g, T>,
}

impl<'g, T: Real> TokenSequence<'g, T> {
    pub fn new(var: Var<'g, T>) -> Result<Self> {
        let shape = var.shape();
        if shape.len() != 3 {
            return Err(TensorError::invalid("tokens", format!("expected (batch, n_tokens, dim), got {shape:?}")));
        }
        Ok(TokenSequence { var })
    }

    pub fn var(&self) -> Var<'g, T> {
        self.var
    }

    pub fn batch(&self) -> usize {
        self.var.shape()[0]
    }

    pub fn n_tokens(&self) -> usize {
        self.var.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.var.shape()[2]
    }
}

/// Scaled dot-product self-attention with separate query, key, value and
/// output projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(TensorError::config(format!("attention: {heads} heads do not divide width {dim}")));
        }
        Ok(MultiHeadAttention {
            query: Linear::new(&mut b.sub("query"), dim, dim, true),
            key: Linear::new(&mut b.sub("key"), dim, dim, true),
            value: Linear::new(&mut b.sub("value"), dim, dim, true),
            output: Linear::new(&mut b.sub("output"), dim, dim, true),
            heads,
            dim,
        })
    }

    pub fn forward<'g, T: Real>(&self, g: &'g Graph<T>, x: TokenSequence<'g, T>) -> Result<TokenSequence<'g, T>> {
        Ok(self.forward_with_weights(g, x)?.0)
    }

    /// Output together with the attention weights, shaped
    /// `(batch * heads, n_tokens, n_tokens)` with rows summing to one.
    pub fn forward_with_weights<'g, T: Real>(
        &self,
        g: &'g Graph<T>,
        x: TokenSequence<'g, T>,
    ) -> Result<(TokenSequence<'g, T>, Var<'g, T>)> {
        if x.dim() != self.dim {
            return Err(TensorError::shape("attention", &[&x.var().shape(), &[self.dim]]));
        }
        let (batch, n, h) = (x.batch(), x.n_tokens(), self.heads);
        let hd = self.dim / h;
        let split = |v: Var<'g, T>| -> Result<Var<'g, T>> {
            v.reshape(&[batch, n, h, hd])?.permute(&[0, 2, 1, 3])?.reshape(&[batch * h, n, hd])
        };
        let q = split(self.query.forward(g, x.var())?)?;
        let k = split(self.key.forward(g, x.var())?)?;
        let v = split(self.value.forward(g, x.var())?)?;
        let scores = q.bmm(k.transpose(1, 2)?)?.scale(1.0 / (hd as f64).sqrt())?;
        let weights = scores.softmax(2)?;
        let mixed = weights
            .bmm(v)?
            .reshape(&[batch, h, n, hd])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[batch, n, self.dim])?;
        let out = TokenSequence::new(self.output.forward(g, mixed)?)?;
        Ok((out, weights))
    }
}

/// Layer `j` of a block: projection to `g`, attention sublayer, feedforward.
#[derive(Clone, Debug)]
pub struct DctLayer {
    pub projection: Linear,
    pub attn_norm: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ff_norm: LayerNorm,
    pub ff: FeedForward,
}

impl DctLayer {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, cfg: &DctConfig, j: usize) -> Result<Self> {
        let g = cfg.growth;
        let hidden = hidden_width(g, cfg.mlp_ratio)?;
        Ok(DctLayer {
            projection: Linear::new(&mut b.sub("projection"), cfg.projection_width(j), g, true),
            attn_norm: LayerNorm::new(&mut b.sub("attn_norm"), g),
            attn: MultiHeadAttention::new(&mut b.sub("attn"), g, cfg.heads)?,
            ff_norm: LayerNorm::new(&mut b.sub("ff_norm"), g),
            ff: FeedForward::new(&mut b.sub("ff"), g, hidden, g),
        })
    }

    /// Output `z_j` from the dense list `[z0, .., z_{j-1}]`.
    pub fn forward<'g, T: Real>(&self, g: &'g Graph<T>, previous: &[TokenSequence<'g, T>]) -> Result<TokenSequence<'g, T>> {
        let first = previous.first().ok_or_else(|| TensorError::invalid("dct_layer", "empty input list"))?;
        if previous.iter().any(|z| z.batch() != first.batch() || z.n_tokens() != first.n_tokens()) {
            let shapes: Vec<Vec<usize>> = previous.iter().map(|z| z.var().shape()).collect();
            return Err(TensorError::ShapeMismatch { op: "dct_layer", shapes });
        }
        let parts: Vec<Var<'g, T>> = previous.iter().map(|z| z.var()).collect();
        let joined = if parts.len() == 1 { parts[0] } else { g.concat(&parts, 2)? };
        let reduced = self.projection.forward(g, joined)?;
        let normed = TokenSequence::new(self.attn_norm.forward(g, reduced)?)?;
        let attended = self.attn.forward(g, normed)?.var().add(reduced)?;
        let out = self.ff.forward(g, self.ff_norm.forward(g, attended)?)?;
        TokenSequence::new(out)
    }
}

#[derive(Clone, Debug)]
pub struct DctBlock {
    pub layers: Vec<DctLayer>,
    /// Maps the concatenated list back to the input width, after a GELU.
    pub terminal: Linear,
    pub cfg: DctConfig,
}

impl DctBlock {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, cfg: &DctConfig) -> Result<Self> {
        cfg.validate()?;
        let layers = (1..=cfg.layers_per_block)
            .map(|j| DctLayer::new(&mut b.sub(format!("layer{j}")), cfg, j))
            .collect::<Result<Vec<_>>>()?;
        let terminal = Linear::new(&mut b.sub("terminal"), cfg.concat_width(), cfg.token_dim, true);
        Ok(DctBlock { layers, terminal, cfg: cfg.clone() })
    }

    pub fn forward<'g, T: Real>(&self, g: &'g Graph<T>, z0: TokenSequence<'g, T>) -> Result<TokenSequence<'g, T>> {
        if z0.dim() != self.cfg.token_dim {
            return Err(TensorError::shape("dct_block", &[&z0.var().shape(), &[self.cfg.token_dim]]));
        }
        let mut dense = vec![z0];
        for layer in &self.layers {
            let z = layer.forward(g, &dense)?;
            dense.push(z);
        }
        let parts: Vec<Var<'g, T>> = dense.iter().map(|z| z.var()).collect();
        let joined = g.concat(&parts, 2)?.gelu()?;
        TokenSequence::new(self.terminal.forward(g, joined)?)
    }
}

/// `depth` independent blocks applied in sequence.
#[derive(Clone, Debug)]
pub struct DctStack {
    pub blocks: Vec<DctBlock>,
}

impl DctStack {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, cfg: &DctConfig, depth: usize) -> Result<Self> {
        if depth == 0 {
            return Err(TensorError::config("dct stack depth must be at least 1"));
        }
        let blocks = (0..depth)
            .map(|i| DctBlock::new(&mut b.sub(format!("block{i}")), cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(DctStack { blocks })
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn forward<'g, T: Real>(&self, g: &'g Graph<T>, z0: TokenSequence<'g, T>) -> Result<TokenSequence<'g, T>> {
        self.blocks.iter().try_fold(z0, |z, block| block.forward(g, z))
    }
}

/// Pre-norm transformer layer at full width, used as the reference point for
/// the complexity comparison.
#[derive(Clone, Debug)]
pub struct TransformerLayer {
    pub attn_norm: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ff_norm: LayerNorm,
    pub ff: FeedForward,
}

impl TransformerLayer {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, dim: usize, heads: usize, mlp_ratio: f64) -> Result<Self> {
        let hidden = hidden_width(dim, mlp_ratio)?;
        Ok(TransformerLayer {
            attn_norm: LayerNorm::new(&mut b.sub("attn_norm"), dim),
            attn: MultiHeadAttention::new(&mut b.sub("attn"), dim, heads)?,
            ff_norm: LayerNorm::new(&mut b.sub("ff_norm"), dim),
            ff: FeedForward::new(&mut b.sub("ff"), dim, hidden, dim),
        })
    }

    pub fn forward<'g, T: Real>(&self, g: &'g Graph<T>, x: TokenSequence<'g, T>) -> Result<TokenSequence<'g, T>> {
        let normed = TokenSequence::new(self.attn_norm.forward(g, x.var())?)?;
        let h = self.attn.forward(g, normed)?.var().add(x.var())?;
        let out = self.ff.forward(g, self.ff_norm.forward(g, h)?)?.add(h)?;
        TokenSequence::new(out)
    }
}

#[derive(Clone, Debug)]
pub struct StandardTransformer {
    pub layers: Vec<TransformerLayer>,
}

impl StandardTransformer {
    pub fn new<T: Real>(b: &mut ParamBuilder<'_, T>, dim: usize, layers: usize, heads: usize, mlp_ratio: f64) -> Result<Self> {
        let layers = (0..layers)
            .map(|i| TransformerLayer::new(&mut b.sub(format!("layer{i}")), dim, heads, mlp_ratio))
            .collect::<Result<Vec<_>>>()?;
        Ok(StandardTransformer { layers })
    }

    pub fn forward<'g, T: Real>(&self, g: &'g Graph<T>, x: TokenSequence<'g, T>) -> Result<TokenSequence<'g, T>> {
        self.layers.iter().try_fold(x, |z, layer| layer.forward(g, z))
    }
}
