//! Gradient-check suites for every differentiable building block.
//!
//! Each case draws its operands from a seeded generator, reduces the output
//! to a scalar through a random weighting (so that no gradient is trivially
//! uniform) and compares reverse-mode gradients against central differences
//! in 64-bit arithmetic. Operands feeding kinked functions (ReLU, max, log)
//! are drawn away from the kinks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::backbone::{HDenseFormer, Mode, ModelConfig};
use crate::dct::{DctBlock, DctConfig, TokenSequence};
use crate::error::Result;
use crate::gradcheck::{grad_check_params, GradCheckOptions, GradCheckReport, Stencil};
use crate::loss::{ds_loss, focal_dice_loss, LossConfig};
use crate::metrics::BinaryMask;
use crate::mpe::{Mpe, MpeConfig};
use crate::nn::{InstanceNorm, LayerNorm, Linear};
use crate::ops::{ConvSpec, Interpolation};
use crate::params::{seeded_rng, ParamBuilder, ParamId, ParamStore};
use crate::tensor::{numel, Tensor};

pub const PRIMITIVE_TOLERANCE: f64 = 1e-5;
pub const BLOCK_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;
pub const PRIMITIVE_SEEDS: u64 = 20;

#[derive(Clone, Debug)]
pub struct SuiteResult {
    pub suite: String,
    pub case: String,
    pub report: GradCheckReport,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_parts(shape.to_vec(), (0..numel(shape)).map(|_| rng.random_range(lo..hi)).collect())
}

/// Values with magnitude in `[lo, hi)` and random sign.
fn signed(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let data = (0..numel(shape))
        .map(|_| {
            let v = rng.random_range(lo..hi);
            if rng.random::<bool>() { v } else { -v }
        })
        .collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// Distinct values spaced at least 0.1 apart, shuffled.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = numel(shape);
    let mut data: Vec<f64> = (0..n).map(|i| i as f64 * 0.3 - n as f64 * 0.15 + rng.random_range(0.0..0.1)).collect();
    for i in (1..n).rev() {
        data.swap(i, rng.random_range(0..=i));
    }
    Tensor::from_parts(shape.to_vec(), data)
}

fn extent(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

/// `sum(w * y)` for a fixed random `w` of `y`'s shape.
fn weighted_sum<'g>(g: &'g Graph<f64>, y: Var<'g, f64>, seed: u64) -> Result<Var<'g, f64>> {
    let mut rng = seeded_rng(seed ^ 0x5eed);
    let w = g.constant(uniform(&mut rng, &y.shape(), -1.0, 1.0));
    y.mul(w)?.sum_all()
}

type Objective = Box<dyn for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>>;

/// Finite-difference step for operations that are linear in every single
/// operand component (a central difference is then exact up to rounding).
const LINEAR_STEP: f64 = 1e-2;
/// Step for smooth nonlinear operations, used with the five-point stencil.
const SMOOTH_STEP: f64 = 1e-3;

struct PrimitiveCase {
    name: &'static str,
    operands: Vec<Tensor<f64>>,
    op: Objective,
    epsilon: f64,
    stencil: Stencil,
}

fn case(name: &'static str, operands: Vec<Tensor<f64>>, op: Objective) -> PrimitiveCase {
    PrimitiveCase { name, operands, op, epsilon: LINEAR_STEP, stencil: Stencil::Central }
}

fn smooth(name: &'static str, operands: Vec<Tensor<f64>>, op: Objective) -> PrimitiveCase {
    PrimitiveCase { name, operands, op, epsilon: SMOOTH_STEP, stencil: Stencil::FivePoint }
}

fn primitive_cases(rng: &mut ChaCha8Rng) -> Vec<PrimitiveCase> {
    let mut cases = Vec::new();
    let (a, b) = (extent(rng, 1, 4), extent(rng, 2, 5));

    cases.push(case(
        "add_broadcast",
        vec![uniform(rng, &[a, b], -1.0, 1.0), uniform(rng, &[b], -1.0, 1.0)],
        Box::new(|_, v| v[0].add(v[1])),
    ));
    cases.push(case(
        "sub",
        vec![uniform(rng, &[a, b], -1.0, 1.0), uniform(rng, &[a, 1], -1.0, 1.0)],
        Box::new(|_, v| v[0].sub(v[1])),
    ));
    cases.push(case(
        "mul_broadcast",
        vec![uniform(rng, &[a, b], -1.0, 1.0), uniform(rng, &[1, b], -1.0, 1.0)],
        Box::new(|_, v| v[0].mul(v[1])),
    ));
    cases.push(smooth(
        "div",
        vec![uniform(rng, &[a, b], -1.0, 1.0), signed(rng, &[a, b], 0.5, 2.0)],
        Box::new(|_, v| v[0].div(v[1])),
    ));
    cases.push(case("relu", vec![signed(rng, &[a, b], 0.05, 1.0)], Box::new(|_, v| v[0].relu())));
    cases.push(smooth("gelu", vec![uniform(rng, &[a, b], -3.0, 3.0)], Box::new(|_, v| v[0].gelu())));
    cases.push(smooth("exp", vec![uniform(rng, &[a, b], -2.0, 2.0)], Box::new(|_, v| v[0].exp())));
    cases.push(smooth("ln", vec![uniform(rng, &[a, b], 0.5, 2.0)], Box::new(|_, v| v[0].ln_clamped(1e-12))));
    cases.push(smooth("powf", vec![uniform(rng, &[a, b], 0.5, 2.0)], Box::new(|_, v| v[0].powf(2.5))));
    cases.push(case("square", vec![uniform(rng, &[a, b], -2.0, 2.0)], Box::new(|_, v| v[0].square())));
    cases.push(case("affine", vec![uniform(rng, &[a, b], -2.0, 2.0)], Box::new(|_, v| v[0].affine(-1.5, 0.25))));

    let (c, d) = (extent(rng, 2, 4), extent(rng, 1, 3));
    cases.push(case("reshape", vec![uniform(rng, &[a, b, c], -1.0, 1.0)], Box::new(move |_, v| v[0].reshape(&[a * b, c]))));
    cases.push(case("permute", vec![uniform(rng, &[a, b, c], -1.0, 1.0)], Box::new(|_, v| v[0].permute(&[2, 0, 1]))));
    cases.push(case("transpose", vec![uniform(rng, &[a, b, c], -1.0, 1.0)], Box::new(|_, v| v[0].transpose(0, 2))));
    cases.push(case(
        "narrow",
        vec![uniform(rng, &[a, b, c], -1.0, 1.0)],
        Box::new(move |_, v| v[0].narrow(1, b / 2, b - b / 2)),
    ));
    cases.push(case(
        "concat",
        vec![uniform(rng, &[a, b, c], -1.0, 1.0), uniform(rng, &[a, d, c], -1.0, 1.0)],
        Box::new(|g, v| g.concat(&[v[0], v[1]], 1)),
    ));
    let axis = rng.random_range(0..3);
    cases.push(case("sum_all", vec![uniform(rng, &[a, b, c], -1.0, 1.0)], Box::new(|_, v| v[0].sum_all())));
    cases.push(case("mean_all", vec![uniform(rng, &[a, b, c], -1.0, 1.0)], Box::new(|_, v| v[0].mean_all())));
    cases.push(case(
        "sum_axis",
        vec![uniform(rng, &[a, b, c], -1.0, 1.0)],
        Box::new(move |_, v| v[0].sum_axis(axis, false)),
    ));
    cases.push(case(
        "mean_axis",
        vec![uniform(rng, &[a, b, c], -1.0, 1.0)],
        Box::new(move |_, v| v[0].mean_axis(axis, true)),
    ));
    cases.push(case("max_axis", vec![distinct(rng, &[a, b, c])], Box::new(move |_, v| v[0].max_axis(axis, false))));
    // Axes 1 and 2 are never degenerate; softmax over a single entry is constant.
    let soft_axis = rng.random_range(1..3);
    cases.push(smooth("softmax", vec![uniform(rng, &[a, b, c], -2.0, 2.0)], Box::new(move |_, v| v[0].softmax(soft_axis))));
    cases.push(case(
        "matmul",
        vec![uniform(rng, &[a, b], -1.0, 1.0), uniform(rng, &[b, c], -1.0, 1.0)],
        Box::new(|_, v| v[0].matmul(v[1])),
    ));
    cases.push(case(
        "bmm",
        vec![uniform(rng, &[d, a, b], -1.0, 1.0), uniform(rng, &[d, b, c], -1.0, 1.0)],
        Box::new(|_, v| v[0].bmm(v[1])),
    ));
    cases.push(smooth(
        "normalize_last",
        vec![uniform(rng, &[a, c + 1], -2.0, 2.0)],
        Box::new(|_, v| v[0].normalize_last(1e-5)),
    ));
    cases.push(smooth(
        "layer_norm",
        vec![uniform(rng, &[a, b, c + 2], -2.0, 2.0), uniform(rng, &[c + 2], 0.5, 1.5), uniform(rng, &[c + 2], -0.5, 0.5)],
        Box::new(|_, v| v[0].normalize_last(1e-5)?.mul(v[1])?.add(v[2])),
    ));
    cases.push(case(
        "linear",
        vec![uniform(rng, &[a, b], -1.0, 1.0), uniform(rng, &[b, c], -1.0, 1.0), uniform(rng, &[c], -1.0, 1.0)],
        Box::new(|_, v| v[0].matmul(v[1])?.add(v[2])),
    ));

    for rank in [2usize, 3] {
        let (cin, cout) = (extent(rng, 1, 3), extent(rng, 1, 3));
        let k = extent(rng, 1, 3);
        let stride = extent(rng, 1, 2);
        let pad = rng.random_range(0..k);
        let spatial: Vec<usize> = (0..rank).map(|_| extent(rng, k.max(2), 5)).collect();
        let mut xs = vec![extent(rng, 1, 2), cin];
        xs.extend(&spatial);
        let mut ws = vec![cout, cin];
        ws.extend(vec![k; rank]);
        let spec = ConvSpec::uniform(rank, stride, pad);
        let name = if rank == 2 { "conv2d" } else { "conv3d" };
        let s1 = spec.clone();
        cases.push(case(
            name,
            vec![uniform(rng, &xs, -1.0, 1.0), uniform(rng, &ws, -1.0, 1.0), uniform(rng, &[cout], -1.0, 1.0)],
            Box::new(move |_, v| v[0].conv(v[1], Some(v[2]), &s1)),
        ));

        let mut ts = vec![cin, cout];
        ts.extend(vec![k; rank]);
        let tspec = ConvSpec::uniform(rank, stride, 0);
        let name = if rank == 2 { "conv_transpose2d" } else { "conv_transpose3d" };
        cases.push(case(
            name,
            vec![uniform(rng, &xs, -1.0, 1.0), uniform(rng, &ts, -1.0, 1.0), uniform(rng, &[cout], -1.0, 1.0)],
            Box::new(move |_, v| v[0].conv_transpose(v[1], Some(v[2]), &tspec)),
        ));

        let target: Vec<usize> = spatial.iter().map(|&s| extent(rng, 1, 2 * s)).collect();
        let (t1, t2) = (target.clone(), target);
        let name = if rank == 2 { "resize_linear2d" } else { "resize_linear3d" };
        cases.push(case(name, vec![uniform(rng, &xs, -1.0, 1.0)], Box::new(move |_, v| v[0].resize(&t1, Interpolation::Linear))));
        let name = if rank == 2 { "resize_nearest2d" } else { "resize_nearest3d" };
        cases.push(case(name, vec![uniform(rng, &xs, -1.0, 1.0)], Box::new(move |_, v| v[0].resize(&t2, Interpolation::Nearest))));

        let name = if rank == 2 { "instance_norm2d" } else { "instance_norm3d" };
        let mut ns = vec![2, cout];
        ns.extend(spatial.iter().map(|&s| s.max(2)));
        cases.push(smooth(
            name,
            vec![uniform(rng, &ns, -2.0, 2.0), uniform(rng, &[cout, 1], 0.5, 1.5), uniform(rng, &[cout, 1], -0.5, 0.5)],
            Box::new(move |_, v| {
                let shape = v[0].shape();
                let spatial: usize = shape[2..].iter().product();
                v[0].reshape(&[shape[0], shape[1], spatial])?.normalize_last(1e-5)?.mul(v[1])?.add(v[2])
            }),
        ));
    }
    cases
}

/// Every primitive over `seeds` random draws.
pub fn primitive_suite(seeds: u64) -> Vec<SuiteResult> {
    let mut out = Vec::new();
    for seed in 0..seeds {
        let mut rng = seeded_rng(1000 + seed);
        for c in primitive_cases(&mut rng) {
            let mut store = ParamStore::new();
            let ids: Vec<ParamId> =
                c.operands.into_iter().enumerate().map(|(i, t)| store.push(format!("x{i}"), t)).collect();
            let (op, epsilon, stencil) = (c.op, c.epsilon, c.stencil);
            let report = grad_check_params(
                &store,
                |g| {
                    let vars: Vec<Var<'_, f64>> = ids.iter().map(|&id| g.param(id)).collect();
                    weighted_sum(g, op(g, &vars)?, seed)
                },
                &GradCheckOptions { stencil, ..GradCheckOptions::new(epsilon, PRIMITIVE_TOLERANCE) },
            );
            out.push(SuiteResult { suite: "primitives".into(), case: format!("{}[seed {seed}]", c.name), report });
        }
    }
    out
}

/// Whole densely connected block, `d = 16`, `g = 8`, five tokens.
pub fn dct_block_suite() -> SuiteResult {
    let cfg = DctConfig { token_dim: 16, growth: 8, layers_per_block: 4, heads: 2, mlp_ratio: 2.0 };
    let mut store = ParamStore::<f64>::new();
    let mut rng = seeded_rng(11);
    let block = DctBlock::new(&mut ParamBuilder::new(&mut store, &mut rng), &cfg).expect("valid config");
    let z0 = store.push("z0".into(), uniform(&mut rng, &[1, 5, 16], -1.0, 1.0));
    let report = grad_check_params(
        &store,
        |g| {
            let out = block.forward(g, TokenSequence::new(g.param(z0))?)?;
            weighted_sum(g, out.var(), 11)
        },
        &GradCheckOptions::new(1e-3, BLOCK_TOLERANCE).sampled(24, 11).five_point(),
    );
    SuiteResult { suite: "dct_block".into(), case: "d16_g8_n5".into(), report }
}

/// Embedding paths and fusion on a 2D 32x32 input with two modalities.
pub fn mpe_suite() -> SuiteResult {
    let dct = DctConfig { token_dim: 8, growth: 4, layers_per_block: 4, heads: 2, mlp_ratio: 2.0 };
    let cfg = MpeConfig { patch: 16, embed_dim: 8, fused_channels: 6, depth: 1, dct, modalities: 2, extents: vec![32, 32] };
    let mut store = ParamStore::<f64>::new();
    let mut rng = seeded_rng(12);
    let mpe = Mpe::new(&mut ParamBuilder::new(&mut store, &mut rng), &cfg).expect("valid config");
    let x = store.push("input".into(), uniform(&mut rng, &[1, 2, 32, 32], -1.0, 1.0));
    let report = grad_check_params(
        &store,
        |g| weighted_sum(g, mpe.forward(g, g.param(x))?, 12),
        &GradCheckOptions::new(1e-4, BLOCK_TOLERANCE).sampled(24, 12).five_point(),
    );
    SuiteResult { suite: "mpe".into(), case: "2d_32_c2".into(), report }
}

fn random_mask(rng: &mut ChaCha8Rng, shape: &[usize]) -> BinaryMask {
    let data = (0..numel(shape)).map(|_| u8::from(rng.random::<f64>() < 0.4)).collect();
    BinaryMask::new(shape, data).expect("binary")
}

/// Focal + Dice on a random 2-class 4x4 map, and the deep-supervision sum.
pub fn loss_suite() -> Vec<SuiteResult> {
    let mut rng = seeded_rng(13);
    let cfg = LossConfig::default();
    let mut out = Vec::new();

    let mut store = ParamStore::<f64>::new();
    let logits = store.push("logits".into(), uniform(&mut rng, &[1, 2, 4, 4], -2.0, 2.0));
    let mask = random_mask(&mut rng, &[1, 4, 4]);
    let report = grad_check_params(
        &store,
        |g| focal_dice_loss(g, g.param(logits), &mask, &cfg),
        &GradCheckOptions::new(1e-3, BLOCK_TOLERANCE),
    );
    out.push(SuiteResult { suite: "loss".into(), case: "focal_dice_2x4x4".into(), report });

    let mut store = ParamStore::<f64>::new();
    let ids: Vec<ParamId> = (0..4)
        .map(|i| {
            let e = 8 >> i;
            store.push(format!("o{i}"), uniform(&mut rng, &[2, 2, e, e, e], -2.0, 2.0))
        })
        .collect();
    let mask = random_mask(&mut rng, &[2, 8, 8, 8]);
    let report = grad_check_params(
        &store,
        |g| {
            let outs: Vec<Var<'_, f64>> = ids.iter().map(|&id| g.param(id)).collect();
            ds_loss(g, &outs, &mask, &cfg)
        },
        &GradCheckOptions::new(1e-3, BLOCK_TOLERANCE).sampled(48, 13),
    );
    out.push(SuiteResult { suite: "loss".into(), case: "deep_supervision_3d_8".into(), report });
    out
}

/// Configuration of the shrunken model used for the end-to-end check.
pub fn shrunken_model_config() -> ModelConfig {
    ModelConfig {
        patch: 8,
        embed_dim: 8,
        fused_channels: 4,
        dct_depth: 1,
        growth: 4,
        heads: 2,
        channels: vec![2, 3, 4, 4],
        ..ModelConfig::new(Mode::Volumetric, 2, &[16, 16, 16])
    }
}

/// Full model with deep-supervision loss, 3D 16^3, two modalities.
pub fn model_suite() -> SuiteResult {
    let cfg = shrunken_model_config();
    let mut store = ParamStore::<f64>::new();
    let mut rng = seeded_rng(14);
    let model = HDenseFormer::new(&mut ParamBuilder::new(&mut store, &mut rng), &cfg).expect("valid config");
    let x = uniform(&mut rng, &[1, 2, 16, 16, 16], -1.0, 1.0);
    let mask = BinaryMask::from_fn(&[1, 16, 16, 16], |i| {
        let r2: usize = i[1..].iter().map(|&v| (v as isize - 8).pow(2) as usize).sum();
        r2 < 20
    });
    let loss_cfg = LossConfig::default();
    let report = grad_check_params(
        &store,
        |g| {
            let out = model.forward(g, g.constant(x.clone()))?;
            ds_loss(g, &out.outputs, &mask, &loss_cfg)
        },
        &GradCheckOptions::new(1e-4, MODEL_TOLERANCE).sampled(6, 14),
    );
    SuiteResult { suite: "model".into(), case: "3d_16_c2_depth1".into(), report }
}

/// Linear layer and normalization modules, checked through their parameters.
pub fn layer_suite() -> Vec<SuiteResult> {
    let mut rng = seeded_rng(15);
    let mut store = ParamStore::<f64>::new();
    let mut b = ParamBuilder::new(&mut store, &mut rng);
    let lin = Linear::new(&mut b.sub("linear"), 5, 4, true);
    let ln = LayerNorm::new(&mut b.sub("layer_norm"), 4);
    let x = store.push("x".into(), uniform(&mut seeded_rng(16), &[2, 3, 5], -1.0, 1.0));
    let dense = grad_check_params(
        &store,
        |g| weighted_sum(g, ln.forward(g, lin.forward(g, g.param(x))?)?, 15),
        &GradCheckOptions::new(SMOOTH_STEP, PRIMITIVE_TOLERANCE).five_point(),
    );

    let mut store = ParamStore::<f64>::new();
    let inorm = InstanceNorm::new(&mut ParamBuilder::new(&mut store, &mut rng), 3);
    let x = store.push("x".into(), uniform(&mut seeded_rng(17), &[2, 3, 4, 3], -1.0, 1.0));
    let instance = grad_check_params(
        &store,
        |g| weighted_sum(g, inorm.forward(g, g.param(x))?, 17),
        &GradCheckOptions::new(SMOOTH_STEP, PRIMITIVE_TOLERANCE).five_point(),
    );
    vec![
        SuiteResult { suite: "layers".into(), case: "linear_layernorm".into(), report: dense },
        SuiteResult { suite: "layers".into(), case: "instance_norm".into(), report: instance },
    ]
}

pub fn all_suites() -> Vec<SuiteResult> {
    let mut out = primitive_suite(PRIMITIVE_SEEDS);
    out.extend(layer_suite());
    out.push(dct_block_suite());
    out.push(mpe_suite());
    out.extend(loss_suite());
    out.push(model_suite());
    out
}
