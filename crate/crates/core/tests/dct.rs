use denseformer::complexity::count_dct_block;
use denseformer::dct::{DctBlock, DctConfig, DctLayer, DctStack, MultiHeadAttention, TokenSequence};
use denseformer::gradcheck::{grad_check_params, GradCheckOptions};
use denseformer::params::{seeded_rng, ParamBuilder};
use denseformer::{Graph, ParamStore, Tensor};
use rand::Rng;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = seeded_rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn set(store: &mut ParamStore<f64>, name: &str, values: &[f64]) {
    let id = store.find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    let shape = store.get(id).shape().to_vec();
    *store.get_mut(id) = Tensor::from_f64(&shape, values).unwrap();
}

fn matvec(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    // w is (in, out) row-major
    let out = b.len();
    (0..out).map(|o| b[o] + x.iter().enumerate().map(|(i, xi)| xi * w[i * out + o]).sum::<f64>()).collect()
}

#[test]
fn two_token_attention_matches_direct_computation() {
    let mut store = ParamStore::new();
    let mut rng = seeded_rng(0);
    let attn = MultiHeadAttention::new(&mut ParamBuilder::new(&mut store, &mut rng), 2, 1).unwrap();
    let (wq, bq) = ([0.5, -0.3, 0.8, 0.1], [0.05, -0.02]);
    let (wk, bk) = ([0.2, 0.7, -0.4, 0.6], [0.1, 0.0]);
    let (wv, bv) = ([1.0, 0.3, -0.5, 0.9], [0.0, 0.2]);
    let (wo, bo) = ([0.6, -0.1, 0.4, 1.1], [-0.3, 0.05]);
    set(&mut store, "query.weight", &wq);
    set(&mut store, "query.bias", &bq);
    set(&mut store, "key.weight", &wk);
    set(&mut store, "key.bias", &bk);
    set(&mut store, "value.weight", &wv);
    set(&mut store, "value.bias", &bv);
    set(&mut store, "output.weight", &wo);
    set(&mut store, "output.bias", &bo);
    let tokens = [[0.3, -1.2], [0.9, 0.4]];

    let g = Graph::inference(&store);
    let x = g.input(Tensor::from_f64(&[1, 2, 2], &[0.3, -1.2, 0.9, 0.4]).unwrap());
    let (out, weights) = attn.forward_with_weights(&g, TokenSequence::new(x).unwrap()).unwrap();

    let q: Vec<Vec<f64>> = tokens.iter().map(|t| matvec(t, &wq, &bq)).collect();
    let k: Vec<Vec<f64>> = tokens.iter().map(|t| matvec(t, &wk, &bk)).collect();
    let v: Vec<Vec<f64>> = tokens.iter().map(|t| matvec(t, &wv, &bv)).collect();
    let mut expected_out = Vec::new();
    let mut expected_weights = Vec::new();
    for qi in &q {
        let s: Vec<f64> = k.iter().map(|kj| (qi[0] * kj[0] + qi[1] * kj[1]) / 2f64.sqrt()).collect();
        let m = s[0].max(s[1]);
        let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
        let a: Vec<f64> = e.iter().map(|x| x / (e[0] + e[1])).collect();
        let mixed = [a[0] * v[0][0] + a[1] * v[1][0], a[0] * v[0][1] + a[1] * v[1][1]];
        expected_out.extend(matvec(&mixed, &wo, &bo));
        expected_weights.extend(a);
    }
    for (got, want) in out.var().value().data().iter().zip(&expected_out) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
    for (got, want) in weights.value().data().iter().zip(&expected_weights) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn single_token_attention_is_value_then_output_map() {
    let mut store = ParamStore::new();
    let mut rng = seeded_rng(3);
    let attn = MultiHeadAttention::new(&mut ParamBuilder::new(&mut store, &mut rng), 4, 2).unwrap();
    let x = random(&[1, 1, 4], 9);
    let g = Graph::inference(&store);
    let out = attn.forward(&g, TokenSequence::new(g.input(x.clone())).unwrap()).unwrap();
    let value = attn.value.forward(&g, g.input(x)).unwrap();
    let expected = attn.output.forward(&g, value).unwrap();
    assert!(out.var().value().max_abs_diff(&expected.value()) < 1e-14);
}

#[test]
fn attention_weights_are_row_stochastic() {
    let mut store = ParamStore::new();
    let mut rng = seeded_rng(4);
    let attn = MultiHeadAttention::new(&mut ParamBuilder::new(&mut store, &mut rng), 8, 4).unwrap();
    let g = Graph::inference(&store);
    let x = g.input(random(&[2, 7, 8], 5).map(|v| 3.0 * v));
    let (_, w) = attn.forward_with_weights(&g, TokenSequence::new(x).unwrap()).unwrap();
    assert_eq!(w.shape(), vec![8, 7, 7]);
    for row in w.value().data().chunks(7) {
        assert!(row.iter().all(|&p| p >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn block_is_permutation_equivariant() {
    let cfg = DctConfig { token_dim: 12, growth: 4, layers_per_block: 4, heads: 2, mlp_ratio: 2.0 };
    let mut store = ParamStore::new();
    let mut rng = seeded_rng(6);
    let block = DctBlock::new(&mut ParamBuilder::new(&mut store, &mut rng), &cfg).unwrap();
    let n = 5;
    let x = random(&[1, n, 12], 7);
    let perm = [3, 0, 4, 1, 2];
    let mut permuted = vec![0.0; x.numel()];
    for (dst, &src) in perm.iter().enumerate() {
        permuted[dst * 12..(dst + 1) * 12].copy_from_slice(&x.data()[src * 12..(src + 1) * 12]);
    }
    let g = Graph::inference(&store);
    let run = |t: Tensor<f64>| block.forward(&g, TokenSequence::new(g.input(t)).unwrap()).unwrap().var().value().clone();
    let y = run(x.clone());
    let yp = run(Tensor::new(&[1, n, 12], permuted).unwrap());
    for (dst, &src) in perm.iter().enumerate() {
        for c in 0..12 {
            assert!((yp.data()[dst * 12 + c] - y.data()[src * 12 + c]).abs() < 1e-12);
        }
    }
}

#[test]
fn projection_widths_follow_dense_connectivity() {
    let cfg = DctConfig::new(128);
    let mut store = ParamStore::<f64>::new();
    let mut rng = seeded_rng(1);
    let block = DctBlock::new(&mut ParamBuilder::new(&mut store, &mut rng), &cfg).unwrap();
    for (j, layer) in block.layers.iter().enumerate() {
        let shape = store.get(layer.projection.weight).shape().to_vec();
        assert_eq!(shape, vec![128 + j * 32, 32]);
    }
    assert_eq!(store.get(block.terminal.weight).shape(), &[256, 128]);
    assert_eq!(cfg.projection_width(4), 224);
}

#[test]
fn layer_output_width_is_growth_for_every_depth() {
    let cfg = DctConfig { token_dim: 16, growth: 8, layers_per_block: 4, heads: 2, mlp_ratio: 2.0 };
    let mut store = ParamStore::new();
    let mut rng = seeded_rng(2);
    let layers: Vec<DctLayer> = (1..=4)
        .map(|j| DctLayer::new(&mut ParamBuilder::new(&mut store, &mut rng).sub(format!("l{j}")), &cfg, j).unwrap())
        .collect();
    let g = Graph::inference(&store);
    let mut previous = vec![TokenSequence::new(g.input(random(&[1, 3, 16], 1))).unwrap()];
    for layer in &layers {
        let z = layer.forward(&g, &previous).unwrap();
        assert_eq!(z.var().shape(), vec![1, 3, 8]);
        previous.push(z);
    }
}

#[test]
fn layer_gradient_with_respect_to_block_input() {
    let cfg = DctConfig { token_dim: 6, growth: 4, layers_per_block: 4, heads: 2, mlp_ratio: 2.0 };
    let mut store = ParamStore::new();
    let mut rng = seeded_rng(8);
    let mut b = ParamBuilder::new(&mut store, &mut rng);
    let first = DctLayer::new(&mut b.sub("l1"), &cfg, 1).unwrap();
    let second = DctLayer::new(&mut b.sub("l2"), &cfg, 2).unwrap();
    let z0 = store.push("z0".into(), random(&[1, 3, 6], 4));
    let report = grad_check_params(
        &store,
        |g| {
            let z0 = TokenSequence::new(g.param(z0))?;
            let z1 = first.forward(g, &[z0])?;
            second.forward(g, &[z0, z1])?.var().sum_all()
        },
        &GradCheckOptions::new(1e-3, 1e-5).five_point(),
    );
    // The key bias has an identically zero gradient (softmax is shift
    // invariant), so its entry only measures rounding noise.
    assert!(report.failure.is_none());
    assert!(report.per_parameter_errors["z0"] < 1e-5, "{report:?}");
}

#[test]
fn block_is_deterministic_and_matches_counter() {
    let cfg = DctConfig::new(128);
    let build = || {
        let mut store = ParamStore::<f64>::new();
        let mut rng = seeded_rng(21);
        let block = DctBlock::new(&mut ParamBuilder::new(&mut store, &mut rng), &cfg).unwrap();
        (block, store)
    };
    let (block, store) = build();
    let (_, again) = build();
    assert_eq!(store.values(), again.values());
    assert_eq!(store.num_scalars() as u64, count_dct_block(&cfg, 4).unwrap().params);

    let x = random(&[1, 4, 128], 2);
    let out = |s: &ParamStore<f64>| {
        let g = Graph::inference(s);
        block.forward(&g, TokenSequence::new(g.input(x.clone())).unwrap()).unwrap().var().value().clone()
    };
    let (a, b) = (out(&store), out(&again));
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn stack_preserves_shape_and_is_token_count_agnostic() {
    let cfg = DctConfig { token_dim: 8, growth: 4, layers_per_block: 4, heads: 2, mlp_ratio: 2.0 };
    for depth in [1, 2, 3, 6, 9] {
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(depth as u64);
        let stack = DctStack::new(&mut ParamBuilder::new(&mut store, &mut rng), &cfg, depth).unwrap();
        let g = Graph::inference(&store);
        for n in [1, 5] {
            let out = stack.forward(&g, TokenSequence::new(g.input(random(&[2, n, 8], 3))).unwrap()).unwrap();
            assert_eq!(out.var().shape(), vec![2, n, 8]);
        }
    }
}

#[test]
fn invalid_configurations_are_rejected() {
    let mut cfg = DctConfig::new(64);
    cfg.heads = 3;
    assert!(cfg.validate().is_err());
    cfg.heads = 4;
    cfg.growth = 0;
    assert!(cfg.validate().is_err());
}
