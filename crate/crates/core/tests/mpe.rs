use denseformer::complexity::count_model;
use denseformer::backbone::{Mode, ModelConfig};
use denseformer::dct::DctConfig;
use denseformer::mpe::{EmbeddingPath, Mpe, MpeConfig, ScaleAdapters};
use denseformer::params::{seeded_rng, ParamBuilder};
use denseformer::{Graph, ParamStore, Tensor};
use rand::Rng;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = seeded_rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn small(modalities: usize, extents: &[usize]) -> MpeConfig {
    MpeConfig {
        patch: 16,
        embed_dim: 8,
        fused_channels: 6,
        depth: 1,
        dct: DctConfig { token_dim: 8, growth: 4, layers_per_block: 4, heads: 2, mlp_ratio: 2.0 },
        modalities,
        extents: extents.to_vec(),
    }
}

fn build(cfg: &MpeConfig, seed: u64) -> (Mpe, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let mut rng = seeded_rng(seed);
    let mpe = Mpe::new(&mut ParamBuilder::new(&mut store, &mut rng), cfg).unwrap();
    (mpe, store)
}

#[test]
fn patch_embedding_token_counts() {
    for (extents, tokens) in [(vec![144, 144, 144], 729), (vec![384, 384], 576), (vec![16, 16], 1)] {
        let mut cfg = small(1, &extents);
        cfg.embed_dim = 128;
        cfg.dct.token_dim = 128;
        cfg.dct.growth = 32;
        assert_eq!(cfg.n_tokens(), tokens);
        let mut store = ParamStore::<f32>::new();
        let mut rng = seeded_rng(0);
        let path = EmbeddingPath::new(&mut ParamBuilder::new(&mut store, &mut rng), &cfg).unwrap();
        let g = Graph::inference(&store);
        let mut shape = vec![1, 1];
        shape.extend(&extents);
        let z = path.embed(&g, g.input(Tensor::zeros(&shape))).unwrap();
        assert_eq!((z.n_tokens(), z.dim()), (tokens, 128));
    }
}

#[test]
fn path_output_is_a_coarse_grid() {
    let cfg = small(2, &[32, 32, 32]);
    let (mpe, store) = build(&cfg, 1);
    let g = Graph::inference(&store);
    let features = mpe.path_features(&g, g.input(random(&[1, 2, 32, 32, 32], 2))).unwrap();
    assert_eq!(features.len(), 2);
    for f in &features {
        assert_eq!(f.shape(), vec![1, 8, 2, 2, 2]);
    }
    assert_eq!(mpe.fuse(&g, &features).unwrap().shape(), vec![1, 6, 4, 4, 4]);
}

#[test]
fn fused_shape_is_independent_of_modality_count() {
    let mut shapes = Vec::new();
    for c in [1, 2, 3, 5] {
        let cfg = small(c, &[32, 64]);
        let (mpe, store) = build(&cfg, c as u64);
        let g = Graph::inference(&store);
        shapes.push(mpe.forward(&g, g.input(random(&[2, c, 32, 64], 3))).unwrap().shape());
    }
    assert!(shapes.iter().all(|s| *s == vec![2, 6, 4, 8]), "{shapes:?}");
}

#[test]
fn paths_do_not_interact() {
    let cfg = small(3, &[32, 32]);
    let (mpe, mut store) = build(&cfg, 4);
    let x = random(&[1, 3, 32, 32], 5);
    let run = |s: &ParamStore<f64>, x: &Tensor<f64>| -> Vec<Tensor<f64>> {
        let g = Graph::inference(s);
        mpe.path_features(&g, g.input(x.clone())).unwrap().iter().map(|v| v.value().clone()).collect()
    };
    let before = run(&store, &x);

    // Perturbing the weights of path 1 leaves paths 0 and 2 unchanged.
    let id = store.find("path1.patch_embed.weight").unwrap();
    *store.get_mut(id) = store.get(id).map(|v| v * 1.7 + 0.01);
    let after = run(&store, &x);
    assert_eq!(before[0], after[0]);
    assert_ne!(before[1], after[1]);
    assert_eq!(before[2], after[2]);

    // Perturbing modality 2 leaves paths 0 and 1 unchanged.
    let mut y = x.clone();
    for v in &mut y.make_mut()[2 * 32 * 32..] {
        *v += 0.5;
    }
    let moved = run(&store, &y);
    assert_eq!(after[0], moved[0]);
    assert_eq!(after[1], moved[1]);
    assert_ne!(after[2], moved[2]);
}

#[test]
fn adapters_resample_to_each_scale() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = seeded_rng(7);
    let widths = [32, 64, 128, 256];
    let adapters = ScaleAdapters::new(&mut ParamBuilder::new(&mut store, &mut rng), 128, &[1, 2, 3], &widths, 3).unwrap();
    let g = Graph::inference(&store);
    let fused = g.input(random(&[1, 128, 4, 4, 4], 8));
    let out = adapters.forward(&g, fused).unwrap();
    let shapes: Vec<(usize, Vec<usize>)> = out.iter().map(|(s, v)| (*s, v.shape())).collect();
    assert_eq!(
        shapes,
        vec![(1, vec![1, 64, 16, 16, 16]), (2, vec![1, 128, 8, 8, 8]), (3, vec![1, 256, 4, 4, 4])]
    );

    let mut store = ParamStore::<f64>::new();
    let only = ScaleAdapters::new(&mut ParamBuilder::new(&mut store, &mut rng), 128, &[3], &widths, 3).unwrap();
    let g = Graph::inference(&store);
    let fused = g.input(random(&[1, 128, 4, 4, 4], 8));
    let out = only.forward(&g, fused).unwrap();
    let direct = only.adapters[0].1.forward(&g, fused).unwrap();
    assert_eq!(out[0].1.value(), direct.value());
}

#[test]
fn embedding_parameters_are_affine_in_modality_count() {
    let counts: Vec<u64> = (1..=4)
        .map(|c| {
            let cfg = ModelConfig::new(Mode::Volumetric, c, &[32, 32, 32]);
            count_model(&cfg).unwrap().params_under("mpe.")
        })
        .collect();
    let steps: Vec<u64> = counts.windows(2).map(|w| w[1] - w[0]).collect();
    assert!(steps.iter().all(|&s| s == steps[0]), "{counts:?}");
    // One path plus the fusion columns it adds.
    let cfg = ModelConfig::new(Mode::Volumetric, 1, &[32, 32, 32]);
    let per_path = count_model(&cfg).unwrap().params_under("mpe.path0.");
    assert_eq!(steps[0], per_path + (cfg.embed_dim * cfg.fused_channels) as u64);
}

#[test]
fn extents_must_tile_into_patches() {
    let cfg = small(2, &[40, 32]);
    let err = cfg.validate().unwrap_err().to_string();
    assert!(err.contains("pad or crop"), "{err}");
}
