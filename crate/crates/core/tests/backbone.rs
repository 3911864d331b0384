use denseformer::backbone::{segment, HDenseFormer, Injection, Mode, ModalityStack, ModelConfig};
use denseformer::complexity::count_model;
use denseformer::loss::{ds_loss, LossConfig};
use denseformer::metrics::BinaryMask;
use denseformer::params::seeded_rng;
use denseformer::{Graph, Tensor};
use rand::Rng;

fn random<T: denseformer::Real>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = seeded_rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| T::of(rng.random_range(-1.0..1.0))).collect()).unwrap()
}

fn narrow_channels(cfg: &mut ModelConfig) {
    cfg.channels = vec![4, 8, 8, 8];
    cfg.embed_dim = 16;
    cfg.fused_channels = 8;
    cfg.growth = 8;
    cfg.dct_depth = 1;
}

#[test]
fn volumetric_outputs_at_dyadic_scales() {
    let cfg = ModelConfig::new(Mode::Volumetric, 2, &[32, 32, 32]);
    let (model, store) = HDenseFormer::init::<f32>(&cfg, 0).unwrap();
    let g = Graph::inference(&store);
    let out = model.forward(&g, g.input(random(&[1, 2, 32, 32, 32], 1))).unwrap();
    let shapes: Vec<Vec<usize>> = out.outputs.iter().map(|o| o.shape()).collect();
    assert_eq!(
        shapes,
        vec![vec![1, 2, 32, 32, 32], vec![1, 2, 16, 16, 16], vec![1, 2, 8, 8, 8], vec![1, 2, 4, 4, 4]]
    );
    let mask = segment(&out.full_resolution().value()).unwrap();
    assert_eq!(mask.shape(), &[1, 32, 32, 32]);
}

#[test]
fn planar_outputs_at_dyadic_scales() {
    let cfg = ModelConfig::new(Mode::Planar, 3, &[64, 64]);
    let (model, store) = HDenseFormer::init::<f32>(&cfg, 0).unwrap();
    let g = Graph::inference(&store);
    let out = model.forward(&g, g.input(random(&[1, 3, 64, 64], 2))).unwrap();
    let shapes: Vec<Vec<usize>> = out.outputs.iter().map(|o| o.shape()).collect();
    assert_eq!(shapes, vec![vec![1, 2, 64, 64], vec![1, 2, 32, 32], vec![1, 2, 16, 16], vec![1, 2, 8, 8]]);
}

#[test]
fn inference_path_computes_only_the_full_resolution_map() {
    let mut cfg = ModelConfig::new(Mode::Volumetric, 2, &[16, 16, 16]);
    narrow_channels(&mut cfg);
    let (model, store) = HDenseFormer::init::<f64>(&cfg, 3).unwrap();
    let g = Graph::inference(&store);
    let x = g.input(random(&[1, 2, 16, 16, 16], 4));
    let full = model.forward(&g, x).unwrap().full_resolution().value().clone();
    let only = model.predict(&g, x).unwrap().value().clone();
    assert_eq!(full, only);
}

#[test]
fn encoder_stages_halve_the_extent() {
    let mut cfg = ModelConfig::new(Mode::Volumetric, 2, &[32, 32, 32]);
    narrow_channels(&mut cfg);
    let (model, store) = HDenseFormer::init::<f32>(&cfg, 5).unwrap();
    let g = Graph::inference(&store);
    let x = g.input(random(&[1, 2, 32, 32, 32], 6));
    let injected = model.injected(&g, x, Injection::Computed).unwrap();
    let features = model.encoder.forward(&g, x, &injected).unwrap();
    let extents: Vec<usize> = features.iter().map(|f| f.shape()[2]).collect();
    assert_eq!(extents, vec![32, 16, 8, 4]);
}

#[test]
fn zero_injection_equals_plain_network_bitwise() {
    let mut cfg = ModelConfig::new(Mode::Volumetric, 2, &[16, 16, 16]);
    narrow_channels(&mut cfg);
    let (model, store) = HDenseFormer::init::<f32>(&cfg, 7).unwrap();
    let g = Graph::inference(&store);
    let x = g.input(random(&[2, 2, 16, 16, 16], 8));
    let zero = model.forward_with(&g, x, Injection::Zero, true).unwrap();
    let plain = model.forward_with(&g, x, Injection::Disabled, true).unwrap();
    let computed = model.forward_with(&g, x, Injection::Computed, true).unwrap();
    for (a, b) in zero.iter().zip(&plain) {
        let (a, b) = (a.value(), b.value());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_ne!(zero[0].value(), computed[0].value());
}

#[test]
fn loss_gradient_reaches_the_embedding_branch() {
    let mut cfg = ModelConfig::new(Mode::Volumetric, 2, &[16, 16, 16]);
    narrow_channels(&mut cfg);
    let (model, store) = HDenseFormer::init::<f64>(&cfg, 9).unwrap();
    let g = Graph::with_params(&store);
    let x = g.input(random(&[1, 2, 16, 16, 16], 10));
    let mask = BinaryMask::from_fn(&[1, 16, 16, 16], |i| (i[1] as i32 - 8).pow(2) + (i[2] as i32 - 7).pow(2) < 16);
    let out = model.forward(&g, x).unwrap();
    let loss = ds_loss(&g, &out.outputs, &mask, &LossConfig::default()).unwrap();
    let grads = g.backward(loss).unwrap();
    let mut checked = 0;
    for id in store.ids().filter(|&id| store.name(id).starts_with("mpe.")) {
        let grad = grads.param(id).expect("every embedding parameter receives a gradient");
        if store.name(id).ends_with("patch_embed.weight") {
            assert!(grad.data().iter().any(|&v| v != 0.0), "{}", store.name(id));
            checked += 1;
        }
    }
    assert_eq!(checked, 2);
}

#[test]
fn modality_stacks_batch_along_the_first_axis() {
    let a = ModalityStack::new(random::<f32>(&[2, 16, 16], 1), vec![1.0, 1.0]).unwrap();
    let b = ModalityStack::new(random::<f32>(&[2, 16, 16], 2), vec![1.0, 1.0]).unwrap();
    let batch = ModalityStack::batch(&[&a, &b]).unwrap();
    assert_eq!(batch.shape(), &[2, 2, 16, 16]);
    assert_eq!(&batch.data()[..512], a.image.data());
    let c = ModalityStack::new(random::<f32>(&[3, 16, 16], 3), vec![1.0, 1.0]).unwrap();
    assert!(ModalityStack::batch(&[&a, &c]).is_err());
}

#[test]
fn parameter_count_matches_enumeration() {
    let cfg = ModelConfig::new(Mode::Volumetric, 2, &[32, 32, 32]);
    let (_, store) = HDenseFormer::init::<f32>(&cfg, 0).unwrap();
    let report = count_model(&cfg).unwrap();
    assert_eq!(report.params, store.num_scalars() as u64);
    // Order of magnitude of a compact 3D segmentation network.
    assert!((1_000_000..100_000_000).contains(&report.params), "{}", report.params);
}

#[test]
fn invalid_inputs_are_rejected() {
    let cfg = ModelConfig::new(Mode::Volumetric, 2, &[24, 32, 32]);
    assert!(cfg.validate().is_err());
    let cfg = ModelConfig::new(Mode::Planar, 2, &[32, 32]);
    let (model, store) = HDenseFormer::init::<f32>(&cfg, 0).unwrap();
    let g = Graph::inference(&store);
    assert!(model.forward(&g, g.input(random(&[1, 3, 32, 32], 1))).is_err());
}

#[test]
fn segment_takes_the_argmax_class() {
    let logits = Tensor::<f64>::from_f64(&[1, 2, 3], &[0.0, 1.0, 2.0, 0.5, 1.0, 1.5]).unwrap();
    assert_eq!(segment(&logits).unwrap().data(), &[1, 0, 0]);
}
