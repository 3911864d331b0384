use denseformer::{Graph, ParamStore, Tensor};
use harness::config::OptimizerConfig;
use harness::optim::{poly_lr, Adam};

#[test]
fn poly_schedule_examples() {
    assert_eq!(poly_lr(0, 100, 1e-3).unwrap(), 1e-3);
    let last = poly_lr(99, 100, 1e-3).unwrap();
    assert!((last - 1e-3 * 0.01f64.powf(0.9)).abs() < 1e-18);
    assert!((last - 1.58e-5).abs() < 0.01e-5, "{last}");
    let lrs: Vec<f64> = (0..100).map(|e| poly_lr(e, 100, 1e-3).unwrap()).collect();
    assert!(lrs.windows(2).all(|w| w[1] < w[0]));
    assert!(poly_lr(100, 100, 1e-3).is_err());
    assert!(poly_lr(0, 0, 1e-3).is_err());
}

/// Quadratic `sum(w^2 / 2)` has gradient `w`; with coupled decay the
/// effective gradient is `(1 + wd) w`.
fn step_once(adam: &mut Adam, store: &mut ParamStore<f64>, lr: f64) {
    let id = store.ids().next().unwrap();
    let g = Graph::with_params(store);
    let w = g.param(id);
    let loss = w.mul(w).unwrap().sum_all().unwrap().scale(0.5).unwrap();
    let grads = g.backward(loss).unwrap();
    drop(g);
    adam.step(store, &grads, lr);
}

#[test]
fn adam_matches_hand_iteration() {
    let cfg = OptimizerConfig::default();
    let mut store = ParamStore::<f64>::new();
    store.push("w".into(), Tensor::from_f64(&[2], &[0.5, -2.0]).unwrap());
    let mut adam = Adam::new(&cfg);

    let (b1, b2, eps, wd, lr) = (0.9f64, 0.999f64, 1e-8, 1e-4, 1e-3);
    let mut w = [0.5f64, -2.0];
    let (mut m, mut v) = ([0.0f64; 2], [0.0f64; 2]);
    for t in 1..=3 {
        step_once(&mut adam, &mut store, lr);
        for k in 0..2 {
            let g = w[k] + wd * w[k];
            m[k] = b1 * m[k] + (1.0 - b1) * g;
            v[k] = b2 * v[k] + (1.0 - b2) * g * g;
            let mhat = m[k] / (1.0 - b1.powi(t));
            let vhat = v[k] / (1.0 - b2.powi(t));
            w[k] -= lr * mhat / (vhat.sqrt() + eps);
        }
        let got = store.get(store.ids().next().unwrap()).data().to_vec();
        for k in 0..2 {
            assert!((got[k] - w[k]).abs() < 1e-15, "step {t}: {} vs {}", got[k], w[k]);
        }
    }
    // The first bias-corrected step moves each weight by almost exactly lr.
    assert!((0.5 - w[0]) > 2.9e-3 && (0.5 - w[0]) < 3.1e-3);
    assert_eq!(adam.steps_taken(), 3);
}

#[test]
fn parameters_without_gradient_only_decay() {
    let cfg = OptimizerConfig { weight_decay: 0.1, ..OptimizerConfig::default() };
    let mut store = ParamStore::<f64>::new();
    store.push("used".into(), Tensor::from_f64(&[1], &[1.0]).unwrap());
    store.push("idle".into(), Tensor::from_f64(&[1], &[1.0]).unwrap());
    let mut adam = Adam::new(&cfg);
    step_once(&mut adam, &mut store, 1e-2);
    let idle = store.get(store.find("idle").unwrap()).data()[0];
    assert!((idle - (1.0 - 1e-2)).abs() < 1e-9, "{idle}");

    let mut plain = ParamStore::<f64>::new();
    plain.push("used".into(), Tensor::from_f64(&[1], &[1.0]).unwrap());
    plain.push("idle".into(), Tensor::from_f64(&[1], &[1.0]).unwrap());
    let mut adam = Adam::new(&OptimizerConfig { weight_decay: 0.0, ..OptimizerConfig::default() });
    step_once(&mut adam, &mut plain, 1e-2);
    assert_eq!(plain.get(plain.find("idle").unwrap()).data()[0], 1.0);
}
