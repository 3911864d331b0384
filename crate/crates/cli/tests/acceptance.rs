//! End-to-end acceptance checks. Runs without the libtest harness so the
//! PASS/FAIL line of every criterion is always printed; exits nonzero if any
//! criterion failed.

use std::process::Command;
use std::time::{Duration, Instant};

use denseformer::backbone::{HDenseFormer, Mode, ModelConfig};
use denseformer::complexity::{count_dct_stack, count_model, count_transformer};
use denseformer::dct::DctConfig;
use denseformer::loss::{ds_loss, ds_weights, focal_dice_loss, LossConfig};
use denseformer::metrics::{dsc, hd95, jaccard, BinaryMask};
use denseformer::mpe::Mpe;
use denseformer::params::{seeded_rng, ParamBuilder};
use denseformer::{Graph, ParamStore, Tensor};
use harness::config::{RunConfig, Validation};
use harness::evaluate::evaluate;
use harness::synth::synth_dataset;
use harness::train::train_on;
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn binary(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hdenseformer")).args(args).output().expect("binary runs")
}

/// `(dim, transformer params, p_ratio)` rows of `count --table1`.
fn table1_rows() -> Result<Vec<(usize, f64, f64)>, String> {
    let out = binary(&["count", "--table1"]);
    if !out.status.success() {
        return Err(format!("count --table1 exited with {}", out.status));
    }
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or("empty output")?.split_whitespace().collect();
    let col = |name: &str| header.iter().position(|h| *h == name).ok_or(format!("missing column {name}"));
    let (c_dim, c_params, c_ratio) = (col("dim")?, col("transf_params")?, col("p_ratio")?);
    lines
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            let num = |i: usize| f.get(i).and_then(|s| s.parse::<f64>().ok()).ok_or(format!("bad row {l:?}"));
            Ok((num(c_dim)? as usize, num(c_params)?, num(c_ratio)?))
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let rows = table1_rows()?;
    let want = [(256usize, 6.382e6), (512, 25.347e6)];
    let mut detail = Vec::new();
    let mut ok = rows.len() == 2;
    for (dim, target) in want {
        let Some(&(_, params, _)) = rows.iter().find(|r| r.0 == dim) else {
            return Err(format!("no row for d={dim}"));
        };
        let rel = (params - target) / target;
        ok &= rel.abs() <= 0.05;
        detail.push(format!("d={dim}: {params:.0} ({:+.2}% vs {target:.0})", 100.0 * rel));
    }
    check(ok, detail.join(", "))
}

fn criterion_2() -> Outcome {
    let rows = table1_rows()?;
    let ratio_at = |d: usize| rows.iter().find(|r| r.0 == d).map(|r| r.2).ok_or(format!("no row for d={d}"));
    let (r256, r512) = (ratio_at(256)?, ratio_at(512)?);
    let widths = [64, 128, 256, 384, 512, 768, 1024];
    let mut trend = Vec::new();
    for &d in &widths {
        let t = count_transformer(d, 12, 2.0, 4, 1024).map_err(|e| e.to_string())?.params as f64;
        let c = count_dct_stack(&DctConfig::new(d), 3, 1024).map_err(|e| e.to_string())?.params as f64;
        trend.push(t / c);
    }
    let increasing = trend.windows(2).all(|w| w[1] > w[0]);
    check(
        r256 >= 4.0 && r512 >= 10.0 && increasing,
        format!("reduction {r256:.2}x at d=256, {r512:.2}x at d=512, strictly increasing over d in {widths:?}: {increasing}"),
    )
}

fn criterion_3() -> Outcome {
    let params = |depth: usize| -> Result<i64, String> {
        let mut cfg = ModelConfig::new(Mode::Volumetric, 2, &[144, 144, 144]);
        cfg.dct_depth = depth;
        Ok(count_model(&cfg).map_err(|e| e.to_string())?.params as i64)
    };
    let (p3, p6, p9) = (params(3)?, params(6)?, params(9)?);
    check(p9 - p6 == p6 - p3 && p6 > p3, format!("depth 3/6/9: {p3} / {p6} / {p9}, steps {} and {}", p6 - p3, p9 - p6))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let out = binary(&["gradcheck", "--all"]);
    let elapsed = start.elapsed();
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    let summary = text.lines().last().unwrap_or("").to_string();
    let failures: Vec<&str> = text.lines().filter(|l| l.starts_with("FAIL")).collect();
    check(
        out.status.success() && failures.is_empty() && elapsed < Duration::from_secs(600),
        format!("{summary} in {:.0}s{}", elapsed.as_secs_f64(), if failures.is_empty() { String::new() } else { format!("; {failures:?}") }),
    )
}

const N: usize = 8;

fn brute_surface(m: &BinaryMask) -> Vec<[i64; 3]> {
    let at = |c: [i64; 3]| -> bool {
        c.iter().all(|&x| (0..N as i64).contains(&x)) && m.data()[(c[0] as usize * N + c[1] as usize) * N + c[2] as usize] == 1
    };
    let mut out = Vec::new();
    for i in 0..N * N * N {
        let c = [(i / (N * N)) as i64, ((i / N) % N) as i64, (i % N) as i64];
        let boundary = (0..3).any(|axis| {
            [-1, 1].iter().any(|&step| {
                let mut n = c;
                n[axis] += step;
                !at(n)
            })
        });
        if at(c) && boundary {
            out.push(c);
        }
    }
    out
}

fn brute_hd95(a: &BinaryMask, b: &BinaryMask, spacing: [f64; 3]) -> f64 {
    let (sa, sb) = (brute_surface(a), brute_surface(b));
    let dist = |p: [i64; 3], q: [i64; 3]| (0..3).map(|k| ((p[k] - q[k]) as f64 * spacing[k]).powi(2)).sum::<f64>().sqrt();
    let nearest = |p: [i64; 3], set: &[[i64; 3]]| set.iter().map(|&q| dist(p, q)).fold(f64::INFINITY, f64::min);
    let mut all: Vec<f64> = sa.iter().map(|&p| nearest(p, &sb)).chain(sb.iter().map(|&q| nearest(q, &sa))).collect();
    all.sort_by(f64::total_cmp);
    let pos = 0.95 * (all.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if frac == 0.0 {
        all[lo]
    } else {
        all[lo] * (1.0 - frac) + all[lo + 1] * frac
    }
}

fn criterion_5() -> Outcome {
    let mut rng = seeded_rng(99);
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    while pairs < 200 {
        let (da, db) = (rng.random_range(0.05..0.6), rng.random_range(0.05..0.6));
        let mut draw = |d: f64| BinaryMask::new(&[N, N, N], (0..N * N * N).map(|_| u8::from(rng.random::<f64>() < d)).collect()).unwrap();
        let (a, b) = (draw(da), draw(db));
        if a.is_empty() || b.is_empty() {
            continue;
        }
        let spacing = [rng.random_range(0.5..3.0), rng.random_range(0.5..3.0), rng.random_range(0.5..3.0)];
        let inter = a.data().iter().zip(b.data()).filter(|(&x, &y)| x == 1 && y == 1).count() as f64;
        let union = a.data().iter().zip(b.data()).filter(|(&x, &y)| x == 1 || y == 1).count() as f64;
        let want_dsc = 2.0 * inter / (a.count() + b.count()) as f64;
        let want_ji = inter / union;
        let d = dsc(&a, &b).map_err(|e| e.to_string())?;
        let j = jaccard(&a, &b).map_err(|e| e.to_string())?;
        let h = hd95(&a, &b, &spacing).map_err(|e| e.to_string())?.value().ok_or("undefined HD95 on nonempty masks")?;
        worst = worst
            .max((d - want_dsc).abs())
            .max((j - want_ji).abs())
            .max((h - brute_hd95(&a, &b, spacing)).abs())
            .max((d - 2.0 * j / (1.0 + j)).abs());
        pairs += 1;
    }
    check(worst < 1e-9, format!("{pairs} random 8^3 pairs, max deviation {worst:.2e}"))
}

fn perfect_logits(mask: &BinaryMask) -> Tensor<f64> {
    let voxels = mask.data().len();
    let mut data = vec![0.0; 2 * voxels];
    for (v, &q) in mask.data().iter().enumerate() {
        let s = if q == 1 { 40.0 } else { -40.0 };
        data[v] = -s;
        data[voxels + v] = s;
    }
    let mut shape = vec![1, 2];
    shape.extend_from_slice(&mask.shape()[1..]);
    Tensor::new(&shape, data).unwrap()
}

fn criterion_6() -> Outcome {
    let cfg = LossConfig::default();
    let mask = BinaryMask::from_fn(&[1, 8, 8, 8], |i| (2..6).contains(&i[1]) && i[2] < 5 && i[3] > 1);
    let g = Graph::new();
    let single = focal_dice_loss(&g, g.input(perfect_logits(&mask)), &mask, &cfg).map_err(|e| e.to_string())?.item();
    let outputs: Vec<_> =
        (0..4).map(|s| g.input(perfect_logits(&mask.resize_nearest(&[8 >> s; 3]).unwrap()))).collect();
    let total = ds_loss(&g, &outputs, &mask, &cfg).map_err(|e| e.to_string())?.item();
    let weights = ds_weights(4);
    check(
        single.abs() <= 1e-6 && total.abs() <= 1e-6 && weights == [1.0, 0.5, 0.25, 0.125] && cfg.ds_weights == weights,
        format!("loss {single:.1e} single-scale, {total:.1e} deep-supervised; weights {weights:?}"),
    )
}

fn output_shapes(mode: Mode, modalities: usize, extents: &[usize]) -> Result<Vec<Vec<usize>>, String> {
    let cfg = ModelConfig::new(mode, modalities, extents);
    let (model, store) = HDenseFormer::init::<f32>(&cfg, 0).map_err(|e| e.to_string())?;
    let g = Graph::inference(&store);
    let mut shape = vec![1, modalities];
    shape.extend_from_slice(extents);
    let out = model.forward(&g, g.constant(Tensor::zeros(&shape))).map_err(|e| e.to_string())?;
    Ok(out.outputs.iter().map(|o| o.shape()).collect())
}

fn criterion_7() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for (mode, c, extents) in [(Mode::Volumetric, 2, vec![32, 32, 32]), (Mode::Planar, 3, vec![64, 64])] {
        let shapes = output_shapes(mode, c, &extents)?;
        let expected: Vec<Vec<usize>> = (0..4)
            .map(|i| {
                let mut s = vec![1, 2];
                s.extend(extents.iter().map(|e| e >> i));
                s
            })
            .collect();
        ok &= shapes == expected;
        detail.push(format!("{mode:?} C={c}: {shapes:?}"));
    }
    let mut fused = Vec::new();
    for c in [1, 2, 3, 5] {
        let cfg = ModelConfig::new(Mode::Volumetric, c, &[32, 32, 32]).mpe();
        let mut store = ParamStore::<f32>::new();
        let mut rng = seeded_rng(c as u64);
        let mpe = Mpe::new(&mut ParamBuilder::new(&mut store, &mut rng), &cfg).map_err(|e| e.to_string())?;
        let g = Graph::inference(&store);
        let x = g.constant(Tensor::ones(&[1, c, 32, 32, 32]));
        fused.push(mpe.forward(&g, x).map_err(|e| e.to_string())?.shape());
    }
    let invariant = fused.windows(2).all(|w| w[0] == w[1]);
    ok &= invariant;
    detail.push(format!("MPE output for C in [1,2,3,5]: {:?} (invariant: {invariant})", fused[0]));
    check(ok, detail.join("; "))
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cases = synth_dataset(4, Mode::Volumetric, &[32, 32, 32], 2, 7).map_err(|e| e.to_string())?;
    let mut cfg = RunConfig::new(ModelConfig::new(Mode::Volumetric, 2, &[32, 32, 32]), dir.path(), dir.path());
    cfg.seed = 7;
    cfg.train.folds = 1;
    cfg.train.validation = Validation::Training;
    cfg.augment.flip = false;
    cfg.augment.rotate = false;
    let start = Instant::now();
    let out = train_on(&cfg, &cases, 0).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let report = evaluate(&out.checkpoint, &cases, None).map_err(|e| e.to_string())?;
    let train_dsc = report.dsc().ok_or("empty report")?.mean;
    let losses: Vec<f64> = out.history.iter().map(|r| r.train_loss).collect();
    let windows: Vec<f64> = losses.chunks_exact(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    let smooth = windows.windows(2).all(|w| w[1] <= w[0]);
    check(
        train_dsc > 0.95 && out.epochs_run <= 100 && elapsed < Duration::from_secs(1800),
        format!(
            "train DSC {train_dsc:.4} (best epoch {} of {} run) in {:.0}s; 5-epoch mean loss {:.4} -> {:.4}, non-increasing: {smooth}",
            out.best_epoch,
            out.epochs_run,
            elapsed.as_secs_f64(),
            windows.first().copied().unwrap_or(f64::NAN),
            windows.last().copied().unwrap_or(f64::NAN)
        ),
    )
}

fn criterion_9() -> Outcome {
    let cases = synth_dataset(4, Mode::Volumetric, &[32, 32, 32], 2, 9).map_err(|e| e.to_string())?;
    let run = || -> Result<(Vec<u8>, Vec<u8>), String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut model = ModelConfig::new(Mode::Volumetric, 2, &[32, 32, 32]);
        model.embed_dim = 32;
        model.fused_channels = 16;
        model.dct_depth = 2;
        model.growth = 8;
        model.channels = vec![8, 16, 32, 64];
        let mut cfg = RunConfig::new(model, dir.path(), dir.path());
        cfg.seed = 1234;
        cfg.train.folds = 2;
        cfg.schedule.max_epochs = 3;
        cfg.schedule.patience = 3;
        let out = train_on(&cfg, &cases, 1).map_err(|e| e.to_string())?;
        Ok((std::fs::read(&out.checkpoint).map_err(|e| e.to_string())?, std::fs::read(&out.log).map_err(|e| e.to_string())?))
    };
    let (a, b) = (run()?, run()?);
    check(
        a.0 == b.0 && a.1 == b.1,
        format!("checkpoints {} bytes identical: {}; logs {} bytes identical: {}", a.0.len(), a.0 == b.0, a.1.len(), a.1 == b.1),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("standard transformer sizes", criterion_1),
        ("dense stack reduction trend", criterion_2),
        ("uniform depth spacing", criterion_3),
        ("gradient suites", criterion_4),
        ("metric oracles", criterion_5),
        ("loss properties", criterion_6),
        ("shape contract", criterion_7),
        ("sanity training", criterion_8),
        ("determinism", criterion_9),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let (status, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed.push(i + 1);
                ("FAIL", d)
            }
        };
        println!("criterion {}: {status} {name}: {detail}", i + 1);
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
    println!("all 9 criteria passed");
}
