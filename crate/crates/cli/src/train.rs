//! Training loop.
//!
//! Every epoch shuffles the training cases, augments each draw, takes one
//! Adam step per batch on the deep-supervision loss at the epoch's
//! polynomially decayed learning rate, and then scores mean foreground DSC
//! on the validation cases. The best-scoring weights are checkpointed as
//! soon as they appear; training stops after `patience` epochs without a
//! strict improvement. All randomness comes from the configured seed and
//! the loop is single-threaded, so a rerun reproduces the checkpoint and the
//! log byte for byte.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use denseformer::backbone::HDenseFormer;
use denseformer::loss::ds_loss;
use denseformer::metrics::{dsc, BinaryMask};
use denseformer::params::seeded_rng;
use denseformer::{Graph, ParamStore, Tensor, TensorError};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::augment::Transform;
use crate::checkpoint;
use crate::config::{RunConfig, Validation};
use crate::data::{fold_split, load_dataset, Case};
use crate::error::{write_atomic, HarnessError, Result};
use crate::evaluate::predict_mask;
use crate::optim::{poly_lr_with_power, Adam};

/// Offset separating the data stream from the initialization stream.
const DATA_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// One-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_dsc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_dsc: f64,
    pub stopped_early: bool,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub history: Vec<EpochRecord>,
}

pub fn fold_dir(out_dir: &Path, fold: usize) -> PathBuf {
    out_dir.join(format!("fold{fold}"))
}

/// Loads the configured dataset and trains `fold`.
pub fn train(cfg: &RunConfig, fold: usize) -> Result<TrainOutcome> {
    let cases = load_dataset(&cfg.data_dir)?;
    train_on(cfg, &cases, fold)
}

fn mean_dsc(model: &HDenseFormer, store: &ParamStore<f32>, cases: &[&Case]) -> Result<f64> {
    let mut total = 0.0;
    for case in cases {
        total += dsc(&predict_mask(model, store, case)?, &case.mask)?;
    }
    Ok(total / cases.len() as f64)
}

fn make_batch(cases: &[&Case], rng: &mut ChaCha8Rng, cfg: &RunConfig) -> Result<(Tensor<f32>, BinaryMask)> {
    let extents = cases[0].extents().to_vec();
    let (mut images, mut masks) = (Vec::new(), Vec::new());
    for case in cases {
        let t = Transform::draw(rng, &extents, &cfg.augment);
        let (image, mask) = t.apply(&case.image, &case.mask)?;
        images.extend_from_slice(image.data());
        masks.extend_from_slice(mask.data());
    }
    let mut shape = vec![cases.len()];
    shape.extend_from_slice(cases[0].image.shape());
    let mut mask_shape = vec![cases.len()];
    mask_shape.extend_from_slice(&extents);
    Ok((Tensor::new(&shape, images)?, BinaryMask::new(&mask_shape, masks)?))
}

/// Loss and gradients of one batch.
fn loss_and_grads(
    model: &HDenseFormer,
    store: &ParamStore<f32>,
    x: Tensor<f32>,
    target: &BinaryMask,
    cfg: &RunConfig,
) -> denseformer::Result<(f64, denseformer::Gradients<f32>)> {
    let g = Graph::with_params(store);
    let out = model.forward(&g, g.constant(x))?;
    let loss = ds_loss(&g, &out.outputs, target, &cfg.loss)?;
    let value = f64::from(loss.item());
    if !value.is_finite() {
        return Err(TensorError::NonFinite { op: "ds_loss" });
    }
    Ok((value, g.backward(loss)?))
}

struct Log {
    path: PathBuf,
    file: std::fs::File,
}

impl Log {
    fn open(path: PathBuf) -> Result<Self> {
        let file = std::fs::OpenOptions::new().create(true).append(true).open(&path).map_err(HarnessError::io(&path))?;
        Ok(Log { path, file })
    }

    fn line(&mut self, text: &str) -> Result<()> {
        writeln!(self.file, "{text}").map_err(HarnessError::io(&self.path))?;
        self.file.flush().map_err(HarnessError::io(&self.path))
    }
}

fn format_record(r: &EpochRecord, improved: bool) -> String {
    let mut s = format!("epoch {:>4}  lr {:.6e}  loss {:.6}  val_dsc {:.6}", r.epoch, r.lr, r.train_loss, r.val_dsc);
    if improved {
        s.push_str("  *");
    }
    s
}

/// Trains `fold` of `cases`, writing `best.ckpt` and `train.log` under
/// `out_dir/fold{fold}`.
pub fn train_on(cfg: &RunConfig, cases: &[Case], fold: usize) -> Result<TrainOutcome> {
    cfg.validate()?;
    if let Some(bad) = cases.iter().find(|c| c.extents() != cfg.model.extents.as_slice() || c.modalities() != cfg.model.modalities) {
        return Err(HarnessError::Dataset(format!(
            "case {} has {} modalities at {:?}; the model expects {} at {:?}",
            bad.id,
            bad.modalities(),
            bad.extents(),
            cfg.model.modalities,
            cfg.model.extents
        )));
    }
    let (train_idx, held_out) = fold_split(cases.len(), cfg.train.folds, fold, cfg.seed)?;
    let train_cases: Vec<&Case> = train_idx.iter().map(|&i| &cases[i]).collect();
    let val_cases: Vec<&Case> = match cfg.train.validation {
        Validation::HeldOut => held_out.iter().map(|&i| &cases[i]).collect(),
        Validation::Training => train_cases.clone(),
    };
    if train_cases.is_empty() || val_cases.is_empty() {
        return Err(HarnessError::Dataset(format!(
            "fold {fold} of {} leaves {} training and {} validation cases; use more folds or validation = \"training\"",
            cfg.train.folds,
            train_cases.len(),
            val_cases.len()
        )));
    }

    let dir = fold_dir(&cfg.out_dir, fold);
    std::fs::create_dir_all(&dir).map_err(HarnessError::io(&dir))?;
    let ckpt_path = dir.join("best.ckpt");
    let mut log = Log::open(dir.join("train.log"))?;
    log.line(&format!(
        "run seed {} fold {fold}/{} train {} val {} max_epochs {} patience {}",
        cfg.seed,
        cfg.train.folds,
        train_cases.len(),
        val_cases.len(),
        cfg.schedule.max_epochs,
        cfg.schedule.patience
    ))?;

    let (model, mut store) = HDenseFormer::init::<f32>(&cfg.model, cfg.seed)?;
    let mut adam = Adam::new(&cfg.optimizer);
    let mut rng = seeded_rng(cfg.seed ^ DATA_STREAM);
    let mut order = train_cases.clone();
    let mut history = Vec::new();
    let (mut best_dsc, mut best_epoch, mut stale) = (f64::NEG_INFINITY, 0, 0);
    let mut stopped_early = false;

    for epoch in 1..=cfg.schedule.max_epochs {
        let lr = poly_lr_with_power(epoch - 1, cfg.schedule.max_epochs, cfg.optimizer.lr, cfg.schedule.poly_power)?;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.train.batch_size).enumerate() {
            let (x, target) = make_batch(chunk, &mut rng, cfg)?;
            let (loss, grads) = match loss_and_grads(&model, &store, x, &target, cfg) {
                Ok(v) => v,
                Err(TensorError::NonFinite { op }) => {
                    return Err(non_finite(&dir, cfg, epoch, b + 1, chunk, format!("{op} produced a non-finite value")))
                }
                Err(e) => return Err(e.into()),
            };
            loss_sum += loss * chunk.len() as f64;
            if !cfg.train.frozen {
                adam.step(&mut store, &grads, lr);
            }
        }
        let val_dsc = mean_dsc(&model, &store, &val_cases)?;
        let record = EpochRecord { epoch, lr, train_loss: loss_sum / order.len() as f64, val_dsc };
        let improved = val_dsc > best_dsc;
        log.line(&format_record(&record, improved))?;
        history.push(record);
        if improved {
            best_dsc = val_dsc;
            best_epoch = epoch;
            stale = 0;
            checkpoint::save(&ckpt_path, &cfg.model, &store, epoch, val_dsc)?;
        } else {
            stale += 1;
            if stale >= cfg.schedule.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let epochs_run = history.len();
    log.line(&format!(
        "done epochs {epochs_run} best_epoch {best_epoch} best_val_dsc {best_dsc:.6}{}",
        if stopped_early { " early_stop" } else { "" }
    ))?;
    Ok(TrainOutcome {
        epochs_run,
        best_epoch,
        best_val_dsc: best_dsc,
        stopped_early,
        checkpoint: ckpt_path,
        log: log.path,
        history,
    })
}

fn non_finite(dir: &Path, cfg: &RunConfig, epoch: usize, batch: usize, chunk: &[&Case], detail: String) -> HarnessError {
    let cases: Vec<String> = chunk.iter().map(|c| c.id.clone()).collect();
    let dump = dir.join(format!("nonfinite_epoch{epoch}_batch{batch}.txt"));
    let mut text = String::new();
    writeln!(text, "epoch {epoch}").unwrap();
    writeln!(text, "batch {batch}").unwrap();
    writeln!(text, "cases {}", cases.join(" ")).unwrap();
    writeln!(text, "seed {}", cfg.seed).unwrap();
    writeln!(text, "detail {detail}").unwrap();
    let detail = match write_atomic(&dump, text.as_bytes()) {
        Ok(()) => detail,
        Err(e) => format!("{detail} (dump not written: {e})"),
    };
    HarnessError::NonFiniteLoss { epoch, batch, cases, seed: cfg.seed, dump, detail }
}
