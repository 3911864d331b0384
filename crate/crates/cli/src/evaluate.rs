//! Inference and metric reports.

use std::path::Path;

use denseformer::backbone::{segment, HDenseFormer};
use denseformer::metrics::{BinaryMask, CaseMetrics, MetricReport};
use denseformer::{Graph, ParamStore};

use crate::checkpoint;
use crate::data::Case;
use crate::error::{write_atomic, HarnessError, Result};

/// Foreground mask of one case from the full-resolution output.
pub fn predict_mask(model: &HDenseFormer, store: &ParamStore<f32>, case: &Case) -> Result<BinaryMask> {
    let g = Graph::inference(store);
    let mut shape = vec![1];
    shape.extend_from_slice(case.image.shape());
    let x = g.constant(case.image.reshaped(&shape)?);
    let logits = model.predict(&g, x)?.value();
    let batched = segment(&logits)?;
    Ok(BinaryMask::new(case.extents(), batched.data().to_vec())?)
}

/// Scores `pred[i]` against `cases[i]`'s mask with the case's spacing.
pub fn report_from_masks(cases: &[Case], preds: &[BinaryMask]) -> Result<MetricReport> {
    if cases.len() != preds.len() {
        return Err(HarnessError::Dataset(format!("{} predictions for {} cases", preds.len(), cases.len())));
    }
    let rows = cases
        .iter()
        .zip(preds)
        .map(|(c, p)| CaseMetrics::compute(c.id.clone(), p, &c.mask, &c.spacing))
        .collect::<denseformer::Result<Vec<_>>>()?;
    Ok(MetricReport { cases: rows })
}

pub fn evaluate_model(model: &HDenseFormer, store: &ParamStore<f32>, cases: &[Case]) -> Result<MetricReport> {
    let cfg = &model.cfg;
    if let Some(bad) = cases.iter().find(|c| c.extents() != cfg.extents.as_slice() || c.modalities() != cfg.modalities) {
        return Err(HarnessError::Dataset(format!(
            "case {} has {} modalities at {:?}; the model expects {} at {:?}",
            bad.id,
            bad.modalities(),
            bad.extents(),
            cfg.modalities,
            cfg.extents
        )));
    }
    let preds = cases.iter().map(|c| predict_mask(model, store, c)).collect::<Result<Vec<_>>>()?;
    report_from_masks(cases, &preds)
}

/// Loads `checkpoint`, scores `cases` and, if `out` is given, writes the
/// report table there.
pub fn evaluate(checkpoint: &Path, cases: &[Case], out: Option<&Path>) -> Result<MetricReport> {
    let (_, model, store) = checkpoint::load(checkpoint)?;
    let report = evaluate_model(&model, &store, cases)?;
    if let Some(path) = out {
        write_atomic(path, report.to_table().as_bytes())?;
    }
    Ok(report)
}
