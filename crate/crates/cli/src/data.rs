//! On-disk datasets and cross-validation folds.
//!
//! A dataset directory holds `{id}_image.mvol` and `{id}_mask.mvol` pairs.
//! Cases are loaded in lexicographic id order.

use std::path::{Path, PathBuf};

use denseformer::metrics::BinaryMask;
use denseformer::params::seeded_rng;
use denseformer::Tensor;
use rand::seq::SliceRandom;

use crate::error::{HarnessError, Result};
use crate::mvol::Volume;

const IMAGE_SUFFIX: &str = "_image.mvol";
const MASK_SUFFIX: &str = "_mask.mvol";

#[derive(Clone, Debug)]
pub struct Case {
    pub id: String,
    /// `(C, *extents)`.
    pub image: Tensor<f32>,
    pub mask: BinaryMask,
    pub spacing: Vec<f64>,
}

impl Case {
    pub fn extents(&self) -> &[usize] {
        self.mask.shape()
    }

    pub fn modalities(&self) -> usize {
        self.image.shape()[0]
    }
}

pub fn image_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}{IMAGE_SUFFIX}"))
}

pub fn mask_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}{MASK_SUFFIX}"))
}

/// Writes every case as an image/mask pair of volume files.
pub fn write_dataset(dir: &Path, cases: &[Case]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    for case in cases {
        Volume::image(&case.image, &case.spacing)?.write(&image_path(dir, &case.id))?;
        Volume::mask(&case.mask, &case.spacing)?.write(&mask_path(dir, &case.id))?;
    }
    Ok(())
}

pub fn load_case(dir: &Path, id: &str) -> Result<Case> {
    let image = Volume::read(&image_path(dir, id))?;
    let mask = Volume::read(&mask_path(dir, id))?;
    if image.header.dims != mask.header.dims || image.header.spacing != mask.header.spacing {
        return Err(HarnessError::Dataset(format!(
            "case {id}: image {:?} @ {:?} does not match mask {:?} @ {:?}",
            image.header.dims, image.header.spacing, mask.header.dims, mask.header.spacing
        )));
    }
    Ok(Case { id: id.to_string(), image: image.to_image()?, mask: mask.to_mask()?, spacing: image.header.spacing })
}

/// All cases in `dir`. Every image needs a mask, and all cases must share
/// extents and modality count.
pub fn load_dataset(dir: &Path) -> Result<Vec<Case>> {
    let entries = std::fs::read_dir(dir).map_err(HarnessError::io(dir))?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(HarnessError::io(dir))?;
        if let Some(id) = entry.file_name().to_str().and_then(|n| n.strip_suffix(IMAGE_SUFFIX)) {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    if ids.is_empty() {
        return Err(HarnessError::Dataset(format!("no *{IMAGE_SUFFIX} files in {}", dir.display())));
    }
    let cases = ids.iter().map(|id| load_case(dir, id)).collect::<Result<Vec<_>>>()?;
    let first = &cases[0];
    if let Some(bad) = cases.iter().find(|c| c.extents() != first.extents() || c.modalities() != first.modalities()) {
        return Err(HarnessError::Dataset(format!(
            "case {} has {} modalities at {:?}, but {} has {} at {:?}",
            bad.id,
            bad.modalities(),
            bad.extents(),
            first.id,
            first.modalities(),
            first.extents()
        )));
    }
    Ok(cases)
}

/// Training and held-out case indices for `fold` of `folds`. Indices are
/// shuffled once with `seed` and dealt round-robin into folds. With a
/// single fold everything is training data.
pub fn fold_split(n_cases: usize, folds: usize, fold: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if folds == 0 || fold >= folds {
        return Err(HarnessError::Config(format!("fold {fold} is outside 0..{folds}")));
    }
    if folds == 1 {
        return Ok(((0..n_cases).collect(), Vec::new()));
    }
    if n_cases < folds {
        return Err(HarnessError::Dataset(format!("{n_cases} cases cannot fill {folds} folds")));
    }
    let mut order: Vec<usize> = (0..n_cases).collect();
    order.shuffle(&mut seeded_rng(seed));
    let (mut train, mut held_out) = (Vec::new(), Vec::new());
    for (rank, &i) in order.iter().enumerate() {
        if rank % folds == fold {
            held_out.push(i);
        } else {
            train.push(i);
        }
    }
    train.sort();
    held_out.sort();
    Ok((train, held_out))
}
