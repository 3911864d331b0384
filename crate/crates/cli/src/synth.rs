//! Synthetic multimodal phantoms.
//!
//! Each case holds one ellipsoidal lesion. Modality 0 shows it as a uniform
//! contrast step over a smooth background (an anatomical channel), modality 1
//! as a peaked hot spot accompanied by a distractor blob (a metabolic
//! channel). Further modalities alternate the sign and strength of the step.
//! All fields carry Gaussian noise and everything is drawn from one seeded
//! stream, so a seed fixes the dataset bit for bit.

use std::f64::consts::PI;

use denseformer::backbone::Mode;
use denseformer::metrics::BinaryMask;
use denseformer::params::{seeded_rng, standard_normal};
use denseformer::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::Case;
use crate::error::{HarnessError, Result};

/// Extents must be multiples of this so every encoder scale and the patch
/// grid divide evenly.
pub const EXTENT_MULTIPLE: usize = 16;

/// Range of the lesion's share of the volume.
pub const FOREGROUND_FRACTION: (f64, f64) = (0.01, 0.06);

const NOISE: f64 = 0.1;

struct Ellipsoid {
    centre: Vec<f64>,
    radii: Vec<f64>,
}

impl Ellipsoid {
    /// Normalized radius: below 1 inside the lesion.
    fn rho(&self, idx: &[usize]) -> f64 {
        idx.iter()
            .zip(&self.centre)
            .zip(&self.radii)
            .map(|((&i, c), r)| ((i as f64 - c) / r).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    fn draw(rng: &mut ChaCha8Rng, extents: &[usize]) -> Self {
        let rank = extents.len();
        let voxels: f64 = extents.iter().map(|&e| e as f64).product();
        let fraction = rng.random_range(FOREGROUND_FRACTION.0..FOREGROUND_FRACTION.1);
        let unit_volume = if rank == 3 { 4.0 / 3.0 * PI } else { PI };
        let base = (fraction * voxels / unit_volume).powf(1.0 / rank as f64);
        let mut aspect: Vec<f64> = (0..rank).map(|_| rng.random_range(0.75..1.33)).collect();
        let norm = aspect.iter().product::<f64>().powf(1.0 / rank as f64);
        aspect.iter_mut().for_each(|a| *a /= norm);
        let radii: Vec<f64> =
            aspect.iter().zip(extents).map(|(a, &e)| (a * base).min(e as f64 / 2.0 - 2.0).max(1.0)).collect();
        let centre = extents
            .iter()
            .zip(&radii)
            .map(|(&e, &r)| {
                let (lo, hi) = (r + 1.0, e as f64 - r - 2.0);
                if lo < hi {
                    rng.random_range(lo..hi)
                } else {
                    (e as f64 - 1.0) / 2.0
                }
            })
            .collect();
        Ellipsoid { centre, radii }
    }
}

fn unravel(mut flat: usize, extents: &[usize], idx: &mut [usize]) {
    for d in (0..extents.len()).rev() {
        idx[d] = flat % extents[d];
        flat /= extents[d];
    }
}

pub fn check_extents(mode: Mode, extents: &[usize]) -> Result<()> {
    if extents.len() != mode.rank() {
        return Err(HarnessError::Config(format!("{mode:?} mode needs {} extents, got {extents:?}", mode.rank())));
    }
    if let Some(&bad) = extents.iter().find(|&&e| e == 0 || e % EXTENT_MULTIPLE != 0) {
        let padded = bad.div_ceil(EXTENT_MULTIPLE).max(1) * EXTENT_MULTIPLE;
        return Err(HarnessError::Config(format!(
            "extent {bad} is not a multiple of {EXTENT_MULTIPLE}; pad the volume to {padded} or crop it to {}",
            bad / EXTENT_MULTIPLE * EXTENT_MULTIPLE
        )));
    }
    Ok(())
}

fn synth_case(rng: &mut ChaCha8Rng, id: String, extents: &[usize], modalities: usize) -> Case {
    let rank = extents.len();
    let voxels: usize = extents.iter().product();
    let lesion = Ellipsoid::draw(rng, extents);
    let distractor = Ellipsoid::draw(rng, extents);
    let phases: Vec<f64> = (0..2 * rank).map(|_| rng.random_range(0.0..2.0 * PI)).collect();

    let mut idx = vec![0; rank];
    let mut mask = Vec::with_capacity(voxels);
    let mut rho = Vec::with_capacity(voxels);
    let mut rho_distractor = Vec::with_capacity(voxels);
    let mut background = Vec::with_capacity(voxels);
    for flat in 0..voxels {
        unravel(flat, extents, &mut idx);
        let r = lesion.rho(&idx);
        mask.push(u8::from(r < 1.0));
        rho.push(r);
        rho_distractor.push(distractor.rho(&idx));
        let smooth: f64 = (0..rank)
            .map(|d| {
                let t = idx[d] as f64 / extents[d] as f64;
                (2.0 * PI * t + phases[2 * d]).sin() + 0.5 * (4.0 * PI * t + phases[2 * d + 1]).cos()
            })
            .sum();
        background.push(0.1 * smooth);
    }

    let mut data = Vec::with_capacity(voxels * modalities);
    for m in 0..modalities {
        for v in 0..voxels {
            let inside = f64::from(mask[v]);
            let signal = match m {
                0 => inside + background[v],
                1 => 1.5 * (-2.0 * rho[v] * rho[v]).exp() + 0.8 * (-2.0 * rho_distractor[v].powi(2)).exp(),
                _ => {
                    let sign = if m % 2 == 0 { -1.0 } else { 1.0 };
                    sign * (0.5 + 0.25 * (m as f64 - 1.0)) * inside + 0.5 * background[v]
                }
            };
            data.push((signal + NOISE * standard_normal(rng)) as f32);
        }
    }
    let mut shape = vec![modalities];
    shape.extend_from_slice(extents);
    Case {
        id,
        image: Tensor::new(&shape, data).expect("shape matches data"),
        mask: BinaryMask::new(extents, mask).expect("binary mask"),
        spacing: vec![1.0; rank],
    }
}

/// `n_cases` phantoms with ids `case000`, `case001`, ...
pub fn synth_dataset(n_cases: usize, mode: Mode, extents: &[usize], modalities: usize, seed: u64) -> Result<Vec<Case>> {
    check_extents(mode, extents)?;
    if modalities == 0 {
        return Err(HarnessError::Config("need at least one modality".into()));
    }
    let mut rng = seeded_rng(seed);
    Ok((0..n_cases).map(|i| synth_case(&mut rng, format!("case{i:03}"), extents, modalities)).collect())
}
