//! Portable multimodal volume files.
//!
//! A file is one header line followed by a raw payload:
//!
//! ```text
//! MVOL1 {"dims":[32,32,32],"modalities":2,"spacing":[1.0,1.0,1.0],"dtype":"f32"}\n
//! <payload>
//! ```
//!
//! The payload holds `product(dims) * modalities` little-endian values,
//! modality-major and then in row-major voxel order (last axis fastest).
//! Images use `f32`, masks use `u8` with a single modality. Headers are
//! written in one canonical form; readers reject anything else, as well as
//! payloads whose length disagrees with the header.

use std::path::Path;

use denseformer::metrics::BinaryMask;
use denseformer::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{write_atomic, HarnessError, Result};

const MAGIC: &[u8] = b"MVOL1 ";
/// Upper bound on the header line, so a corrupt file cannot make the reader
/// scan arbitrarily far for a newline.
const MAX_HEADER: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    U8,
}

impl Dtype {
    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub dims: Vec<usize>,
    pub modalities: usize,
    /// Voxel size in millimetres along each axis of `dims`.
    pub spacing: Vec<f64>,
    pub dtype: Dtype,
}

impl Header {
    pub fn voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn payload_len(&self) -> Option<usize> {
        self.dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))?
            .checked_mul(self.modalities)?
            .checked_mul(self.dtype.width())
    }

    fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(HarnessError::Format(format!("dims must be nonempty and positive, got {:?}", self.dims)));
        }
        if self.spacing.len() != self.dims.len() || self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(HarnessError::Format(format!("spacing {:?} does not match dims {:?}", self.spacing, self.dims)));
        }
        if self.modalities == 0 || (self.dtype == Dtype::U8 && self.modalities != 1) {
            return Err(HarnessError::Format(format!("{} modalities with dtype {:?}", self.modalities, self.dtype)));
        }
        if self.payload_len().is_none() {
            return Err(HarnessError::Format("payload size overflows".into()));
        }
        Ok(())
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend(serde_json::to_vec(self).expect("header serializes"));
        out.push(b'\n');
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub header: Header,
    pub payload: Payload,
}

impl Volume {
    /// Image volume from a `(C, *dims)` tensor.
    pub fn image(image: &Tensor<f32>, spacing: &[f64]) -> Result<Self> {
        let shape = image.shape();
        if shape.len() < 2 {
            return Err(HarnessError::Format(format!("image tensor needs (C, *dims), got {shape:?}")));
        }
        let header = Header { dims: shape[1..].to_vec(), modalities: shape[0], spacing: spacing.to_vec(), dtype: Dtype::F32 };
        header.validate()?;
        Ok(Volume { header, payload: Payload::F32(image.data().to_vec()) })
    }

    pub fn mask(mask: &BinaryMask, spacing: &[f64]) -> Result<Self> {
        let header = Header { dims: mask.shape().to_vec(), modalities: 1, spacing: spacing.to_vec(), dtype: Dtype::U8 };
        header.validate()?;
        Ok(Volume { header, payload: Payload::U8(mask.data().to_vec()) })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header.encode();
        match &self.payload {
            Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if !bytes.starts_with(MAGIC) {
            return Err(HarnessError::Format("missing MVOL1 signature".into()));
        }
        let limit = bytes.len().min(MAX_HEADER);
        let end = bytes[..limit]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| HarnessError::Format("header line is unterminated or too long".into()))?;
        let text = &bytes[MAGIC.len()..end];
        let header: Header = serde_json::from_slice(text).map_err(|e| HarnessError::Format(format!("header: {e}")))?;
        header.validate()?;
        if header.encode()[MAGIC.len()..end] != *text {
            return Err(HarnessError::Format("header is not in canonical form".into()));
        }
        let body = &bytes[end + 1..];
        let expected = header.payload_len().expect("validated");
        if body.len() != expected {
            return Err(HarnessError::Format(format!("payload has {} bytes, header implies {expected}", body.len())));
        }
        let payload = match header.dtype {
            Dtype::F32 => Payload::F32(body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()),
            Dtype::U8 => Payload::U8(body.to_vec()),
        };
        Ok(Volume { header, payload })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(HarnessError::io(path))?;
        Volume::from_bytes(&bytes).map_err(|e| match e {
            HarnessError::Format(msg) => HarnessError::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// `(C, *dims)` intensities.
    pub fn to_image(&self) -> Result<Tensor<f32>> {
        match &self.payload {
            Payload::F32(v) => {
                let mut shape = vec![self.header.modalities];
                shape.extend_from_slice(&self.header.dims);
                Ok(Tensor::new(&shape, v.clone())?)
            }
            Payload::U8(_) => Err(HarnessError::Format("expected an f32 image, found a u8 mask".into())),
        }
    }

    pub fn to_mask(&self) -> Result<BinaryMask> {
        match &self.payload {
            Payload::U8(v) => Ok(BinaryMask::new(&self.header.dims, v.clone())?),
            Payload::F32(_) => Err(HarnessError::Format("expected a u8 mask, found an f32 image".into())),
        }
    }
}
