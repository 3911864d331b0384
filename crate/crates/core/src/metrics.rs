//! Overlap and surface-distance metrics on binary masks.
//!
//! HD95 pools, from both directions, the distance of every surface voxel of
//! one mask to the nearest surface voxel of the other, and takes the 95th
//! percentile with linear interpolation between order statistics. A surface
//! voxel is a foreground voxel with at least one face neighbour that is
//! background or outside the volume. Nearest distances come from an exact
//! Euclidean distance transform that honours anisotropic voxel spacing.

use std::fmt::{self, Write as _};

use crate::error::{Result, TensorError};
use crate::ops::{resample_tensor, Interpolation};
use crate::tensor::{contiguous_strides, numel, Tensor};

/// Row-major 0/1 voxel mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    shape: Vec<usize>,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(shape: &[usize], data: Vec<u8>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) || numel(shape) != data.len() {
            return Err(TensorError::invalid("mask", format!("shape {shape:?} with {} values", data.len())));
        }
        if let Some(bad) = data.iter().find(|&&v| v > 1) {
            return Err(TensorError::invalid("mask", format!("mask values must be 0 or 1, found {bad}")));
        }
        Ok(BinaryMask { shape: shape.to_vec(), data })
    }

    pub fn from_fn(shape: &[usize], f: impl Fn(&[usize]) -> bool) -> Self {
        let strides = contiguous_strides(shape);
        let mut idx = vec![0; shape.len()];
        let data = (0..numel(shape))
            .map(|flat| {
                for (d, s) in strides.iter().enumerate() {
                    idx[d] = flat / s % shape[d];
                }
                u8::from(f(&idx))
            })
            .collect();
        BinaryMask { shape: shape.to_vec(), data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        BinaryMask { shape: shape.to_vec(), data: vec![0; numel(shape)] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// Nearest-neighbour resize of the trailing `extents.len()` axes.
    pub fn resize_nearest(&self, extents: &[usize]) -> Result<BinaryMask> {
        if extents.len() > self.shape.len() || extents.contains(&0) {
            return Err(TensorError::shape("mask_resize", &[&self.shape, extents]));
        }
        let lead = self.shape.len() - extents.len();
        let mut t = Tensor::<f64>::from_parts(self.shape.clone(), self.data.iter().map(|&v| v as f64).collect());
        for (i, &len) in extents.iter().enumerate() {
            if t.shape()[lead + i] != len {
                t = resample_tensor(&t, lead + i, len, Interpolation::Nearest);
            }
        }
        Ok(BinaryMask { shape: t.shape().to_vec(), data: t.data().iter().map(|&v| v as u8).collect() })
    }

    /// The `i`-th slice along the first axis.
    pub fn index_first(&self, i: usize) -> BinaryMask {
        let inner = numel(&self.shape[1..]);
        BinaryMask { shape: self.shape[1..].to_vec(), data: self.data[i * inner..(i + 1) * inner].to_vec() }
    }
}

fn overlap(a: &BinaryMask, b: &BinaryMask, op: &'static str) -> Result<(usize, usize, usize)> {
    if a.shape != b.shape {
        return Err(TensorError::shape(op, &[&a.shape, &b.shape]));
    }
    let inter = a.data.iter().zip(&b.data).filter(|(&x, &y)| x == 1 && y == 1).count();
    Ok((inter, a.count(), b.count()))
}

/// `2|A n B| / (|A| + |B|)`, 1 when both masks are empty.
pub fn dsc(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let (inter, a, b) = overlap(pred, gt, "dsc")?;
    Ok(if a + b == 0 { 1.0 } else { 2.0 * inter as f64 / (a + b) as f64 })
}

/// `|A n B| / |A u B|`, 1 when both masks are empty.
pub fn jaccard(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let (inter, a, b) = overlap(pred, gt, "jaccard")?;
    let union = a + b - inter;
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// HD95 value or the reason it does not exist.
#[derive(Clone, Debug, PartialEq)]
pub enum Hd95 {
    Value(f64),
    Undefined(String),
}

impl Hd95 {
    pub fn value(&self) -> Option<f64> {
        match self {
            Hd95::Value(v) => Some(*v),
            Hd95::Undefined(_) => None,
        }
    }
}

impl fmt::Display for Hd95 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Hd95::Value(v) => write!(f, "{v:.6}"),
            Hd95::Undefined(_) => f.write_str("undefined"),
        }
    }
}

/// Foreground voxels with a background or out-of-volume face neighbour.
pub fn surface(mask: &BinaryMask) -> BinaryMask {
    let shape = &mask.shape;
    let strides = contiguous_strides(shape);
    let data = (0..mask.data.len())
        .map(|flat| {
            if mask.data[flat] == 0 {
                return 0;
            }
            let border = (0..shape.len()).any(|d| {
                let i = flat / strides[d] % shape[d];
                i == 0 || i + 1 == shape[d] || mask.data[flat - strides[d]] == 0 || mask.data[flat + strides[d]] == 0
            });
            u8::from(border)
        })
        .collect();
    BinaryMask { shape: shape.clone(), data }
}

/// Squared distance transform of one line in place, after Felzenszwalb and
/// Huttenlocher. `f` holds squared distances (infinity for no site) and
/// `w2` is the squared sample spacing.
fn edt_line(f: &mut [f64], w2: f64, v: &mut [usize], z: &mut [f64], out: &mut [f64]) {
    let n = f.len();
    let mut k: isize = -1;
    for q in 0..n {
        if f[q].is_infinite() {
            continue;
        }
        loop {
            if k < 0 {
                k = 0;
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                break;
            }
            let p = v[k as usize];
            let (qf, pf) = (q as f64, p as f64);
            let s = ((f[q] + w2 * qf * qf) - (f[p] + w2 * pf * pf)) / (2.0 * w2 * (qf - pf));
            if s <= z[k as usize] {
                k -= 1;
                continue;
            }
            k += 1;
            v[k as usize] = q;
            z[k as usize] = s;
            z[k as usize + 1] = f64::INFINITY;
            break;
        }
    }
    if k < 0 {
        return;
    }
    let mut j = 0;
    for (q, o) in out.iter_mut().enumerate().take(n) {
        while z[j + 1] < q as f64 {
            j += 1;
        }
        let d = q as f64 - v[j] as f64;
        *o = w2 * d * d + f[v[j]];
    }
    f.copy_from_slice(&out[..n]);
}

/// Squared Euclidean distance (in physical units) from every voxel to the
/// nearest set voxel of `sites`. Infinite everywhere if `sites` is empty.
pub fn squared_distance_transform(sites: &BinaryMask, spacing: &[f64]) -> Vec<f64> {
    let shape = &sites.shape;
    let strides = contiguous_strides(shape);
    let mut f: Vec<f64> = sites.data.iter().map(|&v| if v == 1 { 0.0 } else { f64::INFINITY }).collect();
    let longest = shape.iter().copied().max().unwrap_or(1);
    let (mut line, mut out) = (vec![0.0; longest], vec![0.0; longest]);
    let (mut v, mut z) = (vec![0usize; longest], vec![0.0; longest + 1]);
    for d in 0..shape.len() {
        let (n, stride) = (shape[d], strides[d]);
        let w2 = spacing[d] * spacing[d];
        for start in 0..f.len() {
            if start / stride % n != 0 {
                continue;
            }
            for i in 0..n {
                line[i] = f[start + i * stride];
            }
            edt_line(&mut line[..n], w2, &mut v, &mut z, &mut out);
            for i in 0..n {
                f[start + i * stride] = line[i];
            }
        }
    }
    f
}

/// `q`-quantile (0..=1) with linear interpolation between order statistics.
pub fn percentile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let pos = q * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
}

/// Pooled surface distances from `a` to `b` and from `b` to `a`.
pub fn surface_distances(a: &BinaryMask, b: &BinaryMask, spacing: &[f64]) -> Vec<f64> {
    let (sa, sb) = (surface(a), surface(b));
    let (da, db) = (squared_distance_transform(&sa, spacing), squared_distance_transform(&sb, spacing));
    let one_way = |from: &BinaryMask, to_dist: &[f64]| -> Vec<f64> {
        from.data.iter().zip(to_dist).filter(|(&s, _)| s == 1).map(|(_, &d2)| d2.sqrt()).collect::<Vec<_>>()
    };
    let mut d = one_way(&sa, &db);
    d.extend(one_way(&sb, &da));
    d
}

pub fn hd95(pred: &BinaryMask, gt: &BinaryMask, spacing: &[f64]) -> Result<Hd95> {
    if pred.shape != gt.shape || spacing.len() != pred.shape.len() {
        return Err(TensorError::shape("hd95", &[&pred.shape, &gt.shape, &[spacing.len()]]));
    }
    if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(TensorError::invalid("hd95", format!("spacing must be positive: {spacing:?}")));
    }
    match (pred.is_empty(), gt.is_empty()) {
        (true, true) => return Ok(Hd95::Undefined("prediction and ground truth are both empty".into())),
        (true, false) => return Ok(Hd95::Undefined("prediction is empty".into())),
        (false, true) => return Ok(Hd95::Undefined("ground truth is empty".into())),
        _ => {}
    }
    let mut d = surface_distances(pred, gt, spacing);
    Ok(Hd95::Value(percentile(&mut d, 0.95)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseMetrics {
    pub case: String,
    pub dsc: f64,
    pub jaccard: f64,
    pub hd95: Hd95,
}

impl CaseMetrics {
    pub fn compute(case: impl Into<String>, pred: &BinaryMask, gt: &BinaryMask, spacing: &[f64]) -> Result<Self> {
        Ok(CaseMetrics { case: case.into(), dsc: dsc(pred, gt)?, jaccard: jaccard(pred, gt)?, hd95: hd95(pred, gt, spacing)? })
    }
}

/// Mean and sample standard deviation (0 for fewer than two values).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Summary { mean, std, count: values.len() })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub cases: Vec<CaseMetrics>,
}

const TABLE_HEADER: &str = "case\tdsc\tji\thd95_mm";

impl MetricReport {
    pub fn dsc(&self) -> Option<Summary> {
        Summary::of(&self.cases.iter().map(|c| c.dsc).collect::<Vec<_>>())
    }

    pub fn jaccard(&self) -> Option<Summary> {
        Summary::of(&self.cases.iter().map(|c| c.jaccard).collect::<Vec<_>>())
    }

    /// Summary over the cases where HD95 is defined.
    pub fn hd95(&self) -> Option<Summary> {
        Summary::of(&self.cases.iter().filter_map(|c| c.hd95.value()).collect::<Vec<_>>())
    }

    /// Tab-separated table: a header, one row per case, then `mean` and `std`
    /// rows. Values have six decimals; HD95 of a case may read `undefined`,
    /// and aggregate HD95 covers defined cases only.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{TABLE_HEADER}").unwrap();
        for c in &self.cases {
            writeln!(s, "{}\t{:.6}\t{:.6}\t{}", c.case, c.dsc, c.jaccard, c.hd95).unwrap();
        }
        let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.6}"));
        let (d, j, h) = (self.dsc(), self.jaccard(), self.hd95());
        writeln!(s, "mean\t{}\t{}\t{}", fmt(d.map(|x| x.mean)), fmt(j.map(|x| x.mean)), fmt(h.map(|x| x.mean))).unwrap();
        writeln!(s, "std\t{}\t{}\t{}", fmt(d.map(|x| x.std)), fmt(j.map(|x| x.std)), fmt(h.map(|x| x.std))).unwrap();
        s
    }

    /// Reads the per-case rows of [`MetricReport::to_table`] output.
    pub fn parse_table(text: &str) -> Result<MetricReport> {
        let bad = |line: &str| TensorError::invalid("metric_table", format!("malformed row {line:?}"));
        let mut lines = text.lines();
        if lines.next() != Some(TABLE_HEADER) {
            return Err(TensorError::invalid("metric_table", "missing header"));
        }
        let mut cases = Vec::new();
        for line in lines {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(bad(line));
            }
            if cols[0] == "mean" || cols[0] == "std" {
                continue;
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(line));
            let hd95 = if cols[3] == "undefined" { Hd95::Undefined("read from table".into()) } else { Hd95::Value(num(cols[3])?) };
            cases.push(CaseMetrics { case: cols[0].to_string(), dsc: num(cols[1])?, jaccard: num(cols[2])?, hd95 });
        }
        Ok(MetricReport { cases })
    }
}
