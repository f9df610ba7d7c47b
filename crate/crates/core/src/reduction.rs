//! Masked multi-order moment pooling of detector feature maps.
//!
//! A bounding box is rescaled onto the feature grid to form a binary mask;
//! per channel, the first `R` moments of the masked values are concatenated
//! block-wise into one embedding of `R * D` values. Block 1 is the raw mean,
//! blocks `n >= 2` are central moments with divisor `N`.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::MAX_MOMENT_ORDER;
use crate::labels::{BoundingBox, FeatureMap, ImageSize, ReductionConfig, ReductionMode};

/// Binary spatial grid over the feature map; at least one cell is set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    cells: Vec<bool>,
}

impl Mask {
    pub fn full(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            cells: vec![true; height * width],
        }
    }

    pub fn from_cells(height: usize, width: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} cells for a {height}x{width} mask",
                cells.len()
            )));
        }
        if !cells.iter().any(|&c| c) {
            return Err(Error::EmptySupport);
        }
        Ok(Mask {
            height,
            width,
            cells,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.width + col]
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// `(row, col)` of every set cell, row-major.
    pub fn true_cells(&self) -> Vec<(usize, usize)> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| c)
            .map(|(i, _)| (i / self.width, i % self.width))
            .collect()
    }
}

/// Rescales `bbox` from image pixels onto an `H' x W'` grid. A cell is set
/// when its center lies in `[x1, x2) x [y1, y2)`; if no center does, only the
/// cell holding the box center is set.
pub fn build_mask(bbox: &BoundingBox, image: ImageSize, grid: (usize, usize)) -> Result<Mask> {
    bbox.validate(image)?;
    let (gh, gw) = grid;
    if gh == 0 || gw == 0 {
        return Err(Error::ShapeMismatch(format!(
            "empty feature grid {gh}x{gw}"
        )));
    }
    let sy = image.height as f64 / gh as f64;
    let sx = image.width as f64 / gw as f64;
    let mut cells = vec![false; gh * gw];
    let mut any = false;
    for r in 0..gh {
        let cy = (r as f64 + 0.5) * sy;
        if cy < bbox.y1 || cy >= bbox.y2 {
            continue;
        }
        for c in 0..gw {
            let cx = (c as f64 + 0.5) * sx;
            if cx >= bbox.x1 && cx < bbox.x2 {
                cells[r * gw + c] = true;
                any = true;
            }
        }
    }
    if !any {
        let bx = 0.5 * (bbox.x1 + bbox.x2);
        let by = 0.5 * (bbox.y1 + bbox.y2);
        let c = ((bx / sx).floor() as usize).min(gw - 1);
        let r = ((by / sy).floor() as usize).min(gh - 1);
        cells[r * gw + c] = true;
    }
    Ok(Mask {
        height: gh,
        width: gw,
        cells,
    })
}

/// Raw mean followed by central moments of orders `2..=order`, population
/// normalization, two passes in double precision.
pub fn central_moments(values: &[f64], order: usize) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::EmptySupport);
    }
    if !(1..=MAX_MOMENT_ORDER).contains(&order) {
        return Err(Error::InvalidConfig(format!(
            "moment order must be in 1..={MAX_MOMENT_ORDER}, got {order}"
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mut acc = [0.0f64; MAX_MOMENT_ORDER];
    for &x in values {
        let dev = x - mean;
        let mut p = dev;
        for a in acc.iter_mut().take(order).skip(1) {
            p *= dev;
            *a += p;
        }
    }
    let mut out = Vec::with_capacity(order);
    out.push(mean);
    out.extend(acc[1..order].iter().map(|a| a / n));
    Ok(out)
}

/// Vector in the metric space: logits, pooled features, or moment blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        Embedding(values)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl Deref for Embedding {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Embedding {
    fn from(v: Vec<f64>) -> Self {
        Embedding(v)
    }
}

/// Embedding length produced by `config` for `channels`-deep features.
pub fn embedding_dim(
    config: &ReductionConfig,
    channels: usize,
    logits_dim: Option<usize>,
) -> Option<usize> {
    match config.mode {
        ReductionMode::Logits => logits_dim,
        _ => Some(config.effective_order() * channels),
    }
}

/// Reduces one feature map to its embedding under `config`.
pub fn reduce(
    features: &FeatureMap,
    mask: &Mask,
    config: &ReductionConfig,
    logits: Option<&[f32]>,
) -> Result<Embedding> {
    config.validate()?;
    if config.mode == ReductionMode::Logits {
        let logits = logits.ok_or(Error::MissingLogits)?;
        return Ok(Embedding(logits.iter().map(|&v| v as f64).collect()));
    }
    if mask.dims() != (features.height(), features.width()) {
        return Err(Error::ShapeMismatch(format!(
            "mask {:?} vs feature grid {}x{}",
            mask.dims(),
            features.height(),
            features.width()
        )));
    }
    let order = config.effective_order();
    let d = features.channels();
    let full;
    let mask = if config.use_mask {
        mask
    } else {
        full = Mask::full(features.height(), features.width());
        &full
    };
    let cells = mask.true_cells();
    let n = cells.len() as f64;

    let mut out = vec![0.0f64; order * d];
    let (means, higher) = out.split_at_mut(d);
    for &(r, c) in &cells {
        for (m, &v) in means.iter_mut().zip(features.cell(r, c)) {
            *m += v as f64;
        }
    }
    for m in means.iter_mut() {
        *m /= n;
    }
    if order > 1 {
        for &(r, c) in &cells {
            for (ch, (&v, &mean)) in features.cell(r, c).iter().zip(means.iter()).enumerate() {
                let dev = v as f64 - mean;
                let mut p = dev;
                for block in 0..order - 1 {
                    p *= dev;
                    higher[block * d + ch] += p;
                }
            }
        }
        for h in higher.iter_mut() {
            *h /= n;
        }
    }
    Ok(Embedding(out))
}

/// Per-dimension affine standardization fitted on a support set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

const MIN_SCALE: f64 = 1e-12;

impl Standardizer {
    /// Mean and population standard deviation per dimension; scales below
    /// `1e-12` become 1.
    pub fn fit<'a, I>(embeddings: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
        I::IntoIter: Clone,
    {
        let it = embeddings.into_iter();
        let mut count = 0usize;
        let mut shift: Vec<f64> = Vec::new();
        for e in it.clone() {
            if count == 0 {
                shift = vec![0.0; e.len()];
            } else if e.len() != shift.len() {
                return Err(Error::ShapeMismatch(format!(
                    "embedding of length {} among length {}",
                    e.len(),
                    shift.len()
                )));
            }
            for (s, v) in shift.iter_mut().zip(e) {
                *s += v;
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::EmptySupport);
        }
        let n = count as f64;
        shift.iter_mut().for_each(|s| *s /= n);
        let mut var = vec![0.0; shift.len()];
        for e in it {
            for ((acc, v), m) in var.iter_mut().zip(e).zip(&shift) {
                let dev = v - m;
                *acc += dev * dev;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s < MIN_SCALE {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Standardizer { shift, scale })
    }

    pub fn apply(&self, x: &mut [f64]) {
        for ((v, s), k) in x.iter_mut().zip(&self.shift).zip(&self.scale) {
            *v = (*v - s) / k;
        }
    }
}
