//! Synthetic feature-map datasets with controllable per-instance statistics.
//!
//! Each sample is an `H' x W' x D` grid. Cells inside the sample's box carry
//! the instance's distribution: per channel, `mu + sigma * z` where `mu` is
//! the channel base mean plus the object offset plus the instance's mean
//! shift, and `z` is a unit-variance mix of a Gaussian and a centered
//! exponential whose weight sets the asymmetry. Cells outside the box carry
//! sequence-dependent Gaussian background.
//!
//! Spec document (JSON, every field optional except the counts):
//!
//! ```json
//! {
//!   "objects": 9, "instances_per_object": 2, "sequences": 3,
//!   "samples_per_cell": 10, "feature_dims": [8, 8, 16], "stride": 32,
//!   "channel_mean_spread": 1.0, "object_mean_offset": 3.0,
//!   "sample_jitter": 0.0,
//!   "instance_profiles": [{"mean_shift": 0.0, "std": 1.0, "asymmetry": 0.0},
//!                         {"mean_shift": 0.0, "std": 2.0, "asymmetry": 0.0}],
//!   "background": {"mean_step": 1.0, "std_base": 1.0, "std_step": 0.5},
//!   "box_coverage": [0.25, 0.75],
//!   "logits": true
//! }
//! ```

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::labels::{BoundingBox, FeatureMap, ImageSize, LabelSpace, LabelSpaceSpec, Sample};

use super::{seeded_rng, HarnessRng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InstanceProfile {
    pub mean_shift: f64,
    pub std: f64,
    /// Weight of the exponential component, in `[0, 1]`.
    pub asymmetry: f64,
}

impl Default for InstanceProfile {
    fn default() -> Self {
        InstanceProfile {
            mean_shift: 0.0,
            std: 1.0,
            asymmetry: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Background {
    /// Background mean of sequence `s` is `s * mean_step`.
    pub mean_step: f64,
    pub std_base: f64,
    pub std_step: f64,
}

impl Default for Background {
    fn default() -> Self {
        Background {
            mean_step: 0.0,
            std_base: 1.0,
            std_step: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub objects: usize,
    pub instances_per_object: usize,
    pub sequences: usize,
    pub samples_per_cell: usize,
    pub feature_dims: [usize; 3],
    /// Image pixels per feature cell.
    pub stride: u32,
    /// Per-channel base means are drawn once from `U(-spread, spread)`.
    pub channel_mean_spread: f64,
    /// Object `o` adds `o * object_mean_offset` to every channel mean.
    pub object_mean_offset: f64,
    /// Std of a per-sample Gaussian shift of the instance means.
    pub sample_jitter: f64,
    /// Profile `j` applies to the `j`-th instance of every object; when empty,
    /// instance `j` gets `mean_shift = j` and unit std.
    pub instance_profiles: Vec<InstanceProfile>,
    pub background: Background,
    /// Allowed fraction of grid cells covered by the box.
    pub box_coverage: [f64; 2],
    /// Emit object-level logits (one value per object class).
    pub logits: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            objects: 2,
            instances_per_object: 2,
            sequences: 2,
            samples_per_cell: 4,
            feature_dims: [8, 8, 8],
            stride: 32,
            channel_mean_spread: 1.0,
            object_mean_offset: 3.0,
            sample_jitter: 0.0,
            instance_profiles: Vec::new(),
            background: Background::default(),
            box_coverage: [0.25, 0.75],
            logits: false,
        }
    }
}

impl SyntheticSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))
    }

    pub fn profiles(&self) -> Vec<InstanceProfile> {
        if self.instance_profiles.is_empty() {
            (0..self.instances_per_object)
                .map(|j| InstanceProfile {
                    mean_shift: j as f64,
                    ..InstanceProfile::default()
                })
                .collect()
        } else {
            self.instance_profiles.clone()
        }
    }

    /// Every `(rows, cols)` box size whose coverage is within bounds.
    fn box_sizes(&self) -> Vec<(usize, usize)> {
        let [h, w, _] = self.feature_dims;
        let total = (h * w) as f64;
        let [lo, hi] = self.box_coverage;
        (1..=h)
            .flat_map(|r| (1..=w).map(move |c| (r, c)))
            .filter(|&(r, c)| {
                let f = (r * c) as f64 / total;
                f >= lo - 1e-12 && f <= hi + 1e-12
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.objects == 0
            || self.instances_per_object == 0
            || self.sequences == 0
            || self.samples_per_cell == 0
        {
            return bad("counts must be positive");
        }
        if self.feature_dims.contains(&0) {
            return bad("feature dims must be positive");
        }
        if self.stride == 0 {
            return bad("stride must be positive");
        }
        if !self.instance_profiles.is_empty()
            && self.instance_profiles.len() != self.instances_per_object
        {
            return bad("instance_profiles must have one entry per instance");
        }
        for p in self.profiles() {
            if !(p.std > 0.0 && p.std.is_finite()) || !(0.0..=1.0).contains(&p.asymmetry) {
                return bad("profile std must be positive and asymmetry in [0, 1]");
            }
            if !p.mean_shift.is_finite() {
                return bad("profile mean_shift must be finite");
            }
        }
        let b = &self.background;
        if !(b.std_base >= 0.0 && b.std_step.is_finite() && b.mean_step.is_finite()) {
            return bad("background parameters must be finite and std_base nonnegative");
        }
        if self.sample_jitter < 0.0 || self.channel_mean_spread < 0.0 {
            return bad("sample_jitter and channel_mean_spread must be nonnegative");
        }
        let [lo, hi] = self.box_coverage;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad("box_coverage must satisfy 0 < lo <= hi <= 1");
        }
        if self.box_sizes().is_empty() {
            return bad("no box size on this grid satisfies box_coverage");
        }
        Ok(())
    }
}

fn asymmetric_unit(rng: &mut HarnessRng, asymmetry: f64) -> f64 {
    let g: f64 = StandardNormal.sample(rng);
    if asymmetry == 0.0 {
        return g;
    }
    let e: f64 = Exp1.sample(rng);
    let a = asymmetry;
    ((1.0 - a) * g + a * (e - 1.0)) / ((1.0 - a).powi(2) + a * a).sqrt()
}

/// Generates the dataset in memory. The same spec and seed always produce the
/// same dataset.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = seeded_rng(seed);
    let [gh, gw, depth] = spec.feature_dims;
    let profiles = spec.profiles();
    let box_sizes = spec.box_sizes();
    let image = ImageSize {
        height: gh as u32 * spec.stride,
        width: gw as u32 * spec.stride,
    };

    let base: Vec<f64> = (0..depth)
        .map(|_| {
            if spec.channel_mean_spread > 0.0 {
                rng.random_range(-spec.channel_mean_spread..=spec.channel_mean_spread)
            } else {
                0.0
            }
        })
        .collect();

    let objects: Vec<String> = (0..spec.objects).map(|o| format!("obj{o:02}")).collect();
    let sequences: Vec<String> = (0..spec.sequences).map(|s| format!("seq{s:02}")).collect();
    let mut instances = Vec::new();
    for o in &objects {
        for j in 0..spec.instances_per_object {
            instances.push((format!("{o}_i{j}"), o.clone()));
        }
    }
    let label_space = LabelSpace::new(LabelSpaceSpec::new(objects.clone(), instances.clone()))?;

    let n = instances.len() * spec.sequences * spec.samples_per_cell;
    let mut samples = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n);
    let mut logits = Vec::with_capacity(n);
    for (o, object) in objects.iter().enumerate() {
        for (j, profile) in profiles.iter().enumerate() {
            let instance = format!("{object}_i{j}");
            let means: Vec<f64> = base
                .iter()
                .map(|b| b + o as f64 * spec.object_mean_offset + profile.mean_shift)
                .collect();
            for (s, sequence) in sequences.iter().enumerate() {
                let bg_mean = s as f64 * spec.background.mean_step;
                let bg_std =
                    (spec.background.std_base + s as f64 * spec.background.std_step).max(0.0);
                for k in 0..spec.samples_per_cell {
                    let (bh, bw) = box_sizes[rng.random_range(0..box_sizes.len())];
                    let r0 = rng.random_range(0..=gh - bh);
                    let c0 = rng.random_range(0..=gw - bw);
                    let jitter: Vec<f64> = (0..depth)
                        .map(|_| {
                            if spec.sample_jitter > 0.0 {
                                spec.sample_jitter * rng.sample::<f64, _>(StandardNormal)
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    let mut data = Vec::with_capacity(gh * gw * depth);
                    for r in 0..gh {
                        for c in 0..gw {
                            let inside = r >= r0 && r < r0 + bh && c >= c0 && c < c0 + bw;
                            for d in 0..depth {
                                let v = if inside {
                                    means[d]
                                        + jitter[d]
                                        + profile.std * asymmetric_unit(&mut rng, profile.asymmetry)
                                } else {
                                    bg_mean + bg_std * rng.sample::<f64, _>(StandardNormal)
                                };
                                data.push(v as f32);
                            }
                        }
                    }
                    let sample_id = format!("{instance}-{sequence}-{k:04}");
                    let stride = spec.stride as f64;
                    samples.push(Sample {
                        sample_id: sample_id.clone(),
                        instance: instance.clone(),
                        sequence: sequence.clone(),
                        image_size: image,
                        bbox: BoundingBox::new(
                            c0 as f64 * stride,
                            r0 as f64 * stride,
                            (c0 + bw) as f64 * stride,
                            (r0 + bh) as f64 * stride,
                        ),
                        predicted_object: object.clone(),
                        features: format!("tensors/{sample_id}.bin"),
                        logits: spec
                            .logits
                            .then(|| format!("tensors/{sample_id}.logits.bin")),
                    });
                    features.push(FeatureMap::new([gh, gw, depth], data)?);
                    logits.push(spec.logits.then(|| {
                        (0..spec.objects)
                            .map(|q| {
                                let hit = if q == o { 4.0 } else { 0.0 };
                                (hit + 0.5 * rng.sample::<f64, _>(StandardNormal)) as f32
                            })
                            .collect()
                    }));
                }
            }
        }
    }
    Dataset::from_memory(label_space, sequences, samples, features, logits)
}

/// Generates and writes a dataset; returns the manifest path.
pub fn write_synthetic(
    spec: &SyntheticSpec,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<PathBuf> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    gen_synthetic(spec, seed)?.write(out_dir)
}
