//! Dataset manifests: a JSON document listing the label space, the ordered
//! acquisition sequences and every sample, with tensor paths relative to the
//! manifest's directory.
//!
//! ```json
//! {
//!   "format": "oboi-dataset",
//!   "version": 1,
//!   "label_space": {
//!     "objects": ["ball", "bottle"],
//!     "instances": [{"id": "ball_1", "object": "ball"}, ...]
//!   },
//!   "sequences": ["s00", "s01"],
//!   "samples": [{
//!     "sample_id": "ball_1-s00-000",
//!     "instance": "ball_1",
//!     "sequence": "s00",
//!     "image_size": [480, 640],
//!     "bbox": [x1, y1, x2, y2],
//!     "predicted_object": "ball",
//!     "features": "tensors/ball_1-s00-000.bin",
//!     "logits": "tensors/ball_1-s00-000.logits.bin"
//!   }]
//! }
//! ```

use std::borrow::Cow;
use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{FeatureMap, InstanceIdx, LabelSpace, LabelSpaceSpec, Sample};
use crate::tensor::{self, Dtype};

pub const MANIFEST_FORMAT: &str = "oboi-dataset";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub label_space: LabelSpaceSpec,
    pub sequences: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Manifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProblemKind {
    ManifestUnreadable,
    UnsupportedFormat,
    LabelSpace,
    UnknownInstance,
    UnknownObject,
    UnknownSequence,
    DuplicateSequence,
    DuplicateSample,
    InvalidBox,
    MissingTensor,
    CorruptTensor,
    RankMismatch,
    DimMismatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub kind: ProblemKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<String>,
    pub detail: String,
}

/// Every problem found in a manifest and its tensors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub problems: Vec<Problem>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.problems.is_empty()
    }

    pub fn count(&self, kind: ProblemKind) -> usize {
        self.problems.iter().filter(|p| p.kind == kind).count()
    }

    fn push(&mut self, kind: ProblemKind, sample_id: Option<&str>, detail: impl Into<String>) {
        self.problems.push(Problem {
            kind,
            sample_id: sample_id.map(str::to_string),
            detail: detail.into(),
        });
    }
}

/// Resolved per-sample metadata.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleMeta {
    pub instance: InstanceIdx,
    pub sequence: usize,
    pub feature_dims: [usize; 3],
    slot: usize,
}

#[derive(Clone, Debug)]
enum FeatureStore {
    Disk(PathBuf),
    Memory {
        features: Arc<Vec<FeatureMap>>,
        logits: Arc<Vec<Option<Vec<f32>>>>,
    },
}

/// A validated dataset. Feature maps are read from disk on demand unless the
/// dataset was built in memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    label_space: LabelSpace,
    sequences: Vec<String>,
    samples: Vec<Sample>,
    meta: Vec<SampleMeta>,
    channels: usize,
    logits_dim: Option<usize>,
    store: FeatureStore,
}

fn most_common(values: impl Iterator<Item = usize>) -> Option<usize> {
    let mut counts: Vec<(usize, usize)> = Vec::new();
    for v in values {
        match counts.iter_mut().find(|(k, _)| *k == v) {
            Some((_, c)) => *c += 1,
            None => counts.push((v, 1)),
        }
    }
    // first-seen wins ties
    let mut best: Option<(usize, usize)> = None;
    for (k, c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((k, c));
        }
    }
    best.map(|(k, _)| k)
}

struct Inspection {
    report: ValidationReport,
    label_space: Option<LabelSpace>,
    feature_dims: Vec<Option<[usize; 3]>>,
}

/// Checks everything about a manifest except tensor payloads. `tensor_dims`
/// returns the feature dims and logits length for sample `i`.
fn inspect<F>(manifest: &Manifest, mut tensor_dims: F) -> Inspection
where
    F: FnMut(usize, &Sample, &mut ValidationReport) -> (Option<[usize; 3]>, Option<usize>),
{
    let mut report = ValidationReport::default();
    if manifest.format != MANIFEST_FORMAT || manifest.version != MANIFEST_VERSION {
        report.push(
            ProblemKind::UnsupportedFormat,
            None,
            format!(
                "expected {MANIFEST_FORMAT} v{MANIFEST_VERSION}, found {} v{}",
                manifest.format, manifest.version
            ),
        );
    }
    let label_space = match LabelSpace::new(manifest.label_space.clone()) {
        Ok(ls) => Some(ls),
        Err(Error::InvalidLabelSpace(violations)) => {
            for v in violations {
                report.push(ProblemKind::LabelSpace, None, v.to_string());
            }
            None
        }
        Err(e) => {
            report.push(ProblemKind::LabelSpace, None, e.to_string());
            None
        }
    };
    let mut sequences = HashSet::new();
    for s in &manifest.sequences {
        if !sequences.insert(s.as_str()) {
            report.push(
                ProblemKind::DuplicateSequence,
                None,
                format!("sequence `{s}`"),
            );
        }
    }

    let mut ids = HashSet::new();
    let mut feature_dims = Vec::with_capacity(manifest.samples.len());
    let mut logits_dims = Vec::with_capacity(manifest.samples.len());
    for (i, s) in manifest.samples.iter().enumerate() {
        let sid = Some(s.sample_id.as_str());
        if !ids.insert(s.sample_id.as_str()) {
            report.push(
                ProblemKind::DuplicateSample,
                sid,
                "sample id declared twice",
            );
        }
        if let Some(ls) = &label_space {
            if ls.instance_idx(&s.instance).is_err() {
                report.push(
                    ProblemKind::UnknownInstance,
                    sid,
                    format!("instance `{}`", s.instance),
                );
            }
            if ls.object_idx(&s.predicted_object).is_err() {
                report.push(
                    ProblemKind::UnknownObject,
                    sid,
                    format!("predicted object `{}`", s.predicted_object),
                );
            }
        }
        if !sequences.contains(s.sequence.as_str()) {
            report.push(
                ProblemKind::UnknownSequence,
                sid,
                format!("sequence `{}`", s.sequence),
            );
        }
        if let Err(e) = s.bbox.validate(s.image_size) {
            report.push(ProblemKind::InvalidBox, sid, e.to_string());
        }
        let (fd, ld) = tensor_dims(i, s, &mut report);
        feature_dims.push(fd);
        logits_dims.push(ld);
    }

    if let Some(d) = most_common(feature_dims.iter().flatten().map(|d| d[2])) {
        for (s, dims) in manifest.samples.iter().zip(&feature_dims) {
            if let Some(dims) = dims {
                if dims[2] != d {
                    report.push(
                        ProblemKind::DimMismatch,
                        Some(&s.sample_id),
                        format!("feature depth {} differs from common depth {d}", dims[2]),
                    );
                }
            }
        }
    }
    if let Some(l) = most_common(logits_dims.iter().flatten().copied()) {
        for (s, len) in manifest.samples.iter().zip(&logits_dims) {
            if let Some(len) = len {
                if *len != l {
                    report.push(
                        ProblemKind::DimMismatch,
                        Some(&s.sample_id),
                        format!("logits length {len} differs from common length {l}"),
                    );
                }
            }
        }
    }
    Inspection {
        report,
        label_space,
        feature_dims,
    }
}

fn disk_dims(
    root: &Path,
    s: &Sample,
    report: &mut ValidationReport,
) -> (Option<[usize; 3]>, Option<usize>) {
    let sid = Some(s.sample_id.as_str());
    let mut header = |rel: &str, want_rank: usize| -> Option<Vec<usize>> {
        let path = root.join(rel);
        if !path.is_file() {
            report.push(ProblemKind::MissingTensor, sid, path.display().to_string());
            return None;
        }
        match tensor::read_tensor_header(&path) {
            Ok(h) if h.dtype == Dtype::F32 && h.dims.len() == want_rank => Some(h.dims),
            Ok(h) => {
                report.push(
                    ProblemKind::RankMismatch,
                    sid,
                    format!("{rel}: rank {} (expected {want_rank})", h.dims.len()),
                );
                None
            }
            Err(e) => {
                report.push(ProblemKind::CorruptTensor, sid, format!("{rel}: {e}"));
                None
            }
        }
    };
    let fd = header(&s.features, 3).map(|d| [d[0], d[1], d[2]]);
    let ld = s.logits.as_deref().and_then(|l| header(l, 1)).map(|d| d[0]);
    (fd, ld)
}

/// Accumulates every manifest and tensor-header problem without aborting.
pub fn validate_dataset(manifest_path: impl AsRef<Path>) -> ValidationReport {
    let path = manifest_path.as_ref();
    let manifest = match Manifest::read(path) {
        Ok(m) => m,
        Err(e) => {
            let mut report = ValidationReport::default();
            report.push(ProblemKind::ManifestUnreadable, None, e.to_string());
            return report;
        }
    };
    let root = manifest_root(path);
    inspect(&manifest, |_, s, r| disk_dims(&root, s, r)).report
}

fn manifest_root(path: &Path) -> PathBuf {
    path.parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Loads and validates a manifest. Tensor headers are checked eagerly; the
/// payloads are read on demand.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let path = manifest_path.as_ref();
    let manifest = Manifest::read(path)?;
    let root = manifest_root(path);
    let inspection = inspect(&manifest, |_, s, r| disk_dims(&root, s, r));
    Dataset::from_inspection(manifest, inspection, FeatureStore::Disk(root), None)
}

impl Dataset {
    fn from_inspection(
        manifest: Manifest,
        inspection: Inspection,
        store: FeatureStore,
        logits_dim: Option<usize>,
    ) -> Result<Self> {
        let Inspection {
            report,
            label_space,
            feature_dims,
        } = inspection;
        if let Some(p) = report
            .problems
            .iter()
            .find(|p| p.kind == ProblemKind::MissingTensor)
        {
            return Err(Error::MissingTensor {
                sample_id: p.sample_id.clone().unwrap_or_default(),
                path: PathBuf::from(&p.detail),
            });
        }
        if !report.is_clean() {
            return Err(Error::InvalidManifest(
                report
                    .problems
                    .iter()
                    .map(|p| match &p.sample_id {
                        Some(id) => format!("{:?} [{id}]: {}", p.kind, p.detail),
                        None => format!("{:?}: {}", p.kind, p.detail),
                    })
                    .collect(),
            ));
        }
        let label_space = label_space.expect("clean report implies a valid label space");
        let seq_index: HashMap<&str, usize> = manifest
            .sequences
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let meta: Vec<SampleMeta> = manifest
            .samples
            .iter()
            .zip(&feature_dims)
            .enumerate()
            .map(|(slot, (s, dims))| SampleMeta {
                instance: label_space.instance_idx(&s.instance).unwrap(),
                sequence: seq_index[s.sequence.as_str()],
                feature_dims: dims.expect("clean report implies readable dims"),
                slot,
            })
            .collect();
        let channels = meta.first().map_or(0, |m| m.feature_dims[2]);
        let logits_dim = match &store {
            FeatureStore::Disk(root) => manifest
                .samples
                .iter()
                .find_map(|s| s.logits.as_deref())
                .map(|l| tensor::read_tensor_header(root.join(l)).map(|h| h.dims[0]))
                .transpose()?,
            FeatureStore::Memory { .. } => logits_dim,
        };
        Ok(Dataset {
            label_space,
            sequences: manifest.sequences,
            samples: manifest.samples,
            meta,
            channels,
            logits_dim,
            store,
        })
    }

    /// Builds a dataset whose tensors live in memory. `features[i]` and
    /// `logits[i]` belong to `samples[i]`; the samples' tensor paths are where
    /// [`Dataset::write`] will put them.
    pub fn from_memory(
        label_space: LabelSpace,
        sequences: Vec<String>,
        samples: Vec<Sample>,
        features: Vec<FeatureMap>,
        logits: Vec<Option<Vec<f32>>>,
    ) -> Result<Self> {
        if features.len() != samples.len() || logits.len() != samples.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} samples, {} feature maps, {} logits",
                samples.len(),
                features.len(),
                logits.len()
            )));
        }
        let manifest = Manifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            label_space: label_space.to_spec(),
            sequences,
            samples,
        };
        let inspection = inspect(&manifest, |i, _, _| {
            (Some(features[i].dims()), logits[i].as_ref().map(Vec::len))
        });
        let logits_dim = logits.iter().flatten().map(Vec::len).next();
        Self::from_inspection(
            manifest,
            inspection,
            FeatureStore::Memory {
                features: Arc::new(features),
                logits: Arc::new(logits),
            },
            logits_dim,
        )
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn sequences(&self) -> &[String] {
        &self.sequences
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn meta(&self, idx: usize) -> &SampleMeta {
        &self.meta[idx]
    }

    /// Common feature depth `D`.
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn logits_dim(&self) -> Option<usize> {
        self.logits_dim
    }

    pub fn sample_index(&self, sample_id: &str) -> Option<usize> {
        self.samples.iter().position(|s| s.sample_id == sample_id)
    }

    pub fn features(&self, idx: usize) -> Result<Cow<'_, FeatureMap>> {
        match &self.store {
            FeatureStore::Disk(root) => {
                let t = tensor::read_tensor(root.join(&self.samples[idx].features))?;
                let dims = [t.dims[0], t.dims[1], t.dims[2]];
                Ok(Cow::Owned(FeatureMap::new(dims, t.values)?))
            }
            FeatureStore::Memory { features, .. } => {
                Ok(Cow::Borrowed(&features[self.meta[idx].slot]))
            }
        }
    }

    pub fn logits(&self, idx: usize) -> Result<Option<Cow<'_, [f32]>>> {
        match &self.store {
            FeatureStore::Disk(root) => match &self.samples[idx].logits {
                Some(rel) => Ok(Some(Cow::Owned(
                    tensor::read_tensor(root.join(rel))?.values,
                ))),
                None => Ok(None),
            },
            FeatureStore::Memory { logits, .. } => {
                Ok(logits[self.meta[idx].slot].as_deref().map(Cow::Borrowed))
            }
        }
    }

    pub fn to_manifest(&self) -> Manifest {
        Manifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            label_space: self.label_space.to_spec(),
            sequences: self.sequences.clone(),
            samples: self.samples.clone(),
        }
    }

    /// Writes the manifest and every tensor under `dir`; returns the manifest path.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        for (i, s) in self.samples.iter().enumerate() {
            let fm = self.features(i)?;
            let path = dir.join(&s.features);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            tensor::write_tensor(&path, &fm.dims(), fm.data())?;
            if let (Some(rel), Some(l)) = (&s.logits, self.logits(i)?) {
                tensor::write_tensor(dir.join(rel), &[l.len()], &l)?;
            }
        }
        let manifest_path = dir.join("manifest.json");
        self.to_manifest().write(&manifest_path)?;
        Ok(manifest_path)
    }

    /// Keeps the samples selected by `keep` (in dataset order) and replaces the
    /// label space. Every kept sample's instance must exist in `label_space`.
    pub fn restrict(&self, label_space: LabelSpace, keep: impl Fn(usize) -> bool) -> Result<Self> {
        let mut samples = Vec::new();
        let mut meta = Vec::new();
        for (i, (s, m)) in self.samples.iter().zip(&self.meta).enumerate() {
            if !keep(i) {
                continue;
            }
            let instance = label_space.instance_idx(&s.instance)?;
            label_space.object_idx(&s.predicted_object)?;
            samples.push(s.clone());
            meta.push(SampleMeta { instance, ..*m });
        }
        Ok(Dataset {
            label_space,
            sequences: self.sequences.clone(),
            samples,
            meta,
            channels: self.channels,
            logits_dim: self.logits_dim,
            store: self.store.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::{BoundingBox, ImageSize};

    fn sample(id: &str, instance: &str, d: usize) -> (Sample, FeatureMap) {
        let s = Sample {
            sample_id: id.into(),
            instance: instance.into(),
            sequence: "s0".into(),
            image_size: ImageSize {
                height: 8,
                width: 8,
            },
            bbox: BoundingBox::new(0.0, 0.0, 8.0, 8.0),
            predicted_object: "ball".into(),
            features: format!("tensors/{id}.bin"),
            logits: None,
        };
        (s, FeatureMap::new([2, 2, d], vec![1.0; 4 * d]).unwrap())
    }

    fn small(ds: &[usize]) -> Dataset {
        let ls = LabelSpace::new(LabelSpaceSpec::new(
            ["ball"],
            [("ball_1", "ball"), ("ball_2", "ball")],
        ))
        .unwrap();
        let (samples, features): (Vec<_>, Vec<_>) = ds
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                sample(
                    &format!("x{i}"),
                    if i % 2 == 0 { "ball_1" } else { "ball_2" },
                    d,
                )
            })
            .unzip();
        let n = samples.len();
        Dataset::from_memory(ls, vec!["s0".into()], samples, features, vec![None; n]).unwrap()
    }

    #[test]
    fn written_dataset_validates_clean_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small(&[4, 4, 4]);
        let path = ds.write(dir.path()).unwrap();
        assert!(validate_dataset(&path).is_clean());
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.samples(), ds.samples());
        assert_eq!(back.channels(), 4);
        assert_eq!(
            back.features(1).unwrap().as_ref(),
            ds.features(1).unwrap().as_ref()
        );
    }

    #[test]
    fn deleted_tensor_is_one_missing_entry() {
        let dir = tempfile::tempdir().unwrap();
        let path = small(&[4, 4, 4]).write(dir.path()).unwrap();
        fs::remove_file(dir.path().join("tensors/x1.bin")).unwrap();
        let report = validate_dataset(&path);
        assert_eq!(report.problems.len(), 1);
        assert_eq!(report.count(ProblemKind::MissingTensor), 1);
        assert!(matches!(
            load_dataset(&path),
            Err(Error::MissingTensor { sample_id, .. }) if sample_id == "x1"
        ));
    }

    #[test]
    fn odd_depth_is_one_dim_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small(&[8, 8, 8]);
        let path = ds.write(dir.path()).unwrap();
        tensor::write_tensor(dir.path().join("tensors/x2.bin"), &[2, 2, 4], &[0.0; 16]).unwrap();
        let report = validate_dataset(&path);
        assert_eq!(report.problems.len(), 1, "{report:?}");
        assert_eq!(report.problems[0].kind, ProblemKind::DimMismatch);
        assert_eq!(report.problems[0].sample_id.as_deref(), Some("x2"));
        assert!(matches!(
            load_dataset(&path),
            Err(Error::InvalidManifest(_))
        ));
    }

    #[test]
    fn manifest_level_problems_accumulate() {
        let dir = tempfile::tempdir().unwrap();
        let path = small(&[4, 4]).write(dir.path()).unwrap();
        let mut m = Manifest::read(&path).unwrap();
        m.samples[0].sequence = "nope".into();
        m.samples[1].predicted_object = "cup".into();
        m.samples[1].bbox = BoundingBox::new(5.0, 0.0, 4.0, 8.0);
        m.write(&path).unwrap();
        let report = validate_dataset(&path);
        assert_eq!(report.count(ProblemKind::UnknownSequence), 1);
        assert_eq!(report.count(ProblemKind::UnknownObject), 1);
        assert_eq!(report.count(ProblemKind::InvalidBox), 1);
    }

    #[test]
    fn unreadable_manifest_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        fs::write(&path, "{ not json").unwrap();
        let report = validate_dataset(&path);
        assert_eq!(report.count(ProblemKind::ManifestUnreadable), 1);
    }

    #[test]
    fn load_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let path = small(&[4, 4, 4, 4]).write(dir.path()).unwrap();
        let a = load_dataset(&path).unwrap();
        let b = load_dataset(&path).unwrap();
        assert_eq!(a.samples(), b.samples());
        assert_eq!(a.meta, b.meta);
    }
}
