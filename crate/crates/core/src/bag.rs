//! Object-conditioned bag of instance prototypes.
//!
//! Prototypes are the arithmetic means of the raw (reduced, untransformed)
//! support embeddings. Standardization and the SimpleShot transform are fitted
//! once on the support set of the first build, frozen, and applied at query
//! time to both prototypes and queries. Queries are matched against the
//! instances of the detector's predicted object only, by squared Euclidean
//! distance, with ties going to the earliest declared instance.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{
    FeatureMap, HeadConfig, InstanceIdx, LabelSpace, LabelSpaceSpec, ObjectIdx, ReductionConfig,
    Sample, Transform,
};
use crate::reduction::{build_mask, reduce, Embedding, Standardizer};
use crate::tensor;

pub const BAG_FORMAT: &str = "oboi-bag";
pub const BAG_VERSION: u32 = 1;

/// Reduces a sample's feature map using its own box and image size.
pub fn embed_sample(
    sample: &Sample,
    features: &FeatureMap,
    logits: Option<&[f32]>,
    config: &ReductionConfig,
) -> Result<Embedding> {
    let mask = build_mask(
        &sample.bbox,
        sample.image_size,
        (features.height(), features.width()),
    )?;
    reduce(features, &mask, config, logits)
}

#[derive(Clone, Copy, Debug)]
pub struct SupportItem<'a> {
    pub sample: &'a Sample,
    pub features: &'a FeatureMap,
    pub logits: Option<&'a [f32]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prototype {
    pub mean: Embedding,
    pub support_count: usize,
}

/// Statistics fitted on the support set and frozen with the bag.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TransformStats {
    pub standardizer: Option<Standardizer>,
    /// CL2N centering vector, in standardized coordinates when a
    /// standardizer is present.
    pub center: Option<Vec<f64>>,
}

impl TransformStats {
    /// Fits whatever `reduction` and `head` require from the support embeddings.
    pub fn fit(reduction: &ReductionConfig, head: &HeadConfig, support: &[&[f64]]) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::EmptySupport);
        }
        let standardizer = if reduction.standardize {
            Some(Standardizer::fit(support.iter().copied())?)
        } else {
            None
        };
        let center = if head.effective_transform() == Transform::CL2N {
            let dim = support[0].len();
            let mut sum = vec![0.0; dim];
            let mut buf = vec![0.0; dim];
            for e in support {
                if e.len() != dim {
                    return Err(Error::ShapeMismatch(format!(
                        "embedding of length {} among length {dim}",
                        e.len()
                    )));
                }
                buf.copy_from_slice(e);
                if let Some(s) = &standardizer {
                    s.apply(&mut buf);
                }
                sum.iter_mut().zip(&buf).for_each(|(a, v)| *a += v);
            }
            let n = support.len() as f64;
            Some(sum.into_iter().map(|v| v / n).collect())
        } else {
            None
        };
        Ok(TransformStats {
            standardizer,
            center,
        })
    }

    fn is_empty(&self) -> bool {
        self.standardizer.is_none() && self.center.is_none()
    }
}

fn l2_normalize(x: &mut [f64]) {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        x.iter_mut().for_each(|v| *v /= norm);
    }
}

/// SimpleShot feature transform. Zero vectors pass through unchanged.
pub fn simpleshot_transform(
    embedding: &[f64],
    center: Option<&[f64]>,
    kind: Transform,
) -> Result<Embedding> {
    let mut x = embedding.to_vec();
    match kind {
        Transform::None => {}
        Transform::L2N => l2_normalize(&mut x),
        Transform::CL2N => {
            let center = center.ok_or(Error::MissingStats)?;
            if center.len() != x.len() {
                return Err(Error::ShapeMismatch(format!(
                    "center of length {} for embedding of length {}",
                    center.len(),
                    x.len()
                )));
            }
            x.iter_mut().zip(center).for_each(|(v, c)| *v -= c);
            l2_normalize(&mut x);
        }
    }
    Ok(Embedding::new(x))
}

/// Result of a nearest-prototype search.
#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub predicted: InstanceIdx,
    /// Squared distances to every searched candidate, in declaration order.
    pub distances: Vec<(InstanceIdx, f64)>,
    pub conditioned_on: Option<ObjectIdx>,
}

impl Classification {
    pub fn distance_to(&self, idx: InstanceIdx) -> Option<f64> {
        self.distances
            .iter()
            .find(|(i, _)| *i == idx)
            .map(|(_, d)| *d)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceBag {
    label_space: LabelSpace,
    reduction: ReductionConfig,
    head: HeadConfig,
    prototypes: BTreeMap<InstanceIdx, Prototype>,
    stats: TransformStats,
    dim: Option<usize>,
    // derived: prototypes after the query-time transform
    transformed: Vec<(InstanceIdx, Vec<f64>)>,
}

fn mean_of(embeddings: &[Embedding]) -> Result<Embedding> {
    let first = embeddings.first().ok_or(Error::EmptySupport)?;
    let mut sum = vec![0.0; first.len()];
    for e in embeddings {
        if e.len() != sum.len() {
            return Err(Error::ShapeMismatch(format!(
                "support embedding of length {} among length {}",
                e.len(),
                sum.len()
            )));
        }
        sum.iter_mut().zip(e.iter()).for_each(|(a, v)| *a += v);
    }
    let n = embeddings.len() as f64;
    Ok(Embedding::new(sum.into_iter().map(|v| v / n).collect()))
}

/// Reduces every support item and builds the bag.
pub fn build_bag(
    support: &[SupportItem<'_>],
    label_space: LabelSpace,
    reduction: ReductionConfig,
    head: HeadConfig,
) -> Result<InstanceBag> {
    let embedded = support
        .iter()
        .map(|item| {
            let idx = label_space.instance_idx(&item.sample.instance)?;
            let e = embed_sample(item.sample, item.features, item.logits, &reduction)?;
            Ok((idx, e))
        })
        .collect::<Result<Vec<_>>>()?;
    InstanceBag::from_embeddings(label_space, reduction, head, embedded)
}

impl InstanceBag {
    /// A bag with no prototypes; statistics are fitted by the first
    /// [`InstanceBag::add_instance`].
    pub fn empty(label_space: LabelSpace, reduction: ReductionConfig, head: HeadConfig) -> Self {
        InstanceBag {
            label_space,
            reduction,
            head,
            prototypes: BTreeMap::new(),
            stats: TransformStats::default(),
            dim: None,
            transformed: Vec::new(),
        }
    }

    /// Builds prototypes from already reduced support embeddings. Instances
    /// without support are left out of the bag.
    pub fn from_embeddings(
        label_space: LabelSpace,
        reduction: ReductionConfig,
        head: HeadConfig,
        support: Vec<(InstanceIdx, Embedding)>,
    ) -> Result<Self> {
        reduction.validate()?;
        if support.is_empty() {
            return Err(Error::EmptySupport);
        }
        let refs: Vec<&[f64]> = support.iter().map(|(_, e)| &**e).collect();
        let stats = TransformStats::fit(&reduction, &head, &refs)?;
        let mut grouped: BTreeMap<InstanceIdx, Vec<Embedding>> = BTreeMap::new();
        for (idx, e) in support {
            if idx.0 >= label_space.num_instances() {
                return Err(Error::UnknownInstance(format!("#{}", idx.0)));
            }
            grouped.entry(idx).or_default().push(e);
        }
        let mut bag = InstanceBag::empty(label_space, reduction, head);
        bag.stats = stats;
        for (idx, embeddings) in grouped {
            bag.insert(idx, &embeddings)?;
        }
        bag.refresh_transformed()?;
        Ok(bag)
    }

    fn insert(&mut self, idx: InstanceIdx, support: &[Embedding]) -> Result<()> {
        let mean = mean_of(support)?;
        match self.dim {
            Some(d) if d != mean.len() => {
                return Err(Error::ShapeMismatch(format!(
                    "prototype of length {} in a bag of dimension {d}",
                    mean.len()
                )))
            }
            _ => self.dim = Some(mean.len()),
        }
        self.prototypes.insert(
            idx,
            Prototype {
                mean,
                support_count: support.len(),
            },
        );
        Ok(())
    }

    fn refresh_transformed(&mut self) -> Result<()> {
        self.transformed = self
            .prototypes
            .iter()
            .map(|(idx, p)| Ok((*idx, self.transform(&p.mean)?.into_inner())))
            .collect::<Result<_>>()?;
        Ok(())
    }

    /// Returns a new bag with `instance` added. Frozen statistics are reused;
    /// existing prototypes are untouched.
    pub fn add_instance(
        &self,
        instance: &str,
        support: &[Embedding],
        replace: bool,
    ) -> Result<InstanceBag> {
        let idx = self.label_space.instance_idx(instance)?;
        if self.prototypes.contains_key(&idx) && !replace {
            return Err(Error::DuplicateInstance(instance.to_string()));
        }
        if support.is_empty() {
            return Err(Error::EmptySupport);
        }
        let mut bag = self.clone();
        if bag.prototypes.is_empty() && bag.stats.is_empty() {
            let refs: Vec<&[f64]> = support.iter().map(|e| &**e).collect();
            bag.stats = TransformStats::fit(&bag.reduction, &bag.head, &refs)?;
        }
        if replace && bag.prototypes.len() == 1 && bag.prototypes.contains_key(&idx) {
            bag.dim = None;
        }
        bag.insert(idx, support)?;
        bag.refresh_transformed()?;
        Ok(bag)
    }

    /// Rebuilds the bag from scratch over `support` with the same label space
    /// and configuration, refitting the statistics that `add_instance` keeps
    /// frozen.
    pub fn rebuild(&self, support: Vec<(InstanceIdx, Embedding)>) -> Result<InstanceBag> {
        InstanceBag::from_embeddings(self.label_space.clone(), self.reduction, self.head, support)
    }

    /// Replaces the frozen statistics.
    pub fn with_stats(&self, stats: TransformStats) -> Result<InstanceBag> {
        let mut bag = self.clone();
        bag.stats = stats;
        bag.refresh_transformed()?;
        Ok(bag)
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn reduction(&self) -> &ReductionConfig {
        &self.reduction
    }

    pub fn head(&self) -> &HeadConfig {
        &self.head
    }

    pub fn stats(&self) -> &TransformStats {
        &self.stats
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn prototypes(&self) -> &BTreeMap<InstanceIdx, Prototype> {
        &self.prototypes
    }

    pub fn prototype(&self, instance: &str) -> Option<&Prototype> {
        let idx = self.label_space.instance_idx(instance).ok()?;
        self.prototypes.get(&idx)
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    /// Query-time transform: optional standardization, then the head's transform.
    pub fn transform(&self, embedding: &[f64]) -> Result<Embedding> {
        let mut x = embedding.to_vec();
        if let Some(s) = &self.stats.standardizer {
            s.apply(&mut x);
        }
        simpleshot_transform(
            &x,
            self.stats.center.as_deref(),
            self.head.effective_transform(),
        )
    }

    pub fn classify(&self, query: &[f64], predicted_object: &str) -> Result<Classification> {
        let object = if self.head.conditioned {
            Some(self.label_space.object_idx(predicted_object)?)
        } else {
            None
        };
        self.classify_idx(query, object)
    }

    /// Nearest-prototype search; `object` is ignored when the head is not
    /// conditioned.
    pub fn classify_idx(&self, query: &[f64], object: Option<ObjectIdx>) -> Result<Classification> {
        if let Some(d) = self.dim {
            if d != query.len() {
                return Err(Error::ShapeMismatch(format!(
                    "query of length {} for a bag of dimension {d}",
                    query.len()
                )));
            }
        }
        let q = self.transform(query)?;
        let mut conditioned_on = if self.head.conditioned { object } else { None };
        if let Some(o) = conditioned_on {
            let any = self
                .transformed
                .iter()
                .any(|(i, _)| self.label_space.object_of(*i) == o);
            if !any {
                if self.head.fallback_unconditioned {
                    conditioned_on = None;
                } else {
                    return Err(Error::NoCandidates(
                        self.label_space.object_name(o).to_string(),
                    ));
                }
            }
        }
        let mut distances = Vec::with_capacity(self.transformed.len());
        let mut best: Option<(InstanceIdx, f64)> = None;
        for (idx, proto) in &self.transformed {
            if let Some(o) = conditioned_on {
                if self.label_space.object_of(*idx) != o {
                    continue;
                }
            }
            let d = squared_distance(&q, proto);
            distances.push((*idx, d));
            // strict comparison keeps the earliest declared instance on ties
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((*idx, d));
            }
        }
        let (predicted, _) = best.ok_or(Error::EmptySupport)?;
        Ok(Classification {
            predicted,
            distances,
            conditioned_on,
        })
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

#[derive(Serialize, Deserialize)]
struct BagFile {
    format: String,
    version: u32,
    label_space: LabelSpaceSpec,
    reduction: ReductionConfig,
    head: HeadConfig,
    dim: Option<usize>,
    prototypes: Vec<PrototypeEntry>,
    stats: StatsEntry,
}

#[derive(Serialize, Deserialize)]
struct PrototypeEntry {
    instance: String,
    support_count: usize,
    tensor: String,
}

#[derive(Default, Serialize, Deserialize)]
struct StatsEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shift: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scale: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    center: Option<String>,
}

pub const BAG_FILE: &str = "bag.json";

impl InstanceBag {
    /// Writes `bag.json` plus one double-precision tensor per prototype and
    /// per fitted statistic.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let proto_dir = dir.join("prototypes");
        let stats_dir = dir.join("stats");
        fs::create_dir_all(&proto_dir).map_err(|e| Error::io(&proto_dir, e))?;
        let mut prototypes = Vec::with_capacity(self.prototypes.len());
        for (idx, p) in &self.prototypes {
            let rel = format!("prototypes/{:04}.bin", idx.0);
            tensor::write_tensor_f64(dir.join(&rel), &p.mean)?;
            prototypes.push(PrototypeEntry {
                instance: self.label_space.instance_name(*idx).to_string(),
                support_count: p.support_count,
                tensor: rel,
            });
        }
        let mut stats = StatsEntry::default();
        let put = |name: &str, values: &[f64]| -> Result<String> {
            fs::create_dir_all(&stats_dir).map_err(|e| Error::io(&stats_dir, e))?;
            let rel = format!("stats/{name}.bin");
            tensor::write_tensor_f64(dir.join(&rel), values)?;
            Ok(rel)
        };
        if let Some(s) = &self.stats.standardizer {
            stats.shift = Some(put("shift", &s.shift)?);
            stats.scale = Some(put("scale", &s.scale)?);
        }
        if let Some(c) = &self.stats.center {
            stats.center = Some(put("center", c)?);
        }
        let file = BagFile {
            format: BAG_FORMAT.into(),
            version: BAG_VERSION,
            label_space: self.label_space.to_spec(),
            reduction: self.reduction,
            head: self.head,
            dim: self.dim,
            prototypes,
            stats,
        };
        let path = dir.join(BAG_FILE);
        let mut text = serde_json::to_string_pretty(&serde_json::to_value(&file)?)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<InstanceBag> {
        let dir = dir.as_ref();
        let path = dir.join(BAG_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let file: BagFile = serde_json::from_str(&text)?;
        if file.format != BAG_FORMAT || file.version != BAG_VERSION {
            return Err(Error::InvalidManifest(vec![format!(
                "expected {BAG_FORMAT} v{BAG_VERSION}, found {} v{}",
                file.format, file.version
            )]));
        }
        file.reduction.validate()?;
        let label_space = LabelSpace::new(file.label_space)?;
        let mut bag = InstanceBag::empty(label_space, file.reduction, file.head);
        for entry in file.prototypes {
            let idx = bag.label_space.instance_idx(&entry.instance)?;
            if bag.prototypes.contains_key(&idx) {
                return Err(Error::DuplicateInstance(entry.instance));
            }
            if entry.support_count == 0 {
                return Err(Error::InvalidManifest(vec![format!(
                    "prototype `{}` has zero support",
                    entry.instance
                )]));
            }
            let mean = Embedding::new(tensor::read_tensor_f64(dir.join(&entry.tensor))?);
            if file.dim.is_some_and(|d| d != mean.len()) {
                return Err(Error::ShapeMismatch(format!(
                    "prototype `{}` has length {}",
                    entry.instance,
                    mean.len()
                )));
            }
            bag.prototypes.insert(
                idx,
                Prototype {
                    mean,
                    support_count: entry.support_count,
                },
            );
        }
        bag.dim = file.dim;
        let read = |rel: &Option<String>| -> Result<Option<Vec<f64>>> {
            rel.as_ref()
                .map(|r| tensor::read_tensor_f64(dir.join(r)))
                .transpose()
        };
        let standardizer = match (read(&file.stats.shift)?, read(&file.stats.scale)?) {
            (Some(shift), Some(scale)) => Some(Standardizer { shift, scale }),
            (None, None) => None,
            _ => {
                return Err(Error::InvalidManifest(vec![
                    "standardizer needs both shift and scale".into(),
                ]))
            }
        };
        bag.stats = TransformStats {
            standardizer,
            center: read(&file.stats.center)?,
        };
        bag.refresh_transformed()?;
        Ok(bag)
    }
}
