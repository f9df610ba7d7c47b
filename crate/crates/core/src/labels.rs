//! Label spaces, samples, feature maps and the reduction/head configuration
//! shared by every other module.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of an instance class in declaration order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InstanceIdx(pub usize);

/// Index of an object class in declaration order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjectIdx(pub usize);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceDecl {
    pub id: String,
    pub object: String,
}

/// Unvalidated label space as it appears in a manifest.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpaceSpec {
    pub objects: Vec<String>,
    pub instances: Vec<InstanceDecl>,
}

impl LabelSpaceSpec {
    pub fn new<O, I, A, B>(objects: O, instances: I) -> Self
    where
        O: IntoIterator,
        O::Item: Into<String>,
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        LabelSpaceSpec {
            objects: objects.into_iter().map(Into::into).collect(),
            instances: instances
                .into_iter()
                .map(|(id, object)| InstanceDecl {
                    id: id.into(),
                    object: object.into(),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Violation {
    DuplicateObject { id: String },
    DuplicateInstance { id: String },
    UnknownObject { instance: String, object: String },
    EmptyObject { id: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateObject { id } => write!(f, "object `{id}` declared twice"),
            Violation::DuplicateInstance { id } => write!(f, "instance `{id}` declared twice"),
            Violation::UnknownObject { instance, object } => {
                write!(
                    f,
                    "instance `{instance}` maps to undeclared object `{object}`"
                )
            }
            Violation::EmptyObject { id } => write!(f, "object `{id}` has no instances"),
        }
    }
}

/// Checks every label-space rule and returns all violations found.
pub fn validate_label_space(spec: &LabelSpaceSpec) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut objects: HashMap<&str, usize> = HashMap::new();
    for o in &spec.objects {
        if objects.insert(o.as_str(), 0).is_some() {
            violations.push(Violation::DuplicateObject { id: o.clone() });
        }
    }
    let mut seen = HashMap::new();
    for inst in &spec.instances {
        if seen.insert(inst.id.as_str(), ()).is_some() {
            violations.push(Violation::DuplicateInstance {
                id: inst.id.clone(),
            });
            continue;
        }
        match objects.get_mut(inst.object.as_str()) {
            Some(count) => *count += 1,
            None => violations.push(Violation::UnknownObject {
                instance: inst.id.clone(),
                object: inst.object.clone(),
            }),
        }
    }
    let mut reported = HashMap::new();
    for o in &spec.objects {
        if objects.get(o.as_str()) == Some(&0) && reported.insert(o.as_str(), ()).is_none() {
            violations.push(Violation::EmptyObject { id: o.clone() });
        }
    }
    violations
}

/// Validated two-level label space: object classes, instance classes and the
/// total instance-to-object map. Declaration order is the tie-break order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LabelSpaceSpec", into = "LabelSpaceSpec")]
pub struct LabelSpace {
    objects: Vec<String>,
    instances: Vec<String>,
    instance_object: Vec<ObjectIdx>,
    object_lookup: HashMap<String, ObjectIdx>,
    instance_lookup: HashMap<String, InstanceIdx>,
}

impl TryFrom<LabelSpaceSpec> for LabelSpace {
    type Error = Error;

    fn try_from(spec: LabelSpaceSpec) -> Result<Self> {
        LabelSpace::new(spec)
    }
}

impl From<LabelSpace> for LabelSpaceSpec {
    fn from(ls: LabelSpace) -> Self {
        ls.to_spec()
    }
}

impl LabelSpace {
    pub fn new(spec: LabelSpaceSpec) -> Result<Self> {
        let violations = validate_label_space(&spec);
        if !violations.is_empty() {
            return Err(Error::InvalidLabelSpace(violations));
        }
        let object_lookup: HashMap<_, _> = spec
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| (o.clone(), ObjectIdx(i)))
            .collect();
        let instance_object = spec
            .instances
            .iter()
            .map(|d| object_lookup[&d.object])
            .collect();
        let instance_lookup = spec
            .instances
            .iter()
            .enumerate()
            .map(|(i, d)| (d.id.clone(), InstanceIdx(i)))
            .collect();
        Ok(LabelSpace {
            objects: spec.objects,
            instances: spec.instances.into_iter().map(|d| d.id).collect(),
            instance_object,
            object_lookup,
            instance_lookup,
        })
    }

    pub fn to_spec(&self) -> LabelSpaceSpec {
        LabelSpaceSpec {
            objects: self.objects.clone(),
            instances: self
                .instances
                .iter()
                .zip(&self.instance_object)
                .map(|(id, o)| InstanceDecl {
                    id: id.clone(),
                    object: self.objects[o.0].clone(),
                })
                .collect(),
        }
    }

    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    pub fn instances(&self) -> &[String] {
        &self.instances
    }

    pub fn num_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn num_instances(&self) -> usize {
        self.instances.len()
    }

    pub fn instance_idx(&self, id: &str) -> Result<InstanceIdx> {
        self.instance_lookup
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownInstance(id.to_string()))
    }

    pub fn object_idx(&self, id: &str) -> Result<ObjectIdx> {
        self.object_lookup
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownObject(id.to_string()))
    }

    pub fn instance_name(&self, idx: InstanceIdx) -> &str {
        &self.instances[idx.0]
    }

    pub fn object_name(&self, idx: ObjectIdx) -> &str {
        &self.objects[idx.0]
    }

    /// Object class of an instance, by index.
    pub fn object_of(&self, idx: InstanceIdx) -> ObjectIdx {
        self.instance_object[idx.0]
    }

    /// The instance-to-object map `f`.
    pub fn instance_to_object(&self, instance: &str) -> Result<&str> {
        let idx = self.instance_idx(instance)?;
        Ok(self.object_name(self.object_of(idx)))
    }

    /// Instances of one object class, in declaration order.
    pub fn instances_of(&self, object: ObjectIdx) -> impl Iterator<Item = InstanceIdx> + '_ {
        self.instance_object
            .iter()
            .enumerate()
            .filter(move |(_, o)| **o == object)
            .map(|(i, _)| InstanceIdx(i))
    }
}

/// Pixel-space box with origin at the top-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl From<[f64; 4]> for BoundingBox {
    fn from([x1, y1, x2, y2]: [f64; 4]) -> Self {
        BoundingBox { x1, y1, x2, y2 }
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BoundingBox { x1, y1, x2, y2 }
    }

    pub fn full(image: ImageSize) -> Self {
        BoundingBox::new(0.0, 0.0, image.width as f64, image.height as f64)
    }

    pub fn validate(&self, image: ImageSize) -> Result<()> {
        let (w, h) = (image.width as f64, image.height as f64);
        let ok = [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite())
            && 0.0 <= self.x1
            && self.x1 < self.x2
            && self.x2 <= w
            && 0.0 <= self.y1
            && self.y1 < self.y2
            && self.y2 <= h;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidBox(format!(
                "({}, {}, {}, {}) in {}x{} image",
                self.x1, self.y1, self.x2, self.y2, image.height, image.width
            )))
        }
    }
}

/// Image size in pixels, serialized as `[H, W]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct ImageSize {
    pub height: u32,
    pub width: u32,
}

impl From<[u32; 2]> for ImageSize {
    fn from([height, width]: [u32; 2]) -> Self {
        ImageSize { height, width }
    }
}

impl From<ImageSize> for [u32; 2] {
    fn from(s: ImageSize) -> Self {
        [s.height, s.width]
    }
}

/// One few-shot sample: ground-truth instance, acquisition sequence, the
/// detector's box and predicted object, and where its tensors live.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: String,
    pub instance: String,
    pub sequence: String,
    pub image_size: ImageSize,
    pub bbox: BoundingBox,
    pub predicted_object: String,
    pub features: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<String>,
}

/// Encoder output for one image, `H' x W' x D`, row-major (h, w, channel).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(dims: [usize; 3], data: Vec<f32>) -> Result<Self> {
        let [height, width, channels] = dims;
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::ShapeMismatch(format!(
                "feature map dims must be positive, got {dims:?}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values for dims {dims:?}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::RejectedValue { index });
        }
        Ok(FeatureMap {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Channel vector at spatial cell `(row, col)`.
    pub fn cell(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReductionMode {
    Logits,
    Ee,
    Aee,
}

impl fmt::Display for ReductionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReductionMode::Logits => "logits",
            ReductionMode::Ee => "ee",
            ReductionMode::Aee => "aee",
        })
    }
}

pub const MAX_MOMENT_ORDER: usize = 8;
pub const DEFAULT_MOMENT_ORDER: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReductionConfig {
    pub mode: ReductionMode,
    /// Number of moments; only read when `mode` is `aee`.
    pub moment_order: usize,
    pub standardize: bool,
    pub use_mask: bool,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        ReductionConfig {
            mode: ReductionMode::Aee,
            moment_order: DEFAULT_MOMENT_ORDER,
            standardize: false,
            use_mask: true,
        }
    }
}

impl ReductionConfig {
    pub fn aee(moment_order: usize) -> Self {
        ReductionConfig {
            moment_order,
            ..Default::default()
        }
    }

    pub fn ee() -> Self {
        ReductionConfig {
            mode: ReductionMode::Ee,
            moment_order: 1,
            ..Default::default()
        }
    }

    pub fn logits() -> Self {
        ReductionConfig {
            mode: ReductionMode::Logits,
            moment_order: 1,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == ReductionMode::Aee && !(1..=MAX_MOMENT_ORDER).contains(&self.moment_order) {
            return Err(Error::InvalidConfig(format!(
                "moment order must be in 1..={MAX_MOMENT_ORDER}, got {}",
                self.moment_order
            )));
        }
        Ok(())
    }

    /// Moments per channel actually produced (1 for `ee`).
    pub fn effective_order(&self) -> usize {
        match self.mode {
            ReductionMode::Aee => self.moment_order,
            _ => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    ProtoNet,
    SimpleShot,
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Head::ProtoNet => "protonet",
            Head::SimpleShot => "simpleshot",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Transform {
    #[default]
    #[serde(rename = "none")]
    None,
    L2N,
    CL2N,
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transform::None => "none",
            Transform::L2N => "L2N",
            Transform::CL2N => "CL2N",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub head: Head,
    pub simpleshot_transform: Transform,
    pub conditioned: bool,
    pub fallback_unconditioned: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            head: Head::ProtoNet,
            simpleshot_transform: Transform::None,
            conditioned: true,
            fallback_unconditioned: false,
        }
    }
}

impl HeadConfig {
    pub fn protonet() -> Self {
        HeadConfig::default()
    }

    pub fn simpleshot(transform: Transform) -> Self {
        HeadConfig {
            head: Head::SimpleShot,
            simpleshot_transform: transform,
            ..Default::default()
        }
    }

    /// Transform actually applied at query time; ProtoNet always uses none.
    pub fn effective_transform(&self) -> Transform {
        match self.head {
            Head::ProtoNet => Transform::None,
            Head::SimpleShot => self.simpleshot_transform,
        }
    }
}
