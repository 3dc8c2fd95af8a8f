//! Frames, patches, metadata and lineage.
//!
//! A [`Patch`] is the unit record of the engine: a dense vector with an
//! explicit shape, a metadata dictionary, and a lineage chain that leads back
//! to exactly one base frame. Patches are immutable once built; every stage
//! that changes one produces a new patch through [`derive_patch`].

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::digest::{fnv1a, ParamDigest};
use crate::error::{Error, Result};
use crate::wire;

pub type PatchId = u64;

/// Number of colour channels in every frame and pixel patch.
pub const CHANNELS: usize = 3;

pub const KEY_LABEL: &str = "label";
pub const KEY_FRAMENO: &str = "frameno";
pub const KEY_BBOX: &str = "bbox";
pub const KEY_FRAME_HEIGHT: &str = "frame_height";
pub const KEY_TEXT: &str = "text";
pub const KEY_DEPTH: &str = "depth";
pub const KEY_AREA: &str = "area";
pub const KEY_HIST_DIMS: &str = "hist_dims";
pub const KEY_GROUP_LABELS: &str = "group_labels";
pub const KEY_GROUP_SIZE: &str = "group_size";
pub const KEY_COUNT: &str = "count";

/// Pixel rectangle `[x1, x2) × [y1, y2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl BoundingBox {
    pub fn new(x1: u32, y1: u32, x2: u32, y2: u32) -> Result<Self> {
        if x1 < x2 && y1 < y2 {
            Ok(Self { x1, y1, x2, y2 })
        } else {
            Err(Error::InvalidBox { x1, y1, x2, y2 })
        }
    }

    pub fn width(&self) -> u32 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> u32 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }

    pub fn is_valid(&self) -> bool {
        self.x1 < self.x2 && self.y1 < self.y2
    }

    /// True when the two boxes share a region of positive area.
    pub fn intersects(&self, other: &BoundingBox) -> bool {
        self.x1 < other.x2 && other.x1 < self.x2 && self.y1 < other.y2 && other.y1 < self.y2
    }

    /// True when `inner` lies entirely inside `self`.
    pub fn contains(&self, inner: &BoundingBox) -> bool {
        self.x1 <= inner.x1 && inner.x2 <= self.x2 && self.y1 <= inner.y1 && inner.y2 <= self.y2
    }

    /// True when the horizontal extents overlap on a positive length.
    pub fn overlaps_x(&self, other: &BoundingBox) -> bool {
        self.x1 < other.x2 && other.x1 < self.x2
    }

    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.is_valid() && self.x2 <= width && self.y2 <= height
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.x1, self.y1, self.x2, self.y2)
    }
}

/// A decoded RGB video frame stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    video_id: String,
    frame_no: u64,
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl Frame {
    pub fn new(
        video_id: impl Into<String>,
        frame_no: u64,
        width: u32,
        height: u32,
        pixels: Vec<u8>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParam("frame dimensions must be positive".to_string()));
        }
        let expected = width as usize * height as usize * CHANNELS;
        if pixels.len() != expected {
            return Err(Error::PixelLength { expected, found: pixels.len() });
        }
        Ok(Self { video_id: video_id.into(), frame_no, width, height, pixels })
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn frame_no(&self) -> u64 {
        self.frame_no
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * CHANNELS;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn full_region(&self) -> BoundingBox {
        BoundingBox { x1: 0, y1: 0, x2: self.width, y2: self.height }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    Int,
    Float,
    Str,
    BBox,
    StrList,
}

impl Tag {
    pub fn code(self) -> u8 {
        match self {
            Tag::Int => 0,
            Tag::Float => 1,
            Tag::Str => 2,
            Tag::BBox => 3,
            Tag::StrList => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Tag> {
        Some(match code {
            0 => Tag::Int,
            1 => Tag::Float,
            2 => Tag::Str,
            3 => Tag::BBox,
            4 => Tag::StrList,
            _ => return None,
        })
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tag::Int => "integer",
            Tag::Float => "float",
            Tag::Str => "string",
            Tag::BBox => "bounding-box",
            Tag::StrList => "string-list",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaValue {
    Int(i64),
    Float(f64),
    Str(String),
    BBox(BoundingBox),
    StrList(Vec<String>),
}

impl MetaValue {
    pub fn tag(&self) -> Tag {
        match self {
            MetaValue::Int(_) => Tag::Int,
            MetaValue::Float(_) => Tag::Float,
            MetaValue::Str(_) => Tag::Str,
            MetaValue::BBox(_) => Tag::BBox,
            MetaValue::StrList(_) => Tag::StrList,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            MetaValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_float(&self) -> Option<f64> {
        match self {
            MetaValue::Float(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            MetaValue::Str(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_bbox(&self) -> Option<BoundingBox> {
        match self {
            MetaValue::BBox(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_str_list(&self) -> Option<&[String]> {
        match self {
            MetaValue::StrList(v) => Some(v),
            _ => None,
        }
    }
}

impl From<i64> for MetaValue {
    fn from(v: i64) -> Self {
        MetaValue::Int(v)
    }
}

impl From<f64> for MetaValue {
    fn from(v: f64) -> Self {
        MetaValue::Float(v)
    }
}

impl From<&str> for MetaValue {
    fn from(v: &str) -> Self {
        MetaValue::Str(v.to_string())
    }
}

impl From<String> for MetaValue {
    fn from(v: String) -> Self {
        MetaValue::Str(v)
    }
}

impl From<BoundingBox> for MetaValue {
    fn from(v: BoundingBox) -> Self {
        MetaValue::BBox(v)
    }
}

/// Metadata dictionary; ordered so that serialization is canonical.
pub type Metadata = BTreeMap<String, MetaValue>;

/// Reserved keys and the tag each must carry.
pub const RESERVED_KEYS: [(&str, Tag); 3] =
    [(KEY_LABEL, Tag::Str), (KEY_FRAMENO, Tag::Int), (KEY_BBOX, Tag::BBox)];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    BaseFrame,
    Patch,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SourceRef {
    BaseFrame { video_id: String, frame_no: u64 },
    Patch(PatchId),
}

impl SourceRef {
    pub fn kind(&self) -> SourceKind {
        match self {
            SourceRef::BaseFrame { .. } => SourceKind::BaseFrame,
            SourceRef::Patch(_) => SourceKind::Patch,
        }
    }
}

/// One derivation step: which operation produced the patch, from what.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineageStep {
    pub op_name: String,
    pub source: SourceRef,
    pub region: Option<BoundingBox>,
    pub params_digest: u64,
}

/// Derivation chain, most recent step first.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LineageRef {
    chain: Vec<LineageStep>,
}

impl LineageRef {
    /// Wraps a chain without checking it; [`LineageRef::validate`] and
    /// [`base_frames_of`] reject malformed chains.
    pub fn from_chain(chain: Vec<LineageStep>) -> Self {
        Self { chain }
    }

    pub fn chain(&self) -> &[LineageStep] {
        &self.chain
    }

    pub fn depth(&self) -> usize {
        self.chain.len()
    }

    pub fn validate(&self) -> Result<()> {
        let last = self.chain.last().ok_or(Error::MalformedLineage("empty chain"))?;
        if last.source.kind() != SourceKind::BaseFrame {
            return Err(Error::MalformedLineage("chain does not end at a base frame"));
        }
        if self.chain[..self.chain.len() - 1]
            .iter()
            .any(|s| s.source.kind() == SourceKind::BaseFrame)
        {
            return Err(Error::MalformedLineage("base frame step before the end of the chain"));
        }
        Ok(())
    }

    /// The base frame this lineage terminates in.
    pub fn base_frame(&self) -> Result<(&str, u64)> {
        self.validate()?;
        match &self.chain[self.chain.len() - 1].source {
            SourceRef::BaseFrame { video_id, frame_no } => Ok((video_id, *frame_no)),
            SourceRef::Patch(_) => unreachable!("validated above"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    id: PatchId,
    lineage: LineageRef,
    shape: Vec<usize>,
    data: Vec<f64>,
    metadata: Metadata,
}

impl Patch {
    /// Assembles a patch from stored parts.
    ///
    /// Checks the shape against the data length and the tags of reserved
    /// metadata keys. Lineage is checked lazily by [`base_frames_of`].
    pub fn from_parts(
        id: PatchId,
        lineage: LineageRef,
        shape: Vec<usize>,
        data: Vec<f64>,
        metadata: Metadata,
    ) -> Result<Self> {
        check_shape(&shape, data.len())?;
        check_reserved_tags(id, &metadata)?;
        Ok(Self { id, lineage, shape, data, metadata })
    }

    pub fn id(&self) -> PatchId {
        self.id
    }

    pub fn lineage(&self) -> &LineageRef {
        &self.lineage
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn metadata(&self) -> &Metadata {
        &self.metadata
    }

    pub fn get(&self, key: &str) -> Option<&MetaValue> {
        self.metadata.get(key)
    }

    pub fn label(&self) -> Option<&str> {
        self.get(KEY_LABEL).and_then(MetaValue::as_str)
    }

    pub fn frameno(&self) -> Option<i64> {
        self.get(KEY_FRAMENO).and_then(MetaValue::as_int)
    }

    pub fn bbox(&self) -> Option<BoundingBox> {
        self.get(KEY_BBOX).and_then(MetaValue::as_bbox)
    }

    /// True for `[h, w, 3]` pixel content.
    pub fn is_pixel_shaped(&self) -> bool {
        self.shape.len() == 3 && self.shape[2] == CHANNELS
    }

    /// Dimension of a rank-1 feature vector.
    pub fn feature_dim(&self) -> Option<usize> {
        (self.shape.len() == 1).then(|| self.shape[0])
    }

    /// Full validity check: shape, reserved tags and lineage.
    pub fn validate(&self) -> Result<()> {
        check_shape(&self.shape, self.data.len())?;
        check_reserved_tags(self.id, &self.metadata)?;
        self.lineage.validate()
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    let product = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    if product == Some(len) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch { shape: shape.to_vec(), len })
    }
}

fn check_reserved_tags(patch_id: PatchId, metadata: &Metadata) -> Result<()> {
    for (key, tag) in RESERVED_KEYS {
        if let Some(v) = metadata.get(key) {
            if v.tag() != tag {
                return Err(Error::TagMismatch {
                    key: key.to_string(),
                    patch_id,
                    expected: tag,
                    found: v.tag(),
                });
            }
        }
    }
    Ok(())
}

fn content_id(lineage: &LineageRef, metadata: &Metadata) -> PatchId {
    let mut buf = Vec::new();
    wire::encode_lineage(lineage, &mut buf);
    wire::encode_metadata(metadata, &mut buf);
    fnv1a(&buf)
}

fn check_op_name(op_name: &str) -> Result<()> {
    if op_name.len() > u8::MAX as usize {
        return Err(Error::InvalidParam("operation name longer than 255 bytes".to_string()));
    }
    Ok(())
}

/// Crops `region` out of `frame` into a depth-1 patch.
pub fn make_patch(frame: &Frame, region: BoundingBox, metadata: Metadata) -> Result<Patch> {
    let digest = ParamDigest::new("make_patch").finish();
    make_patch_with(frame, region, metadata, "make_patch", digest)
}

/// [`make_patch`] with an explicit producing operation and parameter digest.
///
/// The returned metadata is the caller's map plus `frameno`, `bbox` and
/// `frame_height`. The patch id is the FNV-1a hash of the canonical lineage
/// and metadata encoding, so identical crops get identical ids.
pub fn make_patch_with(
    frame: &Frame,
    region: BoundingBox,
    mut metadata: Metadata,
    op_name: &str,
    params_digest: u64,
) -> Result<Patch> {
    check_op_name(op_name)?;
    if !region.fits_within(frame.width(), frame.height()) {
        return Err(Error::RegionOutOfBounds {
            region,
            width: frame.width(),
            height: frame.height(),
        });
    }
    let (w, h) = (region.width() as usize, region.height() as usize);
    let stride = frame.width() as usize * CHANNELS;
    let mut data = Vec::with_capacity(w * h * CHANNELS);
    for y in region.y1 as usize..region.y2 as usize {
        let row = &frame.pixels()[y * stride + region.x1 as usize * CHANNELS..][..w * CHANNELS];
        data.extend(row.iter().map(|&v| f64::from(v)));
    }

    metadata.insert(KEY_FRAMENO.to_string(), MetaValue::Int(frame.frame_no() as i64));
    metadata.insert(KEY_BBOX.to_string(), MetaValue::BBox(region));
    metadata.insert(KEY_FRAME_HEIGHT.to_string(), MetaValue::Int(i64::from(frame.height())));

    let lineage = LineageRef::from_chain(alloc::vec![LineageStep {
        op_name: op_name.to_string(),
        source: SourceRef::BaseFrame {
            video_id: frame.video_id().to_string(),
            frame_no: frame.frame_no(),
        },
        region: Some(region),
        params_digest,
    }]);
    let id = content_id(&lineage, &metadata);
    Patch::from_parts(id, lineage, alloc::vec![h, w, CHANNELS], data, metadata)
}

/// Produces a child of `parent` carrying new data and merged metadata.
///
/// New entries win on key collisions. The child's lineage is the parent's
/// chain with one `patch` step prepended.
pub fn derive_patch(
    parent: &Patch,
    op_name: &str,
    shape: Vec<usize>,
    data: Vec<f64>,
    new_entries: Metadata,
    params_digest: u64,
) -> Result<Patch> {
    check_op_name(op_name)?;
    let mut metadata = parent.metadata.clone();
    metadata.extend(new_entries);

    let mut chain = Vec::with_capacity(parent.lineage.depth() + 1);
    chain.push(LineageStep {
        op_name: op_name.to_string(),
        source: SourceRef::Patch(parent.id),
        region: None,
        params_digest,
    });
    chain.extend(parent.lineage.chain.iter().cloned());
    let lineage = LineageRef::from_chain(chain);
    let id = content_id(&lineage, &metadata);
    Patch::from_parts(id, lineage, shape, data, metadata)
}

/// Every base frame named in the patch's lineage, in chain order.
pub fn base_frames_of(p: &Patch) -> Result<Vec<(String, u64)>> {
    p.lineage.validate()?;
    Ok(p.lineage
        .chain
        .iter()
        .filter_map(|s| match &s.source {
            SourceRef::BaseFrame { video_id, frame_no } => Some((video_id.clone(), *frame_no)),
            SourceRef::Patch(_) => None,
        })
        .collect())
}
