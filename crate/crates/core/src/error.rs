use alloc::string::String;
use alloc::vec::Vec;

use crate::patch::{BoundingBox, PatchId, Tag};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("region {region} exceeds frame bounds {width}x{height}")]
    RegionOutOfBounds {
        region: BoundingBox,
        width: u32,
        height: u32,
    },
    #[error("invalid bounding box ({x1},{y1},{x2},{y2}): need x1 < x2 and y1 < y2")]
    InvalidBox { x1: u32, y1: u32, x2: u32, y2: u32 },
    #[error("pixel buffer holds {found} bytes, expected {expected}")]
    PixelLength { expected: usize, found: usize },
    #[error("malformed lineage: {0}")]
    MalformedLineage(&'static str),
    #[error("shape {shape:?} does not describe {len} elements")]
    ShapeMismatch { shape: Vec<usize>, len: usize },
    #[error("expected pixel-shaped data [h, w, 3], got {0:?}")]
    NotPixelShaped(Vec<usize>),
    #[error("patch {patch_id:#018x} lacks metadata key `{key}`")]
    MissingKey { key: String, patch_id: PatchId },
    #[error("key `{key}` on patch {patch_id:#018x} has tag {found}, expected {expected}")]
    TagMismatch {
        key: String,
        patch_id: PatchId,
        expected: Tag,
        found: Tag,
    },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("index build over empty input")]
    EmptyInput,
    #[error("k = {k} exceeds the {n} indexed points")]
    KTooLarge { k: usize, n: usize },
    #[error("decode error: {0}")]
    Decode(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("entity {width}x{height} does not fit a {frame_width}x{frame_height} frame lane")]
    EntityTooLarge {
        width: u32,
        height: u32,
        frame_width: u32,
        frame_height: u32,
    },
}

pub type Result<T> = core::result::Result<T, Error>;
