//! Synthetic vision stages: patch generators, transformers and the static
//! pipeline check that runs before anything executes.
//!
//! Generators and transformers are pure functions of their inputs and
//! parameters (the blob detector's label noise is seeded per frame), so a
//! pipeline replayed over the same frames yields the same patches and ids.

mod blob;
mod glyph;
mod transform;
mod validate;

pub use blob::{classify_palette, detect_blobs, BlobParams, COLOR_TOLERANCE};
pub use glyph::{glyph_pixel, is_colored, read_glyphs, GLYPH_H, GLYPH_W};
pub use transform::{color_histogram, depth_proxy, histogram_of, histogram_of_bytes, DEFAULT_BINS};
pub use validate::{check_requirements, validate_pipeline, Stage, StageCheck, Violation};

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::digest::ParamDigest;
use crate::error::{Error, Result};
use crate::patch::{
    make_patch_with, BoundingBox, Frame, Metadata, Patch, Tag, KEY_AREA, KEY_BBOX,
    KEY_DEPTH, KEY_FRAMENO, KEY_FRAME_HEIGHT, KEY_HIST_DIMS, KEY_TEXT,
};
use crate::schema::{DataShape, PatchSchema};

/// One detector color and the label it stands for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaletteEntry {
    pub rgb: [u8; 3],
    pub label: String,
}

impl PaletteEntry {
    pub fn new(rgb: [u8; 3], label: &str) -> Self {
        Self { rgb, label: label.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    WholeImage,
    Tiles { tile_w: u32, tile_h: u32 },
    BlobDetector(BlobParams),
    GlyphReader,
}

impl GeneratorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            GeneratorSpec::WholeImage => "whole_image",
            GeneratorSpec::Tiles { .. } => "tiles",
            GeneratorSpec::BlobDetector(_) => "blob_detector",
            GeneratorSpec::GlyphReader => "glyph_reader",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            GeneratorSpec::Tiles { tile_w, tile_h } if *tile_w == 0 || *tile_h == 0 => {
                Err(Error::InvalidParam("tile size must be positive".into()))
            }
            GeneratorSpec::BlobDetector(p) => p.validate(),
            _ => Ok(()),
        }
    }

    pub fn params_digest(&self) -> u64 {
        let d = ParamDigest::new(self.name());
        match self {
            GeneratorSpec::WholeImage | GeneratorSpec::GlyphReader => d.finish(),
            GeneratorSpec::Tiles { tile_w, tile_h } => {
                d.int("tile_w", i64::from(*tile_w)).int("tile_h", i64::from(*tile_h)).finish()
            }
            GeneratorSpec::BlobDetector(p) => p.digest(),
        }
    }

    pub fn output_schema(&self) -> PatchSchema {
        let base = PatchSchema::new(DataShape::pixels())
            .with_key(KEY_FRAMENO, Tag::Int)
            .with_key(KEY_BBOX, Tag::BBox)
            .with_key(KEY_FRAME_HEIGHT, Tag::Int);
        match self {
            GeneratorSpec::WholeImage | GeneratorSpec::Tiles { .. } => base,
            GeneratorSpec::BlobDetector(p) => base
                .with_key(KEY_AREA, Tag::Int)
                .with_labels(p.palette.iter().map(|e| e.label.clone())),
            GeneratorSpec::GlyphReader => base.with_key(KEY_TEXT, Tag::Str),
        }
    }

    /// All patches this generator produces for one frame.
    pub fn generate(&self, frame: &Frame) -> Result<Vec<Patch>> {
        let digest = self.params_digest();
        match self {
            GeneratorSpec::WholeImage => Ok(alloc::vec![make_patch_with(
                frame,
                frame.full_region(),
                Metadata::new(),
                self.name(),
                digest,
            )?]),
            GeneratorSpec::Tiles { tile_w, tile_h } => {
                let mut out = Vec::new();
                for y in (0..frame.height()).step_by(*tile_h as usize) {
                    for x in (0..frame.width()).step_by(*tile_w as usize) {
                        let r = BoundingBox::new(
                            x,
                            y,
                            (x + tile_w).min(frame.width()),
                            (y + tile_h).min(frame.height()),
                        )?;
                        out.push(make_patch_with(frame, r, Metadata::new(), self.name(), digest)?);
                    }
                }
                Ok(out)
            }
            GeneratorSpec::BlobDetector(p) => detect_blobs(frame, p, digest),
            GeneratorSpec::GlyphReader => read_glyphs(frame, digest),
        }
    }
}

/// Lazily applies a generator to a stream of frames.
pub fn generate<'a, I>(frames: I, g: &'a GeneratorSpec) -> impl Iterator<Item = Result<Patch>> + 'a
where
    I: IntoIterator<Item = Frame> + 'a,
{
    frames.into_iter().flat_map(move |f| match g.generate(&f) {
        Ok(ps) => ps.into_iter().map(Ok).collect::<Vec<_>>(),
        Err(e) => alloc::vec![Err(e)],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransformerSpec {
    ColorHistogram {
        #[serde(default = "default_bins")]
        bins: u32,
    },
    DepthProxy,
}

fn default_bins() -> u32 {
    DEFAULT_BINS
}

impl TransformerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TransformerSpec::ColorHistogram { .. } => "color_histogram",
            TransformerSpec::DepthProxy => "depth_proxy",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TransformerSpec::ColorHistogram { bins } if !(2..=256).contains(bins) => {
                Err(Error::InvalidParam("histogram bins must be in 2..=256".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn params_digest(&self) -> u64 {
        let d = ParamDigest::new(self.name());
        match self {
            TransformerSpec::ColorHistogram { bins } => d.int("bins", i64::from(*bins)).finish(),
            TransformerSpec::DepthProxy => d.finish(),
        }
    }

    /// What the transformer needs from its input.
    pub fn input_requirements(&self) -> PatchSchema {
        match self {
            TransformerSpec::ColorHistogram { .. } => PatchSchema::new(DataShape::pixels()),
            TransformerSpec::DepthProxy => PatchSchema::new(DataShape::pixels())
                .with_key(KEY_BBOX, Tag::BBox)
                .with_key(KEY_FRAME_HEIGHT, Tag::Int),
        }
    }

    pub fn output_schema(&self, input: &PatchSchema) -> PatchSchema {
        let mut out = input.clone();
        match self {
            TransformerSpec::ColorHistogram { bins } => {
                out.data_shape = DataShape::features(3 * *bins as usize);
                out.required_keys.insert(KEY_HIST_DIMS.into(), Tag::Int);
            }
            TransformerSpec::DepthProxy => {
                out.required_keys.insert(KEY_DEPTH.into(), Tag::Float);
            }
        }
        out
    }

    pub fn apply(&self, p: &Patch) -> Result<Patch> {
        match self {
            TransformerSpec::ColorHistogram { bins } => color_histogram(p, *bins, self.params_digest()),
            TransformerSpec::DepthProxy => depth_proxy(p, self.params_digest()),
        }
    }
}

/// Lazily applies a transformer to a stream of patches.
pub fn transform<'a, I>(patches: I, t: &'a TransformerSpec) -> impl Iterator<Item = Result<Patch>> + 'a
where
    I: IntoIterator<Item = Result<Patch>> + 'a,
{
    patches.into_iter().map(move |p| p.and_then(|p| t.apply(&p)))
}
