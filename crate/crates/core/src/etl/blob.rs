use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PaletteEntry;
use crate::digest::{Fnv1a, ParamDigest};
use crate::error::{Error, Result};
use crate::patch::{make_patch_with, BoundingBox, Frame, MetaValue, Metadata, Patch, KEY_AREA, KEY_LABEL};

/// Per-channel L∞ tolerance for matching a pixel to a palette color.
pub const COLOR_TOLERANCE: u8 = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobParams {
    pub palette: Vec<PaletteEntry>,
    #[serde(default = "default_min_area")]
    pub min_area: u32,
    #[serde(default)]
    pub label_noise_p: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_min_area() -> u32 {
    50
}

impl BlobParams {
    pub fn new(palette: Vec<PaletteEntry>, min_area: u32) -> Self {
        Self { palette, min_area, label_noise_p: 0.0, seed: 0 }
    }

    pub fn with_noise(mut self, p: f64, seed: u64) -> Self {
        self.label_noise_p = p;
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.palette.is_empty() {
            return Err(Error::InvalidParam("blob detector palette is empty".into()));
        }
        if self.min_area == 0 {
            return Err(Error::InvalidParam("min_area must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.label_noise_p) {
            return Err(Error::InvalidParam("label_noise_p must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub(super) fn digest(&self) -> u64 {
        let mut d = ParamDigest::new("blob_detector");
        for e in &self.palette {
            d = d.bytes("rgb", &e.rgb).str("label", &e.label);
        }
        d.int("min_area", i64::from(self.min_area))
            .float("label_noise_p", self.label_noise_p)
            .int("seed", self.seed as i64)
            .finish()
    }

    /// Distinct labels in palette order.
    pub fn labels(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for e in &self.palette {
            if !out.contains(&e.label.as_str()) {
                out.push(&e.label);
            }
        }
        out
    }
}

/// Index of the closest palette color within [`COLOR_TOLERANCE`]; ties go to
/// the earlier entry.
pub fn classify_palette(px: [u8; 3], palette: &[PaletteEntry]) -> Option<usize> {
    let mut best: Option<(usize, u8)> = None;
    for (i, e) in palette.iter().enumerate() {
        let d = (0..3).map(|c| px[c].abs_diff(e.rgb[c])).max().unwrap_or(0);
        if d <= COLOR_TOLERANCE && best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

const NONE: u8 = u8::MAX;

/// Connected-component detector over palette colors.
///
/// Components are emitted in raster order of their first pixel.
pub fn detect_blobs(frame: &Frame, params: &BlobParams, digest: u64) -> Result<Vec<Patch>> {
    params.validate()?;
    if params.palette.len() >= NONE as usize {
        return Err(Error::InvalidParam("palette has too many entries".into()));
    }
    let (w, h) = (frame.width() as usize, frame.height() as usize);
    let class: Vec<u8> = frame
        .pixels()
        .chunks_exact(3)
        .map(|p| classify_palette([p[0], p[1], p[2]], &params.palette).map_or(NONE, |i| i as u8))
        .collect();

    let mut rng = frame_rng(params.seed, frame.frame_no());
    let labels = params.labels();
    let mut seen = vec![false; w * h];
    let mut stack = Vec::new();
    let mut out = Vec::new();
    for start in 0..w * h {
        let k = class[start];
        if k == NONE || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut x1, mut y1, mut x2, mut y2) = (usize::MAX, usize::MAX, 0, 0);
        let mut area = 0u64;
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            area += 1;
            x1 = x1.min(x);
            y1 = y1.min(y);
            x2 = x2.max(x + 1);
            y2 = y2.max(y + 1);
            let mut visit = |j: usize| {
                if class[j] == k && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if area < u64::from(params.min_area) {
            continue;
        }
        let true_label = params.palette[k as usize].label.as_str();
        let label = noisy_label(&mut rng, true_label, &labels, params.label_noise_p);
        let mut md = Metadata::new();
        md.insert(KEY_LABEL.into(), MetaValue::Str(label));
        md.insert(KEY_AREA.into(), MetaValue::Int(area as i64));
        let bbox = BoundingBox::new(x1 as u32, y1 as u32, x2 as u32, y2 as u32)?;
        out.push(make_patch_with(frame, bbox, md, "blob_detector", digest)?);
    }
    Ok(out)
}

fn frame_rng(seed: u64, frame_no: u64) -> ChaCha8Rng {
    let mut h = Fnv1a::new();
    h.write(&seed.to_be_bytes());
    h.write(&frame_no.to_be_bytes());
    ChaCha8Rng::seed_from_u64(h.finish())
}

fn noisy_label(rng: &mut ChaCha8Rng, truth: &str, labels: &[&str], p: f64) -> String {
    if p > 0.0 && rng.random_bool(p) {
        let others: Vec<&str> = labels.iter().copied().filter(|l| *l != truth).collect();
        if !others.is_empty() {
            return others[rng.random_range(0..others.len())].into();
        }
    }
    truth.into()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn red_palette() -> Vec<PaletteEntry> {
        vec![PaletteEntry::new([255, 0, 0], "vehicle")]
    }

    fn frame_with_rect(r: BoundingBox) -> Frame {
        let (w, h) = (320u32, 240u32);
        let mut px = vec![0u8; (w * h * 3) as usize];
        for y in r.y1..r.y2 {
            for x in r.x1..r.x2 {
                px[((y * w + x) * 3) as usize] = 255;
            }
        }
        Frame::new("v", 3, w, h, px).unwrap()
    }

    #[test]
    fn black_frame_has_no_blobs() {
        let f = Frame::new("v", 0, 320, 240, vec![0; 320 * 240 * 3]).unwrap();
        let p = BlobParams::new(red_palette(), 1);
        assert!(detect_blobs(&f, &p, 0).unwrap().is_empty());
    }

    #[test]
    fn solid_rect_is_one_blob() {
        let r = BoundingBox::new(10, 10, 30, 40).unwrap();
        let p = BlobParams::new(red_palette(), 100);
        let got = detect_blobs(&frame_with_rect(r), &p, 0).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].bbox(), Some(r));
        assert_eq!(got[0].label(), Some("vehicle"));
        assert_eq!(got[0].get(KEY_AREA), Some(&MetaValue::Int(600)));
    }

    #[test]
    fn min_area_filters() {
        let r = BoundingBox::new(0, 0, 5, 5).unwrap();
        let p = BlobParams::new(red_palette(), 26);
        assert!(detect_blobs(&frame_with_rect(r), &p, 0).unwrap().is_empty());
    }

    #[test]
    fn tolerance_edge() {
        let pal = red_palette();
        assert_eq!(classify_palette([231, 24, 0], &pal), Some(0));
        assert_eq!(classify_palette([230, 0, 0], &pal), None);
    }

    #[test]
    fn full_noise_always_flips() {
        let pal = vec![PaletteEntry::new([255, 0, 0], "vehicle"), PaletteEntry::new([0, 255, 0], "pedestrian")];
        let r = BoundingBox::new(10, 10, 30, 40).unwrap();
        let p = BlobParams::new(pal, 1).with_noise(1.0, 9);
        let got = detect_blobs(&frame_with_rect(r), &p, 0).unwrap();
        assert_eq!(got[0].label(), Some("pedestrian"));
    }
}
