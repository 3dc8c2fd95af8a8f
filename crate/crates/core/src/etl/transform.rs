use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::patch::{
    derive_patch, MetaValue, Metadata, Patch, CHANNELS, KEY_BBOX, KEY_DEPTH, KEY_FRAME_HEIGHT,
    KEY_HIST_DIMS,
};

pub const DEFAULT_BINS: u32 = 8;

/// Per-channel normalized histogram over interleaved RGB values.
///
/// Output is `3 * bins` long: all red bins, then green, then blue. Each
/// value `v` lands in bin `floor(v * bins / 256)`.
pub fn histogram_of<I>(values: I, bins: u32) -> Vec<f64>
where
    I: IntoIterator<Item = u8>,
{
    let b = bins as usize;
    let mut counts = vec![0u64; CHANNELS * b];
    let mut n = 0u64;
    for (i, v) in values.into_iter().enumerate() {
        let c = i % CHANNELS;
        counts[c * b + (u32::from(v) * bins / 256) as usize] += 1;
        if c == 0 {
            n += 1;
        }
    }
    let n = n.max(1) as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

pub fn histogram_of_bytes(pixels: &[u8], bins: u32) -> Vec<f64> {
    histogram_of(pixels.iter().copied(), bins)
}

/// Histogram featurizer over a pixel patch.
pub fn color_histogram(p: &Patch, bins: u32, digest: u64) -> Result<Patch> {
    if !p.is_pixel_shaped() {
        return Err(Error::NotPixelShaped(p.shape().to_vec()));
    }
    let hist = histogram_of(p.data().iter().map(|&v| v.clamp(0.0, 255.0) as u8), bins);
    let mut md = Metadata::new();
    md.insert(KEY_HIST_DIMS.into(), MetaValue::Int(hist.len() as i64));
    derive_patch(p, "color_histogram", vec![hist.len()], hist, md, digest)
}

/// Annotates `depth = 1 - y2 / frame_height`; data passes through.
pub fn depth_proxy(p: &Patch, digest: u64) -> Result<Patch> {
    if !p.is_pixel_shaped() {
        return Err(Error::NotPixelShaped(p.shape().to_vec()));
    }
    let missing = |key: &str| Error::MissingKey { key: key.into(), patch_id: p.id() };
    let bbox = p.bbox().ok_or_else(|| missing(KEY_BBOX))?;
    let h = p
        .get(KEY_FRAME_HEIGHT)
        .and_then(MetaValue::as_int)
        .filter(|&h| h > 0)
        .ok_or_else(|| missing(KEY_FRAME_HEIGHT))?;
    let depth = 1.0 - f64::from(bbox.y2) / h as f64;
    let mut md = Metadata::new();
    md.insert(KEY_DEPTH.into(), MetaValue::Float(depth));
    derive_patch(p, "depth_proxy", p.shape().to_vec(), p.data().to_vec(), md, digest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patch::{make_patch, BoundingBox, Frame};

    fn flat_frame(v: u8, w: u32, h: u32) -> Frame {
        Frame::new("v", 0, w, h, vec![v; (w * h * 3) as usize]).unwrap()
    }

    #[test]
    fn all_128_single_bin() {
        let f = flat_frame(128, 4, 4);
        let p = make_patch(&f, f.full_region(), Metadata::new()).unwrap();
        let h = color_histogram(&p, 8, 0).unwrap();
        assert_eq!(h.shape(), &[24]);
        for (i, &v) in h.data().iter().enumerate() {
            assert_eq!(v, if [4, 12, 20].contains(&i) { 1.0 } else { 0.0 });
        }
        assert_eq!(h.get(KEY_HIST_DIMS), Some(&MetaValue::Int(24)));
        assert_eq!(h.lineage().depth(), 2);
    }

    #[test]
    fn bottom_touching_box_has_zero_depth() {
        let f = flat_frame(0, 320, 240);
        let p = make_patch(&f, BoundingBox::new(0, 100, 20, 240).unwrap(), Metadata::new()).unwrap();
        let d = depth_proxy(&p, 0).unwrap();
        assert_eq!(d.get(KEY_DEPTH), Some(&MetaValue::Float(0.0)));
        assert_eq!(d.data(), p.data());
    }

    #[test]
    fn feature_input_rejected() {
        let f = flat_frame(9, 2, 2);
        let p = make_patch(&f, f.full_region(), Metadata::new()).unwrap();
        let h = color_histogram(&p, 8, 0).unwrap();
        assert!(matches!(color_histogram(&h, 8, 0), Err(Error::NotPixelShaped(_))));
        assert!(matches!(depth_proxy(&h, 0), Err(Error::NotPixelShaped(_))));
    }
}
