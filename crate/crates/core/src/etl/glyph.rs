use alloc::string::ToString;
use alloc::vec::Vec;

use crate::error::Result;
use crate::patch::{make_patch_with, BoundingBox, Frame, MetaValue, Metadata, Patch, KEY_TEXT};

/// Barcode strip size: one column per bit, repeated over four rows.
pub const GLYPH_W: u32 = 16;
pub const GLYPH_H: u32 = 4;

const COLOR_SPREAD: u8 = 64;

/// A pixel is "colored" when its channel spread is at least 64; everything
/// else reads as black or white.
#[inline]
pub fn is_colored(px: [u8; 3]) -> bool {
    let max = px[0].max(px[1]).max(px[2]);
    let min = px[0].min(px[1]).min(px[2]);
    max - min >= COLOR_SPREAD
}

#[inline]
fn bit_of(px: [u8; 3]) -> bool {
    (u16::from(px[0]) + u16::from(px[1]) + u16::from(px[2])) >= 3 * 128
}

/// Pixel value for bit `i` (MSB first) of `id`.
pub fn glyph_pixel(id: u16, i: u32) -> [u8; 3] {
    if id >> (15 - i) & 1 == 1 {
        [255; 3]
    } else {
        [0; 3]
    }
}

/// Finds every black/white 16x4 strip framed by a one-pixel colored ring
/// and decodes its 16-bit id.
///
/// A strip is rejected when any column disagrees across its four rows.
pub fn read_glyphs(frame: &Frame, digest: u64) -> Result<Vec<Patch>> {
    let (w, h) = (frame.width(), frame.height());
    let mut out = Vec::new();
    if w < GLYPH_W + 2 || h < GLYPH_H + 2 {
        return Ok(out);
    }
    let colored: Vec<bool> = frame
        .pixels()
        .chunks_exact(3)
        .map(|p| is_colored([p[0], p[1], p[2]]))
        .collect();
    let at = |x: u32, y: u32| colored[(y * w + x) as usize];

    for y in 1..=h - GLYPH_H - 1 {
        for x in 1..=w - GLYPH_W - 1 {
            if at(x, y) || !at(x - 1, y) || !at(x, y - 1) {
                continue;
            }
            if let Some(id) = decode_at(frame, &at, x, y) {
                let bbox = BoundingBox::new(x, y, x + GLYPH_W, y + GLYPH_H)?;
                let mut md = Metadata::new();
                md.insert(KEY_TEXT.into(), MetaValue::Str(id.to_string()));
                out.push(make_patch_with(frame, bbox, md, "glyph_reader", digest)?);
            }
        }
    }
    Ok(out)
}

fn decode_at(frame: &Frame, at: &impl Fn(u32, u32) -> bool, x: u32, y: u32) -> Option<u16> {
    for yy in y - 1..=y + GLYPH_H {
        for xx in x - 1..=x + GLYPH_W {
            let inside = (y..y + GLYPH_H).contains(&yy) && (x..x + GLYPH_W).contains(&xx);
            if at(xx, yy) == inside {
                return None;
            }
        }
    }
    let mut id = 0u16;
    for i in 0..GLYPH_W {
        let bit = bit_of(frame.pixel(x + i, y));
        if (1..GLYPH_H).any(|r| bit_of(frame.pixel(x + i, y + r)) != bit) {
            return None;
        }
        id = id << 1 | u16::from(bit);
    }
    Some(id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn frame_with_glyph(id: u16, gx: u32, gy: u32) -> Frame {
        let (w, h) = (40u32, 12u32);
        let mut px = vec![0u8; (w * h * 3) as usize];
        let mut put = |x: u32, y: u32, c: [u8; 3]| {
            let i = ((y * w + x) * 3) as usize;
            px[i..i + 3].copy_from_slice(&c);
        };
        for y in gy - 1..=gy + GLYPH_H {
            for x in gx - 1..=gx + GLYPH_W {
                put(x, y, [200, 30, 30]);
            }
        }
        for r in 0..GLYPH_H {
            for i in 0..GLYPH_W {
                put(gx + i, gy + r, glyph_pixel(id, i));
            }
        }
        Frame::new("v", 0, w, h, px).unwrap()
    }

    #[test]
    fn decodes_ids() {
        for id in [0u16, 1, 513, 0x8000, u16::MAX] {
            let got = read_glyphs(&frame_with_glyph(id, 5, 3), 0).unwrap();
            assert_eq!(got.len(), 1, "id {id}");
            assert_eq!(got[0].get(KEY_TEXT).unwrap().as_str(), Some(id.to_string().as_str()));
            assert_eq!(got[0].bbox(), Some(BoundingBox::new(5, 3, 21, 7).unwrap()));
        }
    }

    #[test]
    fn plain_background_has_no_glyphs() {
        let f = Frame::new("v", 0, 64, 32, vec![3; 64 * 32 * 3]).unwrap();
        assert!(read_glyphs(&f, 0).unwrap().is_empty());
    }
}
