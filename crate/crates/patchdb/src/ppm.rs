//! Binary PPM (`P6`, maxval 255) frames, the raw input format of `ingest`.

use std::path::Path;

use patchdb_core::Frame;

use crate::error::{Error, Result};

/// Parses a `P6` image into `(width, height, rgb)`.
pub fn decode(bytes: &[u8]) -> std::result::Result<(u32, u32, Vec<u8>), String> {
    let mut pos = 0;
    let mut fields = [0u32; 3];
    let magic = token(bytes, &mut pos).ok_or("truncated header")?;
    if magic != b"P6" {
        return Err("not a binary PPM (P6)".into());
    }
    for f in &mut fields {
        let t = token(bytes, &mut pos).ok_or("truncated header")?;
        *f = std::str::from_utf8(t).ok().and_then(|s| s.parse().ok()).ok_or("bad header number")?;
    }
    let [w, h, max] = fields;
    if max != 255 {
        return Err(format!("maxval {max} unsupported, need 255"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = w as usize * h as usize * 3;
    let raster = bytes.get(pos..pos + n).ok_or("truncated raster")?;
    Ok((w, h, raster.to_vec()))
}

fn token<'a>(b: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < b.len() && b[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if b.get(*pos) == Some(&b'#') {
            while *pos < b.len() && b[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < b.len() && !b[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (*pos > start).then(|| &b[start..*pos])
}

pub fn encode(f: &Frame) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", f.width(), f.height()).into_bytes();
    out.extend_from_slice(f.pixels());
    out
}

pub fn read_frame(path: &Path, video: &str, frame_no: u64) -> Result<Frame> {
    let bytes = std::fs::read(path)?;
    let (w, h, px) = decode(&bytes).map_err(|m| Error::corrupt(path, m))?;
    Ok(Frame::new(video, frame_no, w, h, px)?)
}

/// Frames from every `.ppm` file in `dir`, in file-name order.
pub fn read_dir(dir: &Path, video: &str) -> Result<impl Iterator<Item = Result<Frame>>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("ppm")))
        .collect();
    files.sort();
    let video = video.to_string();
    Ok(files.into_iter().enumerate().map(move |(i, p)| read_frame(&p, &video, i as u64)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_with_comments() {
        let f = Frame::new("v", 0, 3, 2, (0..18).collect()).unwrap();
        assert_eq!(decode(&encode(&f)).unwrap(), (3, 2, f.pixels().to_vec()));
        let mut commented = b"P6 # made by hand\n3 2\n# max\n255\n".to_vec();
        commented.extend(0..18u8);
        assert_eq!(decode(&commented).unwrap().2, f.pixels());
        assert!(decode(b"P3\n1 1\n255\n").is_err());
        assert!(decode(b"P6\n2 2\n255\n\x00").is_err());
    }
}
