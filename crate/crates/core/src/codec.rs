//! Sequential-decode clip codec.
//!
//! A clip is a run of equally sized RGB frames. Frame 0 is stored intra
//! coded, every later frame as the byte-wise wrapping difference from the
//! previous *decoded* frame, and the whole byte stream goes through one raw
//! DEFLATE (RFC 1951) stream. Reaching frame `n` therefore requires decoding
//! frames `0..=n`, which is the property the storage layouts are built
//! around. Lossy mode quantizes every channel value before the delta step:
//! `v -> floor(v / s) * s + s / 2`, clamped to 255.
//!
//! Blob layout: `frame_count:u32 width:u32 height:u32 mode:u8 quant_step:u8`
//! followed by the compressed payload (big-endian header).

use alloc::boxed::Box;
use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use miniz_oxide::deflate::core::CompressorOxide;
use miniz_oxide::inflate::stream::InflateState;
use miniz_oxide::{DataFormat, MZFlush, MZStatus};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patch::CHANNELS;

pub const CLIP_HEADER_LEN: usize = 14;
const DEFLATE_LEVEL: u8 = 6;
const CHUNK: usize = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodecMode {
    Lossless,
    Lossy,
}

/// Named lossy levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quality {
    High,
    Medium,
    Low,
}

impl Quality {
    pub const ALL: [Quality; 3] = [Quality::High, Quality::Medium, Quality::Low];

    pub fn quant_step(self) -> u8 {
        match self {
            Quality::High => 4,
            Quality::Medium => 16,
            Quality::Low => 64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Quality::High => "high",
            Quality::Medium => "medium",
            Quality::Low => "low",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub mode: CodecMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quant_step: Option<u8>,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self::lossless()
    }
}

impl CodecConfig {
    pub fn lossless() -> Self {
        Self { mode: CodecMode::Lossless, quant_step: None }
    }

    pub fn lossy(q: Quality) -> Self {
        Self { mode: CodecMode::Lossy, quant_step: Some(q.quant_step()) }
    }

    /// Lossy with an arbitrary step; the named levels use 4, 16 and 64.
    pub fn lossy_step(step: u8) -> Result<Self> {
        let c = Self { mode: CodecMode::Lossy, quant_step: Some(step) };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        match (self.mode, self.quant_step) {
            (CodecMode::Lossless, None) => Ok(()),
            (CodecMode::Lossy, Some(s)) if s >= 1 => Ok(()),
            (CodecMode::Lossless, Some(_)) => {
                Err(Error::InvalidParam("lossless codec takes no quant_step".to_string()))
            }
            (CodecMode::Lossy, _) => {
                Err(Error::InvalidParam("lossy codec needs quant_step >= 1".to_string()))
            }
        }
    }

    pub fn quality(&self) -> Option<Quality> {
        Quality::ALL.into_iter().find(|q| Some(q.quant_step()) == self.quant_step)
    }

    fn mode_byte(&self) -> u8 {
        match self.mode {
            CodecMode::Lossless => 0,
            CodecMode::Lossy => 1,
        }
    }
}

/// Reconstruction value for `v` under quantization step `step`.
#[inline]
pub fn quantize(v: u8, step: u8) -> u8 {
    let s = u32::from(step);
    let q = (u32::from(v) / s) * s + s / 2;
    q.min(255) as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClipHeader {
    pub frame_count: u32,
    pub width: u32,
    pub height: u32,
    pub codec: CodecConfig,
}

impl ClipHeader {
    pub fn frame_len(&self) -> usize {
        self.width as usize * self.height as usize * CHANNELS
    }

    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.frame_count.to_be_bytes());
        out.extend_from_slice(&self.width.to_be_bytes());
        out.extend_from_slice(&self.height.to_be_bytes());
        out.push(self.codec.mode_byte());
        out.push(self.codec.quant_step.unwrap_or(0));
    }

    pub fn parse(blob: &[u8]) -> Result<Self> {
        if blob.len() < CLIP_HEADER_LEN {
            return Err(Error::Decode("clip blob shorter than its header".to_string()));
        }
        let be32 = |i: usize| u32::from_be_bytes(blob[i..i + 4].try_into().unwrap());
        let codec = match (blob[12], blob[13]) {
            (0, 0) => CodecConfig::lossless(),
            (1, s) if s > 0 => CodecConfig { mode: CodecMode::Lossy, quant_step: Some(s) },
            (m, s) => return Err(Error::Decode(format!("bad codec bytes {m}/{s}"))),
        };
        Ok(Self { frame_count: be32(0), width: be32(4), height: be32(8), codec })
    }
}

/// Streams frames into one compressed clip.
pub struct ClipEncoder {
    width: u32,
    height: u32,
    codec: CodecConfig,
    prev: Vec<u8>,
    residual: Vec<u8>,
    compressor: Box<CompressorOxide>,
    payload: Vec<u8>,
    frames: u32,
}

impl ClipEncoder {
    pub fn new(width: u32, height: u32, codec: CodecConfig) -> Result<Self> {
        codec.validate()?;
        if width == 0 || height == 0 {
            return Err(Error::InvalidParam("clip dimensions must be positive".to_string()));
        }
        let len = width as usize * height as usize * CHANNELS;
        let mut compressor = Box::<CompressorOxide>::default();
        compressor.set_format_and_level(DataFormat::Raw, DEFLATE_LEVEL);
        Ok(Self {
            width,
            height,
            codec,
            prev: vec![0; len],
            residual: vec![0; len],
            compressor,
            payload: Vec::new(),
            frames: 0,
        })
    }

    pub fn frames(&self) -> u32 {
        self.frames
    }

    pub fn push(&mut self, pixels: &[u8]) -> Result<()> {
        if pixels.len() != self.prev.len() {
            return Err(Error::PixelLength { expected: self.prev.len(), found: pixels.len() });
        }
        let step = self.codec.quant_step;
        let intra = self.frames == 0;
        for ((r, p), &v) in self.residual.iter_mut().zip(self.prev.iter_mut()).zip(pixels) {
            let cur = match step {
                Some(s) => quantize(v, s),
                None => v,
            };
            *r = if intra { cur } else { cur.wrapping_sub(*p) };
            *p = cur;
        }
        deflate_into(&mut self.compressor, &self.residual, &mut self.payload, MZFlush::None)?;
        self.frames += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<Vec<u8>> {
        deflate_into(&mut self.compressor, &[], &mut self.payload, MZFlush::Finish)?;
        let header = ClipHeader {
            frame_count: self.frames,
            width: self.width,
            height: self.height,
            codec: self.codec,
        };
        let mut out = Vec::with_capacity(CLIP_HEADER_LEN + self.payload.len());
        header.write(&mut out);
        out.extend_from_slice(&self.payload);
        Ok(out)
    }
}

fn deflate_into(
    c: &mut CompressorOxide,
    mut input: &[u8],
    out: &mut Vec<u8>,
    flush: MZFlush,
) -> Result<()> {
    loop {
        if flush == MZFlush::None && input.is_empty() {
            return Ok(());
        }
        let start = out.len();
        out.resize(start + CHUNK, 0);
        let res = miniz_oxide::deflate::stream::deflate(c, input, &mut out[start..], flush);
        out.truncate(start + res.bytes_written);
        input = &input[res.bytes_consumed..];
        match res.status {
            Ok(MZStatus::StreamEnd) => return Ok(()),
            Ok(_) => {}
            Err(e) => return Err(Error::Decode(format!("deflate failed: {e:?}"))),
        }
    }
}

/// Decodes a clip blob one frame at a time, in order.
pub struct ClipDecoder<B> {
    header: ClipHeader,
    blob: B,
    consumed: usize,
    state: Box<InflateState>,
    frame: Vec<u8>,
    residual: Vec<u8>,
    decoded: u32,
}

impl<B: AsRef<[u8]>> ClipDecoder<B> {
    pub fn new(blob: B) -> Result<Self> {
        let header = ClipHeader::parse(blob.as_ref())?;
        let len = header.frame_len();
        Ok(Self {
            header,
            blob,
            consumed: CLIP_HEADER_LEN,
            state: InflateState::new_boxed(DataFormat::Raw),
            frame: vec![0; len],
            residual: vec![0; len],
            decoded: 0,
        })
    }

    pub fn header(&self) -> &ClipHeader {
        &self.header
    }

    /// Frames reconstructed so far.
    pub fn decoded(&self) -> u32 {
        self.decoded
    }

    /// Reconstructs the next frame; `None` after the last one.
    pub fn next_frame(&mut self) -> Result<Option<&[u8]>> {
        if self.decoded >= self.header.frame_count {
            return Ok(None);
        }
        let blob = self.blob.as_ref();
        let mut filled = 0;
        while filled < self.residual.len() {
            let res = miniz_oxide::inflate::stream::inflate(
                &mut self.state,
                &blob[self.consumed..],
                &mut self.residual[filled..],
                MZFlush::None,
            );
            self.consumed += res.bytes_consumed;
            filled += res.bytes_written;
            match res.status {
                Ok(MZStatus::StreamEnd) if filled < self.residual.len() => {
                    return Err(Error::Decode("clip payload ends early".to_string()));
                }
                Ok(_) if res.bytes_consumed == 0 && res.bytes_written == 0 => {
                    return Err(Error::Decode("clip payload truncated".to_string()));
                }
                Ok(_) => {}
                Err(e) => return Err(Error::Decode(format!("inflate failed: {e:?}"))),
            }
        }
        if self.decoded == 0 {
            self.frame.copy_from_slice(&self.residual);
        } else {
            for (f, &r) in self.frame.iter_mut().zip(&self.residual) {
                *f = f.wrapping_add(r);
            }
        }
        self.decoded += 1;
        Ok(Some(&self.frame))
    }
}

/// Encodes a whole clip in one call.
pub fn encode_clip<'a, I>(width: u32, height: u32, codec: CodecConfig, frames: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = &'a [u8]>,
{
    let mut enc = ClipEncoder::new(width, height, codec)?;
    for f in frames {
        enc.push(f)?;
    }
    enc.finish()
}

/// Decodes every frame of a clip.
pub fn decode_clip(blob: &[u8]) -> Result<Vec<Vec<u8>>> {
    let mut dec = ClipDecoder::new(blob)?;
    let mut out = Vec::with_capacity(dec.header().frame_count as usize);
    while let Some(f) = dec.next_frame()? {
        out.push(f.to_vec());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_formula() {
        assert_eq!(quantize(100, 16), 104);
        assert_eq!(quantize(0, 64), 32);
        assert_eq!(quantize(255, 64), 224);
        assert_eq!(quantize(255, 4), 254);
        for s in [4u8, 16, 64] {
            for v in 0..=255u8 {
                assert!(i32::from(quantize(v, s)).abs_diff(i32::from(v)) <= u32::from(s) / 2);
            }
        }
    }

    #[test]
    fn lossless_zero_frames_roundtrip() {
        let zero = vec![0u8; 320 * 240 * 3];
        let blob = encode_clip(320, 240, CodecConfig::lossless(), (0..100).map(|_| &zero[..])).unwrap();
        assert!(blob.len() < 64 * 1024, "100 black frames compressed to {} bytes", blob.len());
        let frames = decode_clip(&blob).unwrap();
        assert_eq!(frames.len(), 100);
        assert!(frames.iter().all(|f| f == &zero));
    }

    #[test]
    fn header_fields() {
        let f = vec![7u8; 4 * 2 * 3];
        let blob = encode_clip(4, 2, CodecConfig::lossy(Quality::Medium), [&f[..], &f[..]]).unwrap();
        let h = ClipHeader::parse(&blob).unwrap();
        assert_eq!(h.frame_count, 2);
        assert_eq!((h.width, h.height), (4, 2));
        assert_eq!(h.codec.quant_step, Some(16));
        assert_eq!(&blob[12..14], &[1, 16]);
    }

    #[test]
    fn lossy_reconstruction_matches_quantizer() {
        let a: Vec<u8> = (0..48).map(|i| (i * 5) as u8).collect();
        let b: Vec<u8> = a.iter().map(|v| v.wrapping_add(33)).collect();
        let blob = encode_clip(4, 4, CodecConfig::lossy(Quality::Medium), [&a[..], &b[..]]).unwrap();
        let out = decode_clip(&blob).unwrap();
        for (src, dec) in [&a, &b].into_iter().zip(&out) {
            for (&s, &d) in src.iter().zip(dec) {
                assert_eq!(d, quantize(s, 16));
            }
        }
    }

    #[test]
    fn decoder_is_incremental() {
        let frames: Vec<Vec<u8>> = (0..5u8).map(|i| vec![i * 40; 12]).collect();
        let blob = encode_clip(2, 2, CodecConfig::lossless(), frames.iter().map(|f| &f[..])).unwrap();
        let mut dec = ClipDecoder::new(&blob[..]).unwrap();
        assert_eq!(dec.next_frame().unwrap().unwrap(), &frames[0][..]);
        assert_eq!(dec.next_frame().unwrap().unwrap(), &frames[1][..]);
        assert_eq!(dec.decoded(), 2);
    }

    #[test]
    fn corrupt_payload_errors() {
        let f = vec![1u8; 300];
        let blob = encode_clip(10, 10, CodecConfig::lossless(), [&f[..], &f[..]]).unwrap();
        assert!(decode_clip(&blob[..blob.len() - 3]).is_err());
        assert!(ClipHeader::parse(&blob[..5]).is_err());
    }

    #[test]
    fn codec_validation() {
        assert!(CodecConfig { mode: CodecMode::Lossless, quant_step: Some(4) }.validate().is_err());
        assert!(CodecConfig { mode: CodecMode::Lossy, quant_step: None }.validate().is_err());
        assert_eq!(CodecConfig::lossy(Quality::Low).quality(), Some(Quality::Low));
    }
}
