//! Canonical binary record for patches.
//!
//! ```text
//! record   := body_len:u32 body
//! body     := patch_id:u64 shape data lineage metadata
//! shape    := rank:u8 dim:u32*rank
//! data     := f64*prod(shape)                      (IEEE-754, big-endian)
//! lineage  := steps:u16 step*
//! step     := op_name:str8 kind:u8 source region digest:u64
//! source   := video_id:str8 frame_no:u64           (kind 0, base frame)
//!           | patch_id:u64                         (kind 1, patch)
//! region   := 0:u8 | 1:u8 x1:u32 y1:u32 x2:u32 y2:u32
//! metadata := entries:u16 (key:str8 tag:u8 payload)*
//! ```
//!
//! All integers are big-endian. `str8` is a 1-byte length followed by UTF-8
//! bytes; metadata string payloads use a 2-byte length.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::patch::{
    BoundingBox, LineageRef, LineageStep, MetaValue, Metadata, Patch, SourceRef, Tag,
};

pub fn encode_patch(p: &Patch) -> Vec<u8> {
    let mut body = Vec::with_capacity(64 + p.data().len() * 8);
    body.extend_from_slice(&p.id().to_be_bytes());
    body.push(p.shape().len() as u8);
    for &d in p.shape() {
        body.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for &v in p.data() {
        body.extend_from_slice(&v.to_bits().to_be_bytes());
    }
    encode_lineage(p.lineage(), &mut body);
    encode_metadata(p.metadata(), &mut body);

    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn decode_patch(bytes: &[u8]) -> Result<Patch> {
    let mut r = Reader::new(bytes);
    let len = r.u32()? as usize;
    if r.remaining() != len {
        return Err(decode_err("record length prefix does not match payload"));
    }
    let id = r.u64()?;
    let rank = r.u8()? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32()? as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
        .ok_or_else(|| decode_err("shape exceeds record"))?;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(f64::from_bits(r.u64()?));
    }
    let lineage = decode_lineage(&mut r)?;
    let metadata = decode_metadata(&mut r)?;
    if r.remaining() != 0 {
        return Err(decode_err("trailing bytes after metadata"));
    }
    Patch::from_parts(id, lineage, shape, data, metadata)
}

pub fn encode_lineage(l: &LineageRef, out: &mut Vec<u8>) {
    out.extend_from_slice(&(l.chain().len() as u16).to_be_bytes());
    for step in l.chain() {
        put_str8(out, &step.op_name);
        match &step.source {
            SourceRef::BaseFrame { video_id, frame_no } => {
                out.push(0);
                put_str8(out, video_id);
                out.extend_from_slice(&frame_no.to_be_bytes());
            }
            SourceRef::Patch(id) => {
                out.push(1);
                out.extend_from_slice(&id.to_be_bytes());
            }
        }
        match step.region {
            None => out.push(0),
            Some(b) => {
                out.push(1);
                put_bbox(out, &b);
            }
        }
        out.extend_from_slice(&step.params_digest.to_be_bytes());
    }
}

pub fn encode_metadata(m: &Metadata, out: &mut Vec<u8>) {
    out.extend_from_slice(&(m.len() as u16).to_be_bytes());
    for (k, v) in m {
        put_str8(out, k);
        out.push(v.tag().code());
        match v {
            MetaValue::Int(i) => out.extend_from_slice(&i.to_be_bytes()),
            MetaValue::Float(f) => out.extend_from_slice(&f.to_bits().to_be_bytes()),
            MetaValue::Str(s) => put_str16(out, s),
            MetaValue::BBox(b) => put_bbox(out, b),
            MetaValue::StrList(list) => {
                out.extend_from_slice(&(list.len() as u16).to_be_bytes());
                for s in list {
                    put_str16(out, s);
                }
            }
        }
    }
}

fn decode_lineage(r: &mut Reader<'_>) -> Result<LineageRef> {
    let steps = r.u16()? as usize;
    let mut chain = Vec::with_capacity(steps);
    for _ in 0..steps {
        let op_name = r.str8()?;
        let source = match r.u8()? {
            0 => {
                let video_id = r.str8()?;
                SourceRef::BaseFrame { video_id, frame_no: r.u64()? }
            }
            1 => SourceRef::Patch(r.u64()?),
            k => return Err(decode_err_owned(alloc::format!("unknown source kind {k}"))),
        };
        let region = match r.u8()? {
            0 => None,
            1 => Some(r.bbox()?),
            f => return Err(decode_err_owned(alloc::format!("bad region flag {f}"))),
        };
        let params_digest = r.u64()?;
        chain.push(LineageStep { op_name, source, region, params_digest });
    }
    Ok(LineageRef::from_chain(chain))
}

fn decode_metadata(r: &mut Reader<'_>) -> Result<Metadata> {
    let n = r.u16()? as usize;
    let mut m = Metadata::new();
    for _ in 0..n {
        let key = r.str8()?;
        let code = r.u8()?;
        let tag = Tag::from_code(code)
            .ok_or_else(|| decode_err_owned(alloc::format!("unknown tag {code}")))?;
        let v = match tag {
            Tag::Int => MetaValue::Int(r.u64()? as i64),
            Tag::Float => MetaValue::Float(f64::from_bits(r.u64()?)),
            Tag::Str => MetaValue::Str(r.str16()?),
            Tag::BBox => MetaValue::BBox(r.bbox()?),
            Tag::StrList => {
                let count = r.u16()? as usize;
                let mut list = Vec::with_capacity(count.min(r.remaining()));
                for _ in 0..count {
                    list.push(r.str16()?);
                }
                MetaValue::StrList(list)
            }
        };
        m.insert(key, v);
    }
    Ok(m)
}

fn put_str8(out: &mut Vec<u8>, s: &str) {
    let b = &s.as_bytes()[..s.len().min(u8::MAX as usize)];
    out.push(b.len() as u8);
    out.extend_from_slice(b);
}

fn put_str16(out: &mut Vec<u8>, s: &str) {
    let b = &s.as_bytes()[..s.len().min(u16::MAX as usize)];
    out.extend_from_slice(&(b.len() as u16).to_be_bytes());
    out.extend_from_slice(b);
}

fn put_bbox(out: &mut Vec<u8>, b: &BoundingBox) {
    for v in [b.x1, b.y1, b.x2, b.y2] {
        out.extend_from_slice(&v.to_be_bytes());
    }
}

fn decode_err(msg: &str) -> Error {
    Error::Decode(msg.to_string())
}

fn decode_err_owned(msg: String) -> Error {
    Error::Decode(msg)
}

/// Big-endian cursor over a byte slice.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(decode_err("unexpected end of record"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub(crate) fn bbox(&mut self) -> Result<BoundingBox> {
        let (x1, y1, x2, y2) = (self.u32()?, self.u32()?, self.u32()?, self.u32()?);
        BoundingBox::new(x1, y1, x2, y2)
    }

    pub(crate) fn str8(&mut self) -> Result<String> {
        let n = self.u8()? as usize;
        self.utf8(n)
    }

    pub(crate) fn str16(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        self.utf8(n)
    }

    fn utf8(&mut self, n: usize) -> Result<String> {
        core::str::from_utf8(self.take(n)?)
            .map(ToString::to_string)
            .map_err(|_| decode_err("invalid utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patch::{derive_patch, make_patch, Frame};
    use alloc::vec;

    fn sample() -> Patch {
        let px: Vec<u8> = (0..6 * 4 * 3).map(|i| (i * 7 % 256) as u8).collect();
        let f = Frame::new("cam-1", 42, 6, 4, px).unwrap();
        let mut md = Metadata::new();
        md.insert("label".into(), "vehicle".into());
        md.insert("tags".into(), MetaValue::StrList(vec!["a".into(), "bc".into()]));
        md.insert("score".into(), MetaValue::Float(0.25));
        let p = make_patch(&f, BoundingBox::new(1, 1, 4, 3).unwrap(), md).unwrap();
        derive_patch(&p, "feat", vec![3], vec![0.5, -1.0, 1e-300], Metadata::new(), 77).unwrap()
    }

    #[test]
    fn layout_prefix_and_header() {
        let p = sample();
        let bytes = encode_patch(&p);
        let body_len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
        assert_eq!(body_len + 4, bytes.len());
        assert_eq!(&bytes[4..12], &p.id().to_be_bytes());
        assert_eq!(bytes[12], 1); // rank
        assert_eq!(&bytes[13..17], &3u32.to_be_bytes());
        assert_eq!(&bytes[17..25], &0.5f64.to_bits().to_be_bytes());
    }

    #[test]
    fn roundtrip_is_exact() {
        let p = sample();
        let q = decode_patch(&encode_patch(&p)).unwrap();
        assert_eq!(p, q);
        assert_eq!(encode_patch(&q), encode_patch(&p));
    }

    #[test]
    fn truncated_record_rejected() {
        let bytes = encode_patch(&sample());
        for cut in [0, 3, 10, bytes.len() - 1] {
            assert!(decode_patch(&bytes[..cut]).is_err());
        }
    }
}
