//! Index suite over materialized patch collections.
//!
//! Every index is built once and frozen. Each serializes to a single blob:
//! a 4-byte magic `PXIX`, one kind byte, then the kind-specific layout
//! documented on the type. Serialization is deterministic, so identical
//! inputs give byte-identical blobs.

mod balltree;
mod growable;
mod hash;
mod ordered;
mod rtree;

pub use balltree::{BallNodeView, BallTree, SearchStats, DEFAULT_LEAF_SIZE};
pub use growable::GrowableBallSet;
pub use hash::{HashIndex, HashKey};
pub use ordered::{OrderedIndex, OrderedKey};
pub use rtree::{RTree, RTreeNodeView, RectQuery, DEFAULT_NODE_CAPACITY};

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wire::Reader;

pub const MAGIC: &[u8; 4] = b"PXIX";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexKind {
    Hash,
    Ordered,
    RTree,
    BallTree,
}

impl IndexKind {
    fn code(self) -> u8 {
        match self {
            IndexKind::Hash => 1,
            IndexKind::Ordered => 2,
            IndexKind::RTree => 3,
            IndexKind::BallTree => 4,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            1 => IndexKind::Hash,
            2 => IndexKind::Ordered,
            3 => IndexKind::RTree,
            4 => IndexKind::BallTree,
            _ => return None,
        })
    }
}

/// Any frozen index, as persisted next to a collection.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyIndex {
    Hash(HashIndex),
    Ordered(OrderedIndex),
    RTree(RTree),
    BallTree(BallTree),
}

impl AnyIndex {
    pub fn kind(&self) -> IndexKind {
        match self {
            AnyIndex::Hash(_) => IndexKind::Hash,
            AnyIndex::Ordered(_) => IndexKind::Ordered,
            AnyIndex::RTree(_) => IndexKind::RTree,
            AnyIndex::BallTree(_) => IndexKind::BallTree,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(self.kind().code());
        match self {
            AnyIndex::Hash(i) => i.write_body(&mut out),
            AnyIndex::Ordered(i) => i.write_body(&mut out),
            AnyIndex::RTree(i) => i.write_body(&mut out),
            AnyIndex::BallTree(i) => i.write_body(&mut out),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(Error::Decode("bad index magic".into()));
        }
        let code = r.u8()?;
        let kind = IndexKind::from_code(code)
            .ok_or_else(|| Error::Decode(format!("unknown index kind {code}")))?;
        let idx = match kind {
            IndexKind::Hash => AnyIndex::Hash(HashIndex::read_body(&mut r)?),
            IndexKind::Ordered => AnyIndex::Ordered(OrderedIndex::read_body(&mut r)?),
            IndexKind::RTree => AnyIndex::RTree(RTree::read_body(&mut r)?),
            IndexKind::BallTree => AnyIndex::BallTree(BallTree::read_body(&mut r)?),
        };
        if r.remaining() != 0 {
            return Err(Error::Decode("trailing bytes after index".into()));
        }
        Ok(idx)
    }
}

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_bits().to_be_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn read_str(r: &mut Reader<'_>) -> Result<alloc::string::String> {
    let n = r.u32()? as usize;
    core::str::from_utf8(r.take(n)?)
        .map(Into::into)
        .map_err(|_| Error::Decode("invalid utf-8 in index".into()))
}
