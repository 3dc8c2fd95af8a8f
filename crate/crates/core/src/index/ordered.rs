use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::ops::Bound;

use super::{put_f64, put_str, put_u32, put_u64, read_str};
use crate::error::{Error, Result};
use crate::patch::{MetaValue, Patch, PatchId, Tag};
use crate::wire::Reader;

/// Sort key for the ordered index. Floats order by IEEE total order.
#[derive(Debug, Clone, Copy)]
pub enum OrderedKey {
    Int(i64),
    Float(f64),
}

impl OrderedKey {
    fn tag(&self) -> Tag {
        match self {
            OrderedKey::Int(_) => Tag::Int,
            OrderedKey::Float(_) => Tag::Float,
        }
    }

    pub fn as_f64(&self) -> f64 {
        match *self {
            OrderedKey::Int(v) => v as f64,
            OrderedKey::Float(v) => v,
        }
    }
}

impl PartialEq for OrderedKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for OrderedKey {}

impl PartialOrd for OrderedKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrderedKey {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (OrderedKey::Int(a), OrderedKey::Int(b)) => a.cmp(b),
            (OrderedKey::Float(a), OrderedKey::Float(b)) => a.total_cmp(b),
            // Mixed tags never share an index; order ints first for totality.
            (OrderedKey::Int(_), OrderedKey::Float(_)) => Ordering::Less,
            (OrderedKey::Float(_), OrderedKey::Int(_)) => Ordering::Greater,
        }
    }
}

/// B+-tree-class index over an integer- or float-tagged key.
///
/// Body layout: `key_name:str32 tag:u8 entries:u32` then ascending
/// `key:8 bytes ids:u32 id:u64*`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderedIndex {
    key: String,
    tag: Tag,
    entries: BTreeMap<OrderedKey, Vec<PatchId>>,
}

impl OrderedIndex {
    pub fn build<'a, I>(patches: I, key: &str) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Patch>,
    {
        let mut entries: BTreeMap<OrderedKey, Vec<PatchId>> = BTreeMap::new();
        let mut tag = None;
        for p in patches {
            let k = match p.get(key) {
                None => return Err(Error::MissingKey { key: key.to_string(), patch_id: p.id() }),
                Some(MetaValue::Int(v)) => OrderedKey::Int(*v),
                Some(MetaValue::Float(v)) => OrderedKey::Float(*v),
                Some(other) => {
                    return Err(Error::TagMismatch {
                        key: key.to_string(),
                        patch_id: p.id(),
                        expected: tag.unwrap_or(Tag::Int),
                        found: other.tag(),
                    })
                }
            };
            match tag {
                None => tag = Some(k.tag()),
                Some(t) if t != k.tag() => {
                    return Err(Error::TagMismatch {
                        key: key.to_string(),
                        patch_id: p.id(),
                        expected: t,
                        found: k.tag(),
                    })
                }
                Some(_) => {}
            }
            entries.entry(k).or_default().push(p.id());
        }
        for ids in entries.values_mut() {
            ids.sort_unstable();
        }
        Ok(Self { key: key.to_string(), tag: tag.unwrap_or(Tag::Int), entries })
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn tag(&self) -> Tag {
        self.tag
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, k: &OrderedKey) -> &[PatchId] {
        self.entries.get(k).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Groups with `lo <= key < hi`, by ascending key.
    pub fn range(&self, lo: OrderedKey, hi: OrderedKey) -> impl Iterator<Item = (&OrderedKey, &[PatchId])> {
        let empty = lo >= hi;
        self.entries
            .range((Bound::Included(lo), Bound::Excluded(hi)))
            .filter(move |_| !empty)
            .map(|(k, v)| (k, v.as_slice()))
    }

    /// Ids in `[lo, hi)`, grouped by ascending key.
    pub fn range_ids(&self, lo: OrderedKey, hi: OrderedKey) -> Vec<PatchId> {
        self.range(lo, hi).flat_map(|(_, ids)| ids.iter().copied()).collect()
    }

    pub fn keys(&self) -> impl Iterator<Item = &OrderedKey> {
        self.entries.keys()
    }

    pub(super) fn write_body(&self, out: &mut Vec<u8>) {
        put_str(out, &self.key);
        out.push(self.tag.code());
        put_u32(out, self.entries.len() as u32);
        for (k, ids) in &self.entries {
            match *k {
                OrderedKey::Int(v) => put_u64(out, v as u64),
                OrderedKey::Float(v) => put_f64(out, v),
            }
            put_u32(out, ids.len() as u32);
            for &id in ids {
                put_u64(out, id);
            }
        }
    }

    pub(super) fn read_body(r: &mut Reader<'_>) -> Result<Self> {
        let key = read_str(r)?;
        let tag = Tag::from_code(r.u8()?).ok_or_else(|| Error::Decode("bad ordered key tag".into()))?;
        let n = r.u32()? as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..n {
            let raw = r.u64()?;
            let k = match tag {
                Tag::Int => OrderedKey::Int(raw as i64),
                Tag::Float => OrderedKey::Float(f64::from_bits(raw)),
                _ => return Err(Error::Decode("ordered index key must be int or float".into())),
            };
            let m = r.u32()? as usize;
            let mut ids = Vec::with_capacity(m.min(r.remaining() / 8));
            for _ in 0..m {
                ids.push(r.u64()?);
            }
            entries.insert(k, ids);
        }
        Ok(Self { key, tag, entries })
    }
}
