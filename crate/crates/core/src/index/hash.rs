use alloc::string::{String, ToString};
use alloc::vec::Vec;

use hashbrown::HashMap;

use super::{put_str, put_u32, put_u64, read_str};
use crate::error::{Error, Result};
use crate::patch::{MetaValue, Patch, PatchId, Tag};
use crate::wire::Reader;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HashKey {
    Int(i64),
    Str(String),
}

impl HashKey {
    fn tag(&self) -> Tag {
        match self {
            HashKey::Int(_) => Tag::Int,
            HashKey::Str(_) => Tag::Str,
        }
    }
}

impl From<i64> for HashKey {
    fn from(v: i64) -> Self {
        HashKey::Int(v)
    }
}

impl From<&str> for HashKey {
    fn from(v: &str) -> Self {
        HashKey::Str(v.to_string())
    }
}

/// Equality index over a string- or integer-tagged metadata key.
///
/// Body layout: `key_name:str32 tag:u8 entries:u32` then, in ascending key
/// order, `key_payload ids:u32 id:u64*`. Integer payloads are 8 bytes,
/// string payloads `str32`.
#[derive(Debug, Clone, PartialEq)]
pub struct HashIndex {
    key: String,
    tag: Tag,
    map: HashMap<HashKey, Vec<PatchId>>,
}

impl HashIndex {
    /// Every patch must carry `key` with a string or integer tag, and all
    /// patches must agree on the tag.
    pub fn build<'a, I>(patches: I, key: &str) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Patch>,
    {
        let mut map: HashMap<HashKey, Vec<PatchId>> = HashMap::new();
        let mut tag = None;
        for p in patches {
            let k = match p.get(key) {
                None => return Err(Error::MissingKey { key: key.to_string(), patch_id: p.id() }),
                Some(MetaValue::Int(v)) => HashKey::Int(*v),
                Some(MetaValue::Str(s)) => HashKey::Str(s.clone()),
                Some(other) => {
                    return Err(Error::TagMismatch {
                        key: key.to_string(),
                        patch_id: p.id(),
                        expected: tag.unwrap_or(Tag::Str),
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
            map.entry(k).or_default().push(p.id());
        }
        for ids in map.values_mut() {
            ids.sort_unstable();
        }
        Ok(Self { key: key.to_string(), tag: tag.unwrap_or(Tag::Str), map })
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn len(&self) -> usize {
        self.map.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Ids whose key equals `k`, ascending.
    pub fn lookup(&self, k: &HashKey) -> &[PatchId] {
        self.map.get(k).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn distinct_keys(&self) -> usize {
        self.map.len()
    }

    pub(super) fn write_body(&self, out: &mut Vec<u8>) {
        put_str(out, &self.key);
        out.push(self.tag.code());
        let mut entries: Vec<_> = self.map.iter().collect();
        entries.sort_unstable_by(|a, b| a.0.cmp(b.0));
        put_u32(out, entries.len() as u32);
        for (k, ids) in entries {
            match k {
                HashKey::Int(v) => put_u64(out, *v as u64),
                HashKey::Str(s) => put_str(out, s),
            }
            put_u32(out, ids.len() as u32);
            for &id in ids {
                put_u64(out, id);
            }
        }
    }

    pub(super) fn read_body(r: &mut Reader<'_>) -> Result<Self> {
        let key = read_str(r)?;
        let tag = Tag::from_code(r.u8()?).ok_or_else(|| Error::Decode("bad hash key tag".into()))?;
        let n = r.u32()? as usize;
        let mut map = HashMap::with_capacity(n.min(r.remaining()));
        for _ in 0..n {
            let k = match tag {
                Tag::Int => HashKey::Int(r.u64()? as i64),
                Tag::Str => HashKey::Str(read_str(r)?),
                _ => return Err(Error::Decode("hash index key must be int or string".into())),
            };
            let m = r.u32()? as usize;
            let mut ids = Vec::with_capacity(m.min(r.remaining() / 8));
            for _ in 0..m {
                ids.push(r.u64()?);
            }
            map.insert(k, ids);
        }
        Ok(Self { key, tag, map })
    }
}
