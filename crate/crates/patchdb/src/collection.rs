//! Materialized patch collections.
//!
//! A collection is one record store holding:
//!
//! | key                              | value                               |
//! |----------------------------------|-------------------------------------|
//! | `P` id:u64                       | canonical patch encoding            |
//! | `L` video_id `0x00` frame_no:u64 | ids derived from that base frame    |
//! | `O`                              | every id in materialization order   |
//! | `I` name                         | serialized index                    |
//! | `M`                              | JSON metadata (schema, index list)  |
//!
//! The `L` records are the forward lineage index, ordered by base frame.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use patchdb_core::index::{AnyIndex, BallTree, HashIndex, IndexKind, OrderedIndex, RTree};
use patchdb_core::wire::{decode_patch, encode_patch};
use patchdb_core::{base_frames_of, Patch, PatchId, PatchSchema};

use crate::error::{Error, Result};
use crate::recstore::RecordStore;
use crate::storage::IoCounters;

const META: &[u8] = b"M";
const ORDER: &[u8] = b"O";

fn patch_key(id: PatchId) -> [u8; 9] {
    let mut k = [b'P'; 9];
    k[1..].copy_from_slice(&id.to_be_bytes());
    k
}

fn lineage_key(video: &str, frame_no: u64) -> Vec<u8> {
    let mut k = Vec::with_capacity(video.len() + 10);
    k.push(b'L');
    k.extend_from_slice(video.as_bytes());
    k.push(0);
    k.extend_from_slice(&frame_no.to_be_bytes());
    k
}

fn index_key(name: &str) -> Vec<u8> {
    let mut k = vec![b'I'];
    k.extend_from_slice(name.as_bytes());
    k
}

fn ids_to_bytes(ids: &[PatchId]) -> Vec<u8> {
    ids.iter().flat_map(|i| i.to_be_bytes()).collect()
}

fn ids_from_bytes(b: &[u8]) -> Vec<PatchId> {
    b.chunks_exact(8).map(|c| u64::from_be_bytes(c.try_into().unwrap())).collect()
}

/// What to index and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexSpec {
    pub name: String,
    pub kind: IndexKind,
    /// Metadata key for hash/ordered indexes; `bbox` by default for R-trees.
    /// Ball-trees index the patch data and take no key.
    #[serde(default)]
    pub key: Option<String>,
    #[serde(default)]
    pub leaf_size: Option<usize>,
    #[serde(default)]
    pub node_capacity: Option<usize>,
}

impl IndexSpec {
    pub fn new(name: &str, kind: IndexKind, key: Option<&str>) -> Self {
        Self { name: name.into(), kind, key: key.map(Into::into), leaf_size: None, node_capacity: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Config("index name must not be empty".into()));
        }
        match (self.kind, &self.key) {
            (IndexKind::Hash | IndexKind::Ordered, None) => {
                Err(Error::Config(format!("index `{}` needs a key", self.name)))
            }
            (IndexKind::BallTree, Some(k)) => {
                Err(Error::Config(format!("ball-tree index `{}` takes no key (got `{k}`)", self.name)))
            }
            _ => Ok(()),
        }
    }

    fn rtree_key(&self) -> &str {
        self.key.as_deref().unwrap_or(patchdb_core::patch::KEY_BBOX)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionMeta {
    pub name: String,
    pub schema: PatchSchema,
    pub count: u64,
    pub indexes: BTreeMap<String, IndexSpec>,
}

pub struct Collection {
    rs: RecordStore,
    meta: CollectionMeta,
    order: Vec<PatchId>,
    cache: Mutex<HashMap<String, Arc<AnyIndex>>>,
}

impl std::fmt::Debug for Collection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Collection").field("meta", &self.meta).finish()
    }
}

/// Persists every patch plus the forward lineage index.
///
/// `schema` is the static schema of the producing pipeline; it is checked
/// later by plan validation.
pub fn materialize<I, E>(patches: I, path: impl AsRef<Path>, name: &str, schema: PatchSchema) -> Result<Collection>
where
    I: IntoIterator<Item = std::result::Result<Patch, E>>,
    Error: From<E>,
{
    let mut rs = RecordStore::create(path.as_ref())?;
    let mut seen = HashSet::new();
    let mut order = Vec::new();
    let mut lineage: BTreeMap<Vec<u8>, Vec<PatchId>> = BTreeMap::new();
    for p in patches {
        let p = p?;
        if !seen.insert(p.id()) {
            return Err(Error::DuplicatePatch(p.id()));
        }
        for (video, frame_no) in base_frames_of(&p)? {
            lineage.entry(lineage_key(&video, frame_no)).or_default().push(p.id());
        }
        rs.put(&patch_key(p.id()), &encode_patch(&p))?;
        order.push(p.id());
    }
    for (k, ids) in &lineage {
        rs.put(k, &ids_to_bytes(ids))?;
    }
    rs.put(ORDER, &ids_to_bytes(&order))?;
    let meta = CollectionMeta { name: name.into(), schema, count: order.len() as u64, indexes: BTreeMap::new() };
    rs.put(META, &serde_json::to_vec(&meta).expect("collection meta serializes"))?;
    rs.sync()?;
    Ok(Collection { rs, meta, order, cache: Mutex::new(HashMap::new()) })
}

impl Collection {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::load(RecordStore::open(path.as_ref())?)
    }

    /// Opens for index builds.
    pub fn open_rw(path: impl AsRef<Path>) -> Result<Self> {
        Self::load(RecordStore::open_rw(path.as_ref())?)
    }

    fn load(rs: RecordStore) -> Result<Self> {
        let path = rs.path().to_path_buf();
        let raw = rs.get(META)?.ok_or_else(|| Error::corrupt(&path, "missing collection metadata"))?;
        let meta: CollectionMeta = serde_json::from_slice(&raw).map_err(|e| Error::corrupt(&path, e.to_string()))?;
        let order = ids_from_bytes(&rs.get(ORDER)?.ok_or_else(|| Error::corrupt(&path, "missing id list"))?);
        if order.len() as u64 != meta.count {
            return Err(Error::corrupt(&path, "id list disagrees with patch count"));
        }
        Ok(Self { rs, meta, order, cache: Mutex::new(HashMap::new()) })
    }

    pub fn meta(&self) -> &CollectionMeta {
        &self.meta
    }

    pub fn name(&self) -> &str {
        &self.meta.name
    }

    pub fn schema(&self) -> &PatchSchema {
        &self.meta.schema
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn ids(&self) -> &[PatchId] {
        &self.order
    }

    pub fn store_size(&self) -> u64 {
        self.rs.size()
    }

    pub fn get(&self, id: PatchId, counters: &IoCounters) -> Result<Option<Patch>> {
        let Some(loc) = self.rs.locate(&patch_key(id)) else { return Ok(None) };
        let bytes = self.rs.read(loc)?;
        counters.record(u64::from(loc.len));
        Ok(Some(decode_patch(&bytes)?))
    }

    /// Patches in materialization order.
    pub fn scan<'a>(&'a self, counters: &'a IoCounters) -> impl Iterator<Item = Result<Patch>> + 'a {
        self.order.iter().map(move |&id| {
            self.get(id, counters)?.ok_or_else(|| Error::corrupt(self.rs.path(), format!("patch {id:#x} listed but absent")))
        })
    }

    /// Forward lineage: ids derived from one base frame.
    pub fn derived_from(&self, video: &str, frame_no: u64) -> Result<Vec<PatchId>> {
        Ok(self.rs.get(&lineage_key(video, frame_no))?.map(|b| ids_from_bytes(&b)).unwrap_or_default())
    }

    /// Every `(video_id, frame_no)` key of the forward lineage index, ordered.
    pub fn lineage_keys(&self) -> Vec<(String, u64)> {
        self.rs
            .prefix(b"L")
            .map(|(k, _)| {
                let sep = k.len() - 9;
                let video = String::from_utf8_lossy(&k[1..sep]).into_owned();
                (video, u64::from_be_bytes(k[sep + 1..].try_into().unwrap()))
            })
            .collect()
    }

    pub fn has_index(&self, name: &str) -> bool {
        self.meta.indexes.contains_key(name)
    }

    pub fn index_spec(&self, name: &str) -> Option<&IndexSpec> {
        self.meta.indexes.get(name)
    }

    /// Builds `spec` over every patch and persists it. Needs a handle from
    /// [`Collection::open_rw`] or [`materialize`].
    pub fn build_index(&mut self, spec: &IndexSpec) -> Result<Arc<AnyIndex>> {
        spec.validate()?;
        let counters = IoCounters::default();
        let patches: Vec<Patch> = self.scan(&counters).collect::<Result<_>>()?;
        let idx = build_index_over(&patches, spec)?;
        self.rs.put(&index_key(&spec.name), &idx.to_bytes())?;
        self.meta.indexes.insert(spec.name.clone(), spec.clone());
        self.rs.put(META, &serde_json::to_vec(&self.meta).expect("collection meta serializes"))?;
        self.rs.sync()?;
        let idx = Arc::new(idx);
        self.cache.lock().unwrap().insert(spec.name.clone(), idx.clone());
        Ok(idx)
    }

    /// Loads a persisted index, counting the blob read.
    pub fn index(&self, name: &str, counters: &IoCounters) -> Result<Arc<AnyIndex>> {
        if let Some(i) = self.cache.lock().unwrap().get(name) {
            return Ok(i.clone());
        }
        let loc = self
            .rs
            .locate(&index_key(name))
            .ok_or_else(|| Error::Config(format!("collection `{}` has no index `{name}`", self.name())))?;
        let bytes = self.rs.read(loc)?;
        counters.record(u64::from(loc.len));
        let idx = Arc::new(AnyIndex::from_bytes(&bytes)?);
        self.cache.lock().unwrap().insert(name.into(), idx.clone());
        Ok(idx)
    }
}

/// Builds one index over in-memory patches.
pub fn build_index_over(patches: &[Patch], spec: &IndexSpec) -> Result<AnyIndex> {
    spec.validate()?;
    Ok(match spec.kind {
        IndexKind::Hash => AnyIndex::Hash(HashIndex::build(patches, spec.key.as_deref().unwrap())?),
        IndexKind::Ordered => AnyIndex::Ordered(OrderedIndex::build(patches, spec.key.as_deref().unwrap())?),
        IndexKind::RTree => {
            let key = spec.rtree_key();
            let entries = patches
                .iter()
                .map(|p| {
                    p.get(key)
                        .and_then(|v| v.as_bbox())
                        .map(|b| (b, p.id()))
                        .ok_or_else(|| patchdb_core::Error::MissingKey { key: key.into(), patch_id: p.id() })
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let cap = spec.node_capacity.unwrap_or(patchdb_core::index::DEFAULT_NODE_CAPACITY);
            AnyIndex::RTree(RTree::build_with_capacity(cap, entries)?)
        }
        IndexKind::BallTree => {
            let leaf = spec.leaf_size.unwrap_or(patchdb_core::index::DEFAULT_LEAF_SIZE);
            AnyIndex::BallTree(BallTree::build(patches.iter().map(|p| (p.id(), p.data())), leaf)?)
        }
    })
}
