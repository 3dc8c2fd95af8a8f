//! Declarative plan files: which stores to read, which ETL stages and
//! indexes to materialize, and the plan to run over them.
//!
//! ```toml
//! [stores]
//! base = "traffic.store"
//!
//! [[etl]]
//! name = "blobs"
//! store = "base"
//! output = "blobs.coll"
//! generator = { kind = "blob_detector", palette = [
//!     { rgb = [220, 40, 40], label = "vehicle" },
//!     { rgb = [40, 200, 60], label = "pedestrian" },
//! ] }
//!
//! [[indexes]]
//! collection = "blobs"
//! name = "frameno"
//! kind = "ordered"
//! key = "frameno"
//!
//! [plan]
//! op = "count_by"
//! key = "frameno"
//! input = { op = "select", input = { op = "scan", collection = "blobs" },
//!           predicate = { op = "cmp", left = { key = "label" }, cmp = "=", right = "vehicle" } }
//!
//! [output]
//! results = "vehicles.jsonl"
//! stats = "vehicles.stats"
//! ```
//!
//! Relative paths resolve against the plan file's directory. Unknown keys
//! are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use patchdb_core::etl::{GeneratorSpec, TransformerSpec};
use patchdb_core::index::IndexKind;

use crate::collection::{Collection, IndexSpec};
use crate::error::{Error, Result};
use crate::pipeline::{run_etl, EtlSpec};
use crate::query::{Catalog, PlanNode};
use crate::storage::{IoCounters, VideoStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtlStage {
    /// Collection name the plan refers to.
    pub name: String,
    pub store: String,
    pub output: PathBuf,
    /// Half-open frame range; the whole video when absent.
    #[serde(default)]
    pub range: Option<[u64; 2]>,
    pub generator: GeneratorSpec,
    #[serde(default)]
    pub transformers: Vec<TransformerSpec>,
}

impl EtlStage {
    pub fn spec(&self) -> EtlSpec {
        EtlSpec { generator: self.generator.clone(), transformers: self.transformers.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, into = "RawIndexBuild", from = "RawIndexBuild")]
pub struct IndexBuild {
    pub collection: String,
    pub spec: IndexSpec,
}

// flattened form; serde cannot combine `flatten` with unknown-key checks
#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIndexBuild {
    collection: String,
    name: String,
    kind: IndexKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    leaf_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    node_capacity: Option<usize>,
}

impl From<RawIndexBuild> for IndexBuild {
    fn from(r: RawIndexBuild) -> Self {
        let spec = IndexSpec { name: r.name, kind: r.kind, key: r.key, leaf_size: r.leaf_size, node_capacity: r.node_capacity };
        Self { collection: r.collection, spec }
    }
}

impl From<IndexBuild> for RawIndexBuild {
    fn from(b: IndexBuild) -> Self {
        let s = b.spec;
        Self {
            collection: b.collection,
            name: s.name,
            kind: s.kind,
            key: s.key,
            leaf_size: s.leaf_size,
            node_capacity: s.node_capacity,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    /// JSON lines, one per result tuple; standard output when absent.
    pub results: Option<PathBuf>,
    /// `key=value` execution statistics; standard error when absent.
    pub stats: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    #[serde(default)]
    pub stores: BTreeMap<String, PathBuf>,
    /// Already materialized collections.
    #[serde(default)]
    pub collections: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub etl: Vec<EtlStage>,
    #[serde(default)]
    pub indexes: Vec<IndexBuild>,
    pub plan: Option<PlanNode>,
    #[serde(default)]
    pub output: Outputs,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl PlanFile {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut pf: PlanFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        pf.base_dir = base_dir.into();
        pf.check()?;
        Ok(pf)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Structural checks and pipeline typing; nothing is opened.
    fn check(&self) -> Result<()> {
        let mut names: Vec<&str> = self.collections.keys().map(String::as_str).collect();
        let mut violations = Vec::new();
        for e in &self.etl {
            if names.contains(&e.name.as_str()) {
                return Err(Error::Config(format!("collection `{}` is defined twice", e.name)));
            }
            names.push(&e.name);
            if !self.stores.contains_key(&e.store) {
                return Err(Error::Config(format!("etl `{}` reads unknown store `{}`", e.name, e.store)));
            }
            if let Some([lo, hi]) = e.range {
                if lo >= hi {
                    return Err(Error::Config(format!("etl `{}` has empty range [{lo}, {hi})", e.name)));
                }
            }
            match e.spec().output_schema() {
                Ok(_) => {}
                Err(Error::Validation(vs)) => violations.extend(vs),
                Err(other) => return Err(other),
            }
        }
        for ix in &self.indexes {
            if !names.contains(&ix.collection.as_str()) {
                return Err(Error::Config(format!("index `{}` targets unknown collection `{}`", ix.spec.name, ix.collection)));
            }
            ix.spec.validate()?;
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(violations))
        }
    }

    fn open_stores(&self) -> Result<BTreeMap<String, VideoStore>> {
        self.stores.iter().map(|(n, p)| Ok((n.clone(), VideoStore::open(self.resolve(p))?))).collect()
    }

    /// Runs every ETL stage and index build. Existing outputs are replaced
    /// when `rebuild`, reused otherwise.
    pub fn materialize(&self, rebuild: bool) -> Result<Catalog> {
        let stores = self.open_stores()?;
        let mut colls: BTreeMap<String, Collection> = BTreeMap::new();
        for (n, p) in &self.collections {
            colls.insert(n.clone(), Collection::open(self.resolve(p))?);
        }
        for e in &self.etl {
            let out = self.resolve(&e.output);
            if rebuild && out.exists() {
                std::fs::remove_file(&out)?;
            }
            let c = if out.exists() {
                Collection::open(&out)?
            } else {
                let range = e.range.map(|[lo, hi]| (lo, hi));
                run_etl(&stores[&e.store], range, &e.spec(), &out, &e.name, IoCounters::new())?
            };
            colls.insert(e.name.clone(), c);
        }
        for ix in &self.indexes {
            let c = colls.get_mut(&ix.collection).expect("checked at parse");
            if rebuild || c.index_spec(&ix.spec.name) != Some(&ix.spec) {
                // reopen writable only when something must be persisted
                let path = self.collection_path(&ix.collection);
                let mut w = Collection::open_rw(&path)?;
                w.build_index(&ix.spec)?;
                drop(w);
                *c = Collection::open(&path)?;
            }
        }
        let mut cat = Catalog::new();
        for (n, s) in stores {
            cat.add_store(&n, s);
        }
        for (n, c) in colls {
            cat.add_collection(&n, Arc::new(c));
        }
        Ok(cat)
    }

    /// Opens what the plan needs without writing anything; every ETL output
    /// and index must already exist.
    pub fn open(&self) -> Result<Catalog> {
        let mut cat = Catalog::new();
        for (n, s) in self.open_stores()? {
            cat.add_store(&n, s);
        }
        for (n, p) in &self.collections {
            cat.add_collection(n, Arc::new(Collection::open(self.resolve(p))?));
        }
        for e in &self.etl {
            cat.add_collection(&e.name, Arc::new(Collection::open(self.resolve(&e.output))?));
        }
        Ok(cat)
    }

    fn collection_path(&self, name: &str) -> PathBuf {
        match self.etl.iter().find(|e| e.name == name) {
            Some(e) => self.resolve(&e.output),
            None => self.resolve(&self.collections[name]),
        }
    }

    /// Whether every ETL output and index already exists on disk.
    pub fn is_materialized(&self) -> bool {
        self.etl.iter().all(|e| self.resolve(&e.output).exists())
            && self.indexes.iter().all(|ix| {
                Collection::open(self.collection_path(&ix.collection))
                    .map(|c| c.index_spec(&ix.spec.name) == Some(&ix.spec))
                    .unwrap_or(false)
            })
    }
}
