//! Demand-driven plan execution over materialized collections.

mod exec;
pub mod plan;
pub mod predicate;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::Serialize;

use patchdb_core::{Frame, Patch};

use crate::collection::Collection;
use crate::error::{Error, Result};
use crate::storage::{IoCounters, IoStats, VideoStore};

pub use plan::{validate_plan, BacktraceMode, BuildSide, PlanNode, ProbeMode};
pub use predicate::{CmpOp, KeyRef, Literal, Operand, Predicate};

/// One row flowing between operators: the joined patches and any base
/// frames attached by backtracing.
#[derive(Debug, Clone, PartialEq)]
pub struct Tuple {
    pub patches: Vec<Arc<Patch>>,
    pub frames: Vec<Arc<Frame>>,
}

impl Tuple {
    pub fn single(p: Patch) -> Self {
        Self { patches: vec![Arc::new(p)], frames: Vec::new() }
    }
}

/// Named inputs a plan may reference.
#[derive(Debug, Default, Clone)]
pub struct Catalog {
    collections: BTreeMap<String, Arc<Collection>>,
    stores: BTreeMap<String, VideoStore>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_collection(&mut self, name: &str, c: Arc<Collection>) -> &mut Self {
        self.collections.insert(name.into(), c);
        self
    }

    pub fn add_store(&mut self, name: &str, s: VideoStore) -> &mut Self {
        self.stores.insert(name.into(), s);
        self
    }

    pub fn collection(&self, name: &str) -> Option<&Arc<Collection>> {
        self.collections.get(name)
    }

    pub fn store(&self, name: &str) -> Option<&VideoStore> {
        self.stores.get(name)
    }

    fn need_collection(&self, name: &str) -> Result<Arc<Collection>> {
        self.collection(name).cloned().ok_or_else(|| Error::Config(format!("unknown collection `{name}`")))
    }

    fn need_store(&self, name: &str) -> Result<VideoStore> {
        self.store(name).cloned().ok_or_else(|| Error::Config(format!("unknown store `{name}`")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OpStats {
    /// Preorder position in the plan.
    pub id: usize,
    pub op: String,
    pub parent: Option<usize>,
    /// Time inside this operator and its children.
    pub wall_ns: u64,
    pub tuples: u64,
    pub index_probes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ExecStats {
    pub ops: Vec<OpStats>,
    /// Reads against video stores (backtracing).
    pub base_io: IoStats,
    /// Reads against collections and their indexes.
    pub collection_io: IoStats,
}

impl ExecStats {
    pub fn root_tuples(&self) -> u64 {
        self.ops.first().map_or(0, |o| o.tuples)
    }

    pub fn index_probes(&self) -> u64 {
        self.ops.iter().map(|o| o.index_probes).sum()
    }

    /// Time spent in operator `id` excluding its children.
    pub fn self_ns(&self, id: usize) -> u64 {
        let children: u64 = self.ops.iter().filter(|o| o.parent == Some(id)).map(|o| o.wall_ns).sum();
        self.ops[id].wall_ns.saturating_sub(children)
    }

    pub fn op(&self, name: &str) -> Option<&OpStats> {
        self.ops.iter().find(|o| o.op == name)
    }

    /// Flat `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for o in &self.ops {
            let p = format!("op.{}.{}", o.id, o.op);
            let _ = writeln!(s, "{p}.wall_ns={}", o.wall_ns);
            let _ = writeln!(s, "{p}.self_ns={}", self.self_ns(o.id));
            let _ = writeln!(s, "{p}.tuples={}", o.tuples);
            let _ = writeln!(s, "{p}.index_probes={}", o.index_probes);
        }
        for (name, io) in [("base", &self.base_io), ("collection", &self.collection_io)] {
            let _ = writeln!(s, "io.{name}.records_read={}", io.records_read);
            let _ = writeln!(s, "io.{name}.frames_decoded={}", io.frames_decoded);
            let _ = writeln!(s, "io.{name}.clips_decoded={}", io.clips_decoded);
            let _ = writeln!(s, "io.{name}.bytes_read={}", io.bytes_read);
        }
        s
    }
}

/// A running plan. Pull tuples with [`Iterator::next`]; stats are live.
pub struct Execution {
    root: Box<dyn exec::Operator>,
    cells: Vec<exec::StatsCell>,
    io: exec::Counters,
    done: bool,
}

impl Execution {
    pub fn stats(&self) -> ExecStats {
        ExecStats {
            ops: self.cells.iter().map(|c| c.borrow().clone()).collect(),
            base_io: self.io.base.snapshot(),
            collection_io: self.io.collections.snapshot(),
        }
    }

    /// Drains every remaining tuple.
    pub fn collect_all(&mut self) -> Result<Vec<Tuple>> {
        self.collect()
    }
}

impl Iterator for Execution {
    type Item = Result<Tuple>;

    fn next(&mut self) -> Option<Result<Tuple>> {
        if self.done {
            return None;
        }
        let r = self.root.next().transpose();
        if !matches!(r, Some(Ok(_))) {
            // errors abort the iterator
            self.done = true;
        }
        r
    }
}

/// Validates `plan` against `cat`, then prepares it for pulling.
pub fn execute(plan: &PlanNode, cat: &Catalog) -> Result<Execution> {
    validate_plan(plan, cat).map_err(Error::Validation)?;
    let io = exec::Counters { base: IoCounters::new(), collections: IoCounters::new() };
    let mut cells = Vec::new();
    let root = exec::build(plan, cat, &io, None, &mut cells)?;
    Ok(Execution { root, cells, io, done: false })
}

/// Executes to completion, returning the tuples and final stats.
pub fn run(plan: &PlanNode, cat: &Catalog) -> Result<(Vec<Tuple>, ExecStats)> {
    let mut e = execute(plan, cat)?;
    let out = e.collect_all()?;
    Ok((out, e.stats()))
}
