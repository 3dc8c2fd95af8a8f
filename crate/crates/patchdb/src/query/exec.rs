//! Pull-based operators.
//!
//! Every operator implements [`Operator::next`] and is wrapped in an
//! [`Instrumented`] shell that times each call and counts produced tuples.
//! Times are inclusive of children; [`ExecStats`] derives self time.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::rc::Rc;
use std::sync::Arc;
use std::time::Instant;

use patchdb_core::digest::ParamDigest;
use patchdb_core::index::{AnyIndex, BallTree, GrowableBallSet, HashKey, OrderedKey, RectQuery};
use patchdb_core::patch::{KEY_BBOX, KEY_COUNT, KEY_GROUP_LABELS, KEY_GROUP_SIZE};
use patchdb_core::{base_frames_of, derive_patch, Frame, MetaValue, Metadata, Patch, PatchId, Tag};

use super::plan::{BacktraceMode, BuildSide, PlanNode, ProbeMode};
use super::predicate::{Literal, Predicate};
use super::{Catalog, OpStats, Tuple};
use crate::collection::Collection;
use crate::error::{Error, Result};
use crate::storage::{IoCounters, VideoStore};

pub(crate) trait Operator {
    fn next(&mut self) -> Result<Option<Tuple>>;
}

pub(crate) type StatsCell = Rc<RefCell<OpStats>>;

pub(crate) struct Instrumented {
    inner: Box<dyn Operator>,
    stats: StatsCell,
}

impl Operator for Instrumented {
    fn next(&mut self) -> Result<Option<Tuple>> {
        let t = Instant::now();
        let r = self.inner.next();
        let mut s = self.stats.borrow_mut();
        s.wall_ns += t.elapsed().as_nanos() as u64;
        if let Ok(Some(_)) = &r {
            s.tuples += 1;
        }
        r
    }
}

pub(crate) struct Counters {
    pub base: Arc<IoCounters>,
    pub collections: Arc<IoCounters>,
}

/// Builds the operator tree, registering one stats cell per node in
/// preorder.
pub(crate) fn build(
    node: &PlanNode,
    cat: &Catalog,
    io: &Counters,
    parent: Option<usize>,
    cells: &mut Vec<StatsCell>,
) -> Result<Box<dyn Operator>> {
    let id = cells.len();
    let stats = Rc::new(RefCell::new(OpStats { id, op: node.name().into(), parent, ..OpStats::default() }));
    cells.push(stats.clone());
    let child = |n: &PlanNode, cells: &mut Vec<StatsCell>| build(n, cat, io, Some(id), cells);
    let inner: Box<dyn Operator> = match node {
        PlanNode::Scan { collection } => {
            Box::new(Scan { coll: cat.need_collection(collection)?, pos: 0, io: io.collections.clone() })
        }
        PlanNode::IndexLookup { collection, index, key } => {
            let coll = cat.need_collection(collection)?;
            let idx = coll.index(index, &io.collections)?;
            let ids = lookup(&idx, key)?;
            stats.borrow_mut().index_probes += 1;
            Box::new(Fetch { coll, ids, pos: 0, io: io.collections.clone() })
        }
        PlanNode::Select { input, predicate } => {
            Box::new(Select { input: child(input, cells)?, predicate: predicate.clone() })
        }
        PlanNode::NestedLoopJoin { left, right, predicate } => {
            let l = child(left, cells)?;
            let r = child(right, cells)?;
            Box::new(NestedLoop { left: l, right: Some(r), buffer: Vec::new(), current: None, pos: 0, predicate: predicate.clone() })
        }
        PlanNode::IndexJoin { left, collection, index, probe_slot, probe_key, mode, residual } => {
            let l = child(left, cells)?;
            let coll = cat.need_collection(collection)?;
            let idx = coll.index(index, &io.collections)?;
            Box::new(IndexJoin {
                left: l,
                coll,
                idx,
                slot: *probe_slot,
                key: probe_key.clone().unwrap_or_else(|| KEY_BBOX.into()),
                mode: mode.clone(),
                residual: residual.clone(),
                current: None,
                matches: Vec::new(),
                pos: 0,
                io: io.collections.clone(),
                stats: stats.clone(),
            })
        }
        PlanNode::SimJoin { left, right, tau, build_side, leaf_size } => {
            let l = child(left, cells)?;
            let r = child(right, cells)?;
            Box::new(SimJoin {
                inputs: Some((l, r)),
                tau: *tau,
                side: *build_side,
                leaf: leaf_size.unwrap_or(patchdb_core::index::DEFAULT_LEAF_SIZE),
                state: None,
                stats: stats.clone(),
            })
        }
        PlanNode::Dedup { input, tau, annotate_groups } => {
            let input = child(input, cells)?;
            if *annotate_groups {
                Box::new(GroupDedup { input: Some(input), tau: *tau, out: Vec::new().into_iter(), stats: stats.clone() })
            } else {
                Box::new(Dedup { input, tau: *tau, kept: GrowableBallSet::new(), n: 0, stats: stats.clone() })
            }
        }
        PlanNode::CountBy { input, key } => {
            Box::new(CountBy { input: Some(child(input, cells)?), key: key.clone(), out: Vec::new().into_iter() })
        }
        PlanNode::Backtrace { input, store, mode, slot } => {
            let input = child(input, cells)?;
            let store = cat.need_store(store)?;
            match mode {
                BacktraceMode::LineageIndex => Box::new(BacktraceIndexed {
                    input,
                    store,
                    slot: *slot,
                    io: io.base.clone(),
                    stats: stats.clone(),
                }),
                BacktraceMode::Rescan => Box::new(BacktraceRescan {
                    input: Some(input),
                    store,
                    slot: *slot,
                    io: io.base.clone(),
                    out: Vec::new().into_iter(),
                }),
            }
        }
    };
    Ok(Box::new(Instrumented { inner, stats }))
}

fn drain(op: &mut dyn Operator) -> Result<Vec<Tuple>> {
    let mut out = Vec::new();
    while let Some(t) = op.next()? {
        out.push(t);
    }
    Ok(out)
}

fn lookup(idx: &AnyIndex, key: &Literal) -> Result<Vec<PatchId>> {
    Ok(match (idx, key) {
        (AnyIndex::Hash(h), Literal::Int(v)) => h.lookup(&HashKey::Int(*v)).to_vec(),
        (AnyIndex::Hash(h), Literal::Str(s)) => h.lookup(&HashKey::Str(s.clone())).to_vec(),
        (AnyIndex::Ordered(o), Literal::Int(v)) => o.get(&OrderedKey::Int(*v)).to_vec(),
        (AnyIndex::Ordered(o), Literal::Float(v)) => o.get(&OrderedKey::Float(*v)).to_vec(),
        (i, k) => return Err(Error::Config(format!("{:?} index cannot look up {k:?}", i.kind()))),
    })
}

fn concat(l: &Tuple, r: &Tuple) -> Tuple {
    let mut patches = Vec::with_capacity(l.patches.len() + r.patches.len());
    patches.extend(l.patches.iter().cloned());
    patches.extend(r.patches.iter().cloned());
    let mut frames = l.frames.clone();
    frames.extend(r.frames.iter().cloned());
    Tuple { patches, frames }
}

fn first(t: &Tuple) -> &Patch {
    &t.patches[0]
}

struct Scan {
    coll: Arc<Collection>,
    pos: usize,
    io: Arc<IoCounters>,
}

impl Operator for Scan {
    fn next(&mut self) -> Result<Option<Tuple>> {
        let Some(&id) = self.coll.ids().get(self.pos) else { return Ok(None) };
        self.pos += 1;
        let p = self
            .coll
            .get(id, &self.io)?
            .ok_or_else(|| Error::Config(format!("patch {id:#x} missing from `{}`", self.coll.name())))?;
        Ok(Some(Tuple::single(p)))
    }
}

struct Fetch {
    coll: Arc<Collection>,
    ids: Vec<PatchId>,
    pos: usize,
    io: Arc<IoCounters>,
}

impl Operator for Fetch {
    fn next(&mut self) -> Result<Option<Tuple>> {
        let Some(&id) = self.ids.get(self.pos) else { return Ok(None) };
        self.pos += 1;
        let p = self
            .coll
            .get(id, &self.io)?
            .ok_or_else(|| Error::Config(format!("index names patch {id:#x} absent from `{}`", self.coll.name())))?;
        Ok(Some(Tuple::single(p)))
    }
}

struct Select {
    input: Box<dyn Operator>,
    predicate: Predicate,
}

impl Operator for Select {
    fn next(&mut self) -> Result<Option<Tuple>> {
        while let Some(t) = self.input.next()? {
            if self.predicate.eval(&t.patches, &[])? {
                return Ok(Some(t));
            }
        }
        Ok(None)
    }
}

/// Buffers the right input once, on the first left tuple.
struct NestedLoop {
    left: Box<dyn Operator>,
    right: Option<Box<dyn Operator>>,
    buffer: Vec<Tuple>,
    current: Option<Tuple>,
    pos: usize,
    predicate: Predicate,
}

impl Operator for NestedLoop {
    fn next(&mut self) -> Result<Option<Tuple>> {
        loop {
            if self.current.is_none() {
                match self.left.next()? {
                    None => return Ok(None),
                    Some(t) => self.current = Some(t),
                }
                if let Some(mut r) = self.right.take() {
                    self.buffer = drain(r.as_mut())?;
                }
                self.pos = 0;
            }
            let l = self.current.as_ref().unwrap();
            while self.pos < self.buffer.len() {
                let r = &self.buffer[self.pos];
                self.pos += 1;
                if self.predicate.eval(&l.patches, &r.patches)? {
                    return Ok(Some(concat(l, r)));
                }
            }
            self.current = None;
        }
    }
}

struct IndexJoin {
    left: Box<dyn Operator>,
    coll: Arc<Collection>,
    idx: Arc<AnyIndex>,
    slot: usize,
    key: String,
    mode: ProbeMode,
    residual: Option<Predicate>,
    current: Option<Tuple>,
    matches: Vec<PatchId>,
    pos: usize,
    io: Arc<IoCounters>,
    stats: StatsCell,
}

impl IndexJoin {
    fn probe(&self, t: &Tuple) -> Result<Vec<PatchId>> {
        let p = t.patches.get(self.slot).ok_or_else(|| Error::Config(format!("probe slot {} out of range", self.slot)))?;
        let value = || p.get(&self.key);
        let tag_err = |found: Tag, expected: Tag| -> Error {
            patchdb_core::Error::TagMismatch { key: self.key.clone(), patch_id: p.id(), expected, found }.into()
        };
        Ok(match (&*self.idx, &self.mode) {
            (AnyIndex::BallTree(b), ProbeMode::Within { tau }) => b.within(p.data(), *tau)?,
            (AnyIndex::RTree(r), ProbeMode::Intersects | ProbeMode::Contains) => {
                let q = match value() {
                    None => return Ok(Vec::new()),
                    Some(MetaValue::BBox(b)) => *b,
                    Some(v) => return Err(tag_err(v.tag(), Tag::BBox)),
                };
                let m = if self.mode == ProbeMode::Intersects { RectQuery::Intersects } else { RectQuery::Contains };
                r.query(&q, m)
            }
            (AnyIndex::Hash(h), ProbeMode::Eq) => match value() {
                None => Vec::new(),
                Some(MetaValue::Int(v)) => h.lookup(&HashKey::Int(*v)).to_vec(),
                Some(MetaValue::Str(s)) => h.lookup(&HashKey::Str(s.clone())).to_vec(),
                Some(v) => return Err(tag_err(v.tag(), Tag::Str)),
            },
            (AnyIndex::Ordered(o), ProbeMode::Eq) => match value() {
                None => Vec::new(),
                Some(MetaValue::Int(v)) if o.tag() == Tag::Int => o.get(&OrderedKey::Int(*v)).to_vec(),
                Some(MetaValue::Float(v)) if o.tag() == Tag::Float => o.get(&OrderedKey::Float(*v)).to_vec(),
                Some(v) => return Err(tag_err(v.tag(), o.tag())),
            },
            (AnyIndex::Ordered(o), ProbeMode::Range { lo, hi }) => {
                let v = match value() {
                    None => return Ok(Vec::new()),
                    Some(MetaValue::Int(v)) => *v as f64,
                    Some(MetaValue::Float(v)) => *v,
                    Some(v) => return Err(tag_err(v.tag(), o.tag())),
                };
                let (a, b) = (v + lo, v + hi);
                if o.tag() == Tag::Int {
                    // x >= a  <=>  x >= ceil(a), and likewise for the open end
                    o.range_ids(OrderedKey::Int(a.ceil() as i64), OrderedKey::Int(b.ceil() as i64))
                } else {
                    o.range_ids(OrderedKey::Float(a), OrderedKey::Float(b))
                }
            }
            (i, m) => return Err(Error::Config(format!("{m:?} probe is not supported by a {:?} index", i.kind()))),
        })
    }
}

impl Operator for IndexJoin {
    fn next(&mut self) -> Result<Option<Tuple>> {
        loop {
            if self.current.is_none() {
                let Some(t) = self.left.next()? else { return Ok(None) };
                self.matches = self.probe(&t)?;
                self.stats.borrow_mut().index_probes += 1;
                self.pos = 0;
                self.current = Some(t);
            }
            let l = self.current.as_ref().unwrap();
            while self.pos < self.matches.len() {
                let id = self.matches[self.pos];
                self.pos += 1;
                let p = self
                    .coll
                    .get(id, &self.io)?
                    .ok_or_else(|| Error::Config(format!("index names patch {id:#x} absent from `{}`", self.coll.name())))?;
                let r = Tuple::single(p);
                let keep = match &self.residual {
                    Some(pred) => pred.eval(&l.patches, &r.patches)?,
                    None => true,
                };
                if keep {
                    return Ok(Some(concat(l, &r)));
                }
            }
            self.current = None;
        }
    }
}

struct SimJoinState {
    left: Vec<Tuple>,
    right: Vec<Tuple>,
    build_left: bool,
    tree: Option<BallTree>,
    probe: usize,
    matches: Vec<usize>,
    pos: usize,
}

struct SimJoin {
    inputs: Option<(Box<dyn Operator>, Box<dyn Operator>)>,
    tau: f64,
    side: BuildSide,
    leaf: usize,
    state: Option<SimJoinState>,
    stats: StatsCell,
}

impl SimJoin {
    fn start(&mut self) -> Result<()> {
        let (mut l, mut r) = self.inputs.take().expect("inputs consumed once");
        let left = drain(l.as_mut())?;
        let right = drain(r.as_mut())?;
        let build_left = match self.side {
            BuildSide::Left => true,
            BuildSide::Right => false,
            BuildSide::Auto => left.len() <= right.len(),
        };
        let build = if build_left { &left } else { &right };
        let tree = if build.is_empty() {
            None
        } else {
            // positions as ids keep duplicate patches on both sides distinct
            Some(BallTree::build(build.iter().enumerate().map(|(i, t)| (i as u64, first(t).data())), self.leaf)?)
        };
        self.state = Some(SimJoinState { left, right, build_left, tree, probe: 0, matches: Vec::new(), pos: 0 });
        Ok(())
    }
}

impl Operator for SimJoin {
    fn next(&mut self) -> Result<Option<Tuple>> {
        if self.state.is_none() {
            self.start()?;
        }
        let s = self.state.as_mut().unwrap();
        let Some(tree) = &s.tree else { return Ok(None) };
        let (build, probe) = if s.build_left { (&s.left, &s.right) } else { (&s.right, &s.left) };
        loop {
            if s.pos < s.matches.len() {
                let b = &build[s.matches[s.pos]];
                let p = &probe[s.probe - 1];
                s.pos += 1;
                return Ok(Some(if s.build_left { concat(b, p) } else { concat(p, b) }));
            }
            let Some(t) = probe.get(s.probe) else { return Ok(None) };
            s.probe += 1;
            let mut m: Vec<usize> = tree.within(first(t).data(), self.tau)?.into_iter().map(|i| i as usize).collect();
            m.sort_by_key(|&i| (first(&build[i]).id(), i));
            s.matches = m;
            s.pos = 0;
            self.stats.borrow_mut().index_probes += 1;
        }
    }
}

/// Greedy streaming deduplication on slot 0's data.
struct Dedup {
    input: Box<dyn Operator>,
    tau: f64,
    kept: GrowableBallSet,
    n: u64,
    stats: StatsCell,
}

impl Operator for Dedup {
    fn next(&mut self) -> Result<Option<Tuple>> {
        while let Some(t) = self.input.next()? {
            let v = first(&t).data();
            self.stats.borrow_mut().index_probes += 1;
            if self.kept.nearest_within(v, self.tau)?.is_none() {
                self.kept.insert(self.n, v)?;
                self.n += 1;
                return Ok(Some(t));
            }
        }
        Ok(None)
    }
}

/// Deduplication that assigns every input to its nearest representative
/// and emits one annotated patch per group once the input is drained.
struct GroupDedup {
    input: Option<Box<dyn Operator>>,
    tau: f64,
    out: std::vec::IntoIter<Tuple>,
    stats: StatsCell,
}

impl GroupDedup {
    fn run(&mut self, mut input: Box<dyn Operator>) -> Result<Vec<Tuple>> {
        let mut kept = GrowableBallSet::new();
        let mut groups: Vec<(Tuple, BTreeSet<String>, i64)> = Vec::new();
        while let Some(t) = input.next()? {
            let p = first(&t);
            self.stats.borrow_mut().index_probes += 1;
            let label = p.label().map(str::to_string);
            match kept.nearest_within(p.data(), self.tau)? {
                Some((g, _)) => {
                    let g = &mut groups[g as usize];
                    g.1.extend(label);
                    g.2 += 1;
                }
                None => {
                    kept.insert(groups.len() as u64, p.data())?;
                    groups.push((t, label.into_iter().collect(), 1));
                }
            }
        }
        let digest = ParamDigest::new("dedup_group").float("tau", self.tau).finish();
        groups
            .into_iter()
            .map(|(mut t, labels, size)| {
                let rep = first(&t);
                let mut md = Metadata::new();
                md.insert(KEY_GROUP_LABELS.into(), MetaValue::StrList(labels.into_iter().collect()));
                md.insert(KEY_GROUP_SIZE.into(), MetaValue::Int(size));
                let g = derive_patch(rep, "dedup_group", rep.shape().to_vec(), rep.data().to_vec(), md, digest)?;
                t.patches[0] = Arc::new(g);
                Ok(t)
            })
            .collect()
    }
}

impl Operator for GroupDedup {
    fn next(&mut self) -> Result<Option<Tuple>> {
        if let Some(input) = self.input.take() {
            self.out = self.run(input)?.into_iter();
        }
        Ok(self.out.next())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum GroupKey {
    Int(i64),
    Float(u64),
    Str(String),
    BBox(patchdb_core::BoundingBox),
    StrList(Vec<String>),
}

impl GroupKey {
    fn of(v: &MetaValue) -> Self {
        match v {
            MetaValue::Int(i) => GroupKey::Int(*i),
            // order-preserving map of the IEEE total order onto u64
            MetaValue::Float(f) => {
                let b = f.to_bits();
                GroupKey::Float(if b >> 63 == 1 { !b } else { b | 1 << 63 })
            }
            MetaValue::Str(s) => GroupKey::Str(s.clone()),
            MetaValue::BBox(b) => GroupKey::BBox(*b),
            MetaValue::StrList(l) => GroupKey::StrList(l.clone()),
        }
    }
}

/// Groups slot 0 by a metadata key; emits `{key, count}` patches in key
/// order, each derived from the group's first member.
struct CountBy {
    input: Option<Box<dyn Operator>>,
    key: String,
    out: std::vec::IntoIter<Tuple>,
}

impl CountBy {
    fn run(&self, mut input: Box<dyn Operator>) -> Result<Vec<Tuple>> {
        let mut groups: BTreeMap<GroupKey, (Arc<Patch>, MetaValue, i64)> = BTreeMap::new();
        while let Some(t) = input.next()? {
            let p = &t.patches[0];
            let v = p
                .get(&self.key)
                .ok_or_else(|| patchdb_core::Error::MissingKey { key: self.key.clone(), patch_id: p.id() })?;
            groups.entry(GroupKey::of(v)).or_insert_with(|| (p.clone(), v.clone(), 0)).2 += 1;
        }
        let digest = ParamDigest::new("count_by").str("key", &self.key).finish();
        groups
            .into_values()
            .map(|(p, v, n)| {
                let mut md = Metadata::new();
                md.insert(self.key.clone(), v);
                md.insert(KEY_COUNT.into(), MetaValue::Int(n));
                Ok(Tuple::single(derive_patch(&p, "count_by", vec![0], Vec::new(), md, digest)?))
            })
            .collect()
    }
}

impl Operator for CountBy {
    fn next(&mut self) -> Result<Option<Tuple>> {
        if let Some(input) = self.input.take() {
            self.out = self.run(input)?.into_iter();
        }
        Ok(self.out.next())
    }
}

fn base_frame(p: &Patch, store: &VideoStore) -> Result<u64> {
    let frames = base_frames_of(p)?;
    let (video, frame_no) = frames.into_iter().next().ok_or(patchdb_core::Error::MalformedLineage("no base frame"))?;
    if video != store.video_id() || frame_no >= store.len() {
        return Err(Error::MissingBaseFrame { store: store.video_id().into(), video, frame_no });
    }
    Ok(frame_no)
}

/// Follows each patch's lineage to its base frame with one random access.
struct BacktraceIndexed {
    input: Box<dyn Operator>,
    store: VideoStore,
    slot: usize,
    io: Arc<IoCounters>,
    stats: StatsCell,
}

impl Operator for BacktraceIndexed {
    fn next(&mut self) -> Result<Option<Tuple>> {
        let Some(mut t) = self.input.next()? else { return Ok(None) };
        let n = base_frame(&t.patches[self.slot], &self.store)?;
        self.stats.borrow_mut().index_probes += 1;
        let f = self.store.random_access(n, &self.io)?;
        t.frames.push(Arc::new(f));
        Ok(Some(t))
    }
}

/// Drains the input, then scans the whole store once.
struct BacktraceRescan {
    input: Option<Box<dyn Operator>>,
    store: VideoStore,
    slot: usize,
    io: Arc<IoCounters>,
    out: std::vec::IntoIter<Tuple>,
}

impl BacktraceRescan {
    fn run(&self, mut input: Box<dyn Operator>) -> Result<Vec<Tuple>> {
        let tuples = drain(input.as_mut())?;
        if tuples.is_empty() {
            return Ok(tuples);
        }
        let wanted: Vec<u64> =
            tuples.iter().map(|t| base_frame(&t.patches[self.slot], &self.store)).collect::<Result<_>>()?;
        let need: BTreeSet<u64> = wanted.iter().copied().collect();
        let mut found: HashMap<u64, Arc<Frame>> = HashMap::new();
        for f in self.store.scan(None, self.io.clone())? {
            let f = f?;
            if need.contains(&f.frame_no()) {
                found.insert(f.frame_no(), Arc::new(f));
            }
        }
        tuples
            .into_iter()
            .zip(wanted)
            .map(|(mut t, n)| {
                let f = found.get(&n).ok_or_else(|| Error::MissingBaseFrame {
                    store: self.store.video_id().into(),
                    video: self.store.video_id().into(),
                    frame_no: n,
                })?;
                t.frames.push(f.clone());
                Ok(t)
            })
            .collect()
    }
}

impl Operator for BacktraceRescan {
    fn next(&mut self) -> Result<Option<Tuple>> {
        if let Some(input) = self.input.take() {
            self.out = self.run(input)?.into_iter();
        }
        Ok(self.out.next())
    }
}
