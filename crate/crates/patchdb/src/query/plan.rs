//! Plan trees and their static validation.

use serde::{Deserialize, Serialize};

use patchdb_core::etl::Violation;
use patchdb_core::index::IndexKind;
use patchdb_core::patch::{KEY_BBOX, KEY_COUNT, KEY_GROUP_LABELS, KEY_GROUP_SIZE, KEY_LABEL};
use patchdb_core::{DataShape, Dim, LabelDomain, PatchSchema, Tag};

use super::predicate::{Literal, Predicate};
use super::Catalog;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuildSide {
    Left,
    Right,
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BacktraceMode {
    LineageIndex,
    Rescan,
}

/// How an index join probes the right collection with a left value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProbeMode {
    /// Keys equal to the probe value (hash or ordered index).
    #[default]
    Eq,
    /// Keys in `[v + lo, v + hi)` (ordered index).
    Range { lo: f64, hi: f64 },
    /// Boxes intersecting the probe box (R-tree).
    Intersects,
    /// Boxes inside the probe box (R-tree).
    Contains,
    /// Vectors within `tau` of the probe patch's data (Ball-tree).
    Within { tau: f64 },
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlanNode {
    Scan {
        collection: String,
    },
    Select {
        input: Box<PlanNode>,
        predicate: Predicate,
    },
    NestedLoopJoin {
        left: Box<PlanNode>,
        right: Box<PlanNode>,
        predicate: Predicate,
    },
    IndexJoin {
        left: Box<PlanNode>,
        collection: String,
        index: String,
        #[serde(default)]
        probe_slot: usize,
        /// Left metadata key to probe with; `bbox` by default for R-tree
        /// probes and unused by Ball-tree probes.
        #[serde(default)]
        probe_key: Option<String>,
        #[serde(default, skip_serializing_if = "is_default")]
        mode: ProbeMode,
        #[serde(default)]
        residual: Option<Predicate>,
    },
    SimJoin {
        left: Box<PlanNode>,
        right: Box<PlanNode>,
        tau: f64,
        #[serde(default, skip_serializing_if = "is_default")]
        build_side: BuildSide,
        /// Ball-tree leaf size; the index default when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        leaf_size: Option<usize>,
    },
    Dedup {
        input: Box<PlanNode>,
        tau: f64,
        /// Drain the input and emit one patch per group carrying the
        /// members' labels and the group size.
        #[serde(default, skip_serializing_if = "is_default")]
        annotate_groups: bool,
    },
    CountBy {
        input: Box<PlanNode>,
        key: String,
    },
    Backtrace {
        input: Box<PlanNode>,
        store: String,
        mode: BacktraceMode,
        #[serde(default, skip_serializing_if = "is_default")]
        slot: usize,
    },
    /// Patches whose indexed key equals `key`.
    IndexLookup {
        collection: String,
        index: String,
        key: Literal,
    },
}

impl PlanNode {
    pub fn scan(collection: &str) -> Self {
        PlanNode::Scan { collection: collection.into() }
    }

    pub fn select(self, predicate: Predicate) -> Self {
        PlanNode::Select { input: Box::new(self), predicate }
    }

    pub fn nested_loop(self, right: PlanNode, predicate: Predicate) -> Self {
        PlanNode::NestedLoopJoin { left: Box::new(self), right: Box::new(right), predicate }
    }

    pub fn sim_join(self, right: PlanNode, tau: f64, build_side: BuildSide) -> Self {
        PlanNode::SimJoin { left: Box::new(self), right: Box::new(right), tau, build_side, leaf_size: None }
    }

    pub fn dedup(self, tau: f64, annotate_groups: bool) -> Self {
        PlanNode::Dedup { input: Box::new(self), tau, annotate_groups }
    }

    pub fn count_by(self, key: &str) -> Self {
        PlanNode::CountBy { input: Box::new(self), key: key.into() }
    }

    pub fn backtrace(self, store: &str, mode: BacktraceMode, slot: usize) -> Self {
        PlanNode::Backtrace { input: Box::new(self), store: store.into(), mode, slot }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PlanNode::Scan { .. } => "scan",
            PlanNode::Select { .. } => "select",
            PlanNode::NestedLoopJoin { .. } => "nested_loop_join",
            PlanNode::IndexJoin { .. } => "index_join",
            PlanNode::SimJoin { .. } => "sim_join",
            PlanNode::Dedup { .. } => "dedup",
            PlanNode::CountBy { .. } => "count_by",
            PlanNode::Backtrace { .. } => "backtrace",
            PlanNode::IndexLookup { .. } => "index_lookup",
        }
    }

    pub fn children(&self) -> Vec<&PlanNode> {
        match self {
            PlanNode::Scan { .. } | PlanNode::IndexLookup { .. } => vec![],
            PlanNode::Select { input, .. }
            | PlanNode::Dedup { input, .. }
            | PlanNode::CountBy { input, .. }
            | PlanNode::Backtrace { input, .. } => vec![input],
            PlanNode::IndexJoin { left, .. } => vec![left],
            PlanNode::NestedLoopJoin { left, right, .. } | PlanNode::SimJoin { left, right, .. } => {
                vec![left, right]
            }
        }
    }

    /// Operators in preorder; stage numbers in violations and stats use
    /// these positions.
    pub fn preorder(&self) -> Vec<&PlanNode> {
        let mut out = vec![self];
        for c in self.children() {
            out.extend(c.preorder());
        }
        out
    }
}

/// Checks every operator against the catalog and returns the schemas of
/// the output tuple's slots.
pub fn validate_plan(plan: &PlanNode, cat: &Catalog) -> Result<Vec<PatchSchema>, Vec<Violation>> {
    let mut vs = Vec::new();
    let mut next = 0;
    let out = check(plan, cat, &mut next, &mut vs);
    if vs.is_empty() {
        Ok(out.unwrap_or_default())
    } else {
        Err(vs)
    }
}

fn feature_dim(s: &PatchSchema) -> Result<Option<usize>, String> {
    match &s.data_shape {
        DataShape::Any => Ok(None),
        DataShape::Dims(d) if d.len() == 1 => Ok(match d[0] {
            Dim::Fixed(n) => Some(n),
            Dim::Any => None,
        }),
        _ => Err("input is not feature-shaped".into()),
    }
}

/// Returns `None` when a child failed so parents skip checks that would
/// only repeat the child's complaint.
fn check(node: &PlanNode, cat: &Catalog, next: &mut usize, vs: &mut Vec<Violation>) -> Option<Vec<PatchSchema>> {
    let stage = *next;
    *next += 1;
    let fail = |msg: String, vs: &mut Vec<Violation>| {
        vs.push(Violation { stage, stage_name: node.name().into(), message: msg });
    };
    let before = vs.len();
    let out = match node {
        PlanNode::Scan { collection } => match cat.collection(collection) {
            Some(c) => Some(vec![c.schema().clone()]),
            None => {
                fail(format!("unknown collection `{collection}`"), vs);
                None
            }
        },
        PlanNode::IndexLookup { collection, index, key } => {
            let c = cat.collection(collection);
            match c {
                None => fail(format!("unknown collection `{collection}`"), vs),
                Some(c) => match c.index_spec(index) {
                    None => fail(format!("collection `{collection}` has no index `{index}`"), vs),
                    Some(spec) => {
                        let ok = match (spec.kind, key) {
                            (IndexKind::Hash, Literal::Int(_) | Literal::Str(_)) => true,
                            (IndexKind::Ordered, Literal::Int(_) | Literal::Float(_)) => true,
                            _ => false,
                        };
                        if !ok {
                            fail(format!("index `{index}` ({:?}) cannot look up {key:?}", spec.kind), vs);
                        }
                    }
                },
            }
            c.map(|c| vec![c.schema().clone()])
        }
        PlanNode::Select { input, predicate } => {
            let s = check(input, cat, next, vs)?;
            for m in predicate.check(&s) {
                fail(m, vs);
            }
            Some(s)
        }
        PlanNode::NestedLoopJoin { left, right, predicate } => {
            let l = check(left, cat, next, vs);
            let r = check(right, cat, next, vs);
            let (mut l, r) = (l?, r?);
            l.extend(r);
            for m in predicate.check(&l) {
                fail(m, vs);
            }
            Some(l)
        }
        PlanNode::SimJoin { left, right, tau, leaf_size, .. } => {
            let l = check(left, cat, next, vs);
            let r = check(right, cat, next, vs);
            let (mut l, r) = (l?, r?);
            if !(*tau >= 0.0) {
                fail(format!("tau {tau} must be non-negative"), vs);
            }
            if *leaf_size == Some(0) {
                fail("leaf_size must be at least 1".into(), vs);
            }
            match (feature_dim(&l[0]), feature_dim(&r[0])) {
                (Err(e), _) => fail(format!("left {e}"), vs),
                (_, Err(e)) => fail(format!("right {e}"), vs),
                (Ok(Some(a)), Ok(Some(b))) if a != b => {
                    fail(format!("feature dimensions differ: left {a}, right {b}"), vs)
                }
                _ => {}
            }
            l.extend(r);
            Some(l)
        }
        PlanNode::IndexJoin { left, collection, index, probe_slot, probe_key, mode, residual } => {
            let l = check(left, cat, next, vs)?;
            let Some(c) = cat.collection(collection) else {
                fail(format!("unknown collection `{collection}`"), vs);
                return None;
            };
            let Some(ls) = l.get(*probe_slot) else {
                fail(format!("probe slot {probe_slot} out of range for a {}-patch tuple", l.len()), vs);
                return None;
            };
            match c.index_spec(index) {
                None => fail(format!("collection `{collection}` has no index `{index}`"), vs),
                Some(spec) => {
                    let want: &[IndexKind] = match mode {
                        ProbeMode::Eq => &[IndexKind::Hash, IndexKind::Ordered],
                        ProbeMode::Range { .. } => &[IndexKind::Ordered],
                        ProbeMode::Intersects | ProbeMode::Contains => &[IndexKind::RTree],
                        ProbeMode::Within { .. } => &[IndexKind::BallTree],
                    };
                    if !want.contains(&spec.kind) {
                        fail(format!("{mode:?} probe needs a {want:?} index, `{index}` is {:?}", spec.kind), vs);
                    }
                    match mode {
                        ProbeMode::Within { tau } => {
                            if !(*tau >= 0.0) {
                                fail(format!("tau {tau} must be non-negative"), vs);
                            }
                            if let Err(e) = feature_dim(ls) {
                                fail(format!("probe {e}"), vs);
                            }
                        }
                        ProbeMode::Intersects | ProbeMode::Contains => {
                            let k = probe_key.as_deref().unwrap_or(KEY_BBOX);
                            if ls.required_keys.get(k) != Some(&Tag::BBox) {
                                fail(format!("probe key `{k}` is not a bbox on slot {probe_slot}"), vs);
                            }
                        }
                        ProbeMode::Eq | ProbeMode::Range { .. } => match probe_key {
                            None => fail("equality and range probes need probe_key".into(), vs),
                            Some(k) => match ls.required_keys.get(k.as_str()) {
                                None => fail(format!("slot {probe_slot} does not carry key `{k}`"), vs),
                                Some(Tag::Int | Tag::Str | Tag::Float) => {}
                                Some(t) => fail(format!("cannot probe with {t} key `{k}`"), vs),
                            },
                        },
                    }
                }
            }
            let mut out = l.clone();
            out.push(c.schema().clone());
            if let Some(p) = residual {
                for m in p.check(&out) {
                    fail(m, vs);
                }
            }
            Some(out)
        }
        PlanNode::Dedup { input, tau, annotate_groups } => {
            let mut s = check(input, cat, next, vs)?;
            if !(*tau >= 0.0) {
                fail(format!("tau {tau} must be non-negative"), vs);
            }
            if let Err(e) = feature_dim(&s[0]) {
                fail(e, vs);
            }
            if *annotate_groups {
                s[0].required_keys.insert(KEY_GROUP_LABELS.into(), Tag::StrList);
                s[0].required_keys.insert(KEY_GROUP_SIZE.into(), Tag::Int);
            }
            Some(s)
        }
        PlanNode::CountBy { input, key } => {
            let s = check(input, cat, next, vs)?;
            match s[0].required_keys.get(key.as_str()) {
                None => {
                    fail(format!("input does not carry key `{key}`"), vs);
                    None
                }
                Some(&t) => {
                    let mut out = PatchSchema::new(DataShape::Dims(vec![Dim::Fixed(0)]))
                        .with_key(key, t)
                        .with_key(KEY_COUNT, Tag::Int);
                    if key == KEY_LABEL {
                        out.label_domain = s[0].label_domain.clone();
                    } else {
                        out.label_domain = LabelDomain::Open;
                    }
                    Some(vec![out])
                }
            }
        }
        PlanNode::Backtrace { input, store, slot, .. } => {
            let s = check(input, cat, next, vs)?;
            if cat.store(store).is_none() {
                fail(format!("unknown store `{store}`"), vs);
            }
            if *slot >= s.len() {
                fail(format!("slot {slot} out of range for a {}-patch tuple", s.len()), vs);
            }
            Some(s)
        }
    };
    if vs.len() > before {
        None
    } else {
        out
    }
}
