//! Predicates over tuples of patches.
//!
//! Slots index into the tuple being tested. Join predicates see the left
//! tuple's patches followed by the right tuple's, so in a join of two
//! single-patch inputs slot 0 is the left patch and slot 1 the right.

use std::cmp::Ordering;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use patchdb_core::metric::euclidean;
use patchdb_core::patch::{KEY_BBOX, KEY_GROUP_LABELS, KEY_LABEL};
use patchdb_core::{BoundingBox, LabelDomain, MetaValue, Patch, PatchSchema, Tag};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Int(i64),
    Float(f64),
    Str(String),
}

impl Literal {
    fn tag(&self) -> Tag {
        match self {
            Literal::Int(_) => Tag::Int,
            Literal::Float(_) => Tag::Float,
            Literal::Str(_) => Tag::Str,
        }
    }
}

impl From<&str> for Literal {
    fn from(s: &str) -> Self {
        Literal::Str(s.into())
    }
}

impl From<String> for Literal {
    fn from(s: String) -> Self {
        Literal::Str(s)
    }
}

impl From<i64> for Literal {
    fn from(v: i64) -> Self {
        Literal::Int(v)
    }
}

impl From<f64> for Literal {
    fn from(v: f64) -> Self {
        Literal::Float(v)
    }
}

/// A metadata key of one tuple slot, optionally shifted by a constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyRef {
    #[serde(default)]
    pub slot: usize,
    pub key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
}

impl KeyRef {
    pub fn new(slot: usize, key: &str) -> Self {
        Self { slot, key: key.into(), offset: None }
    }

    pub fn plus(mut self, offset: f64) -> Self {
        self.offset = Some(offset);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Operand {
    Key(KeyRef),
    Lit(Literal),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmpOp {
    #[serde(alias = "=", alias = "==")]
    Eq,
    #[serde(alias = "!=")]
    Ne,
    #[serde(alias = "<")]
    Lt,
    #[serde(alias = "<=")]
    Le,
    #[serde(alias = ">")]
    Gt,
    #[serde(alias = ">=")]
    Ge,
}

impl CmpOp {
    fn holds(self, o: Ordering) -> bool {
        match self {
            CmpOp::Eq => o == Ordering::Equal,
            CmpOp::Ne => o != Ordering::Equal,
            CmpOp::Lt => o == Ordering::Less,
            CmpOp::Le => o != Ordering::Greater,
            CmpOp::Gt => o == Ordering::Greater,
            CmpOp::Ge => o != Ordering::Less,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Predicate {
    True,
    Cmp { left: Operand, cmp: CmpOp, right: Operand },
    /// Euclidean distance between the two slots' data is at most `tau`.
    EuclideanWithin { a: usize, b: usize, tau: f64 },
    BoxContains { outer: usize, inner: usize },
    BoxIntersects { a: usize, b: usize },
    /// The horizontal extents of the two boxes overlap.
    XOverlap { a: usize, b: usize },
    /// A string-list key holds `value`.
    ListContains {
        #[serde(default)]
        slot: usize,
        key: String,
        value: String,
    },
    And { all: Vec<Predicate> },
    Or { any: Vec<Predicate> },
    Not { pred: Box<Predicate> },
}

impl Predicate {
    /// `slot.key <cmp> literal`.
    pub fn key_lit(slot: usize, key: &str, cmp: CmpOp, lit: impl Into<Literal>) -> Self {
        Predicate::Cmp { left: Operand::Key(KeyRef::new(slot, key)), cmp, right: Operand::Lit(lit.into()) }
    }

    pub fn label_is(label: &str) -> Self {
        Self::key_lit(0, KEY_LABEL, CmpOp::Eq, label)
    }

    /// `a <cmp> b` over two key references.
    pub fn keys(a: KeyRef, cmp: CmpOp, b: KeyRef) -> Self {
        Predicate::Cmp { left: Operand::Key(a), cmp, right: Operand::Key(b) }
    }

    pub fn and(all: Vec<Predicate>) -> Self {
        Predicate::And { all }
    }

    /// Evaluates over the concatenation `left ++ right`.
    pub fn eval(&self, left: &[Arc<Patch>], right: &[Arc<Patch>]) -> Result<bool> {
        let slot = |i: usize| -> Result<&Patch> {
            if i < left.len() {
                Ok(&left[i])
            } else {
                right.get(i - left.len()).map(|p| &**p).ok_or_else(|| {
                    Error::Config(format!("slot {i} out of range for a {}-patch tuple", left.len() + right.len()))
                })
            }
        };
        Ok(match self {
            Predicate::True => true,
            Predicate::Cmp { left: a, cmp, right: b } => {
                let (va, vb) = (resolve(a, &slot)?, resolve(b, &slot)?);
                match compare(&va, &vb, a, b)? {
                    Some(o) => cmp.holds(o),
                    None => false,
                }
            }
            Predicate::EuclideanWithin { a, b, tau } => {
                let (pa, pb) = (slot(*a)?, slot(*b)?);
                if pa.data().len() != pb.data().len() {
                    return Err(patchdb_core::Error::DimensionMismatch {
                        expected: pa.data().len(),
                        found: pb.data().len(),
                    }
                    .into());
                }
                euclidean(pa.data(), pb.data()) <= *tau
            }
            Predicate::BoxContains { outer, inner } => match (bbox(slot(*outer)?)?, bbox(slot(*inner)?)?) {
                (Some(o), Some(i)) => o.contains(&i),
                _ => false,
            },
            Predicate::BoxIntersects { a, b } => match (bbox(slot(*a)?)?, bbox(slot(*b)?)?) {
                (Some(x), Some(y)) => x.intersects(&y),
                _ => false,
            },
            Predicate::XOverlap { a, b } => match (bbox(slot(*a)?)?, bbox(slot(*b)?)?) {
                (Some(x), Some(y)) => x.overlaps_x(&y),
                _ => false,
            },
            Predicate::ListContains { slot: s, key, value } => {
                let p = slot(*s)?;
                match p.get(key) {
                    None => false,
                    Some(MetaValue::StrList(l)) => l.iter().any(|v| v == value),
                    Some(other) => return Err(mismatch(key, p, Tag::StrList, other.tag())),
                }
            }
            Predicate::And { all } => {
                for p in all {
                    if !p.eval(left, right)? {
                        return Ok(false);
                    }
                }
                true
            }
            Predicate::Or { any } => {
                for p in any {
                    if p.eval(left, right)? {
                        return Ok(true);
                    }
                }
                false
            }
            Predicate::Not { pred } => !pred.eval(left, right)?,
        })
    }

    /// Static check against the schemas of a tuple's slots.
    pub fn check(&self, slots: &[PatchSchema]) -> Vec<String> {
        let mut out = Vec::new();
        self.check_into(slots, &mut out);
        out
    }

    fn check_into(&self, slots: &[PatchSchema], out: &mut Vec<String>) {
        let schema = |i: usize, out: &mut Vec<String>| -> Option<&PatchSchema> {
            let s = slots.get(i);
            if s.is_none() {
                out.push(format!("slot {i} out of range for a {}-patch tuple", slots.len()));
            }
            s
        };
        let key_tag = |r: &KeyRef, out: &mut Vec<String>| -> Option<Tag> {
            let s = schema(r.slot, out)?;
            match s.required_keys.get(&r.key) {
                Some(t) => Some(*t),
                None => {
                    out.push(format!("slot {} does not carry key `{}`", r.slot, r.key));
                    None
                }
            }
        };
        let need_bbox = |i: usize, out: &mut Vec<String>| {
            if let Some(s) = schema(i, out) {
                if s.required_keys.get(KEY_BBOX) != Some(&Tag::BBox) {
                    out.push(format!("slot {i} has no bbox"));
                }
            }
        };
        match self {
            Predicate::True => {}
            Predicate::Cmp { left, cmp, right } => {
                let mut tags = Vec::new();
                for o in [left, right] {
                    match o {
                        Operand::Key(r) => {
                            let t = key_tag(r, out);
                            if let (Some(t), Some(_)) = (t, r.offset) {
                                if !matches!(t, Tag::Int | Tag::Float) {
                                    out.push(format!("offset applied to {t} key `{}`", r.key));
                                }
                            }
                            tags.push(t);
                        }
                        Operand::Lit(l) => tags.push(Some(l.tag())),
                    }
                }
                if let (Some(a), Some(b)) = (tags[0], tags[1]) {
                    let numeric = |t: Tag| matches!(t, Tag::Int | Tag::Float);
                    let comparable = (numeric(a) && numeric(b)) || (a == b && matches!(a, Tag::Str));
                    let equality = matches!(cmp, CmpOp::Eq | CmpOp::Ne);
                    if !comparable && !(a == b && equality) {
                        out.push(format!("cannot compare {a} with {b} using {cmp:?}"));
                    }
                }
                if *cmp == CmpOp::Eq {
                    for (k, l) in [(left, right), (right, left)] {
                        if let (Operand::Key(r), Operand::Lit(Literal::Str(v))) = (k, l) {
                            if r.key == KEY_LABEL {
                                if let Some(s) = slots.get(r.slot) {
                                    check_label(&s.label_domain, v, r.slot, out);
                                }
                            }
                        }
                    }
                }
            }
            Predicate::EuclideanWithin { a, b, tau } => {
                if !(*tau >= 0.0) {
                    out.push(format!("tau {tau} must be non-negative"));
                }
                let dims: Vec<Option<usize>> = [*a, *b]
                    .iter()
                    .map(|&i| schema(i, out).and_then(|s| s.data_shape.feature_dim()))
                    .collect();
                if let [Some(x), Some(y)] = dims[..] {
                    if x != y {
                        out.push(format!("feature dimensions differ: {x} vs {y}"));
                    }
                }
            }
            Predicate::BoxContains { outer: a, inner: b }
            | Predicate::BoxIntersects { a, b }
            | Predicate::XOverlap { a, b } => {
                need_bbox(*a, out);
                need_bbox(*b, out);
            }
            Predicate::ListContains { slot, key, value } => {
                if let Some(s) = schema(*slot, out) {
                    match s.required_keys.get(key) {
                        Some(Tag::StrList) => {}
                        Some(t) => out.push(format!("key `{key}` is {t}, not a string list")),
                        None => out.push(format!("slot {slot} does not carry key `{key}`")),
                    }
                    if key == KEY_GROUP_LABELS {
                        check_label(&s.label_domain, value, *slot, out);
                    }
                }
            }
            Predicate::And { all: ps } | Predicate::Or { any: ps } => {
                for p in ps {
                    p.check_into(slots, out);
                }
            }
            Predicate::Not { pred } => pred.check_into(slots, out),
        }
    }
}

fn check_label(domain: &LabelDomain, label: &str, slot: usize, out: &mut Vec<String>) {
    if let LabelDomain::Finite(d) = domain {
        if !d.contains(label) {
            let known: Vec<&str> = d.iter().map(String::as_str).collect();
            out.push(format!("label `{label}` can never appear in slot {slot} (producible: {})", known.join(", ")));
        }
    }
}

enum Value<'a> {
    Missing,
    Int(i64),
    Float(f64),
    Str(&'a str),
    /// Present, but not a scalar comparable type.
    Other(&'a MetaValue, u64),
}

fn resolve<'a, F>(o: &'a Operand, slot: &F) -> Result<Value<'a>>
where
    F: Fn(usize) -> Result<&'a Patch>,
{
    match o {
        Operand::Lit(Literal::Int(v)) => Ok(Value::Int(*v)),
        Operand::Lit(Literal::Float(v)) => Ok(Value::Float(*v)),
        Operand::Lit(Literal::Str(s)) => Ok(Value::Str(s)),
        Operand::Key(r) => {
            let p = slot(r.slot)?;
            let v = match p.get(&r.key) {
                None => return Ok(Value::Missing),
                Some(v) => v,
            };
            let base = match v {
                MetaValue::Int(i) => Value::Int(*i),
                MetaValue::Float(f) => Value::Float(*f),
                MetaValue::Str(s) => Value::Str(s),
                other => Value::Other(other, p.id()),
            };
            match (r.offset, base) {
                (None, b) => Ok(b),
                (Some(off), Value::Int(i)) => Ok(Value::Float(i as f64 + off)),
                (Some(off), Value::Float(f)) => Ok(Value::Float(f + off)),
                (Some(_), _) => Err(mismatch(&r.key, p, Tag::Float, v.tag())),
            }
        }
    }
}

fn compare(a: &Value<'_>, b: &Value<'_>, oa: &Operand, ob: &Operand) -> Result<Option<Ordering>> {
    use Value::*;
    Ok(match (a, b) {
        (Missing, _) | (_, Missing) => None,
        (Int(x), Int(y)) => Some(x.cmp(y)),
        (Int(x), Float(y)) => (*x as f64).partial_cmp(y),
        (Float(x), Int(y)) => x.partial_cmp(&(*y as f64)),
        (Float(x), Float(y)) => x.partial_cmp(y),
        (Str(x), Str(y)) => Some(x.cmp(y)),
        (Other(x, _), Other(y, _)) if x.tag() == y.tag() => {
            Some(if x == y { Ordering::Equal } else { Ordering::Less })
        }
        _ => {
            // report against whichever side is a key
            let (key, id, found, expected) = match (oa, ob, a, b) {
                (Operand::Key(r), _, Other(v, id), other) => (&r.key, *id, v.tag(), value_tag(other)),
                (_, Operand::Key(r), other, Other(v, id)) => (&r.key, *id, v.tag(), value_tag(other)),
                (Operand::Key(r), _, x, y) => (&r.key, 0, value_tag(x), value_tag(y)),
                (_, Operand::Key(r), x, y) => (&r.key, 0, value_tag(y), value_tag(x)),
                _ => unreachable!("two literals always resolve to comparable or mismatched scalars"),
            };
            return Err(patchdb_core::Error::TagMismatch { key: key.clone(), patch_id: id, expected, found }.into());
        }
    })
}

fn value_tag(v: &Value<'_>) -> Tag {
    match v {
        Value::Int(_) => Tag::Int,
        Value::Float(_) => Tag::Float,
        Value::Str(_) => Tag::Str,
        Value::Other(m, _) => m.tag(),
        Value::Missing => Tag::Str,
    }
}

fn bbox(p: &Patch) -> Result<Option<BoundingBox>> {
    match p.get(KEY_BBOX) {
        None => Ok(None),
        Some(MetaValue::BBox(b)) => Ok(Some(*b)),
        Some(other) => Err(mismatch(KEY_BBOX, p, Tag::BBox, other.tag())),
    }
}

fn mismatch(key: &str, p: &Patch, expected: Tag, found: Tag) -> Error {
    patchdb_core::Error::TagMismatch { key: key.into(), patch_id: p.id(), expected, found }.into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use patchdb_core::{make_patch, Frame, Metadata};

    fn patch(label: &str, frame: u64, x: u32) -> Arc<Patch> {
        let f = Frame::new("v", frame, 64, 8, vec![0; 64 * 8 * 3]).unwrap();
        let mut md = Metadata::new();
        md.insert("label".into(), MetaValue::Str(label.into()));
        md.insert("depth".into(), MetaValue::Float(0.5));
        Arc::new(make_patch(&f, BoundingBox::new(x, 0, x + 4, 4).unwrap(), md).unwrap())
    }

    #[test]
    fn comparisons() {
        let p = [patch("vehicle", 3, 0)];
        assert!(Predicate::label_is("vehicle").eval(&p, &[]).unwrap());
        assert!(!Predicate::label_is("pedestrian").eval(&p, &[]).unwrap());
        assert!(Predicate::key_lit(0, "frameno", CmpOp::Ge, 3i64).eval(&p, &[]).unwrap());
        assert!(Predicate::key_lit(0, "frameno", CmpOp::Lt, 3.5).eval(&p, &[]).unwrap());
        assert!(!Predicate::key_lit(0, "missing", CmpOp::Eq, 1i64).eval(&p, &[]).unwrap());
        let bad = Predicate::key_lit(0, "label", CmpOp::Eq, 1i64);
        assert!(matches!(bad.eval(&p, &[]), Err(Error::Core(patchdb_core::Error::TagMismatch { .. }))));
    }

    #[test]
    fn join_slots() {
        let (a, b) = (patch("p", 1, 0), patch("p", 1, 2));
        let behind = Predicate::and(vec![
            Predicate::keys(KeyRef::new(0, "frameno"), CmpOp::Eq, KeyRef::new(1, "frameno")),
            Predicate::XOverlap { a: 0, b: 1 },
            Predicate::keys(KeyRef::new(0, "depth"), CmpOp::Gt, KeyRef::new(1, "depth").plus(-0.1)),
        ]);
        assert!(behind.eval(&[a.clone()], &[b.clone()]).unwrap());
        assert!(!Predicate::BoxContains { outer: 0, inner: 1 }.eval(&[a], &[b]).unwrap());
    }

    #[test]
    fn parses_from_toml() {
        let p: Predicate = toml::from_str(
            "op = \"and\"\nall = [ { op = \"cmp\", left = { key = \"label\" }, cmp = \"=\", right = \"vehicle\" }, { op = \"x_overlap\", a = 0, b = 1 } ]",
        )
        .unwrap();
        assert_eq!(
            p,
            Predicate::and(vec![Predicate::label_is("vehicle"), Predicate::XOverlap { a: 0, b: 1 }])
        );
        assert!(toml::from_str::<Predicate>("op = \"x_overlap\"\na = 0\nb = 1\nbogus = 1").is_err());
    }

    #[test]
    fn static_label_check() {
        let s = PatchSchema::any().with_labels(["vehicle", "pedestrian"]);
        let v = Predicate::label_is("bicycle").check(&[s.clone()]);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("bicycle"));
        assert!(Predicate::label_is("vehicle").check(&[s.clone()]).is_empty());
        assert_eq!(Predicate::XOverlap { a: 0, b: 3 }.check(&[s]).len(), 2);
    }
}
