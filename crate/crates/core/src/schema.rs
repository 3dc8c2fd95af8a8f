//! Patch schemas: the typing that lets pipelines be checked before they run.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::patch::{Patch, Tag, CHANNELS, KEY_LABEL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dim {
    Any,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataShape {
    Any,
    Dims(Vec<Dim>),
}

impl DataShape {
    /// `[h, w, 3]` with free height and width.
    pub fn pixels() -> Self {
        DataShape::Dims(alloc::vec![Dim::Any, Dim::Any, Dim::Fixed(CHANNELS)])
    }

    pub fn features(d: usize) -> Self {
        DataShape::Dims(alloc::vec![Dim::Fixed(d)])
    }

    pub fn matches(&self, shape: &[usize]) -> bool {
        match self {
            DataShape::Any => true,
            DataShape::Dims(dims) => {
                dims.len() == shape.len()
                    && dims.iter().zip(shape).all(|(d, &s)| match d {
                        Dim::Any => true,
                        Dim::Fixed(n) => *n == s,
                    })
            }
        }
    }

    /// Whether some concrete shape satisfies both descriptions.
    pub fn compatible(&self, other: &DataShape) -> bool {
        match (self, other) {
            (DataShape::Any, _) | (_, DataShape::Any) => true,
            (DataShape::Dims(a), DataShape::Dims(b)) => {
                a.len() == b.len()
                    && a.iter().zip(b).all(|(x, y)| match (x, y) {
                        (Dim::Fixed(m), Dim::Fixed(n)) => m == n,
                        _ => true,
                    })
            }
        }
    }

    /// The fixed length of a rank-1 shape.
    pub fn feature_dim(&self) -> Option<usize> {
        match self {
            DataShape::Dims(d) if d.len() == 1 => match d[0] {
                Dim::Fixed(n) => Some(n),
                Dim::Any => None,
            },
            _ => None,
        }
    }
}

impl fmt::Display for DataShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataShape::Any => f.write_str("*"),
            DataShape::Dims(dims) => {
                f.write_str("[")?;
                for (i, d) in dims.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    match d {
                        Dim::Any => f.write_str("*")?,
                        Dim::Fixed(n) => write!(f, "{n}")?,
                    }
                }
                f.write_str("]")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelDomain {
    Open,
    Finite(BTreeSet<String>),
}

impl LabelDomain {
    pub fn admits(&self, label: &str) -> bool {
        match self {
            LabelDomain::Open => true,
            LabelDomain::Finite(set) => set.contains(label),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSchema {
    pub data_shape: DataShape,
    pub label_domain: LabelDomain,
    pub required_keys: BTreeMap<String, Tag>,
}

impl PatchSchema {
    pub fn new(data_shape: DataShape) -> Self {
        Self {
            data_shape,
            label_domain: LabelDomain::Open,
            required_keys: BTreeMap::new(),
        }
    }

    pub fn any() -> Self {
        Self::new(DataShape::Any)
    }

    pub fn with_key(mut self, key: &str, tag: Tag) -> Self {
        self.required_keys.insert(key.into(), tag);
        self
    }

    /// Restricts labels to `labels`; an empty set is ignored since a finite
    /// domain must be non-empty.
    pub fn with_labels<I, S>(mut self, labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = labels.into_iter().map(Into::into).collect();
        if !set.is_empty() {
            self.label_domain = LabelDomain::Finite(set);
            self.required_keys.insert(KEY_LABEL.into(), Tag::Str);
        }
        self
    }
}

/// True iff the patch's shape, label and required keys all satisfy `s`.
pub fn check_schema(p: &Patch, s: &PatchSchema) -> bool {
    if !s.data_shape.matches(p.shape()) {
        return false;
    }
    if let LabelDomain::Finite(domain) = &s.label_domain {
        match p.label() {
            Some(l) if domain.contains(l) => {}
            _ => return false,
        }
    }
    s.required_keys
        .iter()
        .all(|(k, tag)| p.get(k).is_some_and(|v| v.tag() == *tag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patch::{derive_patch, make_patch, BoundingBox, Frame, Metadata, KEY_FRAMENO};
    use alloc::vec;

    fn pixel_patch(label: Option<&str>) -> Patch {
        let f = Frame::new("v", 0, 4, 4, vec![9; 48]).unwrap();
        let mut md = Metadata::new();
        if let Some(l) = label {
            md.insert(KEY_LABEL.into(), l.into());
        }
        make_patch(&f, BoundingBox::new(0, 0, 2, 2).unwrap(), md).unwrap()
    }

    #[test]
    fn feature_shape_open_labels() {
        let p = pixel_patch(None);
        let h = derive_patch(&p, "h", vec![24], vec![0.0; 24], Metadata::new(), 0).unwrap();
        assert!(check_schema(&h, &PatchSchema::new(DataShape::features(24))));
        assert!(!check_schema(&h, &PatchSchema::new(DataShape::features(32))));
    }

    #[test]
    fn label_outside_domain() {
        let p = pixel_patch(Some("bicycle"));
        let s = PatchSchema::any().with_labels(["vehicle", "pedestrian"]);
        assert!(!check_schema(&p, &s));
        let p = pixel_patch(Some("vehicle"));
        assert!(check_schema(&p, &s));
    }

    #[test]
    fn wildcard_with_required_key() {
        let p = pixel_patch(None);
        let s = PatchSchema::any().with_key(KEY_FRAMENO, Tag::Int);
        assert!(check_schema(&p, &s));
        let s = PatchSchema::any().with_key(KEY_FRAMENO, Tag::Str);
        assert!(!check_schema(&p, &s));
        assert!(check_schema(&p, &PatchSchema::new(DataShape::pixels())));
    }

    #[test]
    fn compatibility() {
        assert!(DataShape::pixels().compatible(&DataShape::Dims(vec![Dim::Fixed(5), Dim::Any, Dim::Any])));
        assert!(!DataShape::features(24).compatible(&DataShape::features(32)));
        assert!(!DataShape::pixels().compatible(&DataShape::features(24)));
        assert!(DataShape::Any.compatible(&DataShape::features(3)));
    }
}
