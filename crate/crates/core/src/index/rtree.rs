use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{put_u16, put_u32, put_u64};
use crate::error::{Error, Result};
use crate::patch::{BoundingBox, PatchId};
use crate::wire::Reader;

pub const DEFAULT_NODE_CAPACITY: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RectQuery {
    /// Entries overlapping the query on positive area.
    Intersects,
    /// Entries lying entirely inside the query.
    Contains,
}

#[derive(Debug, Clone, PartialEq)]
enum Children {
    Leaf(Vec<(BoundingBox, PatchId)>),
    Inner(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
struct Node {
    mbr: BoundingBox,
    children: Children,
}

impl Node {
    fn len(&self) -> usize {
        match &self.children {
            Children::Leaf(e) => e.len(),
            Children::Inner(c) => c.len(),
        }
    }
}

/// Read-only view of one R-tree node.
#[derive(Debug, Clone, Copy)]
pub struct RTreeNodeView<'a> {
    pub mbr: BoundingBox,
    pub children: &'a [usize],
    pub entries: &'a [(BoundingBox, PatchId)],
}

impl RTreeNodeView<'_> {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Guttman R-tree over 2-D boxes, built by quadratic-split insertion.
///
/// Body layout: `capacity:u16 min_fill:u16 len:u64 nodes:u32` then nodes in
/// preorder as `leaf:u8 mbr:4*u32 count:u16`, leaf entries inline as
/// `bbox:4*u32 id:u64`, inner children following recursively.
#[derive(Debug, Clone, PartialEq)]
pub struct RTree {
    capacity: usize,
    min_fill: usize,
    nodes: Vec<Node>,
    len: usize,
}

impl RTree {
    pub fn build<I>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (BoundingBox, PatchId)>,
    {
        Self::build_with_capacity(DEFAULT_NODE_CAPACITY, entries)
    }

    /// Minimum fill is 40% of `capacity` (at least 2).
    pub fn build_with_capacity<I>(capacity: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (BoundingBox, PatchId)>,
    {
        if !(4..=u16::MAX as usize).contains(&capacity) {
            return Err(Error::InvalidParam(alloc::format!("node capacity {capacity} outside 4..=65535")));
        }
        let min_fill = (capacity * 2 / 5).max(2);
        let mut tree = RTree { capacity, min_fill, nodes: Vec::new(), len: 0 };
        let mut root = None;
        for (b, id) in entries {
            if !b.is_valid() {
                return Err(Error::InvalidBox { x1: b.x1, y1: b.y1, x2: b.x2, y2: b.y2 });
            }
            let r = *root.get_or_insert_with(|| {
                tree.nodes.push(Node { mbr: b, children: Children::Leaf(Vec::new()) });
                0
            });
            if let Some(sibling) = tree.insert(r, (b, id)) {
                let mbr = tree.nodes[r].mbr.union(&tree.nodes[sibling].mbr);
                tree.nodes.push(Node { mbr, children: Children::Inner(vec![r, sibling]) });
                root = Some(tree.nodes.len() - 1);
            }
            tree.len += 1;
        }
        let root = root.ok_or(Error::EmptyInput)?;
        Ok(tree.into_preorder(root))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn min_fill(&self) -> usize {
        self.min_fill
    }

    /// Root is node 0; nodes are stored in preorder.
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, i: usize) -> RTreeNodeView<'_> {
        let n = &self.nodes[i];
        match &n.children {
            Children::Leaf(e) => RTreeNodeView { mbr: n.mbr, children: &[], entries: e },
            Children::Inner(c) => RTreeNodeView { mbr: n.mbr, children: c, entries: &[] },
        }
    }

    /// Matching ids, ascending and without duplicates.
    pub fn query(&self, q: &BoundingBox, mode: RectQuery) -> Vec<PatchId> {
        let mut out = Vec::new();
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let n = &self.nodes[i];
            if !n.mbr.intersects(q) {
                continue;
            }
            match &n.children {
                Children::Inner(c) => stack.extend(c.iter().copied()),
                Children::Leaf(entries) => {
                    for (b, id) in entries {
                        let hit = match mode {
                            RectQuery::Intersects => b.intersects(q),
                            RectQuery::Contains => q.contains(b),
                        };
                        if hit {
                            out.push(*id);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    fn insert(&mut self, node: usize, entry: (BoundingBox, PatchId)) -> Option<usize> {
        let chosen = match &self.nodes[node].children {
            Children::Leaf(_) => None,
            Children::Inner(c) => Some(self.choose_subtree(c, &entry.0)),
        };
        match chosen {
            None => {
                let n = &mut self.nodes[node];
                if let Children::Leaf(e) = &mut n.children {
                    n.mbr = if e.is_empty() { entry.0 } else { n.mbr.union(&entry.0) };
                    e.push(entry);
                }
            }
            Some(child) => {
                let split = self.insert(child, entry);
                let n = &mut self.nodes[node];
                n.mbr = n.mbr.union(&entry.0);
                if let (Some(s), Children::Inner(c)) = (split, &mut n.children) {
                    c.push(s);
                }
            }
        }
        if self.nodes[node].len() > self.capacity {
            Some(self.split(node))
        } else {
            None
        }
    }

    /// Least enlargement, then least area, then first.
    fn choose_subtree(&self, children: &[usize], b: &BoundingBox) -> usize {
        let mut best = children[0];
        let mut best_key = (u64::MAX, u64::MAX);
        for &c in children {
            let m = &self.nodes[c].mbr;
            let area = m.area();
            let key = (m.union(b).area() - area, area);
            if key < best_key {
                best_key = key;
                best = c;
            }
        }
        best
    }

    fn split(&mut self, node: usize) -> usize {
        let boxes: Vec<BoundingBox> = match &self.nodes[node].children {
            Children::Leaf(e) => e.iter().map(|(b, _)| *b).collect(),
            Children::Inner(c) => c.iter().map(|&i| self.nodes[i].mbr).collect(),
        };
        let (keep, moved) = quadratic_split(&boxes, self.min_fill);
        let pick = |idx: &[usize]| {
            idx.iter().skip(1).fold(boxes[idx[0]], |acc, &i| acc.union(&boxes[i]))
        };
        let (keep_mbr, moved_mbr) = (pick(&keep), pick(&moved));
        let new_children = match &mut self.nodes[node].children {
            Children::Leaf(e) => {
                let old = core::mem::take(e);
                *e = keep.iter().map(|&i| old[i]).collect();
                Children::Leaf(moved.iter().map(|&i| old[i]).collect())
            }
            Children::Inner(c) => {
                let old = core::mem::take(c);
                *c = keep.iter().map(|&i| old[i]).collect();
                Children::Inner(moved.iter().map(|&i| old[i]).collect())
            }
        };
        self.nodes[node].mbr = keep_mbr;
        self.nodes.push(Node { mbr: moved_mbr, children: new_children });
        self.nodes.len() - 1
    }

    fn into_preorder(self, root: usize) -> Self {
        let mut nodes = Vec::with_capacity(self.nodes.len());
        fn visit(src: &[Node], i: usize, out: &mut Vec<Node>) -> usize {
            let at = out.len();
            out.push(Node { mbr: src[i].mbr, children: Children::Inner(Vec::new()) });
            let children = match &src[i].children {
                Children::Leaf(e) => Children::Leaf(e.clone()),
                Children::Inner(c) => Children::Inner(c.iter().map(|&k| visit(src, k, out)).collect()),
            };
            out[at].children = children;
            at
        }
        visit(&self.nodes, root, &mut nodes);
        RTree { nodes, ..self }
    }

    pub(super) fn write_body(&self, out: &mut Vec<u8>) {
        put_u16(out, self.capacity as u16);
        put_u16(out, self.min_fill as u16);
        put_u64(out, self.len as u64);
        put_u32(out, self.nodes.len() as u32);
        // Preorder storage means writing nodes in index order is a preorder walk.
        for n in &self.nodes {
            out.push(matches!(n.children, Children::Leaf(_)) as u8);
            put_box(out, &n.mbr);
            put_u16(out, n.len() as u16);
            if let Children::Leaf(entries) = &n.children {
                for (b, id) in entries {
                    put_box(out, b);
                    put_u64(out, *id);
                }
            }
        }
    }

    pub(super) fn read_body(r: &mut Reader<'_>) -> Result<Self> {
        let capacity = r.u16()? as usize;
        let min_fill = r.u16()? as usize;
        let len = r.u64()? as usize;
        let count = r.u32()? as usize;
        let mut nodes = Vec::with_capacity(count.min(r.remaining()));
        fn read_node(r: &mut Reader<'_>, nodes: &mut Vec<Node>, budget: usize) -> Result<usize> {
            if nodes.len() >= budget {
                return Err(Error::Decode("r-tree node count exceeded".into()));
            }
            let leaf = r.u8()? == 1;
            let mbr = r.bbox()?;
            let n = r.u16()? as usize;
            let at = nodes.len();
            nodes.push(Node { mbr, children: Children::Inner(Vec::new()) });
            let children = if leaf {
                let mut e = Vec::with_capacity(n);
                for _ in 0..n {
                    let b = r.bbox()?;
                    e.push((b, r.u64()?));
                }
                Children::Leaf(e)
            } else {
                let mut c = Vec::with_capacity(n);
                for _ in 0..n {
                    c.push(read_node(r, nodes, budget)?);
                }
                Children::Inner(c)
            };
            nodes[at].children = children;
            Ok(at)
        }
        if count == 0 {
            return Err(Error::Decode("r-tree without nodes".into()));
        }
        read_node(r, &mut nodes, count)?;
        if nodes.len() != count {
            return Err(Error::Decode("r-tree node count mismatch".into()));
        }
        Ok(RTree { capacity, min_fill, nodes, len })
    }
}

fn put_box(out: &mut Vec<u8>, b: &BoundingBox) {
    for v in [b.x1, b.y1, b.x2, b.y2] {
        put_u32(out, v);
    }
}

/// Quadratic split: seeds are the pair wasting the most area, then each
/// remaining box goes where it causes the least enlargement, choosing first
/// the box with the strongest preference. Both groups end with at least
/// `min_fill` members.
fn quadratic_split(boxes: &[BoundingBox], min_fill: usize) -> (Vec<usize>, Vec<usize>) {
    let area = |b: &BoundingBox| i128::from(b.area());
    let (mut s1, mut s2, mut worst) = (0, 1, i128::MIN);
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            let d = area(&boxes[i].union(&boxes[j])) - area(&boxes[i]) - area(&boxes[j]);
            if d > worst {
                (s1, s2, worst) = (i, j, d);
            }
        }
    }
    let mut g1 = vec![s1];
    let mut g2 = vec![s2];
    let (mut m1, mut m2) = (boxes[s1], boxes[s2]);
    let mut rest: Vec<usize> = (0..boxes.len()).filter(|&i| i != s1 && i != s2).collect();

    while !rest.is_empty() {
        if g1.len() + rest.len() == min_fill {
            g1.append(&mut rest);
            break;
        }
        if g2.len() + rest.len() == min_fill {
            g2.append(&mut rest);
            break;
        }
        let mut pick = 0;
        let mut best_diff = -1i128;
        for (k, &i) in rest.iter().enumerate() {
            let d1 = area(&m1.union(&boxes[i])) - area(&m1);
            let d2 = area(&m2.union(&boxes[i])) - area(&m2);
            let diff = (d1 - d2).abs();
            if diff > best_diff {
                best_diff = diff;
                pick = k;
            }
        }
        let i = rest.swap_remove(pick);
        let d1 = area(&m1.union(&boxes[i])) - area(&m1);
        let d2 = area(&m2.union(&boxes[i])) - area(&m2);
        let to_first = (d1, area(&m1), g1.len()) <= (d2, area(&m2), g2.len());
        if to_first {
            g1.push(i);
            m1 = m1.union(&boxes[i]);
        } else {
            g2.push(i);
            m2 = m2.union(&boxes[i]);
        }
    }
    (g1, g2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(x1: u32, y1: u32, x2: u32, y2: u32) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn small_example() {
        let t = RTree::build([(bb(0, 0, 2, 2), 1), (bb(1, 1, 3, 3), 2), (bb(5, 5, 6, 6), 3)]).unwrap();
        assert_eq!(t.query(&bb(1, 1, 3, 3), RectQuery::Intersects), vec![1, 2]);
        assert_eq!(t.query(&bb(0, 0, 10, 10), RectQuery::Contains), vec![1, 2, 3]);
        assert!(t.query(&bb(8, 8, 9, 9), RectQuery::Intersects).is_empty());
        // touching edges have zero overlap area
        assert_eq!(t.query(&bb(2, 2, 5, 5), RectQuery::Intersects), vec![2]);
    }

    #[test]
    fn empty_input() {
        assert_eq!(RTree::build(Vec::new()).unwrap_err(), Error::EmptyInput);
    }

    #[test]
    fn split_respects_min_fill() {
        let boxes: Vec<_> = (0..17).map(|i| bb(i * 10, 0, i * 10 + 1, 1)).collect();
        let (a, b) = quadratic_split(&boxes, 6);
        assert_eq!(a.len() + b.len(), 17);
        assert!(a.len() >= 6 && b.len() >= 6);
    }
}
