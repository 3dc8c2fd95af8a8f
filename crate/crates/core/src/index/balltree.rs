use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::ops::Range;

use super::{put_f64, put_u32, put_u64};
use crate::error::{Error, Result};
use crate::metric::euclidean;
use crate::patch::PatchId;
use crate::wire::Reader;

pub const DEFAULT_LEAF_SIZE: usize = 32;
const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq)]
struct BallNode {
    start: u32,
    end: u32,
    radius: f64,
    left: u32,
    right: u32,
}

/// Read-only view of one Ball-tree node.
#[derive(Debug, Clone)]
pub struct BallNodeView<'a> {
    pub centroid: &'a [f64],
    pub radius: f64,
    /// Positions of the subtree's points, see [`BallTree::point`].
    pub points: Range<usize>,
    pub children: Option<(usize, usize)>,
}

/// Node-visit counters for one search.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchStats {
    pub nodes_visited: usize,
    pub leaves_visited: usize,
    pub distance_evals: usize,
}

/// Exact metric tree over fixed-dimension vectors.
///
/// Construction splits on the dimension of maximum spread at the median
/// value (points equal to the median go to the lower half) until a node
/// holds at most `leaf_size` points or all its points coincide. Searches
/// skip a node when `||q - centroid|| > radius + r`.
///
/// Body layout: `dim:u32 leaf_size:u32 points:u32 nodes:u32`, then the points
/// in tree order as `id:u64 coord:f64*dim`, then the nodes in preorder as
/// `start:u32 end:u32 radius:f64 left:u32 right:u32 centroid:f64*dim`
/// (`left = right = 0xFFFFFFFF` for leaves).
#[derive(Debug, Clone, PartialEq)]
pub struct BallTree {
    dim: usize,
    leaf_size: usize,
    ids: Vec<PatchId>,
    coords: Vec<f64>,
    nodes: Vec<BallNode>,
    centroids: Vec<f64>,
}

impl BallTree {
    pub fn build<'a, I>(points: I, leaf_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = (PatchId, &'a [f64])>,
    {
        let mut ids = Vec::new();
        let mut coords = Vec::new();
        let mut dim = None;
        for (id, v) in points {
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(Error::DimensionMismatch { expected: d, found: v.len() })
                }
                Some(_) => {}
            }
            ids.push(id);
            coords.extend_from_slice(v);
        }
        let dim = dim.ok_or(Error::EmptyInput)?;
        Self::from_flat(dim, ids, coords, leaf_size)
    }

    /// Builds from a row-major coordinate buffer of `ids.len()` rows.
    pub fn from_flat(dim: usize, ids: Vec<PatchId>, coords: Vec<f64>, leaf_size: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptyInput);
        }
        if dim == 0 {
            return Err(Error::InvalidParam("ball-tree dimension must be positive".into()));
        }
        if coords.len() != ids.len() * dim {
            return Err(Error::DimensionMismatch { expected: ids.len() * dim, found: coords.len() });
        }
        if leaf_size == 0 {
            return Err(Error::InvalidParam("leaf size must be positive".into()));
        }
        let n = ids.len();
        let mut b = Builder { dim, leaf_size, ids: &ids, coords: &coords, nodes: Vec::new(), centroids: Vec::new() };
        let mut perm: Vec<usize> = (0..n).collect();
        b.build(&mut perm, 0);
        let (nodes, centroids) = (b.nodes, b.centroids);

        let mut sorted_ids = Vec::with_capacity(n);
        let mut sorted_coords = Vec::with_capacity(coords.len());
        for &p in &perm {
            sorted_ids.push(ids[p]);
            sorted_coords.extend_from_slice(&coords[p * dim..(p + 1) * dim]);
        }
        Ok(Self { dim, leaf_size, ids: sorted_ids, coords: sorted_coords, nodes, centroids })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.left == NONE).count()
    }

    /// Root is node 0.
    pub fn node(&self, i: usize) -> BallNodeView<'_> {
        let n = &self.nodes[i];
        BallNodeView {
            centroid: &self.centroids[i * self.dim..(i + 1) * self.dim],
            radius: n.radius,
            points: n.start as usize..n.end as usize,
            children: (n.left != NONE).then(|| (n.left as usize, n.right as usize)),
        }
    }

    pub fn point(&self, pos: usize) -> (PatchId, &[f64]) {
        (self.ids[pos], &self.coords[pos * self.dim..(pos + 1) * self.dim])
    }

    fn check_dim(&self, q: &[f64]) -> Result<()> {
        if q.len() == self.dim {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected: self.dim, found: q.len() })
        }
    }

    /// Ids of all points with `||p - q|| <= r`, ascending.
    pub fn within(&self, q: &[f64], r: f64) -> Result<Vec<PatchId>> {
        Ok(self.within_with_stats(q, r)?.0)
    }

    pub fn within_with_stats(&self, q: &[f64], r: f64) -> Result<(Vec<PatchId>, SearchStats)> {
        self.check_dim(q)?;
        if r.is_nan() || r < 0.0 {
            return Err(Error::InvalidParam("radius must be non-negative".into()));
        }
        let mut stats = SearchStats::default();
        let mut out = Vec::new();
        self.for_each_within(q, r, &mut stats, |id, _| out.push(id));
        out.sort_unstable();
        Ok((out, stats))
    }

    /// Closest point with `||p - q|| <= r`; ties go to the smaller id.
    pub fn nearest_within(&self, q: &[f64], r: f64) -> Result<Option<(PatchId, f64)>> {
        self.check_dim(q)?;
        let mut best: Option<(PatchId, f64)> = None;
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let bound = best.map_or(r, |(_, d)| d);
            let n = &self.nodes[i];
            let dc = euclidean(q, self.centroid(i));
            if dc - n.radius - slack(dc, n.radius, bound) > bound {
                continue;
            }
            if n.left == NONE {
                for pos in n.start as usize..n.end as usize {
                    let (id, p) = self.point(pos);
                    let d = euclidean(q, p);
                    if d <= r && best.is_none_or(|(bid, bd)| (d, id) < (bd, bid)) {
                        best = Some((id, d));
                    }
                }
            } else {
                stack.push(n.right as usize);
                stack.push(n.left as usize);
            }
        }
        Ok(best)
    }

    /// The `k` nearest points, ascending by distance then id.
    pub fn knn(&self, q: &[f64], k: usize) -> Result<Vec<(PatchId, f64)>> {
        self.check_dim(q)?;
        if k > self.len() {
            return Err(Error::KTooLarge { k, n: self.len() });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.knn_node(0, q, k, &mut heap);
        let mut out: Vec<(PatchId, f64)> = heap.into_iter().map(|c| (c.id, c.dist)).collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        Ok(out)
    }

    fn knn_node(&self, i: usize, q: &[f64], k: usize, heap: &mut BinaryHeap<Candidate>) {
        let n = &self.nodes[i];
        if heap.len() == k {
            let worst = heap.peek().map_or(f64::INFINITY, |c| c.dist);
            let dc = euclidean(q, self.centroid(i));
            if dc - n.radius - slack(dc, n.radius, worst) > worst {
                return;
            }
        }
        if n.left == NONE {
            for pos in n.start as usize..n.end as usize {
                let (id, p) = self.point(pos);
                let c = Candidate { dist: euclidean(q, p), id };
                if heap.len() < k {
                    heap.push(c);
                } else if heap.peek().is_some_and(|w| c < *w) {
                    heap.pop();
                    heap.push(c);
                }
            }
            return;
        }
        let (l, r) = (n.left as usize, n.right as usize);
        let dl = euclidean(q, self.centroid(l));
        let dr = euclidean(q, self.centroid(r));
        if dl <= dr {
            self.knn_node(l, q, k, heap);
            self.knn_node(r, q, k, heap);
        } else {
            self.knn_node(r, q, k, heap);
            self.knn_node(l, q, k, heap);
        }
    }

    pub(crate) fn for_each_within<F: FnMut(PatchId, f64)>(
        &self,
        q: &[f64],
        r: f64,
        stats: &mut SearchStats,
        mut f: F,
    ) {
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let n = &self.nodes[i];
            stats.nodes_visited += 1;
            let dc = euclidean(q, self.centroid(i));
            stats.distance_evals += 1;
            if dc > n.radius + r + slack(dc, n.radius, r) {
                continue;
            }
            if n.left == NONE {
                stats.leaves_visited += 1;
                for pos in n.start as usize..n.end as usize {
                    let (id, p) = self.point(pos);
                    let d = euclidean(q, p);
                    stats.distance_evals += 1;
                    if d <= r {
                        f(id, d);
                    }
                }
            } else {
                stack.push(n.right as usize);
                stack.push(n.left as usize);
            }
        }
    }

    fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    pub(super) fn write_body(&self, out: &mut Vec<u8>) {
        put_u32(out, self.dim as u32);
        put_u32(out, self.leaf_size as u32);
        put_u32(out, self.ids.len() as u32);
        put_u32(out, self.nodes.len() as u32);
        for pos in 0..self.ids.len() {
            let (id, p) = self.point(pos);
            put_u64(out, id);
            for &c in p {
                put_f64(out, c);
            }
        }
        for (i, n) in self.nodes.iter().enumerate() {
            put_u32(out, n.start);
            put_u32(out, n.end);
            put_f64(out, n.radius);
            put_u32(out, n.left);
            put_u32(out, n.right);
            for &c in self.centroid(i) {
                put_f64(out, c);
            }
        }
    }

    pub(super) fn read_body(r: &mut Reader<'_>) -> Result<Self> {
        let dim = r.u32()? as usize;
        let leaf_size = r.u32()? as usize;
        let n = r.u32()? as usize;
        let count = r.u32()? as usize;
        if dim == 0 || n == 0 || count == 0 {
            return Err(Error::Decode("degenerate ball-tree header".into()));
        }
        let cap = r.remaining() / 8;
        let mut ids = Vec::with_capacity(n.min(cap));
        let mut coords = Vec::with_capacity((n * dim).min(cap));
        for _ in 0..n {
            ids.push(r.u64()?);
            for _ in 0..dim {
                coords.push(r.f64()?);
            }
        }
        let mut nodes = Vec::with_capacity(count.min(cap));
        let mut centroids = Vec::with_capacity((count * dim).min(cap));
        for _ in 0..count {
            let node = BallNode {
                start: r.u32()?,
                end: r.u32()?,
                radius: r.f64()?,
                left: r.u32()?,
                right: r.u32()?,
            };
            let bad_child = |c: u32| c != NONE && c as usize >= count;
            if node.start > node.end
                || node.end as usize > n
                || bad_child(node.left)
                || bad_child(node.right)
                || (node.left == NONE) != (node.right == NONE)
            {
                return Err(Error::Decode("ball-tree node out of range".into()));
            }
            nodes.push(node);
            for _ in 0..dim {
                centroids.push(r.f64()?);
            }
        }
        Ok(Self { dim, leaf_size, ids, coords, nodes, centroids })
    }
}

/// Absolute tolerance for pruning tests so rounding never drops a point that
/// lies exactly on a search boundary.
#[inline]
fn slack(a: f64, b: f64, c: f64) -> f64 {
    1e-9 * (1.0 + a.abs() + b.abs() + c.abs())
}

struct Builder<'a> {
    dim: usize,
    leaf_size: usize,
    ids: &'a [PatchId],
    coords: &'a [f64],
    nodes: Vec<BallNode>,
    centroids: Vec<f64>,
}

impl Builder<'_> {
    fn row(&self, p: usize) -> &[f64] {
        &self.coords[p * self.dim..(p + 1) * self.dim]
    }

    /// Builds the subtree over `perm` (positions `offset..offset+len`),
    /// returning its node index.
    fn build(&mut self, perm: &mut [usize], offset: usize) -> u32 {
        let n = perm.len();
        let mut centroid = vec![0.0; self.dim];
        for &p in perm.iter() {
            for (c, &x) in centroid.iter_mut().zip(self.row(p)) {
                *c += x;
            }
        }
        for c in &mut centroid {
            *c /= n as f64;
        }
        let radius = perm.iter().map(|&p| euclidean(self.row(p), &centroid)).fold(0.0, f64::max);

        let at = self.nodes.len();
        self.nodes.push(BallNode {
            start: offset as u32,
            end: (offset + n) as u32,
            radius,
            left: NONE,
            right: NONE,
        });
        self.centroids.extend_from_slice(&centroid);

        if n <= self.leaf_size {
            return at as u32;
        }
        let (split_dim, spread) = (0..self.dim)
            .map(|d| {
                let (lo, hi) = perm.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
                    let x = self.coords[p * self.dim + d];
                    (lo.min(x), hi.max(x))
                });
                (d, hi - lo)
            })
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        if !(spread > 0.0) {
            return at as u32;
        }

        let key = |p: usize| self.coords[p * self.dim + split_dim];
        perm.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(self.ids[a].cmp(&self.ids[b])).then(a.cmp(&b)));
        let median = key(perm[(n - 1) / 2]);
        let mut mid = perm.partition_point(|&p| key(p) <= median);
        if mid == n {
            mid = perm.partition_point(|&p| key(p) < median);
        }
        let (lo, hi) = perm.split_at_mut(mid);
        let left = self.build(lo, offset);
        let right = self.build(hi, offset + mid);
        self.nodes[at].left = left;
        self.nodes[at].right = right;
        at as u32
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    dist: f64,
    id: PatchId,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.id.cmp(&other.id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree(points: &[[f64; 2]], leaf: usize) -> BallTree {
        BallTree::build(points.iter().enumerate().map(|(i, p)| (i as u64, &p[..])), leaf).unwrap()
    }

    #[test]
    fn within_small() {
        let t = tree(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [5.0, 5.0]], 1);
        assert_eq!(t.within(&[0.0, 0.0], 1.5).unwrap(), vec![0, 1, 2]);
        assert_eq!(t.within(&[5.0, 5.0], 0.0).unwrap(), vec![3]);
        assert!(matches!(t.within(&[0.0], 1.0), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn knn_small() {
        let t = tree(&[[0.0, 0.0], [3.0, 0.0], [0.0, 4.0]], 1);
        assert_eq!(t.knn(&[0.0, 0.0], 2).unwrap(), vec![(0, 0.0), (1, 3.0)]);
        assert_eq!(t.knn(&[0.0, 0.0], 3).unwrap().len(), 3);
        assert!(matches!(t.knn(&[0.0, 0.0], 4), Err(Error::KTooLarge { .. })));
    }

    #[test]
    fn knn_ties_by_id() {
        let t = tree(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]], 1);
        let got = t.knn(&[0.0, 0.0], 4).unwrap();
        assert_eq!(got.iter().map(|p| p.0).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn degenerate_inputs() {
        let one = tree(&[[2.0, 3.0]], 32);
        assert_eq!(one.node_count(), 1);
        assert_eq!(one.node(0).radius, 0.0);

        let same = tree(&[[1.0, 1.0]; 100], 4);
        assert_eq!(same.node_count(), 1);
        assert_eq!(same.node(0).radius, 0.0);
        assert_eq!(same.within(&[1.0, 1.0], 0.0).unwrap().len(), 100);

        assert_eq!(BallTree::build(core::iter::empty(), 4).unwrap_err(), Error::EmptyInput);
        let mixed = [(0u64, &[1.0, 2.0][..]), (1, &[1.0][..])];
        assert!(matches!(BallTree::build(mixed, 4), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn median_split_with_ties() {
        // many points share the median coordinate; both halves must be non-empty
        let pts: Vec<[f64; 2]> = (0..40).map(|i| [if i < 30 { 1.0 } else { 2.0 }, 0.0]).collect();
        let t = tree(&pts, 4);
        let (l, r) = t.node(0).children.unwrap();
        assert!(!t.node(l).points.is_empty() && !t.node(r).points.is_empty());
    }

    #[test]
    fn nearest_within_prefers_smaller_id_on_ties() {
        let t = tree(&[[1.0, 0.0], [-1.0, 0.0], [9.0, 9.0]], 1);
        assert_eq!(t.nearest_within(&[0.0, 0.0], 1.0).unwrap(), Some((0, 1.0)));
        assert_eq!(t.nearest_within(&[0.0, 0.0], 0.5).unwrap(), None);
    }
}
