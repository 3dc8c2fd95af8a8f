use alloc::vec::Vec;

use super::balltree::{BallTree, SearchStats, DEFAULT_LEAF_SIZE};
use crate::error::{Error, Result};
use crate::metric::euclidean;
use crate::patch::PatchId;

const TAIL: usize = 32;

/// Insert-only exact radius index built from frozen Ball-trees.
///
/// Points land in a linear tail buffer. When the tail fills it is merged
/// with every occupied level below the first empty one (a binary counter),
/// so level `i` always holds `TAIL * 2^i` points and inserts cost amortized
/// `O(log n)` rebuilds.
#[derive(Debug, Clone, Default)]
pub struct GrowableBallSet {
    dim: Option<usize>,
    tail_ids: Vec<PatchId>,
    tail: Vec<f64>,
    levels: Vec<Option<Level>>,
    len: usize,
}

#[derive(Debug, Clone)]
struct Level {
    tree: BallTree,
    ids: Vec<PatchId>,
    coords: Vec<f64>,
}

impl GrowableBallSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn insert(&mut self, id: PatchId, v: &[f64]) -> Result<()> {
        let d = *self.dim.get_or_insert(v.len());
        if d != v.len() {
            return Err(Error::DimensionMismatch { expected: d, found: v.len() });
        }
        self.tail_ids.push(id);
        self.tail.extend_from_slice(v);
        self.len += 1;
        if self.tail_ids.len() >= TAIL {
            self.flush()?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        let d = self.dim.unwrap_or(0);
        let mut ids = core::mem::take(&mut self.tail_ids);
        let mut coords = core::mem::take(&mut self.tail);
        let mut slot = 0;
        while let Some(Some(level)) = self.levels.get_mut(slot).map(Option::take) {
            ids.extend_from_slice(&level.ids);
            coords.extend_from_slice(&level.coords);
            slot += 1;
        }
        let tree = BallTree::from_flat(d, ids.clone(), coords.clone(), DEFAULT_LEAF_SIZE)?;
        if slot == self.levels.len() {
            self.levels.push(None);
        }
        self.levels[slot] = Some(Level { tree, ids, coords });
        Ok(())
    }

    fn check(&self, q: &[f64]) -> Result<()> {
        match self.dim {
            Some(d) if d != q.len() => Err(Error::DimensionMismatch { expected: d, found: q.len() }),
            _ => Ok(()),
        }
    }

    /// Ids within `r` of `q`, ascending.
    pub fn within(&self, q: &[f64], r: f64) -> Result<Vec<PatchId>> {
        self.check(q)?;
        let mut out = Vec::new();
        let mut stats = SearchStats::default();
        for level in self.levels.iter().flatten() {
            level.tree.for_each_within(q, r, &mut stats, |id, _| out.push(id));
        }
        for (i, &id) in self.tail_ids.iter().enumerate() {
            if euclidean(q, self.tail_row(i)) <= r {
                out.push(id);
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    /// Closest point within `r`; ties go to the smaller id.
    pub fn nearest_within(&self, q: &[f64], r: f64) -> Result<Option<(PatchId, f64)>> {
        self.check(q)?;
        let mut best: Option<(PatchId, f64)> = None;
        let mut offer = |id: PatchId, d: f64| {
            if d <= r && best.is_none_or(|(bid, bd)| (d, id) < (bd, bid)) {
                best = Some((id, d));
            }
        };
        for level in self.levels.iter().flatten() {
            if let Some((id, d)) = level.tree.nearest_within(q, r)? {
                offer(id, d);
            }
        }
        for (i, &id) in self.tail_ids.iter().enumerate() {
            offer(id, euclidean(q, self.tail_row(i)));
        }
        Ok(best)
    }

    fn tail_row(&self, i: usize) -> &[f64] {
        let d = self.dim.unwrap_or(0);
        &self.tail[i * d..(i + 1) * d]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_linear_scan() {
        let mut set = GrowableBallSet::new();
        let mut all = Vec::new();
        for i in 0..300u64 {
            let v = [(i % 17) as f64, (i % 7) as f64 * 0.5];
            set.insert(i, &v).unwrap();
            all.push(v);
            if i % 37 == 0 {
                let q = [3.0, 1.0];
                let want: Vec<u64> = all
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| euclidean(&q, &p[..]) <= 2.0)
                    .map(|(j, _)| j as u64)
                    .collect();
                assert_eq!(set.within(&q, 2.0).unwrap(), want);
            }
        }
        assert_eq!(set.len(), 300);
        assert_eq!(set.nearest_within(&[3.0, 1.0], 0.0).unwrap(), Some((37, 0.0)));
        assert!(set.insert(999, &[1.0]).is_err());
    }
}
