//! Euclidean distance shared by the Ball-tree, joins and deduplication.

/// `||a - b||₂`. Panics in debug builds on length mismatch.
#[inline]
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(squared_euclidean(a, b))
}

#[inline]
pub fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}
