//! Deterministic reductions.
//!
//! The tree shape depends only on the slice length, so the rounding is the same
//! for any number of worker threads.

const LEAF: usize = 256;

/// Pairwise (tree) sum with a fixed split point at the midpoint.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= LEAF {
        let mut s = 0.0;
        for v in values {
            s += v;
        }
        return s;
    }
    let (lo, hi) = values.split_at(values.len() / 2);
    let (a, b) = rayon::join(|| pairwise_sum(lo), || pairwise_sum(hi));
    a + b
}

/// Evaluates `f` on every index in order and reduces with [`pairwise_sum`].
pub fn sum_map<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    use rayon::prelude::*;
    let v: Vec<f64> = (0..len).into_par_iter().map(f).collect();
    pairwise_sum(&v)
}

/// Componentwise pairwise sum of fixed-size vectors.
pub fn sum_map_n<const K: usize, F>(len: usize, f: F) -> [f64; K]
where
    F: Fn(usize) -> [f64; K] + Sync + Send,
{
    use rayon::prelude::*;
    let v: Vec<[f64; K]> = (0..len).into_par_iter().map(f).collect();
    let mut out = [0.0; K];
    let mut column = vec![0.0; len];
    for (k, o) in out.iter_mut().enumerate() {
        for (c, row) in column.iter_mut().zip(&v) {
            *c = row[k];
        }
        *o = pairwise_sum(&column);
    }
    out
}
