//! Partially observed adjacency: the set Ω of queried node pairs and their
//! revealed weights (zero when the pair turned out to be a non-edge).
//!
//! Iteration order is insertion order, membership is O(1), and per-node
//! pattern degrees (counts of incident observed pairs) are maintained
//! incrementally — the balanced edge sampler leans on all three.

use std::collections::HashMap;

use crate::graph::Graph;

/// Canonical form of an unordered pair, `i < j`.
#[inline]
pub fn canonical_pair(u: usize, v: usize) -> (usize, usize) {
    if u < v {
        (u, v)
    } else {
        (v, u)
    }
}

/// Number of unordered pairs on `n` nodes.
#[inline]
pub fn total_pairs(n: usize) -> usize {
    n * (n - 1) / 2
}

/// Map a linear index `k` in `0..total_pairs(n)` to the `k`-th pair in
/// lexicographic order. Used for uniform pair sampling without materializing
/// the pair list.
pub fn pair_from_index(n: usize, k: usize) -> (usize, usize) {
    debug_assert!(k < total_pairs(n));
    // Row i owns (n-1-i) pairs; walk rows. O(n) worst case, fine at our
    // scale and branch-predictable.
    let mut i = 0usize;
    let mut remaining = k;
    loop {
        let row = n - 1 - i;
        if remaining < row {
            return (i, i + 1 + remaining);
        }
        remaining -= row;
        i += 1;
    }
}

/// Observed node pairs with values and pattern-degree bookkeeping.
#[derive(Debug, Clone)]
pub struct ObservationSet {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
    index: HashMap<(usize, usize), usize>,
    degrees: Vec<usize>,
}

impl ObservationSet {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            entries: Vec::new(),
            index: HashMap::new(),
            degrees: vec![0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of observed pairs |Ω|.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Record an observation. Returns true when the pair is new; observing a
    /// pair again overwrites its value (last write wins) without touching
    /// degrees. Panics on self-pairs or out-of-range nodes.
    pub fn insert(&mut self, u: usize, v: usize, w: f64) -> bool {
        assert!(u != v, "self-pairs are never observed");
        assert!(u < self.n && v < self.n, "node out of range");
        let key = canonical_pair(u, v);
        match self.index.get(&key) {
            Some(&slot) => {
                self.entries[slot].2 = w;
                false
            }
            None => {
                self.index.insert(key, self.entries.len());
                self.entries.push((key.0, key.1, w));
                self.degrees[u] += 1;
                self.degrees[v] += 1;
                true
            }
        }
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        self.index.contains_key(&canonical_pair(u, v))
    }

    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        self.index
            .get(&canonical_pair(u, v))
            .map(|&slot| self.entries[slot].2)
    }

    /// Observed pairs in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries.iter().copied()
    }

    /// The `k`-th observation in insertion order (for uniform batch draws).
    pub fn entry(&self, k: usize) -> (usize, usize, f64) {
        self.entries[k]
    }

    /// Pattern degree: number of observed pairs incident to `u`.
    pub fn degree(&self, u: usize) -> usize {
        self.degrees[u]
    }

    /// Mean pattern degree `2|Ω|/n`.
    pub fn mean_degree(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            2.0 * self.len() as f64 / self.n as f64
        }
    }

    /// Unobserved pairs remaining.
    pub fn remaining(&self) -> usize {
        total_pairs(self.n) - self.len()
    }

    /// 0/1 observation pattern as a dense symmetric matrix.
    pub fn pattern_matrix(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for &(u, v, _) in &self.entries {
            m[(u, v)] = 1.0;
            m[(v, u)] = 1.0;
        }
        m
    }

    /// Observed values as a dense symmetric matrix (unobserved pairs zero).
    pub fn value_matrix(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for &(u, v, w) in &self.entries {
            m[(u, v)] = w;
            m[(v, u)] = w;
        }
        m
    }
}

/// Observe the listed pairs of `g`: the result holds the true weight of each
/// pair, zero included. Duplicate pairs collapse; self-pairs are ignored.
pub fn project_observed(g: &Graph, pairs: &[(usize, usize)]) -> ObservationSet {
    let mut obs = ObservationSet::new(g.n());
    for &(u, v) in pairs {
        if u == v {
            continue;
        }
        obs.insert(u, v, g.weight(u, v));
    }
    obs
}
