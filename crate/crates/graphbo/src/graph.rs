//! Weighted undirected graphs, synthetic generators, node objectives, and
//! edge-list persistence.
//!
//! Graphs are dense symmetric matrices with a zero diagonal and nonnegative
//! finite weights; the experiment scale (n up to a few thousand) keeps dense
//! storage comfortable and makes the spectral routines straightforward.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::linalg;
use crate::rng;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("adjacency must be square, symmetric, zero-diagonal, nonnegative and finite: {0}")]
    InvalidAdjacency(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("power iteration did not converge within {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        /// Last iterate, so callers can inspect or accept it explicitly.
        last: Vec<f64>,
    },
}

/// Weighted undirected graph over nodes `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    adj: DMatrix<f64>,
}

impl Graph {
    /// Build a graph from a dense adjacency matrix, validating symmetry,
    /// zero diagonal, nonnegativity and finiteness.
    pub fn from_adjacency(adj: DMatrix<f64>) -> Result<Self, GraphError> {
        if adj.nrows() != adj.ncols() {
            return Err(GraphError::InvalidAdjacency(format!(
                "{}x{} is not square",
                adj.nrows(),
                adj.ncols()
            )));
        }
        let n = adj.nrows();
        for i in 0..n {
            if adj[(i, i)] != 0.0 {
                return Err(GraphError::InvalidAdjacency(format!(
                    "nonzero diagonal at node {i}"
                )));
            }
            for j in (i + 1)..n {
                let w = adj[(i, j)];
                if !w.is_finite() || w < 0.0 {
                    return Err(GraphError::InvalidAdjacency(format!(
                        "weight ({i},{j}) = {w}"
                    )));
                }
                if w != adj[(j, i)] {
                    return Err(GraphError::InvalidAdjacency(format!(
                        "asymmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(Self { n, adj })
    }

    /// Empty graph on `n` nodes.
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            adj: DMatrix::zeros(n, n),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adj
    }

    pub fn weight(&self, u: usize, v: usize) -> f64 {
        self.adj[(u, v)]
    }

    /// Weighted degree (row sum).
    pub fn degree(&self, u: usize) -> f64 {
        self.adj.row(u).sum()
    }

    /// Number of incident edges with nonzero weight.
    pub fn unweighted_degree(&self, u: usize) -> usize {
        (0..self.n).filter(|&v| self.adj[(u, v)] != 0.0).count()
    }

    /// Neighbors of `u` (nonzero weight), ascending.
    pub fn neighbors(&self, u: usize) -> Vec<usize> {
        (0..self.n).filter(|&v| self.adj[(u, v)] != 0.0).collect()
    }

    /// Edges `(i, j, w)` with `i < j` and `w != 0`, lexicographic.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let w = self.adj[(i, j)];
                if w != 0.0 {
                    out.push((i, j, w));
                }
            }
        }
        out
    }

    pub fn num_edges(&self) -> usize {
        let mut count = 0;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if self.adj[(i, j)] != 0.0 {
                    count += 1;
                }
            }
        }
        count
    }

    /// Combinatorial Laplacian `L = D - A` (weighted).
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = -self.adj.clone();
        for i in 0..self.n {
            l[(i, i)] = self.degree(i);
        }
        l
    }

    /// Connected components over nonzero weights; returns the component id of
    /// every node, ids numbered by first appearance.
    pub fn components(&self) -> Vec<usize> {
        let mut comp = vec![usize::MAX; self.n];
        let mut next = 0;
        for start in 0..self.n {
            if comp[start] != usize::MAX {
                continue;
            }
            comp[start] = next;
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for v in self.neighbors(u) {
                    if comp[v] == usize::MAX {
                        comp[v] = next;
                        queue.push_back(v);
                    }
                }
            }
            next += 1;
        }
        comp
    }

    fn set_edge(&mut self, u: usize, v: usize, w: f64) {
        self.adj[(u, v)] = w;
        self.adj[(v, u)] = w;
    }
}

/// A scalar objective over the nodes of one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSignal {
    values: Vec<f64>,
}

impl NodeSignal {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, u: usize) -> f64 {
        self.values[u]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Maximum value and its node, smallest index on ties.
    pub fn argmax(&self) -> (usize, f64) {
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, &v) in self.values.iter().enumerate() {
            if v > best.1 {
                best = (i, v);
            }
        }
        best
    }
}

/// Stochastic block model with the given block sizes: an edge between nodes
/// in the same block appears with probability `p_in`, across blocks with
/// `p_out`; present edges get independent Uniform[0,1] weights.
pub fn sbm_generate(
    block_sizes: &[usize],
    p_in: f64,
    p_out: f64,
    seed: u64,
) -> Result<Graph, GraphError> {
    for &p in &[p_in, p_out] {
        if !(0.0..=1.0).contains(&p) {
            return Err(GraphError::InvalidParameter(format!(
                "edge probability {p} outside [0,1]"
            )));
        }
    }
    let n: usize = block_sizes.iter().sum();
    let mut block_of = Vec::with_capacity(n);
    for (b, &size) in block_sizes.iter().enumerate() {
        block_of.extend(std::iter::repeat(b).take(size));
    }
    let mut g = Graph::empty(n);
    let mut r = rng::from_seed(seed);
    let unif = Uniform::new(0.0f64, 1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if block_of[i] == block_of[j] { p_in } else { p_out };
            if r.gen::<f64>() < p {
                g.set_edge(i, j, unif.sample(&mut r));
            }
        }
    }
    Ok(g)
}

/// Random dot-product graph: latent vectors drawn uniformly on the
/// nonnegative part of the unit sphere in `R^latent_dim`, edge weight
/// `<x_i, x_j>` (in [0,1]), zero diagonal. Off the diagonal the adjacency
/// agrees with the rank-`latent_dim` Gram matrix of the latents.
pub fn rdpg_generate(n: usize, latent_dim: usize, seed: u64) -> Result<Graph, GraphError> {
    rdpg_generate_with_latents(n, latent_dim, seed).map(|(g, _)| g)
}

/// [`rdpg_generate`] variant that also returns the latent matrix (n x r).
pub fn rdpg_generate_with_latents(
    n: usize,
    latent_dim: usize,
    seed: u64,
) -> Result<(Graph, DMatrix<f64>), GraphError> {
    if latent_dim == 0 {
        return Err(GraphError::InvalidParameter("latent_dim must be >= 1".into()));
    }
    let mut r = rng::from_seed(seed);
    let mut latents = DMatrix::zeros(n, latent_dim);
    for i in 0..n {
        loop {
            let mut norm2 = 0.0;
            for k in 0..latent_dim {
                let z: f64 = r.sample(StandardNormal);
                let z = z.abs();
                latents[(i, k)] = z;
                norm2 += z * z;
            }
            if norm2 > 1e-24 {
                let inv = norm2.sqrt().recip();
                for k in 0..latent_dim {
                    latents[(i, k)] *= inv;
                }
                break;
            }
        }
    }
    let mut g = Graph::empty(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let w: f64 = latents.row(i).dot(&latents.row(j));
            // Unit latents with nonnegative coordinates put <x_i,x_j> in
            // [0,1]; clamp only to absorb float round-off.
            g.set_edge(i, j, w.clamp(0.0, 1.0));
        }
    }
    Ok((g, latents))
}

/// Preferential-attachment (power-law degree) generator: a clique seeds the
/// first `m+1` nodes, then every new node attaches to `m` distinct existing
/// nodes with probability proportional to current degree. Present edges get
/// Uniform[0,1] weights.
pub fn power_law_generate(n: usize, m: usize, seed: u64) -> Result<Graph, GraphError> {
    if m == 0 {
        return Err(GraphError::InvalidParameter(
            "m (edges per new node) must be >= 1".into(),
        ));
    }
    if n == 0 {
        return Err(GraphError::InvalidParameter("n must be >= 1".into()));
    }
    let mut g = Graph::empty(n);
    let mut r = rng::from_seed(seed);
    let unif = Uniform::new(0.0f64, 1.0);
    // Endpoint multiset for degree-proportional sampling.
    let mut endpoints: Vec<usize> = Vec::new();
    let clique = n.min(m + 1);
    for i in 0..clique {
        for j in (i + 1)..clique {
            g.set_edge(i, j, unif.sample(&mut r));
            endpoints.push(i);
            endpoints.push(j);
        }
    }
    for v in clique..n {
        let mut targets: Vec<usize> = Vec::with_capacity(m);
        let want = m.min(v);
        while targets.len() < want {
            let candidate = if endpoints.is_empty() {
                r.gen_range(0..v)
            } else {
                endpoints[r.gen_range(0..endpoints.len())]
            };
            if candidate != v && !targets.contains(&candidate) {
                targets.push(candidate);
            }
        }
        for &t in &targets {
            g.set_edge(v, t, unif.sample(&mut r));
            endpoints.push(v);
            endpoints.push(t);
        }
    }
    Ok(g)
}

/// Smooth synthetic objective: a random combination of the `k` lowest
/// eigenvectors of the combinatorial Laplacian `L = D - A`, with independent
/// standard normal coefficients. If the graph is disconnected the signal is
/// built on the largest component (a warning is logged) and is zero
/// elsewhere.
pub fn bandlimited_signal(g: &Graph, k: usize, seed: u64) -> Result<NodeSignal, GraphError> {
    let comp = g.components();
    let num_comp = comp.iter().copied().max().map_or(0, |m| m + 1);
    let nodes: Vec<usize> = if num_comp <= 1 {
        (0..g.n()).collect()
    } else {
        let mut counts = vec![0usize; num_comp];
        for &c in &comp {
            counts[c] += 1;
        }
        let largest = counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        log::warn!(
            "bandlimited_signal: graph has {} components; restricting to largest ({} of {} nodes)",
            num_comp,
            counts[largest],
            g.n()
        );
        (0..g.n()).filter(|&u| comp[u] == largest).collect()
    };
    if k == 0 || k > nodes.len() {
        return Err(GraphError::InvalidParameter(format!(
            "bandwidth k = {k} outside 1..={}",
            nodes.len()
        )));
    }
    // Laplacian restricted to the chosen component.
    let nc = nodes.len();
    let mut sub = DMatrix::zeros(nc, nc);
    for (a, &u) in nodes.iter().enumerate() {
        for (b, &v) in nodes.iter().enumerate() {
            if a != b {
                sub[(a, b)] = -g.weight(u, v);
            }
        }
    }
    for a in 0..nc {
        let deg: f64 = (0..nc).filter(|&b| b != a).map(|b| -sub[(a, b)]).sum();
        sub[(a, a)] = deg;
    }
    let eig = linalg::sym_eigen(&sub);
    let mut r = rng::from_seed(seed);
    let mut values = vec![0.0f64; g.n()];
    for i in 0..k {
        let alpha: f64 = r.sample(StandardNormal);
        for (a, &u) in nodes.iter().enumerate() {
            values[u] += alpha * eig.vectors[(a, i)];
        }
    }
    Ok(NodeSignal::new(values))
}

/// PageRank by power iteration on the weighted transition matrix with uniform
/// teleport. Zero-degree nodes distribute their mass uniformly. Converges
/// when the L1 change drops below `tol`; non-convergence is an error that
/// carries the last iterate.
pub fn pagerank(
    g: &Graph,
    damping: f64,
    tol: f64,
    max_iter: usize,
) -> Result<NodeSignal, GraphError> {
    if !(0.0..1.0).contains(&damping) {
        return Err(GraphError::InvalidParameter(format!(
            "damping {damping} outside [0,1)"
        )));
    }
    let n = g.n();
    if n == 0 {
        return Err(GraphError::InvalidParameter("empty graph".into()));
    }
    let degrees: Vec<f64> = (0..n).map(|u| g.degree(u)).collect();
    let nf = n as f64;
    let mut x = DVector::from_element(n, 1.0 / nf);
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let mut next = DVector::from_element(n, (1.0 - damping) / nf);
        let mut dangling = 0.0;
        for u in 0..n {
            if degrees[u] > 0.0 {
                let scale = damping * x[u] / degrees[u];
                for v in 0..n {
                    let w = g.weight(u, v);
                    if w != 0.0 {
                        next[v] += scale * w;
                    }
                }
            } else {
                dangling += x[u];
            }
        }
        if dangling > 0.0 {
            let spread = damping * dangling / nf;
            for v in 0..n {
                next[v] += spread;
            }
        }
        residual = (&next - &x).abs().sum();
        x = next;
        if residual < tol {
            return Ok(NodeSignal::new(x.iter().copied().collect()));
        }
    }
    Err(GraphError::NonConvergence {
        iterations: max_iter,
        residual,
        last: x.iter().copied().collect(),
    })
}

/// A graph loaded from an edge list, with the id mapping used to densify
/// node labels and a count of dropped self-loops.
#[derive(Debug, Clone)]
pub struct LoadedGraph {
    pub graph: Graph,
    /// `node_ids[i]` is the original label of dense node `i`. Identity when
    /// the input ids were already `0..n-1`.
    pub node_ids: Vec<u64>,
    pub dropped_self_loops: usize,
}

/// Parse a whitespace-separated edge list (`u v [w]`, default weight 1.0).
/// Lines starting with `#` and blank lines are skipped. Self-loops are
/// dropped (counted); duplicate pairs keep the last weight. Non-contiguous
/// ids are remapped to dense `0..n-1` with the mapping preserved. `n_hint`
/// forces a minimum node count (useful for isolated trailing nodes).
pub fn load_edge_list(path: &Path, n_hint: Option<usize>) -> Result<LoadedGraph, GraphError> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut raw: Vec<(u64, u64, f64)> = Vec::new();
    let mut dropped = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tok = trimmed.split_whitespace();
        let u: u64 = tok
            .next()
            .ok_or_else(|| GraphError::Parse {
                line: lineno,
                msg: "missing source node".into(),
            })?
            .parse()
            .map_err(|e| GraphError::Parse {
                line: lineno,
                msg: format!("bad node id: {e}"),
            })?;
        let v: u64 = tok
            .next()
            .ok_or_else(|| GraphError::Parse {
                line: lineno,
                msg: "missing target node".into(),
            })?
            .parse()
            .map_err(|e| GraphError::Parse {
                line: lineno,
                msg: format!("bad node id: {e}"),
            })?;
        let w: f64 = match tok.next() {
            Some(s) => s.parse().map_err(|e| GraphError::Parse {
                line: lineno,
                msg: format!("bad weight: {e}"),
            })?,
            None => 1.0,
        };
        if tok.next().is_some() {
            return Err(GraphError::Parse {
                line: lineno,
                msg: "expected at most 3 fields (u v [w])".into(),
            });
        }
        if !w.is_finite() || w < 0.0 {
            return Err(GraphError::Parse {
                line: lineno,
                msg: format!("weight {w} must be finite and nonnegative"),
            });
        }
        if u == v {
            dropped += 1;
            continue;
        }
        raw.push((u, v, w));
    }
    // Dense id assignment: keep labels as-is when they already form
    // 0..max, otherwise remap sorted distinct labels.
    let mut ids: Vec<u64> = raw
        .iter()
        .flat_map(|&(u, v, _)| [u, v])
        .collect();
    ids.sort_unstable();
    ids.dedup();
    let contiguous = ids
        .last()
        .map_or(true, |&max| (max as usize) + 1 == ids.len());
    let (node_ids, lookup): (Vec<u64>, std::collections::HashMap<u64, usize>) = if contiguous {
        let n = ids.len().max(n_hint.unwrap_or(0));
        let labels: Vec<u64> = (0..n as u64).collect();
        let map = labels.iter().map(|&l| (l, l as usize)).collect();
        (labels, map)
    } else {
        let map = ids.iter().enumerate().map(|(i, &l)| (l, i)).collect();
        let mut labels = ids.clone();
        if let Some(hint) = n_hint {
            // Pad with fresh labels if the hint asks for more nodes.
            let mut next = labels.last().map_or(0, |&m| m + 1);
            while labels.len() < hint {
                labels.push(next);
                next += 1;
            }
        }
        (labels, map)
    };
    let n = node_ids.len();
    let mut g = Graph::empty(n);
    for (u, v, w) in raw {
        let (du, dv) = (lookup[&u], lookup[&v]);
        g.set_edge(du, dv, w);
    }
    Ok(LoadedGraph {
        graph: g,
        node_ids,
        dropped_self_loops: dropped,
    })
}

/// Write `g` as a `u v w` edge list (original labels when provided);
/// round-trips with [`load_edge_list`].
pub fn save_edge_list(
    g: &Graph,
    path: &Path,
    node_ids: Option<&[u64]>,
) -> Result<(), GraphError> {
    let mut out = String::new();
    for (i, j, w) in g.edges() {
        let (a, b) = match node_ids {
            Some(ids) => (ids[i], ids[j]),
            None => (i as u64, j as u64),
        };
        writeln!(out, "{a} {b} {w}").expect("string write");
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}
