//! Low-rank spectral completion of a partially observed adjacency.
//!
//! The surrogate adjacency is parameterized by its spectral factors,
//! `A~ = Q diag(gamma) Q^T`, where the columns of `Q` are produced by a
//! shared node-representation network and `gamma` carries signed spectral
//! weights under an l1 (nuclear-norm style) penalty. Training minimizes a
//! joint mini-batch objective with four terms:
//!
//! * `L1`: squared error of surrogate entries against observed pairs, plus
//!   `tau * sum_i |gamma_i|`;
//! * `L2`: Dirichlet smoothness of the embedding columns `F` under the
//!   surrogate's normalized Laplacian, estimated from pairs drawn by the
//!   rank-one mixture sampler and scaled by the surrogate's total mass;
//! * two orthonormality penalties pushing `Q` and `F` toward orthonormal
//!   columns, estimated on uniform node batches.
//!
//! `gamma` takes gradient steps on the smooth part only; the l1 penalty is
//! applied exactly through a proximal soft-threshold after each step.
//!
//! All gradients are analytic (and finite-difference checked, see
//! [`gradient_check`]). The `L2` term's mass prefactor and degree estimates
//! parameterize the pair-sampling measure, so they are frozen per epoch and
//! the smoothness gradient flows into `F` alone (the private `L2Context`
//! carries the rationale).

pub mod model;

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::observation::ObservationSet;
use crate::par;
use crate::rng;
pub use model::{Activation, FlatAdam, ForwardCache, Layer, ModelGrad, NodeRepresentationModel};

#[derive(Debug, Error)]
pub enum CompletionError {
    #[error("gamma carries no mass; the rank-one mixture distribution is undefined")]
    DegenerateGamma,
    #[error("training diverged: non-finite loss persisted after halving learning rates")]
    Diverged,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Spectral surrogate of the adjacency: `A~(u,v) = sum_i gamma_i q_i(u) q_i(v)`
/// with `q(u)` the output of the node-representation network.
#[derive(Debug, Clone)]
pub struct SpectralSurrogate {
    pub gamma: DVector<f64>,
    pub q_model: NodeRepresentationModel,
}

impl SpectralSurrogate {
    /// Fresh surrogate with `gamma_i ~ N(0, 0.1^2)`.
    pub fn new<R: Rng>(n: usize, d1: usize, hidden: &[usize], rng: &mut R) -> Self {
        let q_model = NodeRepresentationModel::new(n, hidden, d1, rng);
        let gamma = DVector::from_fn(d1, |_, _| {
            let z: f64 = rng.sample(StandardNormal);
            z * 0.1
        });
        Self { gamma, q_model }
    }

    pub fn n(&self) -> usize {
        self.q_model.n()
    }

    pub fn d1(&self) -> usize {
        self.gamma.len()
    }

    /// All component outputs as an n x d1 matrix.
    pub fn q_matrix(&self) -> DMatrix<f64> {
        self.q_model.forward_all()
    }

    /// Dense surrogate adjacency `Q diag(gamma) Q^T` (diagonal included).
    pub fn dense(&self) -> DMatrix<f64> {
        let q = self.q_matrix();
        let mut scaled = q.clone();
        for i in 0..self.d1() {
            let g = self.gamma[i];
            scaled.column_mut(i).iter_mut().for_each(|x| *x *= g);
        }
        &scaled * q.transpose()
    }
}

/// Surrogate entry `A~(u,v)`; `O(d1)` plus two network forwards.
pub fn surrogate_entry(s: &SpectralSurrogate, u: usize, v: usize) -> f64 {
    let qu = s.q_model.forward(u);
    let qv = s.q_model.forward(v);
    entry_from_rows(&s.gamma, qu.as_slice(), qv.as_slice())
}

#[inline]
fn entry_from_rows(gamma: &DVector<f64>, qu: &[f64], qv: &[f64]) -> f64 {
    let mut e = 0.0;
    for i in 0..gamma.len() {
        e += gamma[i] * qu[i] * qv[i];
    }
    e
}

/// Mini-batch observed-fit loss: mean squared error of surrogate entries over
/// the batch plus `tau * sum_i |gamma_i|`. An empty batch contributes the
/// penalty alone.
pub fn batch_loss_l1(s: &SpectralSurrogate, batch: &[(usize, usize, f64)], tau: f64) -> f64 {
    let penalty = tau * s.gamma.iter().map(|g| g.abs()).sum::<f64>();
    if batch.is_empty() {
        return penalty;
    }
    let mut fit = 0.0;
    for &(u, v, a) in batch {
        let r = surrogate_entry(s, u, v) - a;
        fit += r * r;
    }
    fit / batch.len() as f64 + penalty
}

/// Proximal operator of `t * |.|`: soft threshold each component of `gamma`.
pub fn soft_threshold_gamma(gamma: &DVector<f64>, threshold: f64) -> DVector<f64> {
    assert!(threshold >= 0.0, "threshold must be nonnegative");
    gamma.map(|g| {
        let shrunk = g.abs() - threshold;
        if shrunk > 0.0 {
            shrunk * g.signum()
        } else {
            0.0
        }
    })
}

/// Orthonormality penalty of a sampled row block `M_B` (batch x d):
/// `|| (n/b) M_B^T M_B - I ||_F^2`, the mini-batch estimate of
/// `||M^T M - I||_F^2` over all `n` rows. An empty batch scores the penalty
/// of the zero Gram matrix, `d`.
pub fn ortho_penalty(m_batch: &DMatrix<f64>, n_total: usize) -> f64 {
    let d = m_batch.ncols();
    let b = m_batch.nrows();
    let mut gram = if b == 0 {
        DMatrix::zeros(d, d)
    } else {
        let scale = n_total as f64 / b as f64;
        m_batch.tr_mul(m_batch) * scale
    };
    for i in 0..d {
        gram[(i, i)] -= 1.0;
    }
    gram.iter().map(|x| x * x).sum()
}

/// Draw `count` node pairs from the rank-one mixture induced by the
/// surrogate: component `i` with probability `|gamma_i| / sum_j |gamma_j|`,
/// then `u` and `v` independently with probability proportional to
/// `|q_i(.)|`. Components whose `q` column is identically zero carry no
/// adjacency mass and are excluded. Errors when no component has mass.
pub fn rank_one_mixture_sample<R: Rng>(
    s: &SpectralSurrogate,
    count: usize,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>, CompletionError> {
    let q = s.q_matrix();
    mixture_sample_from(&s.gamma, &q, count, rng)
}

/// Core of [`rank_one_mixture_sample`] on a precomputed output matrix.
pub fn mixture_sample_from<R: Rng>(
    gamma: &DVector<f64>,
    q: &DMatrix<f64>,
    count: usize,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>, CompletionError> {
    let (n, d1) = (q.nrows(), q.ncols());
    // Per-component cumulative |q| tables and mixture weights.
    let mut weight_cum = Vec::with_capacity(d1);
    let mut col_cum: Vec<Vec<f64>> = Vec::with_capacity(d1);
    let mut wsum = 0.0;
    for i in 0..d1 {
        let mut cum = Vec::with_capacity(n);
        let mut acc = 0.0;
        for u in 0..n {
            acc += q[(u, i)].abs();
            cum.push(acc);
        }
        let w = if acc > 0.0 { gamma[i].abs() } else { 0.0 };
        wsum += w;
        weight_cum.push(wsum);
        col_cum.push(cum);
    }
    if wsum <= 0.0 {
        return Err(CompletionError::DegenerateGamma);
    }
    let draw = |cum: &[f64], total: f64, r: f64| -> usize {
        let y = r * total;
        cum.partition_point(|&c| c <= y).min(cum.len() - 1)
    };
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let i = draw(&weight_cum, wsum, rng.gen::<f64>());
        let cum = &col_cum[i];
        let mass = *cum.last().expect("nonzero column");
        let u = draw(cum, mass, rng.gen::<f64>());
        let v = draw(cum, mass, rng.gen::<f64>());
        pairs.push((u, v));
    }
    Ok(pairs)
}

/// Total mass of the surrogate, `sum_uv A~(u,v) = sum_i gamma_i (sum_u q_i(u))^2`.
/// Computed with signs, exactly as the spectral factorization implies.
///
/// Consumers that treat this as the mass of the pair-sampling measure (the
/// smoothness estimator's prefactor) must clamp it at zero: a signed mass
/// would turn the Dirichlet term into a reward for driving `sum_uv A~` down,
/// and the joint objective would be unbounded below. The clamp is a no-op
/// for entrywise-nonnegative surrogates, where the estimator is exact.
pub fn total_mass_from(gamma: &DVector<f64>, q: &DMatrix<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..gamma.len() {
        let col_sum: f64 = q.column(i).sum();
        s += gamma[i] * col_sum * col_sum;
    }
    s
}

/// Number of components with `|gamma_i| > rel_tol * max_j |gamma_j|`.
pub fn effective_rank(gamma: &DVector<f64>, rel_tol: f64) -> usize {
    let max = gamma.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    if max == 0.0 {
        return 0;
    }
    gamma.iter().filter(|g| g.abs() > rel_tol * max).count()
}

/// Relative Frobenius error of the surrogate against a ground-truth graph,
/// compared as graphs: the surrogate's diagonal is zeroed to match the
/// zero-diagonal adjacency convention. NaN when the ground truth is empty.
pub fn surrogate_rel_error(s: &SpectralSurrogate, g: &crate::graph::Graph) -> f64 {
    let mut dense = s.dense();
    for i in 0..dense.nrows() {
        dense[(i, i)] = 0.0;
    }
    let diff = &dense - g.adjacency();
    let denom = g.adjacency().norm();
    if denom == 0.0 {
        f64::NAN
    } else {
        diff.norm() / denom
    }
}

/// Training hyperparameters for the joint completion/embedding objective.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    /// Spectral components of the surrogate.
    pub d1: usize,
    /// Embedding dimension trained against the surrogate Laplacian.
    pub d2: usize,
    /// Hidden widths of the two networks; empty means free-matrix mode.
    pub hidden_q: Vec<usize>,
    pub hidden_f: Vec<usize>,
    pub lr_q: f64,
    pub lr_gamma: f64,
    pub lr_f: f64,
    /// l1 weight on gamma (applied through the proximal step).
    pub tau: f64,
    /// Weight of the smoothness term.
    pub mu2: f64,
    /// Weights of the two orthonormality penalties.
    pub mu_ortho_q: f64,
    pub mu_ortho_f: f64,
    /// Mini-batch sizes: observed pairs, mixture pairs, nodes.
    pub batch_edges: usize,
    pub batch_pairs: usize,
    pub batch_nodes: usize,
    pub epochs_per_round: usize,
    /// Degree estimates are clamped below by this before entering `D^{-1/2}`.
    pub degree_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d1: 20,
            d2: 10,
            hidden_q: vec![64],
            hidden_f: vec![64],
            lr_q: 1e-3,
            lr_gamma: 5e-4,
            lr_f: 1e-3,
            tau: 0.5,
            mu2: 0.5,
            mu_ortho_q: 0.1,
            mu_ortho_f: 0.1,
            batch_edges: 128,
            batch_pairs: 256,
            batch_nodes: 256,
            epochs_per_round: 40,
            degree_floor: 1e-6,
        }
    }
}

/// The jointly trained state: adjacency surrogate plus embedding network.
#[derive(Debug, Clone)]
pub struct JointModel {
    pub surrogate: SpectralSurrogate,
    pub f_model: NodeRepresentationModel,
}

impl JointModel {
    pub fn new(n: usize, cfg: &TrainConfig, seed: u64) -> Self {
        let mut rq = rng::stream(seed, "q-model", 0);
        let surrogate = SpectralSurrogate::new(n, cfg.d1, &cfg.hidden_q, &mut rq);
        let mut rf = rng::stream(seed, "f-model", 0);
        let f_model = NodeRepresentationModel::new(n, &cfg.hidden_f, cfg.d2, &mut rf);
        Self { surrogate, f_model }
    }

    pub fn n(&self) -> usize {
        self.surrogate.n()
    }
}

/// One epoch's sampled batches.
#[derive(Debug, Clone)]
pub struct Batches {
    /// Observed pairs `(u, v, value)` — uniform without replacement from Ω.
    pub edges: Vec<(usize, usize, f64)>,
    /// Mixture pairs (i.i.d.; `u == v` possible and harmless).
    pub pairs: Vec<(usize, usize)>,
    /// Uniform node subset (without replacement) shared by both
    /// orthonormality penalties.
    pub nodes: Vec<usize>,
}

/// Sample an epoch's batches. The mixture batch is empty when gamma carries
/// no mass (the smoothness term is exactly zero in that case).
pub fn sample_batches<R: Rng>(
    model: &JointModel,
    obs: &ObservationSet,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Batches {
    let q = model.surrogate.q_matrix();
    sample_batches_with_q(model, &q, obs, cfg, rng)
}

fn sample_batches_with_q<R: Rng>(
    model: &JointModel,
    q: &DMatrix<f64>,
    obs: &ObservationSet,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Batches {
    let n = model.n();
    let b1 = cfg.batch_edges.min(obs.len());
    let edges: Vec<(usize, usize, f64)> = rand::seq::index::sample(rng, obs.len(), b1)
        .into_iter()
        .map(|k| obs.entry(k))
        .collect();
    let pairs = match mixture_sample_from(&model.surrogate.gamma, q, cfg.batch_pairs, rng) {
        Ok(p) => p,
        Err(CompletionError::DegenerateGamma) => Vec::new(),
        Err(_) => unreachable!("mixture sampling has no other failure mode"),
    };
    let b3 = cfg.batch_nodes.min(n);
    let nodes: Vec<usize> = rand::seq::index::sample(rng, n, b3).into_iter().collect();
    Batches {
        edges,
        pairs,
        nodes,
    }
}

/// Per-epoch loss values (unweighted terms; `total` applies the weights).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLosses {
    pub l1: f64,
    pub l2: f64,
    pub ortho_q: f64,
    pub ortho_f: f64,
    pub total: f64,
}

/// Analytic gradients of the weighted joint loss. `gamma` holds the smooth
/// part only — the l1 penalty is handled by the proximal step (add
/// `tau * sign(gamma)` to recover the total-loss gradient away from zero).
#[derive(Debug)]
pub struct JointGrads {
    pub gamma: DVector<f64>,
    pub q: ModelGrad,
    pub f: ModelGrad,
}

impl JointGrads {
    fn is_finite(&self) -> bool {
        self.gamma.iter().all(|x| x.is_finite()) && self.q.is_finite() && self.f.is_finite()
    }
}

/// Weighted joint loss on fixed batches. The smoothness term's mass
/// prefactor and degrees are those of the model itself (the frozen
/// sampling-measure context the batches are assumed to come from).
pub fn joint_loss(model: &JointModel, batches: &Batches, cfg: &TrainConfig) -> EpochLosses {
    let q = model.surrogate.q_matrix();
    let ctx = L2Context::build(model, &q, cfg);
    joint_loss_parts(model, &q, &ctx, batches, cfg).0
}

/// Weighted joint loss and its analytic gradients on fixed batches.
pub fn joint_loss_and_grad(
    model: &JointModel,
    batches: &Batches,
    cfg: &TrainConfig,
) -> (EpochLosses, JointGrads) {
    let q_caches: Vec<ForwardCache> =
        par::map_range(model.n(), |u| model.surrogate.q_model.forward_cached(u));
    let q = matrix_from_caches(&q_caches, model.surrogate.d1());
    let ctx = L2Context::build(model, &q, cfg);
    joint_loss_and_grad_with(model, &q, &q_caches, &ctx, batches, cfg)
}

fn matrix_from_caches(caches: &[ForwardCache], dim: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(caches.len(), dim);
    for (u, c) in caches.iter().enumerate() {
        m.row_mut(u).tr_copy_from(c.output());
    }
    m
}

/// The smoothness term's sampling-measure constants: the clamped total mass
/// `max(sum_uv A~, 0)` and the floored degree vector.
///
/// Both quantities parameterize the pair-sampling measure p_A~ the batch was
/// drawn from, so they are frozen per batch: the loss and its gradient treat
/// them as constants of the surrogate that produced the batch, and the
/// smoothness gradient flows into F alone. Differentiating through them
/// instead would reward shrinking the total mass itself — the objective
/// would be minimized by collapsing the surrogate toward zero mass rather
/// than by smoothing F over it (see [`total_mass_from`]).
struct L2Context {
    total_mass: f64,
    degrees: DVector<f64>,
}

impl L2Context {
    fn build(model: &JointModel, q: &DMatrix<f64>, cfg: &TrainConfig) -> Self {
        let (n, d1) = (q.nrows(), q.ncols());
        let gamma = &model.surrogate.gamma;
        let mut col_sums = DVector::zeros(d1);
        for i in 0..d1 {
            col_sums[i] = q.column(i).sum();
        }
        let mut total_mass = 0.0;
        for i in 0..d1 {
            total_mass += gamma[i] * col_sums[i] * col_sums[i];
        }
        let total_mass = total_mass.max(0.0);
        let mut degrees = DVector::zeros(n);
        for u in 0..n {
            let mut d = 0.0;
            for i in 0..d1 {
                d += gamma[i] * q[(u, i)] * col_sums[i];
            }
            degrees[u] = d.max(cfg.degree_floor);
        }
        Self {
            total_mass,
            degrees,
        }
    }
}

/// Loss-only evaluation given precomputed Q and L2 context; also returns the
/// F outputs of touched nodes for reuse.
fn joint_loss_parts(
    model: &JointModel,
    q: &DMatrix<f64>,
    ctx: &L2Context,
    batches: &Batches,
    cfg: &TrainConfig,
) -> (EpochLosses, HashMap<usize, DVector<f64>>) {
    let gamma = &model.surrogate.gamma;
    let n = model.n();

    // L1: observed fit + l1 penalty.
    let penalty = cfg.tau * gamma.iter().map(|g| g.abs()).sum::<f64>();
    let mut l1 = penalty;
    if !batches.edges.is_empty() {
        let mut fit = 0.0;
        for &(u, v, a) in &batches.edges {
            let e = (0..gamma.len())
                .map(|i| gamma[i] * q[(u, i)] * q[(v, i)])
                .sum::<f64>();
            let r = e - a;
            fit += r * r;
        }
        l1 += fit / batches.edges.len() as f64;
    }

    // F outputs for every node the batches touch.
    let mut touched: Vec<usize> = Vec::new();
    let mut seen = vec![false; n];
    for &(u, v) in &batches.pairs {
        for w in [u, v] {
            if !seen[w] {
                seen[w] = true;
                touched.push(w);
            }
        }
    }
    for &u in &batches.nodes {
        if !seen[u] {
            seen[u] = true;
            touched.push(u);
        }
    }
    let f_rows: Vec<DVector<f64>> = par::map_slice(&touched, |&u| model.f_model.forward(u));
    let f_of: HashMap<usize, DVector<f64>> =
        touched.iter().copied().zip(f_rows.into_iter()).collect();

    // L2: total-mass-scaled Dirichlet energy on mixture pairs.
    let mut l2 = 0.0;
    if !batches.pairs.is_empty() {
        let b2 = batches.pairs.len() as f64;
        let mut acc = 0.0;
        for &(u, v) in &batches.pairs {
            if u == v {
                continue;
            }
            let cu = &f_of[&u] / ctx.degrees[u].sqrt();
            let cv = &f_of[&v] / ctx.degrees[v].sqrt();
            acc += (cu - cv).norm_squared();
        }
        l2 = ctx.total_mass / (2.0 * b2) * acc;
    }

    // Orthonormality penalties on the shared node batch.
    let b3 = batches.nodes.len();
    let mut mq = DMatrix::zeros(b3, gamma.len());
    let mut mf = DMatrix::zeros(b3, model.f_model.out_dim());
    for (row, &u) in batches.nodes.iter().enumerate() {
        mq.row_mut(row).copy_from(&q.row(u));
        mf.row_mut(row).tr_copy_from(&f_of[&u]);
    }
    let ortho_q = ortho_penalty(&mq, n);
    let ortho_f = ortho_penalty(&mf, n);

    let total = l1 + cfg.mu2 * l2 + cfg.mu_ortho_q * ortho_q + cfg.mu_ortho_f * ortho_f;
    (
        EpochLosses {
            l1,
            l2,
            ortho_q,
            ortho_f,
            total,
        },
        f_of,
    )
}

fn joint_loss_and_grad_with(
    model: &JointModel,
    q: &DMatrix<f64>,
    q_caches: &[ForwardCache],
    ctx: &L2Context,
    batches: &Batches,
    cfg: &TrainConfig,
) -> (EpochLosses, JointGrads) {
    let gamma = &model.surrogate.gamma;
    let (n, d1) = (q.nrows(), q.ncols());
    let d2 = model.f_model.out_dim();
    let (losses, f_of) = joint_loss_parts(model, q, ctx, batches, cfg);

    let mut d_gamma = DVector::zeros(d1);
    // Gradients w.r.t. network outputs, accumulated densely for Q and
    // sparsely for F.
    let mut d_q_out = DMatrix::zeros(n, d1);
    let mut d_f_out: HashMap<usize, DVector<f64>> = HashMap::new();

    // --- L1 ---
    if !batches.edges.is_empty() {
        let scale = 2.0 / batches.edges.len() as f64;
        for &(u, v, a) in &batches.edges {
            let mut e = 0.0;
            for i in 0..d1 {
                e += gamma[i] * q[(u, i)] * q[(v, i)];
            }
            let r = scale * (e - a);
            for i in 0..d1 {
                d_gamma[i] += r * q[(u, i)] * q[(v, i)];
                d_q_out[(u, i)] += r * gamma[i] * q[(v, i)];
                d_q_out[(v, i)] += r * gamma[i] * q[(u, i)];
            }
        }
    }

    // --- L2 ---
    // The prefactor and the degrees live in the frozen sampling-measure
    // context, so the smoothness term differentiates through F alone.
    if !batches.pairs.is_empty() && cfg.mu2 != 0.0 {
        let b2 = batches.pairs.len() as f64;
        let s_half = ctx.total_mass / (2.0 * b2);
        for &(u, v) in &batches.pairs {
            if u == v {
                continue;
            }
            let (du, dv) = (ctx.degrees[u], ctx.degrees[v]);
            let cu = &f_of[&u] / du.sqrt();
            let cv = &f_of[&v] / dv.sqrt();
            let diff = &cu - &cv;
            let gu = &diff * (cfg.mu2 * 2.0 * s_half / du.sqrt());
            let gv = &diff * (-(cfg.mu2 * 2.0 * s_half) / dv.sqrt());
            add_row(&mut d_f_out, u, &gu, d2);
            add_row(&mut d_f_out, v, &gv, d2);
        }
    }

    // --- Orthonormality penalties ---
    let b3 = batches.nodes.len();
    if b3 > 0 {
        let scale_n = n as f64 / b3 as f64;
        if cfg.mu_ortho_q != 0.0 {
            let mut gram = DMatrix::zeros(d1, d1);
            for &u in &batches.nodes {
                let row = q.row(u);
                gram.ger(scale_n, &row.transpose(), &row.transpose(), 1.0);
            }
            for i in 0..d1 {
                gram[(i, i)] -= 1.0;
            }
            let coeff = cfg.mu_ortho_q * 4.0 * scale_n;
            for &u in &batches.nodes {
                let gu = &gram * q.row(u).transpose();
                for i in 0..d1 {
                    d_q_out[(u, i)] += coeff * gu[i];
                }
            }
        }
        if cfg.mu_ortho_f != 0.0 {
            let mut gram = DMatrix::zeros(d2, d2);
            for &u in &batches.nodes {
                let fu = &f_of[&u];
                gram.ger(scale_n, fu, fu, 1.0);
            }
            for i in 0..d2 {
                gram[(i, i)] -= 1.0;
            }
            let coeff = cfg.mu_ortho_f * 4.0 * scale_n;
            for &u in &batches.nodes {
                let gu = &gram * &f_of[&u];
                add_row(&mut d_f_out, u, &(gu * coeff), d2);
            }
        }
    }

    // --- Backward through the networks ---
    let grad_q = backprop_dense(&model.surrogate.q_model, q_caches, &d_q_out);
    let f_touched: Vec<(usize, DVector<f64>)> = {
        // deterministic order again: pairs first, then nodes
        let mut order: Vec<usize> = Vec::new();
        let mut seen = vec![false; n];
        for &(u, v) in &batches.pairs {
            for w in [u, v] {
                if !seen[w] {
                    seen[w] = true;
                    order.push(w);
                }
            }
        }
        for &u in &batches.nodes {
            if !seen[u] {
                seen[u] = true;
                order.push(u);
            }
        }
        let mut d_f_out = d_f_out;
        order
            .into_iter()
            .filter_map(|u| d_f_out.remove(&u).map(|g| (u, g)))
            .collect()
    };
    let grad_f = backprop_sparse(&model.f_model, &f_touched);

    (
        losses,
        JointGrads {
            gamma: d_gamma,
            q: grad_q,
            f: grad_f,
        },
    )
}

fn add_row(map: &mut HashMap<usize, DVector<f64>>, u: usize, g: &DVector<f64>, dim: usize) {
    map.entry(u)
        .or_insert_with(|| DVector::zeros(dim))
        .iter_mut()
        .zip(g.iter())
        .for_each(|(a, b)| *a += b);
}

/// Backprop a dense per-node output gradient; rows that are entirely zero
/// are skipped. Chunked so the accumulation order is fixed.
fn backprop_dense(
    model: &NodeRepresentationModel,
    caches: &[ForwardCache],
    d_out: &DMatrix<f64>,
) -> ModelGrad {
    let rows: Vec<usize> = (0..d_out.nrows())
        .filter(|&u| d_out.row(u).iter().any(|x| *x != 0.0))
        .collect();
    par::fold_chunks(
        &rows,
        || ModelGrad::zeros_like(model),
        |acc, &u| {
            let g = d_out.row(u).transpose();
            model.backward(u, &caches[u], &g, acc);
        },
        |acc, p| acc.add_assign(&p),
    )
}

fn backprop_sparse(
    model: &NodeRepresentationModel,
    touched: &[(usize, DVector<f64>)],
) -> ModelGrad {
    par::fold_chunks(
        touched,
        || ModelGrad::zeros_like(model),
        |acc, (u, g)| {
            let cache = model.forward_cached(*u);
            model.backward(*u, &cache, g, acc);
        },
        |acc, p| acc.add_assign(&p),
    )
}

/// Per-round training summary.
#[derive(Debug, Clone)]
pub struct RoundReport {
    pub epoch_losses: Vec<EpochLosses>,
    /// Times the learning rates were halved after a non-finite epoch.
    pub lr_halvings: usize,
    /// True when the round stopped early because halving did not recover.
    pub aborted: bool,
}

impl RoundReport {
    pub fn last_total(&self) -> Option<f64> {
        self.epoch_losses.last().map(|l| l.total)
    }
}

/// SGD driver owning the joint model and its optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: JointModel,
    pub cfg: TrainConfig,
    opt_q: FlatAdam,
    opt_f: FlatAdam,
    opt_gamma: FlatAdam,
}

impl Trainer {
    pub fn new(n: usize, cfg: TrainConfig, seed: u64) -> Self {
        let model = JointModel::new(n, &cfg, seed);
        Self::from_model(model, cfg)
    }

    pub fn from_model(model: JointModel, cfg: TrainConfig) -> Self {
        let opt_q = FlatAdam::new(model.surrogate.q_model.param_count(), cfg.lr_q);
        let opt_f = FlatAdam::new(model.f_model.param_count(), cfg.lr_f);
        let opt_gamma = FlatAdam::new(model.surrogate.d1(), cfg.lr_gamma);
        Self {
            model,
            cfg,
            opt_q,
            opt_f,
            opt_gamma,
        }
    }

    /// Run `cfg.epochs_per_round` SGD epochs against the observations.
    pub fn train_round<R: Rng>(&mut self, obs: &ObservationSet, rng: &mut R) -> RoundReport {
        self.train_epochs(obs, self.cfg.epochs_per_round, rng)
    }

    /// Run a given number of epochs. A non-finite loss or gradient halves
    /// all learning rates and retries the epoch once with fresh batches;
    /// if the retry is still non-finite the round aborts, keeping the last
    /// finite parameters. Halved rates persist for the rest of the round
    /// and are restored afterwards.
    pub fn train_epochs<R: Rng>(
        &mut self,
        obs: &ObservationSet,
        epochs: usize,
        rng: &mut R,
    ) -> RoundReport {
        let mut report = RoundReport {
            epoch_losses: Vec::with_capacity(epochs),
            lr_halvings: 0,
            aborted: false,
        };
        for _ in 0..epochs {
            match self.one_epoch(obs, rng) {
                Some(losses) => report.epoch_losses.push(losses),
                None => {
                    report.lr_halvings += 1;
                    self.halve_lrs();
                    match self.one_epoch(obs, rng) {
                        Some(losses) => report.epoch_losses.push(losses),
                        None => {
                            log::warn!("training round aborted: loss stayed non-finite after lr halving");
                            report.aborted = true;
                            break;
                        }
                    }
                }
            }
        }
        self.opt_q.set_lr(self.cfg.lr_q);
        self.opt_f.set_lr(self.cfg.lr_f);
        self.opt_gamma.set_lr(self.cfg.lr_gamma);
        report
    }

    fn halve_lrs(&mut self) {
        self.opt_q.set_lr(self.opt_q.lr() * 0.5);
        self.opt_f.set_lr(self.opt_f.lr() * 0.5);
        self.opt_gamma.set_lr(self.opt_gamma.lr() * 0.5);
    }

    /// One epoch: sample, differentiate, step. Returns None on a non-finite
    /// loss or gradient (no parameters are touched in that case).
    fn one_epoch<R: Rng>(&mut self, obs: &ObservationSet, rng: &mut R) -> Option<EpochLosses> {
        let q_caches: Vec<ForwardCache> = par::map_range(self.model.n(), |u| {
            self.model.surrogate.q_model.forward_cached(u)
        });
        let q = matrix_from_caches(&q_caches, self.model.surrogate.d1());
        let batches = sample_batches_with_q(&self.model, &q, obs, &self.cfg, rng);
        let ctx = L2Context::build(&self.model, &q, &self.cfg);
        let (losses, grads) =
            joint_loss_and_grad_with(&self.model, &q, &q_caches, &ctx, &batches, &self.cfg);
        if !losses.total.is_finite() || !grads.is_finite() {
            return None;
        }
        let mut qp = self.model.surrogate.q_model.params();
        self.opt_q.step(&mut qp, &grads.q.flat());
        self.model.surrogate.q_model.set_params(&qp);

        let mut fp = self.model.f_model.params();
        self.opt_f.step(&mut fp, &grads.f.flat());
        self.model.f_model.set_params(&fp);

        let mut gp: Vec<f64> = self.model.surrogate.gamma.iter().copied().collect();
        let ggrad: Vec<f64> = grads.gamma.iter().copied().collect();
        self.opt_gamma.step(&mut gp, &ggrad);
        let stepped = DVector::from_vec(gp);
        self.model.surrogate.gamma =
            soft_threshold_gamma(&stepped, self.cfg.tau * self.opt_gamma.lr());
        Some(losses)
    }
}

/// Per-group result of [`gradient_check`].
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `(group name, relative l2 error)`.
    pub groups: Vec<(String, f64)>,
    pub max_rel_error: f64,
}

/// Compare the analytic gradient of the joint loss (all four terms, penalty
/// included) against central finite differences on a fixed batch. Returns
/// the relative l2 error per parameter group.
///
/// Matching the training semantics, the smoothness term's mass prefactor and
/// degrees are frozen at the unperturbed model: the finite differences probe
/// the same function of the parameters that the analytic gradient
/// differentiates.
pub fn gradient_check(
    model: &JointModel,
    batches: &Batches,
    cfg: &TrainConfig,
    step: f64,
) -> GradCheckReport {
    let q_caches: Vec<ForwardCache> =
        par::map_range(model.n(), |u| model.surrogate.q_model.forward_cached(u));
    let q = matrix_from_caches(&q_caches, model.surrogate.d1());
    let ctx = L2Context::build(model, &q, cfg);
    let (_, grads) = joint_loss_and_grad_with(model, &q, &q_caches, &ctx, batches, cfg);
    // Total-loss gamma gradient: smooth part + l1 subgradient (valid away
    // from zero, which the check's random initializations guarantee).
    let gamma_analytic: Vec<f64> = grads
        .gamma
        .iter()
        .zip(model.surrogate.gamma.iter())
        .map(|(g, gm)| g + cfg.tau * gm.signum())
        .collect();

    let fd_for = |set: &dyn Fn(&mut JointModel, usize, f64), count: usize| -> Vec<f64> {
        (0..count)
            .map(|k| {
                let mut m = model.clone();
                set(&mut m, k, step);
                let qp = m.surrogate.q_matrix();
                let lp = joint_loss_parts(&m, &qp, &ctx, batches, cfg).0.total;
                let mut m = model.clone();
                set(&mut m, k, -step);
                let qm = m.surrogate.q_matrix();
                let lm = joint_loss_parts(&m, &qm, &ctx, batches, cfg).0.total;
                (lp - lm) / (2.0 * step)
            })
            .collect()
    };

    let gamma_fd = fd_for(&|m, k, h| m.surrogate.gamma[k] += h, model.surrogate.d1());
    let q_fd = fd_for(
        &|m, k, h| {
            let mut p = m.surrogate.q_model.params();
            p[k] += h;
            m.surrogate.q_model.set_params(&p);
        },
        model.surrogate.q_model.param_count(),
    );
    let f_fd = fd_for(
        &|m, k, h| {
            let mut p = m.f_model.params();
            p[k] += h;
            m.f_model.set_params(&p);
        },
        model.f_model.param_count(),
    );

    let rel = |a: &[f64], f: &[f64]| -> f64 {
        let diff: f64 = a.iter().zip(f).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>();
        let nf: f64 = f.iter().map(|x| x * x).sum::<f64>();
        let denom = na.max(nf).sqrt();
        if denom < 1e-12 {
            0.0
        } else {
            diff.sqrt() / denom
        }
    };

    let q_flat = grads.q.flat();
    let f_flat = grads.f.flat();
    let (q_embed_r, q_layer_r) = model.surrogate.q_model.param_ranges();
    let (f_embed_r, f_layer_r) = model.f_model.param_ranges();

    let mut groups = vec![
        ("gamma".to_string(), rel(&gamma_analytic, &gamma_fd)),
        (
            "q_embed".to_string(),
            rel(&q_flat[q_embed_r.clone()], &q_fd[q_embed_r.clone()]),
        ),
        (
            "f_embed".to_string(),
            rel(&f_flat[f_embed_r.clone()], &f_fd[f_embed_r.clone()]),
        ),
    ];
    if !q_layer_r.is_empty() {
        groups.push((
            "q_layers".to_string(),
            rel(&q_flat[q_layer_r.clone()], &q_fd[q_layer_r]),
        ));
    }
    if !f_layer_r.is_empty() {
        groups.push((
            "f_layers".to_string(),
            rel(&f_flat[f_layer_r.clone()], &f_fd[f_layer_r]),
        ));
    }
    let max_rel_error = groups.iter().map(|g| g.1).fold(0.0, f64::max);
    GradCheckReport {
        groups,
        max_rel_error,
    }
}

// --- Checkpointing ---

const CHECKPOINT_FORMAT: &str = "graphbo-surrogate";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerDump {
    rows: usize,
    cols: usize,
    w: Vec<f64>,
    b: Vec<f64>,
    act: Activation,
}

#[derive(Serialize, Deserialize)]
struct ModelDump {
    n: usize,
    out_dim: usize,
    embed: Vec<f64>,
    layers: Vec<LayerDump>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    gamma: Vec<f64>,
    q: ModelDump,
    f: ModelDump,
}

fn dump_model(m: &NodeRepresentationModel) -> ModelDump {
    ModelDump {
        n: m.n(),
        out_dim: m.out_dim(),
        embed: m.embed().as_slice().to_vec(),
        layers: m
            .layers()
            .iter()
            .map(|l| LayerDump {
                rows: l.w.nrows(),
                cols: l.w.ncols(),
                w: l.w.as_slice().to_vec(),
                b: l.b.as_slice().to_vec(),
                act: l.act,
            })
            .collect(),
    }
}

fn restore_model(d: &ModelDump) -> Result<NodeRepresentationModel, CompletionError> {
    let h = if d.n == 0 { 0 } else { d.embed.len() / d.n };
    if h * d.n != d.embed.len() {
        return Err(CompletionError::Checkpoint(
            "embedding size does not divide node count".into(),
        ));
    }
    let embed = DMatrix::from_column_slice(d.n, h, &d.embed);
    let mut layers = Vec::with_capacity(d.layers.len());
    for l in &d.layers {
        if l.w.len() != l.rows * l.cols || l.b.len() != l.rows {
            return Err(CompletionError::Checkpoint("layer shape mismatch".into()));
        }
        layers.push(Layer {
            w: DMatrix::from_column_slice(l.rows, l.cols, &l.w),
            b: DVector::from_column_slice(&l.b),
            act: l.act,
        });
    }
    Ok(NodeRepresentationModel::from_parts(embed, layers, d.out_dim))
}

/// Serialize the joint model (gamma, embeddings, layer parameters) with a
/// version header. JSON with exact float round-trip.
pub fn save_checkpoint(model: &JointModel, path: &Path) -> Result<(), CompletionError> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        gamma: model.surrogate.gamma.as_slice().to_vec(),
        q: dump_model(&model.surrogate.q_model),
        f: dump_model(&model.f_model),
    };
    let text = serde_json::to_string(&file)
        .map_err(|e| CompletionError::Checkpoint(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Restore a joint model written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<JointModel, CompletionError> {
    let text = std::fs::read_to_string(path)?;
    let file: CheckpointFile =
        serde_json::from_str(&text).map_err(|e| CompletionError::Checkpoint(e.to_string()))?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(CompletionError::Checkpoint(format!(
            "unknown format '{}'",
            file.format
        )));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(CompletionError::Checkpoint(format!(
            "unsupported version {}",
            file.version
        )));
    }
    let q_model = restore_model(&file.q)?;
    let f_model = restore_model(&file.f)?;
    Ok(JointModel {
        surrogate: SpectralSurrogate {
            gamma: DVector::from_column_slice(&file.gamma),
            q_model,
        },
        f_model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tiny_model(n: usize, d1: usize, d2: usize, hidden: &[usize], seed: u64) -> JointModel {
        let cfg = TrainConfig {
            d1,
            d2,
            hidden_q: hidden.to_vec(),
            hidden_f: hidden.to_vec(),
            ..TrainConfig::default()
        };
        JointModel::new(n, &cfg, seed)
    }

    #[test]
    fn surrogate_entry_zero_gamma() {
        let mut m = tiny_model(6, 3, 2, &[], 1);
        m.surrogate.gamma.fill(0.0);
        assert_eq!(surrogate_entry(&m.surrogate, 0, 5), 0.0);
    }

    #[test]
    fn surrogate_entry_rank_one_indicator() {
        // gamma = e_1, q = one-hot rows: entry is 1 exactly on (u,v) = (0,0).
        let mut m = tiny_model(3, 2, 2, &[], 2);
        m.surrogate.gamma = DVector::from_vec(vec![1.0, 0.0]);
        let mut p = vec![0.0; m.surrogate.q_model.param_count()];
        // column-major embed 3x2: q_1 = e_0 means embed[(0,0)] = 1.
        p[0] = 1.0;
        m.surrogate.q_model.set_params(&p);
        assert_eq!(surrogate_entry(&m.surrogate, 0, 0), 1.0);
        assert_eq!(surrogate_entry(&m.surrogate, 0, 1), 0.0);
        assert_eq!(surrogate_entry(&m.surrogate, 1, 2), 0.0);
    }

    #[test]
    fn soft_threshold_cases() {
        let g = DVector::from_vec(vec![0.4, -0.2, 0.05, 0.0]);
        let t = soft_threshold_gamma(&g, 0.1);
        assert_eq!(t.as_slice(), &[0.30000000000000004, -0.1, 0.0, 0.0]);
        let id = soft_threshold_gamma(&g, 0.0);
        assert_eq!(id, g);
        let all = soft_threshold_gamma(&g, 1.0);
        assert!(all.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn ortho_penalty_matches_hand_computation() {
        // Full batch, M^T M = I: penalty 0.
        let m = DMatrix::<f64>::identity(4, 2);
        assert_abs_diff_eq!(ortho_penalty(&m, 4), 0.0, epsilon = 1e-12);
        // Same rows treated as a half batch of n = 8: the Gram estimate is
        // (8/4) I = 2I, so the penalty is ||2I - I||_F^2 = 2.
        assert_abs_diff_eq!(ortho_penalty(&m, 8), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn ortho_penalty_zero_matrix_scores_dimension() {
        let m = DMatrix::<f64>::zeros(5, 3);
        assert_abs_diff_eq!(ortho_penalty(&m, 5), 3.0, epsilon = 1e-12);
        let empty = DMatrix::<f64>::zeros(0, 3);
        assert_abs_diff_eq!(ortho_penalty(&empty, 5), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn mixture_sampler_errors_on_zero_gamma() {
        let mut m = tiny_model(5, 2, 2, &[], 3);
        m.surrogate.gamma.fill(0.0);
        let mut r = rng::from_seed(1);
        assert!(matches!(
            rank_one_mixture_sample(&m.surrogate, 4, &mut r),
            Err(CompletionError::DegenerateGamma)
        ));
    }

    #[test]
    fn mixture_sampler_respects_weights() {
        // w = (1, 0): only component 1 is ever drawn, so all pairs come from
        // |q_1|'s distribution — and q_1 is supported on node 2 only.
        let mut m = tiny_model(4, 2, 2, &[], 4);
        m.surrogate.gamma = DVector::from_vec(vec![2.0, 0.0]);
        let mut p = vec![0.0; m.surrogate.q_model.param_count()];
        p[2] = 0.7; // embed[(2,0)] in column-major (n=4)
        m.surrogate.q_model.set_params(&p);
        let mut r = rng::from_seed(2);
        let pairs = rank_one_mixture_sample(&m.surrogate, 50, &mut r).unwrap();
        assert!(pairs.iter().all(|&(u, v)| u == 2 && v == 2));
    }

    #[test]
    fn empty_edge_batch_is_penalty_only() {
        let m = tiny_model(5, 3, 2, &[], 5);
        let tau = 0.7;
        let expected = tau * m.surrogate.gamma.iter().map(|g| g.abs()).sum::<f64>();
        assert_abs_diff_eq!(
            batch_loss_l1(&m.surrogate, &[], tau),
            expected,
            epsilon = 1e-15
        );
    }

    #[test]
    fn checkpoint_roundtrips_exactly() {
        let dir = std::env::temp_dir().join("graphbo-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");
        let m = tiny_model(6, 3, 2, &[5], 7);
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(m.surrogate.gamma, back.surrogate.gamma);
        assert_eq!(
            m.surrogate.q_model.params(),
            back.surrogate.q_model.params()
        );
        assert_eq!(m.f_model.params(), back.f_model.params());
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn checkpoint_rejects_bad_version() {
        let dir = std::env::temp_dir().join("graphbo-ckpt-ver");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");
        let m = tiny_model(3, 2, 2, &[], 8);
        save_checkpoint(&m, &path).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"version\":1", "\"version\":9");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CompletionError::Checkpoint(_))
        ));
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn zero_epochs_changes_nothing() {
        let g = crate::graph::sbm_generate(&[8], 0.9, 0.0, 1).unwrap();
        let pairs: Vec<(usize, usize)> = (0..8)
            .flat_map(|i| ((i + 1)..8).map(move |j| (i, j)))
            .collect();
        let obs = crate::observation::project_observed(&g, &pairs);
        let cfg = TrainConfig {
            d1: 3,
            d2: 2,
            hidden_q: vec![],
            hidden_f: vec![],
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(8, cfg, 11);
        let before = (
            t.model.surrogate.gamma.clone(),
            t.model.surrogate.q_model.params(),
            t.model.f_model.params(),
        );
        let mut r = rng::from_seed(3);
        let rep = t.train_epochs(&obs, 0, &mut r);
        assert!(rep.epoch_losses.is_empty());
        assert_eq!(before.0, t.model.surrogate.gamma);
        assert_eq!(before.1, t.model.surrogate.q_model.params());
        assert_eq!(before.2, t.model.f_model.params());
    }

    #[test]
    fn effective_rank_counts_above_relative_tol() {
        let g = DVector::from_vec(vec![1.0, 1e-3, 1e-6, 0.0]);
        assert_eq!(effective_rank(&g, 1e-4), 2);
        assert_eq!(effective_rank(&DVector::zeros(3), 1e-4), 0);
    }
}
