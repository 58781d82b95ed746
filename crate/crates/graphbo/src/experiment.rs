//! End-to-end optimization harness: experiment configs, the main
//! completion + embedding + GP + acquisition loop, query baselines, regret
//! aggregation, and CSV/SVG export.
//!
//! Reproducibility contract: every random stream is derived from the run
//! seed and a purpose tag. Graph, objective, and initial nodes depend only
//! on the run seed — never on the method — so methods compared under one
//! seed see the identical problem. Wall-times go to a separate timings file
//! so the result CSVs are bitwise-stable across reruns and thread counts.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::acquisition::{select_next, EiConvention};
use crate::completion::{TrainConfig, Trainer};
use crate::embedding::{extract_eigenpairs, graph_eigenpairs};
use crate::gp::{GpSurrogate, KernelKind, SpectralKernel};
use crate::graph::{
    self, bandlimited_signal, load_edge_list, pagerank, Graph, GraphError, NodeSignal,
};
use crate::observation::{total_pairs, ObservationSet};
use crate::par;
use crate::rng;
use crate::sampling::{balanced_edge_sample, uniform_edge_sample, SamplerConfig, SamplingError};

/// Environment variable naming the root directory under which all outputs
/// are written; relative `out_dir`s are resolved against it.
pub const OUT_ROOT_ENV: &str = "GRAPHBO_OUT_ROOT";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn write_file(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    std::fs::write(path, contents).map_err(|source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Which graph the experiment runs on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GraphSpec {
    /// Stochastic block model with equal-size blocks (remainder spread over
    /// the first blocks).
    Sbm {
        n: usize,
        blocks: usize,
        p_in: f64,
        p_out: f64,
    },
    /// Random dot-product graph of the given latent rank.
    Rdpg { n: usize, rank: usize },
    /// Preferential-attachment graph, `m` edges per arriving node.
    PowerLaw { n: usize, m: usize },
    /// Whitespace edge list on disk (`u v [w]`).
    EdgeList { path: String },
}

impl GraphSpec {
    /// Node count when it is known without touching the filesystem.
    pub fn node_count(&self) -> Option<usize> {
        match self {
            GraphSpec::Sbm { n, .. } | GraphSpec::Rdpg { n, .. } | GraphSpec::PowerLaw { n, .. } => {
                Some(*n)
            }
            GraphSpec::EdgeList { .. } => None,
        }
    }

    pub fn build(&self, seed: u64) -> Result<Graph, ExperimentError> {
        match self {
            GraphSpec::Sbm {
                n,
                blocks,
                p_in,
                p_out,
            } => {
                if *blocks == 0 || *n < *blocks {
                    return Err(ExperimentError::Config(format!(
                        "sbm needs 1 <= blocks <= n, got blocks={blocks}, n={n}"
                    )));
                }
                let base = n / blocks;
                let extra = n % blocks;
                let sizes: Vec<usize> = (0..*blocks)
                    .map(|b| base + usize::from(b < extra))
                    .collect();
                Ok(graph::sbm_generate(&sizes, *p_in, *p_out, seed)?)
            }
            GraphSpec::Rdpg { n, rank } => Ok(graph::rdpg_generate(*n, *rank, seed)?),
            GraphSpec::PowerLaw { n, m } => Ok(graph::power_law_generate(*n, *m, seed)?),
            GraphSpec::EdgeList { path } => {
                Ok(load_edge_list(Path::new(path), None)?.graph)
            }
        }
    }
}

/// Node objective to maximize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ObjectiveSpec {
    /// Span of the k lowest Laplacian eigenvectors, random coefficients.
    Bandlimited { k: usize },
    /// PageRank scores (damping 0.85).
    Pagerank,
}

impl ObjectiveSpec {
    pub fn build(&self, g: &Graph, seed: u64) -> Result<NodeSignal, ExperimentError> {
        match self {
            ObjectiveSpec::Bandlimited { k } => Ok(bandlimited_signal(g, *k, seed)?),
            ObjectiveSpec::Pagerank => Ok(pagerank(g, 0.85, 1e-12, 10_000)?),
        }
    }
}

/// Settings of the completion-driven optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralBoParams {
    pub kernel: KernelKind,
    pub ei: EiConvention,
    pub train: TrainConfig,
    /// Phase-A fraction beta of each edge budget.
    pub balance_fraction: f64,
    /// Probability epsilon that a phase-A seed is the queried node.
    pub explore_prob: f64,
    /// Per-iteration edge budget Q; `None` derives ceil(2 * initial mean
    /// degree) once the initial observations are drawn.
    pub edge_budget: Option<usize>,
    /// Extra surrogate epochs before the first query (burn-in).
    pub epochs_first_round: usize,
    /// GP marginal-likelihood gradient steps per iteration.
    pub gp_fit_steps: usize,
    pub gp_lr: f64,
    /// Pin the GP noise variance to zero (exact interpolation).
    pub noiseless: bool,
    /// Let the acquisition re-pick already-queried nodes (verbatim argmax
    /// over all of V).
    pub allow_requery: bool,
    /// Initial observations: ceil(2 * d1 * n * ln^2 n) capped at this
    /// fraction of all pairs.
    pub omega0_cap_fraction: f64,
    /// Method label override for reports.
    pub label: Option<String>,
}

impl Default for SpectralBoParams {
    fn default() -> Self {
        Self {
            kernel: KernelKind::Polynomial,
            ei: EiConvention::default(),
            train: TrainConfig::default(),
            balance_fraction: 0.5,
            explore_prob: 0.5,
            edge_budget: None,
            epochs_first_round: 300,
            gp_fit_steps: 25,
            gp_lr: 1e-2,
            noiseless: false,
            allow_requery: false,
            omega0_cap_fraction: 0.10,
            label: None,
        }
    }
}

/// A method to run: the completion-driven optimizer or a query baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MethodSpec {
    SpectralBo(SpectralBoParams),
    Random,
    Local,
    Bfs,
    Dfs,
}

impl MethodSpec {
    pub fn label(&self) -> String {
        match self {
            MethodSpec::SpectralBo(p) => p.label.clone().unwrap_or_else(|| {
                let kernel = match p.kernel {
                    KernelKind::Polynomial => "polynomial",
                    KernelKind::Matern => "matern",
                    KernelKind::Rbf => "rbf",
                };
                format!("spectral_bo_{kernel}")
            }),
            MethodSpec::Random => "random".into(),
            MethodSpec::Local => "local".into(),
            MethodSpec::Bfs => "bfs".into(),
            MethodSpec::Dfs => "dfs".into(),
        }
    }
}

/// A full experiment: one problem, several methods, several seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub graph: GraphSpec,
    pub objective: ObjectiveSpec,
    pub methods: Vec<MethodSpec>,
    /// Optimization iterations T.
    pub t: usize,
    /// Initial uniformly-queried nodes N0.
    pub n0: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out_dir: Option<String>,
    /// Also save each run's final observation set as an edge list.
    #[serde(default)]
    pub save_observations: bool,
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.t < 1 {
            return Err(ExperimentError::Config("t must be >= 1".into()));
        }
        if self.n0 < 1 {
            return Err(ExperimentError::Config("n0 must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(ExperimentError::Config("seeds must be non-empty".into()));
        }
        if self.methods.is_empty() {
            return Err(ExperimentError::Config("methods must be non-empty".into()));
        }
        if let Some(n) = self.graph.node_count() {
            if self.n0 + self.t > n {
                return Err(ExperimentError::Config(format!(
                    "n0 + t = {} exceeds n = {n}",
                    self.n0 + self.t
                )));
            }
        }
        Ok(())
    }
}

/// One optimization step as recorded in a trace. Iteration 0 summarizes the
/// initial design (no single queried node).
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub node: Option<usize>,
    pub observed: Option<f64>,
    /// Best objective value seen so far.
    pub best: f64,
    /// Simple regret: objective maximum minus best-so-far.
    pub regret: f64,
    pub wall_secs: f64,
}

/// Regret trajectory of one (method, seed) run.
#[derive(Debug, Clone)]
pub struct RegretTrace {
    pub method: String,
    pub seed: u64,
    pub records: Vec<IterationRecord>,
    /// All queried nodes, initial design first.
    pub queried: Vec<usize>,
    /// True objective maximum (the regret reference).
    pub y_true_max: f64,
    /// Set when the run stopped early; the trace holds what completed.
    pub error: Option<String>,
    /// Observed pairs at the end of the run (the optimizer only; baselines
    /// never touch edges).
    pub final_edge_count: usize,
    /// The final observation set itself, in insertion order (empty for
    /// baselines). [`export_observations`] writes it as an edge list that
    /// the `stats` subcommand can read back.
    pub final_observations: Vec<(usize, usize, f64)>,
}

impl RegretTrace {
    pub fn final_regret(&self) -> Option<f64> {
        self.records.last().map(|r| r.regret)
    }

    /// Monotonicity contract: best-so-far never decreases, regret never
    /// increases and stays nonnegative.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut prev_best = f64::NEG_INFINITY;
        let mut prev_regret = f64::INFINITY;
        for r in &self.records {
            if r.best < prev_best {
                return Err(format!("best decreased at iteration {}", r.iteration));
            }
            if r.regret > prev_regret || r.regret < -1e-12 {
                return Err(format!("regret not non-increasing at iteration {}", r.iteration));
            }
            prev_best = r.best;
            prev_regret = r.regret;
        }
        Ok(())
    }
}

/// Initial observation budget: ceil(2 d1 n ln^2 n), capped at
/// `cap_fraction` of all pairs.
pub fn omega0_size(n: usize, d1: usize, cap_fraction: f64) -> usize {
    if n < 2 {
        return 0;
    }
    let raw = (2.0 * d1 as f64 * n as f64 * (n as f64).ln().powi(2)).ceil() as usize;
    let cap = (cap_fraction * total_pairs(n) as f64).floor() as usize;
    raw.min(cap)
}

struct RunState {
    y_max: f64,
    best_val: f64,
    best_node: usize,
    queried: Vec<usize>,
    queried_mask: Vec<bool>,
    records: Vec<IterationRecord>,
}

impl RunState {
    fn new(n: usize, y_max: f64) -> Self {
        Self {
            y_max,
            best_val: f64::NEG_INFINITY,
            best_node: 0,
            queried: Vec::new(),
            queried_mask: vec![false; n],
            records: Vec::new(),
        }
    }

    fn query(&mut self, v: usize, signal: &NodeSignal) -> f64 {
        let y = signal.value(v);
        self.queried.push(v);
        self.queried_mask[v] = true;
        if y > self.best_val {
            self.best_val = y;
            self.best_node = v;
        }
        y
    }

    fn record(&mut self, iteration: usize, node: Option<usize>, observed: Option<f64>, wall: f64) {
        self.records.push(IterationRecord {
            iteration,
            node,
            observed,
            best: self.best_val,
            regret: self.y_max - self.best_val,
            wall_secs: wall,
        });
    }
}

/// Uniform initial design, shared verbatim by every method under a seed.
fn initial_nodes(n: usize, n0: usize, seed: u64) -> Vec<usize> {
    let mut r = rng::stream(seed, "init", 0);
    rand::seq::index::sample(&mut r, n, n0).into_vec()
}

/// Run the completion-driven optimizer on one problem instance.
///
/// Per iteration: (A) train the joint surrogate on the observed pairs,
/// (B) extract eigenpairs, build the spectral kernel, fit the GP on the
/// queried nodes and take the EI argmax as the next query, (C) spend the
/// edge budget with the balanced sampler seeded by the queried node and
/// the incumbent. Any module error ends the run early with the error
/// recorded on the (still usable) trace.
pub fn run_graph_bo(
    g: &Graph,
    signal: &NodeSignal,
    params: &SpectralBoParams,
    t: usize,
    n0: usize,
    seed: u64,
    label: &str,
) -> RegretTrace {
    let start = Instant::now();
    let n = g.n();
    let y_max = signal.argmax().1;
    let mut state = RunState::new(n, y_max);
    let mut error = None;

    for v in initial_nodes(n, n0, seed) {
        state.query(v, signal);
    }

    let mut obs = ObservationSet::new(n);
    let mut omega_rng = rng::stream(seed, "omega0", 0);
    let omega0 = omega0_size(n, params.train.d1, params.omega0_cap_fraction);
    uniform_edge_sample(&mut obs, g, omega0, &mut omega_rng);
    let q_budget = params
        .edge_budget
        .unwrap_or_else(|| (2.0 * obs.mean_degree()).ceil().max(1.0) as usize);
    log::info!(
        "{label}/seed {seed}: |Omega0| = {}, edge budget Q = {q_budget}",
        obs.len()
    );
    let sampler_cfg = SamplerConfig {
        edge_budget: q_budget,
        balance_fraction: params.balance_fraction,
        explore_prob: params.explore_prob,
    };

    let mut trainer = Trainer::new(n, params.train.clone(), rng::derive_seed(seed, "model", 0));
    let mut train_rng = rng::stream(seed, "train", 0);
    let mut edge_rng = rng::stream(seed, "edges", 0);
    let mut filter = params.kernel.default_filter();
    let mut noise_var = 1e-2;

    state.record(0, None, None, start.elapsed().as_secs_f64());

    for iter in 1..=t {
        let iter_start = Instant::now();
        let step = (|| -> Result<(usize, f64), String> {
            let epochs = if iter == 1 {
                params.epochs_first_round
            } else {
                params.train.epochs_per_round
            };
            let report = trainer.train_epochs(&obs, epochs, &mut train_rng);
            if report.aborted {
                log::warn!("{label}/seed {seed}: surrogate round aborted at iteration {iter}");
            }
            // Early rounds can leave the surrogate without a single usable
            // eigendirection (all Rayleigh estimates null); the spectrum of
            // the observed edges is real information that always exists, so
            // the kernel falls back to it until the embedding recovers.
            let eig = match extract_eigenpairs(&trainer.model.f_model, &trainer.model.surrogate) {
                Ok(eig) => eig,
                Err(e) => {
                    log::warn!(
                        "{label}/seed {seed}: iteration {iter}: surrogate embedding unusable \
                         ({e}); using the observed-graph spectrum"
                    );
                    let observed = Graph::from_adjacency(obs.value_matrix())
                        .map_err(|e| format!("embedding fallback: {e}"))?;
                    graph_eigenpairs(&observed, params.train.d2)
                        .map_err(|e| format!("embedding fallback: {e}"))?
                }
            };
            let kernel =
                SpectralKernel::new(filter.clone(), eig).map_err(|e| format!("kernel: {e}"))?;
            let train_y: Vec<f64> = state.queried.iter().map(|&v| signal.value(v)).collect();
            let mut gp =
                GpSurrogate::fit(kernel, state.queried.clone(), &train_y, noise_var, params.noiseless)
                    .map_err(|e| format!("gp fit: {e}"))?;
            if params.gp_fit_steps > 0 {
                gp.fit_hyperparams(params.gp_lr, params.gp_fit_steps)
                    .map_err(|e| format!("gp hyperparams: {e}"))?;
                filter = gp.kernel.filter.clone();
                noise_var = gp.noise_var;
            }
            let pick = select_next(&gp, n, &state.queried_mask, params.ei, params.allow_requery)
                .map_err(|e| format!("acquisition: {e}"))?;
            let y = state.query(pick.chosen, signal);
            balanced_edge_sample(&mut obs, g, pick.chosen, state.best_node, &sampler_cfg, &mut edge_rng)
                .map_err(|e| format!("edge sampling: {e}"))?;
            Ok((pick.chosen, y))
        })();
        match step {
            Ok((v, y)) => {
                state.record(iter, Some(v), Some(y), iter_start.elapsed().as_secs_f64())
            }
            Err(e) => {
                log::error!("{label}/seed {seed}: iteration {iter} failed: {e}");
                error = Some(format!("iteration {iter}: {e}"));
                break;
            }
        }
    }

    RegretTrace {
        method: label.to_string(),
        seed,
        records: state.records,
        queried: state.queried,
        y_true_max: y_max,
        error,
        final_edge_count: obs.len(),
        final_observations: obs.iter().collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BaselineKind {
    Random,
    Local,
    Bfs,
    Dfs,
}

/// Graph-traversal state for the BFS/DFS baselines: marks on push, queries
/// nodes in pop order, restarts from a uniform unvisited node when the
/// frontier empties. Neighbor expansion is free (only node-value queries
/// count against the budget) — that is the documented comparison protocol.
struct Traversal {
    frontier: VecDeque<usize>,
    visited: Vec<bool>,
    depth_first: bool,
}

impl Traversal {
    fn new(n: usize, depth_first: bool) -> Self {
        Self {
            frontier: VecDeque::new(),
            visited: vec![false; n],
            depth_first,
        }
    }

    fn next_unqueried<R: Rng>(&mut self, g: &Graph, queried: &[bool], rng: &mut R) -> usize {
        loop {
            let u = match if self.depth_first {
                self.frontier.pop_back()
            } else {
                self.frontier.pop_front()
            } {
                Some(u) => u,
                None => {
                    let unvisited: Vec<usize> =
                        (0..g.n()).filter(|&v| !self.visited[v]).collect();
                    let start = unvisited[rng.gen_range(0..unvisited.len())];
                    self.visited[start] = true;
                    start
                }
            };
            let mut nb = g.neighbors(u);
            if self.depth_first {
                nb.reverse(); // LIFO pops the smallest index first
            }
            for v in nb {
                if !self.visited[v] {
                    self.visited[v] = true;
                    self.frontier.push_back(v);
                }
            }
            if !queried[u] {
                return u;
            }
        }
    }
}

/// Run a query baseline under the same budget accounting (N0 + T node
/// queries, no edge observations).
fn run_baseline_kind(
    g: &Graph,
    signal: &NodeSignal,
    kind: BaselineKind,
    t: usize,
    n0: usize,
    seed: u64,
    label: &str,
) -> RegretTrace {
    let start = Instant::now();
    let n = g.n();
    let y_max = signal.argmax().1;
    let mut state = RunState::new(n, y_max);
    let mut error = None;
    for v in initial_nodes(n, n0, seed) {
        state.query(v, signal);
    }
    let mut rng = rng::stream(seed, label, 0);
    let mut traversal = Traversal::new(n, kind == BaselineKind::Dfs);
    state.record(0, None, None, start.elapsed().as_secs_f64());

    for iter in 1..=t {
        let iter_start = Instant::now();
        let unqueried: Vec<usize> = (0..n).filter(|&v| !state.queried_mask[v]).collect();
        if unqueried.is_empty() {
            error = Some(format!("iteration {iter}: query budget exceeds domain"));
            break;
        }
        let v = match kind {
            BaselineKind::Random => unqueried[rng.gen_range(0..unqueried.len())],
            BaselineKind::Local => {
                // Query an unqueried neighbor of the incumbent; when the
                // neighborhood is exhausted, restart uniformly.
                let nb: Vec<usize> = g
                    .neighbors(state.best_node)
                    .into_iter()
                    .filter(|&u| !state.queried_mask[u])
                    .collect();
                if nb.is_empty() {
                    unqueried[rng.gen_range(0..unqueried.len())]
                } else {
                    nb[rng.gen_range(0..nb.len())]
                }
            }
            BaselineKind::Bfs | BaselineKind::Dfs => {
                traversal.next_unqueried(g, &state.queried_mask, &mut rng)
            }
        };
        let y = state.query(v, signal);
        state.record(iter, Some(v), Some(y), iter_start.elapsed().as_secs_f64());
    }

    RegretTrace {
        method: label.to_string(),
        seed,
        records: state.records,
        queried: state.queried,
        y_true_max: y_max,
        error,
        final_edge_count: 0,
        final_observations: Vec::new(),
    }
}

/// Execute one method under one seed, building the shared problem instance
/// from seed-derived streams.
fn run_single(cfg: &ExperimentConfig, method: &MethodSpec, seed: u64) -> RegretTrace {
    let label = method.label();
    let instance = (|| -> Result<(Graph, NodeSignal), ExperimentError> {
        let g = cfg.graph.build(rng::derive_seed(seed, "graph", 0))?;
        if cfg.n0 + cfg.t > g.n() {
            return Err(ExperimentError::Config(format!(
                "n0 + t = {} exceeds n = {}",
                cfg.n0 + cfg.t,
                g.n()
            )));
        }
        let signal = cfg.objective.build(&g, rng::derive_seed(seed, "signal", 0))?;
        Ok((g, signal))
    })();
    let (g, signal) = match instance {
        Ok(x) => x,
        Err(e) => {
            return RegretTrace {
                method: label,
                seed,
                records: Vec::new(),
                queried: Vec::new(),
                y_true_max: f64::NAN,
                error: Some(e.to_string()),
                final_edge_count: 0,
                final_observations: Vec::new(),
            }
        }
    };
    match method {
        MethodSpec::SpectralBo(params) => {
            run_graph_bo(&g, &signal, params, cfg.t, cfg.n0, seed, &label)
        }
        MethodSpec::Random => {
            run_baseline_kind(&g, &signal, BaselineKind::Random, cfg.t, cfg.n0, seed, &label)
        }
        MethodSpec::Local => {
            run_baseline_kind(&g, &signal, BaselineKind::Local, cfg.t, cfg.n0, seed, &label)
        }
        MethodSpec::Bfs => {
            run_baseline_kind(&g, &signal, BaselineKind::Bfs, cfg.t, cfg.n0, seed, &label)
        }
        MethodSpec::Dfs => {
            run_baseline_kind(&g, &signal, BaselineKind::Dfs, cfg.t, cfg.n0, seed, &label)
        }
    }
}

/// Run every (method, seed) combination. Runs are independent workers and
/// execute data-parallel; traces come back in (method-major, seed-minor)
/// order regardless of scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RegretTrace>, ExperimentError> {
    cfg.validate()?;
    let jobs: Vec<(usize, u64)> = cfg
        .methods
        .iter()
        .enumerate()
        .flat_map(|(mi, _)| cfg.seeds.iter().map(move |&s| (mi, s)))
        .collect();
    Ok(par::map_slice(&jobs, |&(mi, seed)| {
        run_single(cfg, &cfg.methods[mi], seed)
    }))
}

/// Mean and symmetric 95% confidence half-width (Student t over runs;
/// 0 for a single run).
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let k = values.len();
    assert!(k > 0, "mean of nothing");
    let mean = values.iter().sum::<f64>() / k as f64;
    if k < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (k - 1) as f64)
        .expect("valid dof")
        .inverse_cdf(0.975);
    (mean, t * var.sqrt() / (k as f64).sqrt())
}

/// Per-iteration aggregate of one method over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub iteration: usize,
    pub method: String,
    pub mean_regret: f64,
    pub ci95: f64,
}

/// Aggregate traces per (method, iteration), methods in first-appearance
/// order. Truncated traces contribute the iterations they have.
pub fn aggregate(traces: &[RegretTrace]) -> Vec<AggregateRow> {
    let mut methods: Vec<&str> = Vec::new();
    for t in traces {
        if !methods.contains(&t.method.as_str()) {
            methods.push(&t.method);
        }
    }
    let mut rows = Vec::new();
    for method in methods {
        let group: Vec<&RegretTrace> = traces.iter().filter(|t| t.method == method).collect();
        let max_len = group.iter().map(|t| t.records.len()).max().unwrap_or(0);
        for it in 0..max_len {
            let regrets: Vec<f64> = group
                .iter()
                .filter_map(|t| t.records.get(it).map(|r| r.regret))
                .collect();
            if regrets.is_empty() {
                continue;
            }
            let (mean_regret, ci95) = mean_ci95(&regrets);
            rows.push(AggregateRow {
                iteration: it,
                method: method.to_string(),
                mean_regret,
                ci95,
            });
        }
    }
    rows
}

pub fn per_run_csv(traces: &[RegretTrace]) -> String {
    let mut out = String::from("iteration,method,seed,regret\n");
    for t in traces {
        for r in &t.records {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.iteration, t.method, t.seed, r.regret
            ));
        }
    }
    out
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from("iteration,method,mean_regret,ci95\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.iteration, r.method, r.mean_regret, r.ci95
        ));
    }
    out
}

pub fn timings_csv(traces: &[RegretTrace]) -> String {
    let mut out = String::from("iteration,method,seed,wall_secs\n");
    for t in traces {
        for r in &t.records {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.iteration, t.method, t.seed, r.wall_secs
            ));
        }
    }
    out
}

/// Resolve the output directory: relative paths nest under
/// [`OUT_ROOT_ENV`] when it is set.
pub fn resolve_out_dir(configured: Option<&str>) -> PathBuf {
    let dir = configured.unwrap_or("graphbo-out");
    match std::env::var(OUT_ROOT_ENV) {
        Ok(root) if !Path::new(dir).is_absolute() => Path::new(&root).join(dir),
        _ => PathBuf::from(dir),
    }
}

/// Write per-run, aggregate, and timing CSVs plus the regret plot (and an
/// error listing when any run stopped early). Returns the written paths.
pub fn aggregate_and_export(
    traces: &[RegretTrace],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ExperimentError> {
    if traces.is_empty() {
        return Err(ExperimentError::Config("no traces to export".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|source| ExperimentError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let rows = aggregate(traces);
    let mut written = Vec::new();
    for (name, contents) in [
        ("per_run.csv", per_run_csv(traces)),
        ("aggregate.csv", aggregate_csv(&rows)),
        ("timings.csv", timings_csv(traces)),
        ("regret.svg", crate::plot::regret_plot(&rows, "Simple regret")),
    ] {
        let path = out_dir.join(name);
        write_file(&path, &contents)?;
        written.push(path);
    }
    let errors: Vec<String> = traces
        .iter()
        .filter_map(|t| {
            t.error
                .as_ref()
                .map(|e| format!("{} seed {}: {e}", t.method, t.seed))
        })
        .collect();
    if !errors.is_empty() {
        let path = out_dir.join("errors.txt");
        write_file(&path, &(errors.join("\n") + "\n"))?;
        written.push(path);
    }
    Ok(written)
}

/// Write each run's final observation set as a `u v w` edge list
/// (`omega_<method>_<seed>.txt`), readable by [`load_edge_list`] and the
/// `stats` subcommand. Traces without edge observations (baselines) are
/// skipped. Returns the written paths.
pub fn export_observations(
    traces: &[RegretTrace],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ExperimentError> {
    std::fs::create_dir_all(out_dir).map_err(|source| ExperimentError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let mut written = Vec::new();
    for t in traces {
        if t.final_observations.is_empty() {
            continue;
        }
        let mut contents = String::new();
        for &(u, v, w) in &t.final_observations {
            contents.push_str(&format!("{u} {v} {w}\n"));
        }
        let path = out_dir.join(format!("omega_{}_{}.txt", t.method, t.seed));
        write_file(&path, &contents)?;
        written.push(path);
    }
    Ok(written)
}

/// One cell of the (d1, d2) ablation grid.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub d1: usize,
    pub d2: usize,
    pub mean_final_gap: f64,
    pub ci95: f64,
}

/// Sweep surrogate/embedding dimensions on the first optimizer method of
/// the config, re-running all seeds per cell.
pub fn run_ablation(
    cfg: &ExperimentConfig,
    d1_list: &[usize],
    d2_list: &[usize],
) -> Result<Vec<AblationRow>, ExperimentError> {
    cfg.validate()?;
    let base = cfg
        .methods
        .iter()
        .find_map(|m| match m {
            MethodSpec::SpectralBo(p) => Some(p.clone()),
            _ => None,
        })
        .ok_or_else(|| {
            ExperimentError::Config("ablation needs a spectral_bo method in the config".into())
        })?;
    if d1_list.is_empty() || d2_list.is_empty() {
        return Err(ExperimentError::Config("empty ablation grid".into()));
    }
    let mut rows = Vec::new();
    for &d1 in d1_list {
        for &d2 in d2_list {
            let mut params = base.clone();
            params.train.d1 = d1;
            params.train.d2 = d2;
            let sub = ExperimentConfig {
                methods: vec![MethodSpec::SpectralBo(params)],
                ..cfg.clone()
            };
            let traces = run_experiment(&sub)?;
            let finals: Vec<f64> = traces.iter().filter_map(|t| t.final_regret()).collect();
            if finals.is_empty() {
                return Err(ExperimentError::Config(format!(
                    "ablation cell d1={d1}, d2={d2} produced no finished runs"
                )));
            }
            let (mean_final_gap, ci95) = mean_ci95(&finals);
            log::info!("ablation d1={d1} d2={d2}: final gap {mean_final_gap:.4} +- {ci95:.4}");
            rows.push(AblationRow {
                d1,
                d2,
                mean_final_gap,
                ci95,
            });
        }
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("d1,d2,mean_final_gap,ci95\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.d1, r.d2, r.mean_final_gap, r.ci95
        ));
    }
    out
}
