//! Command-line harness: reproduce the optimization comparisons, the
//! sample-complexity phase experiment, the dimension ablation, and quick
//! observation-pattern statistics.
//!
//! Exit codes: 0 success, 1 configuration/usage error, 2 runtime error.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use graphbo::acquisition::EiConvention;
use graphbo::experiment::{
    aggregate, aggregate_and_export, ablation_csv, export_observations, resolve_out_dir,
    run_ablation, run_experiment, ExperimentConfig, ExperimentError, MethodSpec,
};
use graphbo::gp::KernelKind;
use graphbo::graph::load_edge_list;
use graphbo::observation::ObservationSet;
use graphbo::sampling::{
    default_grid, observation_stats_with, phase_rows_to_csv, recovery_phase_experiment,
    PhaseConfig, SamplerKind,
};

#[derive(Parser)]
#[command(
    name = "graphbo",
    version,
    about = "Global optimization on graphs from partial structure observations"
)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured methods and export regret curves
    Run(RunArgs),
    /// Run only the query baselines of a config (all four when it has none)
    Baseline(BaselineArgs),
    /// Sample-complexity sweep for low-rank completion
    Phase(PhaseArgs),
    /// Sweep the surrogate dimensions d1 x d2 on the config's optimizer
    Ablate(AblateArgs),
    /// Observation-pattern statistics of a saved edge list
    Stats(StatsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Polynomial,
    Matern,
    Rbf,
}

impl From<KernelArg> for KernelKind {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Polynomial => KernelKind::Polynomial,
            KernelArg::Matern => KernelKind::Matern,
            KernelArg::Rbf => KernelKind::Rbf,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EiArg {
    Min,
    Max,
}

impl From<EiArg> for EiConvention {
    fn from(e: EiArg) -> Self {
        match e {
            EiArg::Min => EiConvention::Min,
            EiArg::Max => EiConvention::Max,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerArg {
    Uniform,
    Balanced,
    SeedOnly,
}

impl From<SamplerArg> for SamplerKind {
    fn from(s: SamplerArg) -> Self {
        match s {
            SamplerArg::Uniform => SamplerKind::Uniform,
            SamplerArg::Balanced => SamplerKind::Balanced,
            SamplerArg::SeedOnly => SamplerKind::SeedOnly,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Output directory (relative paths resolve under $GRAPHBO_OUT_ROOT)
    #[arg(long)]
    out: Option<String>,
    /// Replace the config's seed list (comma separated)
    #[arg(long, value_delimiter = ',', value_name = "SEED,...")]
    seed: Option<Vec<u64>>,
    /// Override the iteration budget T
    #[arg(long)]
    t: Option<usize>,
    /// Override the initial design size N0
    #[arg(long)]
    n0: Option<usize>,
    /// Override the spectral kernel of every optimizer method
    #[arg(long, value_enum)]
    kernel: Option<KernelArg>,
    /// Override the improvement convention of every optimizer method
    #[arg(long = "ei-convention", value_enum)]
    ei_convention: Option<EiArg>,
    /// Override the noiseless-GP switch of every optimizer method
    #[arg(long, value_name = "BOOL")]
    noiseless: Option<bool>,
}

#[derive(Args)]
struct BaselineArgs {
    /// JSON experiment config
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Output directory (relative paths resolve under $GRAPHBO_OUT_ROOT)
    #[arg(long)]
    out: Option<String>,
    /// Replace the config's seed list (comma separated)
    #[arg(long, value_delimiter = ',', value_name = "SEED,...")]
    seed: Option<Vec<u64>>,
    /// Override the iteration budget T
    #[arg(long)]
    t: Option<usize>,
    /// Override the initial design size N0
    #[arg(long)]
    n0: Option<usize>,
}

#[derive(Args)]
struct PhaseArgs {
    /// Latent rank of the ground truth
    #[arg(long, default_value_t = 3)]
    rank: usize,
    /// Node count
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Observation-count grid (comma separated; default: log grid)
    #[arg(long, value_delimiter = ',', value_name = "SIZE,...")]
    grid: Option<Vec<usize>>,
    /// Trials per grid value
    #[arg(long)]
    trials: Option<usize>,
    /// Observation-growth policy
    #[arg(long, value_enum)]
    sampler: Option<SamplerArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// SGD epochs per trial
    #[arg(long)]
    steps: Option<usize>,
    /// Output directory (relative paths resolve under $GRAPHBO_OUT_ROOT)
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct AblateArgs {
    /// JSON experiment config (its first spectral_bo method is swept)
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Surrogate dimensions to sweep (comma separated)
    #[arg(long, value_delimiter = ',', required = true, value_name = "D1,...")]
    d1: Vec<usize>,
    /// Embedding dimensions to sweep (comma separated)
    #[arg(long, value_delimiter = ',', required = true, value_name = "D2,...")]
    d2: Vec<usize>,
    /// Replace the config's seed list (comma separated)
    #[arg(long, value_delimiter = ',', value_name = "SEED,...")]
    seed: Option<Vec<u64>>,
    /// Override the iteration budget T
    #[arg(long)]
    t: Option<usize>,
    /// Output directory (relative paths resolve under $GRAPHBO_OUT_ROOT)
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct StatsArgs {
    /// Edge list of observed pairs (u v [w])
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// Ambient node count (pads isolated trailing nodes)
    #[arg(long)]
    n: Option<usize>,
    /// Use edge weights instead of the 0/1 pattern for the spectral stats
    #[arg(long)]
    weighted: bool,
}

enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

fn classify(e: ExperimentError) -> CliError {
    match e {
        ExperimentError::Config(m) => CliError::Config(m),
        ExperimentError::Sampling(s) => CliError::Config(s.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, CliError> {
    // an unreadable or unparseable config is a configuration problem
    ExperimentConfig::from_json_file(path).map_err(|e| CliError::Config(e.to_string()))
}

fn export_and_summarize(
    traces: &[graphbo::experiment::RegretTrace],
    out_dir: Option<&str>,
    save_observations: bool,
) -> Result<(), CliError> {
    let dir = resolve_out_dir(out_dir);
    let mut written = aggregate_and_export(traces, &dir).map_err(classify)?;
    if save_observations {
        written.extend(export_observations(traces, &dir).map_err(classify)?);
    }
    let rows = aggregate(traces);
    let mut order: Vec<&str> = Vec::new();
    for r in &rows {
        if !order.contains(&r.method.as_str()) {
            order.push(&r.method);
        }
    }
    for method in order {
        if let Some(last) = rows.iter().rev().find(|r| r.method == method) {
            println!(
                "{method}: final regret (iteration {}) {:.6} +- {:.6}",
                last.iteration, last.mean_regret, last.ci95
            );
        }
    }
    for p in &written {
        println!("wrote {}", p.display());
    }
    let failed = traces.iter().filter(|t| t.error.is_some()).count();
    if failed > 0 {
        return Err(CliError::Runtime(format!(
            "{failed} of {} runs stopped early (see errors.txt)",
            traces.len()
        )));
    }
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.config)?;
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.clone());
    }
    if let Some(seeds) = &args.seed {
        cfg.seeds = seeds.clone();
    }
    if let Some(t) = args.t {
        cfg.t = t;
    }
    if let Some(n0) = args.n0 {
        cfg.n0 = n0;
    }
    for m in &mut cfg.methods {
        if let MethodSpec::SpectralBo(p) = m {
            if let Some(k) = args.kernel {
                p.kernel = k.into();
            }
            if let Some(e) = args.ei_convention {
                p.ei = e.into();
            }
            if let Some(nl) = args.noiseless {
                p.noiseless = nl;
            }
        }
    }
    let traces = run_experiment(&cfg).map_err(classify)?;
    export_and_summarize(&traces, cfg.out_dir.as_deref(), cfg.save_observations)
}

fn cmd_baseline(args: &BaselineArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.config)?;
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.clone());
    }
    if let Some(seeds) = &args.seed {
        cfg.seeds = seeds.clone();
    }
    if let Some(t) = args.t {
        cfg.t = t;
    }
    if let Some(n0) = args.n0 {
        cfg.n0 = n0;
    }
    cfg.methods.retain(|m| !matches!(m, MethodSpec::SpectralBo(_)));
    if cfg.methods.is_empty() {
        cfg.methods = vec![
            MethodSpec::Random,
            MethodSpec::Local,
            MethodSpec::Bfs,
            MethodSpec::Dfs,
        ];
    }
    let traces = run_experiment(&cfg).map_err(classify)?;
    export_and_summarize(&traces, cfg.out_dir.as_deref(), cfg.save_observations)
}

fn cmd_phase(args: &PhaseArgs) -> Result<(), CliError> {
    let mut cfg = PhaseConfig::for_problem(args.rank, args.n);
    if let Some(grid) = &args.grid {
        cfg.sample_grid = grid.clone();
    } else {
        cfg.sample_grid = default_grid(args.rank, args.n);
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    if let Some(s) = args.sampler {
        cfg.sampler_kind = s.into();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(steps) = args.steps {
        cfg.steps = steps;
    }
    let rows = recovery_phase_experiment(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
    for &size in &cfg.sample_grid {
        let trial_rows: Vec<_> = rows.iter().filter(|r| r.omega_size == size).collect();
        if trial_rows.is_empty() {
            continue;
        }
        let successes = trial_rows.iter().filter(|r| r.success).count();
        let mean_err =
            trial_rows.iter().map(|r| r.rel_error).sum::<f64>() / trial_rows.len() as f64;
        println!(
            "|Omega| = {size}: success rate {}/{} (mean rel error {mean_err:.4})",
            successes,
            trial_rows.len()
        );
    }
    let dir = resolve_out_dir(args.out.as_deref());
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    let path = dir.join("phase.csv");
    std::fs::write(&path, phase_rows_to_csv(&rows))
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_ablate(args: &AblateArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.config)?;
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.clone());
    }
    if let Some(seeds) = &args.seed {
        cfg.seeds = seeds.clone();
    }
    if let Some(t) = args.t {
        cfg.t = t;
    }
    let rows = run_ablation(&cfg, &args.d1, &args.d2).map_err(classify)?;
    for r in &rows {
        println!(
            "d1 = {}, d2 = {}: final gap {:.6} +- {:.6}",
            r.d1, r.d2, r.mean_final_gap, r.ci95
        );
    }
    let dir = resolve_out_dir(cfg.out_dir.as_deref());
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    let path = dir.join("ablation.csv");
    std::fs::write(&path, ablation_csv(&rows))
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_stats(args: &StatsArgs) -> Result<(), CliError> {
    let loaded = load_edge_list(&args.input, args.n)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", args.input.display())))?;
    let g = loaded.graph;
    if g.n() < 2 {
        return Err(CliError::Config(format!(
            "need at least 2 nodes, found {}",
            g.n()
        )));
    }
    let mut obs = ObservationSet::new(g.n());
    for (u, v, w) in g.edges() {
        obs.insert(u, v, w);
    }
    let stats = observation_stats_with(&obs, None, args.weighted);
    println!(
        "{}",
        serde_json::json!({
            "n": g.n(),
            "observed_pairs": obs.len(),
            "dropped_self_loops": loaded.dropped_self_loops,
            "stats": stats,
        })
    );
    Ok(())
}

/// Parse and dispatch; returns the process exit code.
fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            eprint!("{e}");
            return 1;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Baseline(args) => cmd_baseline(args),
        Command::Phase(args) => cmd_phase(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Stats(args) => cmd_stats(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

fn main() {
    std::process::exit(cli_main(std::env::args_os()));
}
