//! Verb implementations. Each loads its JSON config (absent file means
//! defaults), folds the command-line overrides in, runs, writes artifacts,
//! and prints a short human-readable summary; errors surface as
//! machine-readable records in `main`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use slda_core::bench::{
    emit_plots_data, iqm, iqm_stderr, run_routing_experiment, run_truss_experiment, write_csv,
    Agents, BenchError, BudgetCell, ResultRow, RouteExperimentConfig, TrussExperimentConfig,
};
use slda_core::mdp::DatasetError;
use slda_core::policy::model_io::{load_model, save_model, ModelIoError};
use slda_core::policy::{ArchDescriptor, PolicyError, PolicyModel, RouteArch, TrussArch};
use slda_core::route::{
    generate_problem, route_with_astar, Cell, RouteEnv, RouteError, RouteState, RoutingProblem,
};
use slda_core::selflearn::{
    run_route_iteration, run_truss_iteration, trajectory_noise, RouteIterationConfig,
    SelfLearnError, TrussIterationConfig,
};
use slda_core::sgts::{generate_trajectory, SearchError};
use slda_core::truss::{BoundaryCondition, BoundaryError, TrussEnv, TrussState};
use slda_core::{derive_seed, Dataset, Environment, SearchParams, Trajectory};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seed streams, shared with the library convention: a model is derived on
/// the MODEL stream, run `r` on the RUN stream, generated problem `i` on
/// the PROBLEM stream.
const STREAM_MODEL: u64 = 0x4d4f;
const STREAM_RUN: u64 = 0x5255;
const STREAM_PROBLEM: u64 = 0x5052;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Boundary(#[from] BoundaryError),
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Model(#[from] ModelIoError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    SelfLearn(#[from] SelfLearnError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Boundary(_) => "boundary",
            CliError::Route(_) => "route",
            CliError::Search(_) => "search",
            CliError::Policy(_) => "policy",
            CliError::Model(_) => "model",
            CliError::Dataset(_) => "dataset",
            CliError::SelfLearn(_) => "selflearn",
            CliError::Bench(_) => "bench",
            CliError::Io { .. } => "io",
        }
    }

    /// Single-line JSON error record printed to stderr.
    pub fn record(&self) -> String {
        serde_json::json!({ "kind": self.kind(), "message": self.to_string() }).to_string()
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

/// Override flags shared by every verb; flags left unset keep the config
/// file's values.
#[derive(Args, Debug, Clone, Default)]
pub struct Overrides {
    /// Simulations per move.
    #[arg(long = "sims", value_name = "N")]
    pub sims: Option<u32>,
    /// Rollout depth.
    #[arg(long, value_name = "N")]
    pub depth: Option<u32>,
    /// Actions sampled per expansion.
    #[arg(long, value_name = "N")]
    pub width: Option<usize>,
    /// Exploration coefficient.
    #[arg(long, value_name = "X")]
    pub beta: Option<f64>,
    /// Discount factor.
    #[arg(long, value_name = "X")]
    pub gamma: Option<f64>,
    /// Episodes (run), samples per condition (train), augmentations per
    /// trajectory (augment), or runs per cell (bench).
    #[arg(long, value_name = "N")]
    pub runs: Option<u32>,
    /// Base seed; everything else derives from it.
    #[arg(long, value_name = "SEED")]
    pub seed: Option<u64>,
    /// Concurrent rollouts per search.
    #[arg(long, value_name = "N")]
    pub workers: Option<usize>,
    /// Output path for the verb's main artifact.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

impl Overrides {
    fn apply_search(&self, p: &mut SearchParams) {
        if let Some(v) = self.sims {
            p.simulations = v;
        }
        if let Some(v) = self.depth {
            p.depth = v;
        }
        if let Some(v) = self.width {
            p.width = v;
        }
        if let Some(v) = self.beta {
            p.beta = v;
        }
        if let Some(v) = self.gamma {
            p.gamma = v;
        }
        if let Some(v) = self.seed {
            p.seed = v;
        }
        if let Some(v) = self.workers {
            p.workers = v;
        }
    }

    fn out_path(&self, config: &Option<PathBuf>) -> Option<PathBuf> {
        self.out.clone().or_else(|| config.clone())
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p.display().to_string()))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Config(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    ensure_parent(path)?;
    fs::write(path, text).map_err(io_err(path.display().to_string()))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir.display().to_string()))?;
    }
    Ok(())
}

// ---------------------------------------------------------------- truss run

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrussRunConfig {
    /// Built-in boundary-condition name or a config file path.
    pub boundary: String,
    /// Trained policy file; omitted means a seed-derived random policy.
    pub model: Option<PathBuf>,
    /// Architecture of the random policy when no model file is given.
    pub arch: TrussArch,
    pub runs: u32,
    pub search: SearchParams,
    pub out: Option<PathBuf>,
}

impl Default for TrussRunConfig {
    fn default() -> Self {
        TrussRunConfig {
            boundary: "middle-basic".to_string(),
            model: None,
            arch: TrussArch::default(),
            runs: 1,
            search: SearchParams::default(),
            out: None,
        }
    }
}

#[derive(Debug, Serialize)]
struct RunRecord {
    run: u32,
    seed: u64,
    steps: usize,
    best_reward: f64,
    final_reward: f64,
    feasible: bool,
    seconds: f64,
}

#[derive(Debug, Serialize)]
struct TrussRunReport {
    environment: &'static str,
    condition: String,
    variant: String,
    search: SearchParams,
    runs: Vec<RunRecord>,
    iqm: Option<f64>,
    stderr: Option<f64>,
}

/// Loads the model file when given, otherwise derives the untrained policy
/// from the base seed (the same policy a fresh iteration starts from).
fn resolve_model(
    path: Option<&Path>,
    fallback: ArchDescriptor,
    seed: u64,
) -> Result<(PolicyModel, String), CliError> {
    match path {
        Some(p) => {
            let model = load_model(p)?;
            Ok((model, format!("model:{}", p.display())))
        }
        None => {
            let model = PolicyModel::new_random(fallback, derive_seed(seed, STREAM_MODEL, 0));
            Ok((model, "untrained".to_string()))
        }
    }
}

fn episode_record<S>(run: u32, seed: u64, t: &Trajectory<S>, seconds: f64) -> RunRecord {
    RunRecord {
        run,
        seed,
        steps: t.steps.len(),
        best_reward: t.steps.iter().map(|s| s.reward).fold(0.0, f64::max),
        final_reward: t.steps.last().map_or(0.0, |s| s.reward),
        feasible: t.feasible,
        seconds,
    }
}

pub fn truss_run(config: Option<&Path>, overrides: &Overrides) -> Result<(), CliError> {
    let mut config: TrussRunConfig = load_config(config)?;
    overrides.apply_search(&mut config.search);
    if let Some(v) = overrides.runs {
        config.runs = v;
    }
    if config.runs < 1 {
        return Err(CliError::Config("runs must be at least 1".into()));
    }
    config.search.validate()?;

    let bc = BoundaryCondition::resolve(&config.boundary)?;
    let condition = bc.name.clone();
    let env = TrussEnv::new(bc)?;
    let (model, variant) = resolve_model(
        config.model.as_deref(),
        ArchDescriptor::Truss(config.arch.clone()),
        config.search.seed,
    )?;
    model.ensure_environment(env.tag())?;

    let mut runs = Vec::with_capacity(config.runs as usize);
    for r in 0..config.runs as u64 {
        let seed = derive_seed(config.search.seed, STREAM_RUN, r);
        let params = SearchParams {
            seed,
            ..config.search.clone()
        };
        let started = Instant::now();
        let trajectory = generate_trajectory(&env, &model, params)?;
        let record = episode_record(r as u32, seed, &trajectory, started.elapsed().as_secs_f64());
        println!(
            "run={} seed={} steps={} best_reward={:.4} feasible={} ({:.1}s)",
            record.run,
            record.seed,
            record.steps,
            record.best_reward,
            record.feasible,
            record.seconds
        );
        runs.push(record);
    }
    let values: Vec<f64> = runs.iter().map(|r| r.best_reward).collect();
    let report = TrussRunReport {
        environment: "truss",
        condition,
        variant,
        search: config.search.clone(),
        iqm: iqm(&values).ok(),
        stderr: iqm_stderr(&values).ok(),
        runs,
    };
    if let Some(iqm) = report.iqm {
        println!("iqm={iqm:.4} stderr={:.4}", report.stderr.unwrap_or(0.0));
    }
    if let Some(out) = overrides.out_path(&config.out) {
        write_json(&report, &out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

// ---------------------------------------------------------------- route run

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProblemSpec {
    pub grid_size: usize,
    pub layers: usize,
    pub capacity: u8,
    pub pins: usize,
    pub seed: u64,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        ProblemSpec {
            grid_size: 8,
            layers: 2,
            capacity: 3,
            pins: 10,
            seed: 0,
        }
    }
}

impl ProblemSpec {
    fn generate(&self, index: u64) -> Result<RoutingProblem, RouteError> {
        generate_problem(
            self.grid_size,
            self.layers,
            self.capacity,
            self.pins,
            derive_seed(self.seed, STREAM_PROBLEM, index),
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RouteRunConfig {
    /// Problem file; omitted means a problem generated from `generate`.
    pub problem: Option<PathBuf>,
    pub generate: ProblemSpec,
    pub model: Option<PathBuf>,
    pub arch: RouteArch,
    pub runs: u32,
    pub search: SearchParams,
    pub compare_astar: bool,
    pub out: Option<PathBuf>,
}

impl Default for RouteRunConfig {
    fn default() -> Self {
        RouteRunConfig {
            problem: None,
            generate: ProblemSpec::default(),
            model: None,
            arch: RouteArch::default(),
            runs: 3,
            search: SearchParams {
                simulations: 512,
                depth: 25,
                width: 10,
                beta: 50.0,
                gamma: 0.5,
                ..SearchParams::default()
            },
            compare_astar: true,
            out: None,
        }
    }
}

#[derive(Debug, Serialize)]
struct RouteRunRecord {
    run: u32,
    seed: u64,
    wirelength: usize,
    vias: usize,
    feasible: bool,
    seconds: f64,
}

/// Per-net ordered cell paths plus the summary totals.
#[derive(Debug, Serialize)]
struct Solution {
    nets: Vec<Vec<Cell>>,
    wirelength: usize,
    planar_wirelength: usize,
    vias: usize,
    overflow: usize,
}

#[derive(Debug, Serialize)]
struct AStarSummary {
    wirelength: usize,
    overflow: usize,
}

#[derive(Debug, Serialize)]
struct RouteRunReport {
    environment: &'static str,
    problem: RoutingProblem,
    variant: String,
    search: SearchParams,
    runs: Vec<RouteRunRecord>,
    /// Best feasible run's solution.
    best: Option<Solution>,
    astar: Option<AStarSummary>,
    /// (best - astar) / astar; positive means longer than A*.
    pct_diff: Option<f64>,
}

fn solution_from(state: &RouteState) -> Solution {
    Solution {
        nets: state.routed.clone(),
        wirelength: state.total_wirelength(),
        planar_wirelength: state.planar_wirelength(),
        vias: state.via_count(),
        overflow: 0,
    }
}

pub fn route_run(config: Option<&Path>, overrides: &Overrides) -> Result<(), CliError> {
    let mut config: RouteRunConfig = load_config(config)?;
    overrides.apply_search(&mut config.search);
    if let Some(v) = overrides.runs {
        config.runs = v;
    }
    if config.runs < 1 {
        return Err(CliError::Config("runs must be at least 1".into()));
    }
    config.search.validate()?;

    let problem = match &config.problem {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path.display().to_string()))?;
            serde_json::from_str::<RoutingProblem>(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => config.generate.generate(0)?,
    };
    if config.arch.grid != problem.grid_size {
        return Err(CliError::Config(format!(
            "policy grid {} does not match problem grid {}",
            config.arch.grid, problem.grid_size
        )));
    }
    let env = RouteEnv::new(problem.clone())?;
    let (model, variant) = resolve_model(
        config.model.as_deref(),
        ArchDescriptor::Route(config.arch.clone()),
        config.search.seed,
    )?;
    model.ensure_environment(env.tag())?;

    let mut runs = Vec::with_capacity(config.runs as usize);
    let mut best: Option<Solution> = None;
    for r in 0..config.runs as u64 {
        let seed = derive_seed(config.search.seed, STREAM_RUN, r);
        let params = SearchParams {
            seed,
            ..config.search.clone()
        };
        let started = Instant::now();
        let trajectory = generate_trajectory(&env, &model, params)?;
        let state = &trajectory.final_state;
        let record = RouteRunRecord {
            run: r as u32,
            seed,
            wirelength: state.total_wirelength(),
            vias: state.via_count(),
            feasible: trajectory.feasible,
            seconds: started.elapsed().as_secs_f64(),
        };
        println!(
            "run={} seed={} wirelength={} vias={} feasible={} ({:.1}s)",
            record.run,
            record.seed,
            record.wirelength,
            record.vias,
            record.feasible,
            record.seconds
        );
        if trajectory.feasible
            && best
                .as_ref()
                .is_none_or(|b| state.total_wirelength() < b.wirelength)
        {
            best = Some(solution_from(state));
        }
        runs.push(record);
    }

    let astar = config.compare_astar.then(|| {
        let report = route_with_astar(&problem);
        AStarSummary {
            wirelength: report.total_wirelength,
            overflow: report.total_overflow,
        }
    });
    let pct_diff = match (&best, &astar) {
        (Some(b), Some(a)) if a.wirelength > 0 => {
            Some((b.wirelength as f64 - a.wirelength as f64) / a.wirelength as f64)
        }
        _ => None,
    };
    if let Some(a) = &astar {
        println!("astar wirelength={} overflow={}", a.wirelength, a.overflow);
    }
    match (&best, pct_diff) {
        (Some(b), Some(pct)) => {
            println!(
                "best wirelength={} ({:+.2}% vs astar)",
                b.wirelength,
                100.0 * pct
            )
        }
        (Some(b), None) => println!("best wirelength={}", b.wirelength),
        (None, _) => println!("no feasible run"),
    }

    let report = RouteRunReport {
        environment: "route",
        problem,
        variant,
        search: config.search.clone(),
        runs,
        best,
        astar,
        pct_diff,
    };
    if let Some(out) = overrides.out_path(&config.out) {
        write_json(&report, &out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

// -------------------------------------------------------------------- train

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOutputs {
    pub model: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "environment", rename_all = "kebab-case")]
pub enum TrainSpec {
    Truss {
        #[serde(default)]
        iteration: TrussIterationConfig,
        #[serde(default)]
        outputs: TrainOutputs,
    },
    Route {
        #[serde(default)]
        iteration: RouteIterationConfig,
        #[serde(default)]
        outputs: TrainOutputs,
    },
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec::Truss {
            iteration: TrussIterationConfig::default(),
            outputs: TrainOutputs::default(),
        }
    }
}

pub fn train(config: Option<&Path>, overrides: &Overrides) -> Result<(), CliError> {
    let spec: TrainSpec = load_config(config)?;
    match spec {
        TrainSpec::Truss {
            mut iteration,
            outputs,
        } => {
            overrides.apply_search(&mut iteration.search);
            if let Some(v) = overrides.seed {
                iteration.seed = v;
            }
            if let Some(v) = overrides.runs {
                iteration.samples_per_condition = v;
            }
            let artifacts = run_truss_iteration(&iteration)?;
            print!("{}", artifacts.report.render());
            save_train_outputs(
                &artifacts.model,
                &artifacts.dataset,
                &artifacts.report,
                &outputs,
                overrides,
            )
        }
        TrainSpec::Route {
            mut iteration,
            outputs,
        } => {
            overrides.apply_search(&mut iteration.search);
            if let Some(v) = overrides.seed {
                iteration.seed = v;
            }
            if let Some(v) = overrides.runs {
                iteration.runs_per_problem = v;
            }
            let artifacts = run_route_iteration(&iteration)?;
            print!("{}", artifacts.report.render());
            save_train_outputs(
                &artifacts.model,
                &artifacts.dataset,
                &artifacts.report,
                &outputs,
                overrides,
            )
        }
    }
}

fn save_train_outputs<S>(
    model: &PolicyModel,
    dataset: &Dataset<S>,
    report: &slda_core::selflearn::IterationReport,
    outputs: &TrainOutputs,
    overrides: &Overrides,
) -> Result<(), CliError>
where
    S: Serialize + DeserializeOwned + Clone + std::fmt::Debug + PartialEq,
{
    if let Some(path) = overrides.out_path(&outputs.model) {
        ensure_parent(&path)?;
        save_model(model, &path)?;
        println!("wrote {}", path.display());
    }
    if let Some(path) = &outputs.dataset {
        ensure_parent(path)?;
        dataset.save(path)?;
        println!("wrote {}", path.display());
    }
    if let Some(path) = &outputs.report {
        write_json(report, path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

// ------------------------------------------------------------------ augment

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub boundary: String,
    /// Input dataset; must be a truss dataset.
    pub input: Option<PathBuf>,
    /// Rebuild orderings generated per feasible trajectory.
    pub augmentations: u32,
    /// Also keep each original trajectory.
    pub keep_original: bool,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            boundary: "middle-basic".to_string(),
            input: None,
            augmentations: 10,
            keep_original: false,
            seed: 0,
            out: None,
        }
    }
}

pub fn augment(config: Option<&Path>, overrides: &Overrides) -> Result<(), CliError> {
    let mut config: AugmentConfig = load_config(config)?;
    if let Some(v) = overrides.runs {
        config.augmentations = v;
    }
    if let Some(v) = overrides.seed {
        config.seed = v;
    }
    if config.augmentations < 1 {
        return Err(CliError::Config("augmentations must be at least 1".into()));
    }
    let input = config
        .input
        .as_deref()
        .ok_or_else(|| CliError::Config("augment requires `input` in the config file".into()))?;
    let out = overrides
        .out_path(&config.out)
        .ok_or_else(|| CliError::Config("augment requires `out` in the config or --out".into()))?;

    let dataset = Dataset::<TrussState>::load(input)?;
    if dataset.environment_tag != "truss" {
        return Err(CliError::Config(format!(
            "augmentation is truss-only; dataset is tagged `{}`",
            dataset.environment_tag
        )));
    }
    let env = TrussEnv::new(BoundaryCondition::resolve(&config.boundary)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut output = Dataset::new("truss", config.seed);
    let mut dropped = 0usize;
    for trajectory in &dataset.trajectories {
        if !env.is_feasible_design(&trajectory.final_state) {
            dropped += 1;
            continue;
        }
        if config.keep_original {
            output.trajectories.push(trajectory.clone());
        }
        let rebuilt = trajectory_noise(
            &env,
            &trajectory.final_state,
            config.augmentations,
            &mut rng,
        )?;
        output.trajectories.extend(rebuilt);
    }
    println!(
        "trajectories in={} feasible={} dropped={} out={} decisions={}",
        dataset.trajectories.len(),
        dataset.trajectories.len() - dropped,
        dropped,
        output.trajectories.len(),
        output.decision_count()
    );
    ensure_parent(&out)?;
    output.save(&out)?;
    println!("wrote {}", out.display());
    Ok(())
}

// -------------------------------------------------------------------- bench

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelPaths {
    pub trained_t: Option<PathBuf>,
    pub trained_mt: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RouteProblemSource {
    /// Problem files, routed in order.
    pub files: Vec<PathBuf>,
    /// Generated when `files` is empty: `count` problems seeded from `spec`.
    pub count: u32,
    pub spec: ProblemSpec,
}

impl Default for RouteProblemSource {
    fn default() -> Self {
        RouteProblemSource {
            files: Vec::new(),
            count: 4,
            spec: ProblemSpec::default(),
        }
    }
}

impl RouteProblemSource {
    fn problems(&self) -> Result<Vec<RoutingProblem>, CliError> {
        if !self.files.is_empty() {
            return self
                .files
                .iter()
                .map(|path| {
                    let text =
                        fs::read_to_string(path).map_err(io_err(path.display().to_string()))?;
                    serde_json::from_str::<RoutingProblem>(&text)
                        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
                })
                .collect();
        }
        (0..self.count as u64)
            .map(|i| Ok(self.spec.generate(i)?))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "environment", rename_all = "kebab-case")]
pub enum BenchSpec {
    Truss {
        #[serde(default)]
        experiment: TrussExperimentConfig,
        #[serde(default)]
        models: ModelPaths,
        #[serde(default)]
        out: Option<PathBuf>,
        /// Directory for per-(condition, variant) plot series files.
        #[serde(default)]
        plots: Option<PathBuf>,
    },
    Route {
        #[serde(default)]
        experiment: RouteExperimentConfig,
        #[serde(default)]
        problems: RouteProblemSource,
        #[serde(default)]
        models: ModelPaths,
        #[serde(default)]
        out: Option<PathBuf>,
    },
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec::Truss {
            experiment: TrussExperimentConfig::default(),
            models: ModelPaths::default(),
            out: None,
            plots: None,
        }
    }
}

/// Replaces the whole budget grid with one overridden cell when any grid
/// flag is set; budgets are a grid, so partial per-cell edits would be
/// ambiguous.
fn apply_grid_overrides(grid: &mut Vec<BudgetCell>, overrides: &Overrides) {
    if overrides.sims.is_none() && overrides.depth.is_none() && overrides.width.is_none() {
        return;
    }
    let base = grid.first().cloned().unwrap_or(BudgetCell {
        simulations: 128,
        depth: 5,
        width: 10,
    });
    *grid = vec![BudgetCell {
        simulations: overrides.sims.unwrap_or(base.simulations),
        depth: overrides.depth.unwrap_or(base.depth),
        width: overrides.width.unwrap_or(base.width),
    }];
}

fn apply_experiment_overrides(
    search: &mut SearchParams,
    grid: &mut Vec<BudgetCell>,
    runs: &mut u32,
    seed: &mut u64,
    overrides: &Overrides,
) {
    if let Some(v) = overrides.beta {
        search.beta = v;
    }
    if let Some(v) = overrides.gamma {
        search.gamma = v;
    }
    if let Some(v) = overrides.workers {
        search.workers = v;
    }
    apply_grid_overrides(grid, overrides);
    if let Some(v) = overrides.runs {
        *runs = v;
    }
    if let Some(v) = overrides.seed {
        *seed = v;
    }
}

struct LoadedModels {
    trained_t: Option<PolicyModel>,
    trained_mt: Option<PolicyModel>,
}

impl LoadedModels {
    fn load(paths: &ModelPaths) -> Result<Self, CliError> {
        let load = |p: &Option<PathBuf>| p.as_deref().map(load_model).transpose();
        Ok(LoadedModels {
            trained_t: load(&paths.trained_t)?,
            trained_mt: load(&paths.trained_mt)?,
        })
    }

    fn agents(&self) -> Agents<'_> {
        Agents {
            trained_t: self.trained_t.as_ref(),
            trained_mt: self.trained_mt.as_ref(),
        }
    }
}

fn print_rows(rows: &[ResultRow]) {
    for row in rows {
        let mut line = format!(
            "variant={} condition={} sims={} depth={} width={} runs={}",
            row.variant, row.condition, row.simulations, row.depth, row.width, row.runs
        );
        if let (Some(iqm), Some(stderr)) = (row.iqm, row.stderr) {
            line.push_str(&format!(" iqm={iqm:.4} stderr={stderr:.4}"));
        }
        if let Some(route) = &row.route {
            if let Some(best) = route.best_wirelength {
                line.push_str(&format!(" best_wl={best}"));
            }
            line.push_str(&format!(" astar_wl={}", route.astar_wirelength));
            if let Some(pct) = route.pct_diff {
                line.push_str(&format!(" pct_diff={:+.2}%", 100.0 * pct));
            }
        }
        println!("{line}");
    }
}

pub fn bench(config: Option<&Path>, overrides: &Overrides) -> Result<(), CliError> {
    let spec: BenchSpec = load_config(config)?;
    match spec {
        BenchSpec::Truss {
            mut experiment,
            models,
            out,
            plots,
        } => {
            apply_experiment_overrides(
                &mut experiment.search,
                &mut experiment.budget_grid,
                &mut experiment.runs,
                &mut experiment.seed,
                overrides,
            );
            let loaded = LoadedModels::load(&models)?;
            let rows = run_truss_experiment(&experiment, &loaded.agents())?;
            print_rows(&rows);
            let out = overrides
                .out_path(&out)
                .unwrap_or_else(|| PathBuf::from("bench-truss.csv"));
            ensure_parent(&out)?;
            write_csv(&rows, &out)?;
            println!("wrote {}", out.display());
            if let Some(dir) = plots {
                for path in emit_plots_data(&out, &dir)? {
                    println!("wrote {}", path.display());
                }
            }
            Ok(())
        }
        BenchSpec::Route {
            mut experiment,
            problems,
            models,
            out,
        } => {
            apply_experiment_overrides(
                &mut experiment.search,
                &mut experiment.budget_grid,
                &mut experiment.runs,
                &mut experiment.seed,
                overrides,
            );
            if experiment.problems.is_empty() {
                experiment.problems = problems.problems()?;
            }
            let loaded = LoadedModels::load(&models)?;
            let rows = run_routing_experiment(&experiment, &loaded.agents())?;
            print_rows(&rows);
            let out = overrides
                .out_path(&out)
                .unwrap_or_else(|| PathBuf::from("bench-route.csv"));
            ensure_parent(&out)?;
            write_csv(&rows, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}
