//! Benchmark harness: seeded experiment grids over agent variants and
//! search budgets, interquartile-mean statistics, CSV emission, and
//! per-figure plot data.
//!
//! Every run's seed derives from the experiment seed by a fixed counter
//! scheme — cell index in (variant x condition x budget) iteration order,
//! then run index within the cell — so any single cell can be re-run in
//! isolation. Wall-clock per action is measured, so timing columns are the
//! one non-deterministic part of a results file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::derive_seed;
use crate::policy::{ArchDescriptor, PolicyModel, RouteArch, TrussArch};
use crate::route::{route_with_astar, RouteEnv, RouteError, RoutingProblem};
use crate::selflearn::best_reward;
use crate::sgts::{generate_trajectory, SearchError, SearchParams};
use crate::truss::{BoundaryError, TrussEnv};

const STREAM_MODEL: u64 = 0x4D4F;
const STREAM_CELL: u64 = 0xCE11;
const STREAM_RUN: u64 = 0x5255;

pub const CSV_SCHEMA: &str = "slda-bench-v1";
const CSV_HEADER: &str = "schema,environment,variant,condition,simulations,depth,width,runs,\
iqm,stderr,seconds_per_action,values,route_runs,best_wl,astar_wl,astar_of,pct_diff";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("need at least {needed} values, got {got}")]
    TooFewValues { needed: usize, got: usize },
    #[error("variant '{0}' requires a model that was not supplied")]
    MissingModel(String),
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("malformed results csv: {0}")]
    MalformedCsv(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Boundary(#[from] BoundaryError),
    #[error(transparent)]
    Route(#[from] RouteError),
}

/// Interquartile mean: drop the lowest and highest floor(n/4) values and
/// average the rest.
pub fn iqm(values: &[f64]) -> Result<f64, BenchError> {
    let mid = interquartile(values)?;
    Ok(mid.iter().sum::<f64>() / mid.len() as f64)
}

/// Standard error of the interquartile mean: sample standard deviation of
/// the middle half over sqrt of its size.
pub fn iqm_stderr(values: &[f64]) -> Result<f64, BenchError> {
    let mid = interquartile(values)?;
    let mean = mid.iter().sum::<f64>() / mid.len() as f64;
    if mid.len() < 2 {
        return Ok(0.0);
    }
    let var = mid.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (mid.len() - 1) as f64;
    Ok((var / mid.len() as f64).sqrt())
}

/// Pooled standard error of a difference between two independent estimates.
pub fn pooled_stderr(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

fn interquartile(values: &[f64]) -> Result<Vec<f64>, BenchError> {
    if values.len() < 4 {
        return Err(BenchError::TooFewValues {
            needed: 4,
            got: values.len(),
        });
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 4;
    Ok(v[k..v.len() - k].to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentVariant {
    Untrained,
    TrainedT,
    TrainedMt,
}

impl AgentVariant {
    pub fn name(&self) -> &'static str {
        match self {
            AgentVariant::Untrained => "untrained",
            AgentVariant::TrainedT => "trained-t",
            AgentVariant::TrainedMt => "trained-mt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetCell {
    pub simulations: u32,
    pub depth: u32,
    pub width: usize,
}

/// The budget sweep: Sim 8/32/128 at depth 5 plus Sim 256 at depth 10.
pub fn default_truss_grid() -> Vec<BudgetCell> {
    vec![
        BudgetCell {
            simulations: 8,
            depth: 5,
            width: 10,
        },
        BudgetCell {
            simulations: 32,
            depth: 5,
            width: 10,
        },
        BudgetCell {
            simulations: 128,
            depth: 5,
            width: 10,
        },
        BudgetCell {
            simulations: 256,
            depth: 10,
            width: 10,
        },
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrussExperimentConfig {
    pub variants: Vec<AgentVariant>,
    pub boundary_conditions: Vec<String>,
    pub budget_grid: Vec<BudgetCell>,
    pub runs: u32,
    pub arch: TrussArch,
    /// Base search settings; each cell overrides simulations/depth/width.
    pub search: SearchParams,
    pub seed: u64,
}

impl Default for TrussExperimentConfig {
    fn default() -> Self {
        TrussExperimentConfig {
            variants: vec![AgentVariant::Untrained],
            boundary_conditions: vec!["middle-basic".to_string()],
            budget_grid: default_truss_grid(),
            runs: 48,
            arch: TrussArch::default(),
            search: SearchParams::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RouteExperimentConfig {
    pub variants: Vec<AgentVariant>,
    pub problems: Vec<RoutingProblem>,
    pub budget_grid: Vec<BudgetCell>,
    pub runs: u32,
    pub arch: RouteArch,
    pub search: SearchParams,
    pub seed: u64,
}

impl Default for RouteExperimentConfig {
    fn default() -> Self {
        RouteExperimentConfig {
            variants: vec![AgentVariant::Untrained],
            problems: Vec::new(),
            budget_grid: vec![BudgetCell {
                simulations: 512,
                depth: 25,
                width: 10,
            }],
            runs: 3,
            arch: RouteArch::default(),
            search: SearchParams {
                beta: 50.0,
                gamma: 0.5,
                ..SearchParams::default()
            },
            seed: 0,
        }
    }
}

/// Trained models for the variants that need them.
#[derive(Default)]
pub struct Agents<'a> {
    pub trained_t: Option<&'a PolicyModel>,
    pub trained_mt: Option<&'a PolicyModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteRunOutcome {
    pub wirelength: usize,
    pub overflow: usize,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteSummary {
    pub per_run: Vec<RouteRunOutcome>,
    /// Lowest wirelength among feasible runs.
    pub best_wirelength: Option<usize>,
    pub astar_wirelength: usize,
    pub astar_overflow: usize,
    /// (best - astar) / astar; positive means longer than A*.
    pub pct_diff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub environment: String,
    pub variant: String,
    pub condition: String,
    pub simulations: u32,
    pub depth: u32,
    pub width: usize,
    pub runs: u32,
    /// Per-run primary metric: truss best reward, route wirelength.
    pub values: Vec<f64>,
    pub iqm: Option<f64>,
    pub stderr: Option<f64>,
    pub seconds_per_action: f64,
    pub route: Option<RouteSummary>,
}

fn cell_params(base: &SearchParams, cell: &BudgetCell, seed: u64) -> SearchParams {
    SearchParams {
        simulations: cell.simulations,
        depth: cell.depth,
        width: cell.width,
        seed,
        ..base.clone()
    }
}

/// Runs the (variant x boundary condition x budget) grid, `runs` seeded
/// episodes per cell.
pub fn run_truss_experiment(
    config: &TrussExperimentConfig,
    agents: &Agents,
) -> Result<Vec<ResultRow>, BenchError> {
    validate_grid(&config.budget_grid, config.runs, &config.variants)?;
    if config.boundary_conditions.is_empty() {
        return Err(BenchError::InvalidConfig(
            "at least one boundary condition is required".into(),
        ));
    }
    config.search.validate()?;
    let untrained = PolicyModel::new_random(
        ArchDescriptor::Truss(config.arch.clone()),
        derive_seed(config.seed, STREAM_MODEL, 0),
    );
    let mut rows = Vec::new();
    let mut cell_index = 0u64;
    for variant in &config.variants {
        let model = variant_model(*variant, &untrained, agents)?;
        for bc in &config.boundary_conditions {
            let env = TrussEnv::from_name(bc)?;
            for cell in &config.budget_grid {
                let cell_seed = derive_seed(config.seed, STREAM_CELL, cell_index);
                cell_index += 1;
                let outcomes: Vec<(f64, usize, f64)> = (0..config.runs as u64)
                    .into_par_iter()
                    .map(|r| {
                        let params = cell_params(
                            &config.search,
                            cell,
                            derive_seed(cell_seed, STREAM_RUN, r),
                        );
                        let t0 = Instant::now();
                        let trajectory = generate_trajectory(&env, model, params)?;
                        Ok((
                            best_reward(&trajectory),
                            trajectory.len(),
                            t0.elapsed().as_secs_f64(),
                        ))
                    })
                    .collect::<Result<_, BenchError>>()?;
                let values: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
                let actions: usize = outcomes.iter().map(|o| o.1).sum();
                let seconds: f64 = outcomes.iter().map(|o| o.2).sum();
                rows.push(ResultRow {
                    environment: "truss".to_string(),
                    variant: variant.name().to_string(),
                    condition: bc.clone(),
                    simulations: cell.simulations,
                    depth: cell.depth,
                    width: cell.width,
                    runs: config.runs,
                    iqm: iqm(&values).ok(),
                    stderr: iqm_stderr(&values).ok(),
                    seconds_per_action: seconds / actions.max(1) as f64,
                    values,
                    route: None,
                });
            }
        }
    }
    Ok(rows)
}

/// Runs agent variants and the A* reference on each routing problem. A*
/// rows carry variant "astar" with its wirelength and overflow; agent rows
/// report best wirelength and percent difference versus A*.
pub fn run_routing_experiment(
    config: &RouteExperimentConfig,
    agents: &Agents,
) -> Result<Vec<ResultRow>, BenchError> {
    validate_grid(&config.budget_grid, config.runs, &config.variants)?;
    if config.problems.is_empty() {
        return Err(BenchError::InvalidConfig(
            "at least one routing problem is required".into(),
        ));
    }
    config.search.validate()?;
    let untrained = PolicyModel::new_random(
        ArchDescriptor::Route(config.arch.clone()),
        derive_seed(config.seed, STREAM_MODEL, 0),
    );
    let mut rows = Vec::new();
    let mut cell_index = 0u64;
    for (p, problem) in config.problems.iter().enumerate() {
        if problem.grid_size != config.arch.grid {
            return Err(BenchError::InvalidConfig(format!(
                "problem {} grid {} does not match policy grid {}",
                p, problem.grid_size, config.arch.grid
            )));
        }
        let condition = format!("problem-{p}");
        let astar = route_with_astar(problem);
        let astar_feasible = astar.total_overflow == 0;
        rows.push(ResultRow {
            environment: "route".to_string(),
            variant: "astar".to_string(),
            condition: condition.clone(),
            simulations: 0,
            depth: 0,
            width: 0,
            runs: 1,
            values: vec![astar.total_wirelength as f64],
            iqm: None,
            stderr: None,
            seconds_per_action: 0.0,
            route: Some(RouteSummary {
                per_run: vec![RouteRunOutcome {
                    wirelength: astar.total_wirelength,
                    overflow: astar.total_overflow,
                    feasible: astar_feasible,
                }],
                best_wirelength: astar_feasible.then_some(astar.total_wirelength),
                astar_wirelength: astar.total_wirelength,
                astar_overflow: astar.total_overflow,
                pct_diff: Some(0.0),
            }),
        });
        let env = RouteEnv::new(problem.clone())?;
        for variant in &config.variants {
            let model = variant_model(*variant, &untrained, agents)?;
            for cell in &config.budget_grid {
                let cell_seed = derive_seed(config.seed, STREAM_CELL, cell_index);
                cell_index += 1;
                let outcomes: Vec<(RouteRunOutcome, usize, f64)> = (0..config.runs as u64)
                    .into_par_iter()
                    .map(|r| {
                        let params = cell_params(
                            &config.search,
                            cell,
                            derive_seed(cell_seed, STREAM_RUN, r),
                        );
                        let t0 = Instant::now();
                        let trajectory = generate_trajectory(&env, model, params)?;
                        let outcome = RouteRunOutcome {
                            wirelength: trajectory.final_state.total_wirelength(),
                            overflow: 0,
                            feasible: trajectory.feasible,
                        };
                        Ok((outcome, trajectory.len(), t0.elapsed().as_secs_f64()))
                    })
                    .collect::<Result<_, BenchError>>()?;
                let per_run: Vec<RouteRunOutcome> = outcomes.iter().map(|o| o.0.clone()).collect();
                let actions: usize = outcomes.iter().map(|o| o.1).sum();
                let seconds: f64 = outcomes.iter().map(|o| o.2).sum();
                let best_wirelength = per_run
                    .iter()
                    .filter(|o| o.feasible)
                    .map(|o| o.wirelength)
                    .min();
                let pct_diff = best_wirelength.map(|w| {
                    (w as f64 - astar.total_wirelength as f64) / astar.total_wirelength as f64
                });
                let values: Vec<f64> = per_run.iter().map(|o| o.wirelength as f64).collect();
                rows.push(ResultRow {
                    environment: "route".to_string(),
                    variant: variant.name().to_string(),
                    condition: condition.clone(),
                    simulations: cell.simulations,
                    depth: cell.depth,
                    width: cell.width,
                    runs: config.runs,
                    iqm: iqm(&values).ok(),
                    stderr: iqm_stderr(&values).ok(),
                    seconds_per_action: seconds / actions.max(1) as f64,
                    values,
                    route: Some(RouteSummary {
                        per_run,
                        best_wirelength,
                        astar_wirelength: astar.total_wirelength,
                        astar_overflow: astar.total_overflow,
                        pct_diff,
                    }),
                });
            }
        }
    }
    Ok(rows)
}

fn validate_grid(
    grid: &[BudgetCell],
    runs: u32,
    variants: &[AgentVariant],
) -> Result<(), BenchError> {
    if grid.is_empty() {
        return Err(BenchError::InvalidConfig("budget grid is empty".into()));
    }
    if runs < 1 {
        return Err(BenchError::InvalidConfig("runs must be at least 1".into()));
    }
    if variants.is_empty() {
        return Err(BenchError::InvalidConfig(
            "no agent variants selected".into(),
        ));
    }
    Ok(())
}

fn variant_model<'a>(
    variant: AgentVariant,
    untrained: &'a PolicyModel,
    agents: &Agents<'a>,
) -> Result<&'a PolicyModel, BenchError> {
    match variant {
        AgentVariant::Untrained => Ok(untrained),
        AgentVariant::TrainedT => agents
            .trained_t
            .ok_or_else(|| BenchError::MissingModel("trained-t".into())),
        AgentVariant::TrainedMt => agents
            .trained_mt
            .ok_or_else(|| BenchError::MissingModel("trained-mt".into())),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fmt_opt_usize(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn rows_to_csv(rows: &[ResultRow]) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in rows {
        let values = row
            .values
            .iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(";");
        let (route_runs, best_wl, astar_wl, astar_of, pct_diff) = match &row.route {
            None => (
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ),
            Some(r) => (
                r.per_run
                    .iter()
                    .map(|o| format!("{}:{}:{}", o.wirelength, o.overflow, u8::from(o.feasible)))
                    .collect::<Vec<_>>()
                    .join(";"),
                fmt_opt_usize(r.best_wirelength),
                r.astar_wirelength.to_string(),
                r.astar_overflow.to_string(),
                fmt_opt(r.pct_diff),
            ),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            CSV_SCHEMA,
            row.environment,
            row.variant,
            row.condition,
            row.simulations,
            row.depth,
            row.width,
            row.runs,
            fmt_opt(row.iqm),
            fmt_opt(row.stderr),
            row.seconds_per_action,
            values,
            route_runs,
            best_wl,
            astar_wl,
            astar_of,
            pct_diff
        )
        .expect("writing to a string cannot fail");
    }
    out
}

pub fn write_csv(rows: &[ResultRow], path: &Path) -> Result<(), BenchError> {
    std::fs::write(path, rows_to_csv(rows))?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(field: &str, name: &str) -> Result<T, BenchError> {
    field
        .parse()
        .map_err(|_| BenchError::MalformedCsv(format!("bad {name} field: '{field}'")))
}

fn parse_opt<T: std::str::FromStr>(field: &str, name: &str) -> Result<Option<T>, BenchError> {
    if field.is_empty() {
        return Ok(None);
    }
    parse_field(field, name).map(Some)
}

pub fn parse_csv(text: &str) -> Result<Vec<ResultRow>, BenchError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == CSV_HEADER => {}
        Some(other) => {
            return Err(BenchError::MalformedCsv(format!(
                "unexpected header: '{other}'"
            )))
        }
        None => return Err(BenchError::MalformedCsv("empty file".into())),
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 17 {
            return Err(BenchError::MalformedCsv(format!(
                "expected 17 fields, got {}: '{line}'",
                f.len()
            )));
        }
        if f[0] != CSV_SCHEMA {
            return Err(BenchError::MalformedCsv(format!(
                "unknown schema '{}'",
                f[0]
            )));
        }
        let values = if f[11].is_empty() {
            Vec::new()
        } else {
            f[11]
                .split(';')
                .map(|v| parse_field::<f64>(v, "values"))
                .collect::<Result<_, _>>()?
        };
        let route = if f[12].is_empty() && f[14].is_empty() {
            None
        } else {
            let per_run = if f[12].is_empty() {
                Vec::new()
            } else {
                f[12]
                    .split(';')
                    .map(|triplet| {
                        let parts: Vec<&str> = triplet.split(':').collect();
                        if parts.len() != 3 {
                            return Err(BenchError::MalformedCsv(format!(
                                "bad route run '{triplet}'"
                            )));
                        }
                        Ok(RouteRunOutcome {
                            wirelength: parse_field(parts[0], "wirelength")?,
                            overflow: parse_field(parts[1], "overflow")?,
                            feasible: parse_field::<u8>(parts[2], "feasible")? != 0,
                        })
                    })
                    .collect::<Result<_, _>>()?
            };
            Some(RouteSummary {
                per_run,
                best_wirelength: parse_opt(f[13], "best_wl")?,
                astar_wirelength: parse_field(f[14], "astar_wl")?,
                astar_overflow: parse_field(f[15], "astar_of")?,
                pct_diff: parse_opt(f[16], "pct_diff")?,
            })
        };
        rows.push(ResultRow {
            environment: f[1].to_string(),
            variant: f[2].to_string(),
            condition: f[3].to_string(),
            simulations: parse_field(f[4], "simulations")?,
            depth: parse_field(f[5], "depth")?,
            width: parse_field(f[6], "width")?,
            runs: parse_field(f[7], "runs")?,
            iqm: parse_opt(f[8], "iqm")?,
            stderr: parse_opt(f[9], "stderr")?,
            seconds_per_action: parse_field(f[10], "seconds_per_action")?,
            values,
            route,
        });
    }
    Ok(rows)
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>, BenchError> {
    parse_csv(&std::fs::read_to_string(path)?)
}

/// Writes one reward-versus-time series file per (condition, variant) from
/// the truss rows of a results CSV; rows within a series are ordered by
/// simulation count. Returns the written paths.
pub fn emit_plots_data(csv_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
    let rows = read_csv(csv_path)?;
    let mut series: std::collections::BTreeMap<(String, String), Vec<&ResultRow>> =
        std::collections::BTreeMap::new();
    for row in rows.iter().filter(|r| r.environment == "truss") {
        series
            .entry((row.condition.clone(), row.variant.clone()))
            .or_default()
            .push(row);
    }
    if series.is_empty() {
        return Err(BenchError::MalformedCsv("no truss rows to plot".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for ((condition, variant), mut rows) in series {
        rows.sort_by_key(|r| r.simulations);
        let mut out = String::from("seconds_per_action,iqm,stderr\n");
        for row in rows {
            let (Some(iqm), Some(stderr)) = (row.iqm, row.stderr) else {
                continue;
            };
            writeln!(out, "{},{},{}", row.seconds_per_action, iqm, stderr)
                .expect("writing to a string cannot fail");
        }
        let path = out_dir.join(format!("series-{condition}-{variant}.csv"));
        std::fs::write(&path, out)?;
        written.push(path);
    }
    Ok(written)
}

/// Published reference values, shipped as data for side-by-side display;
/// none of them are reproduction targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceBaselines {
    pub label: String,
    pub truss: TrussBaselines,
    pub routing: RoutingBaselines,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrussBaselines {
    pub human_best_reward: f64,
    pub trained_agent_max_reward: f64,
    pub trained_selection_accuracy: f64,
    pub trained_random_guess: f64,
    pub multitask_selection_accuracy: f64,
    pub multitask_random_guess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingBaselines {
    pub astar_10pin_wirelengths: Vec<u32>,
    pub trained_worst_pct_diff_10pin: f64,
    pub fifty_pin_pct_diff_range: [f64; 2],
    pub selection_accuracy: f64,
    pub random_guess: f64,
}

pub fn load_reference_baselines(path: &Path) -> Result<ReferenceBaselines, BenchError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::route::Net;
    use approx::assert_relative_eq;

    #[test]
    fn iqm_hand_cases() {
        let v: Vec<f64> = (0..8).map(f64::from).collect();
        assert_eq!(iqm(&v).unwrap(), 3.5);
        assert_eq!(iqm(&[2.0; 9]).unwrap(), 2.0);
        assert!(matches!(
            iqm(&[1.0, 2.0, 3.0]),
            Err(BenchError::TooFewValues { got: 3, .. })
        ));
    }

    #[test]
    fn iqm_ignores_an_extreme_outlier() {
        let clean: Vec<f64> = (0..8).map(f64::from).collect();
        let mut spiked = clean.clone();
        spiked[7] = 1e9;
        assert_eq!(iqm(&clean).unwrap(), iqm(&spiked).unwrap());
    }

    #[test]
    fn iqm_is_permutation_invariant_and_bounded() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..30 {
            let n = rng.gen_range(4..40);
            let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let mut shuffled = values.clone();
            for i in (1..shuffled.len()).rev() {
                shuffled.swap(i, rng.gen_range(0..=i));
            }
            let a = iqm(&values).unwrap();
            assert_eq!(a, iqm(&shuffled).unwrap());
            let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(a >= min && a <= max);
        }
    }

    #[test]
    fn stderr_hand_case() {
        let v: Vec<f64> = (0..8).map(f64::from).collect();
        // Middle half [2,3,4,5]: sample variance 5/3.
        assert_relative_eq!(
            iqm_stderr(&v).unwrap(),
            (5.0f64 / 3.0 / 4.0).sqrt(),
            epsilon = 1e-12
        );
        assert_eq!(pooled_stderr(3.0, 4.0), 5.0);
    }

    fn sample_rows() -> Vec<ResultRow> {
        vec![
            ResultRow {
                environment: "truss".to_string(),
                variant: "untrained".to_string(),
                condition: "middle-basic".to_string(),
                simulations: 32,
                depth: 5,
                width: 10,
                runs: 4,
                values: vec![1.0, 1.25, 0.5, 2.0],
                iqm: Some(1.125),
                stderr: Some(0.125),
                seconds_per_action: 0.25,
                route: None,
            },
            ResultRow {
                environment: "route".to_string(),
                variant: "trained-t".to_string(),
                condition: "problem-0".to_string(),
                simulations: 512,
                depth: 5,
                width: 10,
                runs: 3,
                values: vec![14.0, 16.0, 12.0],
                iqm: None,
                stderr: None,
                seconds_per_action: 0.01,
                route: Some(RouteSummary {
                    per_run: vec![
                        RouteRunOutcome {
                            wirelength: 14,
                            overflow: 0,
                            feasible: true,
                        },
                        RouteRunOutcome {
                            wirelength: 16,
                            overflow: 0,
                            feasible: true,
                        },
                        RouteRunOutcome {
                            wirelength: 12,
                            overflow: 0,
                            feasible: false,
                        },
                    ],
                    best_wirelength: Some(14),
                    astar_wirelength: 13,
                    astar_overflow: 0,
                    pct_diff: Some(1.0 / 13.0),
                }),
            },
        ]
    }

    #[test]
    fn csv_round_trips() {
        let rows = sample_rows();
        let text = rows_to_csv(&rows);
        let parsed = parse_csv(&text).unwrap();
        assert_eq!(parsed, rows);
        assert_eq!(rows_to_csv(&parsed), text);
    }

    #[test]
    fn malformed_csv_is_rejected() {
        assert!(matches!(parse_csv(""), Err(BenchError::MalformedCsv(_))));
        assert!(matches!(
            parse_csv("not,a,header\n"),
            Err(BenchError::MalformedCsv(_))
        ));
        let good = rows_to_csv(&sample_rows());
        let bad = good.replace("512", "not-a-number");
        assert!(matches!(parse_csv(&bad), Err(BenchError::MalformedCsv(_))));
    }

    #[test]
    fn truss_experiment_is_deterministic_up_to_timing() {
        let config = TrussExperimentConfig {
            variants: vec![AgentVariant::Untrained],
            boundary_conditions: vec!["middle-basic".to_string()],
            budget_grid: vec![
                BudgetCell {
                    simulations: 1,
                    depth: 2,
                    width: 4,
                },
                BudgetCell {
                    simulations: 2,
                    depth: 2,
                    width: 4,
                },
            ],
            runs: 4,
            arch: TrussArch {
                image_size: 32,
                channels: [2, 2, 2],
                latent: 8,
                grid: 4,
            },
            search: SearchParams::default(),
            seed: 3,
        };
        let a = run_truss_experiment(&config, &Agents::default()).unwrap();
        let b = run_truss_experiment(&config, &Agents::default()).unwrap();
        assert_eq!(a.len(), 2);
        for (mut ra, mut rb) in a.into_iter().zip(b) {
            assert_eq!(ra.values.len(), 4);
            for v in &ra.values {
                assert!((0.0..=2.0).contains(v), "reward {v} out of range");
            }
            ra.seconds_per_action = 0.0;
            rb.seconds_per_action = 0.0;
            assert_eq!(ra, rb);
        }
    }

    #[test]
    fn missing_model_is_reported() {
        let config = TrussExperimentConfig {
            variants: vec![AgentVariant::TrainedT],
            runs: 4,
            ..TrussExperimentConfig::default()
        };
        assert!(matches!(
            run_truss_experiment(&config, &Agents::default()),
            Err(BenchError::MissingModel(_))
        ));
    }

    #[test]
    fn routing_experiment_reports_percent_difference_versus_astar() {
        let problem = RoutingProblem {
            grid_size: 8,
            layers: 2,
            capacity: 3,
            max_t: 50,
            nets: vec![
                Net {
                    source: [0, 0, 0],
                    target: [5, 0, 0],
                },
                Net {
                    source: [0, 2, 0],
                    target: [4, 6, 0],
                },
            ],
        };
        let config = RouteExperimentConfig {
            variants: vec![AgentVariant::Untrained],
            problems: vec![problem],
            budget_grid: vec![BudgetCell {
                simulations: 16,
                depth: 12,
                width: 8,
            }],
            runs: 3,
            arch: RouteArch {
                grid: 8,
                channels: [3, 4, 4],
                latent: 16,
            },
            search: SearchParams {
                beta: 50.0,
                gamma: 0.5,
                ..SearchParams::default()
            },
            seed: 1,
        };
        let rows = run_routing_experiment(&config, &Agents::default()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].variant, "astar");
        let astar = rows[0].route.as_ref().unwrap();
        assert_eq!(astar.astar_overflow, 0);
        assert_eq!(astar.pct_diff, Some(0.0));

        let agent = rows[1].route.as_ref().unwrap();
        assert_eq!(agent.per_run.len(), 3);
        assert_eq!(agent.astar_wirelength, astar.astar_wirelength);
        if let (Some(best), Some(pct)) = (agent.best_wirelength, agent.pct_diff) {
            assert_relative_eq!(
                pct,
                (best as f64 - agent.astar_wirelength as f64) / agent.astar_wirelength as f64,
                epsilon = 1e-12
            );
            assert!(pct >= 0.0, "search cannot beat optimal-per-net A* here");
        }

        let again = run_routing_experiment(&config, &Agents::default()).unwrap();
        assert_eq!(again[1].values, rows[1].values);
    }

    #[test]
    fn plots_data_groups_and_orders_series() {
        let dir = tempfile::tempdir().unwrap();
        let mut rows = Vec::new();
        for (sims, secs) in [(128u32, 0.4), (8, 0.025), (32, 0.1)] {
            rows.push(ResultRow {
                environment: "truss".to_string(),
                variant: "untrained".to_string(),
                condition: "middle-basic".to_string(),
                simulations: sims,
                depth: 5,
                width: 10,
                runs: 4,
                values: vec![1.0; 4],
                iqm: Some(1.0),
                stderr: Some(0.0),
                seconds_per_action: secs,
                route: None,
            });
        }
        let csv = dir.path().join("results.csv");
        write_csv(&rows, &csv).unwrap();
        let files = emit_plots_data(&csv, &dir.path().join("plots")).unwrap();
        assert_eq!(files.len(), 1);
        let text = std::fs::read_to_string(&files[0]).unwrap();
        let xs: Vec<f64> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').next().unwrap().parse().unwrap())
            .collect();
        assert_eq!(xs, vec![0.025, 0.1, 0.4]);

        let empty = dir.path().join("empty.csv");
        write_csv(&[], &empty).unwrap();
        assert!(matches!(
            emit_plots_data(&empty, &dir.path().join("plots2")),
            Err(BenchError::MalformedCsv(_))
        ));
    }

    #[test]
    fn shipped_reference_baselines_parse() {
        let path =
            Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/reference_baselines.json");
        let baselines = load_reference_baselines(&path).unwrap();
        assert_eq!(
            baselines.routing.astar_10pin_wirelengths,
            vec![86, 73, 77, 55]
        );
        assert!(baselines.truss.trained_agent_max_reward > baselines.truss.human_best_reward);
        let [lo, hi] = baselines.routing.fifty_pin_pct_diff_range;
        assert!(lo < 0.0 && hi > 0.0);
    }

    #[test]
    fn default_grid_matches_the_budget_sweep() {
        let grid = default_truss_grid();
        assert_eq!(grid.len(), 4);
        assert_eq!(
            grid[3],
            BudgetCell {
                simulations: 256,
                depth: 10,
                width: 10
            }
        );
        assert!(grid[..3].iter().all(|c| c.depth == 5 && c.width == 10));
    }
}
