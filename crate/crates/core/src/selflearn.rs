//! One-step policy iteration: generate trajectories by search under a
//! randomly initialized policy, keep the feasible ones, augment truss
//! trajectories with trajectory noise, and train the policy on the pool.
//!
//! Trajectory noise tears a finished design down one component at a time —
//! a thickness increment above base level, a base-thickness member, or a
//! degree-0 added node, chosen uniformly — until only the boundary skeleton
//! remains, then replays the reversed sequence as a fresh trajectory.
//! Rebuilding the same components in a different order reaches the same
//! final design, so each feasible search result yields several training
//! trajectories with identical final reward. A member is only torn down
//! while no other node sits on its span; such a node was necessarily
//! placed after the member, so rebuilding would otherwise wedge.

use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{
    derive_seed, ActionError, ComplexAction, Dataset, Environment, Trajectory, TrajectoryStep,
};
use crate::policy::train::{train_route, train_truss, TrainConfig, TrainError, TrainReport};
use crate::policy::{ArchDescriptor, PolicyModel, RouteArch, TrussArch};
use crate::route::{generate_problem, RouteEnv, RouteError, RouteState};
use crate::sgts::{generate_trajectory, SearchError, SearchParams};
use crate::truss::{
    lattice, BoundaryError, TrussEnv, TrussState, CLASS_ADD_MEMBER, CLASS_ADD_NODE,
    CLASS_INCREASE_THICKNESS,
};

const STREAM_MODEL: u64 = 0x4D4F;
const STREAM_RUN: u64 = 0x5255;
const STREAM_NOISE: u64 = 0x4E4F;
const STREAM_PROBLEM: u64 = 0x5052;

#[derive(Debug, Error)]
pub enum SelfLearnError {
    #[error("invalid iteration config: {0}")]
    InvalidConfig(String),
    #[error("trajectory noise requires a feasible design")]
    NotFeasible,
    #[error("no feasible trajectory was generated; training skipped")]
    EmptyFeasibleSet,
    #[error("augmentation replay failed: {0}")]
    Replay(String),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Boundary(#[from] BoundaryError),
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error(transparent)]
    Action(#[from] ActionError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrussIterationConfig {
    pub boundary_conditions: Vec<String>,
    /// Trajectories generated per boundary condition.
    pub samples_per_condition: u32,
    /// Trajectory-noise augmentations per feasible trajectory.
    pub augmentations: u32,
    /// Also keep the original search trajectory alongside its augmentations.
    pub keep_original: bool,
    pub arch: TrussArch,
    pub search: SearchParams,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for TrussIterationConfig {
    fn default() -> Self {
        TrussIterationConfig {
            boundary_conditions: vec!["middle-basic".to_string()],
            samples_per_condition: 48,
            augmentations: 10,
            keep_original: false,
            arch: TrussArch::default(),
            search: SearchParams::default(),
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RouteIterationConfig {
    /// Number of generated problems.
    pub problems: u32,
    pub runs_per_problem: u32,
    pub grid_size: usize,
    pub layers: usize,
    pub capacity: u8,
    pub pin_count: usize,
    pub arch: RouteArch,
    pub search: SearchParams,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for RouteIterationConfig {
    fn default() -> Self {
        RouteIterationConfig {
            problems: 4,
            runs_per_problem: 3,
            grid_size: 8,
            layers: 2,
            capacity: 3,
            pin_count: 10,
            arch: RouteArch::default(),
            search: SearchParams {
                simulations: 512,
                depth: 25,
                width: 10,
                beta: 50.0,
                gamma: 0.5,
                ..SearchParams::default()
            },
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

/// Per-boundary-condition (or per-problem) generation outcomes; `rewards`
/// holds each run's best step reward.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: String,
    pub runs: u32,
    pub feasible: u32,
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationReport {
    pub conditions: Vec<ConditionReport>,
    pub dataset_trajectories: usize,
    pub dataset_decisions: usize,
    pub train: Option<TrainReport>,
    pub wall_clock_seconds: f64,
}

impl IterationReport {
    pub fn feasible_fraction(&self) -> f64 {
        let runs: u32 = self.conditions.iter().map(|c| c.runs).sum();
        if runs == 0 {
            return 0.0;
        }
        let feasible: u32 = self.conditions.iter().map(|c| c.feasible).sum();
        feasible as f64 / runs as f64
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.conditions {
            out.push_str(&format!(
                "condition={} runs={} feasible={} ({:.0}%)\n",
                c.condition,
                c.runs,
                c.feasible,
                100.0 * c.feasible as f64 / c.runs.max(1) as f64
            ));
        }
        out.push_str(&format!(
            "dataset trajectories={} decisions={}\n",
            self.dataset_trajectories, self.dataset_decisions
        ));
        match &self.train {
            Some(t) => out.push_str(&format!(
                "train samples={} test accuracy={:.3} (random guess {:.3})\n",
                t.train_samples, t.test_accuracy, t.random_guess_accuracy
            )),
            None => out.push_str("training skipped\n"),
        }
        out.push_str(&format!("wall clock={:.1}s\n", self.wall_clock_seconds));
        out
    }
}

pub struct IterationArtifacts<S> {
    pub model: PolicyModel,
    pub dataset: Dataset<S>,
    pub report: IterationReport,
}

/// The randomly initialized policy a truss iteration starts from.
pub fn initial_truss_model(config: &TrussIterationConfig) -> PolicyModel {
    PolicyModel::new_random(
        ArchDescriptor::Truss(config.arch.clone()),
        derive_seed(config.seed, STREAM_MODEL, 0),
    )
}

/// The randomly initialized policy a routing iteration starts from.
pub fn initial_route_model(config: &RouteIterationConfig) -> PolicyModel {
    PolicyModel::new_random(
        ArchDescriptor::Route(config.arch.clone()),
        derive_seed(config.seed, STREAM_MODEL, 0),
    )
}

enum Removal {
    Node { x: f64, y: f64 },
    Member { a: (i64, i64), b: (i64, i64) },
    Increment { a: (i64, i64), b: (i64, i64) },
}

enum Candidate {
    Node(usize),
    Member(usize),
    Increment(usize),
}

fn node_key(state: &TrussState, index: usize, snap: f64) -> (i64, i64) {
    let n = &state.nodes[index];
    (lattice(n.x, snap), lattice(n.y, snap))
}

/// Tears `final_state` down to the boundary skeleton, recording removals.
fn teardown(env: &TrussEnv, final_state: &TrussState, rng: &mut ChaCha8Rng) -> Vec<Removal> {
    let snap = env.domain().snap;
    let mut work = TrussState {
        nodes: final_state.nodes.clone(),
        members: final_state.members.clone(),
        supports: final_state.supports.clone(),
        loads: final_state.loads.clone(),
        step_count: final_state.step_count,
        fem: OnceLock::new(),
    };
    let boundary_count = work.supports.len() + work.loads.len();
    let mut removals = Vec::new();
    loop {
        let mut menu = Vec::new();
        for (i, m) in work.members.iter().enumerate() {
            if m.thickness_level > 1 {
                menu.push(Candidate::Increment(i));
            } else if env.segment_clear(&work, m.a as usize, m.b as usize) {
                menu.push(Candidate::Member(i));
            }
        }
        for i in boundary_count..work.nodes.len() {
            if work.node_degree(i as u32) == 0 {
                menu.push(Candidate::Node(i));
            }
        }
        if menu.is_empty() {
            break;
        }
        match menu[rng.gen_range(0..menu.len())] {
            Candidate::Increment(i) => {
                let m = &mut work.members[i];
                m.thickness_level -= 1;
                let (a, b) = (m.a as usize, m.b as usize);
                removals.push(Removal::Increment {
                    a: node_key(&work, a, snap),
                    b: node_key(&work, b, snap),
                });
            }
            Candidate::Member(i) => {
                let m = work.members.remove(i);
                removals.push(Removal::Member {
                    a: node_key(&work, m.a as usize, snap),
                    b: node_key(&work, m.b as usize, snap),
                });
            }
            Candidate::Node(i) => {
                let key = node_key(&work, i, snap);
                work.nodes.remove(i);
                for m in &mut work.members {
                    if m.a as usize > i {
                        m.a -= 1;
                    }
                    if m.b as usize > i {
                        m.b -= 1;
                    }
                }
                removals.push(Removal::Node {
                    x: key.0 as f64 * snap,
                    y: key.1 as f64 * snap,
                });
            }
        }
    }
    removals
}

fn find_node(state: &TrussState, key: (i64, i64), snap: f64) -> Result<i64, SelfLearnError> {
    (0..state.nodes.len())
        .position(|i| node_key(state, i, snap) == key)
        .map(|i| i as i64)
        .ok_or_else(|| SelfLearnError::Replay(format!("no node at lattice {key:?}")))
}

fn find_member(
    state: &TrussState,
    a: (i64, i64),
    b: (i64, i64),
    snap: f64,
) -> Result<i64, SelfLearnError> {
    let (lo, hi) = (a.min(b), a.max(b));
    state
        .members
        .iter()
        .position(|m| {
            let pa = node_key(state, m.a as usize, snap);
            let pb = node_key(state, m.b as usize, snap);
            (pa.min(pb), pa.max(pb)) == (lo, hi)
        })
        .map(|i| i as i64)
        .ok_or_else(|| SelfLearnError::Replay(format!("no member spanning {a:?}-{b:?}")))
}

/// Replays one reversed removal sequence through the environment.
fn rebuild(env: &TrussEnv, removals: &[Removal]) -> Result<Trajectory<TrussState>, SelfLearnError> {
    let snap = env.domain().snap;
    let mut state = env.initial_state();
    let mut steps = Vec::with_capacity(removals.len());
    for removal in removals.iter().rev() {
        let action = match removal {
            Removal::Node { x, y } => ComplexAction::continuous(CLASS_ADD_NODE, vec![*x, *y]),
            Removal::Member { a, b } => {
                let ia = find_node(&state, *a, snap)?;
                let ib = find_node(&state, *b, snap)?;
                ComplexAction::discrete(CLASS_ADD_MEMBER, vec![ia, ib])
            }
            Removal::Increment { a, b } => {
                let index = find_member(&state, *a, *b, snap)?;
                ComplexAction::discrete(CLASS_INCREASE_THICKNESS, vec![index])
            }
        };
        let result = env
            .step(&state, &action)
            .map_err(|e| SelfLearnError::Replay(e.to_string()))?;
        steps.push(TrajectoryStep {
            state,
            action,
            reward: result.reward,
        });
        state = result.state;
    }
    let feasible = env.is_feasible_design(&state);
    Ok(Trajectory {
        steps,
        feasible,
        final_state: state,
    })
}

pub(crate) fn noise_unchecked(
    env: &TrussEnv,
    final_state: &TrussState,
    count: u32,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Trajectory<TrussState>>, SelfLearnError> {
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let removals = teardown(env, final_state, rng);
        out.push(rebuild(env, &removals)?);
    }
    Ok(out)
}

/// Generates `count` rebuild orderings of a feasible design, each a full
/// trajectory ending in a state structurally equal to `final_state`.
pub fn trajectory_noise(
    env: &TrussEnv,
    final_state: &TrussState,
    count: u32,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Trajectory<TrussState>>, SelfLearnError> {
    if !env.is_feasible_design(final_state) {
        return Err(SelfLearnError::NotFeasible);
    }
    noise_unchecked(env, final_state, count, rng)
}

/// Best single-step reward in an episode: the run's score.
pub(crate) fn best_reward<S>(trajectory: &Trajectory<S>) -> f64 {
    trajectory
        .steps
        .iter()
        .map(|s| s.reward)
        .fold(0.0, f64::max)
}

/// One policy-iteration step on the truss domain: generate, filter,
/// augment, train. Fails with [`SelfLearnError::EmptyFeasibleSet`] when no
/// run produced a feasible design.
pub fn run_truss_iteration(
    config: &TrussIterationConfig,
) -> Result<IterationArtifacts<TrussState>, SelfLearnError> {
    if config.samples_per_condition < 1 {
        return Err(SelfLearnError::InvalidConfig(
            "samples_per_condition must be at least 1".into(),
        ));
    }
    if config.boundary_conditions.is_empty() {
        return Err(SelfLearnError::InvalidConfig(
            "at least one boundary condition is required".into(),
        ));
    }
    config.search.validate()?;
    let started = Instant::now();
    let mut model = initial_truss_model(config);

    let mut conditions = Vec::new();
    let mut trajectories = Vec::new();
    let mut run_counter = 0u64;
    let mut first_env: Option<TrussEnv> = None;
    for name in &config.boundary_conditions {
        let env = TrussEnv::from_name(name)?;
        let runs: Vec<Trajectory<TrussState>> = (0..config.samples_per_condition as u64)
            .into_par_iter()
            .map(|i| {
                let params = SearchParams {
                    seed: derive_seed(config.seed, STREAM_RUN, run_counter + i),
                    ..config.search.clone()
                };
                generate_trajectory(&env, &model, params)
            })
            .collect::<Result<_, _>>()?;

        let mut feasible = 0;
        let mut rewards = Vec::with_capacity(runs.len());
        for (i, run) in runs.into_iter().enumerate() {
            rewards.push(best_reward(&run));
            if !run.feasible {
                continue;
            }
            feasible += 1;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                config.seed,
                STREAM_NOISE,
                run_counter + i as u64,
            ));
            let augmented =
                noise_unchecked(&env, &run.final_state, config.augmentations, &mut rng)?;
            if config.keep_original {
                trajectories.push(run);
            }
            trajectories.extend(augmented);
        }
        conditions.push(ConditionReport {
            condition: name.clone(),
            runs: config.samples_per_condition,
            feasible,
            rewards,
        });
        run_counter += config.samples_per_condition as u64;
        first_env.get_or_insert(env);
    }

    if conditions.iter().all(|c| c.feasible == 0) {
        return Err(SelfLearnError::EmptyFeasibleSet);
    }
    let dataset = Dataset {
        environment_tag: "truss".to_string(),
        seed: config.seed,
        trajectories,
    };
    let env = first_env.expect("at least one boundary condition");
    let train = train_truss(&mut model, &env, &dataset, &config.train)?;
    let report = IterationReport {
        conditions,
        dataset_trajectories: dataset.trajectories.len(),
        dataset_decisions: dataset.decision_count(),
        train: Some(train),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(IterationArtifacts {
        model,
        dataset,
        report,
    })
}

/// One policy-iteration step on the routing domain; trajectories are
/// stored unaugmented.
pub fn run_route_iteration(
    config: &RouteIterationConfig,
) -> Result<IterationArtifacts<RouteState>, SelfLearnError> {
    if config.problems < 1 || config.runs_per_problem < 1 {
        return Err(SelfLearnError::InvalidConfig(
            "problems and runs_per_problem must be at least 1".into(),
        ));
    }
    if config.arch.grid != config.grid_size {
        return Err(SelfLearnError::InvalidConfig(format!(
            "policy grid {} does not match problem grid {}",
            config.arch.grid, config.grid_size
        )));
    }
    config.search.validate()?;
    let started = Instant::now();
    let mut model = initial_route_model(config);

    let mut conditions = Vec::new();
    let mut trajectories = Vec::new();
    let mut run_counter = 0u64;
    let mut first_env: Option<RouteEnv> = None;
    for p in 0..config.problems as u64 {
        let problem = generate_problem(
            config.grid_size,
            config.layers,
            config.capacity,
            config.pin_count,
            derive_seed(config.seed, STREAM_PROBLEM, p),
        )?;
        let env = RouteEnv::new(problem)?;
        let runs: Vec<Trajectory<RouteState>> = (0..config.runs_per_problem as u64)
            .into_par_iter()
            .map(|i| {
                let params = SearchParams {
                    seed: derive_seed(config.seed, STREAM_RUN, run_counter + i),
                    ..config.search.clone()
                };
                generate_trajectory(&env, &model, params)
            })
            .collect::<Result<_, _>>()?;

        let mut feasible = 0;
        let mut rewards = Vec::with_capacity(runs.len());
        for run in runs {
            rewards.push(best_reward(&run));
            if run.feasible {
                feasible += 1;
                trajectories.push(run);
            }
        }
        conditions.push(ConditionReport {
            condition: format!("problem-{p}"),
            runs: config.runs_per_problem,
            feasible,
            rewards,
        });
        run_counter += config.runs_per_problem as u64;
        first_env.get_or_insert(env);
    }

    if conditions.iter().all(|c| c.feasible == 0) {
        return Err(SelfLearnError::EmptyFeasibleSet);
    }
    let dataset = Dataset {
        environment_tag: "route".to_string(),
        seed: config.seed,
        trajectories,
    };
    let env = first_env.expect("at least one problem");
    let train = train_route(&mut model, &env, &dataset, &config.train)?;
    let report = IterationReport {
        conditions,
        dataset_trajectories: dataset.trajectories.len(),
        dataset_decisions: dataset.decision_count(),
        train: Some(train),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(IterationArtifacts {
        model,
        dataset,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> TrussEnv {
        TrussEnv::from_name("middle-basic").unwrap()
    }

    fn apply(env: &TrussEnv, state: &TrussState, action: ComplexAction) -> TrussState {
        env.transition(state, &action).unwrap()
    }

    /// Feasible triangle: one added node, five members, one thickened tie.
    fn triangle(env: &TrussEnv) -> TrussState {
        let mut s = env.initial_state();
        for action in [
            ComplexAction::continuous(CLASS_ADD_NODE, vec![5.0, 5.0]),
            ComplexAction::discrete(CLASS_ADD_MEMBER, vec![0, 3]),
            ComplexAction::discrete(CLASS_ADD_MEMBER, vec![1, 3]),
            ComplexAction::discrete(CLASS_ADD_MEMBER, vec![2, 3]),
            ComplexAction::discrete(CLASS_ADD_MEMBER, vec![0, 2]),
            ComplexAction::discrete(CLASS_ADD_MEMBER, vec![1, 2]),
            ComplexAction::discrete(CLASS_INCREASE_THICKNESS, vec![2]),
        ] {
            s = apply(env, &s, action);
        }
        s
    }

    /// Index-free action keys: every action named by the lattice cells it
    /// touches. Node and member indices shift with rebuild order, so raw
    /// actions are not comparable across trajectories, but these keys are.
    fn structural_multiset(env: &TrussEnv, t: &Trajectory<TrussState>) -> Vec<String> {
        let snap = env.domain().snap;
        let mut state = env.initial_state();
        let mut keys = Vec::new();
        for step in &t.steps {
            let a = &step.action;
            let key = match a.class_id {
                CLASS_ADD_NODE => format!(
                    "node {:?}",
                    (
                        lattice(a.continuous[0], snap),
                        lattice(a.continuous[1], snap)
                    )
                ),
                CLASS_ADD_MEMBER => {
                    let mut ends = [
                        node_key(&state, a.discrete[0] as usize, snap),
                        node_key(&state, a.discrete[1] as usize, snap),
                    ];
                    ends.sort();
                    format!("member {ends:?}")
                }
                _ => {
                    let m = &state.members[a.discrete[0] as usize];
                    let mut ends = [
                        node_key(&state, m.a as usize, snap),
                        node_key(&state, m.b as usize, snap),
                    ];
                    ends.sort();
                    format!("thicken {ends:?}")
                }
            };
            keys.push(key);
            state = env.transition(&state, a).unwrap();
        }
        keys.sort();
        keys
    }

    #[test]
    fn noise_rebuilds_the_design_in_new_orders() {
        let env = env();
        let design = triangle(&env);
        let reward = env.quality(&design);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trajectories = trajectory_noise(&env, &design, 10, &mut rng).unwrap();
        assert_eq!(trajectories.len(), 10);
        let mut orders = std::collections::HashSet::new();
        for t in &trajectories {
            assert_eq!(t.len(), 7);
            assert!(t.feasible);
            assert!(t.final_state.structurally_eq(&design, env.domain().snap));
            assert_eq!(t.steps.last().unwrap().reward, reward);
            crate::mdp::verify_replay(&env, t).unwrap();
            orders.insert(
                t.steps
                    .iter()
                    .map(|s| serde_json::to_string(&s.action).unwrap())
                    .collect::<Vec<_>>(),
            );
        }
        assert!(orders.len() > 1, "removal order never varied");
        let reference = structural_multiset(&env, &trajectories[0]);
        for t in &trajectories[1..] {
            assert_eq!(structural_multiset(&env, t), reference);
        }
    }

    #[test]
    fn noise_counts_components() {
        let env = env();
        let mut s = env.initial_state();
        for action in [
            ComplexAction::continuous(CLASS_ADD_NODE, vec![3.0, 5.0]),
            ComplexAction::continuous(CLASS_ADD_NODE, vec![7.0, 5.0]),
            ComplexAction::continuous(CLASS_ADD_NODE, vec![5.0, 8.0]),
            ComplexAction::discrete(CLASS_ADD_MEMBER, vec![0, 3]),
            ComplexAction::discrete(CLASS_ADD_MEMBER, vec![3, 4]),
        ] {
            s = apply(&env, &s, action);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let trajectories = noise_unchecked(&env, &s, 4, &mut rng).unwrap();
        assert_eq!(trajectories.len(), 4);
        for t in &trajectories {
            assert_eq!(t.len(), 5);
            assert!(t.final_state.structurally_eq(&s, env.domain().snap));
        }
    }

    #[test]
    fn member_addition_precedes_its_thickness_increments() {
        let env = env();
        let mut s = env.initial_state();
        for action in [
            ComplexAction::discrete(CLASS_ADD_MEMBER, vec![0, 2]),
            ComplexAction::discrete(CLASS_INCREASE_THICKNESS, vec![0]),
            ComplexAction::discrete(CLASS_INCREASE_THICKNESS, vec![0]),
        ] {
            s = apply(&env, &s, action);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for t in noise_unchecked(&env, &s, 6, &mut rng).unwrap() {
            assert_eq!(t.len(), 3);
            assert_eq!(t.steps[0].action.class_id, CLASS_ADD_MEMBER);
            assert_eq!(t.steps[1].action.class_id, CLASS_INCREASE_THICKNESS);
            assert_eq!(t.steps[2].action.class_id, CLASS_INCREASE_THICKNESS);
        }
    }

    #[test]
    fn node_removal_remaps_member_endpoints() {
        let env = env();
        let mut s = env.initial_state();
        // Node 3 stays degree 0; node 4 is referenced by a member, so
        // removing node 3 first must shift the member's endpoint.
        for action in [
            ComplexAction::continuous(CLASS_ADD_NODE, vec![2.0, 7.0]),
            ComplexAction::continuous(CLASS_ADD_NODE, vec![8.0, 7.0]),
            ComplexAction::discrete(CLASS_ADD_MEMBER, vec![0, 4]),
        ] {
            s = apply(&env, &s, action);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for t in noise_unchecked(&env, &s, 8, &mut rng).unwrap() {
            assert_eq!(t.len(), 3);
            assert!(t.final_state.structurally_eq(&s, env.domain().snap));
            crate::mdp::verify_replay(&env, &t).unwrap();
        }
    }

    #[test]
    fn node_on_a_member_span_defers_the_member_teardown() {
        let env = env();
        let mut s = env.initial_state();
        // Member 0-2 spans (1,1)-(5,1); the node at (3,1) lands on it and
        // must always rebuild after the member.
        for action in [
            ComplexAction::discrete(CLASS_ADD_MEMBER, vec![0, 2]),
            ComplexAction::continuous(CLASS_ADD_NODE, vec![3.0, 1.0]),
        ] {
            s = apply(&env, &s, action);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for t in noise_unchecked(&env, &s, 10, &mut rng).unwrap() {
            assert_eq!(t.steps[0].action.class_id, CLASS_ADD_MEMBER);
            assert_eq!(t.steps[1].action.class_id, CLASS_ADD_NODE);
            assert!(t.final_state.structurally_eq(&s, env.domain().snap));
        }
    }

    #[test]
    fn infeasible_designs_are_rejected() {
        let env = env();
        let s = env.initial_state();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            trajectory_noise(&env, &s, 3, &mut rng),
            Err(SelfLearnError::NotFeasible)
        ));
    }

    fn tiny_truss_config() -> TrussIterationConfig {
        TrussIterationConfig {
            boundary_conditions: vec!["middle-basic".to_string()],
            samples_per_condition: 2,
            augmentations: 2,
            keep_original: false,
            arch: TrussArch {
                image_size: 32,
                channels: [2, 2, 2],
                latent: 8,
                grid: 4,
            },
            search: SearchParams {
                simulations: 2,
                depth: 2,
                width: 4,
                workers: 1,
                ..SearchParams::default()
            },
            train: TrainConfig {
                epochs: 1,
                batch_size: 8,
                ..TrainConfig::default()
            },
            seed: 11,
        }
    }

    #[test]
    fn truss_iteration_is_reproducible() {
        let config = tiny_truss_config();
        let a = run_truss_iteration(&config);
        let b = run_truss_iteration(&config);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                assert_eq!(
                    serde_json::to_string(&a.dataset.trajectories).unwrap(),
                    serde_json::to_string(&b.dataset.trajectories).unwrap()
                );
                let ra = a.report.train.as_ref().unwrap();
                let rb = b.report.train.as_ref().unwrap();
                assert_eq!(ra.loss_curve, rb.loss_curve);
                assert_eq!(
                    a.report.conditions[0].rewards,
                    b.report.conditions[0].rewards
                );
                assert_eq!(
                    a.report.dataset_trajectories,
                    2 * a.report.conditions[0].feasible as usize
                );
            }
            (Err(SelfLearnError::EmptyFeasibleSet), Err(SelfLearnError::EmptyFeasibleSet)) => {}
            (a, b) => panic!(
                "outcomes diverged or failed unexpectedly: {:?} vs {:?}",
                a.err().map(|e| e.to_string()),
                b.err().map(|e| e.to_string())
            ),
        }
    }

    #[test]
    fn route_iteration_produces_a_trained_model() {
        let config = RouteIterationConfig {
            problems: 2,
            runs_per_problem: 2,
            grid_size: 8,
            layers: 2,
            capacity: 3,
            pin_count: 4,
            arch: RouteArch {
                grid: 8,
                channels: [3, 4, 4],
                latent: 16,
            },
            search: SearchParams {
                simulations: 24,
                depth: 12,
                width: 8,
                beta: 50.0,
                gamma: 0.5,
                ..SearchParams::default()
            },
            train: TrainConfig {
                epochs: 2,
                batch_size: 16,
                ..TrainConfig::default()
            },
            seed: 5,
        };
        let artifacts = run_route_iteration(&config).unwrap();
        assert_eq!(artifacts.report.conditions.len(), 2);
        assert!(artifacts.report.feasible_fraction() > 0.0);
        assert_eq!(artifacts.dataset.environment_tag, "route");
        assert!(artifacts.report.dataset_decisions > 0);
        let train = artifacts.report.train.as_ref().unwrap();
        assert!(!train.loss_curve.is_empty());
        let text = artifacts.report.render();
        assert!(text.contains("dataset trajectories="));
    }

    #[test]
    fn route_iteration_rejects_grid_mismatch() {
        let config = RouteIterationConfig {
            grid_size: 10,
            arch: RouteArch {
                grid: 8,
                channels: [3, 4, 4],
                latent: 16,
            },
            ..RouteIterationConfig::default()
        };
        assert!(matches!(
            run_route_iteration(&config),
            Err(SelfLearnError::InvalidConfig(_))
        ));
    }
}
