//! Sampling-guided tree search: policy-sampled expansion, WU-UCT traversal
//! with unobserved-rollout counts, policy-guided rollouts, and max-backed
//! value propagation.
//!
//! A single coordinator owns the tree. Each simulation selects a path by
//! the UCB rule (unvisited children score +infinity; ties break at the
//! lowest index), expands the reached leaf by sampling up to `width`
//! distinct actions from the policy distribution, rolls out from the new
//! child, and backs the rollout estimate up with the max update
//! V <- max(V, r + gamma * V_child). While a rollout is in flight its path
//! carries an O count so concurrent selections steer around busy subtrees;
//! with workers = 1 the search is sequential and bit-reproducible. The
//! final action applies the same UCB rule at the root with all O = 0,
//! restricted to children visited at least once.

use std::collections::HashMap;
use std::sync::{mpsc, Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{
    derive_seed, ActionError, ComplexAction, Environment, Trajectory, TrajectoryStep,
};
use crate::policy::{DecisionPolicy, PolicyError};

const STREAM_MOVE: u64 = 0x4D56;
const STREAM_EXPAND: u64 = 0x4558;
const STREAM_ROLLOUT: u64 = 0x524C;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search parameters: {0}")]
    InvalidParams(String),
    #[error("no feasible actions at the search root")]
    NoFeasibleActions,
    #[error("child selection on an unexpanded node")]
    UnexpandedNode,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Action(#[from] ActionError),
}

/// How a rollout's reward sequence collapses into one value estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RolloutReturn {
    /// max_i gamma^i * r_i via V_i = max(r_i, gamma * V_{i+1}).
    #[default]
    DiscountedMax,
    /// Sum_i gamma^i * r_i.
    DiscountedSum,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchParams {
    pub simulations: u32,
    /// Rollout horizon in steps.
    pub depth: u32,
    /// Distinct actions sampled per expansion (also the proposal budget).
    pub width: usize,
    pub beta: f64,
    pub gamma: f64,
    /// Maximum concurrent rollouts; 1 is the deterministic reference mode.
    pub workers: usize,
    pub seed: u64,
    pub rollout_return: RolloutReturn,
    /// Keep the chosen child's subtree as the next root.
    pub reuse_tree: bool,
    /// Emit one structured text line per simulation.
    pub trace: bool,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            simulations: 128,
            depth: 5,
            width: 10,
            beta: 2.0,
            gamma: 0.95,
            workers: 1,
            seed: 0,
            rollout_return: RolloutReturn::DiscountedMax,
            reuse_tree: true,
            trace: false,
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.simulations < 1 {
            return Err(SearchError::InvalidParams(
                "simulations must be at least 1".into(),
            ));
        }
        if self.width < 1 {
            return Err(SearchError::InvalidParams(
                "width must be at least 1".into(),
            ));
        }
        if self.beta < 0.0 || !self.beta.is_finite() {
            return Err(SearchError::InvalidParams(
                "beta must be finite and non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(SearchError::InvalidParams(
                "gamma must lie in [0, 1]".into(),
            ));
        }
        if self.workers < 1 {
            return Err(SearchError::InvalidParams(
                "workers must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub(crate) struct Edge<S> {
    pub action: ComplexAction,
    pub reward: f64,
    pub node: Node<S>,
}

#[derive(Debug)]
pub(crate) struct Node<S> {
    pub id: u64,
    pub state: S,
    pub n: u64,
    pub o: u64,
    pub value: f64,
    pub expanded: bool,
    pub terminal: bool,
    pub children: Vec<Edge<S>>,
}

impl<S> Node<S> {
    fn new(id: u64, state: S, terminal: bool) -> Self {
        Node {
            id,
            state,
            n: 0,
            o: 0,
            value: 0.0,
            expanded: false,
            terminal,
            children: Vec::new(),
        }
    }
}

/// UCB pick over a node's children: argmax of V + beta * sqrt(2 ln(N+O
/// of the parent) / (N+O of the child)); an untried child scores
/// +infinity; ties break at the lowest index.
pub(crate) fn select_child<S>(node: &Node<S>, beta: f64) -> Result<usize, SearchError> {
    if !node.expanded || node.children.is_empty() {
        return Err(SearchError::UnexpandedNode);
    }
    let parent_ln = ((node.n + node.o) as f64).max(1.0).ln();
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for (i, edge) in node.children.iter().enumerate() {
        let tries = edge.node.n + edge.node.o;
        let score = if tries == 0 {
            f64::INFINITY
        } else {
            edge.node.value + beta * (2.0 * parent_ln / tries as f64).sqrt()
        };
        if score > best_score {
            best = i;
            best_score = score;
        }
    }
    Ok(best)
}

/// Collapses a reward sequence into the rollout value estimate.
pub(crate) fn rollout_value(rewards: &[f64], gamma: f64, mode: RolloutReturn) -> f64 {
    let mut v = 0.0;
    for &r in rewards.iter().rev() {
        v = match mode {
            RolloutReturn::DiscountedMax => (gamma * v).max(r),
            RolloutReturn::DiscountedSum => r + gamma * v,
        };
    }
    v
}

fn rollout<E: Environment, P: DecisionPolicy<E>>(
    env: &E,
    policy: &P,
    mut state: E::State,
    depth: u32,
    width: usize,
    gamma: f64,
    mode: RolloutReturn,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut rewards = Vec::with_capacity(depth as usize);
    for _ in 0..depth {
        if env.is_terminal(&state) {
            break;
        }
        let Ok(dist) = policy.propose(env, &state, width, rng) else {
            break;
        };
        let action = &dist.actions[dist.sample(rng)];
        let Ok(result) = env.step(&state, action) else {
            break;
        };
        rewards.push(result.reward);
        state = result.state;
        if result.terminal {
            break;
        }
    }
    rollout_value(&rewards, gamma, mode)
}

fn expand<E: Environment, P: DecisionPolicy<E>>(
    env: &E,
    policy: &P,
    node: &mut Node<E::State>,
    width: usize,
    rng: &mut ChaCha8Rng,
    next_id: &mut u64,
) -> Result<(), SearchError> {
    match policy.propose(env, &node.state, width, rng) {
        Err(PolicyError::EmptyCandidates) => {
            node.terminal = true;
        }
        Err(e) => return Err(SearchError::Policy(e)),
        Ok(dist) => {
            for idx in dist.sample_distinct(width, rng) {
                let action = dist.actions[idx].clone();
                let result = env.step(&node.state, &action)?;
                let id = *next_id;
                *next_id += 1;
                node.children.push(Edge {
                    action,
                    reward: result.reward,
                    node: Node::new(id, result.state, result.terminal),
                });
            }
            if node.children.is_empty() {
                node.terminal = true;
            }
        }
    }
    node.expanded = true;
    Ok(())
}

/// Max-backed update along a selected path: N up and O down at every path
/// node, and each path child's value raised toward edge reward + gamma *
/// (best known continuation from that child). A node's value is therefore
/// the edge-inclusive return of the decision that reaches it, the quantity
/// the selection rule compares. Returns the updated return seen from
/// `node`.
fn backprop<S>(node: &mut Node<S>, path: &[usize], leaf_value: f64, gamma: f64) -> f64 {
    node.n += 1;
    node.o -= 1;
    match path.first() {
        None => leaf_value,
        Some(&idx) => {
            let edge = &mut node.children[idx];
            let continuation = backprop(&mut edge.node, &path[1..], leaf_value, gamma);
            let candidate = edge.reward + gamma * continuation;
            if candidate > edge.node.value {
                edge.node.value = candidate;
            }
            edge.node.value
        }
    }
}

/// Backprop plus the root bookkeeping: the root has no incoming edge, so
/// its value tracks the best discounted return found from it.
fn apply_backprop<S>(root: &mut Node<S>, path: &[usize], leaf_value: f64, gamma: f64) {
    let best = backprop(root, path, leaf_value, gamma);
    if best > root.value {
        root.value = best;
    }
}

fn mark_outstanding<S>(root: &mut Node<S>, path: &[usize]) {
    let mut node = root;
    node.o += 1;
    for &idx in path {
        node = &mut node.children[idx].node;
        node.o += 1;
    }
}

fn best_root_action<S>(root: &Node<S>, beta: f64) -> Result<ComplexAction, SearchError> {
    let parent_ln = ((root.n + root.o) as f64).max(1.0).ln();
    let mut best: Option<(usize, f64)> = None;
    for (i, edge) in root.children.iter().enumerate() {
        if edge.node.n == 0 {
            continue;
        }
        let score = edge.node.value + beta * (2.0 * parent_ln / edge.node.n as f64).sqrt();
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((i, score));
        }
    }
    match best {
        Some((i, _)) => Ok(root.children[i].action.clone()),
        None => Err(SearchError::NoFeasibleActions),
    }
}

struct RolloutTask<S> {
    sim: u64,
    state: S,
    seed: u64,
}

pub struct Searcher<'a, E: Environment, P: DecisionPolicy<E>> {
    env: &'a E,
    policy: &'a P,
    pub params: SearchParams,
    pub(crate) root: Option<Node<E::State>>,
    next_id: u64,
    move_index: u64,
}

impl<'a, E: Environment, P: DecisionPolicy<E>> Searcher<'a, E, P> {
    pub fn new(env: &'a E, policy: &'a P, params: SearchParams) -> Result<Self, SearchError> {
        params.validate()?;
        Ok(Searcher {
            env,
            policy,
            params,
            root: None,
            next_id: 0,
            move_index: 0,
        })
    }

    /// Runs a full search from `state` and returns the chosen action.
    pub fn search(&mut self, state: &E::State) -> Result<ComplexAction, SearchError> {
        Ok(self.search_traced(state)?.0)
    }

    /// As [`Searcher::search`], also returning the per-simulation trace
    /// lines (empty unless `params.trace` is set).
    pub fn search_traced(
        &mut self,
        state: &E::State,
    ) -> Result<(ComplexAction, Vec<String>), SearchError> {
        if self.env.is_terminal(state) {
            return Err(SearchError::NoFeasibleActions);
        }
        let keep = self.root.as_ref().is_some_and(|r| &r.state == state);
        if !keep {
            let id = self.alloc_id();
            self.root = Some(Node::new(id, state.clone(), false));
        }
        let search_seed = derive_seed(self.params.seed, STREAM_MOVE, self.move_index);
        self.move_index += 1;

        let mut root = self.root.take().expect("root prepared above");
        let mut trace = Vec::new();
        let run = if self.params.workers <= 1 {
            self.run_sequential(&mut root, search_seed, &mut trace)
        } else {
            self.run_parallel(&mut root, search_seed, &mut trace)
        };
        let picked = run.and_then(|_| best_root_action(&root, self.params.beta));
        self.root = Some(root);
        let action = picked?;
        if self.params.trace {
            trace.push(format!("chosen={}", action_json(&action)));
        }
        Ok((action, trace))
    }

    /// Rebases the retained tree onto the child reached by `action`; called
    /// after the environment actually stepped to `next_state`.
    pub fn advance(&mut self, action: &ComplexAction, next_state: &E::State) {
        if !self.params.reuse_tree {
            self.root = None;
            return;
        }
        self.root = self.root.take().and_then(|mut root| {
            root.children
                .iter()
                .position(|e| &e.action == action)
                .map(|i| root.children.swap_remove(i).node)
                .filter(|child| &child.state == next_state)
        });
    }

    fn alloc_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// Selects a path (expanding at the frontier), marks it outstanding,
    /// and reports the rollout start. Returns the path and, when the leaf
    /// is terminal, `None` for the state (value 0, no rollout needed).
    fn select_path(
        &mut self,
        root: &mut Node<E::State>,
        expand_rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<usize>, Option<E::State>), SearchError> {
        let beta = self.params.beta;
        let width = self.params.width;
        let mut path = Vec::new();
        let (leaf_terminal, leaf_state) = {
            let mut node: &mut Node<E::State> = root;
            loop {
                if node.terminal {
                    break (true, None);
                }
                if !node.expanded {
                    expand(
                        self.env,
                        self.policy,
                        node,
                        width,
                        expand_rng,
                        &mut self.next_id,
                    )?;
                    if node.terminal {
                        break (true, None);
                    }
                    let idx = select_child(node, beta)?;
                    path.push(idx);
                    let child = &mut node.children[idx].node;
                    if child.terminal {
                        break (true, None);
                    }
                    break (false, Some(child.state.clone()));
                }
                if node.children.is_empty() {
                    node.terminal = true;
                    break (true, None);
                }
                let idx = select_child(node, beta)?;
                path.push(idx);
                node = &mut node.children[idx].node;
            }
        };
        mark_outstanding(root, &path);
        let _ = leaf_terminal;
        Ok((path, leaf_state))
    }

    fn trace_line(
        &self,
        trace: &mut Vec<String>,
        root: &Node<E::State>,
        sim: u64,
        path: &[usize],
        value: f64,
    ) {
        if !self.params.trace {
            return;
        }
        let mut ids = vec![root.id];
        let mut node = root;
        for &idx in path {
            node = &node.children[idx].node;
            ids.push(node.id);
        }
        let ids: Vec<String> = ids.iter().map(u64::to_string).collect();
        let root_action = match path.first() {
            Some(&idx) => action_json(&root.children[idx].action),
            None => "none".to_string(),
        };
        trace.push(format!(
            "sim={} path={} vhat={:.6} root_v={:.6} root_action={}",
            sim,
            ids.join(">"),
            value,
            root.value,
            root_action
        ));
    }

    fn run_sequential(
        &mut self,
        root: &mut Node<E::State>,
        search_seed: u64,
        trace: &mut Vec<String>,
    ) -> Result<(), SearchError> {
        let mut expand_rng = ChaCha8Rng::seed_from_u64(derive_seed(search_seed, STREAM_EXPAND, 0));
        for sim in 0..self.params.simulations as u64 {
            let (path, leaf_state) = self.select_path(root, &mut expand_rng)?;
            let value = match leaf_state {
                None => 0.0,
                Some(state) => {
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(derive_seed(search_seed, STREAM_ROLLOUT, sim));
                    rollout(
                        self.env,
                        self.policy,
                        state,
                        self.params.depth,
                        self.params.width,
                        self.params.gamma,
                        self.params.rollout_return,
                        &mut rng,
                    )
                }
            };
            apply_backprop(root, &path, value, self.params.gamma);
            self.trace_line(trace, root, sim, &path, value);
        }
        Ok(())
    }

    fn run_parallel(
        &mut self,
        root: &mut Node<E::State>,
        search_seed: u64,
        trace: &mut Vec<String>,
    ) -> Result<(), SearchError> {
        let env = self.env;
        let policy = self.policy;
        let depth = self.params.depth;
        let width = self.params.width;
        let gamma = self.params.gamma;
        let mode = self.params.rollout_return;
        let workers = self.params.workers;
        let simulations = self.params.simulations as u64;
        let mut expand_rng = ChaCha8Rng::seed_from_u64(derive_seed(search_seed, STREAM_EXPAND, 0));

        std::thread::scope(|scope| -> Result<(), SearchError> {
            let (task_tx, task_rx) = mpsc::channel::<RolloutTask<E::State>>();
            let (result_tx, result_rx) = mpsc::channel::<(u64, f64)>();
            let task_rx = Arc::new(Mutex::new(task_rx));
            for _ in 0..workers {
                let task_rx = Arc::clone(&task_rx);
                let result_tx = result_tx.clone();
                scope.spawn(move || loop {
                    let task = task_rx.lock().expect("task queue lock").recv();
                    let Ok(task) = task else { break };
                    let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
                    let value =
                        rollout(env, policy, task.state, depth, width, gamma, mode, &mut rng);
                    if result_tx.send((task.sim, value)).is_err() {
                        break;
                    }
                });
            }
            drop(result_tx);

            let run = (|| -> Result<(), SearchError> {
                let mut pending: HashMap<u64, Vec<usize>> = HashMap::new();
                let mut launched = 0u64;
                let mut completed = 0u64;
                while completed < simulations {
                    while launched < simulations && pending.len() < workers {
                        let sim = launched;
                        launched += 1;
                        let (path, leaf_state) = self.select_path(root, &mut expand_rng)?;
                        match leaf_state {
                            None => {
                                apply_backprop(root, &path, 0.0, gamma);
                                completed += 1;
                                self.trace_line(trace, root, sim, &path, 0.0);
                            }
                            Some(state) => {
                                let seed = derive_seed(search_seed, STREAM_ROLLOUT, sim);
                                task_tx
                                    .send(RolloutTask { sim, state, seed })
                                    .expect("workers outlive coordinator");
                                pending.insert(sim, path);
                            }
                        }
                    }
                    if completed < simulations && !pending.is_empty() {
                        let (sim, value) = result_rx.recv().expect("a pending rollout must report");
                        let path = pending.remove(&sim).expect("result matches a pending sim");
                        apply_backprop(root, &path, value, gamma);
                        completed += 1;
                        self.trace_line(trace, root, sim, &path, value);
                    }
                }
                Ok(())
            })();
            drop(task_tx);
            run
        })
    }
}

fn action_json(action: &ComplexAction) -> String {
    serde_json::to_string(action).unwrap_or_else(|_| "unserializable".to_string())
}

/// Plays full episodes with search at every move. A search failure (no
/// feasible actions from a stuck, non-terminal state) ends the episode at
/// the current state.
pub fn generate_trajectory<E: Environment, P: DecisionPolicy<E>>(
    env: &E,
    policy: &P,
    params: SearchParams,
) -> Result<Trajectory<E::State>, SearchError> {
    let mut searcher = Searcher::new(env, policy, params)?;
    let mut state = env.initial_state();
    let mut steps = Vec::new();
    while !env.is_terminal(&state) {
        let action = match searcher.search(&state) {
            Ok(action) => action,
            Err(SearchError::NoFeasibleActions) => break,
            Err(e) => return Err(e),
        };
        let result = env.step(&state, &action)?;
        steps.push(TrajectoryStep {
            state,
            action: action.clone(),
            reward: result.reward,
        });
        searcher.advance(&action, &result.state);
        state = result.state;
    }
    Ok(Trajectory {
        steps,
        feasible: env.is_feasible_design(&state),
        final_state: state,
    })
}
