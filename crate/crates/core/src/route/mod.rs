//! Capacitated grid circuit-routing environment.
//!
//! Pins live on a square grid with one or two layers. Nets (source, target
//! pairs) are routed one at a time: the agent starts on the current net's
//! source and moves with planar moves of any in-bounds distance or unit via
//! moves between layers. Every unit edge has a shared remaining capacity
//! that each traversal consumes; a move is feasible only if every edge it
//! crosses has capacity left. Landing on the current target banks the net,
//! teleports the agent to the next source, and pays `100 - t`; if the clock
//! reaches `max_t` first the episode aborts with reward `-50`.
//!
//! Action encoding: one action class, discrete `[direction, distance]`,
//! with directions `0..6` meaning `+x, -x, +y, -y, +z, -z`. The candidate
//! enumeration is exhaustive, so the proposal budget is ignored here.

pub mod astar;

pub use astar::{route_with_astar, AStarNetResult, AStarReport};

use std::sync::Arc;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{ActionClass, ActionError, ComplexAction, Environment, SpatialDensity};

pub type Cell = [i64; 3];

pub const CLASS_MOVE: u8 = 0;
pub const DIRECTIONS: [[i64; 3]; 6] = [
    [1, 0, 0],
    [-1, 0, 0],
    [0, 1, 0],
    [0, -1, 0],
    [0, 0, 1],
    [0, 0, -1],
];

const ACTION_CLASSES: [ActionClass; 1] = [ActionClass {
    class_id: CLASS_MOVE,
    name: "move",
    arity_discrete: 2,
    arity_continuous: 0,
}];

#[derive(Debug, Error)]
pub enum RouteError {
    #[error("{requested} pins requested but the grid only has {available} layer-0 cells")]
    TooManyPins { requested: usize, available: usize },
    #[error("pin count {0} is odd; pins pair up into nets")]
    OddPinCount(usize),
    #[error("invalid routing spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Net {
    pub source: Cell,
    pub target: Cell,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingProblem {
    pub grid_size: usize,
    pub layers: usize,
    pub capacity: u8,
    pub max_t: u32,
    pub nets: Vec<Net>,
}

impl RoutingProblem {
    pub fn validate(&self) -> Result<(), RouteError> {
        if !(1..=2).contains(&self.layers) {
            return Err(RouteError::InvalidSpec(format!(
                "layers must be 1 or 2, got {}",
                self.layers
            )));
        }
        if self.grid_size < 2 {
            return Err(RouteError::InvalidSpec(
                "grid size must be at least 2".into(),
            ));
        }
        if self.capacity == 0 {
            return Err(RouteError::InvalidSpec("capacity must be positive".into()));
        }
        if self.nets.is_empty() {
            return Err(RouteError::InvalidSpec(
                "at least one net is required".into(),
            ));
        }
        let g = self.grid_size as i64;
        let l = self.layers as i64;
        for net in &self.nets {
            for cell in [net.source, net.target] {
                if cell[0] < 0
                    || cell[0] >= g
                    || cell[1] < 0
                    || cell[1] >= g
                    || cell[2] < 0
                    || cell[2] >= l
                {
                    return Err(RouteError::InvalidSpec(format!(
                        "pin {cell:?} out of bounds"
                    )));
                }
            }
            if net.source == net.target {
                return Err(RouteError::InvalidSpec(format!(
                    "net {net:?} has coincident pins"
                )));
            }
        }
        Ok(())
    }
}

/// Draws `pin_count` distinct layer-0 cells and pairs them into nets.
pub fn generate_problem(
    grid_size: usize,
    layers: usize,
    capacity: u8,
    pin_count: usize,
    seed: u64,
) -> Result<RoutingProblem, RouteError> {
    let available = grid_size * grid_size;
    if pin_count > available {
        return Err(RouteError::TooManyPins {
            requested: pin_count,
            available,
        });
    }
    if pin_count % 2 != 0 {
        return Err(RouteError::OddPinCount(pin_count));
    }
    if pin_count == 0 {
        return Err(RouteError::InvalidSpec(
            "at least two pins are required".into(),
        ));
    }
    let mut cells: Vec<Cell> = (0..available)
        .map(|i| [(i % grid_size) as i64, (i / grid_size) as i64, 0])
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..pin_count {
        let j = rng.gen_range(i..available);
        cells.swap(i, j);
    }
    let nets = cells[..pin_count]
        .chunks_exact(2)
        .map(|pair| Net {
            source: pair[0],
            target: pair[1],
        })
        .collect();
    let problem = RoutingProblem {
        grid_size,
        layers,
        capacity,
        max_t: 50,
        nets,
    };
    problem.validate()?;
    Ok(problem)
}

/// Remaining capacity of every unit edge in the grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeGrid {
    g: usize,
    layers: usize,
    /// Edges (x, y, z)-(x+1, y, z): index z * g * (g-1) + y * (g-1) + x.
    h: Vec<u8>,
    /// Edges (x, y, z)-(x, y+1, z): index z * (g-1) * g + y * g + x.
    v: Vec<u8>,
    /// Edges (x, y, z)-(x, y, z+1): index z * g * g + y * g + x.
    via: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EdgeRef {
    H(usize),
    V(usize),
    Via(usize),
}

impl EdgeGrid {
    pub fn full(problem: &RoutingProblem) -> Self {
        let (g, l, c) = (problem.grid_size, problem.layers, problem.capacity);
        EdgeGrid {
            g,
            layers: l,
            h: vec![c; l * g * (g - 1)],
            v: vec![c; l * (g - 1) * g],
            via: vec![c; (l - 1) * g * g],
        }
    }

    fn edge_between(&self, a: Cell, b: Cell) -> EdgeRef {
        let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let g = self.g;
        match d {
            [1, 0, 0] => {
                EdgeRef::H(a[2] as usize * g * (g - 1) + a[1] as usize * (g - 1) + a[0] as usize)
            }
            [-1, 0, 0] => {
                EdgeRef::H(a[2] as usize * g * (g - 1) + a[1] as usize * (g - 1) + b[0] as usize)
            }
            [0, 1, 0] => {
                EdgeRef::V(a[2] as usize * (g - 1) * g + a[1] as usize * g + a[0] as usize)
            }
            [0, -1, 0] => {
                EdgeRef::V(a[2] as usize * (g - 1) * g + b[1] as usize * g + a[0] as usize)
            }
            [0, 0, 1] => EdgeRef::Via(a[2] as usize * g * g + a[1] as usize * g + a[0] as usize),
            [0, 0, -1] => EdgeRef::Via(b[2] as usize * g * g + a[1] as usize * g + a[0] as usize),
            other => panic!("cells {a:?} and {b:?} are not unit-adjacent (delta {other:?})"),
        }
    }

    pub fn remaining(&self, a: Cell, b: Cell) -> u8 {
        match self.edge_between(a, b) {
            EdgeRef::H(i) => self.h[i],
            EdgeRef::V(i) => self.v[i],
            EdgeRef::Via(i) => self.via[i],
        }
    }

    /// Consumes one unit of capacity; saturates at zero and reports whether
    /// the edge was already exhausted.
    pub fn consume(&mut self, a: Cell, b: Cell) -> bool {
        let slot = match self.edge_between(a, b) {
            EdgeRef::H(i) => &mut self.h[i],
            EdgeRef::V(i) => &mut self.v[i],
            EdgeRef::Via(i) => &mut self.via[i],
        };
        let overflowed = *slot == 0;
        *slot = slot.saturating_sub(1);
        overflowed
    }

    pub fn grid_size(&self) -> usize {
        self.g
    }

    pub fn layers(&self) -> usize {
        self.layers
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RouteOutcome {
    InProgress,
    Completed,
    Abandoned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteState {
    pub problem: Arc<RoutingProblem>,
    pub edges: EdgeGrid,
    pub position: Cell,
    pub net_index: usize,
    pub t: u32,
    pub current_path: Vec<Cell>,
    pub routed: Vec<Vec<Cell>>,
    pub outcome: RouteOutcome,
}

impl RouteState {
    pub fn current_target(&self) -> Option<Cell> {
        self.problem.nets.get(self.net_index).map(|n| n.target)
    }

    /// Fraction of nets already banked.
    pub fn progress(&self) -> f64 {
        self.routed.len() as f64 / self.problem.nets.len() as f64
    }

    /// Unit edges consumed by banked paths.
    pub fn total_wirelength(&self) -> usize {
        self.routed.iter().map(|p| p.len().saturating_sub(1)).sum()
    }

    pub fn via_count(&self) -> usize {
        self.routed
            .iter()
            .flat_map(|p| p.windows(2))
            .filter(|w| w[0][2] != w[1][2])
            .count()
    }

    pub fn planar_wirelength(&self) -> usize {
        self.total_wirelength() - self.via_count()
    }
}

#[derive(Debug, Clone)]
pub struct RouteEnv {
    problem: Arc<RoutingProblem>,
}

impl RouteEnv {
    pub fn new(problem: RoutingProblem) -> Result<Self, RouteError> {
        problem.validate()?;
        Ok(RouteEnv {
            problem: Arc::new(problem),
        })
    }

    pub fn problem(&self) -> &Arc<RoutingProblem> {
        &self.problem
    }

    /// Expands a move into the cells it visits, `from` first. Returns None
    /// if it leaves the grid or pairs a via with distance != 1.
    fn move_cells(&self, from: Cell, direction: usize, distance: i64) -> Option<Vec<Cell>> {
        if direction >= 6 || distance < 1 {
            return None;
        }
        if direction >= 4 && distance != 1 {
            return None;
        }
        let d = DIRECTIONS[direction];
        let g = self.problem.grid_size as i64;
        let l = self.problem.layers as i64;
        let mut cells = Vec::with_capacity(distance as usize + 1);
        cells.push(from);
        let mut at = from;
        for _ in 0..distance {
            at = [at[0] + d[0], at[1] + d[1], at[2] + d[2]];
            if at[0] < 0 || at[0] >= g || at[1] < 0 || at[1] >= g || at[2] < 0 || at[2] >= l {
                return None;
            }
            cells.push(at);
        }
        Some(cells)
    }

    fn move_capacity_ok(&self, state: &RouteState, cells: &[Cell]) -> bool {
        cells
            .windows(2)
            .all(|w| state.edges.remaining(w[0], w[1]) > 0)
    }
}

impl Environment for RouteEnv {
    type State = RouteState;

    fn tag(&self) -> &'static str {
        "route"
    }

    fn action_classes(&self) -> &[ActionClass] {
        &ACTION_CLASSES
    }

    fn initial_state(&self) -> RouteState {
        let source = self.problem.nets[0].source;
        RouteState {
            problem: Arc::clone(&self.problem),
            edges: EdgeGrid::full(&self.problem),
            position: source,
            net_index: 0,
            t: 0,
            current_path: vec![source],
            routed: Vec::new(),
            outcome: RouteOutcome::InProgress,
        }
    }

    fn is_terminal(&self, state: &RouteState) -> bool {
        state.outcome != RouteOutcome::InProgress
    }

    fn transition(
        &self,
        state: &RouteState,
        action: &ComplexAction,
    ) -> Result<RouteState, ActionError> {
        if self.is_terminal(state) {
            return Err(ActionError::infeasible("episode already ended"));
        }
        if action.class_id != CLASS_MOVE {
            return Err(ActionError::infeasible(format!(
                "unknown action class {}",
                action.class_id
            )));
        }
        let [direction, distance] = action.discrete[..] else {
            return Err(ActionError::infeasible("move takes (direction, distance)"));
        };
        let cells = self
            .move_cells(state.position, direction as usize, distance)
            .ok_or_else(|| {
                ActionError::infeasible(format!("move ({direction}, {distance}) leaves the grid"))
            })?;
        if !self.move_capacity_ok(state, &cells) {
            return Err(ActionError::infeasible("move crosses an exhausted edge"));
        }

        let mut next = state.clone();
        for w in cells.windows(2) {
            next.edges.consume(w[0], w[1]);
        }
        next.position = *cells.last().unwrap();
        next.current_path.extend_from_slice(&cells[1..]);
        next.t += 1;

        if next.position == self.problem.nets[next.net_index].target {
            let path = std::mem::take(&mut next.current_path);
            next.routed.push(path);
            next.net_index += 1;
            if next.net_index == self.problem.nets.len() {
                next.outcome = RouteOutcome::Completed;
            } else {
                next.position = self.problem.nets[next.net_index].source;
                next.current_path = vec![next.position];
            }
        }
        if next.outcome == RouteOutcome::InProgress && next.t >= self.problem.max_t {
            next.outcome = RouteOutcome::Abandoned;
        }
        Ok(next)
    }

    fn step_reward(&self, prev: &RouteState, next: &RouteState) -> f64 {
        if next.net_index > prev.net_index {
            return (100 - next.t as i64) as f64;
        }
        if next.outcome == RouteOutcome::Abandoned {
            return -50.0;
        }
        0.0
    }

    fn feasible_actions(
        &self,
        state: &RouteState,
        _budget: usize,
        _prior: Option<&SpatialDensity>,
        _rng: &mut ChaCha8Rng,
    ) -> Vec<ComplexAction> {
        if self.is_terminal(state) {
            return Vec::new();
        }
        let mut actions = Vec::new();
        for direction in 0..6usize {
            let max_distance = if direction >= 4 {
                1
            } else {
                self.problem.grid_size as i64 - 1
            };
            let mut cells = vec![state.position];
            for distance in 1..=max_distance {
                let Some(step) = self.move_cells(*cells.last().unwrap(), direction, 1) else {
                    break;
                };
                if state.edges.remaining(step[0], step[1]) == 0 {
                    break;
                }
                cells.push(step[1]);
                actions.push(ComplexAction::discrete(
                    CLASS_MOVE,
                    vec![direction as i64, distance],
                ));
            }
        }
        actions
    }

    fn action_feasible(&self, state: &RouteState, action: &ComplexAction) -> bool {
        if self.is_terminal(state) || action.class_id != CLASS_MOVE {
            return false;
        }
        match action.discrete[..] {
            [direction, distance] => self
                .move_cells(state.position, direction as usize, distance)
                .is_some_and(|cells| self.move_capacity_ok(state, &cells)),
            _ => false,
        }
    }

    fn is_feasible_design(&self, state: &RouteState) -> bool {
        state.outcome == RouteOutcome::Completed
    }
}

/// Capacity image in CHW layout, indexed `(channel, y, x)`. Channels 0-3
/// hold the remaining fraction of the `+x, -x, +y, -y` edge at each cell
/// averaged over layers; channels 4 and 5 hold the via fraction upward from
/// the agent's layer and downward, respectively. Out-of-bounds edges read 0.
pub fn encode_capacity_image(state: &RouteState) -> Array3<f32> {
    let g = state.problem.grid_size;
    let layers = state.problem.layers;
    let cap = state.problem.capacity as f32;
    let mut img = Array3::zeros((6, g, g));
    for y in 0..g {
        for x in 0..g {
            for (channel, d) in DIRECTIONS[..4].iter().enumerate() {
                let (nx, ny) = (x as i64 + d[0], y as i64 + d[1]);
                if nx < 0 || nx >= g as i64 || ny < 0 || ny >= g as i64 {
                    continue;
                }
                let mut sum = 0.0;
                for z in 0..layers {
                    let a = [x as i64, y as i64, z as i64];
                    let b = [nx, ny, z as i64];
                    sum += state.edges.remaining(a, b) as f32;
                }
                img[(channel, y, x)] = sum / (layers as f32 * cap);
            }
            if layers == 2 {
                let here = [x as i64, y as i64, state.position[2]];
                let other_z = 1 - state.position[2];
                let via = state.edges.remaining(here, [here[0], here[1], other_z]) as f32 / cap;
                let up = if state.position[2] == 0 { via } else { 0.0 };
                let down = if state.position[2] == 1 { via } else { 0.0 };
                img[(4, y, x)] = up;
                img[(5, y, x)] = down;
            }
        }
    }
    img
}

/// Raw location features: agent cell, target delta, and the remaining
/// capacity of the six unit edges leaving the agent (0 when out of bounds).
pub fn encode_location(state: &RouteState) -> [f32; 12] {
    let mut out = [0.0f32; 12];
    let target = state.current_target().unwrap_or(state.position);
    for i in 0..3 {
        out[i] = state.position[i] as f32;
        out[3 + i] = (target[i] - state.position[i]) as f32;
    }
    let g = state.problem.grid_size as i64;
    let l = state.problem.layers as i64;
    for (i, d) in DIRECTIONS.iter().enumerate() {
        let b = [
            state.position[0] + d[0],
            state.position[1] + d[1],
            state.position[2] + d[2],
        ];
        if b[0] < 0 || b[0] >= g || b[1] < 0 || b[1] >= g || b[2] < 0 || b[2] >= l {
            continue;
        }
        out[6 + i] = state.edges.remaining(state.position, b) as f32;
    }
    out
}
