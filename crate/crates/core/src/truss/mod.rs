//! 2D truss design environment.
//!
//! A design grows on a bounded domain from the support and load nodes fixed
//! by a [`BoundaryCondition`]. Three action classes exist: add a node at a
//! continuous position (snapped to the lattice), add a member between two
//! existing nodes, and increase a member's thickness level. Every state is
//! scored by finite-element analysis: reward is
//! `clamp(target_mass * fos / mass, 0, 1) + 1[fos >= target_fos]`, zero for
//! structurally unstable states. A design is feasible when it is solvable
//! and meets the target factor of safety.
//!
//! Geometry predicates (snapping, spacing, collinearity) are evaluated on
//! integer lattice coordinates, so feasibility is exact and deterministic.

pub mod boundary;
pub mod fem;
pub mod render;

use std::sync::{Arc, OnceLock};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mdp::{ActionClass, ActionError, ComplexAction, Environment, SpatialDensity};
pub use boundary::{
    BoundaryCondition, BoundaryError, DomainSpec, LoadSpec, MaterialSpec, TargetSpec,
    BUILTIN_BOUNDARIES,
};
pub use fem::{fem_solve, FemResult};

pub const CLASS_ADD_NODE: u8 = 0;
pub const CLASS_ADD_MEMBER: u8 = 1;
pub const CLASS_INCREASE_THICKNESS: u8 = 2;

const ACTION_CLASSES: [ActionClass; 3] = [
    ActionClass {
        class_id: CLASS_ADD_NODE,
        name: "add-node",
        arity_discrete: 0,
        arity_continuous: 2,
    },
    ActionClass {
        class_id: CLASS_ADD_MEMBER,
        name: "add-member",
        arity_discrete: 2,
        arity_continuous: 0,
    },
    ActionClass {
        class_id: CLASS_INCREASE_THICKNESS,
        name: "increase-thickness",
        arity_discrete: 1,
        arity_continuous: 0,
    },
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Member {
    pub a: u32,
    pub b: u32,
    pub thickness_level: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrussLoad {
    pub node: u32,
    pub force: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrussState {
    pub nodes: Vec<Node>,
    pub members: Vec<Member>,
    pub supports: Vec<u32>,
    pub loads: Vec<TrussLoad>,
    pub step_count: u32,
    /// Memoized FEM analysis; travels with clones, ignored by equality and
    /// serialization.
    #[serde(skip)]
    pub(crate) fem: OnceLock<Arc<FemResult>>,
}

impl PartialEq for TrussState {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
            && self.members == other.members
            && self.supports == other.supports
            && self.loads == other.loads
            && self.step_count == other.step_count
    }
}

impl TrussState {
    pub fn member_length(&self, member: &Member) -> f64 {
        let a = &self.nodes[member.a as usize];
        let b = &self.nodes[member.b as usize];
        ((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).sqrt()
    }

    /// True for nodes created by add-node actions (not supports or loads).
    pub fn is_added_node(&self, index: u32) -> bool {
        !self.supports.contains(&index) && !self.loads.iter().any(|l| l.node == index)
    }

    pub fn node_degree(&self, index: u32) -> usize {
        self.members
            .iter()
            .filter(|m| m.a == index || m.b == index)
            .count()
    }

    /// Structural identity: same node positions, members, and thicknesses,
    /// regardless of insertion order or step count.
    pub fn structurally_eq(&self, other: &Self, snap: f64) -> bool {
        let key = |s: &TrussState| {
            let mut nodes: Vec<(i64, i64)> = s
                .nodes
                .iter()
                .map(|n| (lattice(n.x, snap), lattice(n.y, snap)))
                .collect();
            nodes.sort_unstable();
            let mut members: Vec<((i64, i64), (i64, i64), u32)> = s
                .members
                .iter()
                .map(|m| {
                    let a = &s.nodes[m.a as usize];
                    let b = &s.nodes[m.b as usize];
                    let pa = (lattice(a.x, snap), lattice(a.y, snap));
                    let pb = (lattice(b.x, snap), lattice(b.y, snap));
                    (pa.min(pb), pa.max(pb), m.thickness_level)
                })
                .collect();
            members.sort_unstable();
            (nodes, members)
        };
        key(self) == key(other)
    }
}

pub(crate) fn lattice(v: f64, snap: f64) -> i64 {
    (v / snap).round() as i64
}

/// The truss design environment for one boundary condition.
#[derive(Debug, Clone)]
pub struct TrussEnv {
    bc: BoundaryCondition,
    lattice_w: i64,
    lattice_h: i64,
}

impl TrussEnv {
    pub fn new(bc: BoundaryCondition) -> Result<Self, BoundaryError> {
        bc.validate()?;
        let snap = bc.domain.snap;
        let env = TrussEnv {
            lattice_w: lattice(bc.domain.width, snap),
            lattice_h: lattice(bc.domain.height, snap),
            bc,
        };
        let initial = env.initial_state();
        for i in 0..initial.nodes.len() {
            for j in i + 1..initial.nodes.len() {
                let a = &initial.nodes[i];
                let b = &initial.nodes[j];
                if !env.spacing_ok(
                    lattice(a.x, snap),
                    lattice(a.y, snap),
                    lattice(b.x, snap),
                    lattice(b.y, snap),
                ) {
                    return Err(BoundaryError::Invalid(format!(
                        "boundary nodes {i} and {j} violate minimum spacing"
                    )));
                }
            }
        }
        Ok(env)
    }

    pub fn from_name(name: &str) -> Result<Self, BoundaryError> {
        TrussEnv::new(BoundaryCondition::resolve(name)?)
    }

    pub fn boundary(&self) -> &BoundaryCondition {
        &self.bc
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.bc.domain
    }

    pub fn material(&self) -> &MaterialSpec {
        &self.bc.material
    }

    /// Memoized FEM analysis of `state`.
    pub fn analyze<'s>(&self, state: &'s TrussState) -> &'s FemResult {
        state
            .fem
            .get_or_init(|| Arc::new(fem_solve(state, &self.bc.material)))
    }

    /// Design quality reward of a state.
    pub fn quality(&self, state: &TrussState) -> f64 {
        let fem = self.analyze(state);
        if !fem.solvable {
            return 0.0;
        }
        reward_from(fem.fos, fem.mass, &self.bc.targets)
    }

    fn snap_point(&self, x: f64, y: f64) -> (i64, i64) {
        (
            lattice(x, self.bc.domain.snap),
            lattice(y, self.bc.domain.snap),
        )
    }

    fn in_domain(&self, ix: i64, iy: i64) -> bool {
        ix >= 0 && ix <= self.lattice_w && iy >= 0 && iy <= self.lattice_h
    }

    fn spacing_ok(&self, ax: i64, ay: i64, bx: i64, by: i64) -> bool {
        let snap = self.bc.domain.snap;
        let sq = ((ax - bx).pow(2) + (ay - by).pow(2)) as f64 * snap * snap;
        sq >= self.bc.domain.min_node_spacing.powi(2)
    }

    fn node_lattice(&self, state: &TrussState, index: usize) -> (i64, i64) {
        self.snap_point(state.nodes[index].x, state.nodes[index].y)
    }

    /// Checks that no third node lies strictly inside segment a-b.
    pub(crate) fn segment_clear(&self, state: &TrussState, a: usize, b: usize) -> bool {
        let (ax, ay) = self.node_lattice(state, a);
        let (bx, by) = self.node_lattice(state, b);
        let (dx, dy) = (bx - ax, by - ay);
        let len_sq = dx * dx + dy * dy;
        for (i, _) in state.nodes.iter().enumerate() {
            if i == a || i == b {
                continue;
            }
            let (cx, cy) = self.node_lattice(state, i);
            let (ex, ey) = (cx - ax, cy - ay);
            let cross = dx * ey - dy * ex;
            if cross != 0 {
                continue;
            }
            let dot = dx * ex + dy * ey;
            if dot > 0 && dot < len_sq {
                return false;
            }
        }
        true
    }

    fn member_exists(&self, state: &TrussState, a: u32, b: u32) -> bool {
        let (lo, hi) = (a.min(b), a.max(b));
        state.members.iter().any(|m| m.a == lo && m.b == hi)
    }

    fn add_node_feasible(&self, state: &TrussState, x: f64, y: f64) -> Result<(i64, i64), String> {
        let (ix, iy) = self.snap_point(x, y);
        if !self.in_domain(ix, iy) {
            return Err(format!("node ({x}, {y}) snaps outside the domain"));
        }
        for (i, _) in state.nodes.iter().enumerate() {
            let (nx, ny) = self.node_lattice(state, i);
            if !self.spacing_ok(ix, iy, nx, ny) {
                return Err(format!("node ({x}, {y}) violates minimum spacing"));
            }
        }
        Ok((ix, iy))
    }

    fn add_member_feasible(
        &self,
        state: &TrussState,
        a: i64,
        b: i64,
    ) -> Result<(u32, u32), String> {
        let n = state.nodes.len() as i64;
        if a < 0 || b < 0 || a >= n || b >= n {
            return Err(format!("member endpoints ({a}, {b}) out of range"));
        }
        if a == b {
            return Err("member endpoints must differ".into());
        }
        let (lo, hi) = (a.min(b) as u32, a.max(b) as u32);
        if self.member_exists(state, lo, hi) {
            return Err(format!("member ({lo}, {hi}) already present"));
        }
        if !self.segment_clear(state, lo as usize, hi as usize) {
            return Err(format!("member ({lo}, {hi}) passes through another node"));
        }
        Ok((lo, hi))
    }

    /// Maps a domain point to its cell index in a g x g spatial density.
    pub fn density_cell(&self, x: f64, y: f64, g: usize) -> usize {
        let col = ((x / self.bc.domain.width) * g as f64)
            .floor()
            .clamp(0.0, (g - 1) as f64);
        let row = ((y / self.bc.domain.height) * g as f64)
            .floor()
            .clamp(0.0, (g - 1) as f64);
        row as usize * g + col as usize
    }

    /// Lattice bounds [lo, hi] of a density cell along one axis.
    fn cell_lattice_range(&self, cell: usize, g: usize, lattice_max: i64) -> (i64, i64) {
        let cell = cell as i64;
        let g = g as i64;
        let lo = (cell * lattice_max + g - 1) / g;
        let hi = if cell == g - 1 {
            lattice_max
        } else {
            ((cell + 1) * lattice_max + g - 1) / g - 1
        };
        (lo, hi.max(lo))
    }
}

/// Truss reward: `clamp(target_mass * fos / mass, 0, 1) + 1[fos >= target_fos]`.
pub fn reward_from(fos: f64, mass: f64, targets: &TargetSpec) -> f64 {
    if mass <= 0.0 {
        return 0.0;
    }
    let efficiency = (targets.mass * fos / mass).clamp(0.0, 1.0);
    let bonus = if fos >= targets.fos { 1.0 } else { 0.0 };
    efficiency + bonus
}

impl Environment for TrussEnv {
    type State = TrussState;

    fn tag(&self) -> &'static str {
        "truss"
    }

    fn action_classes(&self) -> &[ActionClass] {
        &ACTION_CLASSES
    }

    fn initial_state(&self) -> TrussState {
        let mut nodes = Vec::new();
        let mut supports = Vec::new();
        for p in &self.bc.supports {
            supports.push(nodes.len() as u32);
            nodes.push(Node { x: p[0], y: p[1] });
        }
        let mut loads = Vec::new();
        for l in &self.bc.loads {
            loads.push(TrussLoad {
                node: nodes.len() as u32,
                force: l.force,
            });
            nodes.push(Node {
                x: l.at[0],
                y: l.at[1],
            });
        }
        TrussState {
            nodes,
            members: Vec::new(),
            supports,
            loads,
            step_count: 0,
            fem: OnceLock::new(),
        }
    }

    fn is_terminal(&self, state: &TrussState) -> bool {
        state.step_count >= self.bc.domain.max_steps
    }

    fn transition(
        &self,
        state: &TrussState,
        action: &ComplexAction,
    ) -> Result<TrussState, ActionError> {
        if self.is_terminal(state) {
            return Err(ActionError::infeasible("episode already ended"));
        }
        let mut next = TrussState {
            nodes: state.nodes.clone(),
            members: state.members.clone(),
            supports: state.supports.clone(),
            loads: state.loads.clone(),
            step_count: state.step_count + 1,
            fem: OnceLock::new(),
        };
        match action.class_id {
            CLASS_ADD_NODE => {
                let [x, y] = action.continuous[..] else {
                    return Err(ActionError::infeasible("add-node takes (x, y)"));
                };
                let (ix, iy) = self
                    .add_node_feasible(state, x, y)
                    .map_err(ActionError::infeasible)?;
                let snap = self.bc.domain.snap;
                next.nodes.push(Node {
                    x: ix as f64 * snap,
                    y: iy as f64 * snap,
                });
            }
            CLASS_ADD_MEMBER => {
                let [a, b] = action.discrete[..] else {
                    return Err(ActionError::infeasible("add-member takes (a, b)"));
                };
                let (lo, hi) = self
                    .add_member_feasible(state, a, b)
                    .map_err(ActionError::infeasible)?;
                next.members.push(Member {
                    a: lo,
                    b: hi,
                    thickness_level: 1,
                });
            }
            CLASS_INCREASE_THICKNESS => {
                let [index] = action.discrete[..] else {
                    return Err(ActionError::infeasible("increase-thickness takes (member)"));
                };
                if index < 0 || index as usize >= next.members.len() {
                    return Err(ActionError::infeasible(format!(
                        "member {index} out of range"
                    )));
                }
                next.members[index as usize].thickness_level += 1;
            }
            other => {
                return Err(ActionError::infeasible(format!(
                    "unknown action class {other}"
                )))
            }
        }
        Ok(next)
    }

    fn step_reward(&self, _prev: &TrussState, next: &TrussState) -> f64 {
        self.quality(next)
    }

    fn feasible_actions(
        &self,
        state: &TrussState,
        budget: usize,
        prior: Option<&SpatialDensity>,
        rng: &mut ChaCha8Rng,
    ) -> Vec<ComplexAction> {
        if self.is_terminal(state) {
            return Vec::new();
        }
        let mut actions = Vec::new();

        // Sampled add-node candidates, drawn from the spatial prior.
        let uniform;
        let density = match prior {
            Some(d) => d,
            None => {
                uniform = SpatialDensity::uniform(16);
                &uniform
            }
        };
        let snap = self.bc.domain.snap;
        let mut drawn: Vec<(i64, i64)> = Vec::with_capacity(budget);
        for _ in 0..budget {
            for _attempt in 0..8 {
                let cell = density.sample_cell(rng);
                let (col, row) = (cell % density.g, cell / density.g);
                let (x_lo, x_hi) = self.cell_lattice_range(col, density.g, self.lattice_w);
                let (y_lo, y_hi) = self.cell_lattice_range(row, density.g, self.lattice_h);
                let ix = rng.gen_range(x_lo..=x_hi);
                let iy = rng.gen_range(y_lo..=y_hi);
                if drawn.contains(&(ix, iy)) {
                    continue;
                }
                let (x, y) = (ix as f64 * snap, iy as f64 * snap);
                if self.add_node_feasible(state, x, y).is_ok() {
                    drawn.push((ix, iy));
                    actions.push(ComplexAction::continuous(CLASS_ADD_NODE, vec![x, y]));
                    break;
                }
            }
        }

        // All absent, unobstructed members, in index order.
        let n = state.nodes.len() as u32;
        for a in 0..n {
            for b in a + 1..n {
                if self.add_member_feasible(state, a as i64, b as i64).is_ok() {
                    actions.push(ComplexAction::discrete(
                        CLASS_ADD_MEMBER,
                        vec![a as i64, b as i64],
                    ));
                }
            }
        }

        // Thickness increase for every member.
        for index in 0..state.members.len() {
            actions.push(ComplexAction::discrete(
                CLASS_INCREASE_THICKNESS,
                vec![index as i64],
            ));
        }
        actions
    }

    fn action_feasible(&self, state: &TrussState, action: &ComplexAction) -> bool {
        if self.is_terminal(state) {
            return false;
        }
        match action.class_id {
            CLASS_ADD_NODE => match action.continuous[..] {
                [x, y] => self.add_node_feasible(state, x, y).is_ok(),
                _ => false,
            },
            CLASS_ADD_MEMBER => match action.discrete[..] {
                [a, b] => self.add_member_feasible(state, a, b).is_ok(),
                _ => false,
            },
            CLASS_INCREASE_THICKNESS => match action.discrete[..] {
                [index] => index >= 0 && (index as usize) < state.members.len(),
                _ => false,
            },
            _ => false,
        }
    }

    fn is_feasible_design(&self, state: &TrussState) -> bool {
        let fem = self.analyze(state);
        fem.solvable && fem.fos >= self.bc.targets.fos
    }
}
