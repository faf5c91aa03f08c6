//! Sequential A* reference router.
//!
//! Routes nets one at a time over the unit-step grid graph with a 3D
//! Manhattan heuristic. Unit edges cost 1 while capacity remains; exhausted
//! edges stay traversable at a large penalty so routing always completes,
//! and every traversal of an exhausted edge counts one overflow. Ties in
//! the open set break on (f, h, x, y, z), so results are deterministic.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use super::{Cell, EdgeGrid, RoutingProblem, DIRECTIONS};

const OVERFLOW_PENALTY: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AStarNetResult {
    pub path: Vec<Cell>,
    pub wirelength: usize,
    pub overflow: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AStarReport {
    pub nets: Vec<AStarNetResult>,
    pub total_wirelength: usize,
    pub planar_wirelength: usize,
    pub vias: usize,
    pub total_overflow: usize,
}

/// Routes every net in order, consuming capacity as it goes.
pub fn route_with_astar(problem: &RoutingProblem) -> AStarReport {
    let mut edges = EdgeGrid::full(problem);
    let mut nets = Vec::with_capacity(problem.nets.len());
    let mut vias = 0;
    for net in &problem.nets {
        let path = astar_net(problem, &edges, net.source, net.target);
        let mut overflow = 0;
        for w in path.windows(2) {
            if edges.consume(w[0], w[1]) {
                overflow += 1;
            }
            if w[0][2] != w[1][2] {
                vias += 1;
            }
        }
        nets.push(AStarNetResult {
            path: path.clone(),
            wirelength: path.len() - 1,
            overflow,
        });
    }
    let total_wirelength: usize = nets.iter().map(|n| n.wirelength).sum();
    let total_overflow = nets.iter().map(|n| n.overflow).sum();
    AStarReport {
        nets,
        total_wirelength,
        planar_wirelength: total_wirelength - vias,
        vias,
        total_overflow,
    }
}

fn manhattan(a: Cell, b: Cell) -> u64 {
    ((a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()) as u64
}

fn edge_cost(edges: &EdgeGrid, a: Cell, b: Cell) -> u64 {
    if edges.remaining(a, b) == 0 {
        1 + OVERFLOW_PENALTY
    } else {
        1
    }
}

/// Cheapest path from `source` to `target` under the current capacities.
pub(crate) fn astar_net(
    problem: &RoutingProblem,
    edges: &EdgeGrid,
    source: Cell,
    target: Cell,
) -> Vec<Cell> {
    let g = problem.grid_size as i64;
    let l = problem.layers as i64;
    let mut best: HashMap<Cell, u64> = HashMap::new();
    let mut came_from: HashMap<Cell, Cell> = HashMap::new();
    let mut open = BinaryHeap::new();
    best.insert(source, 0);
    open.push(Reverse((
        manhattan(source, target),
        manhattan(source, target),
        source,
    )));

    while let Some(Reverse((f, _h, cell))) = open.pop() {
        let g_here = best[&cell];
        if f != g_here + manhattan(cell, target) {
            continue;
        }
        if cell == target {
            let mut path = vec![cell];
            let mut at = cell;
            while let Some(&prev) = came_from.get(&at) {
                path.push(prev);
                at = prev;
            }
            path.reverse();
            return path;
        }
        for d in DIRECTIONS {
            let next = [cell[0] + d[0], cell[1] + d[1], cell[2] + d[2]];
            if next[0] < 0
                || next[0] >= g
                || next[1] < 0
                || next[1] >= g
                || next[2] < 0
                || next[2] >= l
            {
                continue;
            }
            let tentative = g_here + edge_cost(edges, cell, next);
            if best.get(&next).is_none_or(|&known| tentative < known) {
                best.insert(next, tentative);
                came_from.insert(next, cell);
                let h = manhattan(next, target);
                open.push(Reverse((tentative + h, h, next)));
            }
        }
    }
    unreachable!("grid graph is connected");
}
