//! Direct-stiffness finite-element analysis of 2D pin-jointed trusses.
//!
//! Every node carries two translational DOFs; supports pin both. The global
//! stiffness matrix is assembled densely and factored by LDL^T with
//! symmetric diagonal pivoting (valid for the PSD matrices truss assembly
//! produces). A pivot below `SINGULAR_TOL` times the largest initial
//! diagonal declares the structure unstable: unconnected nodes, mechanisms,
//! and unsupported load paths all land there and report `solvable = false`
//! with `fos = 0`.

use super::{MaterialSpec, TrussState};

/// Relative pivot threshold for declaring the stiffness matrix singular.
pub const SINGULAR_TOL: f64 = 1e-10;
/// Accepted relative equilibrium residual for a successful solve.
pub const RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct FemResult {
    pub solvable: bool,
    /// Factor of safety: yield stress over peak member stress magnitude
    /// (Euler buckling included when the material enables it). Zero when
    /// unsolvable.
    pub fos: f64,
    /// Total structural mass, defined for unsolvable structures too.
    pub mass: f64,
    /// Per-node displacements (dx, dy); empty when unsolvable.
    pub displacements: Vec<[f64; 2]>,
    /// Per-member axial stress, tension positive; empty when unsolvable.
    pub member_stress: Vec<f64>,
    /// Relative equilibrium residual of the solve.
    pub residual: f64,
}

impl FemResult {
    fn unsolvable(mass: f64) -> Self {
        FemResult {
            solvable: false,
            fos: 0.0,
            mass,
            displacements: Vec::new(),
            member_stress: Vec::new(),
            residual: f64::INFINITY,
        }
    }
}

pub fn total_mass(state: &TrussState, material: &MaterialSpec) -> f64 {
    state
        .members
        .iter()
        .map(|m| {
            let length = state.member_length(m);
            length * material.base_area * m.thickness_level as f64 * material.density
        })
        .sum()
}

/// Analyzes `state` under its stored loads and supports.
pub fn fem_solve(state: &TrussState, material: &MaterialSpec) -> FemResult {
    let mass = total_mass(state, material);
    let n = state.nodes.len();
    if n == 0 || state.members.is_empty() || state.loads.is_empty() {
        return FemResult::unsolvable(mass);
    }

    let ndof = 2 * n;
    let mut fixed = vec![false; ndof];
    for &s in &state.supports {
        fixed[2 * s as usize] = true;
        fixed[2 * s as usize + 1] = true;
    }
    let free: Vec<usize> = (0..ndof).filter(|&d| !fixed[d]).collect();
    if free.is_empty() {
        return FemResult::unsolvable(mass);
    }
    let mut dof_map = vec![usize::MAX; ndof];
    for (i, &d) in free.iter().enumerate() {
        dof_map[d] = i;
    }

    let m = free.len();
    let mut k = vec![0.0f64; m * m];
    for member in &state.members {
        let (a, b) = (member.a as usize, member.b as usize);
        let (ax, ay) = (state.nodes[a].x, state.nodes[a].y);
        let (bx, by) = (state.nodes[b].x, state.nodes[b].y);
        let (dx, dy) = (bx - ax, by - ay);
        let length = (dx * dx + dy * dy).sqrt();
        if length <= 0.0 {
            return FemResult::unsolvable(mass);
        }
        let c = dx / length;
        let s = dy / length;
        let area = material.base_area * member.thickness_level as f64;
        let stiff = material.youngs_modulus * area / length;
        // 2x2 block pattern [[c^2, cs], [cs, s^2]].
        let block = [c * c, c * s, c * s, s * s];
        let dofs = [2 * a, 2 * a + 1, 2 * b, 2 * b + 1];
        for bi in 0..2 {
            for bj in 0..2 {
                let kij = stiff * block[bi * 2 + bj];
                // (a,a) and (b,b) add; (a,b) and (b,a) subtract.
                for (ni, nj, sign) in [(0, 0, 1.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 1.0)] {
                    let gi = dofs[2 * ni + bi];
                    let gj = dofs[2 * nj + bj];
                    if dof_map[gi] != usize::MAX && dof_map[gj] != usize::MAX {
                        k[dof_map[gi] * m + dof_map[gj]] += sign * kij;
                    }
                }
            }
        }
    }

    let mut f = vec![0.0f64; m];
    for load in &state.loads {
        let node = load.node as usize;
        for axis in 0..2 {
            let d = 2 * node + axis;
            if dof_map[d] != usize::MAX {
                f[dof_map[d]] += load.force[axis];
            }
        }
    }

    let factor = match ldlt_factor(&k, m) {
        Some(fac) => fac,
        None => return FemResult::unsolvable(mass),
    };
    let mut u = factor.solve(&f);
    // One refinement pass keeps the equilibrium residual near machine level.
    let r = residual_vec(&k, &u, &f, m);
    let d = factor.solve(&r);
    for i in 0..m {
        u[i] -= d[i];
    }
    let fnorm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
    let rnorm = residual_vec(&k, &u, &f, m)
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    let residual = if fnorm > 0.0 { rnorm / fnorm } else { rnorm };
    if !residual.is_finite() || residual > RESIDUAL_TOL {
        return FemResult::unsolvable(mass);
    }

    let mut displacements = vec![[0.0f64; 2]; n];
    for (i, &d) in free.iter().enumerate() {
        displacements[d / 2][d % 2] = u[i];
    }

    let mut member_stress = Vec::with_capacity(state.members.len());
    let mut worst_ratio = 0.0f64; // stress magnitude over allowable
    for member in &state.members {
        let (a, b) = (member.a as usize, member.b as usize);
        let (dx, dy) = (
            state.nodes[b].x - state.nodes[a].x,
            state.nodes[b].y - state.nodes[a].y,
        );
        let length = (dx * dx + dy * dy).sqrt();
        let c = dx / length;
        let s = dy / length;
        let elong = (displacements[b][0] - displacements[a][0]) * c
            + (displacements[b][1] - displacements[a][1]) * s;
        let stress = material.youngs_modulus * elong / length;
        member_stress.push(stress);
        let mut allowable = material.yield_stress;
        if material.buckling_check && stress < 0.0 {
            // Solid circular section: I = A^2 / (4 pi), so the Euler
            // critical stress is pi * E * A / (4 L^2).
            let area = material.base_area * member.thickness_level as f64;
            let critical =
                std::f64::consts::PI * material.youngs_modulus * area / (4.0 * length * length);
            allowable = allowable.min(critical);
        }
        if allowable > 0.0 {
            worst_ratio = worst_ratio.max(stress.abs() / allowable);
        }
    }

    let fos = if worst_ratio > 1e-12 {
        (1.0 / worst_ratio).min(1e9)
    } else {
        1e9
    };

    FemResult {
        solvable: true,
        fos,
        mass,
        displacements,
        member_stress,
        residual,
    }
}

struct LdltFactor {
    /// Unit-lower factor with D on the diagonal, permuted order.
    lower: Vec<f64>,
    perm: Vec<usize>,
    m: usize,
}

/// LDL^T with symmetric diagonal pivoting (largest remaining diagonal
/// first). Returns `None` when a pivot falls below the singularity
/// threshold relative to the largest initial diagonal entry.
fn ldlt_factor(k: &[f64], m: usize) -> Option<LdltFactor> {
    let mut a = k.to_vec();
    let mut perm: Vec<usize> = (0..m).collect();
    let max_diag = (0..m).map(|i| k[i * m + i]).fold(0.0f64, f64::max);
    let tol = SINGULAR_TOL * max_diag.max(f64::MIN_POSITIVE);
    let mut col = vec![0.0f64; m];

    for step in 0..m {
        let mut best = step;
        for j in step + 1..m {
            if a[j * m + j] > a[best * m + best] {
                best = j;
            }
        }
        if a[best * m + best] < tol {
            return None;
        }
        if best != step {
            perm.swap(step, best);
            for c in 0..m {
                a.swap(step * m + c, best * m + c);
            }
            for r in 0..m {
                a.swap(r * m + step, r * m + best);
            }
        }
        let d = a[step * m + step];
        for i in step + 1..m {
            col[i] = a[i * m + step];
        }
        // Full-width trailing update keeps the block symmetric, which the
        // row/column pivot swaps above rely on.
        for i in step + 1..m {
            let l = col[i] / d;
            let row = &mut a[i * m..(i + 1) * m];
            for j in step + 1..m {
                row[j] -= l * col[j];
            }
            row[step] = l;
        }
    }
    Some(LdltFactor { lower: a, perm, m })
}

impl LdltFactor {
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0f64; m];
        for i in 0..m {
            let mut v = rhs[self.perm[i]];
            for j in 0..i {
                v -= self.lower[i * m + j] * y[j];
            }
            y[i] = v;
        }
        for (i, v) in y.iter_mut().enumerate() {
            *v /= self.lower[i * m + i];
        }
        for i in (0..m).rev() {
            let mut v = y[i];
            for j in i + 1..m {
                v -= self.lower[j * m + i] * y[j];
            }
            y[i] = v;
        }
        let mut x = vec![0.0f64; m];
        for i in 0..m {
            x[self.perm[i]] = y[i];
        }
        x
    }
}

fn residual_vec(k: &[f64], u: &[f64], f: &[f64], m: usize) -> Vec<f64> {
    let mut r = vec![0.0f64; m];
    for i in 0..m {
        let mut acc = 0.0;
        for j in 0..m {
            acc += k[i * m + j] * u[j];
        }
        r[i] = acc - f[i];
    }
    r
}
