//! Boundary conditions and physical constants for the truss task.
//!
//! A boundary condition fixes the design domain, the material, the support
//! and load layout, and the feasibility targets. Six layouts ship with the
//! crate as editable JSON files under `configs/boundary/`; they are also
//! embedded so they can be resolved by name without touching the
//! filesystem.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BoundaryError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed boundary condition: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("unknown boundary condition '{0}'")]
    Unknown(String),
    #[error("invalid boundary condition: {0}")]
    Invalid(String),
}

/// Design domain geometry and episode limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub width: f64,
    pub height: f64,
    /// Node coordinates snap to this lattice pitch.
    pub snap: f64,
    /// Minimum allowed distance between any two nodes.
    pub min_node_spacing: f64,
    /// Episode length: the step count at which a design episode ends.
    pub max_steps: u32,
}

impl Default for DomainSpec {
    fn default() -> Self {
        DomainSpec {
            width: 10.0,
            height: 10.0,
            snap: 0.1,
            min_node_spacing: 0.3,
            max_steps: 100,
        }
    }
}

/// Material constants. Member area is `base_area` multiplied by the
/// member's thickness level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialSpec {
    pub density: f64,
    pub yield_stress: f64,
    pub base_area: f64,
    pub youngs_modulus: f64,
    /// When set, compression members are additionally checked against the
    /// Euler critical stress of a solid circular section.
    #[serde(default)]
    pub buckling_check: bool,
}

impl Default for MaterialSpec {
    fn default() -> Self {
        MaterialSpec {
            density: 1.0,
            yield_stress: 100.0,
            base_area: 1.0,
            youngs_modulus: 1000.0,
            buckling_check: false,
        }
    }
}

/// Reward / feasibility targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub fos: f64,
    pub mass: f64,
}

impl Default for TargetSpec {
    fn default() -> Self {
        TargetSpec {
            fos: 1.0,
            mass: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    pub at: [f64; 2],
    pub force: [f64; 2],
}

/// A complete, file-loadable boundary condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCondition {
    pub name: String,
    #[serde(default)]
    pub domain: DomainSpec,
    #[serde(default)]
    pub material: MaterialSpec,
    #[serde(default)]
    pub targets: TargetSpec,
    pub supports: Vec<[f64; 2]>,
    pub loads: Vec<LoadSpec>,
}

const MIDDLE_BASIC: &str = include_str!("../../configs/boundary/middle_basic.json");
const MIDDLE_HARD: &str = include_str!("../../configs/boundary/middle_hard.json");
const CANTILEVERED_BASIC: &str = include_str!("../../configs/boundary/cantilevered_basic.json");
const CANTILEVERED_HARD: &str = include_str!("../../configs/boundary/cantilevered_hard.json");
const VERTICAL_BASIC: &str = include_str!("../../configs/boundary/vertical_basic.json");
const VERTICAL_HARD: &str = include_str!("../../configs/boundary/vertical_hard.json");

/// Names of the six embedded boundary conditions.
pub const BUILTIN_BOUNDARIES: [&str; 6] = [
    "middle-basic",
    "middle-hard",
    "cantilevered-basic",
    "cantilevered-hard",
    "vertical-basic",
    "vertical-hard",
];

impl BoundaryCondition {
    /// Resolves an embedded boundary condition by name.
    pub fn builtin(name: &str) -> Result<Self, BoundaryError> {
        let text = match name {
            "middle-basic" => MIDDLE_BASIC,
            "middle-hard" => MIDDLE_HARD,
            "cantilevered-basic" => CANTILEVERED_BASIC,
            "cantilevered-hard" => CANTILEVERED_HARD,
            "vertical-basic" => VERTICAL_BASIC,
            "vertical-hard" => VERTICAL_HARD,
            other => return Err(BoundaryError::Unknown(other.to_string())),
        };
        let bc: BoundaryCondition = serde_json::from_str(text)?;
        bc.validate()?;
        Ok(bc)
    }

    pub fn from_file(path: &Path) -> Result<Self, BoundaryError> {
        let text = fs::read_to_string(path)?;
        let bc: BoundaryCondition = serde_json::from_str(&text)?;
        bc.validate()?;
        Ok(bc)
    }

    /// Resolves `source` as a builtin name first, then as a file path.
    pub fn resolve(source: &str) -> Result<Self, BoundaryError> {
        match Self::builtin(source) {
            Ok(bc) => Ok(bc),
            Err(BoundaryError::Unknown(_)) => Self::from_file(Path::new(source)),
            Err(e) => Err(e),
        }
    }

    pub fn validate(&self) -> Result<(), BoundaryError> {
        if self.supports.len() < 2 {
            return Err(BoundaryError::Invalid(
                "at least two supports required".into(),
            ));
        }
        if self.loads.is_empty() {
            return Err(BoundaryError::Invalid("at least one load required".into()));
        }
        if self.domain.snap <= 0.0 || self.domain.min_node_spacing <= 0.0 {
            return Err(BoundaryError::Invalid(
                "snap and spacing must be positive".into(),
            ));
        }
        let inside = |p: &[f64; 2]| {
            p[0] >= 0.0 && p[0] <= self.domain.width && p[1] >= 0.0 && p[1] <= self.domain.height
        };
        for p in &self.supports {
            if !inside(p) {
                return Err(BoundaryError::Invalid(format!(
                    "support {p:?} outside domain"
                )));
            }
        }
        for l in &self.loads {
            if !inside(&l.at) {
                return Err(BoundaryError::Invalid(format!(
                    "load at {:?} outside domain",
                    l.at
                )));
            }
        }
        Ok(())
    }
}
