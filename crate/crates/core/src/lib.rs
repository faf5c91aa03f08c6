//! Self-learning design agent toolkit.
//!
//! A design task is cast as a deterministic MDP over *complex actions*
//! (an action class plus discrete and continuous parameters). Designs are
//! produced by sampling-guided tree search (`sgts`): a Monte-Carlo tree
//! search that expands nodes by sampling from a trainable policy (`policy`),
//! backs values up with a discounted max rule, and tracks in-flight rollouts
//! so workers can run concurrently. The agent starts with zero prior data:
//! feasible designs found by search become imitation data, the policy is
//! trained on them, and the trained policy guides the next round of search
//! (`selflearn`).
//!
//! Two environments are included: a 2D pin-jointed truss design task
//! evaluated by a direct-stiffness finite-element solver (`truss`) and a
//! capacitated two-layer grid-routing task benchmarked against A* (`route`).
//! `bench` holds the experiment harness used by the `slda` CLI.

pub mod bench;
pub mod mdp;
pub mod policy;
pub mod route;
pub mod selflearn;
pub mod sgts;
pub mod truss;

pub use mdp::{
    derive_seed, ActionClass, ActionError, ComplexAction, Dataset, Environment, SpatialDensity,
    StepResult, Trajectory, TrajectoryStep,
};
pub use sgts::{SearchParams, Searcher};
