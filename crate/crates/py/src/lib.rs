//! Python extension module `slda`: environments, actions, search, policy
//! models, trajectory augmentation, and one-step policy iteration.
//!
//! States and trajectories cross the boundary as typed classes; configs and
//! reports cross as JSON strings, matching the on-disk formats, so the
//! Python side can use plain `json` round-trips.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use std::fmt::Display;
use std::path::Path;

use slda_core::mdp::{derive_seed, ComplexAction, Environment, Trajectory, TrajectoryStep};
use slda_core::policy::model_io::{load_model, save_model};
use slda_core::policy::{ArchDescriptor, PolicyModel, RouteArch, TrussArch};
use slda_core::route::{generate_problem, route_with_astar, RouteEnv, RouteState, RoutingProblem};
use slda_core::selflearn::{
    run_route_iteration, run_truss_iteration, trajectory_noise, RouteIterationConfig,
    TrussIterationConfig,
};
use slda_core::sgts::{generate_trajectory, SearchParams, Searcher};
use slda_core::truss::{BoundaryCondition, TrussEnv, TrussState, BUILTIN_BOUNDARIES};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STREAM_MODEL: u64 = 0x4d4f;

fn val_err(e: impl Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

// ------------------------------------------------------------------ actions

#[pyclass(name = "Action", skip_from_py_object)]
#[derive(Clone)]
struct PyAction {
    inner: ComplexAction,
}

#[pymethods]
impl PyAction {
    /// Truss: place a free node at (x, y).
    #[staticmethod]
    fn add_node(x: f64, y: f64) -> Self {
        PyAction {
            inner: ComplexAction::continuous(slda_core::truss::CLASS_ADD_NODE, vec![x, y]),
        }
    }

    /// Truss: connect nodes `a` and `b`.
    #[staticmethod]
    fn add_member(a: i64, b: i64) -> Self {
        PyAction {
            inner: ComplexAction::discrete(slda_core::truss::CLASS_ADD_MEMBER, vec![a, b]),
        }
    }

    /// Truss: increase member `index` one thickness level.
    #[staticmethod]
    fn thicken(index: i64) -> Self {
        PyAction {
            inner: ComplexAction::discrete(slda_core::truss::CLASS_INCREASE_THICKNESS, vec![index]),
        }
    }

    /// Routing: move `distance` cells along direction 0..6
    /// (+x, -x, +y, -y, up, down).
    #[staticmethod]
    fn route_move(direction: i64, distance: i64) -> PyResult<Self> {
        if !(0..6).contains(&direction) {
            return Err(val_err("direction must be in 0..6"));
        }
        Ok(PyAction {
            inner: ComplexAction::discrete(slda_core::route::CLASS_MOVE, vec![direction, distance]),
        })
    }

    #[getter]
    fn class_id(&self) -> u8 {
        self.inner.class_id
    }

    #[getter]
    fn discrete(&self) -> Vec<i64> {
        self.inner.discrete.clone()
    }

    #[getter]
    fn continuous(&self) -> Vec<f64> {
        self.inner.continuous.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "Action(class_id={}, discrete={:?}, continuous={:?})",
            self.inner.class_id, self.inner.discrete, self.inner.continuous
        )
    }
}

// ------------------------------------------------------------------- states

#[pyclass(name = "TrussState", skip_from_py_object)]
#[derive(Clone)]
struct PyTrussState {
    inner: TrussState,
}

#[pymethods]
impl PyTrussState {
    #[getter]
    fn node_count(&self) -> usize {
        self.inner.nodes.len()
    }

    #[getter]
    fn member_count(&self) -> usize {
        self.inner.members.len()
    }

    #[getter]
    fn step_count(&self) -> u32 {
        self.inner.step_count
    }

    fn nodes(&self) -> Vec<(f64, f64)> {
        self.inner.nodes.iter().map(|n| (n.x, n.y)).collect()
    }

    /// Members as (node a, node b, thickness level).
    fn members(&self) -> Vec<(u32, u32, u32)> {
        self.inner
            .members
            .iter()
            .map(|m| (m.a, m.b, m.thickness_level))
            .collect()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(val_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyTrussState {
            inner: serde_json::from_str(text).map_err(val_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "TrussState(nodes={}, members={}, steps={})",
            self.inner.nodes.len(),
            self.inner.members.len(),
            self.inner.step_count
        )
    }
}

#[pyclass(name = "RouteState", skip_from_py_object)]
#[derive(Clone)]
struct PyRouteState {
    inner: RouteState,
}

#[pymethods]
impl PyRouteState {
    #[getter]
    fn position(&self) -> (i64, i64, i64) {
        let [x, y, z] = self.inner.position;
        (x, y, z)
    }

    #[getter]
    fn net_index(&self) -> usize {
        self.inner.net_index
    }

    #[getter]
    fn t(&self) -> u32 {
        self.inner.t
    }

    #[getter]
    fn wirelength(&self) -> usize {
        self.inner.total_wirelength()
    }

    #[getter]
    fn vias(&self) -> usize {
        self.inner.via_count()
    }

    /// Banked per-net paths as lists of (x, y, layer) cells.
    fn routed(&self) -> Vec<Vec<(i64, i64, i64)>> {
        self.inner
            .routed
            .iter()
            .map(|path| path.iter().map(|&[x, y, z]| (x, y, z)).collect())
            .collect()
    }

    #[getter]
    fn outcome(&self) -> &'static str {
        match self.inner.outcome {
            slda_core::route::RouteOutcome::InProgress => "in-progress",
            slda_core::route::RouteOutcome::Completed => "completed",
            slda_core::route::RouteOutcome::Abandoned => "abandoned",
        }
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(val_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyRouteState {
            inner: serde_json::from_str(text).map_err(val_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "RouteState(net={}, t={}, wirelength={}, outcome={})",
            self.inner.net_index,
            self.inner.t,
            self.inner.total_wirelength(),
            self.outcome()
        )
    }
}

// ------------------------------------------------------------- trajectories

enum TrajectoryKind {
    Truss(Trajectory<TrussState>),
    Route(Trajectory<RouteState>),
}

#[pyclass(name = "Trajectory")]
struct PyTrajectory {
    kind: TrajectoryKind,
}

impl PyTrajectory {
    fn actions_and_rewards(&self) -> (Vec<ComplexAction>, Vec<f64>) {
        fn split<S>(steps: &[TrajectoryStep<S>]) -> (Vec<ComplexAction>, Vec<f64>) {
            (
                steps.iter().map(|s| s.action.clone()).collect(),
                steps.iter().map(|s| s.reward).collect(),
            )
        }
        match &self.kind {
            TrajectoryKind::Truss(t) => split(&t.steps),
            TrajectoryKind::Route(t) => split(&t.steps),
        }
    }
}

#[pymethods]
impl PyTrajectory {
    fn __len__(&self) -> usize {
        match &self.kind {
            TrajectoryKind::Truss(t) => t.steps.len(),
            TrajectoryKind::Route(t) => t.steps.len(),
        }
    }

    #[getter]
    fn feasible(&self) -> bool {
        match &self.kind {
            TrajectoryKind::Truss(t) => t.feasible,
            TrajectoryKind::Route(t) => t.feasible,
        }
    }

    fn actions(&self) -> Vec<PyAction> {
        self.actions_and_rewards()
            .0
            .into_iter()
            .map(|inner| PyAction { inner })
            .collect()
    }

    fn rewards(&self) -> Vec<f64> {
        self.actions_and_rewards().1
    }

    #[getter]
    fn best_reward(&self) -> f64 {
        self.rewards().into_iter().fold(0.0, f64::max)
    }

    /// Final state, typed by the source environment.
    fn final_state(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        match &self.kind {
            TrajectoryKind::Truss(t) => Ok(PyTrussState {
                inner: t.final_state.clone(),
            }
            .into_pyobject(py)?
            .into_any()
            .unbind()),
            TrajectoryKind::Route(t) => Ok(PyRouteState {
                inner: t.final_state.clone(),
            }
            .into_pyobject(py)?
            .into_any()
            .unbind()),
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "Trajectory(steps={}, feasible={})",
            self.__len__(),
            self.feasible()
        )
    }
}

// ------------------------------------------------------------ search params

#[pyclass(name = "SearchParams", skip_from_py_object)]
#[derive(Clone)]
struct PySearchParams {
    inner: SearchParams,
}

#[pymethods]
impl PySearchParams {
    #[new]
    #[pyo3(signature = (simulations=128, depth=5, width=10, beta=2.0, gamma=0.95, workers=1, seed=0))]
    fn new(
        simulations: u32,
        depth: u32,
        width: usize,
        beta: f64,
        gamma: f64,
        workers: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let inner = SearchParams {
            simulations,
            depth,
            width,
            beta,
            gamma,
            workers,
            seed,
            ..SearchParams::default()
        };
        inner.validate().map_err(val_err)?;
        Ok(PySearchParams { inner })
    }

    fn __repr__(&self) -> String {
        format!(
            "SearchParams(simulations={}, depth={}, width={}, beta={}, gamma={}, workers={}, seed={})",
            self.inner.simulations,
            self.inner.depth,
            self.inner.width,
            self.inner.beta,
            self.inner.gamma,
            self.inner.workers,
            self.inner.seed
        )
    }
}

// ------------------------------------------------------------ policy models

#[pyclass(name = "PolicyModel")]
struct PyPolicyModel {
    inner: PolicyModel,
}

#[pymethods]
impl PyPolicyModel {
    /// Randomly initialized policy for "truss" or "route"; `arch_json`
    /// overrides the default architecture.
    #[staticmethod]
    #[pyo3(signature = (environment, seed=0, arch_json=None))]
    fn random(environment: &str, seed: u64, arch_json: Option<&str>) -> PyResult<Self> {
        let descriptor = match environment {
            "truss" => ArchDescriptor::Truss(match arch_json {
                Some(text) => serde_json::from_str::<TrussArch>(text).map_err(val_err)?,
                None => TrussArch::default(),
            }),
            "route" => ArchDescriptor::Route(match arch_json {
                Some(text) => serde_json::from_str::<RouteArch>(text).map_err(val_err)?,
                None => RouteArch::default(),
            }),
            other => return Err(val_err(format!("unknown environment `{other}`"))),
        };
        Ok(PyPolicyModel {
            inner: PolicyModel::new_random(descriptor, seed),
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyPolicyModel {
            inner: load_model(Path::new(path)).map_err(val_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_model(&self.inner, Path::new(path)).map_err(val_err)
    }

    #[getter]
    fn environment(&self) -> &'static str {
        self.inner.environment_tag()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn __repr__(&self) -> String {
        format!(
            "PolicyModel(environment={:?}, params={})",
            self.inner.environment_tag(),
            self.inner.param_count()
        )
    }
}

/// The policy driving a search: a borrowed model, or the seed-derived
/// untrained model the command line would use.
fn resolve_policy<'a>(
    model: Option<&'a PyPolicyModel>,
    fallback: impl FnOnce() -> ArchDescriptor,
    tag: &str,
    seed: u64,
    owned: &'a mut Option<PolicyModel>,
) -> PyResult<&'a PolicyModel> {
    let resolved = match model {
        Some(m) => &m.inner,
        None => owned.insert(PolicyModel::new_random(
            fallback(),
            derive_seed(seed, STREAM_MODEL, 0),
        )),
    };
    resolved.ensure_environment(tag).map_err(val_err)?;
    Ok(resolved)
}

// ------------------------------------------------------------ environments

#[pyclass(name = "TrussEnv")]
struct PyTrussEnv {
    inner: TrussEnv,
}

#[pymethods]
impl PyTrussEnv {
    /// `boundary` is a built-in name or a boundary-condition file path.
    #[new]
    fn new(boundary: &str) -> PyResult<Self> {
        let bc = BoundaryCondition::resolve(boundary).map_err(val_err)?;
        Ok(PyTrussEnv {
            inner: TrussEnv::new(bc).map_err(val_err)?,
        })
    }

    #[getter]
    fn boundary(&self) -> String {
        self.inner.boundary().name.clone()
    }

    fn initial_state(&self) -> PyTrussState {
        PyTrussState {
            inner: self.inner.initial_state(),
        }
    }

    fn step(&self, state: &PyTrussState, action: &PyAction) -> PyResult<(PyTrussState, f64, bool)> {
        let result = self
            .inner
            .step(&state.inner, &action.inner)
            .map_err(val_err)?;
        Ok((
            PyTrussState {
                inner: result.state,
            },
            result.reward,
            result.terminal,
        ))
    }

    fn is_terminal(&self, state: &PyTrussState) -> bool {
        self.inner.is_terminal(&state.inner)
    }

    fn is_feasible(&self, state: &PyTrussState) -> bool {
        self.inner.is_feasible_design(&state.inner)
    }

    /// Clamped quality score of the current design (reward without the
    /// feasibility bonus).
    fn quality(&self, state: &PyTrussState) -> f64 {
        self.inner.quality(&state.inner)
    }

    fn analyze<'py>(&self, py: Python<'py>, state: &PyTrussState) -> PyResult<Bound<'py, PyDict>> {
        let fem = self.inner.analyze(&state.inner);
        let out = PyDict::new(py);
        out.set_item("solvable", fem.solvable)?;
        out.set_item("fos", fem.fos)?;
        out.set_item("mass", fem.mass)?;
        out.set_item("residual", fem.residual)?;
        out.set_item("member_stress", fem.member_stress.clone())?;
        Ok(out)
    }

    /// Up to `budget` feasible actions sampled at `state`.
    #[pyo3(signature = (state, budget=16, seed=0))]
    fn feasible_actions(&self, state: &PyTrussState, budget: usize, seed: u64) -> Vec<PyAction> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.inner
            .feasible_actions(&state.inner, budget, None, &mut rng)
            .into_iter()
            .map(|inner| PyAction { inner })
            .collect()
    }

    /// One search from `state`; `model=None` uses the seed-derived
    /// untrained policy.
    #[pyo3(signature = (state, params, model=None))]
    fn search(
        &self,
        py: Python<'_>,
        state: &PyTrussState,
        params: &PySearchParams,
        model: Option<&PyPolicyModel>,
    ) -> PyResult<PyAction> {
        let mut owned = None;
        let policy = resolve_policy(
            model,
            || ArchDescriptor::Truss(TrussArch::default()),
            self.inner.tag(),
            params.inner.seed,
            &mut owned,
        )?;
        let params = params.inner.clone();
        let state = state.inner.clone();
        let action = py
            .detach(|| {
                let mut searcher = Searcher::new(&self.inner, policy, params)?;
                searcher.search(&state)
            })
            .map_err(val_err)?;
        Ok(PyAction { inner: action })
    }

    /// Full search-driven episode; `model=None` uses the seed-derived
    /// untrained policy.
    #[pyo3(signature = (params, model=None))]
    fn run_episode(
        &self,
        py: Python<'_>,
        params: &PySearchParams,
        model: Option<&PyPolicyModel>,
    ) -> PyResult<PyTrajectory> {
        let mut owned = None;
        let policy = resolve_policy(
            model,
            || ArchDescriptor::Truss(TrussArch::default()),
            self.inner.tag(),
            params.inner.seed,
            &mut owned,
        )?;
        let params = params.inner.clone();
        let trajectory = py
            .detach(|| generate_trajectory(&self.inner, policy, params))
            .map_err(val_err)?;
        Ok(PyTrajectory {
            kind: TrajectoryKind::Truss(trajectory),
        })
    }

    /// Writes a portable pixmap render of the design.
    #[pyo3(signature = (state, path, size=128))]
    fn write_ppm(&self, state: &PyTrussState, path: &str, size: usize) -> PyResult<()> {
        let img = slda_core::truss::render::render_truss(&self.inner, &state.inner, size);
        slda_core::truss::render::write_ppm(&img, Path::new(path)).map_err(val_err)
    }
}

#[pyclass(name = "RouteEnv")]
struct PyRouteEnv {
    inner: RouteEnv,
}

#[pymethods]
impl PyRouteEnv {
    /// Builds from a problem JSON string, or generates a seeded problem
    /// when `problem_json` is omitted.
    #[new]
    #[pyo3(signature = (problem_json=None, *, grid_size=8, layers=2, capacity=3, pins=10, seed=0))]
    fn new(
        problem_json: Option<&str>,
        grid_size: usize,
        layers: usize,
        capacity: u8,
        pins: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let problem = match problem_json {
            Some(text) => serde_json::from_str::<RoutingProblem>(text).map_err(val_err)?,
            None => generate_problem(grid_size, layers, capacity, pins, seed).map_err(val_err)?,
        };
        Ok(PyRouteEnv {
            inner: RouteEnv::new(problem).map_err(val_err)?,
        })
    }

    fn problem_json(&self) -> PyResult<String> {
        serde_json::to_string(self.inner.problem().as_ref()).map_err(val_err)
    }

    /// Sequential capacity-aware A* over all nets.
    fn astar<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let report = route_with_astar(self.inner.problem());
        let out = PyDict::new(py);
        out.set_item("wirelength", report.total_wirelength)?;
        out.set_item("planar_wirelength", report.planar_wirelength)?;
        out.set_item("vias", report.vias)?;
        out.set_item("overflow", report.total_overflow)?;
        let nets: Vec<Vec<(i64, i64, i64)>> = report
            .nets
            .iter()
            .map(|n| n.path.iter().map(|&[x, y, z]| (x, y, z)).collect())
            .collect();
        out.set_item("nets", nets)?;
        Ok(out)
    }

    fn initial_state(&self) -> PyRouteState {
        PyRouteState {
            inner: self.inner.initial_state(),
        }
    }

    fn step(&self, state: &PyRouteState, action: &PyAction) -> PyResult<(PyRouteState, f64, bool)> {
        let result = self
            .inner
            .step(&state.inner, &action.inner)
            .map_err(val_err)?;
        Ok((
            PyRouteState {
                inner: result.state,
            },
            result.reward,
            result.terminal,
        ))
    }

    fn is_terminal(&self, state: &PyRouteState) -> bool {
        self.inner.is_terminal(&state.inner)
    }

    fn is_feasible(&self, state: &PyRouteState) -> bool {
        self.inner.is_feasible_design(&state.inner)
    }

    fn feasible_actions(&self, state: &PyRouteState) -> Vec<PyAction> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.inner
            .feasible_actions(&state.inner, usize::MAX, None, &mut rng)
            .into_iter()
            .map(|inner| PyAction { inner })
            .collect()
    }

    /// One search from `state`; `model=None` uses the seed-derived
    /// untrained policy.
    #[pyo3(signature = (state, params, model=None))]
    fn search(
        &self,
        py: Python<'_>,
        state: &PyRouteState,
        params: &PySearchParams,
        model: Option<&PyPolicyModel>,
    ) -> PyResult<PyAction> {
        let grid = self.inner.problem().grid_size;
        let mut owned = None;
        let policy = resolve_policy(
            model,
            || {
                ArchDescriptor::Route(RouteArch {
                    grid,
                    ..RouteArch::default()
                })
            },
            self.inner.tag(),
            params.inner.seed,
            &mut owned,
        )?;
        let params = params.inner.clone();
        let state = state.inner.clone();
        let action = py
            .detach(|| {
                let mut searcher = Searcher::new(&self.inner, policy, params)?;
                searcher.search(&state)
            })
            .map_err(val_err)?;
        Ok(PyAction { inner: action })
    }

    /// Full search-driven episode; `model=None` uses the seed-derived
    /// untrained policy.
    #[pyo3(signature = (params, model=None))]
    fn run_episode(
        &self,
        py: Python<'_>,
        params: &PySearchParams,
        model: Option<&PyPolicyModel>,
    ) -> PyResult<PyTrajectory> {
        let grid = self.inner.problem().grid_size;
        let mut owned = None;
        let policy = resolve_policy(
            model,
            || {
                ArchDescriptor::Route(RouteArch {
                    grid,
                    ..RouteArch::default()
                })
            },
            self.inner.tag(),
            params.inner.seed,
            &mut owned,
        )?;
        let params = params.inner.clone();
        let trajectory = py
            .detach(|| generate_trajectory(&self.inner, policy, params))
            .map_err(val_err)?;
        Ok(PyTrajectory {
            kind: TrajectoryKind::Route(trajectory),
        })
    }
}

// -------------------------------------------------------- module functions

/// Rebuild-order augmentations of a feasible truss design.
#[pyfunction]
#[pyo3(signature = (env, state, count=10, seed=0))]
fn noise_trajectories(
    env: &PyTrussEnv,
    state: &PyTrussState,
    count: u32,
    seed: u64,
) -> PyResult<Vec<PyTrajectory>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rebuilt = trajectory_noise(&env.inner, &state.inner, count, &mut rng).map_err(val_err)?;
    Ok(rebuilt
        .into_iter()
        .map(|t| PyTrajectory {
            kind: TrajectoryKind::Truss(t),
        })
        .collect())
}

/// One truss policy iteration from a JSON config; returns the trained
/// model and the report as JSON.
#[pyfunction]
#[pyo3(signature = (config_json, dataset_out=None))]
fn train_truss(
    py: Python<'_>,
    config_json: &str,
    dataset_out: Option<&str>,
) -> PyResult<(PyPolicyModel, String)> {
    let config: TrussIterationConfig = serde_json::from_str(config_json).map_err(val_err)?;
    let artifacts = py
        .detach(|| run_truss_iteration(&config))
        .map_err(val_err)?;
    if let Some(path) = dataset_out {
        artifacts.dataset.save(Path::new(path)).map_err(val_err)?;
    }
    let report = serde_json::to_string(&artifacts.report).map_err(val_err)?;
    Ok((
        PyPolicyModel {
            inner: artifacts.model,
        },
        report,
    ))
}

/// One routing policy iteration from a JSON config; returns the trained
/// model and the report as JSON.
#[pyfunction]
#[pyo3(signature = (config_json, dataset_out=None))]
fn train_route(
    py: Python<'_>,
    config_json: &str,
    dataset_out: Option<&str>,
) -> PyResult<(PyPolicyModel, String)> {
    let config: RouteIterationConfig = serde_json::from_str(config_json).map_err(val_err)?;
    let artifacts = py
        .detach(|| run_route_iteration(&config))
        .map_err(val_err)?;
    if let Some(path) = dataset_out {
        artifacts.dataset.save(Path::new(path)).map_err(val_err)?;
    }
    let report = serde_json::to_string(&artifacts.report).map_err(val_err)?;
    Ok((
        PyPolicyModel {
            inner: artifacts.model,
        },
        report,
    ))
}

/// Interquartile mean: the benchmark aggregate.
#[pyfunction]
fn iqm(values: Vec<f64>) -> PyResult<f64> {
    slda_core::bench::iqm(&values).map_err(val_err)
}

#[pyfunction]
fn builtin_boundaries() -> Vec<&'static str> {
    BUILTIN_BOUNDARIES.to_vec()
}

#[pymodule]
fn slda(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyAction>()?;
    m.add_class::<PyTrussState>()?;
    m.add_class::<PyRouteState>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PySearchParams>()?;
    m.add_class::<PyPolicyModel>()?;
    m.add_class::<PyTrussEnv>()?;
    m.add_class::<PyRouteEnv>()?;
    m.add_function(wrap_pyfunction!(noise_trajectories, m)?)?;
    m.add_function(wrap_pyfunction!(train_truss, m)?)?;
    m.add_function(wrap_pyfunction!(train_route, m)?)?;
    m.add_function(wrap_pyfunction!(iqm, m)?)?;
    m.add_function(wrap_pyfunction!(builtin_boundaries, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
