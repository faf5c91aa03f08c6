//! Hierarchical design policy: state encoder, prior heads, and an
//! order-invariant selection network with invalid-action masking.
//!
//! Both environments share one structure: a convolutional encoder (with a
//! coordconv first layer) maps the state to a latent vector; an auxiliary
//! head emits a prior (truss: spatial density over the design grid; route:
//! direction logits); and a selection head scores each candidate action
//! from (latent, action features), independently per candidate, so scores
//! are exactly invariant under candidate permutation. Infeasible candidates
//! receive a large negative additive logit before normalization.
//!
//! Candidate scoring caches the action-feature half of the first selection
//! layer keyed by action identity — action features are state-independent,
//! so the per-candidate cost during search is a few small vector ops.

pub mod model_io;
pub mod nn;
pub mod train;

use std::collections::HashMap;
use std::sync::Mutex;

use ndarray::{concatenate, s, Array1, Array3, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{ComplexAction, Environment, SpatialDensity};
use crate::route::{self, RouteEnv, RouteState};
use crate::truss::{render, TrussEnv, TrussState};
use nn::{masked_softmax, relu, softmax, with_coord_channels, Conv2d, Linear, Scalar};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Selection-head widths shared by both environments.
const SEL_MAIN: [usize; 3] = [64, 128, 256];
const SEL_AUX: usize = 64;
const SEL_HEAD: [usize; 2] = [128, 32];
const LOC_EMBED: usize = 64;
const TRUSS_KERNELS: [usize; 3] = [5, 3, 3];
const TRUSS_STRIDES: [usize; 3] = [2, 2, 2];
const ROUTE_KERNEL: usize = 3;
const TRUSS_FEAT: usize = 7;
const ROUTE_FEAT: usize = 6;
/// Output layers start near zero so fresh policies are near-uniform.
const OUTPUT_SCALE: f64 = 0.01;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("no candidate actions to evaluate")]
    EmptyCandidates,
    #[error("model built for environment '{expected}' used with '{found}'")]
    EnvironmentMismatch { expected: String, found: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrussArch {
    pub image_size: usize,
    pub channels: [usize; 3],
    pub latent: usize,
    pub grid: usize,
}

impl Default for TrussArch {
    fn default() -> Self {
        TrussArch {
            image_size: 64,
            channels: [16, 32, 32],
            latent: 256,
            grid: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteArch {
    pub grid: usize,
    pub channels: [usize; 3],
    pub latent: usize,
}

impl Default for RouteArch {
    fn default() -> Self {
        RouteArch {
            grid: 8,
            channels: [16, 32, 32],
            latent: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "environment")]
pub enum ArchDescriptor {
    #[serde(rename = "truss")]
    Truss(TrussArch),
    #[serde(rename = "route")]
    Route(RouteArch),
}

impl ArchDescriptor {
    pub fn environment_tag(&self) -> &'static str {
        match self {
            ArchDescriptor::Truss(_) => "truss",
            ArchDescriptor::Route(_) => "route",
        }
    }
}

/// Probability distribution over a concrete candidate list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    pub actions: Vec<ComplexAction>,
    pub probabilities: Vec<f64>,
}

impl ActionDistribution {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn entropy(&self) -> f64 {
        -self
            .probabilities
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }

    /// Inverse-CDF sample of one candidate index.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        sample_index(&self.probabilities, rng)
    }

    /// Samples up to `k` distinct indices without replacement,
    /// renormalizing after each draw; zero-probability candidates are
    /// never drawn.
    pub fn sample_distinct(&self, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut weights = self.probabilities.clone();
        let mut picked = Vec::with_capacity(k.min(weights.len()));
        for _ in 0..k.min(weights.len()) {
            if weights.iter().sum::<f64>() <= 0.0 {
                break;
            }
            let idx = sample_index(&weights, rng);
            picked.push(idx);
            weights[idx] = 0.0;
        }
        picked
    }
}

fn sample_index(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    use rand::Rng;
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 && w > 0.0 {
            return i;
        }
    }
    weights
        .iter()
        .rposition(|&w| w > 0.0)
        .unwrap_or(weights.len() - 1)
}

/// A policy that proposes candidate actions with selection probabilities.
pub trait DecisionPolicy<E: Environment>: Sync {
    fn propose(
        &self,
        env: &E,
        state: &E::State,
        budget: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<ActionDistribution, PolicyError>;
}

/// Test/baseline fixture: uniform over the environment's candidates.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformPolicy;

impl<E: Environment> DecisionPolicy<E> for UniformPolicy {
    fn propose(
        &self,
        env: &E,
        state: &E::State,
        budget: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<ActionDistribution, PolicyError> {
        let actions = env.feasible_actions(state, budget, None, rng);
        if actions.is_empty() {
            return Err(PolicyError::EmptyCandidates);
        }
        let p = 1.0 / actions.len() as f64;
        Ok(ActionDistribution {
            probabilities: vec![p; actions.len()],
            actions,
        })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct TrussNet<F> {
    pub(crate) arch: TrussArch,
    pub(crate) conv: [Conv2d<F>; 3],
    pub(crate) fc: Linear<F>,
    pub(crate) spatial: Linear<F>,
    pub(crate) sel_main: [Linear<F>; 3],
    pub(crate) sel_aux: Linear<F>,
    pub(crate) head: [Linear<F>; 3],
}

impl<F: Scalar> TrussNet<F> {
    pub(crate) fn new(arch: TrussArch, rng: &mut ChaCha8Rng) -> Self {
        let [c1, c2, c3] = arch.channels;
        let conv = [
            Conv2d::new(rng, 3 + 2, c1, TRUSS_KERNELS[0], TRUSS_STRIDES[0], 1.0),
            Conv2d::new(rng, c1, c2, TRUSS_KERNELS[1], TRUSS_STRIDES[1], 1.0),
            Conv2d::new(rng, c2, c3, TRUSS_KERNELS[2], TRUSS_STRIDES[2], 1.0),
        ];
        let side = Self::encoded_side(&arch);
        let fc = Linear::new(rng, c3 * side * side, arch.latent, 1.0);
        let spatial = Linear::new(rng, arch.latent, arch.grid * arch.grid, OUTPUT_SCALE);
        let sel_main = [
            Linear::new(rng, TRUSS_FEAT, SEL_MAIN[0], 1.0),
            Linear::new(rng, SEL_MAIN[0], SEL_MAIN[1], 1.0),
            Linear::new(rng, SEL_MAIN[1], SEL_MAIN[2], 1.0),
        ];
        let sel_aux = Linear::new(rng, 1, SEL_AUX, 1.0);
        let head = [
            Linear::new(rng, arch.latent + SEL_MAIN[2] + SEL_AUX, SEL_HEAD[0], 1.0),
            Linear::new(rng, SEL_HEAD[0], SEL_HEAD[1], 1.0),
            Linear::new(rng, SEL_HEAD[1], 1, OUTPUT_SCALE),
        ];
        TrussNet {
            arch,
            conv,
            fc,
            spatial,
            sel_main,
            sel_aux,
            head,
        }
    }

    pub(crate) fn encoded_side(arch: &TrussArch) -> usize {
        let mut side = arch.image_size;
        for (k, s) in TRUSS_KERNELS.iter().zip(TRUSS_STRIDES) {
            side = (side - k) / s + 1;
        }
        side
    }

    /// Latent vector for a 3-channel CHW image (coord channels appended
    /// here).
    pub(crate) fn encode(&self, image: &Array3<F>) -> Array1<F> {
        let mut x = with_coord_channels(image);
        for conv in &self.conv {
            let (y, _) = conv.forward(&x);
            x = relu(&y);
        }
        let flat = Array1::from_iter(x.iter().cloned());
        relu(&self.fc.forward(&flat))
    }

    pub(crate) fn spatial_probs(&self, latent: &Array1<F>) -> Array1<F> {
        softmax(&self.spatial.forward(latent))
    }

    /// Action-feature embedding: the input to the head's action half.
    pub(crate) fn action_embed(&self, main: &Array1<F>, aux: &Array1<F>) -> Array1<F> {
        let mut m = main.clone();
        for layer in &self.sel_main {
            m = relu(&layer.forward(&m));
        }
        let a = relu(&self.sel_aux.forward(aux));
        concatenate![Axis(0), m, a]
    }

    /// Per-candidate score given precomputed halves of head layer 1.
    pub(crate) fn score_from_parts(&self, latent_part: &Array1<F>, action_part: &Array1<F>) -> F {
        let h1 = relu(&(latent_part + action_part));
        let h2 = relu(&self.head[1].forward(&h1));
        self.head[2].forward(&h2)[0]
    }

    /// Head layer 1 split: latent half (per state) + bias.
    pub(crate) fn head_latent_part(&self, latent: &Array1<F>) -> Array1<F> {
        self.head[0].w.slice(s![.., ..self.arch.latent]).dot(latent) + &self.head[0].b
    }

    /// Head layer 1 split: action half (cacheable per action).
    pub(crate) fn head_action_part(&self, embed: &Array1<F>) -> Array1<F> {
        self.head[0].w.slice(s![.., self.arch.latent..]).dot(embed)
    }

    pub(crate) fn param_count(&self) -> usize {
        self.conv.iter().map(Conv2d::param_count).sum::<usize>()
            + self.fc.param_count()
            + self.spatial.param_count()
            + self.sel_main.iter().map(Linear::param_count).sum::<usize>()
            + self.sel_aux.param_count()
            + self.head.iter().map(Linear::param_count).sum::<usize>()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct RouteNet<F> {
    pub(crate) arch: RouteArch,
    pub(crate) conv: [Conv2d<F>; 3],
    pub(crate) img_fc: Linear<F>,
    pub(crate) loc_fc: Linear<F>,
    pub(crate) comb_fc: Linear<F>,
    pub(crate) dir_head: Linear<F>,
    pub(crate) sel_dir: [Linear<F>; 3],
    pub(crate) sel_dist: Linear<F>,
    pub(crate) head: [Linear<F>; 3],
}

impl<F: Scalar> RouteNet<F> {
    pub(crate) fn new(arch: RouteArch, rng: &mut ChaCha8Rng) -> Self {
        let [c1, c2, c3] = arch.channels;
        let conv = [
            Conv2d::new(rng, 6 + 2, c1, ROUTE_KERNEL, 1, 1.0),
            Conv2d::new(rng, c1, c2, ROUTE_KERNEL, 1, 1.0),
            Conv2d::new(rng, c2, c3, ROUTE_KERNEL, 1, 1.0),
        ];
        let side = arch.grid - 3 * (ROUTE_KERNEL - 1);
        let img_fc = Linear::new(rng, c3 * side * side, arch.latent, 1.0);
        let loc_fc = Linear::new(rng, 12, LOC_EMBED, 1.0);
        let comb_fc = Linear::new(rng, arch.latent + LOC_EMBED + 1, arch.latent, 1.0);
        let dir_head = Linear::new(rng, arch.latent, 6, OUTPUT_SCALE);
        let sel_dir = [
            Linear::new(rng, ROUTE_FEAT, SEL_MAIN[0], 1.0),
            Linear::new(rng, SEL_MAIN[0], SEL_MAIN[1], 1.0),
            Linear::new(rng, SEL_MAIN[1], SEL_MAIN[2], 1.0),
        ];
        let sel_dist = Linear::new(rng, 1, SEL_AUX, 1.0);
        let head = [
            Linear::new(rng, arch.latent + SEL_MAIN[2] + SEL_AUX, SEL_HEAD[0], 1.0),
            Linear::new(rng, SEL_HEAD[0], SEL_HEAD[1], 1.0),
            Linear::new(rng, SEL_HEAD[1], 1, OUTPUT_SCALE),
        ];
        RouteNet {
            arch,
            conv,
            img_fc,
            loc_fc,
            comb_fc,
            dir_head,
            sel_dir,
            sel_dist,
            head,
        }
    }

    pub(crate) fn encode(&self, capacity: &Array3<F>, loc: &Array1<F>, progress: F) -> Array1<F> {
        let mut x = with_coord_channels(capacity);
        for conv in &self.conv {
            let (y, _) = conv.forward(&x);
            x = relu(&y);
        }
        let flat = Array1::from_iter(x.iter().cloned());
        let img = relu(&self.img_fc.forward(&flat));
        let loc_embed = relu(&self.loc_fc.forward(loc));
        let joined = concatenate![Axis(0), img, loc_embed, ndarray::arr1(&[progress])];
        relu(&self.comb_fc.forward(&joined))
    }

    pub(crate) fn dir_probs(&self, latent: &Array1<F>) -> Array1<F> {
        softmax(&self.dir_head.forward(latent))
    }

    pub(crate) fn action_embed(&self, dir_onehot: &Array1<F>, dist: &Array1<F>) -> Array1<F> {
        let mut d = dir_onehot.clone();
        for layer in &self.sel_dir {
            d = relu(&layer.forward(&d));
        }
        let s = relu(&self.sel_dist.forward(dist));
        concatenate![Axis(0), d, s]
    }

    pub(crate) fn score_from_parts(&self, latent_part: &Array1<F>, action_part: &Array1<F>) -> F {
        let h1 = relu(&(latent_part + action_part));
        let h2 = relu(&self.head[1].forward(&h1));
        self.head[2].forward(&h2)[0]
    }

    pub(crate) fn head_latent_part(&self, latent: &Array1<F>) -> Array1<F> {
        self.head[0].w.slice(s![.., ..self.arch.latent]).dot(latent) + &self.head[0].b
    }

    pub(crate) fn head_action_part(&self, embed: &Array1<F>) -> Array1<F> {
        self.head[0].w.slice(s![.., self.arch.latent..]).dot(embed)
    }

    pub(crate) fn param_count(&self) -> usize {
        self.conv.iter().map(Conv2d::param_count).sum::<usize>()
            + self.img_fc.param_count()
            + self.loc_fc.param_count()
            + self.comb_fc.param_count()
            + self.dir_head.param_count()
            + self.sel_dir.iter().map(Linear::param_count).sum::<usize>()
            + self.sel_dist.param_count()
            + self.head.iter().map(Linear::param_count).sum::<usize>()
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Net {
    Truss(TrussNet<f32>),
    Route(RouteNet<f32>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum CacheKey {
    Truss { class: u8, q: [i64; 4], level: u32 },
    Route { dir: u8, dist: u8 },
}

/// Trainable policy model with a fixed architecture descriptor.
#[derive(Debug)]
pub struct PolicyModel {
    pub descriptor: ArchDescriptor,
    pub(crate) net: Net,
    cache: Mutex<HashMap<CacheKey, Array1<f32>>>,
}

impl Clone for PolicyModel {
    fn clone(&self) -> Self {
        PolicyModel {
            descriptor: self.descriptor.clone(),
            net: self.net.clone(),
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl PolicyModel {
    /// Fresh random initialization; a valid near-uniform policy.
    pub fn new_random(descriptor: ArchDescriptor, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = match &descriptor {
            ArchDescriptor::Truss(arch) => Net::Truss(TrussNet::new(arch.clone(), &mut rng)),
            ArchDescriptor::Route(arch) => Net::Route(RouteNet::new(arch.clone(), &mut rng)),
        };
        PolicyModel {
            descriptor,
            net,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn environment_tag(&self) -> &'static str {
        self.descriptor.environment_tag()
    }

    pub fn ensure_environment(&self, tag: &str) -> Result<(), PolicyError> {
        if self.environment_tag() != tag {
            return Err(PolicyError::EnvironmentMismatch {
                expected: self.environment_tag().to_string(),
                found: tag.to_string(),
            });
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        match &self.net {
            Net::Truss(n) => n.param_count(),
            Net::Route(n) => n.param_count(),
        }
    }

    /// Invalidate cached selection parts (call after weight updates).
    pub(crate) fn clear_cache(&self) {
        self.cache.lock().expect("cache lock").clear();
    }

    fn cached_action_part(
        &self,
        key: CacheKey,
        compute: impl FnOnce() -> Array1<f32>,
    ) -> Array1<f32> {
        let mut cache = self.cache.lock().expect("cache lock");
        cache.entry(key).or_insert_with(compute).clone()
    }

    /// Spatial add-node prior over the design grid (truss models only).
    pub fn spatial_prior(
        &self,
        env: &TrussEnv,
        state: &TrussState,
    ) -> Result<SpatialDensity, PolicyError> {
        let Net::Truss(net) = &self.net else {
            return Err(PolicyError::EnvironmentMismatch {
                expected: self.environment_tag().to_string(),
                found: env.tag().to_string(),
            });
        };
        let image = truss_policy_image(env, state, net.arch.image_size);
        let latent = net.encode(&image);
        Ok(spatial_density_from_probs(
            net.arch.grid,
            &net.spatial_probs(&latent),
        ))
    }

    /// Scores `candidates` for a truss state; infeasible ones are masked.
    pub fn truss_distribution(
        &self,
        env: &TrussEnv,
        state: &TrussState,
        candidates: Vec<ComplexAction>,
    ) -> Result<ActionDistribution, PolicyError> {
        let Net::Truss(net) = &self.net else {
            return Err(PolicyError::EnvironmentMismatch {
                expected: self.environment_tag().to_string(),
                found: env.tag().to_string(),
            });
        };
        if candidates.is_empty() {
            return Err(PolicyError::EmptyCandidates);
        }
        let image = truss_policy_image(env, state, net.arch.image_size);
        let latent = net.encode(&image);
        self.truss_scores(net, env, state, &latent, candidates)
    }

    fn truss_scores(
        &self,
        net: &TrussNet<f32>,
        env: &TrussEnv,
        state: &TrussState,
        latent: &Array1<f32>,
        candidates: Vec<ComplexAction>,
    ) -> Result<ActionDistribution, PolicyError> {
        let latent_part = net.head_latent_part(latent);
        let mut logits = Array1::zeros(candidates.len());
        let mut keep = vec![false; candidates.len()];
        for (i, action) in candidates.iter().enumerate() {
            let key = truss_action_key(env, state, action);
            let part = self.cached_action_part(key, || {
                let (main, aux) = truss_action_features(env, state, action);
                net.head_action_part(&net.action_embed(&main, &aux))
            });
            logits[i] = net.score_from_parts(&latent_part, &part);
            keep[i] = env.action_feasible(state, action);
        }
        finish_distribution(candidates, &logits, &keep)
    }

    pub fn route_distribution(
        &self,
        env: &RouteEnv,
        state: &RouteState,
        candidates: Vec<ComplexAction>,
    ) -> Result<ActionDistribution, PolicyError> {
        let Net::Route(net) = &self.net else {
            return Err(PolicyError::EnvironmentMismatch {
                expected: self.environment_tag().to_string(),
                found: env.tag().to_string(),
            });
        };
        if candidates.is_empty() {
            return Err(PolicyError::EmptyCandidates);
        }
        let (capacity, loc, progress) = route_policy_inputs(state);
        let latent = net.encode(&capacity, &loc, progress);
        let latent_part = net.head_latent_part(&latent);
        let mut logits = Array1::zeros(candidates.len());
        let mut keep = vec![false; candidates.len()];
        for (i, action) in candidates.iter().enumerate() {
            let (dir, dist) = (action.discrete[0], action.discrete[1]);
            let key = CacheKey::Route {
                dir: dir as u8,
                dist: dist as u8,
            };
            let part = self.cached_action_part(key, || {
                let (onehot, dist_norm) = route_action_features(action, net.arch.grid);
                net.head_action_part(&net.action_embed(&onehot, &dist_norm))
            });
            logits[i] = net.score_from_parts(&latent_part, &part);
            keep[i] = env.action_feasible(state, action);
        }
        finish_distribution(candidates, &logits, &keep)
    }

    /// Direction-head probabilities (route models only); auxiliary output.
    pub fn direction_probs(&self, state: &RouteState) -> Result<[f64; 6], PolicyError> {
        let Net::Route(net) = &self.net else {
            return Err(PolicyError::EnvironmentMismatch {
                expected: self.environment_tag().to_string(),
                found: "route".to_string(),
            });
        };
        let (capacity, loc, progress) = route_policy_inputs(state);
        let latent = net.encode(&capacity, &loc, progress);
        let p = net.dir_probs(&latent);
        let mut out = [0.0; 6];
        for i in 0..6 {
            out[i] = p[i] as f64;
        }
        Ok(out)
    }
}

fn finish_distribution(
    actions: Vec<ComplexAction>,
    logits: &Array1<f32>,
    keep: &[bool],
) -> Result<ActionDistribution, PolicyError> {
    if !keep.iter().any(|&k| k) {
        return Err(PolicyError::EmptyCandidates);
    }
    let probs = masked_softmax(logits, keep);
    Ok(ActionDistribution {
        actions,
        probabilities: probs.iter().map(|&p| p as f64).collect(),
    })
}

fn spatial_density_from_probs(g: usize, probs: &Array1<f32>) -> SpatialDensity {
    SpatialDensity::new(g, probs.iter().map(|&p| p as f64).collect())
}

impl DecisionPolicy<TrussEnv> for PolicyModel {
    fn propose(
        &self,
        env: &TrussEnv,
        state: &TrussState,
        budget: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<ActionDistribution, PolicyError> {
        let Net::Truss(net) = &self.net else {
            return Err(PolicyError::EnvironmentMismatch {
                expected: self.environment_tag().to_string(),
                found: env.tag().to_string(),
            });
        };
        // One encoder pass serves both the spatial prior and the scores.
        let image = truss_policy_image(env, state, net.arch.image_size);
        let latent = net.encode(&image);
        let prior = spatial_density_from_probs(net.arch.grid, &net.spatial_probs(&latent));
        let candidates = env.feasible_actions(state, budget, Some(&prior), rng);
        if candidates.is_empty() {
            return Err(PolicyError::EmptyCandidates);
        }
        self.truss_scores(net, env, state, &latent, candidates)
    }
}

impl DecisionPolicy<RouteEnv> for PolicyModel {
    fn propose(
        &self,
        env: &RouteEnv,
        state: &RouteState,
        budget: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<ActionDistribution, PolicyError> {
        let candidates = env.feasible_actions(state, budget, None, rng);
        if candidates.is_empty() {
            return Err(PolicyError::EmptyCandidates);
        }
        self.route_distribution(env, state, candidates)
    }
}

/// Downsampled CHW policy view of a truss state.
pub fn truss_policy_image(env: &TrussEnv, state: &TrussState, image_size: usize) -> Array3<f32> {
    let rendered = render::render_truss(env, state, render::RENDER_SIZE);
    assert!(
        render::RENDER_SIZE % image_size == 0,
        "policy image size must divide {}",
        render::RENDER_SIZE
    );
    let small = render::box_downsample(&rendered, render::RENDER_SIZE / image_size);
    let (h, w, c) = small.dim();
    let mut chw = Array3::zeros((c, h, w));
    for ch in 0..c {
        for row in 0..h {
            for col in 0..w {
                chw[(ch, row, col)] = small[(row, col, ch)];
            }
        }
    }
    chw
}

/// Selection features for a truss action: one-hot class plus normalized
/// geometry in a 7-vector, and an auxiliary scalar (member length fraction
/// or resulting thickness level / 10).
pub fn truss_action_features(
    env: &TrussEnv,
    state: &TrussState,
    action: &ComplexAction,
) -> (Array1<f32>, Array1<f32>) {
    let domain = env.domain();
    let diag = (domain.width.powi(2) + domain.height.powi(2)).sqrt();
    let mut main = [0.0f32; TRUSS_FEAT];
    main[action.class_id as usize] = 1.0;
    let mut aux = 0.0f32;
    match action.class_id {
        crate::truss::CLASS_ADD_NODE => {
            main[3] = (action.continuous[0] / domain.width) as f32;
            main[4] = (action.continuous[1] / domain.height) as f32;
        }
        crate::truss::CLASS_ADD_MEMBER => {
            let a = &state.nodes[action.discrete[0] as usize];
            let b = &state.nodes[action.discrete[1] as usize];
            main[3] = (a.x / domain.width) as f32;
            main[4] = (a.y / domain.height) as f32;
            main[5] = (b.x / domain.width) as f32;
            main[6] = (b.y / domain.height) as f32;
            aux = (((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).sqrt() / diag) as f32;
        }
        crate::truss::CLASS_INCREASE_THICKNESS => {
            let member = &state.members[action.discrete[0] as usize];
            let a = &state.nodes[member.a as usize];
            let b = &state.nodes[member.b as usize];
            main[3] = (a.x / domain.width) as f32;
            main[4] = (a.y / domain.height) as f32;
            main[5] = (b.x / domain.width) as f32;
            main[6] = (b.y / domain.height) as f32;
            aux = (member.thickness_level + 1) as f32 / 10.0;
        }
        _ => {}
    }
    (Array1::from_iter(main), ndarray::arr1(&[aux]))
}

fn truss_action_key(env: &TrussEnv, state: &TrussState, action: &ComplexAction) -> CacheKey {
    let snap = env.domain().snap;
    let latt = |v: f64| (v / snap).round() as i64;
    let q = match action.class_id {
        crate::truss::CLASS_ADD_NODE => {
            [latt(action.continuous[0]), latt(action.continuous[1]), 0, 0]
        }
        crate::truss::CLASS_ADD_MEMBER => {
            let a = &state.nodes[action.discrete[0] as usize];
            let b = &state.nodes[action.discrete[1] as usize];
            [latt(a.x), latt(a.y), latt(b.x), latt(b.y)]
        }
        crate::truss::CLASS_INCREASE_THICKNESS => {
            let member = &state.members[action.discrete[0] as usize];
            let a = &state.nodes[member.a as usize];
            let b = &state.nodes[member.b as usize];
            [latt(a.x), latt(a.y), latt(b.x), latt(b.y)]
        }
        _ => [0; 4],
    };
    let level = match action.class_id {
        crate::truss::CLASS_INCREASE_THICKNESS => {
            state.members[action.discrete[0] as usize].thickness_level + 1
        }
        _ => 0,
    };
    CacheKey::Truss {
        class: action.class_id,
        q,
        level,
    }
}

/// Direction one-hot and normalized distance for a route move.
pub fn route_action_features(action: &ComplexAction, grid: usize) -> (Array1<f32>, Array1<f32>) {
    let mut onehot = [0.0f32; ROUTE_FEAT];
    onehot[action.discrete[0] as usize] = 1.0;
    let dist = action.discrete[1] as f32 / (grid - 1).max(1) as f32;
    (Array1::from_iter(onehot), ndarray::arr1(&[dist]))
}

/// Normalized encoder inputs for a route state.
pub fn route_policy_inputs(state: &RouteState) -> (Array3<f32>, Array1<f32>, f32) {
    let capacity = route::encode_capacity_image(state);
    let raw = route::encode_location(state);
    let g = state.problem.grid_size as f32;
    let cap = state.problem.capacity as f32;
    let mut loc = [0.0f32; 12];
    for i in 0..6 {
        loc[i] = raw[i] / g;
    }
    for i in 6..12 {
        loc[i] = raw[i] / cap;
    }
    (capacity, Array1::from_iter(loc), state.progress() as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Environment;
    use crate::route::{generate_problem, RouteEnv};
    use rand::SeedableRng;

    fn truss_model() -> (TrussEnv, PolicyModel) {
        let env = TrussEnv::from_name("middle-basic").unwrap();
        let arch = TrussArch {
            image_size: 32,
            channels: [4, 8, 8],
            latent: 32,
            grid: 16,
        };
        (env, PolicyModel::new_random(ArchDescriptor::Truss(arch), 7))
    }

    fn route_model() -> (RouteEnv, PolicyModel) {
        let problem = generate_problem(8, 2, 5, 10, 3).unwrap();
        let env = RouteEnv::new(problem).unwrap();
        let arch = RouteArch {
            grid: 8,
            channels: [4, 8, 8],
            latent: 64,
        };
        (env, PolicyModel::new_random(ArchDescriptor::Route(arch), 8))
    }

    #[test]
    fn fresh_truss_policy_is_near_uniform() {
        let (env, model) = truss_model();
        let state = env.initial_state();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dist = model.propose(&env, &state, 10, &mut rng).unwrap();
        let n = dist.len() as f64;
        assert!(n >= 5.0);
        let sum: f64 = dist.probabilities.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        assert!(
            dist.entropy() >= 0.9 * n.ln(),
            "entropy {} vs ln(n) {}",
            dist.entropy(),
            n.ln()
        );
        // Not exactly uniform: some spread must exist.
        let min = dist
            .probabilities
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let max = dist.probabilities.iter().cloned().fold(0.0, f64::max);
        assert!(max > min);
    }

    #[test]
    fn distribution_is_exactly_permutation_equivariant() {
        let (env, model) = route_model();
        let state = env.initial_state();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let candidates = env.feasible_actions(&state, 64, None, &mut rng);
        let dist = model
            .route_distribution(&env, &state, candidates.clone())
            .unwrap();

        let mut perm: Vec<usize> = (0..candidates.len()).collect();
        perm.reverse();
        perm.swap(0, candidates.len() / 2);
        let shuffled: Vec<_> = perm.iter().map(|&i| candidates[i].clone()).collect();
        let dist2 = model.route_distribution(&env, &state, shuffled).unwrap();
        for (new_idx, &old_idx) in perm.iter().enumerate() {
            assert_eq!(
                dist2.probabilities[new_idx].to_bits(),
                dist.probabilities[old_idx].to_bits(),
                "probability changed under permutation"
            );
        }
    }

    #[test]
    fn infeasible_candidates_are_masked() {
        let (env, model) = truss_model();
        let state = env.initial_state();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut candidates = env.feasible_actions(&state, 4, None, &mut rng);
        let n_feasible = candidates.len();
        // Inside minimum spacing of the first support: infeasible.
        candidates.push(ComplexAction::continuous(
            crate::truss::CLASS_ADD_NODE,
            vec![1.05, 1.0],
        ));
        let dist = model.truss_distribution(&env, &state, candidates).unwrap();
        assert!(dist.probabilities[n_feasible] < 1e-12);
        assert!((dist.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_candidates_are_an_error() {
        let (env, model) = truss_model();
        let state = env.initial_state();
        assert!(matches!(
            model.truss_distribution(&env, &state, Vec::new()),
            Err(PolicyError::EmptyCandidates)
        ));
    }

    #[test]
    fn environment_mismatch_is_detected() {
        let (_, truss_model) = truss_model();
        let (route_env, _) = route_model();
        let state = route_env.initial_state();
        let candidates = vec![ComplexAction::discrete(
            crate::route::CLASS_MOVE,
            vec![0, 1],
        )];
        assert!(matches!(
            truss_model.route_distribution(&route_env, &state, candidates),
            Err(PolicyError::EnvironmentMismatch { .. })
        ));
        assert!(truss_model.ensure_environment("route").is_err());
        assert!(truss_model.ensure_environment("truss").is_ok());
    }

    #[test]
    fn spatial_prior_normalizes_and_is_deterministic() {
        let (env, model) = truss_model();
        let state = env.initial_state();
        let a = model.spatial_prior(&env, &state).unwrap();
        let b = model.spatial_prior(&env, &state).unwrap();
        assert_eq!(a.weights, b.weights);
        let sum: f64 = a.weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert_eq!(a.weights.len(), 256);
        // Near-uniform at init.
        let max = a.weights.iter().cloned().fold(0.0, f64::max);
        assert!(max < 2.0 / 256.0, "prior too peaked at init: {max}");
    }

    #[test]
    fn cache_does_not_change_scores() {
        let (env, model) = route_model();
        let state = env.initial_state();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let candidates = env.feasible_actions(&state, 64, None, &mut rng);
        let cold = model
            .route_distribution(&env, &state, candidates.clone())
            .unwrap();
        let warm = model.route_distribution(&env, &state, candidates).unwrap();
        assert_eq!(cold, warm);

        let fresh = model.clone();
        let no_cache = fresh
            .route_distribution(&env, &state, cold.actions.clone())
            .unwrap();
        assert_eq!(no_cache.probabilities, cold.probabilities);
    }

    #[test]
    fn sample_distinct_draws_unique_indices() {
        let dist = ActionDistribution {
            actions: (0..6)
                .map(|i| ComplexAction::discrete(crate::route::CLASS_MOVE, vec![i, 1]))
                .collect(),
            probabilities: vec![0.5, 0.2, 0.1, 0.1, 0.05, 0.05],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let picks = dist.sample_distinct(4, &mut rng);
        assert_eq!(picks.len(), 4);
        let mut sorted = picks.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 4);

        // Zero-probability candidates are never drawn.
        let masked = ActionDistribution {
            actions: dist.actions.clone(),
            probabilities: vec![0.0, 0.6, 0.0, 0.4, 0.0, 0.0],
        };
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let picks = masked.sample_distinct(6, &mut rng);
            assert_eq!(picks.len(), 2);
            assert!(picks.contains(&1) && picks.contains(&3));
        }
    }

    #[test]
    fn uniform_policy_is_uniform() {
        let (env, _) = truss_model();
        let state = env.initial_state();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dist = UniformPolicy.propose(&env, &state, 6, &mut rng).unwrap();
        let p0 = dist.probabilities[0];
        assert!(dist.probabilities.iter().all(|&p| (p - p0).abs() < 1e-15));
    }

    #[test]
    fn route_proposals_cover_enumeration() {
        let (env, model) = route_model();
        let state = env.initial_state();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let expected = env.feasible_actions(&state, 64, None, &mut rng);
        let dist = model.propose(&env, &state, 64, &mut rng).unwrap();
        assert_eq!(dist.actions, expected);
    }
}
