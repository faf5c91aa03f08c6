//! Supervised imitation training of the policy on search-generated data.
//!
//! Every trajectory step becomes one sample: the state, a candidate list
//! (regenerated from the environment with a seeded stream and guaranteed to
//! contain the chosen action), and the chosen index as the cross-entropy
//! target. Truss add-node steps additionally supervise the spatial prior
//! with squared error against the chosen grid cell; route steps supervise
//! the direction head with cross-entropy. Optimization is plain SGD with
//! momentum over shuffled mini-batches; gradients from the two losses are
//! accumulated per sample and averaged per batch.

use ndarray::{concatenate, s, Array1, Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{derive_seed, Dataset, Environment};
use crate::policy::nn::{relu, relu_backward, softmax, softmax_ce_backward, Scalar};
use crate::policy::{
    route_action_features, route_policy_inputs, truss_action_features, truss_policy_image, Net,
    PolicyError, PolicyModel, RouteNet, TrussNet,
};
use crate::route::{RouteEnv, RouteState};
use crate::truss::{TrussEnv, TrussState, CLASS_ADD_NODE};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset contains no decisions")]
    EmptyDataset,
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Train fraction of the train/test split.
    pub split: f64,
    pub selection_weight: f64,
    pub auxiliary_weight: f64,
    /// Candidate budget used when regenerating each sample's action set.
    pub candidate_budget: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            momentum: 0.9,
            split: 0.9,
            selection_weight: 1.0,
            auxiliary_weight: 1.0,
            candidate_budget: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_samples: usize,
    pub test_samples: usize,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
    /// Held-out top-1 accuracy of final-action prediction.
    pub test_accuracy: f64,
    /// Mean of 1/|candidates| over the held-out set.
    pub random_guess_accuracy: f64,
}

/// One prepared decision: candidate features plus supervision targets.
#[derive(Debug, Clone)]
pub(crate) struct TrussSample<F> {
    pub image: Array3<F>,
    pub main_feats: Array2<F>,
    pub aux_feats: Array2<F>,
    pub target: usize,
    pub spatial_cell: Option<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct RouteSample<F> {
    pub capacity: Array3<F>,
    pub loc: Array1<F>,
    pub progress: F,
    pub dir_feats: Array2<F>,
    pub dist_feats: Array2<F>,
    pub target: usize,
    pub target_dir: usize,
}

fn stack_rows<F: Scalar>(rows: Vec<Array1<F>>) -> Array2<F> {
    let cols = rows[0].len();
    let mut out = Array2::zeros((rows.len(), cols));
    for (i, row) in rows.into_iter().enumerate() {
        out.row_mut(i).assign(&row);
    }
    out
}

fn prepare_truss_samples(
    env: &TrussEnv,
    dataset: &Dataset<TrussState>,
    image_size: usize,
    grid: usize,
    budget: usize,
    seed: u64,
) -> Vec<TrussSample<f32>> {
    let mut samples = Vec::with_capacity(dataset.decision_count());
    let mut counter = 0u64;
    for trajectory in &dataset.trajectories {
        for step in &trajectory.steps {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xCA4D, counter));
            counter += 1;
            let mut candidates = env.feasible_actions(&step.state, budget, None, &mut rng);
            let target = match candidates.iter().position(|c| c == &step.action) {
                Some(i) => i,
                None => {
                    candidates.insert(0, step.action.clone());
                    0
                }
            };
            let mut mains = Vec::with_capacity(candidates.len());
            let mut auxes = Vec::with_capacity(candidates.len());
            for c in &candidates {
                let (m, a) = truss_action_features(env, &step.state, c);
                mains.push(m);
                auxes.push(a);
            }
            let spatial_cell = (step.action.class_id == CLASS_ADD_NODE).then(|| {
                env.density_cell(step.action.continuous[0], step.action.continuous[1], grid)
            });
            samples.push(TrussSample {
                image: truss_policy_image(env, &step.state, image_size),
                main_feats: stack_rows(mains),
                aux_feats: stack_rows(auxes),
                target,
                spatial_cell,
            });
        }
    }
    samples
}

fn prepare_route_samples(
    env: &RouteEnv,
    dataset: &Dataset<RouteState>,
    grid: usize,
    budget: usize,
) -> Vec<RouteSample<f32>> {
    let mut samples = Vec::with_capacity(dataset.decision_count());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for trajectory in &dataset.trajectories {
        // States carry their own problem; enumerate against it so datasets
        // may mix trajectories from several problems.
        let traj_env = trajectory
            .steps
            .first()
            .and_then(|s| RouteEnv::new((*s.state.problem).clone()).ok())
            .unwrap_or_else(|| env.clone());
        for step in &trajectory.steps {
            let mut candidates = traj_env.feasible_actions(&step.state, budget, None, &mut rng);
            let target = match candidates.iter().position(|c| c == &step.action) {
                Some(i) => i,
                None => {
                    candidates.insert(0, step.action.clone());
                    0
                }
            };
            let mut dirs = Vec::with_capacity(candidates.len());
            let mut dists = Vec::with_capacity(candidates.len());
            for c in &candidates {
                let (d, s) = route_action_features(c, grid);
                dirs.push(d);
                dists.push(s);
            }
            let (capacity, loc, progress) = route_policy_inputs(&step.state);
            samples.push(RouteSample {
                capacity,
                loc,
                progress,
                dir_feats: stack_rows(dirs),
                dist_feats: stack_rows(dists),
                target,
                target_dir: step.action.discrete[0] as usize,
            });
        }
    }
    samples
}

fn safe_ln<F: Scalar>(p: F) -> f64 {
    p.max(F::from_f64(1e-30)).ln().to_f64()
}

/// Forward + backward for one truss sample; returns the weighted loss and
/// the predicted candidate. Gradients accumulate into the layers when
/// `learn` is set.
pub(crate) fn truss_sample_step<F: Scalar>(
    net: &mut TrussNet<F>,
    sample: &TrussSample<F>,
    w_sel: F,
    w_aux: F,
    learn: bool,
) -> (f64, usize) {
    let latent_dim = net.arch.latent;
    let x0 = crate::policy::nn::with_coord_channels(&sample.image);
    let (z1, p1) = net.conv[0].forward(&x0);
    let a1 = relu(&z1);
    let (z2, p2) = net.conv[1].forward(&a1);
    let a2 = relu(&z2);
    let (z3, p3) = net.conv[2].forward(&a2);
    let a3 = relu(&z3);
    let flat = Array1::from_iter(a3.iter().cloned());
    let zl = net.fc.forward(&flat);
    let latent = relu(&zl);

    // Selection head over all candidates as rows; the latent is broadcast
    // into each row so the batched path matches the split-head inference.
    let n = sample.main_feats.dim().0;
    let m1 = relu(&net.sel_main[0].forward_batch(&sample.main_feats));
    let m2 = relu(&net.sel_main[1].forward_batch(&m1));
    let m3 = relu(&net.sel_main[2].forward_batch(&m2));
    let au = relu(&net.sel_aux.forward_batch(&sample.aux_feats));
    let mid = m3.dim().1;
    let mut h0 = Array2::zeros((n, latent_dim + mid + au.dim().1));
    for mut row in h0.axis_iter_mut(Axis(0)) {
        row.slice_mut(s![..latent_dim]).assign(&latent);
    }
    h0.slice_mut(s![.., latent_dim..latent_dim + mid])
        .assign(&m3);
    h0.slice_mut(s![.., latent_dim + mid..]).assign(&au);
    let h1 = relu(&net.head[0].forward_batch(&h0));
    let h2 = relu(&net.head[1].forward_batch(&h1));
    let logits_2d = net.head[2].forward_batch(&h2);
    let logits = Array1::from_iter(logits_2d.column(0).iter().cloned());
    let probs = softmax(&logits);
    let predicted = argmax(&probs);
    let sel_loss = -safe_ln(probs[sample.target]);

    // Spatial prior: squared error against the chosen cell, averaged over
    // cells, on add-node steps only.
    let (spatial_loss, spatial_grad) = match sample.spatial_cell {
        Some(cell) => {
            let zs = net.spatial.forward(&latent);
            let ps = softmax(&zs);
            let cells = F::from_f64(ps.len() as f64);
            let mut diff = ps.clone();
            diff[cell] = diff[cell] - F::one();
            let loss = diff.mapv(|v| v * v).sum() / cells;
            let dl_dp = diff.mapv(|v| F::from_f64(2.0) * v / cells);
            let dot = (&dl_dp * &ps).sum();
            let dzs = &ps * &(dl_dp - dot);
            (loss.to_f64(), Some(dzs))
        }
        None => (0.0, None),
    };
    let total = w_sel.to_f64() * sel_loss + w_aux.to_f64() * spatial_loss;
    if !learn {
        return (total, predicted);
    }

    let dlogits = softmax_ce_backward(&probs, sample.target).mapv(|v| v * w_sel);
    let mut dlogits_2d = Array2::zeros((n, 1));
    dlogits_2d.column_mut(0).assign(&dlogits);
    let dh2 = relu_backward(&h2, &net.head[2].backward_batch(&h2, &dlogits_2d));
    let dh1 = relu_backward(&h1, &net.head[1].backward_batch(&h1, &dh2));
    let dh0 = net.head[0].backward_batch(&h0, &dh1);
    let mut dlatent: Array1<F> = dh0.slice(s![.., ..latent_dim]).sum_axis(Axis(0));
    let dm3 = relu_backward(
        &m3,
        &dh0.slice(s![.., latent_dim..latent_dim + mid]).to_owned(),
    );
    let dau = relu_backward(&au, &dh0.slice(s![.., latent_dim + mid..]).to_owned());
    let dm2 = relu_backward(&m2, &net.sel_main[2].backward_batch(&m2, &dm3));
    let dm1 = relu_backward(&m1, &net.sel_main[1].backward_batch(&m1, &dm2));
    net.sel_main[0].backward_batch(&sample.main_feats, &dm1);
    net.sel_aux.backward_batch(&sample.aux_feats, &dau);

    if let Some(dzs) = spatial_grad {
        dlatent += &net.spatial.backward(&latent, &dzs.mapv(|v| v * w_aux));
    }

    let dzl = relu_backward(&latent, &dlatent);
    let dflat = net.fc.backward(&flat, &dzl);
    let da3 = dflat
        .into_shape_with_order(a3.dim())
        .expect("flatten round-trip");
    let dz3 = relu_backward(&a3, &da3);
    let da2 = net.conv[2].backward(&p3, (a2.dim().1, a2.dim().2), &dz3);
    let dz2 = relu_backward(&a2, &da2);
    let da1 = net.conv[1].backward(&p2, (a1.dim().1, a1.dim().2), &dz2);
    let dz1 = relu_backward(&a1, &da1);
    net.conv[0].backward(&p1, (x0.dim().1, x0.dim().2), &dz1);
    (total, predicted)
}

/// Forward + backward for one route sample.
pub(crate) fn route_sample_step<F: Scalar>(
    net: &mut RouteNet<F>,
    sample: &RouteSample<F>,
    w_sel: F,
    w_aux: F,
    learn: bool,
) -> (f64, usize) {
    let latent_dim = net.arch.latent;
    let x0 = crate::policy::nn::with_coord_channels(&sample.capacity);
    let (z1, p1) = net.conv[0].forward(&x0);
    let a1 = relu(&z1);
    let (z2, p2) = net.conv[1].forward(&a1);
    let a2 = relu(&z2);
    let (z3, p3) = net.conv[2].forward(&a2);
    let a3 = relu(&z3);
    let flat = Array1::from_iter(a3.iter().cloned());
    let zi = net.img_fc.forward(&flat);
    let img = relu(&zi);
    let zo = net.loc_fc.forward(&sample.loc);
    let loc = relu(&zo);
    let joined = concatenate![Axis(0), img, loc, ndarray::arr1(&[sample.progress])];
    let zc = net.comb_fc.forward(&joined);
    let latent = relu(&zc);

    let n = sample.dir_feats.dim().0;
    let m1 = relu(&net.sel_dir[0].forward_batch(&sample.dir_feats));
    let m2 = relu(&net.sel_dir[1].forward_batch(&m1));
    let m3 = relu(&net.sel_dir[2].forward_batch(&m2));
    let au = relu(&net.sel_dist.forward_batch(&sample.dist_feats));
    let mid = m3.dim().1;
    let mut h0 = Array2::zeros((n, latent_dim + mid + au.dim().1));
    for mut row in h0.axis_iter_mut(Axis(0)) {
        row.slice_mut(s![..latent_dim]).assign(&latent);
    }
    h0.slice_mut(s![.., latent_dim..latent_dim + mid])
        .assign(&m3);
    h0.slice_mut(s![.., latent_dim + mid..]).assign(&au);
    let h1 = relu(&net.head[0].forward_batch(&h0));
    let h2 = relu(&net.head[1].forward_batch(&h1));
    let logits_2d = net.head[2].forward_batch(&h2);
    let logits = Array1::from_iter(logits_2d.column(0).iter().cloned());
    let probs = softmax(&logits);
    let predicted = argmax(&probs);
    let sel_loss = -safe_ln(probs[sample.target]);

    let zd = net.dir_head.forward(&latent);
    let pd = softmax(&zd);
    let dir_loss = -safe_ln(pd[sample.target_dir]);

    let total = w_sel.to_f64() * sel_loss + w_aux.to_f64() * dir_loss;
    if !learn {
        return (total, predicted);
    }

    let dlogits = softmax_ce_backward(&probs, sample.target).mapv(|v| v * w_sel);
    let mut dlogits_2d = Array2::zeros((n, 1));
    dlogits_2d.column_mut(0).assign(&dlogits);
    let dh2 = relu_backward(&h2, &net.head[2].backward_batch(&h2, &dlogits_2d));
    let dh1 = relu_backward(&h1, &net.head[1].backward_batch(&h1, &dh2));
    let dh0 = net.head[0].backward_batch(&h0, &dh1);
    let mut dlatent: Array1<F> = dh0.slice(s![.., ..latent_dim]).sum_axis(Axis(0));
    let dm3 = relu_backward(
        &m3,
        &dh0.slice(s![.., latent_dim..latent_dim + mid]).to_owned(),
    );
    let dau = relu_backward(&au, &dh0.slice(s![.., latent_dim + mid..]).to_owned());
    let dm2 = relu_backward(&m2, &net.sel_dir[2].backward_batch(&m2, &dm3));
    let dm1 = relu_backward(&m1, &net.sel_dir[1].backward_batch(&m1, &dm2));
    net.sel_dir[0].backward_batch(&sample.dir_feats, &dm1);
    net.sel_dist.backward_batch(&sample.dist_feats, &dau);

    let dzd = softmax_ce_backward(&pd, sample.target_dir).mapv(|v| v * w_aux);
    dlatent += &net.dir_head.backward(&latent, &dzd);

    let dzc = relu_backward(&latent, &dlatent);
    let djoined = net.comb_fc.backward(&joined, &dzc);
    let dimg = relu_backward(&img, &djoined.slice(s![..latent_dim]).to_owned());
    let dloc = relu_backward(
        &loc,
        &djoined
            .slice(s![latent_dim..latent_dim + loc.len()])
            .to_owned(),
    );
    net.loc_fc.backward(&sample.loc, &dloc);
    let dflat = net.img_fc.backward(&flat, &dimg);
    let da3 = dflat
        .into_shape_with_order(a3.dim())
        .expect("flatten round-trip");
    let dz3 = relu_backward(&a3, &da3);
    let da2 = net.conv[2].backward(&p3, (a2.dim().1, a2.dim().2), &dz3);
    let dz2 = relu_backward(&a2, &da2);
    let da1 = net.conv[1].backward(&p2, (a1.dim().1, a1.dim().2), &dz2);
    let dz1 = relu_backward(&a1, &da1);
    net.conv[0].backward(&p1, (x0.dim().1, x0.dim().2), &dz1);
    (total, predicted)
}

fn argmax<F: Scalar>(v: &Array1<F>) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

enum Samples {
    Truss(Vec<TrussSample<f32>>),
    Route(Vec<RouteSample<f32>>),
}

impl Samples {
    fn len(&self) -> usize {
        match self {
            Samples::Truss(v) => v.len(),
            Samples::Route(v) => v.len(),
        }
    }

    fn candidate_count(&self, i: usize) -> usize {
        match self {
            Samples::Truss(v) => v[i].main_feats.dim().0,
            Samples::Route(v) => v[i].dir_feats.dim().0,
        }
    }

    fn target(&self, i: usize) -> usize {
        match self {
            Samples::Truss(v) => v[i].target,
            Samples::Route(v) => v[i].target,
        }
    }
}

/// Trains `model` in place on a truss dataset.
pub fn train_truss(
    model: &mut PolicyModel,
    env: &TrussEnv,
    dataset: &Dataset<TrussState>,
    config: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    model.ensure_environment(env.tag())?;
    dataset_tag_check(model, &dataset.environment_tag)?;
    let (image_size, grid) = match &model.net {
        Net::Truss(net) => (net.arch.image_size, net.arch.grid),
        Net::Route(_) => unreachable!("tag checked above"),
    };
    let samples = prepare_truss_samples(
        env,
        dataset,
        image_size,
        grid,
        config.candidate_budget,
        config.seed,
    );
    run_training(model, Samples::Truss(samples), config)
}

/// Trains `model` in place on a routing dataset.
pub fn train_route(
    model: &mut PolicyModel,
    env: &RouteEnv,
    dataset: &Dataset<RouteState>,
    config: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    model.ensure_environment(env.tag())?;
    dataset_tag_check(model, &dataset.environment_tag)?;
    let grid = match &model.net {
        Net::Route(net) => net.arch.grid,
        Net::Truss(_) => unreachable!("tag checked above"),
    };
    let samples = prepare_route_samples(env, dataset, grid, 64);
    run_training(model, Samples::Route(samples), config)
}

fn dataset_tag_check(model: &PolicyModel, dataset_tag: &str) -> Result<(), TrainError> {
    if model.environment_tag() != dataset_tag {
        return Err(TrainError::Policy(PolicyError::EnvironmentMismatch {
            expected: model.environment_tag().to_string(),
            found: dataset_tag.to_string(),
        }));
    }
    Ok(())
}

fn run_training(
    model: &mut PolicyModel,
    samples: Samples,
    config: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    let total = samples.len();
    if total == 0 {
        return Err(TrainError::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x5B1F, 0));
    order.shuffle(&mut rng);
    let (train_idx, test_idx) = if total == 1 {
        (order.clone(), Vec::new())
    } else {
        let train_count = ((total as f64 * config.split).round() as usize).clamp(1, total - 1);
        (order[..train_count].to_vec(), order[train_count..].to_vec())
    };

    let w_sel = config.selection_weight as f32;
    let w_aux = config.auxiliary_weight as f32;
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let mut train_order = train_idx.clone();
    for epoch in 0..config.epochs {
        let mut epoch_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0xE00C, epoch as u64));
        train_order.shuffle(&mut epoch_rng);
        let mut epoch_loss = 0.0;
        for batch in train_order.chunks(config.batch_size) {
            zero_grads(model);
            for &i in batch {
                epoch_loss += sample_step(model, &samples, i, w_sel, w_aux, true);
            }
            let lr = (config.learning_rate / batch.len() as f64) as f32;
            sgd_step(model, lr, config.momentum as f32);
        }
        loss_curve.push(epoch_loss / train_idx.len() as f64);
    }
    model.clear_cache();

    let mut correct = 0usize;
    let mut guess = 0.0f64;
    for &i in &test_idx {
        let (_, predicted) = eval_step(model, &samples, i, w_sel, w_aux);
        if predicted == samples.target(i) {
            correct += 1;
        }
        guess += 1.0 / samples.candidate_count(i) as f64;
    }
    let test_accuracy = if test_idx.is_empty() {
        0.0
    } else {
        correct as f64 / test_idx.len() as f64
    };
    let random_guess_accuracy = if test_idx.is_empty() {
        0.0
    } else {
        guess / test_idx.len() as f64
    };
    Ok(TrainReport {
        train_samples: train_idx.len(),
        test_samples: test_idx.len(),
        loss_curve,
        test_accuracy,
        random_guess_accuracy,
    })
}

fn sample_step(
    model: &mut PolicyModel,
    samples: &Samples,
    i: usize,
    w_sel: f32,
    w_aux: f32,
    learn: bool,
) -> f64 {
    match (&mut model.net, samples) {
        (Net::Truss(net), Samples::Truss(v)) => {
            truss_sample_step(net, &v[i], w_sel, w_aux, learn).0
        }
        (Net::Route(net), Samples::Route(v)) => {
            route_sample_step(net, &v[i], w_sel, w_aux, learn).0
        }
        _ => unreachable!("environment checked before training"),
    }
}

fn eval_step(
    model: &mut PolicyModel,
    samples: &Samples,
    i: usize,
    w_sel: f32,
    w_aux: f32,
) -> (f64, usize) {
    match (&mut model.net, samples) {
        (Net::Truss(net), Samples::Truss(v)) => truss_sample_step(net, &v[i], w_sel, w_aux, false),
        (Net::Route(net), Samples::Route(v)) => route_sample_step(net, &v[i], w_sel, w_aux, false),
        _ => unreachable!("environment checked before training"),
    }
}

fn zero_grads(model: &mut PolicyModel) {
    match &mut model.net {
        Net::Truss(net) => {
            net.conv.iter_mut().for_each(|l| l.zero_grad());
            net.fc.zero_grad();
            net.spatial.zero_grad();
            net.sel_main.iter_mut().for_each(|l| l.zero_grad());
            net.sel_aux.zero_grad();
            net.head.iter_mut().for_each(|l| l.zero_grad());
        }
        Net::Route(net) => {
            net.conv.iter_mut().for_each(|l| l.zero_grad());
            net.img_fc.zero_grad();
            net.loc_fc.zero_grad();
            net.comb_fc.zero_grad();
            net.dir_head.zero_grad();
            net.sel_dir.iter_mut().for_each(|l| l.zero_grad());
            net.sel_dist.zero_grad();
            net.head.iter_mut().for_each(|l| l.zero_grad());
        }
    }
}

fn sgd_step(model: &mut PolicyModel, lr: f32, momentum: f32) {
    match &mut model.net {
        Net::Truss(net) => {
            net.conv.iter_mut().for_each(|l| l.sgd_step(lr, momentum));
            net.fc.sgd_step(lr, momentum);
            net.spatial.sgd_step(lr, momentum);
            net.sel_main
                .iter_mut()
                .for_each(|l| l.sgd_step(lr, momentum));
            net.sel_aux.sgd_step(lr, momentum);
            net.head.iter_mut().for_each(|l| l.sgd_step(lr, momentum));
        }
        Net::Route(net) => {
            net.conv.iter_mut().for_each(|l| l.sgd_step(lr, momentum));
            net.img_fc.sgd_step(lr, momentum);
            net.loc_fc.sgd_step(lr, momentum);
            net.comb_fc.sgd_step(lr, momentum);
            net.dir_head.sgd_step(lr, momentum);
            net.sel_dir
                .iter_mut()
                .for_each(|l| l.sgd_step(lr, momentum));
            net.sel_dist.sgd_step(lr, momentum);
            net.head.iter_mut().for_each(|l| l.sgd_step(lr, momentum));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{ComplexAction, Trajectory, TrajectoryStep};
    use crate::policy::{ArchDescriptor, RouteArch, TrussArch};
    use crate::route::{Net as RouteNetSpec, RoutingProblem};
    use approx::assert_relative_eq;
    use ndarray::Array;

    fn tiny_truss_net() -> TrussNet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let arch = TrussArch {
            image_size: 20,
            channels: [3, 4, 4],
            latent: 10,
            grid: 4,
        };
        TrussNet::new(arch, &mut rng)
    }

    fn tiny_route_net() -> RouteNet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let arch = RouteArch {
            grid: 8,
            channels: [3, 4, 4],
            latent: 12,
        };
        RouteNet::new(arch, &mut rng)
    }

    fn random_truss_sample(rng: &mut ChaCha8Rng) -> TrussSample<f64> {
        use rand::Rng;
        let n = 5;
        TrussSample {
            image: Array::from_shape_fn((3, 20, 20), |_| rng.gen_range(0.0..1.0)),
            main_feats: Array::from_shape_fn((n, 7), |_| rng.gen_range(0.0..1.0)),
            aux_feats: Array::from_shape_fn((n, 1), |_| rng.gen_range(0.0..1.0)),
            target: 2,
            spatial_cell: Some(7),
        }
    }

    fn random_route_sample(rng: &mut ChaCha8Rng) -> RouteSample<f64> {
        use rand::Rng;
        let n = 6;
        RouteSample {
            capacity: Array::from_shape_fn((6, 8, 8), |_| rng.gen_range(0.0..1.0)),
            loc: Array::from_shape_fn(12, |_| rng.gen_range(-1.0..1.0)),
            progress: 0.25,
            dir_feats: Array::from_shape_fn((n, 6), |_| rng.gen_range(0.0..1.0)),
            dist_feats: Array::from_shape_fn((n, 1), |_| rng.gen_range(0.0..1.0)),
            target: 1,
            target_dir: 3,
        }
    }

    /// Central finite differences on a spread of parameters in every layer.
    #[test]
    fn truss_gradients_match_finite_differences() {
        let mut net = tiny_truss_net();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let sample = random_truss_sample(&mut rng);
        truss_sample_step(&mut net, &sample, 1.0, 1.0, true);

        let eps = 1e-5;
        let loss = |net: &TrussNet<f64>| {
            let mut probe = net.clone();
            truss_sample_step(&mut probe, &sample, 1.0, 1.0, false).0
        };
        macro_rules! check {
            ($layer:expr, $idx:expr) => {{
                let g = $layer.gw[$idx];
                let orig = $layer.w[$idx];
                $layer.w[$idx] = orig + eps;
                let lp = loss(&net);
                $layer.w[$idx] = orig - eps;
                let lm = loss(&net);
                $layer.w[$idx] = orig;
                assert_relative_eq!(
                    g,
                    (lp - lm) / (2.0 * eps),
                    max_relative = 1e-4,
                    epsilon = 1e-9
                );
            }};
        }
        check!(net.conv[0], (1, 7));
        check!(net.conv[1], (2, 11));
        check!(net.conv[2], (0, 5));
        check!(net.fc, (3, 2));
        check!(net.spatial, (7, 4));
        check!(net.sel_main[0], (10, 3));
        check!(net.sel_main[1], (40, 20));
        check!(net.sel_main[2], (100, 60));
        check!(net.sel_aux, (12, 0));
        check!(net.head[0], (50, 8));
        check!(net.head[1], (20, 100));
        check!(net.head[2], (0, 13));
    }

    #[test]
    fn route_gradients_match_finite_differences() {
        let mut net = tiny_route_net();
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let sample = random_route_sample(&mut rng);
        route_sample_step(&mut net, &sample, 1.0, 1.0, true);

        let eps = 1e-5;
        let loss = |net: &RouteNet<f64>| {
            let mut probe = net.clone();
            route_sample_step(&mut probe, &sample, 1.0, 1.0, false).0
        };
        macro_rules! check {
            ($layer:expr, $idx:expr) => {{
                let g = $layer.gw[$idx];
                let orig = $layer.w[$idx];
                $layer.w[$idx] = orig + eps;
                let lp = loss(&net);
                $layer.w[$idx] = orig - eps;
                let lm = loss(&net);
                $layer.w[$idx] = orig;
                assert_relative_eq!(
                    g,
                    (lp - lm) / (2.0 * eps),
                    max_relative = 1e-4,
                    epsilon = 1e-9
                );
            }};
        }
        check!(net.conv[0], (1, 7));
        check!(net.conv[1], (2, 11));
        check!(net.conv[2], (0, 5));
        check!(net.img_fc, (3, 10));
        check!(net.loc_fc, (9, 11));
        check!(net.comb_fc, (5, 30));
        check!(net.dir_head, (4, 7));
        check!(net.sel_dir[0], (10, 3));
        check!(net.sel_dir[1], (40, 20));
        check!(net.sel_dir[2], (100, 60));
        check!(net.sel_dist, (12, 0));
        check!(net.head[0], (50, 8));
        check!(net.head[1], (20, 100));
        check!(net.head[2], (0, 13));
    }

    #[test]
    fn bias_gradients_match_finite_differences() {
        let mut net = tiny_truss_net();
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let sample = random_truss_sample(&mut rng);
        truss_sample_step(&mut net, &sample, 1.0, 1.0, true);
        let eps = 1e-5;
        let loss = |net: &TrussNet<f64>| {
            let mut probe = net.clone();
            truss_sample_step(&mut probe, &sample, 1.0, 1.0, false).0
        };
        macro_rules! check_bias {
            ($layer:expr, $idx:expr) => {{
                let g = $layer.gb[$idx];
                let orig = $layer.b[$idx];
                $layer.b[$idx] = orig + eps;
                let lp = loss(&net);
                $layer.b[$idx] = orig - eps;
                let lm = loss(&net);
                $layer.b[$idx] = orig;
                assert_relative_eq!(
                    g,
                    (lp - lm) / (2.0 * eps),
                    max_relative = 1e-4,
                    epsilon = 1e-9
                );
            }};
        }
        check_bias!(net.conv[0], 1);
        check_bias!(net.conv[1], 2);
        check_bias!(net.fc, 3);
        check_bias!(net.spatial, 5);
        check_bias!(net.head[0], 17);
    }

    fn straight_line_problem() -> RoutingProblem {
        RoutingProblem {
            grid_size: 8,
            layers: 2,
            capacity: 5,
            max_t: 50,
            nets: vec![RouteNetSpec {
                source: [0, 0, 0],
                target: [7, 0, 0],
            }],
        }
    }

    #[test]
    fn training_reduces_loss_and_biases_the_policy() {
        // Every demonstration walks +x one cell at a time; the trained
        // policy must come to favor that move.
        let env = RouteEnv::new(straight_line_problem()).unwrap();
        let mut trajectories = Vec::new();
        for _ in 0..6 {
            let mut state = env.initial_state();
            let mut steps = Vec::new();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            loop {
                let actions = env.feasible_actions(&state, 64, None, &mut rng);
                let Some(action) = actions.iter().find(|a| a.discrete == vec![0, 1]).cloned()
                else {
                    break;
                };
                let result = env.step(&state, &action).unwrap();
                steps.push(TrajectoryStep {
                    state: state.clone(),
                    action,
                    reward: result.reward,
                });
                state = result.state;
                if result.terminal {
                    break;
                }
            }
            trajectories.push(Trajectory {
                feasible: env.is_feasible_design(&state),
                final_state: state,
                steps,
            });
        }
        let dataset = Dataset {
            environment_tag: "route".to_string(),
            seed: 0,
            trajectories,
        };
        assert_eq!(dataset.decision_count(), 42);

        let arch = RouteArch {
            grid: 8,
            channels: [4, 6, 6],
            latent: 32,
        };
        let mut model = PolicyModel::new_random(ArchDescriptor::Route(arch), 21);
        let config = TrainConfig {
            epochs: 30,
            batch_size: 8,
            seed: 9,
            ..TrainConfig::default()
        };
        let report = train_route(&mut model, &env, &dataset, &config).unwrap();
        assert_eq!(report.loss_curve.len(), 30);
        assert!(
            report.loss_curve.last().unwrap() < report.loss_curve.first().unwrap(),
            "loss did not decrease: {:?}",
            report.loss_curve
        );

        let state = env.initial_state();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dist =
            crate::policy::DecisionPolicy::<RouteEnv>::propose(&model, &env, &state, 64, &mut rng)
                .unwrap();
        let plus_x: f64 = dist
            .actions
            .iter()
            .zip(&dist.probabilities)
            .filter(|(a, _)| a.discrete[0] == 0)
            .map(|(_, &p)| p)
            .sum();
        assert!(plus_x > 0.5, "+x mass only {plus_x}");
    }

    #[test]
    fn deterministic_training_given_seed() {
        let env = RouteEnv::new(straight_line_problem()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut state = env.initial_state();
        let mut steps = Vec::new();
        for i in 0..10 {
            let actions = env.feasible_actions(&state, 64, None, &mut rng);
            if actions.is_empty() {
                break;
            }
            let action = actions[i % actions.len()].clone();
            let result = env.step(&state, &action).unwrap();
            steps.push(TrajectoryStep {
                state: state.clone(),
                action,
                reward: result.reward,
            });
            state = result.state;
            if result.terminal {
                break;
            }
        }
        let dataset = Dataset {
            environment_tag: "route".to_string(),
            seed: 0,
            trajectories: vec![Trajectory {
                feasible: env.is_feasible_design(&state),
                final_state: state,
                steps,
            }],
        };
        let arch = RouteArch {
            grid: 8,
            channels: [3, 4, 4],
            latent: 16,
        };
        let config = TrainConfig {
            epochs: 3,
            batch_size: 4,
            seed: 77,
            ..TrainConfig::default()
        };

        let mut a = PolicyModel::new_random(ArchDescriptor::Route(arch.clone()), 5);
        let mut b = PolicyModel::new_random(ArchDescriptor::Route(arch), 5);
        let ra = train_route(&mut a, &env, &dataset, &config).unwrap();
        let rb = train_route(&mut b, &env, &dataset, &config).unwrap();
        assert_eq!(ra.loss_curve, rb.loss_curve);
        let (Net::Route(na), Net::Route(nb)) = (&a.net, &b.net) else {
            panic!()
        };
        assert_eq!(na.comb_fc.w, nb.comb_fc.w);
        assert_eq!(na.head[0].w, nb.head[0].w);
    }

    #[test]
    fn truss_training_runs_and_reports() {
        use crate::truss::CLASS_ADD_MEMBER;
        let env = TrussEnv::from_name("middle-basic").unwrap();
        let mut state = env.initial_state();
        let mut steps = Vec::new();
        let actions = [
            ComplexAction::continuous(CLASS_ADD_NODE, vec![5.0, 5.0]),
            ComplexAction::discrete(CLASS_ADD_MEMBER, vec![0, 3]),
            ComplexAction::discrete(CLASS_ADD_MEMBER, vec![1, 3]),
            ComplexAction::discrete(CLASS_ADD_MEMBER, vec![2, 3]),
        ];
        for action in actions {
            let result = env.step(&state, &action).unwrap();
            steps.push(TrajectoryStep {
                state: state.clone(),
                action,
                reward: result.reward,
            });
            state = result.state;
        }
        let trajectory = Trajectory {
            feasible: env.is_feasible_design(&state),
            final_state: state,
            steps,
        };
        let dataset = Dataset {
            environment_tag: "truss".to_string(),
            seed: 0,
            trajectories: vec![trajectory],
        };

        let arch = TrussArch {
            image_size: 32,
            channels: [3, 4, 4],
            latent: 16,
            grid: 4,
        };
        let mut model = PolicyModel::new_random(ArchDescriptor::Truss(arch), 3);
        let config = TrainConfig {
            epochs: 2,
            batch_size: 2,
            split: 0.75,
            candidate_budget: 6,
            seed: 11,
            ..TrainConfig::default()
        };
        let report = train_truss(&mut model, &env, &dataset, &config).unwrap();
        assert_eq!(report.train_samples, 3);
        assert_eq!(report.test_samples, 1);
        assert_eq!(report.loss_curve.len(), 2);
        assert!(report.loss_curve.iter().all(|l| l.is_finite()));
        assert!(report.random_guess_accuracy > 0.0);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let env = TrussEnv::from_name("middle-basic").unwrap();
        let dataset = Dataset::<TrussState> {
            environment_tag: "truss".to_string(),
            seed: 0,
            trajectories: vec![],
        };
        let arch = TrussArch {
            image_size: 20,
            channels: [2, 3, 3],
            latent: 8,
            grid: 4,
        };
        let mut model = PolicyModel::new_random(ArchDescriptor::Truss(arch), 1);
        assert!(matches!(
            train_truss(&mut model, &env, &dataset, &TrainConfig::default()),
            Err(TrainError::EmptyDataset)
        ));
    }

    #[test]
    fn environment_mismatch_is_rejected() {
        let env = RouteEnv::new(straight_line_problem()).unwrap();
        let dataset = Dataset::<RouteState> {
            environment_tag: "route".to_string(),
            seed: 0,
            trajectories: vec![],
        };
        let arch = TrussArch {
            image_size: 20,
            channels: [2, 3, 3],
            latent: 8,
            grid: 4,
        };
        let mut model = PolicyModel::new_random(ArchDescriptor::Truss(arch), 1);
        assert!(matches!(
            train_route(&mut model, &env, &dataset, &TrainConfig::default()),
            Err(TrainError::Policy(PolicyError::EnvironmentMismatch { .. }))
        ));
    }
}
