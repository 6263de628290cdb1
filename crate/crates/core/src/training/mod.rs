//! Training: per step, one scene's source views are encoded, a random
//! depth-capable camera is picked as target, a random subset of its pixels is
//! rendered, and the photometric + opacity loss is minimized with Adam.
//!
//! Every random choice draws from a named stream of the run seed, so a run
//! is reproducible bit for bit regardless of thread count.

mod loss;
mod optim;
mod views;

pub use loss::{compute_loss, LossBreakdown, LossGraph, RayTarget};
pub use optim::{Adam, AdamConfig};
pub use views::{
    select_source_views, select_target_camera, select_target_camera_excluding, select_target_view,
    SourceSetting,
};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::pixel_to_ray;
use crate::model::FieldModel;
use crate::scenegen::{CameraView, SceneSource};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta_weight: f64,
    pub rays_per_step: usize,
    pub source_setting: SourceSetting,
    /// Leading scenes of the training split to use.
    pub n_train_scenes: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Optimizer steps per scene visit.
    pub steps_per_scene: usize,
    /// Stratified sample jitter along training rays.
    pub jitter: bool,
    /// Cameras never drawn as targets.
    pub holdout_targets: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            learning_rate: 5e-4,
            beta_weight: 0.1,
            rays_per_step: 1024,
            source_setting: SourceSetting::ThreePoses,
            n_train_scenes: 40,
            seed: 0,
            adam: AdamConfig::default(),
            steps_per_scene: 1,
            jitter: true,
            holdout_targets: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.beta_weight >= 0.0) {
            return bad("beta_weight must be non-negative");
        }
        if self.rays_per_step < 1 || self.n_train_scenes < 1 || self.steps_per_scene < 1 {
            return bad("rays_per_step, n_train_scenes and steps_per_scene must be at least 1");
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mse: f64,
    pub beta: f64,
    pub total: f64,
    pub wall_ms: u64,
}

pub struct TrainOutcome {
    pub model: FieldModel,
    pub log: Vec<EpochLog>,
}

/// Checkpoint metadata for a model trained with `config`.
pub fn checkpoint_metadata(config: &TrainConfig, epochs_completed: usize) -> serde_json::Value {
    serde_json::json!({
        "train": config,
        "epochs_completed": epochs_completed,
    })
}

/// `n` random pixels of `target` as supervised rays. With `jitter_seed`,
/// ray `i` jitters its samples with stream index `jitter_base + i`.
pub fn sample_rays(
    target: &CameraView,
    n: usize,
    rng: &mut impl Rng,
    jitter_seed: Option<u64>,
    jitter_base: u64,
) -> Vec<RayTarget> {
    let k = &target.intrinsics;
    let forward = target.pose.forward();
    (0..n)
        .map(|i| {
            let x = rng.gen_range(0..k.width);
            let y = rng.gen_range(0..k.height);
            let px = |img: &crate::tensor::Raster| {
                let p = img.pixel(x, y);
                [p[0], p[1], p[2]]
            };
            RayTarget {
                ray: pixel_to_ray(k, &target.pose, x as f64, y as f64),
                forward,
                background: px(&target.background_rgb),
                target: px(&target.rgb),
                jitter: jitter_seed.map(|s| (s, jitter_base + i as u64)),
            }
        })
        .collect()
}

/// The first `n` scenes of the training split.
pub fn training_scenes(data: &dyn SceneSource, n: usize) -> Result<Vec<String>> {
    let train = &data.manifest().split.train;
    if train.len() < n {
        return Err(Error::Config(format!(
            "{n} training scenes requested, dataset has {}",
            train.len()
        )));
    }
    Ok(train[..n].to_vec())
}

/// Checks that the model's grid lies inside the dataset workspace.
pub fn check_compatible(model: &FieldModel, data: &dyn SceneSource) -> Result<()> {
    let ws = data.manifest().workspace;
    if !model.grid().fits_inside(&ws) {
        return Err(Error::Config(format!(
            "model grid {:?} at {} m does not fit the dataset workspace",
            model.grid().dims,
            model.grid().spacing
        )));
    }
    Ok(())
}

/// Runs one optimizer step on `scene_id` and returns its loss.
pub fn train_step(
    model: &mut FieldModel,
    opt: &mut Adam,
    data: &dyn SceneSource,
    scene_id: &str,
    config: &TrainConfig,
    step: u64,
) -> Result<LossBreakdown> {
    let sources = select_source_views(data, scene_id, config.source_setting)?;
    let encoding = model.encode(&sources, true)?;
    let mut target_rng = crate::rng::stream(config.seed, "target", step);
    let cam = select_target_camera_excluding(&mut target_rng, &config.holdout_targets)?;
    let target = data.load_view(scene_id, &cam)?;
    let mut ray_rng = crate::rng::stream(config.seed, "rays", step);
    let rays = sample_rays(
        &target,
        config.rays_per_step,
        &mut ray_rng,
        config.jitter.then_some(config.seed),
        step * config.rays_per_step as u64,
    );
    let graph = LossGraph::forward(model, encoding, rays, config.beta_weight)?;
    let grads = graph.backward(model)?;
    if !grads.is_finite() {
        return Err(Error::Domain(format!("non-finite gradient at step {step}")));
    }
    opt.step(&mut model.params, &grads, config.learning_rate);
    Ok(graph.loss)
}

/// Trains `model` in place. `on_epoch` sees every epoch's mean loss and the
/// current parameters (for logging and checkpoints).
pub fn train(
    model: FieldModel,
    data: &dyn SceneSource,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &FieldModel) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_compatible(&model, data)?;
    let scenes = training_scenes(data, config.n_train_scenes)?;
    let mut model = model;
    let mut opt = Adam::new(config.adam, &model.params);
    let mut log = Vec::with_capacity(config.epochs);
    let mut step = 0u64;
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let mut order = scenes.clone();
        order.shuffle(&mut crate::rng::stream(config.seed, "epoch-order", epoch as u64));
        let mut sum = LossBreakdown::default();
        let mut n = 0.0;
        for scene in &order {
            for _ in 0..config.steps_per_scene {
                let l = train_step(&mut model, &mut opt, data, scene, config, step)?;
                sum.mse += l.mse;
                sum.beta += l.beta;
                sum.total += l.total;
                n += 1.0;
                step += 1;
            }
        }
        let entry = EpochLog {
            epoch,
            mse: sum.mse / n,
            beta: sum.beta / n,
            total: sum.total / n,
            wall_ms: start.elapsed().as_millis() as u64,
        };
        on_epoch(&entry, &model)?;
        log.push(entry);
    }
    Ok(TrainOutcome { model, log })
}
