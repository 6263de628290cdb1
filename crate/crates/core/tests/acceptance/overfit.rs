use std::time::Instant;

use wsocc::evaluation::{evaluate, psnr, ModelPredictor};
use wsocc::geometry::{Aabb, GridSpec};
use wsocc::model::{ArchConfig, FieldModel};
use wsocc::renderer::render_view;
use wsocc::scenegen::{synthetic_dataset, RigConfig, SceneSource};
use wsocc::training::{select_source_views, train, SourceSetting, TrainConfig};

use crate::common::ensure;

const SEED: u64 = 1;
const HELD_OUT: &str = "head_depth_05";
const MIN_PSNR: f64 = 25.0;
const MAX_MAE: f64 = 0.03;
const STEPS: usize = 1200;

/// Reduced model on a 2 cm grid; full 160x128 images and 64 samples per ray.
fn arch() -> ArchConfig {
    ArchConfig {
        grid: GridSpec::for_workspace(&Aabb::default_workspace(), 0.02).unwrap(),
        extractor_channels: vec![4, 4, 8, 8, 8, 16, 16, 16, 16],
        unet_encoder_channels: vec![16, 16, 32],
        unet_decoder_channels: vec![16, 16, 16],
        mlp_width: 64,
        mlp_depth: 4,
        n_samples: 64,
        ..ArchConfig::default()
    }
}

fn config() -> TrainConfig {
    TrainConfig {
        epochs: STEPS,
        learning_rate: 1e-3,
        rays_per_step: 1024,
        n_train_scenes: 1,
        seed: SEED,
        holdout_targets: vec![HELD_OUT.into()],
        ..TrainConfig::default()
    }
}

pub fn run() -> Result<String, String> {
    let err = |e: wsocc::Error| e.to_string();
    let ws = Aabb::default_workspace();
    let data = synthetic_dataset(SEED, 1, 0, 5, &ws, &RigConfig::default()).map_err(err)?;
    let scene = data.manifest().scene_ids[0].clone();
    let start = Instant::now();
    let model = FieldModel::new(arch(), SEED).map_err(err)?;
    let model = train(model, &data, &config(), |_, _| Ok(())).map_err(err)?.model;
    let minutes = start.elapsed().as_secs_f64() / 60.0;

    let held = data.load_view(&scene, HELD_OUT).map_err(err)?;
    let enc = model
        .encode(&select_source_views(&data, &scene, SourceSetting::ThreePoses).map_err(err)?, false)
        .map_err(err)?;
    let out = render_view(&model, &enc, &held.intrinsics, &held.pose, &held.background_rgb, None).map_err(err)?;
    let held_psnr = psnr(&held.rgb, &out.rgb).map_err(err)?;
    let report = evaluate(&ModelPredictor(&model), &data, &[scene], SourceSetting::ThreePoses, 1, SEED).map_err(err)?;
    let views: Vec<String> = report.scenes[0]
        .views
        .iter()
        .map(|v| match v.mae_depth {
            Some(m) => format!("{} {m:.4}", v.camera_id),
            None => format!("{} none", v.camera_id),
        })
        .collect();
    let summary = format!(
        "{STEPS} steps in {minutes:.1} min; held-out PSNR {held_psnr:.2}; MAE {:?} [{}]",
        report.mae_depth,
        views.join(", ")
    );
    ensure!(held_psnr >= MIN_PSNR, "held-out PSNR below {MIN_PSNR}: {summary}");
    ensure!(
        report.scenes[0].views.iter().all(|v| v.mae_depth.is_some_and(|m| m <= MAX_MAE)),
        "depth MAE above {MAX_MAE} m on some view: {summary}"
    );
    Ok(summary)
}
