use std::path::Path;

use wsocc::evaluation::evaluate_model;
use wsocc::geometry::Aabb;
use wsocc::model::{checkpoint, FieldModel};
use wsocc::renderer::extract_occupancy;
use wsocc::scenegen::{build_rig, generate_scenes, read_dataset, write_dataset, SceneSource, Split};
use wsocc::training::{checkpoint_metadata, select_source_views, train, SourceSetting, TrainConfig};

use crate::common::{ensure, small_arch, small_rig};

const SEED: u64 = 21;

/// Every file under `dir` with its relative path, in sorted order.
fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

struct Artifacts {
    dataset: Vec<(String, Vec<u8>)>,
    checkpoint: Vec<u8>,
    report: Vec<u8>,
    occupancy: Vec<u8>,
}

fn pipeline() -> wsocc::Result<Artifacts> {
    let tmp = tempfile::tempdir().map_err(|e| wsocc::Error::Config(e.to_string()))?;
    let ws = Aabb::default_workspace();
    let scenes = generate_scenes(SEED, 4, 5, &ws)?;
    let ids: Vec<String> = scenes.iter().map(|s| s.id.clone()).collect();
    let data_dir = tmp.path().join("data");
    write_dataset(&scenes, &build_rig(&ws, &small_rig())?, &Split::tail(&ids, 2)?, &data_dir)?;
    let data = read_dataset(&data_dir)?;

    let config = TrainConfig {
        epochs: 2,
        rays_per_step: 64,
        learning_rate: 1e-3,
        n_train_scenes: 2,
        seed: SEED,
        ..TrainConfig::default()
    };
    let model = FieldModel::new(small_arch(), SEED)?;
    let out = train(model, &data, &config, |_, _| Ok(()))?;
    let ckpt = tmp.path().join("model.wsoc");
    checkpoint::save(&ckpt, &out.model, &checkpoint_metadata(&config, 2))?;
    let model = checkpoint::load(&ckpt)?.model;

    let report = evaluate_model(&model, &data, config.source_setting, config.n_train_scenes, SEED)?;
    let scene = &data.manifest().split.eval[0];
    let enc = model.encode(&select_source_views(&data, scene, SourceSetting::ThreePoses)?, false)?;
    let occ = extract_occupancy(&model, &enc, model.grid())?;
    Ok(Artifacts {
        dataset: tree(&data_dir),
        checkpoint: std::fs::read(&ckpt).map_err(|e| wsocc::Error::Config(e.to_string()))?,
        report: serde_json::to_vec_pretty(&report).map_err(|e| wsocc::Error::Config(e.to_string()))?,
        occupancy: occ.to_bytes(),
    })
}

pub fn run() -> Result<String, String> {
    let a = pipeline().map_err(|e| e.to_string())?;
    let b = pipeline().map_err(|e| e.to_string())?;
    ensure!(a.dataset.len() == b.dataset.len(), "dataset file lists differ");
    for (x, y) in a.dataset.iter().zip(&b.dataset) {
        ensure!(x.0 == y.0, "dataset files {} vs {}", x.0, y.0);
        ensure!(x.1 == y.1, "dataset file {} differs", x.0);
    }
    ensure!(a.checkpoint == b.checkpoint, "checkpoints differ");
    ensure!(a.report == b.report, "evaluation reports differ");
    ensure!(a.occupancy == b.occupancy, "occupancy grids differ");
    Ok(format!(
        "{} dataset files, {}-byte checkpoint, report and {}-byte occupancy grid identical across runs",
        a.dataset.len(),
        a.checkpoint.len(),
        a.occupancy.len()
    ))
}
