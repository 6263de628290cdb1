use std::collections::BTreeMap;

use wsocc::evaluation::{default_matrix, run_matrix, table_csv, CSV_HEADER};
use wsocc::geometry::Aabb;
use wsocc::scenegen::{synthetic_dataset, RigConfig, SceneSource, HEAD_POSES};
use wsocc::training::{select_target_camera, SourceSetting, TrainConfig};

use crate::common::{close, ensure, rng, small_arch, small_rig};

fn marginals() -> Result<String, String> {
    let mut r = rng("protocol-target");
    let n = 100_000;
    let mut counts = BTreeMap::<String, usize>::new();
    for _ in 0..n {
        *counts.entry(select_target_camera(&mut r)).or_default() += 1;
    }
    let (mut statics, mut heads) = (0, 0);
    for (id, &c) in &counts {
        let f = c as f64 / n as f64;
        if id.starts_with("static_") {
            ensure!(close(f, 0.25, 0.01), "{id}: frequency {f}");
            statics += 1;
        } else {
            ensure!(close(f, 1.0 / 60.0, 0.005), "{id}: frequency {f}");
            heads += 1;
        }
    }
    ensure!(statics == 3 && heads == HEAD_POSES, "{statics} static and {heads} head cameras drawn");
    Ok(format!("target marginals ok over {n} draws"))
}

fn counts() -> Result<String, String> {
    let ws = Aabb::default_workspace();
    let data = synthetic_dataset(0, 60, 20, 5, &ws, &RigConfig::default()).map_err(|e| e.to_string())?;
    let m = data.manifest();
    ensure!(m.scene_ids.len() == 60, "{} scenes", m.scene_ids.len());
    ensure!(m.split.eval.len() == 20 && m.split.train.len() == 40, "split {}/{}", m.split.train.len(), m.split.eval.len());
    for id in &m.scene_ids {
        let s = data.load_scene(id).map_err(|e| e.to_string())?;
        ensure!(s.primitives.len() == 5, "{id} has {} objects", s.primitives.len());
    }
    let rig = data.rig();
    ensure!(
        rig.eye_left.len() == HEAD_POSES && rig.eye_right.len() == HEAD_POSES && rig.head_depth.len() == HEAD_POSES,
        "rig head poses"
    );
    ensure!(HEAD_POSES == 15, "HEAD_POSES = {HEAD_POSES}");
    ensure!(rig.evaluation_viewpoints().len() == 4, "eval viewpoints");
    Ok("60 scenes x 5 objects, 15 head poses, 40/20 split".into())
}

fn matrix() -> Result<String, String> {
    let cells = default_matrix();
    let shape: Vec<(SourceSetting, usize)> = cells.iter().map(|c| (c.setting, c.n_train)).collect();
    ensure!(
        shape
            == [
                (SourceSetting::Single, 40),
                (SourceSetting::Stereo, 40),
                (SourceSetting::ThreePoses, 40),
                (SourceSetting::ThreePoses, 20),
                (SourceSetting::ThreePoses, 10),
                (SourceSetting::ThreePoses, 5),
            ],
        "matrix cells {shape:?}"
    );

    let data = synthetic_dataset(2, 60, 20, 5, &Aabb::default_workspace(), &small_rig()).map_err(|e| e.to_string())?;
    let base = TrainConfig {
        epochs: 1,
        rays_per_step: 32,
        learning_rate: 1e-3,
        seed: 9,
        ..TrainConfig::default()
    };
    let reports = run_matrix(&data, &cells, &small_arch(), &base, |_, _| Ok(())).map_err(|e| e.to_string())?;
    ensure!(reports.len() == 6, "{} reports", reports.len());
    let eval = &data.manifest().split.eval;
    for (cell, rep) in cells.iter().zip(&reports) {
        ensure!(rep.source_setting == cell.setting && rep.n_train == cell.n_train, "report echoes its cell");
        ensure!(rep.seed == base.seed, "report seed {}", rep.seed);
        let ids: Vec<&String> = rep.scenes.iter().map(|s| &s.scene_id).collect();
        ensure!(ids.iter().copied().eq(eval.iter()), "cell {cell:?} evaluated on {ids:?}");
        ensure!(rep.pairs().len() == 80, "{} pairs", rep.pairs().len());
    }
    let csv = table_csv(&reports);
    let lines: Vec<&str> = csv.lines().collect();
    ensure!(lines.len() == 7 && lines[0] == CSV_HEADER, "table:\n{csv}");
    Ok("6-row matrix on a shared 20-scene eval split".into())
}

pub fn run() -> Result<String, String> {
    Ok([marginals()?, counts()?, matrix()?].join("; "))
}
