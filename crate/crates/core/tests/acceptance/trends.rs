use wsocc::evaluation::{default_matrix, run_matrix, spearman, EvalReport, MatrixCell};
use wsocc::geometry::{Aabb, GridSpec};
use wsocc::model::ArchConfig;
use wsocc::scenegen::{synthetic_dataset, RigConfig};
use wsocc::training::{SourceSetting, TrainConfig};

use crate::common::ensure;

const SEEDS: [u64; 3] = [0, 1, 2];
const EPOCHS: usize = 40;

fn rig() -> RigConfig {
    RigConfig {
        image_width: 80,
        image_height: 64,
        ..RigConfig::default()
    }
}

/// A 3 cm grid and a narrow network; about a tenth of a second per step.
fn arch() -> ArchConfig {
    ArchConfig {
        grid: GridSpec::for_workspace(&Aabb::default_workspace(), 0.03).unwrap(),
        extractor_channels: vec![4, 4, 8, 8, 8, 16, 16, 16, 16],
        unet_encoder_channels: vec![8, 16, 16],
        unet_decoder_channels: vec![16, 8, 8],
        mlp_width: 32,
        mlp_depth: 3,
        n_samples: 32,
        ..ArchConfig::default()
    }
}

fn config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: EPOCHS,
        learning_rate: 1e-3,
        rays_per_step: 256,
        seed,
        ..TrainConfig::default()
    }
}

/// Missing MAE (no jointly valid pixel anywhere) ranks worst.
fn mae(r: &EvalReport) -> f64 {
    r.mae_depth.unwrap_or(f64::INFINITY)
}

fn find<'a>(cells: &[MatrixCell], reports: &'a [EvalReport], setting: SourceSetting, n: usize) -> &'a EvalReport {
    let i = cells.iter().position(|c| c.setting == setting && c.n_train == n).unwrap();
    &reports[i]
}

pub fn run() -> Result<String, String> {
    let cells = default_matrix();
    let (mut a, mut b, mut c) = (0, 0, 0);
    let mut lines = Vec::new();
    for seed in SEEDS {
        let data = synthetic_dataset(seed, 60, 20, 5, &Aabb::default_workspace(), &rig()).map_err(|e| e.to_string())?;
        let reports = run_matrix(&data, &cells, &arch(), &config(seed), |c, r| {
            eprintln!("  seed {seed} {}/{}: mae {:?} psnr {:.2}", c.setting.as_str(), c.n_train, r.mae_depth, r.psnr);
            Ok(())
        }).map_err(|e| e.to_string())?;
        let three = find(&cells, &reports, SourceSetting::ThreePoses, 40);
        let single = find(&cells, &reports, SourceSetting::Single, 40);
        let few = find(&cells, &reports, SourceSetting::ThreePoses, 5);
        let maes: Vec<f64> = reports.iter().map(mae).collect();
        let psnrs: Vec<f64> = reports.iter().map(|r| r.psnr).collect();
        let rho = spearman(&psnrs, &maes);
        let (ha, hb, hc) = (mae(three) < mae(single), mae(three) < mae(few), rho.is_some_and(|r| r < 0.0));
        a += usize::from(ha);
        b += usize::from(hb);
        c += usize::from(hc);
        let cells_fmt: Vec<String> = reports
            .iter()
            .map(|r| format!("{}/{} {:.4} {:.2}", r.source_setting.as_str(), r.n_train, mae(r), r.psnr))
            .collect();
        lines.push(format!("seed {seed}: [{}] rho {rho:?} ({ha}, {hb}, {hc})", cells_fmt.join("; ")));
    }
    let detail = format!("a {a}/3, b {b}/3, c {c}/3; {}", lines.join(" | "));
    ensure!(a >= 2 && b >= 2 && c >= 2, "trends do not hold in 2 of 3 seeds: {detail}");
    Ok(detail)
}
