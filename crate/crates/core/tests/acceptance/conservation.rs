use rand::Rng;

use wsocc::geometry::pixel_to_ray;
use wsocc::model::FieldModel;
use wsocc::renderer::{composite, composite_weights, render_ray, render_view, RaySamples};
use wsocc::scenegen::SceneSource;
use wsocc::training::{select_source_views, SourceSetting};

use crate::common::{ensure, rng, small_arch, small_data};

const RAYS: usize = 100_000;
const TOL: f64 = 1e-6;

fn random_alpha(r: &mut impl Rng) -> Vec<f64> {
    let n = r.gen_range(1..=128);
    match r.gen_range(0..4) {
        0 => (0..n).map(|_| r.gen::<f64>()).collect(),
        1 => (0..n).map(|_| r.gen::<f64>().powi(8)).collect(),
        2 => (0..n).map(|_| 1.0 - r.gen::<f64>().powi(8)).collect(),
        _ => (0..n).map(|_| if r.gen_bool(0.2) { 1.0 } else { 0.0 }).collect(),
    }
}

pub fn run() -> Result<String, String> {
    let mut r = rng("conservation");
    let mut worst: f64 = 0.0;
    for _ in 0..RAYS {
        let alpha = random_alpha(&mut r);
        let (w, trans) = composite_weights(&alpha);
        let n = alpha.len();
        let s = RaySamples {
            t: vec![0.0; n],
            z: vec![0.0; n],
            sigma: vec![0.0; n],
            rgb: vec![[0.0; 3]; n],
            alpha,
        };
        let px = composite(&s, [0.0; 3]);
        let e1 = (w.iter().sum::<f64>() + trans - 1.0).abs();
        let e2 = (px.accumulated_opacity + trans - 1.0).abs();
        worst = worst.max(e1).max(e2);
    }
    ensure!(worst <= TOL, "max deviation {worst:e} over {RAYS} random rays");

    // Rays through a randomly initialized field.
    let data = small_data(1, 0);
    let scene = "scene_000";
    let model = FieldModel::new(small_arch(), 3).map_err(|e| e.to_string())?;
    let sources = select_source_views(&data, scene, SourceSetting::ThreePoses).map_err(|e| e.to_string())?;
    let enc = model.encode(&sources, false).map_err(|e| e.to_string())?;
    let target = data.load_view(scene, "static_1").map_err(|e| e.to_string())?;
    let mut scratch = model.scratch();
    let mut field_rays = 0;
    for _ in 0..20_000 {
        if field_rays == 1000 {
            break;
        }
        let (u, v) = (
            r.gen_range(0.0..target.intrinsics.width as f64),
            r.gen_range(0.0..target.intrinsics.height as f64),
        );
        let ray = pixel_to_ray(&target.intrinsics, &target.pose, u, v);
        let hit = render_ray(&model, &enc, &ray, &target.pose.forward(), [0.0; 3], None, &mut scratch)
            .map_err(|e| e.to_string())?;
        if let Some((s, _)) = hit {
            let (w, trans) = composite_weights(&s.alpha);
            worst = worst.max((w.iter().sum::<f64>() + trans - 1.0).abs());
            field_rays += 1;
        }
    }
    ensure!(worst <= TOL, "max deviation {worst:e} on field rays");
    ensure!(field_rays == 1000, "only {field_rays} rays hit the field");

    // Zero density: the head's density bias drowns every other term, so
    // softplus underflows to exactly 0.
    let mut empty = model.clone();
    let head = empty.params.find("mlp.head.bias").ok_or("no head bias")?;
    empty.params.tensors[head].data[0] = -1000.0;
    let enc = empty.encode(&sources, false).map_err(|e| e.to_string())?;
    let mut pixels = 0;
    for cam in ["static_1", "static_2", "head_depth_05"] {
        let v = data.load_view(scene, cam).map_err(|e| e.to_string())?;
        let out = render_view(&empty, &enc, &v.intrinsics, &v.pose, &v.background_rgb, None).map_err(|e| e.to_string())?;
        ensure!(
            out.rgb.data.iter().zip(&v.background_rgb.data).all(|(a, b)| a.to_bits() == b.to_bits()),
            "{cam}: zero-density render differs from the background"
        );
        ensure!(out.opacity.data.iter().all(|&a| a == 0.0), "{cam}: nonzero opacity");
        pixels += v.background_rgb.pixel_count();
    }
    Ok(format!(
        "max |sum w + T - 1| = {worst:.1e} over {RAYS} + {field_rays} rays; {pixels} zero-density pixels bitwise equal"
    ))
}
