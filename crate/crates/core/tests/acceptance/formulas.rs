use wsocc::evaluation::{depth_mae, psnr};
use wsocc::renderer::{composite, density_to_alpha, extract_depth, RaySamples, RenderedPixel};
use wsocc::tensor::Raster;
use wsocc::training::compute_loss;
use wsocc::Error;

use crate::common::{close, ensure};

const TOL: f64 = 1e-9;

fn samples(alpha: &[f64], rgb: &[[f64; 3]]) -> RaySamples {
    let n = alpha.len();
    RaySamples {
        t: (0..n).map(|i| i as f64).collect(),
        z: (0..n).map(|i| 0.1 * (i + 1) as f64).collect(),
        sigma: alpha.iter().map(|a| -(-a as f64).ln_1p()).collect(),
        alpha: alpha.to_vec(),
        rgb: rgb.to_vec(),
    }
}

fn px(c: f64) -> RenderedPixel {
    RenderedPixel {
        color: [c; 3],
        accumulated_opacity: 0.0,
        depth: None,
    }
}

pub fn run() -> Result<String, String> {
    let start = std::time::Instant::now();
    let mut n = 0;

    // density_to_alpha
    ensure!(density_to_alpha(0.0).unwrap() == 0.0, "alpha(0) != 0");
    ensure!(close(density_to_alpha(2f64.ln()).unwrap(), 0.5, TOL), "alpha(ln 2) != 0.5");
    ensure!(close(density_to_alpha(20.0).unwrap(), 1.0, 1e-8), "alpha(20) not within 1e-8 of 1");
    ensure!(matches!(density_to_alpha(-0.1), Err(Error::Domain(_))), "negative density accepted");
    n += 4;

    // extract_depth
    ensure!(extract_depth(&[0.1, 0.2, 0.3], &[0.2; 3]) == Some(0.3), "cumsum 0.2,0.4,0.6 depth");
    ensure!(extract_depth(&[0.1, 0.2], &[0.6, 0.3]) == Some(0.1), "first-sample depth");
    let z: Vec<f64> = (0..30).map(|i| 0.1 + 0.01 * i as f64).collect();
    ensure!(extract_depth(&z, &[0.01; 30]).is_none(), "max cumsum 0.3 gave a depth");
    n += 3;

    // composite
    let c = [0.3, 0.6, 0.9];
    let p = composite(&samples(&[1.0], &[c]), [0.0; 3]);
    ensure!(p.color == c && p.accumulated_opacity == 1.0, "opaque sample: {p:?}");
    let bg = [0.2, 0.4, 0.1];
    let p = composite(&samples(&[0.0; 5], &[c; 5]), bg);
    ensure!(p.color == bg && p.accumulated_opacity == 0.0, "empty ray: {p:?}");
    let p = composite(&samples(&[0.5, 0.5], &[[1.0; 3], [0.0; 3]]), [0.0; 3]);
    ensure!(
        p.color.iter().all(|&x| close(x, 0.5, TOL)) && close(p.accumulated_opacity, 0.75, TOL),
        "two half-opaque samples: {p:?}"
    );
    n += 3;

    // compute_loss
    let t = vec![[0.2, 0.4, 0.6]; 4];
    let same = vec![
        RenderedPixel {
            color: [0.2, 0.4, 0.6],
            accumulated_opacity: 1.0,
            depth: None,
        };
        4
    ];
    let l = compute_loss(&t, &same, &[0.0, 1.0, 1.0], 0.1).unwrap();
    ensure!(l.mse == 0.0 && l.total == 0.0, "perfect render with binary alphas: {l:?}");
    let l = compute_loss(&t, &same, &[0.5; 6], 0.1).unwrap();
    ensure!(close(l.beta, 0.25, TOL) && close(l.total, 0.025, TOL), "alpha 0.5: {l:?}");
    let l = compute_loss(&[[1.0; 3]; 3], &[px(0.9), px(0.9), px(0.9)], &[], 0.1).unwrap();
    ensure!(close(l.mse, 0.01, TOL), "I=1, I^=0.9: {l:?}");
    ensure!(matches!(compute_loss(&t, &same[..3], &[], 0.1), Err(Error::Shape(_))), "length mismatch accepted");
    n += 4;

    // psnr
    let a = Raster::filled(6, 4, 3, 0.5);
    let b = Raster::filled(6, 4, 3, 0.6);
    ensure!(close(psnr(&a, &b).unwrap(), 20.0, TOL), "mse 0.01 -> 20 dB");
    ensure!(close(psnr(&Raster::filled(6, 4, 3, 0.0), &Raster::filled(6, 4, 3, 1.0)).unwrap(), 0.0, TOL), "mse 1 -> 0 dB");
    ensure!(psnr(&a, &a).unwrap() == f64::INFINITY, "identical -> +inf");
    ensure!(matches!(psnr(&a, &Raster::filled(6, 3, 3, 0.5)), Err(Error::Shape(_))), "shape mismatch accepted");
    n += 4;

    // depth_mae
    let gt = Raster::from_vec(4, 2, 1, vec![0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4, 1.5]).unwrap();
    let mask = vec![true; 8];
    ensure!(depth_mae(&gt, &gt, &mask).unwrap().mae == Some(0.0), "pred = gt");
    let off = Raster::from_vec(4, 2, 1, gt.data.iter().map(|d| d + 0.005).collect()).unwrap();
    ensure!(close(depth_mae(&off, &gt, &mask).unwrap().mae.unwrap(), 0.005, TOL), "pred = gt + 5 mm");
    let mut wrong = gt.clone();
    wrong.data[3] = 9.0;
    let mut m = mask.clone();
    m[3] = false;
    ensure!(depth_mae(&wrong, &gt, &m).unwrap().mae == Some(0.0), "error only on masked-out pixels");
    ensure!(matches!(depth_mae(&gt, &gt, &[false; 8]), Err(Error::EmptyMask)), "empty mask accepted");
    n += 4;

    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.1}s");
    Ok(format!("{n} examples exact within {TOL:e}"))
}
