use rand::Rng;

use wsocc::geometry::{bilinear_tap, pixel_to_ray, trilinear_tap, Vec3};
use wsocc::model::conv::{self, ConvShape};
use wsocc::model::{
    build_cost_volume, cost_volume_backward, FeatureVolume, FieldModel, Gradients, Mlp, ParamSet, SceneEncoding,
    SourceFeatures, VolumeGrad, HEAD_WIDTH,
};
use wsocc::renderer::{composite, composite_backward, density_to_alpha, RaySamples};
use wsocc::tensor::{Raster, Volume};
use wsocc::training::{LossGraph, RayTarget};

use crate::common::{ensure, fd_check, random_views, rng, tiny_arch, FdSummary};

const COUNT: usize = 50;
const TOL: f64 = 1e-4;

fn uniform(n: usize, lo: f64, hi: f64, name: &str) -> Vec<f64> {
    let mut r = rng(name);
    (0..n).map(|_| r.gen_range(lo..hi)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_volume(dims: [usize; 3], c: usize, name: &str) -> Volume {
    let n = dims.iter().product::<usize>() * c;
    Volume::from_vec(dims, c, uniform(n, -1.0, 1.0, name)).unwrap()
}

/// Records one primitive's outcome.
struct Tally {
    lines: Vec<String>,
    worst: f64,
    probes: usize,
}

impl Tally {
    fn add(&mut self, name: &str, r: Result<FdSummary, String>) -> Result<(), String> {
        let s = r.map_err(|e| format!("{name}: {e}"))?;
        self.worst = self.worst.max(s.max_rel);
        self.probes += s.checked;
        self.lines.push(format!("{name} {}", s.checked));
        Ok(())
    }
}

fn alpha_of_density(t: &mut Tally) -> Result<(), String> {
    let sigma = uniform(COUNT, 0.0, 4.0, "g-sigma");
    let w = uniform(COUNT, -1.0, 1.0, "g-sigma-w");
    let f = |s: &[f64]| -> f64 { s.iter().zip(&w).map(|(s, w)| w * density_to_alpha(*s).unwrap()).sum() };
    t.add(
        "density_to_alpha",
        fd_check(COUNT, COUNT, "density_to_alpha", TOL, |i| w[i] * (-sigma[i]).exp(), |i, d| {
            let mut s = sigma.clone();
            s[i] += d;
            f(&s)
        }),
    )
}

fn compositing(t: &mut Tally) -> Result<(), String> {
    let n = 24;
    let alpha = uniform(n, 0.05, 0.6, "g-comp-a");
    let flat = uniform(3 * n, 0.0, 1.0, "g-comp-rgb");
    let g = [0.7, -0.4, 0.9];
    let bg = [0.2, 0.5, 0.3];
    let value = |a: &[f64], c: &[f64]| {
        let s = RaySamples {
            t: (0..n).map(|i| i as f64).collect(),
            z: (0..n).map(|i| i as f64).collect(),
            sigma: vec![0.0; n],
            alpha: a.to_vec(),
            rgb: c.chunks(3).map(|p| [p[0], p[1], p[2]]).collect(),
        };
        dot(&composite(&s, bg).color, &g)
    };
    let rgb: Vec<[f64; 3]> = flat.chunks(3).map(|p| [p[0], p[1], p[2]]).collect();
    let (da, dc) = composite_backward(&alpha, &rgb, bg, g);
    t.add(
        "composite/alpha",
        fd_check(n, n, "composite-alpha", TOL, |i| da[i], |i, d| {
            let mut a = alpha.clone();
            a[i] += d;
            value(&a, &flat)
        }),
    )?;
    let dc: Vec<f64> = dc.iter().flatten().copied().collect();
    t.add(
        "composite/rgb",
        fd_check(3 * n, COUNT, "composite-rgb", TOL, |i| dc[i], |i, d| {
            let mut c = flat.clone();
            c[i] += d;
            value(&alpha, &c)
        }),
    )
}

fn convolution(t: &mut Tally, label: &str, shape: ConvShape, dims: [usize; 3]) -> Result<(), String> {
    let x = random_volume(dims, shape.cin, &format!("{label}-x"));
    let w = uniform(shape.weight_len(), -0.5, 0.5, &format!("{label}-w"));
    let b = uniform(shape.cout, -0.5, 0.5, &format!("{label}-b"));
    let out_dims = shape.out_dims(dims);
    let gout = random_volume(out_dims, shape.cout, &format!("{label}-g"));
    let f = |x: &Volume, w: &[f64], b: &[f64]| dot(&conv::forward(&shape, x, w, b).data, &gout.data);
    let gr = conv::backward(&shape, &x, &w, &gout, true);
    t.add(
        &format!("{label}/input"),
        fd_check(x.data.len(), COUNT, &format!("{label}-input"), TOL, |i| gr.input.data[i], |i, d| {
            let mut x2 = x.clone();
            x2.data[i] += d;
            f(&x2, &w, &b)
        }),
    )?;
    t.add(
        &format!("{label}/weight"),
        fd_check(w.len(), COUNT, &format!("{label}-weight"), TOL, |i| gr.weight[i], |i, d| {
            let mut w2 = w.clone();
            w2[i] += d;
            f(&x, &w2, &b)
        }),
    )?;
    t.add(
        &format!("{label}/bias"),
        fd_check(b.len(), COUNT, &format!("{label}-bias"), TOL, |i| gr.bias[i], |i, d| {
            let mut b2 = b.clone();
            b2[i] += d;
            f(&x, &w, &b2)
        }),
    )
}

fn activations(t: &mut Tally) -> Result<(), String> {
    let slope = 0.1;
    let x = uniform(COUNT * 2, -1.0, 1.0, "g-lrelu-x");
    let g = uniform(COUNT * 2, -1.0, 1.0, "g-lrelu-g");
    let f = |x: &[f64]| {
        let mut y = x.to_vec();
        conv::leaky_relu(&mut y, slope);
        dot(&y, &g)
    };
    let mut y = x.clone();
    conv::leaky_relu(&mut y, slope);
    let mut an = g.clone();
    conv::leaky_relu_backward(&y, &mut an, slope);
    t.add(
        "leaky_relu",
        fd_check(x.len(), COUNT, "leaky-relu", TOL, |i| an[i], |i, d| {
            let mut x2 = x.clone();
            x2[i] += d;
            f(&x2)
        }),
    )?;

    let v = random_volume([3, 2, 2], 2, "g-up-x");
    let gout = random_volume([6, 4, 4], 2, "g-up-g");
    let an = conv::upsample2_backward(&gout);
    t.add(
        "upsample2",
        fd_check(v.data.len(), COUNT, "upsample2", TOL, |i| an.data[i], |i, d| {
            let mut v2 = v.clone();
            v2.data[i] += d;
            dot(&conv::upsample2(&v2).data, &gout.data)
        }),
    )?;

    let v = random_volume([4, 3, 2], 3, "g-std-x");
    let gout = random_volume([4, 3, 2], 3, "g-std-g");
    let (y, inv) = conv::standardize(&v);
    let an = conv::standardize_backward(&y, &inv, &gout);
    t.add(
        "standardize",
        fd_check(v.data.len(), COUNT, "standardize", TOL, |i| an.data[i], |i, d| {
            let mut v2 = v.clone();
            v2.data[i] += d;
            dot(&conv::standardize(&v2).0.data, &gout.data)
        }),
    )
}

fn interpolation(t: &mut Tally) -> Result<(), String> {
    let (w, h, c) = (7, 5, 3);
    let map = Raster::from_vec(w, h, c, uniform(w * h * c, -1.0, 1.0, "g-bil-map")).unwrap();
    let mut r = rng("g-bil-taps");
    let taps: Vec<_> = (0..20)
        .map(|_| bilinear_tap(w, h, r.gen_range(0.0..(w - 1) as f64), r.gen_range(0.0..(h - 1) as f64)).unwrap())
        .collect();
    let gs = uniform(20 * c, -1.0, 1.0, "g-bil-g");
    let f = |m: &Raster| {
        let mut out = vec![0.0; c];
        taps.iter()
            .zip(gs.chunks(c))
            .map(|(tap, g)| {
                tap.gather(m, &mut out);
                dot(&out, g)
            })
            .sum::<f64>()
    };
    let mut an = Raster::zeros(w, h, c);
    for (tap, g) in taps.iter().zip(gs.chunks(c)) {
        tap.scatter(g, &mut an);
    }
    t.add(
        "bilinear",
        fd_check(map.data.len(), COUNT, "bilinear", TOL, |i| an.data[i], |i, d| {
            let mut m = map.clone();
            m.data[i] += d;
            f(&m)
        }),
    )?;

    let grid = tiny_arch().grid;
    let vol = random_volume(grid.dims, c, "g-tri-vol");
    let b = grid.sample_bounds();
    let taps: Vec<_> = (0..60)
        .map(|_| {
            let p = Vec3::new(
                r.gen_range(b.min.x..b.max.x),
                r.gen_range(b.min.y..b.max.y),
                r.gen_range(b.min.z..b.max.z),
            );
            trilinear_tap(&grid, &p).unwrap()
        })
        .collect();
    let gs = uniform(60 * c, -1.0, 1.0, "g-tri-g");
    let mut an = Volume::zeros(grid.dims, c);
    for (tap, g) in taps.iter().zip(gs.chunks(c)) {
        tap.scatter(g, &mut an);
    }
    // Only voxels touched by some tap carry signal; probe those.
    let touched: Vec<usize> = (0..an.data.len()).filter(|&i| an.data[i] != 0.0).collect();
    t.add(
        "trilinear",
        fd_check(touched.len(), COUNT, "trilinear", TOL, |i| an.data[touched[i]], |i, d| {
            let mut v = vol.clone();
            v.data[touched[i]] += d;
            let mut out = vec![0.0; c];
            taps.iter()
                .zip(gs.chunks(c))
                .map(|(tap, g)| {
                    tap.gather(&v, &mut out);
                    dot(&out, g)
                })
                .sum::<f64>()
        }),
    )
}

fn cost_volume(t: &mut Tally) -> Result<(), String> {
    let views = random_views(3, 12, 10, "g-cv-views");
    let grid = tiny_arch().grid;
    let c = 2;
    let maps: Vec<Raster> = (0..views.len())
        .map(|i| Raster::from_vec(6, 5, c, uniform(6 * 5 * c, -1.0, 1.0, &format!("g-cv-map{i}"))).unwrap())
        .collect();
    let g = random_volume(grid.dims, c, "g-cv-g");
    let value = |maps: &[Raster]| {
        let srcs: Vec<SourceFeatures> = maps
            .iter()
            .zip(&views)
            .map(|(m, v)| SourceFeatures {
                features: m,
                intrinsics: &v.intrinsics,
                pose: &v.pose,
            })
            .collect();
        dot(&build_cost_volume(&srcs, &grid).unwrap().data.data, &g.data)
    };
    let srcs: Vec<SourceFeatures> = maps
        .iter()
        .zip(&views)
        .map(|(m, v)| SourceFeatures {
            features: m,
            intrinsics: &v.intrinsics,
            pose: &v.pose,
        })
        .collect();
    let an = cost_volume_backward(&srcs, &grid, &g).map_err(|e| e.to_string())?;
    let per = maps[0].data.len();
    // Texels no voxel projects onto carry no signal; probe the rest.
    let touched: Vec<usize> = (0..per * maps.len()).filter(|&i| an[i / per].data[i % per] != 0.0).collect();
    t.add(
        "cost_volume",
        fd_check(touched.len(), COUNT, "cost-volume", TOL, |k| an[touched[k] / per].data[touched[k] % per], |k, d| {
            let i = touched[k];
            let mut m = maps.clone();
            m[i / per].data[i % per] += d;
            value(&m)
        }),
    )
}

fn mlp(t: &mut Tally) -> Result<(), String> {
    let input = 7;
    let mut specs = Vec::new();
    let net = Mlp::specs(input, 8, 2, 0.1, 0.0, 0, &mut specs);
    let mut params = ParamSet::from_specs(&specs, &mut rng("g-mlp-init"));
    for p in &mut params.tensors {
        if p.name.ends_with("bias") {
            p.data = uniform(p.data.len(), -0.3, 0.3, &format!("g-mlp-{}", p.name));
        }
    }
    let xs: Vec<Vec<f64>> = (0..6).map(|i| uniform(input, -1.0, 1.0, &format!("g-mlp-x{i}"))).collect();
    let gh: Vec<[f64; HEAD_WIDTH]> = (0..6)
        .map(|i| {
            let v = uniform(HEAD_WIDTH, -1.0, 1.0, &format!("g-mlp-g{i}"));
            [v[0], v[1], v[2], v[3]]
        })
        .collect();
    let mut s = net.scratch();
    let value = |p: &ParamSet, xs: &[Vec<f64>], s: &mut wsocc::model::MlpScratch| {
        let mut out = [0.0; HEAD_WIDTH];
        xs.iter()
            .zip(&gh)
            .map(|(x, g)| {
                net.forward(p, x, s, &mut out);
                dot(&out, g)
            })
            .sum::<f64>()
    };
    let mut grads = Gradients::zeros_like(&params);
    let mut gx = vec![vec![0.0; input]; xs.len()];
    for ((x, g), gx) in xs.iter().zip(&gh).zip(&mut gx) {
        let mut out = [0.0; HEAD_WIDTH];
        net.forward(&params, x, &mut s, &mut out);
        net.backward(&params, x, &mut s, g, &mut grads, Some(gx));
    }
    let index: Vec<(usize, usize)> = params
        .tensors
        .iter()
        .enumerate()
        .flat_map(|(t, p)| (0..p.data.len()).map(move |i| (t, i)))
        .collect();
    t.add(
        "mlp/params",
        fd_check(index.len(), COUNT, "mlp-params", TOL, |k| grads.tensors[index[k].0][index[k].1], |k, d| {
            let mut p = params.clone();
            p.tensors[index[k].0].data[index[k].1] += d;
            value(&p, &xs, &mut s)
        }),
    )?;
    let mut s = net.scratch();
    t.add(
        "mlp/input",
        fd_check(xs.len() * input, COUNT, "mlp-input", TOL, |k| gx[k / input][k % input], |k, d| {
            let mut x2 = xs.clone();
            x2[k / input][k % input] += d;
            value(&params, &x2, &mut s)
        }),
    )
}

/// Parameters with random biases so few activations sit exactly on a kink.
fn random_model(seed: u64) -> FieldModel {
    let mut m = FieldModel::new(tiny_arch(), seed).unwrap();
    let mut r = rng("g-model-bias");
    for p in &mut m.params.tensors {
        if p.name.ends_with("bias") {
            p.data.iter_mut().for_each(|b| *b = r.gen_range(-0.3..0.3));
        }
    }
    m
}

fn param_index(m: &FieldModel) -> Vec<(usize, usize)> {
    m.params
        .tensors
        .iter()
        .enumerate()
        .flat_map(|(t, p)| (0..p.data.len()).map(move |i| (t, i)))
        .collect()
}

fn field_query(t: &mut Tally) -> Result<(), String> {
    let m = random_model(5);
    let grid = m.arch.grid;
    let c = m.arch.volume_channels;
    let vol = random_volume(grid.dims, c, "g-field-vol");
    let b = grid.sample_bounds();
    let mut r = rng("g-field-pts");
    let pts: Vec<(Vec3, Vec3, f64, [f64; 3])> = (0..30)
        .map(|_| {
            let p = Vec3::new(
                r.gen_range(b.min.x..b.max.x),
                r.gen_range(b.min.y..b.max.y),
                r.gen_range(b.min.z..b.max.z),
            );
            let d = Vec3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(0.2..1.0)).normalize();
            (p, d, r.gen_range(-1.0..1.0), [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)])
        })
        .collect();
    let value = |m: &FieldModel, v: &Volume| {
        let enc = SceneEncoding::from_volume(FeatureVolume { grid, data: v.clone() });
        pts.iter()
            .map(|(p, d, ws, wr)| {
                let f = m.query(&enc, p, d).unwrap();
                ws * f.sigma + dot(&f.rgb, wr)
            })
            .sum::<f64>()
    };
    let enc = SceneEncoding::from_volume(FeatureVolume { grid, data: vol.clone() });
    let mut grads = m.zero_grads();
    let mut vg = VolumeGrad::default();
    let mut s = m.scratch();
    for (p, d, ws, wr) in &pts {
        m.query_backward(&enc, p, d, *ws, *wr, &mut s, &mut grads, &mut vg)
            .map_err(|e| e.to_string())?;
    }
    let dv = vg.to_dense(grid.dims, c);
    let idx: Vec<(usize, usize)> = param_index(&m)
        .into_iter()
        .filter(|&(ti, _)| m.params.tensors[ti].name.starts_with("mlp."))
        .collect();
    t.add(
        "field/mlp",
        fd_check(idx.len(), COUNT, "field-mlp", TOL, |k| grads.tensors[idx[k].0][idx[k].1], |k, d| {
            let mut m2 = m.clone();
            m2.params.tensors[idx[k].0].data[idx[k].1] += d;
            value(&m2, &vol)
        }),
    )?;
    let touched: Vec<usize> = (0..dv.data.len()).filter(|&i| dv.data[i] != 0.0).collect();
    t.add(
        "field/volume",
        fd_check(touched.len(), COUNT, "field-volume", TOL, |k| dv.data[touched[k]], |k, d| {
            let mut v = vol.clone();
            v.data[touched[k]] += d;
            value(&m, &v)
        }),
    )
}

/// The whole pipeline on 8x8 images: extractor, cost volume, U-Net, field,
/// renderer and loss.
fn end_to_end(t: &mut Tally) -> Result<(), String> {
    let m = random_model(7);
    let views = random_views(3, 8, 8, "g-e2e-views");
    let target = &random_views(4, 8, 8, "g-e2e-target")[3];
    let mut r = rng("g-e2e-rays");
    let rays: Vec<RayTarget> = (0..24)
        .map(|_| {
            let (u, v) = (r.gen_range(0.0..8.0), r.gen_range(0.0..8.0));
            RayTarget {
                ray: pixel_to_ray(&target.intrinsics, &target.pose, u, v),
                forward: target.pose.forward(),
                background: [r.gen(), r.gen(), r.gen()],
                target: [r.gen(), r.gen(), r.gen()],
                jitter: None,
            }
        })
        .collect();
    let loss = |m: &FieldModel, record: bool| {
        let enc = m.encode(&views, record).unwrap();
        LossGraph::forward(m, enc, rays.clone(), 0.1).unwrap()
    };
    let graph = loss(&m, true);
    let grads = graph.backward(&m).map_err(|e| e.to_string())?;
    ensure!(grads.is_finite(), "non-finite end-to-end gradient");
    let idx = param_index(&m);
    t.add(
        "end_to_end",
        fd_check(idx.len(), COUNT, "end-to-end", TOL, |k| grads.tensors[idx[k].0][idx[k].1], |k, d| {
            let mut m2 = m.clone();
            m2.params.tensors[idx[k].0].data[idx[k].1] += d;
            loss(&m2, false).loss.total
        }),
    )
}

pub fn run() -> Result<String, String> {
    let start = std::time::Instant::now();
    let mut t = Tally {
        lines: vec![],
        worst: 0.0,
        probes: 0,
    };
    alpha_of_density(&mut t)?;
    compositing(&mut t)?;
    convolution(&mut t, "conv3d-s1", ConvShape::conv3d(3, 1, 2, 3), [5, 4, 4])?;
    convolution(&mut t, "conv3d-s2", ConvShape::conv3d(3, 2, 2, 3), [6, 4, 4])?;
    convolution(&mut t, "conv2d", ConvShape::conv2d(3, 2, 3, 4), [7, 6, 1])?;
    activations(&mut t)?;
    interpolation(&mut t)?;
    cost_volume(&mut t)?;
    mlp(&mut t)?;
    field_query(&mut t)?;
    end_to_end(&mut t)?;
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 120.0, "took {secs:.0}s");
    Ok(format!(
        "{} probes over {} checks, max rel err {:.1e} < {TOL:e}",
        t.probes,
        t.lines.len(),
        t.worst
    ))
}
