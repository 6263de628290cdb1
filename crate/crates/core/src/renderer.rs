//! Volumetric rendering of a field: ray sampling inside the grid, opacity
//! from density, front-to-back compositing over an empty-scene background,
//! depth from the running opacity sum, and occupancy export.
//!
//! Opacity is `1 - exp(-sigma)` with no step-length factor, so a density is
//! tied to the sample count it was trained with.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::geometry::{pixel_to_ray, ray_aabb_intersect, Aabb, CameraIntrinsics, GridSpec, Pose, Ray, Vec3};
use crate::model::{FieldModel, Gradients, MlpScratch, SceneEncoding, VolumeGrad};
use crate::par;
use crate::rng::StreamRng;
use crate::scenegen::{write_depth16, write_gray8, write_rgb8};
use crate::tensor::{Raster, Volume};
use crate::{Error, Result};

/// Depth at which the running opacity sum counts as a surface.
pub const DEPTH_THRESHOLD: f64 = 0.5;

/// Rays shorter than this inside the box are treated as misses.
const MIN_SEGMENT: f64 = 1e-9;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RaySamples {
    /// Ray parameters (distance from the origin).
    pub t: Vec<f64>,
    /// Camera z-depths, ascending.
    pub z: Vec<f64>,
    pub sigma: Vec<f64>,
    pub alpha: Vec<f64>,
    pub rgb: Vec<[f64; 3]>,
}

impl RaySamples {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderedPixel {
    pub color: [f64; 3],
    pub accumulated_opacity: f64,
    /// `None` when the opacity sum never reaches the threshold.
    pub depth: Option<f64>,
}

/// `n` ray parameters in the segment where `ray` crosses `aabb`: evenly
/// spaced including both ends, or one uniform draw per equal bin with
/// `jitter`.
pub fn sample_along_ray(ray: &Ray, aabb: &Aabb, n: usize, jitter: Option<&mut StreamRng>) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 samples per ray, got {n}")));
    }
    let (t0, t1) = ray_aabb_intersect(ray, aabb)
        .filter(|(a, b)| b - a > MIN_SEGMENT)
        .ok_or(Error::NoIntersection)?;
    Ok(match jitter {
        None => {
            let step = (t1 - t0) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { t1 } else { t0 + step * i as f64 })
                .collect()
        }
        Some(rng) => {
            let bin = (t1 - t0) / n as f64;
            (0..n)
                .map(|i| t0 + bin * (i as f64 + rng.gen::<f64>()))
                .collect()
        }
    })
}

pub fn density_to_alpha(sigma: f64) -> Result<f64> {
    if !(sigma >= 0.0) {
        return Err(Error::Domain(format!("density {sigma} is negative")));
    }
    Ok(-(-sigma).exp_m1())
}

/// Compositing weights `w_i = alpha_i * prod_{j<i} (1 - alpha_j)` and the
/// final transmittance.
pub fn composite_weights(alpha: &[f64]) -> (Vec<f64>, f64) {
    let mut trans = 1.0;
    let w = alpha
        .iter()
        .map(|&a| {
            let w = a * trans;
            trans *= 1.0 - a;
            w
        })
        .collect();
    (w, trans)
}

/// First depth where the running sum of raw opacities reaches 0.5.
pub fn extract_depth(z: &[f64], alpha: &[f64]) -> Option<f64> {
    let mut acc = 0.0;
    for (&zi, &a) in z.iter().zip(alpha) {
        acc += a;
        if acc >= DEPTH_THRESHOLD {
            return Some(zi);
        }
    }
    None
}

pub fn composite(samples: &RaySamples, background: [f64; 3]) -> RenderedPixel {
    let (w, _) = composite_weights(&samples.alpha);
    let mut color = [0.0; 3];
    let mut acc = 0.0;
    for (wi, c) in w.iter().zip(&samples.rgb) {
        for ch in 0..3 {
            color[ch] += wi * c[ch];
        }
        acc += wi;
    }
    for ch in 0..3 {
        color[ch] += (1.0 - acc) * background[ch];
    }
    RenderedPixel {
        color,
        accumulated_opacity: acc,
        depth: extract_depth(&samples.z, &samples.alpha),
    }
}

/// Gradients of [`composite`]'s colour with respect to every opacity and
/// sample colour, given `d loss / d color`.
///
/// Uses the back-to-front recursion `R_i = a_i c_i + (1 - a_i) R_{i+1}`,
/// `R_n = background`, for which `dC/da_i = T_i (c_i - R_{i+1})`.
pub fn composite_backward(
    alpha: &[f64],
    rgb: &[[f64; 3]],
    background: [f64; 3],
    grad_color: [f64; 3],
) -> (Vec<f64>, Vec<[f64; 3]>) {
    let n = alpha.len();
    let mut trans = Vec::with_capacity(n);
    let mut t = 1.0;
    for &a in alpha {
        trans.push(t);
        t *= 1.0 - a;
    }
    let mut d_alpha = vec![0.0; n];
    let mut d_rgb = vec![[0.0; 3]; n];
    let mut rest = background;
    for i in (0..n).rev() {
        let mut g = 0.0;
        for ch in 0..3 {
            g += grad_color[ch] * (rgb[i][ch] - rest[ch]);
            d_rgb[i][ch] = grad_color[ch] * alpha[i] * trans[i];
            rest[ch] = alpha[i] * rgb[i][ch] + (1.0 - alpha[i]) * rest[ch];
        }
        d_alpha[i] = trans[i] * g;
    }
    (d_alpha, d_rgb)
}

/// Region where the field can be sampled.
pub fn render_bounds(model: &FieldModel) -> Aabb {
    model.grid().sample_bounds()
}

/// Samples, queries and composites one ray. `None` when the ray misses the
/// field.
#[allow(clippy::too_many_arguments)]
pub fn render_ray(
    model: &FieldModel,
    enc: &SceneEncoding,
    ray: &Ray,
    forward: &Vec3,
    background: [f64; 3],
    jitter: Option<&mut StreamRng>,
    scratch: &mut MlpScratch,
) -> Result<Option<(RaySamples, RenderedPixel)>> {
    let t = match sample_along_ray(ray, &render_bounds(model), model.arch.n_samples, jitter) {
        Ok(t) => t,
        Err(Error::NoIntersection) => return Ok(None),
        Err(e) => return Err(e),
    };
    let cos = ray.direction.dot(forward);
    let mut s = RaySamples {
        z: t.iter().map(|ti| ti * cos).collect(),
        sigma: Vec::with_capacity(t.len()),
        alpha: Vec::with_capacity(t.len()),
        rgb: Vec::with_capacity(t.len()),
        t,
    };
    for &ti in &s.t {
        let f = model.query_with(enc, &ray.at(ti), &ray.direction, scratch)?;
        s.sigma.push(f.sigma);
        s.alpha.push(density_to_alpha(f.sigma)?);
        s.rgb.push(f.rgb);
    }
    let px = composite(&s, background);
    Ok(Some((s, px)))
}

/// Back-propagates through [`render_ray`]: `grad_color` on the composited
/// colour plus `grad_alpha` added directly to each opacity.
#[allow(clippy::too_many_arguments)]
pub fn render_ray_backward(
    model: &FieldModel,
    enc: &SceneEncoding,
    ray: &Ray,
    samples: &RaySamples,
    background: [f64; 3],
    grad_color: [f64; 3],
    grad_alpha: &[f64],
    scratch: &mut MlpScratch,
    grads: &mut Gradients,
    vol: &mut VolumeGrad,
) -> Result<()> {
    let (mut d_alpha, d_rgb) = composite_backward(&samples.alpha, &samples.rgb, background, grad_color);
    for (d, g) in d_alpha.iter_mut().zip(grad_alpha) {
        *d += g;
    }
    for i in 0..samples.len() {
        // d alpha / d sigma = exp(-sigma) = 1 - alpha.
        let d_sigma = d_alpha[i] * (-samples.sigma[i]).exp();
        model.query_backward(enc, &ray.at(samples.t[i]), &ray.direction, d_sigma, d_rgb[i], scratch, grads, vol)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    pub rgb: Raster,
    /// Meters, 0 where invalid.
    pub depth: Raster,
    pub opacity: Raster,
}

impl RenderedView {
    /// Writes `rgb.png`, `depth.png` (16-bit millimeters) and `opacity.png`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_rgb8(&dir.join("rgb.png"), &self.rgb)?;
        write_depth16(&dir.join("depth.png"), &self.depth)?;
        write_gray8(&dir.join("opacity.png"), &self.opacity)
    }
}

/// Renders every pixel of a camera. Rays that miss the field keep the
/// background colour and invalid depth.
pub fn render_view(
    model: &FieldModel,
    enc: &SceneEncoding,
    intrinsics: &CameraIntrinsics,
    pose: &Pose,
    background: &Raster,
    jitter_seed: Option<u64>,
) -> Result<RenderedView> {
    let (w, h) = (intrinsics.width, intrinsics.height);
    if background.width != w || background.height != h || background.channels != 3 {
        return Err(Error::Shape(format!(
            "background {}x{}x{} does not match camera {w}x{h}",
            background.width, background.height, background.channels
        )));
    }
    let forward = pose.forward();
    let rows = par::map_range(h, |y| -> Result<Vec<RenderedPixel>> {
        let mut scratch = model.scratch();
        let mut rng = jitter_seed.map(|s| crate::rng::stream(s, "render-jitter", y as u64));
        (0..w)
            .map(|x| {
                let bg = background.pixel(x, y);
                let bg = [bg[0], bg[1], bg[2]];
                let ray = pixel_to_ray(intrinsics, pose, x as f64, y as f64);
                let r = render_ray(model, enc, &ray, &forward, bg, rng.as_mut(), &mut scratch)?;
                Ok(r.map_or(
                    RenderedPixel {
                        color: bg,
                        accumulated_opacity: 0.0,
                        depth: None,
                    },
                    |(_, px)| px,
                ))
            })
            .collect()
    });
    let mut view = RenderedView {
        rgb: Raster::zeros(w, h, 3),
        depth: Raster::zeros(w, h, 1),
        opacity: Raster::zeros(w, h, 1),
    };
    for (y, row) in rows.into_iter().enumerate() {
        for (x, px) in row?.into_iter().enumerate() {
            view.rgb.pixel_mut(x, y).copy_from_slice(&px.color);
            view.depth.pixel_mut(x, y)[0] = px.depth.unwrap_or(0.0);
            view.opacity.pixel_mut(x, y)[0] = px.accumulated_opacity;
        }
    }
    Ok(view)
}

/// Per-voxel opacity, the predicted occupancy.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    pub grid: GridSpec,
    /// One value per voxel, x fastest.
    pub alpha: Vec<f64>,
}

/// Direction passed to the field when only density matters.
pub fn canonical_direction() -> Vec3 {
    Vec3::z()
}

/// Queries the field at every center of `grid`.
pub fn extract_occupancy(model: &FieldModel, enc: &SceneEncoding, grid: &GridSpec) -> Result<OccupancyGrid> {
    let [nx, ny, nz] = grid.dims;
    let points: Vec<Vec3> = (0..nz)
        .flat_map(|k| (0..ny).flat_map(move |j| (0..nx).map(move |i| (i, j, k))))
        .map(|(i, j, k)| grid.voxel_center(i, j, k))
        .collect();
    let dirs = vec![canonical_direction(); points.len()];
    let samples = model.query_batch(enc, &points, &dirs)?;
    let alpha = samples
        .iter()
        .map(|s| density_to_alpha(s.sigma))
        .collect::<Result<_>>()?;
    Ok(OccupancyGrid { grid: *grid, alpha })
}

pub const OCCV_MAGIC: &[u8; 4] = b"OCCV";
pub const OCCV_VERSION: u8 = 1;
/// Header bytes: magic, version, dims, origin, spacing.
pub const OCCV_HEADER_LEN: usize = 4 + 1 + 12 + 12 + 4;

impl OccupancyGrid {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(OCCV_HEADER_LEN + self.alpha.len() * 4);
        out.extend_from_slice(OCCV_MAGIC);
        out.push(OCCV_VERSION);
        for d in self.grid.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for o in self.grid.origin.iter() {
            out.extend_from_slice(&(*o as f32).to_le_bytes());
        }
        out.extend_from_slice(&(self.grid.spacing as f32).to_le_bytes());
        for a in &self.alpha {
            out.extend_from_slice(&(*a as f32).to_le_bytes());
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |r: &str| Error::format(path, r);
        if bytes.len() < OCCV_HEADER_LEN || &bytes[..4] != OCCV_MAGIC {
            return Err(fail("not an occupancy file"));
        }
        if bytes[4] != OCCV_VERSION {
            return Err(fail("unsupported occupancy version"));
        }
        let word = |i: usize| -> [u8; 4] { bytes[5 + 4 * i..9 + 4 * i].try_into().unwrap() };
        let dims = [0, 1, 2].map(|i| u32::from_le_bytes(word(i)) as usize);
        let origin = Vec3::new(
            f32::from_le_bytes(word(3)) as f64,
            f32::from_le_bytes(word(4)) as f64,
            f32::from_le_bytes(word(5)) as f64,
        );
        let spacing = f32::from_le_bytes(word(6)) as f64;
        let grid = GridSpec::new(origin, spacing, dims).map_err(|e| fail(&e.to_string()))?;
        let body = &bytes[OCCV_HEADER_LEN..];
        if body.len() != grid.voxel_count() * 4 {
            return Err(fail("value count does not match dims"));
        }
        let alpha = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        Ok(Self { grid, alpha })
    }

    pub fn as_volume(&self) -> Volume {
        Volume {
            dims: self.grid.dims,
            channels: 1,
            data: self.alpha.clone(),
        }
    }
}
