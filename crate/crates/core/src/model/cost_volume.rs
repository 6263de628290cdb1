//! World-frame cost volume: every voxel center is projected into each source
//! view, the pixel-aligned features are sampled there, and their per-channel
//! population variance across the observing views becomes the voxel's cost.

use crate::geometry::{bilinear_tap, project_point, BilinearTap, CameraIntrinsics, GridSpec, Pose};
use crate::par;
use crate::tensor::{Raster, Volume};
use crate::{Error, Result};

/// A source view as seen by the cost volume.
#[derive(Clone, Copy, Debug)]
pub struct SourceFeatures<'a> {
    pub features: &'a Raster,
    pub intrinsics: &'a CameraIntrinsics,
    pub pose: &'a Pose,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostVolume {
    pub grid: GridSpec,
    /// Per-channel variance, one value per feature channel.
    pub data: Volume,
    /// Number of views observing each voxel.
    pub valid_count: Vec<u32>,
    pub n_views: usize,
}

/// Feature-map lookup for world point `p`, or `None` if the view does not
/// observe it (behind the camera or outside the image).
pub fn feature_tap(src: &SourceFeatures<'_>, p: &crate::geometry::Vec3) -> Option<BilinearTap> {
    let (u, v, _) = project_point(src.intrinsics, src.pose, p).ok()?;
    if !src.intrinsics.contains_pixel(u, v) {
        return None;
    }
    let scale_x = src.intrinsics.width as f64 / src.features.width as f64;
    let scale_y = src.intrinsics.height as f64 / src.features.height as f64;
    let fu = (u / scale_x).min((src.features.width - 1) as f64);
    let fv = (v / scale_y).min((src.features.height - 1) as f64);
    bilinear_tap(src.features.width, src.features.height, fu, fv).ok()
}

fn check_sources(sources: &[SourceFeatures<'_>]) -> Result<usize> {
    let first = sources
        .first()
        .ok_or_else(|| Error::Shape("cost volume needs at least one view".into()))?;
    let c = first.features.channels;
    if sources.iter().any(|s| s.features.channels != c) {
        return Err(Error::Shape("source feature maps disagree on channel count".into()));
    }
    Ok(c)
}

pub fn build_cost_volume(sources: &[SourceFeatures<'_>], grid: &GridSpec) -> Result<CostVolume> {
    let c = check_sources(sources)?;
    let row = grid.dims[0];
    let rows = grid.dims[1] * grid.dims[2];
    let per_row = par::map_range(rows, |r| {
        let j = r % grid.dims[1];
        let k = r / grid.dims[1];
        let mut vals = vec![0.0; row * c];
        let mut cnt = vec![0u32; row];
        let mut samples = vec![0.0; sources.len() * c];
        for i in 0..row {
            let p = grid.voxel_center(i, j, k);
            let mut n = 0usize;
            for src in sources {
                if let Some(tap) = feature_tap(src, &p) {
                    tap.gather(src.features, &mut samples[n * c..(n + 1) * c]);
                    n += 1;
                }
            }
            cnt[i] = n as u32;
            variance(&samples[..n * c], n, c, &mut vals[i * c..(i + 1) * c]);
        }
        (vals, cnt)
    });
    let mut data = Vec::with_capacity(grid.voxel_count() * c);
    let mut valid_count = Vec::with_capacity(grid.voxel_count());
    for (vals, cnt) in per_row {
        data.extend_from_slice(&vals);
        valid_count.extend_from_slice(&cnt);
    }
    let data = Volume::from_vec(grid.dims, c, data)?;
    Ok(CostVolume {
        grid: *grid,
        data,
        valid_count,
        n_views: sources.len(),
    })
}

/// Population variance of `n` stacked `c`-vectors; zero when `n ≤ 1`.
fn variance(samples: &[f64], n: usize, c: usize, out: &mut [f64]) {
    out.fill(0.0);
    if n <= 1 {
        return;
    }
    let n = n as f64;
    let mut mean = vec![0.0; c];
    for s in samples.chunks_exact(c) {
        for (m, x) in mean.iter_mut().zip(s) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    for s in samples.chunks_exact(c) {
        for ((o, x), m) in out.iter_mut().zip(s).zip(&mean) {
            let d = x - m;
            *o += d * d;
        }
    }
    out.iter_mut().for_each(|o| *o /= n);
}

/// Back-propagates `grad` (shaped like the cost data) into one gradient map
/// per source view.
pub fn cost_volume_backward(
    sources: &[SourceFeatures<'_>],
    grid: &GridSpec,
    grad: &Volume,
) -> Result<Vec<Raster>> {
    let c = check_sources(sources)?;
    let n_vox = grid.voxel_count();
    let zero_maps = || -> Vec<Raster> {
        sources
            .iter()
            .map(|s| Raster::zeros(s.features.width, s.features.height, c))
            .collect()
    };
    let maps = par::chunked_reduce(
        n_vox,
        |range| {
            let mut maps = zero_maps();
            let mut samples = vec![0.0; sources.len() * c];
            let mut taps: Vec<(usize, BilinearTap)> = Vec::with_capacity(sources.len());
            let mut mean = vec![0.0; c];
            let mut g = vec![0.0; c];
            for vi in range {
                let gv = &grad.data[vi * c..(vi + 1) * c];
                if gv.iter().all(|&x| x == 0.0) {
                    continue;
                }
                let i = vi % grid.dims[0];
                let j = (vi / grid.dims[0]) % grid.dims[1];
                let k = vi / (grid.dims[0] * grid.dims[1]);
                let p = grid.voxel_center(i, j, k);
                taps.clear();
                for (s, src) in sources.iter().enumerate() {
                    if let Some(tap) = feature_tap(src, &p) {
                        let n = taps.len();
                        tap.gather(src.features, &mut samples[n * c..(n + 1) * c]);
                        taps.push((s, tap));
                    }
                }
                let n = taps.len();
                if n <= 1 {
                    continue;
                }
                let inv = 1.0 / n as f64;
                mean.fill(0.0);
                for sample in samples[..n * c].chunks_exact(c) {
                    for (m, x) in mean.iter_mut().zip(sample) {
                        *m += x;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                // d var / d f_v = 2 (f_v - mean) / n; the mean's own
                // dependence cancels because deviations sum to zero.
                for (slot, (s, tap)) in taps.iter().enumerate() {
                    let f = &samples[slot * c..(slot + 1) * c];
                    for ch in 0..c {
                        g[ch] = 2.0 * inv * (f[ch] - mean[ch]) * gv[ch];
                    }
                    tap.scatter(&g, &mut maps[*s]);
                }
            }
            maps
        },
        |acc, part| {
            for (a, p) in acc.iter_mut().zip(part) {
                par::add_assign(&mut a.data, &p.data);
            }
        },
    );
    Ok(maps.unwrap_or_else(zero_maps))
}
