//! Photometric loss with the opacity regularizer, and the recorded graph of
//! one training step.

use serde::{Deserialize, Serialize};

use crate::geometry::{Ray, Vec3};
use crate::model::{FieldModel, Gradients, SceneEncoding, VolumeGrad};
use crate::par;
use crate::renderer::{render_ray, render_ray_backward, RaySamples, RenderedPixel};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mse: f64,
    pub beta: f64,
    pub total: f64,
}

/// `mse` averages over pixels and channels; `beta` is the mean of
/// `alpha (1 - alpha)` over every ray sample.
pub fn compute_loss(
    targets: &[[f64; 3]],
    rendered: &[RenderedPixel],
    alphas: &[f64],
    beta_weight: f64,
) -> Result<LossBreakdown> {
    if targets.is_empty() || targets.len() != rendered.len() {
        return Err(Error::Shape(format!(
            "{} targets vs {} rendered pixels",
            targets.len(),
            rendered.len()
        )));
    }
    let se: f64 = targets
        .iter()
        .zip(rendered)
        .map(|(t, r)| (0..3).map(|c| (t[c] - r.color[c]).powi(2)).sum::<f64>())
        .sum();
    let mse = se / (3 * targets.len()) as f64;
    let beta = if alphas.is_empty() {
        0.0
    } else {
        alphas.iter().map(|a| a * (1.0 - a)).sum::<f64>() / alphas.len() as f64
    };
    Ok(LossBreakdown {
        mse,
        beta,
        total: mse + beta_weight * beta,
    })
}

/// One supervised ray.
#[derive(Clone, Debug)]
pub struct RayTarget {
    pub ray: Ray,
    /// Camera forward axis, for z-depths.
    pub forward: Vec3,
    pub background: [f64; 3],
    pub target: [f64; 3],
    /// Seed and index of the ray's jitter stream; `None` for fixed samples.
    pub jitter: Option<(u64, u64)>,
}

struct RayRecord {
    samples: Option<RaySamples>,
    pixel: RenderedPixel,
}

/// A rendered batch of rays with everything needed to differentiate the loss.
pub struct LossGraph {
    pub encoding: SceneEncoding,
    pub rays: Vec<RayTarget>,
    records: Vec<RayRecord>,
    pub beta_weight: f64,
    pub loss: LossBreakdown,
}

impl LossGraph {
    pub fn forward(model: &FieldModel, encoding: SceneEncoding, rays: Vec<RayTarget>, beta_weight: f64) -> Result<Self> {
        let ranges = par::split_ranges(rays.len(), par::REDUCE_CHUNKS * 4);
        let parts = par::map_slice(&ranges, |r| -> Result<Vec<RayRecord>> {
            let mut s = model.scratch();
            r.clone()
                .map(|i| {
                    let rt = &rays[i];
                    let mut rng = rt.jitter.map(|(seed, idx)| crate::rng::stream(seed, "ray-jitter", idx));
                    let out = render_ray(model, &encoding, &rt.ray, &rt.forward, rt.background, rng.as_mut(), &mut s)?;
                    Ok(match out {
                        Some((samples, pixel)) => RayRecord {
                            samples: Some(samples),
                            pixel,
                        },
                        None => RayRecord {
                            samples: None,
                            pixel: RenderedPixel {
                                color: rt.background,
                                accumulated_opacity: 0.0,
                                depth: None,
                            },
                        },
                    })
                })
                .collect()
        });
        let mut records = Vec::with_capacity(rays.len());
        for p in parts {
            records.extend(p?);
        }
        let targets: Vec<[f64; 3]> = rays.iter().map(|r| r.target).collect();
        let pixels: Vec<RenderedPixel> = records.iter().map(|r| r.pixel).collect();
        let alphas: Vec<f64> = records
            .iter()
            .filter_map(|r| r.samples.as_ref())
            .flat_map(|s| s.alpha.iter().copied())
            .collect();
        let loss = compute_loss(&targets, &pixels, &alphas, beta_weight)?;
        Ok(Self {
            encoding,
            rays,
            records,
            beta_weight,
            loss,
        })
    }

    pub fn pixels(&self) -> Vec<RenderedPixel> {
        self.records.iter().map(|r| r.pixel).collect()
    }

    /// Exact gradient of `loss.total` with respect to every parameter.
    /// Fails with `Graph` unless the encoding was recorded.
    pub fn backward(&self, model: &FieldModel) -> Result<Gradients> {
        if !self.encoding.is_recorded() {
            return Err(Error::Graph);
        }
        let n_px = self.rays.len() as f64;
        let n_samples: usize = self
            .records
            .iter()
            .filter_map(|r| r.samples.as_ref())
            .map(|s| s.len())
            .sum();
        let beta_scale = if n_samples > 0 {
            self.beta_weight / n_samples as f64
        } else {
            0.0
        };
        let partial = par::chunked_reduce(
            self.rays.len(),
            |range| -> Result<(Gradients, VolumeGrad)> {
                let mut grads = model.zero_grads();
                let mut vol = VolumeGrad::default();
                let mut s = model.scratch();
                for i in range {
                    let (rt, rec) = (&self.rays[i], &self.records[i]);
                    let Some(samples) = &rec.samples else { continue };
                    let mut gc = [0.0; 3];
                    for c in 0..3 {
                        gc[c] = 2.0 * (rec.pixel.color[c] - rt.target[c]) / (3.0 * n_px);
                    }
                    let ga: Vec<f64> = samples.alpha.iter().map(|a| beta_scale * (1.0 - 2.0 * a)).collect();
                    render_ray_backward(model, &self.encoding, &rt.ray, samples, rt.background, gc, &ga, &mut s, &mut grads, &mut vol)?;
                }
                Ok((grads, vol))
            },
            |acc, part| {
                *acc = match (std::mem::replace(acc, Err(Error::Graph)), part) {
                    (Ok((mut g, mut v)), Ok((pg, pv))) => {
                        g.add_all(&pg);
                        v.append(pv);
                        Ok((g, v))
                    }
                    (Err(e), _) | (_, Err(e)) => Err(e),
                };
            },
        );
        let (mut grads, vol) = match partial {
            Some(r) => r?,
            None => (model.zero_grads(), VolumeGrad::default()),
        };
        let v = &self.encoding.volume.data;
        let dense = vol.to_dense(v.dims, v.channels);
        model.encoder_backward(&self.encoding, &dense, &mut grads)?;
        Ok(grads)
    }
}
