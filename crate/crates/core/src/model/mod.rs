//! The occupancy predictor: 2D feature extractor, world-frame cost volume,
//! 3D U-Net and field MLP, with hand-written reverse-mode gradients.
//!
//! A forward pass is split in two. [`FieldModel::encode`] turns source views
//! into a [`SceneEncoding`] (feature maps, cost volume, feature volume); the
//! field is then queried point by point. Gradients flow back the same way:
//! per-sample MLP gradients land in a [`VolumeGrad`], which
//! [`FieldModel::encoder_backward`] pushes through the U-Net, the cost volume
//! and the extractor.

pub mod checkpoint;
pub mod conv;
pub mod cost_volume;
pub mod extractor;
pub mod mlp;
pub mod params;
pub mod unet;

use serde::{Deserialize, Serialize};

use crate::geometry::{bilinear_sample, project_point, trilinear_tap, Aabb, GridSpec, TrilinearTap, Vec3};
use crate::par;
use crate::scenegen::CameraView;
use crate::tensor::{Raster, Volume};
use crate::{Error, Result};

pub use conv::ConvShape;
pub use cost_volume::{build_cost_volume, cost_volume_backward, CostVolume, SourceFeatures};
pub use extractor::{Extractor, ExtractorTrace};
pub use mlp::{Mlp, MlpScratch, HEAD_WIDTH};
pub use params::{Gradients, Init, ParamSet, ParamSpec, ParamTensor, TensorInfo};
pub use unet::{UNet, UNetTrace};

/// A convolution and the indices of its weight and bias tensors.
#[derive(Clone, Copy, Debug)]
pub struct ConvLayer {
    pub shape: ConvShape,
    pub weight: usize,
    pub bias: usize,
}

/// Architecture hyper-parameters. Everything that fixes parameter shapes or
/// the meaning of a density value lives here and is stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub extractor_channels: Vec<usize>,
    /// 1-based indices of the stride-2 extractor layers.
    pub extractor_stride2_layers: Vec<usize>,
    pub unet_encoder_channels: Vec<usize>,
    pub unet_decoder_channels: Vec<usize>,
    pub volume_channels: usize,
    pub mlp_width: usize,
    pub mlp_depth: usize,
    pub leaky_slope: f64,
    /// Samples per ray. Opacity has no step-length factor, so a density is
    /// only meaningful together with this count.
    pub n_samples: usize,
    pub grid: GridSpec,
    /// Append the mean projected source RGB to the MLP input.
    pub feed_source_rgb: bool,
    /// Append `valid_count / n_views` to the cost volume as an extra channel.
    pub valid_count_channel: bool,
    /// Standardize each cost channel over the grid before the U-Net.
    /// Feature variances are tiny at initialization and nothing else in the
    /// network rescales them.
    pub standardize_cost: bool,
    /// Initial bias of the raw density output.
    pub sigma_bias_init: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            extractor_channels: vec![8, 8, 16, 16, 16, 32, 32, 32, 32],
            extractor_stride2_layers: vec![3, 6],
            unet_encoder_channels: vec![32, 64, 128],
            unet_decoder_channels: vec![64, 32, 32],
            volume_channels: 8,
            mlp_width: 128,
            mlp_depth: 6,
            leaky_slope: 0.01,
            n_samples: 64,
            grid: GridSpec::for_workspace(&Aabb::default_workspace(), 0.01)
                .expect("default workspace tiles at 1 cm"),
            feed_source_rgb: false,
            valid_count_channel: false,
            standardize_cost: true,
            sigma_bias_init: 0.0,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.extractor_channels.is_empty() {
            return bad("extractor needs at least one layer".into());
        }
        if let Some(&l) = self
            .extractor_stride2_layers
            .iter()
            .find(|&&l| l == 0 || l > self.extractor_channels.len())
        {
            return bad(format!("stride-2 layer {l} is not an extractor layer"));
        }
        if self.unet_encoder_channels.is_empty() || self.unet_encoder_channels.len() != self.unet_decoder_channels.len() {
            return bad("U-Net encoder and decoder plans must be non-empty and equally long".into());
        }
        let widths = [self.volume_channels, self.mlp_width];
        if widths.contains(&0) || self.extractor_channels.contains(&0) || self.unet_encoder_channels.contains(&0) || self.unet_decoder_channels.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if self.n_samples < 2 {
            return bad(format!("n_samples must be at least 2, got {}", self.n_samples));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return bad(format!("leaky_slope {} outside [0, 1)", self.leaky_slope));
        }
        self.grid.check_divisible(1 << self.unet_encoder_channels.len())
    }

    pub fn extractor_stride(&self) -> usize {
        1 << self.extractor_stride2_layers.len()
    }

    pub fn feature_channels(&self) -> usize {
        *self.extractor_channels.last().unwrap()
    }

    /// MLP input width: volume features, relative position, view direction
    /// and optionally the mean source colour.
    pub fn mlp_input(&self) -> usize {
        self.volume_channels + 6 + if self.feed_source_rgb { 3 } else { 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub camera_id: String,
    pub data: Raster,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVolume {
    pub grid: GridSpec,
    pub data: Volume,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldSample {
    pub sigma: f64,
    pub rgb: [f64; 3],
}

/// A source view's camera and image, kept for colour lookups.
#[derive(Clone, Debug)]
pub struct SourceImage {
    pub camera_id: String,
    pub intrinsics: crate::geometry::CameraIntrinsics,
    pub pose: crate::geometry::Pose,
    pub rgb: Raster,
}

pub struct EncodingTrace {
    extractor: Vec<ExtractorTrace>,
    /// Standardized cost and per-channel inverse deviations.
    standardized: Option<(Volume, Vec<f64>)>,
    unet: UNetTrace,
}

/// Everything derived from the source views of one scene.
pub struct SceneEncoding {
    pub sources: Vec<SourceImage>,
    pub feature_maps: Vec<FeatureMap>,
    pub cost: CostVolume,
    pub volume: FeatureVolume,
    trace: Option<EncodingTrace>,
}

impl SceneEncoding {
    /// A field backed by a given feature volume and no source views; for
    /// hand-built fields.
    pub fn from_volume(volume: FeatureVolume) -> Self {
        let grid = volume.grid;
        Self {
            sources: Vec::new(),
            feature_maps: Vec::new(),
            cost: CostVolume {
                grid,
                data: Volume::zeros(grid.dims, 0),
                valid_count: vec![0; grid.voxel_count()],
                n_views: 0,
            },
            volume,
            trace: None,
        }
    }

    pub fn is_recorded(&self) -> bool {
        self.trace.is_some()
    }
}

/// Sparse gradient with respect to the feature volume: one trilinear tap and
/// one channel vector per field query.
#[derive(Clone, Debug, Default)]
pub struct VolumeGrad {
    pub taps: Vec<TrilinearTap>,
    pub values: Vec<f64>,
}

impl VolumeGrad {
    pub fn append(&mut self, mut other: VolumeGrad) {
        self.taps.append(&mut other.taps);
        self.values.append(&mut other.values);
    }

    /// Scatters every entry, in insertion order, into a dense volume.
    pub fn to_dense(&self, dims: [usize; 3], channels: usize) -> Volume {
        let mut v = Volume::zeros(dims, channels);
        for (tap, g) in self.taps.iter().zip(self.values.chunks_exact(channels)) {
            tap.scatter(g, &mut v);
        }
        v
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn raw_to_sample(raw: &[f64; HEAD_WIDTH]) -> FieldSample {
    FieldSample {
        sigma: softplus(raw[0]),
        rgb: [sigmoid(raw[1]), sigmoid(raw[2]), sigmoid(raw[3])],
    }
}

#[derive(Clone, Debug)]
pub struct FieldModel {
    pub arch: ArchConfig,
    pub params: ParamSet,
    extractor: Extractor,
    unet: UNet,
    mlp: Mlp,
}

struct Layout {
    extractor: Extractor,
    unet: UNet,
    mlp: Mlp,
    specs: Vec<ParamSpec>,
}

fn layout(arch: &ArchConfig) -> Result<Layout> {
    arch.validate()?;
    let mut specs = Vec::new();
    let extractor = Extractor::specs(
        &arch.extractor_channels,
        &arch.extractor_stride2_layers,
        arch.leaky_slope,
        0,
        &mut specs,
    );
    let unet_in = arch.feature_channels() + usize::from(arch.valid_count_channel);
    let unet = UNet::specs(
        unet_in,
        &arch.unet_encoder_channels,
        &arch.unet_decoder_channels,
        arch.volume_channels,
        arch.leaky_slope,
        0,
        &mut specs,
    )?;
    let mlp = Mlp::specs(
        arch.mlp_input(),
        arch.mlp_width,
        arch.mlp_depth,
        arch.leaky_slope,
        arch.sigma_bias_init,
        0,
        &mut specs,
    );
    Ok(Layout {
        extractor,
        unet,
        mlp,
        specs,
    })
}

impl FieldModel {
    /// Seeded fan-in-scaled initialization.
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self> {
        let l = layout(&arch)?;
        let mut rng = crate::rng::stream(seed, "init", 0);
        let params = ParamSet::from_specs(&l.specs, &mut rng);
        Ok(Self::assemble(arch, params, l))
    }

    /// All weights and biases zero.
    pub fn zeros(arch: ArchConfig) -> Result<Self> {
        let l = layout(&arch)?;
        let params = ParamSet::zeros(&l.specs);
        Ok(Self::assemble(arch, params, l))
    }

    /// Adopts `params` after checking names and shapes against the layout.
    pub fn from_params(arch: ArchConfig, params: ParamSet) -> Result<Self> {
        let l = layout(&arch)?;
        if params.tensors.len() != l.specs.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                l.specs.len(),
                params.tensors.len()
            )));
        }
        for (t, s) in params.tensors.iter().zip(&l.specs) {
            let n: usize = s.shape.iter().product();
            if t.name != s.name || t.shape != s.shape || t.data.len() != n {
                return Err(Error::Shape(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    t.name, t.shape, s.name, s.shape
                )));
            }
        }
        Ok(Self::assemble(arch, params, l))
    }

    fn assemble(arch: ArchConfig, params: ParamSet, l: Layout) -> Self {
        Self {
            arch,
            params,
            extractor: l.extractor,
            unet: l.unet,
            mlp: l.mlp,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.arch.grid
    }

    pub fn unet(&self) -> &UNet {
        &self.unet
    }

    pub fn scratch(&self) -> MlpScratch {
        self.mlp.scratch()
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients::zeros_like(&self.params)
    }

    pub fn extract_features(&self, rgb: &Raster) -> Result<Raster> {
        Ok(self.extractor.forward(&self.params, rgb, false)?.0)
    }

    pub fn unet_forward(&self, input: &Volume) -> Result<Volume> {
        Ok(self.unet.forward(&self.params, input, false)?.0)
    }

    /// Runs the extractor, cost volume and U-Net on `sources`. With `record`
    /// the intermediate activations are kept for [`encoder_backward`](Self::encoder_backward).
    pub fn encode(&self, sources: &[CameraView], record: bool) -> Result<SceneEncoding> {
        if sources.is_empty() {
            return Err(Error::Config("at least one source view is required".into()));
        }
        let mut maps = Vec::with_capacity(sources.len());
        let mut traces = Vec::with_capacity(sources.len());
        for v in sources {
            let (f, t) = self.extractor.forward(&self.params, &v.rgb, record)?;
            maps.push(FeatureMap {
                camera_id: v.camera_id.clone(),
                data: f,
            });
            traces.extend(t);
        }
        let feats: Vec<SourceFeatures> = maps
            .iter()
            .zip(sources)
            .map(|(m, v)| SourceFeatures {
                features: &m.data,
                intrinsics: &v.intrinsics,
                pose: &v.pose,
            })
            .collect();
        let cost = build_cost_volume(&feats, &self.arch.grid)?;
        let standardized = self.arch.standardize_cost.then(|| conv::standardize(&cost.data));
        let input = self.unet_input(&cost, standardized.as_ref().map(|s| &s.0));
        let (out, unet_trace) = self.unet.forward(&self.params, &input, record)?;
        let trace = unet_trace.map(|unet| EncodingTrace {
            extractor: traces,
            standardized,
            unet,
        });
        Ok(SceneEncoding {
            sources: sources
                .iter()
                .map(|v| SourceImage {
                    camera_id: v.camera_id.clone(),
                    intrinsics: v.intrinsics,
                    pose: v.pose,
                    rgb: v.rgb.clone(),
                })
                .collect(),
            feature_maps: maps,
            cost,
            volume: FeatureVolume {
                grid: self.arch.grid,
                data: out,
            },
            trace,
        })
    }

    fn unet_input(&self, cost: &CostVolume, standardized: Option<&Volume>) -> Volume {
        let data = standardized.unwrap_or(&cost.data);
        if !self.arch.valid_count_channel {
            return data.clone();
        }
        let n = cost.n_views.max(1) as f64;
        let counts = Volume {
            dims: cost.data.dims,
            channels: 1,
            data: cost.valid_count.iter().map(|&c| c as f64 / n).collect(),
        };
        conv::concat(data, &counts)
    }

    /// Mean colour of the source images at the projection of `p`; zero when
    /// no view sees it.
    fn source_rgb(enc: &SceneEncoding, p: &Vec3) -> [f64; 3] {
        let mut acc = [0.0; 3];
        let mut n = 0;
        for s in &enc.sources {
            let Ok((u, v, _)) = project_point(&s.intrinsics, &s.pose, p) else { continue };
            let Ok(c) = bilinear_sample(&s.rgb, u, v) else { continue };
            for (a, x) in acc.iter_mut().zip(c) {
                *a += x;
            }
            n += 1;
        }
        if n > 0 {
            acc.iter_mut().for_each(|a| *a /= n as f64);
        }
        acc
    }

    /// Fills the MLP input row for `(p, dir)`.
    fn field_input(&self, enc: &SceneEncoding, p: &Vec3, dir: &Vec3, x: &mut [f64]) -> Result<TrilinearTap> {
        let grid = &enc.volume.grid;
        let tap = trilinear_tap(grid, p)?;
        let c = enc.volume.data.channels;
        tap.gather(&enc.volume.data, &mut x[..c]);
        let rel = grid.relative_position(p);
        x[c..c + 3].copy_from_slice(rel.as_slice());
        x[c + 3..c + 6].copy_from_slice(dir.as_slice());
        if self.arch.feed_source_rgb {
            x[c + 6..c + 9].copy_from_slice(&Self::source_rgb(enc, p));
        }
        Ok(tap)
    }

    /// Raw head outputs at `(p, dir)`; see [`query`](Self::query).
    pub fn query_raw(&self, enc: &SceneEncoding, p: &Vec3, dir: &Vec3, s: &mut MlpScratch) -> Result<[f64; HEAD_WIDTH]> {
        let mut x = vec![0.0; self.mlp.input_width()];
        self.field_input(enc, p, dir, &mut x)?;
        let mut raw = [0.0; HEAD_WIDTH];
        self.mlp.forward(&self.params, &x, s, &mut raw);
        Ok(raw)
    }

    pub fn query_with(&self, enc: &SceneEncoding, p: &Vec3, dir: &Vec3, s: &mut MlpScratch) -> Result<FieldSample> {
        Ok(raw_to_sample(&self.query_raw(enc, p, dir, s)?))
    }

    /// Density and colour at world point `p` seen along `dir`. Fails with
    /// `OutOfBounds` outside the grid's outer voxel centers.
    pub fn query(&self, enc: &SceneEncoding, p: &Vec3, dir: &Vec3) -> Result<FieldSample> {
        self.query_with(enc, p, dir, &mut self.scratch())
    }

    pub fn query_batch(&self, enc: &SceneEncoding, points: &[Vec3], dirs: &[Vec3]) -> Result<Vec<FieldSample>> {
        if points.len() != dirs.len() {
            return Err(Error::Shape(format!(
                "{} points but {} directions",
                points.len(),
                dirs.len()
            )));
        }
        let ranges = par::split_ranges(points.len(), par::REDUCE_CHUNKS * 4);
        let parts = par::map_slice(&ranges, |r| -> Result<Vec<FieldSample>> {
            let mut s = self.scratch();
            r.clone()
                .map(|i| self.query_with(enc, &points[i], &dirs[i], &mut s))
                .collect()
        });
        let mut out = Vec::with_capacity(points.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    /// Back-propagates `d loss / d sigma` and `d loss / d rgb` at one query.
    /// Parameter gradients of the MLP go to `grads`; the feature-volume
    /// gradient is appended to `vol`.
    #[allow(clippy::too_many_arguments)]
    pub fn query_backward(
        &self,
        enc: &SceneEncoding,
        p: &Vec3,
        dir: &Vec3,
        grad_sigma: f64,
        grad_rgb: [f64; 3],
        s: &mut MlpScratch,
        grads: &mut Gradients,
        vol: &mut VolumeGrad,
    ) -> Result<()> {
        let mut x = vec![0.0; self.mlp.input_width()];
        let tap = self.field_input(enc, p, dir, &mut x)?;
        let mut raw = [0.0; HEAD_WIDTH];
        self.mlp.forward(&self.params, &x, s, &mut raw);
        let mut g = [grad_sigma * sigmoid(raw[0]), 0.0, 0.0, 0.0];
        for ch in 0..3 {
            let c = sigmoid(raw[ch + 1]);
            g[ch + 1] = grad_rgb[ch] * c * (1.0 - c);
        }
        let mut gx = vec![0.0; x.len()];
        self.mlp.backward(&self.params, &x, s, &g, grads, Some(&mut gx));
        let c = enc.volume.data.channels;
        vol.taps.push(tap);
        vol.values.extend_from_slice(&gx[..c]);
        Ok(())
    }

    /// Pushes a feature-volume gradient back through the U-Net, the cost
    /// volume and the extractor. Requires a recorded encoding.
    pub fn encoder_backward(&self, enc: &SceneEncoding, grad_volume: &Volume, grads: &mut Gradients) -> Result<()> {
        let trace = enc.trace.as_ref().ok_or(Error::Graph)?;
        if grad_volume.dims != enc.volume.data.dims || grad_volume.channels != enc.volume.data.channels {
            return Err(Error::Shape("feature-volume gradient has the wrong shape".into()));
        }
        let g_in = self.unet.backward(&self.params, &trace.unet, grad_volume, grads);
        let g_cost = if self.arch.valid_count_channel {
            conv::split(&g_in, enc.cost.data.channels).0
        } else {
            g_in
        };
        let g_cost = match &trace.standardized {
            Some((y, inv)) => conv::standardize_backward(y, inv, &g_cost),
            None => g_cost,
        };
        let feats: Vec<SourceFeatures> = enc
            .feature_maps
            .iter()
            .zip(&enc.sources)
            .map(|(m, v)| SourceFeatures {
                features: &m.data,
                intrinsics: &v.intrinsics,
                pose: &v.pose,
            })
            .collect();
        let g_maps = cost_volume_backward(&feats, &enc.cost.grid, &g_cost)?;
        for (t, g) in trace.extractor.iter().zip(&g_maps) {
            self.extractor.backward(&self.params, t, g, grads);
        }
        Ok(())
    }
}
