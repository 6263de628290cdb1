//! Geometry and image metrics, per-scene evaluation, and the experiment
//! matrix over source settings and training-set sizes.

use serde::{Deserialize, Serialize};

use crate::geometry::{pixel_to_ray, Aabb, CameraIntrinsics, Pose};
use crate::model::{ArchConfig, FieldModel};
use crate::renderer::render_view;
use crate::scenegen::{CameraView, SceneSource};
use crate::tensor::Raster;
use crate::training::{self, SourceSetting, TrainConfig};
use crate::{Error, Result};

/// Pixels whose ground-truth depth is valid and back-projects into the
/// workspace.
pub fn validity_mask(gt_depth: &Raster, intrinsics: &CameraIntrinsics, pose: &Pose, workspace: &Aabb) -> Vec<bool> {
    let forward = pose.forward();
    let mut mask = Vec::with_capacity(gt_depth.pixel_count());
    for y in 0..gt_depth.height {
        for x in 0..gt_depth.width {
            let d = gt_depth.pixel(x, y)[0];
            let valid = d > 0.0 && {
                let ray = pixel_to_ray(intrinsics, pose, x as f64, y as f64);
                let p = ray.at(d / ray.direction.dot(&forward));
                workspace.contains(&p)
            };
            mask.push(valid);
        }
    }
    mask
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthError {
    /// Mean absolute error over pixels valid in both maps; `None` when the
    /// prediction is invalid on every masked pixel.
    pub mae: Option<f64>,
    /// Pixels selected by the mask.
    pub masked_pixels: usize,
    /// Fraction of masked pixels with a valid prediction.
    pub valid_pixel_fraction: f64,
}

/// Depth error over `mask`, skipping pixels whose prediction is invalid (0).
pub fn depth_mae(pred: &Raster, gt: &Raster, mask: &[bool]) -> Result<DepthError> {
    if !pred.same_shape(gt) || pred.channels != 1 || mask.len() != gt.pixel_count() {
        return Err(Error::Shape("depth maps and mask must share one-channel dimensions".into()));
    }
    let masked = mask.iter().filter(|&&m| m).count();
    if masked == 0 {
        return Err(Error::EmptyMask);
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((p, g), &m) in pred.data.iter().zip(&gt.data).zip(mask) {
        if m && *p > 0.0 {
            sum += (p - g).abs();
            n += 1;
        }
    }
    Ok(DepthError {
        mae: (n > 0).then(|| sum / n as f64),
        masked_pixels: masked,
        valid_pixel_fraction: n as f64 / masked as f64,
    })
}

/// Peak signal-to-noise ratio for images in `[0, 1]`; identical images give
/// `+inf`.
pub fn psnr(target: &Raster, rendered: &Raster) -> Result<f64> {
    if !target.same_shape(rendered) || target.data.is_empty() {
        return Err(Error::Shape(format!(
            "images {}x{}x{} and {}x{}x{} differ",
            target.width, target.height, target.channels, rendered.width, rendered.height, rendered.channels
        )));
    }
    let mse = target
        .data
        .iter()
        .zip(&rendered.data)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / target.data.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}

/// Serializes `+inf` as the string `"inf"`, which JSON numbers cannot hold.
mod psnr_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad psnr '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewReport {
    pub camera_id: String,
    pub mae_depth: Option<f64>,
    #[serde(with = "psnr_serde")]
    pub psnr: f64,
    pub valid_pixel_fraction: f64,
    pub masked_pixels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneReport {
    pub scene_id: String,
    pub views: Vec<ViewReport>,
    pub mae_depth: Option<f64>,
    #[serde(with = "psnr_serde")]
    pub psnr: f64,
    pub valid_pixel_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub source_setting: SourceSetting,
    pub n_train: usize,
    pub seed: u64,
    /// Hash of the run configuration, when known.
    pub config_hash: Option<String>,
    /// Viewpoints scored per scene; PSNR and depth share them.
    pub viewpoints: Vec<String>,
    pub scenes: Vec<SceneReport>,
    /// Unweighted mean over scenes of the per-scene means over views. Views
    /// without any valid prediction are left out of the depth mean.
    pub mae_depth: Option<f64>,
    #[serde(with = "psnr_serde")]
    pub psnr: f64,
    pub valid_pixel_fraction: f64,
}

impl EvalReport {
    /// Every `(mae, psnr)` pair, one per scene and view.
    pub fn pairs(&self) -> Vec<(Option<f64>, f64)> {
        self.scenes
            .iter()
            .flat_map(|s| s.views.iter().map(|v| (v.mae_depth, v.psnr)))
            .collect()
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Produces rendered RGB and depth for evaluation viewpoints of a scene.
pub trait Predictor: Sync {
    fn predict(
        &self,
        data: &dyn SceneSource,
        scene_id: &str,
        setting: SourceSetting,
        views: &[CameraView],
    ) -> Result<Vec<(Raster, Raster)>>;
}

/// Renders the trained field.
pub struct ModelPredictor<'a>(pub &'a FieldModel);

impl Predictor for ModelPredictor<'_> {
    fn predict(
        &self,
        data: &dyn SceneSource,
        scene_id: &str,
        setting: SourceSetting,
        views: &[CameraView],
    ) -> Result<Vec<(Raster, Raster)>> {
        let model = self.0;
        let sources = training::select_source_views(data, scene_id, setting)?;
        let enc = model.encode(&sources, false)?;
        views
            .iter()
            .map(|v| {
                let r = render_view(model, &enc, &v.intrinsics, &v.pose, &v.background_rgb, None)?;
                Ok((r.rgb, r.depth))
            })
            .collect()
    }
}

/// Echoes the ground truth; a self-test of the metric plumbing.
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn predict(
        &self,
        _: &dyn SceneSource,
        _: &str,
        _: SourceSetting,
        views: &[CameraView],
    ) -> Result<Vec<(Raster, Raster)>> {
        views
            .iter()
            .map(|v| {
                let depth = v
                    .depth
                    .clone()
                    .ok_or_else(|| Error::Config(format!("{} has no depth", v.camera_id)))?;
                Ok((v.rgb.clone(), depth))
            })
            .collect()
    }
}

pub fn evaluate_scene(
    predictor: &dyn Predictor,
    data: &dyn SceneSource,
    scene_id: &str,
    setting: SourceSetting,
) -> Result<SceneReport> {
    let manifest = data.manifest();
    let views = manifest
        .rig
        .evaluation_viewpoints()
        .iter()
        .map(|id| data.load_view(scene_id, id))
        .collect::<Result<Vec<_>>>()?;
    let preds = predictor.predict(data, scene_id, setting, &views)?;
    let mut reports = Vec::with_capacity(views.len());
    for (v, (rgb, depth)) in views.iter().zip(&preds) {
        let gt = v
            .depth
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} has no depth", v.camera_id)))?;
        let mask = validity_mask(gt, &v.intrinsics, &v.pose, &manifest.workspace);
        let err = depth_mae(depth, gt, &mask)?;
        reports.push(ViewReport {
            camera_id: v.camera_id.clone(),
            mae_depth: err.mae,
            psnr: psnr(&v.rgb, rgb)?,
            valid_pixel_fraction: err.valid_pixel_fraction,
            masked_pixels: err.masked_pixels,
        });
    }
    Ok(SceneReport {
        scene_id: scene_id.to_string(),
        mae_depth: mean(reports.iter().filter_map(|r| r.mae_depth)),
        psnr: mean(reports.iter().map(|r| r.psnr)).unwrap_or(f64::NAN),
        valid_pixel_fraction: mean(reports.iter().map(|r| r.valid_pixel_fraction)).unwrap_or(0.0),
        views: reports,
    })
}

/// Scores `predictor` on `scenes` (normally the evaluation split).
pub fn evaluate(
    predictor: &dyn Predictor,
    data: &dyn SceneSource,
    scenes: &[String],
    setting: SourceSetting,
    n_train: usize,
    seed: u64,
) -> Result<EvalReport> {
    let reports = scenes
        .iter()
        .map(|s| evaluate_scene(predictor, data, s, setting))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        source_setting: setting,
        n_train,
        seed,
        config_hash: None,
        viewpoints: data.manifest().rig.evaluation_viewpoints(),
        mae_depth: mean(reports.iter().filter_map(|r| r.mae_depth)),
        psnr: mean(reports.iter().map(|r| r.psnr)).unwrap_or(f64::NAN),
        valid_pixel_fraction: mean(reports.iter().map(|r| r.valid_pixel_fraction)).unwrap_or(0.0),
        scenes: reports,
    })
}

/// [`evaluate`] for a trained model on the dataset's evaluation split.
pub fn evaluate_model(
    model: &FieldModel,
    data: &dyn SceneSource,
    setting: SourceSetting,
    n_train: usize,
    seed: u64,
) -> Result<EvalReport> {
    training::check_compatible(model, data)?;
    let scenes = data.manifest().split.eval.clone();
    if scenes.is_empty() {
        return Err(Error::Config("dataset has no evaluation scenes".into()));
    }
    evaluate(&ModelPredictor(model), data, &scenes, setting, n_train, seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub setting: SourceSetting,
    pub n_train: usize,
}

/// The six cells: every setting with 40 training scenes, then three poses
/// with 20, 10 and 5.
pub fn default_matrix() -> Vec<MatrixCell> {
    let mut cells: Vec<MatrixCell> = SourceSetting::ALL
        .into_iter()
        .map(|setting| MatrixCell { setting, n_train: 40 })
        .collect();
    for n in [20, 10, 5] {
        cells.push(MatrixCell {
            setting: SourceSetting::ThreePoses,
            n_train: n,
        });
    }
    cells
}

/// Same shape as [`default_matrix`] with training-set sizes scaled to a
/// dataset of `n_available` training scenes.
pub fn scaled_matrix(n_available: usize) -> Vec<MatrixCell> {
    let scale = |n: usize| ((n * n_available) / 40).max(1);
    default_matrix()
        .into_iter()
        .map(|c| MatrixCell {
            n_train: scale(c.n_train),
            ..c
        })
        .collect()
}

/// Trains one model per cell on the leading `n_train` training scenes and
/// evaluates all of them on the same evaluation split. `on_cell` sees each
/// finished report.
pub fn run_matrix(
    data: &dyn SceneSource,
    cells: &[MatrixCell],
    arch: &ArchConfig,
    base: &TrainConfig,
    mut on_cell: impl FnMut(&MatrixCell, &EvalReport) -> Result<()>,
) -> Result<Vec<EvalReport>> {
    let available = data.manifest().split.train.len();
    if let Some(c) = cells.iter().find(|c| c.n_train > available || c.n_train == 0) {
        return Err(Error::Config(format!(
            "cell needs {} training scenes, dataset has {available}",
            c.n_train
        )));
    }
    let mut out = Vec::with_capacity(cells.len());
    for cell in cells {
        let config = TrainConfig {
            source_setting: cell.setting,
            n_train_scenes: cell.n_train,
            ..base.clone()
        };
        let model = FieldModel::new(arch.clone(), config.seed)?;
        let trained = training::train(model, data, &config, |_, _| Ok(()))?;
        let report = evaluate_model(&trained.model, data, cell.setting, cell.n_train, config.seed)?;
        on_cell(cell, &report)?;
        out.push(report);
    }
    Ok(out)
}

pub const CSV_HEADER: &str = "source_cameras,head_pose,n_train,mae_depth,psnr";

/// One row per report with the table columns.
pub fn table_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in reports {
        let (cams, pose) = r.source_setting.describe();
        let mae = r.mae_depth.map_or("nan".to_string(), |m| format!("{m:.5}"));
        s.push_str(&format!("{cams},{pose},{},{mae},{:.2}\n", r.n_train, r.psnr));
    }
    s
}

/// Ranks starting at 1, ties sharing their average rank.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; `None` for fewer than two points or constant
/// input.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}
