//! On-disk dataset layout:
//!
//! ```text
//! <root>/manifest.json
//! <root>/scenes/<id>/meta.json
//! <root>/scenes/<id>/scene.json
//! <root>/scenes/<id>/rgb/<camera>.png         8-bit RGB, linear [0, 255]
//! <root>/scenes/<id>/depth/<camera>.png       16-bit millimeters, 0 = invalid
//! <root>/scenes/<id>/background/<camera>.png  empty-scene RGB from the same pose
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, ImageFormat, Luma, Rgb};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{oracle_render, CameraRig, RigCamera, Scene};
use crate::geometry::{Aabb, CameraIntrinsics, Pose};
use crate::tensor::Raster;
use crate::{par, Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Train/eval partition of scene ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train: Vec<String>,
    pub eval: Vec<String>,
}

impl Split {
    /// The last `n_eval` ids are held out for evaluation.
    pub fn tail(ids: &[String], n_eval: usize) -> Result<Split> {
        if n_eval > ids.len() {
            return Err(Error::Config(format!(
                "cannot hold out {n_eval} of {} scenes",
                ids.len()
            )));
        }
        let cut = ids.len() - n_eval;
        Ok(Split {
            train: ids[..cut].to_vec(),
            eval: ids[cut..].to_vec(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub scene_ids: Vec<String>,
    pub split: Split,
    pub workspace: Aabb,
    pub rig: CameraRig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewMeta {
    pub camera_id: String,
    pub intrinsics: CameraIntrinsics,
    /// 4×4 world-from-camera, row-major.
    pub pose: Pose,
    pub rgb: String,
    pub depth: Option<String>,
    pub background: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneMeta {
    pub scene_id: String,
    pub workspace: Aabb,
    pub views: Vec<ViewMeta>,
}

/// One posed observation of a scene.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraView {
    pub camera_id: String,
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
    pub rgb: Raster,
    /// Z-depth in meters, 0 where invalid; present for depth-capable cameras.
    pub depth: Option<Raster>,
    pub background_rgb: Raster,
}

/// Anything that can serve views of a set of scenes.
pub trait SceneSource: Sync {
    fn manifest(&self) -> &DatasetManifest;
    fn load_view(&self, scene_id: &str, camera_id: &str) -> Result<CameraView>;
    /// Ground-truth primitives.
    fn load_scene(&self, scene_id: &str) -> Result<Scene>;

    fn rig(&self) -> &CameraRig {
        &self.manifest().rig
    }
}

fn unknown_camera(rig: &CameraRig, camera_id: &str) -> Error {
    let valid: Vec<String> = rig.cameras().into_iter().map(|c| c.id).collect();
    Error::Config(format!(
        "unknown camera '{camera_id}'; valid ids: {}",
        valid.join(", ")
    ))
}

fn render_view(scene: &Scene, cam: &RigCamera) -> CameraView {
    let (rgb, depth) = oracle_render(scene, &cam.intrinsics, &cam.pose);
    let (background_rgb, _) = oracle_render(&scene.empty(), &cam.intrinsics, &cam.pose);
    CameraView {
        camera_id: cam.id.clone(),
        intrinsics: cam.intrinsics,
        pose: cam.pose,
        rgb,
        depth: cam.depth_capable.then_some(depth),
        background_rgb,
    }
}

/// Scenes held in memory and rendered on demand with the oracle.
pub struct MemoryDataset {
    manifest: DatasetManifest,
    scenes: BTreeMap<String, Scene>,
}

impl MemoryDataset {
    pub fn new(scenes: Vec<Scene>, rig: CameraRig, split: Split) -> Result<Self> {
        let workspace = scenes
            .first()
            .map(|s| s.workspace)
            .unwrap_or_else(Aabb::default_workspace);
        let scene_ids: Vec<String> = scenes.iter().map(|s| s.id.clone()).collect();
        for id in split.train.iter().chain(&split.eval) {
            if !scene_ids.contains(id) {
                return Err(Error::Config(format!("split names unknown scene {id}")));
            }
        }
        Ok(Self {
            manifest: DatasetManifest {
                format_version: FORMAT_VERSION,
                scene_ids,
                split,
                workspace,
                rig,
            },
            scenes: scenes.into_iter().map(|s| (s.id.clone(), s)).collect(),
        })
    }
}

impl SceneSource for MemoryDataset {
    fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    fn load_view(&self, scene_id: &str, camera_id: &str) -> Result<CameraView> {
        let scene = self.load_scene_ref(scene_id)?;
        let cam = self
            .manifest
            .rig
            .camera(camera_id)
            .ok_or_else(|| unknown_camera(&self.manifest.rig, camera_id))?;
        Ok(render_view(scene, &cam))
    }

    fn load_scene(&self, scene_id: &str) -> Result<Scene> {
        self.load_scene_ref(scene_id).cloned()
    }
}

impl MemoryDataset {
    fn load_scene_ref(&self, scene_id: &str) -> Result<&Scene> {
        self.scenes
            .get(scene_id)
            .ok_or_else(|| Error::Config(format!("unknown scene '{scene_id}'")))
    }
}

/// A dataset directory opened with [`read_dataset`].
#[derive(Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    metas: BTreeMap<String, SceneMeta>,
}

impl Dataset {
    pub fn scene_dir(&self, scene_id: &str) -> PathBuf {
        self.root.join("scenes").join(scene_id)
    }

    pub fn scene_meta(&self, scene_id: &str) -> Result<&SceneMeta> {
        self.metas
            .get(scene_id)
            .ok_or_else(|| Error::Config(format!("unknown scene '{scene_id}'")))
    }
}

impl SceneSource for Dataset {
    fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    fn load_view(&self, scene_id: &str, camera_id: &str) -> Result<CameraView> {
        let meta = self.scene_meta(scene_id)?;
        let view = meta
            .views
            .iter()
            .find(|v| v.camera_id == camera_id)
            .ok_or_else(|| unknown_camera(&self.manifest.rig, camera_id))?;
        let dir = self.scene_dir(scene_id);
        let (w, h) = (view.intrinsics.width, view.intrinsics.height);
        let rgb = read_rgb8(&dir.join(&view.rgb), w, h)?;
        let background_rgb = read_rgb8(&dir.join(&view.background), w, h)?;
        let depth = match &view.depth {
            Some(f) => Some(read_depth16(&dir.join(f), w, h)?),
            None => None,
        };
        Ok(CameraView {
            camera_id: view.camera_id.clone(),
            intrinsics: view.intrinsics,
            pose: view.pose,
            rgb,
            depth,
            background_rgb,
        })
    }

    fn load_scene(&self, scene_id: &str) -> Result<Scene> {
        self.scene_meta(scene_id)?;
        read_json(&self.scene_dir(scene_id).join("scene.json"))
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| Error::format(path, e.to_string()))?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::format(path, "file is missing"))
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

fn quantize_unit(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_rgb8(path: &Path, img: &Raster) -> Result<()> {
    if img.channels != 3 {
        return Err(Error::Shape(format!("rgb image needs 3 channels, has {}", img.channels)));
    }
    let bytes: Vec<u8> = img.data.iter().map(|&x| quantize_unit(x)).collect();
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width as u32, img.height as u32, bytes)
            .ok_or_else(|| Error::Shape("rgb buffer size".into()))?;
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Single-channel `[0, 1]` image as 8-bit grayscale.
pub fn write_gray8(path: &Path, img: &Raster) -> Result<()> {
    if img.channels != 1 {
        return Err(Error::Shape("gray image needs 1 channel".into()));
    }
    let bytes: Vec<u8> = img.data.iter().map(|&x| quantize_unit(x)).collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width as u32, img.height as u32, bytes)
            .ok_or_else(|| Error::Shape("gray buffer size".into()))?;
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Depth in meters as 16-bit millimeters; non-positive depth stores 0.
pub fn write_depth16(path: &Path, depth: &Raster) -> Result<()> {
    if depth.channels != 1 {
        return Err(Error::Shape("depth image needs 1 channel".into()));
    }
    let mm: Vec<u16> = depth
        .data
        .iter()
        .map(|&d| {
            if d > 0.0 {
                (d * 1000.0).round().clamp(1.0, u16::MAX as f64) as u16
            } else {
                0
            }
        })
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(depth.width as u32, depth.height as u32, mm)
            .ok_or_else(|| Error::Shape("depth buffer size".into()))?;
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    if !path.exists() {
        return Err(Error::format(path, "file is missing"));
    }
    image::open(path).map_err(|e| Error::format(path, e.to_string()))
}

fn check_dims(path: &Path, got: (u32, u32), w: usize, h: usize) -> Result<()> {
    if got != (w as u32, h as u32) {
        return Err(Error::format(
            path,
            format!("expected {w}x{h}, found {}x{}", got.0, got.1),
        ));
    }
    Ok(())
}

pub fn read_rgb8(path: &Path, w: usize, h: usize) -> Result<Raster> {
    let img = open_image(path)?.to_rgb8();
    check_dims(path, img.dimensions(), w, h)?;
    let data = img.into_raw().into_iter().map(|b| f64::from(b) / 255.0).collect();
    Raster::from_vec(w, h, 3, data)
}

pub fn read_depth16(path: &Path, w: usize, h: usize) -> Result<Raster> {
    let img = open_image(path)?.to_luma16();
    check_dims(path, img.dimensions(), w, h)?;
    let data = img.into_raw().into_iter().map(|mm| f64::from(mm) / 1000.0).collect();
    Raster::from_vec(w, h, 1, data)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_scene(scene: &Scene, rig: &CameraRig, dir: &Path) -> Result<SceneMeta> {
    for sub in ["rgb", "depth", "background"] {
        create_dir(&dir.join(sub))?;
    }
    let mut views = Vec::new();
    for cam in rig.cameras() {
        let view = render_view(scene, &cam);
        let rgb = format!("rgb/{}.png", cam.id);
        let background = format!("background/{}.png", cam.id);
        write_rgb8(&dir.join(&rgb), &view.rgb)?;
        write_rgb8(&dir.join(&background), &view.background_rgb)?;
        let depth = match &view.depth {
            Some(d) => {
                let f = format!("depth/{}.png", cam.id);
                write_depth16(&dir.join(&f), d)?;
                Some(f)
            }
            None => None,
        };
        views.push(ViewMeta {
            camera_id: cam.id,
            intrinsics: cam.intrinsics,
            pose: cam.pose,
            rgb,
            depth,
            background,
        });
    }
    let meta = SceneMeta {
        scene_id: scene.id.clone(),
        workspace: scene.workspace,
        views,
    };
    write_json(&dir.join("meta.json"), &meta)?;
    write_json(&dir.join("scene.json"), scene)?;
    Ok(meta)
}

/// Renders every rig view of every scene and writes the dataset to `out_dir`.
pub fn write_dataset(
    scenes: &[Scene],
    rig: &CameraRig,
    split: &Split,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let workspace = scenes
        .first()
        .map(|s| s.workspace)
        .unwrap_or_else(Aabb::default_workspace);
    if scenes.iter().any(|s| s.workspace != workspace) {
        return Err(Error::Config("scenes must share one workspace".into()));
    }
    let scene_ids: Vec<String> = scenes.iter().map(|s| s.id.clone()).collect();
    let mut sorted = scene_ids.clone();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != scene_ids.len() {
        return Err(Error::Config("scene ids must be unique".into()));
    }
    for id in split.train.iter().chain(&split.eval) {
        if !scene_ids.contains(id) {
            return Err(Error::Config(format!("split names unknown scene {id}")));
        }
    }
    create_dir(&out_dir.join("scenes"))?;
    let results = par::map_slice(scenes, |s| {
        write_scene(s, rig, &out_dir.join("scenes").join(&s.id))
    });
    for r in results {
        r?;
    }
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        scene_ids,
        split: split.clone(),
        workspace,
        rig: rig.clone(),
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: DatasetManifest = read_json(&dir.join("manifest.json"))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::format(
            dir.join("manifest.json"),
            format!("unsupported format_version {}", manifest.format_version),
        ));
    }
    let mut metas = BTreeMap::new();
    for id in &manifest.scene_ids {
        let path = dir.join("scenes").join(id).join("meta.json");
        let meta: SceneMeta = read_json(&path)?;
        if &meta.scene_id != id {
            return Err(Error::format(path, format!("scene_id {} != {id}", meta.scene_id)));
        }
        metas.insert(id.clone(), meta);
    }
    Ok(Dataset {
        root: dir.to_path_buf(),
        manifest,
        metas,
    })
}
