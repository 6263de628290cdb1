//! Simulated capture rig: a head sweeping 15 poses along an arc with two eye
//! cameras and a depth camera, plus three static depth cameras around the
//! table.

use serde::{Deserialize, Serialize};

use crate::geometry::{Aabb, CameraIntrinsics, Pose, Vec3};
use crate::{Error, Result};

pub const HEAD_POSES: usize = 15;
/// 1-based index of the middle head pose.
pub const CENTER_POSE: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RigConfig {
    pub image_width: usize,
    pub image_height: usize,
    /// Head arc radius as a multiple of the workspace diagonal (≥ 1).
    pub head_radius_factor: f64,
    pub head_elevation_deg: f64,
    /// Total azimuth swept by the 15 head poses.
    pub head_arc_deg: f64,
    pub eye_baseline: f64,
    /// Azimuths of the static cameras, measured from the head-arc center.
    pub static_azimuths_deg: [f64; 3],
    pub static_elevations_deg: [f64; 3],
    pub static_radius_factor: f64,
    /// Fraction of the half-frame the workspace may fill.
    pub frame_fill: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            image_width: 160,
            image_height: 128,
            head_radius_factor: 1.0,
            head_elevation_deg: 40.0,
            head_arc_deg: 70.0,
            eye_baseline: 0.065,
            static_azimuths_deg: [70.0, 180.0, 290.0],
            static_elevations_deg: [45.0, 35.0, 55.0],
            static_radius_factor: 1.1,
            frame_fill: 0.92,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigCamera {
    pub id: String,
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
    pub depth_capable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub config: RigConfig,
    pub eye_intrinsics: CameraIntrinsics,
    pub eye_left: Vec<Pose>,
    pub eye_right: Vec<Pose>,
    pub head_intrinsics: CameraIntrinsics,
    pub head_depth: Vec<Pose>,
    pub static_cams: Vec<(CameraIntrinsics, Pose)>,
}

pub fn eye_left_id(pose: usize) -> String {
    format!("eye_left_{pose:02}")
}

pub fn eye_right_id(pose: usize) -> String {
    format!("eye_right_{pose:02}")
}

pub fn head_depth_id(pose: usize) -> String {
    format!("head_depth_{pose:02}")
}

pub fn static_id(n: usize) -> String {
    format!("static_{n}")
}

impl CameraRig {
    /// Every camera, eyes first, then head depth, then static.
    pub fn cameras(&self) -> Vec<RigCamera> {
        let mut out = Vec::new();
        for (i, p) in self.eye_left.iter().enumerate() {
            out.push(RigCamera {
                id: eye_left_id(i + 1),
                intrinsics: self.eye_intrinsics,
                pose: *p,
                depth_capable: false,
            });
        }
        for (i, p) in self.eye_right.iter().enumerate() {
            out.push(RigCamera {
                id: eye_right_id(i + 1),
                intrinsics: self.eye_intrinsics,
                pose: *p,
                depth_capable: false,
            });
        }
        for (i, p) in self.head_depth.iter().enumerate() {
            out.push(RigCamera {
                id: head_depth_id(i + 1),
                intrinsics: self.head_intrinsics,
                pose: *p,
                depth_capable: true,
            });
        }
        for (i, (k, p)) in self.static_cams.iter().enumerate() {
            out.push(RigCamera {
                id: static_id(i + 1),
                intrinsics: *k,
                pose: *p,
                depth_capable: true,
            });
        }
        out
    }

    pub fn camera(&self, id: &str) -> Option<RigCamera> {
        self.cameras().into_iter().find(|c| c.id == id)
    }

    /// The four viewpoints scored during evaluation: every static camera and
    /// the center pose of the head depth camera.
    pub fn evaluation_viewpoints(&self) -> Vec<String> {
        let mut ids: Vec<String> = (1..=self.static_cams.len()).map(static_id).collect();
        ids.push(head_depth_id(CENTER_POSE));
        ids
    }
}

fn deg(x: f64) -> f64 {
    x.to_radians()
}

/// Largest focal length that keeps every workspace corner inside the frame
/// (scaled by `fill`) for all `poses`.
fn fit_intrinsics(
    workspace: &Aabb,
    poses: &[Pose],
    width: usize,
    height: usize,
    fill: f64,
) -> Result<CameraIntrinsics> {
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let mut focal = f64::INFINITY;
    for pose in poses {
        for c in workspace.corners() {
            let p = pose.rotation.transpose() * (c - pose.translation);
            if p.z <= 1e-3 {
                return Err(Error::InvalidGeometry(
                    "workspace corner behind a rig camera".into(),
                ));
            }
            let sx = (p.x / p.z).abs();
            let sy = (p.y / p.z).abs();
            if sx > 0.0 {
                focal = focal.min(cx * fill / sx);
            }
            if sy > 0.0 {
                focal = focal.min(cy * fill / sy);
            }
        }
    }
    CameraIntrinsics::new(focal, focal, cx, cy, width, height)
}

/// Deterministic rig around `workspace`.
pub fn build_rig(workspace: &Aabb, config: &RigConfig) -> Result<CameraRig> {
    if config.head_radius_factor < 1.0 {
        return Err(Error::Config(
            "head arc radius must be at least the workspace diagonal".into(),
        ));
    }
    if !(config.eye_baseline > 0.0) {
        return Err(Error::Config("eye baseline must be positive".into()));
    }
    if config.image_width % 4 != 0 || config.image_height % 4 != 0 {
        return Err(Error::Config(format!(
            "image size {}x{} must be divisible by 4",
            config.image_width, config.image_height
        )));
    }
    let center = workspace.center();
    let radius = workspace.diagonal() * config.head_radius_factor;
    let elev = deg(config.head_elevation_deg);
    let half_arc = deg(config.head_arc_deg) / 2.0;

    // Pose 1 is the rightmost (+x), pose 15 the leftmost, as seen by a robot
    // standing on the -y side and facing +y.
    let head_depth: Vec<Pose> = (0..HEAD_POSES)
        .map(|i| {
            let theta = half_arc - (2.0 * half_arc) * i as f64 / (HEAD_POSES - 1) as f64;
            let eye = center
                + Vec3::new(
                    elev.cos() * theta.sin(),
                    -elev.cos() * theta.cos(),
                    elev.sin(),
                ) * radius;
            Pose::look_at(eye, center, Vec3::z())
        })
        .collect::<Result<_>>()?;
    let eye_left: Vec<Pose> = head_depth
        .iter()
        .map(|p| p.shifted_right(-config.eye_baseline / 2.0))
        .collect();
    let eye_right: Vec<Pose> = head_depth
        .iter()
        .map(|p| p.shifted_right(config.eye_baseline / 2.0))
        .collect();

    let static_radius = workspace.diagonal() * config.static_radius_factor;
    let mut static_cams = Vec::with_capacity(3);
    for (az, el) in config
        .static_azimuths_deg
        .iter()
        .zip(config.static_elevations_deg)
    {
        let (az, el) = (deg(*az), deg(el));
        let eye = center
            + Vec3::new(el.cos() * az.sin(), -el.cos() * az.cos(), el.sin()) * static_radius;
        let pose = Pose::look_at(eye, center, Vec3::z())?;
        let k = fit_intrinsics(
            workspace,
            &[pose],
            config.image_width,
            config.image_height,
            config.frame_fill,
        )?;
        static_cams.push((k, pose));
    }

    let (w, h, fill) = (config.image_width, config.image_height, config.frame_fill);
    let head_intrinsics = fit_intrinsics(workspace, &head_depth, w, h, fill)?;
    let mut eye_poses = eye_left.clone();
    eye_poses.extend(eye_right.iter().copied());
    let eye_intrinsics = fit_intrinsics(workspace, &eye_poses, w, h, fill)?;

    Ok(CameraRig {
        config: config.clone(),
        eye_intrinsics,
        eye_left,
        eye_right,
        head_intrinsics,
        head_depth,
        static_cams,
    })
}
