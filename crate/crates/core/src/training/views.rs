//! Source and target view selection.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scenegen::{eye_left_id, eye_right_id, head_depth_id, static_id, CameraView, SceneSource, CENTER_POSE, HEAD_POSES};
use crate::{Error, Result};

/// Which eye-camera images the model is conditioned on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceSetting {
    /// Left eye at the middle head pose.
    Single,
    /// Left and right eye at the middle head pose.
    Stereo,
    /// Left eye at the first, middle and last head pose.
    ThreePoses,
}

impl SourceSetting {
    pub const ALL: [SourceSetting; 3] = [Self::Single, Self::Stereo, Self::ThreePoses];

    pub fn camera_ids(self) -> Vec<String> {
        match self {
            Self::Single => vec![eye_left_id(CENTER_POSE)],
            Self::Stereo => vec![eye_left_id(CENTER_POSE), eye_right_id(CENTER_POSE)],
            Self::ThreePoses => [1, CENTER_POSE, HEAD_POSES].into_iter().map(eye_left_id).collect(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Single => "single",
            Self::Stereo => "stereo",
            Self::ThreePoses => "three_poses",
        }
    }

    /// Table-style description: (source cameras, head pose).
    pub fn describe(self) -> (&'static str, &'static str) {
        match self {
            Self::Single => ("Left Eye", "Mid"),
            Self::Stereo => ("Left + Right Eye", "Mid"),
            Self::ThreePoses => ("Left Eye", "Left+Mid+Right"),
        }
    }
}

impl fmt::Display for SourceSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceSetting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown source setting '{s}' (single, stereo, three_poses)")))
    }
}

pub fn select_source_views(data: &dyn SceneSource, scene_id: &str, setting: SourceSetting) -> Result<Vec<CameraView>> {
    setting
        .camera_ids()
        .iter()
        .map(|id| data.load_view(scene_id, id))
        .collect()
}

/// Draws a depth-capable camera: one of the three static cameras or the
/// head camera with probability 1/4 each, and a uniform head pose when the
/// head camera is chosen.
pub fn select_target_camera(rng: &mut impl Rng) -> String {
    let cam = rng.gen_range(0..4);
    if cam < 3 {
        static_id(cam + 1)
    } else {
        head_depth_id(rng.gen_range(1..=HEAD_POSES))
    }
}

/// [`select_target_camera`] redrawn until the camera is not in `exclude`.
pub fn select_target_camera_excluding(rng: &mut impl Rng, exclude: &[String]) -> Result<String> {
    let all = 3 + HEAD_POSES;
    let excluded = (1..=3)
        .map(static_id)
        .chain((1..=HEAD_POSES).map(head_depth_id))
        .filter(|id| exclude.contains(id))
        .count();
    if excluded == all {
        return Err(Error::Config("every target camera is held out".into()));
    }
    loop {
        let id = select_target_camera(rng);
        if !exclude.contains(&id) {
            return Ok(id);
        }
    }
}

pub fn select_target_view(data: &dyn SceneSource, scene_id: &str, rng: &mut impl Rng) -> Result<CameraView> {
    data.load_view(scene_id, &select_target_camera(rng))
}
