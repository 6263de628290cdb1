//! Synthetic table-top scenes standing in for captured robot data.
//!
//! Each scene is a handful of spheres and boxes resting on a floor plane
//! inside the workspace. [`oracle_render`] ray-traces them in closed form and
//! produces exact RGB-D ground truth for any camera.

mod dataset;
mod oracle;
mod rig;

pub use dataset::{
    read_dataset, read_depth16, read_rgb8, write_dataset, write_depth16, write_gray8, write_rgb8,
    CameraView, Dataset, DatasetManifest, MemoryDataset, SceneMeta, SceneSource, Split, ViewMeta,
    FORMAT_VERSION,
};
pub use oracle::{oracle_render, trace_ray, Hit, BACKGROUND_RGB, FAR_BOUND, LIGHT_DIR};
pub use rig::{
    build_rig, eye_left_id, eye_right_id, head_depth_id, static_id, CameraRig, RigCamera, RigConfig,
    CENTER_POSE, HEAD_POSES,
};

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::geometry::{Aabb, Pose, Vec3};
use crate::rng::StreamRng;
use crate::{Error, Result};

/// Floor plane sits this far below the workspace bottom, so floor pixels
/// back-project outside the workspace and never enter depth evaluation.
pub const FLOOR_GAP: f64 = 0.01;

/// Half-extent / radius range for generated objects, meters.
pub const SIZE_RANGE: (f64, f64) = (0.03, 0.08);

pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { radius: f64 },
    Box { half_extents: [f64; 3] },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    /// Object-to-world transform; the translation is the shape center.
    pub pose: Pose,
    pub albedo: [f64; 3],
}

impl Primitive {
    pub fn center(&self) -> Vec3 {
        self.pose.translation
    }

    pub fn bounding_radius(&self) -> f64 {
        match self.shape {
            Shape::Sphere { radius } => radius,
            Shape::Box { half_extents } => Vec3::from(half_extents).norm(),
        }
    }

    /// Closed point-membership test.
    pub fn contains(&self, p: &Vec3) -> bool {
        match self.shape {
            Shape::Sphere { radius } => (p - self.center()).norm() <= radius,
            Shape::Box { half_extents } => {
                let local = self.pose.inverse().transform_point(p);
                (0..3).all(|a| local[a].abs() <= half_extents[a])
            }
        }
    }

    /// World-space box enclosing the shape.
    pub fn bounds(&self) -> Aabb {
        let half = match self.shape {
            Shape::Sphere { radius } => Vec3::repeat(radius),
            Shape::Box { half_extents } => {
                let r = self.pose.rotation.abs();
                r * Vec3::from(half_extents)
            }
        };
        Aabb {
            min: self.center() - half,
            max: self.center() + half,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub workspace: Aabb,
    pub primitives: Vec<Primitive>,
    pub floor_albedo: [f64; 3],
}

impl Scene {
    pub fn floor_z(&self) -> f64 {
        self.workspace.min.z - FLOOR_GAP
    }

    /// Same workspace and floor without any objects.
    pub fn empty(&self) -> Scene {
        Scene {
            id: format!("{}_empty", self.id),
            workspace: self.workspace,
            primitives: Vec::new(),
            floor_albedo: self.floor_albedo,
        }
    }

    /// Whether `p` lies inside any primitive.
    pub fn occupied(&self, p: &Vec3) -> bool {
        self.primitives.iter().any(|s| s.contains(p))
    }
}

fn sample_albedo(rng: &mut StreamRng) -> [f64; 3] {
    [
        rng.gen_range(0.1..0.95),
        rng.gen_range(0.1..0.95),
        rng.gen_range(0.1..0.95),
    ]
}

/// Rejection-samples `n_objects` non-overlapping primitives resting on the
/// workspace floor. Deterministic in `seed`.
pub fn generate_scene(seed: u64, n_objects: usize, workspace: &Aabb) -> Result<Scene> {
    let mut rng = StreamRng::seed_from_u64(seed);
    let floor_albedo = [
        rng.gen_range(0.3..0.6),
        rng.gen_range(0.3..0.6),
        rng.gen_range(0.3..0.6),
    ];
    let (lo, hi) = SIZE_RANGE;
    let mut placed: Vec<Primitive> = Vec::with_capacity(n_objects);
    let mut attempts = 0usize;

    while placed.len() < n_objects {
        let sphere = rng.gen_bool(0.5);
        let shape = if sphere {
            Shape::Sphere {
                radius: rng.gen_range(lo..hi),
            }
        } else {
            Shape::Box {
                half_extents: [
                    rng.gen_range(lo..hi),
                    rng.gen_range(lo..hi),
                    rng.gen_range(lo..hi),
                ],
            }
        };
        let yaw: f64 = if sphere {
            0.0
        } else {
            rng.gen_range(0.0..std::f64::consts::FRAC_PI_2)
        };
        let albedo = sample_albedo(&mut rng);
        let (height, bound) = match shape {
            Shape::Sphere { radius } => (radius, radius),
            Shape::Box { half_extents } => (half_extents[2], Vec3::from(half_extents).norm()),
        };

        loop {
            if attempts >= MAX_PLACEMENT_ATTEMPTS {
                return Err(Error::PlacementFailed {
                    requested: n_objects,
                    attempts,
                });
            }
            attempts += 1;
            let x = rng.gen_range(0.0..1.0) * (workspace.extent().x - 2.0 * bound)
                + workspace.min.x
                + bound;
            let y = rng.gen_range(0.0..1.0) * (workspace.extent().y - 2.0 * bound)
                + workspace.min.y
                + bound;
            let center = Vec3::new(x, y, workspace.min.z + height);
            let rotation = nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), yaw).into_inner();
            let candidate = Primitive {
                shape,
                pose: Pose {
                    rotation,
                    translation: center,
                },
                albedo,
            };
            if !workspace.contains_box(&candidate.bounds()) {
                continue;
            }
            let clear = placed.iter().all(|p| {
                (p.center() - center).norm() >= p.bounding_radius() + candidate.bounding_radius()
            });
            if clear {
                placed.push(candidate);
                break;
            }
        }
    }

    Ok(Scene {
        id: format!("seed_{seed}"),
        workspace: *workspace,
        primitives: placed,
        floor_albedo,
    })
}

/// Id of the `index`-th generated scene.
pub fn scene_id(index: usize) -> String {
    format!("scene_{index:03}")
}

/// `n_scenes` scenes, each seeded from its own sub-stream of `seed`.
pub fn generate_scenes(seed: u64, n_scenes: usize, n_objects: usize, workspace: &Aabb) -> Result<Vec<Scene>> {
    (0..n_scenes)
        .map(|i| {
            let mut s = generate_scene(crate::rng::stream_seed(seed, "scene", i as u64), n_objects, workspace)?;
            s.id = scene_id(i);
            Ok(s)
        })
        .collect()
}

/// Generated scenes served from memory, with the last `n_eval` held out.
pub fn synthetic_dataset(
    seed: u64,
    n_scenes: usize,
    n_eval: usize,
    n_objects: usize,
    workspace: &Aabb,
    rig: &RigConfig,
) -> Result<MemoryDataset> {
    let scenes = generate_scenes(seed, n_scenes, n_objects, workspace)?;
    let ids: Vec<String> = scenes.iter().map(|s| s.id.clone()).collect();
    let split = Split::tail(&ids, n_eval)?;
    MemoryDataset::new(scenes, build_rig(workspace, rig)?, split)
}
