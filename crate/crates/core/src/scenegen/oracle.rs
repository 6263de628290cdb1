use crate::geometry::{pixel_to_ray, CameraIntrinsics, Pose, Ray, Vec3};
use crate::par;
use crate::tensor::Raster;

use super::{Primitive, Scene, Shape};

/// Rays that hit nothing closer than this (meters along the ray) see the sky.
pub const FAR_BOUND: f64 = 10.0;
pub const BACKGROUND_RGB: [f64; 3] = [0.55, 0.65, 0.8];
/// Direction towards the light, world frame (unnormalized).
pub const LIGHT_DIR: [f64; 3] = [0.4, -0.3, 1.0];
const AMBIENT: f64 = 0.35;
const HIT_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    /// Distance along the (unit) ray.
    pub t: f64,
    pub normal: Vec3,
    pub albedo: [f64; 3],
    /// Index into `scene.primitives`; `None` for the floor.
    pub primitive: Option<usize>,
}

fn intersect_sphere(ray: &Ray, center: &Vec3, radius: f64) -> Option<(f64, Vec3)> {
    let oc = ray.origin - center;
    let b = oc.dot(&ray.direction);
    let c = oc.norm_squared() - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    let t = if -b - s > HIT_EPS { -b - s } else { -b + s };
    if t <= HIT_EPS {
        return None;
    }
    Some((t, (ray.at(t) - center) / radius))
}

fn intersect_box(ray: &Ray, pose: &Pose, half: &[f64; 3]) -> Option<(f64, Vec3)> {
    let rt = pose.rotation.transpose();
    let o = rt * (ray.origin - pose.translation);
    let d = rt * ray.direction;
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    let mut enter_axis = 0;
    let mut enter_sign = 0.0;
    let mut exit_axis = 0;
    let mut exit_sign = 0.0;
    for a in 0..3 {
        if d[a].abs() < 1e-300 {
            if o[a].abs() > half[a] {
                return None;
            }
            continue;
        }
        let ta = (-half[a] - o[a]) / d[a];
        let tb = (half[a] - o[a]) / d[a];
        let (near, far, near_sign) = if ta < tb { (ta, tb, -1.0) } else { (tb, ta, 1.0) };
        if near > t0 {
            t0 = near;
            enter_axis = a;
            enter_sign = near_sign;
        }
        if far < t1 {
            t1 = far;
            exit_axis = a;
            exit_sign = -near_sign;
        }
    }
    if t1 < t0 || t1 <= HIT_EPS {
        return None;
    }
    let (t, axis, sign) = if t0 > HIT_EPS {
        (t0, enter_axis, enter_sign)
    } else {
        (t1, exit_axis, exit_sign)
    };
    let mut n_local = Vec3::zeros();
    n_local[axis] = sign;
    Some((t, pose.rotation * n_local))
}

fn intersect_primitive(ray: &Ray, p: &Primitive) -> Option<(f64, Vec3)> {
    match p.shape {
        Shape::Sphere { radius } => intersect_sphere(ray, &p.center(), radius),
        Shape::Box { half_extents } => intersect_box(ray, &p.pose, &half_extents),
    }
}

/// Nearest surface along `ray` within [`FAR_BOUND`].
pub fn trace_ray(scene: &Scene, ray: &Ray) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for (i, prim) in scene.primitives.iter().enumerate() {
        if let Some((t, normal)) = intersect_primitive(ray, prim) {
            if best.map_or(true, |b| t < b.t) {
                best = Some(Hit {
                    t,
                    normal,
                    albedo: prim.albedo,
                    primitive: Some(i),
                });
            }
        }
    }
    let dz = ray.direction.z;
    if dz.abs() > 1e-300 {
        let t = (scene.floor_z() - ray.origin.z) / dz;
        let normal = if ray.origin.z >= scene.floor_z() {
            Vec3::z()
        } else {
            -Vec3::z()
        };
        if t > HIT_EPS && best.map_or(true, |b| t < b.t) {
            best = Some(Hit {
                t,
                normal,
                albedo: scene.floor_albedo,
                primitive: None,
            });
        }
    }
    best.filter(|h| h.t <= FAR_BOUND)
}

fn shade(hit: &Hit) -> [f64; 3] {
    let l = Vec3::from(LIGHT_DIR).normalize();
    let lambert = hit.normal.dot(&l).max(0.0);
    let k = AMBIENT + (1.0 - AMBIENT) * lambert;
    hit.albedo.map(|a| (a * k).clamp(0.0, 1.0))
}

/// Ground-truth RGB and z-depth images. Depth is 0 where the ray escapes.
pub fn oracle_render(scene: &Scene, intrinsics: &CameraIntrinsics, pose: &Pose) -> (Raster, Raster) {
    let (w, h) = (intrinsics.width, intrinsics.height);
    let forward = pose.forward();
    let rows = par::map_range(h, |y| {
        let mut rgb = Vec::with_capacity(w * 3);
        let mut depth = Vec::with_capacity(w);
        for x in 0..w {
            let ray = pixel_to_ray(intrinsics, pose, x as f64, y as f64);
            match trace_ray(scene, &ray) {
                Some(hit) => {
                    rgb.extend_from_slice(&shade(&hit));
                    depth.push(hit.t * ray.direction.dot(&forward));
                }
                None => {
                    rgb.extend_from_slice(&BACKGROUND_RGB);
                    depth.push(0.0);
                }
            }
        }
        (rgb, depth)
    });
    let mut rgb = Vec::with_capacity(w * h * 3);
    let mut depth = Vec::with_capacity(w * h);
    for (r, d) in rows {
        rgb.extend(r);
        depth.extend(d);
    }
    (
        Raster {
            width: w,
            height: h,
            channels: 3,
            data: rgb,
        },
        Raster {
            width: w,
            height: h,
            channels: 1,
            data: depth,
        },
    )
}
