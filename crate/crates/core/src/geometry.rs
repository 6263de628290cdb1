//! Coordinate plumbing shared by every stage: pinhole intrinsics, rigid poses,
//! rays, axis-aligned boxes, voxel grids and bilinear/trilinear sampling.
//!
//! Conventions:
//!
//! - poses map camera-frame points to the world frame (world-from-camera);
//! - the camera looks along +z with +x right and +y down;
//! - integer pixel coordinates address texel centers;
//! - a [`GridSpec`] origin is the center of voxel `[0, 0, 0]`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::tensor::{Raster, Volume};
use crate::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Points closer than this to the image plane are rejected.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IntrinsicsRepr", into = "IntrinsicsRepr")]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IntrinsicsRepr {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
}

impl TryFrom<IntrinsicsRepr> for CameraIntrinsics {
    type Error = Error;
    fn try_from(r: IntrinsicsRepr) -> Result<Self> {
        CameraIntrinsics::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height)
    }
}

impl From<CameraIntrinsics> for IntrinsicsRepr {
    fn from(k: CameraIntrinsics) -> Self {
        IntrinsicsRepr {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let ok = fx > 0.0
            && fy > 0.0
            && cx > 0.0
            && cy > 0.0
            && cx < width as f64
            && cy < height as f64;
        if !ok {
            return Err(Error::InvalidGeometry(format!(
                "intrinsics fx={fx} fy={fy} cx={cx} cy={cy} for {width}x{height}"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Square-pixel intrinsics with the principal point at the image center.
    pub fn centered(focal: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    /// Whether `(u, v)` lies within the outer texel centers.
    pub fn contains_pixel(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64
    }
}

/// A rigid world-from-camera transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 4]; 4]", into = "[[f64; 4]; 4]")]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl TryFrom<[[f64; 4]; 4]> for Pose {
    type Error = Error;
    fn try_from(m: [[f64; 4]; 4]) -> Result<Self> {
        Pose::from_rows(&m)
    }
}

impl From<Pose> for [[f64; 4]; 4] {
    fn from(p: Pose) -> Self {
        p.to_rows()
    }
}

impl Pose {
    pub const ORTHONORMAL_TOL: f64 = 1e-6;

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let err = (rotation.transpose() * rotation - Mat3::identity()).amax();
        let det = rotation.determinant();
        if err > Self::ORTHONORMAL_TOL || (det - 1.0).abs() > Self::ORTHONORMAL_TOL {
            return Err(Error::InvalidGeometry(format!(
                "rotation not orthonormal (err {err:e}, det {det})"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Camera at `eye` looking at `target`; `up` fixes the roll (image +y
    /// points away from it).
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(Error::InvalidGeometry("look_at eye equals target".into()));
        }
        let forward = forward.normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(Error::InvalidGeometry("look_at up is parallel to view".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        Self::new(Mat3::from_columns(&[right, down, forward]), eye)
    }

    pub fn from_rows(m: &[[f64; 4]; 4]) -> Result<Self> {
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvalidGeometry(format!(
                "pose bottom row must be [0, 0, 0, 1], got {:?}",
                m[3]
            )));
        }
        let r = Mat3::new(
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        );
        Self::new(r, Vec3::new(m[0][3], m[1][3], m[2][3]))
    }

    pub fn to_rows(&self) -> [[f64; 4]; 4] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn center(&self) -> Vec3 {
        self.translation
    }

    /// Optical axis in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }

    pub fn right(&self) -> Vec3 {
        self.rotation.column(0).into_owned()
    }

    /// Same orientation, moved along the camera's own x axis.
    pub fn shifted_right(&self, offset: f64) -> Pose {
        Pose {
            rotation: self.rotation,
            translation: self.translation + self.right() * offset,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AabbRepr", into = "AabbRepr")]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AabbRepr {
    min: [f64; 3],
    max: [f64; 3],
}

impl TryFrom<AabbRepr> for Aabb {
    type Error = Error;
    fn try_from(r: AabbRepr) -> Result<Self> {
        Aabb::new(Vec3::from(r.min), Vec3::from(r.max))
    }
}

impl From<Aabb> for AabbRepr {
    fn from(b: Aabb) -> Self {
        AabbRepr {
            min: b.min.into(),
            max: b.max.into(),
        }
    }
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if !(min.x < max.x && min.y < max.y && min.z < max.z) {
            return Err(Error::InvalidGeometry(format!(
                "aabb min {min:?} must be below max {max:?}"
            )));
        }
        Ok(Self { min, max })
    }

    /// Table-top workspace: 0.96 m × 0.96 m footprint centered on the origin,
    /// 0.48 m tall, floor at z = 0.
    pub fn default_workspace() -> Self {
        Self {
            min: Vec3::new(-0.48, -0.48, 0.0),
            max: Vec3::new(0.48, 0.48, 0.48),
        }
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.contains(&other.min) && self.contains(&other.max)
    }

    pub fn dilate(&self, margin: f64) -> Aabb {
        let m = Vec3::repeat(margin);
        Aabb {
            min: self.min - m,
            max: self.max + m,
        }
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (a, b) = (self.min, self.max);
        [
            Vec3::new(a.x, a.y, a.z),
            Vec3::new(b.x, a.y, a.z),
            Vec3::new(a.x, b.y, a.z),
            Vec3::new(b.x, b.y, a.z),
            Vec3::new(a.x, a.y, b.z),
            Vec3::new(b.x, a.y, b.z),
            Vec3::new(a.x, b.y, b.z),
            Vec3::new(b.x, b.y, b.z),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    /// Normalizes `direction`.
    pub fn new(origin: Vec3, direction: Vec3) -> Result<Self> {
        let n = direction.norm();
        if !(n > 1e-12) || !n.is_finite() {
            return Err(Error::InvalidGeometry("ray direction has zero length".into()));
        }
        Ok(Self {
            origin,
            direction: direction / n,
        })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// Regular voxel lattice in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct GridSpec {
    /// Center of voxel `[0, 0, 0]`.
    pub origin: Vec3,
    pub spacing: f64,
    /// Voxel counts along x, y, z.
    pub dims: [usize; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridRepr {
    origin: [f64; 3],
    spacing: f64,
    dims: [usize; 3],
}

impl TryFrom<GridRepr> for GridSpec {
    type Error = Error;
    fn try_from(r: GridRepr) -> Result<Self> {
        GridSpec::new(Vec3::from(r.origin), r.spacing, r.dims)
    }
}

impl From<GridSpec> for GridRepr {
    fn from(g: GridSpec) -> Self {
        GridRepr {
            origin: g.origin.into(),
            spacing: g.spacing,
            dims: g.dims,
        }
    }
}

impl GridSpec {
    pub fn new(origin: Vec3, spacing: f64, dims: [usize; 3]) -> Result<Self> {
        if !(spacing > 0.0) || dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidGeometry(format!(
                "grid spacing {spacing} dims {dims:?}"
            )));
        }
        Ok(Self {
            origin,
            spacing,
            dims,
        })
    }

    /// Tiles `workspace` with cubic voxels of side `spacing`. Every dimension
    /// must be a multiple of 8 so the U-Net can halve it three times.
    pub fn for_workspace(workspace: &Aabb, spacing: f64) -> Result<Self> {
        let ext = workspace.extent();
        let mut dims = [0usize; 3];
        for a in 0..3 {
            let n = ext[a] / spacing;
            let r = n.round();
            if (n - r).abs() > 1e-6 || r < 1.0 {
                return Err(Error::InvalidGeometry(format!(
                    "workspace extent {} is not a multiple of spacing {spacing}",
                    ext[a]
                )));
            }
            dims[a] = r as usize;
        }
        let g = Self::new(
            workspace.min + Vec3::repeat(spacing * 0.5),
            spacing,
            dims,
        )?;
        g.check_divisible(8)?;
        Ok(g)
    }

    pub fn check_divisible(&self, factor: usize) -> Result<()> {
        if self.dims.iter().any(|d| d % factor != 0) {
            return Err(Error::Shape(format!(
                "grid dims {:?} must be divisible by {factor}",
                self.dims
            )));
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.spacing
    }

    /// Box spanned by the outermost voxel centers: the domain of
    /// [`trilinear_sample`].
    pub fn sample_bounds(&self) -> Aabb {
        let last = Vec3::new(
            (self.dims[0] - 1) as f64,
            (self.dims[1] - 1) as f64,
            (self.dims[2] - 1) as f64,
        ) * self.spacing;
        Aabb {
            min: self.origin,
            max: self.origin + last,
        }
    }

    /// Box covered by the voxels themselves (outer faces).
    pub fn cell_bounds(&self) -> Aabb {
        let b = self.sample_bounds();
        b.dilate(self.spacing * 0.5)
    }

    pub fn fits_inside(&self, workspace: &Aabb) -> bool {
        workspace.dilate(1e-9).contains_box(&self.cell_bounds())
    }

    /// Position normalized to `[0, 1]³` over the sample bounds. Axes with a
    /// single voxel map to 0.
    pub fn relative_position(&self, p: &Vec3) -> Vec3 {
        let mut r = Vec3::zeros();
        for a in 0..3 {
            let span = (self.dims[a] - 1) as f64 * self.spacing;
            r[a] = if span > 0.0 {
                (p[a] - self.origin[a]) / span
            } else {
                0.0
            };
        }
        r
    }
}

/// World point to pixel coordinates and camera z-depth.
pub fn project_point(
    intrinsics: &CameraIntrinsics,
    world_from_camera: &Pose,
    p_world: &Vec3,
) -> Result<(f64, f64, f64)> {
    let p = world_from_camera.rotation.transpose() * (p_world - world_from_camera.translation);
    if p.z <= MIN_DEPTH {
        return Err(Error::BehindCamera { z_cam: p.z });
    }
    let u = intrinsics.fx * p.x / p.z + intrinsics.cx;
    let v = intrinsics.fy * p.y / p.z + intrinsics.cy;
    Ok((u, v, p.z))
}

/// Ray through pixel `(u, v)` starting at the camera center.
pub fn pixel_to_ray(intrinsics: &CameraIntrinsics, world_from_camera: &Pose, u: f64, v: f64) -> Ray {
    let d_cam = Vec3::new(
        (u - intrinsics.cx) / intrinsics.fx,
        (v - intrinsics.cy) / intrinsics.fy,
        1.0,
    );
    let d = world_from_camera.rotation * d_cam;
    Ray {
        origin: world_from_camera.translation,
        direction: d.normalize(),
    }
}

/// Slab test. Returns `(t_near, t_far)` with `t_near` clamped to 0, or `None`
/// when the ray misses the box or the box lies behind the origin.
pub fn ray_aabb_intersect(ray: &Ray, aabb: &Aabb) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        let o = ray.origin[a];
        let d = ray.direction[a];
        if d.abs() < 1e-300 {
            if o < aabb.min[a] || o > aabb.max[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d;
        let mut ta = (aabb.min[a] - o) * inv;
        let mut tb = (aabb.max[a] - o) * inv;
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    if t1 < t0 || t1 < 0.0 {
        return None;
    }
    Some((t0.max(0.0), t1))
}

/// Corner texels and weights of a bilinear lookup. Indices are pixel indices
/// (`y * width + x`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BilinearTap {
    pub index: [usize; 4],
    pub weight: [f64; 4],
}

fn lerp_cell(coord: f64, n: usize) -> (usize, usize, f64) {
    let c0 = (coord.floor() as usize).min(n - 1);
    let c1 = (c0 + 1).min(n - 1);
    (c0, c1, coord - c0 as f64)
}

pub fn bilinear_tap(width: usize, height: usize, u: f64, v: f64) -> Result<BilinearTap> {
    let in_range = width > 0
        && height > 0
        && u >= 0.0
        && v >= 0.0
        && u <= (width - 1) as f64
        && v <= (height - 1) as f64;
    if !in_range {
        return Err(Error::OutOfBounds(format!(
            "pixel ({u}, {v}) outside {width}x{height}"
        )));
    }
    let (x0, x1, fx) = lerp_cell(u, width);
    let (y0, y1, fy) = lerp_cell(v, height);
    Ok(BilinearTap {
        index: [
            y0 * width + x0,
            y0 * width + x1,
            y1 * width + x0,
            y1 * width + x1,
        ],
        weight: [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ],
    })
}

impl BilinearTap {
    pub fn gather(&self, map: &Raster, out: &mut [f64]) {
        let c = map.channels;
        out.fill(0.0);
        for (idx, w) in self.index.iter().zip(self.weight) {
            let texel = &map.data[idx * c..idx * c + c];
            for (o, t) in out.iter_mut().zip(texel) {
                *o += w * t;
            }
        }
    }

    /// Adjoint of [`gather`](Self::gather): accumulates `grad` into the corner texels.
    pub fn scatter(&self, grad: &[f64], grad_map: &mut Raster) {
        let c = grad_map.channels;
        for (idx, w) in self.index.iter().zip(self.weight) {
            let texel = &mut grad_map.data[idx * c..idx * c + c];
            for (t, g) in texel.iter_mut().zip(grad) {
                *t += w * g;
            }
        }
    }
}

pub fn bilinear_sample(map: &Raster, u: f64, v: f64) -> Result<Vec<f64>> {
    let tap = bilinear_tap(map.width, map.height, u, v)?;
    let mut out = vec![0.0; map.channels];
    tap.gather(map, &mut out);
    Ok(out)
}

/// Corner voxels and weights of a trilinear lookup. Indices are voxel indices
/// in [`Volume`] order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrilinearTap {
    pub index: [usize; 8],
    pub weight: [f64; 8],
}

/// Points this close outside the sample bounds are clamped rather than rejected.
const GRID_EPS: f64 = 1e-9;

pub fn trilinear_tap(grid: &GridSpec, p_world: &Vec3) -> Result<TrilinearTap> {
    let mut cells = [(0usize, 0usize, 0.0f64); 3];
    for a in 0..3 {
        let g = (p_world[a] - grid.origin[a]) / grid.spacing;
        let hi = (grid.dims[a] - 1) as f64;
        if !(g >= -GRID_EPS && g <= hi + GRID_EPS) {
            return Err(Error::OutOfBounds(format!(
                "point {:?} outside grid sample bounds",
                p_world.as_slice()
            )));
        }
        cells[a] = lerp_cell(g.clamp(0.0, hi), grid.dims[a]);
    }
    let [(x0, x1, fx), (y0, y1, fy), (z0, z1, fz)] = cells;
    let (nx, ny) = (grid.dims[0], grid.dims[1]);
    let idx = |i: usize, j: usize, k: usize| (k * ny + j) * nx + i;
    let mut index = [0usize; 8];
    let mut weight = [0.0f64; 8];
    let mut n = 0;
    for (k, wz) in [(z0, 1.0 - fz), (z1, fz)] {
        for (j, wy) in [(y0, 1.0 - fy), (y1, fy)] {
            for (i, wx) in [(x0, 1.0 - fx), (x1, fx)] {
                index[n] = idx(i, j, k);
                weight[n] = wx * wy * wz;
                n += 1;
            }
        }
    }
    Ok(TrilinearTap { index, weight })
}

impl TrilinearTap {
    pub fn gather(&self, volume: &Volume, out: &mut [f64]) {
        let c = volume.channels;
        out.fill(0.0);
        for (idx, w) in self.index.iter().zip(self.weight) {
            let vox = &volume.data[idx * c..idx * c + c];
            for (o, t) in out.iter_mut().zip(vox) {
                *o += w * t;
            }
        }
    }

    pub fn scatter(&self, grad: &[f64], grad_volume: &mut Volume) {
        let c = grad_volume.channels;
        for (idx, w) in self.index.iter().zip(self.weight) {
            let vox = &mut grad_volume.data[idx * c..idx * c + c];
            for (t, g) in vox.iter_mut().zip(grad) {
                *t += w * g;
            }
        }
    }
}

pub fn trilinear_sample(volume: &Volume, grid: &GridSpec, p_world: &Vec3) -> Result<Vec<f64>> {
    if volume.dims != grid.dims {
        return Err(Error::Shape(format!(
            "volume dims {:?} do not match grid {:?}",
            volume.dims, grid.dims
        )));
    }
    let tap = trilinear_tap(grid, p_world)?;
    let mut out = vec![0.0; volume.channels];
    tap.gather(volume, &mut out);
    Ok(out)
}
