//! Coordinate frames, camera projection, ray generation, grid indexing and
//! interpolation.
//!
//! Conventions fixed once for the whole pipeline:
//!
//! * World `z` is up. BEV grids index `(x, y)` with `x` east and `y` north.
//! * A camera looks along the `+z` axis of its own frame; image `x` is
//!   right, image `y` is down, so `u = fx*x/z + cx`, `v = fy*y/z + cy`.
//! * Poses are stored as a rotation matrix plus translation and map local
//!   coordinates to world coordinates.
//! * Continuous sample coordinates use the node convention: a 2-D or 3-D
//!   array value with index `i` sits at coordinate `i`, so interpolating at
//!   an integer coordinate returns that entry exactly. Grids of cell-centered
//!   values convert world positions with [`GridSpec2::world_to_node`].
//! * Sampling outside an array is an explicit `None`, never a clamp: callers
//!   must mask out-of-range contributions rather than fabricate them.

use alloc::vec::Vec;

/// 3-vector of meters (or any consistent unit).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        crate::math::sqrt(self.dot(self))
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        Vec3::new(self.x / n, self.y / n, self.z / n)
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl core::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl core::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

/// Row-major 3x3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3 {
    pub rows: [[f64; 3]; 3],
}

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3 {
        rows: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    /// Builds a matrix from its three column vectors.
    pub fn from_cols(c0: Vec3, c1: Vec3, c2: Vec3) -> Mat3 {
        Mat3 {
            rows: [
                [c0.x, c1.x, c2.x],
                [c0.y, c1.y, c2.y],
                [c0.z, c1.z, c2.z],
            ],
        }
    }

    /// Rotation about the world z axis; positive angle maps +x toward +y.
    pub fn yaw(angle: f64) -> Mat3 {
        let (s, c) = (crate::math::sin(angle), crate::math::cos(angle));
        Mat3 {
            rows: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let r = &self.rows;
        Vec3::new(
            r[0][0] * v.x + r[0][1] * v.y + r[0][2] * v.z,
            r[1][0] * v.x + r[1][1] * v.y + r[1][2] * v.z,
            r[2][0] * v.x + r[2][1] * v.y + r[2][2] * v.z,
        )
    }

    /// `Rᵀ v` without materializing the transpose.
    pub fn transpose_mul_vec(&self, v: Vec3) -> Vec3 {
        let r = &self.rows;
        Vec3::new(
            r[0][0] * v.x + r[1][0] * v.y + r[2][0] * v.z,
            r[0][1] * v.x + r[1][1] * v.y + r[2][1] * v.z,
            r[0][2] * v.x + r[1][2] * v.y + r[2][2] * v.z,
        )
    }

    pub fn mul_mat(&self, o: &Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.rows[i][k] * o.rows[k][j]).sum();
            }
        }
        Mat3 { rows: out }
    }

    pub fn transpose(&self) -> Mat3 {
        let r = &self.rows;
        Mat3 {
            rows: [
                [r[0][0], r[1][0], r[2][0]],
                [r[0][1], r[1][1], r[2][1]],
                [r[0][2], r[1][2], r[2][2]],
            ],
        }
    }

    pub fn det(&self) -> f64 {
        let r = &self.rows;
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }
}

/// Rigid local→world transform: `p_world = R p_local + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        rotation: Mat3::IDENTITY,
        translation: Vec3::ZERO,
    };

    pub fn new(rotation: Mat3, translation: Vec3) -> Pose {
        Pose { rotation, translation }
    }

    /// Checks that the rotation is orthonormal with determinant +1.
    pub fn is_valid(&self, tol: f64) -> bool {
        let rt_r = self.rotation.transpose().mul_mat(&self.rotation);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                if (rt_r.rows[i][j] - want).abs() > tol {
                    return false;
                }
            }
        }
        (self.rotation.det() - 1.0).abs() <= tol
    }

    /// Local → world.
    pub fn to_world(&self, p: Vec3) -> Vec3 {
        self.rotation.mul_vec(p) + self.translation
    }

    /// World → local: `Rᵀ (p − t)`.
    pub fn to_local(&self, p: Vec3) -> Vec3 {
        self.rotation.transpose_mul_vec(p - self.translation)
    }

    /// Rotates a direction into world axes (no translation).
    pub fn rotate_to_world(&self, d: Vec3) -> Vec3 {
        self.rotation.mul_vec(d)
    }

    /// Rotates a world direction into local axes.
    pub fn rotate_to_local(&self, d: Vec3) -> Vec3 {
        self.rotation.transpose_mul_vec(d)
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.mul_mat(&other.rotation),
            translation: self.rotation.mul_vec(other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            translation: rt.mul_vec(self.translation).scale(-1.0),
            rotation: rt,
        }
    }
}

/// Pinhole camera: intrinsics in pixels plus a camera→frame extrinsic pose.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Camera frame → carrying frame (e.g. ego vehicle).
    pub extrinsic: Pose,
}

/// Points closer than this along the optical axis count as out of frustum.
pub const MIN_PROJECT_DEPTH: f64 = 1e-6;

impl CameraModel {
    pub fn is_valid(&self) -> bool {
        self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64
    }

    /// Optical axis direction expressed in the carrying frame.
    pub fn axis_in_frame(&self) -> Vec3 {
        self.extrinsic.rotate_to_world(Vec3::new(0.0, 0.0, 1.0))
    }
}

/// Image-plane hit of a projected point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelHit {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// Projects a point given in the camera's carrying frame.
///
/// Returns `None` when the point is behind the camera (depth ≤
/// [`MIN_PROJECT_DEPTH`]) or falls outside `[0, width) × [0, height)`;
/// out-of-frustum is a valued outcome, not an error.
pub fn project_point(cam: &CameraModel, p_frame: Vec3) -> Option<PixelHit> {
    let pc = cam.extrinsic.to_local(p_frame);
    if pc.z <= MIN_PROJECT_DEPTH {
        return None;
    }
    let u = cam.fx * pc.x / pc.z + cam.cx;
    let v = cam.fy * pc.y / pc.z + cam.cy;
    if u < 0.0 || u >= cam.width as f64 || v < 0.0 || v >= cam.height as f64 {
        return None;
    }
    Some(PixelHit { u, v, depth: pc.z })
}

/// World-space ray with a march range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit direction.
    pub dir: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir.scale(t)
    }
}

/// Errors from ray construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum GeometryError {
    #[error("pixel outside image rectangle")]
    PixelOutsideImage,
}

/// World-space ray through continuous pixel coordinates `(u, v)`.
///
/// `frame_pose` carries the camera rig; the ray inverts [`project_point`], so
/// projecting any point `o + t d` with `t_near < t < t_far` lands back on
/// `(u, v)`.
pub fn pixel_ray(
    cam: &CameraModel,
    frame_pose: &Pose,
    u: f64,
    v: f64,
    t_near: f64,
    t_far: f64,
) -> Result<Ray, GeometryError> {
    if u < 0.0 || u >= cam.width as f64 || v < 0.0 || v >= cam.height as f64 {
        return Err(GeometryError::PixelOutsideImage);
    }
    let d_cam = Vec3::new((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
    let cam_to_world = frame_pose.compose(&cam.extrinsic);
    Ok(Ray {
        origin: cam_to_world.translation,
        dir: cam_to_world.rotate_to_world(d_cam).normalized(),
        t_near,
        t_far,
    })
}

/// 2-D grid of cell-centered values: `origin` is the min corner in meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec2 {
    pub origin: [f64; 2],
    pub cell_size: f64,
    pub dims: [usize; 2],
}

impl GridSpec2 {
    pub fn new(origin: [f64; 2], cell_size: f64, dims: [usize; 2]) -> GridSpec2 {
        assert!(cell_size > 0.0 && dims[0] >= 1 && dims[1] >= 1);
        GridSpec2 { origin, cell_size, dims }
    }

    pub fn n_cells(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    /// Flat index with x innermost.
    pub fn idx(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix < self.dims[0] && iy < self.dims[1]);
        iy * self.dims[0] + ix
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            self.origin[0] + (ix as f64 + 0.5) * self.cell_size,
            self.origin[1] + (iy as f64 + 0.5) * self.cell_size,
        ]
    }

    /// Cell containing a world position, if inside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = (x - self.origin[0]) / self.cell_size;
        let fy = (y - self.origin[1]) / self.cell_size;
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let (ix, iy) = (fx as usize, fy as usize);
        if ix < self.dims[0] && iy < self.dims[1] {
            Some((ix, iy))
        } else {
            None
        }
    }

    /// World position → node coordinates for interpolating cell-centered data.
    pub fn world_to_node(&self, x: f64, y: f64) -> [f64; 2] {
        [
            (x - self.origin[0]) / self.cell_size - 0.5,
            (y - self.origin[1]) / self.cell_size - 0.5,
        ]
    }

    pub fn extent(&self) -> [f64; 2] {
        [
            self.dims[0] as f64 * self.cell_size,
            self.dims[1] as f64 * self.cell_size,
        ]
    }
}

/// 3-D grid of cell-centered values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec3 {
    pub origin: Vec3,
    pub cell_size: f64,
    pub dims: [usize; 3],
}

impl GridSpec3 {
    pub fn new(origin: Vec3, cell_size: f64, dims: [usize; 3]) -> GridSpec3 {
        assert!(cell_size > 0.0 && dims.iter().all(|&d| d >= 1));
        GridSpec3 { origin, cell_size, dims }
    }

    pub fn n_cells(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Flat index: z outermost, x innermost.
    pub fn idx(&self, ix: usize, iy: usize, iz: usize) -> usize {
        debug_assert!(ix < self.dims[0] && iy < self.dims[1] && iz < self.dims[2]);
        (iz * self.dims[1] + iy) * self.dims[0] + ix
    }

    pub fn cell_center(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        Vec3::new(
            self.origin.x + (ix as f64 + 0.5) * self.cell_size,
            self.origin.y + (iy as f64 + 0.5) * self.cell_size,
            self.origin.z + (iz as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn world_to_node(&self, p: Vec3) -> Vec3 {
        Vec3::new(
            (p.x - self.origin.x) / self.cell_size - 0.5,
            (p.y - self.origin.y) / self.cell_size - 0.5,
            (p.z - self.origin.z) / self.cell_size - 0.5,
        )
    }

    pub fn max_corner(&self) -> Vec3 {
        Vec3::new(
            self.origin.x + self.dims[0] as f64 * self.cell_size,
            self.origin.y + self.dims[1] as f64 * self.cell_size,
            self.origin.z + self.dims[2] as f64 * self.cell_size,
        )
    }

    /// Intersects a ray with the grid box; returns the clipped `[t0, t1]`
    /// within `[ray.t_near, ray.t_far]`, or `None` when the ray misses.
    pub fn clip_ray(&self, ray: &Ray) -> Option<(f64, f64)> {
        let lo = self.origin;
        let hi = self.max_corner();
        let mut t0 = ray.t_near;
        let mut t1 = ray.t_far;
        for axis in 0..3 {
            let (o, d, l, h) = match axis {
                0 => (ray.origin.x, ray.dir.x, lo.x, hi.x),
                1 => (ray.origin.y, ray.dir.y, lo.y, hi.y),
                _ => (ray.origin.z, ray.dir.z, lo.z, hi.z),
            };
            if d.abs() < 1e-15 {
                if o < l || o > h {
                    return None;
                }
                continue;
            }
            let (mut ta, mut tb) = ((l - o) / d, (h - o) / d);
            if ta > tb {
                core::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 >= t1 {
                return None;
            }
        }
        Some((t0, t1))
    }
}

/// Bilinear interpolation of a C-channel 2-D array at node coordinates.
///
/// `data` is laid out `(iy * width + ix) * channels + c`. Returns `None`
/// when the footprint leaves the array.
pub fn bilinear_sample(
    data: &[f64],
    width: usize,
    height: usize,
    channels: usize,
    x: f64,
    y: f64,
    out: &mut [f64],
) -> Option<()> {
    debug_assert_eq!(data.len(), width * height * channels);
    debug_assert_eq!(out.len(), channels);
    if !(0.0..=(width - 1) as f64).contains(&x) || !(0.0..=(height - 1) as f64).contains(&y) {
        return None;
    }
    // Clamp the base index so x == width-1 degenerates to fraction 1 on the
    // last interval instead of stepping outside.
    let ix = (crate::math::floor(x) as usize).min(width.saturating_sub(2));
    let iy = (crate::math::floor(y) as usize).min(height.saturating_sub(2));
    let fx = x - ix as f64;
    let fy = y - iy as f64;
    let ix1 = (ix + 1).min(width - 1);
    let iy1 = (iy + 1).min(height - 1);
    let w00 = (1.0 - fx) * (1.0 - fy);
    let w10 = fx * (1.0 - fy);
    let w01 = (1.0 - fx) * fy;
    let w11 = fx * fy;
    let b00 = (iy * width + ix) * channels;
    let b10 = (iy * width + ix1) * channels;
    let b01 = (iy1 * width + ix) * channels;
    let b11 = (iy1 * width + ix1) * channels;
    for c in 0..channels {
        out[c] = w00 * data[b00 + c] + w10 * data[b10 + c] + w01 * data[b01 + c] + w11 * data[b11 + c];
    }
    Some(())
}

/// One trilinear lookup: interpolated values plus the corner weights and
/// flat indices, exposed so gradients can be scattered back by hand.
#[derive(Clone, Debug)]
pub struct TrilinearSample {
    pub weights: [f64; 8],
    pub indices: [usize; 8],
}

/// Trilinear interpolation over a 3-D grid at node coordinates, single
/// channel per call site responsibility: `values` gets one entry per channel
/// of `data` (layout `flat_idx * channels + c`, flat index per
/// [`GridSpec3::idx`]).
pub fn trilinear_sample(
    data: &[f64],
    dims: [usize; 3],
    channels: usize,
    p: Vec3,
    values: &mut [f64],
) -> Option<TrilinearSample> {
    let [nx, ny, nz] = dims;
    debug_assert_eq!(data.len(), nx * ny * nz * channels);
    debug_assert_eq!(values.len(), channels);
    if !(0.0..=(nx - 1) as f64).contains(&p.x)
        || !(0.0..=(ny - 1) as f64).contains(&p.y)
        || !(0.0..=(nz - 1) as f64).contains(&p.z)
    {
        return None;
    }
    let ix = (crate::math::floor(p.x) as usize).min(nx.saturating_sub(2));
    let iy = (crate::math::floor(p.y) as usize).min(ny.saturating_sub(2));
    let iz = (crate::math::floor(p.z) as usize).min(nz.saturating_sub(2));
    let fx = p.x - ix as f64;
    let fy = p.y - iy as f64;
    let fz = p.z - iz as f64;
    let ix1 = (ix + 1).min(nx - 1);
    let iy1 = (iy + 1).min(ny - 1);
    let iz1 = (iz + 1).min(nz - 1);
    let flat = |x: usize, y: usize, z: usize| (z * ny + y) * nx + x;
    let indices = [
        flat(ix, iy, iz),
        flat(ix1, iy, iz),
        flat(ix, iy1, iz),
        flat(ix1, iy1, iz),
        flat(ix, iy, iz1),
        flat(ix1, iy, iz1),
        flat(ix, iy1, iz1),
        flat(ix1, iy1, iz1),
    ];
    let weights = [
        (1.0 - fx) * (1.0 - fy) * (1.0 - fz),
        fx * (1.0 - fy) * (1.0 - fz),
        (1.0 - fx) * fy * (1.0 - fz),
        fx * fy * (1.0 - fz),
        (1.0 - fx) * (1.0 - fy) * fz,
        fx * (1.0 - fy) * fz,
        (1.0 - fx) * fy * fz,
        fx * fy * fz,
    ];
    for c in 0..channels {
        let mut acc = 0.0;
        for k in 0..8 {
            acc += weights[k] * data[indices[k] * channels + c];
        }
        values[c] = acc;
    }
    Some(TrilinearSample { weights, indices })
}

/// Parses the pose text format: one frame per line, 12 whitespace-separated
/// decimals (row-major rotation then translation); `#` starts a comment.
pub fn parse_pose_text(text: &str) -> Result<Vec<Pose>, PoseParseError> {
    let mut poses = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        };
        if line.trim().is_empty() {
            continue;
        }
        let mut vals = [0.0f64; 12];
        let mut n = 0;
        for tok in line.split_whitespace() {
            if n >= 12 {
                n += 1;
                break;
            }
            vals[n] = tok
                .parse::<f64>()
                .map_err(|_| PoseParseError { line: lineno + 1 })?;
            n += 1;
        }
        if n != 12 {
            return Err(PoseParseError { line: lineno + 1 });
        }
        poses.push(Pose::new(
            Mat3 {
                rows: [
                    [vals[0], vals[1], vals[2]],
                    [vals[3], vals[4], vals[5]],
                    [vals[6], vals[7], vals[8]],
                ],
            },
            Vec3::new(vals[9], vals[10], vals[11]),
        ));
    }
    Ok(poses)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("malformed pose line {line}: expected 12 decimals")]
pub struct PoseParseError {
    pub line: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_pose(yaw: f64, pitch: f64, t: Vec3) -> Pose {
        // Compose yaw about z with a rotation about y.
        let ry = Mat3 {
            rows: [
                [crate::math::cos(pitch), 0.0, crate::math::sin(pitch)],
                [0.0, 1.0, 0.0],
                [-crate::math::sin(pitch), 0.0, crate::math::cos(pitch)],
            ],
        };
        Pose::new(Mat3::yaw(yaw).mul_mat(&ry), t)
    }

    #[test]
    fn identity_transform_is_identity() {
        let p = Vec3::new(3.0, 4.0, 5.0);
        assert_eq!(Pose::IDENTITY.to_world(p), p);
    }

    #[test]
    fn yaw_quarter_turn_maps_x_to_y() {
        let pose = Pose::new(Mat3::yaw(core::f64::consts::FRAC_PI_2), Vec3::ZERO);
        let q = pose.to_world(Vec3::new(1.0, 0.0, 0.0));
        assert!((q.x - 0.0).abs() < 1e-12);
        assert!((q.y - 1.0).abs() < 1e-12);
        assert!((q.z - 0.0).abs() < 1e-12);
    }

    #[test]
    fn pose_validity_and_compose_inverse() {
        let pose = random_pose(0.7, -0.3, Vec3::new(1.0, -2.0, 3.0));
        assert!(pose.is_valid(1e-9));
        let ident = pose.compose(&pose.inverse());
        assert!(ident.is_valid(1e-9));
        assert!(ident.translation.norm() < 1e-9);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((ident.rotation.rows[i][j] - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let cam = CameraModel {
            fx: 100.0,
            fy: 100.0,
            cx: 50.0,
            cy: 40.0,
            width: 100,
            height: 80,
            extrinsic: Pose::IDENTITY,
        };
        let hit = project_point(&cam, Vec3::new(0.0, 0.0, 10.0)).unwrap();
        assert_eq!(hit, PixelHit { u: 50.0, v: 40.0, depth: 10.0 });
    }

    #[test]
    fn point_behind_camera_is_out_of_frustum() {
        let cam = CameraModel {
            fx: 100.0,
            fy: 100.0,
            cx: 50.0,
            cy: 50.0,
            width: 100,
            height: 100,
            extrinsic: Pose::IDENTITY,
        };
        assert!(project_point(&cam, Vec3::new(0.0, 0.0, -1.0)).is_none());
    }

    #[test]
    fn pinhole_formula_hand_value() {
        let cam = CameraModel {
            fx: 100.0,
            fy: 100.0,
            cx: 50.0,
            cy: 50.0,
            width: 200,
            height: 200,
            extrinsic: Pose::IDENTITY,
        };
        let hit = project_point(&cam, Vec3::new(1.0, 0.0, 10.0)).unwrap();
        assert!((hit.u - 60.0).abs() < 1e-12);
        assert!((hit.v - 50.0).abs() < 1e-12);
        assert!((hit.depth - 10.0).abs() < 1e-12);
    }

    #[test]
    fn center_pixel_ray_is_camera_forward() {
        let cam = CameraModel {
            fx: 100.0,
            fy: 100.0,
            cx: 50.0,
            cy: 50.0,
            width: 100,
            height: 100,
            extrinsic: Pose::IDENTITY,
        };
        let ray = pixel_ray(&cam, &Pose::IDENTITY, 50.0, 50.0, 0.1, 10.0).unwrap();
        assert!((ray.dir.z - 1.0).abs() < 1e-12);
    }

    #[test]
    fn corner_pixel_ray_angle() {
        let cam = CameraModel {
            fx: 100.0,
            fy: 100.0,
            cx: 25.0,
            cy: 25.0,
            width: 50,
            height: 50,
            extrinsic: Pose::IDENTITY,
        };
        let ray = pixel_ray(&cam, &Pose::IDENTITY, 0.0, 0.0, 0.1, 10.0).unwrap();
        let cos_angle = ray.dir.dot(Vec3::new(0.0, 0.0, 1.0));
        let angle = crate::math::atan2(crate::math::sqrt(1.0 - cos_angle * cos_angle), cos_angle);
        let expect = crate::math::atan(crate::math::sqrt(0.25 * 0.25 + 0.25 * 0.25));
        assert!((angle - expect).abs() < 1e-9);
    }

    #[test]
    fn pixel_outside_image_is_an_error() {
        let cam = CameraModel {
            fx: 100.0,
            fy: 100.0,
            cx: 25.0,
            cy: 25.0,
            width: 50,
            height: 50,
            extrinsic: Pose::IDENTITY,
        };
        assert_eq!(
            pixel_ray(&cam, &Pose::IDENTITY, 50.0, 10.0, 0.1, 10.0),
            Err(GeometryError::PixelOutsideImage)
        );
    }

    #[test]
    fn project_pixel_ray_round_trip() {
        let cam = CameraModel {
            fx: 90.0,
            fy: 110.0,
            cx: 41.0,
            cy: 29.5,
            width: 80,
            height: 60,
            extrinsic: random_pose(0.4, -0.25, Vec3::new(0.3, -0.1, 0.05)),
        };
        let frame = random_pose(1.2, 0.1, Vec3::new(5.0, -7.0, 1.6));
        let mut rng_state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng_state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..100 {
            let u = next() * 80.0;
            let v = next() * 60.0;
            let ray = pixel_ray(&cam, &frame, u, v, 0.1, 50.0).unwrap();
            let t = 0.5 + next() * 40.0;
            let p_world = ray.at(t);
            let p_frame = frame.to_local(p_world);
            let hit = project_point(&cam, p_frame).expect("round-trip point in frustum");
            assert!((hit.u - u).abs() < 1e-6, "u {} vs {}", hit.u, u);
            assert!((hit.v - v).abs() < 1e-6, "v {} vs {}", hit.v, v);
        }
    }

    #[test]
    fn bilinear_identity_midpoint_and_hand_value() {
        // 2x2 map, values v(ix, iy): v(0,0)=0, v(1,0)=1, v(0,1)=2, v(1,1)=3.
        let data = [0.0, 1.0, 2.0, 3.0];
        let mut out = [0.0];
        bilinear_sample(&data, 2, 2, 1, 0.0, 0.0, &mut out).unwrap();
        assert_eq!(out[0], 0.0);
        bilinear_sample(&data, 2, 2, 1, 1.0, 1.0, &mut out).unwrap();
        assert_eq!(out[0], 3.0);
        bilinear_sample(&data, 2, 2, 1, 0.5, 0.0, &mut out).unwrap();
        assert_eq!(out[0], 0.5);
        bilinear_sample(&data, 2, 2, 1, 0.25, 0.75, &mut out).unwrap();
        assert!((out[0] - 1.75).abs() < 1e-12);
        assert!(bilinear_sample(&data, 2, 2, 1, -0.1, 0.5, &mut out).is_none());
        assert!(bilinear_sample(&data, 2, 2, 1, 1.01, 0.5, &mut out).is_none());
    }

    #[test]
    fn trilinear_center_edge_and_product_form() {
        let dims = [3, 3, 3];
        let mut data = alloc::vec![0.0; 27];
        for (i, v) in data.iter_mut().enumerate() {
            *v = i as f64;
        }
        let mut out = [0.0];
        // Exactly at a node.
        let s = trilinear_sample(&data, dims, 1, Vec3::new(1.0, 2.0, 1.0), &mut out).unwrap();
        assert_eq!(out[0], data[(1 * 3 + 2) * 3 + 1]);
        let total: f64 = s.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(s.weights.iter().filter(|&&w| w == 1.0).count(), 1);

        // Edge midpoint: two weights of one half.
        let s = trilinear_sample(&data, dims, 1, Vec3::new(0.5, 1.0, 2.0), &mut out).unwrap();
        assert_eq!(s.weights.iter().filter(|&&w| (w - 0.5).abs() < 1e-12).count(), 2);

        // Fractional offsets match the product form enumerated by brute force.
        let p = Vec3::new(0.3, 1.3, 0.3);
        let s = trilinear_sample(&data, dims, 1, p, &mut out).unwrap();
        let fr = [0.3, 0.3, 0.3];
        for (k, &w) in s.weights.iter().enumerate() {
            let wx = if k & 1 == 0 { 1.0 - fr[0] } else { fr[0] };
            let wy = if k & 2 == 0 { 1.0 - fr[1] } else { fr[1] };
            let wz = if k & 4 == 0 { 1.0 - fr[2] } else { fr[2] };
            assert!((w - wx * wy * wz).abs() < 1e-12, "corner {k}");
        }
        assert!(trilinear_sample(&data, dims, 1, Vec3::new(2.1, 0.0, 0.0), &mut out).is_none());
    }

    #[test]
    fn pose_text_round_trip_and_comments() {
        let text = "# two poses\n1 0 0 0 1 0 0 0 1   0.5 -1.25 2.0\n\n1 0 0 0 1 0 0 0 1 0 0 0 # identity\n";
        let poses = parse_pose_text(text).unwrap();
        assert_eq!(poses.len(), 2);
        assert_eq!(poses[0].translation, Vec3::new(0.5, -1.25, 2.0));
        assert!(parse_pose_text("1 2 3").is_err());
        assert!(parse_pose_text("1 0 0 0 1 0 0 0 1 0 0 zero").is_err());
    }

    proptest! {
        #[test]
        fn transform_round_trip(yaw in -3.1f64..3.1, pitch in -1.2f64..1.2,
                                tx in -50.0f64..50.0, ty in -50.0f64..50.0, tz in -5.0f64..5.0,
                                px in -80.0f64..80.0, py in -80.0f64..80.0, pz in -10.0f64..10.0) {
            let pose = random_pose(yaw, pitch, Vec3::new(tx, ty, tz));
            let p = Vec3::new(px, py, pz);
            let back = pose.to_local(pose.to_world(p));
            prop_assert!((back - p).norm() < 1e-9);
        }

        #[test]
        fn interpolation_partition_of_unity(x in 0.0f64..2.0, y in 0.0f64..2.0, z in 0.0f64..2.0) {
            let data = alloc::vec![1.0; 27];
            let mut out = [0.0];
            let s = trilinear_sample(&data, [3, 3, 3], 1, Vec3::new(x, y, z), &mut out).unwrap();
            let total: f64 = s.weights.iter().sum();
            prop_assert!(s.weights.iter().all(|&w| w >= 0.0));
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!((out[0] - 1.0).abs() < 1e-12);
        }

        #[test]
        fn bilinear_within_bounds(x in 0.0f64..3.0, y in 0.0f64..3.0,
                                  vals in proptest::collection::vec(-5.0f64..5.0, 16)) {
            let mut out = [0.0];
            bilinear_sample(&vals, 4, 4, 1, x, y, &mut out).unwrap();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(out[0] >= lo - 1e-12 && out[0] <= hi + 1e-12);
        }

        #[test]
        fn cell_round_trip(ix in 0usize..40, iy in 0usize..40) {
            let grid = GridSpec2::new([-10.0, -10.0], 0.5, [40, 40]);
            let [cx, cy] = grid.cell_center(ix, iy);
            prop_assert_eq!(grid.cell_of(cx, cy), Some((ix, iy)));
            // Mapping the cell back to its center stays within half a cell.
            prop_assert!((cx - (grid.origin[0] + (ix as f64 + 0.5) * 0.5)).abs() < 0.25);
            prop_assert!((cy - (grid.origin[1] + (iy as f64 + 0.5) * 0.5)).abs() < 0.25);
        }
    }
}
