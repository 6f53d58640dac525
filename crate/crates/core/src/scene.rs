//! Procedural ground-truth road scenes: painted semantics on a flat ground
//! plane, box occluders, an exact ray-cast RGB + depth renderer, ground-truth
//! BEV rasters, and camera trajectories.
//!
//! The renderer is the oracle for everything downstream: radiance-field
//! fitting treats its output as sensor frames, and depth/occlusion checks
//! compare against its analytic intersections.

use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::{pixel_ray, project_point, CameraModel, GridSpec2, Mat3, Pose, Vec3};
use crate::img::Image;
use crate::MapClass;

/// Ego (camera rig) height above the ground plane, meters.
pub const EGO_HEIGHT: f64 = 1.6;

pub const BACKGROUND_COLOR: [f64; 3] = [0.32, 0.33, 0.35];
pub const DIVIDER_COLOR: [f64; 3] = [0.95, 0.75, 0.15];
pub const CROSSING_COLOR: [f64; 3] = [0.92, 0.92, 0.95];
pub const BOUNDARY_COLOR: [f64; 3] = [0.75, 0.20, 0.15];
pub const SKY_COLOR: [f64; 3] = [0.55, 0.70, 0.95];

/// Peak amplitude of the seeded ground texture, per channel.
pub const TEXTURE_AMPLITUDE: f64 = 0.05;
/// Lattice spacing of the texture value noise, meters.
const TEXTURE_LATTICE: f64 = 2.0;

/// Painted band along a polyline.
#[derive(Clone, Debug, PartialEq)]
pub struct PaintedPolyline {
    pub points: Vec<[f64; 2]>,
    pub width: f64,
}

/// Striped pedestrian-crossing rectangle, axis aligned. Stripes alternate
/// along `stripe_axis` (0 = x, 1 = y) with 50% duty cycle: only the painted
/// stripes carry the crossing class, gaps stay background.
#[derive(Clone, Debug, PartialEq)]
pub struct Crossing {
    pub center: [f64; 2],
    pub size: [f64; 2],
    pub stripe_period: f64,
    pub stripe_axis: usize,
}

/// Axis-aligned box resting on the ground (base at z = 0).
#[derive(Clone, Debug, PartialEq)]
pub struct Occluder {
    pub center: [f64; 2],
    /// Full extent in x, y, z; z is the box height.
    pub size: Vec3,
    pub color: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub world: GridSpec2,
    pub dividers: Vec<PaintedPolyline>,
    pub crossings: Vec<Crossing>,
    pub boundaries: Vec<PaintedPolyline>,
    pub occluders: Vec<Occluder>,
    pub texture_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SceneError {
    #[error("requested region extends outside the scene world extent")]
    RegionOutsideWorld,
}

fn point_segment_dist2(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let dx = ap[0] - t * ab[0];
    let dy = ap[1] - t * ab[1];
    dx * dx + dy * dy
}

impl PaintedPolyline {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let half = self.width * 0.5;
        self.points
            .windows(2)
            .any(|seg| point_segment_dist2([x, y], seg[0], seg[1]) <= half * half)
    }
}

impl Crossing {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let p = [x, y];
        for axis in 0..2 {
            if (p[axis] - self.center[axis]).abs() > self.size[axis] * 0.5 {
                return false;
            }
        }
        // Stripe phase measured from the rectangle's min edge on the stripe
        // axis; the first half of every period is painted.
        let min_edge = self.center[self.stripe_axis] - self.size[self.stripe_axis] * 0.5;
        let offset = p[self.stripe_axis] - min_edge;
        let phase = offset - crate::math::floor(offset / self.stripe_period) * self.stripe_period;
        phase < self.stripe_period * 0.5
    }
}

impl Occluder {
    pub fn min_corner(&self) -> Vec3 {
        Vec3::new(
            self.center[0] - self.size.x * 0.5,
            self.center[1] - self.size.y * 0.5,
            0.0,
        )
    }

    pub fn max_corner(&self) -> Vec3 {
        Vec3::new(
            self.center[0] + self.size.x * 0.5,
            self.center[1] + self.size.y * 0.5,
            self.size.z,
        )
    }

    /// Entry distance of a ray into the box (slab method), if any within
    /// `(t_min, t_max)`.
    pub fn ray_entry(&self, origin: Vec3, dir: Vec3, t_min: f64, t_max: f64) -> Option<f64> {
        let lo = self.min_corner();
        let hi = self.max_corner();
        let mut t0 = t_min;
        let mut t1 = t_max;
        for axis in 0..3 {
            let (o, d, l, h) = match axis {
                0 => (origin.x, dir.x, lo.x, hi.x),
                1 => (origin.y, dir.y, lo.y, hi.y),
                _ => (origin.z, dir.z, lo.z, hi.z),
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
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

/// splitmix64 finalizer over a lattice coordinate; uniform in [-1, 1).
fn lattice_noise(i: i64, j: i64, channel: u64, seed: u64) -> f64 {
    let mut h = seed
        ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (j as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ channel.wrapping_mul(0x1656_67B1_9E37_79F9);
    h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^= h >> 31;
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

impl SceneSpec {
    /// Semantic class of the paint at a ground position. Precedence at
    /// overlaps: boundary > crossing > divider > background.
    pub fn paint_class(&self, x: f64, y: f64) -> MapClass {
        if self.boundaries.iter().any(|b| b.contains(x, y)) {
            MapClass::Boundary
        } else if self.crossings.iter().any(|c| c.contains(x, y)) {
            MapClass::Crossing
        } else if self.dividers.iter().any(|d| d.contains(x, y)) {
            MapClass::Divider
        } else {
            MapClass::Background
        }
    }

    /// Smooth value noise anchored to the world origin, per channel in
    /// [-1, 1). Anchoring keeps paint translation-covariant: shifting the
    /// whole scene and its origin together shifts the texture with it.
    fn texture(&self, x: f64, y: f64, channel: u64) -> f64 {
        let gx = (x - self.world.origin[0]) / TEXTURE_LATTICE;
        let gy = (y - self.world.origin[1]) / TEXTURE_LATTICE;
        let ix = crate::math::floor(gx);
        let iy = crate::math::floor(gy);
        let fx = gx - ix;
        let fy = gy - iy;
        let (i, j) = (ix as i64, iy as i64);
        let n00 = lattice_noise(i, j, channel, self.texture_seed);
        let n10 = lattice_noise(i + 1, j, channel, self.texture_seed);
        let n01 = lattice_noise(i, j + 1, channel, self.texture_seed);
        let n11 = lattice_noise(i + 1, j + 1, channel, self.texture_seed);
        n00 * (1.0 - fx) * (1.0 - fy) + n10 * fx * (1.0 - fy) + n01 * (1.0 - fx) * fy + n11 * fx * fy
    }

    /// Ground color at a position: class base color plus low-amplitude
    /// texture. The texture keeps the photometric loss non-degenerate on
    /// otherwise flat paint.
    pub fn paint_color(&self, x: f64, y: f64) -> [f64; 3] {
        let base = match self.paint_class(x, y) {
            MapClass::Background => BACKGROUND_COLOR,
            MapClass::Divider => DIVIDER_COLOR,
            MapClass::Crossing => CROSSING_COLOR,
            MapClass::Boundary => BOUNDARY_COLOR,
        };
        let mut out = [0.0; 3];
        for c in 0..3 {
            out[c] = (base[c] + TEXTURE_AMPLITUDE * self.texture(x, y, c as u64)).clamp(0.0, 1.0);
        }
        out
    }

    /// All painted elements and occluders inside the world extent, boxes with
    /// positive size.
    pub fn is_valid(&self) -> bool {
        let [x0, y0] = self.world.origin;
        let [ex, ey] = self.world.extent();
        let (x1, y1) = (x0 + ex, y0 + ey);
        let inside = |p: [f64; 2]| p[0] >= x0 && p[0] <= x1 && p[1] >= y0 && p[1] <= y1;
        self.dividers
            .iter()
            .chain(self.boundaries.iter())
            .all(|pl| pl.points.iter().all(|&p| inside(p)))
            && self.crossings.iter().all(|c| {
                inside([c.center[0] - c.size[0] * 0.5, c.center[1] - c.size[1] * 0.5])
                    && inside([c.center[0] + c.size[0] * 0.5, c.center[1] + c.size[1] * 0.5])
            })
            && self.occluders.iter().all(|o| {
                o.size.x > 0.0
                    && o.size.y > 0.0
                    && o.size.z > 0.0
                    && inside([o.min_corner().x, o.min_corner().y])
                    && inside([o.max_corner().x, o.max_corner().y])
            })
    }

    /// First surface hit along a ray: the ground plane z = 0 (which exists
    /// only inside the world extent; beyond it there is open sky, keeping
    /// the bounded scene self-consistent with a bounded radiance grid) or
    /// an occluder box.
    pub fn raycast(&self, origin: Vec3, dir: Vec3, t_min: f64, t_max: f64) -> Option<SurfaceHit> {
        let mut best: Option<SurfaceHit> = None;
        if dir.z < -1e-15 {
            let t = -origin.z / dir.z;
            if t > t_min && t < t_max {
                let p = origin + dir.scale(t);
                let [x0, y0] = self.world.origin;
                let [ex, ey] = self.world.extent();
                if p.x >= x0 && p.x <= x0 + ex && p.y >= y0 && p.y <= y0 + ey {
                    best = Some(SurfaceHit { t, kind: SurfaceKind::Ground { x: p.x, y: p.y } });
                }
            }
        }
        for (i, b) in self.occluders.iter().enumerate() {
            if let Some(t) = b.ray_entry(origin, dir, t_min, t_max) {
                if best.as_ref().map_or(true, |h| t < h.t) {
                    best = Some(SurfaceHit { t, kind: SurfaceKind::Box { index: i } });
                }
            }
        }
        best
    }

    /// Whether the straight segment `from → to` is free of occluder boxes.
    pub fn segment_clear(&self, from: Vec3, to: Vec3) -> bool {
        let d = to - from;
        let len = d.norm();
        if len < 1e-12 {
            return true;
        }
        let dir = d.scale(1.0 / len);
        self.occluders
            .iter()
            .all(|b| b.ray_entry(from, dir, 1e-9, len - 1e-9).is_none())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceHit {
    pub t: f64,
    pub kind: SurfaceKind,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SurfaceKind {
    Ground { x: f64, y: f64 },
    Box { index: usize },
}

/// Renders one camera view exactly: per pixel, the nearest hit among the
/// ground plane and occluder boxes. Sky pixels get [`SKY_COLOR`] and an
/// infinite depth marker.
pub fn render_frame(scene: &SceneSpec, pose: &Pose, cam: &CameraModel) -> (Image, Image) {
    let mut rgb = Image::zeros(cam.width, cam.height, 3);
    let mut depth = Image::zeros(cam.width, cam.height, 1);
    for py in 0..cam.height {
        for px in 0..cam.width {
            let ray = pixel_ray(
                cam,
                pose,
                px as f64 + 0.5,
                py as f64 + 0.5,
                1e-3,
                500.0,
            )
            .expect("pixel center inside image");
            match scene.raycast(ray.origin, ray.dir, ray.t_near, ray.t_far) {
                Some(hit) => {
                    let color = match hit.kind {
                        SurfaceKind::Ground { x, y } => scene.paint_color(x, y),
                        SurfaceKind::Box { index } => scene.occluders[index].color,
                    };
                    rgb.set_pixel(px, py, &color);
                    depth.set_pixel(px, py, &[hit.t]);
                }
                None => {
                    rgb.set_pixel(px, py, &SKY_COLOR);
                    depth.set_pixel(px, py, &[f64::INFINITY]);
                }
            }
        }
    }
    (rgb, depth)
}

/// Ground-truth BEV labels over a region: each cell takes the paint class at
/// its center.
#[derive(Clone, Debug, PartialEq)]
pub struct BevLabels {
    pub grid: GridSpec2,
    pub labels: Vec<u8>,
}

pub fn gt_bev(scene: &SceneSpec, region: &GridSpec2) -> Result<BevLabels, SceneError> {
    let [wx0, wy0] = scene.world.origin;
    let [wex, wey] = scene.world.extent();
    let [rex, rey] = region.extent();
    let eps = 1e-9;
    if region.origin[0] < wx0 - eps
        || region.origin[1] < wy0 - eps
        || region.origin[0] + rex > wx0 + wex + eps
        || region.origin[1] + rey > wy0 + wey + eps
    {
        return Err(SceneError::RegionOutsideWorld);
    }
    let mut labels = vec![0u8; region.n_cells()];
    for iy in 0..region.dims[1] {
        for ix in 0..region.dims[0] {
            let [x, y] = region.cell_center(ix, iy);
            labels[region.idx(ix, iy)] = scene.paint_class(x, y) as u8;
        }
    }
    Ok(BevLabels { grid: *region, labels })
}

/// Frame poses plus the shared camera rig.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub frame_poses: Vec<Pose>,
    pub cameras: Vec<CameraModel>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TrajectoryStyle {
    Straight,
    Loop,
    FigureEight,
}

/// Camera pitch below the horizon, radians.
const RIG_PITCH: f64 = 0.26;
/// Lane offset of the straight-road trajectory.
const STRAIGHT_LANE_Y: f64 = -2.0;
const STRAIGHT_X_SPAN: f64 = 32.0;
/// Radius of the loop trajectory and its divider rings.
pub const LOOP_RADIUS: f64 = 20.0;
const EIGHT_A: f64 = 24.0;
const EIGHT_B: f64 = 22.0;

fn rig_camera(forward: bool) -> CameraModel {
    let p = RIG_PITCH;
    let (s, c) = (crate::math::sin(p), crate::math::cos(p));
    // Columns are the camera axes expressed in the ego frame: image-right,
    // image-down, optical axis. Ego +x is forward, +z up.
    let (x_col, y_col, z_col, t) = if forward {
        (
            Vec3::new(0.0, -1.0, 0.0),
            Vec3::new(-s, 0.0, -c),
            Vec3::new(c, 0.0, -s),
            Vec3::new(0.4, 0.0, 0.0),
        )
    } else {
        (
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(s, 0.0, -c),
            Vec3::new(-c, 0.0, -s),
            Vec3::new(-0.4, 0.0, 0.0),
        )
    };
    CameraModel {
        fx: 32.0,
        fy: 32.0,
        cx: 32.0,
        cy: 24.0,
        width: 64,
        height: 48,
        extrinsic: Pose::new(Mat3::from_cols(x_col, y_col, z_col), t),
    }
}

/// The default two-camera rig: forward and backward, pitched down.
pub fn default_rig() -> Vec<CameraModel> {
    vec![rig_camera(true), rig_camera(false)]
}

fn ego_pose(x: f64, y: f64, heading: f64) -> Pose {
    Pose::new(Mat3::yaw(heading), Vec3::new(x, y, EGO_HEIGHT))
}

/// Builds a deterministic trajectory along the road layout of the given
/// style. The seed only shifts the starting phase along the path, so poses
/// stay on the road.
pub fn make_trajectory(
    scene: &SceneSpec,
    style: TrajectoryStyle,
    n_frames: usize,
    rng_seed: u64,
) -> Trajectory {
    assert!(n_frames >= 1);
    let _ = scene;
    let phase = lattice_noise(rng_seed as i64, 17, 3, rng_seed) * 0.5 + 0.5;
    let mut poses = Vec::with_capacity(n_frames);
    match style {
        TrajectoryStyle::Straight => {
            // Full span regardless of n so coverage does not depend on
            // frame count; phase nudges the whole line by up to 1 m.
            let shift = (phase - 0.5) * 2.0;
            for i in 0..n_frames {
                let f = if n_frames == 1 { 0.0 } else { i as f64 / (n_frames - 1) as f64 };
                let x = -STRAIGHT_X_SPAN + shift + f * 2.0 * STRAIGHT_X_SPAN;
                poses.push(ego_pose(x, STRAIGHT_LANE_Y, 0.0));
            }
        }
        TrajectoryStyle::Loop => {
            let theta0 = phase * core::f64::consts::TAU;
            for i in 0..n_frames {
                let theta = theta0 + i as f64 / n_frames as f64 * core::f64::consts::TAU;
                let (s, c) = (crate::math::sin(theta), crate::math::cos(theta));
                poses.push(ego_pose(
                    LOOP_RADIUS * c,
                    LOOP_RADIUS * s,
                    theta + core::f64::consts::FRAC_PI_2,
                ));
            }
        }
        TrajectoryStyle::FigureEight => {
            let t0 = phase * core::f64::consts::TAU;
            for i in 0..n_frames {
                let t = t0 + i as f64 / n_frames as f64 * core::f64::consts::TAU;
                let (st, ct) = (crate::math::sin(t), crate::math::cos(t));
                let x = EIGHT_A * st;
                let y = EIGHT_B * st * ct;
                let dx = EIGHT_A * ct;
                let dy = EIGHT_B * (ct * ct - st * st);
                poses.push(ego_pose(x, y, crate::math::atan2(dy, dx)));
            }
        }
    }
    Trajectory { frame_poses: poses, cameras: default_rig() }
}

/// Visibility of a ground cell from one frame's rig.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellVisibility {
    /// At least one camera sees the ground point with a clear sight line.
    Visible,
    /// In some camera's frustum, but every sight line is blocked by a box.
    Occluded,
    /// Outside every camera's frustum.
    OutOfView,
}

/// Classifies whether the ground point under `(x, y)` is directly visible
/// from a frame, occluded by boxes, or out of view entirely.
pub fn cell_visibility(
    scene: &SceneSpec,
    pose: &Pose,
    cameras: &[CameraModel],
    x: f64,
    y: f64,
) -> CellVisibility {
    let target = Vec3::new(x, y, 0.0);
    let local = pose.to_local(target);
    let mut in_any_frustum = false;
    for cam in cameras {
        if project_point(cam, local).is_some() {
            in_any_frustum = true;
            let cam_world = pose.compose(&cam.extrinsic).translation;
            if scene.segment_clear(cam_world, target) {
                return CellVisibility::Visible;
            }
        }
    }
    if in_any_frustum {
        CellVisibility::Occluded
    } else {
        CellVisibility::OutOfView
    }
}

fn jitter(seed: u64, salt: u64, scale: f64) -> f64 {
    lattice_noise(salt as i64, 29, salt ^ 0xA5A5, seed) * scale
}

const BOX_PALETTE: [[f64; 3]; 5] = [
    [0.88, 0.88, 0.90], // white, close to crossing paint
    [0.90, 0.78, 0.20], // yellow, close to divider paint
    [0.45, 0.46, 0.50],
    [0.20, 0.60, 0.30],
    [0.88, 0.88, 0.90],
];

fn default_world() -> GridSpec2 {
    GridSpec2::new([-40.0, -40.0], 0.5, [160, 160])
}

fn circle_polyline(radius: f64, width: f64, segments: usize) -> PaintedPolyline {
    let mut points = Vec::with_capacity(segments + 1);
    for i in 0..=segments {
        let a = i as f64 / segments as f64 * core::f64::consts::TAU;
        points.push([radius * crate::math::cos(a), radius * crate::math::sin(a)]);
    }
    PaintedPolyline { points, width }
}

/// Builds the scene layout matching a trajectory style. Seeded jitter moves
/// crossings and occluders a little so scenes with different seeds differ.
pub fn build_scene(style: TrajectoryStyle, seed: u64) -> SceneSpec {
    let world = default_world();
    let mut scene = SceneSpec {
        world,
        dividers: Vec::new(),
        crossings: Vec::new(),
        boundaries: Vec::new(),
        occluders: Vec::new(),
        texture_seed: seed ^ 0x7E57_0B5C,
    };
    match style {
        TrajectoryStyle::Straight => {
            for y in [-8.0, 8.0] {
                scene.boundaries.push(PaintedPolyline {
                    points: vec![[-38.0, y], [38.0, y]],
                    width: 0.5,
                });
            }
            for y in [0.0, 4.0] {
                scene.dividers.push(PaintedPolyline {
                    points: vec![[-36.0, y], [36.0, y]],
                    width: 0.3,
                });
            }
            for (k, base_x) in [-20.0, 2.0, 22.0].into_iter().enumerate() {
                let x = base_x + jitter(seed, 100 + k as u64, 3.0);
                scene.crossings.push(Crossing {
                    center: [x, 0.0],
                    size: [4.8, 14.0],
                    stripe_period: 1.2,
                    stripe_axis: 0,
                });
                // Boxes flanking the crossing: one between the lane and the
                // north paint (shading the far divider and the crossing's
                // north stripes), one just east shading the south stripes
                // and boundary from frames beyond it.
                let i0 = 2 * k as u64;
                scene.occluders.push(Occluder {
                    center: [x - 3.6 + jitter(seed, 200 + i0, 0.8), 1.3],
                    size: Vec3::new(2.2, 2.0, 1.9),
                    color: BOX_PALETTE[(2 * k) % BOX_PALETTE.len()],
                });
                scene.occluders.push(Occluder {
                    center: [x + 3.7 + jitter(seed, 201 + i0, 0.8), -4.4],
                    size: Vec3::new(2.2, 2.2, 1.9),
                    color: BOX_PALETTE[(2 * k + 1) % BOX_PALETTE.len()],
                });
            }
        }
        TrajectoryStyle::Loop => {
            scene.boundaries.push(circle_polyline(13.0, 0.5, 64));
            scene.boundaries.push(circle_polyline(27.0, 0.5, 64));
            scene.dividers.push(circle_polyline(16.5, 0.3, 64));
            scene.dividers.push(circle_polyline(23.5, 0.3, 64));
            let cross_defs = [
                ([LOOP_RADIUS, 0.0], [14.0, 4.8], 1usize),
                ([0.0, LOOP_RADIUS], [4.8, 14.0], 0),
                ([-LOOP_RADIUS, 0.0], [14.0, 4.8], 1),
                ([0.0, -LOOP_RADIUS], [4.8, 14.0], 0),
            ];
            for (k, (center, size, axis)) in cross_defs.into_iter().enumerate() {
                scene.crossings.push(Crossing {
                    center,
                    size,
                    stripe_period: 1.2,
                    stripe_axis: axis,
                });
                let a = k as f64 * core::f64::consts::FRAC_PI_2 - 0.28
                    + jitter(seed, 400 + k as u64, 0.08);
                scene.occluders.push(Occluder {
                    center: [18.3 * crate::math::cos(a), 18.3 * crate::math::sin(a)],
                    size: Vec3::new(2.2, 2.2, 1.9),
                    color: BOX_PALETTE[k % BOX_PALETTE.len()],
                });
            }
            scene.occluders.push(Occluder {
                center: [25.2 * crate::math::cos(2.0), 25.2 * crate::math::sin(2.0)],
                size: Vec3::new(2.0, 2.0, 1.9),
                color: BOX_PALETTE[4],
            });
        }
        TrajectoryStyle::FigureEight => {
            let n = 96;
            let mut left = Vec::with_capacity(n + 1);
            let mut right = Vec::with_capacity(n + 1);
            let mut center = Vec::with_capacity(n + 1);
            for i in 0..=n {
                let t = i as f64 / n as f64 * core::f64::consts::TAU;
                let (st, ct) = (crate::math::sin(t), crate::math::cos(t));
                let p = [EIGHT_A * st, EIGHT_B * st * ct];
                let d = [EIGHT_A * ct, EIGHT_B * (ct * ct - st * st)];
                let len = crate::math::hypot(d[0], d[1]).max(1e-9);
                let nrm = [-d[1] / len, d[0] / len];
                left.push([p[0] + 6.0 * nrm[0], p[1] + 6.0 * nrm[1]]);
                right.push([p[0] - 6.0 * nrm[0], p[1] - 6.0 * nrm[1]]);
                center.push(p);
            }
            scene.boundaries.push(PaintedPolyline { points: left, width: 0.5 });
            scene.boundaries.push(PaintedPolyline { points: right, width: 0.5 });
            scene.dividers.push(PaintedPolyline { points: center, width: 0.3 });
            let cross_defs = [
                ([EIGHT_A, 0.0], [12.0, 4.8], 1usize),
                ([-EIGHT_A, 0.0], [12.0, 4.8], 1),
                ([0.0, 0.0], [12.0, 4.8], 1),
            ];
            for (k, (mut center, size, axis)) in cross_defs.into_iter().enumerate() {
                center[0] += jitter(seed, 500 + k as u64, 1.5);
                scene.crossings.push(Crossing {
                    center,
                    size,
                    stripe_period: 1.2,
                    stripe_axis: axis,
                });
            }
            for k in 0..5u64 {
                let t = match k {
                    0 => 1.25,
                    1 => 1.25 + core::f64::consts::PI,
                    _ => k as f64 * 1.71 + 0.4,
                } + jitter(seed, 600 + k, 0.1);
                let (st, ct) = (crate::math::sin(t), crate::math::cos(t));
                let p = [EIGHT_A * st, EIGHT_B * st * ct];
                let d = [EIGHT_A * ct, EIGHT_B * (ct * ct - st * st)];
                let len = crate::math::hypot(d[0], d[1]).max(1e-9);
                let nrm = [-d[1] / len, d[0] / len];
                let side = if k % 2 == 0 { 4.2 } else { -4.2 };
                scene.occluders.push(Occluder {
                    center: [p[0] + side * nrm[0], p[1] + side * nrm[1]],
                    size: Vec3::new(2.2, 2.2, 1.9),
                    color: BOX_PALETTE[k as usize % BOX_PALETTE.len()],
                });
            }
        }
    }
    debug_assert!(scene.is_valid());
    scene
}
