//! Voxelized radiance field over a scene: volume rendering with termination
//! depth, photometric / total-variance / depth losses with hand-derived
//! gradients, and gradient-based fitting from posed frames.
//!
//! The grid stores pre-activation values; density activates through
//! softplus, diffuse color through sigmoid. Rendering interpolates the raw
//! grids trilinearly and activates at the sample point. There is no
//! view-dependent color: the field exists to recover geometry for the map,
//! not appearance.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{pixel_ray, CameraModel, GridSpec2, GridSpec3, Pose, Ray, TrilinearSample, Vec3};
use crate::img::Image;
use crate::learn::{AdamConfig, AdamState};
use crate::math;

/// Near plane of every grid ray, meters.
pub const DEFAULT_T_NEAR: f64 = 0.1;
/// Far plane of every grid ray, meters.
pub const DEFAULT_T_FAR: f64 = 64.0;
/// Voxel edge length, meters.
pub const GRID_CELL: f64 = 0.5;
/// Vertical span of the scene grid, meters.
pub const GRID_Z_MIN: f64 = -4.0;
pub const GRID_Z_MAX: f64 = 2.0;
/// Raw value both grids are initialized to (low density, mid-gray color).
pub const INIT_RAW: f64 = -2.0;

/// Scene-scale 3-D grid over a BEV world footprint with the standard
/// vertical span (12 voxels from -4 m to 2 m at 0.5 m).
pub fn scene_grid_spec(world: &GridSpec2) -> GridSpec3 {
    let nz = ((GRID_Z_MAX - GRID_Z_MIN) / GRID_CELL) as usize;
    GridSpec3::new(
        Vec3::new(world.origin[0], world.origin[1], GRID_Z_MIN),
        GRID_CELL,
        [world.dims[0], world.dims[1], nz],
    )
}

#[derive(Clone, Debug)]
pub struct RadianceGrid {
    pub spec: GridSpec3,
    /// Pre-activation density, one per voxel.
    pub density: Vec<f64>,
    /// Pre-activation diffuse RGB, three per voxel.
    pub color: Vec<f64>,
    pub t_near: f64,
    pub t_far: f64,
}

impl RadianceGrid {
    pub fn new(spec: GridSpec3) -> RadianceGrid {
        let n = spec.n_cells();
        RadianceGrid {
            spec,
            density: vec![INIT_RAW; n],
            color: vec![INIT_RAW; n * 3],
            t_near: DEFAULT_T_NEAR,
            t_far: DEFAULT_T_FAR,
        }
    }

    /// Activated density of one voxel.
    pub fn sigma(&self, flat: usize) -> f64 {
        math::softplus(self.density[flat])
    }

    /// Activated diffuse color of one voxel.
    pub fn rgb(&self, flat: usize) -> [f64; 3] {
        [
            math::sigmoid(self.color[flat * 3]),
            math::sigmoid(self.color[flat * 3 + 1]),
            math::sigmoid(self.color[flat * 3 + 2]),
        ]
    }
}

/// How sample positions are drawn within each step segment.
pub enum SampleMode {
    /// Segment midpoints; deterministic, used for evaluation.
    Midpoint,
    /// Uniform jitter per segment, for training.
    Jitter(ChaCha8Rng),
}

impl SampleMode {
    fn offset(&mut self) -> f64 {
        match self {
            SampleMode::Midpoint => 0.5,
            SampleMode::Jitter(rng) => rng.gen_range(0.0..1.0),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RenderOptions {
    /// March step, meters.
    pub step: f64,
    /// Stop marching once transmittance falls below this; 0 disables.
    pub t_eps: f64,
    /// Color composited for the residual transmittance.
    pub background: [f64; 3],
}

impl Default for RenderOptions {
    fn default() -> RenderOptions {
        RenderOptions { step: 0.25, t_eps: 1e-7, background: crate::scene::SKY_COLOR }
    }
}

/// Composited outputs of one ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayRender {
    pub rgb: [f64; 3],
    /// Termination depth `Σ Tᵢ αᵢ tᵢ`; infinite when the ray misses the grid.
    pub depth: f64,
    /// `Σ Tᵢ αᵢ`.
    pub opacity: f64,
}

/// Everything recorded about one sample for the backward pass.
struct TrainSample {
    tri: TrilinearSample,
    delta: f64,
    t: f64,
    raw_sigma: f64,
    alpha: f64,
    /// Transmittance before this sample.
    trans: f64,
    weight: f64,
    rgb: [f64; 3],
}

/// Per-ray forward state kept for gradient accumulation.
struct TrainRay {
    end_trans: f64,
    out: RayRender,
}

/// Clips a ray to the grid interior, inset half a voxel so every trilinear
/// footprint is complete. Returns `None` when the ray misses.
fn clip_to_interior(grid: &RadianceGrid, ray: &Ray) -> Option<(f64, f64)> {
    let h = grid.spec.cell_size * 0.5;
    let lo = grid.spec.origin + Vec3::new(h, h, h);
    let hi = grid.spec.max_corner() - Vec3::new(h, h, h);
    let mut t0 = ray.t_near;
    let mut t1 = ray.t_far;
    for axis in 0..3 {
        let (o, d, l, u) = match axis {
            0 => (ray.origin.x, ray.dir.x, lo.x, hi.x),
            1 => (ray.origin.y, ray.dir.y, lo.y, hi.y),
            _ => (ray.origin.z, ray.dir.z, lo.z, hi.z),
        };
        if d.abs() < 1e-15 {
            if o < l || o > u {
                return None;
            }
            continue;
        }
        let (mut ta, mut tb) = ((l - o) / d, (u - o) / d);
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

fn miss_render(opts: &RenderOptions) -> RayRender {
    RayRender { rgb: opts.background, depth: f64::INFINITY, opacity: 0.0 }
}

/// One fused lookup of raw density + RGB sharing the trilinear weights.
fn sample_raw(grid: &RadianceGrid, p: Vec3, values: &mut [f64; 4]) -> Option<TrilinearSample> {
    let [nx, ny, nz] = grid.spec.dims;
    if !(0.0..=(nx - 1) as f64).contains(&p.x)
        || !(0.0..=(ny - 1) as f64).contains(&p.y)
        || !(0.0..=(nz - 1) as f64).contains(&p.z)
    {
        return None;
    }
    let ix = (math::floor(p.x) as usize).min(nx - 2);
    let iy = (math::floor(p.y) as usize).min(ny - 2);
    let iz = (math::floor(p.z) as usize).min(nz - 2);
    let fx = p.x - ix as f64;
    let fy = p.y - iy as f64;
    let fz = p.z - iz as f64;
    let flat = |x: usize, y: usize, z: usize| (z * ny + y) * nx + x;
    let indices = [
        flat(ix, iy, iz),
        flat(ix + 1, iy, iz),
        flat(ix, iy + 1, iz),
        flat(ix + 1, iy + 1, iz),
        flat(ix, iy, iz + 1),
        flat(ix + 1, iy, iz + 1),
        flat(ix, iy + 1, iz + 1),
        flat(ix + 1, iy + 1, iz + 1),
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
    let mut acc = [0.0; 4];
    for k in 0..8 {
        let w = weights[k];
        let idx = indices[k];
        acc[0] += w * grid.density[idx];
        let cbase = idx * 3;
        acc[1] += w * grid.color[cbase];
        acc[2] += w * grid.color[cbase + 1];
        acc[3] += w * grid.color[cbase + 2];
    }
    *values = acc;
    Some(TrilinearSample { weights, indices })
}

fn march(
    grid: &RadianceGrid,
    ray: &Ray,
    opts: &RenderOptions,
    mode: &mut SampleMode,
    mut record: Option<&mut Vec<TrainSample>>,
) -> TrainRay {
    let Some((t0, t1)) = clip_to_interior(grid, ray) else {
        return TrainRay { end_trans: 1.0, out: miss_render(opts) };
    };
    let n = ((t1 - t0) / opts.step) as usize + 1;
    let mut trans = 1.0;
    let mut rgb = [0.0; 3];
    let mut depth = 0.0;
    let mut opacity = 0.0;
    let mut values = [0.0; 4];
    for i in 0..n {
        let seg0 = t0 + i as f64 * opts.step;
        let seg1 = (seg0 + opts.step).min(t1);
        let delta = seg1 - seg0;
        if delta <= 0.0 {
            break;
        }
        let t = seg0 + mode.offset() * delta;
        let p = grid.spec.world_to_node(ray.at(t));
        let tri = match sample_raw(grid, p, &mut values) {
            Some(tri) => tri,
            None => continue,
        };
        let raw_sigma = values[0];
        let sigma = math::softplus(raw_sigma);
        let alpha = 1.0 - math::exp(-sigma * delta);
        let weight = trans * alpha;
        let c = [
            math::sigmoid(values[1]),
            math::sigmoid(values[2]),
            math::sigmoid(values[3]),
        ];
        for k in 0..3 {
            rgb[k] += weight * c[k];
        }
        depth += weight * t;
        opacity += weight;
        let prev_trans = trans;
        trans *= 1.0 - alpha;
        if let Some(samples) = record.as_deref_mut() {
            samples.push(TrainSample {
                tri,
                delta,
                t,
                raw_sigma,
                alpha,
                trans: prev_trans,
                weight,
                rgb: c,
            });
        }
        if opts.t_eps > 0.0 && trans < opts.t_eps {
            break;
        }
    }
    for k in 0..3 {
        rgb[k] += trans * opts.background[k];
    }
    TrainRay { end_trans: trans, out: RayRender { rgb, depth, opacity } }
}

/// Renders a single ray (deterministic midpoint sampling).
pub fn render_ray(grid: &RadianceGrid, ray: &Ray, opts: &RenderOptions) -> RayRender {
    march(grid, ray, opts, &mut SampleMode::Midpoint, None).out
}

/// Renders a full camera view from the fitted grid: RGB, termination depth,
/// and opacity images.
pub fn render_view(
    grid: &RadianceGrid,
    frame_pose: &Pose,
    cam: &CameraModel,
    opts: &RenderOptions,
) -> (Image, Image, Image) {
    let mut rgb = Image::zeros(cam.width, cam.height, 3);
    let mut depth = Image::zeros(cam.width, cam.height, 1);
    let mut opacity = Image::zeros(cam.width, cam.height, 1);
    for py in 0..cam.height {
        for px in 0..cam.width {
            let ray = pixel_ray(
                cam,
                frame_pose,
                px as f64 + 0.5,
                py as f64 + 0.5,
                grid.t_near,
                grid.t_far,
            )
            .expect("pixel center inside image");
            let out = render_ray(grid, &ray, opts);
            rgb.set_pixel(px, py, &out.rgb);
            depth.set_pixel(px, py, &[out.depth]);
            opacity.set_pixel(px, py, &[out.opacity]);
        }
    }
    (rgb, depth, opacity)
}

/// Gradient buffers matching the grid's raw parameter layout.
#[derive(Clone, Debug)]
pub struct GridGrad {
    pub density: Vec<f64>,
    pub color: Vec<f64>,
}

impl GridGrad {
    pub fn zeros(grid: &RadianceGrid) -> GridGrad {
        GridGrad {
            density: vec![0.0; grid.density.len()],
            color: vec![0.0; grid.color.len()],
        }
    }

    pub fn clear(&mut self) {
        self.density.iter_mut().for_each(|v| *v = 0.0);
        self.color.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// A training ray with its photometric and (optionally infinite) depth
/// targets.
#[derive(Clone, Copy, Debug)]
pub struct RayTarget {
    pub ray: Ray,
    pub rgb: [f64; 3],
    /// Analytic depth; non-finite entries (sky) are excluded from the depth
    /// loss.
    pub depth: f64,
}

/// Extracts one ray per pixel of a rendered frame, with its color and depth
/// targets.
pub fn frame_rays(
    pose: &Pose,
    cam: &CameraModel,
    rgb: &Image,
    depth: &Image,
    t_near: f64,
    t_far: f64,
) -> Vec<RayTarget> {
    let mut out = Vec::with_capacity(cam.width * cam.height);
    for py in 0..cam.height {
        for px in 0..cam.width {
            let ray = pixel_ray(cam, pose, px as f64 + 0.5, py as f64 + 0.5, t_near, t_far)
                .expect("pixel center inside image");
            let p = rgb.pixel(px, py);
            out.push(RayTarget {
                ray,
                rgb: [p[0], p[1], p[2]],
                depth: depth.pixel(px, py)[0],
            });
        }
    }
    out
}

/// Backward through compositing for one ray.
///
/// Weight gradients telescope through the transmittance product in one
/// reverse sweep:
///   `∂L/∂sᵢ = g_wᵢ·Tᵢ₊₁ − Σ_{j>i} g_wⱼ wⱼ − g_T_end·T_end`
/// with `sᵢ = σᵢ δᵢ`, then chain softplus/sigmoid and scatter through the
/// trilinear weights into the raw grids.
fn backward_ray(
    opts: &RenderOptions,
    samples: &[TrainSample],
    end_trans: f64,
    g_rgb: [f64; 3],
    g_depth: f64,
    g_opacity: f64,
    grad: &mut GridGrad,
) {
    let g_end: f64 = (0..3).map(|k| g_rgb[k] * opts.background[k]).sum();
    let mut suffix = g_end * end_trans;
    for s in samples.iter().rev() {
        let g_w: f64 =
            (0..3).map(|k| g_rgb[k] * s.rgb[k]).sum::<f64>() + g_depth * s.t + g_opacity;
        // Color chain: ∂rgb_k/∂raw_c = wᵢ · c(1−c) · trilinear weight.
        for k in 0..3 {
            let gc = g_rgb[k] * s.weight * s.rgb[k] * (1.0 - s.rgb[k]);
            if gc != 0.0 {
                for (w, idx) in s.tri.weights.iter().zip(&s.tri.indices) {
                    grad.color[idx * 3 + k] += gc * w;
                }
            }
        }
        let next_trans = s.trans * (1.0 - s.alpha);
        let g_s = g_w * next_trans - suffix;
        suffix += g_w * s.weight;
        // s = softplus(raw) δ → ∂s/∂raw = sigmoid(raw) δ.
        let g_raw = g_s * s.delta * math::sigmoid(s.raw_sigma);
        if g_raw != 0.0 {
            for (w, idx) in s.tri.weights.iter().zip(&s.tri.indices) {
                grad.density[*idx] += g_raw * w;
            }
        }
    }
}

/// Photometric and depth losses over a batch with one shared render per ray.
/// Gradients are accumulated pre-scaled by the loss weights.
fn color_depth_losses(
    grid: &RadianceGrid,
    batch: &[RayTarget],
    opts: &RenderOptions,
    mode: &mut SampleMode,
    lambda_color: f64,
    lambda_depth: f64,
    mut grad: Option<&mut GridGrad>,
) -> (f64, f64) {
    let n = batch.len().max(1) as f64;
    let n_depth = batch.iter().filter(|rt| rt.depth.is_finite()).count().max(1) as f64;
    let mut color_loss = 0.0;
    let mut depth_loss = 0.0;
    let mut samples: Vec<TrainSample> = Vec::new();
    for rt in batch {
        samples.clear();
        let tr = march(grid, &rt.ray, opts, mode, grad.as_deref_mut().map(|_| &mut samples));
        // Rays that never intersect the grid interior composite only the
        // background: they contribute photometric loss but no gradient, and
        // their infinite depth is excluded rather than poisoning the mean.
        let miss = tr.out.opacity == 0.0 && tr.end_trans == 1.0 && samples.is_empty();
        for k in 0..3 {
            let r = tr.out.rgb[k] - rt.rgb[k];
            color_loss += r * r;
        }
        let use_depth = rt.depth.is_finite() && !miss;
        if use_depth {
            let e = tr.out.depth - rt.depth;
            depth_loss += e * e;
        }
        if let Some(g) = grad.as_deref_mut() {
            if !miss {
                let g_rgb = [
                    lambda_color * 2.0 * (tr.out.rgb[0] - rt.rgb[0]) / n,
                    lambda_color * 2.0 * (tr.out.rgb[1] - rt.rgb[1]) / n,
                    lambda_color * 2.0 * (tr.out.rgb[2] - rt.rgb[2]) / n,
                ];
                let g_depth = if use_depth {
                    lambda_depth * 2.0 * (tr.out.depth - rt.depth) / n_depth
                } else {
                    0.0
                };
                backward_ray(opts, &samples, tr.end_trans, g_rgb, g_depth, 0.0, g);
            }
        }
    }
    (color_loss / n, depth_loss / n_depth)
}

/// Mean squared color error over rays. Pass `grad` to accumulate
/// ∂loss/∂raw-grid values.
pub fn photometric_loss(
    grid: &RadianceGrid,
    batch: &[RayTarget],
    opts: &RenderOptions,
    grad: Option<&mut GridGrad>,
) -> f64 {
    color_depth_losses(grid, batch, opts, &mut SampleMode::Midpoint, 1.0, 0.0, grad).0
}

/// Mean squared termination-depth error over rays with finite targets.
pub fn depth_loss(
    grid: &RadianceGrid,
    batch: &[RayTarget],
    opts: &RenderOptions,
    grad: Option<&mut GridGrad>,
) -> f64 {
    color_depth_losses(grid, batch, opts, &mut SampleMode::Midpoint, 0.0, 1.0, grad).1
}

/// Total-variance objective over activated density columns:
/// `−(1/(X·Y)) Σ_{x,y} ‖O[x,y,2:] − O[x,y,:-1]‖₂`.
///
/// The negative sign maximizes the variance: an accurate ground plane is a
/// peaked occupancy column, not a uniform one, so minimizing this term
/// sharpens columns toward the ground.
pub fn tv_loss(grid: &RadianceGrid, grad: Option<&mut GridGrad>) -> f64 {
    tv_loss_scaled(grid, 1.0, grad)
}

fn tv_loss_scaled(grid: &RadianceGrid, scale: f64, grad: Option<&mut GridGrad>) -> f64 {
    let [nx, ny, nz] = grid.spec.dims;
    assert!(nz >= 2, "total variance needs at least two z levels");
    let plane = nx * ny;
    let inv_cols = 1.0 / plane as f64;
    // Activate once; both passes reuse it.
    let occ: Vec<f64> = grid.density.iter().map(|&r| math::softplus(r)).collect();
    let mut sumsq = vec![0.0; plane];
    for z in 0..nz - 1 {
        let a = &occ[z * plane..(z + 1) * plane];
        let b = &occ[(z + 1) * plane..(z + 2) * plane];
        for i in 0..plane {
            let d = b[i] - a[i];
            sumsq[i] += d * d;
        }
    }
    let norms: Vec<f64> = sumsq.iter().map(|&s| math::sqrt(s)).collect();
    let loss: f64 = -norms.iter().sum::<f64>() * inv_cols;
    if let Some(g) = grad {
        // ∂L/∂O[x,y,z] = −(1/XY)(d_{z−1} − d_z)/norm, then chain softplus.
        let mut g_occ = vec![0.0; occ.len()];
        for z in 0..nz - 1 {
            for i in 0..plane {
                let nrm = norms[i];
                if nrm <= 0.0 {
                    continue;
                }
                let d = occ[(z + 1) * plane + i] - occ[z * plane + i];
                let coef = -inv_cols * d / nrm;
                g_occ[(z + 1) * plane + i] += coef;
                g_occ[z * plane + i] -= coef;
            }
        }
        for (gd, (&go, &raw)) in g.density.iter_mut().zip(g_occ.iter().zip(&grid.density)) {
            if go != 0.0 {
                *gd += scale * go * math::sigmoid(raw);
            }
        }
    }
    scale * loss
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitConfig {
    pub iterations: usize,
    pub batch_rays: usize,
    pub lr: f64,
    pub lambda_color: f64,
    pub lambda_tv: f64,
    pub lambda_depth: f64,
    pub step: f64,
    pub t_eps: f64,
    pub seed: u64,
    pub background: [f64; 3],
}

impl Default for FitConfig {
    fn default() -> FitConfig {
        FitConfig {
            iterations: 2000,
            batch_rays: 256,
            lr: 1e-2,
            lambda_color: 1.0,
            lambda_tv: 1e-5,
            lambda_depth: 0.1,
            step: 0.25,
            t_eps: 1e-7,
            seed: 0,
            background: crate::scene::SKY_COLOR,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, thiserror::Error)]
pub enum NerfError {
    #[error("training loss became non-finite at iteration {iteration} (loss {loss})")]
    NonFiniteLoss { iteration: usize, loss: f64 },
    #[error("no training rays")]
    EmptyTrainingSet,
}

/// Loss values from the last fit iteration.
#[derive(Clone, Copy, Debug, Default)]
pub struct FitStats {
    pub final_color_loss: f64,
    pub final_tv_loss: f64,
    pub final_depth_loss: f64,
}

/// Fits a radiance grid to training rays by Adam over jittered ray batches.
/// Deterministic for a seed.
pub fn fit_scene(
    spec: GridSpec3,
    rays: &[RayTarget],
    cfg: &FitConfig,
) -> Result<(RadianceGrid, FitStats), NerfError> {
    use rand::SeedableRng;
    if rays.is_empty() {
        return Err(NerfError::EmptyTrainingSet);
    }
    let mut grid = RadianceGrid::new(spec);
    let opts = RenderOptions { step: cfg.step, t_eps: cfg.t_eps, background: cfg.background };
    let mut pick_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut mode = SampleMode::Jitter(ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6A09_E667_F3BC_C908));
    let mut grad = GridGrad::zeros(&grid);
    let mut adam = AdamState::new(
        &[grid.density.len(), grid.color.len()],
        AdamConfig::with_lr(cfg.lr),
    );
    let mut batch = Vec::with_capacity(cfg.batch_rays);
    let mut stats = FitStats::default();
    for iteration in 0..cfg.iterations {
        batch.clear();
        for _ in 0..cfg.batch_rays {
            batch.push(rays[pick_rng.gen_range(0..rays.len())]);
        }
        grad.clear();
        let (lc, ld) = color_depth_losses(
            &grid,
            &batch,
            &opts,
            &mut mode,
            cfg.lambda_color,
            cfg.lambda_depth,
            Some(&mut grad),
        );
        let ltv = if cfg.lambda_tv != 0.0 {
            tv_loss_scaled(&grid, cfg.lambda_tv, Some(&mut grad))
        } else {
            0.0
        };
        let total = cfg.lambda_color * lc + cfg.lambda_depth * ld + ltv;
        if !total.is_finite() {
            return Err(NerfError::NonFiniteLoss { iteration, loss: total });
        }
        stats.final_color_loss = lc;
        stats.final_depth_loss = ld;
        stats.final_tv_loss = ltv;
        let (density, color) = (&mut grid.density, &mut grid.color);
        adam.step(
            &mut [density.as_mut_slice(), color.as_mut_slice()],
            &[&grad.density, &grad.color],
        )
        .map_err(|_| NerfError::NonFiniteLoss { iteration, loss: total })?;
    }
    Ok((grid, stats))
}

/// One exported voxel sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CloudPoint {
    pub position: Vec3,
    pub rgb: [f64; 3],
    pub alpha: f64,
}

/// Converts the grid into a colored point cloud: voxel centers whose
/// one-cell alpha `1 − e^{−σ·cell}` exceeds the threshold.
pub fn export_pointcloud(grid: &RadianceGrid, opacity_threshold: f64) -> Vec<CloudPoint> {
    assert!(
        opacity_threshold > 0.0 && opacity_threshold < 1.0,
        "threshold must be in (0, 1)"
    );
    let [nx, ny, nz] = grid.spec.dims;
    let mut out = Vec::new();
    for iz in 0..nz {
        for iy in 0..ny {
            for ix in 0..nx {
                let flat = grid.spec.idx(ix, iy, iz);
                let alpha = 1.0 - math::exp(-grid.sigma(flat) * grid.spec.cell_size);
                if alpha > opacity_threshold {
                    out.push(CloudPoint {
                        position: grid.spec.cell_center(ix, iy, iz),
                        rgb: grid.rgb(flat),
                        alpha,
                    });
                }
            }
        }
    }
    out
}
