//! The frozen-after-training single-frame model: hand-crafted image
//! features, lifting onto an ego-centered BEV grid, and a per-cell dense
//! decoder producing semantic logits.
//!
//! Lifting is purely geometric and ego-relative: a frame's BEV features
//! depend only on its images and the camera rig, never on the world pose, so
//! rigid motion of the whole scene and trajectory leaves them unchanged.
//!
//! The learned pieces are three small dense stages: a pointwise 7→8
//! projection of the raw image channels, an 8→16 map after the Z reduction,
//! and the 16→32→32→4 decoder. Because the projection, bilinear sampling,
//! and the camera/Z means are all linear, the projection commutes with
//! aggregation; it is applied after the means so the trainable path stays
//! per-cell.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{project_point, CameraModel, GridSpec2, Vec3};
use crate::img::Image;
use crate::learn::{Activation, AdamConfig, AdamState, DenseNet, LearnError, Tape, Tensor};
use crate::{MapClass, NUM_CLASSES};

/// Raw hand-crafted channels per pixel.
pub const RAW_CHANNELS: usize = 7;
/// Projected image feature width (the encoder's per-pixel width).
pub const IMAGE_CHANNELS: usize = 8;
/// BEV feature width.
pub const BEV_CHANNELS: usize = 16;
/// Ego-centered local grid: 100×100 cells of 0.5 m.
pub const LOCAL_DIMS: usize = 100;
pub const LOCAL_CELL: f64 = 0.5;
/// Vertical sampling range relative to the ego origin.
pub const Z_LEVELS: usize = 12;
pub const Z_MIN: f64 = -4.0;

/// Logits assigned to cells no camera observes: certain background. Such
/// cells also stay masked out, so fusion never consumes them.
pub const UNCOVERED_LOGITS: [f64; NUM_CLASSES] = [25.0, 0.0, 0.0, 0.0];

/// The ego-centered local BEV grid.
pub fn local_bev_spec() -> GridSpec2 {
    let half = LOCAL_DIMS as f64 * LOCAL_CELL * 0.5;
    GridSpec2::new([-half, -half], LOCAL_CELL, [LOCAL_DIMS, LOCAL_DIMS])
}

/// Centers of the vertical sample levels in ego-local z.
pub fn z_levels() -> Vec<f64> {
    (0..Z_LEVELS)
        .map(|i| Z_MIN + (i as f64 + 0.5) * LOCAL_CELL)
        .collect()
}

/// Per-frame BEV feature map with its coverage mask.
#[derive(Clone, Debug, PartialEq)]
pub struct BevFeatureMap {
    pub grid: GridSpec2,
    pub channels: usize,
    /// `(iy * X + ix) * channels + c`.
    pub features: Vec<f64>,
    pub mask: Vec<bool>,
}

/// Whether a semantic map carries raw logits or normalized probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SemanticKind {
    Logits,
    Probabilities,
}

/// Per-frame (or fused global) BEV semantics over [`NUM_CLASSES`] channels.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticMap {
    pub grid: GridSpec2,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
    pub kind: SemanticKind,
}

impl SemanticMap {
    pub fn argmax(&self, cell: usize) -> MapClass {
        let row = &self.values[cell * NUM_CLASSES..(cell + 1) * NUM_CLASSES];
        let mut best = 0;
        for k in 1..NUM_CLASSES {
            if row[k] > row[best] {
                best = k;
            }
        }
        MapClass::from_index(best)
    }

    /// Class distributions per cell (softmax of logits; identity when the
    /// map already holds probabilities).
    pub fn probabilities(&self) -> Vec<f64> {
        match self.kind {
            SemanticKind::Probabilities => self.values.clone(),
            SemanticKind::Logits => {
                let mut out = self.values.clone();
                for row in out.chunks_mut(NUM_CLASSES) {
                    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for v in row.iter_mut() {
                        *v = crate::math::exp(*v - mx);
                        sum += *v;
                    }
                    for v in row.iter_mut() {
                        *v /= sum;
                    }
                }
                out
            }
        }
    }
}

/// Raw per-pixel channels: RGB, central-difference gradient magnitude of
/// intensity, and 3×3 box-mean RGB. Borders replicate.
pub fn raw_image_features(rgb: &Image) -> Image {
    assert_eq!(rgb.channels, 3);
    let (w, h) = (rgb.width, rgb.height);
    let mut out = Image::zeros(w, h, RAW_CHANNELS);
    let clamp = |v: i64, hi: usize| v.clamp(0, hi as i64 - 1) as usize;
    let intensity = |x: usize, y: usize| {
        let p = rgb.pixel(x, y);
        (p[0] + p[1] + p[2]) / 3.0
    };
    for y in 0..h {
        for x in 0..w {
            let p = rgb.pixel(x, y);
            let gx =
                (intensity(clamp(x as i64 + 1, w), y) - intensity(clamp(x as i64 - 1, w), y)) * 0.5;
            let gy =
                (intensity(x, clamp(y as i64 + 1, h)) - intensity(x, clamp(y as i64 - 1, h))) * 0.5;
            let mut mean = [0.0; 3];
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let q = rgb.pixel(clamp(x as i64 + dx, w), clamp(y as i64 + dy, h));
                    for c in 0..3 {
                        mean[c] += q[c];
                    }
                }
            }
            let px = out.pixel_mut(x, y);
            px[0] = p[0];
            px[1] = p[1];
            px[2] = p[2];
            px[3] = crate::math::hypot(gx, gy);
            px[4] = mean[0] / 9.0;
            px[5] = mean[1] / 9.0;
            px[6] = mean[2] / 9.0;
        }
    }
    out
}

/// The trainable single-frame model.
#[derive(Clone, Debug, PartialEq)]
pub struct OnboardParams {
    /// Pointwise projection of the raw image channels (7 → 8, linear).
    pub pixel_proj: DenseNet,
    /// Applied after the Z-axis mean reduction (8 → 16, linear).
    pub z_proj: DenseNet,
    /// Per-cell decoder (16 → 32 → 32 → 4).
    pub decoder: DenseNet,
}

impl OnboardParams {
    pub fn init(seed: u64) -> OnboardParams {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        OnboardParams {
            pixel_proj: DenseNet::xavier(
                &[RAW_CHANNELS, IMAGE_CHANNELS],
                &[Activation::Linear],
                &mut rng,
            ),
            z_proj: DenseNet::xavier(
                &[IMAGE_CHANNELS, BEV_CHANNELS],
                &[Activation::Linear],
                &mut rng,
            ),
            decoder: DenseNet::xavier(
                &[BEV_CHANNELS, 32, 32, NUM_CLASSES],
                &[Activation::Relu, Activation::Relu, Activation::Linear],
                &mut rng,
            ),
        }
    }

    /// Learned per-pixel feature map: raw channels through the pointwise
    /// 7→8 linear stage.
    pub fn image_features(&self, rgb: &Image) -> Image {
        let raw = raw_image_features(rgb);
        let mut out = Image::zeros(raw.width, raw.height, IMAGE_CHANNELS);
        let t = Tensor::from_vec(&[raw.width * raw.height, RAW_CHANNELS], raw.data);
        out.data = self.pixel_proj.infer(&t).data;
        out
    }

    pub fn param_lens(&self) -> Vec<usize> {
        let mut lens = self.pixel_proj.param_lens();
        lens.extend(self.z_proj.param_lens());
        lens.extend(self.decoder.param_lens());
        lens
    }
}

/// Geometry-only lifting result: per-cell camera/Z-mean of the raw image
/// channels. This is the cacheable, parameter-free part of the encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedFrame {
    pub grid: GridSpec2,
    /// `(iy * X + ix) * RAW_CHANNELS + c`; zero on uncovered cells.
    pub raw: Vec<f64>,
    pub mask: Vec<bool>,
}

/// Lifts per-pixel raw features onto the ego-centered BEV grid: each voxel
/// center projects into every camera, in-frustum hits sample the image
/// bilinearly and average across cameras, then valid Z levels average into
/// one vector per cell. A cell is covered when any (z, camera) pair sampled
/// it.
pub fn lift_raw(
    feature_images: &[Image],
    cameras: &[CameraModel],
    grid: &GridSpec2,
    zs: &[f64],
) -> LiftedFrame {
    assert_eq!(feature_images.len(), cameras.len(), "one image per camera");
    let n = grid.n_cells();
    let mut raw = vec![0.0; n * RAW_CHANNELS];
    let mut mask = vec![false; n];
    let mut sample = [0.0; RAW_CHANNELS];
    for iy in 0..grid.dims[1] {
        for ix in 0..grid.dims[0] {
            let [cx, cy] = grid.cell_center(ix, iy);
            let mut cell_acc = [0.0; RAW_CHANNELS];
            let mut z_hits = 0usize;
            for &z in zs {
                let p = Vec3::new(cx, cy, z);
                let mut cam_acc = [0.0; RAW_CHANNELS];
                let mut cam_hits = 0usize;
                for (img, cam) in feature_images.iter().zip(cameras) {
                    let Some(hit) = project_point(cam, p) else { continue };
                    if img.sample(hit.u, hit.v, &mut sample).is_some() {
                        for c in 0..RAW_CHANNELS {
                            cam_acc[c] += sample[c];
                        }
                        cam_hits += 1;
                    }
                }
                if cam_hits > 0 {
                    for c in 0..RAW_CHANNELS {
                        cell_acc[c] += cam_acc[c] / cam_hits as f64;
                    }
                    z_hits += 1;
                }
            }
            if z_hits > 0 {
                let idx = grid.idx(ix, iy);
                mask[idx] = true;
                for c in 0..RAW_CHANNELS {
                    raw[idx * RAW_CHANNELS + c] = cell_acc[c] / z_hits as f64;
                }
            }
        }
    }
    LiftedFrame { grid: *grid, raw, mask }
}

/// Featurizes a rig's RGB images and lifts them in one call.
pub fn lift_frame_images(
    rgb_images: &[Image],
    cameras: &[CameraModel],
    grid: &GridSpec2,
    zs: &[f64],
) -> LiftedFrame {
    let feats: Vec<Image> = rgb_images.iter().map(raw_image_features).collect();
    lift_raw(&feats, cameras, grid, zs)
}

fn packed_covered(lifted: &LiftedFrame) -> (Vec<usize>, Tensor) {
    let cells: Vec<usize> = (0..lifted.grid.n_cells()).filter(|&i| lifted.mask[i]).collect();
    let mut data = Vec::with_capacity(cells.len() * RAW_CHANNELS);
    for &i in &cells {
        data.extend_from_slice(&lifted.raw[i * RAW_CHANNELS..(i + 1) * RAW_CHANNELS]);
    }
    let t = Tensor::from_vec(&[cells.len(), RAW_CHANNELS], data);
    (cells, t)
}

/// Applies the learned projections to a lifted frame, producing the frame's
/// BEV feature map.
pub fn lift_to_bev(lifted: &LiftedFrame, params: &OnboardParams) -> BevFeatureMap {
    let (cells, packed) = packed_covered(lifted);
    let projected = params.z_proj.infer(&params.pixel_proj.infer(&packed));
    let n = lifted.grid.n_cells();
    let mut features = vec![0.0; n * BEV_CHANNELS];
    for (row, &cell) in cells.iter().enumerate() {
        features[cell * BEV_CHANNELS..(cell + 1) * BEV_CHANNELS]
            .copy_from_slice(&projected.data[row * BEV_CHANNELS..(row + 1) * BEV_CHANNELS]);
    }
    BevFeatureMap {
        grid: lifted.grid,
        channels: BEV_CHANNELS,
        features,
        mask: lifted.mask.clone(),
    }
}

/// Per-cell decoding of a BEV feature map into semantic logits. Uncovered
/// cells get [`UNCOVERED_LOGITS`] and stay masked.
pub fn decode(features: &BevFeatureMap, params: &OnboardParams) -> SemanticMap {
    assert_eq!(features.channels, BEV_CHANNELS);
    let n = features.grid.n_cells();
    let cells: Vec<usize> = (0..n).filter(|&i| features.mask[i]).collect();
    let mut packed = Vec::with_capacity(cells.len() * BEV_CHANNELS);
    for &i in &cells {
        packed.extend_from_slice(&features.features[i * BEV_CHANNELS..(i + 1) * BEV_CHANNELS]);
    }
    let logits = params
        .decoder
        .infer(&Tensor::from_vec(&[cells.len(), BEV_CHANNELS], packed));
    let mut values = vec![0.0; n * NUM_CLASSES];
    for row in values.chunks_mut(NUM_CLASSES) {
        row.copy_from_slice(&UNCOVERED_LOGITS);
    }
    for (row, &cell) in cells.iter().enumerate() {
        values[cell * NUM_CLASSES..(cell + 1) * NUM_CLASSES]
            .copy_from_slice(&logits.data[row * NUM_CLASSES..(row + 1) * NUM_CLASSES]);
    }
    SemanticMap {
        grid: features.grid,
        values,
        mask: features.mask.clone(),
        kind: SemanticKind::Logits,
    }
}

/// One training sample: a lifted frame plus ground-truth class labels on the
/// same local grid.
#[derive(Clone, Debug)]
pub struct TrainingFrame {
    pub lifted: LiftedFrame,
    pub labels: Vec<u8>,
}

#[derive(Clone, Copy, Debug)]
pub struct OnboardTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
}

impl Default for OnboardTrainConfig {
    fn default() -> OnboardTrainConfig {
        OnboardTrainConfig { steps: 400, lr: 1e-3, seed: 0, focal_alpha: 1.0, focal_gamma: 2.0 }
    }
}

/// Focal-loss training of the three dense stages over covered cells, one
/// random frame per step. Deterministic for a seed. Returns the parameters
/// and the per-step loss curve.
pub fn train_onboard(
    frames: &[TrainingFrame],
    cfg: &OnboardTrainConfig,
) -> Result<(OnboardParams, Vec<f64>), LearnError> {
    use rand::SeedableRng;
    assert!(!frames.is_empty(), "need at least one training frame");
    let mut params = OnboardParams::init(cfg.seed ^ 0x0b0a_d011);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(&params.param_lens(), AdamConfig::with_lr(cfg.lr));
    let mut losses = Vec::with_capacity(cfg.steps);
    // Packed inputs and targets are fixed per frame; precompute.
    let prepared: Vec<(Tensor, Vec<usize>)> = frames
        .iter()
        .map(|f| {
            let (cells, packed) = packed_covered(&f.lifted);
            let targets: Vec<usize> = cells.iter().map(|&c| f.labels[c] as usize).collect();
            (packed, targets)
        })
        .collect();
    for step in 0..cfg.steps {
        let (packed, targets) = &prepared[rng.gen_range(0..prepared.len())];
        let mut tape = Tape::new();
        let bp = params.pixel_proj.bind(&mut tape);
        let bz = params.z_proj.bind(&mut tape);
        let bd = params.decoder.bind(&mut tape);
        let x = tape.leaf(packed.clone());
        let h = bp.forward(&mut tape, x);
        let h = bz.forward(&mut tape, h);
        let logits = bd.forward(&mut tape, h);
        let loss = tape.focal_loss(logits, targets, cfg.focal_alpha, cfg.focal_gamma);
        let loss_val = tape.data(loss).data[0];
        if !loss_val.is_finite() {
            return Err(LearnError::NonFiniteLoss { step });
        }
        losses.push(loss_val);
        tape.backward(loss);
        let mut grads = bp.grads(&tape);
        grads.extend(bz.grads(&tape));
        grads.extend(bd.grads(&tape));
        let mut slices = params.pixel_proj.param_slices_mut();
        slices.extend(params.z_proj.param_slices_mut());
        slices.extend(params.decoder.param_slices_mut());
        let grad_slices: Vec<&[f64]> = grads.iter().map(|g| g.data.as_slice()).collect();
        adam.step(&mut slices, &grad_slices)?;
    }
    Ok((params, losses))
}
