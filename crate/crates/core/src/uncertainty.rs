//! The uncertainty network: per-cell fusion confidence and predicted
//! ground-truth divergence from BEV features, optionally augmented with
//! geometry probed from the fitted radiance field.
//!
//! Confidences are independent per-frame sigmoids, normalized later inside
//! the weighted average; only relative confidence matters, which is what
//! lets inference handle any number of frames. Training runs on short clips
//! through the differentiable fusion op and a cross-entropy against world
//! ground truth, plus the auxiliary divergence loss that pushes the KL head
//! toward the true per-cell divergence.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{pixel_ray, project_point, CameraModel, GridSpec2, Pose, Vec3};
use crate::learn::{
    Activation, AdamConfig, AdamState, DenseNet, FuseEntry, LearnError, NodeId, RegionFusePlan,
    Tape, Tensor,
};
use crate::nerf::{render_view, RadianceGrid, RenderOptions};
use crate::onboard::{BevFeatureMap, SemanticMap, BEV_CHANNELS, Z_LEVELS};
use crate::scene::BevLabels;
use crate::NUM_CLASSES;

/// Per-cell fusion weights of one frame, strictly positive on covered cells
/// and zero elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceMap {
    pub grid: GridSpec2,
    pub weights: Vec<f64>,
    pub mask: Vec<bool>,
}

/// Rendered-surface offsets fed to the uncertainty network: for every BEV
/// cell, one 3-vector per z level (the vector from the voxel center to the
/// surface point the radiance field reconstructs along its pixel ray, in
/// frame-local axes) plus a validity flag per level.
#[derive(Clone, Debug, PartialEq)]
pub struct NerfAugmentation {
    pub grid: GridSpec2,
    /// Per cell: `3·Z` offset components then `Z` flags (0/1).
    pub raw: Vec<f64>,
}

/// Channels of the raw augmentation vector per cell.
pub const AUG_RAW_CHANNELS: usize = 4 * Z_LEVELS;
/// Channels after the learned offset encoder.
pub const AUG_CHANNELS: usize = 6;
/// Rendered opacity below which a probe is treated as unreliable and the
/// offset invalidated.
pub const AUG_OPACITY_MIN: f64 = 0.1;

impl NerfAugmentation {
    pub fn cell(&self, idx: usize) -> &[f64] {
        &self.raw[idx * AUG_RAW_CHANNELS..(idx + 1) * AUG_RAW_CHANNELS]
    }
}

/// Probes the fitted radiance field for every (cell, z level) voxel of a
/// frame's local grid.
///
/// Each voxel projects into the in-frustum camera whose optical axis is
/// best aligned with the view ray toward it; volume rendering through that
/// pixel reconstructs the surface point, and the offset from the voxel
/// center is recorded in frame-local axes. Probes that leave every frustum
/// or land on near-empty renders (opacity < [`AUG_OPACITY_MIN`]) are zeroed
/// with their flag cleared.
pub fn delta_augmentation(
    grid: &RadianceGrid,
    frame_pose: &Pose,
    cameras: &[CameraModel],
    bev: &GridSpec2,
    zs: &[f64],
    opts: &RenderOptions,
) -> NerfAugmentation {
    assert_eq!(zs.len(), Z_LEVELS, "augmentation is laid out for {Z_LEVELS} z levels");
    // Render each camera's termination depth and opacity once; voxel probes
    // then look up their pixel.
    let views: Vec<_> = cameras
        .iter()
        .map(|cam| {
            let (_, depth, opacity) = render_view(grid, frame_pose, cam, opts);
            (depth, opacity)
        })
        .collect();
    let n = bev.n_cells();
    let mut raw = vec![0.0; n * AUG_RAW_CHANNELS];
    for iy in 0..bev.dims[1] {
        for ix in 0..bev.dims[0] {
            let cell = bev.idx(ix, iy);
            let [cx, cy] = bev.cell_center(ix, iy);
            for (zi, &z) in zs.iter().enumerate() {
                let v_local = Vec3::new(cx, cy, z);
                // Pick the in-frustum camera best aligned with the ray to
                // the voxel.
                let mut best: Option<(usize, f64, f64, f64)> = None;
                for (ci, cam) in cameras.iter().enumerate() {
                    let Some(hit) = project_point(cam, v_local) else { continue };
                    let axis = cam.axis_in_frame();
                    let to_voxel = (v_local - cam.extrinsic.translation).normalized();
                    let alignment = axis.dot(to_voxel);
                    if best.map_or(true, |(_, a, _, _)| alignment > a) {
                        best = Some((ci, alignment, hit.u, hit.v));
                    }
                }
                let Some((ci, _, u, v)) = best else { continue };
                let cam = &cameras[ci];
                let (iu, iv) = (
                    (u as usize).min(cam.width - 1),
                    (v as usize).min(cam.height - 1),
                );
                let (depth_img, opacity_img) = &views[ci];
                let depth = depth_img.pixel(iu, iv)[0];
                let opacity = opacity_img.pixel(iu, iv)[0];
                if opacity < AUG_OPACITY_MIN || !depth.is_finite() {
                    continue;
                }
                let ray = pixel_ray(
                    cam,
                    frame_pose,
                    iu as f64 + 0.5,
                    iv as f64 + 0.5,
                    grid.t_near,
                    grid.t_far,
                )
                .expect("pixel center inside image");
                let surface_world = ray.at(depth);
                let v_world = frame_pose.to_world(v_local);
                let off = frame_pose.rotate_to_local(surface_world - v_world);
                let base = cell * AUG_RAW_CHANNELS + zi * 3;
                raw[base] = off.x;
                raw[base + 1] = off.y;
                raw[base + 2] = off.z;
                raw[cell * AUG_RAW_CHANNELS + 3 * Z_LEVELS + zi] = 1.0;
            }
        }
    }
    NerfAugmentation { grid: *bev, raw }
}

/// The uncertainty network's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyParams {
    /// Raw offsets + flags → 6 channels.
    pub offset_encoder: DenseNet,
    /// (BEV features ++ encoded offsets) → hidden representation.
    pub trunk: DenseNet,
    /// Hidden → confidence in (0, 1).
    pub conf_head: DenseNet,
    /// Hidden → nonnegative divergence estimate.
    pub kl_head: DenseNet,
}

impl UncertaintyParams {
    pub fn init(seed: u64) -> UncertaintyParams {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        UncertaintyParams {
            offset_encoder: DenseNet::xavier(
                &[AUG_RAW_CHANNELS, 16, AUG_CHANNELS],
                &[Activation::Relu, Activation::Linear],
                &mut rng,
            ),
            trunk: DenseNet::xavier(
                &[BEV_CHANNELS + AUG_CHANNELS, 32, 32],
                &[Activation::Relu, Activation::Relu],
                &mut rng,
            ),
            conf_head: DenseNet::xavier(&[32, 1], &[Activation::Sigmoid], &mut rng),
            kl_head: DenseNet::xavier(&[32, 1], &[Activation::Softplus], &mut rng),
        }
    }

    pub fn param_lens(&self) -> Vec<usize> {
        let mut lens = self.offset_encoder.param_lens();
        lens.extend(self.trunk.param_lens());
        lens.extend(self.conf_head.param_lens());
        lens.extend(self.kl_head.param_lens());
        lens
    }
}

fn packed_cells(mask: &[bool]) -> Vec<usize> {
    (0..mask.len()).filter(|&i| mask[i]).collect()
}

fn packed_features(features: &BevFeatureMap, cells: &[usize]) -> Tensor {
    let mut data = Vec::with_capacity(cells.len() * BEV_CHANNELS);
    for &i in cells {
        data.extend_from_slice(&features.features[i * BEV_CHANNELS..(i + 1) * BEV_CHANNELS]);
    }
    Tensor::from_vec(&[cells.len(), BEV_CHANNELS], data)
}

fn packed_aug(aug: Option<&NerfAugmentation>, cells: &[usize]) -> Tensor {
    let mut data = vec![0.0; cells.len() * AUG_RAW_CHANNELS];
    if let Some(a) = aug {
        for (row, &i) in cells.iter().enumerate() {
            data[row * AUG_RAW_CHANNELS..(row + 1) * AUG_RAW_CHANNELS].copy_from_slice(a.cell(i));
        }
    }
    Tensor::from_vec(&[cells.len(), AUG_RAW_CHANNELS], data)
}

/// Frozen-parameter forward pass over one frame: per covered cell, a
/// confidence in (0, 1) and a nonnegative divergence estimate. Uncovered
/// cells get zero confidence.
pub fn confidence_forward(
    features: &BevFeatureMap,
    aug: Option<&NerfAugmentation>,
    params: &UncertaintyParams,
) -> (ConfidenceMap, Vec<f64>) {
    if let Some(a) = aug {
        assert_eq!(a.grid, features.grid, "augmentation grid mismatch");
    }
    let n = features.grid.n_cells();
    let cells = packed_cells(&features.mask);
    let feats = packed_features(features, &cells);
    let encoded = params.offset_encoder.infer(&packed_aug(aug, &cells));
    let mut joint = Vec::with_capacity(cells.len() * (BEV_CHANNELS + AUG_CHANNELS));
    for row in 0..cells.len() {
        joint.extend_from_slice(&feats.data[row * BEV_CHANNELS..(row + 1) * BEV_CHANNELS]);
        joint.extend_from_slice(&encoded.data[row * AUG_CHANNELS..(row + 1) * AUG_CHANNELS]);
    }
    let hidden = params.trunk.infer(&Tensor::from_vec(
        &[cells.len(), BEV_CHANNELS + AUG_CHANNELS],
        joint,
    ));
    let conf = params.conf_head.infer(&hidden);
    let klu = params.kl_head.infer(&hidden);
    let mut weights = vec![0.0; n];
    let mut klu_map = vec![0.0; n];
    for (row, &cell) in cells.iter().enumerate() {
        weights[cell] = conf.data[row];
        klu_map[cell] = klu.data[row];
    }
    (
        ConfidenceMap { grid: features.grid, weights, mask: features.mask.clone() },
        klu_map,
    )
}

/// True per-cell divergence of a frame's prediction from ground truth:
/// `KL(onehot(gt) ‖ softmax(S)) = −ln p_gt`. Uncovered cells hold zero and
/// must be excluded via the mask.
pub fn true_kl(semantics: &SemanticMap, labels: &[u8]) -> Vec<f64> {
    assert_eq!(labels.len(), semantics.grid.n_cells(), "label grid mismatch");
    let probs = semantics.probabilities();
    let mut out = vec![0.0; labels.len()];
    for (i, &label) in labels.iter().enumerate() {
        if semantics.mask[i] {
            out[i] = -crate::math::ln(probs[i * NUM_CLASSES + label as usize]);
        }
    }
    out
}

/// Mean squared difference between predicted and true divergence over
/// covered cells.
pub fn kl_loss(klu: &[f64], klg: &[f64], mask: &[bool]) -> f64 {
    assert_eq!(klu.len(), klg.len());
    assert_eq!(klu.len(), mask.len());
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..klu.len() {
        if mask[i] {
            let d = klg[i] - klu[i];
            sum += d * d;
            n += 1;
        }
    }
    sum / n.max(1) as f64
}

/// One training frame of a scene, with the frozen onboard outputs.
#[derive(Clone, Debug)]
pub struct UncFrame {
    pub pose: Pose,
    pub features: BevFeatureMap,
    pub semantics: SemanticMap,
    pub aug: Option<NerfAugmentation>,
    /// Ground-truth labels on the frame's local grid.
    pub labels: Vec<u8>,
}

/// A training scene: its frames plus world-grid ground truth for the fused
/// cross-entropy.
#[derive(Clone, Debug)]
pub struct UncScene {
    pub frames: Vec<UncFrame>,
    pub world_labels: BevLabels,
}

#[derive(Clone, Copy, Debug)]
pub struct UncTrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// Frames per training clip.
    pub clip_len: usize,
    pub w_ce: f64,
    pub w_kl: f64,
    pub use_kl: bool,
    pub use_aug: bool,
    pub seed: u64,
}

impl Default for UncTrainConfig {
    fn default() -> UncTrainConfig {
        UncTrainConfig {
            steps: 300,
            lr: 1e-3,
            clip_len: 5,
            w_ce: 1.0,
            w_kl: 0.1,
            use_kl: true,
            use_aug: true,
            seed: 0,
        }
    }
}

/// Precomputed per-frame constants for clip training.
struct PreparedFrame {
    pose: Pose,
    grid: GridSpec2,
    mask: Vec<bool>,
    /// cell index → packed row (usize::MAX when uncovered).
    packed_of: Vec<usize>,
    feats: Tensor,
    aug: Tensor,
    probs: Vec<f64>,
    klg: Tensor,
}



fn prepare_frame(frame: &UncFrame, use_aug: bool) -> PreparedFrame {
    let cells = packed_cells(&frame.features.mask);
    let mut packed_of = vec![usize::MAX; frame.features.grid.n_cells()];
    for (row, &c) in cells.iter().enumerate() {
        packed_of[c] = row;
    }
    let probs = frame.semantics.probabilities();
    let klg_full = true_kl(&frame.semantics, &frame.labels);
    let klg: Vec<f64> = cells.iter().map(|&c| klg_full[c]).collect();
    PreparedFrame {
        pose: frame.pose,
        grid: frame.features.grid,
        mask: frame.features.mask.clone(),
        feats: packed_features(&frame.features, &cells),
        aug: packed_aug(if use_aug { frame.aug.as_ref() } else { None }, &cells),
        probs,
        klg: Tensor::from_vec(&[cells.len(), 1], klg),
        packed_of,
    }
}

/// Builds the differentiable fusion plan of a clip over the world grid:
/// for every world cell one entry per covered bilinear neighbor of every
/// frame, with the frame's class distribution baked in as constants.
fn clip_plan(
    frames: &[&PreparedFrame],
    world: &GridSpec2,
    world_labels: &[u8],
) -> (RegionFusePlan, Vec<usize>) {
    let mut plan = RegionFusePlan { entries: Vec::new(), offsets: vec![0] };
    let mut targets = Vec::new();
    let mut footprint = [(0usize, 0.0f64); 4];
    for iy in 0..world.dims[1] {
        for ix in 0..world.dims[0] {
            let [wx, wy] = world.cell_center(ix, iy);
            let start = plan.entries.len();
            for (fi, f) in frames.iter().enumerate() {
                let count = crate::fusion::covered_footprint(
                    &f.grid,
                    &f.mask,
                    &f.pose,
                    wx,
                    wy,
                    &mut footprint,
                );
                for &(cell, w) in &footprint[..count] {
                    let mut probs = [0.0; NUM_CLASSES];
                    probs.copy_from_slice(&f.probs[cell * NUM_CLASSES..(cell + 1) * NUM_CLASSES]);
                    plan.entries.push(FuseEntry {
                        frame: fi,
                        cell: f.packed_of[cell],
                        weight: w,
                        probs,
                    });
                }
            }
            if plan.entries.len() > start {
                plan.offsets.push(plan.entries.len());
                targets.push(world_labels[world.idx(ix, iy)] as usize);
            } else {
                plan.entries.truncate(start);
            }
        }
    }
    (plan, targets)
}

/// Trains the uncertainty network on short clips of adjacent frames through
/// differentiable fusion. Returns the parameters and per-step total losses.
pub fn train_uncertainty(
    scenes: &[UncScene],
    cfg: &UncTrainConfig,
) -> Result<(UncertaintyParams, Vec<f64>), LearnError> {
    use rand::SeedableRng;
    assert!(!scenes.is_empty() && scenes.iter().all(|s| !s.frames.is_empty()));
    let mut params = UncertaintyParams::init(cfg.seed ^ 0x70c1_f1de);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(&params.param_lens(), AdamConfig::with_lr(cfg.lr));
    let prepared: Vec<Vec<PreparedFrame>> = scenes
        .iter()
        .map(|s| s.frames.iter().map(|f| prepare_frame(f, cfg.use_aug)).collect())
        .collect();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let si = rng.gen_range(0..scenes.len());
        let scene_frames = &prepared[si];
        let clip_len = cfg.clip_len.min(scene_frames.len());
        let start = rng.gen_range(0..=scene_frames.len() - clip_len);
        let clip: Vec<&PreparedFrame> = scene_frames[start..start + clip_len].iter().collect();
        let (plan, targets) = clip_plan(
            &clip,
            &scenes[si].world_labels.grid,
            &scenes[si].world_labels.labels,
        );
        if targets.is_empty() {
            continue;
        }

        let mut tape = Tape::new();
        let be = params.offset_encoder.bind(&mut tape);
        let bt = params.trunk.bind(&mut tape);
        let bc = params.conf_head.bind(&mut tape);
        let bk = params.kl_head.bind(&mut tape);
        let mut conf_ids: Vec<NodeId> = Vec::with_capacity(clip.len());
        let mut kl_terms: Vec<(NodeId, f64)> = Vec::with_capacity(clip.len());
        for f in &clip {
            let feats = tape.leaf(f.feats.clone());
            let aug_raw = tape.leaf(f.aug.clone());
            let encoded = be.forward(&mut tape, aug_raw);
            let joint = tape.concat(feats, encoded);
            let hidden = bt.forward(&mut tape, joint);
            let conf = bc.forward(&mut tape, hidden);
            conf_ids.push(conf);
            if cfg.use_kl {
                let klu = bk.forward(&mut tape, hidden);
                let klg = tape.leaf(f.klg.clone());
                let diff = tape.sub(klg, klu);
                let sq = tape.mul(diff, diff);
                let m = tape.mean(sq);
                kl_terms.push((m, 1.0 / clip.len() as f64));
            }
        }
        let fused = tape.region_fuse(&conf_ids, plan);
        let ce = tape.nll_probs(fused, &targets);
        let total = if cfg.use_kl {
            let kl = tape.weighted_sum(&kl_terms);
            tape.weighted_sum(&[(ce, cfg.w_ce), (kl, cfg.w_kl)])
        } else {
            tape.weighted_sum(&[(ce, cfg.w_ce)])
        };
        let loss_val = tape.data(total).data[0];
        if !loss_val.is_finite() {
            return Err(LearnError::NonFiniteLoss { step });
        }
        losses.push(loss_val);
        tape.backward(total);

        let mut grads = be.grads(&tape);
        grads.extend(bt.grads(&tape));
        grads.extend(bc.grads(&tape));
        grads.extend(bk.grads(&tape));
        let mut slices = params.offset_encoder.param_slices_mut();
        slices.extend(params.trunk.param_slices_mut());
        slices.extend(params.conf_head.param_slices_mut());
        slices.extend(params.kl_head.param_slices_mut());
        let grad_slices: Vec<&[f64]> = grads.iter().map(|g| g.data.as_slice()).collect();
        adam.step(&mut slices, &grad_slices)?;
    }
    Ok((params, losses))
}
