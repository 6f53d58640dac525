//! IoU metrics, range crops, correlation stats, and the single-frame
//! stitching baseline used by the experiment harness.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::fusion::covered_footprint;
use crate::geometry::{project_point, CameraModel, GridSpec2, Pose, Vec3};
use crate::onboard::{SemanticKind, SemanticMap};
use crate::scene::{BevLabels, CellVisibility};
use crate::{MapClass, FOREGROUND_CLASSES, NUM_CLASSES};

/// Evaluation range presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RangeKind {
    /// 60 m × 30 m crop.
    Short,
    /// 100 m × 100 m crop; clamps to the full world when it is smaller.
    Long,
}

impl RangeKind {
    pub fn extent(self) -> [f64; 2] {
        match self {
            RangeKind::Short => [60.0, 30.0],
            RangeKind::Long => [100.0, 100.0],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RangeKind::Short => "short",
            RangeKind::Long => "long",
        }
    }
}

/// Axis-aligned cell window of a grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Crop {
    pub x0: usize,
    pub y0: usize,
    pub nx: usize,
    pub ny: usize,
}

impl Crop {
    pub fn full(grid: &GridSpec2) -> Crop {
        Crop { x0: 0, y0: 0, nx: grid.dims[0], ny: grid.dims[1] }
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }
}

/// Deterministic axis-aligned crop of a range preset centered on a world
/// position (the ego pose for per-frame evaluation, the scene center for
/// global maps), clamped to the grid.
pub fn range_crop(grid: &GridSpec2, center: [f64; 2], kind: RangeKind) -> Crop {
    let [ex, ey] = kind.extent();
    let half = [ex * 0.5, ey * 0.5];
    let lo_x = (center[0] - half[0] - grid.origin[0]) / grid.cell_size;
    let lo_y = (center[1] - half[1] - grid.origin[1]) / grid.cell_size;
    let x0 = lo_x.max(0.0) as usize;
    let y0 = lo_y.max(0.0) as usize;
    let want_x = (ex / grid.cell_size) as usize;
    let want_y = (ey / grid.cell_size) as usize;
    let nx = want_x.min(grid.dims[0] - x0.min(grid.dims[0]));
    let ny = want_y.min(grid.dims[1] - y0.min(grid.dims[1]));
    Crop { x0: x0.min(grid.dims[0].saturating_sub(1)), y0: y0.min(grid.dims[1].saturating_sub(1)), nx, ny }
}

/// Intersection-over-union of one class between two label rasters over a
/// crop. An empty union counts as a perfect 1.0 (nothing to find, nothing
/// found).
pub fn iou_labels(a: &[u8], b: &[u8], grid: &GridSpec2, class: MapClass, crop: &Crop) -> f64 {
    assert_eq!(a.len(), grid.n_cells(), "label raster mismatches grid");
    assert_eq!(b.len(), grid.n_cells(), "label raster mismatches grid");
    let c = class as u8;
    let mut inter = 0usize;
    let mut union = 0usize;
    for iy in crop.y0..crop.y0 + crop.ny {
        for ix in crop.x0..crop.x0 + crop.nx {
            let idx = grid.idx(ix, iy);
            let (pa, pb) = (a[idx] == c, b[idx] == c);
            inter += (pa && pb) as usize;
            union += (pa || pb) as usize;
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Argmax labels of a semantic map.
pub fn argmax_labels(map: &SemanticMap) -> Vec<u8> {
    (0..map.grid.n_cells()).map(|i| map.argmax(i) as u8).collect()
}

/// Per-class IoU of a predicted map against ground truth. Grids must align.
pub fn iou(pred: &SemanticMap, gt: &BevLabels, class: MapClass, crop: &Crop) -> f64 {
    assert_eq!(pred.grid, gt.grid, "prediction and ground truth grids are misaligned");
    iou_labels(&argmax_labels(pred), &gt.labels, &gt.grid, class, crop)
}

/// Foreground IoUs (divider, crossing, boundary) and their mean.
pub fn miou(pred: &SemanticMap, gt: &BevLabels, crop: &Crop) -> ([f64; 3], f64) {
    let labels = argmax_labels(pred);
    let mut out = [0.0; 3];
    for (i, class) in FOREGROUND_CLASSES.iter().enumerate() {
        out[i] = iou_labels(&labels, &gt.labels, &gt.grid, *class, crop);
    }
    (out, (out[0] + out[1] + out[2]) / 3.0)
}

/// One evaluation result row.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub scene: String,
    pub mode: String,
    pub range: RangeKind,
    pub frame_count: usize,
    pub iou: [f64; 3],
    pub miou: f64,
    pub wall_secs: f64,
}

/// Pearson correlation. Degenerate inputs (fewer than two points or a
/// constant series) report `(0.0, true)`.
pub fn pearson(xs: &[f64], ys: &[f64]) -> (f64, bool) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return (0.0, true);
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= 1e-18 || syy <= 1e-18 {
        return (0.0, true);
    }
    (sxy / crate::math::sqrt(sxx * syy), false)
}

/// Per-frame uncertainty analysis numbers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameKlStats {
    pub pearson_r: f64,
    pub degenerate: bool,
    pub mean_conf_occluded: f64,
    pub mean_conf_visible: f64,
    pub n_occluded: usize,
    pub n_visible: usize,
}

/// Correlates predicted vs true divergence over covered cells and splits
/// mean confidence by ground-point visibility.
pub fn frame_kl_stats(
    klu: &[f64],
    klg: &[f64],
    confidence: &[f64],
    visibility: &[CellVisibility],
    mask: &[bool],
) -> FrameKlStats {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut occ_sum = 0.0;
    let mut occ_n = 0usize;
    let mut vis_sum = 0.0;
    let mut vis_n = 0usize;
    for i in 0..mask.len() {
        if !mask[i] {
            continue;
        }
        xs.push(klu[i]);
        ys.push(klg[i]);
        match visibility[i] {
            CellVisibility::Occluded => {
                occ_sum += confidence[i];
                occ_n += 1;
            }
            CellVisibility::Visible => {
                vis_sum += confidence[i];
                vis_n += 1;
            }
            CellVisibility::OutOfView => {}
        }
    }
    let (r, degenerate) = pearson(&xs, &ys);
    FrameKlStats {
        pearson_r: r,
        degenerate,
        mean_conf_occluded: occ_sum / occ_n.max(1) as f64,
        mean_conf_visible: vis_sum / vis_n.max(1) as f64,
        n_occluded: occ_n,
        n_visible: vis_n,
    }
}

/// Single-frame stitching baseline: every world cell takes the prediction
/// of the covering frame whose ego position is closest (no averaging), the
/// map a vehicle would keep from its latest nearby pass.
pub fn stitch_nearest(frames: &[(Pose, SemanticMap)], world: &GridSpec2) -> SemanticMap {
    let n = world.n_cells();
    let mut values = vec![0.0; n * NUM_CLASSES];
    let mut mask = vec![false; n];
    let probs: Vec<Vec<f64>> = frames.iter().map(|(_, s)| s.probabilities()).collect();
    let mut footprint = [(0usize, 0.0f64); 4];
    for iy in 0..world.dims[1] {
        for ix in 0..world.dims[0] {
            let [wx, wy] = world.cell_center(ix, iy);
            let mut best: Option<(f64, usize)> = None;
            for (fi, (pose, sem)) in frames.iter().enumerate() {
                let cnt = covered_footprint(&sem.grid, &sem.mask, pose, wx, wy, &mut footprint);
                if cnt == 0 {
                    continue;
                }
                let d2 = {
                    let dx = wx - pose.translation.x;
                    let dy = wy - pose.translation.y;
                    dx * dx + dy * dy
                };
                if best.map_or(true, |(bd, _)| d2 < bd) {
                    best = Some((d2, fi));
                }
            }
            let cell = world.idx(ix, iy);
            if let Some((_, fi)) = best {
                let (pose, sem) = &frames[fi];
                let cnt = covered_footprint(&sem.grid, &sem.mask, pose, wx, wy, &mut footprint);
                let mut num = [0.0; NUM_CLASSES];
                let mut den = 0.0;
                for &(local, w) in &footprint[..cnt] {
                    den += w;
                    for k in 0..NUM_CLASSES {
                        num[k] += w * probs[fi][local * NUM_CLASSES + k];
                    }
                }
                if den > 0.0 {
                    mask[cell] = true;
                    for k in 0..NUM_CLASSES {
                        values[cell * NUM_CLASSES + k] = num[k] / den;
                    }
                    continue;
                }
            }
            values[cell * NUM_CLASSES] = 1.0;
        }
    }
    SemanticMap { grid: *world, values, mask, kind: SemanticKind::Probabilities }
}

/// Columns of a BEV grid whose ground point is inside at least one camera
/// frustum of the trajectory. Used to restrict column statistics of the
/// radiance field to observed ground.
pub fn ground_covered_columns(
    poses: &[Pose],
    cameras: &[CameraModel],
    grid: &GridSpec2,
) -> Vec<bool> {
    let mut covered = vec![false; grid.n_cells()];
    for iy in 0..grid.dims[1] {
        for ix in 0..grid.dims[0] {
            let [x, y] = grid.cell_center(ix, iy);
            let p = Vec3::new(x, y, 0.0);
            'frames: for pose in poses {
                let local = pose.to_local(p);
                for cam in cameras {
                    if project_point(cam, local).is_some() {
                        covered[grid.idx(ix, iy)] = true;
                        break 'frames;
                    }
                }
            }
        }
    }
    covered
}

/// Mean over covered columns of (max − mean) activated density along z: the
/// column-peakedness statistic the total-variance objective is expected to
/// raise.
pub fn column_peakedness(grid: &crate::nerf::RadianceGrid, covered: &[bool]) -> f64 {
    let [nx, ny, nz] = grid.spec.dims;
    assert_eq!(covered.len(), nx * ny);
    let mut total = 0.0;
    let mut count = 0usize;
    for iy in 0..ny {
        for ix in 0..nx {
            if !covered[iy * nx + ix] {
                continue;
            }
            let mut mx = f64::NEG_INFINITY;
            let mut sum = 0.0;
            for iz in 0..nz {
                let sigma = grid.sigma(grid.spec.idx(ix, iy, iz));
                mx = mx.max(sigma);
                sum += sigma;
            }
            total += mx - sum / nz as f64;
            count += 1;
        }
    }
    total / count.max(1) as f64
}
