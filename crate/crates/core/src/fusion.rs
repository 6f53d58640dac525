//! Region-centric aggregation of an arbitrary number of frames into one
//! global BEV map.
//!
//! Every world cell gathers, from every frame that observes it, a bilinear
//! sample of `confidence · class-distribution` and of `confidence`; the
//! fused distribution is their quotient. Sampling the products (rather than
//! the fields separately) makes uncovered local cells drop out exactly: a
//! zero confidence contributes nothing, never a fabricated value.
//!
//! Accumulation is streaming and order-independent up to floating-point
//! associativity, so unbounded sequences fuse in constant memory per frame.

use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::{GridSpec2, Pose, Vec3};
use crate::onboard::{SemanticKind, SemanticMap};
use crate::uncertainty::ConfidenceMap;
use crate::NUM_CLASSES;

/// Cells whose accumulated confidence mass stays below this report
/// background with no coverage instead of dividing by ~0.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum FusionError {
    #[error("semantic and confidence grids are misaligned")]
    GridMismatch,
    #[error("mv-map fusion requires a confidence map for every frame")]
    MissingConfidence,
}

/// Bilinear footprint of world position `(wx, wy)` in a frame's local grid,
/// restricted to covered cells. Writes up to four `(cell index, weight)`
/// pairs and returns how many were written; zero means the point is outside
/// the local grid or entirely uncovered there.
///
/// This is the one sampling rule shared by streaming fusion, differentiable
/// clip fusion, and single-frame stitching.
pub fn covered_footprint(
    grid: &GridSpec2,
    mask: &[bool],
    pose: &Pose,
    wx: f64,
    wy: f64,
    out: &mut [(usize, f64); 4],
) -> usize {
    let local = pose.to_local(Vec3::new(wx, wy, 0.0));
    let [nx, ny] = [grid.dims[0], grid.dims[1]];
    let node = grid.world_to_node(local.x, local.y);
    let (x, y) = (node[0], node[1]);
    if !(0.0..=(nx - 1) as f64).contains(&x) || !(0.0..=(ny - 1) as f64).contains(&y) {
        return 0;
    }
    let ix = (crate::math::floor(x) as usize).min(nx.saturating_sub(2));
    let iy = (crate::math::floor(y) as usize).min(ny.saturating_sub(2));
    let fx = x - ix as f64;
    let fy = y - iy as f64;
    let corners = [
        (ix, iy, (1.0 - fx) * (1.0 - fy)),
        (ix + 1, iy, fx * (1.0 - fy)),
        (ix, iy + 1, (1.0 - fx) * fy),
        (ix + 1, iy + 1, fx * fy),
    ];
    let mut n = 0;
    for (cx, cy, w) in corners {
        if w <= 0.0 || cx >= nx || cy >= ny {
            continue;
        }
        let idx = grid.idx(cx, cy);
        if mask[idx] {
            out[n] = (idx, w);
            n += 1;
        }
    }
    n
}

/// Running weighted sums over a world grid.
#[derive(Clone, Debug)]
pub struct GlobalMapAccumulator {
    pub grid: GridSpec2,
    /// `Σ confidence · class distribution`, per cell and class.
    pub numerator: Vec<f64>,
    /// `Σ confidence`, per cell.
    pub denominator: Vec<f64>,
    pub frames_seen: Vec<u32>,
}

impl GlobalMapAccumulator {
    pub fn new(grid: GridSpec2) -> GlobalMapAccumulator {
        GlobalMapAccumulator {
            grid,
            numerator: vec![0.0; grid.n_cells() * NUM_CLASSES],
            denominator: vec![0.0; grid.n_cells()],
            frames_seen: vec![0; grid.n_cells()],
        }
    }

    /// Folds one frame in: every world cell center transforms into the
    /// frame, samples `confidence · softmax(semantics)` and `confidence`
    /// bilinearly over covered local cells, and adds both.
    pub fn accumulate_frame(
        &mut self,
        semantics: &SemanticMap,
        confidence: &ConfidenceMap,
        pose: &Pose,
    ) -> Result<(), FusionError> {
        if semantics.grid != confidence.grid {
            return Err(FusionError::GridMismatch);
        }
        let probs = semantics.probabilities();
        let mut footprint = [(0usize, 0.0f64); 4];
        for iy in 0..self.grid.dims[1] {
            for ix in 0..self.grid.dims[0] {
                let [wx, wy] = self.grid.cell_center(ix, iy);
                let n = covered_footprint(
                    &semantics.grid,
                    &semantics.mask,
                    pose,
                    wx,
                    wy,
                    &mut footprint,
                );
                if n == 0 {
                    continue;
                }
                let cell = self.grid.idx(ix, iy);
                let mut den = 0.0;
                for &(local, w) in &footprint[..n] {
                    let wc = w * confidence.weights[local];
                    den += wc;
                    for k in 0..NUM_CLASSES {
                        self.numerator[cell * NUM_CLASSES + k] +=
                            wc * probs[local * NUM_CLASSES + k];
                    }
                }
                if den > 0.0 {
                    self.denominator[cell] += den;
                    self.frames_seen[cell] += 1;
                }
            }
        }
        Ok(())
    }

    /// Normalizes the accumulated sums into a probability map. Cells with
    /// no (or vanishing) confidence mass report certain background and stay
    /// uncovered.
    pub fn finalize(&self) -> SemanticMap {
        let n = self.grid.n_cells();
        let mut values = vec![0.0; n * NUM_CLASSES];
        let mut mask = vec![false; n];
        for cell in 0..n {
            if self.denominator[cell] > DENOMINATOR_FLOOR {
                mask[cell] = true;
                for k in 0..NUM_CLASSES {
                    values[cell * NUM_CLASSES + k] =
                        self.numerator[cell * NUM_CLASSES + k] / self.denominator[cell];
                }
            } else {
                values[cell * NUM_CLASSES] = 1.0;
            }
        }
        SemanticMap { grid: self.grid, values, mask, kind: SemanticKind::Probabilities }
    }
}

/// Confidence map of all ones over the covered cells: the equal-weight
/// baseline.
pub fn unit_confidence(semantics: &SemanticMap) -> ConfidenceMap {
    ConfidenceMap {
        grid: semantics.grid,
        weights: semantics.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
        mask: semantics.mask.clone(),
    }
}

/// One frame's contribution to a fused map.
#[derive(Clone, Debug)]
pub struct FrameContribution {
    pub pose: Pose,
    pub semantics: SemanticMap,
    /// Required for weighted fusion; the averaging baseline ignores it.
    pub confidence: Option<ConfidenceMap>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FusionMode {
    /// Confidence-weighted region-centric fusion.
    MvMap,
    /// Equal weights on covered cells.
    Average,
}

/// Streams any number of frames into one global map. Frames are consumed
/// one at a time, so memory stays constant in the sequence length.
pub fn fuse_sequence<I>(
    grid: GridSpec2,
    frames: I,
    mode: FusionMode,
) -> Result<SemanticMap, FusionError>
where
    I: IntoIterator<Item = FrameContribution>,
{
    let mut acc = GlobalMapAccumulator::new(grid);
    for frame in frames {
        match mode {
            FusionMode::Average => {
                let conf = unit_confidence(&frame.semantics);
                acc.accumulate_frame(&frame.semantics, &conf, &frame.pose)?;
            }
            FusionMode::MvMap => {
                let conf = frame.confidence.as_ref().ok_or(FusionError::MissingConfidence)?;
                acc.accumulate_frame(&frame.semantics, conf, &frame.pose)?;
            }
        }
    }
    Ok(acc.finalize())
}

/// Equal-weight fusion over a frame list (the "average fusion" baseline).
pub fn average_fusion(
    grid: GridSpec2,
    frames: &[(Pose, SemanticMap)],
) -> Result<SemanticMap, FusionError> {
    fuse_sequence(
        grid,
        frames.iter().map(|(pose, sem)| FrameContribution {
            pose: *pose,
            semantics: sem.clone(),
            confidence: None,
        }),
        FusionMode::Average,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Mat3;
    use crate::learn::check::fill_pseudo;
    use crate::learn::{FuseEntry, RegionFusePlan, Tape, Tensor};

    fn logits_map(grid: GridSpec2, seed: u64, mask: Vec<bool>) -> SemanticMap {
        let mut values = vec![0.0; grid.n_cells() * NUM_CLASSES];
        fill_pseudo(seed, -2.0, 2.0, &mut values);
        SemanticMap { grid, values, mask, kind: SemanticKind::Logits }
    }

    fn conf_map(grid: GridSpec2, seed: u64, mask: &[bool]) -> ConfidenceMap {
        let mut weights = vec![0.0; grid.n_cells()];
        fill_pseudo(seed, 0.1, 0.9, &mut weights);
        for (w, &m) in weights.iter_mut().zip(mask) {
            if !m {
                *w = 0.0;
            }
        }
        ConfidenceMap { grid, weights, mask: mask.to_vec() }
    }

    fn random_frames(grid: GridSpec2, n: usize) -> Vec<(Pose, SemanticMap, ConfidenceMap)> {
        (0..n)
            .map(|i| {
                let mut mask = vec![true; grid.n_cells()];
                // Punch some uncovered holes.
                for j in 0..grid.n_cells() {
                    if (j * 7 + i * 13) % 11 == 0 {
                        mask[j] = false;
                    }
                }
                let sem = logits_map(grid, 100 + i as u64, mask.clone());
                let conf = conf_map(grid, 200 + i as u64, &mask);
                let yaw = i as f64 * 0.37;
                let pose = Pose::new(
                    Mat3::yaw(yaw),
                    Vec3::new(
                        (i as f64 * 1.3) % 4.0 - 2.0,
                        (i as f64 * 0.9) % 4.0 - 2.0,
                        crate::scene::EGO_HEIGHT,
                    ),
                );
                (pose, sem, conf)
            })
            .collect()
    }

    #[test]
    fn identity_pose_matching_grids_accumulate_cell_for_cell() {
        let grid = GridSpec2::new([-2.0, -2.0], 0.5, [8, 8]);
        let sem = logits_map(grid, 1, vec![true; 64]);
        let conf = conf_map(grid, 2, &vec![true; 64]);
        let mut acc = GlobalMapAccumulator::new(grid);
        acc.accumulate_frame(&sem, &conf, &Pose::new(Mat3::IDENTITY, Vec3::new(0.0, 0.0, 0.0)))
            .unwrap();
        let probs = sem.probabilities();
        let fused = acc.finalize();
        for cell in 0..64 {
            assert!(fused.mask[cell]);
            assert_eq!(acc.frames_seen[cell], 1);
            for k in 0..NUM_CLASSES {
                let diff = fused.values[cell * NUM_CLASSES + k] - probs[cell * NUM_CLASSES + k];
                assert!(diff.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn frame_missing_the_region_leaves_accumulator_unchanged() {
        let world = GridSpec2::new([0.0, 0.0], 0.5, [8, 8]);
        let local = GridSpec2::new([-2.0, -2.0], 0.5, [8, 8]);
        let sem = logits_map(local, 3, vec![true; 64]);
        let conf = conf_map(local, 4, &vec![true; 64]);
        let mut acc = GlobalMapAccumulator::new(world);
        // Frame sits 100 m away.
        let pose = Pose::new(Mat3::IDENTITY, Vec3::new(100.0, 100.0, 0.0));
        acc.accumulate_frame(&sem, &conf, &pose).unwrap();
        assert!(acc.denominator.iter().all(|&d| d == 0.0));
        assert!(acc.frames_seen.iter().all(|&c| c == 0));
        let fused = acc.finalize();
        assert!(fused.mask.iter().all(|&m| !m));
        assert_eq!(fused.values[0], 1.0);
    }

    #[test]
    fn two_frame_weighted_average_hand_value() {
        // probs 0.8 / 0.4 for one class with confidences 0.75 / 0.25 →
        // fused 0.7.
        let grid = GridSpec2::new([0.0, 0.0], 1.0, [1, 1]);
        let mk = |p1: f64, conf: f64| {
            let sem = SemanticMap {
                grid,
                values: vec![1.0 - p1, p1, 0.0, 0.0],
                mask: vec![true],
                kind: SemanticKind::Probabilities,
            };
            let c = ConfidenceMap { grid, weights: vec![conf], mask: vec![true] };
            (sem, c)
        };
        let mut acc = GlobalMapAccumulator::new(grid);
        let (s1, c1) = mk(0.8, 0.75);
        let (s2, c2) = mk(0.4, 0.25);
        let pose = Pose::IDENTITY;
        acc.accumulate_frame(&s1, &c1, &pose).unwrap();
        acc.accumulate_frame(&s2, &c2, &pose).unwrap();
        let fused = acc.finalize();
        assert!((fused.values[1] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let g1 = GridSpec2::new([0.0, 0.0], 0.5, [4, 4]);
        let g2 = GridSpec2::new([0.0, 0.0], 0.5, [4, 5]);
        let sem = logits_map(g1, 5, vec![true; 16]);
        let conf = conf_map(g2, 6, &vec![true; 20]);
        let mut acc = GlobalMapAccumulator::new(g1);
        assert_eq!(
            acc.accumulate_frame(&sem, &conf, &Pose::IDENTITY),
            Err(FusionError::GridMismatch)
        );
    }

    #[test]
    fn finalize_matches_brute_force_oracle_on_twenty_frames() {
        let world = GridSpec2::new([-4.0, -4.0], 0.5, [16, 16]);
        let local = GridSpec2::new([-3.0, -3.0], 0.5, [12, 12]);
        let frames: Vec<_> = random_frames(local, 20);
        let mut acc = GlobalMapAccumulator::new(world);
        for (pose, sem, conf) in &frames {
            acc.accumulate_frame(sem, conf, pose).unwrap();
        }
        let fused = acc.finalize();

        // Independent oracle: per world cell, loop over all frames and
        // recompute the weighted mean directly from first principles.
        let mut footprint = [(0usize, 0.0f64); 4];
        for iy in 0..world.dims[1] {
            for ix in 0..world.dims[0] {
                let [wx, wy] = world.cell_center(ix, iy);
                let mut num = [0.0; NUM_CLASSES];
                let mut den = 0.0;
                for (pose, sem, conf) in &frames {
                    let probs = sem.probabilities();
                    let n = covered_footprint(&local, &sem.mask, pose, wx, wy, &mut footprint);
                    for &(cell, w) in &footprint[..n] {
                        let wc = w * conf.weights[cell];
                        den += wc;
                        for k in 0..NUM_CLASSES {
                            num[k] += wc * probs[cell * NUM_CLASSES + k];
                        }
                    }
                }
                let cell = world.idx(ix, iy);
                if den > DENOMINATOR_FLOOR {
                    for k in 0..NUM_CLASSES {
                        let got = fused.values[cell * NUM_CLASSES + k];
                        let want = num[k] / den;
                        assert!((got - want).abs() <= 1e-9, "cell ({ix},{iy}) class {k}");
                    }
                } else {
                    assert!(!fused.mask[cell]);
                }
            }
        }
    }

    #[test]
    fn equal_confidences_equal_average_fusion() {
        let world = GridSpec2::new([-4.0, -4.0], 0.5, [16, 16]);
        let local = GridSpec2::new([-3.0, -3.0], 0.5, [12, 12]);
        let frames = random_frames(local, 7);
        let mut acc = GlobalMapAccumulator::new(world);
        for (pose, sem, _) in &frames {
            let ones = unit_confidence(sem);
            acc.accumulate_frame(sem, &ones, pose).unwrap();
        }
        let weighted = acc.finalize();
        let avg = average_fusion(
            world,
            &frames.iter().map(|(p, s, _)| (*p, s.clone())).collect::<Vec<_>>(),
        )
        .unwrap();
        for (a, b) in weighted.values.iter().zip(&avg.values) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert_eq!(weighted.mask, avg.mask);
    }

    #[test]
    fn confidence_rescaling_leaves_finalize_unchanged() {
        let world = GridSpec2::new([-4.0, -4.0], 0.5, [12, 12]);
        let local = GridSpec2::new([-3.0, -3.0], 0.5, [12, 12]);
        let frames = random_frames(local, 6);
        let fuse_with = |k: f64| {
            let mut acc = GlobalMapAccumulator::new(world);
            for (pose, sem, conf) in &frames {
                let scaled = ConfidenceMap {
                    grid: conf.grid,
                    weights: conf.weights.iter().map(|w| w * k).collect(),
                    mask: conf.mask.clone(),
                };
                acc.accumulate_frame(sem, &scaled, pose).unwrap();
            }
            acc.finalize()
        };
        let base = fuse_with(1.0);
        for &k in &[0.25, 3.0, 17.5] {
            let scaled = fuse_with(k);
            assert_eq!(base.mask, scaled.mask);
            for (cell, (a, b)) in base.values.iter().zip(&scaled.values).enumerate() {
                assert!((a - b).abs() <= 1e-9, "cell {cell}: {a} vs {b} at scale {k}");
            }
            for cell in 0..world.n_cells() {
                if base.mask[cell] {
                    assert_eq!(base.argmax(cell), scaled.argmax(cell));
                }
            }
        }
    }

    #[test]
    fn accumulation_is_order_independent() {
        let world = GridSpec2::new([-4.0, -4.0], 0.5, [12, 12]);
        let local = GridSpec2::new([-3.0, -3.0], 0.5, [12, 12]);
        let frames = random_frames(local, 9);
        let fuse_order = |idx: &[usize]| {
            let mut acc = GlobalMapAccumulator::new(world);
            for &i in idx {
                let (pose, sem, conf) = &frames[i];
                acc.accumulate_frame(sem, conf, pose).unwrap();
            }
            acc.finalize()
        };
        let fwd = fuse_order(&[0, 1, 2, 3, 4, 5, 6, 7, 8]);
        let rev = fuse_order(&[8, 7, 6, 5, 4, 3, 2, 1, 0]);
        for (a, b) in fwd.values.iter().zip(&rev.values) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn fused_probabilities_stay_in_convex_hull() {
        let world = GridSpec2::new([-2.0, -2.0], 0.5, [8, 8]);
        let local = GridSpec2::new([-2.0, -2.0], 0.5, [8, 8]);
        let frames = random_frames(local, 5);
        let mut acc = GlobalMapAccumulator::new(world);
        for (pose, sem, conf) in &frames {
            acc.accumulate_frame(sem, conf, pose).unwrap();
        }
        let fused = acc.finalize();
        // Hull bound per class: fused value between the min and max of all
        // contributing per-frame probabilities (0/1 bounds suffice here
        // since every sample is a distribution).
        for cell in 0..world.n_cells() {
            let row = &fused.values[cell * NUM_CLASSES..(cell + 1) * NUM_CLASSES];
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| (-1e-12..=1.0 + 1e-12).contains(&p)));
        }
    }

    #[test]
    fn numerator_rows_sum_to_denominator() {
        let world = GridSpec2::new([-3.0, -3.0], 0.5, [10, 10]);
        let local = GridSpec2::new([-3.0, -3.0], 0.5, [12, 12]);
        let frames = random_frames(local, 8);
        let mut acc = GlobalMapAccumulator::new(world);
        for (pose, sem, conf) in &frames {
            acc.accumulate_frame(sem, conf, pose).unwrap();
        }
        for cell in 0..world.n_cells() {
            let row_sum: f64 = acc.numerator[cell * NUM_CLASSES..(cell + 1) * NUM_CLASSES]
                .iter()
                .sum();
            assert!((row_sum - acc.denominator[cell]).abs() < 1e-9);
            assert!(acc.denominator[cell] >= 0.0);
            assert_eq!(acc.denominator[cell] == 0.0, acc.frames_seen[cell] == 0);
        }
    }

    #[test]
    fn streaming_fusion_consumes_frames_one_at_a_time() {
        // The iterator (and a live-buffer counter) proves constant frame
        // residency: each contribution is dropped before the next one is
        // produced.
        use core::cell::Cell;
        let world = GridSpec2::new([-3.0, -3.0], 0.5, [10, 10]);
        let local = GridSpec2::new([-3.0, -3.0], 0.5, [10, 10]);
        let frames = random_frames(local, 40);
        let live = alloc::rc::Rc::new(Cell::new(0usize));
        let peak = alloc::rc::Rc::new(Cell::new(0usize));

        struct Tracked {
            inner: FrameContribution,
            live: alloc::rc::Rc<Cell<usize>>,
        }
        impl Drop for Tracked {
            fn drop(&mut self) {
                self.live.set(self.live.get() - 1);
            }
        }

        let live2 = live.clone();
        let peak2 = peak.clone();
        let iter = frames.into_iter().map(move |(pose, sem, conf)| {
            live2.set(live2.get() + 1);
            peak2.set(peak2.get().max(live2.get()));
            Tracked {
                inner: FrameContribution { pose, semantics: sem, confidence: Some(conf) },
                live: live2.clone(),
            }
        });
        let mut acc = GlobalMapAccumulator::new(world);
        for tracked in iter {
            let conf = tracked.inner.confidence.as_ref().unwrap();
            acc.accumulate_frame(&tracked.inner.semantics, conf, &tracked.inner.pose).unwrap();
        }
        acc.finalize();
        assert_eq!(live.get(), 0);
        assert!(peak.get() <= 2, "at most two frames resident, saw {}", peak.get());
    }

    #[test]
    fn single_frame_fuse_sequence_is_resampled_frame() {
        let world = GridSpec2::new([-3.0, -3.0], 0.5, [12, 12]);
        let local = GridSpec2::new([-3.0, -3.0], 0.5, [12, 12]);
        let frames = random_frames(local, 1);
        let (pose, sem, conf) = &frames[0];
        let one = fuse_sequence(
            world,
            [FrameContribution {
                pose: *pose,
                semantics: sem.clone(),
                confidence: Some(conf.clone()),
            }],
            FusionMode::MvMap,
        )
        .unwrap();
        // Degenerate weights (single frame) reproduce the frame's own
        // resampled distributions wherever it is covered.
        let probs = sem.probabilities();
        let mut footprint = [(0usize, 0.0f64); 4];
        for iy in 0..world.dims[1] {
            for ix in 0..world.dims[0] {
                let [wx, wy] = world.cell_center(ix, iy);
                let n = covered_footprint(&local, &sem.mask, pose, wx, wy, &mut footprint);
                let cell = world.idx(ix, iy);
                if n == 0 {
                    assert!(!one.mask[cell]);
                    continue;
                }
                let mut num = [0.0; NUM_CLASSES];
                let mut den = 0.0;
                for &(local_cell, w) in &footprint[..n] {
                    let wc = w * conf.weights[local_cell];
                    den += wc;
                    for k in 0..NUM_CLASSES {
                        num[k] += wc * probs[local_cell * NUM_CLASSES + k];
                    }
                }
                for k in 0..NUM_CLASSES {
                    assert!((one.values[cell * NUM_CLASSES + k] - num[k] / den).abs() < 1e-12);
                }
            }
        }

        // Missing confidence under weighted mode is an error.
        let err = fuse_sequence(
            world,
            [FrameContribution { pose: *pose, semantics: sem.clone(), confidence: None }],
            FusionMode::MvMap,
        );
        assert_eq!(err.unwrap_err(), FusionError::MissingConfidence);
    }

    #[test]
    fn streaming_fusion_matches_differentiable_clip_fusion() {
        // The tape's region-fuse op and the streaming accumulator implement
        // the same math; on identical inputs they must agree.
        let world = GridSpec2::new([-2.0, -2.0], 0.5, [6, 6]);
        let local = GridSpec2::new([-2.0, -2.0], 0.5, [8, 8]);
        let frames = random_frames(local, 3);
        let mut acc = GlobalMapAccumulator::new(world);
        for (pose, sem, conf) in &frames {
            acc.accumulate_frame(sem, conf, pose).unwrap();
        }
        let fused = acc.finalize();

        // Build the equivalent plan with packed confidence vectors.
        let mut plan = RegionFusePlan { entries: vec![], offsets: vec![0] };
        let mut cells_of_plan = Vec::new();
        let mut footprint = [(0usize, 0.0f64); 4];
        for iy in 0..world.dims[1] {
            for ix in 0..world.dims[0] {
                let [wx, wy] = world.cell_center(ix, iy);
                let before = plan.entries.len();
                for (fi, (pose, sem, _)) in frames.iter().enumerate() {
                    let probs = sem.probabilities();
                    let n = covered_footprint(&local, &sem.mask, pose, wx, wy, &mut footprint);
                    for &(cell, w) in &footprint[..n] {
                        let mut p = [0.0; NUM_CLASSES];
                        p.copy_from_slice(&probs[cell * NUM_CLASSES..(cell + 1) * NUM_CLASSES]);
                        plan.entries.push(FuseEntry { frame: fi, cell, weight: w, probs: p });
                    }
                }
                if plan.entries.len() > before {
                    plan.offsets.push(plan.entries.len());
                    cells_of_plan.push(world.idx(ix, iy));
                }
            }
        }
        let mut tape = Tape::new();
        let conf_ids: Vec<_> = frames
            .iter()
            .map(|(_, _, c)| {
                tape.leaf(Tensor::from_vec(&[c.weights.len()], c.weights.clone()))
            })
            .collect();
        let out = tape.region_fuse(&conf_ids, plan);
        for (row, &cell) in cells_of_plan.iter().enumerate() {
            for k in 0..NUM_CLASSES {
                let a = tape.data(out).data[row * NUM_CLASSES + k];
                let b = fused.values[cell * NUM_CLASSES + k];
                assert!((a - b).abs() < 1e-12, "cell {cell} class {k}: {a} vs {b}");
            }
        }
    }
}
