//! Core algorithms for offboard HD-map construction.
//!
//! The pipeline implemented here turns a multi-camera drive through a road
//! scene into a single global bird's-eye-view (BEV) semantic map:
//!
//! 1. [`scene`] synthesizes ground-truth road scenes and renders exact
//!    RGB + depth frames along a trajectory.
//! 2. [`nerf`] fits a voxelized radiance field to the frames of a scene and
//!    exposes termination-depth ray casting over the fitted volume.
//! 3. [`onboard`] is the frozen single-frame model: it lifts image features
//!    onto a local BEV grid and decodes per-cell semantic logits.
//! 4. [`uncertainty`] scores the reliability of every BEV cell of every
//!    frame, optionally augmented with geometry probed from the radiance
//!    field, and predicts the divergence of a frame from ground truth.
//! 5. [`fusion`] aggregates an unbounded frame sequence region by region
//!    into one global map, weighting each observation by its confidence.
//! 6. [`eval`] measures IoU against ground truth and assembles the
//!    component-ablation and frame-scaling experiments.
//!
//! The crate is `no_std` + `alloc`: everything here is pure computation over
//! in-memory buffers. File formats, the CLI, and experiment orchestration on
//! disk live in the companion `offmap` crate.
//!
//! All training math runs in `f64` and is deterministic for a seed: one
//! thread, seeded ChaCha streams, no address- or hash-order dependence.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod img;
pub mod learn;
pub mod math;
pub mod nerf;
pub mod onboard;
pub mod scene;
pub mod uncertainty;

/// Semantic classes of the map, in the order used by every logits buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MapClass {
    Background = 0,
    Divider = 1,
    Crossing = 2,
    Boundary = 3,
}

/// Number of semantic classes (background + 3 foreground).
pub const NUM_CLASSES: usize = 4;

/// The three foreground classes scored by the IoU metrics.
pub const FOREGROUND_CLASSES: [MapClass; 3] =
    [MapClass::Divider, MapClass::Crossing, MapClass::Boundary];

impl MapClass {
    pub fn from_index(i: usize) -> MapClass {
        match i {
            0 => MapClass::Background,
            1 => MapClass::Divider,
            2 => MapClass::Crossing,
            3 => MapClass::Boundary,
            _ => panic!("class index {i} out of range"),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}
