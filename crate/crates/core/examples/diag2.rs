//! Scratch timing split (not part of the deliverable).
use offmap_core::geometry::{GridSpec2, Vec3};
use offmap_core::learn::{AdamConfig, AdamState};
use offmap_core::nerf::{self, fit_scene, FitConfig, RadianceGrid};
use std::time::Instant;

fn main() {
    // Adam cost alone on a full-scale grid (160x160x12).
    let world = GridSpec2::new([-40.0, -40.0], 0.5, [160, 160]);
    let spec = nerf::scene_grid_spec(&world);
    let grid = RadianceGrid::new(spec);
    let (nd, nc) = (grid.density.len(), grid.color.len());
    let mut density = grid.density.clone();
    let mut color = grid.color.clone();
    let gd = vec![1e-6; nd];
    let gc = vec![1e-6; nc];
    let mut adam = AdamState::new(&[nd, nc], AdamConfig::with_lr(1e-2));
    let t0 = Instant::now();
    for _ in 0..200 {
        adam.step(&mut [density.as_mut_slice(), color.as_mut_slice()], &[&gd, &gc]).unwrap();
    }
    println!("adam: {:.1} ms/iter over {} params", t0.elapsed().as_secs_f64() * 1000.0 / 200.0, nd + nc);

    // TV cost alone.
    let grid2 = RadianceGrid::new(spec);
    let mut gg = nerf::GridGrad::zeros(&grid2);
    let t0 = Instant::now();
    for _ in 0..50 {
        gg.clear();
        let _ = nerf::tv_loss(&grid2, Some(&mut gg));
    }
    println!("tv: {:.1} ms/iter", t0.elapsed().as_secs_f64() * 1000.0 / 50.0);

    // grad clear cost
    let t0 = Instant::now();
    for _ in 0..200 { gg.clear(); }
    println!("clear: {:.2} ms/iter", t0.elapsed().as_secs_f64() * 1000.0 / 200.0);
    let _ = fit_scene;
    let _ = FitConfig::default();
    let _ = Vec3::ZERO;
}
