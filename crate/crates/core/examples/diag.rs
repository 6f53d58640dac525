//! Scratch diagnostics (not part of the deliverable).
use offmap_core::geometry::{GridSpec2, Vec3};
use offmap_core::nerf::{self, export_pointcloud, fit_scene, frame_rays, FitConfig, RayTarget};
use offmap_core::scene::{self, render_frame, Occluder, PaintedPolyline, SceneSpec};
use std::time::Instant;

fn main() {
    let world = GridSpec2::new([-20.0, -20.0], 0.5, [80, 80]);
    let scene = SceneSpec {
        world,
        dividers: vec![PaintedPolyline { points: vec![[-18.0, 0.0], [18.0, 0.0]], width: 0.3 }],
        boundaries: vec![
            PaintedPolyline { points: vec![[-18.0, -6.0], [18.0, -6.0]], width: 0.5 },
            PaintedPolyline { points: vec![[-18.0, 6.0], [18.0, 6.0]], width: 0.5 },
        ],
        crossings: vec![scene::Crossing { center: [2.0, 0.0], size: [4.8, 10.0], stripe_period: 1.2, stripe_axis: 0 }],
        occluders: vec![
            Occluder { center: [6.5, -4.0], size: Vec3::new(2.2, 2.2, 1.8), color: [0.88, 0.88, 0.9] },
            Occluder { center: [-3.0, 4.0], size: Vec3::new(2.2, 2.2, 1.8), color: [0.9, 0.78, 0.2] },
        ],
        texture_seed: 51,
    };
    let mut traj = scene::make_trajectory(&scene, scene::TrajectoryStyle::Straight, 8, 5);
    for (i, pose) in traj.frame_poses.iter_mut().enumerate() {
        let f = i as f64 / 7.0;
        pose.translation = Vec3::new(-14.0 + 28.0 * f, -2.0, scene::EGO_HEIGHT);
    }
    let mut rays: Vec<RayTarget> = Vec::new();
    for pose in &traj.frame_poses {
        for cam in &traj.cameras {
            let (rgb, depth) = render_frame(&scene, pose, cam);
            rays.extend(frame_rays(pose, cam, &rgb, &depth, nerf::DEFAULT_T_NEAR, nerf::DEFAULT_T_FAR));
        }
    }
    let spec = nerf::scene_grid_spec(&scene.world);
    for iters in [900usize, 2000] {
        let cfg = FitConfig { iterations: iters, batch_rays: 192, seed: 17, ..FitConfig::default() };
        let t0 = Instant::now();
        let (grid, stats) = fit_scene(spec, &rays, &cfg).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        let cloud = export_pointcloud(&grid, 0.3);
        // z histogram of exported points and near-surface fraction
        let mut z_hist = std::collections::BTreeMap::new();
        let mut near = 0usize;
        for p in &cloud {
            *z_hist.entry((p.position.z * 2.0).round() as i64).or_insert(0usize) += 1;
            let ground = p.position.z.abs();
            let boxes = scene.occluders.iter().map(|b| {
                let lo = b.min_corner(); let hi = b.max_corner();
                let dx = (lo.x - p.position.x).max(0.0).max(p.position.x - hi.x);
                let dy = (lo.y - p.position.y).max(0.0).max(p.position.y - hi.y);
                let dz = (lo.z - p.position.z).max(0.0).max(p.position.z - hi.z);
                if dx > 0.0 || dy > 0.0 || dz > 0.0 { (dx*dx+dy*dy+dz*dz).sqrt() }
                else {
                    let fx = (p.position.x - lo.x).min(hi.x - p.position.x);
                    let fy = (p.position.y - lo.y).min(hi.y - p.position.y);
                    let fz = (p.position.z - lo.z).min(hi.z - p.position.z);
                    fx.min(fy).min(fz)
                }
            }).fold(f64::INFINITY, f64::min);
            if ground.min(boxes) <= 0.5 { near += 1; }
        }
        println!("iters={iters} fit time {dt:.1}s, losses c={:.5} d={:.5} tv={:.6}", stats.final_color_loss, stats.final_depth_loss, stats.final_tv_loss);
        println!("  cloud {} pts, near-surface {:.3}", cloud.len(), near as f64 / cloud.len() as f64);
        println!("  z-histogram (z*2 rounded): {:?}", z_hist);
    }
}
