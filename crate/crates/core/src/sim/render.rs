//! Per-frame ground truth: dense depth, analytic optical flow, instance and
//! vehicle masks, surface ids and heights above ground.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{relocate_rigidly, PosedCamera, Vec3};
use crate::image::{DepthImage, FlowField, Grid, Mask};
use crate::sim::raycast::{Snapshot, Surface};
use crate::sim::scene::{ActorClass, Scene};

/// RNG stream reserved for optical-flow noise (frame index is added).
pub const STREAM_FLOW_NOISE: u64 = 2 << 32;

#[derive(Debug, Clone)]
pub struct FrameTruth {
    pub frame: usize,
    pub camera: PosedCamera,
    /// Camera-frame depth of the visible surface, invalid beyond the depth range.
    pub depth: DepthImage,
    /// Actor instance id per pixel, 0 for static surfaces or sky.
    pub instance_mask: Grid<u32>,
    /// Flow from this frame to the next one; invalid on the last frame.
    pub optical_flow: FlowField,
    pub vehicle_mask: Mask,
    /// Visible surface per pixel.
    pub surface: Grid<Option<Surface>>,
    /// World `z` of the visible point (height above ground), NaN for sky.
    pub height: Grid<f64>,
    /// World position of the visible point, for pixels with a hit.
    pub points: Grid<Option<Vec3>>,
}

struct PixelHit {
    point: Vec3,
    depth: f64,
    surface: Surface,
}

fn cast_pixels(snapshot: &Snapshot<'_>, cam: &PosedCamera) -> Vec<Option<PixelHit>> {
    let (w, h) = (cam.model.width, cam.model.height);
    let cfw = *cam.camera_from_world();
    (0..h)
        .into_par_iter()
        .flat_map_iter(|row| {
            (0..w).map(move |col| {
                let (origin, dir) = cam.pixel_ray_world(col, row);
                snapshot.cast(&origin, &dir, f64::INFINITY, true).map(|hit| PixelHit {
                    depth: cfw.apply(&hit.point).z,
                    point: hit.point,
                    surface: hit.surface,
                })
            })
        })
        .collect()
}

/// Moves a world point on `surface` from time `t0` to time `t1`.
pub fn carry_point(scene: &Scene, surface: Surface, p: &Vec3, t0: f64, t1: f64) -> Result<Vec3> {
    match surface {
        Surface::Static(_) => Ok(*p),
        Surface::Actor(id) => {
            let a = scene.actor_box(id, t0)?;
            let b = scene.actor_box(id, t1)?;
            Ok(relocate_rigidly(p, &a, &b))
        }
    }
}

/// Renders ground truth for `frame`.
pub fn render_truth(scene: &Scene, frame: usize) -> Result<FrameTruth> {
    let t = scene.frame_time(frame)?;
    let cam = scene.posed_camera(frame)?;
    let snapshot = Snapshot::new(scene, t)?;
    let hits = cast_pixels(&snapshot, &cam);
    let (w, h) = (cam.model.width, cam.model.height);
    let max_depth = scene.calibration().max_depth;

    let mut depth = DepthImage::new_invalid(w, h);
    let mut instance_mask = Grid::filled(w, h, 0u32);
    let mut vehicle_mask = Mask::new(w, h, false);
    let mut surface = Grid::filled(w, h, None);
    let mut height = Grid::filled(w, h, f64::NAN);
    let mut points = Grid::filled(w, h, None);
    for (i, hit) in hits.iter().enumerate() {
        let (col, row) = (i % w, i / w);
        let Some(hit) = hit else { continue };
        if hit.depth <= max_depth {
            depth.set(col, row, hit.depth);
        }
        surface.set(col, row, Some(hit.surface));
        height.set(col, row, hit.point.z);
        points.set(col, row, Some(hit.point));
        if let Surface::Actor(id) = hit.surface {
            instance_mask.set(col, row, id);
            if scene.actor_class(id) == Some(ActorClass::Vehicle) {
                vehicle_mask.set(col, row, true);
            }
        }
    }
    let optical_flow = if frame + 1 < scene.frame_count() {
        flow_from_points(scene, &surface, &points, frame, frame + 1)?
    } else {
        FlowField::new_invalid(w, h)
    };
    Ok(FrameTruth {
        frame,
        camera: cam,
        depth,
        instance_mask,
        optical_flow,
        vehicle_mask,
        surface,
        height,
        points,
    })
}

/// Analytic flow of every visible pixel of `frame` into `other` (any frame).
pub fn render_flow(scene: &Scene, truth: &FrameTruth, other: usize) -> Result<FlowField> {
    flow_from_points(scene, &truth.surface, &truth.points, truth.frame, other)
}

fn flow_from_points(
    scene: &Scene,
    surface: &Grid<Option<Surface>>,
    points: &Grid<Option<Vec3>>,
    frame: usize,
    other: usize,
) -> Result<FlowField> {
    let t0 = scene.frame_time(frame)?;
    let t1 = scene.frame_time(other)?;
    let cam1 = scene.posed_camera(other)?;
    let cfw1 = *cam1.camera_from_world();
    let (w, h) = surface.dims();
    let mut flow = FlowField::new_invalid(w, h);
    for row in 0..h {
        for col in 0..w {
            let (Some(s), Some(p)) = (surface.get(col, row), points.get(col, row)) else {
                continue;
            };
            let moved = carry_point(scene, *s, p, t0, t1)?;
            let pc = cfw1.apply(&moved);
            if pc.z > 0.0 {
                let (u, v) = cam1.model.pixel_coords(&pc);
                flow.set(col, row, [u - col as f64, v - row as f64]);
            }
        }
    }
    Ok(flow)
}

/// Adds i.i.d. Gaussian noise with standard deviation `sigma` pixels to each
/// component of every valid flow vector, using a reproducible stream.
pub fn noisy_flow(flow: &FlowField, sigma: f64, seed: u64, stream: u64) -> Result<FlowField> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidConfig(format!("flow noise sigma must be >= 0, got {sigma}")));
    }
    let mut out = flow.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let normal = Normal::new(0.0, sigma).expect("sigma validated above");
    for row in 0..flow.height() {
        for col in 0..flow.width() {
            if let Some([fu, fv]) = flow.get(col, row) {
                let du = normal.sample(&mut rng);
                let dv = normal.sample(&mut rng);
                out.set(col, row, [fu + du, fv + dv]);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::library::{self, SceneBuilder};

    fn wall_scene(ego_speed: f64) -> Scene {
        let mut b = SceneBuilder::new("wall", 3);
        // Fronto-parallel wall 10 m in front of the camera (camera sits 1.5 m ahead of ego origin).
        b.plane_x(11.5, None);
        b.ego_straight(ego_speed);
        b.build().unwrap()
    }

    #[test]
    fn fronto_parallel_plane_static_ego() {
        let scene = wall_scene(0.0);
        let truth = render_truth(&scene, 0).unwrap();
        let (w, h) = truth.depth.dims();
        assert_eq!(truth.depth.valid_count(), w * h);
        for (_, _, d) in truth.depth.iter_valid() {
            assert!((d - 10.0).abs() < 1e-9);
        }
        for row in 0..h {
            for col in 0..w {
                let f = truth.optical_flow.get(col, row).unwrap();
                assert!(f[0].abs() < 1e-9 && f[1].abs() < 1e-9);
            }
        }
    }

    #[test]
    fn forward_motion_diverges_from_principal_point() {
        // 1 m per frame at dt = 0.1 s.
        let scene = wall_scene(10.0);
        let t0 = render_truth(&scene, 0).unwrap();
        let t1 = render_truth(&scene, 1).unwrap();
        for (_, _, d) in t1.depth.iter_valid() {
            assert!((d - 9.0).abs() < 1e-9);
        }
        let cam = scene.camera();
        for &(col, row) in &[(10usize, 10usize), (390, 20), (50, 180), (300, 150), (200, 96)] {
            let f = t0.optical_flow.get(col, row).unwrap();
            let r = [col as f64 - cam.cx, row as f64 - cam.cy];
            // Expansion about the principal point: flow = r * (10/9 - 1).
            assert!((f[0] - r[0] / 9.0).abs() < 1e-9 && (f[1] - r[1] / 9.0).abs() < 1e-9);
        }
    }

    #[test]
    fn nearest_surface_wins() {
        let mut b = SceneBuilder::new("box", 2);
        b.plane_x(11.5, None);
        b.static_box([6.5, -1.0, 0.0], [7.5, 1.0, 3.0]);
        b.ego_straight(0.0);
        let scene = b.build().unwrap();
        let truth = render_truth(&scene, 0).unwrap();
        // Principal point looks straight through the box front face 5 m ahead.
        let d = truth.depth.get(200, 96).unwrap();
        assert!((d - 5.0).abs() < 1e-9);
        assert_eq!(truth.surface.get(200, 96), &Some(Surface::Static(1)));
        let d = truth.depth.get(5, 5).unwrap();
        assert!((d - 10.0).abs() < 1e-9);
    }

    #[test]
    fn flow_reprojection_bound() {
        for name in ["crossing-mover", "parked-row"] {
            let scene = library::build(name).unwrap();
            let frame = 8;
            let truth = render_truth(&scene, frame).unwrap();
            let cam1 = scene.posed_camera(frame + 1).unwrap();
            let t0 = scene.frame_time(frame).unwrap();
            let t1 = scene.frame_time(frame + 1).unwrap();
            let mut checked = 0;
            for row in (0..truth.depth.height()).step_by(3) {
                for col in (0..truth.depth.width()).step_by(3) {
                    let (Some(f), Some(p), Some(s)) = (
                        truth.optical_flow.get(col, row),
                        truth.points.get(col, row),
                        truth.surface.get(col, row),
                    ) else {
                        continue;
                    };
                    let moved = carry_point(&scene, *s, p, t0, t1).unwrap();
                    let pc = cam1.camera_from_world().apply(&moved);
                    let (u, v) = cam1.model.pixel_coords(&pc);
                    let err = ((col as f64 + f[0] - u).powi(2) + (row as f64 + f[1] - v).powi(2)).sqrt();
                    assert!(err < 0.75);
                    checked += 1;
                }
            }
            assert!(checked > 1000);
        }
    }

    #[test]
    fn flow_noise_is_reproducible() {
        let scene = wall_scene(10.0);
        let truth = render_truth(&scene, 0).unwrap();
        let a = noisy_flow(&truth.optical_flow, 0.5, 7, STREAM_FLOW_NOISE).unwrap();
        let b = noisy_flow(&truth.optical_flow, 0.5, 7, STREAM_FLOW_NOISE).unwrap();
        let c = noisy_flow(&truth.optical_flow, 0.5, 8, STREAM_FLOW_NOISE).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(noisy_flow(&truth.optical_flow, -1.0, 7, 0).is_err());
    }
}
