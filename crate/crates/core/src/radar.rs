//! Radar input image: a short history of sweeps moved into the target frame and
//! rasterized, together with each radar pixel's scene flow.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{compensate_radar, Vec3};
use crate::image::{DepthImage, FlowField};
use crate::sim::{sample_radar, Scene, Surface};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarConfig {
    /// History length in seconds; sweeps with `0 <= t_target - t <= window` are used.
    pub window: f64,
}

impl Default for RadarConfig {
    fn default() -> Self {
        Self { window: 0.3 }
    }
}

/// Slack on the window comparison so frame clocks with rounding error still
/// include the sweep exactly one window back.
const WINDOW_SLACK: f64 = 1e-9;

/// A radar return after compensation and projection into the target camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadarPixel {
    pub col: usize,
    pub row: usize,
    pub depth: f64,
    /// Compensated point in world coordinates.
    pub world: Vec3,
    /// Unit ray direction of the return in world coordinates, for radial motion.
    pub ray: Vec3,
    pub radial_velocity: f64,
    pub source_frame: usize,
    /// Simulator truth: reflecting surface.
    pub surface: Surface,
}

/// Radar depth image of a target frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarImage {
    pub frame: usize,
    /// Nearest projected depth per pixel.
    pub depth: DepthImage,
    /// Projected returns that won their pixel, in raster order.
    pub pixels: Vec<RadarPixel>,
    /// Projected returns before the per-pixel z-buffer.
    pub projected: usize,
}

/// Frames whose sweeps fall inside the history window of `target`.
pub fn window_frames(scene: &Scene, target: usize, cfg: &RadarConfig) -> Result<Vec<usize>> {
    if !(cfg.window >= 0.0 && cfg.window.is_finite()) {
        return Err(Error::InvalidConfig(format!("radar window must be >= 0, got {}", cfg.window)));
    }
    let t = scene.frame_time(target)?;
    Ok((0..=target)
        .filter(|&f| t - scene.frame_times()[f] <= cfg.window + WINDOW_SLACK)
        .collect())
}

/// Accumulates radar sweeps into the target camera.
///
/// Each return is advanced along its ray by its radial velocity, mapped to the
/// target ego frame with the exact ego motion and projected; the nearest depth
/// wins each pixel.
pub fn accumulate_radar(scene: &Scene, target: usize, cfg: &RadarConfig) -> Result<RadarImage> {
    let frames = window_frames(scene, target, cfg)?;
    let t_dst = scene.frame_time(target)?;
    let cam = scene.posed_camera(target)?;
    let world_from_dst = scene.ego_pose(t_dst);
    let dst_from_world = world_from_dst.inverse();
    let extrinsic = scene.calibration().radar.extrinsic;
    let (w, h) = (cam.model.width, cam.model.height);
    let mut depth = DepthImage::new_invalid(w, h);
    let mut best: Vec<Option<RadarPixel>> = vec![None; w * h];
    let mut projected = 0;
    for &f in &frames {
        let sweep = sample_radar(scene, f)?;
        let world_from_src = scene.ego_pose(scene.frame_time(f)?);
        let dst_from_src = dst_from_world.compose(&world_from_src);
        let world_from_radar = world_from_src.compose(&extrinsic);
        for sim in &sweep.returns {
            let in_dst = compensate_radar(&sim.ret, t_dst, &extrinsic, &dst_from_src, cfg.window + WINDOW_SLACK)?;
            let world = world_from_dst.apply(&in_dst);
            let Some(p) = cam.project_world(&world) else { continue };
            projected += 1;
            let candidate = RadarPixel {
                col: p.col,
                row: p.row,
                depth: p.depth,
                world,
                ray: world_from_radar.apply_vector(&sim.ret.position.normalize()),
                radial_velocity: sim.ret.radial_velocity,
                source_frame: f,
                surface: sim.surface,
            };
            let slot = &mut best[p.row * w + p.col];
            // Ties on depth keep the earlier candidate, making the result independent of hash or thread order.
            if slot.is_none_or(|b| p.depth < b.depth) {
                *slot = Some(candidate);
                depth.set(p.col, p.row, p.depth);
            }
        }
    }
    Ok(RadarImage {
        frame: target,
        depth,
        pixels: best.into_iter().flatten().collect(),
        projected,
    })
}

/// Image-space flow of each radar pixel from the target frame to `other`.
///
/// The point is moved along its ray by its radial velocity (tangential motion
/// is unknown to the radar) and projected into the other camera. The flow may
/// point outside the image; pixels whose point ends up behind the camera have no flow.
pub fn radar_flow(scene: &Scene, image: &RadarImage, other: usize) -> Result<FlowField> {
    let t0 = scene.frame_time(image.frame)?;
    let t1 = scene.frame_time(other)?;
    let cam0 = scene.posed_camera(image.frame)?;
    let cam1 = scene.posed_camera(other)?;
    let (w, h) = image.depth.dims();
    let mut flow = FlowField::new_invalid(w, h);
    for px in &image.pixels {
        let moved = px.world + px.ray * (px.radial_velocity * (t1 - t0));
        let a = cam0.camera_from_world().apply(&px.world);
        let b = cam1.camera_from_world().apply(&moved);
        if a.z <= 0.0 || b.z <= 0.0 {
            continue;
        }
        let (u0, v0) = cam0.model.pixel_coords(&a);
        let (u1, v1) = cam1.model.pixel_coords(&b);
        flow.set(px.col, px.row, [u1 - u0, v1 - v0]);
    }
    Ok(flow)
}
