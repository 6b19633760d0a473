//! LiDAR and radar sweep simulation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::geometry::{LidarPoint, RadarReturn, Vec3};
use crate::image::DepthImage;
use crate::sim::raycast::{Snapshot, Surface};
use crate::sim::scene::{HeightSampler, OcclusionMode, Scene};

/// RNG stream reserved for radar beam heights (frame index is added).
pub const STREAM_RADAR_HEIGHT: u64 = 1 << 32;

/// Distance below which an obstruction on a visibility segment is ignored.
const VISIBILITY_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LidarSweep {
    pub frame: usize,
    pub points: Vec<LidarPoint>,
    /// Simulator ground truth: surface hit by each point.
    pub surfaces: Vec<Surface>,
}

/// A radar return together with simulator-private ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulatedReturn {
    pub ret: RadarReturn,
    /// Actual reflecting point in the radar frame.
    pub true_hit: Vec3,
    pub surface: Surface,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadarSweep {
    pub frame: usize,
    pub returns: Vec<SimulatedReturn>,
}

fn sector(fov_deg: f64, step_deg: f64) -> Vec<f64> {
    let half = fov_deg / 2.0;
    let n = (fov_deg / step_deg).floor() as i64;
    (0..=n).map(|i| (half - i as f64 * step_deg).to_radians()).collect()
}

/// Exact ray-cast LiDAR sweep at a frame, points in the LiDAR frame.
pub fn sample_lidar(scene: &Scene, frame: usize) -> Result<LidarSweep> {
    let t = scene.frame_time(frame)?;
    let snapshot = Snapshot::new(scene, t)?;
    let rig = &scene.calibration().lidar;
    let world_from_lidar = scene.ego_pose(t).compose(&rig.extrinsic);
    let lidar_from_world = world_from_lidar.inverse();
    let origin = world_from_lidar.apply(&Vec3::zeros());
    let azimuths = sector(rig.azimuth_fov_deg, rig.azimuth_step_deg);
    let elevations: Vec<f64> = rig.elevations_deg.iter().map(|e| e.to_radians()).collect();

    let hits: Vec<(LidarPoint, Surface)> = azimuths
        .par_iter()
        .flat_map_iter(|&az| {
            let snapshot = &snapshot;
            let elevations = &elevations;
            elevations.iter().filter_map(move |&el| {
                let local = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
                let dir = world_from_lidar.apply_vector(&local);
                snapshot.cast(&origin, &dir, rig.max_range, true).map(|hit| {
                    (
                        LidarPoint {
                            position: lidar_from_world.apply(&hit.point),
                            timestamp: t,
                            instance_id: hit.surface.instance_id(),
                        },
                        hit.surface,
                    )
                })
            })
        })
        .collect();
    let (points, surfaces) = hits.into_iter().unzip();
    Ok(LidarSweep {
        frame,
        points,
        surfaces,
    })
}

/// Single-row radar sweep at a frame.
///
/// Each beam reflects at a height drawn from the rig's sampler: a horizontal
/// ray at that height, along the beam azimuth and starting below/above the
/// radar mount, finds the reflector. The measured range is the distance from
/// the mount to the reflector, and the reported point sits at that range in
/// the radar's horizontal plane, discarding the true height.
pub fn sample_radar(scene: &Scene, frame: usize) -> Result<RadarSweep> {
    let t = scene.frame_time(frame)?;
    let snapshot = Snapshot::new(scene, t)?;
    let rig = &scene.calibration().radar;
    let world_from_radar = scene.ego_pose(t).compose(&rig.extrinsic);
    let radar_from_world = world_from_radar.inverse();
    let mount = world_from_radar.apply(&Vec3::zeros());
    let camera_center = scene.posed_camera(frame)?.center();

    let mut rng = ChaCha8Rng::seed_from_u64(scene.rng_seed());
    rng.set_stream(STREAM_RADAR_HEIGHT + frame as u64);

    let mut returns = Vec::new();
    for az in sector(rig.azimuth_fov_deg, rig.azimuth_step_deg) {
        let height = match rig.height_noise {
            HeightSampler::Uniform { min, max } => {
                if max > min {
                    rng.random_range(min..=max)
                } else {
                    min
                }
            }
            HeightSampler::Fixed { height } => height,
        };
        let beam = Vec3::new(az.cos(), az.sin(), 0.0);
        let mut dir = world_from_radar.apply_vector(&beam);
        dir.z = 0.0;
        let dir = dir.normalize();
        let origin = Vec3::new(mount.x, mount.y, height);
        let Some(hit) = snapshot.cast(&origin, &dir, rig.max_range, false) else {
            continue;
        };
        let range = (hit.point - mount).norm();
        if range > rig.max_range {
            continue;
        }
        if rig.occlusion_mode == OcclusionMode::CameraView
            && snapshot.is_occluded(&camera_center, &hit.point, VISIBILITY_MARGIN)
        {
            continue;
        }
        let velocity = match hit.surface {
            Surface::Actor(id) => scene.actor_point_velocity(id, &hit.point, t)?,
            Surface::Static(_) => Vec3::zeros(),
        };
        returns.push(SimulatedReturn {
            ret: RadarReturn {
                position: beam * range,
                radial_velocity: velocity.dot(&dir),
                timestamp: t,
            },
            true_hit: radar_from_world.apply(&hit.point),
            surface: hit.surface,
        });
    }
    Ok(RadarSweep { frame, returns })
}

/// Indices of returns that land behind the camera-visible surface.
///
/// A return counts as camera-occluded when its reported position, projected
/// into the camera of the same frame, is farther than the rendered depth at
/// that pixel by more than `max(t_a, t_r * d)`.
pub fn camera_occluded_returns(scene: &Scene, sweep: &RadarSweep, depth: &DepthImage, t_a: f64, t_r: f64) -> Result<Vec<usize>> {
    let cam = scene.posed_camera(sweep.frame)?;
    let world_from_radar = scene
        .ego_pose(scene.frame_time(sweep.frame)?)
        .compose(&scene.calibration().radar.extrinsic);
    Ok(sweep
        .returns
        .iter()
        .enumerate()
        .filter(|(_, r)| {
            cam.project_world(&world_from_radar.apply(&r.ret.position))
                .is_some_and(|p| depth.get(p.col, p.row).is_some_and(|d| p.depth - d > t_a.max(t_r * d)))
        })
        .map(|(i, _)| i)
        .collect())
}
