//! Programmatic scene construction and the canned scene library.
//!
//! Every canned scene uses the default rig and a 51-frame clock at 10 Hz, long
//! enough to accumulate LiDAR around [`TARGET_FRAME`] with the default window.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, RigidTransform, Vec3};
use crate::sim::scene::{
    Aabb, Actor, ActorClass, ActorKeyframe, Calibration, EgoKeyframe, HeightSampler, LidarRig, OcclusionMode,
    Primitive, RadarRig, Scene, SceneFile,
};

/// Frame period of builder scenes, seconds.
pub const FRAME_DT: f64 = 0.1;
/// Number of frames in every canned scene.
pub const LIBRARY_FRAMES: usize = 51;
/// Frame evaluated by default: the first frame with the full backward window.
pub const TARGET_FRAME: usize = 8;

/// Tag carried by scenes that contain camera-occluded radar and LiDAR returns.
pub const OCCLUSION_TAG: &str = "occlusion";

/// Names of the canned scenes, in library order.
pub const NAMES: [&str; 6] = [
    "occluded-radar",
    "tall-pole",
    "crossing-mover",
    "approach-corridor",
    "parked-row",
    "empty-road",
];

pub fn names() -> &'static [&'static str] {
    &NAMES
}

/// Builds a canned scene by name.
pub fn build(name: &str) -> Result<Scene> {
    match name {
        "occluded-radar" => occluded_radar(),
        "tall-pole" => tall_pole(),
        "crossing-mover" => crossing_mover(),
        "approach-corridor" => approach_corridor(),
        "parked-row" => parked_row(),
        "empty-road" => empty_road(),
        other => Err(Error::InvalidConfig(format!(
            "unknown scene '{other}', expected one of {}",
            NAMES.join(", ")
        ))),
    }
}

/// All canned scenes in library order.
pub fn build_all() -> Result<Vec<Scene>> {
    NAMES.iter().map(|n| build(n)).collect()
}

/// Camera 1.5 m ahead of the ego origin on the roof, looking forward.
pub fn default_camera() -> CameraModel {
    let cam_to_ego = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    CameraModel {
        fx: 300.0,
        fy: 300.0,
        cx: 200.0,
        cy: 96.0,
        width: 400,
        height: 192,
        pose: RigidTransform::from_matrix(&cam_to_ego, Vec3::new(1.5, 0.0, 1.6)).expect("constant rotation is valid"),
    }
}

/// Grill-mounted radar: low and forward of the roof camera.
pub fn default_radar() -> RadarRig {
    RadarRig {
        extrinsic: RigidTransform::from_translation(Vec3::new(3.6, 0.0, 0.5)),
        azimuth_fov_deg: 100.0,
        azimuth_step_deg: 1.0,
        max_range: 80.0,
        height_noise: HeightSampler::Uniform { min: 0.0, max: 2.5 },
        occlusion_mode: OcclusionMode::SensorView,
    }
}

/// 32-beam LiDAR restricted to a forward sector.
pub fn default_lidar() -> LidarRig {
    LidarRig {
        extrinsic: RigidTransform::from_translation(Vec3::new(1.0, 0.0, 1.9)),
        elevations_deg: (0..32).map(|i| -30.67 + 1.333 * i as f64).collect(),
        azimuth_fov_deg: 120.0,
        azimuth_step_deg: 0.2,
        max_range: 70.0,
    }
}

pub fn default_calibration() -> Calibration {
    Calibration {
        camera: default_camera(),
        radar: default_radar(),
        lidar: default_lidar(),
        max_depth: 50.0,
    }
}

fn yaw_quat(yaw: f64) -> [f64; 4] {
    let q = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw);
    [q.w, q.i, q.j, q.k]
}

/// Incremental builder for [`SceneFile`]s with an evenly spaced frame clock.
#[derive(Debug, Clone)]
pub struct SceneBuilder {
    file: SceneFile,
}

impl SceneBuilder {
    pub fn new(name: &str, frames: usize) -> Self {
        Self {
            file: SceneFile {
                name: name.to_string(),
                tags: Vec::new(),
                calibration: default_calibration(),
                primitives: Vec::new(),
                actors: Vec::new(),
                trajectory: Vec::new(),
                frames: (0..frames).map(|i| i as f64 * FRAME_DT).collect(),
                rng_seed: 0,
            },
        }
    }

    fn span(&self) -> (f64, f64) {
        let f = &self.file.frames;
        (f.first().copied().unwrap_or(0.0), f.last().copied().unwrap_or(0.0))
    }

    /// Key-frame times covering the clock: both ends, or one if they coincide.
    fn key_times(&self) -> Vec<f64> {
        let (a, b) = self.span();
        if b > a {
            vec![a, b]
        } else {
            vec![a]
        }
    }

    pub fn tag(&mut self, tag: &str) -> &mut Self {
        self.file.tags.push(tag.to_string());
        self
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.file.rng_seed = seed;
        self
    }

    pub fn calibration_mut(&mut self) -> &mut Calibration {
        &mut self.file.calibration
    }

    pub fn radar_rig(&mut self, height_noise: HeightSampler, azimuth_step_deg: f64) -> &mut Self {
        self.file.calibration.radar.height_noise = height_noise;
        self.file.calibration.radar.azimuth_step_deg = azimuth_step_deg;
        self
    }

    pub fn occlusion_mode(&mut self, mode: OcclusionMode) -> &mut Self {
        self.file.calibration.radar.occlusion_mode = mode;
        self
    }

    pub fn lidar_rig(&mut self, elevations_deg: Vec<f64>, azimuth_fov_deg: f64, azimuth_step_deg: f64) -> &mut Self {
        let rig = &mut self.file.calibration.lidar;
        rig.elevations_deg = elevations_deg;
        rig.azimuth_fov_deg = azimuth_fov_deg;
        rig.azimuth_step_deg = azimuth_step_deg;
        self
    }

    /// Infinite ground plane `z = 0`.
    pub fn ground(&mut self) -> &mut Self {
        self.file.primitives.push(Primitive::Plane {
            normal: [0.0, 0.0, 1.0],
            offset: 0.0,
            bounds: None,
            ground: true,
        });
        self
    }

    /// Vertical plane `x = offset` facing the ego.
    pub fn plane_x(&mut self, offset: f64, bounds: Option<Aabb>) -> &mut Self {
        self.file.primitives.push(Primitive::Plane {
            normal: [1.0, 0.0, 0.0],
            offset,
            bounds,
            ground: false,
        });
        self
    }

    /// Vertical plane `y = offset` parallel to the direction of travel.
    pub fn plane_y(&mut self, offset: f64, bounds: Option<Aabb>) -> &mut Self {
        self.file.primitives.push(Primitive::Plane {
            normal: [0.0, 1.0, 0.0],
            offset,
            bounds,
            ground: false,
        });
        self
    }

    pub fn static_box(&mut self, min: [f64; 3], max: [f64; 3]) -> &mut Self {
        self.file.primitives.push(Primitive::Box { min, max });
        self
    }

    /// Ego driving along +x from the origin at constant speed.
    pub fn ego_straight(&mut self, speed: f64) -> &mut Self {
        let (t0, _) = self.span();
        self.file.trajectory = self
            .key_times()
            .into_iter()
            .map(|t| EgoKeyframe {
                t,
                pose: RigidTransform::from_translation(Vec3::new(speed * (t - t0), 0.0, 0.0)),
            })
            .collect();
        self
    }

    /// Actor with constant velocity and fixed yaw; `center` is its position at the first frame.
    pub fn actor_linear(
        &mut self,
        id: u32,
        class: ActorClass,
        dimensions: [f64; 3],
        center: [f64; 3],
        velocity: [f64; 3],
        yaw: f64,
    ) -> &mut Self {
        let (t0, _) = self.span();
        let keyframes = self
            .key_times()
            .into_iter()
            .map(|t| ActorKeyframe {
                t,
                center: [0, 1, 2].map(|i| center[i] + velocity[i] * (t - t0)),
                rotation: yaw_quat(yaw),
            })
            .collect();
        self.file.actors.push(Actor {
            id,
            class,
            dimensions,
            keyframes,
        });
        self
    }

    /// Actor with explicit `(t, center, yaw)` key frames.
    pub fn actor_keyframes(
        &mut self,
        id: u32,
        class: ActorClass,
        dimensions: [f64; 3],
        keys: &[(f64, [f64; 3], f64)],
    ) -> &mut Self {
        let keyframes = keys
            .iter()
            .map(|&(t, center, yaw)| ActorKeyframe {
                t,
                center,
                rotation: yaw_quat(yaw),
            })
            .collect();
        self.file.actors.push(Actor {
            id,
            class,
            dimensions,
            keyframes,
        });
        self
    }

    pub fn file(&self) -> &SceneFile {
        &self.file
    }

    pub fn build(&self) -> Result<Scene> {
        Scene::new(self.file.clone())
    }
}

fn bounded(min: [f64; 3], max: [f64; 3]) -> Option<Aabb> {
    Some(Aabb { min, max })
}

fn library_builder(name: &str, seed: u64) -> SceneBuilder {
    let mut b = SceneBuilder::new(name, LIBRARY_FRAMES);
    b.seed(seed).ground();
    b
}

/// A raised trailer blocks the camera's view of a low barrier that the grill
/// radar sees underneath it.
fn occluded_radar() -> Result<Scene> {
    let mut b = library_builder("occluded-radar", 11);
    b.tag(OCCLUSION_TAG);
    b.ego_straight(4.0);
    b.actor_linear(1, ActorClass::Vehicle, [8.0, 2.6, 2.8], [34.0, 0.0, 2.2], [0.0; 3], 0.0);
    b.static_box([44.0, -6.0, 0.0], [44.5, 6.0, 0.6]);
    b.plane_x(45.0, bounded([44.0, -15.0, 0.0], [46.0, 15.0, 8.0]));
    b.build()
}

/// Poles taller than the camera on both sides of the road: radar hits high on
/// the pole are reported at mounting height.
fn tall_pole() -> Result<Scene> {
    let mut b = library_builder("tall-pole", 12);
    b.tag("tall-objects");
    b.ego_straight(5.0);
    for x in [18.0, 28.0, 38.0] {
        for y in [-3.0, 3.0] {
            b.static_box([x - 0.15, y - 0.15, 0.0], [x + 0.15, y + 0.15, 6.0]);
        }
    }
    b.plane_x(53.0, bounded([52.0, -20.0, 0.0], [54.0, 20.0, 10.0]));
    b.build()
}

/// A car crossing the road in front of the ego; background behind it leaks
/// through into accumulated LiDAR from other frames.
fn crossing_mover() -> Result<Scene> {
    let mut b = library_builder("crossing-mover", 13);
    b.tag(OCCLUSION_TAG).tag("moving");
    b.ego_straight(5.0);
    b.actor_linear(
        1,
        ActorClass::Vehicle,
        [4.5, 1.8, 1.5],
        [25.0, -12.0, 0.75],
        [0.0, 6.0, 0.0],
        std::f64::consts::FRAC_PI_2,
    );
    b.plane_x(52.0, bounded([51.0, -25.0, 0.0], [53.0, 25.0, 10.0]));
    b.build()
}

/// Box truck matching the ego speed between corridor walls. Background behind
/// it has almost no parallax relative to it, and the grill radar sees a far
/// barrier through the gap under its body.
fn approach_corridor() -> Result<Scene> {
    let mut b = library_builder("approach-corridor", 14);
    b.tag(OCCLUSION_TAG).tag("moving");
    let speed = 12.0;
    b.ego_straight(speed);
    b.actor_linear(1, ActorClass::Vehicle, [6.0, 2.4, 2.6], [10.5, 0.0, 1.8], [speed, 0.0, 0.0], 0.0);
    b.plane_y(-5.0, bounded([-10.0, -6.0, 0.0], [120.0, -4.0, 4.0]));
    b.plane_y(5.0, bounded([-10.0, 4.0, 0.0], [120.0, 6.0, 4.0]));
    b.plane_x(90.0, bounded([89.0, -5.0, 0.0], [91.0, 5.0, 4.0]));
    b.build()
}

/// Parked cars along the right kerb in front of a building facade.
fn parked_row() -> Result<Scene> {
    let mut b = library_builder("parked-row", 15);
    b.tag(OCCLUSION_TAG);
    b.ego_straight(6.0);
    for (i, x) in [15.0, 22.0, 29.0, 36.0, 43.0].into_iter().enumerate() {
        b.actor_linear(
            i as u32 + 1,
            ActorClass::Vehicle,
            [4.4, 1.8, 1.5],
            [x, -3.5, 0.75],
            [0.0; 3],
            0.0,
        );
    }
    b.plane_y(-8.0, bounded([-10.0, -9.0, 0.0], [120.0, -7.0, 12.0]));
    b.plane_y(8.0, bounded([-10.0, 7.0, 0.0], [120.0, 9.0, 12.0]));
    b.build()
}

/// Flat ground only: no radar reflectors at all.
fn empty_road() -> Result<Scene> {
    let mut b = library_builder("empty-road", 16);
    b.ego_straight(5.0);
    b.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_builds_and_is_tagged() {
        let scenes = build_all().unwrap();
        assert!(scenes.len() >= 6);
        let occlusion: Vec<_> = scenes.iter().filter(|s| s.has_tag(OCCLUSION_TAG)).map(|s| s.name()).collect();
        assert_eq!(occlusion, ["occluded-radar", "crossing-mover", "approach-corridor", "parked-row"]);
        for s in &scenes {
            assert_eq!(s.frame_count(), LIBRARY_FRAMES);
        }
        assert!(build("nope").is_err());
    }

    #[test]
    fn default_camera_looks_forward() {
        let cam = default_camera();
        let p = cam.camera_from_world(&RigidTransform::identity()).apply(&Vec3::new(11.5, 0.0, 1.6));
        assert!((p - Vec3::new(0.0, 0.0, 10.0)).norm() < 1e-12);
    }
}
