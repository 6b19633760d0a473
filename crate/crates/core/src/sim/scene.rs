//! Scene description: calibration, static geometry, actors, ego trajectory and
//! frame clock, with its JSON file format.

use std::path::Path;

use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{interpolate_box, BoundingBox3D, CameraModel, PosedCamera, RigidTransform, Vec3};

/// Sensor calibration and rig parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub camera: CameraModel,
    pub radar: RadarRig,
    pub lidar: LidarRig,
    /// Depths beyond this range are treated as missing in rendered truth.
    #[serde(default = "default_max_depth")]
    pub max_depth: f64,
}

fn default_max_depth() -> f64 {
    50.0
}

/// Single-row scanning radar.
///
/// Returns are reported in the radar's horizontal plane (`z = 0` in the radar
/// frame, i.e. at the mounting height), whatever the height of the reflector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarRig {
    /// Radar-to-ego transform; its height is the nominal scan plane height.
    pub extrinsic: RigidTransform,
    pub azimuth_fov_deg: f64,
    pub azimuth_step_deg: f64,
    pub max_range: f64,
    /// Height above ground of the reflecting point for each beam.
    pub height_noise: HeightSampler,
    pub occlusion_mode: OcclusionMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeightSampler {
    Uniform { min: f64, max: f64 },
    Fixed { height: f64 },
}

/// Which viewpoint decides whether a reflector is observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionMode {
    /// Nearest reflector seen from the radar mount; camera-occluded returns occur.
    SensorView,
    /// Returns whose reflector is hidden from the camera are dropped.
    CameraView,
}

impl OcclusionMode {
    pub fn is_enabled(self) -> bool {
        self == OcclusionMode::SensorView
    }
}

/// Spinning multi-beam LiDAR restricted to a forward azimuth sector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LidarRig {
    pub extrinsic: RigidTransform,
    pub elevations_deg: Vec<f64>,
    pub azimuth_fov_deg: f64,
    pub azimuth_step_deg: f64,
    pub max_range: f64,
}

/// Axis-aligned bounds used to clip planes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn contains(&self, p: &Vec3, tol: f64) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - tol && p[i] <= self.max[i] + tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Primitive {
    /// Plane `normal · p = offset`, optionally clipped to `bounds`.
    Plane {
        normal: [f64; 3],
        offset: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bounds: Option<Aabb>,
        /// Ground surfaces are ignored by the radar.
        #[serde(default)]
        ground: bool,
    },
    /// Static axis-aligned box.
    Box { min: [f64; 3], max: [f64; 3] },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorClass {
    Vehicle,
    Pedestrian,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActorKeyframe {
    pub t: f64,
    pub center: [f64; 3],
    /// `[w, x, y, z]` unit quaternion.
    pub rotation: [f64; 4],
}

/// A rigid moving (or parked) object described by key-frame boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub id: u32,
    pub class: ActorClass,
    pub dimensions: [f64; 3],
    pub keyframes: Vec<ActorKeyframe>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoKeyframe {
    pub t: f64,
    /// Ego-to-world pose.
    pub pose: RigidTransform,
}

/// On-disk scene document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub tags: Vec<String>,
    pub calibration: Calibration,
    pub primitives: Vec<Primitive>,
    pub actors: Vec<Actor>,
    pub trajectory: Vec<EgoKeyframe>,
    pub frames: Vec<f64>,
    pub rng_seed: u64,
}

/// Validated, immutable scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    file: SceneFile,
    actor_keyboxes: Vec<Vec<BoundingBox3D>>,
}

fn quat(r: [f64; 4]) -> Result<UnitQuaternion<f64>> {
    let q = nalgebra::Quaternion::new(r[0], r[1], r[2], r[3]);
    let n = q.norm();
    if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidRotation(format!("quaternion {r:?} has norm {n}")));
    }
    Ok(UnitQuaternion::from_quaternion(q))
}

fn strictly_increasing(ts: impl IntoIterator<Item = f64>) -> bool {
    let mut prev = f64::NEG_INFINITY;
    for t in ts {
        if !t.is_finite() || t <= prev {
            return false;
        }
        prev = t;
    }
    true
}

impl Scene {
    pub fn new(file: SceneFile) -> Result<Self> {
        let cfg = |m: String| Err(Error::InvalidConfig(m));
        file.calibration.camera.validate()?;
        if file.frames.is_empty() {
            return cfg("scene has no frames".into());
        }
        if !strictly_increasing(file.frames.iter().copied()) {
            return cfg("frame times must be finite and strictly increasing".into());
        }
        let first = file.frames[0];
        let last = *file.frames.last().unwrap();
        if file.trajectory.is_empty() || !strictly_increasing(file.trajectory.iter().map(|k| k.t)) {
            return cfg("ego trajectory must be non-empty with strictly increasing times".into());
        }
        if file.trajectory[0].t > first || file.trajectory.last().unwrap().t < last {
            return cfg("ego trajectory does not cover all frame times".into());
        }
        let lidar = &file.calibration.lidar;
        if lidar.elevations_deg.is_empty() || lidar.azimuth_step_deg <= 0.0 || lidar.max_range <= 0.0 {
            return cfg("lidar rig needs elevations, a positive azimuth step and range".into());
        }
        if lidar.elevations_deg.iter().any(|e| e.abs() >= 90.0) {
            return cfg("lidar elevations must lie strictly inside (-90°, 90°)".into());
        }
        let radar = &file.calibration.radar;
        if radar.azimuth_step_deg <= 0.0 || radar.max_range <= 0.0 {
            return cfg("radar rig needs a positive azimuth step and range".into());
        }
        if let HeightSampler::Uniform { min, max } = radar.height_noise {
            if !(min <= max) {
                return cfg(format!("radar height sampler has min {min} > max {max}"));
            }
        }
        if !(file.calibration.max_depth > 0.0) {
            return cfg("max_depth must be positive".into());
        }
        for p in &file.primitives {
            match p {
                Primitive::Plane { normal, .. } => {
                    let n = Vec3::from(*normal).norm();
                    if !((n - 1.0).abs() < 1e-6) {
                        return cfg(format!("plane normal {normal:?} is not unit length"));
                    }
                }
                Primitive::Box { min, max } => {
                    if (0..3).any(|i| !(min[i] < max[i])) {
                        return cfg(format!("box min {min:?} is not below max {max:?}"));
                    }
                }
            }
        }
        let mut actor_keyboxes = Vec::with_capacity(file.actors.len());
        let mut ids = std::collections::BTreeSet::new();
        for actor in &file.actors {
            if actor.id == 0 || !ids.insert(actor.id) {
                return cfg(format!("actor id {} is zero or duplicated", actor.id));
            }
            if actor.dimensions.iter().any(|d| !(*d > 0.0)) {
                return cfg(format!("actor {} has non-positive dimensions", actor.id));
            }
            if actor.keyframes.is_empty() || !strictly_increasing(actor.keyframes.iter().map(|k| k.t)) {
                return cfg(format!("actor {} key frames must be strictly increasing", actor.id));
            }
            if actor.keyframes[0].t > first || actor.keyframes.last().unwrap().t < last {
                return cfg(format!("actor {} trajectory does not cover all frame times", actor.id));
            }
            let boxes = actor
                .keyframes
                .iter()
                .map(|k| {
                    Ok(BoundingBox3D {
                        center: Vec3::from(k.center),
                        dimensions: Vec3::from(actor.dimensions),
                        orientation: quat(k.rotation)?,
                        instance_id: actor.id,
                        timestamp: k.t,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            actor_keyboxes.push(boxes);
        }
        Ok(Self { file, actor_keyboxes })
    }

    /// Parses a scene document, reporting line, column and field path on failure.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: SceneFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::SceneParse {
                line: inner.line(),
                column: inner.column(),
                path,
                message: inner.to_string(),
            }
        })?;
        Self::new(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.file).expect("scene serialization cannot fail")
    }

    pub fn file(&self) -> &SceneFile {
        &self.file
    }

    pub fn name(&self) -> &str {
        &self.file.name
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.file.tags.iter().any(|t| t == tag)
    }

    pub fn calibration(&self) -> &Calibration {
        &self.file.calibration
    }

    pub fn camera(&self) -> &CameraModel {
        &self.file.calibration.camera
    }

    pub fn primitives(&self) -> &[Primitive] {
        &self.file.primitives
    }

    pub fn actors(&self) -> &[Actor] {
        &self.file.actors
    }

    pub fn rng_seed(&self) -> u64 {
        self.file.rng_seed
    }

    pub fn frame_count(&self) -> usize {
        self.file.frames.len()
    }

    pub fn frame_times(&self) -> &[f64] {
        &self.file.frames
    }

    pub fn check_frame(&self, frame: usize) -> Result<()> {
        if frame < self.frame_count() {
            Ok(())
        } else {
            Err(Error::FrameOutOfRange {
                frame,
                count: self.frame_count(),
            })
        }
    }

    pub fn frame_time(&self, frame: usize) -> Result<f64> {
        self.check_frame(frame)?;
        Ok(self.file.frames[frame])
    }

    /// Ego-to-world pose at time `t`, interpolated between trajectory key frames
    /// and held constant outside them.
    pub fn ego_pose(&self, t: f64) -> RigidTransform {
        let keys = &self.file.trajectory;
        let i = keys.partition_point(|k| k.t <= t);
        if i == 0 {
            return keys[0].pose;
        }
        if i == keys.len() {
            return keys[i - 1].pose;
        }
        let (a, b) = (&keys[i - 1], &keys[i]);
        a.pose.interpolate(&b.pose, (t - a.t) / (b.t - a.t))
    }

    pub fn posed_camera(&self, frame: usize) -> Result<PosedCamera> {
        let t = self.frame_time(frame)?;
        Ok(PosedCamera::new(*self.camera(), self.ego_pose(t)))
    }

    /// Box of actor `id` at time `t`, interpolated from its key frames.
    pub fn actor_box(&self, id: u32, t: f64) -> Result<BoundingBox3D> {
        let idx = self
            .file
            .actors
            .iter()
            .position(|a| a.id == id)
            .ok_or(Error::UnknownInstance(id))?;
        Self::box_on_track(&self.actor_keyboxes[idx], t)
    }

    fn box_on_track(keys: &[BoundingBox3D], t: f64) -> Result<BoundingBox3D> {
        let start = keys[0].timestamp;
        let end = keys[keys.len() - 1].timestamp;
        if !(t >= start && t <= end) {
            return Err(Error::TimeOutOfRange { t, start, end });
        }
        let i = keys.partition_point(|k| k.timestamp <= t);
        if i == keys.len() {
            return Ok(keys[i - 1]);
        }
        interpolate_box(&keys[i - 1], &keys[i], t)
    }

    /// Boxes of all actors at time `t`, in actor order.
    pub fn actor_boxes(&self, t: f64) -> Result<Vec<BoundingBox3D>> {
        self.actor_keyboxes.iter().map(|k| Self::box_on_track(k, t)).collect()
    }

    pub fn actor_class(&self, id: u32) -> Option<ActorClass> {
        self.file.actors.iter().find(|a| a.id == id).map(|a| a.class)
    }

    /// World velocity of a point rigidly attached to actor `id` at time `t`.
    pub fn actor_point_velocity(&self, id: u32, p: &Vec3, t: f64) -> Result<Vec3> {
        let idx = self
            .file
            .actors
            .iter()
            .position(|a| a.id == id)
            .ok_or(Error::UnknownInstance(id))?;
        let keys = &self.actor_keyboxes[idx];
        if keys.len() < 2 {
            return Ok(Vec3::zeros());
        }
        let i = keys.partition_point(|k| k.timestamp <= t).clamp(1, keys.len() - 1);
        let (a, b) = (&keys[i - 1], &keys[i]);
        let span = b.timestamp - a.timestamp;
        let linear = (b.center - a.center) / span;
        let delta = b.orientation * a.orientation.inverse();
        let omega = delta.scaled_axis() / span;
        let here = Self::box_on_track(keys, t)?;
        Ok(linear + omega.cross(&(p - here.center)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::library;

    #[test]
    fn json_round_trip() {
        let scene = library::build("empty-road").unwrap();
        let text = scene.to_json();
        let back = Scene::from_json_str(&text).unwrap();
        assert_eq!(back, scene);
    }

    #[test]
    fn malformed_scene_reports_location() {
        let scene = library::build("empty-road").unwrap();
        let base: serde_json::Value = serde_json::from_str(&scene.to_json()).unwrap();

        let mut v = base.clone();
        v["rng_seed"] = serde_json::json!("oops");
        match Scene::from_json_str(&serde_json::to_string_pretty(&v).unwrap()) {
            Err(Error::SceneParse { line, path, .. }) => {
                assert!(line > 1);
                assert_eq!(path, "rng_seed");
            }
            other => panic!("expected parse error, got {other:?}"),
        }

        let mut v = base;
        v["calibration"]["camera"]["fx"] = serde_json::json!("wide");
        match Scene::from_json_str(&serde_json::to_string_pretty(&v).unwrap()) {
            Err(Error::SceneParse { path, .. }) => assert_eq!(path, "calibration.camera.fx"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_non_increasing_frames() {
        let mut file = library::build("empty-road").unwrap().file().clone();
        file.frames.swap(1, 2);
        assert!(matches!(Scene::new(file), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn rejects_short_actor_track() {
        let mut file = library::build("crossing-mover").unwrap().file().clone();
        file.actors[0].keyframes.pop();
        assert!(Scene::new(file).is_err());
    }

    #[test]
    fn actor_velocity_matches_finite_difference() {
        let scene = library::build("crossing-mover").unwrap();
        let id = scene.actors()[0].id;
        let t = 1.0;
        let b0 = scene.actor_box(id, t).unwrap();
        let b1 = scene.actor_box(id, t + 1e-4).unwrap();
        let p = b0.center + Vec3::new(1.0, 0.5, 0.2);
        let moved = crate::geometry::relocate_rigidly(&p, &b0, &b1);
        let fd = (moved - p) / 1e-4;
        let v = scene.actor_point_velocity(id, &p, t).unwrap();
        assert!((fd - v).norm() < 1e-6, "{fd:?} vs {v:?}");
    }
}
