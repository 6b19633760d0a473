//! Synthetic multi-sensor scenes: description, ray casting, ground-truth
//! rendering and LiDAR/radar sweeps.

pub mod library;
pub mod raycast;
pub mod render;
pub mod scene;
pub mod sensors;

pub use raycast::{Hit, Snapshot, Surface};
pub use render::{carry_point, noisy_flow, render_flow, render_truth, FrameTruth};
pub use scene::{
    Aabb, Actor, ActorClass, ActorKeyframe, Calibration, EgoKeyframe, HeightSampler, LidarRig, OcclusionMode,
    Primitive, RadarRig, Scene, SceneFile,
};
pub use sensors::{camera_occluded_returns, sample_lidar, sample_radar, LidarSweep, RadarSweep, SimulatedReturn};
