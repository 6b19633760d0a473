//! Rigid transforms, pinhole projection and sensor motion compensation.
//!
//! Frames used throughout the crate:
//!
//! * world: fixed, `x` forward along the road, `y` left, `z` up, ground at `z = 0`;
//! * ego: vehicle body frame with the same axis convention as world;
//! * camera: `x` right, `y` down, `z` along the optical axis;
//! * radar / LiDAR: sensor frames with the ego axis convention.
//!
//! Units are meters, seconds and pixels everywhere.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Orthonormality tolerance applied when a rotation is given as a matrix.
const ROTATION_TOLERANCE: f64 = 1e-9;

/// A proper rigid motion `x -> R x + t`.
///
/// The rotation is stored as a unit quaternion; [`RigidTransform::rotation_matrix`]
/// exposes the matrix form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransformSpec", into = "TransformSpec")]
pub struct RigidTransform {
    rotation: UnitQuaternion<f64>,
    translation: Vec3,
}

/// Serialized form: translation in meters and a `[w, x, y, z]` quaternion.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TransformSpec {
    pub translation: [f64; 3],
    pub rotation: [f64; 4],
}

impl TryFrom<TransformSpec> for RigidTransform {
    type Error = Error;

    fn try_from(spec: TransformSpec) -> Result<Self> {
        let [w, x, y, z] = spec.rotation;
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidRotation(format!(
                "quaternion {:?} has norm {norm}",
                spec.rotation
            )));
        }
        Ok(Self::new(
            UnitQuaternion::from_quaternion(q),
            Vec3::from(spec.translation),
        ))
    }
}

impl From<RigidTransform> for TransformSpec {
    fn from(t: RigidTransform) -> Self {
        let q = t.rotation.quaternion();
        TransformSpec {
            translation: [t.translation.x, t.translation.y, t.translation.z],
            rotation: [q.w, q.i, q.j, q.k],
        }
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    /// Rotation about the world `z` axis (counter-clockwise seen from above).
    pub fn from_yaw(yaw: f64, translation: Vec3) -> Self {
        Self::new(
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
            translation,
        )
    }

    /// Builds a transform from a rotation matrix, rejecting matrices that are
    /// not orthonormal with determinant +1.
    pub fn from_matrix(rotation: &Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let gram = rotation.transpose() * rotation;
        let off = (gram - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if off > ROTATION_TOLERANCE || (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::InvalidRotation(format!(
                "matrix is not a proper rotation (|RᵀR − I|∞ = {off:e}, det = {det})"
            )));
        }
        let rot = nalgebra::Rotation3::from_matrix_unchecked(*rotation);
        Ok(Self::new(UnitQuaternion::from_rotation_matrix(&rot), translation))
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// Applies the transform to a point.
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Applies only the rotation (for directions and velocities).
    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self.compose(other)` maps `x` to `self(other(x))`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv = self.rotation.inverse();
        RigidTransform {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    /// Interpolates translation linearly and rotation along the shortest arc.
    pub fn interpolate(&self, other: &RigidTransform, s: f64) -> RigidTransform {
        RigidTransform {
            rotation: slerp_shortest(&self.rotation, &other.rotation, s),
            translation: self.translation + (other.translation - self.translation) * s,
        }
    }
}

impl std::ops::Mul for RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

/// Spherical interpolation that always follows the shorter of the two arcs.
pub fn slerp_shortest(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>, s: f64) -> UnitQuaternion<f64> {
    if s == 0.0 {
        return *a;
    }
    if s == 1.0 {
        return *b;
    }
    let b = if a.coords.dot(&b.coords) < 0.0 {
        UnitQuaternion::new_unchecked(-b.into_inner())
    } else {
        *b
    };
    // try_slerp only fails for (near) identical inputs, where nlerp is exact enough.
    a.try_slerp(&b, s, 1e-12)
        .unwrap_or_else(|| UnitQuaternion::new_normalize(a.into_inner().lerp(&b.into_inner(), s)))
}

/// Pinhole camera with its mounting pose on the vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Camera-to-ego transform.
    pub pose: RigidTransform,
}

/// A point that landed inside the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImagePoint {
    /// Sub-pixel column coordinate.
    pub u: f64,
    /// Sub-pixel row coordinate.
    pub v: f64,
    /// Pixel column after round-to-nearest binning.
    pub col: usize,
    /// Pixel row after round-to-nearest binning.
    pub row: usize,
    /// Camera-frame `z`, meters.
    pub depth: f64,
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && self.cx.is_finite()
            && self.cy.is_finite()
            && self.width > 0
            && self.height > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "camera intrinsics must be finite with positive focal lengths and image size, got {self:?}"
            )))
        }
    }

    /// Continuous pixel coordinates of a camera-frame point, without view checks.
    pub fn pixel_coords(&self, p: &Vec3) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Camera-frame point at the given sub-pixel location and depth.
    pub fn back_project(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth)
    }

    /// Unit-depth ray through a sub-pixel location, in the camera frame.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vec3 {
        self.back_project(u, v, 1.0)
    }

    /// Transform taking world points into this camera given the ego pose.
    pub fn camera_from_world(&self, world_from_ego: &RigidTransform) -> RigidTransform {
        world_from_ego.compose(&self.pose).inverse()
    }
}

/// Projects a camera-frame point into the image.
///
/// Returns `None` when the point is behind the camera or its pixel falls outside
/// `[0, width) x [0, height)`.
pub fn project(point: &Vec3, cam: &CameraModel) -> Option<ImagePoint> {
    if !(point.z > 0.0) {
        return None;
    }
    let (u, v) = cam.pixel_coords(point);
    if !(u >= 0.0 && v >= 0.0 && u < cam.width as f64 && v < cam.height as f64) {
        return None;
    }
    let col = u.round() as usize;
    let row = v.round() as usize;
    if col >= cam.width || row >= cam.height {
        return None;
    }
    Some(ImagePoint {
        u,
        v,
        col,
        row,
        depth: point.z,
    })
}

/// A camera together with the ego pose at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosedCamera {
    pub model: CameraModel,
    pub world_from_ego: RigidTransform,
    camera_from_world: RigidTransform,
}

impl PosedCamera {
    pub fn new(model: CameraModel, world_from_ego: RigidTransform) -> Self {
        Self {
            camera_from_world: model.camera_from_world(&world_from_ego),
            model,
            world_from_ego,
        }
    }

    pub fn camera_from_world(&self) -> &RigidTransform {
        &self.camera_from_world
    }

    pub fn world_from_camera(&self) -> RigidTransform {
        self.world_from_ego.compose(&self.model.pose)
    }

    pub fn center(&self) -> Vec3 {
        self.world_from_camera().apply(&Vec3::zeros())
    }

    pub fn project_world(&self, p: &Vec3) -> Option<ImagePoint> {
        project(&self.camera_from_world.apply(p), &self.model)
    }

    /// World-frame ray (origin, unit direction) through a pixel center.
    pub fn pixel_ray_world(&self, col: usize, row: usize) -> (Vec3, Vec3) {
        let wfc = self.world_from_camera();
        let dir = wfc.apply_vector(&self.model.pixel_ray(col as f64, row as f64));
        (wfc.apply(&Vec3::zeros()), dir.normalize())
    }
}

/// One radar detection in the radar frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarReturn {
    pub position: Vec3,
    /// Velocity of the reflector along the sensor ray, m/s, positive when receding.
    pub radial_velocity: f64,
    pub timestamp: f64,
}

impl RadarReturn {
    pub fn range(&self) -> f64 {
        self.position.norm()
    }
}

/// One LiDAR point in the LiDAR frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarPoint {
    pub position: Vec3,
    pub timestamp: f64,
    /// Actor the ray hit, if any.
    pub instance_id: Option<u32>,
}

/// Oriented 3D box of an object instance at one instant (world frame).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox3D {
    pub center: Vec3,
    /// Full extents along the box's local x, y, z axes.
    pub dimensions: Vec3,
    pub orientation: UnitQuaternion<f64>,
    pub instance_id: u32,
    pub timestamp: f64,
}

impl BoundingBox3D {
    /// Box-to-world transform.
    pub fn pose(&self) -> RigidTransform {
        RigidTransform::new(self.orientation, self.center)
    }

    pub fn half_extents(&self) -> Vec3 {
        self.dimensions * 0.5
    }

    /// True when `p` (world) lies inside the box grown by `tolerance` meters.
    pub fn contains(&self, p: &Vec3, tolerance: f64) -> bool {
        let local = self.pose().inverse().apply(p);
        let h = self.half_extents();
        (0..3).all(|i| local[i].abs() <= h[i] + tolerance)
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let h = self.half_extents();
        let pose = self.pose();
        let mut out = [Vec3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
            *c = pose.apply(&Vec3::new(sx * h.x, sy * h.y, sz * h.z));
        }
        out
    }
}

/// Moves a radar return to the destination ego frame.
///
/// The return is first advanced along its own ray by `radial_velocity * dt`
/// (tangential motion is unobservable and left uncompensated), then mapped
/// through the radar extrinsics and the ego motion `ego_dst_from_ego_src`.
pub fn compensate_radar(
    ret: &RadarReturn,
    target_time: f64,
    radar_to_ego: &RigidTransform,
    ego_dst_from_ego_src: &RigidTransform,
    window: f64,
) -> Result<Vec3> {
    let dt = target_time - ret.timestamp;
    if !dt.is_finite() || dt.abs() > window {
        return Err(Error::WindowExceeded {
            source_time: ret.timestamp,
            target_time,
            delta: dt,
            window,
        });
    }
    let range = ret.range();
    let advanced = if range > 0.0 {
        ret.position * ((range + ret.radial_velocity * dt) / range)
    } else {
        ret.position
    };
    Ok(ego_dst_from_ego_src.apply(&radar_to_ego.apply(&advanced)))
}

/// Interpolates an instance's box between two key frames.
///
/// Centers move linearly, orientation follows the shortest great arc and the
/// dimensions of `a` are kept.
pub fn interpolate_box(a: &BoundingBox3D, b: &BoundingBox3D, t: f64) -> Result<BoundingBox3D> {
    if a.instance_id != b.instance_id {
        return Err(Error::InstanceMismatch {
            a: a.instance_id,
            b: b.instance_id,
        });
    }
    if !(t >= a.timestamp && t <= b.timestamp) {
        return Err(Error::TimeOutOfRange {
            t,
            start: a.timestamp,
            end: b.timestamp,
        });
    }
    if t == a.timestamp {
        return Ok(*a);
    }
    let span = b.timestamp - a.timestamp;
    let s = (t - a.timestamp) / span;
    Ok(BoundingBox3D {
        center: a.center + (b.center - a.center) * s,
        dimensions: a.dimensions,
        orientation: slerp_shortest(&a.orientation, &b.orientation, s),
        instance_id: a.instance_id,
        timestamp: t,
    })
}

/// Tolerance used when checking that a moving point belongs to its box.
pub const BOX_MEMBERSHIP_TOLERANCE: f64 = 1e-6;

/// Carries a world point rigidly attached to `src` over to the pose of `dst`.
pub fn compensate_moving_point(p: &Vec3, src: &BoundingBox3D, dst: &BoundingBox3D) -> Result<Vec3> {
    if !src.contains(p, BOX_MEMBERSHIP_TOLERANCE) {
        return Err(Error::PointOutsideBox {
            x: p.x,
            y: p.y,
            z: p.z,
            instance: src.instance_id,
        });
    }
    Ok(relocate_rigidly(p, src, dst))
}

/// [`compensate_moving_point`] without the membership check.
pub(crate) fn relocate_rigidly(p: &Vec3, src: &BoundingBox3D, dst: &BoundingBox3D) -> Vec3 {
    let local = src.pose().inverse().apply(p);
    dst.pose().apply(&local)
}
