//! Exact ray casting against planes, static boxes and actor boxes.

use crate::error::Result;
use crate::geometry::{BoundingBox3D, Vec3};
use crate::sim::scene::{Primitive, Scene};

/// Smallest accepted hit distance along a ray.
const MIN_HIT_DISTANCE: f64 = 1e-9;

/// Identity of the surface a ray hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Surface {
    /// Index into the scene's primitive list.
    Static(u32),
    /// Actor instance id.
    Actor(u32),
}

impl Surface {
    pub fn instance_id(self) -> Option<u32> {
        match self {
            Surface::Actor(id) => Some(id),
            Surface::Static(_) => None,
        }
    }

    /// Compact code: 0 is reserved for "no surface", statics start at 1,
    /// actors at `1 << 16`.
    pub fn code(self) -> u32 {
        match self {
            Surface::Static(i) => i + 1,
            Surface::Actor(id) => (1 << 16) + id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub distance: f64,
    pub point: Vec3,
    pub surface: Surface,
}

/// Scene geometry frozen at one instant.
#[derive(Debug, Clone)]
pub struct Snapshot<'a> {
    scene: &'a Scene,
    boxes: Vec<BoundingBox3D>,
    pub time: f64,
}

impl<'a> Snapshot<'a> {
    pub fn new(scene: &'a Scene, time: f64) -> Result<Self> {
        Ok(Self {
            scene,
            boxes: scene.actor_boxes(time)?,
            time,
        })
    }

    pub fn scene(&self) -> &'a Scene {
        self.scene
    }

    pub fn boxes(&self) -> &[BoundingBox3D] {
        &self.boxes
    }

    /// Nearest hit along `origin + s * dir` with `s` in `(0, max_distance]`.
    ///
    /// `dir` must be unit length for `distance` to be metric.
    pub fn cast(&self, origin: &Vec3, dir: &Vec3, max_distance: f64, include_ground: bool) -> Option<Hit> {
        let mut best: Option<(f64, Surface)> = None;
        let mut consider = |s: f64, surface: Surface| {
            if s > MIN_HIT_DISTANCE && s <= max_distance && best.is_none_or(|(b, _)| s < b) {
                best = Some((s, surface));
            }
        };
        for (i, prim) in self.scene.primitives().iter().enumerate() {
            let surface = Surface::Static(i as u32);
            match prim {
                Primitive::Plane {
                    normal,
                    offset,
                    bounds,
                    ground,
                } => {
                    if *ground && !include_ground {
                        continue;
                    }
                    if let Some(s) = ray_plane(origin, dir, &Vec3::from(*normal), *offset) {
                        let p = origin + dir * s;
                        if bounds.is_none_or(|b| b.contains(&p, 1e-9)) {
                            consider(s, surface);
                        }
                    }
                }
                Primitive::Box { min, max } => {
                    if let Some(s) = ray_aabb(origin, dir, &Vec3::from(*min), &Vec3::from(*max)) {
                        consider(s, surface);
                    }
                }
            }
        }
        for b in &self.boxes {
            if let Some(s) = ray_box(origin, dir, b) {
                consider(s, Surface::Actor(b.instance_id));
            }
        }
        best.map(|(s, surface)| Hit {
            distance: s,
            point: origin + dir * s,
            surface,
        })
    }

    /// True when something other than the segment's end surface blocks the
    /// straight line from `from` to `to`.
    pub fn is_occluded(&self, from: &Vec3, to: &Vec3, margin: f64) -> bool {
        let d = to - from;
        let len = d.norm();
        if len <= margin {
            return false;
        }
        let dir = d / len;
        self.cast(from, &dir, len - margin, true).is_some()
    }
}

pub fn ray_plane(origin: &Vec3, dir: &Vec3, normal: &Vec3, offset: f64) -> Option<f64> {
    let denom = normal.dot(dir);
    if denom.abs() < 1e-12 {
        return None;
    }
    let s = (offset - normal.dot(origin)) / denom;
    (s > MIN_HIT_DISTANCE).then_some(s)
}

/// Entry distance of a ray into an axis-aligned box; rays starting inside miss.
pub fn ray_aabb(origin: &Vec3, dir: &Vec3, min: &Vec3, max: &Vec3) -> Option<f64> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for i in 0..3 {
        if dir[i].abs() < 1e-15 {
            if origin[i] < min[i] || origin[i] > max[i] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[i];
        let (mut a, mut b) = ((min[i] - origin[i]) * inv, (max[i] - origin[i]) * inv);
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        t_near = t_near.max(a);
        t_far = t_far.min(b);
        if t_near > t_far {
            return None;
        }
    }
    (t_near > MIN_HIT_DISTANCE).then_some(t_near)
}

/// Entry distance into an oriented box.
pub fn ray_box(origin: &Vec3, dir: &Vec3, b: &BoundingBox3D) -> Option<f64> {
    let inv = b.orientation.inverse();
    let o = inv * (origin - b.center);
    let d = inv * dir;
    let h = b.half_extents();
    ray_aabb(&o, &d, &(-h), &h)
}
