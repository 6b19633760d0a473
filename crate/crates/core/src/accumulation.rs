//! Semi-dense LiDAR ground truth: multi-sweep accumulation with moving-object
//! compensation, then flow-consistency and box/segmentation occlusion filters.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{compensate_moving_point, BoundingBox3D, PosedCamera, Vec3};
use crate::image::{check_same_dims, DepthImage, FlowField, Grid, Mask};
use crate::sim::raycast::{ray_box, Snapshot};
use crate::sim::render::{noisy_flow, render_flow, FrameTruth, STREAM_FLOW_NOISE};
use crate::sim::{sample_lidar, Scene, Surface};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccumulationConfig {
    pub frames_after: usize,
    pub frames_before: usize,
    pub stride: usize,
    /// Flow-difference threshold in pixels.
    pub flow_threshold: f64,
    /// Standard deviation of the Gaussian noise added to optical flow, pixels.
    pub flow_noise_sigma: f64,
    /// Accumulated depths beyond this are dropped after filtering, meters.
    pub max_depth: f64,
}

impl Default for AccumulationConfig {
    fn default() -> Self {
        Self {
            frames_after: 21,
            frames_before: 4,
            stride: 2,
            flow_threshold: 3.0,
            flow_noise_sigma: 0.5,
            max_depth: 50.0,
        }
    }
}

impl AccumulationConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.stride >= 1
            && self.flow_threshold > 0.0
            && self.flow_noise_sigma >= 0.0
            && self.flow_noise_sigma.is_finite()
            && self.max_depth > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid accumulation config {self:?}")))
        }
    }

    /// Source frames around `target`, in increasing order, target included.
    pub fn window(&self, target: usize, frame_count: usize) -> Result<Vec<usize>> {
        self.validate()?;
        let first = target as isize - (self.frames_before * self.stride) as isize;
        let last = (target + self.frames_after * self.stride) as isize;
        if first < 0 || last >= frame_count as isize || target >= frame_count {
            return Err(Error::WindowOutOfRange {
                target,
                first,
                last,
                count: frame_count,
            });
        }
        let before = (1..=self.frames_before).rev().map(|m| target - m * self.stride);
        let after = (1..=self.frames_after).map(|m| target + m * self.stride);
        Ok(before.chain(std::iter::once(target)).chain(after).collect())
    }
}

/// A LiDAR point moved to the target time and projected into the target camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccumulatedPoint {
    /// World position at the target time.
    pub world: Vec3,
    pub u: f64,
    pub v: f64,
    pub col: usize,
    pub row: usize,
    pub depth: f64,
    pub source_frame: usize,
    pub instance_id: Option<u32>,
    /// Simulator truth: surface the LiDAR ray hit.
    pub surface: Surface,
}

/// Moves every point of the window's sweeps into the target camera.
///
/// Static points follow the ego motion only. Points carrying an instance id
/// are carried from their sweep time to the target time with the instance's
/// interpolated boxes. Points that fall outside the target image are dropped.
/// The result is ordered by source frame, then by sweep order.
pub fn accumulate_points(scene: &Scene, target: usize, cfg: &AccumulationConfig) -> Result<Vec<AccumulatedPoint>> {
    let frames = cfg.window(target, scene.frame_count())?;
    let t_dst = scene.frame_time(target)?;
    let cam = scene.posed_camera(target)?;
    let extrinsic = scene.calibration().lidar.extrinsic;
    let per_frame: Vec<Result<Vec<AccumulatedPoint>>> = frames
        .par_iter()
        .map(|&f| {
            let t_src = scene.frame_time(f)?;
            let sweep = sample_lidar(scene, f)?;
            let world_from_lidar = scene.ego_pose(t_src).compose(&extrinsic);
            let mut out = Vec::with_capacity(sweep.points.len());
            for (p, &surface) in sweep.points.iter().zip(&sweep.surfaces) {
                let mut world = world_from_lidar.apply(&p.position);
                if let Some(id) = p.instance_id {
                    let src = scene.actor_box(id, t_src)?;
                    let dst = scene.actor_box(id, t_dst)?;
                    world = compensate_moving_point(&world, &src, &dst)?;
                }
                let Some(ip) = cam.project_world(&world) else { continue };
                out.push(AccumulatedPoint {
                    world,
                    u: ip.u,
                    v: ip.v,
                    col: ip.col,
                    row: ip.row,
                    depth: ip.depth,
                    source_frame: f,
                    instance_id: p.instance_id,
                    surface,
                });
            }
            Ok(out)
        })
        .collect();
    let mut points = Vec::new();
    for chunk in per_frame {
        points.extend(chunk?);
    }
    Ok(points)
}

/// Nearest-depth raster of the points passing `keep`, clipped to `(0, max_depth]`.
pub fn rasterize(
    points: &[AccumulatedPoint],
    keep: impl Fn(usize) -> bool,
    width: usize,
    height: usize,
    max_depth: f64,
) -> DepthImage {
    let mut img = DepthImage::new_invalid(width, height);
    for (i, p) in points.iter().enumerate() {
        if keep(i) && p.depth <= max_depth {
            img.set_nearest(p.col, p.row, p.depth);
        }
    }
    img
}

/// Unfiltered accumulation: every window point z-buffered into the target image.
pub fn accumulate_lidar(scene: &Scene, target: usize, cfg: &AccumulationConfig) -> Result<DepthImage> {
    let points = accumulate_points(scene, target, cfg)?;
    let cam = scene.camera();
    Ok(rasterize(&points, |_| true, cam.width, cam.height, cfg.max_depth))
}

/// Position of an accumulated point at another frame's time.
fn point_at(scene: &Scene, p: &AccumulatedPoint, t0: f64, t1: f64) -> Result<Vec3> {
    match p.instance_id {
        Some(id) => {
            let a = scene.actor_box(id, t0)?;
            let b = scene.actor_box(id, t1)?;
            compensate_moving_point(&p.world, &a, &b)
        }
        None => Ok(p.world),
    }
}

/// Image displacement of each point from the target frame to `other`.
///
/// Points on instances move with their boxes. Entries are `None` when the
/// point is out of view in `other`.
pub fn point_scene_flow(
    scene: &Scene,
    points: &[AccumulatedPoint],
    target: usize,
    other: usize,
) -> Result<Vec<Option<[f64; 2]>>> {
    let t0 = scene.frame_time(target)?;
    let t1 = scene.frame_time(other)?;
    let cam1 = scene.posed_camera(other)?;
    points
        .iter()
        .map(|p| {
            let q = point_at(scene, p, t0, t1)?;
            Ok(cam1.project_world(&q).map(|ip| [ip.u - p.u, ip.v - p.v]))
        })
        .collect()
}

/// Decision of the flow filter for one point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowCheck {
    Consistent,
    Inconsistent,
    /// No usable flow pair; the point is kept.
    Unchecked,
}

/// Compares point flow with optical flow at the point's pixel.
///
/// `pairs` holds, per point, the candidate `(point flow, optical flow field)`
/// combinations in order of preference; the first whose point flow exists and
/// whose optical flow is valid at the pixel decides.
pub fn flow_consistency_filter(
    points: &[AccumulatedPoint],
    pairs: &[(&[Option<[f64; 2]>], &FlowField)],
    threshold: f64,
) -> Result<Vec<FlowCheck>> {
    for (pf, _) in pairs {
        if pf.len() != points.len() {
            return Err(Error::SizeMismatch {
                context: "point flow",
                expected: (points.len(), 1, 1),
                actual: (pf.len(), 1, 1),
            });
        }
    }
    Ok(points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            for (pf, optical) in pairs {
                if let (Some(a), Some(b)) = (pf[i], optical.get(p.col, p.row)) {
                    return if (a[0] - b[0]).hypot(a[1] - b[1]) > threshold {
                        FlowCheck::Inconsistent
                    } else {
                        FlowCheck::Consistent
                    };
                }
            }
            FlowCheck::Unchecked
        })
        .collect())
}

/// Per-pixel depth limit inside vehicle instance regions.
///
/// A pixel belongs to a box's region when its center ray hits the box and the
/// vehicle mask is set. The limit is the largest camera depth of that box's
/// corners (the smallest such limit if several boxes cover the pixel).
pub fn instance_depth_limits(vehicle_mask: &Mask, boxes: &[BoundingBox3D], cam: &PosedCamera) -> Grid<Option<f64>> {
    let (w, h) = (cam.model.width, cam.model.height);
    let mut limits = Grid::filled(w, h, None::<f64>);
    let cfw = cam.camera_from_world();
    for b in boxes {
        let corners: Vec<Vec3> = b.corners().iter().map(|c| cfw.apply(c)).collect();
        let max_depth = corners.iter().map(|c| c.z).fold(f64::NEG_INFINITY, f64::max);
        if max_depth <= 0.0 {
            continue;
        }
        // Pixel bounds from the projected corners; fall back to the whole image
        // when the box straddles the camera plane.
        let (c0, c1, r0, r1) = if corners.iter().all(|c| c.z > 0.0) {
            let us = corners.iter().map(|c| cam.model.pixel_coords(c));
            let (mut umin, mut umax, mut vmin, mut vmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
            for (u, v) in us {
                umin = umin.min(u);
                umax = umax.max(u);
                vmin = vmin.min(v);
                vmax = vmax.max(v);
            }
            let clamp = |x: f64, n: usize| x.clamp(0.0, (n - 1) as f64);
            (
                clamp(umin.floor(), w) as usize,
                clamp(umax.ceil(), w) as usize,
                clamp(vmin.floor(), h) as usize,
                clamp(vmax.ceil(), h) as usize,
            )
        } else {
            (0, w - 1, 0, h - 1)
        };
        for row in r0..=r1 {
            for col in c0..=c1 {
                if !vehicle_mask.get(col, row) {
                    continue;
                }
                let (origin, dir) = cam.pixel_ray_world(col, row);
                if ray_box(&origin, &dir, b).is_some() {
                    let slot = limits.get_mut(col, row);
                    *slot = Some(slot.map_or(max_depth, |l| l.min(max_depth)));
                }
            }
        }
    }
    limits
}

/// Keeps points outside instance regions and points not deeper than their region's limit.
pub fn box_segmentation_filter(
    points: &[AccumulatedPoint],
    vehicle_mask: &Mask,
    boxes: &[BoundingBox3D],
    cam: &PosedCamera,
) -> Result<Vec<bool>> {
    check_same_dims(
        "vehicle mask",
        (cam.model.width, cam.model.height),
        (vehicle_mask.width(), vehicle_mask.height()),
    )?;
    let limits = instance_depth_limits(vehicle_mask, boxes, cam);
    Ok(points
        .iter()
        .map(|p| limits.get(p.col, p.row).is_none_or(|l| p.depth <= l))
        .collect())
}

/// Counts reported alongside a filtered ground-truth image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FilterReport {
    pub points: usize,
    pub removed_by_flow: usize,
    pub removed_by_box: usize,
    /// Removed by both filters (counted in each of the two fields above too).
    pub removed_by_both: usize,
    /// Points without a usable optical-flow comparison, kept.
    pub flow_unchecked: usize,
    /// Survivors dropped by the depth clip.
    pub clipped: usize,
    pub valid_pixels: usize,
}

/// Filtered ground truth with per-point decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub depth: DepthImage,
    /// Unfiltered accumulation (same clip).
    pub raw_depth: DepthImage,
    pub points: Vec<AccumulatedPoint>,
    pub flow: Vec<FlowCheck>,
    pub box_keep: Vec<bool>,
    pub report: FilterReport,
}

impl GroundTruth {
    pub fn survives(&self, i: usize) -> bool {
        self.flow[i] != FlowCheck::Inconsistent && self.box_keep[i]
    }
}

/// Optical flow of the target frame towards `other`, with the configured noise.
///
/// Noise streams depend on both frames so forward and backward fields are independent.
pub fn noisy_optical_flow(
    scene: &Scene,
    truth: &FrameTruth,
    other: usize,
    sigma: f64,
) -> Result<FlowField> {
    let exact = if other == truth.frame + 1 {
        truth.optical_flow.clone()
    } else {
        render_flow(scene, truth, other)?
    };
    let stream = STREAM_FLOW_NOISE + ((truth.frame as u64) << 16) + other as u64;
    noisy_flow(&exact, sigma, scene.rng_seed(), stream)
}

/// Accumulates, filters and rasterizes the ground truth of `target`.
///
/// The flow filter compares against the next frame, falling back to the
/// previous one when a point leaves the next view. Depths are clipped after
/// both filters.
pub fn build_ground_truth(
    scene: &Scene,
    truth: &FrameTruth,
    cfg: &AccumulationConfig,
) -> Result<GroundTruth> {
    let target = truth.frame;
    let points = accumulate_points(scene, target, cfg)?;
    let mut pairs_owned: Vec<(Vec<Option<[f64; 2]>>, FlowField)> = Vec::new();
    for other in [target + 1, target.wrapping_sub(1)] {
        if other < scene.frame_count() {
            let pf = point_scene_flow(scene, &points, target, other)?;
            let of = noisy_optical_flow(scene, truth, other, cfg.flow_noise_sigma)?;
            pairs_owned.push((pf, of));
        }
    }
    let pairs: Vec<(&[Option<[f64; 2]>], &FlowField)> =
        pairs_owned.iter().map(|(pf, of)| (pf.as_slice(), of)).collect();
    let flow = flow_consistency_filter(&points, &pairs, cfg.flow_threshold)?;
    let t = scene.frame_time(target)?;
    let vehicle_boxes: Vec<BoundingBox3D> = scene
        .actor_boxes(t)?
        .into_iter()
        .filter(|b| scene.actor_class(b.instance_id) == Some(crate::sim::ActorClass::Vehicle))
        .collect();
    let box_keep = box_segmentation_filter(&points, &truth.vehicle_mask, &vehicle_boxes, &truth.camera)?;

    let mut report = FilterReport {
        points: points.len(),
        ..Default::default()
    };
    for (f, &k) in flow.iter().zip(&box_keep) {
        let by_flow = *f == FlowCheck::Inconsistent;
        report.removed_by_flow += by_flow as usize;
        report.removed_by_box += (!k) as usize;
        report.removed_by_both += (by_flow && !k) as usize;
        report.flow_unchecked += (*f == FlowCheck::Unchecked) as usize;
    }
    let (w, h) = truth.depth.dims();
    let survives = |i: usize| flow[i] != FlowCheck::Inconsistent && box_keep[i];
    report.clipped = (0..points.len())
        .filter(|&i| survives(i) && points[i].depth > cfg.max_depth)
        .count();
    let depth = rasterize(&points, survives, w, h, cfg.max_depth);
    let raw_depth = rasterize(&points, |_| true, w, h, cfg.max_depth);
    report.valid_pixels = depth.valid_count();
    Ok(GroundTruth {
        depth,
        raw_depth,
        points,
        flow,
        box_keep,
        report,
    })
}

/// Simulator classification of an accumulated point at the target time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointVisibility {
    /// The camera sees the point's surface.
    Visible,
    /// Something lies between the camera and the point.
    Occluded,
    /// Beyond the depth range; removed by clipping regardless of filters.
    OutOfRange,
}

/// Classifies a point by casting from the camera center to its compensated
/// position in the target scene. It is occluded when a surface blocks the
/// segment more than `max(t_a, t_r * depth)` before the point.
///
/// The exact segment test avoids flagging points that share a pixel with a
/// silhouette edge yet remain visible at their sub-pixel position.
pub fn classify_point(
    p: &AccumulatedPoint,
    snapshot: &Snapshot<'_>,
    cam: &PosedCamera,
    t_a: f64,
    t_r: f64,
    max_depth: f64,
) -> PointVisibility {
    if p.depth > max_depth {
        return PointVisibility::OutOfRange;
    }
    if snapshot.is_occluded(&cam.center(), &p.world, t_a.max(t_r * p.depth)) {
        PointVisibility::Occluded
    } else {
        PointVisibility::Visible
    }
}
