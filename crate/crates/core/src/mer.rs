//! Expanded radar depth, multi-channel enhanced radar (MER) images, the
//! second-stage feature stack and a non-learned depth-completion baseline.

use serde::{Deserialize, Serialize};

use crate::association::{NeighborhoodSpec, PdaVolume};
use crate::error::{Error, Result};
use crate::image::{check_same_dims, DepthImage, FlowField, Grid};

/// Default MER channel thresholds.
pub const DEFAULT_THRESHOLDS: [f64; 6] = [0.5, 0.6, 0.7, 0.8, 0.9, 0.95];

/// One depth per pixel, with the association confidence that placed it there.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedDepth {
    pub depth: DepthImage,
    /// Zero wherever `depth` is invalid.
    pub confidence: Grid<f64>,
}

/// True when the candidate `(conf, depth)` beats the current `(cur_conf, cur_depth)`.
#[inline]
fn wins(conf: f64, depth: f64, cur_conf: f64, cur_depth: Option<f64>) -> bool {
    match cur_depth {
        None => true,
        Some(cd) => conf > cur_conf || (conf == cur_conf && depth < cd),
    }
}

/// Spreads every radar depth over its neighborhood.
///
/// Each radar pixel writes its depth with confidence `pda(i, j, k)` to neighbor
/// `k`. A pixel keeps the write with the highest confidence; equal confidences
/// keep the smaller depth. Pixels that receive no write stay invalid. Radar
/// pixels outside the volume's support write with confidence 0.
pub fn expand(radar: &DepthImage, pda: &PdaVolume, spec: &NeighborhoodSpec) -> Result<ExpandedDepth> {
    let (w, h) = radar.dims();
    if pda.shape() != (h, w, spec.len()) {
        return Err(Error::SizeMismatch {
            context: "expansion volume",
            expected: (h, w, spec.len()),
            actual: pda.shape(),
        });
    }
    if let Some(v) = pda.values().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidConfig(format!("association confidence {v} outside [0, 1]")));
    }
    let zeros = vec![0.0; spec.len()];
    let mut depth = DepthImage::new_invalid(w, h);
    let mut confidence = Grid::filled(w, h, 0.0);
    // The merge rule is a total order on (confidence, -depth), so the result
    // does not depend on the order radar pixels are visited in.
    for (col, row, d) in radar.iter_valid() {
        let slice = pda.slice(col, row).unwrap_or(&zeros);
        for (k, &conf) in slice.iter().enumerate() {
            let Some((c, r)) = spec.neighbor(col, row, k, w, h) else {
                continue;
            };
            if wins(conf, d, *confidence.get(c, r), depth.get(c, r)) {
                depth.set(c, r, d);
                confidence.set(c, r, conf);
            }
        }
    }
    Ok(ExpandedDepth { depth, confidence })
}

/// Nested depth channels, one per confidence threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct MerImage {
    pub thresholds: Vec<f64>,
    pub channels: Vec<DepthImage>,
    /// Image size, kept separately so a zero-channel MER still has dimensions.
    pub width: usize,
    pub height: usize,
}

pub fn validate_thresholds(thresholds: &[f64]) -> Result<()> {
    let in_range = thresholds.iter().all(|t| *t > 0.0 && *t < 1.0);
    let increasing = thresholds.windows(2).all(|p| p[0] < p[1]);
    if in_range && increasing {
        Ok(())
    } else {
        Err(Error::InvalidThresholds(thresholds.to_vec()))
    }
}

/// Channel `l` keeps the expanded depth wherever confidence is strictly above `thresholds[l]`.
pub fn build_mer(exp: &ExpandedDepth, thresholds: &[f64]) -> Result<MerImage> {
    validate_thresholds(thresholds)?;
    let (w, h) = exp.depth.dims();
    let channels = thresholds
        .iter()
        .map(|&t| {
            let mut ch = DepthImage::new_invalid(w, h);
            for (c, r, d) in exp.depth.iter_valid() {
                if *exp.confidence.get(c, r) > t {
                    ch.set(c, r, d);
                }
            }
            ch
        })
        .collect();
    Ok(MerImage {
        thresholds: thresholds.to_vec(),
        channels,
        width: w,
        height: h,
    })
}

impl MerImage {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.channels.iter().all(|c| c.is_empty())
    }

    /// Valid pixels per channel.
    pub fn areas(&self) -> Vec<usize> {
        self.channels.iter().map(|c| c.valid_count()).collect()
    }
}

/// Channel-first float32 feature stack handed to a completion stage.
///
/// Layout: raw radar depth, MER channels in threshold order, then optical
/// flow `u` and `v`. Invalid depth and flow are stored as 0.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub width: usize,
    pub height: usize,
    /// Thresholds of the MER channels included in the stack.
    pub thresholds: Vec<f64>,
    /// `channels * height * width` values.
    pub data: Vec<f32>,
}

impl FeatureStack {
    pub fn channel_count(&self) -> usize {
        1 + self.thresholds.len() + 2
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.width * self.height;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn raw_radar(&self) -> &[f32] {
        self.channel(0)
    }

    pub fn mer_channel(&self, l: usize) -> &[f32] {
        self.channel(1 + l)
    }

    pub fn flow_u(&self) -> &[f32] {
        self.channel(1 + self.thresholds.len())
    }

    pub fn flow_v(&self) -> &[f32] {
        self.channel(2 + self.thresholds.len())
    }
}

pub fn assemble_stage2_input(radar: &DepthImage, mer: &MerImage, flow: &FlowField) -> Result<FeatureStack> {
    let dims = radar.dims();
    check_same_dims("stack flow", dims, flow.dims())?;
    check_same_dims("stack MER", dims, (mer.width, mer.height))?;
    for ch in &mer.channels {
        check_same_dims("stack MER channel", dims, ch.dims())?;
    }
    let (w, h) = dims;
    let mut data = Vec::with_capacity((3 + mer.channels.len()) * w * h);
    data.extend(radar.values().iter().map(|&d| d as f32));
    for ch in &mer.channels {
        data.extend(ch.values().iter().map(|&d| d as f32));
    }
    for comp in 0..2 {
        for row in 0..h {
            for col in 0..w {
                data.push(flow.get(col, row).map_or(0.0, |f| f[comp] as f32));
            }
        }
    }
    Ok(FeatureStack {
        width: w,
        height: h,
        thresholds: mer.thresholds.clone(),
        data,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionConfig {
    /// Anchors blended per pixel.
    pub k: usize,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self { k: 8 }
    }
}

/// Completed depth, flagged when no anchor was available.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub depth: DepthImage,
    pub anchors: usize,
    /// True when the stack had no valid depth at all; `depth` is then all-invalid.
    pub no_anchors: bool,
}

#[derive(Debug, Clone, Copy)]
struct Anchor {
    col: usize,
    row: usize,
    depth: f64,
    weight: f64,
}

/// Anchors of a stack: MER pixels weighted by the highest threshold they pass,
/// or raw radar pixels with weight 1 when the MER is empty.
fn anchors(stack: &FeatureStack) -> Vec<Anchor> {
    let w = stack.width;
    let n_e = stack.thresholds.len();
    let mut out = Vec::new();
    if n_e > 0 {
        for (i, &d) in stack.mer_channel(0).iter().enumerate() {
            if d > 0.0 {
                let top = (0..n_e).rev().find(|&l| stack.mer_channel(l)[i] > 0.0).unwrap_or(0);
                out.push(Anchor {
                    col: i % w,
                    row: i / w,
                    depth: d as f64,
                    weight: stack.thresholds[top],
                });
            }
        }
    }
    if out.is_empty() {
        for (i, &d) in stack.raw_radar().iter().enumerate() {
            if d > 0.0 {
                out.push(Anchor {
                    col: i % w,
                    row: i / w,
                    depth: d as f64,
                    weight: 1.0,
                });
            }
        }
    }
    out
}

const BUCKET: usize = 16;

/// Uniform bucket grid for exact k-nearest-anchor queries in pixel space.
struct AnchorIndex {
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<u32>>,
}

impl AnchorIndex {
    fn new(width: usize, height: usize, anchors: &[Anchor]) -> Self {
        let cols = width.div_ceil(BUCKET);
        let rows = height.div_ceil(BUCKET);
        let mut buckets = vec![Vec::new(); cols * rows];
        for (i, a) in anchors.iter().enumerate() {
            buckets[(a.row / BUCKET) * cols + a.col / BUCKET].push(i as u32);
        }
        Self { cols, rows, buckets }
    }

    /// The `k` nearest anchors to `(col, row)` by squared distance, ties broken by anchor index.
    fn nearest(&self, anchors: &[Anchor], col: usize, row: usize, k: usize, out: &mut Vec<(u64, u32)>) {
        out.clear();
        let (bc, br) = ((col / BUCKET) as isize, (row / BUCKET) as isize);
        let max_ring = self.cols.max(self.rows) as isize;
        for ring in 0..=max_ring {
            for r in (br - ring)..=(br + ring) {
                for c in (bc - ring)..=(bc + ring) {
                    let on_ring = (r - br).abs() == ring || (c - bc).abs() == ring;
                    if !on_ring || r < 0 || c < 0 || r as usize >= self.rows || c as usize >= self.cols {
                        continue;
                    }
                    for &i in &self.buckets[r as usize * self.cols + c as usize] {
                        let a = &anchors[i as usize];
                        let dc = a.col as i64 - col as i64;
                        let dr = a.row as i64 - row as i64;
                        out.push(((dc * dc + dr * dr) as u64, i));
                    }
                }
            }
            if out.len() >= k {
                out.sort_unstable();
                out.truncate(k);
                // Anything outside the rings searched so far is at least this far away.
                let reach = (ring as u64) * BUCKET as u64;
                if out[k - 1].0 <= reach * reach {
                    return;
                }
            }
        }
        out.sort_unstable();
        out.truncate(k);
    }
}

/// Confidence-weighted inverse-distance blend of the `k` nearest anchors.
///
/// A pixel holding an anchor takes that anchor's depth exactly.
pub fn complete_depth_baseline(stack: &FeatureStack, cfg: &CompletionConfig) -> Result<Completion> {
    if cfg.k == 0 {
        return Err(Error::InvalidConfig("completion needs k >= 1".into()));
    }
    let (w, h) = (stack.width, stack.height);
    let anchors = anchors(stack);
    if anchors.is_empty() {
        return Ok(Completion {
            depth: DepthImage::new_invalid(w, h),
            anchors: 0,
            no_anchors: true,
        });
    }
    let k = cfg.k.min(anchors.len());
    let index = AnchorIndex::new(w, h, &anchors);
    use rayon::prelude::*;
    let values: Vec<f64> = (0..h)
        .into_par_iter()
        .flat_map_iter(|row| {
            let anchors = &anchors;
            let index = &index;
            let mut near = Vec::with_capacity(4 * k);
            (0..w)
                .map(move |col| {
                    index.nearest(anchors, col, row, k, &mut near);
                    if near[0].0 == 0 {
                        return anchors[near[0].1 as usize].depth;
                    }
                    let (mut num, mut den) = (0.0, 0.0);
                    for &(d2, i) in near.iter() {
                        let a = &anchors[i as usize];
                        let wt = a.weight / (d2 as f64).sqrt();
                        num += wt * a.depth;
                        den += wt;
                    }
                    num / den
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(Completion {
        depth: DepthImage::from_vec(w, h, values)?,
        anchors: anchors.len(),
        no_anchors: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::association::PdaVolume;
    use proptest::prelude::*;

    fn tiny_spec() -> NeighborhoodSpec {
        NeighborhoodSpec {
            up: 2,
            down: 1,
            left: 1,
            right: 1,
        }
    }

    fn volume_for(radar: &DepthImage, spec: &NeighborhoodSpec, f: impl Fn(usize, usize, usize) -> f64) -> PdaVolume {
        let w = radar.width();
        let support: Vec<u32> = radar.iter_valid().map(|(c, r, _)| (r * w + c) as u32).collect();
        let mut values = Vec::new();
        for &i in &support {
            for k in 0..spec.len() {
                values.push(f(i as usize % w, i as usize / w, k));
            }
        }
        PdaVolume::new(w, radar.height(), spec.len(), support, values).unwrap()
    }

    #[test]
    fn full_confidence_fills_neighborhood() {
        let spec = tiny_spec();
        let mut radar = DepthImage::new_invalid(8, 8);
        radar.set(4, 4, 12.5);
        let pda = volume_for(&radar, &spec, |_, _, _| 1.0);
        let e = expand(&radar, &pda, &spec).unwrap();
        assert_eq!(e.depth.valid_count(), spec.len());
        for k in 0..spec.len() {
            let (c, r) = spec.neighbor(4, 4, k, 8, 8).unwrap();
            assert_eq!(e.depth.get(c, r), Some(12.5));
            assert_eq!(*e.confidence.get(c, r), 1.0);
        }
    }

    #[test]
    fn max_confidence_and_tie_rules() {
        let spec = tiny_spec();
        let mut radar = DepthImage::new_invalid(8, 8);
        radar.set(3, 4, 10.0);
        radar.set(4, 4, 20.0);
        let pda = volume_for(&radar, &spec, |c, _, _| if c == 3 { 0.9 } else { 0.4 });
        let e = expand(&radar, &pda, &spec).unwrap();
        assert_eq!(e.depth.get(4, 3), Some(10.0));
        assert_eq!(*e.confidence.get(4, 3), 0.9);
        let pda = volume_for(&radar, &spec, |_, _, _| 0.7);
        let e = expand(&radar, &pda, &spec).unwrap();
        assert_eq!(e.depth.get(4, 3), Some(10.0));
        assert_eq!(e.depth.get(5, 3), Some(20.0));
    }

    #[test]
    fn channel_membership_is_strict() {
        let mut depth = DepthImage::new_invalid(2, 1);
        depth.set(0, 0, 5.0);
        depth.set(1, 0, 6.0);
        let confidence = Grid::from_vec(2, 1, vec![0.92, 0.9]).unwrap();
        let mer = build_mer(&ExpandedDepth { depth, confidence }, &DEFAULT_THRESHOLDS).unwrap();
        let present: Vec<bool> = mer.channels.iter().map(|c| c.is_valid(0, 0)).collect();
        assert_eq!(present, [true, true, true, true, true, false]);
        assert!(!mer.channels[4].is_valid(1, 0));
        assert!(mer.channels[3].is_valid(1, 0));
    }

    #[test]
    fn thresholds_must_increase() {
        assert!(validate_thresholds(&[0.5, 0.5]).is_err());
        assert!(validate_thresholds(&[0.6, 0.5]).is_err());
        assert!(validate_thresholds(&[0.0, 0.5]).is_err());
        assert!(validate_thresholds(&[0.5, 1.0]).is_err());
        assert!(validate_thresholds(&[]).is_ok());
    }

    #[test]
    fn stack_layout() {
        let radar = DepthImage::new_invalid(4, 3);
        let flow = FlowField::new_invalid(4, 3);
        let exp = ExpandedDepth {
            depth: radar.clone(),
            confidence: Grid::filled(4, 3, 0.0),
        };
        let mer = build_mer(&exp, &DEFAULT_THRESHOLDS).unwrap();
        assert_eq!(assemble_stage2_input(&radar, &mer, &flow).unwrap().channel_count(), 9);
        let empty = build_mer(&exp, &[]).unwrap();
        let s = assemble_stage2_input(&radar, &empty, &flow).unwrap();
        assert_eq!(s.channel_count(), 3);
        assert_eq!(s.data.len(), 3 * 12);
        assert!(assemble_stage2_input(&radar, &mer, &FlowField::new_invalid(3, 3)).is_err());
    }

    fn stack_with_raw(w: usize, h: usize, pts: &[(usize, usize, f64)]) -> FeatureStack {
        let mut radar = DepthImage::new_invalid(w, h);
        for &(c, r, d) in pts {
            radar.set(c, r, d);
        }
        let mer = MerImage {
            thresholds: vec![],
            channels: vec![],
            width: w,
            height: h,
        };
        assemble_stage2_input(&radar, &mer, &FlowField::new_invalid(w, h)).unwrap()
    }

    #[test]
    fn single_anchor_gives_constant_image() {
        let s = stack_with_raw(30, 20, &[(7, 3, 17.25)]);
        let c = complete_depth_baseline(&s, &CompletionConfig::default()).unwrap();
        assert!(!c.no_anchors);
        assert_eq!(c.depth.valid_count(), 600);
        // A single anchor is blended with itself only; division may cost one ulp.
        assert!(c.depth.values().iter().all(|&d| (d - 17.25).abs() <= 17.25 * 4.0 * f64::EPSILON));
    }

    #[test]
    fn plane_anchors_reproduce_plane() {
        let pts: Vec<_> = (0..40).map(|i| ((i * 37) % 100, (i * 11) % 60, 23.5)).collect();
        let s = stack_with_raw(100, 60, &pts);
        let c = complete_depth_baseline(&s, &CompletionConfig::default()).unwrap();
        assert!(c.depth.values().iter().all(|&d| (d - 23.5).abs() < 1e-9));
    }

    #[test]
    fn no_anchors_is_flagged() {
        let s = stack_with_raw(10, 10, &[]);
        let c = complete_depth_baseline(&s, &CompletionConfig::default()).unwrap();
        assert!(c.no_anchors);
        assert!(c.depth.is_empty());
    }

    /// Brute-force k nearest over all anchors with the same tie rule.
    fn brute_knn(anchors: &[Anchor], col: usize, row: usize, k: usize) -> Vec<(u64, u32)> {
        let mut all: Vec<(u64, u32)> = anchors
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let dc = a.col as i64 - col as i64;
                let dr = a.row as i64 - row as i64;
                ((dc * dc + dr * dr) as u64, i as u32)
            })
            .collect();
        all.sort_unstable();
        all.truncate(k);
        all
    }

    proptest! {
        #[test]
        fn bucket_knn_matches_brute_force(
            pts in proptest::collection::vec((0usize..120, 0usize..70), 1..60),
            k in 1usize..10,
            q in (0usize..120, 0usize..70),
        ) {
            let anchors: Vec<Anchor> = pts.iter().map(|&(col, row)| Anchor { col, row, depth: 1.0, weight: 1.0 }).collect();
            let index = AnchorIndex::new(120, 70, &anchors);
            let k = k.min(anchors.len());
            let mut out = Vec::new();
            index.nearest(&anchors, q.0, q.1, k, &mut out);
            prop_assert_eq!(out, brute_knn(&anchors, q.0, q.1, k));
        }

        #[test]
        fn channel_areas_non_increasing(confs in proptest::collection::vec(0.0f64..=1.0, 64)) {
            let depth = DepthImage::from_vec(8, 8, (0..64).map(|i| 1.0 + i as f64).collect()).unwrap();
            let confidence = Grid::from_vec(8, 8, confs).unwrap();
            let mer = build_mer(&ExpandedDepth { depth, confidence }, &DEFAULT_THRESHOLDS).unwrap();
            let areas = mer.areas();
            prop_assert!(areas.windows(2).all(|p| p[0] >= p[1]));
        }
    }
}
