//! Radar-camera pixel depth association: neighborhood layout, labels and
//! weights, the weighted binary cross-entropy loss, and reference predictors.
//!
//! An association volume has shape `H x W x N`: for every image pixel it holds
//! `N` values, one per neighbor in the [`NeighborhoodSpec`]. Only radar pixels
//! ever carry non-zero entries, so [`PdaVolume`] stores one slice per pixel in
//! its *support* and reads as zero everywhere else.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{check_same_dims, DepthImage, FlowField};

/// Rectangular neighborhood anchored at a radar pixel.
///
/// Offsets are `(di, dj)` in (row, column); negative `di` is above the anchor.
/// Channel `k` enumerates the rectangle row by row from the top-left:
/// `k = (di + up) * w + (dj + left)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborhoodSpec {
    pub up: usize,
    pub down: usize,
    pub left: usize,
    pub right: usize,
}

impl Default for NeighborhoodSpec {
    fn default() -> Self {
        Self {
            up: 30,
            down: 5,
            left: 2,
            right: 2,
        }
    }
}

impl NeighborhoodSpec {
    pub fn width(&self) -> usize {
        self.left + self.right + 1
    }

    pub fn height(&self) -> usize {
        self.up + self.down + 1
    }

    pub fn len(&self) -> usize {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `(di, dj)` of channel `k`.
    #[inline]
    pub fn offset(&self, k: usize) -> (isize, isize) {
        let w = self.width();
        ((k / w) as isize - self.up as isize, (k % w) as isize - self.left as isize)
    }

    /// Channel of offset `(di, dj)`, if it lies inside the rectangle.
    pub fn index(&self, di: isize, dj: isize) -> Option<usize> {
        let r = di + self.up as isize;
        let c = dj + self.left as isize;
        (r >= 0 && c >= 0 && (r as usize) < self.height() && (c as usize) < self.width())
            .then(|| r as usize * self.width() + c as usize)
    }

    /// Neighbor pixel `(col, row)` of an anchor for channel `k`, if on-image.
    #[inline]
    pub fn neighbor(&self, col: usize, row: usize, k: usize, width: usize, height: usize) -> Option<(usize, usize)> {
        let (di, dj) = self.offset(k);
        let r = row as isize + di;
        let c = col as isize + dj;
        (r >= 0 && c >= 0 && (r as usize) < height && (c as usize) < width).then_some((c as usize, r as usize))
    }
}

/// `H x W x N` volume stored as dense slices over a sorted pixel support.
#[derive(Debug, Clone, PartialEq)]
pub struct PdaVolume {
    width: usize,
    height: usize,
    n: usize,
    /// Raster indices (`row * width + col`), strictly increasing.
    support: Vec<u32>,
    /// `support.len() * n` values, slice-major.
    values: Vec<f64>,
}

impl PdaVolume {
    /// Volume with slices at `support` (raster indices, strictly increasing).
    pub fn new(width: usize, height: usize, n: usize, support: Vec<u32>, values: Vec<f64>) -> Result<Self> {
        if values.len() != support.len() * n {
            return Err(Error::SizeMismatch {
                context: "association volume values",
                expected: (support.len(), n, 1),
                actual: (values.len(), 1, 1),
            });
        }
        if support.windows(2).any(|p| p[0] >= p[1]) || support.last().is_some_and(|&i| i as usize >= width * height) {
            return Err(Error::InvalidConfig(
                "association volume support must be strictly increasing and inside the image".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            n,
            support,
            values,
        })
    }

    /// Every pixel in the support, values in HWN order.
    pub fn dense(width: usize, height: usize, n: usize, values: Vec<f64>) -> Result<Self> {
        let support = (0..(width * height) as u32).collect();
        Self::new(width, height, n, support, values)
    }

    pub fn zeros_like(other: &PdaVolume) -> Self {
        Self {
            values: vec![0.0; other.values.len()],
            ..other.clone()
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.n
    }

    /// `(height, width, channels)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.n)
    }

    pub fn support(&self) -> &[u32] {
        &self.support
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// `(col, row, slice)` for each supported pixel in raster order.
    pub fn slices(&self) -> impl Iterator<Item = (usize, usize, &[f64])> + '_ {
        let w = self.width;
        self.support
            .iter()
            .zip(self.values.chunks_exact(self.n.max(1)))
            .map(move |(&i, s)| (i as usize % w, i as usize / w, s))
    }

    pub fn slice(&self, col: usize, row: usize) -> Option<&[f64]> {
        let i = (row * self.width + col) as u32;
        self.support
            .binary_search(&i)
            .ok()
            .map(|s| &self.values[s * self.n..(s + 1) * self.n])
    }

    /// Value at `(col, row, k)`; zero outside the support.
    pub fn get(&self, col: usize, row: usize, k: usize) -> f64 {
        self.slice(col, row).map_or(0.0, |s| s[k])
    }

    /// Dense `H x W x N` values with `k` fastest.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.width * self.height * self.n];
        for (&i, s) in self.support.iter().zip(self.values.chunks_exact(self.n.max(1))) {
            let start = i as usize * self.n;
            out[start..start + self.n].copy_from_slice(s);
        }
        out
    }

    fn same_layout(&self, other: &PdaVolume, context: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::SizeMismatch {
                context,
                expected: self.shape(),
                actual: other.shape(),
            });
        }
        if self.support != other.support {
            return Err(Error::InvalidConfig(format!("{context}: volumes have different pixel support")));
        }
        Ok(())
    }
}

/// Absolute and relative depth-agreement thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelParams {
    /// Meters.
    pub t_a: f64,
    pub t_r: f64,
}

impl Default for LabelParams {
    fn default() -> Self {
        Self { t_a: 1.0, t_r: 0.05 }
    }
}

impl LabelParams {
    pub fn validate(&self) -> Result<()> {
        if self.t_a > 0.0 && self.t_r > 0.0 && self.t_a.is_finite() && self.t_r.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "label thresholds must be positive and finite, got t_a={} t_r={}",
                self.t_a, self.t_r
            )))
        }
    }

    /// Positive label test for radar depth `d` against truth depth `d_t`.
    #[inline]
    pub fn agrees(&self, d: f64, d_t: f64) -> bool {
        let e = (d - d_t).abs();
        e < self.t_a && e / d < self.t_r
    }

    /// Largest depth error still labeled positive, as a bound: `min(t_a, t_r * d)`.
    #[inline]
    pub fn tolerance(&self, d: f64) -> f64 {
        self.t_a.min(self.t_r * d)
    }
}

/// Label and weight volumes over the radar pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    pub labels: PdaVolume,
    pub weights: PdaVolume,
}

/// Raster indices of the valid pixels of `radar`.
fn radar_support(radar: &DepthImage) -> Vec<u32> {
    let w = radar.width();
    radar.iter_valid().map(|(c, r, _)| (r * w + c) as u32).collect()
}

/// Builds association labels and weights for every radar pixel.
///
/// For a radar pixel with depth `d` and an on-image neighbor with truth depth
/// `d_t`, the weight is 1 and the label is 1 iff `|d - d_t| < t_a` and
/// `|d - d_t| / d < t_r`. Neighbors without truth or outside the image get
/// weight 0 and label 0.
pub fn compute_labels(
    radar: &DepthImage,
    truth: &DepthImage,
    spec: &NeighborhoodSpec,
    params: &LabelParams,
) -> Result<Labels> {
    check_same_dims("label generation", radar.dims(), truth.dims())?;
    params.validate()?;
    let (w, h) = radar.dims();
    let n = spec.len();
    let support = radar_support(radar);
    let slices: Vec<(Vec<f64>, Vec<f64>)> = support
        .par_iter()
        .map(|&i| {
            let (col, row) = (i as usize % w, i as usize / w);
            let d = radar.raw(col, row);
            let mut a = vec![0.0; n];
            let mut wt = vec![0.0; n];
            for k in 0..n {
                let Some((c, r)) = spec.neighbor(col, row, k, w, h) else {
                    continue;
                };
                let Some(d_t) = truth.get(c, r) else { continue };
                wt[k] = 1.0;
                if params.agrees(d, d_t) {
                    a[k] = 1.0;
                }
            }
            (a, wt)
        })
        .collect();
    let (a, wt): (Vec<_>, Vec<_>) = slices.into_iter().unzip();
    Ok(Labels {
        labels: PdaVolume::new(w, h, n, support.clone(), a.concat())?,
        weights: PdaVolume::new(w, h, n, support, wt.concat())?,
    })
}

/// Loss value and its normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BceLoss {
    pub sum: f64,
    /// `sum` divided by the number of non-zero weights (0 when there are none).
    pub mean: f64,
    pub active: usize,
}

#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `sum w * (-A z + log(1 + e^z))` over all entries with non-zero weight.
pub fn weighted_bce(z: &PdaVolume, labels: &PdaVolume, weights: &PdaVolume) -> Result<BceLoss> {
    z.same_layout(labels, "loss labels")?;
    z.same_layout(weights, "loss weights")?;
    let mut sum = 0.0;
    let mut active = 0;
    for ((&z, &a), &w) in z.values.iter().zip(&labels.values).zip(&weights.values) {
        if w == 0.0 {
            continue;
        }
        active += 1;
        sum += w * (softplus(z) - a * z);
    }
    Ok(BceLoss {
        sum,
        mean: if active > 0 { sum / active as f64 } else { 0.0 },
        active,
    })
}

/// Gradient of [`weighted_bce`]'s `sum` with respect to `z`: `w * (sigmoid(z) - A)`.
pub fn weighted_bce_grad(z: &PdaVolume, labels: &PdaVolume, weights: &PdaVolume) -> Result<PdaVolume> {
    z.same_layout(labels, "loss labels")?;
    z.same_layout(weights, "loss weights")?;
    let mut g = PdaVolume::zeros_like(z);
    for (i, gi) in g.values.iter_mut().enumerate() {
        let w = weights.values[i];
        if w != 0.0 {
            *gi = w * (sigmoid(z.values[i]) - labels.values[i]);
        }
    }
    Ok(g)
}

pub fn sigmoid_scores(z: &PdaVolume) -> PdaVolume {
    let mut out = z.clone();
    out.values.iter_mut().for_each(|v| *v = sigmoid(*v));
    out
}

/// Lower clip applied to probabilities before taking logs.
pub const PROBABILITY_EPSILON: f64 = 1e-7;

/// Log-odds of probabilities clipped to `[eps, 1 - eps]`.
pub fn logits_from_probabilities(p: &PdaVolume) -> PdaVolume {
    let mut out = p.clone();
    for v in out.values.iter_mut() {
        let q = v.clamp(PROBABILITY_EPSILON, 1.0 - PROBABILITY_EPSILON);
        *v = (q / (1.0 - q)).ln();
    }
    out
}

/// Weighted cross-entropy of a probability volume, evaluated with labels'
/// layout. Slices missing from `p` count as probability 0.
pub fn probability_loss(p: &PdaVolume, labels: &Labels) -> Result<BceLoss> {
    let aligned = align_to(p, &labels.labels)?;
    weighted_bce(&logits_from_probabilities(&aligned), &labels.labels, &labels.weights)
}

/// Re-expresses `p` on the pixel support of `layout`.
pub fn align_to(p: &PdaVolume, layout: &PdaVolume) -> Result<PdaVolume> {
    if p.shape() != layout.shape() {
        return Err(Error::SizeMismatch {
            context: "association volume alignment",
            expected: layout.shape(),
            actual: p.shape(),
        });
    }
    if p.support == layout.support {
        return Ok(p.clone());
    }
    let mut out = PdaVolume::zeros_like(layout);
    let n = layout.n;
    for (s, &i) in layout.support.iter().enumerate() {
        let (col, row) = (i as usize % layout.width, i as usize / layout.width);
        if let Some(src) = p.slice(col, row) {
            out.values[s * n..(s + 1) * n].copy_from_slice(src);
        }
    }
    Ok(out)
}

/// Upper-bound predictor: the exact labels against dense truth, as probabilities.
pub fn oracle_predictor(
    radar: &DepthImage,
    truth: &DepthImage,
    spec: &NeighborhoodSpec,
    params: &LabelParams,
) -> Result<PdaVolume> {
    Ok(compute_labels(radar, truth, spec, params)?.labels)
}

/// Noise model of the degraded oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisyOracleConfig {
    /// Logit slope against the normalized depth error.
    pub sharpness: f64,
    /// Standard deviation of the logit noise.
    pub noise: f64,
}

impl Default for NoisyOracleConfig {
    fn default() -> Self {
        Self {
            sharpness: 4.0,
            noise: 1.0,
        }
    }
}

/// RNG stream of the noisy oracle.
pub const STREAM_NOISY_ORACLE: u64 = 3 << 32;

/// Oracle confidences degraded by a smooth error response and logit noise.
///
/// With `r = |d - d_t| / min(t_a, t_r d)` (so `r < 1` exactly when the label is
/// positive) the confidence is `sigmoid(sharpness * (1 - r) + noise * xi)`,
/// `xi ~ N(0, 1)`. Neighbors without truth get 0. Confidence therefore decreases
/// with depth error on average, which is what a trained predictor approximates.
pub fn noisy_oracle_predictor(
    radar: &DepthImage,
    truth: &DepthImage,
    spec: &NeighborhoodSpec,
    params: &LabelParams,
    cfg: &NoisyOracleConfig,
    seed: u64,
) -> Result<PdaVolume> {
    check_same_dims("noisy oracle", radar.dims(), truth.dims())?;
    params.validate()?;
    if !(cfg.sharpness > 0.0 && cfg.noise >= 0.0 && cfg.sharpness.is_finite() && cfg.noise.is_finite()) {
        return Err(Error::InvalidConfig(format!("invalid noisy oracle parameters {cfg:?}")));
    }
    let (w, h) = radar.dims();
    let n = spec.len();
    let support = radar_support(radar);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_NOISY_ORACLE);
    let mut values = vec![0.0; support.len() * n];
    for (s, &i) in support.iter().enumerate() {
        let (col, row) = (i as usize % w, i as usize / w);
        let d = radar.raw(col, row);
        for k in 0..n {
            // Draw for every channel so the stream position never depends on truth coverage.
            let xi: f64 = StandardNormal.sample(&mut rng);
            let Some((c, r)) = spec.neighbor(col, row, k, w, h) else {
                continue;
            };
            let Some(d_t) = truth.get(c, r) else { continue };
            let ratio = (d - d_t).abs() / params.tolerance(d);
            values[s * n + k] = sigmoid(cfg.sharpness * (1.0 - ratio) + cfg.noise * xi);
        }
    }
    PdaVolume::new(w, h, n, support, values)
}

/// Parameters of the flow-gated distance-decay predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeuristicConfig {
    /// Pixels.
    pub flow_gate: f64,
    /// Per pixel of neighbor distance.
    pub decay: f64,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            flow_gate: 3.0,
            decay: 0.01,
        }
    }
}

/// Hand-crafted predictor: `exp(-decay * |offset|)` for radar pixels whose
/// radar flow agrees with the optical flow within `flow_gate`, zeros otherwise.
pub fn heuristic_predictor(
    radar: &DepthImage,
    radar_flow: &FlowField,
    optical_flow: &FlowField,
    spec: &NeighborhoodSpec,
    cfg: &HeuristicConfig,
) -> Result<PdaVolume> {
    check_same_dims("heuristic radar flow", radar.dims(), radar_flow.dims())?;
    check_same_dims("heuristic optical flow", radar.dims(), optical_flow.dims())?;
    if !(cfg.flow_gate > 0.0 && cfg.decay >= 0.0) {
        return Err(Error::InvalidConfig(format!("invalid heuristic parameters {cfg:?}")));
    }
    let (w, h) = radar.dims();
    let n = spec.len();
    let profile: Vec<f64> = (0..n)
        .map(|k| {
            let (di, dj) = spec.offset(k);
            (-cfg.decay * ((di * di + dj * dj) as f64).sqrt()).exp()
        })
        .collect();
    let support = radar_support(radar);
    let mut values = vec![0.0; support.len() * n];
    for (s, &i) in support.iter().enumerate() {
        let (col, row) = (i as usize % w, i as usize / w);
        let (Some(rf), Some(of)) = (radar_flow.get(col, row), optical_flow.get(col, row)) else {
            continue;
        };
        if (rf[0] - of[0]).hypot(rf[1] - of[1]) > cfg.flow_gate {
            continue;
        }
        values[s * n..(s + 1) * n].copy_from_slice(&profile);
    }
    PdaVolume::new(w, h, n, support, values)
}

/// Predictor producing the same constant for every channel of every radar pixel.
pub fn constant_predictor(radar: &DepthImage, spec: &NeighborhoodSpec, value: f64) -> Result<PdaVolume> {
    let support = radar_support(radar);
    let n = spec.len();
    let len = support.len() * n;
    PdaVolume::new(radar.width(), radar.height(), n, support, vec![value; len])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(d: f64, d_t: f64) -> f64 {
        let mut radar = DepthImage::new_invalid(5, 5);
        radar.set(2, 2, d);
        let truth = DepthImage::from_vec(5, 5, vec![d_t; 25]).unwrap();
        let spec = NeighborhoodSpec {
            up: 0,
            down: 0,
            left: 0,
            right: 0,
        };
        compute_labels(&radar, &truth, &spec, &LabelParams::default()).unwrap().labels.get(2, 2, 0)
    }

    #[test]
    fn default_layout() {
        let spec = NeighborhoodSpec::default();
        assert_eq!((spec.width(), spec.height(), spec.len()), (5, 36, 180));
        assert_eq!(spec.offset(0), (-30, -2));
        assert_eq!(spec.offset(179), (5, 2));
        let center = spec.index(0, 0).unwrap();
        assert_eq!(center, 152);
        for k in 0..spec.len() {
            let (di, dj) = spec.offset(k);
            assert_eq!(spec.index(di, dj), Some(k));
        }
        assert_eq!(spec.index(-31, 0), None);
    }

    #[test]
    fn label_examples() {
        assert_eq!(single(10.0, 10.4), 1.0);
        assert_eq!(single(10.0, 10.8), 0.0);
        assert_eq!(single(40.0, 40.9), 1.0);
        // Ties at a threshold are negative.
        assert_eq!(single(20.0, 21.0), 0.0);
        assert_eq!(single(10.0, 10.5), 0.0);
    }

    #[test]
    fn weights_cover_truth_and_image() {
        let spec = NeighborhoodSpec::default();
        let mut radar = DepthImage::new_invalid(10, 10);
        radar.set(0, 0, 10.0);
        let mut truth = DepthImage::new_invalid(10, 10);
        truth.set(1, 3, 10.0);
        truth.set(2, 3, 30.0);
        let l = compute_labels(&radar, &truth, &spec, &LabelParams::default()).unwrap();
        let ones: Vec<usize> = (0..spec.len()).filter(|&k| l.weights.get(0, 0, k) == 1.0).collect();
        assert_eq!(ones, vec![spec.index(3, 1).unwrap(), spec.index(3, 2).unwrap()]);
        assert_eq!(l.labels.get(0, 0, spec.index(3, 1).unwrap()), 1.0);
        assert_eq!(l.labels.get(0, 0, spec.index(3, 2).unwrap()), 0.0);
        // Non-radar pixels read as zero.
        assert_eq!(l.weights.get(5, 5, 0), 0.0);
        assert!(compute_labels(&radar, &DepthImage::new_invalid(9, 10), &spec, &LabelParams::default()).is_err());
    }

    fn scalar(z: f64, a: f64, w: f64) -> f64 {
        let v = |x| PdaVolume::dense(1, 1, 1, vec![x]).unwrap();
        weighted_bce(&v(z), &v(a), &v(w)).unwrap().sum
    }

    #[test]
    fn loss_examples() {
        assert!((scalar(0.0, 1.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(scalar(50.0, 1.0, 1.0) < 1e-20);
        assert!((scalar(50.0, 0.0, 1.0) - 50.0).abs() < 1e-12);
        assert!((scalar(-50.0, 1.0, 1.0) - 50.0).abs() < 1e-12);
        for z in [1e6, -1e6, 10.0] {
            assert_eq!(scalar(z, 1.0, 0.0), 0.0);
            assert_eq!(scalar(z, 0.0, 0.0), 0.0);
        }
    }

    #[test]
    fn zero_weight_mean_is_zero() {
        let v = PdaVolume::dense(2, 1, 1, vec![3.0, -3.0]).unwrap();
        let w = PdaVolume::dense(2, 1, 1, vec![0.0, 0.0]).unwrap();
        let l = weighted_bce(&v, &v, &w).unwrap();
        assert_eq!((l.sum, l.mean, l.active), (0.0, 0.0, 0));
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(1e3), 1.0);
        assert_eq!(sigmoid(-1e3), 0.0);
        for i in -400..=400 {
            let z = i as f64 * 0.1;
            assert!((sigmoid(z) - (1.0 - sigmoid(-z))).abs() <= 1e-15);
        }
    }

    #[test]
    fn oracle_loss_is_near_zero() {
        let spec = NeighborhoodSpec::default();
        let mut radar = DepthImage::new_invalid(40, 60);
        radar.set(10, 40, 12.0);
        radar.set(30, 35, 25.0);
        let truth = DepthImage::from_vec(40, 60, (0..2400).map(|i| 10.0 + (i % 40) as f64 * 0.5).collect()).unwrap();
        let params = LabelParams::default();
        let labels = compute_labels(&radar, &truth, &spec, &params).unwrap();
        let oracle = oracle_predictor(&radar, &truth, &spec, &params).unwrap();
        let loss = probability_loss(&oracle, &labels).unwrap();
        assert!(loss.active > 0);
        assert!(loss.mean < 1e-6, "{loss:?}");
    }

    #[test]
    fn heuristic_gate_and_center() {
        let spec = NeighborhoodSpec::default();
        let mut radar = DepthImage::new_invalid(20, 40);
        radar.set(5, 35, 12.0);
        radar.set(15, 35, 30.0);
        let mut rf = FlowField::new_invalid(20, 40);
        let mut of = FlowField::new_invalid(20, 40);
        rf.set(5, 35, [1.0, 0.0]);
        of.set(5, 35, [1.0, 0.0]);
        rf.set(15, 35, [1.0, 0.0]);
        of.set(15, 35, [6.0, 0.0]);
        let cfg = HeuristicConfig {
            flow_gate: 3.0,
            decay: 0.05,
        };
        let p = heuristic_predictor(&radar, &rf, &of, &spec, &cfg).unwrap();
        assert_eq!(p.get(5, 35, spec.index(0, 0).unwrap()), 1.0);
        assert!((p.get(5, 35, spec.index(-10, 0).unwrap()) - (-0.5f64).exp()).abs() < 1e-15);
        assert!(p.slice(15, 35).unwrap().iter().all(|v| *v == 0.0));
        // Missing flow: zeros.
        radar.set(10, 10, 8.0);
        let p = heuristic_predictor(&radar, &rf, &of, &spec, &HeuristicConfig::default()).unwrap();
        assert!(p.slice(10, 10).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn noisy_oracle_is_reproducible_and_bounded() {
        let spec = NeighborhoodSpec::default();
        let mut radar = DepthImage::new_invalid(30, 50);
        radar.set(10, 40, 12.0);
        let truth = DepthImage::from_vec(30, 50, vec![12.2; 1500]).unwrap();
        let cfg = NoisyOracleConfig::default();
        let params = LabelParams::default();
        let a = noisy_oracle_predictor(&radar, &truth, &spec, &params, &cfg, 5).unwrap();
        let b = noisy_oracle_predictor(&radar, &truth, &spec, &params, &cfg, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    proptest! {
        // Labels follow the conjunction of the two threshold tests in all four quadrants.
        #[test]
        fn label_quadrants(d in 1.0f64..80.0, abs_ok in any::<bool>(), rel_ok in any::<bool>(), sign in any::<bool>()) {
            let p = LabelParams::default();
            // Pick |E| in the requested quadrant when the quadrant exists at this depth.
            let rel_bound = p.t_r * d;
            let candidates: Vec<f64> = [0.25, 0.5, 0.75, 0.99, 1.01, 1.5, 2.0, 3.0]
                .iter()
                .flat_map(|f| [f * p.t_a, f * rel_bound])
                .filter(|e| (*e < p.t_a) == abs_ok && (*e < rel_bound) == rel_ok)
                .collect();
            prop_assume!(!candidates.is_empty());
            let e = candidates[0];
            let d_t = if sign { d + e } else { d - e };
            prop_assume!(d_t > 0.0);
            let e_actual = (d - d_t).abs();
            let expect = e_actual < p.t_a && e_actual / d < p.t_r;
            prop_assert_eq!(single(d, d_t) == 1.0, expect);
        }
    }
}
