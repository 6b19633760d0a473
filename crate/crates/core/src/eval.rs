//! Depth metrics, evaluation regions, MER area/error curves and discard rates.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::association::PdaVolume;
use crate::error::{Error, Result};
use crate::image::{check_same_dims, DepthImage, Grid, Mask};
use crate::mer::MerImage;

/// Error statistics over a non-empty pixel set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mae: f64,
    pub abs_rel: f64,
    pub rmse: f64,
    /// Natural-log RMSE.
    pub rmse_log: f64,
}

/// Metrics over the pixels valid in both prediction and truth (and in the region).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_pixels: usize,
    /// `None` when no pixel qualified.
    pub stats: Option<MetricStats>,
}

impl MetricReport {
    pub fn is_empty(&self) -> bool {
        self.n_pixels == 0
    }

    pub fn mae(&self) -> Option<f64> {
        self.stats.map(|s| s.mae)
    }
}

/// Running sums for pooling metrics over many pixels or images.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricAccumulator {
    n: usize,
    abs: f64,
    rel: f64,
    sq: f64,
    log_sq: f64,
}

impl MetricAccumulator {
    pub fn push(&mut self, pred: f64, truth: f64) {
        let e = pred - truth;
        self.n += 1;
        self.abs += e.abs();
        self.rel += e.abs() / truth;
        self.sq += e * e;
        let l = pred.ln() - truth.ln();
        self.log_sq += l * l;
    }

    pub fn merge(&mut self, other: &MetricAccumulator) {
        self.n += other.n;
        self.abs += other.abs;
        self.rel += other.rel;
        self.sq += other.sq;
        self.log_sq += other.log_sq;
    }

    pub fn report(&self) -> MetricReport {
        if self.n == 0 {
            return MetricReport {
                n_pixels: 0,
                stats: None,
            };
        }
        let n = self.n as f64;
        let mae = self.abs / n;
        // Rounding could leave sqrt(mean e^2) a hair below mean |e| when all errors are equal.
        let rmse = (self.sq / n).sqrt().max(mae);
        MetricReport {
            n_pixels: self.n,
            stats: Some(MetricStats {
                mae,
                abs_rel: self.rel / n,
                rmse,
                rmse_log: (self.log_sq / n).sqrt(),
            }),
        }
    }
}

fn accumulate(pred: &DepthImage, truth: &DepthImage, mask: Option<&Mask>) -> Result<MetricAccumulator> {
    check_same_dims("metric truth", pred.dims(), truth.dims())?;
    if let Some(m) = mask {
        check_same_dims("metric region", pred.dims(), (m.width(), m.height()))?;
    }
    let mut acc = MetricAccumulator::default();
    for (c, r, p) in pred.iter_valid() {
        if mask.is_some_and(|m| !m.get(c, r)) {
            continue;
        }
        if let Some(t) = truth.get(c, r) {
            acc.push(p, t);
        }
    }
    Ok(acc)
}

pub fn depth_metrics(pred: &DepthImage, truth: &DepthImage, mask: Option<&Mask>) -> Result<MetricReport> {
    Ok(accumulate(pred, truth, mask)?.report())
}

/// Pixels whose expanded confidence is strictly above `level`.
pub fn region_pda(confidence: &Grid<f64>, level: f64) -> Mask {
    Mask(confidence.map(|c| *c > level))
}

/// Bounds of the low-height band above ground, meters.
pub const LOW_HEIGHT_BAND: (f64, f64) = (0.3, 2.0);

/// Pixels whose visible point lies 0.3 m to 2 m above ground; NaN heights are excluded.
pub fn region_low_height(height: &Grid<f64>) -> Mask {
    let (lo, hi) = LOW_HEIGHT_BAND;
    Mask(height.map(|h| *h >= lo && *h <= hi))
}

/// One row of the MER area/error table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub threshold: f64,
    /// Valid pixels per image, averaged over images.
    pub mean_area: f64,
    /// Pooled over all valid MER pixels with truth; `None` when there were none.
    pub mae: Option<f64>,
    pub n_pixels: usize,
}

/// Per-threshold area and MAE of MER channels against truth, over a set of images.
pub fn pda_curve(items: &[(&MerImage, &DepthImage)]) -> Result<Vec<CurveRow>> {
    let Some((first, _)) = items.first() else {
        return Err(Error::Empty("no images for the MER curve".into()));
    };
    let thresholds = first.thresholds.clone();
    if items.iter().any(|(m, _)| m.thresholds != thresholds) {
        return Err(Error::InvalidConfig("MER images use different thresholds".into()));
    }
    let mut rows = Vec::with_capacity(thresholds.len());
    for (l, &t) in thresholds.iter().enumerate() {
        let mut acc = MetricAccumulator::default();
        let mut area = 0usize;
        for (mer, truth) in items {
            let ch = &mer.channels[l];
            area += ch.valid_count();
            acc.merge(&accumulate(ch, truth, None)?);
        }
        let report = acc.report();
        rows.push(CurveRow {
            threshold: t,
            mean_area: area as f64 / items.len() as f64,
            mae: report.mae(),
            n_pixels: report.n_pixels,
        });
    }
    Ok(rows)
}

/// A labeled curve row, as stored in curve CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub series: String,
    pub threshold: f64,
    pub mean_area: f64,
    pub mae: Option<f64>,
    pub n_pixels: usize,
}

pub fn write_curve_csv<W: Write>(out: W, series: &[(&str, &[CurveRow])]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (name, rows) in series {
        for r in *rows {
            w.serialize(CurveRecord {
                series: name.to_string(),
                threshold: r.threshold,
                mean_area: r.mean_area,
                mae: r.mae,
                n_pixels: r.n_pixels,
            })
            .map_err(|e| Error::format("curve CSV", e.to_string()))?;
        }
    }
    w.flush().map_err(|e| Error::format("curve CSV", e.to_string()))?;
    Ok(())
}

pub fn read_curve_csv<R: std::io::Read>(input: R) -> Result<Vec<CurveRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<CurveRecord>, _>>()
        .map_err(|e| Error::format("curve CSV", e.to_string()))?;
    if rows.is_empty() {
        return Err(Error::Empty("curve CSV has no rows".into()));
    }
    Ok(rows)
}

/// Fraction of radar pixels whose best association confidence is below `t1`.
///
/// `None` when the volume has no radar pixels.
pub fn discard_rate(pda: &PdaVolume, t1: f64) -> Option<f64> {
    let total = pda.support().len();
    if total == 0 {
        return None;
    }
    let discarded = pda
        .slices()
        .filter(|(_, _, s)| s.iter().copied().fold(f64::NEG_INFINITY, f64::max) < t1)
        .count();
    Some(discarded as f64 / total as f64)
}

/// One evaluation row: an image, a region and a method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub image: String,
    pub region: String,
    pub method: String,
    pub n_pixels: usize,
    pub mae: Option<f64>,
    pub abs_rel: Option<f64>,
    pub rmse: Option<f64>,
    pub rmse_log: Option<f64>,
}

impl EvalRow {
    pub fn new(image: &str, region: &str, method: &str, report: &MetricReport) -> Self {
        Self {
            image: image.into(),
            region: region.into(),
            method: method.into(),
            n_pixels: report.n_pixels,
            mae: report.stats.map(|s| s.mae),
            abs_rel: report.stats.map(|s| s.abs_rel),
            rmse: report.stats.map(|s| s.rmse),
            rmse_log: report.stats.map(|s| s.rmse_log),
        }
    }
}

pub fn write_rows_csv<W: Write>(out: W, rows: &[EvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::format("evaluation CSV", e.to_string()))?;
    }
    w.flush().map_err(|e| Error::format("evaluation CSV", e.to_string()))?;
    Ok(())
}

/// Pools metrics per `(region, method)` across images, for the JSON summary.
#[derive(Debug, Clone, Default)]
pub struct Summary {
    pooled: BTreeMap<(String, String), MetricAccumulator>,
}

impl Summary {
    pub fn add(
        &mut self,
        region: &str,
        method: &str,
        pred: &DepthImage,
        truth: &DepthImage,
        mask: Option<&Mask>,
    ) -> Result<MetricReport> {
        let acc = accumulate(pred, truth, mask)?;
        self.pooled
            .entry((region.to_string(), method.to_string()))
            .or_default()
            .merge(&acc);
        Ok(acc.report())
    }

    /// `region -> method -> report`.
    pub fn reports(&self) -> BTreeMap<String, BTreeMap<String, MetricReport>> {
        let mut out: BTreeMap<String, BTreeMap<String, MetricReport>> = BTreeMap::new();
        for ((region, method), acc) in &self.pooled {
            out.entry(region.clone()).or_default().insert(method.clone(), acc.report());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn metric_examples() {
        let truth = DepthImage::from_vec(3, 2, vec![10.0; 6]).unwrap();
        let r = depth_metrics(&truth, &truth, None).unwrap();
        let s = r.stats.unwrap();
        assert_eq!((r.n_pixels, s.mae, s.abs_rel, s.rmse, s.rmse_log), (6, 0.0, 0.0, 0.0, 0.0));
        let pred = DepthImage::from_vec(3, 2, vec![11.0; 6]).unwrap();
        let s = depth_metrics(&pred, &truth, None).unwrap().stats.unwrap();
        assert!((s.mae - 1.0).abs() < 1e-15);
        assert!((s.abs_rel - 0.1).abs() < 1e-15);
        assert!((s.rmse - 1.0).abs() < 1e-15);
        assert!((s.rmse_log - 1.1f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn empty_sets_report_zero_pixels() {
        let a = DepthImage::new_invalid(4, 4);
        let b = DepthImage::from_vec(4, 4, vec![5.0; 16]).unwrap();
        let r = depth_metrics(&a, &b, None).unwrap();
        assert!(r.is_empty() && r.stats.is_none());
        let none = Mask::new(4, 4, false);
        assert!(depth_metrics(&b, &b, Some(&none)).unwrap().is_empty());
        assert!(depth_metrics(&b, &DepthImage::new_invalid(3, 4), None).is_err());
    }

    #[test]
    fn region_examples() {
        assert_eq!(region_pda(&Grid::filled(3, 3, 0.95), 0.9).count(), 9);
        assert_eq!(region_pda(&Grid::filled(3, 3, 0.9), 0.9).count(), 0);
        let h = Grid::from_vec(5, 1, vec![0.0, 0.3, 1.0, 2.0, f64::NAN]).unwrap();
        let m = region_low_height(&h);
        assert_eq!((0..5).map(|c| m.get(c, 0)).collect::<Vec<_>>(), [false, true, true, true, false]);
    }

    #[test]
    fn discard_rate_examples() {
        let zeros = PdaVolume::new(4, 4, 3, vec![1, 5, 9], vec![0.0; 9]).unwrap();
        assert_eq!(discard_rate(&zeros, 0.5), Some(1.0));
        let ones = PdaVolume::new(4, 4, 3, vec![1, 5, 9], vec![1.0; 9]).unwrap();
        assert_eq!(discard_rate(&ones, 0.5), Some(0.0));
        let none = PdaVolume::new(4, 4, 3, vec![], vec![]).unwrap();
        assert_eq!(discard_rate(&none, 0.5), None);
    }

    #[test]
    fn empty_mer_curve() {
        let mer = MerImage {
            thresholds: vec![0.5, 0.9],
            channels: vec![DepthImage::new_invalid(4, 4), DepthImage::new_invalid(4, 4)],
            width: 4,
            height: 4,
        };
        let truth = DepthImage::from_vec(4, 4, vec![3.0; 16]).unwrap();
        let rows = pda_curve(&[(&mer, &truth)]).unwrap();
        assert!(rows.iter().all(|r| r.mean_area == 0.0 && r.mae.is_none() && r.n_pixels == 0));
        assert!(pda_curve(&[]).is_err());
    }

    #[test]
    fn curve_csv_round_trip() {
        let rows = [
            CurveRow { threshold: 0.5, mean_area: 120.5, mae: Some(0.25), n_pixels: 241 },
            CurveRow { threshold: 0.9, mean_area: 0.0, mae: None, n_pixels: 0 },
        ];
        let mut buf = Vec::new();
        write_curve_csv(&mut buf, &[("oracle", &rows)]).unwrap();
        let back = read_curve_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].series, "oracle");
        assert_eq!(back[0].mae, Some(0.25));
        assert_eq!(back[1].mae, None);
        assert!(read_curve_csv("series,threshold,mean_area,mae,n_pixels\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn metrics_are_permutation_invariant_and_ordered(
            vals in proptest::collection::vec((0.5f64..80.0, 0.5f64..80.0), 1..64),
            seed in any::<u64>(),
        ) {
            let n = vals.len();
            let pred = DepthImage::from_vec(n, 1, vals.iter().map(|v| v.0).collect()).unwrap();
            let truth = DepthImage::from_vec(n, 1, vals.iter().map(|v| v.1).collect()).unwrap();
            let a = depth_metrics(&pred, &truth, None).unwrap().stats.unwrap();
            prop_assert!(a.rmse >= a.mae);
            prop_assert!(a.mae >= 0.0 && a.abs_rel >= 0.0 && a.rmse_log >= 0.0);
            // Deterministic permutation: rotate by a seed-derived amount and reverse.
            let k = (seed % n as u64) as usize;
            let mut perm: Vec<_> = vals.clone();
            perm.rotate_left(k);
            perm.reverse();
            let pred2 = DepthImage::from_vec(n, 1, perm.iter().map(|v| v.0).collect()).unwrap();
            let truth2 = DepthImage::from_vec(n, 1, perm.iter().map(|v| v.1).collect()).unwrap();
            let b = depth_metrics(&pred2, &truth2, None).unwrap().stats.unwrap();
            let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * x.abs().max(1.0);
            prop_assert!(close(a.mae, b.mae) && close(a.rmse, b.rmse) && close(a.abs_rel, b.abs_rel) && close(a.rmse_log, b.rmse_log));
        }
    }
}
