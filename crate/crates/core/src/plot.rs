//! Raster line plots of MER curves, written as PGM or PPM.
//!
//! Layout (pixels, origin top-left):
//!
//! * canvas [`WIDTH`] x [`HEIGHT`], white background (255);
//! * plot area columns `LEFT..=WIDTH-1-RIGHT`, rows `TOP..=HEIGHT-1-BOTTOM`;
//! * black (0) axes along the left and bottom edges of the plot area;
//! * [`TICKS`] evenly spaced ticks per axis, [`TICK_LEN`] pixels long, drawn
//!   outside the plot area; tick `i` maps to `lo + i/(TICKS-1) * (hi - lo)`;
//! * the x axis spans the data's threshold range; the y axis spans
//!   `[0, 1.05 * max]` of the plotted metric;
//! * series `i` is drawn as a 1-pixel polyline with gray level
//!   [`SERIES_LEVELS`]`[i % 4]`; points with a missing value break the line.
//!
//! No text is rendered; tick values are recoverable from [`Axis`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::CurveRecord;
use crate::io::{encode_gray_pgm, encode_ppm};

pub const WIDTH: usize = 480;
pub const HEIGHT: usize = 320;
pub const LEFT: usize = 48;
pub const RIGHT: usize = 16;
pub const TOP: usize = 16;
pub const BOTTOM: usize = 40;
pub const TICKS: usize = 5;
pub const TICK_LEN: usize = 4;
pub const BACKGROUND: u8 = 255;
pub const AXIS_LEVEL: u8 = 0;
pub const SERIES_LEVELS: [u8; 4] = [64, 160, 112, 208];

/// Colors used for [`SERIES_LEVELS`] in PPM output.
const PALETTE: [(u8, [u8; 3]); 4] = [
    (64, [200, 30, 30]),
    (160, [30, 90, 200]),
    (112, [30, 150, 60]),
    (208, [220, 150, 20]),
];

/// Which curve column to plot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlotMetric {
    Area,
    Mae,
}

impl PlotMetric {
    fn value(self, r: &CurveRecord) -> Option<f64> {
        match self {
            PlotMetric::Area => Some(r.mean_area),
            PlotMetric::Mae => r.mae,
        }
    }
}

/// Linear map between a value range and a pixel range.
///
/// `pixel_lo` is the pixel of `lo`; it may be larger than `pixel_hi`
/// (vertical axes grow upwards).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub pixel_lo: f64,
    pub pixel_hi: f64,
}

impl Axis {
    pub fn to_pixel(&self, v: f64) -> f64 {
        self.pixel_lo + (v - self.lo) / (self.hi - self.lo) * (self.pixel_hi - self.pixel_lo)
    }

    pub fn to_value(&self, px: f64) -> f64 {
        self.lo + (px - self.pixel_lo) / (self.pixel_hi - self.pixel_lo) * (self.hi - self.lo)
    }

    /// Tick values and their (rounded) pixel positions.
    pub fn ticks(&self) -> Vec<(f64, usize)> {
        (0..TICKS)
            .map(|i| {
                let v = self.lo + (self.hi - self.lo) * i as f64 / (TICKS - 1) as f64;
                (v, self.to_pixel(v).round() as usize)
            })
            .collect()
    }
}

/// A rendered gray-level plot.
#[derive(Debug, Clone, PartialEq)]
pub struct Plot {
    pub pixels: Vec<u8>,
    pub x_axis: Axis,
    pub y_axis: Axis,
    /// Series names in drawing order; series `i` uses `SERIES_LEVELS[i % 4]`.
    pub series: Vec<String>,
}

impl Plot {
    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.pixels[row * WIDTH + col]
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        encode_gray_pgm(WIDTH, HEIGHT, &self.pixels).expect("canvas size is fixed")
    }

    /// Color rendering: series levels map to a fixed palette, other levels stay gray.
    pub fn to_ppm(&self) -> Vec<u8> {
        let rgb: Vec<u8> = self
            .pixels
            .iter()
            .flat_map(|&g| {
                PALETTE
                    .iter()
                    .find(|(level, _)| *level == g)
                    .map_or([g, g, g], |(_, c)| *c)
            })
            .collect();
        encode_ppm(WIDTH, HEIGHT, &rgb).expect("canvas size is fixed")
    }
}

fn plot_x_range() -> (f64, f64) {
    (LEFT as f64, (WIDTH - 1 - RIGHT) as f64)
}

fn plot_y_range() -> (f64, f64) {
    ((HEIGHT - 1 - BOTTOM) as f64, TOP as f64)
}

fn draw_line(pixels: &mut [u8], (x0, y0): (i64, i64), (x1, y1): (i64, i64), level: u8) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if (0..WIDTH as i64).contains(&x) && (0..HEIGHT as i64).contains(&y) {
            pixels[y as usize * WIDTH + x as usize] = level;
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Renders one metric of curve records, one polyline per series in order of first appearance.
pub fn render(records: &[CurveRecord], metric: PlotMetric) -> Result<Plot> {
    if records.is_empty() {
        return Err(Error::Empty("no curve rows to plot".into()));
    }
    let mut series: Vec<String> = Vec::new();
    for r in records {
        if !series.contains(&r.series) {
            series.push(r.series.clone());
        }
    }
    if records.iter().any(|r| !r.threshold.is_finite()) {
        return Err(Error::format("curve CSV", "non-finite threshold"));
    }
    let (mut x_lo, mut x_hi) = records
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.threshold), b.max(r.threshold)));
    if x_lo == x_hi {
        x_lo -= 0.5;
        x_hi += 0.5;
    }
    let y_max = records
        .iter()
        .filter_map(|r| metric.value(r))
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let y_hi = if y_max > 0.0 { 1.05 * y_max } else { 1.0 };
    let (px_lo, px_hi) = plot_x_range();
    let (py_lo, py_hi) = plot_y_range();
    let x_axis = Axis {
        lo: x_lo,
        hi: x_hi,
        pixel_lo: px_lo,
        pixel_hi: px_hi,
    };
    let y_axis = Axis {
        lo: 0.0,
        hi: y_hi,
        pixel_lo: py_lo,
        pixel_hi: py_hi,
    };

    let mut pixels = vec![BACKGROUND; WIDTH * HEIGHT];
    let (left, bottom) = (LEFT as i64, (HEIGHT - 1 - BOTTOM) as i64);
    draw_line(&mut pixels, (left, TOP as i64), (left, bottom), AXIS_LEVEL);
    draw_line(&mut pixels, (left, bottom), ((WIDTH - 1 - RIGHT) as i64, bottom), AXIS_LEVEL);
    for (_, px) in x_axis.ticks() {
        draw_line(&mut pixels, (px as i64, bottom + 1), (px as i64, bottom + TICK_LEN as i64), AXIS_LEVEL);
    }
    for (_, py) in y_axis.ticks() {
        draw_line(&mut pixels, (left - TICK_LEN as i64, py as i64), (left - 1, py as i64), AXIS_LEVEL);
    }

    for (i, name) in series.iter().enumerate() {
        let level = SERIES_LEVELS[i % SERIES_LEVELS.len()];
        let mut points: Vec<(f64, Option<f64>)> = records
            .iter()
            .filter(|r| &r.series == name)
            .map(|r| (r.threshold, metric.value(r).filter(|v| v.is_finite())))
            .collect();
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let to_px = |x: f64, y: f64| (x_axis.to_pixel(x).round() as i64, y_axis.to_pixel(y).round() as i64);
        for pair in points.windows(2) {
            if let ((x0, Some(y0)), (x1, Some(y1))) = (pair[0], pair[1]) {
                draw_line(&mut pixels, to_px(x0, y0), to_px(x1, y1), level);
            }
        }
        // Isolated points still show up as single pixels.
        for (j, &(x, y)) in points.iter().enumerate() {
            let isolated = |k: Option<usize>| k.and_then(|k| points.get(k)).is_none_or(|p| p.1.is_none());
            if let Some(y) = y {
                if isolated(j.checked_sub(1)) && isolated(Some(j + 1)) {
                    let (c, r) = to_px(x, y);
                    draw_line(&mut pixels, (c, r), (c, r), level);
                }
            }
        }
    }
    Ok(Plot {
        pixels,
        x_axis,
        y_axis,
        series,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(series: &str, t: f64, area: f64, mae: Option<f64>) -> CurveRecord {
        CurveRecord {
            series: series.into(),
            threshold: t,
            mean_area: area,
            mae,
            n_pixels: 1,
        }
    }

    fn rows_with_level(p: &Plot, col: usize, level: u8) -> Vec<usize> {
        (0..HEIGHT).filter(|&r| p.get(col, r) == level).collect()
    }

    #[test]
    fn monotone_input_gives_monotone_polyline() {
        let ts = [0.5, 0.6, 0.7, 0.8, 0.9, 0.95];
        let records: Vec<_> = ts.iter().enumerate().map(|(i, &t)| rec("a", t, 100.0 - 15.0 * i as f64, None)).collect();
        let p = render(&records, PlotMetric::Area).unwrap();
        let (x0, x1) = plot_x_range();
        let mut last_row = 0usize;
        for col in (x0 as usize..=x1 as usize).step_by(7) {
            let rows = rows_with_level(&p, col, SERIES_LEVELS[0]);
            assert!(!rows.is_empty(), "column {col} has no curve pixel");
            // Decreasing values move down the image.
            let top = *rows.first().unwrap();
            assert!(top + 1 >= last_row, "column {col}: row {top} above previous {last_row}");
            last_row = *rows.last().unwrap();
        }
    }

    #[test]
    fn two_series_use_distinct_levels() {
        let records = vec![
            rec("oracle", 0.5, 10.0, None),
            rec("oracle", 0.95, 5.0, None),
            rec("noisy", 0.5, 8.0, None),
            rec("noisy", 0.95, 2.0, None),
        ];
        let p = render(&records, PlotMetric::Area).unwrap();
        assert_eq!(p.series, ["oracle", "noisy"]);
        let count = |level| p.pixels.iter().filter(|&&g| g == level).count();
        assert!(count(SERIES_LEVELS[0]) > 100 && count(SERIES_LEVELS[1]) > 100);
        assert_ne!(SERIES_LEVELS[0], SERIES_LEVELS[1]);
        let ppm = p.to_ppm();
        assert!(ppm.starts_with(b"P6\n480 320\n255\n"));
    }

    #[test]
    fn ticks_invert_to_their_values() {
        let records = vec![rec("a", 0.5, 37.0, Some(1.25)), rec("a", 0.95, 12.0, Some(0.5))];
        let p = render(&records, PlotMetric::Mae).unwrap();
        for axis in [p.x_axis, p.y_axis] {
            let step = (axis.hi - axis.lo) / (axis.pixel_hi - axis.pixel_lo).abs();
            for (v, px) in axis.ticks() {
                assert!((axis.to_value(px as f64) - v).abs() <= 0.5 * step + 1e-12);
            }
        }
        // Tick marks are drawn at those pixels.
        let bottom = HEIGHT - 1 - BOTTOM;
        for (_, px) in p.x_axis.ticks() {
            assert_eq!(p.get(px, bottom + TICK_LEN), AXIS_LEVEL);
        }
        for (_, py) in p.y_axis.ticks() {
            assert_eq!(p.get(LEFT - TICK_LEN, py), AXIS_LEVEL);
        }
    }

    #[test]
    fn missing_values_break_the_line() {
        let records = vec![rec("a", 0.5, 0.0, Some(1.0)), rec("a", 0.7, 0.0, None), rec("a", 0.9, 0.0, Some(1.0))];
        let p = render(&records, PlotMetric::Mae).unwrap();
        let mid = p.x_axis.to_pixel(0.7).round() as usize;
        assert!(rows_with_level(&p, mid, SERIES_LEVELS[0]).is_empty());
        assert_eq!(rows_with_level(&p, p.x_axis.to_pixel(0.5).round() as usize, SERIES_LEVELS[0]).len(), 1);
        assert!(render(&[], PlotMetric::Mae).is_err());
    }
}
