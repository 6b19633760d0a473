//! Dense per-pixel containers: depth images, flow fields, masks and generic grids.

use crate::error::{Error, Result};

/// Marker stored in [`DepthImage`] for pixels without a depth.
pub const INVALID_DEPTH: f64 = 0.0;

#[inline]
pub fn is_valid_depth(d: f64) -> bool {
    d > 0.0 && d.is_finite()
}

/// Row-major `width x height` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::SizeMismatch {
                context: "grid data",
                expected: (height, width, 1),
                actual: (data.len(), 1, 1),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(col, row));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn index(&self, col: usize, row: usize) -> usize {
        debug_assert!(col < self.width && row < self.height);
        row * self.width + col
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> &T {
        &self.data[self.index(col, row)]
    }

    #[inline]
    pub fn get_mut(&mut self, col: usize, row: usize) -> &mut T {
        let i = self.index(col, row);
        &mut self.data[i]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, value: T) {
        let i = self.index(col, row);
        self.data[i] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }
}

/// Metric depth image with [`INVALID_DEPTH`] for empty pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage(Grid<f64>);

impl DepthImage {
    pub fn new_invalid(width: usize, height: usize) -> Self {
        Self(Grid::filled(width, height, INVALID_DEPTH))
    }

    /// Wraps raw values; non-positive or non-finite entries become invalid.
    pub fn from_vec(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let mut grid = Grid::from_vec(width, height, values)?;
        for v in grid.as_mut_slice() {
            if !is_valid_depth(*v) {
                *v = INVALID_DEPTH;
            }
        }
        Ok(Self(grid))
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> Option<f64> {
        let d = *self.0.get(col, row);
        is_valid_depth(d).then_some(d)
    }

    #[inline]
    pub fn raw(&self, col: usize, row: usize) -> f64 {
        *self.0.get(col, row)
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, depth: f64) {
        let d = if is_valid_depth(depth) { depth } else { INVALID_DEPTH };
        self.0.set(col, row, d);
    }

    pub fn invalidate(&mut self, col: usize, row: usize) {
        self.0.set(col, row, INVALID_DEPTH);
    }

    /// Writes `depth` only if the pixel is empty or currently holds a larger depth.
    #[inline]
    pub fn set_nearest(&mut self, col: usize, row: usize, depth: f64) -> bool {
        if !is_valid_depth(depth) {
            return false;
        }
        let cur = self.0.get_mut(col, row);
        if !is_valid_depth(*cur) || depth < *cur {
            *cur = depth;
            true
        } else {
            false
        }
    }

    pub fn is_valid(&self, col: usize, row: usize) -> bool {
        is_valid_depth(*self.0.get(col, row))
    }

    pub fn valid_count(&self) -> usize {
        self.0.as_slice().iter().filter(|d| is_valid_depth(**d)).count()
    }

    pub fn is_empty(&self) -> bool {
        self.valid_count() == 0
    }

    /// `(col, row, depth)` for every valid pixel in raster order.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let w = self.width();
        self.0
            .as_slice()
            .iter()
            .enumerate()
            .filter(|(_, d)| is_valid_depth(**d))
            .map(move |(i, d)| (i % w, i / w, *d))
    }

    pub fn values(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.0
    }

    /// Invalidates depths outside `(0, max_depth]`.
    pub fn clip_max(&mut self, max_depth: f64) {
        for v in self.0.as_mut_slice() {
            if *v > max_depth {
                *v = INVALID_DEPTH;
            }
        }
    }

    pub fn valid_mask(&self) -> Mask {
        Mask(self.0.map(|d| is_valid_depth(*d)))
    }
}

/// Per-pixel 2D displacement with a validity flag.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    vectors: Grid<[f64; 2]>,
    valid: Grid<bool>,
}

impl FlowField {
    pub fn new_invalid(width: usize, height: usize) -> Self {
        Self {
            vectors: Grid::filled(width, height, [0.0; 2]),
            valid: Grid::filled(width, height, false),
        }
    }

    pub fn width(&self) -> usize {
        self.vectors.width()
    }

    pub fn height(&self) -> usize {
        self.vectors.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.vectors.dims()
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> Option<[f64; 2]> {
        self.valid.get(col, row).then(|| *self.vectors.get(col, row))
    }

    /// Stores a vector; non-finite vectors mark the pixel invalid.
    #[inline]
    pub fn set(&mut self, col: usize, row: usize, flow: [f64; 2]) {
        let ok = flow[0].is_finite() && flow[1].is_finite();
        self.vectors.set(col, row, if ok { flow } else { [0.0; 2] });
        self.valid.set(col, row, ok);
    }

    pub fn invalidate(&mut self, col: usize, row: usize) {
        self.vectors.set(col, row, [0.0; 2]);
        self.valid.set(col, row, false);
    }

    pub fn valid_count(&self) -> usize {
        self.valid.as_slice().iter().filter(|v| **v).count()
    }

    pub fn vectors(&self) -> &Grid<[f64; 2]> {
        &self.vectors
    }

    pub fn validity(&self) -> &Grid<bool> {
        &self.valid
    }
}

/// Boolean per-pixel mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask(pub Grid<bool>);

impl Mask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        Self(Grid::filled(width, height, value))
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> bool {
        *self.0.get(col, row)
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, value: bool) {
        self.0.set(col, row, value)
    }

    pub fn count(&self) -> usize {
        self.0.as_slice().iter().filter(|v| **v).count()
    }

    pub fn and(&self, other: &Mask) -> Mask {
        Mask(Grid::from_fn(self.width(), self.height(), |c, r| self.get(c, r) && other.get(c, r)))
    }
}

pub(crate) fn check_same_dims(context: &'static str, expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::SizeMismatch {
            context,
            expected: (expected.1, expected.0, 1),
            actual: (actual.1, actual.0, 1),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_invalid_marker() {
        let mut d = DepthImage::new_invalid(4, 3);
        assert_eq!(d.valid_count(), 0);
        d.set(1, 2, 5.0);
        d.set(2, 2, -1.0);
        d.set(3, 2, f64::NAN);
        assert_eq!(d.get(1, 2), Some(5.0));
        assert_eq!(d.get(2, 2), None);
        assert_eq!(d.get(3, 2), None);
        assert_eq!(d.iter_valid().collect::<Vec<_>>(), vec![(1, 2, 5.0)]);
    }

    #[test]
    fn nearest_wins() {
        let mut d = DepthImage::new_invalid(2, 2);
        assert!(d.set_nearest(0, 0, 10.0));
        assert!(!d.set_nearest(0, 0, 12.0));
        assert!(d.set_nearest(0, 0, 8.0));
        assert_eq!(d.get(0, 0), Some(8.0));
    }

    #[test]
    fn clip_and_flow_validity() {
        let mut d = DepthImage::from_vec(2, 1, vec![49.0, 51.0]).unwrap();
        d.clip_max(50.0);
        assert_eq!(d.valid_count(), 1);
        let mut f = FlowField::new_invalid(2, 1);
        f.set(0, 0, [1.0, 2.0]);
        f.set(1, 0, [f64::INFINITY, 0.0]);
        assert_eq!(f.get(0, 0), Some([1.0, 2.0]));
        assert_eq!(f.get(1, 0), None);
    }
}
