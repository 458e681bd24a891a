//! Raster primitives shared by every stage: thresholding, hole filling,
//! connected components and region statistics.
//!
//! Pixel centers sit at integer coordinates, so a region's centroid is the
//! arithmetic mean of its member `(x, y)` positions.

use std::collections::{BTreeMap, VecDeque};

use crate::{Error, Result};

/// Row-major 2-D grid with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

pub type BinaryMask = Raster<bool>;
/// Integer labels, 0 is background.
pub type LabelMap = Raster<u32>;
pub type ProbMap = Raster<f32>;

impl<T: Copy> Raster<T> {
    /// Creates a raster filled with `fill`.
    ///
    /// Panics if any dimension is zero.
    pub fn new(width: usize, height: usize, channels: usize, fill: T) -> Self {
        assert!(
            width >= 1 && height >= 1 && channels >= 1,
            "raster dimensions must be positive, got {width}x{height}x{channels}"
        );
        Raster { width, height, channels, data: vec![fill; width * height * channels] }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::invalid(format!(
                "raster dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::invalid("raster dimensions overflow"))?;
        if data.len() != expected {
            return Err(Error::invalid(format!(
                "raster data has {} samples, expected {expected}",
                data.len()
            )));
        }
        Ok(Raster { width, height, channels, data })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        debug_assert!(x < self.width && y < self.height && c < self.channels);
        (y * self.width + x) * self.channels + c
    }

    /// Sample of channel 0.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[self.index(x, y, 0)]
    }

    #[inline]
    pub fn get_c(&self, x: usize, y: usize, c: usize) -> T {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        let i = self.index(x, y, 0);
        self.data[i] = value;
    }

    #[inline]
    pub fn set_c(&mut self, x: usize, y: usize, c: usize, value: T) {
        let i = self.index(x, y, c);
        self.data[i] = value;
    }

    /// Whether signed coordinates fall inside the raster.
    #[inline]
    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn same_extent<U>(&self, other: &Raster<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copies one channel out as a single-channel raster.
    pub fn channel(&self, c: usize) -> Result<Raster<T>> {
        if c >= self.channels {
            return Err(Error::invalid(format!(
                "channel {c} out of range for {}-channel raster",
                self.channels
            )));
        }
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Ok(Raster { width: self.width, height: self.height, channels: 1, data })
    }
}

/// Sub-pixel position in raster coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        self.distance_sq(other).sqrt()
    }

    #[inline]
    pub fn distance_sq(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// Inclusive pixel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelBox {
    pub xmin: usize,
    pub ymin: usize,
    pub xmax: usize,
    pub ymax: usize,
}

impl PixelBox {
    pub fn width(&self) -> usize {
        self.xmax - self.xmin + 1
    }

    pub fn height(&self) -> usize {
        self.ymax - self.ymin + 1
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.xmin as f64
            && p.x <= self.xmax as f64
            && p.y >= self.ymin as f64
            && p.y <= self.ymax as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionStats {
    pub label: u32,
    pub area: usize,
    pub centroid: Point,
    pub bbox: PixelBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    /// N, S, E and W neighbors.
    Four,
    /// All eight neighbors.
    #[default]
    Eight,
}

impl Connectivity {
    pub fn offsets(self) -> &'static [(i64, i64)] {
        const FOUR: [(i64, i64); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];
        const EIGHT: [(i64, i64); 8] =
            [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

/// Sets a pixel iff `map[pixel, channel] >= theta`.
pub fn threshold(map: &ProbMap, channel: usize, theta: f32) -> Result<BinaryMask> {
    if channel >= map.channels() {
        return Err(Error::invalid(format!(
            "channel {channel} out of range for {}-channel map",
            map.channels()
        )));
    }
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::invalid(format!("threshold {theta} outside [0, 1]")));
    }
    let data = map.data().iter().skip(channel).step_by(map.channels()).map(|&v| v >= theta).collect();
    Raster::from_vec(map.width(), map.height(), 1, data)
}

/// Fills background pixels that cannot reach the raster border through
/// 4-connected background.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = mask.extent();
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    let seed = |x: usize, y: usize, outside: &mut Vec<bool>, queue: &mut VecDeque<(usize, usize)>| {
        let i = y * w + x;
        if !mask.get(x, y) && !outside[i] {
            outside[i] = true;
            queue.push_back((x, y));
        }
    };
    for x in 0..w {
        seed(x, 0, &mut outside, &mut queue);
        seed(x, h - 1, &mut outside, &mut queue);
    }
    for y in 0..h {
        seed(0, y, &mut outside, &mut queue);
        seed(w - 1, y, &mut outside, &mut queue);
    }
    while let Some((x, y)) = queue.pop_front() {
        for &(dx, dy) in Connectivity::Four.offsets() {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if mask.contains(nx, ny) {
                seed(nx as usize, ny as usize, &mut outside, &mut queue);
            }
        }
    }
    let data = outside.into_iter().map(|o| !o).collect();
    Raster::from_vec(w, h, 1, data).expect("extent unchanged")
}

/// Labels maximal connected foreground regions 1..K in raster-scan order of
/// each region's first pixel.
pub fn connected_components(
    mask: &BinaryMask,
    connectivity: Connectivity,
) -> (LabelMap, Vec<RegionStats>) {
    let (w, h) = mask.extent();
    let mut labels = Raster::new(w, h, 1, 0u32);
    let mut stats = Vec::new();
    let mut stack = Vec::new();
    for y0 in 0..h {
        for x0 in 0..w {
            if !mask.get(x0, y0) || labels.get(x0, y0) != 0 {
                continue;
            }
            let label = stats.len() as u32 + 1;
            let mut acc = StatsAccumulator::new(label);
            labels.set(x0, y0, label);
            stack.push((x0, y0));
            while let Some((x, y)) = stack.pop() {
                acc.add(x, y);
                for &(dx, dy) in connectivity.offsets() {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if !mask.contains(nx, ny) {
                        continue;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    if mask.get(nx, ny) && labels.get(nx, ny) == 0 {
                        labels.set(nx, ny, label);
                        stack.push((nx, ny));
                    }
                }
            }
            stats.push(acc.finish());
        }
    }
    (labels, stats)
}

/// Statistics of every nonzero label in an arbitrary label map, ordered by label.
pub fn label_stats(labels: &LabelMap) -> Vec<RegionStats> {
    let mut accs: BTreeMap<u32, StatsAccumulator> = BTreeMap::new();
    for y in 0..labels.height() {
        for x in 0..labels.width() {
            let l = labels.get(x, y);
            if l != 0 {
                accs.entry(l).or_insert_with(|| StatsAccumulator::new(l)).add(x, y);
            }
        }
    }
    accs.into_values().map(StatsAccumulator::finish).collect()
}

struct StatsAccumulator {
    label: u32,
    area: usize,
    sum_x: f64,
    sum_y: f64,
    bbox: PixelBox,
}

impl StatsAccumulator {
    fn new(label: u32) -> Self {
        StatsAccumulator {
            label,
            area: 0,
            sum_x: 0.0,
            sum_y: 0.0,
            bbox: PixelBox { xmin: usize::MAX, ymin: usize::MAX, xmax: 0, ymax: 0 },
        }
    }

    fn add(&mut self, x: usize, y: usize) {
        self.area += 1;
        self.sum_x += x as f64;
        self.sum_y += y as f64;
        self.bbox.xmin = self.bbox.xmin.min(x);
        self.bbox.ymin = self.bbox.ymin.min(y);
        self.bbox.xmax = self.bbox.xmax.max(x);
        self.bbox.ymax = self.bbox.ymax.max(y);
    }

    fn finish(self) -> RegionStats {
        let n = self.area as f64;
        RegionStats {
            label: self.label,
            area: self.area,
            centroid: Point::new(self.sum_x / n, self.sum_y / n),
            bbox: self.bbox,
        }
    }
}
