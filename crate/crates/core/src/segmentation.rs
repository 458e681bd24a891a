//! Blob segmentation from boundary/interior maps and nearest-centroid
//! splitting of blobs among tracked cells.
//!
//! Fine segmentation assigns every pixel of a blob to the closest tracked
//! centroid inside that blob (Euclidean distance, ties to the smaller track
//! id). The nearest-seed field is computed with a bucket grid, which returns
//! exactly the same labels as checking every seed for every pixel.

use std::collections::{BTreeMap, BTreeSet};

use crate::imaging::{self, Connectivity, LabelMap, Point, ProbMap, Raster};
use crate::{Error, Result};

/// Channel order of segmentation probability maps.
pub const BOUNDARY_CHANNEL: usize = 0;
pub const INTERIOR_CHANNEL: usize = 1;
pub const BACKGROUND_CHANNEL: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Seed {
    pub id: u32,
    pub pos: Point,
}

/// Tracked centroids of one frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeedSet {
    seeds: Vec<Seed>,
}

impl SeedSet {
    pub fn new(seeds: Vec<Seed>) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for s in &seeds {
            if s.id == 0 {
                return Err(Error::invalid("seed id 0 is reserved for background"));
            }
            if !ids.insert(s.id) {
                return Err(Error::invalid(format!("duplicate seed id {}", s.id)));
            }
            if !s.pos.x.is_finite() || !s.pos.y.is_finite() {
                return Err(Error::invalid(format!("seed {} has non-finite coordinates", s.id)));
            }
        }
        Ok(SeedSet { seeds })
    }

    pub fn seeds(&self) -> &[Seed] {
        &self.seeds
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentationParams {
    pub interior_threshold: f32,
    pub boundary_threshold: f32,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        SegmentationParams { interior_threshold: 0.5, boundary_threshold: 0.5 }
    }
}

/// Cell mask = `interior >= theta_int` or `boundary >= theta_bnd`, holes
/// filled, labelled into 8-connected blobs.
pub fn primary_segment(prob: &ProbMap, theta_int: f32, theta_bnd: f32) -> Result<LabelMap> {
    if prob.channels() != 3 {
        return Err(Error::invalid(format!(
            "segmentation map needs 3 channels (boundary, interior, background), got {}",
            prob.channels()
        )));
    }
    let interior = imaging::threshold(prob, INTERIOR_CHANNEL, theta_int)?;
    let boundary = imaging::threshold(prob, BOUNDARY_CHANNEL, theta_bnd)?;
    let data = interior.data().iter().zip(boundary.data()).map(|(&a, &b)| a || b).collect();
    let mask = Raster::from_vec(prob.width(), prob.height(), 1, data)?;
    let filled = imaging::fill_holes(&mask);
    Ok(imaging::connected_components(&filled, Connectivity::Eight).0)
}

#[inline]
fn closer(d2: f64, id: u32, best_d2: f64, best_id: u32) -> bool {
    d2 < best_d2 || (d2 == best_d2 && id < best_id)
}

#[inline]
fn pixel_distance_sq(x: usize, y: usize, p: Point) -> f64 {
    let dx = x as f64 - p.x;
    let dy = y as f64 - p.y;
    dx * dx + dy * dy
}

/// Nearest seed for each pixel by scanning all seeds.
pub fn assign_pixels_bruteforce(pixels: &[(usize, usize)], seeds: &SeedSet) -> Result<Vec<u32>> {
    if seeds.is_empty() {
        return Err(Error::invalid("pixel assignment needs at least one seed"));
    }
    Ok(pixels
        .iter()
        .map(|&(x, y)| {
            let mut best = (f64::INFINITY, u32::MAX);
            for s in seeds.seeds() {
                let d2 = pixel_distance_sq(x, y, s.pos);
                if closer(d2, s.id, best.0, best.1) {
                    best = (d2, s.id);
                }
            }
            best.1
        })
        .collect())
}

/// Uniform bucket grid over seed positions.
struct SeedGrid<'a> {
    seeds: &'a [Seed],
    origin: Point,
    cell: f64,
    cols: usize,
    rows: usize,
    /// Seed indices per bucket, row-major.
    buckets: Vec<Vec<usize>>,
}

impl<'a> SeedGrid<'a> {
    /// Grid covering the pixel window `[x0, x0 + w) × [y0, y0 + h)` and every seed.
    fn new(seeds: &'a [Seed], x0: usize, y0: usize, w: usize, h: usize) -> Self {
        let mut lo = Point::new(x0 as f64, y0 as f64);
        let mut hi = Point::new((x0 + w - 1) as f64, (y0 + h - 1) as f64);
        for s in seeds {
            lo.x = lo.x.min(s.pos.x);
            lo.y = lo.y.min(s.pos.y);
            hi.x = hi.x.max(s.pos.x);
            hi.y = hi.y.max(s.pos.y);
        }
        let span_x = hi.x - lo.x + 1.0;
        let span_y = hi.y - lo.y + 1.0;
        // About two seeds per bucket.
        let cell = ((span_x * span_y * 2.0) / seeds.len() as f64).sqrt().max(1.0);
        let cols = (span_x / cell).ceil().max(1.0) as usize;
        let rows = (span_y / cell).ceil().max(1.0) as usize;
        let mut grid = SeedGrid { seeds, origin: lo, cell, cols, rows, buckets: vec![Vec::new(); cols * rows] };
        for (i, s) in seeds.iter().enumerate() {
            let (bx, by) = grid.bucket_of(s.pos.x, s.pos.y);
            grid.buckets[by * cols + bx].push(i);
        }
        grid
    }

    #[inline]
    fn bucket_of(&self, x: f64, y: f64) -> (usize, usize) {
        let bx = ((x - self.origin.x) / self.cell).floor().max(0.0) as usize;
        let by = ((y - self.origin.y) / self.cell).floor().max(0.0) as usize;
        (bx.min(self.cols - 1), by.min(self.rows - 1))
    }

    fn nearest(&self, x: usize, y: usize) -> u32 {
        let (bx, by) = self.bucket_of(x as f64, y as f64);
        let mut best = (f64::INFINITY, u32::MAX);
        let max_ring = self.cols.max(self.rows);
        for ring in 0..=max_ring {
            // Any seed in ring `ring` or beyond is at least `(ring - 1) * cell` away.
            if ring >= 1 {
                let bound = (ring - 1) as f64 * self.cell;
                if bound * bound > best.0 * (1.0 + 1e-12) + 1e-9 {
                    break;
                }
            }
            self.visit_ring(bx, by, ring, |i| {
                let s = &self.seeds[i];
                let d2 = pixel_distance_sq(x, y, s.pos);
                if closer(d2, s.id, best.0, best.1) {
                    best = (d2, s.id);
                }
            });
        }
        best.1
    }

    fn visit_ring(&self, bx: usize, by: usize, ring: usize, mut f: impl FnMut(usize)) {
        let r = ring as i64;
        let (cx, cy) = (bx as i64, by as i64);
        for gy in (cy - r).max(0)..=(cy + r).min(self.rows as i64 - 1) {
            let on_edge_row = (gy - cy).abs() == r;
            let step = if on_edge_row || r == 0 { 1 } else { (2 * r) as usize };
            let mut gx = cx - r;
            while gx <= cx + r {
                if gx >= 0 && gx < self.cols as i64 {
                    for &i in &self.buckets[gy as usize * self.cols + gx as usize] {
                        f(i);
                    }
                }
                gx += step as i64;
            }
        }
    }
}

fn nearest_seed_window(seeds: &[Seed], x0: usize, y0: usize, w: usize, h: usize) -> Vec<u32> {
    let grid = SeedGrid::new(seeds, x0, y0, w, h);
    let mut out = Vec::with_capacity(w * h);
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            out.push(grid.nearest(x, y));
        }
    }
    out
}

/// Full-extent nearest-seed label map.
pub fn voronoi_labels(seeds: &SeedSet, extent: (usize, usize)) -> Result<LabelMap> {
    if seeds.is_empty() {
        return Err(Error::invalid("Voronoi labelling needs at least one seed"));
    }
    let (w, h) = extent;
    if w == 0 || h == 0 {
        return Err(Error::invalid("Voronoi extent must be positive"));
    }
    Raster::from_vec(w, h, 1, nearest_seed_window(seeds.seeds(), 0, 0, w, h))
}

/// Blob that contains a seed: the blob under the rounded centroid, else the
/// nearest blob pixel in the surrounding 3×3 window.
pub fn blob_of_seed(blobs: &LabelMap, pos: Point) -> Option<u32> {
    let (rx, ry) = (pos.x.round() as i64, pos.y.round() as i64);
    if blobs.contains(rx, ry) {
        let l = blobs.get(rx as usize, ry as usize);
        if l != 0 {
            return Some(l);
        }
    }
    let mut best: Option<(f64, u32)> = None;
    for dy in -1..=1 {
        for dx in -1..=1 {
            let (x, y) = (rx + dx, ry + dy);
            if !blobs.contains(x, y) {
                continue;
            }
            let l = blobs.get(x as usize, y as usize);
            if l == 0 {
                continue;
            }
            let d2 = pixel_distance_sq(x as usize, y as usize, pos);
            if best.is_none_or(|(bd, _)| d2 < bd) {
                best = Some((d2, l));
            }
        }
    }
    best.map(|(_, l)| l)
}

/// Splits blobs among the seeds they contain.
///
/// A blob with one seed is labelled wholesale with that seed's id; a blob
/// with several is partitioned by nearest seed among its own seeds; a blob
/// with none is dropped.
pub fn fine_segment(blobs: &LabelMap, seeds: &SeedSet) -> LabelMap {
    let (w, h) = blobs.extent();
    let mut out = Raster::new(w, h, 1, 0u32);
    let mut members: BTreeMap<u32, Vec<Seed>> = BTreeMap::new();
    for s in seeds.seeds() {
        if let Some(l) = blob_of_seed(blobs, s.pos) {
            members.entry(l).or_default().push(*s);
        }
    }
    if members.is_empty() {
        return out;
    }
    let stats: BTreeMap<u32, imaging::RegionStats> =
        imaging::label_stats(blobs).into_iter().map(|s| (s.label, s)).collect();

    for (label, inside) in &members {
        let bbox = stats[label].bbox;
        if inside.len() == 1 {
            let id = inside[0].id;
            for y in bbox.ymin..=bbox.ymax {
                for x in bbox.xmin..=bbox.xmax {
                    if blobs.get(x, y) == *label {
                        out.set(x, y, id);
                    }
                }
            }
            continue;
        }
        let (bw, bh) = (bbox.width(), bbox.height());
        let field = nearest_seed_window(inside, bbox.xmin, bbox.ymin, bw, bh);
        for y in bbox.ymin..=bbox.ymax {
            for x in bbox.xmin..=bbox.xmax {
                if blobs.get(x, y) == *label {
                    out.set(x, y, field[(y - bbox.ymin) * bw + (x - bbox.xmin)]);
                }
            }
        }
    }
    out
}
