//! Seeded synthetic cell colonies with exact ground truth.
//!
//! Cells are non-overlapping disks that drift by clamped Brownian steps.
//! A cell chosen to divide is flagged mitotic for `mitotic_lead` frames, then
//! replaced by two daughters placed on opposite sides of its last position;
//! daughters stay mitotic for their first `mitotic_lead` frames. Divisions
//! only start when the daughters would still be seen for `mitotic_lead`
//! frames before the sequence ends. Static
//! impurities appear only in the rendered intensity images.
//!
//! Every random draw comes from a ChaCha stream selected by `(seed, purpose,
//! frame)`, so motion, division, corruption and image noise can each be
//! reproduced on their own.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataprep::DivisionEvent;
use crate::detection::{self, CellClass};
use crate::imaging::{self, LabelMap, Point, ProbMap, Raster};
use crate::segmentation;
use crate::tracker::{LineageForest, StatusRow, TrackState, Trajectory};
use crate::{Error, Result};

/// Minimum free space between two cell disks, in pixels.
pub const MIN_GAP: f64 = 2.0;

const STREAM_PLACEMENT: u64 = 0;
const STREAM_MOTION: u64 = 1;
const STREAM_DIVISION: u64 = 2;
const STREAM_CORRUPTION: u64 = 3;
const STREAM_IMAGE: u64 = 4;

const PLACEMENT_ATTEMPTS: usize = 10_000;
const DAUGHTER_ATTEMPTS: usize = 24;

fn stream(seed: u64, purpose: u64, frame: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 40) | frame as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Corruption {
    /// Probability that a cell is missing from a frame's maps.
    pub dropout_prob: f64,
    /// Standard deviation of the per-frame blob displacement, pixels.
    pub centroid_jitter_sigma: f64,
    /// Expected spurious blobs per true cell per frame.
    pub false_positive_rate: f64,
}

impl Corruption {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("dropout_prob", self.dropout_prob), ("false_positive_rate", self.false_positive_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if !(self.centroid_jitter_sigma >= 0.0) || !self.centroid_jitter_sigma.is_finite() {
            return Err(Error::Config(format!(
                "centroid_jitter_sigma = {} must be finite and non-negative",
                self.centroid_jitter_sigma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub initial_cells: usize,
    /// Mean cell radius in pixels.
    pub cell_radius: f64,
    /// Radii are uniform in `cell_radius ± radius_jitter`.
    pub radius_jitter: f64,
    /// Per-axis Brownian step, pixels per frame.
    pub drift_sigma: f64,
    /// Per-cell, per-frame probability of starting a division.
    pub division_rate: f64,
    pub mitotic_lead: usize,
    pub impurity_count: usize,
    pub corruption: Corruption,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 512,
            height: 512,
            frames: 50,
            initial_cells: 30,
            cell_radius: 7.0,
            radius_jitter: 0.8,
            drift_sigma: 1.0,
            division_rate: 0.01,
            mitotic_lead: 3,
            impurity_count: 5,
            corruption: Corruption::default(),
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.frames == 0 {
            return bad("frames must be at least 1".into());
        }
        if !(self.cell_radius > 0.0) || !self.cell_radius.is_finite() {
            return bad(format!("cell_radius = {} must be positive", self.cell_radius));
        }
        if !(0.0..self.cell_radius).contains(&self.radius_jitter) {
            return bad(format!("radius_jitter = {} must lie in [0, cell_radius)", self.radius_jitter));
        }
        if !(self.drift_sigma >= 0.0) || !self.drift_sigma.is_finite() {
            return bad(format!("drift_sigma = {} must be non-negative", self.drift_sigma));
        }
        if !(0.0..=1.0).contains(&self.division_rate) {
            return bad(format!("division_rate = {} outside [0, 1]", self.division_rate));
        }
        let r_max = self.cell_radius + self.radius_jitter;
        let need = (2.0 * r_max + 4.0).ceil() as usize;
        if self.width < need || self.height < need {
            return bad(format!("extent {}x{} too small for cells of radius {r_max}", self.width, self.height));
        }
        self.corruption.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthCell {
    pub id: u32,
    pub center: Point,
    pub radius: f64,
    pub class: CellClass,
}

impl SynthCell {
    /// Pixel at integer `(x, y)` belongs to the cell.
    #[inline]
    pub fn covers(&self, x: usize, y: usize) -> bool {
        Point::new(x as f64, y as f64).distance_sq(self.center) <= self.radius * self.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Impurity {
    pub center: Point,
    pub radius: f64,
}

/// Ground-truth world state of a generated sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub config: SynthConfig,
    /// Cells present in each frame, ordered by id.
    pub frames: Vec<Vec<SynthCell>>,
    pub divisions: Vec<DivisionEvent>,
    pub impurities: Vec<Impurity>,
}

#[derive(Debug, Clone)]
struct LiveCell {
    id: u32,
    center: Point,
    radius: f64,
    /// Frames left in the post-division mitotic phase.
    post_mitotic: usize,
    /// Mitotic frames recorded since division was scheduled.
    pre_mitotic: Option<usize>,
}

impl LiveCell {
    fn class(&self) -> CellClass {
        if self.pre_mitotic.is_some() || self.post_mitotic > 0 {
            CellClass::Mitotic
        } else {
            CellClass::Normal
        }
    }
}

struct Arena<'a> {
    cfg: &'a SynthConfig,
}

impl Arena<'_> {
    fn bounds(&self, radius: f64) -> (f64, f64, f64, f64) {
        // One free pixel ring beyond each disk stays inside the raster.
        (
            radius + 1.0,
            radius + 1.0,
            self.cfg.width as f64 - 2.0 - radius,
            self.cfg.height as f64 - 2.0 - radius,
        )
    }

    fn inside(&self, c: Point, radius: f64) -> bool {
        let (x0, y0, x1, y1) = self.bounds(radius);
        c.x >= x0 && c.x <= x1 && c.y >= y0 && c.y <= y1
    }

    fn clamp(&self, c: Point, radius: f64) -> Point {
        let (x0, y0, x1, y1) = self.bounds(radius);
        Point::new(c.x.clamp(x0, x1), c.y.clamp(y0, y1))
    }

    fn sample_radius(&self, rng: &mut ChaCha8Rng) -> f64 {
        let j = self.cfg.radius_jitter;
        if j == 0.0 {
            self.cfg.cell_radius
        } else {
            self.cfg.cell_radius + rng.random_range(-j..=j)
        }
    }

    fn sample_center(&self, rng: &mut ChaCha8Rng, radius: f64) -> Point {
        let (x0, y0, x1, y1) = self.bounds(radius);
        Point::new(rng.random_range(x0..=x1), rng.random_range(y0..=y1))
    }
}

fn clear_of(cells: &[LiveCell], c: Point, radius: f64, skip: Option<u32>) -> bool {
    cells.iter().filter(|o| Some(o.id) != skip).all(|o| {
        let min = o.radius + radius + MIN_GAP;
        o.center.distance_sq(c) >= min * min
    })
}

/// Simulates a colony. Fails with a configuration error when the initial
/// cells cannot be packed without overlap.
pub fn generate(config: &SynthConfig) -> Result<SynthScene> {
    config.validate()?;
    let arena = Arena { cfg: config };
    let mut place = stream(config.seed, STREAM_PLACEMENT, 0);

    let mut cells: Vec<LiveCell> = Vec::with_capacity(config.initial_cells);
    for k in 0..config.initial_cells {
        let radius = arena.sample_radius(&mut place);
        let center = (0..PLACEMENT_ATTEMPTS)
            .map(|_| arena.sample_center(&mut place, radius))
            .find(|&c| clear_of(&cells, c, radius, None))
            .ok_or_else(|| {
                Error::Config(format!(
                    "cannot place cell {} of {} without overlap in {}x{}",
                    k + 1,
                    config.initial_cells,
                    config.width,
                    config.height
                ))
            })?;
        cells.push(LiveCell { id: k as u32 + 1, center, radius, post_mitotic: 0, pre_mitotic: None });
    }
    let impurities = (0..config.impurity_count)
        .map(|_| {
            let radius = (config.cell_radius * 0.6).max(1.0);
            Impurity { center: arena.sample_center(&mut place, radius), radius }
        })
        .collect();

    let mut next_id = cells.len() as u32 + 1;
    let mut frames = Vec::with_capacity(config.frames);
    let mut divisions = Vec::new();
    let half_sep = 1.3 * config.cell_radius;

    for t in 0..config.frames {
        frames.push(
            cells
                .iter()
                .map(|c| SynthCell { id: c.id, center: c.center, radius: c.radius, class: c.class() })
                .collect::<Vec<_>>(),
        );
        for c in &mut cells {
            if let Some(n) = c.pre_mitotic.as_mut() {
                *n += 1;
            }
            c.post_mitotic = c.post_mitotic.saturating_sub(1);
        }
        if t + 1 == config.frames {
            break;
        }

        let mut motion = stream(config.seed, STREAM_MOTION, t);
        let mut division = stream(config.seed, STREAM_DIVISION, t);
        let step = Normal::new(0.0, config.drift_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
        let ids: Vec<u32> = cells.iter().map(|c| c.id).collect();
        for id in ids {
            let idx = cells.iter().position(|c| c.id == id).expect("cell alive");
            // Daughters must be observable for at least `mitotic_lead` frames.
            let room_in_time = t + 1 + config.mitotic_lead.max(1) <= config.frames;
            let ready = room_in_time && cells[idx].pre_mitotic.is_some_and(|n| n >= config.mitotic_lead);
            if ready {
                let mother = cells[idx].clone();
                let mut placed = None;
                for _ in 0..DAUGHTER_ATTEMPTS {
                    let r1 = arena.sample_radius(&mut division);
                    let r2 = arena.sample_radius(&mut division);
                    let sep = half_sep.max((r1 + r2 + MIN_GAP) / 2.0);
                    let angle = division.random_range(0.0..std::f64::consts::TAU);
                    let (dx, dy) = (sep * angle.cos(), sep * angle.sin());
                    let a = Point::new(mother.center.x + dx, mother.center.y + dy);
                    let b = Point::new(mother.center.x - dx, mother.center.y - dy);
                    if arena.inside(a, r1)
                        && arena.inside(b, r2)
                        && clear_of(&cells, a, r1, Some(mother.id))
                        && clear_of(&cells, b, r2, Some(mother.id))
                    {
                        placed = Some(((a, r1), (b, r2)));
                        break;
                    }
                }
                // No room: the mother stays mitotic and retries next frame.
                if let Some(((a, r1), (b, r2))) = placed {
                    cells.remove(idx);
                    let (da, db) = (next_id, next_id + 1);
                    next_id += 2;
                    for (did, center, radius) in [(da, a, r1), (db, b, r2)] {
                        cells.push(LiveCell {
                            id: did,
                            center,
                            radius,
                            post_mitotic: config.mitotic_lead,
                            pre_mitotic: None,
                        });
                    }
                    divisions.push(DivisionEvent { mother: mother.id, frame: t, daughters: (da, db) });
                    continue;
                }
            }

            let c = &cells[idx];
            let proposal = if config.drift_sigma > 0.0 {
                let p = Point::new(c.center.x + step.sample(&mut motion), c.center.y + step.sample(&mut motion));
                arena.clamp(p, c.radius)
            } else {
                c.center
            };
            if clear_of(&cells, proposal, c.radius, Some(c.id)) {
                cells[idx].center = proposal;
            }
            let c = &mut cells[idx];
            let can_finish = t + 2 * config.mitotic_lead + 2 <= config.frames;
            if can_finish && c.pre_mitotic.is_none() && c.post_mitotic == 0 && division.random_bool(config.division_rate)
            {
                c.pre_mitotic = Some(0);
            }
        }
        cells.sort_by_key(|c| c.id);
    }
    Ok(SynthScene { config: config.clone(), frames, divisions, impurities })
}

/// Ground-truth cell as seen through its rasterized mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtCellState {
    pub id: u32,
    pub centroid: Point,
    pub class: CellClass,
    pub area: usize,
}

impl SynthScene {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.config.width, self.config.height)
    }

    /// Instance mask of one frame; pixel values are cell ids.
    pub fn gt_mask(&self, frame: usize) -> LabelMap {
        let (w, h) = self.extent();
        let mut m = Raster::new(w, h, 1, 0u32);
        for c in &self.frames[frame] {
            for_disk(c.center, c.radius, w, h, |x, y| m.set(x, y, c.id));
        }
        m
    }

    /// Cells of one frame with mask centroids, ordered by id.
    pub fn gt_cells(&self, frame: usize) -> Vec<GtCellState> {
        let stats: BTreeMap<u32, imaging::RegionStats> =
            imaging::label_stats(&self.gt_mask(frame)).into_iter().map(|s| (s.label, s)).collect();
        self.frames[frame]
            .iter()
            .filter_map(|c| {
                stats.get(&c.id).map(|s| GtCellState { id: c.id, centroid: s.centroid, class: c.class, area: s.area })
            })
            .collect()
    }

    /// Lineage forest with one trajectory per cell id.
    pub fn gt_forest(&self) -> LineageForest {
        let parents: BTreeMap<u32, u32> = self
            .divisions
            .iter()
            .flat_map(|d| [(d.daughters.0, d.mother), (d.daughters.1, d.mother)])
            .collect();
        let mut trajectories: BTreeMap<u32, Trajectory> = BTreeMap::new();
        for f in 0..self.frame_count() {
            for c in self.gt_cells(f) {
                let row = StatusRow { x: c.centroid.x, y: c.centroid.y, frame: f, status: c.class };
                trajectories
                    .entry(c.id)
                    .or_insert_with(|| Trajectory {
                        id: c.id,
                        rows: Vec::new(),
                        parent: parents.get(&c.id).copied().unwrap_or(0),
                        state: TrackState::Terminated,
                    })
                    .rows
                    .push(row);
            }
        }
        LineageForest { trajectories }
    }

    /// Per-pixel coverage of cell disks in `[0, 1]`, with a half-pixel soft
    /// edge beyond each radius.
    pub fn cell_coverage(&self, frame: usize) -> Raster<f32> {
        let (w, h) = self.extent();
        let mut cov = Raster::new(w, h, 1, 0.0f32);
        for c in &self.frames[frame] {
            for_disk(c.center, c.radius + 0.5, w, h, |x, y| {
                let d = Point::new(x as f64, y as f64).distance(c.center);
                let v = (c.radius + 0.5 - d).clamp(0.0, 1.0) as f32;
                if v > cov.get(x, y) {
                    cov.set(x, y, v);
                }
            });
        }
        cov
    }
}

/// Calls `f` for every pixel within `radius` of `center` inside `w × h`.
fn for_disk(center: Point, radius: f64, w: usize, h: usize, mut f: impl FnMut(usize, usize)) {
    let r2 = radius * radius;
    let x0 = (center.x - radius).floor().max(0.0) as usize;
    let y0 = (center.y - radius).floor().max(0.0) as usize;
    let x1 = ((center.x + radius).ceil() as i64).clamp(0, w as i64 - 1) as usize;
    let y1 = ((center.y + radius).ceil() as i64).clamp(0, h as i64 - 1) as usize;
    for y in y0..=y1 {
        for x in x0..=x1 {
            if Point::new(x as f64, y as f64).distance_sq(center) <= r2 {
                f(x, y);
            }
        }
    }
}

const BACKGROUND_LEVEL: f32 = 0.1;
const BACKGROUND_NOISE: f64 = 0.02;
const CELL_CONTRAST: f32 = 0.7;
const IMPURITY_CONTRAST: f32 = 0.25;

/// Grayscale frames in `[0, 1]`: soft-edged bright disks and dimmer static
/// impurities over a noisy background.
pub fn render_images(scene: &SynthScene) -> Vec<Raster<f32>> {
    (0..scene.frame_count()).map(|f| render_image(scene, f)).collect()
}

pub fn render_image(scene: &SynthScene, frame: usize) -> Raster<f32> {
    let (w, h) = scene.extent();
    let mut rng = stream(scene.config.seed, STREAM_IMAGE, frame);
    let noise = Normal::new(0.0, BACKGROUND_NOISE).expect("valid sigma");
    let mut img = Raster::new(w, h, 1, 0.0f32);
    for v in img.data_mut() {
        *v = BACKGROUND_LEVEL + noise.sample(&mut rng) as f32;
    }
    for imp in &scene.impurities {
        for_disk(imp.center, imp.radius, w, h, |x, y| {
            let i = img.index(x, y, 0);
            img.data_mut()[i] += IMPURITY_CONTRAST;
        });
    }
    let cov = scene.cell_coverage(frame);
    for (v, c) in img.data_mut().iter_mut().zip(cov.data()) {
        *v = (*v + CELL_CONTRAST * c).clamp(0.0, 1.0);
    }
    img
}

/// Detection and segmentation probability maps of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbFrame {
    /// Channels (mitotic, normal, background).
    pub det: ProbMap,
    /// Channels (boundary, interior, background).
    pub seg: ProbMap,
}

fn background_map(w: usize, h: usize, bg_channel: usize) -> ProbMap {
    let mut m = Raster::new(w, h, 3, 0.0f32);
    for px in m.data_mut().chunks_exact_mut(3) {
        px[bg_channel] = 1.0;
    }
    m
}

fn one_hot(m: &mut ProbMap, x: usize, y: usize, channel: usize) {
    for c in 0..3 {
        m.set_c(x, y, c, if c == channel { 1.0 } else { 0.0 });
    }
}

/// Idealized network outputs: one-hot class disks in the detection map and
/// the boundary/interior split of each disk mask in the segmentation map. Corruption drops cells, displaces blobs and
/// adds spurious normal-class blobs, deterministically for a given seed.
pub fn render_probmaps(scene: &SynthScene, corruption: &Corruption, seed: u64) -> Result<Vec<ProbFrame>> {
    corruption.validate()?;
    Ok((0..scene.frame_count()).map(|f| render_probmap(scene, corruption, seed, f)).collect())
}

pub fn render_probmap(scene: &SynthScene, corruption: &Corruption, seed: u64, frame: usize) -> ProbFrame {
    let (w, h) = scene.extent();
    let mut rng = stream(seed, STREAM_CORRUPTION, frame);
    let jitter = (corruption.centroid_jitter_sigma > 0.0)
        .then(|| Normal::new(0.0, corruption.centroid_jitter_sigma).expect("validated sigma"));
    let mut det = background_map(w, h, detection::BACKGROUND_CHANNEL);
    let mut seg = background_map(w, h, segmentation::BACKGROUND_CHANNEL);

    for c in &scene.frames[frame] {
        if corruption.dropout_prob > 0.0 && rng.random_bool(corruption.dropout_prob) {
            continue;
        }
        let center = match &jitter {
            Some(n) => Point::new(c.center.x + n.sample(&mut rng), c.center.y + n.sample(&mut rng)),
            None => c.center,
        };
        let class_channel = match c.class {
            CellClass::Mitotic => detection::MITOTIC_CHANNEL,
            CellClass::Normal => detection::NORMAL_CHANNEL,
        };
        for_disk(center, c.radius, w, h, |x, y| one_hot(&mut det, x, y, class_channel));
        paint_seg_cell(&mut seg, center, c.radius, false);
    }

    if corruption.false_positive_rate > 0.0 {
        let arena = Arena { cfg: &scene.config };
        for _ in 0..scene.frames[frame].len() {
            if !rng.random_bool(corruption.false_positive_rate) {
                continue;
            }
            let radius = scene.config.cell_radius * 0.8;
            let center = arena.sample_center(&mut rng, radius);
            for_disk(center, radius, w, h, |x, y| {
                if det.get_c(x, y, detection::BACKGROUND_CHANNEL) == 1.0 {
                    one_hot(&mut det, x, y, detection::NORMAL_CHANNEL);
                }
            });
            paint_seg_cell(&mut seg, center, radius, true);
        }
    }
    ProbFrame { det, seg }
}

/// Paints one disk mask into the segmentation map: pixels with an
/// 8-neighbor outside the disk (or outside the raster) are boundary, the
/// rest interior. With `only_background`, occupied pixels are left alone.
fn paint_seg_cell(seg: &mut ProbMap, center: Point, radius: f64, only_background: bool) {
    let (w, h) = seg.extent();
    let r2 = radius * radius;
    let inside = |x: i64, y: i64| {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && {
            let (dx, dy) = (x as f64 - center.x, y as f64 - center.y);
            dx * dx + dy * dy <= r2
        }
    };
    for_disk(center, radius, w, h, |x, y| {
        if only_background && seg.get_c(x, y, segmentation::BACKGROUND_CHANNEL) != 1.0 {
            return;
        }
        let (xi, yi) = (x as i64, y as i64);
        let edge = (-1..=1).any(|dy| (-1..=1).any(|dx| !inside(xi + dx, yi + dy)));
        let ch = if edge { segmentation::BOUNDARY_CHANNEL } else { segmentation::INTERIOR_CHANNEL };
        one_hot(seg, x, y, ch);
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig { width: 128, height: 128, frames: 20, initial_cells: 8, seed, ..Default::default() }
    }

    #[test]
    fn same_seed_same_scene() {
        let a = generate(&small(5)).unwrap();
        let b = generate(&small(5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate(&small(6)).unwrap());
    }

    #[test]
    fn zero_rate_means_no_parents() {
        let scene = generate(&SynthConfig { division_rate: 0.0, ..small(1) }).unwrap();
        assert!(scene.divisions.is_empty());
        assert!(scene.gt_forest().trajectories.values().all(|t| t.parent == 0));
    }

    #[test]
    fn infeasible_packing_is_a_config_error() {
        let cfg = SynthConfig { width: 40, height: 40, initial_cells: 50, ..small(1) };
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
        assert!(matches!(generate(&SynthConfig { frames: 0, ..small(1) }), Err(Error::Config(_))));
    }

    #[test]
    fn mothers_are_mitotic_before_dividing() {
        let cfg = SynthConfig { division_rate: 0.2, ..small(3) };
        let scene = generate(&cfg).unwrap();
        assert!(!scene.divisions.is_empty());
        for ev in &scene.divisions {
            for k in 0..cfg.mitotic_lead {
                let f = ev.frame - k;
                let m = scene.frames[f].iter().find(|c| c.id == ev.mother).unwrap();
                assert_eq!(m.class, CellClass::Mitotic);
            }
            assert!(scene.frames[ev.frame + 1].iter().all(|c| c.id != ev.mother));
            let kids: Vec<_> = scene.frames[ev.frame + 1]
                .iter()
                .filter(|c| c.id == ev.daughters.0 || c.id == ev.daughters.1)
                .collect();
            assert_eq!(kids.len(), 2);
        }
    }

    #[test]
    fn empty_scene_renders_background() {
        let scene = generate(&SynthConfig { initial_cells: 0, impurity_count: 0, ..small(2) }).unwrap();
        let img = render_image(&scene, 0);
        let mean: f32 = img.data().iter().sum::<f32>() / img.data().len() as f32;
        assert!((mean - BACKGROUND_LEVEL).abs() < 0.01);
        assert!(scene.cell_coverage(0).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dropout_one_empties_maps() {
        let scene = generate(&small(4)).unwrap();
        let c = Corruption { dropout_prob: 1.0, ..Default::default() };
        let maps = render_probmaps(&scene, &c, 9).unwrap();
        for m in &maps {
            assert!(m.det.data().chunks_exact(3).all(|px| px[detection::BACKGROUND_CHANNEL] == 1.0));
            assert!(m.seg.data().chunks_exact(3).all(|px| px[segmentation::BACKGROUND_CHANNEL] == 1.0));
        }
    }

    #[test]
    fn corrupted_maps_are_reproducible() {
        let scene = generate(&small(4)).unwrap();
        let c = Corruption { dropout_prob: 0.2, centroid_jitter_sigma: 1.0, false_positive_rate: 0.1 };
        assert_eq!(render_probmaps(&scene, &c, 3).unwrap(), render_probmaps(&scene, &c, 3).unwrap());
        assert!(render_probmaps(&scene, &Corruption { dropout_prob: 2.0, ..c }, 3).is_err());
    }
}
