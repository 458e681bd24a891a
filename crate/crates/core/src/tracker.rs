//! Online IOU tracker with status-matrix mitosis detection and lineage.
//!
//! Every detection is wrapped in an `N_size × N_size` box around its
//! centroid. A trajectory is extended by the detection whose box has the
//! largest IOU with the box of the trajectory's last cell, provided that IOU
//! reaches `alpha`; conflicts are resolved greedily in descending IOU order.
//! Trajectories without a match terminate. Each trajectory keeps a bounded
//! window of recent status rows; when a trajectory terminates while more
//! than `theta_mit` of those rows are mitotic and two newly started
//! trajectories lie close to its last position, they become its daughters.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::detection::{CellClass, DetectedCell};
use crate::imaging::Point;
use crate::{Error, Result};

/// Square, axis-aligned box in unbounded plane coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub center: Point,
    pub size: f64,
}

impl BBox {
    pub fn new(center: Point, size: f64) -> Result<Self> {
        if !(size > 0.0) || !size.is_finite() {
            return Err(Error::invalid(format!("box size must be positive, got {size}")));
        }
        Ok(BBox { center, size })
    }

    /// `(xmin, ymin, xmax, ymax)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let h = self.size / 2.0;
        (self.center.x - h, self.center.y - h, self.center.x + h, self.center.y + h)
    }
}

pub fn bbox_of(cell: &DetectedCell, n_size: f64) -> Result<BBox> {
    BBox::new(cell.centroid, n_size)
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.bounds();
    let (bx0, by0, bx1, by1) = b.bounds();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.size * a.size + b.size * b.size - inter;
    (inter / union).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatusRow {
    pub x: f64,
    pub y: f64,
    pub frame: usize,
    pub status: CellClass,
}

impl StatusRow {
    pub fn from_cell(cell: &DetectedCell) -> Self {
        StatusRow { x: cell.centroid.x, y: cell.centroid.y, frame: cell.frame, status: cell.class }
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// Bounded FIFO of the most recent status rows of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct CellStatusMatrix {
    capacity: usize,
    rows: VecDeque<StatusRow>,
}

impl CellStatusMatrix {
    pub fn new(capacity: usize) -> Self {
        CellStatusMatrix { capacity: capacity.max(1), rows: VecDeque::with_capacity(capacity) }
    }

    pub fn push(&mut self, row: StatusRow) {
        if self.rows.len() == self.capacity {
            self.rows.pop_front();
        }
        self.rows.push_back(row);
    }

    pub fn rows(&self) -> impl Iterator<Item = &StatusRow> {
        self.rows.iter()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn mitotic_count(&self) -> usize {
        self.rows.iter().filter(|r| r.status == CellClass::Mitotic).count()
    }
}

/// True iff strictly more than `theta_mit` rows in the window are mitotic.
pub fn detect_mitosis(matrix: &CellStatusMatrix, theta_mit: usize) -> bool {
    matrix.mitotic_count() > theta_mit
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackState {
    /// Shorter than the minimum length so far.
    Tentative,
    Active,
    Terminated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: u32,
    /// One row per frame, consecutive.
    pub rows: Vec<StatusRow>,
    /// Mother track, 0 if none.
    pub parent: u32,
    pub state: TrackState,
}

impl Trajectory {
    pub fn start(&self) -> usize {
        self.rows[0].frame
    }

    pub fn end(&self) -> usize {
        self.rows[self.rows.len() - 1].frame
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> &StatusRow {
        &self.rows[self.rows.len() - 1]
    }

    pub fn row_at(&self, frame: usize) -> Option<&StatusRow> {
        let start = self.rows.first()?.frame;
        self.rows.get(frame.checked_sub(start)?)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LineageForest {
    pub trajectories: BTreeMap<u32, Trajectory>,
}

impl LineageForest {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&Trajectory> {
        self.trajectories.get(&id)
    }

    pub fn children(&self, id: u32) -> Vec<u32> {
        self.trajectories.values().filter(|t| t.parent == id && id != 0).map(|t| t.id).collect()
    }

    /// Number of frames spanned, `max end + 1`.
    pub fn frame_count(&self) -> usize {
        self.trajectories.values().map(|t| t.end() + 1).max().unwrap_or(0)
    }

    /// Checks contiguity, parent references, the two-children rule and acyclicity.
    pub fn validate(&self) -> Result<()> {
        let fail = |labels: Vec<u32>, message: &str| {
            Err(Error::Consistency { labels, message: message.to_string() })
        };
        let mut children: BTreeMap<u32, Vec<&Trajectory>> = BTreeMap::new();
        for (&id, t) in &self.trajectories {
            if id == 0 || t.id != id {
                return fail(vec![id], "track ids must be positive and match their key");
            }
            if t.rows.is_empty() {
                return fail(vec![id], "track has no rows");
            }
            if t.rows.windows(2).any(|w| w[1].frame != w[0].frame + 1) {
                return fail(vec![id], "track frames are not contiguous");
            }
            if t.parent == id {
                return fail(vec![id], "track is its own parent");
            }
            if t.parent != 0 {
                let Some(p) = self.trajectories.get(&t.parent) else {
                    return fail(vec![id, t.parent], "parent track missing");
                };
                if !p.rows.is_empty() && t.start() != p.end() + 1 {
                    return fail(vec![id, t.parent], "daughter must start right after its mother ends");
                }
                children.entry(t.parent).or_default().push(t);
            }
        }
        for (p, kids) in &children {
            if kids.len() > 2 {
                return fail(kids.iter().map(|k| k.id).chain([*p]).collect(), "more than two daughters");
            }
        }
        // Start frames strictly increase along parent links, so any cycle
        // would already have failed the start/end rule above. Walk anyway to
        // guard against hand-built forests.
        for &id in self.trajectories.keys() {
            let mut seen = BTreeSet::new();
            let mut cur = id;
            while cur != 0 {
                if !seen.insert(cur) {
                    return fail(seen.into_iter().collect(), "cyclic parent links");
                }
                cur = self.trajectories.get(&cur).map_or(0, |t| t.parent);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerParams {
    /// Minimum IOU for association.
    pub alpha: f64,
    /// Box edge in pixels; estimated from the first detections when `None`.
    pub n_size: Option<f64>,
    pub theta_mit: usize,
    pub w_status: usize,
    /// Childless trajectories shorter than this are discarded.
    pub l_min: usize,
    /// Daughter search radius; `2 * n_size` when `None`.
    pub r_daughter: Option<f64>,
}

impl Default for TrackerParams {
    fn default() -> Self {
        TrackerParams { alpha: 0.2, n_size: None, theta_mit: 2, w_status: 5, l_min: 3, r_daughter: None }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if let Some(n) = self.n_size {
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::invalid(format!("N_size must be positive, got {n}")));
            }
        }
        if self.w_status == 0 {
            return Err(Error::invalid("status window must hold at least one row"));
        }
        if self.theta_mit > self.w_status {
            return Err(Error::invalid(format!(
                "mitosis threshold {} exceeds status window {}",
                self.theta_mit, self.w_status
            )));
        }
        if self.l_min == 0 {
            return Err(Error::invalid("L_min must be at least 1"));
        }
        if let Some(r) = self.r_daughter {
            if !(r >= 0.0) {
                return Err(Error::invalid(format!("daughter radius must be non-negative, got {r}")));
            }
        }
        Ok(())
    }
}

/// Mean `sqrt(area)` of a set of detections.
pub fn estimate_n_size(detections: &[DetectedCell]) -> Option<f64> {
    if detections.is_empty() {
        return None;
    }
    let sum: f64 = detections.iter().map(|d| (d.area as f64).sqrt()).sum();
    Some(sum / detections.len() as f64)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Association {
    /// `(track id, detection index)`.
    pub matches: Vec<(u32, usize)>,
    pub unmatched_tracks: Vec<u32>,
    pub unmatched_dets: Vec<usize>,
}

/// Greedy IOU association of trajectory end cells with one frame's detections.
///
/// Candidate pairs with IOU at least `alpha` are accepted in descending IOU
/// order (ties by track id, then detection index), each track and each
/// detection at most once.
pub fn associate(
    tracks: &[&Trajectory],
    detections: &[DetectedCell],
    alpha: f64,
    n_size: f64,
) -> Association {
    let det_boxes: Vec<BBox> = detections.iter().map(|d| BBox { center: d.centroid, size: n_size }).collect();
    let mut candidates = Vec::new();
    for t in tracks {
        let tb = BBox { center: t.last().position(), size: n_size };
        for (j, db) in det_boxes.iter().enumerate() {
            let v = iou(&tb, db);
            if v >= alpha && v > 0.0 {
                candidates.push((v, t.id, j));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut used_tracks = BTreeSet::new();
    let mut used_dets = vec![false; detections.len()];
    let mut matches = Vec::new();
    for (_, tid, j) in candidates {
        if used_dets[j] || used_tracks.contains(&tid) {
            continue;
        }
        used_tracks.insert(tid);
        used_dets[j] = true;
        matches.push((tid, j));
    }
    matches.sort_unstable();
    Association {
        matches,
        unmatched_tracks: tracks.iter().map(|t| t.id).filter(|id| !used_tracks.contains(id)).collect(),
        unmatched_dets: (0..detections.len()).filter(|&j| !used_dets[j]).collect(),
    }
}

/// A division found while tracking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MitosisDetection {
    pub mother: u32,
    /// Last frame of the mother.
    pub frame: usize,
    pub position: Point,
    pub daughters: (u32, u32),
}

/// Sequential tracker state. Feed frames in increasing order with [`Tracker::step`].
#[derive(Debug, Clone)]
pub struct Tracker {
    params: TrackerParams,
    n_size: Option<f64>,
    tracks: BTreeMap<u32, Trajectory>,
    status: BTreeMap<u32, CellStatusMatrix>,
    live: Vec<u32>,
    next_id: u32,
    last_frame: Option<usize>,
    mitoses: Vec<MitosisDetection>,
}

impl Tracker {
    pub fn new(params: TrackerParams) -> Result<Self> {
        params.validate()?;
        Ok(Tracker {
            params,
            n_size: params.n_size,
            tracks: BTreeMap::new(),
            status: BTreeMap::new(),
            live: Vec::new(),
            next_id: 1,
            last_frame: None,
            mitoses: Vec::new(),
        })
    }

    pub fn params(&self) -> &TrackerParams {
        &self.params
    }

    /// Box size in use, once known.
    pub fn n_size(&self) -> Option<f64> {
        self.n_size
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.tracks.values()
    }

    pub fn live_tracks(&self) -> &[u32] {
        &self.live
    }

    /// Divisions detected so far, under pre-finalization ids.
    pub fn mitoses(&self) -> &[MitosisDetection] {
        &self.mitoses
    }

    fn r_daughter(&self, n_size: f64) -> f64 {
        self.params.r_daughter.unwrap_or(2.0 * n_size)
    }

    pub fn step(&mut self, detections: &[DetectedCell], frame: usize) -> Result<()> {
        if let Some(last) = self.last_frame {
            if frame <= last {
                return Err(Error::invalid(format!(
                    "frame {frame} does not follow previous frame {last}"
                )));
            }
        }
        if let Some(d) = detections.iter().find(|d| d.frame != frame) {
            return Err(Error::invalid(format!(
                "detection from frame {} passed to step for frame {frame}",
                d.frame
            )));
        }
        let contiguous = self.last_frame.is_some_and(|l| l + 1 == frame);
        self.last_frame = Some(frame);
        if self.n_size.is_none() {
            self.n_size = estimate_n_size(detections);
        }

        let live: Vec<u32> = std::mem::take(&mut self.live);
        let assoc = match self.n_size {
            Some(n) if contiguous => {
                let refs: Vec<&Trajectory> = live.iter().map(|id| &self.tracks[id]).collect();
                associate(&refs, detections, self.params.alpha, n)
            }
            // Nothing to associate with, or a frame gap cut every trajectory.
            _ => Association {
                matches: Vec::new(),
                unmatched_tracks: live.clone(),
                unmatched_dets: (0..detections.len()).collect(),
            },
        };

        for &(tid, j) in &assoc.matches {
            let row = StatusRow::from_cell(&detections[j]);
            let t = self.tracks.get_mut(&tid).expect("live track exists");
            t.rows.push(row);
            if t.rows.len() >= self.params.l_min {
                t.state = TrackState::Active;
            }
            self.status.get_mut(&tid).expect("status matrix exists").push(row);
            self.live.push(tid);
        }

        let mut mothers = Vec::new();
        for &tid in &assoc.unmatched_tracks {
            self.tracks.get_mut(&tid).expect("live track exists").state = TrackState::Terminated;
            if detect_mitosis(&self.status[&tid], self.params.theta_mit) {
                mothers.push(tid);
            }
            self.status.remove(&tid);
        }

        let mut newborn: Vec<(u32, usize)> = Vec::with_capacity(assoc.unmatched_dets.len());
        for &j in &assoc.unmatched_dets {
            let id = self.next_id;
            self.next_id += 1;
            let row = StatusRow::from_cell(&detections[j]);
            let state = if self.params.l_min <= 1 { TrackState::Active } else { TrackState::Tentative };
            self.tracks.insert(id, Trajectory { id, rows: vec![row], parent: 0, state });
            let mut m = CellStatusMatrix::new(self.params.w_status);
            m.push(row);
            self.status.insert(id, m);
            self.live.push(id);
            newborn.push((id, j));
        }
        self.live.sort_unstable();

        if contiguous && !mothers.is_empty() && newborn.len() >= 2 {
            let radius = self.r_daughter(self.n_size.unwrap_or(0.0));
            let mut taken = BTreeSet::new();
            for mother in mothers {
                let pos = self.tracks[&mother].last().position();
                let mut near: Vec<(f64, usize, u32)> = newborn
                    .iter()
                    .filter(|(id, _)| !taken.contains(id))
                    .map(|&(id, j)| (detections[j].centroid.distance(pos), j, id))
                    .filter(|(d, _, _)| *d <= radius)
                    .collect();
                if near.len() < 2 {
                    continue;
                }
                near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let (a, b) = (near[0].2, near[1].2);
                for d in [a, b] {
                    taken.insert(d);
                    self.tracks.get_mut(&d).expect("newborn exists").parent = mother;
                }
                self.mitoses.push(MitosisDetection {
                    mother,
                    frame: frame - 1,
                    position: pos,
                    daughters: (a.min(b), a.max(b)),
                });
            }
        }
        Ok(())
    }

    /// Closes all trajectories, prunes short childless ones and renumbers
    /// the survivors densely from 1 in creation order.
    pub fn finalize(mut self) -> LineageForest {
        for t in self.tracks.values_mut() {
            t.state = TrackState::Terminated;
        }
        let pruned = prune_short(LineageForest { trajectories: self.tracks }, self.params.l_min);
        renumber(pruned)
    }
}

/// Removes childless trajectories shorter than `l_min`, repeating until
/// nothing changes, and clears parent links that point at removed tracks.
pub fn prune_short(forest: LineageForest, l_min: usize) -> LineageForest {
    let mut tracks = forest.trajectories;
    loop {
        let parents: BTreeSet<u32> = tracks.values().map(|t| t.parent).filter(|&p| p != 0).collect();
        let doomed: Vec<u32> = tracks
            .values()
            .filter(|t| t.len() < l_min && !parents.contains(&t.id))
            .map(|t| t.id)
            .collect();
        if doomed.is_empty() {
            break;
        }
        for id in doomed {
            tracks.remove(&id);
        }
    }
    let ids: BTreeSet<u32> = tracks.keys().copied().collect();
    for t in tracks.values_mut() {
        if t.parent != 0 && !ids.contains(&t.parent) {
            t.parent = 0;
        }
    }
    LineageForest { trajectories: tracks }
}

/// Maps ids to `1..=K` in ascending order of the old ids.
pub fn renumber(forest: LineageForest) -> LineageForest {
    let map: BTreeMap<u32, u32> =
        forest.trajectories.keys().enumerate().map(|(i, &id)| (id, i as u32 + 1)).collect();
    let trajectories = forest
        .trajectories
        .into_values()
        .map(|mut t| {
            t.id = map[&t.id];
            t.parent = if t.parent == 0 { 0 } else { map.get(&t.parent).copied().unwrap_or(0) };
            (t.id, t)
        })
        .collect();
    LineageForest { trajectories }
}
