//! Detection, mitosis, segmentation and link-level scores.
//!
//! Point matching is greedy: candidate pairs within the tolerance are taken
//! in ascending cost order, each side at most once. Ties are broken on
//! coordinates rather than input positions, so reordering inputs never
//! changes the counts.

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::detection::{CellClass, DetectedCell};
use crate::imaging::{LabelMap, Point};
use crate::tracker::LineageForest;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MatchResult {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        MatchResult { true_positives: tp, false_positives: fp, false_negatives: fn_, precision, recall, f1 }
    }
}

/// Ground-truth cell for detection scoring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtCell {
    pub pos: Point,
    pub class: CellClass,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionReport {
    pub overall: MatchResult,
    pub mitotic: MatchResult,
    pub normal: MatchResult,
}

fn coord_key(p: Point) -> (u64, u64) {
    (p.x.to_bits(), p.y.to_bits())
}

/// Greedy one-to-one matching of points within `radius`.
pub fn greedy_point_match(pred: &[Point], gt: &[Point], radius: f64) -> Vec<(usize, usize)> {
    let r2 = radius * radius;
    let mut pairs = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            let d2 = p.distance_sq(*g);
            if d2 <= r2 {
                pairs.push((d2, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| coord_key(pred[a.1]).cmp(&coord_key(pred[b.1])))
            .then_with(|| coord_key(gt[a.2]).cmp(&coord_key(gt[b.2])))
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    take_greedy(pairs.into_iter().map(|(_, i, j)| (i, j)), pred.len(), gt.len())
}

fn take_greedy(order: impl Iterator<Item = (usize, usize)>, n_pred: usize, n_gt: usize) -> Vec<(usize, usize)> {
    let mut used_p = vec![false; n_pred];
    let mut used_g = vec![false; n_gt];
    let mut out = Vec::new();
    for (i, j) in order {
        if !used_p[i] && !used_g[j] {
            used_p[i] = true;
            used_g[j] = true;
            out.push((i, j));
        }
    }
    out
}

fn count_match(pred: &[Point], gt: &[Point], radius: f64) -> MatchResult {
    let tp = greedy_point_match(pred, gt, radius).len();
    MatchResult::from_counts(tp, pred.len() - tp, gt.len() - tp)
}

/// Centroid-detection precision/recall/F1, overall (class-agnostic) and per class.
pub fn match_detections(pred: &[DetectedCell], gt: &[GtCell], r_match: f64) -> Result<DetectionReport> {
    if !(r_match > 0.0) {
        return Err(Error::invalid(format!("match radius must be positive, got {r_match}")));
    }
    let points = |class: Option<CellClass>| -> (Vec<Point>, Vec<Point>) {
        (
            pred.iter().filter(|d| class.is_none_or(|c| d.class == c)).map(|d| d.centroid).collect(),
            gt.iter().filter(|g| class.is_none_or(|c| g.class == c)).map(|g| g.pos).collect(),
        )
    };
    let score = |class| {
        let (p, g) = points(class);
        count_match(&p, &g, r_match)
    };
    Ok(DetectionReport {
        overall: score(None),
        mitotic: score(Some(CellClass::Mitotic)),
        normal: score(Some(CellClass::Normal)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MitosisEvent {
    pub frame: usize,
    pub position: Point,
}

/// One event per mother with daughters, at the mother's last frame and position.
pub fn mitosis_events(forest: &LineageForest) -> Vec<MitosisEvent> {
    forest
        .trajectories
        .values()
        .filter(|t| !forest.children(t.id).is_empty())
        .map(|t| MitosisEvent { frame: t.end(), position: t.last().position() })
        .collect()
}

/// Events match when their frames differ by at most `dt` and they lie within
/// `radius`; pairs are taken by ascending (frame gap, distance).
pub fn match_mitosis(pred: &[MitosisEvent], gt: &[MitosisEvent], dt: usize, radius: f64) -> Result<MatchResult> {
    if !(radius > 0.0) {
        return Err(Error::invalid(format!("mitosis match radius must be positive, got {radius}")));
    }
    let r2 = radius * radius;
    let mut pairs = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            let gap = p.frame.abs_diff(g.frame);
            let d2 = p.position.distance_sq(g.position);
            if gap <= dt && d2 <= r2 {
                pairs.push((gap, d2, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then_with(|| (pred[a.2].frame, coord_key(pred[a.2].position)).cmp(&(pred[b.2].frame, coord_key(pred[b.2].position))))
            .then_with(|| (gt[a.3].frame, coord_key(gt[a.3].position)).cmp(&(gt[b.3].frame, coord_key(gt[b.3].position))))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });
    let tp = take_greedy(pairs.into_iter().map(|(_, _, i, j)| (i, j)), pred.len(), gt.len()).len();
    Ok(MatchResult::from_counts(tp, pred.len() - tp, gt.len() - tp))
}

/// Mean Jaccard index over ground-truth objects. A predicted object counts
/// for a ground-truth object `G` only if it covers more than half of `G`;
/// otherwise `G` scores 0. Returns 1 when there are no ground-truth objects.
pub fn seg_score(pred: &[LabelMap], gt: &[LabelMap]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!(
            "{} predicted frames but {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    let mut total = 0.0;
    let mut objects = 0usize;
    for (f, (p, g)) in pred.iter().zip(gt).enumerate() {
        if !p.same_extent(g) {
            return Err(Error::invalid(format!("frame {f}: extent mismatch")));
        }
        let mut overlap: HashMap<(u32, u32), usize> = HashMap::new();
        let mut p_size: HashMap<u32, usize> = HashMap::new();
        let mut g_size: BTreeMap<u32, usize> = BTreeMap::new();
        for (&pl, &gl) in p.data().iter().zip(g.data()) {
            if pl != 0 {
                *p_size.entry(pl).or_default() += 1;
            }
            if gl != 0 {
                *g_size.entry(gl).or_default() += 1;
                if pl != 0 {
                    *overlap.entry((gl, pl)).or_default() += 1;
                }
            }
        }
        let mut best: HashMap<u32, (u32, usize)> = HashMap::new();
        for (&(gl, pl), &n) in &overlap {
            if 2 * n > g_size[&gl] {
                best.insert(gl, (pl, n));
            }
        }
        for (gl, &gs) in &g_size {
            objects += 1;
            if let Some(&(pl, n)) = best.get(gl) {
                total += n as f64 / (gs + p_size[&pl] - n) as f64;
            }
        }
    }
    Ok(if objects == 0 { 1.0 } else { total / objects as f64 })
}

type Node = (u32, usize);

fn frame_nodes(forest: &LineageForest) -> BTreeMap<usize, Vec<(u32, Point)>> {
    let mut out: BTreeMap<usize, Vec<(u32, Point)>> = BTreeMap::new();
    for t in forest.trajectories.values() {
        for r in &t.rows {
            out.entry(r.frame).or_default().push((t.id, r.position()));
        }
    }
    out
}

/// Per-frame greedy centroid matching of predicted track nodes to
/// ground-truth track nodes: `(pred id, frame) -> gt id`.
pub fn node_correspondence(pred: &LineageForest, gt: &LineageForest, r_match: f64) -> HashMap<Node, u32> {
    let p_nodes = frame_nodes(pred);
    let g_nodes = frame_nodes(gt);
    let mut map = HashMap::new();
    for (f, pn) in &p_nodes {
        let Some(gn) = g_nodes.get(f) else { continue };
        let pp: Vec<Point> = pn.iter().map(|n| n.1).collect();
        let gp: Vec<Point> = gn.iter().map(|n| n.1).collect();
        for (i, j) in greedy_point_match(&pp, &gp, r_match) {
            map.insert((pn[i].0, *f), gn[j].0);
        }
    }
    map
}

/// Temporal links within tracks plus mother-to-daughter links.
pub fn forest_links(forest: &LineageForest) -> Vec<(Node, Node)> {
    let mut links = Vec::new();
    for t in forest.trajectories.values() {
        for w in t.rows.windows(2) {
            links.push(((t.id, w[0].frame), (t.id, w[1].frame)));
        }
        if t.parent != 0 {
            if let Some(p) = forest.get(t.parent) {
                links.push(((p.id, p.end()), (t.id, t.start())));
            }
        }
    }
    links
}

/// Scores predicted links against ground-truth links after per-frame node
/// matching within `r_match`.
pub fn link_score(pred: &LineageForest, gt: &LineageForest, r_match: f64) -> MatchResult {
    let corr = node_correspondence(pred, gt, r_match);
    let gt_links: HashSet<(Node, Node)> = forest_links(gt).into_iter().collect();
    let pred_links = forest_links(pred);
    let tp = pred_links
        .iter()
        .filter(|(a, b)| match (corr.get(a), corr.get(b)) {
            (Some(&ga), Some(&gb)) => gt_links.contains(&((ga, a.1), (gb, b.1))),
            _ => false,
        })
        .count();
    MatchResult::from_counts(tp, pred_links.len() - tp, gt_links.len() - tp)
}

/// True when every node of both forests is matched within `r_match` and the
/// node matching induces a track bijection that preserves parent links.
pub fn forests_isomorphic(pred: &LineageForest, gt: &LineageForest, r_match: f64) -> bool {
    if pred.len() != gt.len() {
        return false;
    }
    let pred_nodes: usize = pred.trajectories.values().map(|t| t.len()).sum();
    let gt_nodes: usize = gt.trajectories.values().map(|t| t.len()).sum();
    let corr = node_correspondence(pred, gt, r_match);
    if corr.len() != pred_nodes || pred_nodes != gt_nodes {
        return false;
    }
    let mut track_map: HashMap<u32, u32> = HashMap::new();
    for (&(pid, _), &gid) in &corr {
        if *track_map.entry(pid).or_insert(gid) != gid {
            return false;
        }
    }
    let image: HashSet<u32> = track_map.values().copied().collect();
    if image.len() != track_map.len() {
        return false;
    }
    pred.trajectories.values().all(|t| {
        let g = &gt.trajectories[&track_map[&t.id]];
        let parent = if t.parent == 0 { 0 } else { track_map.get(&t.parent).copied().unwrap_or(u32::MAX) };
        g.len() == t.len() && g.parent == parent
    })
}
