use std::collections::BTreeSet;

use celltrack::detection::{CellClass, DetectedCell};
use celltrack::imaging::Point;
use celltrack::tracker::{self, BBox, StatusRow, TrackState, Tracker, TrackerParams, Trajectory};
use proptest::prelude::*;

fn cell(frame: usize, x: f64, y: f64, class: CellClass) -> DetectedCell {
    DetectedCell { frame, centroid: Point::new(x, y), class, area: 64, region_label: 1 }
}

fn track(id: u32, x: f64, y: f64) -> Trajectory {
    Trajectory {
        id,
        rows: vec![StatusRow { x, y, frame: 0, status: CellClass::Normal }],
        parent: 0,
        state: TrackState::Active,
    }
}

/// IOU of two equal squares of edge `s` from their center offsets.
fn square_iou(dx: f64, dy: f64, s: f64) -> f64 {
    let inter = (s - dx.abs()).max(0.0) * (s - dy.abs()).max(0.0);
    if inter == 0.0 { 0.0 } else { inter / (2.0 * s * s - inter) }
}

/// Repeatedly takes the best remaining pair from the full IOU matrix.
fn argmax_oracle(tracks: &[Trajectory], dets: &[DetectedCell], alpha: f64, s: f64) -> Vec<(u32, usize)> {
    let mut free_t: BTreeSet<usize> = (0..tracks.len()).collect();
    let mut free_d: BTreeSet<usize> = (0..dets.len()).collect();
    let mut out = Vec::new();
    loop {
        let mut best: Option<(f64, u32, usize, usize)> = None;
        for &i in &free_t {
            for &j in &free_d {
                let p = tracks[i].rows[0].position();
                let v = square_iou(p.x - dets[j].centroid.x, p.y - dets[j].centroid.y, s);
                if v < alpha || v == 0.0 {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bv, bid, bj, _)) => {
                        v > bv || (v == bv && (tracks[i].id < bid || (tracks[i].id == bid && j < bj)))
                    }
                };
                if better {
                    best = Some((v, tracks[i].id, j, i));
                }
            }
        }
        let Some((_, id, j, i)) = best else { break };
        out.push((id, j));
        free_t.remove(&i);
        free_d.remove(&j);
    }
    out.sort_unstable();
    out
}

fn params(l_min: usize) -> TrackerParams {
    TrackerParams { alpha: 0.2, n_size: Some(8.0), theta_mit: 2, w_status: 5, l_min, r_daughter: None }
}

proptest! {
    #[test]
    fn iou_matches_closed_form(dx in -20i32..20, dy in -20i32..20, s in 1u32..16) {
        let (dx, dy, s) = (dx as f64 / 2.0, dy as f64 / 2.0, s as f64);
        let a = BBox::new(Point::new(10.0, 10.0), s).unwrap();
        let b = BBox::new(Point::new(10.0 + dx, 10.0 + dy), s).unwrap();
        let v = tracker::iou(&a, &b);
        prop_assert!((v - square_iou(dx, dy, s)).abs() < 1e-12);
        prop_assert!((v - tracker::iou(&b, &a)).abs() < 1e-15);
    }

    #[test]
    fn associate_equals_argmax_oracle(
        tpos in prop::collection::vec((0i32..12, 0i32..12), 0..8),
        dpos in prop::collection::vec((0i32..12, 0i32..12), 0..8),
        alpha in prop::sample::select(vec![0.0, 0.1, 0.2, 0.5]),
    ) {
        // Integer grid positions so exact IOU ties occur.
        let tracks: Vec<Trajectory> =
            tpos.iter().enumerate().map(|(i, &(x, y))| track(3 * i as u32 + 1, x as f64, y as f64)).collect();
        let dets: Vec<DetectedCell> =
            dpos.iter().map(|&(x, y)| cell(1, x as f64, y as f64, CellClass::Normal)).collect();
        let refs: Vec<&Trajectory> = tracks.iter().collect();
        let a = tracker::associate(&refs, &dets, alpha, 4.0);
        prop_assert_eq!(&a.matches, &argmax_oracle(&tracks, &dets, alpha, 4.0));
        let matched_t: BTreeSet<u32> = a.matches.iter().map(|m| m.0).collect();
        let matched_d: BTreeSet<usize> = a.matches.iter().map(|m| m.1).collect();
        prop_assert_eq!(matched_t.len() + a.unmatched_tracks.len(), tracks.len());
        prop_assert_eq!(matched_d.len() + a.unmatched_dets.len(), dets.len());
        prop_assert!(a.unmatched_tracks.iter().all(|t| !matched_t.contains(t)));
        prop_assert!(a.unmatched_dets.iter().all(|d| !matched_d.contains(d)));
    }

    #[test]
    fn tracker_output_is_a_valid_dense_forest(
        frames in prop::collection::vec(
            prop::collection::vec((0i32..60, 0i32..60, prop::bool::weighted(0.3)), 0..10), 1..12),
        l_min in 1usize..5,
    ) {
        let mut tr = Tracker::new(params(l_min)).unwrap();
        let mut per_frame = Vec::new();
        for (t, f) in frames.iter().enumerate() {
            let dets: Vec<DetectedCell> = f
                .iter()
                .map(|&(x, y, m)| cell(t, x as f64, y as f64, if m { CellClass::Mitotic } else { CellClass::Normal }))
                .collect();
            tr.step(&dets, t).unwrap();
            per_frame.push(dets);
        }
        let forest = tr.finalize();
        prop_assert!(forest.validate().is_ok());
        let ids: Vec<u32> = forest.trajectories.keys().copied().collect();
        prop_assert_eq!(ids, (1..=forest.len() as u32).collect::<Vec<_>>());
        for t in forest.trajectories.values() {
            if forest.children(t.id).is_empty() {
                prop_assert!(t.len() >= l_min, "childless track {} has {} rows", t.id, t.len());
            }
            for r in &t.rows {
                prop_assert!(per_frame[r.frame].iter().any(|d| d.centroid == r.position() && d.class == r.status));
            }
        }
        // A detection feeds at most one track per frame.
        for (f, dets) in per_frame.iter().enumerate() {
            let used: Vec<Point> = forest
                .trajectories
                .values()
                .filter_map(|t| t.row_at(f).map(|r| r.position()))
                .collect();
            for p in &used {
                let supply = dets.iter().filter(|d| d.centroid == *p).count();
                let demand = used.iter().filter(|q| *q == p).count();
                prop_assert!(demand <= supply);
            }
        }
    }

    #[test]
    fn prune_then_renumber_is_stable(l_min in 1usize..6, lens in prop::collection::vec(1usize..8, 1..10)) {
        let mut forest = celltrack::tracker::LineageForest::default();
        for (i, &n) in lens.iter().enumerate() {
            let id = 2 * i as u32 + 5;
            let rows = (0..n).map(|f| StatusRow { x: i as f64, y: 0.0, frame: f, status: CellClass::Normal }).collect();
            forest.trajectories.insert(id, Trajectory { id, rows, parent: 0, state: TrackState::Terminated });
        }
        let out = tracker::renumber(tracker::prune_short(forest, l_min));
        prop_assert_eq!(out.len(), lens.iter().filter(|&&n| n >= l_min).count());
        prop_assert!(out.trajectories.values().all(|t| t.len() >= l_min));
        prop_assert_eq!(tracker::renumber(out.clone()), out);
    }
}

#[test]
fn two_cells_moving_apart_yield_one_division() {
    // One mitotic cell for four frames, then two daughters drifting apart.
    let mut tr = Tracker::new(params(2)).unwrap();
    for t in 0..4 {
        let class = if t >= 1 { CellClass::Mitotic } else { CellClass::Normal };
        tr.step(&[cell(t, 30.0, 30.0, class)], t).unwrap();
    }
    for t in 4..8 {
        let d = 6.0 + 2.0 * (t - 4) as f64;
        tr.step(&[cell(t, 30.0 - d, 30.0, CellClass::Normal), cell(t, 30.0 + d, 30.0, CellClass::Normal)], t).unwrap();
    }
    let forest = tr.finalize();
    forest.validate().unwrap();
    assert_eq!(forest.len(), 3);
    assert_eq!(forest.children(1), vec![2, 3]);
    assert_eq!(forest.get(1).unwrap().end(), 3);
}

#[test]
fn steps_must_increase() {
    let mut tr = Tracker::new(params(1)).unwrap();
    tr.step(&[], 2).unwrap();
    assert!(tr.step(&[], 2).is_err());
    assert!(Tracker::new(TrackerParams { alpha: 1.5, ..params(1) }).is_err());
    assert!(Tracker::new(TrackerParams { theta_mit: 9, ..params(1) }).is_err());
}
