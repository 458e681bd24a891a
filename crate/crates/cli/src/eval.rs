//! Scores a result directory against ground truth.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::json;

use celltrack::ctc_io::{self, SequenceLayout, TrackTarget};
use celltrack::detection::DetectedCell;
use celltrack::imaging::{self, LabelMap};
use celltrack::metrics::{self, GtCell, MatchResult};
use celltrack::tracker::LineageForest;
use celltrack::{Error, Result};

use crate::config::PipelineConfig;
use crate::dataset;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub frames: usize,
    pub n_size: f64,
    pub r_match: f64,
    pub mitosis_dt: usize,
    pub mitosis_r: f64,
    pub detection: MatchResult,
    pub detection_mitotic: MatchResult,
    pub detection_normal: MatchResult,
    pub mitosis: MatchResult,
    pub seg: f64,
    pub link: MatchResult,
}

/// Sums per-frame counts and recomputes the ratios.
fn pool(results: impl Iterator<Item = MatchResult>) -> MatchResult {
    let (tp, fp, fn_) = results.fold((0, 0, 0), |a, r| {
        (a.0 + r.true_positives, a.1 + r.false_positives, a.2 + r.false_negatives)
    });
    MatchResult::from_counts(tp, fp, fn_)
}

/// Mean `sqrt(area)` over every object of every ground-truth mask.
fn mean_object_size(masks: &[LabelMap]) -> f64 {
    let sizes: Vec<f64> =
        masks.iter().flat_map(imaging::label_stats).map(|s| (s.area as f64).sqrt()).collect();
    if sizes.is_empty() {
        1.0
    } else {
        sizes.iter().sum::<f64>() / sizes.len() as f64
    }
}

pub struct EvalInputs {
    pub pred_forest: LineageForest,
    pub pred_masks: Vec<LabelMap>,
    pub pred_detections: Vec<Vec<DetectedCell>>,
    pub gt_forest: LineageForest,
    pub gt_seg: Vec<LabelMap>,
    pub gt_cells: Vec<Vec<GtCell>>,
}

pub fn score(inputs: &EvalInputs, cfg: &PipelineConfig) -> Result<EvalReport> {
    let frames = inputs.gt_seg.len();
    if inputs.pred_masks.len() != frames {
        return Err(Error::invalid(format!(
            "results have {} frames, ground truth has {frames}",
            inputs.pred_masks.len()
        )));
    }
    let n_size = cfg.track.n_size.unwrap_or_else(|| mean_object_size(&inputs.gt_seg));
    let r_match = cfg.eval.r_match_for(n_size);
    let mitosis_r = cfg.eval.mitosis_r_for(n_size);

    let empty_pred = Vec::new();
    let empty_gt = Vec::new();
    let reports = (0..frames)
        .map(|t| {
            let p = inputs.pred_detections.get(t).unwrap_or(&empty_pred);
            let g = inputs.gt_cells.get(t).unwrap_or(&empty_gt);
            metrics::match_detections(p, g, r_match)
        })
        .collect::<Result<Vec<_>>>()?;

    let mitosis = metrics::match_mitosis(
        &metrics::mitosis_events(&inputs.pred_forest),
        &metrics::mitosis_events(&inputs.gt_forest),
        cfg.eval.mitosis_dt,
        mitosis_r,
    )?;
    Ok(EvalReport {
        frames,
        n_size,
        r_match,
        mitosis_dt: cfg.eval.mitosis_dt,
        mitosis_r,
        detection: pool(reports.iter().map(|r| r.overall)),
        detection_mitotic: pool(reports.iter().map(|r| r.mitotic)),
        detection_normal: pool(reports.iter().map(|r| r.normal)),
        mitosis,
        seg: metrics::seg_score(&inputs.pred_masks, &inputs.gt_seg)?,
        link: metrics::link_score(&inputs.pred_forest, &inputs.gt_forest, r_match),
    })
}

/// Loads a result root and a ground-truth dataset root, then scores them.
pub fn evaluate(results_root: &Path, gt_root: &Path, cfg: &PipelineConfig) -> Result<EvalReport> {
    let res = SequenceLayout::new(results_root);
    let gt = SequenceLayout::new(gt_root);
    if !res.res_track_path().is_file() {
        return Err(Error::invalid(format!("{} not found", res.res_track_path().display())));
    }
    if !gt.tra_track_path().is_file() {
        return Err(Error::invalid(format!("{} not found", gt.tra_track_path().display())));
    }
    let (gt_forest, gt_tra) = ctc_io::import_forest(&gt, TrackTarget::GroundTruth)?;
    let n_seg = gt.count_frames(SequenceLayout::seg_mask_path);
    let gt_seg = if n_seg == 0 {
        gt_tra.clone()
    } else {
        (0..n_seg).map(|t| ctc_io::read_label_tiff(&gt.seg_mask_path(t))).collect::<Result<Vec<_>>>()?
    };
    if gt_seg.len() != gt_tra.len() {
        return Err(Error::invalid(format!(
            "ground truth has {} tracking frames but {} segmentation frames",
            gt_tra.len(),
            gt_seg.len()
        )));
    }
    let (pred_forest, pred_masks) = ctc_io::import_forest(&res, TrackTarget::Result)?;

    let det_path = res.res_dir().join("detections.txt");
    let pred_detections = if det_path.is_file() {
        dataset::parse_detections(&fs::read_to_string(det_path)?)?
    } else {
        forest_as_detections(&pred_forest)
    };
    let gt_cells = if dataset::gt_cells_path(gt_root).is_file() {
        dataset::read_gt_cells(gt_root)?
            .into_iter()
            .map(|f| f.into_iter().map(|(_, pos, class)| GtCell { pos, class }).collect())
            .collect()
    } else {
        forest_as_detections(&gt_forest)
            .into_iter()
            .map(|f| f.into_iter().map(|d| GtCell { pos: d.centroid, class: d.class }).collect())
            .collect()
    };
    score(&EvalInputs { pred_forest, pred_masks, pred_detections, gt_forest, gt_seg, gt_cells }, cfg)
}

fn forest_as_detections(forest: &LineageForest) -> Vec<Vec<DetectedCell>> {
    let mut out: Vec<Vec<DetectedCell>> = vec![Vec::new(); forest.frame_count()];
    for t in forest.trajectories.values() {
        for r in &t.rows {
            let label = out[r.frame].len() as u32 + 1;
            out[r.frame].push(DetectedCell { frame: r.frame, centroid: r.position(), class: r.status, area: 0, region_label: label });
        }
    }
    out
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<20} {:>6} {:>6} {:>6} {:>9} {:>9} {:>7}", "metric", "TP", "FP", "FN", "precision", "recall", "F1").unwrap();
        for (name, r) in [
            ("detection", &self.detection),
            ("detection/mitotic", &self.detection_mitotic),
            ("detection/normal", &self.detection_normal),
            ("mitosis", &self.mitosis),
            ("links", &self.link),
        ] {
            writeln!(
                s,
                "{:<20} {:>6} {:>6} {:>6} {:>9.4} {:>9.4} {:>7.4}",
                name, r.true_positives, r.false_positives, r.false_negatives, r.precision, r.recall, r.f1
            )
            .unwrap();
        }
        writeln!(s, "{:<20} {:>49.4}", "seg", self.seg).unwrap();
        writeln!(
            s,
            "frames {}  N_size {:.3}  r_match {:.3}  mitosis dt {}  mitosis r {:.3}",
            self.frames, self.n_size, self.r_match, self.mitosis_dt, self.mitosis_r
        )
        .unwrap();
        s
    }

    pub fn to_json(&self) -> serde_json::Value {
        let m = |r: &MatchResult| {
            json!({
                "tp": r.true_positives, "fp": r.false_positives, "fn": r.false_negatives,
                "precision": r.precision, "recall": r.recall, "f1": r.f1,
            })
        };
        json!({
            "frames": self.frames,
            "tolerances": {
                "n_size": self.n_size, "r_match": self.r_match,
                "mitosis_dt": self.mitosis_dt, "mitosis_r": self.mitosis_r,
            },
            "detection": {
                "overall": m(&self.detection),
                "mitotic": m(&self.detection_mitotic),
                "normal": m(&self.detection_normal),
            },
            "mitosis": m(&self.mitosis),
            "seg": self.seg,
            "links": m(&self.link),
        })
    }
}
