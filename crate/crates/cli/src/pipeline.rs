//! Detection, tracking and instance segmentation over a whole sequence.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use celltrack::ctc_io::{self, SequenceLayout, TrackTarget};
use celltrack::detection::{self, DetectedCell};
use celltrack::imaging::{LabelMap, Point, ProbMap};
use celltrack::segmentation::{self, Seed, SeedSet};
use celltrack::tracker::{LineageForest, Tracker};
use celltrack::{Error, Result};

use crate::config::PipelineConfig;
use crate::dataset;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub detect: Duration,
    pub track: Duration,
    pub primary_segment: Duration,
    pub fine_segment: Duration,
    pub export: Duration,
}

impl StageTimings {
    pub fn report(&self) -> String {
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        format!(
            "detect {:.1} ms\ntrack {:.1} ms\nprimary_segment {:.1} ms\nfine_segment {:.1} ms\nexport {:.1} ms\n",
            ms(self.detect),
            ms(self.track),
            ms(self.primary_segment),
            ms(self.fine_segment),
            ms(self.export)
        )
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub detections: Vec<Vec<DetectedCell>>,
    pub forest: LineageForest,
    /// One instance map per frame, labelled with track ids.
    pub masks: Vec<LabelMap>,
    /// Track instances absent from their blob map that received a marker pixel.
    pub reconciled: usize,
    pub timings: StageTimings,
}

/// Runs `f` on a pool of `threads` workers, or the global pool when `None`.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

pub fn detect_all(det: &[ProbMap], cfg: &PipelineConfig) -> Result<Vec<Vec<DetectedCell>>> {
    det.par_iter().enumerate().map(|(t, m)| detection::detect_cells(m, t, &cfg.det)).collect()
}

pub fn track_all(detections: &[Vec<DetectedCell>], cfg: &PipelineConfig) -> Result<LineageForest> {
    let mut tracker = Tracker::new(cfg.track)?;
    for (t, dets) in detections.iter().enumerate() {
        tracker.step(dets, t)?;
    }
    Ok(tracker.finalize())
}

/// Seeds of frame `t`: the tracked centroid of every trajectory alive there.
pub fn seeds_at(forest: &LineageForest, t: usize) -> Result<SeedSet> {
    SeedSet::new(
        forest
            .trajectories
            .values()
            .filter_map(|tr| tr.row_at(t).map(|r| Seed { id: tr.id, pos: r.position() }))
            .collect(),
    )
}

/// Gives every seed missing from `map` a single marker pixel at the nearest
/// background pixel to its rounded position. Returns how many were stamped.
pub fn reconcile(map: &mut LabelMap, seeds: &SeedSet) -> Result<usize> {
    let mut present = vec![false; seeds.seeds().iter().map(|s| s.id as usize).max().unwrap_or(0) + 1];
    for &v in map.data() {
        if let Some(p) = present.get_mut(v as usize) {
            *p = true;
        }
    }
    let mut stamped = 0;
    for s in seeds.seeds() {
        if present[s.id as usize] {
            continue;
        }
        let (x, y) = nearest_background(map, s.pos).ok_or_else(|| Error::Consistency {
            labels: vec![s.id],
            message: "no background pixel left for a tracked cell marker".into(),
        })?;
        map.set(x, y, s.id);
        present[s.id as usize] = true;
        stamped += 1;
    }
    Ok(stamped)
}

fn nearest_background(map: &LabelMap, pos: Point) -> Option<(usize, usize)> {
    let (w, h) = map.extent();
    let cx = (pos.x.round() as i64).clamp(0, w as i64 - 1);
    let cy = (pos.y.round() as i64).clamp(0, h as i64 - 1);
    let max_ring = w.max(h) as i64;
    for ring in 0..=max_ring {
        let mut best: Option<(f64, i64, i64)> = None;
        for dy in -ring..=ring {
            for dx in -ring..=ring {
                if dx.abs().max(dy.abs()) != ring {
                    continue;
                }
                let (x, y) = (cx + dx, cy + dy);
                if !map.contains(x, y) || map.get(x as usize, y as usize) != 0 {
                    continue;
                }
                let d = (dx * dx + dy * dy) as f64;
                if best.is_none_or(|b| (d, y, x) < (b.0, b.2, b.1)) {
                    best = Some((d, x, y));
                }
            }
        }
        if let Some((_, x, y)) = best {
            return Some((x as usize, y as usize));
        }
    }
    None
}

/// In-memory pipeline over per-frame detection and segmentation maps.
pub fn run_frames(det: &[ProbMap], seg: &[ProbMap], cfg: &PipelineConfig) -> Result<PipelineOutput> {
    if det.len() != seg.len() {
        return Err(Error::invalid(format!("{} detection maps but {} segmentation maps", det.len(), seg.len())));
    }
    let mut timings = StageTimings::default();

    let clock = Instant::now();
    let detections = detect_all(det, cfg)?;
    timings.detect = clock.elapsed();

    let clock = Instant::now();
    let forest = track_all(&detections, cfg)?;
    timings.track = clock.elapsed();

    let clock = Instant::now();
    let blobs: Vec<LabelMap> = seg
        .par_iter()
        .map(|m| segmentation::primary_segment(m, cfg.seg.interior_threshold, cfg.seg.boundary_threshold))
        .collect::<Result<_>>()?;
    timings.primary_segment = clock.elapsed();

    let clock = Instant::now();
    let per_frame: Vec<(LabelMap, usize)> = blobs
        .par_iter()
        .enumerate()
        .map(|(t, b)| {
            let seeds = seeds_at(&forest, t)?;
            let mut m = segmentation::fine_segment(b, &seeds);
            let n = reconcile(&mut m, &seeds)?;
            Ok((m, n))
        })
        .collect::<Result<_>>()?;
    timings.fine_segment = clock.elapsed();

    let reconciled = per_frame.iter().map(|p| p.1).sum();
    let masks = per_frame.into_iter().map(|p| p.0).collect();
    Ok(PipelineOutput { detections, forest, masks, reconciled, timings })
}

/// Writes the result directory of `out` under a staging name, then swaps it
/// in with a rename so readers never see a partial `01_RES`.
pub fn write_results(out_root: &Path, output: &PipelineOutput, cfg: &PipelineConfig) -> Result<()> {
    fs::create_dir_all(out_root)?;
    let final_layout = SequenceLayout::new(out_root);
    let staging_root = out_root.join(format!(".staging-{}", std::process::id()));
    if staging_root.exists() {
        fs::remove_dir_all(&staging_root)?;
    }
    let staged = SequenceLayout::new(&staging_root);
    let result = (|| {
        ctc_io::export_forest(&output.forest, &output.masks, &staged, TrackTarget::Result, cfg.compression)?;
        fs::write(staged.res_dir().join("detections.txt"), dataset::format_detections(&output.detections))?;
        fs::write(staged.res_dir().join("tracks.txt"), dataset::format_tracks(&output.forest))?;
        let target = final_layout.res_dir();
        if target.exists() {
            fs::remove_dir_all(&target)?;
        }
        fs::rename(staged.res_dir(), &target)?;
        Ok(())
    })();
    let _ = fs::remove_dir_all(&staging_root);
    result
}

/// Full command: reads a dataset, runs every stage and writes results.
pub fn run_pipeline(in_root: &Path, out_root: &Path, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    with_threads(cfg.threads, || {
        let (det, seg) = dataset::read_prob_maps(in_root)?;
        let mut output = run_frames(&det, &seg, cfg)?;
        let clock = Instant::now();
        write_results(out_root, &output, cfg)?;
        output.timings.export = clock.elapsed();
        Ok(output)
    })?
}
