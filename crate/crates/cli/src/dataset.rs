//! On-disk dataset layout shared by the subcommands.
//!
//! A dataset root follows the CTC layout for sequence `01` and adds:
//!
//! * `01_PROB/det%03d.ctkr`, `01_PROB/seg%03d.ctkr`: probability maps,
//! * `01_GT/cells.txt`: ground-truth classes, one `frame label x y class` line per cell,
//! * `manifest.txt`: seed and full configuration used to generate the data.
//!
//! Result directories hold the CTC masks and track file plus
//! `detections.txt` (`frame x y class area`) and `tracks.txt`
//! (`label frame x y class parent`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use celltrack::ctc_io::{self, SequenceLayout, TrackTarget};
use celltrack::detection::{CellClass, DetectedCell};
use celltrack::imaging::{Point, ProbMap, Raster};
use celltrack::synth::{ProbFrame, SynthScene};
use celltrack::tracker::{LineageForest, StatusRow, TrackState, Trajectory};
use celltrack::{Error, Result};

use crate::config::PipelineConfig;

pub fn prob_dir(root: &Path) -> PathBuf {
    root.join("01_PROB")
}

pub fn det_map_path(root: &Path, t: usize) -> PathBuf {
    prob_dir(root).join(format!("det{t:03}.ctkr"))
}

pub fn seg_map_path(root: &Path, t: usize) -> PathBuf {
    prob_dir(root).join(format!("seg{t:03}.ctkr"))
}

pub fn gt_cells_path(root: &Path) -> PathBuf {
    SequenceLayout::new(root).gt_dir().join("cells.txt")
}

fn count_files(path_of: impl Fn(usize) -> PathBuf) -> usize {
    (0..).take_while(|&t| path_of(t).is_file()).count()
}

/// Writes images, ground truth, probability maps and manifest of a scene.
pub fn write_synth_dataset(
    scene: &SynthScene,
    maps: &[ProbFrame],
    cfg: &PipelineConfig,
    root: &Path,
) -> Result<()> {
    let layout = SequenceLayout::new(root);
    fs::create_dir_all(layout.image_dir())?;
    fs::create_dir_all(prob_dir(root))?;
    for t in 0..scene.frame_count() {
        let img = celltrack::synth::render_image(scene, t);
        let img16 = img.map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16);
        ctc_io::write_u16_tiff(&img16, &layout.image_path(t), cfg.compression)?;
        ctc_io::write_raster_container(&maps[t].det, &det_map_path(root, t))?;
        ctc_io::write_raster_container(&maps[t].seg, &seg_map_path(root, t))?;
    }
    let masks: Vec<_> = (0..scene.frame_count()).map(|t| scene.gt_mask(t)).collect();
    ctc_io::export_forest(&scene.gt_forest(), &masks, &layout, TrackTarget::GroundTruth, cfg.compression)?;
    ctc_io::export_seg_gt(&masks, &layout, cfg.compression)?;

    let mut cells = String::new();
    for t in 0..scene.frame_count() {
        for c in scene.gt_cells(t) {
            writeln!(cells, "{t} {} {} {} {}", c.id, c.centroid.x, c.centroid.y, c.class.as_str()).unwrap();
        }
    }
    fs::write(gt_cells_path(root), cells)?;

    let manifest = format!(
        "seed = {}\nframes = {}\ncells = {}\ndivisions = {}\n# configuration\n{}",
        cfg.synth.seed,
        scene.frame_count(),
        scene.gt_forest().len(),
        scene.divisions.len(),
        cfg.to_text()
    );
    fs::write(root.join("manifest.txt"), manifest)?;
    Ok(())
}

/// Loads detection and segmentation maps; both sequences must be non-empty
/// and of equal length.
pub fn read_prob_maps(root: &Path) -> Result<(Vec<ProbMap>, Vec<ProbMap>)> {
    let n_det = count_files(|t| det_map_path(root, t));
    let n_seg = count_files(|t| seg_map_path(root, t));
    if n_det == 0 {
        return Err(Error::invalid(format!("no probability maps under {}", prob_dir(root).display())));
    }
    if n_det != n_seg {
        return Err(Error::invalid(format!("{n_det} detection maps but {n_seg} segmentation maps")));
    }
    let load = |p: PathBuf| -> Result<ProbMap> {
        let r = ctc_io::read_raster_container(&p)?.into_f32();
        if r.channels() != 3 {
            return Err(Error::invalid(format!("{} has {} channels, expected 3", p.display(), r.channels())));
        }
        Ok(r)
    };
    let det = (0..n_det).map(|t| load(det_map_path(root, t))).collect::<Result<Vec<_>>>()?;
    let seg = (0..n_seg).map(|t| load(seg_map_path(root, t))).collect::<Result<Vec<_>>>()?;
    if let Some((t, _)) = det.iter().zip(&seg).enumerate().find(|(_, (d, s))| !d.same_extent(*s)) {
        return Err(Error::invalid(format!("frame {t}: detection and segmentation extents differ")));
    }
    Ok((det, seg))
}

fn parse_class(s: &str, line: usize) -> Result<CellClass> {
    CellClass::parse(s).ok_or_else(|| Error::Syntax { line, message: format!("unknown class {s:?}") })
}

fn fields<'a>(line: &'a str, n: usize, line_no: usize) -> Result<Vec<&'a str>> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != n {
        return Err(Error::Syntax { line: line_no, message: format!("expected {n} fields, found {}", f.len()) });
    }
    Ok(f)
}

fn num<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse().map_err(|_| Error::Syntax { line, message: format!("cannot parse {s:?}") })
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn format_detections(per_frame: &[Vec<DetectedCell>]) -> String {
    let mut s = String::new();
    for d in per_frame.iter().flatten() {
        writeln!(s, "{} {} {} {} {}", d.frame, d.centroid.x, d.centroid.y, d.class.as_str(), d.area).unwrap();
    }
    s
}

/// Parses `frame x y class area` lines into `frames` per-frame lists.
pub fn parse_detections(text: &str) -> Result<Vec<Vec<DetectedCell>>> {
    let mut out: Vec<Vec<DetectedCell>> = Vec::new();
    for (line, l) in data_lines(text) {
        let f = fields(l, 5, line)?;
        let frame: usize = num(f[0], line)?;
        if out.len() <= frame {
            out.resize(frame + 1, Vec::new());
        }
        let region_label = out[frame].len() as u32 + 1;
        out[frame].push(DetectedCell {
            frame,
            centroid: Point::new(num(f[1], line)?, num(f[2], line)?),
            class: parse_class(f[3], line)?,
            area: num(f[4], line)?,
            region_label,
        });
    }
    Ok(out)
}

pub fn format_tracks(forest: &LineageForest) -> String {
    let mut s = String::new();
    for t in forest.trajectories.values() {
        for r in &t.rows {
            writeln!(s, "{} {} {} {} {} {}", t.id, r.frame, r.x, r.y, r.status.as_str(), t.parent).unwrap();
        }
    }
    s
}

/// Parses `label frame x y class parent` lines; the result is validated.
pub fn parse_tracks(text: &str) -> Result<LineageForest> {
    let mut trajectories: BTreeMap<u32, Trajectory> = BTreeMap::new();
    for (line, l) in data_lines(text) {
        let f = fields(l, 6, line)?;
        let id: u32 = num(f[0], line)?;
        let parent: u32 = num(f[5], line)?;
        let row = StatusRow { x: num(f[2], line)?, y: num(f[3], line)?, frame: num(f[1], line)?, status: parse_class(f[4], line)? };
        let t = trajectories
            .entry(id)
            .or_insert_with(|| Trajectory { id, rows: Vec::new(), parent, state: TrackState::Terminated });
        if t.parent != parent {
            return Err(Error::Syntax { line, message: format!("track {id} changes parent") });
        }
        t.rows.push(row);
    }
    let forest = LineageForest { trajectories };
    forest.validate()?;
    Ok(forest)
}

/// Ground-truth cells with classes, indexed by frame.
pub fn read_gt_cells(root: &Path) -> Result<Vec<Vec<(u32, Point, CellClass)>>> {
    let text = fs::read_to_string(gt_cells_path(root))?;
    let mut out: Vec<Vec<(u32, Point, CellClass)>> = Vec::new();
    for (line, l) in data_lines(&text) {
        let f = fields(l, 5, line)?;
        let frame: usize = num(f[0], line)?;
        if out.len() <= frame {
            out.resize(frame + 1, Vec::new());
        }
        out[frame].push((num(f[1], line)?, Point::new(num(f[2], line)?, num(f[3], line)?), parse_class(f[4], line)?));
    }
    Ok(out)
}

/// Rescales a grayscale raster to 8 bits using its own value range.
pub fn to_u8_gray(img: &Raster<u32>) -> Raster<u8> {
    let lo = img.data().iter().copied().min().unwrap_or(0);
    let hi = img.data().iter().copied().max().unwrap_or(0);
    if hi == lo {
        return img.map(|_| 0);
    }
    let span = (hi - lo) as f64;
    img.map(|v| (((v - lo) as f64 / span) * 255.0).round() as u8)
}
