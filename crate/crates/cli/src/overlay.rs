//! Annotated PNG frames: instance contours, white track ids, red crosses on
//! mitotic detections and yellow boxes on mitosis events.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use celltrack::ctc_io::{self, SequenceLayout, TrackTarget};
use celltrack::detection::{CellClass, DetectedCell};
use celltrack::imaging::{self, LabelMap, Point, Raster};
use celltrack::metrics;
use celltrack::tracker::LineageForest;
use celltrack::{Error, Result};

use crate::dataset;

type Rgb = [u8; 3];

const WHITE: Rgb = [255, 255, 255];
const RED: Rgb = [255, 0, 0];
const YELLOW: Rgb = [255, 255, 0];

const GLYPHS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b001, 0b001, 0b001],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

/// Annotation counts of one rendered frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OverlayStats {
    pub ids: usize,
    pub crosses: usize,
    pub boxes: usize,
}

pub struct Canvas {
    pub rgb: Raster<u8>,
}

impl Canvas {
    pub fn from_gray(gray: &Raster<u8>) -> Self {
        let (w, h) = gray.extent();
        let mut rgb = Raster::new(w, h, 3, 0u8);
        for (px, &g) in rgb.data_mut().chunks_exact_mut(3).zip(gray.data()) {
            px.fill(g);
        }
        Canvas { rgb }
    }

    fn put(&mut self, x: i64, y: i64, c: Rgb) {
        if self.rgb.contains(x, y) {
            for (k, &v) in c.iter().enumerate() {
                self.rgb.set_c(x as usize, y as usize, k, v);
            }
        }
    }

    fn text(&mut self, s: &str, cx: i64, cy: i64, c: Rgb) {
        let width = s.len() as i64 * 4 - 1;
        let x0 = cx - width / 2;
        let y0 = cy - 2;
        for (i, ch) in s.bytes().enumerate() {
            let glyph = GLYPHS[(ch - b'0') as usize];
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..3 {
                    if bits & (0b100 >> col) != 0 {
                        self.put(x0 + i as i64 * 4 + col, y0 + row as i64, c);
                    }
                }
            }
        }
    }

    fn cross(&mut self, x: i64, y: i64, half: i64, c: Rgb) {
        for d in -half..=half {
            self.put(x + d, y + d, c);
            self.put(x + d, y - d, c);
        }
    }

    fn rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb) {
        for x in x0..=x1 {
            self.put(x, y0, c);
            self.put(x, y1, c);
        }
        for y in y0..=y1 {
            self.put(x0, y, c);
            self.put(x1, y, c);
        }
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let (w, h) = self.rgb.extent();
        let mut enc = png::Encoder::new(BufWriter::new(File::create(path)?), w as u32, h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Io(std::io::Error::other(e)))?;
        writer.write_image_data(self.rgb.data()).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        writer.finish().map_err(|e| Error::Io(std::io::Error::other(e)))?;
        Ok(())
    }
}

fn palette(id: u32) -> Rgb {
    // Spread hues with the golden ratio; keep colors bright.
    let h = (id as f64 * 0.618_033_988_75).fract() * 6.0;
    let f = h.fract();
    let (a, b) = ((255.0 * (1.0 - f)) as u8, (255.0 * f) as u8);
    match h as u32 {
        0 => [255, b, 0],
        1 => [a, 255, 0],
        2 => [0, 255, b],
        3 => [0, a, 255],
        4 => [b, 0, 255],
        _ => [255, 0, a],
    }
}

/// Draws one frame's annotations onto `canvas`.
pub fn annotate(
    canvas: &mut Canvas,
    mask: &LabelMap,
    detections: &[DetectedCell],
    boxes: &[Point],
    box_half: i64,
) -> OverlayStats {
    let (w, h) = mask.extent();
    for y in 0..h {
        for x in 0..w {
            let l = mask.get(x, y);
            if l == 0 {
                continue;
            }
            let edge = [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)].iter().any(|&(dx, dy)| {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                !mask.contains(nx, ny) || mask.get(nx as usize, ny as usize) != l
            });
            if edge {
                canvas.put(x as i64, y as i64, palette(l));
            }
        }
    }
    let mut stats = OverlayStats::default();
    for s in imaging::label_stats(mask) {
        canvas.text(&s.label.to_string(), s.centroid.x.round() as i64, s.centroid.y.round() as i64, WHITE);
        stats.ids += 1;
    }
    for d in detections.iter().filter(|d| d.class == CellClass::Mitotic) {
        canvas.cross(d.centroid.x.round() as i64, d.centroid.y.round() as i64, 2, RED);
        stats.crosses += 1;
    }
    for p in boxes {
        let (x, y) = (p.x.round() as i64, p.y.round() as i64);
        canvas.rect(x - box_half, y - box_half, x + box_half, y + box_half, YELLOW);
        stats.boxes += 1;
    }
    stats
}

/// Mitosis event positions grouped by frame.
fn event_boxes(forest: &LineageForest, frames: usize) -> Vec<Vec<Point>> {
    let mut out = vec![Vec::new(); frames];
    for ev in metrics::mitosis_events(forest) {
        if let Some(v) = out.get_mut(ev.frame) {
            v.push(ev.position);
        }
    }
    out
}

/// Renders `overlay%03d.png` for every input image. A result directory with
/// no masks and an empty track file yields plain grayscale copies.
pub fn render_overlays(images_root: &Path, results_root: &Path, out_dir: &Path) -> Result<Vec<OverlayStats>> {
    let img_layout = SequenceLayout::new(images_root);
    let res = SequenceLayout::new(results_root);
    let n = img_layout.count_frames(SequenceLayout::image_path);
    if n == 0 {
        return Err(Error::invalid(format!("no images under {}", img_layout.image_dir().display())));
    }
    if !res.res_track_path().is_file() {
        return Err(Error::invalid(format!("{} not found", res.res_track_path().display())));
    }
    let n_masks = res.count_frames(SequenceLayout::res_mask_path);
    let (forest, masks) = if n_masks == 0 && ctc_io::read_track_file(&res.res_track_path())?.is_empty() {
        (LineageForest::default(), Vec::new())
    } else {
        ctc_io::import_forest(&res, TrackTarget::Result)?
    };
    if !masks.is_empty() && masks.len() != n {
        return Err(Error::invalid(format!("{n} images but {} result masks", masks.len())));
    }
    let det_path = res.res_dir().join("detections.txt");
    let detections =
        if det_path.is_file() { dataset::parse_detections(&fs::read_to_string(det_path)?)? } else { Vec::new() };
    let boxes = event_boxes(&forest, n);
    let box_half = {
        let sizes: Vec<f64> =
            masks.iter().flat_map(imaging::label_stats).map(|s| (s.area as f64).sqrt()).collect();
        if sizes.is_empty() { 8 } else { (sizes.iter().sum::<f64>() / sizes.len() as f64).ceil() as i64 }
    };

    fs::create_dir_all(out_dir)?;
    let no_dets = Vec::new();
    let mut stats = Vec::with_capacity(n);
    for t in 0..n {
        let img = ctc_io::read_label_tiff(&img_layout.image_path(t))?;
        let mut canvas = Canvas::from_gray(&dataset::to_u8_gray(&img));
        let s = match masks.get(t) {
            Some(m) => {
                if !m.same_extent(&img) {
                    return Err(Error::invalid(format!("frame {t}: mask and image extents differ")));
                }
                annotate(&mut canvas, m, detections.get(t).unwrap_or(&no_dets), &boxes[t], box_half)
            }
            None => OverlayStats::default(),
        };
        canvas.write_png(&out_dir.join(format!("overlay{t:03}.png")))?;
        stats.push(s);
    }
    Ok(stats)
}
