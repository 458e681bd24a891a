//! Cell detections from a 3-class (mitotic, normal, background) probability map.

use crate::imaging::{self, Connectivity, LabelMap, Point, ProbMap};
use crate::{Error, Result};

/// Channel order of detection probability maps.
pub const MITOTIC_CHANNEL: usize = 0;
pub const NORMAL_CHANNEL: usize = 1;
pub const BACKGROUND_CHANNEL: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CellClass {
    Mitotic,
    Normal,
}

impl CellClass {
    pub fn as_str(self) -> &'static str {
        match self {
            CellClass::Mitotic => "mitotic",
            CellClass::Normal => "normal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mitotic" | "M" => Some(CellClass::Mitotic),
            "normal" | "N" => Some(CellClass::Normal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectedCell {
    pub frame: usize,
    pub centroid: Point,
    pub class: CellClass,
    pub area: usize,
    /// Label of the region in this frame's detection label map.
    pub region_label: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionParams {
    /// Threshold on `1 - background` deciding cell vs background.
    pub cell_threshold: f32,
    pub min_area: usize,
    pub connectivity: Connectivity,
}

impl Default for DetectionParams {
    fn default() -> Self {
        DetectionParams { cell_threshold: 0.5, min_area: 4, connectivity: Connectivity::Eight }
    }
}

impl DetectionParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.cell_threshold) {
            return Err(Error::invalid(format!(
                "cell threshold {} outside [0, 1]",
                self.cell_threshold
            )));
        }
        if self.min_area == 0 {
            return Err(Error::invalid("min_area must be at least 1"));
        }
        Ok(())
    }
}

/// Detects cells in one frame.
///
/// Pixels whose combined cell evidence `1 - p(background)` reaches the
/// threshold form the cell mask; holes are filled and regions smaller than
/// `min_area` dropped. Each region is classified by the larger mean class
/// probability over its pixels, with ties going to [`CellClass::Normal`].
pub fn detect_cells(prob: &ProbMap, frame: usize, params: &DetectionParams) -> Result<Vec<DetectedCell>> {
    Ok(detect_cells_with_labels(prob, frame, params)?.0)
}

/// Like [`detect_cells`], also returning the region label map the
/// detections refer to. Dropped regions keep their labels in the map.
pub fn detect_cells_with_labels(
    prob: &ProbMap,
    frame: usize,
    params: &DetectionParams,
) -> Result<(Vec<DetectedCell>, LabelMap)> {
    if prob.channels() != 3 {
        return Err(Error::invalid(format!(
            "detection map needs 3 channels (mitotic, normal, background), got {}",
            prob.channels()
        )));
    }
    params.validate()?;

    let theta = params.cell_threshold;
    let mask = {
        let data = prob
            .data()
            .chunks_exact(3)
            .map(|px| 1.0 - px[BACKGROUND_CHANNEL] >= theta)
            .collect();
        imaging::Raster::from_vec(prob.width(), prob.height(), 1, data)?
    };
    let filled = imaging::fill_holes(&mask);
    let (labels, regions) = imaging::connected_components(&filled, params.connectivity);

    let mut sums = vec![(0.0f64, 0.0f64); regions.len()];
    for (l, px) in labels.data().iter().zip(prob.data().chunks_exact(3)) {
        if *l != 0 {
            let s = &mut sums[*l as usize - 1];
            s.0 += px[MITOTIC_CHANNEL] as f64;
            s.1 += px[NORMAL_CHANNEL] as f64;
        }
    }

    let cells = regions
        .iter()
        .zip(sums)
        .filter(|(r, _)| r.area >= params.min_area)
        .map(|(r, (mitotic, normal))| {
            // Both sums share the region's pixel count, so comparing sums
            // compares means.
            let class = if mitotic > normal { CellClass::Mitotic } else { CellClass::Normal };
            DetectedCell { frame, centroid: r.centroid, class, area: r.area, region_label: r.label }
        })
        .collect();
    Ok((cells, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Raster;

    fn background(w: usize, h: usize) -> ProbMap {
        let mut m = Raster::new(w, h, 3, 0.0f32);
        for px in m.data_mut().chunks_exact_mut(3) {
            px[BACKGROUND_CHANNEL] = 1.0;
        }
        m
    }

    fn paint(m: &mut ProbMap, x0: usize, y0: usize, w: usize, h: usize, mitotic: f32, normal: f32) {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                m.set_c(x, y, MITOTIC_CHANNEL, mitotic);
                m.set_c(x, y, NORMAL_CHANNEL, normal);
                m.set_c(x, y, BACKGROUND_CHANNEL, 1.0 - mitotic - normal);
            }
        }
    }

    #[test]
    fn pure_background_has_no_cells() {
        let cells = detect_cells(&background(16, 16), 0, &DetectionParams::default()).unwrap();
        assert!(cells.is_empty());
    }

    #[test]
    fn single_normal_block() {
        let mut m = background(10, 10);
        paint(&mut m, 3, 4, 3, 3, 0.0, 0.9);
        let params = DetectionParams { min_area: 1, ..Default::default() };
        let cells = detect_cells(&m, 7, &params).unwrap();
        assert_eq!(cells.len(), 1);
        let c = &cells[0];
        assert_eq!(c.class, CellClass::Normal);
        assert_eq!(c.area, 9);
        assert_eq!(c.frame, 7);
        assert!((c.centroid.x - 4.0).abs() < 1e-12 && (c.centroid.y - 5.0).abs() < 1e-12);
    }

    #[test]
    fn mitotic_majority_and_tie() {
        let mut m = background(12, 6);
        paint(&mut m, 0, 0, 3, 3, 0.6, 0.3);
        paint(&mut m, 6, 0, 3, 3, 0.45, 0.45);
        let cells = detect_cells(&m, 0, &DetectionParams::default()).unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].class, CellClass::Mitotic);
        assert_eq!(cells[1].class, CellClass::Normal);
    }

    #[test]
    fn min_area_filters_small_regions() {
        let mut m = background(12, 6);
        paint(&mut m, 0, 0, 1, 2, 0.0, 1.0);
        paint(&mut m, 5, 0, 3, 3, 0.0, 1.0);
        let params = DetectionParams { min_area: 4, ..Default::default() };
        let cells = detect_cells(&m, 0, &params).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].region_label, 2);
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let m = Raster::new(4, 4, 2, 0.0f32);
        assert!(matches!(
            detect_cells(&m, 0, &DetectionParams::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn holes_are_filled_before_area() {
        let mut m = background(7, 7);
        paint(&mut m, 1, 1, 5, 5, 0.0, 1.0);
        m.set_c(3, 3, NORMAL_CHANNEL, 0.0);
        m.set_c(3, 3, BACKGROUND_CHANNEL, 1.0);
        let cells = detect_cells(&m, 0, &DetectionParams::default()).unwrap();
        assert_eq!(cells[0].area, 25);
    }
}
