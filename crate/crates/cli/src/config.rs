//! Line-oriented `key = value` pipeline configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default (see [`PipelineConfig::to_text`]); unknown keys are rejected and
//! all module parameter checks run again after loading.

use std::path::Path;

use celltrack::ctc_io::TiffCompression;
use celltrack::detection::DetectionParams;
use celltrack::imaging::Connectivity;
use celltrack::segmentation::SegmentationParams;
use celltrack::synth::SynthConfig;
use celltrack::tracker::TrackerParams;
use celltrack::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalParams {
    /// Detection and node match radius; `N_size / 2` when `None`.
    pub r_match: Option<f64>,
    pub mitosis_dt: usize,
    /// Mitosis event radius; `N_size` when `None`.
    pub mitosis_r: Option<f64>,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams { r_match: None, mitosis_dt: 2, mitosis_r: None }
    }
}

impl EvalParams {
    pub fn r_match_for(&self, n_size: f64) -> f64 {
        self.r_match.unwrap_or(n_size / 2.0)
    }

    pub fn mitosis_r_for(&self, n_size: f64) -> f64 {
        self.mitosis_r.unwrap_or(n_size)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub det: DetectionParams,
    pub track: TrackerParams,
    pub seg: SegmentationParams,
    pub eval: EvalParams,
    pub synth: SynthConfig,
    /// Worker threads for per-frame stages; all cores when `None`.
    pub threads: Option<usize>,
    pub compression: TiffCompression,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            det: DetectionParams::default(),
            track: TrackerParams::default(),
            seg: SegmentationParams::default(),
            eval: EvalParams::default(),
            synth: SynthConfig::default(),
            threads: None,
            compression: TiffCompression::Deflate,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_auto<T: std::str::FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    if v == "auto" {
        Ok(None)
    } else {
        parse_num(key, v).map(Some)
    }
}

fn show_auto<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "auto".to_string(), |x| x.to_string())
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "det.cell_threshold" => self.det.cell_threshold = parse_num(key, v)?,
            "det.min_area" => self.det.min_area = parse_num(key, v)?,
            "det.connectivity" => {
                self.det.connectivity = match v {
                    "4" => Connectivity::Four,
                    "8" => Connectivity::Eight,
                    _ => return Err(Error::Config(format!("{key}: expected 4 or 8, got {v:?}"))),
                }
            }
            "track.alpha" => self.track.alpha = parse_num(key, v)?,
            "track.n_size" => self.track.n_size = parse_auto(key, v)?,
            "track.theta_mit" => self.track.theta_mit = parse_num(key, v)?,
            "track.w_status" => self.track.w_status = parse_num(key, v)?,
            "track.l_min" => self.track.l_min = parse_num(key, v)?,
            "track.r_daughter" => self.track.r_daughter = parse_auto(key, v)?,
            "seg.interior_threshold" => self.seg.interior_threshold = parse_num(key, v)?,
            "seg.boundary_threshold" => self.seg.boundary_threshold = parse_num(key, v)?,
            "eval.r_match" => self.eval.r_match = parse_auto(key, v)?,
            "eval.mitosis_dt" => self.eval.mitosis_dt = parse_num(key, v)?,
            "eval.mitosis_r" => self.eval.mitosis_r = parse_auto(key, v)?,
            "synth.width" => self.synth.width = parse_num(key, v)?,
            "synth.height" => self.synth.height = parse_num(key, v)?,
            "synth.frames" => self.synth.frames = parse_num(key, v)?,
            "synth.initial_cells" => self.synth.initial_cells = parse_num(key, v)?,
            "synth.cell_radius" => self.synth.cell_radius = parse_num(key, v)?,
            "synth.radius_jitter" => self.synth.radius_jitter = parse_num(key, v)?,
            "synth.drift_sigma" => self.synth.drift_sigma = parse_num(key, v)?,
            "synth.division_rate" => self.synth.division_rate = parse_num(key, v)?,
            "synth.mitotic_lead" => self.synth.mitotic_lead = parse_num(key, v)?,
            "synth.impurity_count" => self.synth.impurity_count = parse_num(key, v)?,
            "synth.dropout_prob" => self.synth.corruption.dropout_prob = parse_num(key, v)?,
            "synth.centroid_jitter_sigma" => self.synth.corruption.centroid_jitter_sigma = parse_num(key, v)?,
            "synth.false_positive_rate" => self.synth.corruption.false_positive_rate = parse_num(key, v)?,
            "synth.seed" => self.synth.seed = parse_num(key, v)?,
            "threads" => {
                self.threads = parse_auto(key, v)?;
            }
            "tiff.compression" => {
                self.compression = match v {
                    "deflate" => TiffCompression::Deflate,
                    "none" => TiffCompression::None,
                    _ => return Err(Error::Config(format!("{key}: expected deflate or none, got {v:?}"))),
                }
            }
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Syntax { line: i + 1, message: "expected key = value".into() })?;
            cfg.set(k.trim(), v.trim()).map_err(|e| match e {
                Error::Config(m) => Error::Syntax { line: i + 1, message: m },
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |what: &str, r: Result<()>| r.map_err(|e| Error::Config(format!("{what}: {e}")));
        wrap("detection", self.det.validate())?;
        wrap("tracker", self.track.validate())?;
        wrap("synth", self.synth.validate())?;
        for (name, t) in [
            ("seg.interior_threshold", self.seg.interior_threshold),
            ("seg.boundary_threshold", self.seg.boundary_threshold),
        ] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("{name} = {t} outside [0, 1]")));
            }
        }
        for (name, r) in [("eval.r_match", self.eval.r_match), ("eval.mitosis_r", self.eval.mitosis_r)] {
            if let Some(r) = r {
                if !(r > 0.0) || !r.is_finite() {
                    return Err(Error::Config(format!("{name} = {r} must be positive")));
                }
            }
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        Ok(())
    }

    /// Full configuration with every key, suitable as a starting file.
    pub fn to_text(&self) -> String {
        let s = &self.synth;
        let c = &s.corruption;
        let lines = [
            format!("det.cell_threshold = {}", self.det.cell_threshold),
            format!("det.min_area = {}", self.det.min_area),
            format!("det.connectivity = {}", if self.det.connectivity == Connectivity::Four { 4 } else { 8 }),
            format!("track.alpha = {}", self.track.alpha),
            format!("track.n_size = {}", show_auto(self.track.n_size)),
            format!("track.theta_mit = {}", self.track.theta_mit),
            format!("track.w_status = {}", self.track.w_status),
            format!("track.l_min = {}", self.track.l_min),
            format!("track.r_daughter = {}", show_auto(self.track.r_daughter)),
            format!("seg.interior_threshold = {}", self.seg.interior_threshold),
            format!("seg.boundary_threshold = {}", self.seg.boundary_threshold),
            format!("eval.r_match = {}", show_auto(self.eval.r_match)),
            format!("eval.mitosis_dt = {}", self.eval.mitosis_dt),
            format!("eval.mitosis_r = {}", show_auto(self.eval.mitosis_r)),
            format!("synth.width = {}", s.width),
            format!("synth.height = {}", s.height),
            format!("synth.frames = {}", s.frames),
            format!("synth.initial_cells = {}", s.initial_cells),
            format!("synth.cell_radius = {}", s.cell_radius),
            format!("synth.radius_jitter = {}", s.radius_jitter),
            format!("synth.drift_sigma = {}", s.drift_sigma),
            format!("synth.division_rate = {}", s.division_rate),
            format!("synth.mitotic_lead = {}", s.mitotic_lead),
            format!("synth.impurity_count = {}", s.impurity_count),
            format!("synth.dropout_prob = {}", c.dropout_prob),
            format!("synth.centroid_jitter_sigma = {}", c.centroid_jitter_sigma),
            format!("synth.false_positive_rate = {}", c.false_positive_rate),
            format!("synth.seed = {}", s.seed),
            format!("threads = {}", show_auto(self.threads)),
            format!(
                "tiff.compression = {}",
                if self.compression == TiffCompression::None { "none" } else { "deflate" }
            ),
        ];
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}
