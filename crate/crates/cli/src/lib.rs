//! Command-line front end: synthetic data, the full pipeline, individual
//! stages, evaluation and overlays.
//!
//! Exit codes: 0 success, 2 usage, configuration or input error, 3 internal
//! invariant violation.

pub mod config;
pub mod dataset;
pub mod eval;
pub mod overlay;
pub mod pipeline;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use celltrack::ctc_io::{self, SequenceLayout, TrackTarget};
use celltrack::synth;
use celltrack::Error;

use config::PipelineConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "celltrack", version, about = "Multi-cell detection, tracking and segmentation")]
pub struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `synth.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `threads`.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with ground truth and probability maps.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Run detection, tracking and segmentation and export CTC results.
    Pipeline {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect cells in every detection map; writes `detections.txt`.
    Detect {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track a `detections.txt` file; writes `tracks.txt`.
    Track {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split segmentation blobs by tracked seeds and export CTC results.
    Fineseg {
        #[arg(long = "in")]
        input: PathBuf,
        /// A `tracks.txt` file from the track stage.
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score results against ground truth.
    Eval {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Optional path for the JSON summary.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render annotated PNG frames.
    Overlay {
        /// Dataset root holding the `01/t%03d.tif` images.
        #[arg(long = "in")]
        input: PathBuf,
        /// Result root holding `01_RES`.
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A failed command and its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: Error,
}

impl Failure {
    fn input(error: Error) -> Self {
        Failure { code: EXIT_INPUT, error }
    }

    /// Errors raised after inputs were accepted: consistency violations are
    /// internal, anything else is still blamed on the input.
    fn stage(error: Error) -> Self {
        let code = match error {
            Error::Consistency { .. } => EXIT_INTERNAL,
            _ => EXIT_INPUT,
        };
        Failure { code, error }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn load_config(cli: &Cli) -> std::result::Result<PipelineConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).map_err(Failure::input)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.synth.seed = s;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    cfg.validate().map_err(Failure::input)?;
    Ok(cfg)
}

pub fn cmd_synth(cfg: &PipelineConfig, out: &Path) -> celltrack::Result<()> {
    let scene = synth::generate(&cfg.synth)?;
    let maps = synth::render_probmaps(&scene, &cfg.synth.corruption, cfg.synth.seed)?;
    dataset::write_synth_dataset(&scene, &maps, cfg, out)
}

fn cmd_pipeline(cfg: &PipelineConfig, input: &Path, out: &Path) -> CmdResult {
    let (det, seg) = dataset::read_prob_maps(input).map_err(Failure::input)?;
    let output = pipeline::with_threads(cfg.threads, || -> CmdResult {
        let mut output = pipeline::run_frames(&det, &seg, cfg).map_err(|e| Failure { code: EXIT_INTERNAL, error: e })?;
        let clock = std::time::Instant::now();
        pipeline::write_results(out, &output, cfg).map_err(Failure::stage)?;
        output.timings.export = clock.elapsed();
        print!("{}", output.timings.report());
        println!(
            "frames {}  tracks {}  reconciled markers {}",
            output.masks.len(),
            output.forest.len(),
            output.reconciled
        );
        Ok(())
    })
    .map_err(Failure::input)?;
    output
}

fn cmd_detect(cfg: &PipelineConfig, input: &Path, out: &Path) -> CmdResult {
    let (det, _) = dataset::read_prob_maps(input).map_err(Failure::input)?;
    let dets = pipeline::with_threads(cfg.threads, || pipeline::detect_all(&det, cfg))
        .and_then(|r| r)
        .map_err(Failure::stage)?;
    fs::create_dir_all(out).map_err(|e| Failure::input(e.into()))?;
    fs::write(out.join("detections.txt"), dataset::format_detections(&dets)).map_err(|e| Failure::input(e.into()))?;
    println!("{} detections in {} frames", dets.iter().map(Vec::len).sum::<usize>(), dets.len());
    Ok(())
}

fn file_or_child(path: &Path, name: &str) -> PathBuf {
    if path.is_dir() { path.join(name) } else { path.to_path_buf() }
}

fn cmd_track(cfg: &PipelineConfig, input: &Path, out: &Path) -> CmdResult {
    let text = fs::read_to_string(file_or_child(input, "detections.txt")).map_err(|e| Failure::input(e.into()))?;
    let dets = dataset::parse_detections(&text).map_err(Failure::input)?;
    let forest = pipeline::track_all(&dets, cfg).map_err(Failure::stage)?;
    fs::create_dir_all(out).map_err(|e| Failure::input(e.into()))?;
    fs::write(out.join("tracks.txt"), dataset::format_tracks(&forest)).map_err(|e| Failure::input(e.into()))?;
    println!("{} tracks", forest.len());
    Ok(())
}

fn cmd_fineseg(cfg: &PipelineConfig, input: &Path, tracks: &Path, out: &Path) -> CmdResult {
    let (_, seg) = dataset::read_prob_maps(input).map_err(Failure::input)?;
    let text = fs::read_to_string(file_or_child(tracks, "tracks.txt")).map_err(|e| Failure::input(e.into()))?;
    let forest = dataset::parse_tracks(&text).map_err(Failure::input)?;
    if forest.frame_count() > seg.len() {
        return Err(Failure::input(Error::InvalidArgument(format!(
            "tracks reach frame {} but only {} segmentation maps exist",
            forest.frame_count() - 1,
            seg.len()
        ))));
    }
    let mut masks = Vec::with_capacity(seg.len());
    let mut reconciled = 0;
    for (t, m) in seg.iter().enumerate() {
        let blobs = celltrack::segmentation::primary_segment(m, cfg.seg.interior_threshold, cfg.seg.boundary_threshold)
            .map_err(Failure::stage)?;
        let seeds = pipeline::seeds_at(&forest, t).map_err(Failure::stage)?;
        let mut mask = celltrack::segmentation::fine_segment(&blobs, &seeds);
        reconciled += pipeline::reconcile(&mut mask, &seeds).map_err(Failure::stage)?;
        masks.push(mask);
    }
    let output = pipeline::PipelineOutput {
        detections: Vec::new(),
        forest,
        masks,
        reconciled,
        timings: Default::default(),
    };
    pipeline::write_results(out, &output, cfg).map_err(Failure::stage)?;
    println!("{} frames  reconciled markers {reconciled}", output.masks.len());
    Ok(())
}

fn cmd_eval(cfg: &PipelineConfig, input: &Path, gt: &Path, out: Option<&Path>) -> CmdResult {
    let report = eval::evaluate(input, gt, cfg).map_err(Failure::input)?;
    print!("{}", report.to_table());
    if let Some(p) = out {
        let json = serde_json::to_string_pretty(&report.to_json()).expect("report serializes");
        fs::write(p, json + "\n").map_err(|e| Failure::input(e.into()))?;
    }
    Ok(())
}

fn cmd_overlay(input: &Path, results: &Path, out: &Path) -> CmdResult {
    let stats = overlay::render_overlays(input, results, out).map_err(Failure::input)?;
    let total = stats.iter().fold((0, 0, 0), |a, s| (a.0 + s.ids, a.1 + s.crosses, a.2 + s.boxes));
    println!("{} frames  ids {}  crosses {}  boxes {}", stats.len(), total.0, total.1, total.2);
    Ok(())
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let result = load_config(&cli).and_then(|cfg| match &cli.command {
        Command::Synth { out } => cmd_synth(&cfg, out).map_err(Failure::input),
        Command::Pipeline { input, out } => cmd_pipeline(&cfg, input, out),
        Command::Detect { input, out } => cmd_detect(&cfg, input, out),
        Command::Track { input, out } => cmd_track(&cfg, input, out),
        Command::Fineseg { input, tracks, out } => cmd_fineseg(&cfg, input, tracks, out),
        Command::Eval { input, gt, out } => cmd_eval(&cfg, input, gt, out.as_deref()),
        Command::Overlay { input, results, out } => cmd_overlay(input, results, out),
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.error);
            f.code
        }
    }
}

/// Reads back a result root as (forest, masks); convenience for tests.
pub fn read_results(root: &Path) -> celltrack::Result<(celltrack::tracker::LineageForest, Vec<celltrack::imaging::LabelMap>)> {
    ctc_io::import_forest(&SequenceLayout::new(root), TrackTarget::Result)
}
