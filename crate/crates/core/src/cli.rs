//! Command-line interface. Each subcommand runs one stage; `pipeline` runs
//! them all. Every run writes a JSON manifest next to its outputs.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{ContourMode, Metric, PipelineConfig, SmoothingMethod};
use crate::datasetprep::{self, GradientShape, PrepOptions};
use crate::detect::{self, Adapters, Detection};
use crate::error::{Error, Result};
use crate::evaluation::{self, MacroOptions};
use crate::ingest::{self, FrameSequence};
use crate::manifest::RunManifest;
use crate::masking;
use crate::plot::{self, PlotInput};
use crate::selection;
use crate::signals::{self, SignalSeries};
use crate::smoothing;
use crate::synthgen::{self, ScenarioSpec};

#[derive(Debug, Parser)]
#[command(name = "framesift", version, about = "Frame selection, masking, detection and scoring for checkout videos")]
pub struct Cli {
    /// Pipeline config file (TOML).
    #[arg(long, global = true, env = "FRAMESIFT_CONFIG")]
    pub config: Option<PathBuf>,

    /// Built-in preset, applied before --config.
    #[arg(long, global = true, env = "FRAMESIFT_PRESET")]
    pub preset: Option<String>,

    /// Worker threads for per-frame stages (default: all cores).
    #[arg(long, global = true, env = "FRAMESIFT_JOBS")]
    pub jobs: Option<usize>,

    /// Where to write the run manifest (default: next to the outputs).
    #[arg(long, global = true, env = "FRAMESIFT_MANIFEST")]
    pub manifest: Option<PathBuf>,

    #[command(flatten)]
    pub overrides: Overrides,

    #[command(subcommand)]
    pub command: Command,
}

/// Flags that override config values.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    #[arg(long, global = true, env = "FRAMESIFT_FRAME_RATE")]
    pub frame_rate: Option<f64>,
    #[arg(long, global = true, env = "FRAMESIFT_CROP_FRACTION")]
    pub crop_fraction: Option<f64>,
    #[arg(long, global = true, value_enum, env = "FRAMESIFT_METRIC")]
    pub metric: Option<Metric>,
    #[arg(long, global = true, value_enum, env = "FRAMESIFT_SMOOTHING")]
    pub smoothing: Option<SmoothingMethod>,
    #[arg(long, global = true)]
    pub window: Option<usize>,
    #[arg(long, global = true)]
    pub polyorder: Option<usize>,
    #[arg(long, global = true)]
    pub keep_fraction: Option<f64>,
    #[arg(long, global = true)]
    pub min_prominence: Option<f64>,
    #[arg(long, global = true)]
    pub sharpness_threshold: Option<f64>,
    #[arg(long, global = true)]
    pub cbt_threshold: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub contour_mode: Option<ContourMode>,
    #[arg(long, global = true)]
    pub pad: Option<usize>,
    #[arg(long, global = true)]
    pub dedupe_window: Option<f64>,
}

impl Overrides {
    fn apply(&self, cfg: &mut PipelineConfig) {
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut cfg.ingest.frame_rate, self.frame_rate);
        set(&mut cfg.ingest.crop_fraction, self.crop_fraction);
        set(&mut cfg.smoothing.keep_fraction, self.keep_fraction);
        set(&mut cfg.smoothing.min_prominence, self.min_prominence);
        set(&mut cfg.selection.sharpness_threshold, self.sharpness_threshold);
        set(&mut cfg.selection.cbt_threshold, self.cbt_threshold);
        set(&mut cfg.detect.dedupe_window_s, self.dedupe_window);
        if let Some(m) = self.metric {
            cfg.signals.metric = m;
        }
        if let Some(m) = self.smoothing {
            cfg.smoothing.method = m;
        }
        if let Some(w) = self.window {
            cfg.smoothing.window = w;
        }
        if let Some(p) = self.polyorder {
            cfg.smoothing.polyorder = p;
        }
        if let Some(m) = self.contour_mode {
            cfg.masking.contour_mode = m;
        }
        if let Some(p) = self.pad {
            cfg.masking.pad = p;
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-frame signal series of one frame directory.
    Signals {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also draw the series as SVG.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Smooth a series CSV.
    Smooth {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Local maxima of a (smoothed) series CSV.
    Peaks {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Refine and gate peak frames.
    Select {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        peaks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mask and crop one frame image.
    Mask {
        #[arg(long)]
        image: PathBuf,
        /// Key passed to the segmenters; defaults to the file stem.
        #[arg(long)]
        frame_key: Option<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Raw detections for one or more frame directories.
    Detect {
        #[arg(long, required = true)]
        frames: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Remove duplicate detections from a full-precision detection CSV.
    Dedupe {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score detections against ground truth.
    Eval {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        fixed_q: bool,
        #[arg(long)]
        weighted: bool,
    },
    /// Replace image backgrounds with random gradients.
    PrepBg {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fixed shape; random per image when omitted.
        #[arg(long, value_enum)]
        shape: Option<GradientShape>,
    },
    /// Render a synthetic scenario with ground truth.
    Synthgen {
        /// Scenario file (TOML); the built-in scenario when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Detect, dedupe and (with --gt) evaluate.
    Pipeline {
        #[arg(long, required = true)]
        frames: Vec<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Signals { .. } => "signals",
            Command::Smooth { .. } => "smooth",
            Command::Peaks { .. } => "peaks",
            Command::Select { .. } => "select",
            Command::Mask { .. } => "mask",
            Command::Detect { .. } => "detect",
            Command::Dedupe { .. } => "dedupe",
            Command::Eval { .. } => "eval",
            Command::PrepBg { .. } => "prep-bg",
            Command::Synthgen { .. } => "synthgen",
            Command::Pipeline { .. } => "pipeline",
        }
    }
}

/// Builds the effective config: preset, then file, then flags.
pub fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match (&cli.preset, &cli.config) {
        (_, Some(path)) => PipelineConfig::load(path)?,
        (Some(name), None) => PipelineConfig::preset(name)?,
        (None, None) => PipelineConfig::default(),
    };
    if let (Some(name), Some(_)) = (&cli.preset, &cli.config) {
        return Err(Error::Config(format!(
            "--preset {name} and --config are mutually exclusive"
        )));
    }
    cli.overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn manifest_path(cli: &Cli, default: PathBuf) -> PathBuf {
    cli.manifest.clone().unwrap_or(default)
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    out.with_file_name(format!("{stem}{suffix}"))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load(dir: &Path, cfg: &PipelineConfig) -> Result<FrameSequence> {
    ingest::load_frame_dir(dir, cfg.ingest.frame_rate)
}

/// Runs the parsed command and returns the manifest it wrote.
pub fn execute(cli: &Cli) -> Result<RunManifest> {
    let cfg = resolve_config(cli)?;
    let mut m = RunManifest::new(cli.command.name());
    m.config = Some(cfg.clone());

    let manifest_at = match &cli.command {
        Command::Signals { frames, out, plot } => {
            m.inputs.push(frames.clone());
            let seq = load(frames, &cfg)?;
            let series = signals::compute_series(&seq, cfg.signals.metric, &cfg.ingest)?;
            series.write_csv(out)?;
            m.add_output(out)?;
            if let Some(p) = plot {
                plot::write_svg(
                    p,
                    &PlotInput {
                        title: &format!("{} {}", seq.video_id(), cfg.signals.metric.name()),
                        raw: &series,
                        smoothed: None,
                        peaks: &[],
                        kept: &[],
                    },
                )?;
                m.add_output(p)?;
            }
            sidecar(out, ".manifest.json")
        }
        Command::Smooth { input, out } => {
            m.inputs.push(input.clone());
            let series = read_series(input, &cfg)?;
            smoothing::smooth(&series, &cfg.smoothing)?.write_csv(out)?;
            m.add_output(out)?;
            sidecar(out, ".manifest.json")
        }
        Command::Peaks { input, out } => {
            m.inputs.push(input.clone());
            let series = read_series(input, &cfg)?;
            smoothing::write_peaks_csv(out, &smoothing::find_peaks(&series, cfg.smoothing.min_prominence))?;
            m.add_output(out)?;
            sidecar(out, ".manifest.json")
        }
        Command::Select { frames, peaks, out } => {
            m.inputs.extend([frames.clone(), peaks.clone()]);
            let seq = load(frames, &cfg)?;
            let peak_idx = smoothing::read_peaks_csv(peaks)?;
            let cands = selection::evaluate_candidates(&seq, &peak_idx, &cfg)?;
            selection::write_candidates_csv(out, &cands)?;
            m.add_output(out)?;
            sidecar(out, ".manifest.json")
        }
        Command::Mask {
            image,
            frame_key,
            out_dir,
        } => {
            m.inputs.push(image.clone());
            create_dir(out_dir)?;
            let frame = ingest::read_frame(image)?;
            let roi = ingest::crop_roi(&frame, cfg.ingest.crop_fraction)?;
            let key = frame_key.clone().unwrap_or_else(|| {
                image.file_stem().and_then(|s| s.to_str()).unwrap_or("frame").to_string()
            });
            let adapters = Adapters::from_config(&cfg.adapters)?;
            let outcome = detect::mask_candidate(&roi, &key, &cfg, &adapters)?;
            let mask_png = out_dir.join("mask.png");
            outcome.mask.write_png(&mask_png)?;
            m.add_output(&mask_png)?;
            let contours_csv = out_dir.join("contours.csv");
            masking::write_contours_csv(&contours_csv, &masking::find_contours(&outcome.mask))?;
            m.add_output(&contours_csv)?;
            for (i, crop) in outcome.crops.iter().enumerate() {
                let p = out_dir.join(format!("crop_{i}.png"));
                ingest::write_frame(&p, crop)?;
                m.add_output(&p)?;
            }
            out_dir.join("manifest.json")
        }
        Command::Detect { frames, out } => {
            let adapters = Adapters::from_config(&cfg.adapters)?;
            let mut all = Vec::new();
            for dir in frames {
                m.inputs.push(dir.clone());
                let seq = load(dir, &cfg)?;
                let trace = detect::trace_pipeline(&seq, &cfg, &adapters)?;
                m.timings.extend(trace.timings);
                all.extend(trace.detections);
            }
            write_detections(&mut m, out, &all)?;
            sidecar(out, ".manifest.json")
        }
        Command::Dedupe { input, out } => {
            m.inputs.push(input.clone());
            let mut dets = detect::read_detections_full_csv(input)?;
            dets.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
            write_detections(&mut m, out, &detect::dedupe(&dets, cfg.detect.dedupe_window_s))?;
            sidecar(out, ".manifest.json")
        }
        Command::Eval {
            detections,
            gt,
            out,
            fixed_q,
            weighted,
        } => {
            m.inputs.extend([detections.clone(), gt.clone()]);
            let dets = detect::read_detections_full_csv(detections)?;
            let events = evaluation::read_gt_csv(gt)?;
            let opts = MacroOptions {
                fixed_q: *fixed_q || cfg.evaluation.fixed_q,
                weighted: *weighted || cfg.evaluation.weighted,
            };
            score(&mut m, &dets, &events, opts, out)?;
            sidecar(out, ".manifest.json")
        }
        Command::PrepBg {
            input,
            masks,
            out,
            seed,
            shape,
        } => {
            m.inputs.extend([input.clone(), masks.clone()]);
            m.seed = Some(*seed);
            let opts = PrepOptions {
                shape: *shape,
                seed: *seed,
                ..PrepOptions::default()
            };
            let records = datasetprep::prep_background_dir(input, masks, out, &opts)?;
            for r in &records {
                m.add_output(&r.output)?;
            }
            let csv = out.join("prep_manifest.csv");
            datasetprep::write_prep_manifest(&csv, &records)?;
            m.add_output(&csv)?;
            out.join("manifest.json")
        }
        Command::Synthgen { scenario, out, seed } => {
            let mut spec = match scenario {
                Some(p) => {
                    m.inputs.push(p.clone());
                    ScenarioSpec::load(p)?
                }
                None => ScenarioSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = *s;
            }
            m.seed = Some(spec.seed);
            m.config = None;
            create_dir(out)?;
            let generated = synthgen::generate(&spec)?;
            let files = synthgen::write_output(&spec, &generated, out)?;
            for i in generated.sequence.indices() {
                m.add_output(&files.frame_dir.join(format!("{i:06}.png")))?;
            }
            for p in [&files.gt_csv, &files.labels_csv, &files.scenario_toml] {
                m.add_output(p)?;
            }
            out.join("manifest.json")
        }
        Command::Pipeline { frames, gt, out_dir } => {
            create_dir(out_dir)?;
            let adapters = Adapters::from_config(&cfg.adapters)?;
            let mut all = Vec::new();
            let multi = frames.len() > 1;
            for dir in frames {
                m.inputs.push(dir.clone());
                let seq = load(dir, &cfg)?;
                let trace = detect::trace_pipeline(&seq, &cfg, &adapters)?;
                let prefix = if multi {
                    format!("{}_", seq.video_id())
                } else {
                    String::new()
                };
                let at = |name: &str| out_dir.join(format!("{prefix}{name}"));
                trace.series.write_csv(&at("series.csv"))?;
                trace.smoothed.write_csv(&at("smoothed.csv"))?;
                smoothing::write_peaks_csv(&at("peaks.csv"), &trace.peaks)?;
                selection::write_candidates_csv(&at("candidates.csv"), &trace.candidates)?;
                let peak_idx: Vec<u64> = trace.peaks.iter().map(|p| p.frame_index).collect();
                let kept: Vec<u64> = trace.candidates.iter().filter(|c| c.kept).map(|c| c.frame_index).collect();
                plot::write_svg(
                    &at("signals.svg"),
                    &PlotInput {
                        title: &format!("{} {}", seq.video_id(), cfg.signals.metric.name()),
                        raw: &trace.series,
                        smoothed: Some(&trace.smoothed),
                        peaks: &peak_idx,
                        kept: &kept,
                    },
                )?;
                for name in ["series.csv", "smoothed.csv", "peaks.csv", "candidates.csv", "signals.svg"] {
                    m.add_output(&at(name))?;
                }
                m.timings.extend(trace.timings);
                let dets = if cfg.detect.dedupe {
                    detect::dedupe(&trace.detections, cfg.detect.dedupe_window_s)
                } else {
                    trace.detections
                };
                all.extend(dets);
            }
            write_detections(&mut m, &out_dir.join("detections.csv"), &all)?;
            if let Some(gt) = gt {
                m.inputs.push(gt.clone());
                let events = evaluation::read_gt_csv(gt)?;
                let opts = MacroOptions {
                    fixed_q: cfg.evaluation.fixed_q,
                    weighted: cfg.evaluation.weighted,
                };
                score(&mut m, &all, &events, opts, &out_dir.join("report.csv"))?;
            }
            out_dir.join("manifest.json")
        }
    };
    m.write(&manifest_path(cli, manifest_at))?;
    Ok(m)
}

fn read_series(path: &Path, cfg: &PipelineConfig) -> Result<SignalSeries> {
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("series");
    SignalSeries::read_csv(path, id, cfg.ingest.frame_rate)
}

fn write_detections(m: &mut RunManifest, out: &Path, dets: &[Detection]) -> Result<()> {
    detect::write_detections_csv(out, dets)?;
    m.add_output(out)?;
    let full = sidecar(out, ".full.csv");
    detect::write_detections_full_csv(&full, dets)?;
    m.add_output(&full)
}

fn score(
    m: &mut RunManifest,
    dets: &[Detection],
    events: &[evaluation::GroundTruthEvent],
    opts: MacroOptions,
    out: &Path,
) -> Result<()> {
    let report = evaluation::match_detections(dets, events)?;
    let value = evaluation::macro_f1(&report, opts)?;
    std::fs::write(out, evaluation::report_csv(&report, value)).map_err(|e| Error::io(out, e))?;
    m.add_output(out)?;
    print!("{}", evaluation::report_table(&report, value));
    Ok(())
}

/// Parses `args`, runs the command, and returns the process exit code:
/// 0 on success, 2 for usage and config errors, 1 otherwise.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error [usage]: --jobs must be >= 1");
            return 2;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error [usage]: cannot size worker pool: {e}");
            return 2;
        }
    }
    match execute(&cli) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error [{}]: {e}", cli.command.name());
            match e {
                Error::Config(_) => 2,
                _ => 1,
            }
        }
    }
}
