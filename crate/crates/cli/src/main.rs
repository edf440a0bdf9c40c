use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use turbkit_core::flow::{write_flow, FlowEstimator, FlowParams, HornSchunck, PrecomputedFlow};
use turbkit_core::flowcache::{FlowCache, DEFAULT_CAPACITY_1080P};
use turbkit_core::metrics::{
    mask_iou, psnr, rolling_line_deviation, ssim, LineDeviationParams, PsnrValue,
    DEFAULT_ROLLING_WINDOW,
};
use turbkit_core::pipeline::{run_pipeline, save_run, PipelineConfig};
use turbkit_core::segment::{segment_sequence, MotionMask, SegmentParams};
use turbkit_core::simulate::{generate_dataset, simulate_sequence, DatasetSpec, TurbulenceParams};
use turbkit_core::stabilize::{stabilize, write_offsets_csv, DEFAULT_CROP_BORDER};
use turbkit_core::stackblend::gaussian_stack;
use turbkit_core::turbstats::{estimate_cn2, Calibration};
use turbkit_core::videocore::{load_sequence, save_sequence, write_raw, ColorMode, VideoSequence};
use turbkit_core::Error;

#[derive(Parser)]
#[command(name = "turbkit", version, about = "Turbulence video restoration toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Color {
    Luma,
    Rgb,
}

impl From<Color> for ColorMode {
    fn from(c: Color) -> Self {
        match c {
            Color::Luma => ColorMode::Luma,
            Color::Rgb => ColorMode::Rgb,
        }
    }
}

#[derive(Args)]
struct Io {
    /// Directory of frames or a raw sequence file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "rgb")]
    color: Color,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full restoration pipeline.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        /// Overrides `output.dir` from the config.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "rgb")]
        color: Color,
        /// Also time the pipeline at half and quarter resolution.
        #[arg(long)]
        latency_sweep: bool,
    },
    /// Print the default pipeline configuration.
    Config,
    /// Remove global shifts against the first frame.
    Stabilize {
        #[command(flatten)]
        io: Io,
        #[arg(long, default_value_t = DEFAULT_CROP_BORDER)]
        border: usize,
    },
    /// Compute dense flow from every frame to the next.
    Flow {
        #[command(flatten)]
        io: Io,
    },
    /// Segment moving objects and write one mask per frame.
    Segment {
        #[command(flatten)]
        io: Io,
        #[arg(long, default_value_t = turbkit_core::segment::DEFAULT_THRESHOLD)]
        threshold: f32,
        #[arg(long, value_delimiter = ',', default_values_t = turbkit_core::segment::DEFAULT_CANDIDATES)]
        candidates: Vec<usize>,
        /// Directory of precomputed flow fields.
        #[arg(long)]
        flow_dir: Option<PathBuf>,
    },
    /// Estimate the turbulence strength of a sequence.
    Cn2 {
        #[arg(long)]
        input: PathBuf,
        /// Mask directory; masked pixels are excluded.
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Temporal stacking of the static background.
    RestoreBg {
        #[command(flatten)]
        io: Io,
        /// Temporal sigma in frames; estimated from the sequence when omitted.
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        masks: Option<PathBuf>,
    },
    /// Degrade a clean sequence with synthetic turbulence.
    Simulate {
        #[command(flatten)]
        io: Io,
        #[arg(long, default_value_t = 0.5)]
        severity: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// TOML file with explicit simulator parameters.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Generate a paired clean/degraded dataset.
    GenDataset {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 16)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        severity_min: f64,
        #[arg(long, default_value_t = 1.0)]
        severity_max: f64,
        /// Output size as WIDTHxHEIGHT.
        #[arg(long, value_parser = parse_size)]
        size: Option<(usize, usize)>,
        #[arg(long, value_enum, default_value = "rgb")]
        color: Color,
    },
    /// Compare restored frames against references.
    Evaluate {
        #[arg(long)]
        restored: PathBuf,
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Predicted and ground-truth mask directories for IoU.
        #[arg(long, num_args = 2, value_names = ["PRED", "TRUTH"])]
        masks: Option<Vec<PathBuf>>,
        /// Also score line deviation of the restored frames.
        #[arg(long)]
        lines: bool,
        /// Metrics to compute; inferred from the given inputs when omitted.
        #[arg(long, value_enum, value_delimiter = ',')]
        metrics: Option<Vec<Metric>>,
        #[arg(long, default_value_t = DEFAULT_ROLLING_WINDOW)]
        window: usize,
        /// Per-frame CSV output.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Summary JSON output; printed to stdout when omitted.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Metric {
    Psnr,
    Ssim,
    Iou,
    Linedev,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once('x').ok_or("expected WIDTHxHEIGHT")?;
    let w = w.parse().map_err(|_| "bad width")?;
    let h = h.parse().map_err(|_| "bad height")?;
    Ok((w, h))
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::InvalidArgument(_) | Error::MissingPath(_) => 2,
            _ => 3,
        };
        Failure {
            code,
            error: e.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 3, error }
    }
}

type CmdResult = Result<(), Failure>;

fn config_error(msg: impl Into<String>) -> Failure {
    Error::Config(msg.into()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cmd: Command) -> CmdResult {
    match cmd {
        Command::Run {
            config,
            input,
            output,
            color,
            latency_sweep,
        } => cmd_run(config, &input, output, color.into(), latency_sweep),
        Command::Config => {
            print!("{}", PipelineConfig::default().to_toml_string()?);
            Ok(())
        }
        Command::Stabilize { io, border } => {
            let seq = load_sequence(&io.input, io.color.into())?;
            let r = stabilize(&seq, border)?;
            save_sequence(&r.stabilized, io.output.join("frames"))?;
            write_offsets_csv(io.output.join("offsets.csv"), &r.offsets)?;
            Ok(())
        }
        Command::Flow { io } => {
            let seq = load_sequence(&io.input, io.color.into())?;
            fs::create_dir_all(&io.output).context("creating output directory")?;
            let est = HornSchunck::new(FlowParams::default());
            for s in 0..seq.len().saturating_sub(1) {
                let f = est.flow(&seq, s, s + 1)?;
                write_flow(PrecomputedFlow::path_for(&io.output, s, s + 1), &f)?;
            }
            Ok(())
        }
        Command::Segment {
            io,
            threshold,
            candidates,
            flow_dir,
        } => cmd_segment(&io, threshold, candidates, flow_dir),
        Command::Cn2 {
            input,
            masks,
            calibration,
        } => cmd_cn2(&input, masks, calibration),
        Command::RestoreBg { io, sigma, masks } => cmd_restore_bg(&io, sigma, masks),
        Command::Simulate {
            io,
            severity,
            seed,
            params,
        } => cmd_simulate(&io, severity, seed, params),
        Command::GenDataset {
            source,
            output,
            count,
            frames,
            seed,
            severity_min,
            severity_max,
            size,
            color,
        } => {
            let spec = DatasetSpec {
                count,
                severity_min,
                severity_max,
                frames,
                size,
                seed,
                color: color.into(),
            };
            let m = generate_dataset(&source, &output, &spec)?;
            println!("{} clips written, {} failed", m.clips.len(), m.errors.len());
            for e in &m.errors {
                eprintln!("clip {}: {}", e.clip_id, e.message);
            }
            if m.errors.is_empty() {
                Ok(())
            } else {
                Err(anyhow::anyhow!("{} clips failed", m.errors.len()).into())
            }
        }
        Command::Evaluate {
            restored,
            reference,
            masks,
            lines,
            metrics,
            window,
            csv,
            json,
        } => {
            let metrics = metrics.unwrap_or_else(|| {
                let mut m = Vec::new();
                if reference.is_some() {
                    m.extend([Metric::Psnr, Metric::Ssim]);
                }
                if masks.is_some() {
                    m.push(Metric::Iou);
                }
                if lines {
                    m.push(Metric::Linedev);
                }
                m
            });
            cmd_evaluate(&restored, reference, masks, &metrics, window, csv, json)
        }
    }
}

fn cmd_run(
    config: Option<PathBuf>,
    input: &Path,
    output: Option<PathBuf>,
    color: ColorMode,
    latency_sweep: bool,
) -> CmdResult {
    let cfg = match config {
        Some(p) => PipelineConfig::load(&p).map_err(|e| match e {
            Error::Io { .. } => config_error(format!("cannot read config {}: {e}", p.display())),
            other => other.into(),
        })?,
        None => PipelineConfig::default(),
    };
    let out_dir = output
        .or_else(|| cfg.output.dir.clone())
        .ok_or_else(|| config_error("no output directory (use --output or output.dir)"))?;
    let t_read = Instant::now();
    let seq = load_sequence(input, color)?;
    let read_secs = t_read.elapsed().as_secs_f64();
    let mut run = run_pipeline(&seq, &cfg)?;
    let t_write = Instant::now();
    save_run(&run, &out_dir, &cfg.output)?;
    let write_secs = t_write.elapsed().as_secs_f64();
    run.latency = run.latency.with_io(read_secs + write_secs);
    if cfg.output.save_report {
        let path = out_dir.join("report.json");
        fs::write(&path, serde_json::to_string_pretty(&run.summary()).context("encoding report")?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let mut reports = vec![run.latency.clone()];
    if latency_sweep {
        reports.extend(turbkit_core::pipeline::measure_latency(&seq, &cfg, &[2, 4])?);
    }
    print!("{}", turbkit_core::pipeline::latency_table(&reports));
    if let Some(t) = run.turbulence {
        println!("cn2 {:.6e}  window sigma {:.2} ({} frames)", t.cn2, t.window_sigma, t.window_span);
    }
    Ok(())
}

fn load_masks(dir: &Path, expected: usize) -> Result<Vec<MotionMask>, Failure> {
    let files = turbkit_core::videocore::list_frame_files(dir)?;
    if files.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            found: files.len(),
        }
        .into());
    }
    Ok(files
        .iter()
        .map(MotionMask::load_png)
        .collect::<turbkit_core::Result<_>>()?)
}

fn cmd_segment(io: &Io, threshold: f32, candidates: Vec<usize>, flow_dir: Option<PathBuf>) -> CmdResult {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(config_error("--threshold must lie in (0, 1)"));
    }
    let seq = load_sequence(&io.input, io.color.into())?;
    let params = SegmentParams {
        threshold,
        candidates,
        ..Default::default()
    };
    let est: Box<dyn FlowEstimator> = match flow_dir {
        Some(dir) => Box::new(PrecomputedFlow { dir }),
        None => Box::new(HornSchunck::new(params.flow.clone())),
    };
    let cache = FlowCache::for_frame_size(seq.width(), seq.height(), DEFAULT_CAPACITY_1080P);
    let segs = segment_sequence(&seq, &params, est.as_ref(), &cache)?;
    fs::create_dir_all(&io.output).context("creating output directory")?;
    let mut table = String::from("frame,n_opt,objective,mask_pixels\n");
    for (i, s) in segs.iter().enumerate() {
        s.mask.save_png(io.output.join(format!("mask_{i:06}.png")))?;
        let _ = writeln!(table, "{i},{},{:.6},{}", s.n_opt, s.objective, s.mask.count());
    }
    fs::write(io.output.join("segment.csv"), table).context("writing segment.csv")?;
    let st = cache.stats();
    log::info!("flow cache: {} hits, {} misses, {} evictions", st.hits, st.misses, st.evictions);
    Ok(())
}

fn background_from(masks: &[MotionMask]) -> Option<Vec<bool>> {
    let first = masks.first()?;
    let mut bg = vec![true; first.labels.len()];
    for m in masks {
        for (b, &l) in bg.iter_mut().zip(&m.labels) {
            *b &= !l;
        }
    }
    bg.iter().any(|&b| b).then_some(bg)
}

fn load_calibration(path: Option<PathBuf>) -> Result<Calibration, Failure> {
    let Some(p) = path else {
        return Ok(Calibration::default());
    };
    let text = fs::read_to_string(&p).map_err(|e| config_error(format!("{}: {e}", p.display())))?;
    let cal: Calibration = parse_toml(&text)?;
    cal.validate().map_err(|e| config_error(e.to_string()))?;
    Ok(cal)
}

fn parse_toml<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, Failure> {
    toml::from_str(text).map_err(|e| config_error(e.to_string()))
}

fn cmd_cn2(input: &Path, masks: Option<PathBuf>, calibration: Option<PathBuf>) -> CmdResult {
    let cal = load_calibration(calibration)?;
    let seq = load_sequence(input, ColorMode::Luma)?;
    let bg = match masks {
        Some(dir) => background_from(&load_masks(&dir, seq.len())?),
        None => None,
    };
    let r = estimate_cn2(&seq, bg.as_deref(), None, &cal)?;
    println!("{}", serde_json::to_string_pretty(&r).context("encoding report")?);
    Ok(())
}

fn cmd_restore_bg(io: &Io, sigma: Option<f64>, masks: Option<PathBuf>) -> CmdResult {
    let seq = load_sequence(&io.input, io.color.into())?;
    let masks = match masks {
        Some(dir) => Some(load_masks(&dir, seq.len())?),
        None => None,
    };
    let sigma = match sigma {
        Some(s) => s,
        None => {
            let bg = masks.as_deref().and_then(background_from);
            estimate_cn2(&seq, bg.as_deref(), None, &Calibration::default())?.window_sigma
        }
    };
    let frames = (0..seq.len())
        .map(|c| gaussian_stack(&seq, c, sigma, masks.as_deref()).map(|s| s.frame))
        .collect::<turbkit_core::Result<Vec<_>>>()?;
    save_sequence(&VideoSequence::new(frames)?, io.output.join("frames"))?;
    println!("stacked with sigma {sigma:.2}");
    Ok(())
}

fn cmd_simulate(io: &Io, severity: f64, seed: u64, params: Option<PathBuf>) -> CmdResult {
    let params = match params {
        Some(p) => {
            let text = fs::read_to_string(&p).map_err(|e| config_error(format!("{}: {e}", p.display())))?;
            let mut tp: TurbulenceParams = parse_toml(&text)?;
            tp.seed = seed;
            tp
        }
        None => {
            if !(0.0..=1.0).contains(&severity) {
                return Err(config_error("--severity must lie in [0, 1]"));
            }
            TurbulenceParams::from_severity(severity, seed)
        }
    };
    params.validate().map_err(|e| config_error(e.to_string()))?;
    let clean = load_sequence(&io.input, io.color.into())?;
    let sim = simulate_sequence(&clean, &params)?;
    save_sequence(&sim.degraded, io.output.join("degraded"))?;
    write_raw(io.output.join("tilt_x.raw"), &sim.tilt_x.to_frames())?;
    write_raw(io.output.join("tilt_y.raw"), &sim.tilt_y.to_frames())?;
    write_raw(io.output.join("blur.raw"), &sim.blur.to_frames())?;
    Ok(())
}

#[derive(serde::Serialize)]
struct EvalSummary {
    frames: usize,
    mean_psnr: Option<PsnrValue>,
    mean_ssim: Option<f64>,
    mean_iou: Option<f64>,
    line_deviation_mean: Option<f64>,
    line_deviation_std: Option<f64>,
}

fn cmd_evaluate(
    restored: &Path,
    reference: Option<PathBuf>,
    masks: Option<Vec<PathBuf>>,
    metrics: &[Metric],
    window: usize,
    csv: Option<PathBuf>,
    json: Option<PathBuf>,
) -> CmdResult {
    if metrics.is_empty() {
        return Err(config_error("nothing to evaluate: give --metrics, --reference, --masks or --lines"));
    }
    let want = |m: Metric| metrics.contains(&m);
    if (want(Metric::Psnr) || want(Metric::Ssim)) && reference.is_none() {
        return Err(config_error("psnr and ssim need --reference"));
    }
    if want(Metric::Iou) && masks.is_none() {
        return Err(config_error("iou needs --masks PRED TRUTH"));
    }
    let seq = load_sequence(restored, ColorMode::Rgb)?;
    let n = seq.len();
    let mut psnrs: Vec<Option<f64>> = vec![None; n];
    let mut ssims: Vec<Option<f64>> = vec![None; n];
    let mut ious: Vec<Option<f64>> = vec![None; n];
    let mut line_scores: Vec<Option<f64>> = vec![None; n];
    let mut summary = EvalSummary {
        frames: n,
        mean_psnr: None,
        mean_ssim: None,
        mean_iou: None,
        line_deviation_mean: None,
        line_deviation_std: None,
    };
    let mean = |v: &[Option<f64>]| {
        let d: Vec<f64> = v.iter().flatten().copied().collect();
        (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
    };
    if let Some(r) = reference.filter(|_| want(Metric::Psnr) || want(Metric::Ssim)) {
        let refs = load_sequence(&r, ColorMode::Rgb)?;
        if refs.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: refs.len(),
            }
            .into());
        }
        for i in 0..n {
            let (a, b) = (seq.frame(i)?, refs.frame(i)?);
            if want(Metric::Psnr) {
                psnrs[i] = Some(psnr(a, b, 1.0)?);
            }
            if want(Metric::Ssim) {
                ssims[i] = Some(ssim(a, b)?);
            }
        }
        summary.mean_psnr = mean(&psnrs).map(PsnrValue::from);
        summary.mean_ssim = mean(&ssims);
    }
    if let Some(dirs) = masks.filter(|_| want(Metric::Iou)) {
        let pred = load_masks(&dirs[0], n)?;
        let truth = load_masks(&dirs[1], n)?;
        for i in 0..n {
            ious[i] = Some(mask_iou(&pred[i], &truth[i])?);
        }
        summary.mean_iou = mean(&ious);
    }
    if want(Metric::Linedev) {
        let report = rolling_line_deviation(&seq, window, &LineDeviationParams::default())?;
        line_scores = report.per_frame_score.clone();
        summary.line_deviation_mean = Some(report.mean);
        summary.line_deviation_std = Some(report.std);
    }
    if let Some(path) = csv {
        let cell = |v: Option<f64>| match v {
            Some(x) if x.is_finite() => format!("{x:.6}"),
            Some(_) => "inf".to_string(),
            None => String::new(),
        };
        let mut out = String::from("frame,psnr,ssim,iou,line_deviation\n");
        for i in 0..n {
            let _ = writeln!(
                out,
                "{i},{},{},{},{}",
                cell(psnrs[i]),
                cell(ssims[i]),
                cell(ious[i]),
                cell(line_scores[i])
            );
        }
        fs::write(&path, out).with_context(|| format!("writing {}", path.display()))?;
    }
    let text = serde_json::to_string_pretty(&summary).context("encoding summary")?;
    match json {
        Some(path) => fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}
