//! End-to-end restoration: stabilize, segment, estimate turbulence, stack the
//! background, blend the foreground back and sharpen.

mod config;
mod latency;
pub mod sharpen;

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    OutputConfig, PipelineConfig, SegmentConfig, StabilizeConfig, StackConfig, StageToggles,
    TurbulenceConfig, CONFIG_VERSION,
};
pub use latency::{latency_table, measure_latency, report_latency, LatencyReport, StageLatency};
pub use sharpen::{sharpen, sharpen_sequence, SharpenConfig, SharpenMethod};

use crate::error::{Error, Result};
use crate::flow::{FlowEstimator, HornSchunck, PrecomputedFlow};
use crate::flowcache::{CacheStats, FlowCache};
use crate::segment::{segment_sequence, MotionMask};
use crate::stabilize::{stabilize, write_offsets_csv, Offset};
use crate::stackblend::{blend_foreground, gaussian_stack};
use crate::turbstats::{estimate_cn2, TurbulenceReport};
use crate::videocore::{save_sequence, Frame, VideoSequence};

/// Everything a pipeline run produces.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub restored: VideoSequence,
    pub masks: Vec<MotionMask>,
    pub offsets: Vec<Offset>,
    pub n_opt: Vec<usize>,
    pub turbulence: Option<TurbulenceReport>,
    /// Temporal sigma used for stacking, if the stack stage ran.
    pub stack_sigma: Option<f64>,
    pub latency: LatencyReport,
}

/// JSON summary written next to the restored frames.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub frames: usize,
    pub offsets: Vec<Offset>,
    pub n_opt: Vec<usize>,
    pub mask_pixels: Vec<usize>,
    pub turbulence: Option<TurbulenceReport>,
    pub stack_sigma: Option<f64>,
    pub latency: LatencyReport,
}

impl PipelineRun {
    pub fn summary(&self) -> RunSummary {
        RunSummary {
            frames: self.restored.len(),
            offsets: self.offsets.clone(),
            n_opt: self.n_opt.clone(),
            mask_pixels: self.masks.iter().map(MotionMask::count).collect(),
            turbulence: self.turbulence,
            stack_sigma: self.stack_sigma,
            latency: self.latency.clone(),
        }
    }
}

struct Timer {
    stages: Vec<StageLatency>,
    frames: usize,
}

impl Timer {
    fn run<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f().map_err(|e| e.in_stage(stage))?;
        self.stages.push(StageLatency {
            stage: stage.to_string(),
            seconds_per_frame: t.elapsed().as_secs_f64() / self.frames as f64,
        });
        Ok(out)
    }
}

fn estimator_for(cfg: &SegmentConfig) -> Box<dyn FlowEstimator> {
    match &cfg.flow_dir {
        Some(dir) => Box::new(PrecomputedFlow { dir: dir.clone() }),
        None => Box::new(HornSchunck::new(cfg.flow.clone())),
    }
}

/// Runs the enabled stages in order on `input`.
pub fn run_pipeline(input: &VideoSequence, config: &PipelineConfig) -> Result<PipelineRun> {
    config.validate()?;
    if input.is_empty() {
        return Err(Error::EmptySequence);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| run_stages(input, config))
}

fn run_stages(input: &VideoSequence, config: &PipelineConfig) -> Result<PipelineRun> {
    let n = input.len();
    let (w, h) = (input.width(), input.height());
    let stages = config.stages;
    let mut timer = Timer {
        stages: Vec::new(),
        frames: n,
    };

    let (stabilized, offsets) = if stages.stabilize {
        let r = timer.run("stabilize", || stabilize(input, config.stabilize.crop_border))?;
        (r.stabilized, r.offsets)
    } else {
        (input.clone(), vec![Offset::ZERO; n])
    };

    let mut masks: Vec<MotionMask> = (0..n)
        .map(|i| MotionMask {
            frame_index: i,
            ..MotionMask::empty(w, h)
        })
        .collect();
    let mut n_opt = vec![0; n];
    let mut cache_stats: Option<CacheStats> = None;
    if stages.segment {
        let segs = timer.run("segment", || {
            let estimator = estimator_for(&config.segment);
            let cache = FlowCache::for_frame_size(w, h, config.segment.cache_fields_at_1080p);
            let segs = segment_sequence(&stabilized, &config.segment.params(), estimator.as_ref(), &cache)?;
            cache_stats = Some(cache.stats());
            Ok(segs)
        })?;
        for (i, s) in segs.into_iter().enumerate() {
            n_opt[i] = s.n_opt;
            masks[i] = s.mask;
        }
    }

    let turbulence = if stages.turbulence {
        Some(timer.run("turbulence", || {
            let mut background = vec![true; w * h];
            for m in &masks {
                for (b, &l) in background.iter_mut().zip(&m.labels) {
                    *b &= !l;
                }
            }
            let bg = background.iter().any(|&b| b).then_some(background.as_slice());
            estimate_cn2(
                &stabilized,
                bg,
                config.turbulence.optics.as_ref(),
                &config.turbulence.calibration,
            )
        })?)
    } else {
        None
    };

    let sigma = config
        .stack
        .sigma
        .or(turbulence.map(|r| r.window_sigma))
        .unwrap_or(config.stack.fallback_sigma);
    let background: Vec<Frame> = if stages.stack {
        let stack_masks = stages.segment.then_some(masks.as_slice());
        timer.run("stack", || {
            (0..n)
                .into_par_iter()
                .map(|c| gaussian_stack(&stabilized, c, sigma, stack_masks).map(|s| s.frame))
                .collect()
        })?
    } else {
        stabilized.frames().to_vec()
    };

    let combined: Vec<Frame> = if stages.blend {
        timer.run("blend", || {
            background
                .par_iter()
                .zip(stabilized.frames().par_iter())
                .zip(masks.par_iter())
                .map(|((bg, fg), m)| blend_foreground(bg, fg, m, &config.blend))
                .collect()
        })?
    } else {
        background
    };
    let combined = VideoSequence::new(
        combined
            .into_iter()
            .zip(input.frames())
            .map(|(f, orig)| f.with_index(orig.index))
            .collect(),
    )?
    .with_frame_rate(input.frame_rate);

    let sharpened = if stages.sharpen {
        timer.run("sharpen", || sharpen_sequence(&combined, &config.sharpen))?
    } else {
        combined
    };
    let restored = sharpened.map_frames(Frame::clamped01)?;

    let latency = LatencyReport::new(w, h, n, timer.stages, cache_stats);
    Ok(PipelineRun {
        restored,
        masks,
        offsets,
        n_opt,
        turbulence,
        stack_sigma: stages.stack.then_some(sigma),
        latency,
    })
}

/// Writes restored frames to `dir/frames`, masks to `dir/masks`, offsets to
/// `dir/offsets.csv` and the run summary to `dir/report.json`.
pub fn save_run(run: &PipelineRun, dir: &Path, output: &OutputConfig) -> Result<()> {
    save_sequence(&run.restored, dir.join("frames"))?;
    if output.save_masks {
        let masks_dir = dir.join("masks");
        std::fs::create_dir_all(&masks_dir).map_err(|e| Error::io(&masks_dir, e))?;
        for (i, m) in run.masks.iter().enumerate() {
            m.save_png(masks_dir.join(format!("mask_{i:06}.png")))?;
        }
    }
    write_offsets_csv(dir.join("offsets.csv"), &run.offsets)?;
    if output.save_report {
        let path = dir.join("report.json");
        let text = serde_json::to_string_pretty(&run.summary())?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
