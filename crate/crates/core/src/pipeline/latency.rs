use serde::{Deserialize, Serialize};

use super::{run_pipeline, PipelineConfig, PipelineRun};
use crate::error::{Error, Result};
use crate::flowcache::CacheStats;
use crate::imgproc::downscale;
use crate::videocore::{Frame, VideoSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLatency {
    pub stage: String,
    pub seconds_per_frame: f64,
}

/// Per-frame wall time of each executed stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub stages: Vec<StageLatency>,
    /// Sum of the stage columns (compute only).
    pub total_per_frame: f64,
    /// Read/convert and write time per frame, when measured by the caller.
    pub io_per_frame: Option<f64>,
    pub end_to_end_per_frame: Option<f64>,
    pub flow_cache: Option<CacheStats>,
}

impl LatencyReport {
    pub fn new(
        width: usize,
        height: usize,
        frames: usize,
        stages: Vec<StageLatency>,
        flow_cache: Option<CacheStats>,
    ) -> Self {
        let total = stages.iter().map(|s| s.seconds_per_frame).sum();
        Self {
            width,
            height,
            frames,
            stages,
            total_per_frame: total,
            io_per_frame: None,
            end_to_end_per_frame: None,
            flow_cache,
        }
    }

    /// Adds I/O time (seconds for the whole sequence) and the end-to-end column.
    pub fn with_io(mut self, io_seconds: f64) -> Self {
        let per_frame = io_seconds / self.frames.max(1) as f64;
        self.io_per_frame = Some(per_frame);
        self.end_to_end_per_frame = Some(self.total_per_frame + per_frame);
        self
    }

    pub fn stage(&self, name: &str) -> Option<f64> {
        self.stages
            .iter()
            .find(|s| s.stage == name)
            .map(|s| s.seconds_per_frame)
    }

    pub fn to_table(&self) -> String {
        latency_table(std::slice::from_ref(self))
    }
}

pub fn report_latency(run: &PipelineRun) -> LatencyReport {
    run.latency.clone()
}

/// Plain-text table with one column per report.
pub fn latency_table(reports: &[LatencyReport]) -> String {
    let mut names: Vec<&str> = Vec::new();
    for r in reports {
        for s in &r.stages {
            if !names.contains(&s.stage.as_str()) {
                names.push(&s.stage);
            }
        }
    }
    let mut out = format!("{:<14}", "stage (s/frame)");
    for r in reports {
        out += &format!(" {:>12}", format!("{}x{}", r.width, r.height));
    }
    out.push('\n');
    let cell = |v: Option<f64>| v.map_or_else(|| format!(" {:>12}", "-"), |v| format!(" {v:>12.4}"));
    for name in names {
        out += &format!("{name:<14}");
        for r in reports {
            out += &cell(r.stage(name));
        }
        out.push('\n');
    }
    out += &format!("{:<14}", "total");
    for r in reports {
        out += &cell(Some(r.total_per_frame));
    }
    out.push('\n');
    if reports.iter().any(|r| r.io_per_frame.is_some()) {
        for (label, get) in [
            ("read/write", (|r: &LatencyReport| r.io_per_frame) as fn(&LatencyReport) -> Option<f64>),
            ("end-to-end", |r: &LatencyReport| r.end_to_end_per_frame),
        ] {
            out += &format!("{label:<14}");
            for r in reports {
                out += &cell(get(r));
            }
            out.push('\n');
        }
    }
    out
}

fn downscale_sequence(seq: &VideoSequence, divisor: usize) -> Result<VideoSequence> {
    if divisor == 1 {
        return Ok(seq.clone());
    }
    let scale = 1.0 / divisor as f32;
    let frames: Vec<Frame> = seq
        .frames()
        .iter()
        .map(|f| f.map_planes(|p| downscale(p, scale)))
        .collect();
    Ok(VideoSequence::new(frames)?.with_frame_rate(seq.frame_rate))
}

/// Runs the pipeline at `1/d` resolution for each divisor `d` (1 = full,
/// 2 = half, 4 = quarter) and returns one report per run. The stabilizer
/// border is scaled with the frame.
pub fn measure_latency(
    input: &VideoSequence,
    config: &PipelineConfig,
    divisors: &[usize],
) -> Result<Vec<LatencyReport>> {
    divisors
        .iter()
        .map(|&d| {
            if d == 0 {
                return Err(Error::invalid("resolution divisor must be >= 1"));
            }
            let seq = downscale_sequence(input, d)?;
            let mut cfg = config.clone();
            cfg.stabilize.crop_border /= d;
            Ok(run_pipeline(&seq, &cfg)?.latency)
        })
        .collect()
}
