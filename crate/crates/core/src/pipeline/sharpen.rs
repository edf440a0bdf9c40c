//! Final sharpening: unsharp masking, Wiener deconvolution against a Gaussian
//! PSF, or an external program exchanging raw frame files.

use std::path::PathBuf;
use std::process::Command;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft2d::RealFft2d;
use crate::imgproc::gaussian_blur;
use crate::videocore::{read_raw, write_raw, Frame, Plane, VideoSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SharpenMethod {
    #[default]
    Unsharp,
    Wiener,
    External,
}

impl std::str::FromStr for SharpenMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unsharp" => Ok(Self::Unsharp),
            "wiener" => Ok(Self::Wiener),
            "external" => Ok(Self::External),
            other => Err(Error::invalid(format!("unknown sharpening method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnsharpParams {
    pub amount: f32,
    pub radius: f32,
}

impl Default for UnsharpParams {
    fn default() -> Self {
        Self {
            amount: 0.8,
            radius: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WienerParams {
    /// Sigma of the assumed Gaussian PSF in pixels.
    pub sigma: f64,
    pub noise_ratio: f64,
}

impl Default for WienerParams {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            noise_ratio: 0.01,
        }
    }
}

/// External sharpener. `{input}` and `{output}` in the arguments are replaced
/// by paths of raw sequence files; the program must write as many frames of
/// the same shape as it reads.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExternalParams {
    pub program: Option<PathBuf>,
    pub args: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SharpenConfig {
    pub method: SharpenMethod,
    pub unsharp: UnsharpParams,
    pub wiener: WienerParams,
    pub external: ExternalParams,
}

impl SharpenConfig {
    pub fn validate(&self) -> Result<()> {
        match self.method {
            SharpenMethod::Unsharp => {
                if !(self.unsharp.amount >= 0.0 && self.unsharp.radius > 0.0) {
                    return Err(Error::invalid("unsharp needs amount >= 0 and radius > 0"));
                }
            }
            SharpenMethod::Wiener => {
                if !(self.wiener.sigma > 0.0 && self.wiener.noise_ratio > 0.0) {
                    return Err(Error::invalid("wiener needs sigma > 0 and noise_ratio > 0"));
                }
            }
            SharpenMethod::External => {
                if self.external.program.is_none() {
                    return Err(Error::invalid("external sharpener needs a program"));
                }
            }
        }
        Ok(())
    }
}

/// `in + amount * (in - blur(in))`, clamped to `[0, 1]`.
pub fn unsharp_mask(frame: &Frame, params: &UnsharpParams) -> Frame {
    if params.amount == 0.0 {
        return frame.clone();
    }
    frame.map_planes(|p| {
        let b = gaussian_blur(p, params.radius);
        Plane::from_fn(p.width, p.height, |x, y| {
            let v = p.get(x, y);
            (v + params.amount * (v - b.get(x, y))).clamp(0.0, 1.0)
        })
    })
}

fn wiener_plane(p: &Plane, params: &WienerParams) -> Plane {
    let (w, h) = (p.width, p.height);
    // symmetric extension makes the periodic signal continuous at the seams
    let (cols, rows) = (2 * w, 2 * h);
    let mut ext = vec![0.0f64; rows * cols];
    for y in 0..rows {
        let sy = if y < h { y } else { rows - 1 - y };
        for x in 0..cols {
            let sx = if x < w { x } else { cols - 1 - x };
            ext[y * cols + x] = p.data[sy * w + sx] as f64;
        }
    }
    let fft = RealFft2d::new(rows, cols);
    let mut spec = fft.forward(&ext);
    let s2 = 2.0 * std::f64::consts::PI.powi(2) * params.sigma * params.sigma;
    for k in 0..fft.spectrum_cols() {
        let fx = k as f64 / cols as f64;
        for r in 0..rows {
            let fy = if r <= rows / 2 { r } else { rows - r } as f64 / rows as f64;
            let hv = (-s2 * (fx * fx + fy * fy)).exp();
            let g = hv / (hv * hv + params.noise_ratio);
            spec[k * rows + r] *= Complex64::new(g, 0.0);
        }
    }
    let out = fft.inverse_block(spec, h, w);
    Plane::from_fn(w, h, |x, y| (out[y * w + x] as f32).clamp(0.0, 1.0))
}

/// Wiener deconvolution assuming a Gaussian PSF, clamped to `[0, 1]`.
pub fn wiener_deconvolve(frame: &Frame, params: &WienerParams) -> Frame {
    frame.map_planes(|p| wiener_plane(p, params))
}

/// Sharpens a single frame with one of the built-in methods.
pub fn sharpen(frame: &Frame, config: &SharpenConfig) -> Result<Frame> {
    config.validate()?;
    match config.method {
        SharpenMethod::Unsharp => Ok(unsharp_mask(frame, &config.unsharp)),
        SharpenMethod::Wiener => Ok(wiener_deconvolve(frame, &config.wiener)),
        SharpenMethod::External => {
            let seq = VideoSequence::new(vec![frame.clone()])?;
            Ok(run_external(&seq, &config.external)?.into_frames().remove(0))
        }
    }
}

pub fn sharpen_sequence(seq: &VideoSequence, config: &SharpenConfig) -> Result<VideoSequence> {
    config.validate()?;
    let frames = match config.method {
        SharpenMethod::External => return run_external(seq, &config.external),
        SharpenMethod::Unsharp => seq
            .frames()
            .par_iter()
            .map(|f| unsharp_mask(f, &config.unsharp).with_index(f.index))
            .collect(),
        SharpenMethod::Wiener => seq
            .frames()
            .iter()
            .map(|f| wiener_deconvolve(f, &config.wiener).with_index(f.index))
            .collect(),
    };
    Ok(VideoSequence::new(frames)?.with_frame_rate(seq.frame_rate))
}

fn run_external(seq: &VideoSequence, params: &ExternalParams) -> Result<VideoSequence> {
    let program = params
        .program
        .as_ref()
        .ok_or_else(|| Error::invalid("external sharpener needs a program"))?;
    let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let input = dir.path().join("input.raw");
    let output = dir.path().join("output.raw");
    write_raw(&input, seq.frames())?;
    let args: Vec<String> = params
        .args
        .iter()
        .map(|a| {
            a.replace("{input}", &input.to_string_lossy())
                .replace("{output}", &output.to_string_lossy())
        })
        .collect();
    let status = Command::new(program)
        .args(&args)
        .status()
        .map_err(|e| Error::External(format!("cannot start {}: {e}", program.display())))?;
    if !status.success() {
        return Err(Error::External(format!("{} exited with {status}", program.display())));
    }
    let frames = read_raw(&output)?;
    if frames.len() != seq.len() {
        return Err(Error::LengthMismatch {
            expected: seq.len(),
            found: frames.len(),
        });
    }
    if let (Some(a), Some(b)) = (frames.first(), seq.frames().first()) {
        if a.shape() != b.shape() {
            return Err(Error::DimensionMismatch {
                expected: b.shape(),
                found: a.shape(),
                context: "external sharpener output".into(),
            });
        }
    }
    let frames = frames
        .into_iter()
        .zip(seq.frames())
        .map(|(f, orig)| f.with_index(orig.index))
        .collect();
    Ok(VideoSequence::new(frames)?.with_frame_rate(seq.frame_rate))
}
