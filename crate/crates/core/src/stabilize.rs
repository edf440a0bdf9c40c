//! Global translational stabilization by cross-correlation against the first
//! frame.
//!
//! Every frame has the sequence mean intensity removed, is cropped by a fixed
//! border, and is slid over the full reference frame. The correlation surface
//! has `(2 * border + 1)^2` positions; its peak relative to the centre gives
//! the integer displacement of the frame content. Scores are normalized by
//! the energy of the reference window under each position (the classic
//! template-matching normalization), so the argmax is not biased toward
//! bright regions of the reference.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft2d::{fast_len, RealFft2d};
use crate::videocore::{Plane, VideoSequence};

pub const DEFAULT_CROP_BORDER: usize = 50;

/// Integer displacement of a frame's content relative to the reference.
///
/// A frame whose content equals the reference moved right by 12 and up by 7
/// has offset `(12, -7)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Offset {
    pub dx: i32,
    pub dy: i32,
}

impl Offset {
    pub const ZERO: Offset = Offset { dx: 0, dy: 0 };

    pub fn new(dx: i32, dy: i32) -> Self {
        Self { dx, dy }
    }
}

#[derive(Debug, Clone)]
pub struct StabilizationResult {
    pub offsets: Vec<Offset>,
    pub reference_index: usize,
    pub crop_border: usize,
    pub stabilized: VideoSequence,
}

/// Correlation surface for one frame plus its argmax.
#[derive(Debug, Clone)]
pub struct CorrelationSurface {
    /// Side length `2 * border + 1`.
    pub size: usize,
    /// Row-major scores; index `p * size + q` is vertical shift `p`, horizontal `q`.
    pub scores: Vec<f64>,
}

impl CorrelationSurface {
    /// Peak position converted to an offset, ties broken toward the smallest
    /// `(|dy|, |dx|)` and then the smallest `(dy, dx)`.
    pub fn peak_offset(&self) -> Offset {
        pick_peak(&self.scores, self.size)
    }
}

pub(crate) fn pick_peak(scores: &[f64], size: usize) -> Offset {
    let border = (size / 2) as i32;
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-9 * (max.abs() + 1.0);
    let mut best: Option<(i32, i32, i32, i32)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s < max - tol {
            continue;
        }
        let dy = border - (i / size) as i32;
        let dx = border - (i % size) as i32;
        let key = (dy.abs(), dx.abs(), dy, dx);
        if best.is_none_or(|b| key < b) {
            best = Some(key);
        }
    }
    let (_, _, dy, dx) = best.expect("non-empty surface");
    Offset { dx, dy }
}

/// Reference-side state reused for every frame of a sequence.
pub struct Correlator {
    width: usize,
    height: usize,
    border: usize,
    fft: RealFft2d,
    ref_spectrum: Vec<Complex64>,
    /// Variance-times-count of the reference window at each surface position.
    window_energy: Vec<f64>,
    offset: f64,
}

impl Correlator {
    /// Prepares the reference frame. `mean` is subtracted from every frame.
    pub fn new(reference: &Plane, border: usize, mean: f64) -> Result<Self> {
        let (w, h) = (reference.width, reference.height);
        check_border(w, h, border)?;
        let rows = fast_len(h);
        let cols = fast_len(w);
        let fft = RealFft2d::new(rows, cols);
        let mut padded = vec![0.0f64; rows * cols];
        for y in 0..h {
            for x in 0..w {
                padded[y * cols + x] = reference.get(x, y) as f64 - mean;
            }
        }
        let ref_spectrum = fft.forward(&padded);

        // Summed-area tables of the reference and its square.
        let size = 2 * border + 1;
        let (tw, th) = (w - 2 * border, h - 2 * border);
        let n = (tw * th) as f64;
        let mut s1 = vec![0.0f64; (w + 1) * (h + 1)];
        let mut s2 = vec![0.0f64; (w + 1) * (h + 1)];
        for y in 0..h {
            for x in 0..w {
                let v = reference.get(x, y) as f64 - mean;
                let i = (y + 1) * (w + 1) + x + 1;
                s1[i] = v + s1[i - 1] + s1[i - (w + 1)] - s1[i - (w + 1) - 1];
                s2[i] = v * v + s2[i - 1] + s2[i - (w + 1)] - s2[i - (w + 1) - 1];
            }
        }
        let rect = |s: &[f64], p: usize, q: usize| {
            let a = p * (w + 1) + q;
            let b = p * (w + 1) + q + tw;
            let c = (p + th) * (w + 1) + q;
            let d = (p + th) * (w + 1) + q + tw;
            s[d] - s[b] - s[c] + s[a]
        };
        let mut window_energy = vec![0.0f64; size * size];
        for p in 0..size {
            for q in 0..size {
                let sum = rect(&s1, p, q);
                let sq = rect(&s2, p, q);
                window_energy[p * size + q] = (sq - sum * sum / n).max(0.0);
            }
        }
        Ok(Self {
            width: w,
            height: h,
            border,
            fft,
            ref_spectrum,
            window_energy,
            offset: mean,
        })
    }

    /// Normalized correlation surface of one frame against the reference.
    pub fn surface(&self, frame: &Plane) -> Result<CorrelationSurface> {
        if frame.width != self.width || frame.height != self.height {
            return Err(Error::DimensionMismatch {
                expected: (self.width, self.height, 1),
                found: (frame.width, frame.height, 1),
                context: "stabilization frame".into(),
            });
        }
        let b = self.border;
        let (tw, th) = (self.width - 2 * b, self.height - 2 * b);
        let cols = self.fft.cols;
        let mut template = vec![0.0f64; self.fft.rows * cols];
        let mut sum = 0.0f64;
        for y in 0..th {
            for x in 0..tw {
                let v = frame.get(x + b, y + b) as f64 - self.offset;
                template[y * cols + x] = v;
                sum += v;
            }
        }
        let mean = sum / (tw * th) as f64;
        let mut energy = 0.0f64;
        for y in 0..th {
            for v in &mut template[y * cols..y * cols + tw] {
                *v -= mean;
                energy += *v * *v;
            }
        }
        let mut spec = self.fft.forward(&template);
        spec.par_iter_mut()
            .zip(self.ref_spectrum.par_iter())
            .for_each(|(t, r)| *t = r * t.conj());
        let size = 2 * b + 1;
        let mut scores = self.fft.inverse_block(spec, size, size);
        let tnorm = energy.sqrt();
        for (s, &we) in scores.iter_mut().zip(&self.window_energy) {
            let denom = we.sqrt() * tnorm;
            *s = if denom > 1e-12 { *s / denom } else { 0.0 };
        }
        Ok(CorrelationSurface { size, scores })
    }

    pub fn offset_of(&self, frame: &Plane) -> Result<Offset> {
        Ok(self.surface(frame)?.peak_offset())
    }
}

fn check_border(w: usize, h: usize, border: usize) -> Result<()> {
    if 2 * border >= w.min(h) {
        return Err(Error::FrameTooSmall {
            width: w,
            height: h,
            detail: format!("crop border {border} needs both sides > {}", 2 * border),
        });
    }
    Ok(())
}

/// Per-frame integer offsets relative to frame 0.
pub fn estimate_offsets(seq: &VideoSequence, crop_border: usize) -> Result<Vec<Offset>> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    check_border(seq.width(), seq.height(), crop_border)?;
    let luma = if seq.channels() == 1 {
        None
    } else {
        Some(seq.to_luma())
    };
    let seq = luma.as_ref().unwrap_or(seq);
    let mean = seq.mean_intensity()?[0];
    let correlator = Correlator::new(&seq.frames()[0].planes[0], crop_border, mean)?;
    let mut offsets: Vec<Offset> = seq.frames()[1..]
        .par_iter()
        .map(|f| correlator.offset_of(&f.planes[0]))
        .collect::<Result<_>>()?;
    offsets.insert(0, Offset::ZERO);
    Ok(offsets)
}

/// Translates a plane by `-offset`, replicating edges into exposed borders.
pub fn shift_plane(p: &Plane, offset: Offset) -> Plane {
    if offset == Offset::ZERO {
        return p.clone();
    }
    let (w, h) = (p.width, p.height);
    let mut data = vec![0.0f32; w * h];
    data.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let sy = (y as isize + offset.dy as isize).clamp(0, h as isize - 1) as usize;
        let src = &p.data[sy * w..(sy + 1) * w];
        for (x, o) in row.iter_mut().enumerate() {
            let sx = (x as isize + offset.dx as isize).clamp(0, w as isize - 1) as usize;
            *o = src[sx];
        }
    });
    Plane {
        width: w,
        height: h,
        data,
    }
}

/// Moves each frame by the negated offset so its content lines up with frame 0.
pub fn apply_offsets(seq: &VideoSequence, offsets: &[Offset]) -> Result<VideoSequence> {
    if offsets.len() != seq.len() {
        return Err(Error::LengthMismatch {
            expected: seq.len(),
            found: offsets.len(),
        });
    }
    let frames = seq
        .frames()
        .par_iter()
        .zip(offsets.par_iter())
        .map(|(f, &o)| f.map_planes(|p| shift_plane(p, o)))
        .collect();
    Ok(VideoSequence::new(frames)?.with_frame_rate(seq.frame_rate))
}

/// Estimates offsets on luma and applies them to all channels.
pub fn stabilize(seq: &VideoSequence, crop_border: usize) -> Result<StabilizationResult> {
    let offsets = estimate_offsets(seq, crop_border)?;
    let stabilized = apply_offsets(seq, &offsets)?;
    Ok(StabilizationResult {
        offsets,
        reference_index: 0,
        crop_border,
        stabilized,
    })
}

/// Writes `frame,dx,dy` rows.
pub fn write_offsets_csv(path: impl AsRef<Path>, offsets: &[Offset]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("frame,dx,dy\n");
    for (i, o) in offsets.iter().enumerate() {
        out.push_str(&format!("{i},{},{}\n", o.dx, o.dy));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}
