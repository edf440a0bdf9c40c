//! Unsupervised motion segmentation from averaged optical-flow magnitudes.
//!
//! For a centre frame, flow magnitudes toward its N nearest neighbours are
//! averaged (AOF) and min-max normalized. The neighbour count is picked from a
//! candidate list by maximizing the mean distance of the normalized map from
//! 0.5, and the chosen map is thresholded and cleaned with morphology.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowEstimator, FlowParams};
use crate::flowcache::FlowCache;
use crate::imgproc::{dilate, erode, fill_holes};
use crate::videocore::{load_frame, save_frame, ColorMode, Frame, Plane, VideoSequence};

pub const DEFAULT_THRESHOLD: f32 = 0.5;
pub const DEFAULT_CANDIDATES: [usize; 5] = [2, 4, 8, 16, 32];
pub const DEFAULT_MORPH_RADIUS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct AofMap {
    /// Normalized AOF in `[0, 1]`.
    pub values: Plane,
    /// Mean flow magnitude in pixels before normalization.
    pub raw: Plane,
    pub n_used: usize,
    pub center_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionMask {
    pub width: usize,
    pub height: usize,
    /// `true` marks dynamic foreground.
    pub labels: Vec<bool>,
    pub threshold: f32,
    pub frame_index: usize,
}

impl MotionMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self::from_labels(width, height, vec![false; width * height])
    }

    pub fn from_labels(width: usize, height: usize, labels: Vec<bool>) -> Self {
        assert_eq!(labels.len(), width * height, "label count must match size");
        Self {
            width,
            height,
            labels,
            threshold: DEFAULT_THRESHOLD,
            frame_index: 0,
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let labels = (0..width * height).map(|i| f(i % width, i / width)).collect();
        Self::from_labels(width, height, labels)
    }

    pub fn count(&self) -> usize {
        self.labels.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.labels.iter().any(|&b| b)
    }

    pub fn is_full(&self) -> bool {
        self.labels.iter().all(|&b| b)
    }

    pub fn dilated(&self, radius: usize) -> MotionMask {
        MotionMask {
            labels: dilate(&self.labels, self.width, self.height, radius),
            ..self.clone()
        }
    }

    pub fn to_frame(&self) -> Frame {
        Frame::from_plane(Plane {
            width: self.width,
            height: self.height,
            data: self.labels.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        })
    }

    /// Writes an 8-bit PNG with 255 for foreground.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        save_frame(&self.to_frame(), path.as_ref())
    }

    /// Reads a mask PNG; any non-zero pixel is foreground.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let f = load_frame(path.as_ref(), ColorMode::Luma)?;
        let labels = f.planes[0].data.iter().map(|&v| v > 0.0).collect();
        Ok(Self::from_labels(f.width, f.height, labels))
    }
}

/// Neighbour frames of `center`, nearest first, alternating forward and
/// backward, skipping indices outside the sequence. At most `n` are returned.
pub fn neighbor_indices(len: usize, center: usize, n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    let mut d = 1;
    while out.len() < n && (center + d < len || center >= d) {
        if center + d < len {
            out.push(center + d);
        }
        if out.len() < n && center >= d {
            out.push(center - d);
        }
        d += 1;
    }
    out
}

/// Min-max normalization to `[0, 1]`; constant maps become all zeros.
pub fn normalize_min_max(p: &Plane) -> Plane {
    let (lo, hi) = p.min_max();
    let range = hi - lo;
    if !(range > 0.0) {
        return Plane::zeros(p.width, p.height);
    }
    p.map(|v| ((v - lo) / range).clamp(0.0, 1.0))
}

/// Mean absolute distance of normalized values from 0.5; lies in `[0, 0.5]`.
pub fn separation_objective(values: &Plane) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let s: f64 = values
        .data
        .iter()
        .map(|&v| (v as f64 - 0.5).abs())
        .sum();
    (s / values.len() as f64).clamp(0.0, 0.5)
}

pub fn average_optical_flow(
    seq: &VideoSequence,
    center: usize,
    n: usize,
    estimator: &dyn FlowEstimator,
    cache: &FlowCache,
) -> Result<AofMap> {
    if n == 0 {
        return Err(Error::invalid("neighbour count must be >= 1"));
    }
    if center >= seq.len() {
        return Err(Error::IndexOutOfRange {
            index: center,
            len: seq.len(),
        });
    }
    let neighbors = neighbor_indices(seq.len(), center, n);
    if neighbors.is_empty() {
        return Err(Error::invalid("sequence has no neighbouring frames"));
    }
    let (w, h) = (seq.width(), seq.height());
    let mut acc = vec![0.0f32; w * h];
    for &j in &neighbors {
        let field = cache.flow(seq, center, j, estimator)?;
        for ((a, &u), &v) in acc.iter_mut().zip(&field.u.data).zip(&field.v.data) {
            *a += (u * u + v * v).sqrt();
        }
    }
    let k = neighbors.len() as f32;
    let raw = Plane {
        width: w,
        height: h,
        data: acc.into_iter().map(|s| s / k).collect(),
    };
    Ok(AofMap {
        values: normalize_min_max(&raw),
        raw,
        n_used: neighbors.len(),
        center_index: center,
    })
}

#[derive(Debug, Clone)]
pub struct NSelection {
    pub n_opt: usize,
    /// `(candidate N, objective)` for each evaluated candidate, ascending in N.
    pub objectives: Vec<(usize, f64)>,
    pub map: AofMap,
}

/// Index of the best objective; ties go to the earliest (smallest N) entry.
pub fn argmax_objective(objectives: &[(usize, f64)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &(_, o)) in objectives.iter().enumerate() {
        if best.is_none_or(|b| o > objectives[b].1) {
            best = Some(i);
        }
    }
    best
}

/// Candidates sorted, de-duplicated and capped at the available neighbours.
pub fn feasible_candidates(candidates: &[usize], len: usize) -> Vec<usize> {
    let avail = len.saturating_sub(1);
    let mut c: Vec<usize> = candidates
        .iter()
        .filter(|&&n| n >= 1)
        .map(|&n| n.min(avail))
        .filter(|&n| n >= 1)
        .collect();
    c.sort_unstable();
    c.dedup();
    c
}

pub fn select_n_opt(
    seq: &VideoSequence,
    center: usize,
    candidates: &[usize],
    estimator: &dyn FlowEstimator,
    cache: &FlowCache,
) -> Result<NSelection> {
    if candidates.is_empty() {
        return Err(Error::invalid("empty candidate list"));
    }
    let cands = feasible_candidates(candidates, seq.len());
    if cands.is_empty() {
        return Err(Error::invalid("sequence has no neighbouring frames"));
    }
    let maps: Vec<AofMap> = cands
        .par_iter()
        .map(|&n| average_optical_flow(seq, center, n, estimator, cache))
        .collect::<Result<_>>()?;
    let objectives: Vec<(usize, f64)> = cands
        .iter()
        .zip(&maps)
        .map(|(&n, m)| (n, separation_objective(&m.values)))
        .collect();
    let best = argmax_objective(&objectives).expect("non-empty");
    Ok(NSelection {
        n_opt: objectives[best].0,
        objectives,
        map: maps.into_iter().nth(best).unwrap(),
    })
}

/// `values > threshold`, before any cleanup.
pub fn threshold_labels(values: &Plane, threshold: f32) -> Vec<bool> {
    values.data.iter().map(|&v| v > threshold).collect()
}

/// Thresholds the map, then applies opening, closing and hole filling.
pub fn threshold_mask(aof: &AofMap, threshold: f32, radius: usize) -> MotionMask {
    let (w, h) = (aof.values.width, aof.values.height);
    let mut labels = threshold_labels(&aof.values, threshold);
    if radius > 0 {
        labels = dilate(&erode(&labels, w, h, radius), w, h, radius);
        labels = erode(&dilate(&labels, w, h, radius), w, h, radius);
    }
    labels = fill_holes(&labels, w, h);
    MotionMask {
        width: w,
        height: h,
        labels,
        threshold,
        frame_index: aof.center_index,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentParams {
    pub threshold: f32,
    pub candidates: Vec<usize>,
    pub morph_radius: usize,
    pub flow: FlowParams,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            candidates: DEFAULT_CANDIDATES.to_vec(),
            morph_radius: DEFAULT_MORPH_RADIUS,
            flow: FlowParams::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FrameSegmentation {
    pub mask: MotionMask,
    pub n_opt: usize,
    pub objective: f64,
}

/// Segments one centre frame end to end.
pub fn segment_frame(
    seq: &VideoSequence,
    center: usize,
    params: &SegmentParams,
    estimator: &dyn FlowEstimator,
    cache: &FlowCache,
) -> Result<FrameSegmentation> {
    if !(params.threshold > 0.0 && params.threshold < 1.0) {
        return Err(Error::invalid("threshold must lie in (0, 1)"));
    }
    if seq.len() < 2 {
        return Ok(FrameSegmentation {
            mask: MotionMask {
                frame_index: center,
                threshold: params.threshold,
                ..MotionMask::empty(seq.width(), seq.height())
            },
            n_opt: 0,
            objective: 0.0,
        });
    }
    let sel = select_n_opt(seq, center, &params.candidates, estimator, cache)?;
    let objective = sel
        .objectives
        .iter()
        .find(|(n, _)| *n == sel.n_opt)
        .map_or(0.0, |o| o.1);
    Ok(FrameSegmentation {
        mask: threshold_mask(&sel.map, params.threshold, params.morph_radius),
        n_opt: sel.n_opt,
        objective,
    })
}

/// Segments every frame of a sequence.
pub fn segment_sequence(
    seq: &VideoSequence,
    params: &SegmentParams,
    estimator: &dyn FlowEstimator,
    cache: &FlowCache,
) -> Result<Vec<FrameSegmentation>> {
    (0..seq.len())
        .into_par_iter()
        .map(|c| segment_frame(seq, c, params, estimator, cache))
        .collect()
}
