//! Image quality and geometry metrics: PSNR, SSIM, mask IoU and the
//! line-deviation score built on Canny edges and a probabilistic Hough
//! transform.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgproc::gaussian_blur;
use crate::segment::MotionMask;
use crate::videocore::{to_luma, Frame, Plane, VideoSequence};

fn same_shape(a: &Frame, b: &Frame) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            expected: a.shape(),
            found: b.shape(),
            context: "metric operands".into(),
        });
    }
    Ok(())
}

/// Mean squared error over every sample of every channel.
pub fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    same_shape(a, b)?;
    let n = a.sample_count();
    if n == 0 {
        return Err(Error::invalid("empty frame"));
    }
    let s: f64 = a
        .planes
        .iter()
        .zip(&b.planes)
        .map(|(p, q)| {
            p.data
                .iter()
                .zip(&q.data)
                .map(|(&x, &y)| {
                    let d = x as f64 - y as f64;
                    d * d
                })
                .sum::<f64>()
        })
        .sum();
    Ok(s / n as f64)
}

/// Peak signal-to-noise ratio in dB; identical frames give `f64::INFINITY`.
pub fn psnr(a: &Frame, b: &Frame, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// PSNR in a JSON-safe form: an infinite value becomes `db: null, identical: true`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsnrValue {
    pub db: Option<f64>,
    pub identical: bool,
}

impl From<f64> for PsnrValue {
    fn from(v: f64) -> Self {
        if v.is_finite() {
            Self {
                db: Some(v),
                identical: false,
            }
        } else {
            Self {
                db: None,
                identical: true,
            }
        }
    }
}

impl PsnrValue {
    pub fn value(&self) -> f64 {
        self.db.unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

fn window_taps(window: usize, sigma: f64) -> Vec<f64> {
    let r = (window / 2) as f64;
    let t: Vec<f64> = (0..window)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = t.iter().sum();
    t.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering in f64.
fn filter_valid(data: &[f64], w: usize, h: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let ow = w + 1 - k;
    let oh = h + 1 - k;
    let mut rows = vec![0.0f64; ow * h];
    for y in 0..h {
        let src = &data[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0f64; ow * oh];
    for y in 0..oh {
        for (j, &t) in taps.iter().enumerate() {
            let src = &rows[(y + j) * ow..(y + j + 1) * ow];
            for (o, v) in out[y * ow..(y + 1) * ow].iter_mut().zip(src) {
                *o += t * v;
            }
        }
    }
    (out, ow, oh)
}

fn ssim_plane(a: &Plane, b: &Plane, p: &SsimParams) -> f64 {
    let (w, h) = (a.width, a.height);
    let taps = window_taps(p.window, p.sigma);
    let fa: Vec<f64> = a.data.iter().map(|&v| v as f64).collect();
    let fb: Vec<f64> = b.data.iter().map(|&v| v as f64).collect();
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let (mu_a, ow, oh) = filter_valid(&fa, w, h, &taps);
    let (mu_b, _, _) = filter_valid(&fb, w, h, &taps);
    let (aa, _, _) = filter_valid(&prod(&fa, &fa), w, h, &taps);
    let (bb, _, _) = filter_valid(&prod(&fb, &fb), w, h, &taps);
    let (ab, _, _) = filter_valid(&prod(&fa, &fb), w, h, &taps);
    let c1 = (p.k1 * p.data_range).powi(2);
    let c2 = (p.k2 * p.data_range).powi(2);
    let mut acc = 0.0;
    for i in 0..ow * oh {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    acc / (ow * oh) as f64
}

/// Mean SSIM over the valid window positions, averaged over channels.
pub fn ssim_with(a: &Frame, b: &Frame, params: &SsimParams) -> Result<f64> {
    same_shape(a, b)?;
    if params.window == 0 || params.window % 2 == 0 {
        return Err(Error::invalid("SSIM window must be odd and positive"));
    }
    if a.width.min(a.height) < params.window {
        return Err(Error::FrameTooSmall {
            width: a.width,
            height: a.height,
            detail: format!("SSIM window is {}", params.window),
        });
    }
    let total: f64 = a
        .planes
        .iter()
        .zip(&b.planes)
        .map(|(p, q)| ssim_plane(p, q, params))
        .sum();
    Ok(total / a.channels() as f64)
}

pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    ssim_with(a, b, &SsimParams::default())
}

/// Intersection over union; two empty masks score 1.
pub fn mask_iou(pred: &MotionMask, truth: &MotionMask) -> Result<f64> {
    if (pred.width, pred.height) != (truth.width, truth.height) {
        return Err(Error::DimensionMismatch {
            expected: (truth.width, truth.height, 1),
            found: (pred.width, pred.height, 1),
            context: "mask IoU".into(),
        });
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &t) in pred.labels.iter().zip(&truth.labels) {
        inter += (p && t) as usize;
        union += (p || t) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LineDeviationParams {
    pub canny_sigma: f32,
    /// Hysteresis thresholds as fractions of the largest gradient magnitude.
    pub canny_low: f32,
    pub canny_high: f32,
    pub theta_resolution_deg: f64,
    pub vote_threshold: usize,
    pub min_line_length: f64,
    pub max_line_gap: usize,
    pub oblique_cutoff_deg: f64,
    pub seed: u64,
}

impl Default for LineDeviationParams {
    fn default() -> Self {
        Self {
            canny_sigma: 1.4,
            canny_low: 0.1,
            canny_high: 0.3,
            theta_resolution_deg: 1.0,
            vote_threshold: 50,
            min_line_length: 30.0,
            max_line_gap: 10,
            oblique_cutoff_deg: 20.0,
            seed: 0,
        }
    }
}

/// Binary edge map from the Canny detector.
pub fn canny(p: &Plane, sigma: f32, low: f32, high: f32) -> Vec<bool> {
    let (w, h) = (p.width, p.height);
    let mut edges = vec![false; w * h];
    if w < 3 || h < 3 {
        return edges;
    }
    let s = gaussian_blur(p, sigma);
    let mut gx = vec![0.0f32; w * h];
    let mut gy = vec![0.0f32; w * h];
    let mut mag = vec![0.0f32; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let v = |dx: isize, dy: isize| s.get((x as isize + dx) as usize, (y as isize + dy) as usize);
            let sx = (v(1, -1) + 2.0 * v(1, 0) + v(1, 1)) - (v(-1, -1) + 2.0 * v(-1, 0) + v(-1, 1));
            let sy = (v(-1, 1) + 2.0 * v(0, 1) + v(1, 1)) - (v(-1, -1) + 2.0 * v(0, -1) + v(1, -1));
            let i = y * w + x;
            gx[i] = sx;
            gy[i] = sy;
            mag[i] = sx.hypot(sy);
        }
    }
    let peak = mag.iter().cloned().fold(0.0f32, f32::max);
    if peak <= 1e-6 {
        return edges;
    }
    let (lo, hi) = (low * peak, high * peak);
    // non-maximum suppression along the quantized gradient direction
    let mut strong = Vec::new();
    let mut cand = vec![false; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let m = mag[i];
            if m < lo {
                continue;
            }
            let ang = gy[i].atan2(gx[i]).to_degrees().rem_euclid(180.0);
            let (a, b) = if !(22.5..157.5).contains(&ang) {
                (i - 1, i + 1)
            } else if ang < 67.5 {
                (i - w - 1, i + w + 1)
            } else if ang < 112.5 {
                (i - w, i + w)
            } else {
                (i - w + 1, i + w - 1)
            };
            if m >= mag[a] && m >= mag[b] {
                cand[i] = true;
                if m >= hi {
                    strong.push(i);
                }
            }
        }
    }
    // hysteresis: grow strong edges through 8-connected candidates
    for &i in &strong {
        edges[i] = true;
    }
    while let Some(i) = strong.pop() {
        let (x, y) = (i % w, i / w);
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if cand[j] && !edges[j] {
                    edges[j] = true;
                    strong.push(j);
                }
            }
        }
    }
    edges
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSegment {
    pub start: (usize, usize),
    pub end: (usize, usize),
    /// Orientation in degrees in `[0, 180)`, from a least-squares fit of the
    /// segment's edge pixels.
    pub angle_deg: f64,
}

impl LineSegment {
    pub fn length(&self) -> f64 {
        let dx = self.end.0 as f64 - self.start.0 as f64;
        let dy = self.end.1 as f64 - self.start.1 as f64;
        dx.hypot(dy)
    }
}

/// Principal-axis orientation of a pixel set, degrees in `[0, 180)`.
fn fit_angle(pixels: &[(usize, usize)]) -> f64 {
    let n = pixels.len() as f64;
    let mx = pixels.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let my = pixels.iter().map(|p| p.1 as f64).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in pixels {
        let (dx, dy) = (x as f64 - mx, y as f64 - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    (0.5 * (2.0 * sxy).atan2(sxx - syy)).to_degrees().rem_euclid(180.0)
}

/// Progressive probabilistic Hough transform returning finite segments.
pub fn probabilistic_hough(
    edges: &[bool],
    width: usize,
    height: usize,
    params: &LineDeviationParams,
) -> Vec<LineSegment> {
    let n_theta = (180.0 / params.theta_resolution_deg).round().max(1.0) as usize;
    let thetas: Vec<(f64, f64)> = (0..n_theta)
        .map(|k| {
            let t = (k as f64 * 180.0 / n_theta as f64).to_radians();
            (t.cos(), t.sin())
        })
        .collect();
    let offset = ((width * width + height * height) as f64).sqrt().ceil() as isize;
    let n_rho = (2 * offset + 1) as usize;
    let mut acc = vec![0u32; n_rho * n_theta];
    let mut mask = edges.to_vec();
    let mut voted = vec![false; width * height];
    let mut points: Vec<usize> = (0..width * height).filter(|&i| edges[i]).collect();
    points.shuffle(&mut ChaCha8Rng::seed_from_u64(params.seed));
    let rho_of = |x: usize, y: usize, k: usize| -> usize {
        let (c, s) = thetas[k];
        ((x as f64 * c + y as f64 * s).round() as isize + offset) as usize
    };
    let mut segments = Vec::new();
    for &p in &points {
        if !mask[p] {
            continue;
        }
        let (x, y) = (p % width, p / width);
        let mut best = (0u32, 0usize);
        for k in 0..n_theta {
            let cell = &mut acc[rho_of(x, y, k) * n_theta + k];
            *cell += 1;
            if *cell > best.0 {
                best = (*cell, k);
            }
        }
        voted[p] = true;
        if (best.0 as usize) < params.vote_threshold {
            continue;
        }
        // walk along the line direction, perpendicular to the normal
        let (c, s) = thetas[best.1];
        let (dx, dy) = (-s, c);
        let horizontal = dx.abs() > dy.abs();
        let (step_x, step_y) = if horizontal {
            (dx.signum(), dy / dx.abs())
        } else {
            (dx / dy.abs(), dy.signum())
        };
        let walk = |dir: f64, mask: &[bool]| -> (usize, usize) {
            let (mut fx, mut fy) = (x as f64, y as f64);
            let mut end = (x, y);
            let mut gap = 0usize;
            loop {
                fx += dir * step_x;
                fy += dir * step_y;
                let (px, py) = (fx.round(), fy.round());
                if px < 0.0 || py < 0.0 || px >= width as f64 || py >= height as f64 {
                    break;
                }
                let (px, py) = (px as usize, py as usize);
                if mask[py * width + px] {
                    gap = 0;
                    end = (px, py);
                } else {
                    gap += 1;
                    if gap > params.max_line_gap {
                        break;
                    }
                }
            }
            end
        };
        let ends = [walk(1.0, &mask), walk(-1.0, &mask)];
        let len = (ends[0].0 as f64 - ends[1].0 as f64).hypot(ends[0].1 as f64 - ends[1].1 as f64);
        let good = len >= params.min_line_length;
        // clear the walked pixels, withdrawing their votes for accepted lines
        let mut pixels = Vec::new();
        for (dir, end) in [(1.0, ends[0]), (-1.0, ends[1])] {
            let (mut fx, mut fy) = (x as f64, y as f64);
            let mut first = true;
            loop {
                let (px, py) = if first {
                    (x, y)
                } else {
                    fx += dir * step_x;
                    fy += dir * step_y;
                    (fx.round() as usize, fy.round() as usize)
                };
                let at_start = first;
                first = false;
                if !(at_start && dir < 0.0) {
                    let i = py * width + px;
                    if mask[i] {
                        if good {
                            if voted[i] {
                                for k in 0..n_theta {
                                    let cell = &mut acc[rho_of(px, py, k) * n_theta + k];
                                    *cell = cell.saturating_sub(1);
                                }
                            }
                            pixels.push((px, py));
                        }
                        mask[i] = false;
                    }
                }
                if (px, py) == end {
                    break;
                }
            }
        }
        if good && pixels.len() >= 2 {
            segments.push(LineSegment {
                start: ends[1],
                end: ends[0],
                angle_deg: fit_angle(&pixels),
            });
        }
    }
    segments
}

/// Angular distance in degrees from the nearest axis orientation.
pub fn axis_deviation(angle_deg: f64) -> f64 {
    let a = angle_deg.rem_euclid(90.0);
    a.min(90.0 - a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineDeviationEntry {
    /// Mean deviation in degrees, `None` when no usable segment was found.
    pub score: Option<f64>,
    pub line_count: usize,
    pub segments: Vec<LineSegment>,
}

/// Scores one frame; colour input is converted to luma first.
pub fn line_deviation(frame: &Frame, params: &LineDeviationParams) -> LineDeviationEntry {
    let luma = to_luma(frame);
    let p = &luma.planes[0];
    let edges = canny(p, params.canny_sigma, params.canny_low, params.canny_high);
    let segments: Vec<LineSegment> = probabilistic_hough(&edges, p.width, p.height, params)
        .into_iter()
        .filter(|s| axis_deviation(s.angle_deg) <= params.oblique_cutoff_deg)
        .collect();
    let score = if segments.is_empty() {
        None
    } else {
        Some(segments.iter().map(|s| axis_deviation(s.angle_deg)).sum::<f64>() / segments.len() as f64)
    };
    LineDeviationEntry {
        score,
        line_count: segments.len(),
        segments,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingStats {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

/// Trailing-window mean and population standard deviation. Emits one value
/// per full window, or a single value over everything when the input is
/// shorter than the window.
pub fn rolling_stats(values: &[f64], window: usize) -> RollingStats {
    let mut out = RollingStats {
        means: Vec::new(),
        stds: Vec::new(),
    };
    if values.is_empty() || window == 0 {
        return out;
    }
    let w = window.min(values.len());
    for end in w..=values.len() {
        let win = &values[end - w..end];
        let m = win.iter().sum::<f64>() / w as f64;
        let v = win.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / w as f64;
        out.means.push(m);
        out.stds.push(v.sqrt());
    }
    out
}

pub const DEFAULT_ROLLING_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineDeviationReport {
    pub per_frame_score: Vec<Option<f64>>,
    pub line_count: Vec<usize>,
    pub rolling_mean: Vec<f64>,
    pub rolling_std: Vec<f64>,
    /// Mean and population deviation over all defined frames.
    pub mean: f64,
    pub std: f64,
    pub window: usize,
    pub params: LineDeviationParams,
}

pub fn rolling_line_deviation(
    seq: &VideoSequence,
    window: usize,
    params: &LineDeviationParams,
) -> Result<LineDeviationReport> {
    if window == 0 {
        return Err(Error::invalid("rolling window must be >= 1"));
    }
    let entries: Vec<LineDeviationEntry> = seq
        .frames()
        .par_iter()
        .map(|f| line_deviation(f, params))
        .collect();
    report_from_entries(&entries, window, params)
}

pub fn report_from_entries(
    entries: &[LineDeviationEntry],
    window: usize,
    params: &LineDeviationParams,
) -> Result<LineDeviationReport> {
    let defined: Vec<f64> = entries.iter().filter_map(|e| e.score).collect();
    if defined.is_empty() {
        return Err(Error::invalid("no frame produced a usable line segment"));
    }
    let rolling = rolling_stats(&defined, window);
    let all = rolling_stats(&defined, defined.len());
    Ok(LineDeviationReport {
        per_frame_score: entries.iter().map(|e| e.score).collect(),
        line_count: entries.iter().map(|e| e.line_count).collect(),
        rolling_mean: rolling.means,
        rolling_std: rolling.stds,
        mean: all.means[0],
        std: all.stds[0],
        window,
        params: params.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_frame(w: usize, h: usize, c: usize, seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Frame::from_planes((0..c).map(|_| Plane::from_fn(w, h, |_, _| rng.gen::<f32>())).collect()).unwrap()
    }

    #[test]
    fn psnr_trivia() {
        let a = random_frame(8, 8, 3, 1);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let b = Frame::filled(8, 8, 1, 0.3);
        let c = Frame::filled(8, 8, 1, 0.4);
        assert!((psnr(&b, &c, 1.0).unwrap() - 20.0).abs() < 1e-4);
        let v = PsnrValue::from(f64::INFINITY);
        assert_eq!(serde_json::to_string(&v).unwrap(), r#"{"db":null,"identical":true}"#);
        assert!(psnr(&b, &Frame::filled(8, 7, 1, 0.3), 1.0).is_err());
    }

    #[test]
    fn psnr_matches_loop_oracle() {
        let a = random_frame(13, 9, 3, 2);
        let b = random_frame(13, 9, 3, 3);
        let mut s = 0.0f64;
        for c in 0..3 {
            for y in 0..9 {
                for x in 0..13 {
                    let d = a.planes[c].get(x, y) as f64 - b.planes[c].get(x, y) as f64;
                    s += d * d;
                }
            }
        }
        let oracle = 10.0 * (1.0 / (s / (13.0 * 9.0 * 3.0))).log10();
        assert!((psnr(&a, &b, 1.0).unwrap() - oracle).abs() < 1e-6);
        assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
    }

    /// Direct per-window SSIM with an explicit 2D Gaussian window.
    fn ssim_oracle(a: &Plane, b: &Plane) -> f64 {
        let r = 5isize;
        let mut win = vec![vec![0.0f64; 11]; 11];
        let mut tot = 0.0;
        for (j, row) in win.iter_mut().enumerate() {
            for (i, v) in row.iter_mut().enumerate() {
                let (dx, dy) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5)).exp();
                tot += *v;
            }
        }
        let (c1, c2) = (0.0001, 0.0009);
        let mut acc = 0.0;
        let mut n = 0;
        for cy in r..a.height as isize - r {
            for cx in r..a.width as isize - r {
                let (mut ma, mut mb) = (0.0, 0.0);
                for j in -r..=r {
                    for i in -r..=r {
                        let wgt = win[(j + r) as usize][(i + r) as usize] / tot;
                        ma += wgt * a.get((cx + i) as usize, (cy + j) as usize) as f64;
                        mb += wgt * b.get((cx + i) as usize, (cy + j) as usize) as f64;
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for j in -r..=r {
                    for i in -r..=r {
                        let wgt = win[(j + r) as usize][(i + r) as usize] / tot;
                        let da = a.get((cx + i) as usize, (cy + j) as usize) as f64 - ma;
                        let db = b.get((cx + i) as usize, (cy + j) as usize) as f64 - mb;
                        va += wgt * da * da;
                        vb += wgt * db * db;
                        cov += wgt * da * db;
                    }
                }
                acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                n += 1;
            }
        }
        acc / n as f64
    }

    #[test]
    fn ssim_identities() {
        let a = random_frame(24, 20, 3, 4);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let checker = Frame::from_plane(Plane::from_fn(32, 32, |x, y| ((x / 4 + y / 4) % 2) as f32));
        let inv = checker.map_planes(|p| p.map(|v| 1.0 - v));
        assert!(ssim(&checker, &inv).unwrap() < 0.5);
        assert!(ssim(&random_frame(10, 20, 1, 1), &random_frame(10, 20, 1, 2)).is_err());
    }

    #[test]
    fn ssim_agrees_with_direct_formula() {
        for seed in 0..10 {
            let a = random_frame(20, 18, 1, seed);
            let b = a.map_planes(|p| gaussian_blur(p, 1.0));
            let fast = ssim(&a, &b).unwrap();
            let slow = ssim_oracle(&a.planes[0], &b.planes[0]);
            assert!((fast - slow).abs() < 1e-4, "{fast} vs {slow}");
        }
    }

    #[test]
    fn iou_trivia() {
        let a = MotionMask::from_fn(10, 10, |x, _| x < 4);
        let b = MotionMask::from_fn(10, 10, |x, _| x >= 6);
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        assert_eq!(mask_iou(&a, &b).unwrap(), 0.0);
        let c = MotionMask::from_fn(10, 10, |x, _| (2..6).contains(&x));
        assert!((mask_iou(&a, &c).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(mask_iou(&MotionMask::empty(4, 4), &MotionMask::empty(4, 4)).unwrap(), 1.0);
    }

    /// Anti-aliased grid of lines rotated by `deg` about the image centre.
    pub(crate) fn grid(w: usize, h: usize, spacing: f64, deg: f64) -> Frame {
        let (s, c) = deg.to_radians().sin_cos();
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        Frame::from_plane(Plane::from_fn(w, h, |x, y| {
            let (px, py) = (x as f64 - cx, y as f64 - cy);
            let u = c * px + s * py;
            let v = -s * px + c * py;
            let d = |t: f64| {
                let m = t.rem_euclid(spacing);
                m.min(spacing - m)
            };
            let dist = d(u).min(d(v));
            (1.5 - dist).clamp(0.0, 1.0) as f32 * 0.8 + 0.1
        }))
    }

    #[test]
    fn axis_aligned_grid_scores_near_zero() {
        let e = line_deviation(&grid(200, 200, 40.0, 0.0), &LineDeviationParams::default());
        assert!(e.line_count >= 4);
        assert!(e.score.unwrap() <= 0.2, "{:?}", e.score);
    }

    #[test]
    fn rotated_grid_scores_rotation() {
        let e = line_deviation(&grid(200, 200, 40.0, 2.0), &LineDeviationParams::default());
        let s = e.score.unwrap();
        assert!((1.5..=2.5).contains(&s), "score {s}");
    }

    #[test]
    fn blank_frame_is_undefined() {
        let e = line_deviation(&Frame::filled(64, 64, 1, 0.5), &LineDeviationParams::default());
        assert_eq!(e.score, None);
        assert_eq!(e.line_count, 0);
    }

    #[test]
    fn inversion_does_not_change_score() {
        let g = grid(160, 160, 32.0, 3.0);
        let inv = g.map_planes(|p| p.map(|v| 1.0 - v));
        let p = LineDeviationParams::default();
        let a = line_deviation(&g, &p).score.unwrap();
        let b = line_deviation(&inv, &p).score.unwrap();
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }

    #[test]
    fn hough_recovers_constructed_angles() {
        let (w, h) = (200usize, 200usize);
        let angles = [0.0f64, 90.0, 30.0, 135.0, 10.0];
        let centres = [(100.0, 30.0), (170.0, 100.0), (100.0, 100.0), (60.0, 140.0), (100.0, 170.0)];
        let mut edges = vec![false; w * h];
        for (&a, &(cx, cy)) in angles.iter().zip(&centres) {
            let (s, c) = a.to_radians().sin_cos();
            for t in -60..=60 {
                let x = (cx + c * t as f64).round();
                let y = (cy + s * t as f64).round();
                if x >= 0.0 && y >= 0.0 && (x as usize) < w && (y as usize) < h {
                    edges[y as usize * w + x as usize] = true;
                }
            }
        }
        let segs = probabilistic_hough(&edges, w, h, &LineDeviationParams::default());
        for &a in &angles {
            let best = segs
                .iter()
                .map(|s| {
                    let d = (s.angle_deg - a).rem_euclid(180.0);
                    d.min(180.0 - d)
                })
                .fold(f64::INFINITY, f64::min);
            assert!(best <= 1.0, "angle {a}: nearest {best}");
        }
        for s in &segs {
            let ok = angles.iter().any(|&a| {
                let d = (s.angle_deg - a).rem_euclid(180.0);
                d.min(180.0 - d) <= 1.0
            });
            assert!(ok, "spurious segment {s:?}");
        }
    }

    #[test]
    fn rolling_trivia() {
        let r = rolling_stats(&[1.0, 2.0, 3.0], 3);
        assert_eq!(r.means, vec![2.0]);
        assert!((r.stds[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let c = rolling_stats(&[0.7; 12], 5);
        assert!(c.means.iter().all(|&m| (m - 0.7).abs() < 1e-12));
        assert!(c.stds.iter().all(|&s| s < 1e-12));
        assert_eq!(c.means.len(), 8);
    }

    #[test]
    fn all_undefined_frames_are_an_error() {
        let seq = VideoSequence::new(vec![Frame::filled(40, 40, 1, 0.2); 3]).unwrap();
        assert!(rolling_line_deviation(&seq, 2, &LineDeviationParams::default()).is_err());
        assert!(rolling_line_deviation(&seq, 0, &LineDeviationParams::default()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn ssim_is_symmetric(seed in 0u64..1000) {
            let a = random_frame(16, 16, 1, seed);
            let b = random_frame(16, 16, 1, seed + 1);
            prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-7);
        }

        #[test]
        fn iou_is_symmetric_and_bounded(bits_a in proptest::collection::vec(any::<bool>(), 36), bits_b in proptest::collection::vec(any::<bool>(), 36)) {
            let a = MotionMask::from_labels(6, 6, bits_a);
            let b = MotionMask::from_labels(6, 6, bits_b);
            let i = mask_iou(&a, &b).unwrap();
            prop_assert_eq!(i, mask_iou(&b, &a).unwrap());
            let (na, nb) = (a.count() as f64, b.count() as f64);
            if na.max(nb) > 0.0 {
                prop_assert!(i <= na.min(nb) / na.max(nb) + 1e-12);
            }
        }
    }
}
