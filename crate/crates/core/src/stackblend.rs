//! Gaussian-weighted temporal stacking of the static background and
//! compositing of the moving foreground back onto it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgproc::{dilate, gaussian_blur, resize_bilinear};
use crate::segment::MotionMask;
use crate::turbstats::span_for_sigma;
use crate::videocore::{Frame, Plane, VideoSequence};

#[derive(Debug, Clone, PartialEq)]
pub struct StackedBackground {
    pub frame: Frame,
    pub window_sigma: f64,
    pub window_span: usize,
    pub center_index: usize,
}

/// Unnormalized temporal weights for offsets `-r..=r`.
pub fn temporal_weights(sigma: f64, span: usize) -> Vec<f64> {
    let r = (span / 2) as isize;
    let s2 = 2.0 * sigma * sigma;
    (-r..=r).map(|k| (-((k * k) as f64) / s2).exp()).collect()
}

/// Weighted temporal mean around `center`. Pixels flagged in `masks[k]` do not
/// contribute from frame `k`; when nothing contributes, the centre frame value
/// is kept.
pub fn gaussian_stack(
    seq: &VideoSequence,
    center: usize,
    sigma: f64,
    masks: Option<&[MotionMask]>,
) -> Result<StackedBackground> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("stacking sigma must be positive"));
    }
    let center_frame = seq.frame(center)?;
    if let Some(m) = masks {
        if m.len() != seq.len() {
            return Err(Error::LengthMismatch {
                expected: seq.len(),
                found: m.len(),
            });
        }
        if let Some(bad) = m
            .iter()
            .find(|m| (m.width, m.height) != (seq.width(), seq.height()))
        {
            return Err(Error::DimensionMismatch {
                expected: (seq.width(), seq.height(), 1),
                found: (bad.width, bad.height, 1),
                context: "stacking mask".into(),
            });
        }
    }
    let span = span_for_sigma(sigma);
    let r = span / 2;
    let lo = center.saturating_sub(r);
    let hi = (center + r).min(seq.len() - 1);
    let weights = temporal_weights(sigma, span);
    let taps: Vec<(usize, f64)> = (lo..=hi)
        .map(|k| (k, weights[k + r - center]))
        .filter(|&(_, w)| w > 0.0)
        .collect();
    let (w, h) = (seq.width(), seq.height());
    let planes = (0..seq.channels())
        .map(|c| {
            let mut data = vec![0.0f32; w * h];
            data.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
                let mut acc = vec![0.0f64; w];
                let mut wsum = vec![0.0f64; w];
                for &(k, wk) in &taps {
                    let src = &seq.frames()[k].planes[c].data[y * w..(y + 1) * w];
                    let excl = masks.map(|m| &m[k].labels[y * w..(y + 1) * w]);
                    for x in 0..w {
                        if excl.is_some_and(|e| e[x]) {
                            continue;
                        }
                        acc[x] += wk * src[x] as f64;
                        wsum[x] += wk;
                    }
                }
                let fallback = &center_frame.planes[c].data[y * w..(y + 1) * w];
                for x in 0..w {
                    row[x] = if wsum[x] > 0.0 {
                        (acc[x] / wsum[x]) as f32
                    } else {
                        fallback[x]
                    };
                }
            });
            Plane {
                width: w,
                height: h,
                data,
            }
        })
        .collect();
    Ok(StackedBackground {
        frame: Frame::from_planes(planes)?.with_index(center),
        window_sigma: sigma,
        window_span: span,
        center_index: center,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlendMode {
    #[default]
    Poisson,
    Pyramid,
}

impl std::str::FromStr for BlendMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poisson" => Ok(Self::Poisson),
            "pyramid" => Ok(Self::Pyramid),
            other => Err(Error::invalid(format!("unknown blend mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlendParams {
    pub mode: BlendMode,
    pub dilation: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub pyramid_levels: usize,
}

impl Default for BlendParams {
    fn default() -> Self {
        Self {
            mode: BlendMode::Poisson,
            dilation: 5,
            tolerance: 1e-6,
            max_iterations: 10_000,
            pyramid_levels: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonStats {
    pub iterations: usize,
    /// Largest per-pixel residual of the discrete system, divided by the
    /// neighbour count.
    pub residual: f64,
    pub converged: bool,
}

/// Solves the discrete Poisson equation on `region` with the Laplacian of
/// `guide` as source and `boundary` as Dirichlet values outside the region.
/// The image border acts as a Neumann boundary.
pub fn solve_poisson(
    boundary: &Plane,
    guide: &Plane,
    region: &[bool],
    tolerance: f64,
    max_iterations: usize,
) -> (Plane, PoissonStats) {
    let (w, h) = (boundary.width, boundary.height);
    let mut out: Vec<f64> = boundary.data.iter().map(|&v| v as f64).collect();
    let idx: Vec<usize> = (0..w * h).filter(|&i| region[i]).collect();
    if idx.is_empty() {
        return (
            boundary.clone(),
            PoissonStats {
                iterations: 0,
                residual: 0.0,
                converged: true,
            },
        );
    }
    // per unknown: neighbour count, constant term and neighbour slots
    struct Node {
        i: usize,
        count: f64,
        rhs: f64,
        nbrs: [usize; 4],
        n_inner: usize,
    }
    let g = |i: usize| guide.data[i] as f64;
    let mut x0 = w;
    let mut x1 = 0;
    let mut y0 = h;
    let mut y1 = 0;
    let nodes: Vec<Node> = idx
        .iter()
        .map(|&i| {
            let (x, y) = (i % w, i / w);
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
            let mut nb = [0usize; 4];
            let mut n_inner = 0;
            let mut count = 0.0;
            let mut rhs = 0.0;
            let cand = [
                (x > 0).then(|| i - 1),
                (x + 1 < w).then(|| i + 1),
                (y > 0).then(|| i - w),
                (y + 1 < h).then(|| i + w),
            ];
            for q in cand.into_iter().flatten() {
                count += 1.0;
                rhs += g(i) - g(q);
                if region[q] {
                    nb[n_inner] = q;
                    n_inner += 1;
                } else {
                    rhs += boundary.data[q] as f64;
                }
            }
            Node {
                i,
                count,
                rhs,
                nbrs: nb,
                n_inner,
            }
        })
        .collect();
    // warm start from the guide, shifted to match the boundary on average
    for n in &nodes {
        out[n.i] = g(n.i);
    }
    let mut diff = 0.0;
    let mut cnt = 0usize;
    for n in &nodes {
        let (x, y) = (n.i % w, n.i / w);
        let cand = [
            (x > 0).then(|| n.i - 1),
            (x + 1 < w).then(|| n.i + 1),
            (y > 0).then(|| n.i - w),
            (y + 1 < h).then(|| n.i + w),
        ];
        for q in cand.into_iter().flatten() {
            if !region[q] {
                diff += boundary.data[q] as f64 - g(q);
                cnt += 1;
            }
        }
    }
    if cnt > 0 {
        let shift = diff / cnt as f64;
        for n in &nodes {
            out[n.i] += shift;
        }
    }
    let extent = (x1 - x0 + 1).max(y1 - y0 + 1) as f64;
    let omega = 2.0 / (1.0 + (std::f64::consts::PI / (extent + 1.0)).sin());
    let residual_of = |out: &[f64]| {
        nodes
            .iter()
            .map(|n| {
                let s: f64 = n.nbrs[..n.n_inner].iter().map(|&q| out[q]).sum();
                ((n.rhs + s) / n.count - out[n.i]).abs()
            })
            .fold(0.0f64, f64::max)
    };
    let mut residual = residual_of(&out);
    let mut iterations = 0;
    while residual > tolerance && iterations < max_iterations {
        for n in &nodes {
            let s: f64 = n.nbrs[..n.n_inner].iter().map(|&q| out[q]).sum();
            let gs = (n.rhs + s) / n.count;
            out[n.i] += omega * (gs - out[n.i]);
        }
        iterations += 1;
        if iterations % 4 == 0 || iterations == max_iterations {
            residual = residual_of(&out);
        }
    }
    let plane = Plane {
        width: w,
        height: h,
        data: (0..w * h)
            .map(|i| if region[i] { out[i] as f32 } else { boundary.data[i] })
            .collect(),
    };
    (
        plane,
        PoissonStats {
            iterations,
            residual,
            converged: residual <= tolerance,
        },
    )
}

fn check_shapes(background: &Frame, foreground: &Frame, mask: &MotionMask) -> Result<()> {
    if background.shape() != foreground.shape() {
        return Err(Error::DimensionMismatch {
            expected: background.shape(),
            found: foreground.shape(),
            context: "foreground frame".into(),
        });
    }
    if (mask.width, mask.height) != (background.width, background.height) {
        return Err(Error::DimensionMismatch {
            expected: (background.width, background.height, 1),
            found: (mask.width, mask.height, 1),
            context: "blend mask".into(),
        });
    }
    Ok(())
}

/// Composites the masked part of `foreground` onto `background`.
pub fn blend_foreground(
    background: &Frame,
    foreground: &Frame,
    mask: &MotionMask,
    params: &BlendParams,
) -> Result<Frame> {
    check_shapes(background, foreground, mask)?;
    if mask.is_empty() {
        return Ok(background.clone());
    }
    let (w, h) = (background.width, background.height);
    let region = dilate(&mask.labels, w, h, params.dilation);
    if region.iter().all(|&b| b) {
        return Ok(foreground.clone());
    }
    let planes: Vec<Plane> = match params.mode {
        BlendMode::Poisson => background
            .planes
            .par_iter()
            .zip(&foreground.planes)
            .map(|(b, f)| solve_poisson(b, f, &region, params.tolerance, params.max_iterations).0)
            .collect(),
        BlendMode::Pyramid => {
            let levels = params.pyramid_levels.max(1).min(pyramid_depth_for(&region, w, h));
            let soft = Plane {
                width: w,
                height: h,
                data: region.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            };
            let reach = (1usize << levels.min(16)) * 2;
            let influence = dilate(&region, w, h, reach);
            background
                .planes
                .par_iter()
                .zip(&foreground.planes)
                .map(|(b, f)| {
                    let mut p = pyramid_blend(b, f, &soft, levels);
                    for (i, v) in p.data.iter_mut().enumerate() {
                        if !influence[i] {
                            *v = b.data[i];
                        }
                    }
                    p
                })
                .collect()
        }
    };
    Ok(Frame::from_planes(planes)?.with_index(foreground.index))
}

/// Deepest level count whose coarsest scale still resolves the region's
/// bounding box with at least four samples.
fn pyramid_depth_for(region: &[bool], w: usize, h: usize) -> usize {
    let (mut x0, mut x1, mut y0, mut y1) = (w, 0, h, 0);
    for (i, _) in region.iter().enumerate().filter(|(_, &b)| b) {
        let (x, y) = (i % w, i / w);
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let extent = (x1.saturating_sub(x0) + 1).min(y1.saturating_sub(y0) + 1).max(1);
    let mut levels = 1;
    while (1usize << levels) * 4 <= extent {
        levels += 1;
    }
    levels
}

fn half(p: &Plane) -> Plane {
    let w = p.width.div_ceil(2).max(1);
    let h = p.height.div_ceil(2).max(1);
    resize_bilinear(&gaussian_blur(p, 1.0), w, h)
}

fn gaussian_pyramid(p: &Plane, levels: usize) -> Vec<Plane> {
    let mut out = vec![p.clone()];
    while out.len() < levels {
        let last = out.last().unwrap();
        if last.width < 2 || last.height < 2 {
            break;
        }
        out.push(half(last));
    }
    out
}

fn laplacian_pyramid(p: &Plane, levels: usize) -> Vec<Plane> {
    let g = gaussian_pyramid(p, levels);
    let mut out = Vec::with_capacity(g.len());
    for i in 0..g.len() {
        if i + 1 < g.len() {
            let up = resize_bilinear(&g[i + 1], g[i].width, g[i].height);
            out.push(Plane {
                width: g[i].width,
                height: g[i].height,
                data: g[i].data.iter().zip(&up.data).map(|(a, b)| a - b).collect(),
            });
        } else {
            out.push(g[i].clone());
        }
    }
    out
}

/// Laplacian pyramid blend with weights from the Gaussian pyramid of `alpha`.
pub fn pyramid_blend(background: &Plane, foreground: &Plane, alpha: &Plane, levels: usize) -> Plane {
    let lb = laplacian_pyramid(background, levels);
    let lf = laplacian_pyramid(foreground, levels);
    let ga = gaussian_pyramid(alpha, lb.len());
    let mixed: Vec<Plane> = lb
        .iter()
        .zip(&lf)
        .zip(&ga)
        .map(|((b, f), a)| Plane {
            width: b.width,
            height: b.height,
            data: b
                .data
                .iter()
                .zip(&f.data)
                .zip(&a.data)
                .map(|((&b, &f), &a)| a * f + (1.0 - a) * b)
                .collect(),
        })
        .collect();
    let mut acc = mixed.last().unwrap().clone();
    for lvl in mixed.iter().rev().skip(1) {
        let up = resize_bilinear(&acc, lvl.width, lvl.height);
        acc = Plane {
            width: lvl.width,
            height: lvl.height,
            data: lvl.data.iter().zip(&up.data).map(|(a, b)| a + b).collect(),
        };
    }
    acc
}
