//! Dense optical flow.
//!
//! The built-in estimator is a coarse-to-fine Horn–Schunck solver with
//! incremental warping. Anything implementing [`FlowEstimator`] can replace
//! it, including [`PrecomputedFlow`], which reads externally produced fields
//! from raw containers.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imgproc::{downscale, gaussian_blur, resize_bilinear};
use crate::videocore::{read_raw, to_luma, write_raw, Frame, Plane, VideoSequence};

/// Per-pixel displacement mapping pixels of the source frame toward the target:
/// `target(x + u, y + v) ≈ source(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Plane,
    pub v: Plane,
    pub source_index: usize,
    pub target_index: usize,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            u: Plane::zeros(width, height),
            v: Plane::zeros(width, height),
            source_index: 0,
            target_index: 0,
        }
    }

    pub fn magnitude(&self) -> Plane {
        flow_magnitude(self)
    }
}

/// Euclidean magnitude `sqrt(u² + v²)` per pixel.
pub fn flow_magnitude(f: &FlowField) -> Plane {
    Plane {
        width: f.width,
        height: f.height,
        data: f
            .u
            .data
            .iter()
            .zip(&f.v.data)
            .map(|(&u, &v)| (u * u + v * v).sqrt())
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowParams {
    pub levels: usize,
    pub scale: f32,
    /// Solver sweeps per warp at each pyramid level.
    pub iterations: usize,
    /// Smoothness weight, in 8-bit intensity units.
    pub smoothness: f32,
    pub warps: usize,
    /// Pre-smoothing applied to both frames before building pyramids.
    pub presmooth_sigma: f32,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            levels: 4,
            scale: 0.5,
            iterations: 50,
            smoothness: 15.0,
            warps: 3,
            presmooth_sigma: 1.0,
        }
    }
}

impl FlowParams {
    /// Stable digest of the parameters, used as part of cache keys.
    pub fn digest(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(b"horn-schunck/v1");
        h.update((self.levels as u64).to_le_bytes());
        h.update(self.scale.to_le_bytes());
        h.update((self.iterations as u64).to_le_bytes());
        h.update(self.smoothness.to_le_bytes());
        h.update((self.warps as u64).to_le_bytes());
        h.update(self.presmooth_sigma.to_le_bytes());
        u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
    }

    fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.warps == 0 {
            return Err(Error::invalid("flow levels and warps must be >= 1"));
        }
        if !(self.scale > 0.0 && self.scale < 1.0) {
            return Err(Error::invalid("flow pyramid scale must be in (0, 1)"));
        }
        if self.smoothness <= 0.0 {
            return Err(Error::invalid("flow smoothness must be positive"));
        }
        Ok(())
    }
}

/// Source of flow fields between frames of a sequence.
pub trait FlowEstimator: Send + Sync {
    fn flow(&self, seq: &VideoSequence, source: usize, target: usize) -> Result<FlowField>;

    /// Identifies the estimator and its configuration for caching.
    fn fingerprint(&self) -> u64;
}

#[derive(Debug, Clone, Default)]
pub struct HornSchunck {
    pub params: FlowParams,
}

impl HornSchunck {
    pub fn new(params: FlowParams) -> Self {
        Self { params }
    }
}

impl FlowEstimator for HornSchunck {
    fn flow(&self, seq: &VideoSequence, source: usize, target: usize) -> Result<FlowField> {
        let mut f = compute_flow(seq.frame(source)?, seq.frame(target)?, &self.params)?;
        f.source_index = source;
        f.target_index = target;
        Ok(f)
    }

    fn fingerprint(&self) -> u64 {
        self.params.digest()
    }
}

/// Reads fields produced elsewhere from `flow_{source:06}_{target:06}.raw`.
#[derive(Debug, Clone)]
pub struct PrecomputedFlow {
    pub dir: PathBuf,
}

impl PrecomputedFlow {
    pub fn path_for(dir: &Path, source: usize, target: usize) -> PathBuf {
        dir.join(format!("flow_{source:06}_{target:06}.raw"))
    }
}

impl FlowEstimator for PrecomputedFlow {
    fn flow(&self, seq: &VideoSequence, source: usize, target: usize) -> Result<FlowField> {
        let f = read_flow(Self::path_for(&self.dir, source, target), source, target)?;
        if (f.width, f.height) != (seq.width(), seq.height()) {
            return Err(Error::DimensionMismatch {
                expected: (seq.width(), seq.height(), 2),
                found: (f.width, f.height, 2),
                context: "precomputed flow".into(),
            });
        }
        Ok(f)
    }

    fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(b"precomputed/");
        h.update(self.dir.to_string_lossy().as_bytes());
        u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
    }
}

/// Writes `(u, v)` as a two-channel, single-frame raw container.
pub fn write_flow(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    let frame = Frame::from_planes(vec![flow.u.clone(), flow.v.clone()])?;
    write_raw(path, &[frame])
}

pub fn read_flow(path: impl AsRef<Path>, source: usize, target: usize) -> Result<FlowField> {
    let path = path.as_ref();
    let frames = read_raw(path)?;
    match frames.as_slice() {
        [f] if f.channels() == 2 => Ok(FlowField {
            width: f.width,
            height: f.height,
            u: f.planes[0].clone(),
            v: f.planes[1].clone(),
            source_index: source,
            target_index: target,
        }),
        _ => Err(Error::RawFormat(format!(
            "{}: flow file must hold one two-channel frame",
            path.display()
        ))),
    }
}

/// Coarse-to-fine Horn–Schunck flow from `a` to `b`.
pub fn compute_flow(a: &Frame, b: &Frame, params: &FlowParams) -> Result<FlowField> {
    params.validate()?;
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::DimensionMismatch {
            expected: a.shape(),
            found: b.shape(),
            context: "flow frame pair".into(),
        });
    }
    let la = to_luma(a).planes.swap_remove(0).map(|v| v * 255.0);
    let lb = to_luma(b).planes.swap_remove(0).map(|v| v * 255.0);
    let (u, v) = horn_schunck_pyramid(&la, &lb, params);
    Ok(FlowField {
        width: a.width,
        height: a.height,
        u,
        v,
        source_index: a.index,
        target_index: b.index,
    })
}

const MIN_LEVEL_SIDE: usize = 8;

fn horn_schunck_pyramid(a: &Plane, b: &Plane, p: &FlowParams) -> (Plane, Plane) {
    let mut pa = vec![gaussian_blur(a, p.presmooth_sigma)];
    let mut pb = vec![gaussian_blur(b, p.presmooth_sigma)];
    while pa.len() < p.levels {
        let last = pa.last().unwrap();
        let nw = (last.width as f32 * p.scale).round() as usize;
        let nh = (last.height as f32 * p.scale).round() as usize;
        if nw < MIN_LEVEL_SIDE || nh < MIN_LEVEL_SIDE {
            break;
        }
        let next_a = downscale(last, p.scale);
        let next_b = downscale(pb.last().unwrap(), p.scale);
        pa.push(next_a);
        pb.push(next_b);
    }

    let coarsest = pa.last().unwrap();
    let mut u = Plane::zeros(coarsest.width, coarsest.height);
    let mut v = Plane::zeros(coarsest.width, coarsest.height);
    for level in (0..pa.len()).rev() {
        let (la, lb) = (&pa[level], &pb[level]);
        if u.width != la.width || u.height != la.height {
            let sx = la.width as f32 / u.width as f32;
            let sy = la.height as f32 / u.height as f32;
            u = resize_bilinear(&u, la.width, la.height).map(|x| x * sx);
            v = resize_bilinear(&v, la.width, la.height).map(|x| x * sy);
        }
        for _ in 0..p.warps {
            refine(la, lb, &mut u, &mut v, p);
        }
    }
    (u, v)
}

fn gradients(p: &Plane) -> (Vec<f32>, Vec<f32>) {
    let (w, h) = (p.width, p.height);
    let mut gx = vec![0.0f32; w * h];
    let mut gy = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            gx[y * w + x] = 0.5 * (p.get_clamped(xi + 1, yi) - p.get_clamped(xi - 1, yi));
            gy[y * w + x] = 0.5 * (p.get_clamped(xi, yi + 1) - p.get_clamped(xi, yi - 1));
        }
    }
    (gx, gy)
}

/// One warping step: linearize around the current flow and run Jacobi sweeps.
fn refine(a: &Plane, b: &Plane, u: &mut Plane, v: &mut Plane, p: &FlowParams) {
    let (w, h) = (a.width, a.height);
    let warped = Plane {
        width: w,
        height: h,
        data: (0..w * h)
            .into_par_iter()
            .map(|i| {
                let (x, y) = ((i % w) as f32, (i / w) as f32);
                b.sample_bilinear(x + u.data[i], y + v.data[i])
            })
            .collect(),
    };
    let (ax, ay) = gradients(a);
    let (bx, by) = gradients(&warped);
    let ix: Vec<f32> = ax.iter().zip(&bx).map(|(p, q)| 0.5 * (p + q)).collect();
    let iy: Vec<f32> = ay.iter().zip(&by).map(|(p, q)| 0.5 * (p + q)).collect();
    let it: Vec<f32> = warped.data.iter().zip(&a.data).map(|(p, q)| p - q).collect();
    let alpha2 = p.smoothness * p.smoothness;
    let denom: Vec<f32> = ix
        .iter()
        .zip(&iy)
        .map(|(gx, gy)| alpha2 + gx * gx + gy * gy)
        .collect();
    let u0 = u.data.clone();
    let v0 = v.data.clone();
    let mut nu = vec![0.0f32; w * h];
    let mut nv = vec![0.0f32; w * h];
    for _ in 0..p.iterations {
        nu.par_chunks_mut(w)
            .zip(nv.par_chunks_mut(w))
            .enumerate()
            .for_each(|(y, (ru, rv))| {
                for x in 0..w {
                    let i = y * w + x;
                    let ub = neighbor_mean(&u.data, w, h, x, y);
                    let vb = neighbor_mean(&v.data, w, h, x, y);
                    let t = (ix[i] * (ub - u0[i]) + iy[i] * (vb - v0[i]) + it[i]) / denom[i];
                    ru[x] = ub - ix[i] * t;
                    rv[x] = vb - iy[i] * t;
                }
            });
        std::mem::swap(&mut u.data, &mut nu);
        std::mem::swap(&mut v.data, &mut nv);
    }
}

/// Horn–Schunck Laplacian average: 1/6 edge neighbours, 1/12 diagonals.
#[inline]
fn neighbor_mean(d: &[f32], w: usize, h: usize, x: usize, y: usize) -> f32 {
    let xm = x.saturating_sub(1);
    let xp = (x + 1).min(w - 1);
    let ym = y.saturating_sub(1);
    let yp = (y + 1).min(h - 1);
    let at = |xx: usize, yy: usize| d[yy * w + xx];
    (at(xm, y) + at(xp, y) + at(x, ym) + at(x, yp)) / 6.0
        + (at(xm, ym) + at(xp, ym) + at(xm, yp) + at(xp, yp)) / 12.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn texture(w: usize, h: usize, seed: u64) -> Plane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Plane::from_fn(w, h, |_, _| rng.gen::<f32>());
        let s = gaussian_blur(&noise, 2.0);
        let (lo, hi) = s.min_max();
        s.map(|v| (v - lo) / (hi - lo))
    }

    fn shifted(p: &Plane, dx: i32, dy: i32) -> Plane {
        Plane::from_fn(p.width, p.height, |x, y| {
            p.get_clamped(x as isize - dx as isize, y as isize - dy as isize)
        })
    }

    fn median(mut v: Vec<f32>) -> f32 {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    }

    fn interior(p: &Plane, m: usize) -> Vec<f32> {
        let mut out = Vec::new();
        for y in m..p.height - m {
            for x in m..p.width - m {
                out.push(p.get(x, y));
            }
        }
        out
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let a = Frame::from_plane(texture(64, 48, 1));
        let f = compute_flow(&a, &a, &FlowParams::default()).unwrap();
        assert!(f.magnitude().data.iter().all(|&m| m <= 0.05));
    }

    #[test]
    fn recovers_horizontal_translation() {
        let t = texture(96, 80, 2);
        let a = Frame::from_plane(t.clone());
        let b = Frame::from_plane(shifted(&t, 3, 0));
        let f = compute_flow(&a, &b, &FlowParams::default()).unwrap();
        let mu = median(interior(&f.u, 10));
        let mv = median(interior(&f.v, 10));
        assert!((mu - 3.0).abs() < 0.5, "median u = {mu}");
        assert!(mv.abs() < 0.5, "median v = {mv}");
    }

    #[test]
    fn approximately_antisymmetric() {
        let t = texture(96, 80, 3);
        let a = Frame::from_plane(t.clone());
        let b = Frame::from_plane(shifted(&t, -2, 2));
        let p = FlowParams::default();
        let ab = compute_flow(&a, &b, &p).unwrap();
        let ba = compute_flow(&b, &a, &p).unwrap();
        let d_u = median(interior(&ab.u, 10)) + median(interior(&ba.u, 10));
        let d_v = median(interior(&ab.v, 10)) + median(interior(&ba.v, 10));
        assert!(d_u.abs() < 0.5 && d_v.abs() < 0.5, "{d_u} {d_v}");
    }

    #[test]
    fn moving_block_stands_out() {
        let (w, h) = (96, 96);
        let bg = texture(w, h, 4);
        let block = texture(w, h, 5);
        let inside = |x: usize, y: usize, ox: usize| (ox..ox + 24).contains(&x) && (ox..ox + 24).contains(&y);
        let a = Plane::from_fn(w, h, |x, y| if inside(x, y, 30) { block.get(x, y) } else { bg.get(x, y) });
        let b = Plane::from_fn(w, h, |x, y| {
            if inside(x, y, 35) {
                block.get(x - 5, y - 5)
            } else {
                bg.get(x, y)
            }
        });
        let f = compute_flow(&Frame::from_plane(a), &Frame::from_plane(b), &FlowParams::default()).unwrap();
        let mag = f.magnitude();
        let (mut si, mut ni, mut so, mut no) = (0.0, 0, 0.0, 0);
        for y in 0..h {
            for x in 0..w {
                if inside(x, y, 30) {
                    si += mag.get(x, y);
                    ni += 1;
                } else {
                    so += mag.get(x, y);
                    no += 1;
                }
            }
        }
        let (mi, mo) = (si / ni as f32, so / no as f32);
        assert!(mi >= 4.0 * mo, "inside {mi} outside {mo}");
    }

    #[test]
    fn magnitude_examples() {
        let mut f = FlowField::zeros(4, 3);
        assert!(f.magnitude().data.iter().all(|&m| m == 0.0));
        f.u = Plane::filled(4, 3, 3.0);
        f.v = Plane::filled(4, 3, 4.0);
        assert!(f.magnitude().data.iter().all(|&m| m == 5.0));
    }

    #[test]
    fn mismatched_frames_are_rejected() {
        let a = Frame::filled(8, 8, 1, 0.0);
        let b = Frame::filled(9, 8, 1, 0.0);
        assert!(matches!(
            compute_flow(&a, &b, &FlowParams::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn flow_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut f = FlowField::zeros(5, 4);
        f.u = Plane::from_fn(5, 4, |x, y| x as f32 - y as f32 * 0.5);
        f.v = Plane::from_fn(5, 4, |x, _| -(x as f32));
        let p = PrecomputedFlow::path_for(dir.path(), 0, 1);
        write_flow(&p, &f).unwrap();
        let seq = VideoSequence::new(vec![Frame::filled(5, 4, 1, 0.0), Frame::filled(5, 4, 1, 0.0)]).unwrap();
        let est = PrecomputedFlow { dir: dir.path().to_path_buf() };
        let back = est.flow(&seq, 0, 1).unwrap();
        assert_eq!(back.u, f.u);
        assert_eq!(back.v, f.v);
    }

    #[test]
    fn digest_changes_with_params() {
        let a = FlowParams::default();
        let b = FlowParams { iterations: 51, ..a.clone() };
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest(), FlowParams::default().digest());
    }

    proptest::proptest! {
        #[test]
        fn magnitude_matches_sqrt_and_ignores_sign(vals in proptest::collection::vec(-10.0f32..10.0, 24)) {
            let mut f = FlowField::zeros(3, 4);
            f.u = Plane::new(3, 4, vals[..12].to_vec()).unwrap();
            f.v = Plane::new(3, 4, vals[12..].to_vec()).unwrap();
            let m = flow_magnitude(&f);
            for i in 0..12 {
                let expect = ((vals[i] as f64).powi(2) + (vals[12 + i] as f64).powi(2)).sqrt();
                proptest::prop_assert!((m.data[i] as f64 - expect).abs() < 1e-5);
            }
            let neg = FlowField { u: f.u.map(|x| -x), v: f.v.map(|x| -x), ..f.clone() };
            proptest::prop_assert_eq!(flow_magnitude(&neg), m);
        }
    }
}
