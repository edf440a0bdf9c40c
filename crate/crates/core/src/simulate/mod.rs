//! Procedural turbulence simulator: coherent tilt from fractal simplex noise
//! and spatially varying blur driven by Perlin noise and tilt magnitude.

mod dataset;
pub mod noise;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgproc::gaussian_blur;
use crate::videocore::{Frame, Plane, VideoSequence};

pub use dataset::{generate_dataset, ClipEntry, ClipError, DatasetSpec, Manifest};
pub use noise::{Noise3, Perlin3, Simplex3};

pub const MIN_TILT_FREQUENCY: f64 = 0.015;
pub const MAX_TILT_FREQUENCY: f64 = 0.06;

/// Scalar field over `(x, y, t)`, stored frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseVolume {
    pub width: usize,
    pub height: usize,
    pub depth: usize,
    pub values: Vec<f32>,
    pub octaves: usize,
    pub base_frequency: f64,
    /// Per-octave amplitude `A_i`; octave `i` is weighted by `2^i * A_i`.
    pub amplitudes: Vec<f64>,
}

impl NoiseVolume {
    pub fn zeros(width: usize, height: usize, depth: usize) -> Self {
        Self {
            width,
            height,
            depth,
            values: vec![0.0; width * height * depth],
            octaves: 0,
            base_frequency: 0.0,
            amplitudes: Vec::new(),
        }
    }

    pub fn get(&self, x: usize, y: usize, t: usize) -> f32 {
        self.values[(t * self.height + y) * self.width + x]
    }

    pub fn slice(&self, t: usize) -> Plane {
        let n = self.width * self.height;
        Plane {
            width: self.width,
            height: self.height,
            data: self.values[t * n..(t + 1) * n].to_vec(),
        }
    }

    pub fn slice_ref(&self, t: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.values[t * n..(t + 1) * n]
    }

    pub fn max_abs(&self) -> f32 {
        self.values.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    /// Rescales so that `max |v| == target`; a zero target or an all-zero
    /// volume yields zeros.
    pub fn normalize_to(&mut self, target: f64) {
        let m = self.max_abs() as f64;
        if target <= 0.0 || m == 0.0 {
            self.values.fill(0.0);
            return;
        }
        let k = target / m;
        for v in &mut self.values {
            *v = (*v as f64 * k) as f32;
        }
    }

    pub fn to_frames(&self) -> Vec<Frame> {
        (0..self.depth)
            .map(|t| Frame::from_plane(self.slice(t)).with_index(t))
            .collect()
    }

    pub fn from_frames(frames: &[Frame]) -> Result<Self> {
        let first = frames.first().ok_or(Error::EmptySequence)?;
        let mut values = Vec::with_capacity(first.width * first.height * frames.len());
        for f in frames {
            if f.shape() != (first.width, first.height, 1) {
                return Err(Error::invalid("noise volume frames must be single-channel and equal size"));
            }
            values.extend_from_slice(&f.planes[0].data);
        }
        Ok(Self {
            width: first.width,
            height: first.height,
            depth: frames.len(),
            values,
            octaves: 0,
            base_frequency: 0.0,
            amplitudes: Vec::new(),
        })
    }
}

/// Samples `scale * noise(f x, f y, f_t t)` over a volume.
pub fn single_octave_volume(
    noise: &dyn Noise3,
    dims: (usize, usize, usize),
    frequency: f64,
    temporal_frequency: f64,
    scale: f64,
) -> NoiseVolume {
    let (w, h, d) = dims;
    let mut values = vec![0.0f32; w * h * d];
    if w * h > 0 {
        values
            .par_chunks_mut(w * h)
            .enumerate()
            .for_each(|(t, slice)| {
                let zt = t as f64 * temporal_frequency;
                for (i, v) in slice.iter_mut().enumerate() {
                    let (x, y) = ((i % w) as f64, (i / w) as f64);
                    *v = (scale * noise.sample(x * frequency, y * frequency, zt)) as f32;
                }
            });
    }
    NoiseVolume {
        width: w,
        height: h,
        depth: d,
        values,
        octaves: 1,
        base_frequency: frequency,
        amplitudes: vec![scale],
    }
}

/// Fractal sum `sum_i 2^i A_i noise(f_i x, f_i y, f_i c t)` with
/// `f_i = base * 2^i` and `c = temporal_scale`.
pub fn fractal_volume(
    noise: &dyn Noise3,
    dims: (usize, usize, usize),
    base_frequency: f64,
    amplitudes: &[f64],
    temporal_scale: f64,
) -> NoiseVolume {
    let (w, h, d) = dims;
    let octaves: Vec<(f64, f64)> = amplitudes
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let p = (1u64 << i) as f64;
            (base_frequency * p, p * a)
        })
        .filter(|&(_, k)| k != 0.0)
        .collect();
    let mut values = vec![0.0f32; w * h * d];
    if w * h > 0 {
        values
            .par_chunks_mut(w * h)
            .enumerate()
            .for_each(|(t, slice)| {
                for (i, v) in slice.iter_mut().enumerate() {
                    let (x, y) = ((i % w) as f64, (i / w) as f64);
                    let mut acc = 0.0f64;
                    for &(f, k) in &octaves {
                        acc += k * noise.sample(x * f, y * f, t as f64 * f * temporal_scale);
                    }
                    *v = acc as f32;
                }
            });
    }
    NoiseVolume {
        width: w,
        height: h,
        depth: d,
        values,
        octaves: amplitudes.len(),
        base_frequency,
        amplitudes: amplitudes.to_vec(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TurbulenceParams {
    pub tilt_octaves: usize,
    /// Base spatial frequency in cycles per pixel.
    pub tilt_frequency: f64,
    /// `A_i = persistence^i`.
    pub tilt_persistence: f64,
    /// Multiplier on the temporal frequency relative to the spatial one.
    pub temporal_scale: f64,
    /// Largest displacement in pixels.
    pub tilt_amplitude: f64,
    pub blur_levels: usize,
    pub blur_sigma_max: f64,
    pub blur_octaves: usize,
    pub blur_perlin_weight: f64,
    pub blur_tilt_weight: f64,
    pub seed: u64,
}

impl Default for TurbulenceParams {
    fn default() -> Self {
        Self {
            tilt_octaves: 8,
            tilt_frequency: 0.03,
            tilt_persistence: 0.25,
            temporal_scale: 4.0,
            tilt_amplitude: 2.0,
            blur_levels: 11,
            blur_sigma_max: 1.0,
            blur_octaves: 2,
            blur_perlin_weight: 0.5,
            blur_tilt_weight: 0.5,
            seed: 0,
        }
    }
}

impl TurbulenceParams {
    /// Interpolates between the mild (`0`) and severe (`1`) presets.
    pub fn from_severity(severity: f64, seed: u64) -> Self {
        let s = severity.clamp(0.0, 1.0);
        Self {
            tilt_amplitude: 1.0 + 5.0 * s,
            tilt_frequency: MIN_TILT_FREQUENCY + (MAX_TILT_FREQUENCY - MIN_TILT_FREQUENCY) * s,
            blur_sigma_max: 0.5 + 2.0 * s,
            seed,
            ..Self::default()
        }
    }

    pub fn mild(seed: u64) -> Self {
        Self::from_severity(0.0, seed)
    }

    pub fn severe(seed: u64) -> Self {
        Self::from_severity(1.0, seed)
    }

    /// No tilt and no blur.
    pub fn is_identity(&self) -> bool {
        self.tilt_amplitude == 0.0 && self.blur_sigma_max == 0.0
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        (0..self.tilt_octaves)
            .map(|i| self.tilt_persistence.powi(i as i32))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = [
            self.tilt_amplitude,
            self.blur_sigma_max,
            self.tilt_persistence,
            self.temporal_scale,
            self.blur_perlin_weight,
            self.blur_tilt_weight,
        ]
        .iter()
        .all(|v| v.is_finite() && *v >= 0.0);
        if !finite_nonneg {
            return Err(Error::invalid("turbulence magnitudes must be finite and non-negative"));
        }
        if self.is_identity() {
            return Ok(());
        }
        if self.tilt_octaves == 0 || self.blur_octaves == 0 {
            return Err(Error::invalid("octave counts must be >= 1"));
        }
        if self.blur_levels < 2 {
            return Err(Error::invalid("blur_levels must be >= 2"));
        }
        if !(MIN_TILT_FREQUENCY..=MAX_TILT_FREQUENCY).contains(&self.tilt_frequency) {
            return Err(Error::invalid(format!(
                "tilt_frequency {} outside [{MIN_TILT_FREQUENCY}, {MAX_TILT_FREQUENCY}]",
                self.tilt_frequency
            )));
        }
        Ok(())
    }
}

/// Horizontal and vertical tilt volumes normalized to `tilt_amplitude`.
pub fn generate_tilt_volumes(
    params: &TurbulenceParams,
    dims: (usize, usize, usize),
) -> (NoiseVolume, NoiseVolume) {
    let amps = params.amplitudes();
    let make = |seed: u64| {
        if params.tilt_amplitude <= 0.0 {
            let mut v = NoiseVolume::zeros(dims.0, dims.1, dims.2);
            v.octaves = params.tilt_octaves;
            v.base_frequency = params.tilt_frequency;
            v.amplitudes = amps.clone();
            return v;
        }
        let mut v = fractal_volume(
            &Simplex3::new(seed),
            dims,
            params.tilt_frequency,
            &amps,
            params.temporal_scale,
        );
        v.normalize_to(params.tilt_amplitude);
        v
    };
    (make(params.seed), make(params.seed.wrapping_add(1)))
}

/// Per-pixel blur sigma volume from Perlin noise and tilt magnitude.
pub fn blur_sigma_volume(
    params: &TurbulenceParams,
    tilt_x: &NoiseVolume,
    tilt_y: &NoiseVolume,
) -> NoiseVolume {
    let dims = (tilt_x.width, tilt_x.height, tilt_x.depth);
    if params.blur_sigma_max <= 0.0 {
        return NoiseVolume::zeros(dims.0, dims.1, dims.2);
    }
    let amps: Vec<f64> = (0..params.blur_octaves).map(|i| 0.25f64.powi(i as i32)).collect();
    let perlin = fractal_volume(
        &Perlin3::new(params.seed.wrapping_add(2)),
        dims,
        params.tilt_frequency,
        &amps,
        params.temporal_scale,
    );
    let (lo, hi) = perlin
        .values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let prange = (hi - lo) as f64;
    let mags: Vec<f64> = tilt_x
        .values
        .iter()
        .zip(&tilt_y.values)
        .map(|(&a, &b)| (a as f64).hypot(b as f64))
        .collect();
    let mmax = mags.iter().cloned().fold(0.0f64, f64::max);
    let values = perlin
        .values
        .iter()
        .zip(&mags)
        .map(|(&p, &m)| {
            let pn = if prange > 0.0 { (p - lo) as f64 / prange } else { 0.0 };
            let tn = if mmax > 0.0 { m / mmax } else { 0.0 };
            let mix = params.blur_perlin_weight * pn + params.blur_tilt_weight * tn;
            (params.blur_sigma_max * mix.clamp(0.0, 1.0)) as f32
        })
        .collect();
    NoiseVolume {
        width: dims.0,
        height: dims.1,
        depth: dims.2,
        values,
        octaves: params.blur_octaves,
        base_frequency: params.tilt_frequency,
        amplitudes: amps,
    }
}

fn check_map(frame: &Frame, map: &Plane, what: &str) -> Result<()> {
    if (map.width, map.height) != (frame.width, frame.height) {
        return Err(Error::DimensionMismatch {
            expected: (frame.width, frame.height, 1),
            found: (map.width, map.height, 1),
            context: what.into(),
        });
    }
    Ok(())
}

/// Backward warp: `out(x, y) = in(x + nx(x, y), y + ny(x, y))`, bilinear with
/// edge clamping.
pub fn warp_frame(frame: &Frame, nx: &Plane, ny: &Plane) -> Result<Frame> {
    check_map(frame, nx, "tilt x map")?;
    check_map(frame, ny, "tilt y map")?;
    if nx.data.iter().chain(&ny.data).all(|&v| v == 0.0) {
        return Ok(frame.clone());
    }
    let w = frame.width;
    let planes = frame
        .planes
        .iter()
        .map(|p| {
            let mut data = vec![0.0f32; p.len()];
            data.par_chunks_mut(w.max(1)).enumerate().for_each(|(y, row)| {
                for (x, o) in row.iter_mut().enumerate() {
                    let i = y * w + x;
                    *o = p.sample_bilinear(x as f32 + nx.data[i], y as f32 + ny.data[i]);
                }
            });
            Plane {
                width: p.width,
                height: p.height,
                data,
            }
        })
        .collect();
    Ok(Frame::from_planes(planes)?.with_index(frame.index))
}

/// Spatially varying Gaussian blur. A bank of `levels` blurs spans the range
/// of `blur_map`; each pixel interpolates linearly between the two levels
/// around its sigma.
pub fn apply_adaptive_blur(frame: &Frame, blur_map: &Plane, levels: usize) -> Result<Frame> {
    check_map(frame, blur_map, "blur map")?;
    if blur_map.data.iter().any(|&s| !(s >= 0.0)) {
        return Err(Error::invalid("blur sigma must be non-negative"));
    }
    let (lo, hi) = blur_map.min_max();
    if blur_map.is_empty() || hi == 0.0 {
        return Ok(frame.clone());
    }
    if hi == lo || levels < 2 {
        let s = if hi == lo { lo } else { hi };
        return Ok(frame.map_planes(|p| gaussian_blur(p, s)).with_index(frame.index));
    }
    let steps = (levels - 1) as f32;
    let range = hi - lo;
    // level index and interpolation weight per pixel
    let pos: Vec<(usize, f32)> = blur_map
        .data
        .iter()
        .map(|&s| {
            let u = ((s - lo) / range * steps).clamp(0.0, steps);
            let k = (u.floor() as usize).min(levels - 2);
            (k, u - k as f32)
        })
        .collect();
    let mut needed = vec![false; levels];
    for &(k, t) in &pos {
        if t < 1.0 {
            needed[k] = true;
        }
        if t > 0.0 {
            needed[k + 1] = true;
        }
    }
    let sigmas: Vec<f32> = (0..levels).map(|k| lo + range * k as f32 / steps).collect();
    let planes = frame
        .planes
        .iter()
        .map(|p| {
            let bank: Vec<Option<Plane>> = (0..levels)
                .into_par_iter()
                .map(|k| needed[k].then(|| gaussian_blur(p, sigmas[k])))
                .collect();
            let data = pos
                .iter()
                .enumerate()
                .map(|(i, &(k, t))| {
                    if t == 0.0 {
                        bank[k].as_ref().unwrap().data[i]
                    } else if t == 1.0 {
                        bank[k + 1].as_ref().unwrap().data[i]
                    } else {
                        let a = bank[k].as_ref().unwrap().data[i];
                        let b = bank[k + 1].as_ref().unwrap().data[i];
                        (1.0 - t) * a + t * b
                    }
                })
                .collect();
            Plane {
                width: p.width,
                height: p.height,
                data,
            }
        })
        .collect();
    Ok(Frame::from_planes(planes)?.with_index(frame.index))
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub degraded: VideoSequence,
    pub tilt_x: NoiseVolume,
    pub tilt_y: NoiseVolume,
    /// Blur sigma in pixels for every pixel of every frame.
    pub blur: NoiseVolume,
}

/// Degrades every frame of `clean` with tilt then blur.
pub fn simulate_sequence(clean: &VideoSequence, params: &TurbulenceParams) -> Result<SimulationOutput> {
    if clean.is_empty() {
        return Err(Error::EmptySequence);
    }
    params.validate()?;
    let dims = (clean.width(), clean.height(), clean.len());
    let (tilt_x, tilt_y) = generate_tilt_volumes(params, dims);
    let blur = blur_sigma_volume(params, &tilt_x, &tilt_y);
    let frames = clean
        .frames()
        .par_iter()
        .enumerate()
        .map(|(t, f)| {
            let warped = warp_frame(f, &tilt_x.slice(t), &tilt_y.slice(t))?;
            apply_adaptive_blur(&warped, &blur.slice(t), params.blur_levels)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulationOutput {
        degraded: VideoSequence::new(frames)?.with_frame_rate(clean.frame_rate),
        tilt_x,
        tilt_y,
        blur,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn textured(w: usize, h: usize, seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Plane::from_fn(w, h, |_, _| rng.gen::<f32>());
        Frame::from_plane(gaussian_blur(&noise, 1.0))
    }

    #[test]
    fn zero_amplitude_gives_zero_volumes() {
        let p = TurbulenceParams { tilt_amplitude: 0.0, ..Default::default() };
        let (x, y) = generate_tilt_volumes(&p, (16, 12, 3));
        assert!(x.values.iter().chain(&y.values).all(|&v| v == 0.0));
    }

    #[test]
    fn volumes_are_deterministic_and_independent() {
        let p = TurbulenceParams { seed: 77, ..Default::default() };
        let (a, b) = generate_tilt_volumes(&p, (24, 20, 4));
        let (c, d) = generate_tilt_volumes(&p, (24, 20, 4));
        assert_eq!(a, c);
        assert_eq!(b, d);
        assert_ne!(a.values, b.values);
        assert!((a.max_abs() as f64 - p.tilt_amplitude).abs() < 1e-5);
    }

    #[test]
    fn octave_sum_decomposes() {
        let n = Simplex3::new(5);
        let amps = [1.0, 0.25, 0.0625, 0.015625];
        let dims = (20, 16, 3);
        let full = fractal_volume(&n, dims, 0.03, &amps, 1.0);
        let parts: Vec<NoiseVolume> = amps
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let p = (1u64 << i) as f64;
                single_octave_volume(&n, dims, 0.03 * p, 0.03 * p, p * a)
            })
            .collect();
        for i in 0..full.values.len() {
            let s: f64 = parts.iter().map(|p| p.values[i] as f64).sum();
            assert!((full.values[i] as f64 - s).abs() <= 1e-6);
        }
    }

    fn band_energy(slice: &Plane, f0: f64) -> (f64, f64) {
        let (w, h) = (slice.width, slice.height);
        let mean = slice.mean();
        let mut buf: Vec<Complex<f64>> = slice
            .data
            .iter()
            .map(|&v| Complex::new(v as f64 - mean, 0.0))
            .collect();
        let mut planner = FftPlanner::new();
        let row = planner.plan_fft_forward(w);
        for r in buf.chunks_mut(w) {
            row.process(r);
        }
        let col = planner.plan_fft_forward(h);
        let mut tmp = vec![Complex::new(0.0, 0.0); h];
        for x in 0..w {
            for y in 0..h {
                tmp[y] = buf[y * w + x];
            }
            col.process(&mut tmp);
            for y in 0..h {
                buf[y * w + x] = tmp[y];
            }
        }
        let (mut inside, mut total) = (0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                let fx = if x <= w / 2 { x as f64 } else { x as f64 - w as f64 } / w as f64;
                let fy = if y <= h / 2 { y as f64 } else { y as f64 - h as f64 } / h as f64;
                let f = fx.hypot(fy);
                let e = buf[y * w + x].norm_sqr();
                total += e;
                if f >= f0 / 2.0 && f <= 2.0 * f0 {
                    inside += e;
                }
            }
        }
        (inside, total)
    }

    #[test]
    fn single_octave_energy_sits_near_base_frequency() {
        let f0 = 0.06;
        // periodogram averaged over independent slices
        let (mut inside, mut total) = (0.0, 0.0);
        for seed in 0..16 {
            let v = fractal_volume(&Simplex3::new(seed), (128, 128, 1), f0, &[1.0], 1.0);
            let (i, t) = band_energy(&v.slice(0), f0);
            inside += i;
            total += t;
        }
        let frac = inside / total;
        assert!(frac > 0.8, "band fraction {frac}");
    }

    #[test]
    fn tilt_is_temporally_coherent() {
        let p = TurbulenceParams { tilt_amplitude: 4.0, seed: 3, ..Default::default() };
        let (x, _) = generate_tilt_volumes(&p, (64, 64, 12));
        let n = 64 * 64;
        let mut step = 0.0f64;
        for t in 0..11 {
            let a = x.slice_ref(t);
            let b = x.slice_ref(t + 1);
            step += a.iter().zip(b).map(|(p, q)| (p - q).abs() as f64).sum::<f64>() / n as f64;
        }
        step /= 11.0;
        let (lo, hi) = x.values.iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(step < 0.1 * (hi - lo) as f64, "mean step {step}, range {}", hi - lo);
    }

    #[test]
    fn zero_warp_is_identity() {
        let f = textured(20, 14, 1);
        let z = Plane::zeros(20, 14);
        assert_eq!(warp_frame(&f, &z, &z).unwrap(), f);
    }

    #[test]
    fn constant_warp_translates() {
        let f = textured(30, 20, 2);
        let out = warp_frame(&f, &Plane::filled(30, 20, 2.0), &Plane::zeros(30, 20)).unwrap();
        for y in 0..20 {
            for x in 0..28 {
                assert_eq!(out.planes[0].get(x, y), f.planes[0].get(x + 2, y));
            }
        }
    }

    fn reference_warp(p: &Plane, nx: &Plane, ny: &Plane) -> Plane {
        let at = |x: i64, y: i64| {
            let xc = x.clamp(0, p.width as i64 - 1) as usize;
            let yc = y.clamp(0, p.height as i64 - 1) as usize;
            p.data[yc * p.width + xc] as f64
        };
        Plane::from_fn(p.width, p.height, |x, y| {
            let sx = x as f64 + nx.get(x, y) as f64;
            let sy = y as f64 + ny.get(x, y) as f64;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (ax, ay) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let top = at(x0, y0) * (1.0 - ax) + at(x0 + 1, y0) * ax;
            let bot = at(x0, y0 + 1) * (1.0 - ax) + at(x0 + 1, y0 + 1) * ax;
            (top * (1.0 - ay) + bot * ay) as f32
        })
    }

    #[test]
    fn warp_matches_reference() {
        let f = textured(40, 32, 3);
        let p = TurbulenceParams { tilt_amplitude: 3.0, seed: 9, ..Default::default() };
        let (x, y) = generate_tilt_volumes(&p, (40, 32, 1));
        let out = warp_frame(&f, &x.slice(0), &y.slice(0)).unwrap();
        let r = reference_warp(&f.planes[0], &x.slice(0), &y.slice(0));
        for (a, b) in out.planes[0].data.iter().zip(&r.data) {
            assert!((a - b).abs() <= 1e-5);
        }
    }

    #[test]
    fn forward_then_inverse_warp_recovers_interior() {
        let f = textured(64, 64, 4);
        let p = TurbulenceParams { tilt_amplitude: 2.0, tilt_frequency: 0.015, seed: 2, ..Default::default() };
        let (x, y) = generate_tilt_volumes(&p, (64, 64, 1));
        let warped = warp_frame(&f, &x.slice(0), &y.slice(0)).unwrap();
        let back = warp_frame(&warped, &x.slice(0).map(|v| -v), &y.slice(0).map(|v| -v)).unwrap();
        let mut err = 0.0f64;
        let mut n = 0;
        for yy in 8..56 {
            for xx in 8..56 {
                err += (back.planes[0].get(xx, yy) - f.planes[0].get(xx, yy)).abs() as f64;
                n += 1;
            }
        }
        assert!(err / n as f64 <= 0.02, "{}", err / n as f64);
    }

    #[test]
    fn zero_blur_map_is_identity() {
        let f = textured(16, 16, 5);
        assert_eq!(apply_adaptive_blur(&f, &Plane::zeros(16, 16), 11).unwrap(), f);
    }

    #[test]
    fn uniform_blur_matches_global_blur() {
        let f = textured(32, 24, 6);
        for s in [0.7f32, 1.9, 3.0] {
            let out = apply_adaptive_blur(&f, &Plane::filled(32, 24, s), 11).unwrap();
            let g = gaussian_blur(&f.planes[0], s);
            for (a, b) in out.planes[0].data.iter().zip(&g.data) {
                assert!((a - b).abs() <= 1e-4);
            }
        }
    }

    #[test]
    fn step_blur_map_is_piecewise() {
        let f = textured(40, 20, 7);
        let map = Plane::from_fn(40, 20, |x, _| if x < 20 { 0.0 } else { 3.0 });
        let out = apply_adaptive_blur(&f, &map, 11).unwrap();
        let g = gaussian_blur(&f.planes[0], 3.0);
        for y in 0..20 {
            for x in 0..40 {
                let v = out.planes[0].get(x, y);
                if x < 20 {
                    assert_eq!(v, f.planes[0].get(x, y));
                } else {
                    assert!((v - g.get(x, y)).abs() <= 1e-4);
                }
            }
        }
        assert!(apply_adaptive_blur(&f, &Plane::filled(40, 20, -1.0), 11).is_err());
    }

    #[test]
    fn identity_params_reproduce_clean_exactly() {
        let clean = VideoSequence::new((0..3).map(|i| textured(24, 18, i)).collect()).unwrap();
        let p = TurbulenceParams { tilt_amplitude: 0.0, blur_sigma_max: 0.0, ..Default::default() };
        let out = simulate_sequence(&clean, &p).unwrap();
        assert_eq!(out.degraded, clean);
    }

    #[test]
    fn simulation_is_deterministic_and_shape_preserving() {
        let rgb = Frame::from_planes(vec![textured(30, 22, 1).planes[0].clone(); 3]).unwrap();
        let clean = VideoSequence::new(vec![rgb; 4]).unwrap();
        let p = TurbulenceParams::severe(11);
        let a = simulate_sequence(&clean, &p).unwrap();
        let b = simulate_sequence(&clean, &p).unwrap();
        assert_eq!(a.degraded, b.degraded);
        assert_eq!(a.degraded.shape(), clean.shape());
        assert_eq!(a.degraded.len(), 4);
        assert!(a.blur.values.iter().all(|&s| (0.0..=p.blur_sigma_max as f32).contains(&s)));
        assert_ne!(a.degraded, clean);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let clean = VideoSequence::new(vec![textured(8, 8, 0)]).unwrap();
        let p = TurbulenceParams { tilt_frequency: 0.2, ..Default::default() };
        assert!(simulate_sequence(&clean, &p).is_err());
        let p = TurbulenceParams { tilt_amplitude: -1.0, ..Default::default() };
        assert!(simulate_sequence(&clean, &p).is_err());
        assert!(simulate_sequence(&VideoSequence::new(vec![]).unwrap(), &TurbulenceParams::default()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn volume_bounded_by_octave_weights(seed in 0u64..10_000, octaves in 1usize..6) {
            let amps: Vec<f64> = (0..octaves).map(|i| 0.25f64.powi(i as i32)).collect();
            let bound: f64 = amps.iter().enumerate().map(|(i, a)| (1u64 << i) as f64 * a).sum();
            let v = fractal_volume(&Simplex3::new(seed), (12, 10, 3), 0.05, &amps, 1.0);
            prop_assert!(v.max_abs() as f64 <= bound * 1.05);
        }
    }
}
