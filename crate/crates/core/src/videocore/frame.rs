use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rec.601 luma weights.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// A single-channel row-major raster of `f32` samples.
///
/// Used for image channels as well as for derived per-pixel maps (flow
/// magnitudes, displacement fields, blur maps) whose values are not
/// restricted to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::LengthMismatch {
                expected: width * height,
                found: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Sample with edge replication for out-of-range coordinates.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yc * self.width + xc]
    }

    /// Bilinear sample at a real-valued position, clamping to the edges.
    #[inline]
    pub fn sample_bilinear(&self, x: f32, y: f32) -> f32 {
        let maxx = (self.width - 1) as f32;
        let maxy = (self.height - 1) as f32;
        let x = x.clamp(0.0, maxx);
        let y = y.clamp(0.0, maxy);
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let x0 = x0 as usize;
        let y0 = y0 as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let row0 = y0 * self.width;
        let row1 = y1 * self.width;
        let top = self.data[row0 + x0] * (1.0 - fx) + self.data[row0 + x1] * fx;
        let bottom = self.data[row1 + x0] * (1.0 - fx) + self.data[row1 + x1] * fx;
        top * (1.0 - fy) + bottom * fy
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn same_shape(&self, other: &Plane) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// A video frame: one plane per channel (1 = luma, 3 = RGB).
///
/// Samples loaded from disk lie in `[0, 1]`; intermediate results may
/// temporarily leave that range.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub planes: Vec<Plane>,
    pub index: usize,
}

impl Frame {
    pub fn from_planes(planes: Vec<Plane>) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::invalid("frame needs at least one channel"))?;
        let (w, h) = (first.width, first.height);
        if planes.iter().any(|p| p.width != w || p.height != h) {
            return Err(Error::invalid("frame planes differ in size"));
        }
        Ok(Self {
            width: w,
            height: h,
            planes,
            index: 0,
        })
    }

    pub fn from_plane(plane: Plane) -> Self {
        Self {
            width: plane.width,
            height: plane.height,
            planes: vec![plane],
            index: 0,
        }
    }

    /// Builds a frame from interleaved row-major samples.
    pub fn from_interleaved(
        width: usize,
        height: usize,
        channels: usize,
        samples: &[f32],
    ) -> Result<Self> {
        if channels == 0 {
            return Err(Error::invalid("channel count must be positive"));
        }
        if samples.len() != width * height * channels {
            return Err(Error::LengthMismatch {
                expected: width * height * channels,
                found: samples.len(),
            });
        }
        let planes = (0..channels)
            .map(|c| Plane {
                width,
                height,
                data: samples.iter().skip(c).step_by(channels).copied().collect(),
            })
            .collect();
        Self::from_planes(planes)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self {
            width,
            height,
            planes: (0..channels)
                .map(|_| Plane::filled(width, height, value))
                .collect(),
            index: 0,
        }
    }

    pub fn with_index(mut self, index: usize) -> Self {
        self.index = index;
        self
    }

    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    pub fn sample_count(&self) -> usize {
        self.width * self.height * self.channels()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels())
    }

    pub fn plane(&self, c: usize) -> &Plane {
        &self.planes[c]
    }

    pub fn interleaved(&self) -> Vec<f32> {
        let c = self.channels();
        let mut out = vec![0.0; self.sample_count()];
        for (ci, p) in self.planes.iter().enumerate() {
            for (i, &v) in p.data.iter().enumerate() {
                out[i * c + ci] = v;
            }
        }
        out
    }

    /// Applies `f` independently to each channel plane. `f` may resize, but
    /// must give every plane the same size.
    pub fn map_planes(&self, mut f: impl FnMut(&Plane) -> Plane) -> Frame {
        let planes: Vec<Plane> = self.planes.iter().map(&mut f).collect();
        let (width, height) = planes
            .first()
            .map_or((self.width, self.height), |p| (p.width, p.height));
        debug_assert!(planes.iter().all(|p| p.width == width && p.height == height));
        Frame {
            width,
            height,
            planes,
            index: self.index,
        }
    }

    pub fn clamped01(&self) -> Frame {
        self.map_planes(|p| p.map(|v| v.clamp(0.0, 1.0)))
    }
}

/// Converts RGB to Rec.601 luma. Single-channel frames pass through unchanged.
pub fn to_luma(frame: &Frame) -> Frame {
    if frame.channels() != 3 {
        return frame.clone();
    }
    let (r, g, b) = (&frame.planes[0], &frame.planes[1], &frame.planes[2]);
    let data = r
        .data
        .iter()
        .zip(&g.data)
        .zip(&b.data)
        .map(|((&r, &g), &b)| {
            (LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b).clamp(0.0, 1.0)
        })
        .collect();
    Frame {
        width: frame.width,
        height: frame.height,
        planes: vec![Plane {
            width: frame.width,
            height: frame.height,
            data,
        }],
        index: frame.index,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ColorMode {
    #[default]
    Luma,
    Rgb,
}

impl ColorMode {
    pub fn channels(self) -> usize {
        match self {
            ColorMode::Luma => 1,
            ColorMode::Rgb => 3,
        }
    }
}

/// Ordered frames sharing one shape, with contiguous indices from 0.
#[derive(Debug, Clone)]
pub struct VideoSequence {
    frames: Vec<Frame>,
    pub frame_rate: f64,
    mean: OnceLock<Vec<f64>>,
}

impl PartialEq for VideoSequence {
    fn eq(&self, other: &Self) -> bool {
        self.frames == other.frames && self.frame_rate == other.frame_rate
    }
}

impl VideoSequence {
    pub const DEFAULT_FRAME_RATE: f64 = 30.0;

    /// Validates shapes and renumbers frames `0..n`. Empty sequences are allowed
    /// here; operations that need frames report [`Error::EmptySequence`].
    pub fn new(mut frames: Vec<Frame>) -> Result<Self> {
        if let Some(first) = frames.first() {
            let shape = first.shape();
            for f in &frames {
                if f.shape() != shape {
                    return Err(Error::DimensionMismatch {
                        expected: shape,
                        found: f.shape(),
                        context: format!("frame {}", f.index),
                    });
                }
            }
        }
        for (i, f) in frames.iter_mut().enumerate() {
            f.index = i;
        }
        Ok(Self {
            frames,
            frame_rate: Self::DEFAULT_FRAME_RATE,
            mean: OnceLock::new(),
        })
    }

    pub fn with_frame_rate(mut self, hz: f64) -> Self {
        self.frame_rate = hz;
        self
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, i: usize) -> Result<&Frame> {
        self.frames.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            len: self.frames.len(),
        })
    }

    /// `(width, height, channels)` of every frame, or `None` when empty.
    pub fn shape(&self) -> Option<(usize, usize, usize)> {
        self.frames.first().map(Frame::shape)
    }

    pub fn width(&self) -> usize {
        self.frames.first().map_or(0, |f| f.width)
    }

    pub fn height(&self) -> usize {
        self.frames.first().map_or(0, |f| f.height)
    }

    pub fn channels(&self) -> usize {
        self.frames.first().map_or(0, Frame::channels)
    }

    pub fn to_luma(&self) -> VideoSequence {
        let mut seq = VideoSequence::new(self.frames.iter().map(to_luma).collect())
            .expect("luma conversion preserves shape");
        seq.frame_rate = self.frame_rate;
        seq
    }

    /// Per-channel mean intensity over all pixels of all frames (cached).
    pub fn mean_intensity(&self) -> Result<&[f64]> {
        if self.frames.is_empty() {
            return Err(Error::EmptySequence);
        }
        Ok(self.mean.get_or_init(|| sequence_mean_uncached(&self.frames)))
    }

    /// Per-pixel average of all frames.
    pub fn temporal_mean(&self) -> Result<Frame> {
        let first = self.frames.first().ok_or(Error::EmptySequence)?;
        let n = self.frames.len() as f64;
        let planes = (0..first.channels())
            .map(|c| {
                let mut acc = vec![0.0f64; first.width * first.height];
                for f in &self.frames {
                    for (a, &v) in acc.iter_mut().zip(&f.planes[c].data) {
                        *a += v as f64;
                    }
                }
                Plane {
                    width: first.width,
                    height: first.height,
                    data: acc.into_iter().map(|a| (a / n) as f32).collect(),
                }
            })
            .collect();
        Frame::from_planes(planes)
    }

    /// Same-shape sequence produced by mapping every frame.
    pub fn map_frames(&self, f: impl Fn(&Frame) -> Frame + Sync + Send) -> Result<VideoSequence> {
        use rayon::prelude::*;
        let frames = self.frames.par_iter().map(f).collect();
        Ok(VideoSequence::new(frames)?.with_frame_rate(self.frame_rate))
    }
}

/// Arithmetic mean per channel over every pixel of every frame.
pub fn sequence_mean(seq: &VideoSequence) -> Result<Vec<f64>> {
    seq.mean_intensity().map(<[f64]>::to_vec)
}

fn sequence_mean_uncached(frames: &[Frame]) -> Vec<f64> {
    let channels = frames[0].channels();
    let per_frame = frames[0].width * frames[0].height;
    let total = (per_frame * frames.len()) as f64;
    (0..channels)
        .map(|c| {
            frames
                .iter()
                .map(|f| f.planes[c].data.iter().map(|&v| v as f64).sum::<f64>())
                .sum::<f64>()
                / total
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn const_frame(v: f32) -> Frame {
        Frame::filled(4, 4, 1, v)
    }

    #[test]
    fn mean_of_two_constant_frames() {
        let seq = VideoSequence::new(vec![const_frame(0.2), const_frame(0.4)]).unwrap();
        assert!((sequence_mean(&seq).unwrap()[0] - 0.3).abs() < 1e-7);
    }

    #[test]
    fn mean_of_single_constant_frame() {
        let seq = VideoSequence::new(vec![const_frame(0.7)]).unwrap();
        assert!((sequence_mean(&seq).unwrap()[0] - 0.7).abs() < 1e-7);
    }

    #[test]
    fn mean_matches_double_loop() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let frames: Vec<Frame> = (0..5)
            .map(|_| {
                let s: Vec<f32> = (0..8 * 8 * 3).map(|_| rng.gen()).collect();
                Frame::from_interleaved(8, 8, 3, &s).unwrap()
            })
            .collect();
        let seq = VideoSequence::new(frames.clone()).unwrap();
        let got = sequence_mean(&seq).unwrap();
        for c in 0..3 {
            let mut acc = 0.0f64;
            let mut n = 0usize;
            for f in &frames {
                for y in 0..8 {
                    for x in 0..8 {
                        acc += f.planes[c].get(x, y) as f64;
                        n += 1;
                    }
                }
            }
            assert!((got[c] - acc / n as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn mean_of_empty_sequence_is_error() {
        let seq = VideoSequence::new(vec![]).unwrap();
        assert!(matches!(sequence_mean(&seq), Err(Error::EmptySequence)));
    }

    #[test]
    fn luma_weights() {
        let white = Frame::filled(1, 1, 3, 1.0);
        assert!((to_luma(&white).planes[0].data[0] - 1.0).abs() < 1e-6);
        let green = Frame::from_interleaved(1, 1, 3, &[0.0, 1.0, 0.0]).unwrap();
        assert!((to_luma(&green).planes[0].data[0] - 0.587).abs() < 1e-7);
        let px = [0.25f32, 0.6, 0.9];
        let f = Frame::from_interleaved(1, 1, 3, &px).unwrap();
        let expect = 0.299 * 0.25 + 0.587 * 0.6 + 0.114 * 0.9;
        assert!((to_luma(&f).planes[0].data[0] - expect).abs() < 1e-6);
    }

    #[test]
    fn luma_is_identity_on_single_channel() {
        let f = Frame::filled(3, 2, 1, 0.3);
        assert_eq!(to_luma(&f), f);
        assert_eq!(to_luma(&to_luma(&f)), f);
    }

    #[test]
    fn sequence_rejects_mixed_shapes() {
        let r = VideoSequence::new(vec![Frame::filled(4, 4, 1, 0.0), Frame::filled(5, 4, 1, 0.0)]);
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn interleaved_roundtrip() {
        let s: Vec<f32> = (0..2 * 3 * 3).map(|i| i as f32).collect();
        let f = Frame::from_interleaved(2, 3, 3, &s).unwrap();
        assert_eq!(f.interleaved(), s);
        assert_eq!(f.sample_count(), 18);
    }

    proptest::proptest! {
        #[test]
        fn mean_invariant_under_reordering(vals in proptest::collection::vec(0.0f32..1.0, 2..8), rot in 0usize..8) {
            let frames: Vec<Frame> = vals.iter().map(|&v| Frame::filled(3, 3, 1, v)).collect();
            let mut shuffled = frames.clone();
            let k = rot % shuffled.len();
            shuffled.rotate_left(k);
            let a = sequence_mean(&VideoSequence::new(frames).unwrap()).unwrap()[0];
            let b = sequence_mean(&VideoSequence::new(shuffled).unwrap()).unwrap()[0];
            proptest::prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
