//! PNG frame-directory I/O.
//!
//! Frames are stored as `frame_%06d.png`. Loading accepts any PNG file names;
//! files are ordered by the integer formed from their name digits when every
//! file carries one, otherwise lexicographically.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ColorType, DynamicImage, GrayImage, RgbImage};

use super::frame::{ColorMode, Frame, Plane, VideoSequence, LUMA_WEIGHTS};
use super::raw;
use crate::error::{Error, Result};

/// Loads a PNG frame directory, or a raw container file, as a sequence.
pub fn load_sequence(path: impl AsRef<Path>, color_mode: ColorMode) -> Result<VideoSequence> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    if path.is_file() {
        let frames = raw::read_raw(path)?;
        if frames.is_empty() {
            return Err(Error::NoFrames(path.to_path_buf()));
        }
        let seq = VideoSequence::new(frames)?;
        return Ok(match (color_mode, seq.channels()) {
            (ColorMode::Luma, 3) => seq.to_luma(),
            _ => seq,
        });
    }

    let files = list_frame_files(path)?;
    if files.is_empty() {
        return Err(Error::NoFrames(path.to_path_buf()));
    }
    let mut frames = Vec::with_capacity(files.len());
    let mut expected: Option<(usize, usize)> = None;
    for file in &files {
        let frame = load_frame(file, color_mode)?;
        match expected {
            None => expected = Some((frame.width, frame.height)),
            Some((w, h)) if (w, h) != (frame.width, frame.height) => {
                return Err(Error::DimensionMismatch {
                    expected: (w, h, color_mode.channels()),
                    found: frame.shape(),
                    context: file.display().to_string(),
                });
            }
            _ => {}
        }
        frames.push(frame);
    }
    VideoSequence::new(frames)
}

fn digits_of(name: &str) -> Option<u64> {
    let d: String = name.chars().filter(char::is_ascii_digit).collect();
    if d.is_empty() {
        None
    } else {
        d.parse().ok()
    }
}

/// PNG files of a directory in frame order.
pub fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    let keys: Option<Vec<u64>> = files
        .iter()
        .map(|p| p.file_stem().and_then(|s| s.to_str()).and_then(digits_of))
        .collect();
    if let Some(keys) = keys {
        let mut paired: Vec<(u64, PathBuf)> = keys.into_iter().zip(files).collect();
        paired.sort();
        files = paired.into_iter().map(|(_, p)| p).collect();
    }
    Ok(files)
}

/// Decodes one 8-bit PNG into a normalized frame.
pub fn load_frame(path: &Path, color_mode: ColorMode) -> Result<Frame> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let color = img.color();
    match color {
        ColorType::L8 | ColorType::La8 | ColorType::Rgb8 | ColorType::Rgba8 => {}
        other => {
            return Err(Error::UnsupportedBitDepth {
                path: path.to_path_buf(),
                detail: format!("{other:?}; only 8-bit gray or RGB(A) is supported"),
            })
        }
    }
    let (w, h) = (img.width() as usize, img.height() as usize);
    let is_gray = matches!(color, ColorType::L8 | ColorType::La8);
    let norm = |v: u8| v as f32 / 255.0;
    let frame = if is_gray {
        let gray = img.to_luma8();
        let plane = Plane::new(w, h, gray.as_raw().iter().map(|&v| norm(v)).collect())?;
        match color_mode {
            ColorMode::Luma => Frame::from_plane(plane),
            ColorMode::Rgb => Frame::from_planes(vec![plane.clone(), plane.clone(), plane])?,
        }
    } else {
        let rgb = img.to_rgb8();
        let raw = rgb.as_raw();
        let planes: Vec<Plane> = (0..3)
            .map(|c| Plane {
                width: w,
                height: h,
                data: raw.iter().skip(c).step_by(3).map(|&v| norm(v)).collect(),
            })
            .collect();
        match color_mode {
            ColorMode::Rgb => Frame::from_planes(planes)?,
            ColorMode::Luma => {
                let data = (0..w * h)
                    .map(|i| {
                        (LUMA_WEIGHTS[0] * planes[0].data[i]
                            + LUMA_WEIGHTS[1] * planes[1].data[i]
                            + LUMA_WEIGHTS[2] * planes[2].data[i])
                            .clamp(0.0, 1.0)
                    })
                    .collect();
                Frame::from_plane(Plane::new(w, h, data)?)
            }
        }
    };
    Ok(frame)
}

#[inline]
fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a 1- or 3-channel frame as an 8-bit PNG.
pub fn save_frame(frame: &Frame, path: &Path) -> Result<()> {
    let (w, h) = (frame.width as u32, frame.height as u32);
    let img = match frame.channels() {
        1 => DynamicImage::ImageLuma8(
            GrayImage::from_raw(w, h, frame.planes[0].data.iter().map(|&v| quantize(v)).collect())
                .expect("buffer size matches"),
        ),
        3 => DynamicImage::ImageRgb8(
            RgbImage::from_raw(w, h, frame.interleaved().into_iter().map(quantize).collect())
                .expect("buffer size matches"),
        ),
        c => {
            return Err(Error::invalid(format!(
                "cannot encode {c}-channel frame as PNG"
            )))
        }
    };
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

/// Writes `frame_%06d.png` files into `dir`, creating it if needed.
pub fn save_sequence(seq: &VideoSequence, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    seq.frames()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let p = dir.join(frame_file_name(i));
            save_frame(f, &p).map(|_| p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_frames_load_as_one() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..3 {
            let img = GrayImage::from_raw(4, 4, vec![255u8; 16]).unwrap();
            img.save(dir.path().join(frame_file_name(i))).unwrap();
        }
        let seq = load_sequence(dir.path(), ColorMode::Luma).unwrap();
        assert_eq!(seq.len(), 3);
        assert!(seq
            .frames()
            .iter()
            .all(|f| f.planes[0].data.iter().all(|&v| v == 1.0)));
    }

    #[test]
    fn eight_bit_values_map_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<u8> = (0..=255).collect();
        GrayImage::from_raw(16, 16, data.clone())
            .unwrap()
            .save(dir.path().join("a.png"))
            .unwrap();
        let seq = load_sequence(dir.path(), ColorMode::Luma).unwrap();
        for (i, &v) in seq.frames()[0].planes[0].data.iter().enumerate() {
            assert_eq!(v, data[i] as f32 / 255.0);
        }
    }

    #[test]
    fn empty_directory_reports_no_frames() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_sequence(dir.path(), ColorMode::Luma).unwrap_err();
        assert!(matches!(err, Error::NoFrames(_)));
        assert!(err.to_string().contains("no frames found"));
    }

    #[test]
    fn missing_path_is_distinct_error() {
        let err = load_sequence("/nonexistent/turbkit/frames", ColorMode::Luma).unwrap_err();
        assert!(matches!(err, Error::MissingPath(_)));
    }

    #[test]
    fn mixed_sizes_report_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        GrayImage::new(4, 4).save(dir.path().join("frame_000000.png")).unwrap();
        GrayImage::new(5, 4).save(dir.path().join("frame_000001.png")).unwrap();
        let err = load_sequence(dir.path(), ColorMode::Luma).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
        assert!(err.to_string().contains("dimension mismatch"));
    }

    #[test]
    fn sixteen_bit_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(2, 2, vec![0, 1, 2, 65535])
            .unwrap();
        img.save(dir.path().join("frame_000000.png")).unwrap();
        let err = load_sequence(dir.path(), ColorMode::Luma).unwrap_err();
        assert!(matches!(err, Error::UnsupportedBitDepth { .. }));
    }

    #[test]
    fn numeric_ordering_of_names() {
        let dir = tempfile::tempdir().unwrap();
        for (name, v) in [("f10.png", 10u8), ("f2.png", 2), ("f1.png", 1)] {
            GrayImage::from_raw(1, 1, vec![v]).unwrap().save(dir.path().join(name)).unwrap();
        }
        let seq = load_sequence(dir.path(), ColorMode::Luma).unwrap();
        let vals: Vec<f32> = seq.frames().iter().map(|f| f.planes[0].data[0] * 255.0).collect();
        assert_eq!(vals, vec![1.0, 2.0, 10.0]);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]
        #[test]
        fn png_roundtrip_within_one_step(vals in proptest::collection::vec(0.0f32..=1.0, 2 * 3 * 3 * 2)) {
            let dir = tempfile::tempdir().unwrap();
            let frames: Vec<Frame> = vals
                .chunks(2 * 3 * 3)
                .map(|c| Frame::from_interleaved(2, 3, 3, c).unwrap())
                .collect();
            let seq = VideoSequence::new(frames).unwrap();
            save_sequence(&seq, dir.path()).unwrap();
            let back = load_sequence(dir.path(), ColorMode::Rgb).unwrap();
            for (a, b) in seq.frames().iter().zip(back.frames()) {
                for (pa, pb) in a.planes.iter().zip(&b.planes) {
                    for (x, y) in pa.data.iter().zip(&pb.data) {
                        proptest::prop_assert!((x - y).abs() <= 1.0 / 255.0 + 1e-6);
                    }
                }
            }
        }
    }
}
