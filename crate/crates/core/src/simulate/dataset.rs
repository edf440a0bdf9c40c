//! Batch generation of paired clean/degraded clips.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{simulate_sequence, TurbulenceParams};
use crate::error::{Error, Result};
use crate::imgproc::{gaussian_blur, resize_bilinear};
use crate::videocore::{
    list_frame_files, load_frame, save_sequence, write_raw, ColorMode, Frame, VideoSequence,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub count: usize,
    pub severity_min: f64,
    pub severity_max: f64,
    pub frames: usize,
    /// Output `(width, height)`; sources are resized when set.
    pub size: Option<(usize, usize)>,
    pub seed: u64,
    pub color: ColorMode,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            count: 10,
            severity_min: 0.0,
            severity_max: 1.0,
            frames: 16,
            size: None,
            seed: 0,
            color: ColorMode::Rgb,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub clip_id: usize,
    pub seed: u64,
    pub severity: f64,
    pub source: String,
    pub params: TurbulenceParams,
    pub clean_path: String,
    pub degraded_path: String,
    pub tilt_x_path: String,
    pub tilt_y_path: String,
    pub blur_path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipError {
    pub clip_id: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub master_seed: u64,
    pub clips: Vec<ClipEntry>,
    pub errors: Vec<ClipError>,
}

enum Source {
    Image(PathBuf),
    Clip(PathBuf),
}

impl Source {
    fn path(&self) -> &Path {
        match self {
            Source::Image(p) | Source::Clip(p) => p,
        }
    }
}

fn list_sources(dir: &Path) -> Result<Vec<Source>> {
    if !dir.is_dir() {
        return Err(Error::MissingPath(dir.to_path_buf()));
    }
    let mut out = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            if list_frame_files(&p).is_ok_and(|f| !f.is_empty()) {
                out.push(Source::Clip(p));
            }
        } else if p
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        {
            out.push(Source::Image(p));
        }
    }
    if out.is_empty() {
        return Err(Error::NoFrames(dir.to_path_buf()));
    }
    Ok(out)
}

fn fit(frame: &Frame, size: Option<(usize, usize)>) -> Frame {
    let Some((w, h)) = size else {
        return frame.clone();
    };
    let scale = (w as f32 / frame.width as f32).min(h as f32 / frame.height as f32);
    frame
        .map_planes(|p| {
            let src = if scale < 1.0 {
                gaussian_blur(p, 0.5 / scale)
            } else {
                p.clone()
            };
            resize_bilinear(&src, w, h)
        })
        .with_index(frame.index)
}

fn clean_clip(source: &Source, spec: &DatasetSpec) -> Result<VideoSequence> {
    let frames = match source {
        Source::Image(p) => {
            let f = fit(&load_frame(p, spec.color)?, spec.size);
            vec![f; spec.frames]
        }
        Source::Clip(dir) => {
            let files = list_frame_files(dir)?;
            (0..spec.frames)
                .map(|i| load_frame(&files[i % files.len()], spec.color).map(|f| fit(&f, spec.size)))
                .collect::<Result<_>>()?
        }
    };
    VideoSequence::new(frames)
}

fn write_clip(
    out_dir: &Path,
    clip_id: usize,
    source: &Source,
    params: &TurbulenceParams,
    spec: &DatasetSpec,
) -> Result<(String, String, String, String, String)> {
    let name = format!("clip_{clip_id:06}");
    let dir = out_dir.join(&name);
    let clean = clean_clip(source, spec)?;
    let sim = simulate_sequence(&clean, params)?;
    save_sequence(&clean, dir.join("clean"))?;
    save_sequence(&sim.degraded, dir.join("degraded"))?;
    write_raw(dir.join("tilt_x.raw"), &sim.tilt_x.to_frames())?;
    write_raw(dir.join("tilt_y.raw"), &sim.tilt_y.to_frames())?;
    write_raw(dir.join("blur.raw"), &sim.blur.to_frames())?;
    Ok((
        format!("{name}/clean"),
        format!("{name}/degraded"),
        format!("{name}/tilt_x.raw"),
        format!("{name}/tilt_y.raw"),
        format!("{name}/blur.raw"),
    ))
}

/// Generates `spec.count` clips under `out_dir` and writes `manifest.json`.
///
/// Clip `k` draws its seed, severity and source from a ChaCha8 stream keyed by
/// `(spec.seed, k)`, so output does not depend on scheduling. Failures of
/// individual clips are reported in [`Manifest::errors`].
pub fn generate_dataset(source_dir: &Path, out_dir: &Path, spec: &DatasetSpec) -> Result<Manifest> {
    if spec.count == 0 {
        return Ok(Manifest {
            master_seed: spec.seed,
            clips: Vec::new(),
            errors: Vec::new(),
        });
    }
    if !(0.0..=1.0).contains(&spec.severity_min)
        || !(0.0..=1.0).contains(&spec.severity_max)
        || spec.severity_min > spec.severity_max
    {
        return Err(Error::invalid("severity range must be ordered within [0, 1]"));
    }
    if spec.frames == 0 {
        return Err(Error::invalid("clips need at least one frame"));
    }
    let sources = list_sources(source_dir)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let results: Vec<std::result::Result<ClipEntry, ClipError>> = (0..spec.count)
        .into_par_iter()
        .map(|clip_id| {
            let started = Instant::now();
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(clip_id as u64);
            let seed: u64 = rng.gen();
            let severity = if spec.severity_max > spec.severity_min {
                rng.gen_range(spec.severity_min..=spec.severity_max)
            } else {
                spec.severity_min
            };
            let source = &sources[rng.gen_range(0..sources.len())];
            let params = TurbulenceParams::from_severity(severity, seed);
            let res = write_clip(out_dir, clip_id, source, &params, spec);
            log::info!(
                "clip {clip_id}: {:.3} s",
                started.elapsed().as_secs_f64()
            );
            let source_name = source
                .path()
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            match res {
                Ok((clean_path, degraded_path, tilt_x_path, tilt_y_path, blur_path)) => Ok(ClipEntry {
                    clip_id,
                    seed,
                    severity,
                    source: source_name,
                    params,
                    clean_path,
                    degraded_path,
                    tilt_x_path,
                    tilt_y_path,
                    blur_path,
                }),
                Err(e) => Err(ClipError {
                    clip_id,
                    message: e.to_string(),
                }),
            }
        })
        .collect();
    let mut manifest = Manifest {
        master_seed: spec.seed,
        clips: Vec::new(),
        errors: Vec::new(),
    };
    for r in results {
        match r {
            Ok(c) => manifest.clips.push(c),
            Err(e) => manifest.errors.push(e),
        }
    }
    let path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::videocore::{save_frame, Plane};

    fn write_source(dir: &Path) {
        fs::create_dir_all(dir).unwrap();
        let f = Frame::from_plane(Plane::from_fn(40, 32, |x, y| {
            ((x / 4 + y / 4) % 2) as f32 * 0.6 + 0.2
        }));
        save_frame(&f, &dir.join("checker.png")).unwrap();
    }

    fn spec(count: usize) -> DatasetSpec {
        DatasetSpec {
            count,
            frames: 3,
            seed: 5,
            color: ColorMode::Luma,
            ..Default::default()
        }
    }

    #[test]
    fn zero_count_writes_nothing() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("out");
        let m = generate_dataset(&tmp.path().join("missing"), &out, &spec(0)).unwrap();
        assert!(m.clips.is_empty() && m.errors.is_empty());
        assert!(!out.exists());
    }

    #[test]
    fn reruns_are_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let src = tmp.path().join("src");
        write_source(&src);
        let a = generate_dataset(&src, &tmp.path().join("a"), &spec(3)).unwrap();
        let b = generate_dataset(&src, &tmp.path().join("b"), &spec(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.clips.len(), 3);
        for c in &a.clips {
            for p in [&c.tilt_x_path, &c.blur_path] {
                let x = fs::read(tmp.path().join("a").join(p)).unwrap();
                let y = fs::read(tmp.path().join("b").join(p)).unwrap();
                assert_eq!(x, y);
            }
            let frames = list_frame_files(&tmp.path().join("a").join(&c.degraded_path)).unwrap();
            assert_eq!(frames.len(), 3);
            assert!((0.0..=1.0).contains(&c.severity));
        }
        let ma = fs::read(tmp.path().join("a/manifest.json")).unwrap();
        let mb = fs::read(tmp.path().join("b/manifest.json")).unwrap();
        assert_eq!(ma, mb);
    }

    #[test]
    fn sources_are_resized() {
        let tmp = tempfile::tempdir().unwrap();
        let src = tmp.path().join("src");
        write_source(&src);
        let sized = DatasetSpec {
            size: Some((24, 20)),
            ..spec(1)
        };
        let m = generate_dataset(&src, &tmp.path().join("out"), &sized).unwrap();
        assert!(m.errors.is_empty(), "{:?}", m.errors);
        let frames = list_frame_files(&tmp.path().join("out").join(&m.clips[0].clean_path)).unwrap();
        let f = load_frame(&frames[0], ColorMode::Luma).unwrap();
        assert_eq!((f.width, f.height), (24, 20));
    }

    #[test]
    fn clip_failures_are_collected() {
        let tmp = tempfile::tempdir().unwrap();
        let src = tmp.path().join("src");
        write_source(&src);
        let out = tmp.path().join("out");
        fs::create_dir_all(&out).unwrap();
        // a plain file where clip 1's directory should go
        fs::write(out.join("clip_000001"), b"x").unwrap();
        let m = generate_dataset(&src, &out, &spec(3)).unwrap();
        assert_eq!(m.clips.len(), 2);
        assert_eq!(m.errors.len(), 1);
        assert_eq!(m.errors[0].clip_id, 1);
    }
}
