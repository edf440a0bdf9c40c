use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use turbkit_core::videocore::{save_sequence, Frame, Plane, VideoSequence};

fn turbkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_turbkit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_clip(dir: &Path, w: usize, h: usize, n: usize) {
    let frames = (0..n)
        .map(|t| {
            Frame::from_plane(Plane::from_fn(w, h, |x, y| {
                let v = ((x as f32 * 0.3 + t as f32 * 0.2).sin() * (y as f32 * 0.21).cos()) * 0.35 + 0.5;
                v.clamp(0.0, 1.0)
            }))
        })
        .collect();
    save_sequence(&VideoSequence::new(frames).unwrap(), dir).unwrap();
}

#[test]
fn prints_default_config() {
    let out = turbkit(&["config"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("version = 1"));
    assert!(text.contains("[stages]"));
}

#[test]
fn config_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let clip = tmp.path().join("clip");
    write_clip(&clip, 32, 32, 4);
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "version = 99\n").unwrap();
    let out = turbkit(&["run", "--config", s(&cfg), "--input", s(&clip), "--output", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let missing = turbkit(&["run", "--input", s(&tmp.path().join("nope")), "--output", s(&tmp.path().join("o"))]);
    assert_eq!(missing.status.code(), Some(2));
    let no_output = turbkit(&["run", "--input", s(&clip)]);
    assert_eq!(no_output.status.code(), Some(2));
}

#[test]
fn stage_failures_exit_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    let clip = tmp.path().join("clip");
    write_clip(&clip, 24, 24, 3);
    let cfg = tmp.path().join("cfg.toml");
    fs::write(&cfg, "[stabilize]\ncrop_border = 40\n").unwrap();
    let out = turbkit(&["run", "--config", s(&cfg), "--input", s(&clip), "--output", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stabilize"));
}

#[test]
fn simulate_run_evaluate_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let clean = tmp.path().join("clean");
    write_clip(&clean, 48, 40, 6);
    let sim = tmp.path().join("sim");
    let out = turbkit(&["simulate", "--input", s(&clean), "--output", s(&sim), "--severity", "0.3", "--seed", "4", "--color", "luma"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(sim.join("tilt_x.raw").is_file());
    let cfg = tmp.path().join("cfg.toml");
    fs::write(&cfg, "[stabilize]\ncrop_border = 4\n[segment]\ncandidates = [2, 4]\n").unwrap();
    let restored = tmp.path().join("restored");
    let out = turbkit(&[
        "run", "--config", s(&cfg), "--input", s(&sim.join("degraded")), "--output", s(&restored), "--color", "luma",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("stack") && table.contains("end-to-end"));
    assert_eq!(fs::read_dir(restored.join("frames")).unwrap().count(), 6);
    assert_eq!(fs::read_dir(restored.join("masks")).unwrap().count(), 6);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(restored.join("report.json")).unwrap()).unwrap();
    assert!(report["latency"]["end_to_end_per_frame"].is_number());

    let csv = tmp.path().join("eval.csv");
    let out = turbkit(&[
        "evaluate", "--restored", s(&restored.join("frames")), "--reference", s(&clean), "--masks",
        s(&restored.join("masks")), s(&restored.join("masks")), "--csv", s(&csv),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary["mean_psnr"]["db"].is_number());
    assert_eq!(summary["mean_iou"], 1.0);
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("frame,psnr,ssim,iou,line_deviation\n"));
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn identical_frames_report_infinite_psnr() {
    let tmp = tempfile::tempdir().unwrap();
    let clip = tmp.path().join("clip");
    write_clip(&clip, 24, 24, 2);
    let out = turbkit(&["evaluate", "--restored", s(&clip), "--reference", s(&clip)]);
    assert!(out.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary["mean_psnr"]["db"].is_null());
    assert_eq!(summary["mean_psnr"]["identical"], true);
}

#[test]
fn metric_selection() {
    let tmp = tempfile::tempdir().unwrap();
    let clip = tmp.path().join("clip");
    write_clip(&clip, 24, 24, 2);
    let out = turbkit(&["evaluate", "--restored", s(&clip), "--reference", s(&clip), "--metrics", "ssim"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary["mean_psnr"].is_null());
    assert_eq!(summary["mean_ssim"], 1.0);
    let out = turbkit(&["evaluate", "--restored", s(&clip), "--metrics", "psnr,iou"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn individual_stages_write_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let clip = tmp.path().join("clip");
    write_clip(&clip, 40, 32, 5);
    let st = tmp.path().join("stab");
    assert!(turbkit(&["stabilize", "--input", s(&clip), "--output", s(&st), "--border", "4"]).status.success());
    let offsets = fs::read_to_string(st.join("offsets.csv")).unwrap();
    assert_eq!(offsets.lines().count(), 6);

    let flow = tmp.path().join("flow");
    assert!(turbkit(&["flow", "--input", s(&clip), "--output", s(&flow), "--color", "luma"]).status.success());
    assert_eq!(fs::read_dir(&flow).unwrap().count(), 4);

    let seg = tmp.path().join("seg");
    let out = turbkit(&[
        "segment", "--input", s(&clip), "--output", s(&seg), "--candidates", "2,4", "--color", "luma", "--flow-dir",
        s(&flow),
    ]);
    // only consecutive pairs were precomputed, so N = 4 needs missing fields
    assert_eq!(out.status.code(), Some(3));
    let out = turbkit(&["segment", "--input", s(&clip), "--output", s(&seg), "--candidates", "2,4", "--color", "luma"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fs::read_to_string(seg.join("segment.csv")).unwrap().starts_with("frame,n_opt"));

    let out = turbkit(&["cn2", "--input", s(&clip), "--masks", s(&seg)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(r["cn2"].as_f64().unwrap() >= 0.0);

    let bg = tmp.path().join("bg");
    let out = turbkit(&["restore-bg", "--input", s(&clip), "--output", s(&bg), "--sigma", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_dir(bg.join("frames")).unwrap().count(), 5);
}

#[test]
fn dataset_generation_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("src");
    write_clip(&src.join("a"), 32, 24, 3);
    let mut manifests = Vec::new();
    for name in ["d1", "d2"] {
        let out_dir = tmp.path().join(name);
        let out = turbkit(&[
            "gen-dataset", "--source", s(&src), "--output", s(&out_dir), "--count", "2", "--frames", "3", "--seed", "11",
            "--size", "24x20",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        manifests.push(fs::read(out_dir.join("manifest.json")).unwrap());
    }
    assert_eq!(manifests[0], manifests[1]);
}
