use std::fs;
use std::path::Path;
use std::process::Command;

use ads_cli::{run, EXIT_DEGRADED, EXIT_OK, EXIT_PIPELINE, EXIT_USAGE, OUTPUT_DIR_ENV};
use ads_core::alignment::Correspondences;
use ads_core::imaging::{write_image, write_mask};
use ads_core::synthscene::{
    oracle_correspondences, render, single_factor_pairs, DatasetManifest, Factor, SceneConfig,
    SceneDescriptor,
};

fn cli(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut full = vec!["ads"];
    full.extend_from_slice(args);
    let code = run(full, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a rendered pair plus oracle keypoints; returns their paths.
fn write_pair(dir: &Path, src: &SceneDescriptor, tar: &SceneDescriptor) -> [String; 4] {
    let cfg = SceneConfig::default();
    let a = render(src, 64, 64, &cfg).unwrap();
    let b = render(tar, 64, 64, &cfg).unwrap();
    let names = ["src.ppm", "tar.png", "mask.pgm", "kp.json"].map(|n| dir.join(n));
    write_image(&names[0], &a.image).unwrap();
    write_image(&names[1], &b.image).unwrap();
    write_mask(&names[2], &a.mask).unwrap();
    oracle_correspondences(src, tar, &cfg)
        .save(&names[3])
        .unwrap();
    names.map(|p| p.display().to_string())
}

#[test]
fn generate_writes_manifest_and_is_repeatable() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let (code, out, err) = cli(&[
            "generate",
            "--count",
            "20",
            "--pairs",
            "10",
            "--seed",
            "7",
            "--size",
            "32",
            "--out",
            s(d.path()),
        ]);
        assert_eq!(code, EXIT_OK, "{err}");
        assert!(out.trim().ends_with("manifest.jsonl"));
    }
    let ma = fs::read(a.path().join("manifest.jsonl")).unwrap();
    assert_eq!(ma, fs::read(b.path().join("manifest.jsonl")).unwrap());
    assert_eq!(String::from_utf8(ma).unwrap().lines().count(), 10);
}

#[test]
fn generate_rejects_too_many_pairs() {
    let d = tempfile::tempdir().unwrap();
    let (code, _, err) = cli(&[
        "generate",
        "--count",
        "20",
        "--pairs",
        "11",
        "--out",
        s(d.path()),
    ]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("invalid-argument"), "{err}");
    let (code, _, _) = cli(&["generate", "--size", "0x4", "--out", s(d.path())]);
    assert_eq!(code, EXIT_USAGE);
}

#[test]
fn explain_identical_images_prints_identity_summary() {
    let d = tempfile::tempdir().unwrap();
    let desc = SceneDescriptor::canonical();
    let [src, _, mask, kp] = write_pair(d.path(), &desc, &desc);
    let out = d.path().join("out");
    let (code, stdout, err) = cli(&[
        "explain",
        "--source",
        &src,
        "--target",
        &src,
        "--mask",
        &mask,
        "--keypoints",
        &kp,
        "--emit-intermediates",
        "--out",
        s(&out),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert_eq!(
        stdout.trim(),
        "Align: ŝ=1.00, t̂=0.00, θ̂=0.0°; Deform: d̂=0.00; Subtract: â=0.00"
    );
    for f in [
        "report.json",
        "transforms.json",
        "aligned.png",
        "aligned_mask.png",
        "deformed.png",
        "deformed_mask.png",
        "heatmap.png",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    for key in [
        "s_hat",
        "sx",
        "sy",
        "t_hat",
        "tx",
        "ty",
        "theta_deg",
        "shear",
        "d_hat",
        "a_hat",
        "mse_baseline",
        "residual_kp",
        "provenance",
    ] {
        assert!(report.get(key).is_some(), "{key}");
    }
    assert_eq!(report["provenance"], "estimated");
}

#[test]
fn explain_rotation_pair_reports_angle() {
    let cfg = SceneConfig::default();
    let (src, tar) = single_factor_pairs(Factor::Rotation, 1, 3, &cfg)[0];
    let d = tempfile::tempdir().unwrap();
    let [a, b, mask, kp] = write_pair(d.path(), &src, &tar);
    let (code, stdout, err) = cli(&[
        "explain",
        "--source",
        &a,
        "--target",
        &b,
        "--mask",
        &mask,
        "--keypoints",
        &kp,
        "--out",
        s(&d.path().join("o")),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    let theta: f64 = stdout
        .split("θ̂=")
        .nth(1)
        .unwrap()
        .split('°')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!((theta - (tar.theta - src.theta)).abs() <= 0.5, "{stdout}");
}

#[test]
fn explain_with_imported_transforms_matches_estimation() {
    let cfg = SceneConfig::default();
    let src = SceneDescriptor {
        d: 1.5,
        sx: 0.9,
        sy: 0.9,
        theta: 5.0,
        tx: 0.1,
        ty: -0.05,
        a: 0.2,
        background_seed: 3,
    };
    let tar = SceneDescriptor {
        d: -2.0,
        sx: 1.1,
        sy: 1.1,
        theta: -8.0,
        tx: -0.1,
        ty: 0.1,
        a: 0.6,
        ..src
    };
    let _ = cfg;
    let d = tempfile::tempdir().unwrap();
    let [a, b, mask, kp] = write_pair(d.path(), &src, &tar);
    let (o1, o2) = (d.path().join("est"), d.path().join("imp"));
    let (code, line1, err) = cli(&[
        "explain",
        "--source",
        &a,
        "--target",
        &b,
        "--mask",
        &mask,
        "--keypoints",
        &kp,
        "--out",
        s(&o1),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    let transforms = o1.join("transforms.json");
    let (code, line2, err) = cli(&[
        "explain",
        "--source",
        &a,
        "--target",
        &b,
        "--mask",
        &mask,
        "--transforms",
        s(&transforms),
        "--out",
        s(&o2),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert_eq!(line1, line2);
    let load = |p: &Path| -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(p.join("report.json")).unwrap()).unwrap()
    };
    let (mut r1, mut r2) = (load(&o1), load(&o2));
    assert_eq!(r2["provenance"], "imported");
    for r in [&mut r1, &mut r2] {
        let m = r.as_object_mut().unwrap();
        m.remove("provenance");
        m.remove("residual_kp");
    }
    assert_eq!(r1, r2);
    assert_eq!(
        fs::read(o1.join("transforms.json")).unwrap(),
        fs::read(o2.join("transforms.json")).unwrap()
    );
}

#[test]
fn explain_accepts_pixel_keypoints() {
    let d = tempfile::tempdir().unwrap();
    let desc = SceneDescriptor::canonical();
    let [src, _, _, _] = write_pair(d.path(), &desc, &desc);
    let kp = d.path().join("px.json");
    let pts = [[10.0, 10.0], [50.0, 12.0], [30.0, 55.0], [5.0, 40.0]];
    Correspondences::from_points(&pts, &pts)
        .unwrap()
        .save(&kp)
        .unwrap();
    let (code, stdout, err) = cli(&[
        "explain",
        "--source",
        &src,
        "--target",
        &src,
        "--keypoints",
        s(&kp),
        "--pixel-units",
        "--out",
        s(&d.path().join("o")),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(stdout.contains("ŝ=1.00, t̂=0.00"));
}

#[test]
fn explain_error_paths() {
    let d = tempfile::tempdir().unwrap();
    let desc = SceneDescriptor::canonical();
    let [src, tar, mask, _] = write_pair(d.path(), &desc, &desc);
    let out = d.path().join("o");

    let (code, _, _) = cli(&["explain", "--source", &src, "--target", &tar]);
    assert_eq!(code, EXIT_USAGE, "neither keypoints nor transforms");

    let (code, _, err) = cli(&[
        "explain",
        "--source",
        "missing.png",
        "--target",
        &tar,
        "--keypoints",
        "k.json",
        "--out",
        s(&out),
    ]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("io"), "{err}");

    let line = d.path().join("line.json");
    let pts: Vec<[f64; 2]> = (0..6).map(|i| [i as f64 * 0.1, i as f64 * 0.1]).collect();
    Correspondences::from_points(&pts, &pts)
        .unwrap()
        .save(&line)
        .unwrap();
    let (code, _, err) = cli(&[
        "explain",
        "--source",
        &src,
        "--target",
        &tar,
        "--mask",
        &mask,
        "--keypoints",
        s(&line),
        "--out",
        s(&out),
    ]);
    assert_eq!(code, EXIT_PIPELINE);
    assert!(err.contains("degenerate-correspondences"), "{err}");
    assert!(!out.join("report.json").exists());
}

fn small_dataset(dir: &Path, pairs: usize) -> std::path::PathBuf {
    let count = (2 * pairs).to_string();
    let pairs = pairs.to_string();
    let (code, _, err) = cli(&[
        "generate",
        "--count",
        &count,
        "--pairs",
        &pairs,
        "--seed",
        "1",
        "--size",
        "32",
        "--out",
        s(dir),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    dir.join("manifest.jsonl")
}

#[test]
fn evaluate_toy_manifest_writes_all_outputs() {
    let d = tempfile::tempdir().unwrap();
    let manifest = small_dataset(&d.path().join("data"), 2);
    let out = d.path().join("eval");
    let (code, stdout, err) = cli(&[
        "evaluate",
        "--manifest",
        s(&manifest),
        "--out",
        s(&out),
        "--jobs",
        "2",
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(stdout.starts_with(' ') && stdout.contains("Ours"));
    let csv = fs::read_to_string(out.join("correlations.csv")).unwrap();
    let dims: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(dims, ["d", "sx", "sy", "theta", "tx", "ty", "a"]);
    for f in [
        "table.txt",
        "correlations_detail.csv",
        "reports.jsonl",
        "run.json",
        "scatter_a_loglog.csv",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    for dim in dims {
        assert!(out.join(format!("scatter_{dim}.csv")).is_file());
    }
}

#[test]
fn evaluate_names_corrupted_manifest_line() {
    let d = tempfile::tempdir().unwrap();
    let manifest = small_dataset(d.path(), 3);
    let text = fs::read_to_string(&manifest).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[2] = "{\"index\": oops}";
    fs::write(&manifest, lines.join("\n")).unwrap();
    let (code, _, err) = cli(&[
        "evaluate",
        "--manifest",
        s(&manifest),
        "--out",
        s(&d.path().join("e")),
    ]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn evaluate_flags_degraded_runs() {
    let d = tempfile::tempdir().unwrap();
    let manifest = small_dataset(d.path(), 4);
    let m = DatasetManifest::load(&manifest).unwrap();
    let pts: Vec<[f64; 2]> = (0..6).map(|i| [i as f64 * 0.1, 0.2]).collect();
    Correspondences::from_points(&pts, &pts)
        .unwrap()
        .save(m.resolve(&m.entries[0].keypoints))
        .unwrap();
    let out = d.path().join("e");
    let (code, _, err) = cli(&["evaluate", "--manifest", s(&manifest), "--out", s(&out)]);
    assert_eq!(code, EXIT_DEGRADED, "{err}");
    assert!(out.join("correlations.csv").is_file());
    let run: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["failures"], 1);
    assert_eq!(run["valid"], false);
}

#[test]
fn binary_uses_output_dir_from_environment() {
    let d = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_ads"))
        .args(["generate", "--count", "4", "--pairs", "2", "--size", "16"])
        .env(OUTPUT_DIR_ENV, d.path())
        .output()
        .unwrap();
    assert!(status.status.success());
    assert!(d.path().join("manifest.jsonl").is_file());

    let bad = Command::new(env!("CARGO_BIN_EXE_ads"))
        .arg("frobnicate")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(EXIT_USAGE));
}
