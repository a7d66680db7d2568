use std::path::Path;
use std::process::{Command, Output};

use loopkit::dataset::{read_jsonl, FrameLabels};
use loopkit::geometry::polygon_iou;
use loopkit::OrientedLabel;

fn loopkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loopkit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = loopkit(args);
    assert!(
        out.status.success(),
        "loopkit {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn synth(dir: &Path, frames: usize, extra: &[&str]) {
    let frames = frames.to_string();
    let mut args = vec!["synth", "--out", dir.to_str().unwrap(), "--frames", &frames, "--seed", "7"];
    args.extend_from_slice(extra);
    ok(&args);
}

fn read_labels(path: &Path) -> Vec<FrameLabels> {
    read_jsonl(std::io::BufReader::new(std::fs::File::open(path).unwrap())).unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_owned()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = loopkit(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out = loopkit(&["eval", "--gt"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn operation_errors_exit_one_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = loopkit(&[
        "--json",
        "propagate",
        "--manifest",
        &p(dir.path(), "missing.json"),
        "--seed",
        &p(dir.path(), "seed.json"),
        "--out",
        &p(dir.path(), "out.jsonl"),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    assert!(err["error"].is_string());
    assert!(err["message"].as_str().unwrap().contains("missing.json"));

    let out = loopkit(&["--json", "servo", "--theta0", "10", "--dt", "0"]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "invalid");
}

#[test]
fn zero_noise_eval_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, 8, &[]);
    ok(&[
        "eval",
        "--gt",
        &p(d, "labels.jsonl"),
        "--pred",
        &p(d, "preds.jsonl"),
        "--catalog",
        &p(d, "catalog.json"),
        "--theta-hat",
        "10",
        "--out",
        &p(d, "report.json"),
        "--csv",
        &p(d, "report.csv"),
    ]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["map"], 1.0);
    for class in report["classes"].as_array().unwrap() {
        if class["gt_count"].as_u64().unwrap() > 0 {
            assert_eq!(class["precision"], 1.0);
            assert_eq!(class["recall"], 1.0);
        }
    }
    let csv = std::fs::read_to_string(d.join("report.csv")).unwrap();
    assert!(csv.starts_with("object,group,precision,recall,fscore,iou,oiou,ap\n"));
}

#[test]
fn noisy_eval_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, 6, &["--center-sigma", "2", "--miss-prob", "0.05", "--clutter-rate", "0.5"]);
    let run = |name: &str| {
        ok(&[
            "eval",
            "--gt",
            &p(d, "labels.jsonl"),
            "--pred",
            &p(d, "preds.jsonl"),
            "--catalog",
            &p(d, "catalog.json"),
            "--out",
            &p(d, name),
        ]);
        std::fs::read(d.join(name)).unwrap()
    };
    let a = run("a.json");
    assert_eq!(a, run("b.json"));
    let report: serde_json::Value = serde_json::from_slice(&a).unwrap();
    let map = report["map"].as_f64().unwrap();
    assert!(map < 1.0 && map > 0.5, "mAP {map}");
}

#[test]
fn synth_is_byte_for_byte_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let noise = ["--center-sigma", "1.5", "--flip-prob", "0.1", "--clutter-rate", "1"];
    synth(a.path(), 4, &noise);
    synth(b.path(), 4, &noise);
    for name in ["manifest.json", "catalog.json", "labels.jsonl", "seed.json", "preds.jsonl", "frames/frame_0003.png"] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn encode_then_decode_keeps_classes_and_angles() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, 3, &[]);
    ok(&["encode", "--labels", &p(d, "labels.jsonl"), "--theta-hat", "5", "--out", &p(d, "enc.jsonl")]);
    ok(&[
        "decode",
        "--preds",
        &p(d, "enc.jsonl"),
        "--catalog",
        &p(d, "catalog.json"),
        "--theta-hat",
        "5",
        "--out",
        &p(d, "dec.jsonl"),
    ]);
    let gt = read_labels(&d.join("labels.jsonl"));
    let dec = read_labels(&d.join("dec.jsonl"));
    assert_eq!(gt.len(), dec.len());
    for (g, r) in gt.iter().zip(&dec) {
        assert_eq!(g.frame, r.frame);
        for (a, b) in g.labels.iter().zip(&r.labels) {
            assert_eq!(a.class_id, b.class_id);
            let diff = (a.theta_deg - b.theta_deg).rem_euclid(360.0);
            assert!(diff.min(360.0 - diff) <= 2.5 + 1e-9, "{} vs {}", a.theta_deg, b.theta_deg);
        }
    }
}

#[test]
fn propagate_follows_the_analytic_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, 100, &[]);
    ok(&["propagate", "--manifest", &p(d, "manifest.json"), "--seed", &p(d, "seed.json"), "--out", &p(d, "prop.jsonl")]);
    let gt = read_labels(&d.join("labels.jsonl"));
    let prop = read_labels(&d.join("prop.jsonl"));
    assert_eq!(prop.len(), 100);

    let mut good_frames = 0;
    for (g, r) in gt.iter().zip(&prop) {
        assert_eq!(g.frame, r.frame);
        let truth: Vec<OrientedLabel> = g.to_labels().unwrap();
        let found: Vec<OrientedLabel> = r.to_labels().unwrap();
        let ious: Vec<f64> = truth
            .iter()
            .map(|t| {
                found
                    .iter()
                    .find(|l| l.class_id == t.class_id)
                    .map_or(0.0, |l| polygon_iou(&l.obb, &t.obb))
            })
            .collect();
        if ious.iter().sum::<f64>() / ious.len() as f64 >= 0.9 {
            good_frames += 1;
        }
    }
    assert!(good_frames >= 95, "{good_frames} frames with IoU >= 0.9");

    let (truth, found) = (gt[99].to_labels().unwrap(), prop[99].to_labels().unwrap());
    let mut errors = Vec::new();
    for t in &truth {
        let l = found.iter().find(|l| l.class_id == t.class_id).expect("label still tracked");
        for (a, b) in l.obb.vertices().iter().zip(t.obb.vertices()) {
            errors.push(a.distance(*b));
        }
    }
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    assert!(mean <= 3.0, "mean vertex error {mean}");
}

#[test]
fn servo_writes_a_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = p(dir.path(), "traj.csv");
    let out = ok(&["servo", "--theta0", "150", "--symmetric", "--gains", "1.0,1.0", "--dt", "0.05", "--out", &out_path]);
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["converged"], true);
    // the symmetric law settles on the nearer of 0 and 180 degrees
    let theta = summary["theta_deg"].as_f64().unwrap();
    assert!((theta - 180.0).abs() <= 0.5, "{theta}");

    let csv = std::fs::read_to_string(&out_path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,ex,ey,theta_deg,e_theta"));
    let first: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(first[0], 0.0);
    assert!((first[3] - 150.0).abs() < 1e-9);
    assert_eq!(csv.lines().count(), summary["steps"].as_u64().unwrap() as usize + 2);
}
