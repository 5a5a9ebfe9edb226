mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::*;
use scda::stain::{synthesize_stain_image, StainProfile};

fn scda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scda")).args(args).env("SCDA_THREADS", "2").output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = scda(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: PathBuf) -> String {
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn synth(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    ok(&["synth", "--out", s(&data)]);
    data.join("dataset.json")
}

#[test]
fn synth_then_grid() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let out = dir.path().join("grid");
    ok(&["grid", "--data", s(&data), "--out", s(&out), "--steps", "100"]);
    let report = read(out.join("report.csv"));
    assert!(!report.contains('\r'));
    let mut lines = report.lines();
    assert_eq!(lines.next().unwrap().split(',').next(), Some("method"));
    // default 5 seeds x 3 training groups x 2 methods x 3 test groups
    assert_eq!(lines.count(), 5 * 3 * 2 * 3);
    let agg = read(out.join("report_aggregate.csv"));
    assert_eq!(agg.lines().next().unwrap(), "method,train_centers,test_centers,k,n,mean_bacc,std_bacc");
    assert_eq!(agg.lines().count(), 1 + 3 * 2 * 3);
    assert!(std::fs::read_dir(&out).unwrap().any(|e| e
        .unwrap()
        .file_name()
        .to_string_lossy()
        .starts_with("confusion_")));
}

#[test]
fn fewshot_cardinality() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let cfg = dir.path().join("fs.toml");
    std::fs::write(&cfg, "[fewshot]\nn_seeds = 2\n").unwrap();
    let out = dir.path().join("fs");
    ok(&["fewshot", "--data", s(&data), "--out", s(&out), "--config", s(&cfg), "--k", "2,10", "--steps", "100"]);
    let agg = read(out.join("report_aggregate.csv"));
    let rows: Vec<Vec<&str>> = agg.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let shot_rows: Vec<_> = rows.iter().filter(|r| r[3] == "2" || r[3] == "10").collect();
    // 2 k values x 2 test centers, each averaged over 2 seeds
    assert_eq!(shot_rows.len(), 4);
    assert!(shot_rows.iter().all(|r| r[4] == "2"));
    assert!(rows.iter().any(|r| r[0] == "raw" && r[3] == "0"));
    assert!(rows.iter().any(|r| r[0] == "scda" && r[3] == "all"));
    assert!(rows.iter().any(|r| r[0] == "raw" && r[3] == "all"));
}

#[test]
fn reruns_are_identical_and_config_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    let args = |out: &Path| {
        vec![
            "grid".to_string(),
            "--data".into(),
            s(&data).into(),
            "--out".into(),
            s(out).into(),
            "--seed".into(),
            "3".into(),
            "--steps".into(),
            "80".into(),
        ]
    };
    ok(&args(&a).iter().map(String::as_str).collect::<Vec<_>>());
    ok(&args(&b).iter().map(String::as_str).collect::<Vec<_>>());
    let dumped = a.join("config.toml");
    ok(&["grid", "--data", s(&data), "--out", s(&c), "--config", s(&dumped)]);
    for f in ["report.csv", "report_aggregate.csv", "config.toml"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f}");
        assert_eq!(read(a.join(f)), read(c.join(f)), "{f}");
    }
    // same directory twice
    ok(&args(&a).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(read(a.join("report.csv")), read(b.join("report.csv")));
}

#[test]
fn train_transform_eval_project() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let t = dir.path().join("train");
    ok(&["train", "--data", s(&data), "--out", s(&t), "--steps", "60"]);
    let trace = read(t.join("loss_trace.csv"));
    assert_eq!(trace.lines().next(), Some("step,loss,scaled_loss,anchors_used"));
    assert_eq!(trace.lines().count(), 61);
    let head = t.join("head.scdh");
    let e = dir.path().join("eval");
    ok(&["eval", "--data", s(&data), "--head", s(&head), "--out", s(&e)]);
    assert!(read(e.join("report.csv")).lines().skip(1).all(|l| l.starts_with("scda,")));
    let tr = dir.path().join("transformed");
    ok(&["transform", "--data", s(&data), "--head", s(&head), "--out", s(&tr)]);
    let (p1, p2) = (dir.path().join("p1"), dir.path().join("p2"));
    ok(&["project2d", "--data", s(&data), "--head", s(&head), "--out", s(&p1)]);
    ok(&["project2d", "--data", s(&tr.join("dataset.json")), "--out", s(&p2), "--no-svg"]);
    // transformed payloads are stored as f32, so compare numerically
    let (c1, c2) = (read(p1.join("projection.csv")), read(p2.join("projection.csv")));
    assert_eq!(c1.lines().count(), c2.lines().count());
    for (l1, l2) in c1.lines().zip(c2.lines()).skip(1) {
        let (f1, f2): (Vec<&str>, Vec<&str>) = (l1.split(',').collect(), l2.split(',').collect());
        assert_eq!(f1[..3], f2[..3]);
        for j in 3..5 {
            assert!((f1[j].parse::<f64>().unwrap() - f2[j].parse::<f64>().unwrap()).abs() < 1e-5, "{l1} vs {l2}");
        }
    }
    let p3 = dir.path().join("p3");
    ok(&["project2d", "--data", s(&data), "--head", s(&head), "--out", s(&p3)]);
    assert_eq!(c1, read(p3.join("projection.csv")));
    assert!(read(p1.join("projection.svg")).starts_with("<svg"));
    assert!(!p2.join("projection.svg").exists());
}

#[test]
fn split_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let (sp, ag) = (dir.path().join("split"), dir.path().join("agg"));
    ok(&["aggregate", "--data", s(&data), "--out", s(&ag)]);
    ok(&["split", "--data", s(&ag.join("dataset.json")), "--out", s(&sp), "--seed", "7"]);
    let (m, z) = scda::load_embeddings(&sp.join("dataset.json")).unwrap();
    assert_eq!(z.rows(), m.slides.len());
    assert!(m.splits.is_some());
}

#[test]
fn stain_commands() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(80);
    let write = |name: &str, r: &mut rand_chacha::ChaCha8Rng, p: &StainProfile| {
        let (h, e) = stain_fields(r, 64 * 64, [1.2, 1.0]);
        let path = dir.path().join(name);
        synthesize_stain_image(p, &h, &e, 64, 64, 255.0).unwrap().save_ppm(&path).unwrap();
        path
    };
    let source = write("source.ppm", &mut r, &reference_stains());
    let target = write("target.ppm", &mut r, &reference_stains());
    let fit = dir.path().join("fit");
    ok(&["stain-fit", "--image", s(&source), "--out", s(&fit)]);
    let profile = StainProfile::load_json(&fit.join("profile.json")).unwrap();
    let truth = reference_stains();
    let cos: f64 = (0..3).map(|c| profile.stain_vectors[0][c] * truth.stain_vectors[0][c]).sum();
    assert!(cos > 0.99);
    let (n1, n2) = (dir.path().join("n1"), dir.path().join("n2"));
    ok(&["stain-normalize", "--image", s(&source), "--target", s(&target), "--out", s(&n1)]);
    ok(&["stain-normalize", "--image", s(&source), "--target", s(&n1.join("target_profile.json")), "--out", s(&n2)]);
    assert_eq!(std::fs::read(n1.join("normalized.ppm")).unwrap(), std::fs::read(n2.join("normalized.ppm")).unwrap());
}

#[test]
fn failures_emit_a_json_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let out = scda(&["eval", "--data", s(&missing), "--out", s(&dir.path().join("e"))]);
    assert!(!out.status.success());
    let line = String::from_utf8(out.stderr).unwrap();
    let v: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    assert_eq!(v["status"], "error");
    assert!(v["kind"].is_string() && v["message"].is_string());

    let out = scda(&["train", "--data", s(&missing), "--tau", "-1", "--out", s(&dir.path().join("t"))]);
    assert!(!out.status.success());
    let v: serde_json::Value =
        serde_json::from_str(String::from_utf8(out.stderr).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(v["status"], "error");

    let out = scda(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
    let v: serde_json::Value =
        serde_json::from_str(String::from_utf8(out.stderr).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(v["kind"], "Usage");
}
