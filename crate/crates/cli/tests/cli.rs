use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use strudel::schema::presets;

fn strudel(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_strudel"))
        .args(args)
        .current_dir(dir)
        .env_remove("STRUDEL_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout {}\nstderr {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        if path.is_file() && name != "manifest.json" {
            out.insert(name, fs::read(&path).unwrap());
        }
    }
    out
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn small_dataset(dir: &Path) {
    ok(&strudel(&["spec", "--objects", "3", "--out", "spec.json"], dir));
    ok(&strudel(
        &["generate", "spec.json", "--groups", "2", "--samples", "250", "--seed", "3", "--oracle", "--out", "ds"],
        dir,
    ));
}

#[test]
fn generate_writes_one_pair_per_group_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&strudel(&["spec", "--out", "spec.json"], d));
    for out in ["a", "b"] {
        ok(&strudel(
            &["generate", "spec.json", "--groups", "10", "--samples", "40", "--seed", "8", "--oracle", "--out", out],
            d,
        ));
    }
    let a = files(&d.join("a"));
    assert_eq!(a, files(&d.join("b")));
    for g in 0..10 {
        assert!(a.contains_key(&format!("factors_{g}.csv")) && a.contains_key(&format!("latents_{g}.csv")));
    }
    let manifest = json(&d.join("a/manifest.json"));
    assert_eq!(manifest["command"], "generate");
    assert_eq!(manifest["seeds"][0], 8);
}

#[test]
fn invalid_inputs_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&strudel(&["spec", "--out", "spec.json"], d));
    let out = strudel(&["generate", "spec.json", "--samples", "0", "--out", "x"], d);
    assert_eq!(out.status.code(), Some(2));
    fs::write(d.join("bad.json"), "{\"n_objects\": 2}").unwrap();
    assert_eq!(strudel(&["generate", "bad.json", "--out", "x"], d).status.code(), Some(2));
    assert_eq!(strudel(&["probe", "missing_dir", "--out", "p"], d).status.code(), Some(2));
    assert_eq!(strudel(&["verify", "--schema", "nope", "--draws", "1"], d).status.code(), Some(2));
    assert_eq!(strudel(&["generate"], d).status.code(), Some(2));
}

#[test]
fn probe_records_overrides_and_metrics_reads_them() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_dataset(d);
    ok(&strudel(&["probe", "ds", "--iters", "20", "--out", "p"], d));
    assert_eq!(json(&d.join("p/manifest.json"))["config"]["n_iters"], 20);
    ok(&strudel(&["probe", "ds", "--no-perm", "--out", "q"], d));
    assert_eq!(json(&d.join("q/manifest.json"))["config"]["n_iters"], 0);

    let out = strudel(&["metrics", "p", "--projections", "object,property,identity", "--out", "m"], d);
    ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let report = json(&d.join("m/metrics.json"));
    let c = report["projections"]["object"]["C"].as_f64().unwrap();
    assert!(c > 0.95, "{c}");
    let shown = format!("{:.1}", (c * 1000.0).round() / 10.0);
    assert!(stdout.contains(&shown), "{stdout}");
    let csv = fs::read_to_string(d.join("m/per_factor.csv")).unwrap();
    assert!(csv.starts_with("factor,C(identity),C(object),C(property),I\n"));
    assert_eq!(csv.lines().count(), 1 + 3 * 8);

    ok(&strudel(&["metrics", "q", "--projections", "object", "--out", "n"], d));
    let d_off = json(&d.join("n/metrics.json"))["projections"]["object"]["D"].as_f64().unwrap();
    let d_on = report["projections"]["object"]["D"].as_f64().unwrap();
    assert!(d_on > d_off + 0.2, "{d_on} vs {d_off}");
}

#[test]
fn unknown_projection_lists_valid_names() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_dataset(d);
    ok(&strudel(&["probe", "ds", "--iters", "5", "--out", "p"], d));
    let out = strudel(&["metrics", "p", "--projections", "colour", "--out", "m"], d);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("object, property, identity"), "{err}");
}

fn write_joint(dir: &Path, name: &str, matrix: serde_json::Value) {
    let doc = serde_json::json!({ "schema": presets::toy().to_doc(), "matrix": matrix });
    fs::write(dir.join(name), doc.to_string()).unwrap();
}

#[test]
fn worked_joint_file_gives_golden_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let m = serde_json::json!([
        [0.125, 0.125, 0.0, 0.0],
        [0.125, 0.125, 0.0, 0.0],
        [0.0, 0.0, 0.125, 0.125],
        [0.0, 0.0, 0.125, 0.125]
    ]);
    write_joint(d, "joint.json", m);
    ok(&strudel(
        &["metrics", "--joint-file", "joint.json", "--projections", "object,property,identity", "--out", "m"],
        d,
    ));
    let p = &json(&d.join("m/metrics.json"))["projections"];
    let get = |proj: &str, k: &str| p[proj][k].as_f64().unwrap();
    assert!((get("object", "C") - 1.0).abs() < 1e-12);
    assert!((get("object", "D") - 1.0).abs() < 1e-12);
    assert!(get("property", "C").abs() < 1e-12);
    assert!((get("identity", "C") - 0.5).abs() < 1e-12);
}

#[test]
fn hinton_of_identity_is_a_diagonal_of_equal_squares() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let eye: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| if i == j { 0.25 } else { 0.0 }).collect()).collect();
    write_joint(d, "eye.json", serde_json::json!(eye));
    ok(&strudel(&["hinton", "eye.json", "--out", "a.svg"], d));
    ok(&strudel(&["hinton", "eye.json", "--out", "b.svg"], d));
    let svg = fs::read_to_string(d.join("a.svg")).unwrap();
    assert_eq!(svg, fs::read_to_string(d.join("b.svg")).unwrap());
    let squares: Vec<&str> = svg.lines().filter(|l| l.contains("fill=\"white\"")).collect();
    assert_eq!(squares.len(), 4);
    let width = |l: &str| l.split("width=\"").nth(1).unwrap().split('"').next().unwrap().to_string();
    assert!(squares.iter().all(|l| width(l) == width(squares[0])));
    let xs: Vec<f64> = squares
        .iter()
        .map(|l| l.split("x=\"").nth(1).unwrap().split('"').next().unwrap().parse().unwrap())
        .collect();
    assert!(xs.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn hinton_from_probe_dir_with_projection() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_dataset(d);
    ok(&strudel(&["probe", "ds", "--iters", "10", "--out", "p"], d));
    ok(&strudel(&["hinton", "p", "--projection", "object", "--group", "1", "--out", "figs/o.svg"], d));
    let svg = fs::read_to_string(d.join("figs/o.svg")).unwrap();
    assert!(svg.contains("group 1, object projection"));
    assert_eq!(strudel(&["hinton", "p", "--group", "9", "--out", "x.svg"], d).status.code(), Some(2));
}

#[test]
fn verify_defaults_pass() {
    let tmp = tempfile::tempdir().unwrap();
    let out = strudel(&["verify", "--out", "v"], tmp.path());
    ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(!stdout.contains("FAIL"));
    assert_eq!(stdout.lines().filter(|l| l.ends_with("pass")).count(), 13);
    let report = json(&tmp.path().join("v/verify.json"));
    assert_eq!(report["passed"], true);
    assert_eq!(report["cases"][0]["draws"], 10_000);
}

#[test]
fn thread_count_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_dataset(d);
    for (threads, out) in [("1", "p1"), ("3", "p3")] {
        let status = Command::new(env!("CARGO_BIN_EXE_strudel"))
            .args(["probe", "ds", "--iters", "10", "--out", out])
            .current_dir(d)
            .env("STRUDEL_THREADS", threads)
            .output()
            .unwrap();
        ok(&status);
    }
    assert_eq!(files(&d.join("p1")), files(&d.join("p3")));
    let bad = Command::new(env!("CARGO_BIN_EXE_strudel"))
        .args(["verify", "--draws", "1"])
        .current_dir(d)
        .env("STRUDEL_THREADS", "lots")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn ablate_emits_the_two_by_two_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = strudel(
        &["ablate", "--objects", "3", "--groups", "2", "--samples", "400", "--iters", "20", "--out", "ab"],
        d,
    );
    ok(&out);
    let csv = fs::read_to_string(d.join("ab/ablation.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    let object_d = |a: &str, l: &str| -> f64 {
        rows.iter().find(|r| r[0] == a && r[1] == l).unwrap()[3].parse().unwrap()
    };
    assert!(object_d("+", "+") > object_d("-", "+"));
    assert!(object_d("+", "-") > object_d("-", "-"));
    assert!(d.join("ab/manifest.json").exists());
}

#[test]
fn run_writes_all_stages() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&strudel(
        &["run", "--objects", "2", "--groups", "1", "--samples", "300", "--iters", "10", "--seed", "2", "--out", "r"],
        d,
    ));
    for f in ["dataset/factors_0.csv", "probe/group_0.json", "metrics/metrics.json", "metrics/per_factor.csv"] {
        assert!(d.join("r").join(f).exists(), "{f}");
    }
    let outputs = json(&d.join("r/manifest.json"))["outputs"].as_array().unwrap().len();
    assert!(outputs > 5);
}
