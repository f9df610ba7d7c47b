use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn oboi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oboi"))
        .args(args)
        .env_remove("OBOI_THREADS")
        .output()
        .expect("failed to run oboi")
}

fn ok(args: &[&str]) -> String {
    let out = oboi(args);
    assert!(
        out.status.success(),
        "oboi {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Two instances per object with equal means and different spreads.
const VARIANCE_ONLY: &str = r#"{
    "objects": 3, "instances_per_object": 2, "sequences": 3, "samples_per_cell": 30,
    "feature_dims": [6, 6, 16],
    "instance_profiles": [
        {"mean_shift": 0.0, "std": 1.0, "asymmetry": 0.0},
        {"mean_shift": 0.0, "std": 2.0, "asymmetry": 0.0}
    ]
}"#;

fn dataset(dir: &Path, spec: &str, seed: u64) -> PathBuf {
    let spec_path = dir.join("spec.json");
    fs::write(&spec_path, spec).unwrap();
    let data = dir.join("data");
    ok(&[
        "gen-synthetic",
        s(&spec_path),
        s(&data),
        "--seed",
        &seed.to_string(),
    ]);
    data.join("manifest.json")
}

fn acc_i(report: &str) -> f64 {
    let v: Value = serde_json::from_str(report).unwrap();
    v["acc_i"].as_f64().unwrap()
}

fn build_and_evaluate(dir: &Path, manifest: &Path, name: &str, flags: &[&str]) -> f64 {
    let bag = dir.join(name);
    let mut args = vec!["build-bag", s(manifest), s(&bag)];
    args.extend_from_slice(flags);
    ok(&args);
    acc_i(&ok(&["evaluate", s(&bag)]))
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), VARIANCE_ONLY, 1);
    let summary: Value = serde_json::from_str(&ok(&["validate", s(&manifest)])).unwrap();
    assert_eq!(summary["problems"], Value::Array(vec![]));

    let bag = dir.path().join("bag");
    let built: Value = serde_json::from_str(&ok(&[
        "build-bag",
        s(&manifest),
        s(&bag),
        "--protocol",
        "kshot",
        "--k",
        "2",
        "--p",
        "2",
        "--seed",
        "4",
    ]))
    .unwrap();
    assert_eq!(built["instances"], 6);
    assert_eq!(built["support"], 6 * 3 * 2);
    assert!(bag.join("bag.json").is_file());
    assert!(bag.join("episode.json").is_file());
    ok(&["validate", s(&bag)]);

    let report: Value =
        serde_json::from_str(&ok(&["evaluate", s(&bag), "--split", "val"])).unwrap();
    assert_eq!(report["config"]["split"], "val");
    assert_eq!(report["config"]["protocol"]["kind"], "kshot");
    let table = ok(&["evaluate", s(&bag), "--table"]);
    assert!(table.contains("Acc_i"));
}

#[test]
fn outputs_are_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), VARIANCE_ONLY, 2);
    let run = |name: &str, threads: &str| {
        let bag = dir.path().join(name);
        ok(&[
            "--threads",
            threads,
            "build-bag",
            s(&manifest),
            s(&bag),
            "--standardize",
            "--head",
            "simpleshot",
        ]);
        let report = ok(&["--threads", threads, "evaluate", s(&bag)]);
        let mut files = Vec::new();
        for rel in [
            "bag.json",
            "episode.json",
            "prototypes/0000.bin",
            "stats/center.bin",
            "stats/scale.bin",
        ] {
            files.push(fs::read(bag.join(rel)).unwrap());
        }
        (report, files)
    };
    let a = run("a", "1");
    let b = run("b", "1");
    let c = run("c", "8");
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn thread_count_env_fallback_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), VARIANCE_ONLY, 3);
    let out = Command::new(env!("CARGO_BIN_EXE_oboi"))
        .args(["build-bag", s(&manifest), s(&dir.path().join("bag"))])
        .env("OBOI_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());

    for args in [
        vec!["build-bag"],
        vec!["build-bag", s(&manifest), "x", "--R", "9"],
        vec!["build-bag", s(&manifest), "x", "--mode", "median"],
        vec!["--threads", "0", "validate", s(&manifest)],
        vec!["sweep", s(&manifest), "x", "--R", "2,4"],
    ] {
        let out = oboi(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let stderr = String::from_utf8_lossy(&out.stderr);
        let last = stderr.lines().last().unwrap();
        let err: Value = serde_json::from_str(last).unwrap();
        assert_eq!(err["error"]["code"], 1);
    }
    assert_eq!(oboi(&["--help"]).status.code(), Some(0));
}

#[test]
fn validate_reports_problems_with_data_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), VARIANCE_ONLY, 4);
    assert_eq!(oboi(&["validate", s(&manifest)]).status.code(), Some(0));
    assert_eq!(
        oboi(&["validate", s(manifest.parent().unwrap())])
            .status
            .code(),
        Some(0)
    );

    let tensors = manifest.parent().unwrap().join("tensors");
    let mut entries: Vec<_> = fs::read_dir(&tensors)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    entries.sort();
    fs::remove_file(&entries[0]).unwrap();
    fs::write(&entries[1], b"not a tensor").unwrap();
    let out = oboi(&["validate", s(&manifest)]);
    assert_eq!(out.status.code(), Some(2));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let kinds: Vec<&str> = report["problems"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["kind"].as_str().unwrap())
        .collect();
    assert_eq!(kinds, ["MissingTensor", "CorruptTensor"]);
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["code"], 2);

    // a broken bag directory
    let bag = dir.path().join("bag");
    fs::create_dir_all(&bag).unwrap();
    fs::write(bag.join("bag.json"), "{}").unwrap();
    assert_eq!(oboi(&["validate", s(&bag)]).status.code(), Some(2));
    assert_eq!(oboi(&["evaluate", s(&bag)]).status.code(), Some(2));
}

#[test]
fn multi_order_moments_separate_variance_only_instances() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), VARIANCE_ONLY, 5);
    let ee = build_and_evaluate(dir.path(), &manifest, "ee", &["--p", "2", "--mode", "ee"]);
    let aee = build_and_evaluate(
        dir.path(),
        &manifest,
        "aee",
        &["--p", "2", "--mode", "aee", "--R", "4"],
    );
    assert!(ee < 70.0, "ee {ee}");
    assert!(aee > 90.0, "aee {aee}");
}

#[test]
fn conditioning_helps_when_instances_are_confusable_across_objects() {
    // every object shares one distribution, so instance j of one object looks
    // like instance j of every other object
    let spec = r#"{
        "objects": 3, "instances_per_object": 2, "sequences": 2, "samples_per_cell": 20,
        "feature_dims": [6, 6, 8], "object_mean_offset": 0.0,
        "instance_profiles": [{"mean_shift": 0.0}, {"mean_shift": 1.5}]
    }"#;
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), spec, 6);
    // instances differ only in mean, so plain pooling isolates the effect
    let cond = build_and_evaluate(dir.path(), &manifest, "cond", &["--mode", "ee"]);
    let uncond = build_and_evaluate(
        dir.path(),
        &manifest,
        "uncond",
        &["--mode", "ee", "--no-conditioning"],
    );
    assert!(
        cond >= uncond,
        "conditioned {cond} vs unconditioned {uncond}"
    );
    assert!(cond > 90.0, "conditioned {cond}");
    assert!(uncond < 60.0, "unconditioned {uncond}");
}

#[test]
fn sweep_writes_cells_csv_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), VARIANCE_ONLY, 7);
    let out = dir.path().join("sweep");
    let table = ok(&[
        "sweep",
        s(&manifest),
        s(&out),
        "--protocols",
        "1sas,1s1s",
        "--shots",
        "2",
        "--p",
        "1,2",
        "--R",
        "1,4",
        "--heads",
        "protonet,simpleshot-l2n",
    ]);
    assert!(table.contains("delta"));
    let cells = fs::read_dir(out.join("cells")).unwrap().count();
    assert_eq!(cells, 3 * 2 * 2 * 2);
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert!(header.contains(&"delta"));
    assert_eq!(lines.count(), cells);
    assert_eq!(fs::read_to_string(out.join("table.txt")).unwrap(), table);

    // the same sweep again is byte-identical
    let again = dir.path().join("again");
    ok(&[
        "sweep",
        s(&manifest),
        s(&again),
        "--protocols",
        "1sas,1s1s",
        "--shots",
        "2",
        "--p",
        "1,2",
        "--R",
        "1,4",
        "--heads",
        "protonet,simpleshot-l2n",
        "--threads",
        "3",
    ]);
    assert_eq!(csv, fs::read_to_string(again.join("results.csv")).unwrap());
}
