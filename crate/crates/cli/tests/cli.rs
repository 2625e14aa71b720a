//! End-to-end runs of the `pnr` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::{json, Value};
use tempfile::TempDir;

fn pnr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pnr")).args(args).output().expect("spawn pnr")
}

fn ok_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("summary json")
}

fn failure(out: &Output, code: i32) -> Value {
    assert_eq!(out.status.code(), Some(code), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let err: Value = serde_json::from_slice(&out.stderr).expect("error json");
    assert_eq!(err["error"]["code"], code);
    err
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, value: Value) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, value.to_string()).unwrap();
    p
}

fn coherent_config(mu: f64, eff_a: f64, eff_b: f64, triggers: usize) -> Value {
    json!({
        "simulate": {
            "source": {
                "kind": { "type": "coherent", "mu": mu },
                "repetition_rate_hz": 1e5,
                "efficiency_a": eff_a,
                "efficiency_b": eff_b,
            },
            "n_triggers": triggers,
        }
    })
}

/// Default simulation, calibration of detector A and decoding, shared by several tests.
struct Reference {
    dir: TempDir,
    calibrate: Value,
    decode: Value,
}

fn reference() -> &'static Reference {
    static REF: OnceLock<Reference> = OnceLock::new();
    REF.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let root = dir.path();
        ok_json(&pnr(&["simulate", "--seed", "11", "--triggers", "60000", "--out", s(root)]));
        let calibrate = ok_json(&pnr(&["calibrate", s(&root.join("stream.pnrtag")), "--out", s(&root.join("cal"))]));
        let decode = ok_json(&pnr(&[
            "decode",
            s(&root.join("stream.pnrtag")),
            "--calibration",
            s(&root.join("cal/calibration.json")),
            "--out",
            s(&root.join("dec")),
        ]));
        Reference { dir, calibrate, decode }
    })
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let run = |sub: &str| {
        let out = dir.path().join(sub);
        let summary = ok_json(&pnr(&["simulate", "--triggers", "10", "--seed", "7", "--out", s(&out)]));
        (summary["sha256"].clone(), fs::read(out.join("stream.pnrtag")).unwrap())
    };
    let (d1, b1) = run("one");
    let (d2, b2) = run("two");
    assert_eq!(d1, d2);
    assert_eq!(b1, b2);
    // rerunning into the same directory overwrites identically
    let again = ok_json(&pnr(&["simulate", "--triggers", "10", "--seed", "7", "--out", s(&dir.path().join("one"))]));
    assert_eq!(again["sha256"], d1);
}

#[test]
fn zero_mean_source_has_no_detections() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), coherent_config(0.0, 0.86, 0.0, 1000));
    let v = ok_json(&pnr(&["simulate", "--config", s(&cfg), "--out", s(dir.path())]));
    assert_eq!(v["detections"]["a"], 0);
    assert_eq!(v["detected_mean"]["a"], 0.0);
    assert_eq!(v["triggers"], 1000);
}

#[test]
fn default_summary_mean_is_thinned_source_mean() {
    let dir = TempDir::new().unwrap();
    let n = 100_000.0;
    let v = ok_json(&pnr(&["simulate", "--seed", "3", "--out", s(dir.path())]));
    assert_eq!(v["triggers"], 100_000);
    let mean = v["detected_mean"]["a"].as_f64().unwrap();
    let expected = 0.86 * (3.43 / 0.86);
    assert!((mean - expected).abs() < 3.0 * (expected / n).sqrt(), "{mean}");
}

#[test]
fn empty_tag_file_is_a_calibration_failure() {
    let dir = TempDir::new().unwrap();
    let tags = dir.path().join("empty.pnrtag");
    fs::write(&tags, b"").unwrap();
    let err = failure(&pnr(&["calibrate", s(&tags), "--out", s(dir.path())]), 3);
    assert_eq!(err["error"]["kind"], "empty_sample");
}

#[test]
fn single_record_is_insufficient() {
    let dir = TempDir::new().unwrap();
    let rec = dir.path().join("one.csv");
    fs::write(&rec, "trigger_index,time,channel,n\n0,0,1,2\n").unwrap();
    let err = failure(&pnr(&["stats", s(&rec), "--out", s(dir.path())]), 5);
    assert_eq!(err["error"]["kind"], "insufficient_data");
    failure(&pnr(&["jpnd", s(&rec), s(&rec), "--out", s(dir.path())]), 5);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), json!({ "seeed": 1 }));
    let err = failure(&pnr(&["simulate", "--config", s(&cfg), "--out", s(dir.path())]), 2);
    assert!(err["error"]["message"].as_str().unwrap().contains("seeed"));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    failure(&pnr(&["simulate", "--triggers", "5", "--out", s(&blocker.join("sub"))]), 2);
}

#[test]
fn invalid_thread_cap_is_rejected() {
    let dir = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pnr"))
        .args(["simulate", "--triggers", "5", "--out", s(dir.path())])
        .env("PNR_THREADS", "zero")
        .output()
        .unwrap();
    failure(&out, 2);
}

#[test]
fn optimal_crosstalk_below_rising_only() {
    let r = reference();
    let opt = r.calibrate["optimal"]["total_crosstalk"].as_f64().unwrap();
    let rise = r.calibrate["rising_only"]["total_crosstalk"].as_f64().unwrap();
    assert!(opt < rise, "{opt} vs {rise}");
    for f in ["calibration.json", "histogram2d.csv", "projection_optimal.csv", "crosstalk_rising_only.csv"] {
        assert!(r.dir.path().join("cal").join(f).is_file(), "{f}");
    }
}

#[test]
fn truth_sidecar_yields_confusion_report() {
    let r = reference();
    assert!(r.dir.path().join("dec/confusion.json").is_file());
    assert!(r.decode["confusion"]["overall_accuracy"].as_f64().unwrap() > 0.99);
}

#[test]
fn zero_class_equals_triggers_without_detection() {
    let r = reference();
    assert_eq!(r.decode["class_counts"][0], r.decode["pairing"]["zero_events"]);
    let truth = fs::read_to_string(r.dir.path().join("stream.truth.csv")).unwrap();
    let no_photon = truth.lines().skip(1).filter(|l| l.split(',').nth(1) == Some("0")).count();
    assert_eq!(r.decode["class_counts"][0], no_photon);
}

#[test]
fn decoding_twice_gives_identical_outputs() {
    let r = reference();
    let root = r.dir.path();
    let out = root.join("dec2");
    let v = ok_json(&pnr(&[
        "decode",
        s(&root.join("stream.pnrtag")),
        "--calibration",
        s(&root.join("cal/calibration.json")),
        "--out",
        s(&out),
    ]));
    assert_eq!(v["class_counts"], r.decode["class_counts"]);
    assert_eq!(fs::read(out.join("records.pnrrec")).unwrap(), fs::read(root.join("dec/records.pnrrec")).unwrap());
}

#[test]
fn stats_reads_binary_and_csv_records_alike() {
    let r = reference();
    let root = r.dir.path();
    let bin = ok_json(&pnr(&["stats", s(&root.join("dec/records.pnrrec")), "--out", s(&root.join("st_bin"))]));
    let csv = ok_json(&pnr(&["stats", s(&root.join("dec/records.csv")), "--out", s(&root.join("st_csv"))]));
    assert_eq!(bin["mu"], csv["mu"]);
    let mu = bin["mu"].as_f64().unwrap();
    let ci = bin["ci"].as_array().unwrap();
    assert!(ci[0].as_f64().unwrap() < mu && mu < ci[1].as_f64().unwrap());
    assert!((mu - 3.43).abs() < 0.05, "{mu}");
}

#[test]
fn detector_a_calibration_rejects_detector_b_stream() {
    let r = reference();
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), coherent_config(2.0, 0.0, 0.86, 500));
    ok_json(&pnr(&["simulate", "--config", s(&cfg), "--out", s(dir.path())]));
    let err = failure(
        &pnr(&[
            "decode",
            s(&dir.path().join("stream.pnrtag")),
            "--calibration",
            s(&r.dir.path().join("cal/calibration.json")),
            "--mode",
            "rising_only",
            "--out",
            s(dir.path()),
        ]),
        4,
    );
    assert_eq!(err["error"]["kind"], "compatibility");
}

fn write_records(path: &Path, channel: u8, ns: &[u32]) {
    let mut text = String::from("trigger_index,time,channel,n\n");
    for (i, n) in ns.iter().enumerate() {
        text.push_str(&format!("{i},{},{channel},{n}\n", i * 10_000));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn noon_report_suppresses_coincidences() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    // noon: both photons exit together; split: one photon per arm
    let noon: Vec<(u32, u32)> = (0..400).map(|i| [(2, 0), (0, 2), (0, 0), (1, 0)][i % 4]).collect();
    let split: Vec<(u32, u32)> = (0..400).map(|i| [(1, 1), (0, 0), (1, 0), (0, 1)][i % 4]).collect();
    for (name, pairs) in [("noon", &noon), ("split", &split)] {
        write_records(&d.join(format!("{name}_a.csv")), 1, &pairs.iter().map(|p| p.0).collect::<Vec<_>>());
        write_records(&d.join(format!("{name}_b.csv")), 3, &pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    }
    let v = ok_json(&pnr(&[
        "jpnd",
        s(&d.join("noon_a.csv")),
        s(&d.join("noon_b.csv")),
        "--split-a",
        s(&d.join("split_a.csv")),
        "--split-b",
        s(&d.join("split_b.csv")),
        "--out",
        s(d),
    ]));
    assert_eq!(v["two_photon"]["n11"], 0);
    assert_eq!(v["hom"]["split"]["n11"], 100);
    assert_eq!(v["hom"]["suppression_ratio"], 0.0);
    let csv = fs::read_to_string(d.join("jpnd.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3);
}
