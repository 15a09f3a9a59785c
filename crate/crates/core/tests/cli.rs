use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn agesim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agesim")).args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn error_kind(out: &Output) -> String {
    let v: Value = serde_json::from_slice(&out.stderr).unwrap_or_else(|_| panic!("stderr: {}", String::from_utf8_lossy(&out.stderr)));
    v["error"]["kind"].as_str().unwrap().to_string()
}

const RANDOM_RUN: &str = r#"
seed = 5
inferences = 20
output_dir = "out"

[network]
source = "random-bits"
rho = 0.5
blocks = 1

[accelerator]
kind = "baseline"
memory_bytes = 1024
"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_writes_outputs_then_compare_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", RANDOM_RUN);
    let v = stdout_json(&agesim(&["run", &cfg, "--block-map"]));
    assert_eq!(v["total_k"], 20);
    let out = dir.path().join("out");
    for f in ["result.json", "histogram.csv", "dutymap.bin", "dutymap.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert!(!out.join("blocks.csv").exists());
    let hist = fs::read_to_string(out.join("histogram.csv")).unwrap();
    assert!(hist.starts_with("bin_lo,bin_hi,count,pct\n"));
    assert_eq!(hist.lines().count(), 33);
    assert_eq!(fs::metadata(out.join("dutymap.bin")).unwrap().len(), 8192 * 8);

    let first = fs::read(out.join("result.json")).unwrap();
    stdout_json(&agesim(&["run", &cfg]));
    assert_eq!(fs::read(out.join("result.json")).unwrap(), first);

    let cmp = stdout_json(&agesim(&["compare", out.to_str().unwrap(), "--K", "20", "--rho", "0.5", "--save"]));
    assert_eq!(cmp["cells"], 8192);
    assert!(out.join("compare.json").is_file());
}

#[test]
fn run_failures_report_json_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = agesim(&["run", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "io");

    let bad = write(dir.path(), "bad.toml", &RANDOM_RUN.replace("seed = 5", "sede = 5"));
    let out = agesim(&["run", &bad]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "config");
}

#[test]
fn block_map_for_layered_network() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "l.toml",
        "inferences = 2\n[network]\nsource = \"layers\"\nlayers = \"FC(10,256)\"\n[accelerator]\nkind = \"baseline\"\nmemory_bytes = 1024\n",
    );
    let out = dir.path().join("o");
    stdout_json(&agesim(&["run", &cfg, "--block-map", "--out", out.to_str().unwrap()]));
    let map = fs::read_to_string(out.join("blocks.csv")).unwrap();
    assert!(map.lines().count() > 1);
}

#[test]
fn prob_single_point_and_curve() {
    let v = stdout_json(&agesim(&["prob", "--K", "20", "--rho", "0.5", "--b", "10"]));
    assert_eq!(v["P"], 1.0);
    let v = stdout_json(&agesim(&["prob", "--K", "20", "--rho", "0.5", "--b", "6", "--cells", "8192", "--n", "819"]));
    assert!((v["P"].as_f64().unwrap() - 0.11531829833984375).abs() < 1e-12);
    assert!(v["P_at_least_n"].as_f64().unwrap() > 0.99);

    let out = agesim(&["prob", "--K", "4", "--rho", "0.5", "--curve"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("b,b_over_K,P"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn prob_rejects_bad_arguments() {
    let out = agesim(&["prob", "--K", "20", "--rho", "1.5", "--b", "3"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "invalid_param");
    let out = agesim(&["prob", "--K", "20", "--rho", "0.5", "--b", "3", "--cells", "4"]);
    assert_eq!(error_kind(&out), "invalid_param");
    let out = agesim(&["prob", "--K", "twenty", "--rho", "0.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "usage");
}

#[test]
fn synth_then_bits() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("net");
    let v = stdout_json(&agesim(&["synth", "--layers", "FC(10,256)", "--seed", "4", "--out", net.to_str().unwrap()]));
    assert_eq!(v["weights"], 2560);
    let manifest = v["manifest"].as_str().unwrap().to_string();

    let out = agesim(&["bits", &manifest, "--format=float32"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("bit_index,p_one"));
    assert_eq!(text.lines().count(), 33);

    let v = stdout_json(&agesim(&["bits", &manifest, "--format=int8-asym", "--out", dir.path().to_str().unwrap()]));
    assert_eq!(v["n_words"], 2560);
    assert!(dir.path().join("bits.csv").is_file());

    let out = agesim(&["bits", &manifest, "--format=int4"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn matrix_reports_partial_failures() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "a.toml", RANDOM_RUN);
    write(dir.path(), "b.toml", &RANDOM_RUN.replace("output_dir = \"out\"", "policy = \"inversion\"\noutput_dir = \"out-b\""));
    let v = stdout_json(&agesim(&["matrix", dir.path().to_str().unwrap()]));
    assert_eq!(v["runs"], 2);
    let csv = fs::read_to_string(dir.path().join("matrix.csv")).unwrap();
    assert!(csv.starts_with("network,format,policy,mean_abs_dev,pct_worst_bin,pct_best_bin\n"));
    assert_eq!(csv.lines().count(), 3);

    write(dir.path(), "c.toml", &RANDOM_RUN.replace("rho = 0.5", "rho = 2.0").replace("\"out\"", "\"out-c\""));
    let out = agesim(&["matrix", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_kind(&out), "matrix_entries_failed");
    assert_eq!(fs::read_to_string(dir.path().join("matrix.csv")).unwrap().lines().count(), 3);
}

#[test]
fn usage_errors_exit_with_two() {
    let out = agesim(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "usage");
    assert!(agesim(&["--help"]).status.success());
}
