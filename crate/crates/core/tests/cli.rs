//! CLI contract tests: exit codes, file outputs, and reproducibility.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn alcim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_alcim"))
}

fn run(args: &[&str]) -> Output {
    alcim().args(args).output().expect("spawn alcim")
}

fn tmpdir(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("alcim_cli_{name}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

#[test]
fn schedule_toy_vgg_has_no_tc_events() {
    let out = tmpdir("sched_toy");
    let r = run(&["schedule", "--network", "toy_vgg", "--input-side", "16", "--out", out.to_str().unwrap()]);
    assert!(r.status.success(), "stderr: {}", String::from_utf8_lossy(&r.stderr));
    let plan: serde_json::Value = serde_json::from_str(&read(&out.join("plan.json"))).unwrap();
    assert_eq!(plan["tc_events"].as_array().unwrap().len(), 0);
    assert!(out.join("footprint.csv").exists());
    assert!(out.join("footprint.json").exists());
}

#[test]
fn schedule_resnet50_reports_three_tc_events_and_72kib() {
    let out = tmpdir("sched_rn50");
    let r = run(&["schedule", "--network", "resnet50", "--input-side", "256", "--out", out.to_str().unwrap()]);
    assert!(r.status.success());
    let fp: serde_json::Value = serde_json::from_str(&read(&out.join("footprint.json"))).unwrap();
    assert_eq!(fp["tc_events"].as_array().unwrap().len(), 3);
    assert_eq!(fp["total_onchip_activation_bytes"], 73728);
    assert!(fp["tmem_bytes_required"].as_u64().unwrap() <= 24 * 1024);
}

#[test]
fn missing_descriptor_exits_2_with_error_json() {
    let r = run(&["schedule", "--network", "/nonexistent/net.json", "--out", "/tmp"]);
    assert_eq!(r.status.code(), Some(2));
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&r.stderr).trim()).expect("stderr is JSON");
    assert!(err["error"]["message"].is_string());
}

#[test]
fn unknown_builtin_exits_2() {
    let r = run(&["schedule", "--network", "alexnet", "--input-side", "224", "--out", "/tmp"]);
    assert_eq!(r.status.code(), Some(2));
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&r.stderr).trim()).unwrap();
    assert_eq!(err["error"]["kind"], "unknown_network");
}

#[test]
fn simulate_toy_vgg_verdict_is_bitwise_equal() {
    let out = tmpdir("sim_toy");
    let r = run(&[
        "simulate",
        "--network",
        "toy_vgg",
        "--input-side",
        "16",
        "--seed",
        "13",
        "--sparsity",
        "0.4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "stderr: {}", String::from_utf8_lossy(&r.stderr));
    let v: serde_json::Value = serde_json::from_str(&read(&out.join("verdict.json"))).unwrap();
    assert_eq!(v["verdict"], "bitwise-equal");
    assert!(out.join("counters.json").exists());
    assert!(out.join("counters.csv").exists());
    assert!(out.join("output.bin").exists());
    assert!(out.join("output.bin.json").exists());
}

#[test]
fn simulate_rejects_corrupted_mask() {
    let out = tmpdir("sim_badmask");
    let mask = out.join("bad.mask");
    std::fs::write(&mask, b"not a mask at all").unwrap();
    let r = run(&[
        "simulate",
        "--network",
        "toy_vgg",
        "--input-side",
        "16",
        "--mask-file",
        mask.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(2));
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&r.stderr).trim()).unwrap();
    assert_eq!(err["error"]["kind"], "malformed_file");
}

#[test]
fn mask_round_trips_through_simulate() {
    let out = tmpdir("mask_rt");
    let mask = out.join("m.mask");
    let r = run(&[
        "mask",
        "--network",
        "toy_vgg",
        "--input-side",
        "16",
        "--seed",
        "5",
        "--sparsity",
        "0.3",
        "--mask-file",
        mask.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(r.status.success());
    let r = run(&[
        "simulate",
        "--network",
        "toy_vgg",
        "--input-side",
        "16",
        "--seed",
        "5",
        "--mask-file",
        mask.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "stderr: {}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn trace_flag_writes_line_delimited_events() {
    let out = tmpdir("trace");
    let r = run(&[
        "simulate",
        "--network",
        "toy_vgg",
        "--input-side",
        "16",
        "--trace",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(r.status.success());
    let trace = read(&out.join("trace.jsonl"));
    assert!(trace.lines().count() > 12, "one event per step at least");
    for line in trace.lines().take(5) {
        let ev: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(ev["kind"].is_string());
    }
}

#[test]
fn analyze_emits_expected_row_counts() {
    let out = tmpdir("analyze");
    let r = run(&["analyze", "--fused-depth", "1..12", "--tile", "4", "--out", out.to_str().unwrap()]);
    assert!(r.status.success());
    let csv = read(&out.join("fused_access.csv"));
    assert_eq!(csv.lines().count(), 1 + 24, "header plus 12 depths x 2 modes");

    let out2 = tmpdir("analyze1");
    let r = run(&["analyze", "--fused-depth", "1", "--tile", "4", "--out", out2.to_str().unwrap()]);
    assert!(r.status.success());
    let csv = read(&out2.join("fused_access.csv"));
    assert_eq!(csv.lines().count(), 1 + 2);
}

#[test]
fn analyze_rejects_zero_tile() {
    let r = run(&["analyze", "--fused-depth", "4", "--tile", "0", "--out", "/tmp"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn compare_flat_table_collapses_to_access_ratios() {
    let out = tmpdir("compare_flat");
    let table = out.join("flat.csv");
    std::fs::write(&table, "capacity,energy\n16384,1.0\n1048576,1.0\n").unwrap();
    let r = run(&[
        "compare",
        "--network",
        "toy_vgg",
        "--input-side",
        "16",
        "--energy-table",
        table.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "stderr: {}", String::from_utf8_lossy(&r.stderr));
    let v: serde_json::Value = serde_json::from_str(&read(&out.join("dataflows.json"))).unwrap();
    let acc = v["baseline_access_ratio"].as_f64().unwrap();
    let en = v["baseline_energy_ratio"].as_f64().unwrap();
    assert!((acc - en).abs() < 1e-9);
}

#[test]
fn reruns_are_byte_identical() {
    let out1 = tmpdir("repro1");
    let out2 = tmpdir("repro2");
    for out in [&out1, &out2] {
        let r = run(&[
            "simulate",
            "--network",
            "toy_vgg",
            "--input-side",
            "16",
            "--seed",
            "21",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(r.status.success());
    }
    for f in ["counters.json", "counters.csv", "verdict.json", "output.bin"] {
        let a = std::fs::read(out1.join(f)).unwrap();
        let b = std::fs::read(out2.join(f)).unwrap();
        assert_eq!(a, b, "file {f} differs between reruns");
    }
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let out = tmpdir("config");
    let cfg = out.join("cfg.json");
    std::fs::write(
        &cfg,
        serde_json::json!({
            "network": "toy_vgg",
            "input_side": 16,
            "seed": 3,
            "out_dir": out.to_str().unwrap(),
        })
        .to_string(),
    )
    .unwrap();
    let r = run(&["simulate", "--config", cfg.to_str().unwrap(), "--count-only"]);
    assert!(r.status.success(), "stderr: {}", String::from_utf8_lossy(&r.stderr));
    let v: serde_json::Value = serde_json::from_str(&read(&out.join("verdict.json"))).unwrap();
    assert_eq!(v["seed"], 3);
    assert_eq!(v["verdict"], "not-checked");

    // explicit flag beats the file
    let r = run(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "8", "--count-only"]);
    assert!(r.status.success());
    let v: serde_json::Value = serde_json::from_str(&read(&out.join("verdict.json"))).unwrap();
    assert_eq!(v["seed"], 8);
}

#[test]
fn env_var_overrides_output_dir() {
    let flag_dir = tmpdir("env_flag");
    let env_dir = tmpdir("env_env");
    let r = alcim()
        .args(["analyze", "--fused-depth", "2", "--tile", "4", "--out", flag_dir.to_str().unwrap()])
        .env("ALCIM_OUT_DIR", env_dir.to_str().unwrap())
        .output()
        .unwrap();
    assert!(r.status.success());
    assert!(env_dir.join("fused_access.csv").exists());
    assert!(!flag_dir.join("fused_access.csv").exists());
}

#[test]
fn network_descriptor_json_round_trips_through_cli() {
    let out = tmpdir("descriptor");
    let net = alcim_core::netspec::builtin_network("toy_vgg", 16).unwrap();
    let path = out.join("net.json");
    std::fs::write(&path, net.to_json().unwrap()).unwrap();
    let r = run(&["schedule", "--network", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(r.status.success(), "stderr: {}", String::from_utf8_lossy(&r.stderr));
}
