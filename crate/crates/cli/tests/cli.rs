use std::path::Path;
use std::process::{Command, Output};

fn smi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smi")).args(args).output().expect("smi runs")
}

fn read(dir: &Path, file: &str) -> String {
    std::fs::read_to_string(dir.join(file)).unwrap_or_else(|e| panic!("{file}: {e}"))
}

#[test]
fn monitor_is_bit_reproducible_and_seed_sensitive() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let d = tmp.path().join(name);
        let o = smi(&["monitor", "--duration", "60", "--seed", seed, "--out", d.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        d
    };
    let (a, b, c) = (run("a", "7"), run("b", "7"), run("c", "8"));
    for f in ["trace.csv", "psd.csv", "allan.csv", "histogram.csv", "summary.json", "manifest.json", "config.toml"] {
        assert_eq!(read(&a, f), read(&b, f), "{f}");
    }
    assert_ne!(read(&a, "trace.csv"), read(&c, "trace.csv"));
    let header = read(&a, "trace.csv").lines().next().unwrap().to_string();
    assert_eq!(header, "t_s,x_v,y_v,detuning_hz,truth_hz");
}

#[test]
fn manifest_lists_artifact_digests() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("sweep");
    let o = smi(&["sweep", "--out", d.to_str().unwrap()]);
    assert!(o.status.success());
    let m: serde_json::Value = serde_json::from_str(&read(&d, "manifest.json")).unwrap();
    assert_eq!(m["command"], "sweep");
    assert_eq!(m["seed"], 1);
    let files: Vec<&str> = m["artifacts"].as_array().unwrap().iter().map(|a| a["file"].as_str().unwrap()).collect();
    assert_eq!(files, ["sweep.csv", "summary.json"]);
    assert_eq!(m["artifacts"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn written_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(smi(&["map", "--linecut", "--seed", "5", "--out", a.to_str().unwrap()]).status.success());
    let cfg = a.join("config.toml");
    assert!(smi(&["map", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap()]).status.success());
    for f in ["map.csv", "linecut.csv", "summary.json", "config.toml"] {
        assert_eq!(read(&a, f), read(&b, f), "{f}");
    }
}

#[test]
fn json_format_writes_tables_as_json() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("s");
    assert!(smi(&["sweep", "--format", "json", "--out", d.to_str().unwrap()]).status.success());
    let t: serde_json::Value = serde_json::from_str(&read(&d, "sweep.json")).unwrap();
    assert_eq!(t["columns"], serde_json::json!(["f0_hz", "x_v", "y_v"]));
    assert_eq!(t["rows"].as_array().unwrap().len(), 601);
}

#[test]
fn analyze_reads_back_a_monitor_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let m = tmp.path().join("m");
    assert!(smi(&["monitor", "--duration", "60", "--out", m.to_str().unwrap()]).status.success());
    let a = tmp.path().join("a");
    let trace = m.join("trace.csv");
    let o = smi(&["analyze", "--input", trace.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(&m, "psd.csv"), read(&a, "psd.csv"));
    assert_eq!(read(&m, "allan.csv"), read(&a, "allan.csv"));
    let man: serde_json::Value = serde_json::from_str(&read(&a, "manifest.json")).unwrap();
    assert_eq!(man["inputs"].as_array().unwrap().len(), 1);
}

#[test]
fn errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "seed = 1\nbogus = 2\n").unwrap();
    let out = tmp.path().join("o");
    let o = smi(&["sweep", "--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));

    let o = smi(&["sweep", "--compress=-1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let missing = tmp.path().join("none.csv");
    let o = smi(&["analyze", "--input", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));

    let nores = tmp.path().join("bare.toml");
    std::fs::write(&nores, "bare_feedline = true\n").unwrap();
    let o = smi(&["calibrate", "--config", nores.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn example_config_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/rejection_demo.toml");
    let d = tmp.path().join("m");
    let o = smi(&["monitor", "--config", cfg, "--duration", "2000", "--out", d.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(read(&d, "config.toml").contains("frequency_hz = 0.1"));
}
