use std::path::Path;
use std::process::{Command, Output};

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_elbrp-sim"))
        .args(args)
        .env_remove("ELBRP_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// The default scenario, shortened so a cell finishes quickly.
fn short_config(dir: &Path) -> String {
    let defaults = stdout(&sim(&["defaults"]));
    let text = defaults
        .replace("duration_s = 500.0", "duration_s = 40.0")
        .replace("stop_s = 490.0", "stop_s = 30.0");
    let path = dir.join("short.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn default_config_one_seed_gives_two_rows_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let out = dir.path().join("out");
    let o = sim(&["run", &cfg, "--out", out.to_str().unwrap(), "--parallel", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3, "{csv}");
    assert!(lines[1].starts_with("elbrp,1,"));
    assert!(lines[2].starts_with("load,1,"));
    let summary = std::fs::read_to_string(out.join("summary.json")).unwrap();
    assert!(summary.contains("overhead_ratio_elbrp_over_load"));
    assert!(!out.join("packets_elbrp_seed1.csv").exists());
}

#[test]
fn packet_logs_written_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let out = dir.path().join("out");
    let o = sim(&["run", &cfg, "--out", out.to_str().unwrap(), "--log-packets", "--seed-override", "3,4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for p in ["elbrp", "load"] {
        for s in [3, 4] {
            let log = std::fs::read_to_string(out.join(format!("packets_{p}_seed{s}.csv"))).unwrap();
            assert!(log.lines().count() > 1);
        }
    }
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let out = dir.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_elbrp-sim"))
        .args(["run", &cfg, "--parallel", "1"])
        .env("ELBRP_OUT_DIR", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("metrics.csv").exists());
}

#[test]
fn metric_csv_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(sim(&["run", &cfg, "--out", a.to_str().unwrap(), "--seeds", "1,2", "--parallel", "4"]).status.success());
    assert!(sim(&["run", &cfg, "--out", b.to_str().unwrap(), "--seeds", "1,2", "--parallel", "1"]).status.success());
    let ca = std::fs::read(a.join("metrics.csv")).unwrap();
    let cb = std::fs::read(b.join("metrics.csv")).unwrap();
    assert_eq!(ca, cb);
}

#[test]
fn negative_range_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[radio]\nradio_range_m = -5.0\n").unwrap();
    let o = sim(&["run", path.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("radio.radio_range_m"), "{}", stderr(&o));
}

#[test]
fn parse_error_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "duration_s = 10.0\n\n[traffic]\nrate_pps = \"fast\"\n").unwrap();
    let o = sim(&["run", path.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("line 4") && err.contains("rate_pps"), "{err}");
}

#[test]
fn empty_seed_override_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let o = sim(&["run", &cfg, "--seed-override", "", "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn inspect_golden_rreq() {
    let o = sim(&["inspect", "010000000064006412340007012c"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for want in ["rreq", "dest_loc", "(100, 100)", "orig_addr", "0x1234", "orig_loc", "(7, 300)"] {
        assert!(text.contains(want), "missing {want}: {text}");
    }
}

#[test]
fn inspect_unknown_type() {
    let o = sim(&["inspect", "00"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("UnknownType"), "{}", stderr(&o));
}

#[test]
fn inspect_truncated_reports_offset() {
    // The golden RREQ with its final four bytes chopped off.
    let o = sim(&["inspect", "0100000000640064123400"]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("Truncated") && err.contains("offset: 10"), "{err}");
}

#[test]
fn hilow_prints_route() {
    let o = sim(&["hilow", "4", "6", "9"]);
    assert!(o.status.success());
    let hops: Vec<u16> = stdout(&o).lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(hops, [6, 1, 0, 2, 9]);
}

#[test]
fn hilow_rejects_zero_children() {
    let o = sim(&["hilow", "0", "1", "2"]);
    assert!(!o.status.success());
}
