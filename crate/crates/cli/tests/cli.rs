use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adhoc-csi"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

const SHORT: [&str; 8] = ["--set", "sim_end_s=15", "--set", "start_window_s=1,5", "--set", "node_count=8", "--set", "flow_count=3"];

#[test]
fn fig2_emits_four_fixed_rates_and_envelope() {
    let o = bin(&["fig2", "--snr-min-db", "0", "--snr-max-db", "30", "--snr-step-db", "10"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("# adhoc-csi "));
    assert!(text.contains("# config_sha256: "));
    let rows = data_lines(&text);
    assert_eq!(rows[0], "avg_snr_db,L,nmse,method,rate,throughput_pps,quad_err");
    // 4 SNR points, 5 rows each.
    assert_eq!(rows.len(), 1 + 4 * 5);
    assert_eq!(rows.iter().filter(|r| r.contains(",IDEAL,")).count(), 4);
}

#[test]
fn empty_snr_range_is_a_usage_error() {
    let o = bin(&["fig2", "--snr-min-db", "10", "--snr-max-db", "5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(o.stdout.is_empty());
    let o = bin(&["fig2", "--snr-step-db", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fig3_rejects_nmse_outside_unit_interval() {
    assert_eq!(bin(&["fig3", "--nmse", "0.5,1.0"]).status.code(), Some(2));
    let o = bin(&["fig3", "--nmse", "0.01,0.5"]);
    assert!(o.status.success());
    // Two NMSE values, three metrics each.
    assert_eq!(data_lines(&stdout(&o)).len(), 1 + 6);
}

#[test]
fn fig5_orders_cts_ahead_of_rts() {
    let o = bin(&["fig5", "--fd", "50,200"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let rows: Vec<Vec<&str>> = data_lines(&text)[1..].iter().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2 * 5);
    for fd in ["50", "200"] {
        let of = |s: &str| -> Vec<f64> {
            rows.iter()
                .filter(|r| r[0] == fd && r[1] == s)
                .map(|r| r[4].parse().unwrap())
                .collect()
        };
        let rts = of("RTS_CSI")[0];
        assert!(of("CTS_CSI").iter().all(|&m| m < rts));
    }
}

#[test]
fn run_is_byte_identical_across_invocations() {
    let mut args = vec!["run"];
    args.extend(SHORT);
    let a = bin(&args);
    let b = bin(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    assert!(text.contains("# seeds: 1"));
    assert_eq!(data_lines(&text).len(), 2);
}

#[test]
fn run_writes_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let mut args = vec!["run", "--trace", trace.to_str().unwrap()];
    args.extend(SHORT);
    assert!(bin(&args).status.success());
    let text = std::fs::read_to_string(&trace).unwrap();
    let rows = data_lines(&text);
    assert_eq!(rows[0], "time_s,node,event,frame,peer,snr_db,busy");
    assert!(rows.len() > 10);
}

#[test]
fn config_file_and_overrides_compose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.cfg");
    std::fs::write(&cfg, "# desk variant\nseed = 7\nv_max = 3\n").unwrap();
    let mut args = vec!["run", "--config", cfg.to_str().unwrap(), "--set", "L=3"];
    args.extend(SHORT);
    let o = bin(&args);
    assert!(o.status.success());
    let text = stdout(&o);
    let row = data_lines(&text)[1];
    assert!(row.starts_with("7,3,3,"), "{row}");
}

#[test]
fn unknown_key_and_missing_config_fail() {
    assert_eq!(bin(&["run", "--set", "warp=9"]).status.code(), Some(2));
    assert_eq!(bin(&["run", "--set", "noequals"]).status.code(), Some(2));
    assert_eq!(bin(&["run", "--set", "node_count=1"]).status.code(), Some(2));
    let o = bin(&["run", "--config", "/nonexistent/x.cfg"]);
    assert!(!o.status.success());
}

fn check_sweep_dir(dir: &Path, runs: usize, cells: usize) {
    let r = std::fs::read_to_string(dir.join("runs.csv")).unwrap();
    let a = std::fs::read_to_string(dir.join("aggregate.csv")).unwrap();
    assert!(r.contains("# tag: CUSTOM"));
    assert!(a.contains("# seeds: 1,2"));
    assert_eq!(data_lines(&r).len(), 1 + runs);
    assert_eq!(data_lines(&a).len(), 1 + cells);
}

#[test]
fn sweep_writes_runs_and_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "sweep",
        "--schemes",
        "RTS_CSI,IDEAL",
        "--seeds",
        "2",
        "--jobs",
        "2",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ];
    args.extend(SHORT);
    let o = bin(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    check_sweep_dir(dir.path(), 4, 2);
}

#[test]
fn sweep_refuses_bad_plans() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(bin(&["sweep", "--vmax=-1", "--out-dir", out]).status.code(), Some(2));
    assert_eq!(bin(&["sweep", "--seed-list", "", "--out-dir", out]).status.code(), Some(2));
    let file = dir.path().join("plain");
    std::fs::write(&file, "").unwrap();
    let o = bin(&["sweep", "--out-dir", file.join("sub").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
