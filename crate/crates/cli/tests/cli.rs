use std::path::Path;
use std::process::{Command, Output};

fn molalign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_molalign"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn csv(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn verify_reaction_special_row_passes() {
    let o = molalign(&["verify", "--times", "r-spec"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.ends_with("result = pass\n"));
    assert!(!out.contains("FAIL"));
    assert_eq!(out.matches("reaction_rx").count(), 3);
}

#[test]
fn verify_reaction_special_times_file_passes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rspec.times");
    let text = "rel1_1 = 0\nrel1_2 = 0\nrel2_1 = 0.232\nrel2_2 = 0.232\nrel3_1 = 0.332\n\
                rel3_2 = 0.332\nsmp1_1 = 0.410\nsmp1_2 = 0.410\nsmp2_1 = 0.466\nsmp2_2 = 0.466\n\
                smp3_1 = 1.051\nsmp3_2 = 1.051\n";
    std::fs::write(&path, text).unwrap();
    let o = molalign(&["verify", "--times", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("reaction_rx3"));

    let o = molalign(&["verify", "--times", path.to_str().unwrap(), "--no-snap"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).ends_with("result = fail\n"));
}

#[test]
fn every_table_row_verifies_after_snapping() {
    for row in ["r-spec", "r-gen", "nr-spec", "nr-gen"] {
        let o = molalign(&["verify", "--times", row]);
        assert_eq!(o.status.code(), Some(0), "{row}: {}", stdout(&o));
    }
}

#[test]
fn feasible_region_spans_segment() {
    let o = molalign(&["feasible-region"]);
    assert_eq!(o.status.code(), Some(0));
    let rows = csv(&stdout(&o));
    let x: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!((lo + 0.303).abs() < 5e-3, "lo = {lo}");
    assert!((hi - 0.2904).abs() < 1e-3, "hi = {hi}");
    let excluded: Vec<f64> = rows
        .iter()
        .filter(|r| r[2] == "1")
        .map(|r| r[0].parse().unwrap())
        .collect();
    assert_eq!(excluded.len(), 3);
    for (e, want) in excluded.iter().zip([-0.0538, -0.0492, -0.0434]) {
        assert!((e - want).abs() < 5e-3);
    }
    assert!(x.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn error_curve_analytic_and_mc_agree() {
    let o = molalign(&[
        "error-curve",
        "--detector",
        "reaction",
        "--zeta0",
        "1e6:4e6:7",
        "--trials",
        "100000",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = csv(&stdout(&o));
    assert_eq!(rows.len(), 14);
    let mut last = f64::INFINITY;
    for pair in rows.chunks(2) {
        assert_eq!(pair[0][5], "analytic");
        assert_eq!(pair[1][5], "mc");
        let p: f64 = pair[0][4].parse().unwrap();
        let q: f64 = pair[1][4].parse().unwrap();
        let se = (p * (1.0 - p) / 300_000.0).sqrt();
        assert!((p - q).abs() <= 3.0 * se + 1e-12, "{pair:?}");
        assert!(p < last);
        last = p;
    }
}

#[test]
fn output_is_deterministic_and_lf() {
    let args = ["simulate", "--trials", "20000", "--seed", "9", "--isi", "1"];
    let a = molalign(&args);
    let b = molalign(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert!(!stdout(&a).contains('\r'));
    let err = stderr(&a);
    assert!(err.contains("# seed = 9"));
    assert!(err.contains("rx_radius = 15"));
}

#[test]
fn out_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("region.csv");
    let o = molalign(&[
        "feasible-region",
        "--points",
        "3",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("dt12,dt13,excluded,min_delta\n"));
}

#[test]
fn missing_scenario_exits_2_naming_path() {
    let o = molalign(&["simulate", "--scenario", "/no/such/scenario.txt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/such/scenario.txt"));
}

#[test]
fn unknown_flag_is_rejected() {
    let o = molalign(&["simulate", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    let o = molalign(&["simulate", "--isi", "2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn infeasible_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("bad.scenario");
    std::fs::write(&sc, "rx_radius = -3\n").unwrap();
    let o = molalign(&["feasible-region", "--scenario", sc.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = molalign(&["feasible-region", "--c", "30"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = molalign(&["asymptotic-dof", "--K", "2", "--n", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unwritable_output_is_internal_error() {
    let o = molalign(&["feasible-region", "--out", "/no/such/dir/out.csv"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn optimize_writes_times_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let times = dir.path().join("opt.times");
    let trace = dir.path().join("trace.csv");
    let o = molalign(&[
        "optimize-times",
        "--problem",
        "r-spec",
        "--grid",
        "128",
        "--out",
        times.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ts = molalign::io::load_times(&times).unwrap();
    let dt12 = ts.release[0][0] - ts.release[1][0];
    assert!((dt12 + 0.2323).abs() < 5e-3, "dt12 = {dt12}");
    assert!(Path::new(&trace).exists());
    let o = molalign(&["verify", "--times", times.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn asymptotic_dof_three_users() {
    let o = molalign(&["asymptotic-dof", "--K", "3", "--n", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.starts_with("dof = 4/3\n"));
    assert!(out.contains("aligned = true"));
}
