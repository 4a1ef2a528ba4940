use serde_json::Value;
use std::path::PathBuf;
use std::process::{Command, Output};
use subriemann::heat::read_srhe;
use subriemann::io::StructureFile;
use subriemann::models::{build, ModelName};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_subriemann"));
    c.env_remove("SRC_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("json report")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("subriemann-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn validate_heisenberg_passes() {
    let o = run(&["validate", "--model", "heisenberg", "--points", "100", "--tol", "1e-9"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn constants_su2_document() {
    let o = run(&["constants", "--model", "su2", "--format", "json"]);
    assert_eq!(code(&o), 0);
    let doc = json(&o);
    let r = &doc["result"];
    assert_eq!(r["D"].as_f64(), Some(8.0));
    assert!((r["diameter_bound"]["value"].as_f64().unwrap() - 26.657).abs() < 1e-3);
    assert_eq!(r["lambda1_bound"]["value"].as_f64(), Some(1.6));
    assert_eq!(doc["tool"], "subriemann");
    assert_eq!(doc["seed"], 0);
    assert_eq!(doc["config_hash"].as_str().unwrap().len(), 16);
    assert!(doc["version"].is_string());
}

#[test]
fn verify_bochner_sphere_table() {
    let o = run(&["verify-bochner", "--model", "sphere2", "--fields", "50", "--points", "20"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("max_horizontal"));
    assert!(text.trim_end().ends_with("verdict pass"));
}

#[test]
fn verify_bochner_fd_backend() {
    let o = run(&["verify-bochner", "--model", "heisenberg", "--backend", "fd", "--fields", "5", "--points", "5"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn reports_are_byte_deterministic_across_thread_counts() {
    let args = ["simulate", "--model", "heisenberg", "--paths", "4000", "--dt", "0.01", "--format", "json", "--seed", "7"];
    let a = run(&args);
    let b = bin().args(args).env("SRC_THREADS", "1").output().unwrap();
    let c = bin().args(args).args(["--threads", "3"]).output().unwrap();
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);
    let other = run(&["simulate", "--model", "heisenberg", "--paths", "4000", "--dt", "0.01", "--format", "json", "--seed", "8"]);
    assert_ne!(json(&a)["config_hash"], json(&other)["config_hash"]);
}

#[test]
fn out_flag_writes_the_report() {
    let path = scratch("constants.json");
    let o = run(&["constants", "--model", "heisenberg", "--format", "json", "--out", path.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
    let direct = run(&["constants", "--model", "heisenberg", "--format", "json"]);
    assert_eq!(std::fs::read(&path).unwrap(), direct.stdout);
}

#[test]
fn csv_format_has_header_and_rows() {
    let o = run(&["certify", "--model", "free_step2_d3", "--points", "4", "--format", "csv"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# subriemann"));
    assert_eq!(lines[1], "point,r_margin,t_excess");
    assert_eq!(lines.len(), 6);
}

#[test]
fn usage_errors_exit_two() {
    for args in [
        vec!["validate"],
        vec!["validate", "--model", "nope"],
        vec!["validate", "--model", "heisenberg", "--structure", "x.json"],
        vec!["frobnicate"],
        vec!["validate", "--model", "su2", "--points", "0"],
        vec!["validate", "--model", "su2", "--tol", "-1"],
        vec!["distance", "--model", "heisenberg", "--to", "1,2"],
        vec!["lambda1", "--model", "heisenberg"],
        vec!["simulate", "--model", "heisenberg", "--dt", "2", "--time", "1"],
        vec!["check-liyau", "--model", "heisenberg", "--coefficients", "1,2,3"],
        vec!["validate", "--model", "su2", "--structure", "/nonexistent/file.json"],
        vec!["validate", "--structure", "/nonexistent/file.json"],
    ] {
        let o = run(&args);
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn malformed_structure_files_exit_two() {
    for (i, text) in [
        "",
        "{",
        "[1, 2, 3]",
        r#"{"format":"srs-v9","name":"x","d":1,"h":0,"chart_dim":1,"model":"euclidean"}"#,
        r#"{"format":"srs-v1","name":"x","d":1,"h":0,"chart_dim":1}"#,
        r#"{"format":"srs-v1","name":"x","d":2,"h":0,"chart_dim":1,"model":"euclidean"}"#,
        r#"{"format":"srs-v1","name":"x","d":1,"h":0,"chart_dim":1,"custom":{"frame":[[{"var":7}]],"vertical":[],"measure_density":[]}}"#,
        r#"{"format":"srs-v1","name":"x","d":1,"h":0,"chart_dim":1,"custom":{"frame":[[[[[0,0],1.0]]]],"vertical":[],"measure_density":[[[0],1.0]]}}"#,
        r#"{"format":"srs-v1","name":"x","d":1,"h":0,"chart_dim":1,"surprise":true,"model":"euclidean"}"#,
    ]
    .iter()
    .enumerate()
    {
        let path = scratch(&format!("bad{i}.json"));
        std::fs::write(&path, text).unwrap();
        let o = run(&["validate", "--structure", path.to_str().unwrap()]);
        assert_eq!(code(&o), 2, "{text}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!String::from_utf8_lossy(&o.stderr).contains("panicked"));
    }
}

#[test]
fn structure_files_round_trip_through_the_cli() {
    for m in [ModelName::Heisenberg { n: 1 }, ModelName::Sphere2] {
        let (s, desc) = build(m);
        let path = scratch(&format!("{m}.json"));
        std::fs::write(&path, StructureFile::from_structure(&s, Some(&desc)).to_json().unwrap()).unwrap();
        let via_file = run(&["certify", "--structure", path.to_str().unwrap(), "--points", "10", "--format", "json"]);
        let via_model = run(&["certify", "--model", &m.to_string(), "--points", "10", "--format", "json"]);
        assert_eq!(code(&via_file), 0, "{}", String::from_utf8_lossy(&via_file.stderr));
        assert_eq!(json(&via_file)["result"], json(&via_model)["result"]);
    }
}

#[test]
fn test_function_file_drives_bochner_check() {
    let path = scratch("testfn.json");
    std::fs::write(
        &path,
        r#"{"format":"testfn-v1","chart_dim":3,"functions":[
            {"id":"xyz","value":[[[1,1,1],1.0]]},
            {"id":"gauss","value":{"exp":{"neg":{"add":[{"powi":[{"var":0},2]},{"powi":[{"var":2},2]}]}}}}]}"#,
    )
    .unwrap();
    let o = run(&["verify-bochner", "--model", "heisenberg", "--functions", path.to_str().unwrap(), "--format", "json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&o)["result"]["fields"].as_array().unwrap().len(), 2);
    let o = run(&["verify-bochner", "--model", "su2", "--functions", path.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "three-dimensional chart on su2 as well");
    let o = run(&["verify-bochner", "--model", "sphere2", "--functions", path.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn failed_verdicts_exit_one() {
    let o = run(&["certify", "--model", "heisenberg", "--rho2", "0.5", "--points", "5"]);
    assert_eq!(code(&o), 1);
    let o = run(&["certify", "--model", "sphere2", "--rho1", "1.1", "--points", "5"]);
    assert_eq!(code(&o), 1);
    let o = run(&["check-liyau", "--model", "heisenberg", "--paths", "100000", "--coefficients", "4,4"]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn geodesic_writes_trajectory_csv() {
    let path = scratch("traj.csv");
    let o = run(&[
        "geodesic", "--model", "heisenberg", "--from", "0,0,0", "--velocity", "1,0", "--a", "2", "--time", "1", "--steps",
        "100", "--trajectory", path.to_str().unwrap(), "--format", "json",
    ]);
    assert_eq!(code(&o), 0);
    assert!(json(&o)["result"]["speed_drift"].as_f64().unwrap() < 1e-10);
    let csv = std::fs::read_to_string(&path).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,x0,x1,x2,u0,u1,a0");
    assert_eq!(csv.lines().count(), 102);
}

#[test]
fn distance_reports_closed_form_on_heisenberg() {
    let o = run(&["distance", "--model", "heisenberg", "--to", "1,0,0", "--format", "json"]);
    assert_eq!(code(&o), 0);
    let r = &json(&o)["result"];
    assert!((r["value"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert!((r["closed_form"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn simulate_exports_ensemble() {
    let path = scratch("ens.srhe");
    let o = run(&[
        "simulate", "--model", "heisenberg", "--paths", "50", "--dt", "0.1", "--time", "1", "--stride", "5", "--ensemble",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let cols = read_srhe(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(cols.len(), 5);
    // the start state plus every fifth of ten steps
    assert_eq!(cols[0].len(), 50 * 3);
    let mut times: Vec<f64> = cols[1][..3].to_vec();
    times.sort_by(f64::total_cmp);
    assert!((times[2] - 1.0).abs() < 1e-12 && times[0] == 0.0);
}

#[test]
fn harnack_on_diagonal_and_degenerate_times() {
    let o = run(&["check-harnack", "--model", "heisenberg", "--paths", "50000", "--dt", "0.005"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let o = run(&["check-harnack", "--model", "heisenberg", "--to", "1,0,0", "--s-time", "1", "--t-time", "1", "--format", "json"]);
    assert_eq!(code(&o), 0);
    assert!(json(&o)["result"]["earlier"].is_null());
}

#[test]
fn volume_and_lambda1_commands() {
    let o = run(&["volume", "--model", "euclidean", "--points", "4000", "--format", "json"]);
    assert_eq!(code(&o), 0);
    let e = json(&o)["result"]["exponent"].as_f64().unwrap();
    assert!((e - 2.0).abs() < 0.1, "{e}");
    let o = run(&["lambda1", "--model", "su2", "--cells", "6,6,6"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn report_all_passes() {
    let o = run(&["report-all", "--points", "5", "--fields", "3", "--format", "json"]);
    assert_eq!(code(&o), 0);
    assert_eq!(json(&o)["result"]["models"].as_array().unwrap().len(), 5);
}
