use std::path::PathBuf;
use std::process::{Command, Output};

use decoopt_core::document::{load_instance, PlanDocument};
use decoopt_core::planner::{brute_force_plan, build_grid, MenuRule, Objective};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn decoopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_decoopt"))
        .args(args)
        .env_remove("DECOOPT_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn plan_args(path: &str, lambda: &str) -> Vec<String> {
    ["plan", "--instance", path, "--lambda", lambda, "--dz", "3", "--menu", "exp:1,8"]
        .map(String::from)
        .to_vec()
}

fn run(args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    decoopt(&refs)
}

fn small() -> String {
    fixture("small-1.json").display().to_string()
}

fn write_variant(dir: &tempfile::TempDir, from: &str, to: &str) -> String {
    let text = std::fs::read_to_string(fixture("small-1.json")).unwrap();
    assert!(text.contains(from));
    let path = dir.path().join("variant.json");
    std::fs::write(&path, text.replace(from, to)).unwrap();
    path.display().to_string()
}

#[test]
fn plan_reports_objective() {
    let out = run(&plan_args(&small(), "10"));
    assert!(out.status.success(), "{}", stderr(&out));
    let doc = PlanDocument::from_json(&stdout(&out)).unwrap();
    let j = doc.outcome.j_lambda.expect("J_lambda present");
    assert!((j - (doc.outcome.t_min + 10.0 * doc.outcome.r)).abs() < 1e-9);
    assert_eq!(doc.outcome.per_segment_risk.len(), doc.segments.len());
}

#[test]
fn plan_document_round_trips_and_reproduces() {
    let inst = load_instance(&std::fs::read_to_string(fixture("small-1.json")).unwrap()).unwrap();
    let out = run(&plan_args(&small(), "25"));
    assert!(out.status.success());
    let doc = PlanDocument::from_json(&stdout(&out)).unwrap();
    assert!(doc.verify(&inst).unwrap() < 1e-9);
    let again = PlanDocument::from_json(&doc.to_json().unwrap()).unwrap();
    assert_eq!(doc, again);
}

#[test]
fn repeated_runs_are_identical() {
    let a = run(&plan_args(&small(), "10"));
    let b = run(&plan_args(&small(), "10"));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn out_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plan.json");
    let mut args = plan_args(&small(), "10");
    args.extend(["--out".into(), path.display().to_string()]);
    let out = run(&args);
    assert!(out.status.success());
    assert!(stdout(&out).is_empty());
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, stdout(&run(&plan_args(&small(), "10"))));
}

#[test]
fn closed_stdout_is_not_an_error() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_decoopt"))
        .args(plan_args(&small(), "100"))
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    drop(child.stdout.take());
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn polish_attaches_stationarity_report() {
    let mut args = plan_args(&small(), "50");
    args.push("--polish".into());
    let out = run(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    let doc = PlanDocument::from_json(&stdout(&out)).unwrap();
    assert!(doc.kkt.is_some());
}

#[test]
fn malformed_json_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{ \"environment\": ").unwrap();
    let out = run(&plan_args(&path.display().to_string(), "1"));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error:"));
}

#[test]
fn unknown_field_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_variant(&dir, "\"switch_cost_min\"", "\"colour\": 1, \"switch_cost_min\"");
    assert_eq!(run(&plan_args(&path, "1")).status.code(), Some(2));
}

#[test]
fn missing_file_and_bad_parameters_are_validation_errors() {
    assert_eq!(run(&plan_args("/nonexistent/instance.json", "1")).status.code(), Some(2));
    assert_eq!(run(&plan_args(&small(), "-1")).status.code(), Some(2));
    let out = decoopt(&["plan", "--instance", &small(), "--lambda", "1", "--dz", "3", "--menu", "exp:8,1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = decoopt(&["plan", "--instance", &small(), "--lambda", "1", "--dz", "0", "--menu", "exp:1,8"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_feasible_set_is_infeasible_and_names_depth() {
    let dir = tempfile::tempdir().unwrap();
    // Only ean50 left, started at 30 m where its ppO2 is 2.0 bar.
    let text = std::fs::read_to_string(fixture("small-1.json"))
        .unwrap()
        .replace("{ \"label\": \"air\", \"f_o2\": 0.21, \"f_n2\": 0.79, \"f_he\": 0.0 },", "")
        .replace("\"z_start_m\": 12.0", "\"z_start_m\": 30.0");
    let path = dir.path().join("hot.json");
    std::fs::write(&path, text).unwrap();
    let out = run(&plan_args(&path.display().to_string(), "1"));
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("30"), "{}", stderr(&out));
}

fn cap(rho: &str) -> Output {
    decoopt(&["cap", "--instance", &small(), "--rho", rho, "--dr", "0.001", "--dz", "3", "--menu", "exp:1,8"])
}

#[test]
fn generous_cap_gives_straight_ascent() {
    let out = cap("100");
    assert!(out.status.success());
    let doc = PlanDocument::from_json(&stdout(&out)).unwrap();
    assert!(doc.segments.iter().all(|s| !matches!(s, decoopt_core::document::SegmentDoc::Hold { .. })));
    assert!(doc.cap.unwrap().margin >= 0.0);
}

#[test]
fn cap_matches_brute_force() {
    let out = cap("0.6");
    assert!(out.status.success(), "{}", stderr(&out));
    let doc = PlanDocument::from_json(&stdout(&out)).unwrap();
    let inst = load_instance(&std::fs::read_to_string(fixture("small-1.json")).unwrap()).unwrap();
    let grid = build_grid(&inst, 3.0, &MenuRule::Exponential { tau_min: 1.0, tau_max: 8.0 }).unwrap();
    let oracle = brute_force_plan(&inst, &grid, Objective::Capped { rho: 0.6, dr: 0.001 }).unwrap();
    assert!((doc.outcome.t_min - oracle.outcome.total_time).abs() < 1e-9);
    assert!(doc.outcome.r <= 0.6 + 0.001);
}

#[test]
fn cap_below_minimum_risk_is_infeasible() {
    let out = cap("0.3");
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn sweep_writes_one_row_per_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("frontier.csv");
    let out = decoopt(&[
        "sweep", "--instance", &small(), "--geom", "0.1,1000,20", "--dz", "3", "--menu", "exp:1,8", "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 21);
    assert!(stderr(&out).contains("envelope: PASS"));
}

#[test]
fn sweep_is_independent_of_thread_count() {
    let args = ["sweep", "--instance", &small(), "--lambdas", "1,5,25,125", "--dz", "3", "--menu", "exp:1,8"];
    let one = decoopt(&args);
    let mut threaded: Vec<&str> = args.to_vec();
    threaded.extend(["--threads", "4"]);
    let four = decoopt(&threaded);
    assert!(one.status.success() && four.status.success());
    assert_eq!(one.stdout, four.stdout);
}

#[test]
fn sweep_needs_lambdas() {
    let out = decoopt(&["sweep", "--instance", &small(), "--dz", "3", "--menu", "exp:1,8"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn converge_reports_each_level() {
    let out = decoopt(&[
        "converge", "--instance", &small(), "--lambda", "10", "--dz", "3,1.5", "--delta", "2,1", "--menu-max", "8",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn probe_from_surface_has_zero_value() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_variant(&dir, "\"z_start_m\": 12.0", "\"z_start_m\": 0.0");
    let out = decoopt(&[
        "probe", "--instance", &path, "--lambda", "10", "--z-layers", "20", "--p-nodes", "20", "--pairs", "100",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["start"]["v"], 0.0);
    assert_eq!(v["lipschitz_violations"], 0);
}

#[test]
fn probe_at_depth_brackets_value() {
    let out = decoopt(&[
        "probe", "--instance", &small(), "--lambda", "10", "--z-layers", "61", "--p-nodes", "30", "--pairs", "200",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(v["start"]["v"].as_f64().unwrap() > 0.0);
    assert_eq!(v["rollout"]["completed"], true);
}

#[test]
fn hardness_exhaustive_passes() {
    let out = decoopt(&["hardness", "verify", "--m", "3", "--exhaustive"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("equivalence: PASS"));
}

#[test]
fn hardness_single_and_random() {
    let out = decoopt(&["hardness", "verify", "--items", "2:1,3:2,4:3", "--capacity", "3", "--target", "5"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("knapsack yes, reduction yes"));
    let out = decoopt(&["hardness", "verify", "--items", "2:1,3:2,4:3", "--capacity", "3", "--target", "6"]);
    assert!(stdout(&out).contains("knapsack no, reduction no"));
    let out = decoopt(&["hardness", "verify", "--random", "5", "--m", "4", "--seed", "7"]);
    assert!(stdout(&out).starts_with("equivalence: PASS"), "{}", stderr(&out));
}

#[test]
fn hardness_gen_emits_loadable_instance() {
    let out = decoopt(&["hardness", "gen", "--items", "1:1,2:2", "--capacity", "2", "--target", "2"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let inst = serde_json::to_string(&v["instance"]).unwrap();
    load_instance(&inst).unwrap();
}

#[test]
fn hardness_rejects_bad_items() {
    let out = decoopt(&["hardness", "gen", "--items", "1-1", "--capacity", "2", "--target", "2"]);
    assert_eq!(out.status.code(), Some(2));
}
