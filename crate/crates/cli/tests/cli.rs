use std::path::{Path, PathBuf};

use catdisp_cli::{run, EXIT_BAD_INPUT, EXIT_CHECK_FAILED, EXIT_OK};
use serde_json::Value;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn cli(args: &[&str]) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["catdisp"];
    argv.extend_from_slice(args);
    let code = run(argv, &mut out, &mut err);
    Run { code, stdout: String::from_utf8(out).unwrap(), stderr: String::from_utf8(err).unwrap() }
}

fn scenario_file(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn constant(growth: &str, theta: f64, lambda: f64, p: f64, d: u32, extra: &str) -> String {
    format!(
        r#"{{"schema_version": 1, "name": "c", "growth": "{growth}", "kernel": {{"type": "binomial"}},
            "environment": {{"type": "constant", "theta": {theta}, "lambda": {lambda}, "p": {p}, "d": {d}}}{extra}}}"#
    )
}

fn repo_scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name).to_string_lossy().into_owned()
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

fn verdicts(text: &str) -> Vec<Value> {
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn mean_table_worked_case() {
    let r = cli(&["mean-table", "--scenario", &repo_scenario("worked_constant.json")]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert_eq!(r.stdout.lines().next().unwrap(), "env_index,theta,lambda,p,d,mu1,mu2,mu3,mu4");
    assert_eq!(csv_rows(&r.stdout), vec!["0,1,1,1,2,2,1.5,1.333333333,1.227411278".split(',').map(String::from).collect::<Vec<_>>()]);
}

#[test]
fn mean_table_single_site_and_infinite_mean() {
    let tmp = tempfile::tempdir().unwrap();
    let single = scenario_file(tmp.path(), "d1.json", &constant("poissonian", 2.0, 1.0, 0.7, 1, ""));
    let row = &csv_rows(&cli(&["mean-table", "--scenario", single.to_str().unwrap()]).stdout)[0];
    assert_eq!(row[6], row[7]);
    assert_eq!(row[7], row[8]);

    let yule = scenario_file(tmp.path(), "yule.json", &constant("yule", 1.0, 1.0, 1.0, 3, ""));
    let r = cli(&["mean-table", "--scenario", yule.to_str().unwrap()]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let row = &csv_rows(&r.stdout)[0];
    assert_eq!(row[5], "inf");
    assert!(row[6..].iter().all(|v| v.parse::<f64>().unwrap().is_finite()));
}

#[test]
fn mean_table_lists_deterministic_generations() {
    let r = cli(&["mean-table", "--scenario", &repo_scenario("fertility_decay.json")]);
    assert_eq!(r.code, EXIT_OK);
    let rows = csv_rows(&r.stdout);
    assert_eq!(rows.len(), 5);
    // fertility decays, so every mean decreases along the table
    let mu1: Vec<f64> = rows.iter().map(|r| r[5].parse().unwrap()).collect();
    assert!(mu1.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn classify_constant_survival() {
    let tmp = tempfile::tempdir().unwrap();
    let s = scenario_file(tmp.path(), "c.json", &constant("poissonian", 1.0, 1.0, 0.6, 2, r#", "mechanism": "D1""#));
    let r = cli(&["classify", "--scenario", s.to_str().unwrap()]);
    assert_eq!(r.code, EXIT_OK);
    let v = verdicts(&r.stdout);
    assert_eq!(v.len(), 1);
    assert_eq!(v[0]["verdict"]["outcome"], "SurvivalPositive");
}

#[test]
fn classify_threshold_sweep_flips_at_one_half() {
    let r = cli(&["classify", "--scenario", &repo_scenario("threshold_sweep.json")]);
    assert_eq!(r.code, EXIT_OK);
    let outcomes: Vec<(f64, String)> = verdicts(&r.stdout)
        .iter()
        .map(|v| (v["value"].as_f64().unwrap(), v["verdict"]["outcome"].as_str().unwrap().to_string()))
        .collect();
    for (p, outcome) in outcomes {
        let expected = if p < 0.5 {
            "ExtinctionAS"
        } else if p > 0.5 {
            "SurvivalPositive"
        } else {
            "CriticalIndeterminate"
        };
        assert_eq!(outcome, expected, "p = {p}");
    }
}

#[test]
fn classify_fertility_decay_goes_extinct_for_every_mechanism() {
    let r = cli(&["classify", "--scenario", &repo_scenario("fertility_decay.json")]);
    let v = verdicts(&r.stdout);
    assert_eq!(v.len(), 4);
    assert!(v.iter().all(|v| v["verdict"]["outcome"] == "ExtinctionAS"));
}

#[test]
fn classify_random_family_falls_back_to_ergodic_average() {
    let tmp = tempfile::tempdir().unwrap();
    let body = r#"{"schema_version": 1, "name": "iid", "growth": "poissonian", "kernel": {"type": "binomial"},
        "mechanism": "D1",
        "environment": {"type": "iid", "marginal": {"law": "product", "theta": {"lo": 1.0, "hi": 2.0}, "lambda": 1.0, "p": 0.95, "d": 2}},
        "classification": {"horizon": 20000}}"#;
    let s = scenario_file(tmp.path(), "iid.json", body);
    let r = cli(&["classify", "--scenario", s.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let v = &verdicts(&r.stdout)[0]["verdict"];
    assert_eq!(v["basis"]["type"], "numeric_estimate");
    assert_eq!(v["outcome"], "SurvivalPositive");
    let again = cli(&["classify", "--scenario", s.to_str().unwrap(), "--seed", "3", "--threads", "2"]);
    assert_eq!(again.stdout, r.stdout);
}

#[test]
fn simulate_rejects_empty_scenario() {
    let tmp = tempfile::tempdir().unwrap();
    for body in ["", "{}"] {
        let s = scenario_file(tmp.path(), "empty.json", body);
        let r = cli(&["simulate", "--scenario", s.to_str().unwrap()]);
        assert_eq!(r.code, EXIT_BAD_INPUT);
        assert!(r.stderr.contains("bad input"));
    }
    assert_eq!(cli(&["simulate"]).code, EXIT_BAD_INPUT);
    assert_eq!(cli(&["no-such-command"]).code, EXIT_BAD_INPUT);
}

#[test]
fn simulate_echoes_seed_and_writes_one_row_per_replicate() {
    let tmp = tempfile::tempdir().unwrap();
    let extra = r#", "mechanism": "D2", "simulation": {"generations": 30, "replicates": 250, "seed": 11}"#;
    let s = scenario_file(tmp.path(), "s.json", &constant("poissonian", 1.0, 1.0, 0.8, 2, extra));
    let out = tmp.path().join("out");
    let r = cli(&["simulate", "--scenario", s.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "77"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert_eq!(r.stdout.trim(), "master_seed 77");
    let summary: Value = serde_json::from_slice(&std::fs::read(out.join("simulation_D2.json")).unwrap()).unwrap();
    assert_eq!(summary["master_seed"], 77);
    let csv = std::fs::read_to_string(out.join("replicates_D2.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "replicate_id,outcome,extinction_generation_or_-1,final_or_capped_Z");
    let rows = csv_rows(&csv);
    assert_eq!(rows.len(), 250);
    let survivors = rows.iter().filter(|r| r[1] != "extinct").count();
    assert_eq!(summary["survivors"], survivors);
}

#[test]
fn verdicts_and_simulation_agree_qualitatively() {
    let tmp = tempfile::tempdir().unwrap();
    let body = r#"{"schema_version": 1, "name": "agree", "growth": "poissonian", "kernel": {"type": "binomial"},
        "mechanism": "D1",
        "environment": {"type": "constant", "theta": 1.0, "lambda": 1.0, "p": 0.5, "d": 2},
        "simulation": {"generations": 200, "replicates": 10000, "seed": 5},
        "sweep": {"parameter": "p", "values": [0.4, 0.45, 0.55, 0.6]}}"#;
    let s = scenario_file(tmp.path(), "agree.json", body);
    let r = cli(&["scan", "--scenario", s.to_str().unwrap()]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let rows = csv_rows(&r.stdout);
    assert_eq!(rows.len(), 4);
    for row in rows {
        let survivors: u32 = row[5].parse().unwrap();
        match row[3].as_str() {
            "SurvivalPositive" => assert!(survivors > 0, "{row:?}"),
            "ExtinctionAS" => assert_eq!(survivors, 0, "{row:?}"),
            other => panic!("unexpected verdict {other}"),
        }
    }
}

#[test]
fn verify_passes_and_catches_perturbation() {
    let r = cli(&["verify"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stdout);
    let rows = csv_rows(&r.stdout);
    assert!(rows.len() >= 10);
    assert!(rows.iter().all(|r| r[3] == "PASS"));
    let bad = cli(&["verify", "--perturb-mean", "D4:1e-6"]);
    assert_eq!(bad.code, EXIT_CHECK_FAILED);
    assert!(bad.stdout.contains("FAIL"));
}
