use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "name": "tiny",
  "capacity": 1.0,
  "cps": [
    {"id": "video", "v": 1.0, "alpha": 5.0, "beta": 2.0},
    {"id": "web", "v": 0.5, "alpha": 2.0, "beta": 2.0}
  ],
  "p_grid": [0.25, 0.5, 1.0, 1.5],
  "q_levels": [0, 1]
}"#;

fn subsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_subsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_scenario(dir: &Path, text: &str) -> String {
    let path = dir.join("scenario.json");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn solve_prints_a_csv_row() {
    let o = subsim(&["--scenario", "fig5-8cp", "solve", "--p", "1", "--q", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("p,q,phi,theta,R,W,"));
    let row = lines.next().unwrap();
    assert!(row.starts_with("1,1,"));
    assert!(row.contains(",ok,"));
}

#[test]
fn nash_reports_certificate_and_json() {
    let o = subsim(&["nash", "--p", "1", "--q", "1", "--samples", "16"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 9);
    assert!(String::from_utf8_lossy(&o.stderr).contains("converged=true"));

    let o = subsim(&["--format", "json", "nash", "--p", "1", "--q", "1", "--samples", "0"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["ids"].as_array().unwrap().len(), 8);
    assert_eq!(v["certificate"]["converged"], true);
    let s = v["profile"]["subsidies"].as_array().unwrap();
    assert!(s.iter().all(|x| (0.0..=1.0).contains(&x.as_f64().unwrap())));
}

#[test]
fn sweep_writes_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), SMALL);
    let mut outputs = Vec::new();
    for (k, jobs) in ["1", "4"].into_iter().enumerate() {
        let out = dir.path().join(format!("out{k}"));
        let o = subsim(&["--scenario", &scenario, "--out", out.to_str().unwrap(), "--jobs", jobs, "sweep"]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(std::fs::read(out.join("tiny.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(String::from_utf8_lossy(&outputs[0]).lines().count(), 1 + 4 * 2);
}

#[test]
fn sweep_json_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), SMALL);
    let o = subsim(&["--scenario", &scenario, "--format", "json", "sweep"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["records"].as_array().unwrap().len(), 8);
    assert_eq!(v["ids"][0], "video");
}

#[test]
fn sensitivity_prints_partition() {
    let o = subsim(&["sensitivity", "--p", "1", "--q", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.starts_with("id,set,ds_dq,ds_dp,"));
    assert_eq!(text.lines().count(), 9);
    assert!(String::from_utf8_lossy(&o.stderr).contains("upsilon="));
}

#[test]
fn verify_runs_a_suite() {
    let o = subsim(&["--scenario", "fig3-9cp", "verify", "fixedpoint"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.starts_with("suite,check,passed,"));
    assert!(text.lines().skip(1).all(|l| l.contains(",true,")));
}

#[test]
fn scenario_validate_accepts_and_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_scenario(dir.path(), SMALL);
    let o = subsim(&["--scenario", &good, "scenario", "validate"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("`tiny` is valid: 2 providers"));

    let bad = write_scenario(dir.path(), &SMALL.replace("\"beta\": 2.0}", "\"beta\": -2.0}"));
    let o = subsim(&["--scenario", &bad, "scenario", "validate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cps[0].beta"));
}

#[test]
fn exit_codes_follow_error_classes() {
    assert_eq!(subsim(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(subsim(&["--help"]).status.code(), Some(0));
    assert_eq!(subsim(&["--scenario", "/nonexistent/s.json", "solve", "--p", "1"]).status.code(), Some(2));
    assert_eq!(subsim(&["solve", "--p=-1"]).status.code(), Some(2));
    assert_eq!(subsim(&["nash", "--p", "1", "--q=-0.5"]).status.code(), Some(2));
}
