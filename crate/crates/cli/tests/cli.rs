use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
        .display()
        .to_string()
}

fn cps(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cps"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("CPS_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn solve_writes_artifact_and_table_with_headers() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cps(tmp.path(), &["solve", "--config", &fixture("tiny.toml"), "--seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(tmp.path().join("value_table.csv")).unwrap();
    let first = table.lines().next().unwrap();
    assert!(first.starts_with("# cps command=solve config_hash="));
    assert!(first.contains(" seed=7"));
    let json = fs::read_to_string(tmp.path().join("solution.json")).unwrap();
    assert!(json.contains("\"config_hash\""));
    assert!(json.contains("\"seed\": 7"));
}

#[test]
fn grid_representation_is_selected_by_resolution() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cps(tmp.path(), &["solve", "--config", &fixture("tiny.toml"), "--grid-m", "6"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let json = fs::read_to_string(tmp.path().join("solution.json")).unwrap();
    assert!(json.contains("\"kind\": \"grid\""));
    assert!(json.contains("\"resolution\": 6"));
}

#[test]
fn identical_invocations_are_byte_identical() {
    let runs: Vec<Vec<&str>> = vec![
        vec!["solve", "--config", "tiny.toml", "--beta", "2.5"],
        vec!["simulate", "--config", "tiny.toml", "--episodes", "500", "--seed", "3", "--coupling", "independent"],
        vec!["simulate", "--config", "learning3.toml", "--episodes", "300", "--mode", "learned", "--runs", "2", "--seed", "4"],
        vec!["filter-trace", "--config", "learning3.toml", "--seed", "9", "--grid-m", "3"],
        vec!["example", "--rho", "0.25", "--samples", "20000", "--seed", "2"],
        vec!["oracle-check", "--config", "tiny.toml", "--instances", "2"],
    ];
    for args in runs {
        let args: Vec<String> = args
            .iter()
            .map(|a| if a.ends_with(".toml") { fixture(a) } else { a.to_string() })
            .collect();
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let oa = cps(a.path(), &args);
        let ob = cps(b.path(), &args);
        assert!(oa.status.success() && ob.status.success(), "{args:?}: {}", stderr(&oa));
        assert_eq!(oa.stdout.len(), ob.stdout.len());
        let (fa, fb) = (files(a.path()), files(b.path()));
        assert!(!fa.is_empty());
        assert_eq!(fa, fb, "{args:?}");
        for (name, bytes) in &fa {
            let text = String::from_utf8_lossy(bytes);
            assert!(text.contains("config_hash"), "{name} lacks the config hash");
            assert!(text.contains("seed"), "{name} lacks the seed");
        }
    }
}

#[test]
fn example_reports_both_correlation_regimes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cps(tmp.path(), &["example", "--rho", "-0.5", "--samples", "100000"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let gains = fs::read_to_string(tmp.path().join("example_gains.csv")).unwrap();
    assert!(gains.lines().any(|l| l.starts_with("closed_form,0.5,0.5,-0.25,")));
    let report = fs::read_to_string(tmp.path().join("example_report.txt")).unwrap();
    assert!(report.contains("claim_check=consistent"));

    let o = cps(tmp.path(), &["example", "--rho", "0.5", "--samples", "100000"]);
    assert!(o.status.success());
    let report = fs::read_to_string(tmp.path().join("example_report.txt")).unwrap();
    assert!(report.contains("claim_check=FLAG"));
    assert!(report.contains("closed-form gains (a, b, c) = (1.5, 0.5, -0.75)"));
}

#[test]
fn oracle_check_rows_are_within_tolerance() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cps(tmp.path(), &["oracle-check", "--config", &fixture("tiny.toml"), "--instances", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("oracle_check.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(2).collect();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.ends_with(",true")));
}

#[test]
fn output_directory_defaults_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_cps"))
        .args(["solve", "--config", &fixture("tiny.toml")])
        .env("CPS_OUT_DIR", &dir)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.join("solution.json").exists());
}

#[test]
fn errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad_syntax = tmp.path().join("bad.toml");
    fs::write(&bad_syntax, "num_states = [").unwrap();
    let o = cps(tmp.path(), &["solve", "--config", bad_syntax.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let line = stderr(&o);
    assert!(line.starts_with("error kind=parse message="));
    assert_eq!(line.trim_end().lines().count(), 1);

    let bad_row = tmp.path().join("row.toml");
    let text = fs::read_to_string(fixture("tiny.toml")).unwrap().replace("[[0.9, 0.1], [0.3, 0.7]]", "[[0.6, 0.6], [0.3, 0.7]]");
    fs::write(&bad_row, text).unwrap();
    let o = cps(tmp.path(), &["solve", "--config", bad_row.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("row sum 1.2"));

    let o = cps(tmp.path(), &["solve", "--config", &fixture("tiny.toml"), "--beta", "-1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error kind=validation"));

    let o = cps(tmp.path(), &["example", "--rho", "1.5"]);
    assert_eq!(o.status.code(), Some(3));

    let o = cps(tmp.path(), &["solve", "--config", &fixture("learning3.toml"), "--grid-m", "100000"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error kind=budget"));

    let o = cps(tmp.path(), &["solve", "--config", &tmp.path().join("missing.toml").display().to_string()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error kind=io"));
}
