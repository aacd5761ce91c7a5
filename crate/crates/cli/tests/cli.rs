use std::process::{Command, Output};

const T1: &str = r#"{"family":"theorem2","beta":1}"#;

fn skipwalk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skipwalk")).args(args).output().expect("binary runs")
}

fn stdout(args: &[&str]) -> String {
    let out = skipwalk(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn simulate_is_reproducible_per_seed() {
    let args = ["simulate", "--spec", T1, "--k", "10,20", "--j", "10", "--replicas", "3000", "--format", "csv", "--seed", "7"];
    let a = stdout(&args);
    assert_eq!(a, stdout(&args));
    assert!(a.starts_with("k,j,count,freq,se\n"), "{a}");
    let mut other = args;
    other[12] = "8";
    assert_ne!(a, stdout(&other));
}

#[test]
fn growth_table_is_reproducible() {
    let args = ["simulate", "--spec", T1, "--levels", "32,64", "--replicas", "20", "--format", "csv"];
    let a = stdout(&args);
    assert_eq!(a, stdout(&args));
    assert_eq!(a.lines().count(), 1 + 2 * 20);
}

#[test]
fn printed_config_replays() {
    let args = ["exact", "--spec", T1, "--query", "skip", "--k", "5,50", "--format", "json"];
    let direct = stdout(&args);
    let mut with_print = args.to_vec();
    with_print.push("--print-config");
    let config = stdout(&with_print);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    std::fs::write(&path, &config).unwrap();
    let p = path.to_str().unwrap();
    assert_eq!(stdout(&["run", "--config", p]), direct);
    assert_eq!(stdout(&["run", "--config", p, "--print-config"]), config);
}

#[test]
fn out_file_matches_stdout() {
    let args = ["tails", "--spec", T1, "--n-hi", "50", "--format", "csv"];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tails.csv");
    let mut with_out = args.to_vec();
    with_out.extend(["--out", path.to_str().unwrap()]);
    assert!(stdout(&with_out).is_empty());
    assert_eq!(std::fs::read_to_string(&path).unwrap(), stdout(&args));
}

#[test]
fn config_errors_exit_2_and_name_the_field() {
    let out = skipwalk(&["exact", "--spec", T1, "--query", "p", "--a", "1", "--b", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--c"));
    let out = skipwalk(&["tails", "--spec", r#"{"family":"theorem2","beta":-1}"#]);
    assert_eq!(out.status.code(), Some(2));
    let out = skipwalk(&["tails", "--spec", T1, "--tol", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--tol"));
}

#[test]
fn failed_verification_exits_3() {
    let out = skipwalk(&["verify", "--spec", T1, "--n-hi", "100", "--replicas", "1", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(3));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("mc,") && l.ends_with(",false")), "{text}");
}

#[test]
fn numeric_failure_exits_4() {
    let spec = r#"{"family":"theorem2","beta":2}"#;
    let out = skipwalk(&["exact", "--spec", spec, "--tol", "1e-15", "--n-cap", "2000", "--query", "skip", "--k", "10"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not converged"));
    // The D table itself reports the status instead of failing.
    let out = skipwalk(&["dseries", "--spec", spec, "--tol", "1e-15", "--n-cap", "2000", "--n-hi", "10", "--format", "csv"]);
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains(",capped,"));
}

#[test]
fn classify_beta_two_is_finite() {
    let j: serde_json::Value =
        serde_json::from_str(&stdout(&["classify", "--spec", r#"{"family":"theorem2","beta":2}"#, "--format", "json"])).unwrap();
    assert_eq!(j["verdict"], "FiniteSkips");
    assert_eq!(j["qualifier"], "almost surely");
    let j: serde_json::Value = serde_json::from_str(&stdout(&["classify", "--spec", T1, "--format", "json"])).unwrap();
    assert_eq!(j["verdict"], "InfiniteSkips");
}

#[test]
fn verify_zero_family_passes() {
    let j: serde_json::Value =
        serde_json::from_str(&stdout(&["verify", "--spec", r#"{"family":"zero"}"#, "--replicas", "20000", "--format", "json"])).unwrap();
    assert_eq!(j["passed"], true);
}
