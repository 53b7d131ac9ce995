use std::path::PathBuf;
use std::process::{Command, Output};

fn rotperm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rotperm")).args(args).output().expect("binary runs")
}

fn data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name).display().to_string()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn test_on_bundled_data_is_deterministic() {
    let args = ["test", &data("example_h0.csv"), "--stat", "T", "--perms", "999", "--seed", "5", "--format", "json"];
    let first = rotperm(&args);
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    let second = rotperm(&args);
    assert_eq!(stdout(&first), stdout(&second));
    assert!(stdout(&first).contains("\"p_value\""));
}

#[test]
fn malformed_csv_exits_with_code_two_and_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "occasion,cluster_id,unit,value\n0,1,1,2.5\n0,1,2\n").unwrap();
    let out = rotperm(&["test", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn percentile_outside_range_exits_with_code_three() {
    // occasion 1 sits far above occasion 0, so the pooled 5th percentile
    // falls below everything observed on occasion 1
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("shifted.csv");
    let mut text = String::from("occasion,cluster_id,unit,value\n");
    for cluster in 1..=10 {
        for unit in 1..=2 {
            text += &format!("0,{cluster},{unit},{}\n", cluster as f64 + 0.1 * unit as f64);
            text += &format!("1,{},{unit},{}\n", cluster + 10, 100.0 + cluster as f64 + 0.1 * unit as f64);
        }
    }
    std::fs::write(&path, text).unwrap();
    let out = rotperm(&["test", path.to_str().unwrap(), "--stat", "ELR:0.05", "--perms", "9"]);
    assert_eq!(out.status.code(), Some(3));
    let report = stdout(&out);
    assert!(report.contains("percentile outside range"), "{report}");
    assert!(report.contains("population has significantly changed"));
}

#[test]
fn generate_then_validate_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gamma.csv");
    let out = rotperm(&["generate", "--model", "gamma", "--seed", "3", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let out = rotperm(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("5 occasions, n = 36, m = 6, r = 5"));
}

#[test]
fn simulate_output_does_not_depend_on_threads() {
    let base = ["simulate", "--config", &data("example.conf"), "--reps", "3", "--perms", "19", "--format", "json"];
    let one = rotperm(&[&base[..], &["--threads", "1"]].concat());
    let two = rotperm(&[&base[..], &["--threads", "2"]].concat());
    assert_eq!(one.status.code(), Some(0), "{}", String::from_utf8_lossy(&one.stderr));
    assert_eq!(stdout(&one), stdout(&two));
    assert!(stdout(&one).contains("\"non-perm\""));
}

#[test]
fn bad_config_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.conf");
    std::fs::write(&path, "model = normal\nrun.reps = many\n").unwrap();
    let out = rotperm(&["simulate", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = rotperm(&["simulate", "--stat", "XYZ"]);
    assert_eq!(out.status.code(), Some(2));
}
