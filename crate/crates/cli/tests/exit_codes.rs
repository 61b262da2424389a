use std::fs;
use std::process::Command;

fn fldrop(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fldrop"))
        .args(args)
        .output()
        .unwrap()
}

const TINY: &str = r#"
trials = 1
base_seed = 3
[protocol]
n = 6
m = 2
rounds = 3
server_lr = 0.25
local_epochs = 1
local_lr = 0.1
[data]
k = 2
target_class = 0
alpha_t = 0.5
alpha_d = 1.0
local_size = 10
test_per_class = 5
target_set_size = 5
[data.synthetic]
class_count = 3
input_dim = 3
separation = 3.0
pool_per_class = 60
"#;

#[test]
fn run_writes_outputs_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("out");
    let res = fldrop(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        res.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let csv = fs::read_to_string(out.join("rounds.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(out.join("summary.json").exists());
}

#[test]
fn config_problems_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    let out = dir.path().join("out");
    let args = |c: &str| fldrop(&["run", "--config", c, "--out", out.to_str().unwrap()]);

    fs::write(&cfg, format!("{TINY}\nsurprise = 1\n")).unwrap();
    assert_eq!(args(cfg.to_str().unwrap()).status.code(), Some(1));

    fs::write(&cfg, TINY.replace("m = 2", "m = 7")).unwrap();
    assert_eq!(args(cfg.to_str().unwrap()).status.code(), Some(1));

    assert_eq!(args("/nonexistent/c.toml").status.code(), Some(1));
    assert_eq!(fldrop(&["run"]).status.code(), Some(1));
}

#[test]
fn analyze_prints_both_forms() {
    let res = fldrop(&[
        "analyze",
        "--n",
        "60",
        "--m",
        "10",
        "--k",
        "15",
        "--kn",
        "15",
        "--mc-trials",
        "200",
    ]);
    assert_eq!(res.status.code(), Some(0));
    let text = String::from_utf8_lossy(&res.stdout);
    assert!(text.contains("19.9"), "{text}");
    assert!(text.contains("16.2"), "{text}");
}
