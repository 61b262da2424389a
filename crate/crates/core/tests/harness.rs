use std::fs;
use std::path::PathBuf;

use fldrop_core::harness::metrics::ROUNDS_CSV_HEADER;
use fldrop_core::harness::{
    emit_metrics, emit_sweep, half_round, run_scenario, run_trial, sweep_grid, RunSummary,
    ScenarioConfig,
};

fn standard() -> ScenarioConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/standard.toml");
    ScenarioConfig::load(&path).unwrap()
}

const TINY: &str = r#"
trials = 2
base_seed = 5

[protocol]
n = 8
m = 3
rounds = 4
server_lr = 0.25
local_epochs = 1
local_lr = 0.1
batch_size = 10

[data]
k = 2
target_class = 0
alpha_t = 0.5
alpha_d = 1.0
local_size = 20
test_per_class = 10
target_set_size = 10

[data.synthetic]
class_count = 3
input_dim = 4
separation = 3.0
pool_per_class = 200

[attack]
kind = "targeted"
drop_count = 2
rounds_before_drop = 2
observation = "encrypted"
"#;

fn tiny() -> ScenarioConfig {
    ScenarioConfig::from_toml_str(TINY).unwrap()
}

#[test]
fn learning_progresses_from_half_time_to_the_end() {
    let cfg = standard();
    let summary = run_scenario(&cfg).unwrap();
    assert_eq!(summary.mean_half.round, half_round(cfg.protocol.rounds));
    assert!(
        summary.mean_final.target_acc > summary.mean_half.target_acc,
        "{} then {}",
        summary.mean_half.target_acc,
        summary.mean_final.target_acc
    );
}

#[test]
fn two_rounds_one_trial_gives_two_csv_rows() {
    let mut cfg = tiny();
    cfg.trials = 1;
    cfg.protocol.rounds = 2;
    cfg.attack = None;
    let summary = run_scenario(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_metrics(&summary, dir.path()).unwrap();
    let csv = fs::read_to_string(dir.path().join("rounds.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], ROUNDS_CSV_HEADER);
    assert_eq!(lines.len(), 3);
}

#[test]
fn summary_json_echoes_the_config() {
    let cfg = tiny();
    let summary = run_scenario(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_metrics(&summary, dir.path()).unwrap();
    let json = fs::read_to_string(dir.path().join("summary.json")).unwrap();
    let parsed: RunSummary = serde_json::from_str(&json).unwrap();
    assert_eq!(parsed.config, cfg);
    assert_eq!(parsed.per_trial.len(), cfg.trials);
    assert_eq!(parsed.per_trial, summary.per_trial);
}

#[test]
fn trial_order_does_not_matter() {
    let cfg = tiny();
    let summary = run_scenario(&cfg).unwrap();
    let mut reversed: Vec<_> = (0..cfg.trials)
        .rev()
        .map(|i| run_trial(&cfg, i).unwrap())
        .collect();
    reversed.reverse();
    assert_eq!(reversed, summary.series);
    for (i, s) in summary.series.iter().enumerate() {
        assert_eq!(s.seed, cfg.base_seed + i as u64);
        assert_eq!(s.rounds.len(), cfg.protocol.rounds);
    }
}

#[test]
fn attack_starts_dropping_after_observation_rounds() {
    let summary = run_scenario(&tiny()).unwrap();
    for s in &summary.series {
        assert!(s.rounds[..2].iter().all(|r| r.dropped_count == 0));
    }
}

#[test]
fn empty_sweep_cell_matches_the_base_run() {
    let mut cfg = tiny();
    cfg.attack = None;
    let grid = sweep_grid(&cfg, &[0], &[0], false).unwrap();
    assert_eq!(grid.len(), 1);
    assert_eq!(grid[0][0].summary, run_scenario(&cfg).unwrap());
    let dir = tempfile::tempdir().unwrap();
    emit_sweep(&grid, dir.path()).unwrap();
    assert!(dir.path().join("kn0_kp0/rounds.csv").exists());
    assert!(dir.path().join("matrix.csv").exists());
}

#[test]
fn more_dropping_never_helps_the_target() {
    let cfg = standard();
    let grid = sweep_grid(&cfg, &[0, 5, 10, 15], &[0], false).unwrap();
    let acc: Vec<f64> = grid
        .iter()
        .map(|row| row[0].summary.mean_final.target_acc)
        .collect();
    for pair in acc.windows(2) {
        assert!(pair[1] <= pair[0] + 0.03, "{acc:?}");
    }
}

#[test]
fn clipping_blunts_poisoning() {
    let cfg = standard();
    let without = sweep_grid(&cfg, &[0], &[2, 5], false).unwrap();
    let with = sweep_grid(&cfg, &[0], &[2, 5], true).unwrap();
    for (a, b) in without[0].iter().zip(&with[0]) {
        assert!(
            b.summary.mean_final.target_acc > a.summary.mean_final.target_acc,
            "k_p = {}: clipped {} vs unclipped {}",
            a.k_p,
            b.summary.mean_final.target_acc,
            a.summary.mean_final.target_acc
        );
    }
}

#[test]
fn invalid_configs_name_the_field() {
    let bad_m = TINY.replace("m = 3", "m = 9");
    let err = ScenarioConfig::from_toml_str(&bad_m)
        .and_then(|c| c.validate())
        .unwrap_err();
    assert!(err.is_config_error());
    assert!(err.to_string().contains("protocol.m"), "{err}");

    let bad_drop = TINY.replace("drop_count = 2", "drop_count = 9");
    let err = ScenarioConfig::from_toml_str(&bad_drop)
        .and_then(|c| c.validate())
        .unwrap_err();
    assert!(err.is_config_error(), "{err}");
}

#[test]
fn added_poisoners_run_alongside_the_full_population() {
    let text = format!("{TINY}\n[poison]\ncount = 2\nplacement = \"add\"\n");
    let cfg = ScenarioConfig::from_toml_str(&text).unwrap();
    let pop = fldrop_core::harness::build_population(&cfg, 1).unwrap();
    assert_eq!(pop.clients.len(), 10);
    assert_eq!(pop.compromised.len(), 2);
    assert_eq!(pop.targets.len(), 2);
    assert!(run_scenario(&cfg).is_ok());
}
