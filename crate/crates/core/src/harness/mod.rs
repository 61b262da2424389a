//! Experiment orchestration: scenario configs, multi-trial runs, sweeps and
//! identification benchmarks, and their file outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversary::ObservationKind;
use crate::error::Result;

pub mod config;
pub mod metrics;
pub mod run;

pub use config::{
    AttackConfig, AttackKind, DataSection, DefenseConfig, IdxSource, ModelSection, PoisonConfig,
    PoisonPlacement, ProtocolSection, ScenarioConfig, SyntheticSource,
};
pub use metrics::{emit_metrics, half_round, RoundMetrics, RunSummary, Snapshot, TrialSeries};
pub use run::{build_population, run_scenario, run_trial, Population};

/// Default rounds-before-dropping for sweep cells whose base has no attack.
const DEFAULT_SWEEP_ROUNDS_BEFORE_DROP: usize = 30;

/// Config of one `(k_n, k_p)` sweep cell.
pub fn sweep_cell_config(
    base: &ScenarioConfig,
    k_n: usize,
    k_p: usize,
    clip_on: bool,
) -> ScenarioConfig {
    let mut cfg = base.clone();
    cfg.attack = if k_n == 0 {
        None
    } else {
        let mut attack = base.attack.clone().unwrap_or(AttackConfig {
            kind: AttackKind::Targeted,
            drop_count: k_n,
            rounds_before_drop: DEFAULT_SWEEP_ROUNDS_BEFORE_DROP,
            observation: ObservationKind::Encrypted,
            refresh: true,
            visible_count: None,
            alpha_v: 1.0,
        });
        attack.drop_count = k_n;
        Some(attack)
    };
    cfg.poison = if k_p == 0 {
        None
    } else {
        let mut poison = base.poison.clone().unwrap_or(PoisonConfig {
            count: k_p,
            boost: 10.0,
            flip_to: None,
            start_round: None,
            placement: Default::default(),
        });
        poison.count = k_p;
        Some(poison)
    };
    let mut defense = base.defense.clone().unwrap_or(DefenseConfig {
        clip_norm: None,
        upsample_count: 0,
        upsample_factor: 2.0,
        rounds_before_upsample: 0,
        server_mode: Default::default(),
    });
    defense.clip_norm = if clip_on {
        Some(defense.clip_norm.unwrap_or(1.0))
    } else {
        None
    };
    cfg.defense = (defense.clip_norm.is_some() || defense.upsample_count > 0).then_some(defense);
    cfg
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub k_n: usize,
    pub k_p: usize,
    pub summary: RunSummary,
}

/// Evaluate the cross product of dropped and poisoned client counts;
/// `result[i][j]` is the cell `(k_n_values[i], k_p_values[j])`.
pub fn sweep_grid(
    base: &ScenarioConfig,
    k_n_values: &[usize],
    k_p_values: &[usize],
    clip_on: bool,
) -> Result<Vec<Vec<SweepCell>>> {
    k_n_values
        .iter()
        .map(|&k_n| {
            k_p_values
                .iter()
                .map(|&k_p| {
                    let cfg = sweep_cell_config(base, k_n, k_p, clip_on);
                    Ok(SweepCell {
                        k_n,
                        k_p,
                        summary: run_scenario(&cfg)?,
                    })
                })
                .collect()
        })
        .collect()
}

/// Write each cell to `dir/kn{K}_kp{P}/` plus a combined `matrix.csv`.
pub fn emit_sweep(grid: &[Vec<SweepCell>], dir: &Path) -> Result<Vec<PathBuf>> {
    metrics::ensure_dir(dir)?;
    let mut written = Vec::new();
    let mut rows = Vec::new();
    for cell in grid.iter().flatten() {
        let cell_dir = dir.join(format!("kn{}_kp{}", cell.k_n, cell.k_p));
        written.extend(emit_metrics(&cell.summary, &cell_dir)?);
        let (h, f) = (&cell.summary.mean_half, &cell.summary.mean_final);
        rows.push(vec![
            cell.k_n.to_string(),
            cell.k_p.to_string(),
            h.target_acc.to_string(),
            f.target_acc.to_string(),
            f.overall_acc.to_string(),
            f.nontarget_acc.to_string(),
        ]);
    }
    let matrix = metrics::csv_text(
        "k_n,k_p,target_acc_half,target_acc_final,overall_acc_final,nontarget_acc_final",
        rows,
    )?;
    let path = dir.join("matrix.csv");
    metrics::write_file(&path, &matrix)?;
    written.push(path);
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationPoint {
    pub mode: ObservationKind,
    pub round: usize,
    pub mean_hits: f64,
    pub recall: f64,
    pub per_trial_hits: Vec<usize>,
}

/// Identified-target counts over time for plain and encrypted observers
/// with `k_n = k`. No updates are dropped, so training runs as usual.
pub fn identify_bench(base: &ScenarioConfig, rounds: &[usize]) -> Result<Vec<IdentificationPoint>> {
    let horizon = rounds.iter().copied().max().unwrap_or(1).max(1);
    let k = base.data.k;
    let mut points = Vec::new();
    for mode in [ObservationKind::Plain, ObservationKind::Encrypted] {
        let mut cfg = base.clone();
        cfg.protocol.rounds = horizon;
        cfg.poison = None;
        cfg.defense = None;
        cfg.attack = Some(AttackConfig {
            kind: AttackKind::Targeted,
            drop_count: k,
            rounds_before_drop: horizon,
            observation: mode,
            refresh: true,
            visible_count: None,
            alpha_v: 1.0,
        });
        let summary = run_scenario(&cfg)?;
        for &r in rounds {
            let r = r.clamp(1, horizon);
            let per_trial_hits: Vec<usize> = summary
                .series
                .iter()
                .map(|s| s.rounds[r - 1].identified_hits)
                .collect();
            let mean_hits = summary.mean_at(r, |m| m.identified_hits as f64);
            points.push(IdentificationPoint {
                mode,
                round: r,
                mean_hits,
                recall: if k == 0 { 0.0 } else { mean_hits / k as f64 },
                per_trial_hits,
            });
        }
    }
    Ok(points)
}

pub fn emit_identification(points: &[IdentificationPoint], dir: &Path) -> Result<PathBuf> {
    metrics::ensure_dir(dir)?;
    let rows = points.iter().map(|p| {
        let mode = match p.mode {
            ObservationKind::Plain => "plain",
            ObservationKind::Encrypted => "encrypted",
            ObservationKind::EncryptedLimited => "encrypted_limited",
        };
        let hits: Vec<String> = p.per_trial_hits.iter().map(|h| h.to_string()).collect();
        vec![
            mode.to_string(),
            p.round.to_string(),
            p.mean_hits.to_string(),
            p.recall.to_string(),
            hits.join(";"),
        ]
    });
    let out = metrics::csv_text("mode,round,mean_hits,recall,per_trial_hits", rows)?;
    let path = dir.join("identification.csv");
    metrics::write_file(&path, &out)?;
    Ok(path)
}
