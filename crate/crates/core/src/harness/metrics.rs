use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::ScenarioConfig;

pub const ROUNDS_CSV_HEADER: &str =
    "round,trial,target_acc,target_loss,overall_acc,identified_hits,dropped_count";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub target_acc: f64,
    pub target_loss: f64,
    pub overall_acc: f64,
    pub nontarget_acc: f64,
    pub identified_hits: usize,
    pub dropped_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSeries {
    pub trial: usize,
    pub seed: u64,
    pub rounds: Vec<RoundMetrics>,
}

/// Metrics at one reporting round; integer counts become reals when averaged.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Snapshot {
    pub round: usize,
    pub target_acc: f64,
    pub target_loss: f64,
    pub overall_acc: f64,
    pub nontarget_acc: f64,
    pub identified_hits: f64,
}

impl Snapshot {
    fn of(m: &RoundMetrics) -> Self {
        Snapshot {
            round: m.round,
            target_acc: m.target_acc,
            target_loss: m.target_loss,
            overall_acc: m.overall_acc,
            nontarget_acc: m.nontarget_acc,
            identified_hits: m.identified_hits as f64,
        }
    }

    fn mean(items: &[Snapshot]) -> Self {
        let n = items.len().max(1) as f64;
        let avg = |f: fn(&Snapshot) -> f64| items.iter().map(f).sum::<f64>() / n;
        Snapshot {
            round: items.first().map_or(0, |s| s.round),
            target_acc: avg(|s| s.target_acc),
            target_loss: avg(|s| s.target_loss),
            overall_acc: avg(|s| s.overall_acc),
            nontarget_acc: avg(|s| s.nontarget_acc),
            identified_hits: avg(|s| s.identified_hits),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialScalars {
    pub trial: usize,
    pub seed: u64,
    pub half: Snapshot,
    #[serde(rename = "final")]
    pub last: Snapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: ScenarioConfig,
    pub per_trial: Vec<TrialScalars>,
    pub mean_half: Snapshot,
    pub mean_final: Snapshot,
    #[serde(skip)]
    pub series: Vec<TrialSeries>,
}

/// Reporting round for "halfway": `T / 2`, at least 1.
pub fn half_round(rounds: usize) -> usize {
    (rounds / 2).max(1)
}

impl RunSummary {
    pub fn new(config: ScenarioConfig, mut series: Vec<TrialSeries>) -> Self {
        series.sort_by_key(|s| s.trial);
        let half = half_round(config.protocol.rounds);
        let per_trial: Vec<TrialScalars> = series
            .iter()
            .map(|s| TrialScalars {
                trial: s.trial,
                seed: s.seed,
                half: Snapshot::of(&s.rounds[half - 1]),
                last: Snapshot::of(s.rounds.last().expect("rounds >= 1")),
            })
            .collect();
        let halves: Vec<Snapshot> = per_trial.iter().map(|t| t.half).collect();
        let lasts: Vec<Snapshot> = per_trial.iter().map(|t| t.last).collect();
        RunSummary {
            mean_half: Snapshot::mean(&halves),
            mean_final: Snapshot::mean(&lasts),
            config,
            per_trial,
            series,
        }
    }

    /// Across-trial mean of a per-round quantity at 1-based `round`.
    pub fn mean_at(&self, round: usize, f: impl Fn(&RoundMetrics) -> f64) -> f64 {
        let n = self.series.len().max(1) as f64;
        self.series
            .iter()
            .map(|s| f(&s.rounds[round - 1]))
            .sum::<f64>()
            / n
    }

    pub fn rounds_csv(&self) -> Result<String> {
        let rows = self.series.iter().flat_map(|s| {
            s.rounds.iter().map(move |r| {
                vec![
                    r.round.to_string(),
                    s.trial.to_string(),
                    r.target_acc.to_string(),
                    r.target_loss.to_string(),
                    r.overall_acc.to_string(),
                    r.identified_hits.to_string(),
                    r.dropped_count.to_string(),
                ]
            })
        });
        csv_text(ROUNDS_CSV_HEADER, rows)
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Render a header line and rows as CSV.
pub(crate) fn csv_text(
    header: &str,
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header.split(','))?;
    for row in rows {
        w.write_record(&row)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("CSV fields are UTF-8"))
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| Error::io(path, e))
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Write `rounds.csv` and `summary.json` into `dir`.
pub fn emit_metrics(summary: &RunSummary, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let csv_path = dir.join("rounds.csv");
    let json_path = dir.join("summary.json");
    write_file(&csv_path, &summary.rounds_csv()?)?;
    write_file(&json_path, &summary.summary_json()?)?;
    Ok(vec![csv_path, json_path])
}
