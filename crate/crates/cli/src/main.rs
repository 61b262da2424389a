use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fldrop_core::analysis::{
    expected_rounds_encrypted, expected_rounds_encrypted_independent, expected_rounds_plain,
    expected_rounds_plain_ln, monte_carlo_rounds, prob_nontarget_batch,
    prob_nontarget_batch_independent, ArrivalModel, CollectorSetup, IdentificationMode,
};
use fldrop_core::harness::{self, ScenarioConfig};
use fldrop_core::Error;

/// Federated averaging under network-level attack: simulations and analysis.
#[derive(Debug, Parser)]
#[command(name = "fldrop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and write per-round CSV plus a JSON summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override `base_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Override `trials`.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Evaluate a grid of dropped (k_N) and poisoned (k_P) client counts.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        kn: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        kp: Vec<usize>,
        /// Enable update clipping in every cell.
        #[arg(long)]
        clip: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed-form identification cost next to Monte-Carlo estimates.
    Analyze {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        kn: usize,
        /// Precision target for the aggregate-only observer.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value_t = 10_000)]
        mc_trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Identified-target counts over time for plain and encrypted observers.
    IdentifyBench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        rounds: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            trials,
        } => {
            let mut cfg = ScenarioConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.base_seed = seed;
            }
            if let Some(trials) = trials {
                cfg.trials = trials;
            }
            cfg.validate()?;
            let summary = harness::run_scenario(&cfg)?;
            let files = harness::emit_metrics(&summary, &out)?;
            let (h, f) = (&summary.mean_half, &summary.mean_final);
            println!("round  target_acc  target_loss  overall_acc  nontarget_acc");
            for s in [h, f] {
                println!(
                    "{:>5}  {:>10.4}  {:>11.4}  {:>11.4}  {:>13.4}",
                    s.round, s.target_acc, s.target_loss, s.overall_acc, s.nontarget_acc
                );
            }
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::Sweep {
            config,
            kn,
            kp,
            clip,
            out,
        } => {
            let cfg = ScenarioConfig::load(&config)?;
            let grid = harness::sweep_grid(&cfg, &kn, &kp, clip)?;
            println!("k_n  k_p  target_acc(T/2)  target_acc(T)");
            for cell in grid.iter().flatten() {
                println!(
                    "{:>3}  {:>3}  {:>15.4}  {:>13.4}",
                    cell.k_n,
                    cell.k_p,
                    cell.summary.mean_half.target_acc,
                    cell.summary.mean_final.target_acc
                );
            }
            let files = harness::emit_sweep(&grid, &out)?;
            println!("wrote {} files under {}", files.len(), out.display());
        }
        Command::Analyze {
            n,
            m,
            k,
            kn,
            alpha,
            mc_trials,
            seed,
        } => {
            let setup = CollectorSetup { n, m, k, k_n: kn };
            let exact = expected_rounds_plain(n, m, k, kn)?;
            let approx = expected_rounds_plain_ln(n, m, k, kn)?;
            let batch = monte_carlo_rounds(
                setup,
                IdentificationMode::Plain,
                ArrivalModel::Batch,
                mc_trials,
                seed,
            )?;
            let single = monte_carlo_rounds(
                setup,
                IdentificationMode::Plain,
                ArrivalModel::SingleArrivals,
                mc_trials,
                seed,
            )?;
            println!("plain observation (n={n}, m={m}, k={k}, k_N={kn})");
            println!("  closed form (n/m)(H_k - H_(k-k_N))   {exact:.4}");
            println!("  log approximation                    {approx:.4}");
            println!(
                "  Monte-Carlo, batch arrivals          {:.4} +/- {:.4}",
                batch.mean, batch.stderr
            );
            println!(
                "  Monte-Carlo, single arrivals         {:.4} +/- {:.4}",
                single.mean, single.stderr
            );
            println!("P(batch has no target client)");
            println!(
                "  exact C(n-k,m)/C(n,m)                {:.4}",
                prob_nontarget_batch(n, k, m)
            );
            println!(
                "  independent draws (1-k/n)^m          {:.4}",
                prob_nontarget_batch_independent(n, k, m)
            );
            if let Some(alpha) = alpha {
                let bound = expected_rounds_encrypted(n, m, k, alpha)?;
                let bound_indep = expected_rounds_encrypted_independent(n, m, k, alpha)?;
                let enc = monte_carlo_rounds(
                    setup,
                    IdentificationMode::Encrypted { alpha },
                    ArrivalModel::Batch,
                    mc_trials,
                    seed,
                )?;
                println!("encrypted observation (alpha={alpha})");
                println!("  closed-form bound, exact P           {bound:.4}");
                println!("  closed-form bound, independent P     {bound_indep:.4}");
                println!(
                    "  Monte-Carlo, batch arrivals          {:.4} +/- {:.4}",
                    enc.mean, enc.stderr
                );
            }
        }
        Command::IdentifyBench {
            config,
            rounds,
            out,
        } => {
            let cfg = ScenarioConfig::load(&config)?;
            let points = harness::identify_bench(&cfg, &rounds)?;
            println!("mode        round  mean_hits  recall");
            for p in &points {
                println!(
                    "{:<10}  {:>5}  {:>9.2}  {:>6.3}",
                    format!("{:?}", p.mode).to_lowercase(),
                    p.round,
                    p.mean_hits,
                    p.recall
                );
            }
            let path = harness::emit_identification(&points, &out)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is_config_error() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
