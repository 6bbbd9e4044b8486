//! The full command pipeline on a small planted dataset: prepare, dense
//! training, ticket search, independent retraining with win/lose verdicts,
//! and the relative-speed report.
//!
//! `cargo run --release --example retrain_and_adjudicate -- [out_dir]`

use std::path::PathBuf;

use lth_rec::experiments::{self, ExperimentConfig, ImpOptions, PruneSettings};
use lth_rec::TrainConfig;

fn main() -> lth_rec::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("lth-rec-pipeline"), PathBuf::from);
    let config = ExperimentConfig {
        embedding_size: 64,
        output_dir: out.clone(),
        train: TrainConfig { epochs: 100, ..TrainConfig::default() },
        prune: PruneSettings { iterations: 8, ..Default::default() },
        ..Default::default()
    };
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("config.toml"), config.to_toml())?;

    experiments::cmd_prepare(&config)?;
    let dense = experiments::cmd_train(&config)?;
    println!("dense: best epoch {} test recall@20 {:.4}", dense.outcome.best_epoch, dense.outcome.test.recall);
    experiments::cmd_imp(&config, ImpOptions::default())?;
    let report = experiments::cmd_retrain_tickets(&config, None)?;

    println!("\n iter  sparsity  recall@20  best  accuracy  speed  winner");
    for r in &report.rows {
        let verdict = match (r.strict_winner, r.accuracy_winner) {
            (true, _) => "strict",
            (false, true) => "accuracy",
            _ => "-",
        };
        println!(
            "{:>5}  {:>8.4}  {:>9.4}  {:>4}  {:>8}  {:>5}  {verdict}{}",
            r.iteration,
            r.measured_sparsity,
            r.recall,
            r.best_epoch,
            r.accuracy_ok,
            r.speed_ok,
            if r.red_star { "  *" } else { "" }
        );
    }

    let speed = experiments::cmd_speed_report(&report.dir.join("summary.csv"), &out.join("speed.csv"))?;
    println!("\nrelative epochs to best (baseline / ticket):");
    for s in speed {
        let ratio = s.relative_epochs.map_or("n/a".into(), |v| format!("{v:.2}"));
        println!("  sparsity {:.4}: {ratio}", s.measured_sparsity);
    }
    println!("outputs in {}", out.display());
    Ok(())
}
