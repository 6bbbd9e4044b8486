//! Iterative magnitude pruning with rewinding, persisted to disk so the search
//! can be interrupted and resumed. Prints the ticket set with the effective
//! per-row dimensions.
//!
//! `cargo run --release --example imp_search -- [iterations] [epochs] [out_dir]`

use std::path::PathBuf;

use lth_rec::{build_graph, init_table, sparsity_stats, split_dataset, Backbone, ImpConfig, ImpRun, Model, PlantedConfig, SplitRatio, TrainConfig};

fn main() -> lth_rec::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let iterations = args.first().and_then(|s| s.parse().ok()).unwrap_or(10);
    let epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let dir = args.get(2).map_or_else(|| std::env::temp_dir().join("lth-rec-imp"), PathBuf::from);

    let data = PlantedConfig::default().generate()?;
    let graph = build_graph(&split_dataset(&data, SplitRatio::default(), 42))?;
    let model = Model::new(Backbone::Mf, &graph)?;
    let config = ImpConfig {
        iterations,
        train: TrainConfig { epochs, ..TrainConfig::default() },
        ..ImpConfig::default()
    };

    let mut run = if dir.join("progress.json").exists() {
        println!("resuming from {}", dir.display());
        ImpRun::resume(&model, &graph, &dir, None)?
    } else {
        let table = init_table(graph.num_users(), graph.num_items(), 64, 1)?;
        ImpRun::new(&model, &graph, table, config)?.persist_to(&dir, None)?
    };
    while !run.is_done() {
        let t = run.step()?;
        println!("iteration {:>2}: sparsity {:.4}", t.iteration, t.sparsity);
    }
    let set = run.finish();

    println!("\n iter  sparsity  F_u*  F_i*   recall@20 (trained with this mask)");
    let dense = &set.search[0];
    println!("{:>5}  {:>8.4}  {:>4}  {:>4}   {:.4}", 0, 0.0, 64, 64, dense.test.recall);
    for (i, t) in set.tickets.iter().enumerate() {
        let s = sparsity_stats(&t.mask, graph.num_users());
        // the last mask is never trained during the search
        let recall = set.search.get(i + 1).map_or("-".into(), |o| format!("{:.4}", o.test.recall));
        println!(
            "{:>5}  {:>8.4}  {:>4}  {:>4}   {recall}",
            t.iteration, t.sparsity, s.max_user_dim, s.max_item_dim
        );
    }
    println!("masks in {}", dir.join("masks").display());
    Ok(())
}
