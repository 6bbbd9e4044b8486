//! Sensitivity studies on the planted dataset: pruning rate, rewinding and
//! the original embedding size. Each line reports the highest sparsity whose
//! ticket still reaches the dense test Recall@20.
//!
//! `cargo run --release --example ablations -- [epochs]`

use lth_rec::{build_graph, init_table, run_imp, split_dataset, Backbone, ImpConfig, InteractionGraph, Model, PlantedConfig, SplitRatio, TrainConfig};

fn highest_winning_sparsity(model: &Model, graph: &InteractionGraph, dim: usize, config: ImpConfig) -> lth_rec::Result<(f64, f64)> {
    let table = init_table(graph.num_users(), graph.num_items(), dim, 1)?;
    let set = run_imp(model, graph, table, config)?;
    let dense = set.search[0].test.recall;
    // search[i] is the run trained under ticket i's mask
    let best = set
        .tickets
        .iter()
        .zip(set.search.iter().skip(1))
        .filter(|(_, o)| o.test.recall >= dense)
        .map(|(t, _)| t.sparsity)
        .fold(0.0, f64::max);
    Ok((dense, best))
}

fn main() -> lth_rec::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let data = PlantedConfig::default().generate()?;
    let graph = build_graph(&split_dataset(&data, SplitRatio::default(), 42))?;
    let model = Model::new(Backbone::Mf, &graph)?;
    let base = ImpConfig {
        iterations: 12,
        train: TrainConfig { epochs, ..TrainConfig::default() },
        ..ImpConfig::default()
    };

    println!("pruning rate (12 iterations each):");
    for rate in [0.05, 0.1, 0.2] {
        let (dense, s) = highest_winning_sparsity(&model, &graph, 32, ImpConfig { pruning_rate: rate, ..base.clone() })?;
        println!("  pr {:>4.0}%: dense {dense:.4}, highest winning sparsity {:.2}%", rate * 100.0, s * 100.0);
    }

    println!("rewinding:");
    for rewind in [true, false] {
        let (_, s) = highest_winning_sparsity(&model, &graph, 32, ImpConfig { rewind, ..base.clone() })?;
        println!("  rewind {rewind:<5}: highest winning sparsity {:.2}%", s * 100.0);
    }

    println!("embedding size:");
    for dim in [16, 32, 64] {
        let (dense, s) = highest_winning_sparsity(&model, &graph, dim, base.clone())?;
        println!("  F = {dim:>3}: dense {dense:.4}, highest winning sparsity {:.2}%", s * 100.0);
    }
    Ok(())
}
