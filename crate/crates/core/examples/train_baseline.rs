//! Trains a dense MF or LightGCN baseline on the planted dataset and prints
//! the validation curve.
//!
//! `cargo run --release --example train_baseline -- [mf|lightgcn] [epochs] [dim]`

use lth_rec::{build_graph, init_table, split_dataset, train_to_best, Backbone, Model, PlantedConfig, PruneMask, SplitRatio, TrainConfig};

fn main() -> lth_rec::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let backbone = match args.first().map(String::as_str) {
        Some("lightgcn") => Backbone::LightGcn(Default::default()),
        _ => Backbone::Mf,
    };
    let epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let dim = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(64);

    let data = PlantedConfig::default().generate()?;
    let split = split_dataset(&data, SplitRatio::default(), 42);
    let graph = build_graph(&split)?;
    println!(
        "{} users, {} items, {} train edges, density {:.4}",
        graph.num_users(),
        graph.num_items(),
        graph.train_edges().len(),
        graph.density()
    );

    let model = Model::new(backbone, &graph)?;
    let mut table = init_table(graph.num_users(), graph.num_items(), dim, 1)?;
    let mask = PruneMask::ones(table.shape().0, table.shape().1);
    let config = TrainConfig { epochs, ..TrainConfig::default() };
    let started = std::time::Instant::now();
    let outcome = train_to_best(&model, &mut table, &mask, &graph, &config)?;

    for r in outcome.history.iter().filter(|r| r.recall.is_some()) {
        println!(
            "epoch {:>4}  loss {:>8}  val recall@20 {:.4}  ndcg@20 {:.4}",
            r.epoch,
            r.loss.map_or("-".into(), |l| format!("{l:.4}")),
            r.recall.unwrap(),
            r.ndcg.unwrap_or(0.0)
        );
    }
    println!(
        "{} best epoch {}: test recall@20 {:.4} ndcg@20 {:.4} in {:.1}s",
        model.backbone().name(),
        outcome.best_epoch,
        outcome.test.recall,
        outcome.test.ndcg,
        started.elapsed().as_secs_f64()
    );
    Ok(())
}
