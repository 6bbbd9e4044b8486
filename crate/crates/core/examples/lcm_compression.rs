//! Linear compression (a dense F'-dimensional table times a learned F'×F map)
//! against IMP tickets with the same number of nonzero table entries.
//!
//! `cargo run --release --example lcm_compression -- [epochs]`

use lth_rec::{
    build_graph, compress_linear, init_table, retrain_ticket, run_imp, split_dataset, train_lcm, Backbone, ImpConfig,
    LightGcnConfig, MapInit, Model, PlantedConfig, SplitRatio, TrainConfig,
};

fn main() -> lth_rec::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let dim = 64;
    let data = PlantedConfig::default().generate()?;
    let graph = build_graph(&split_dataset(&data, SplitRatio::default(), 42))?;
    let model = Model::new(Backbone::LightGcn(LightGcnConfig::uniform(2)), &graph)?;
    let train = TrainConfig { epochs, ..TrainConfig::default() };
    let table = init_table(graph.num_users(), graph.num_items(), dim, 1)?;

    // iterations 7 and 13 of a 0.1 schedule land at 52.2% and 74.6%
    let tickets = run_imp(&model, &graph, table.clone(), ImpConfig { iterations: 13, train: train.clone(), ..ImpConfig::default() })?;
    for (iteration, target) in [(7usize, 0.5), (13, 0.75)] {
        let ticket = &tickets.tickets[iteration - 1];
        let ticket_run = retrain_ticket(&model, &graph, &table, &ticket.mask, &train)?;

        let compressed = ((1.0 - target) * dim as f64).round() as usize;
        let mut lcm = compress_linear(graph.num_users(), graph.num_items(), dim, compressed, 1, MapInit::Auto)?;
        let lcm_run = train_lcm(&model, &graph, &mut lcm, &train)?;
        println!(
            "~{:.0}%: ticket ({} nonzeros) recall {:.4} ndcg {:.4} | LCM F'={compressed} ({} table + {} map) recall {:.4} ndcg {:.4}",
            target * 100.0,
            ticket.mask.nnz(),
            ticket_run.test.recall,
            ticket_run.test.ndcg,
            lcm.table_parameters(),
            lcm.map_parameters(),
            lcm_run.test.recall,
            lcm_run.test.ndcg
        );
    }
    Ok(())
}
