//! Takes a ticket to ~90% sparsity, then exports a visualization grid, the
//! complexity report and the CSR file, and checks the CSR round trip.
//!
//! `cargo run --release --example sparse_export -- [out_dir]`

use std::path::PathBuf;

use lth_rec::embedding::MaskHeader;
use lth_rec::experiments;
use lth_rec::{build_graph, import_sparse, init_table, run_imp, split_dataset, write_matrix, Backbone, ImpConfig, Model, PlantedConfig, SplitRatio, TrainConfig};

fn main() -> lth_rec::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("lth-rec-export"), PathBuf::from);
    std::fs::create_dir_all(&out)?;
    let data = PlantedConfig::default().generate()?;
    let graph = build_graph(&split_dataset(&data, SplitRatio::default(), 42))?;
    let model = Model::new(Backbone::Mf, &graph)?;
    let mut table = init_table(graph.num_users(), graph.num_items(), 32, 1)?;
    let config = ImpConfig {
        pruning_rate: 0.2,
        iterations: 10,
        train: TrainConfig { epochs: 40, ..TrainConfig::default() },
        ..ImpConfig::default()
    };
    let set = run_imp(&model, &graph, table.clone(), config.clone())?;
    let ticket = set.tickets.last().unwrap();
    table.rewind();
    lth_rec::train_to_best(&model, &mut table, &ticket.mask, &graph, &config.train)?;

    let table_path = out.join("ticket_table.bin");
    let mask_path = out.join("ticket.mask");
    write_matrix(&table_path, table.values(), table.init_seed())?;
    let header = MaskHeader {
        schema_version: 1,
        rows: ticket.mask.rows(),
        cols: ticket.mask.cols(),
        num_users: graph.num_users(),
        iteration: ticket.iteration,
        theoretical_sparsity: ticket.theoretical_sparsity,
        measured_sparsity: ticket.sparsity,
        checksum: ticket.mask.checksum(),
        parent_checksum: None,
        manifest_hash: None,
    };
    ticket.mask.write_artifact(&mask_path, &header)?;

    experiments::cmd_viz_export(&table_path, Some(&mask_path), None, experiments::DEFAULT_VIZ_ROWS, &out.join("viz.csv"))?;
    let report = experiments::cmd_complexity_report(&mask_path, 0, None, &out.join("complexity.csv"))?;
    let csr = experiments::cmd_export_sparse(&table_path, &mask_path, &out.join("ticket.csr"))?;
    let back = import_sparse(&out.join("ticket.csr"))?;

    println!("sparsity {:.2}%  F_u* {}  F_i* {}", ticket.sparsity * 100.0, report.stats.max_user_dim, report.stats.max_item_dim);
    println!("{}\n{}", report.dense_memory, report.ticket_memory);
    println!("{}\n{}", report.dense_mf_time, report.ticket_mf_time);
    println!(
        "dense {} B, CSR {} B ({:.1}%), round trip exact: {}",
        report.stats.dense_bytes,
        csr.byte_size(),
        100.0 * csr.byte_size() as f64 / report.stats.dense_bytes as f64,
        back == csr
    );
    println!("outputs in {}", out.display());
    Ok(())
}
