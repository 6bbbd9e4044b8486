//! Lottery-ticket search for recommender embedding tables.
//!
//! Trains Matrix Factorization and LightGCN with a BPR objective over a
//! joint user/item embedding table, then searches for sparse subnetworks
//! ("winning tickets") by iterative magnitude pruning with rewinding to the
//! initial values. Random pruning, one-shot magnitude pruning and a linear
//! compression baseline are included for comparison, along with full-ranking
//! Recall@K / NDCG@K evaluation and a compact CSR export of pruned tables.
//!
//! ```no_run
//! use lth_rec::{build_graph, init_table, run_imp, split_dataset, Backbone, ImpConfig, Model, PlantedConfig, SplitRatio};
//!
//! let data = PlantedConfig::tiny().generate()?;
//! let split = split_dataset(&data, SplitRatio::default(), 7);
//! let graph = build_graph(&split)?;
//! let model = Model::new(Backbone::Mf, &graph)?;
//! let table = init_table(graph.num_users(), graph.num_items(), 16, 1)?;
//! let tickets = run_imp(&model, &graph, table, ImpConfig::default())?;
//! println!("{} tickets", tickets.tickets.len());
//! # Ok::<(), lth_rec::Error>(())
//! ```

pub mod compression;
pub mod data;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod matrix;
pub mod models;
pub mod pruning;
pub mod sparse;
pub mod synthetic;
pub mod training;

pub use compression::{compress_linear, train_lcm, LinearCompression, MapInit};
pub use data::{
    build_graph, load_interactions, split_dataset, DatasetSplit, InputFormat, InteractionGraph, Interactions, Split,
    SplitRatio,
};
pub use embedding::{
    apply_mask, export_sparse, import_sparse, init_table, read_matrix, sparsity_stats, write_matrix, EmbeddingTable,
    MaskHeader, PruneMask, SparsityStats, TicketRecord,
};
pub use error::{Error, Result};
pub use evaluation::{evaluate_model, evaluate_output, ndcg_at_k, rank_items, recall_at_k, RankingMetrics};
pub use matrix::DenseMatrix;
pub use models::{build_propagation, propagate, score_pairs, Backbone, LightGcnConfig, Model, PropagationOperator};
pub use pruning::{
    adjudicate, prune_lowest_magnitude, prune_oneshot, prune_random, retrain_all, retrain_ticket, run_imp,
    sparsity_after, Adjudication, ImpConfig, ImpRun, PruneStrategy, TicketSet,
};
pub use sparse::{CsrArtifact, CsrMatrix};
pub use synthetic::PlantedConfig;
pub use training::{train_to_best, RunOutcome, TrainConfig};
