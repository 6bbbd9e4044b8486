//! End-to-end behaviour of the search, its persistence and the command layer.

mod common;

use std::fs;

use common::*;
use lth_rec::data::{load_interactions, split_dataset, InputFormat, SplitRatio};
use lth_rec::embedding::{init_table, read_matrix, sparsity_stats};
use lth_rec::experiments::{self, ExperimentConfig, ImpOptions, Pruner};
use lth_rec::models::{Backbone, Model};
use lth_rec::pruning::{prune_random, ImpConfig, ImpRun, PruneStrategy};
use lth_rec::synthetic::PlantedConfig;
use lth_rec::{build_graph, import_sparse, DatasetSplit, Error, PruneMask, TrainConfig};

fn quick_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 128,
        eval_every: 4,
        learning_rate: 0.01,
        ..TrainConfig::default()
    }
}

fn tiny_experiment(dir: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        dataset: lth_rec::experiments::DatasetConfig {
            synthetic: PlantedConfig::tiny(),
            ..Default::default()
        },
        embedding_size: 8,
        output_dir: dir.to_path_buf(),
        train: quick_train(6),
        prune: lth_rec::experiments::PruneSettings {
            pruning_rate: 0.2,
            iterations: 4,
            lcm_sparsities: vec![0.5],
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn edge_and_adjacency_lists_load_identically() {
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("edges.txt");
    let adj = dir.path().join("adj.txt");
    fs::write(&edges, "10 7\n10 3\n\n42 7\n10 7\n").unwrap();
    fs::write(&adj, "10 7 3\n42 7\n").unwrap();
    let a = load_interactions(&edges, InputFormat::EdgeList).unwrap();
    let b = load_interactions(&adj, InputFormat::AdjacencyList).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.user_ids, vec![10, 42]);
    assert_eq!(a.item_ids, vec![3, 7]);
    assert_eq!(a.edges.len(), 3);
}

#[test]
fn malformed_input_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.txt");
    fs::write(&p, "1 2\n3 x\n").unwrap();
    match load_interactions(&p, InputFormat::EdgeList) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("unexpected {other:?}"),
    }
    fs::write(&p, "\n\n").unwrap();
    assert!(matches!(load_interactions(&p, InputFormat::EdgeList), Err(Error::EmptyDataset(_))));
}

#[test]
fn split_manifest_round_trips_and_is_disjoint() {
    let data = PlantedConfig::tiny().generate().unwrap();
    let split = split_dataset(&data, SplitRatio::default(), 11);
    assert_eq!(split, split_dataset(&data, SplitRatio::default(), 11));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("split.tsv");
    split.write_manifest(&p).unwrap();
    assert_eq!(DatasetSplit::read_manifest(&p).unwrap(), split);
    let mut all: Vec<_> = split.train.iter().chain(&split.validation).chain(&split.test).collect();
    let n = all.len();
    all.sort();
    all.dedup();
    assert_eq!(all.len(), n);
    assert_eq!(n, data.edges.len());
}

#[test]
fn random_pruning_is_uniform_over_survivors() {
    let mask = PruneMask::ones(1, 10);
    let mut counts = [0usize; 10];
    let mut r = rng(3);
    for _ in 0..20_000 {
        let next = prune_random(&mask, 0.3, &mut r).unwrap();
        assert_eq!(next.num_zeros(), 3);
        for (i, kept) in next.bits().enumerate() {
            counts[i] += usize::from(!kept);
        }
    }
    let expected = 20_000.0 * 0.3;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    assert!(chi2 < 27.9, "chi2 {chi2}"); // 99.9th percentile, 9 dof
}

#[test]
fn imp_resume_matches_uninterrupted_run() {
    let data = PlantedConfig::tiny().generate().unwrap();
    let graph = build_graph(&split_dataset(&data, SplitRatio::default(), 1)).unwrap();
    let model = Model::new(Backbone::Mf, &graph).unwrap();
    for (rewind, strategy) in [(true, PruneStrategy::Magnitude), (false, PruneStrategy::Magnitude), (true, PruneStrategy::Random)] {
        let cfg = ImpConfig {
            iterations: 4,
            pruning_rate: 0.2,
            rewind,
            strategy,
            train: quick_train(5),
            ..ImpConfig::default()
        };
        let table = init_table(graph.num_users(), graph.num_items(), 8, 2).unwrap();
        let want = ImpRun::new(&model, &graph, table.clone(), cfg.clone()).unwrap().run().unwrap();

        let dir = tempfile::tempdir().unwrap();
        let mut run = ImpRun::new(&model, &graph, table, cfg).unwrap().persist_to(dir.path(), None).unwrap();
        run.step().unwrap();
        run.step().unwrap();
        drop(run);
        let resumed = ImpRun::resume(&model, &graph, dir.path(), None).unwrap();
        assert_eq!(resumed.completed(), 2);
        let got = resumed.run().unwrap();
        assert_eq!(got.search, want.search, "rewind={rewind}");
        let masks = |s: &lth_rec::TicketSet| s.tickets.iter().map(|t| t.mask.clone()).collect::<Vec<_>>();
        assert_eq!(masks(&got), masks(&want));
        for pair in want.tickets.windows(2) {
            assert!(pair[1].mask.is_nested_in(&pair[0].mask));
        }
    }
}

#[test]
fn tampered_mask_chain_is_rejected() {
    let data = PlantedConfig::tiny().generate().unwrap();
    let graph = build_graph(&split_dataset(&data, SplitRatio::default(), 1)).unwrap();
    let model = Model::new(Backbone::Mf, &graph).unwrap();
    let cfg = ImpConfig { iterations: 3, train: quick_train(2), ..ImpConfig::default() };
    let table = init_table(graph.num_users(), graph.num_items(), 4, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut run = ImpRun::new(&model, &graph, table, cfg).unwrap().persist_to(dir.path(), None).unwrap();
    run.step().unwrap();
    run.step().unwrap();
    drop(run);
    fs::copy(dir.path().join("masks/mask_002.mask"), dir.path().join("masks/mask_001.mask")).unwrap();
    assert!(matches!(
        ImpRun::resume(&model, &graph, dir.path(), None),
        Err(Error::CorruptArtifact { .. })
    ));
}

#[test]
fn command_pipeline_is_deterministic_and_consistent() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        let cfg = tiny_experiment(dir);
        experiments::cmd_prepare(&cfg).unwrap();
        experiments::cmd_train(&cfg).unwrap();
        experiments::cmd_imp(&cfg, ImpOptions::default()).unwrap();
        experiments::cmd_retrain_tickets(&cfg, Some(2)).unwrap();
    }
    for file in ["prepared/split.tsv", "train/metrics.csv", "imp/summary.csv", "retrain/summary.csv"] {
        assert_eq!(
            fs::read(a.path().join(file)).unwrap(),
            fs::read(b.path().join(file)).unwrap(),
            "{file} differs"
        );
    }

    let cfg = tiny_experiment(a.path());
    let imp: Vec<experiments::ImpSummaryRow> = csv::Reader::from_path(a.path().join("imp/summary.csv"))
        .unwrap()
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap();
    assert_eq!(imp.len(), 5);
    assert!(imp.windows(2).all(|w| w[1].measured_sparsity > w[0].measured_sparsity));
    assert!(imp.iter().all(|r| r.config_hash == cfg.hash()));

    // the dense retrain reproduces the dense training run exactly
    let retrain: Vec<experiments::RetrainRow> = csv::Reader::from_path(a.path().join("retrain/summary.csv"))
        .unwrap()
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap();
    let outcome: lth_rec::RunOutcome =
        serde_json::from_str(&fs::read_to_string(a.path().join("train/outcome.json")).unwrap()).unwrap();
    assert_eq!(retrain[0].recall, outcome.test.recall);
    assert_eq!(retrain[0].best_epoch, outcome.best_epoch);
    assert_eq!(retrain.iter().filter(|r| r.red_star).count(), usize::from(retrain.iter().skip(1).any(|r| r.accuracy_winner)));
    // ticket retrains reproduce the search trainings
    for (row, search) in retrain.iter().zip(&imp).take(4) {
        assert_eq!(Some(row.recall), search.search_recall);
    }

    let speed = experiments::cmd_speed_report(&a.path().join("retrain/summary.csv"), &a.path().join("speed.csv")).unwrap();
    assert_eq!(speed.len(), 4);

    let mask = a.path().join("imp/masks/mask_004.mask");
    let table = a.path().join("retrain/tables/ticket_004.bin");
    let viz = a.path().join("viz.csv");
    experiments::cmd_viz_export(&table, Some(&mask), None, 10, &viz).unwrap();
    let text = fs::read_to_string(&viz).unwrap();
    assert_eq!(text.lines().count(), 21);
    assert!(text.contains("null"));

    let report = experiments::cmd_complexity_report(&mask, 3, None, &a.path().join("complexity.csv")).unwrap();
    let (_, m) = PruneMask::read_artifact(&mask).unwrap();
    assert_eq!(report.stats, sparsity_stats(&m, report.num_users));

    let csr = a.path().join("ticket.csr");
    let exported = experiments::cmd_export_sparse(&table, &mask, &csr).unwrap();
    let back = import_sparse(&csr).unwrap();
    assert_eq!(back, exported);
    let (values, _) = read_matrix(&table).unwrap();
    let dense = back.matrix.to_dense();
    for r in 0..values.rows() {
        for c in 0..values.cols() {
            let want = if m.get(r, c) { values.get(r, c) } else { 0.0 };
            assert_eq!(dense.get(r, c).to_bits(), want.to_bits());
        }
    }
}

#[test]
fn interrupted_command_search_resumes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    experiments::cmd_imp(&tiny_experiment(a.path()), ImpOptions::default()).unwrap();
    let cfg = tiny_experiment(b.path());
    let partial = experiments::cmd_imp(&cfg, ImpOptions { stop_after: Some(2), ..Default::default() }).unwrap();
    assert!(!partial.complete);
    assert_eq!(partial.rows.len(), 3);
    let resumed = experiments::cmd_imp(&cfg, ImpOptions::default()).unwrap();
    assert!(resumed.complete);
    assert_eq!(
        fs::read(a.path().join("imp/summary.csv")).unwrap(),
        fs::read(b.path().join("imp/summary.csv")).unwrap()
    );
}

#[test]
fn omp_and_rp_share_the_imp_pruned_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut counts = Vec::new();
    for pruner in [Pruner::Imp, Pruner::Omp, Pruner::Rp] {
        let cfg = ExperimentConfig { pruner, ..tiny_experiment(&dir.path().join(format!("{pruner:?}"))) };
        let report = experiments::cmd_imp(&cfg, ImpOptions::default()).unwrap();
        counts.push(report.rows.iter().map(|r| r.nnz).collect::<Vec<_>>());
    }
    assert_eq!(counts[0], counts[1]);
    assert_eq!(counts[0], counts[2]);
}

#[test]
fn lcm_baseline_reports_parameter_budgets() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { pruner: Pruner::Lcm, ..tiny_experiment(dir.path()) };
    let report = experiments::cmd_train(&cfg).unwrap();
    assert_eq!(report.lcm.len(), 1);
    let row = &report.lcm[0];
    assert_eq!(row.compressed_dim, 4);
    assert_eq!(row.map_parameters, 4 * 8);
    assert!(row.table_parameters * 2 == row.dense_parameters);
}

#[test]
fn train_command_resumes_from_checkpoint() {
    let a = tempfile::tempdir().unwrap();
    let cfg = tiny_experiment(a.path());
    let first = experiments::cmd_train(&cfg).unwrap();
    let metrics = fs::read(a.path().join("train/metrics.csv")).unwrap();
    // a finished checkpoint resumes to the same outcome without retraining
    let again = experiments::cmd_train(&cfg).unwrap();
    assert_eq!(first.outcome, again.outcome);
    assert_eq!(metrics, fs::read(a.path().join("train/metrics.csv")).unwrap());
}

#[test]
fn oversized_runs_need_acknowledgment() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_experiment(dir.path());
    cfg.dataset.synthetic = PlantedConfig {
        num_users: 5000,
        num_items: 2000,
        min_interactions: 45,
        max_interactions: 60,
        ..PlantedConfig::default()
    };
    assert!(matches!(experiments::cmd_prepare(&cfg), Err(Error::InvalidConfig(_))));
}
