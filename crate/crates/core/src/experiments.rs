//! Experiment orchestration behind the `lth-rec` binary: configuration,
//! run manifests, and one function per subcommand.
//!
//! Every command works inside `output_dir`:
//!
//! ```text
//! prepared/   users.tsv items.tsv split.tsv (+ interactions.txt for synthetic data)
//! train/      metrics.csv epoch_timings.csv outcome.json best_table.bin checkpoint/ [lcm.csv]
//! imp/        snapshot.bin masks/ search/ progress.json summary.csv
//! retrain/    summary.csv tables/
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::compression::{compress_linear, train_lcm, MapInit};
use crate::data::{build_graph, load_interactions, split_dataset, DatasetSplit, InputFormat, InteractionGraph, Interactions, SplitRatio};
use crate::embedding::{
    export_sparse, init_table, read_matrix, sparsity_stats, write_matrix, EmbeddingTable, PruneMask, SparsityStats,
};
use crate::error::{Error, Result};
use crate::models::{Backbone, Model};
use crate::pruning::{
    adjudicate, mask_path, prune_oneshot_count, retrain_all, retrain_all_tables, run_imp, ImpConfig, ImpRun, PruneStrategy, TicketSet,
};
use crate::sparse::{sha256_hex, CsrArtifact};
use crate::synthetic::PlantedConfig;
use crate::training::{load_checkpoint, save_checkpoint, train_from_state, RunOutcome, TrainConfig, TrainState};

pub const SCHEMA_VERSION: u32 = 1;

/// Interaction count above which a run needs an explicit full-scale acknowledgment.
pub const DESK_SCALE_MAX_INTERACTIONS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Pruner {
    #[default]
    Imp,
    Rp,
    Omp,
    Lcm,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub path: Option<PathBuf>,
    pub format: InputFormat,
    /// Used when `path` is absent.
    pub synthetic: PlantedConfig,
    pub split_seed: u64,
    pub ratio: [f64; 3],
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            path: None,
            format: InputFormat::EdgeList,
            synthetic: PlantedConfig::default(),
            split_seed: 42,
            ratio: [0.7, 0.1, 0.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneSettings {
    pub pruning_rate: f64,
    pub iterations: usize,
    pub rewind: bool,
    pub prune_seed: u64,
    /// Target sparsities for the linear-compression baseline.
    pub lcm_sparsities: Vec<f64>,
}

impl Default for PruneSettings {
    fn default() -> Self {
        let d = ImpConfig::default();
        Self {
            pruning_rate: d.pruning_rate,
            iterations: d.iterations,
            rewind: d.rewind,
            prune_seed: d.prune_seed,
            lcm_sparsities: vec![0.5, 0.75],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: Backbone,
    pub embedding_size: usize,
    pub init_seed: u64,
    pub pruner: Pruner,
    pub full_scale: bool,
    pub output_dir: PathBuf,
    pub train: TrainConfig,
    pub prune: PruneSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            model: Backbone::Mf,
            embedding_size: 32,
            init_seed: 1,
            pruner: Pruner::Imp,
            full_scale: false,
            output_dir: PathBuf::from("runs/default"),
            train: TrainConfig::default(),
            prune: PruneSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_size == 0 {
            return Err(Error::InvalidConfig("embedding_size must be positive".into()));
        }
        SplitRatio::new(self.dataset.ratio[0], self.dataset.ratio[1], self.dataset.ratio[2])?;
        if let Backbone::LightGcn(cfg) = &self.model {
            cfg.validate()?;
        }
        self.imp_config().validate()?;
        for &s in &self.prune.lcm_sparsities {
            if !(0.0..1.0).contains(&s) {
                return Err(Error::InvalidConfig(format!("lcm sparsity {s} outside [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn imp_config(&self) -> ImpConfig {
        ImpConfig {
            pruning_rate: self.prune.pruning_rate,
            iterations: self.prune.iterations,
            rewind: self.prune.rewind,
            strategy: match self.pruner {
                Pruner::Rp => PruneStrategy::Random,
                _ => PruneStrategy::Magnitude,
            },
            prune_seed: self.prune.prune_seed,
            train: self.train.clone(),
        }
    }

    /// SHA-256 of the JSON serialization of every resolved value that can
    /// affect results; where the run is written and the scale
    /// acknowledgment are left out.
    pub fn hash(&self) -> String {
        let canonical = Self {
            output_dir: PathBuf::new(),
            full_scale: false,
            ..self.clone()
        };
        sha256_hex(serde_json::to_string(&canonical).expect("config serializes").as_bytes())
    }

    pub fn dir(&self, stage: &str) -> PathBuf {
        self.output_dir.join(stage)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub config_hash: String,
    pub code_version: String,
    pub dataset_checksums: BTreeMap<String, String>,
    pub timings: Vec<StageTiming>,
    pub environment: BTreeMap<String, String>,
    pub notes: Vec<String>,
    pub config: ExperimentConfig,
}

impl RunManifest {
    fn new(command: &str, config: &ExperimentConfig) -> Self {
        let mut environment = BTreeMap::new();
        environment.insert("os".into(), std::env::consts::OS.into());
        environment.insert("arch".into(), std::env::consts::ARCH.into());
        environment.insert("threads".into(), rayon::current_num_threads().to_string());
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.into(),
            config_hash: config.hash(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            dataset_checksums: BTreeMap::new(),
            timings: Vec::new(),
            environment,
            notes: Vec::new(),
            config: config.clone(),
        }
    }

    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let started = Instant::now();
        let out = f()?;
        self.timings.push(StageTiming {
            stage: stage.into(),
            seconds: started.elapsed().as_secs_f64(),
        });
        Ok(out)
    }

    fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// A loaded split and its graph.
pub struct Prepared {
    pub split: DatasetSplit,
    pub graph: InteractionGraph,
    pub checksums: BTreeMap<String, String>,
}

fn file_checksum(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Loads (or synthesizes) interactions, splits them and persists the id maps
/// and split manifest. Idempotent for a fixed configuration.
pub fn cmd_prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let dir = config.dir("prepared");
    fs::create_dir_all(&dir)?;
    let mut manifest = RunManifest::new("prepare", config);
    let interactions: Interactions = manifest.time("load", || match &config.dataset.path {
        Some(path) => load_interactions(path, config.dataset.format),
        None => config.dataset.synthetic.write_edge_list(&dir.join("interactions.txt")),
    })?;
    if interactions.edges.len() > DESK_SCALE_MAX_INTERACTIONS && !config.full_scale {
        return Err(Error::InvalidConfig(format!(
            "{} interactions exceeds the desk-scale limit of {DESK_SCALE_MAX_INTERACTIONS}; pass --full-scale to run anyway",
            interactions.edges.len()
        )));
    }
    let r = config.dataset.ratio;
    let ratio = SplitRatio::new(r[0], r[1], r[2])?;
    let split = manifest.time("split", || Ok(split_dataset(&interactions, ratio, config.dataset.split_seed)))?;
    interactions.write_id_maps(&dir.join("users.tsv"), &dir.join("items.tsv"))?;
    split.write_manifest(&dir.join("split.tsv"))?;
    if !split.train_only_users.is_empty() {
        manifest.notes.push(format!(
            "{} users with fewer than 3 interactions kept entirely in training",
            split.train_only_users.len()
        ));
    }
    let graph = manifest.time("graph", || build_graph(&split))?;
    let mut checksums = BTreeMap::new();
    if let Some(path) = &config.dataset.path {
        checksums.insert("source".into(), file_checksum(path)?);
    }
    for name in ["users.tsv", "items.tsv", "split.tsv"] {
        checksums.insert(name.into(), file_checksum(&dir.join(name))?);
    }
    manifest.dataset_checksums = checksums.clone();
    manifest.write(&dir)?;
    Ok(Prepared { split, graph, checksums })
}

/// Reuses a persisted split when present, otherwise prepares one.
pub fn load_or_prepare(config: &ExperimentConfig) -> Result<Prepared> {
    let path = config.dir("prepared").join("split.tsv");
    if !path.exists() {
        return cmd_prepare(config);
    }
    let split = DatasetSplit::read_manifest(&path)?;
    if split.seed != config.dataset.split_seed {
        return cmd_prepare(config);
    }
    let graph = build_graph(&split)?;
    let mut checksums = BTreeMap::new();
    checksums.insert("split.tsv".into(), file_checksum(&path)?);
    Ok(Prepared { split, graph, checksums })
}

fn initial_table(config: &ExperimentConfig, graph: &InteractionGraph) -> Result<EmbeddingTable> {
    init_table(graph.num_users(), graph.num_items(), config.embedding_size, config.init_seed)
}

#[derive(Debug, Serialize)]
struct EpochCsvRow {
    schema_version: u32,
    config_hash: String,
    epoch: usize,
    loss: Option<f64>,
    recall: Option<f64>,
    ndcg: Option<f64>,
}

fn write_epoch_log(path: &Path, hash: &str, outcome: &RunOutcome) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in &outcome.history {
        w.serialize(EpochCsvRow {
            schema_version: SCHEMA_VERSION,
            config_hash: hash.to_string(),
            epoch: r.epoch,
            loss: r.loss,
            recall: r.recall,
            ndcg: r.ndcg,
        })?;
    }
    w.flush()?;
    Ok(())
}

fn write_timings(path: &Path, outcome: &RunOutcome) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["schema_version", "epoch", "wall_clock_seconds"])?;
    // a resumed run only timed its own epochs, which end at the last one
    let last = outcome.history.last().map_or(0, |r| r.epoch);
    let first = last + 1 - outcome.epoch_seconds.len();
    for (e, s) in outcome.epoch_seconds.iter().enumerate() {
        w.write_record([SCHEMA_VERSION.to_string(), (first + e).to_string(), format!("{s:.6}")])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LcmRow {
    pub schema_version: u32,
    pub config_hash: String,
    pub target_sparsity: f64,
    pub compressed_dim: usize,
    pub table_parameters: usize,
    pub map_parameters: usize,
    pub dense_parameters: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub best_epoch: usize,
}

#[derive(Debug)]
pub struct TrainReport {
    pub outcome: RunOutcome,
    pub lcm: Vec<LcmRow>,
    pub dir: PathBuf,
}

/// Dense baseline run: per-epoch metrics, a resumable checkpoint and the
/// best-epoch table. With `pruner = "lcm"` the compression baseline is also
/// trained at each configured budget.
pub fn cmd_train(config: &ExperimentConfig) -> Result<TrainReport> {
    config.validate()?;
    let mut manifest = RunManifest::new("train", config);
    let hash = manifest.config_hash.clone();
    let prepared = manifest.time("prepare", || load_or_prepare(config))?;
    manifest.dataset_checksums = prepared.checksums.clone();
    let graph = &prepared.graph;
    let model = Model::new(config.model.clone(), graph)?;
    let dir = config.dir("train");
    fs::create_dir_all(&dir)?;

    let checkpoint_dir = dir.join("checkpoint");
    let resumable = checkpoint_dir.join("checkpoint.json").exists() && manifest_hash_matches(&dir, &hash);
    let (mut table, mask, mut state) = if resumable {
        let c = load_checkpoint(&checkpoint_dir)?;
        manifest.notes.push(format!("resumed from checkpoint at epoch {}", c.state.epoch));
        (c.table, c.mask, c.state)
    } else {
        let table = initial_table(config, graph)?;
        let mask = PruneMask::ones(table.shape().0, table.shape().1);
        let state = TrainState::new(table.shape(), &config.train);
        fs::write(dir.join("config_hash"), &hash)?;
        (table, mask, state)
    };
    let outcome = manifest.time("train", || {
        train_from_state(&model, &mut table, &mask, graph, &config.train, &mut state, |t, s| {
            if config.train.is_eval_epoch(s.epoch) {
                save_checkpoint(&checkpoint_dir, t, &mask, &config.train, s)?;
            }
            Ok(())
        })
    })?;
    write_matrix(&dir.join("best_table.bin"), table.values(), config.init_seed)?;
    table.write_snapshot(&dir.join("snapshot.bin"))?;
    write_epoch_log(&dir.join("metrics.csv"), &hash, &outcome)?;
    write_timings(&dir.join("epoch_timings.csv"), &outcome)?;
    fs::write(dir.join("outcome.json"), serde_json::to_string_pretty(&outcome)?)?;

    let mut lcm_rows = Vec::new();
    if config.pruner == Pruner::Lcm {
        let dense_parameters = table.values().len();
        for &s in &config.prune.lcm_sparsities {
            let compressed_dim = (((1.0 - s) * config.embedding_size as f64).round() as usize).max(1);
            let mut lcm = compress_linear(
                graph.num_users(),
                graph.num_items(),
                config.embedding_size,
                compressed_dim,
                config.init_seed,
                MapInit::Auto,
            )?;
            let run = manifest.time(&format!("lcm-{s}"), || train_lcm(&model, graph, &mut lcm, &config.train))?;
            lcm_rows.push(LcmRow {
                schema_version: SCHEMA_VERSION,
                config_hash: hash.clone(),
                target_sparsity: s,
                compressed_dim,
                table_parameters: lcm.table_parameters(),
                map_parameters: lcm.map_parameters(),
                dense_parameters,
                recall: run.test.recall,
                ndcg: run.test.ndcg,
                best_epoch: run.best_epoch,
            });
        }
        let mut w = csv::Writer::from_path(dir.join("lcm.csv"))?;
        for row in &lcm_rows {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    manifest.write(&dir)?;
    Ok(TrainReport {
        outcome,
        lcm: lcm_rows,
        dir,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ImpSummaryRow {
    pub schema_version: u32,
    pub config_hash: String,
    pub iteration: usize,
    pub theoretical_sparsity: f64,
    pub measured_sparsity: f64,
    pub nnz: usize,
    pub max_user_dim: usize,
    pub max_item_dim: usize,
    pub search_recall: Option<f64>,
    pub search_ndcg: Option<f64>,
    pub search_best_epoch: Option<usize>,
    pub mask_file: String,
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ImpOptions {
    /// Ignore persisted progress and start over.
    pub fresh: bool,
    /// Stop after this many completed iterations (the run stays resumable).
    pub stop_after: Option<usize>,
}

pub struct ImpReport {
    pub tickets: TicketSet,
    pub rows: Vec<ImpSummaryRow>,
    pub complete: bool,
    pub dir: PathBuf,
}

/// `z_{i+1} = z_i + ⌊rate · (total − z_i)⌋`: pruned counts along the schedule.
pub fn schedule_zero_counts(total: usize, rate: f64, iterations: usize) -> Vec<usize> {
    let mut zeros = vec![0usize];
    for _ in 0..iterations {
        let z = *zeros.last().unwrap();
        zeros.push(z + (rate * (total - z) as f64).floor() as usize);
    }
    zeros
}

/// Ticket search. IMP and RP iterate (resuming from `output_dir/imp` when a
/// compatible run is found); OMP trains the dense table once and cuts it to
/// the same pruned counts as the IMP schedule.
pub fn cmd_imp(config: &ExperimentConfig, options: ImpOptions) -> Result<ImpReport> {
    config.validate()?;
    if matches!(config.pruner, Pruner::Lcm | Pruner::None) {
        return Err(Error::InvalidConfig(format!(
            "pruner {:?} does not produce tickets; use `train`",
            config.pruner
        )));
    }
    let mut manifest = RunManifest::new("imp", config);
    let hash = manifest.config_hash.clone();
    let prepared = manifest.time("prepare", || load_or_prepare(config))?;
    manifest.dataset_checksums = prepared.checksums.clone();
    let graph = &prepared.graph;
    let model = Model::new(config.model.clone(), graph)?;
    let dir = config.dir("imp");
    let imp_config = config.imp_config();

    let tickets = if config.pruner == Pruner::Omp {
        manifest.time("omp", || run_omp(config, &model, graph, &dir, &hash))?
    } else {
        let resumable = !options.fresh && dir.join("progress.json").exists() && manifest_hash_matches(&dir, &hash);
        let mut run = if resumable {
            manifest.notes.push("resumed from persisted progress".into());
            ImpRun::resume(&model, graph, &dir, Some(hash.clone()))?
        } else {
            if dir.exists() {
                fs::remove_dir_all(&dir)?;
            }
            fs::create_dir_all(&dir)?;
            fs::write(dir.join("config_hash"), &hash)?;
            ImpRun::new(&model, graph, initial_table(config, graph)?, imp_config.clone())?
                .persist_to(&dir, Some(hash.clone()))?
        };
        manifest.time("search", || {
            while !run.is_done() && options.stop_after.is_none_or(|n| run.completed() < n) {
                let t = run.step()?;
                log::info!("iteration {} sparsity {:.4}", t.iteration, t.sparsity);
            }
            Ok(())
        })?;
        run.finish()
    };

    let complete = tickets.tickets.len() >= imp_config.iterations;
    let rows = imp_summary_rows(&tickets, graph.num_users(), &hash);
    write_rows(&dir.join("summary.csv"), &rows)?;
    manifest.write(&dir)?;
    Ok(ImpReport {
        tickets,
        rows,
        complete,
        dir,
    })
}

fn manifest_hash_matches(dir: &Path, hash: &str) -> bool {
    fs::read_to_string(dir.join("config_hash")).is_ok_and(|h| h.trim() == hash)
}

fn run_omp(
    config: &ExperimentConfig,
    model: &Model,
    graph: &InteractionGraph,
    dir: &Path,
    hash: &str,
) -> Result<TicketSet> {
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir.join("masks"))?;
    fs::write(dir.join("config_hash"), hash)?;
    let mut table = initial_table(config, graph)?;
    table.write_snapshot(&dir.join("snapshot.bin"))?;
    let (rows, cols) = table.shape();
    let full = PruneMask::ones(rows, cols);
    let dense = crate::training::train_to_best(model, &mut table, &full, graph, &config.train)?;
    let zeros = schedule_zero_counts(rows * cols, config.prune.pruning_rate, config.prune.iterations);
    let mut tickets = Vec::new();
    for (i, &z) in zeros.iter().enumerate().skip(1) {
        let mask = prune_oneshot_count(table.values(), z)?;
        let theoretical = crate::pruning::sparsity_after(config.prune.pruning_rate, i);
        let header = crate::embedding::MaskHeader {
            schema_version: SCHEMA_VERSION,
            rows,
            cols,
            num_users: graph.num_users(),
            iteration: i,
            theoretical_sparsity: theoretical,
            measured_sparsity: mask.sparsity(),
            checksum: mask.checksum(),
            parent_checksum: Some(full.checksum()),
            manifest_hash: Some(hash.to_string()),
        };
        mask.write_artifact(&mask_path(dir, i), &header)?;
        tickets.push(crate::embedding::TicketRecord::new(i, mask, theoretical));
    }
    Ok(TicketSet {
        tickets,
        search: vec![dense],
        pruning_rate: config.prune.pruning_rate,
    })
}

fn imp_summary_rows(set: &TicketSet, num_users: usize, hash: &str) -> Vec<ImpSummaryRow> {
    let Some(first) = set.tickets.first() else { return Vec::new() };
    let (rows, cols) = first.mask.shape();
    let dense = PruneMask::ones(rows, cols);
    std::iter::once((0usize, &dense, 0.0))
        .chain(set.tickets.iter().map(|t| (t.iteration, &t.mask, t.theoretical_sparsity)))
        .map(|(i, mask, theoretical)| {
            let stats = sparsity_stats(mask, num_users);
            let search = set.search.get(i);
            ImpSummaryRow {
                schema_version: SCHEMA_VERSION,
                config_hash: hash.to_string(),
                iteration: i,
                theoretical_sparsity: theoretical,
                measured_sparsity: stats.sparsity,
                nnz: stats.nnz,
                max_user_dim: stats.max_user_dim,
                max_item_dim: stats.max_item_dim,
                search_recall: search.map(|s| s.test.recall),
                search_ndcg: search.map(|s| s.test.ndcg),
                search_best_epoch: search.map(|s| s.best_epoch),
                mask_file: if i == 0 {
                    String::new()
                } else {
                    format!("masks/mask_{i:03}.mask")
                },
            }
        })
        .collect()
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RetrainRow {
    pub schema_version: u32,
    pub config_hash: String,
    pub iteration: usize,
    pub theoretical_sparsity: f64,
    pub measured_sparsity: f64,
    pub nnz: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub best_epoch: usize,
    pub accuracy_ok: bool,
    pub speed_ok: bool,
    pub strict_winner: bool,
    pub accuracy_winner: bool,
    /// Highest-sparsity accuracy winner.
    pub red_star: bool,
}

pub struct RetrainReport {
    pub rows: Vec<RetrainRow>,
    pub outcomes: Vec<RunOutcome>,
    pub dir: PathBuf,
}

/// Retrains the dense table and every persisted ticket from `X⁰` and
/// adjudicates each against the dense run.
pub fn cmd_retrain_tickets(config: &ExperimentConfig, threads: Option<usize>) -> Result<RetrainReport> {
    config.validate()?;
    let mut manifest = RunManifest::new("retrain-tickets", config);
    let hash = manifest.config_hash.clone();
    let prepared = manifest.time("prepare", || load_or_prepare(config))?;
    manifest.dataset_checksums = prepared.checksums.clone();
    let graph = &prepared.graph;
    let model = Model::new(config.model.clone(), graph)?;
    let imp_dir = config.dir("imp");
    let (snapshot, seed) = read_matrix(&imp_dir.join("snapshot.bin"))?;
    let table = EmbeddingTable::from_parts(graph.num_users(), graph.num_items(), snapshot.clone(), snapshot, seed)?;

    let (rows, cols) = table.shape();
    let mut masks = vec![PruneMask::ones(rows, cols)];
    let mut theoretical = vec![0.0];
    for i in 1.. {
        let path = mask_path(&imp_dir, i);
        if !path.exists() {
            break;
        }
        let (header, mask) = PruneMask::read_artifact(&path)?;
        theoretical.push(header.theoretical_sparsity);
        masks.push(mask);
    }
    let runs = manifest.time("retrain", || retrain_all_tables(&model, graph, &table, &masks, &config.train, threads))?;

    let dir = config.dir("retrain");
    fs::create_dir_all(dir.join("tables"))?;
    for (i, (_, trained)) in runs.iter().enumerate() {
        write_matrix(&dir.join("tables").join(format!("ticket_{i:03}.bin")), trained.values(), seed)?;
    }
    let outcomes: Vec<RunOutcome> = runs.into_iter().map(|(o, _)| o).collect();

    let baseline = &outcomes[0];
    let mut out: Vec<RetrainRow> = masks
        .iter()
        .zip(&outcomes)
        .enumerate()
        .map(|(i, (mask, o))| {
            let adj = adjudicate(o, baseline);
            RetrainRow {
                schema_version: SCHEMA_VERSION,
                config_hash: hash.clone(),
                iteration: i,
                theoretical_sparsity: theoretical[i],
                measured_sparsity: mask.sparsity(),
                nnz: mask.nnz(),
                recall: o.test.recall,
                ndcg: o.test.ndcg,
                best_epoch: o.best_epoch,
                accuracy_ok: adj.accuracy_ok,
                speed_ok: adj.speed_ok,
                strict_winner: adj.strict_winner,
                accuracy_winner: adj.accuracy_winner,
                red_star: false,
            }
        })
        .collect();
    if let Some(star) = out
        .iter_mut()
        .skip(1)
        .filter(|r| r.accuracy_winner)
        .max_by(|a, b| a.measured_sparsity.total_cmp(&b.measured_sparsity))
    {
        star.red_star = true;
    }
    write_rows(&dir.join("summary.csv"), &out)?;
    manifest.write(&dir)?;
    Ok(RetrainReport {
        rows: out,
        outcomes,
        dir,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SpeedRow {
    pub schema_version: u32,
    pub iteration: usize,
    pub measured_sparsity: f64,
    pub baseline_best_epoch: usize,
    pub ticket_best_epoch: usize,
    /// Baseline epochs per ticket epoch; empty when the ticket peaked at epoch 0.
    pub relative_epochs: Option<f64>,
}

pub fn relative_epochs(baseline_best_epoch: usize, ticket_best_epoch: usize) -> Option<f64> {
    (ticket_best_epoch > 0).then(|| baseline_best_epoch as f64 / ticket_best_epoch as f64)
}

/// Reads a retrain summary and reports, per ticket, how many baseline epochs
/// it takes per ticket epoch to reach the best validation score.
pub fn cmd_speed_report(retrain_summary: &Path, out: &Path) -> Result<Vec<SpeedRow>> {
    let mut rdr = csv::Reader::from_path(retrain_summary)?;
    let rows: Vec<RetrainRow> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
    let baseline = rows
        .iter()
        .find(|r| r.iteration == 0)
        .ok_or_else(|| Error::corrupt(retrain_summary, "no dense baseline row"))?;
    let speed: Vec<SpeedRow> = rows
        .iter()
        .filter(|r| r.iteration > 0)
        .map(|r| SpeedRow {
            schema_version: SCHEMA_VERSION,
            iteration: r.iteration,
            measured_sparsity: r.measured_sparsity,
            baseline_best_epoch: baseline.best_epoch,
            ticket_best_epoch: r.best_epoch,
            relative_epochs: relative_epochs(baseline.best_epoch, r.best_epoch),
        })
        .collect();
    write_rows(out, &speed)?;
    Ok(speed)
}

pub const DEFAULT_VIZ_ROWS: usize = 10;

/// Grid of the first `rows` users and `rows` items: one line per node, one
/// column per dimension, `null` where the mask removed the entry.
pub fn cmd_viz_export(table_path: &Path, mask_path: Option<&Path>, num_users: Option<usize>, rows: usize, out: &Path) -> Result<()> {
    let (values, _) = read_matrix(table_path)?;
    let (mask, users) = match mask_path {
        Some(p) => {
            let (header, mask) = PruneMask::read_artifact(p)?;
            (mask, header.num_users)
        }
        None => (
            PruneMask::ones(values.rows(), values.cols()),
            num_users.ok_or_else(|| Error::InvalidConfig("num_users is required without a mask".into()))?,
        ),
    };
    mask.ensure_shape(values.shape())?;
    let mut w = csv::Writer::from_path(out)?;
    let mut header = vec!["schema_version".to_string(), "node_kind".into(), "node_index".into()];
    header.extend((0..values.cols()).map(|d| format!("f{d}")));
    w.write_record(&header)?;
    let users_range = 0..rows.min(users);
    let items_range = users..(users + rows).min(values.rows());
    for (kind, range) in [("user", users_range), ("item", items_range)] {
        for r in range {
            let index = if kind == "user" { r } else { r - users };
            let mut rec = vec![SCHEMA_VERSION.to_string(), kind.to_string(), index.to_string()];
            rec.extend((0..values.cols()).map(|c| {
                if mask.get(r, c) {
                    values.get(r, c).to_string()
                } else {
                    "null".to_string()
                }
            }));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ComplexityReport {
    pub num_users: usize,
    pub num_items: usize,
    pub dim: usize,
    pub stats: SparsityStats,
    pub layers: usize,
    pub adjacency_nnz: Option<usize>,
    pub dense_memory: String,
    pub ticket_memory: String,
    pub dense_mf_time: String,
    pub ticket_mf_time: String,
    pub dense_lightgcn_time: Option<String>,
    pub ticket_lightgcn_time: Option<String>,
}

/// Instantiates the dense and ticket memory/time bounds with measured quantities.
pub fn complexity_report(mask: &PruneMask, num_users: usize, layers: usize, adjacency_nnz: Option<usize>) -> ComplexityReport {
    let stats = sparsity_stats(mask, num_users);
    let (m, n, f) = (num_users, mask.rows() - num_users, mask.cols());
    let (fu, fi) = (stats.max_user_dim, stats.max_item_dim);
    let fmin = fu.min(fi);
    let mn = m as u128 * n as u128;
    ComplexityReport {
        num_users: m,
        num_items: n,
        dim: f,
        stats,
        layers,
        adjacency_nnz,
        dense_memory: format!("O(M×F + N×F) = {}", m * f + n * f),
        ticket_memory: format!("O(M×F_u* + N×F_i*) = {}", stats.memory_units),
        dense_mf_time: format!("O(M×N×F) = {}", mn * f as u128),
        ticket_mf_time: format!("O(M×N×min(F_u*,F_i*)) = {}", mn * fmin as u128),
        dense_lightgcn_time: adjacency_nnz.map(|a| {
            format!("O(K×|A|_0×F + M×N×F) = {}", (layers * a * f) as u128 + mn * f as u128)
        }),
        ticket_lightgcn_time: adjacency_nnz.map(|a| {
            format!(
                "O(K×|A|_0×min(F_u*,F_i*) + M×N×min(F_u*,F_i*)) = {}",
                (layers * a * fmin) as u128 + mn * fmin as u128
            )
        }),
    }
}

pub fn cmd_complexity_report(mask_path: &Path, layers: usize, adjacency_nnz: Option<usize>, out: &Path) -> Result<ComplexityReport> {
    let (header, mask) = PruneMask::read_artifact(mask_path)?;
    let report = complexity_report(&mask, header.num_users, layers, adjacency_nnz);
    let s = &report.stats;
    let mut w = csv::Writer::from_path(out)?;
    w.write_record(["schema_version", "quantity", "value"])?;
    let mut put = |k: &str, v: String| w.write_record([SCHEMA_VERSION.to_string(), k.to_string(), v]);
    put("num_users", report.num_users.to_string())?;
    put("num_items", report.num_items.to_string())?;
    put("dim", report.dim.to_string())?;
    put("nnz", s.nnz.to_string())?;
    put("sparsity", s.sparsity.to_string())?;
    put("max_user_dim", s.max_user_dim.to_string())?;
    put("max_item_dim", s.max_item_dim.to_string())?;
    put("dense_bytes", s.dense_bytes.to_string())?;
    put("csr_bytes", s.csr_bytes.to_string())?;
    put("csr_to_dense_ratio", (s.csr_bytes as f64 / s.dense_bytes as f64).to_string())?;
    put("dense_memory", report.dense_memory.clone())?;
    put("ticket_memory", report.ticket_memory.clone())?;
    put("dense_mf_time", report.dense_mf_time.clone())?;
    put("ticket_mf_time", report.ticket_mf_time.clone())?;
    if let (Some(d), Some(t)) = (&report.dense_lightgcn_time, &report.ticket_lightgcn_time) {
        put("dense_lightgcn_time", d.clone())?;
        put("ticket_lightgcn_time", t.clone())?;
    }
    w.flush()?;
    Ok(report)
}

/// Writes `M ⊙ X` from a dense dump and a mask artifact as CSR.
pub fn cmd_export_sparse(table_path: &Path, mask_path: &Path, out: &Path) -> Result<CsrArtifact> {
    let (values, seed) = read_matrix(table_path)?;
    let (header, mask) = PruneMask::read_artifact(mask_path)?;
    let num_items = values.rows().checked_sub(header.num_users).ok_or_else(|| Error::ShapeMismatch {
        expected: (header.rows, header.cols),
        actual: values.shape(),
    })?;
    let table = EmbeddingTable::from_parts(header.num_users, num_items, values.clone(), values, seed)?;
    export_sparse(&table, &mask, out)
}

/// Test Recall/NDCG of the three pruners at one schedule point.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PrunerComparison {
    pub iteration: usize,
    pub sparsity: f64,
    pub imp: RankingPair,
    pub omp: RankingPair,
    pub rp: RankingPair,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct RankingPair {
    pub recall: f64,
    pub ndcg: f64,
}

impl From<&RunOutcome> for RankingPair {
    fn from(o: &RunOutcome) -> Self {
        Self {
            recall: o.test.recall,
            ndcg: o.test.ndcg,
        }
    }
}

/// Runs IMP and iterative random pruning up to the largest requested
/// schedule point, plus one-shot magnitude pruning cut to the same pruned
/// counts, and retrains every ticket from `table`'s initialization.
pub fn compare_pruners(
    model: &Model,
    graph: &InteractionGraph,
    table: &EmbeddingTable,
    config: &ImpConfig,
    points: &[usize],
) -> Result<Vec<PrunerComparison>> {
    let last = points.iter().copied().max().unwrap_or(0);
    let search = |strategy| {
        let cfg = ImpConfig {
            iterations: last,
            strategy,
            ..config.clone()
        };
        run_imp(model, graph, table.clone(), cfg)
    };
    let imp = search(PruneStrategy::Magnitude)?;
    let rp = search(PruneStrategy::Random)?;

    let mut dense = table.clone();
    dense.rewind();
    let (rows, cols) = dense.shape();
    crate::training::train_to_best(model, &mut dense, &PruneMask::ones(rows, cols), graph, &config.train)?;
    let zeros = schedule_zero_counts(rows * cols, config.pruning_rate, last);

    let mut masks = Vec::new();
    for &i in points {
        masks.push(imp.tickets[i - 1].mask.clone());
        masks.push(prune_oneshot_count(dense.values(), zeros[i])?);
        masks.push(rp.tickets[i - 1].mask.clone());
    }
    let outcomes = retrain_all(model, graph, table, &masks, &config.train, None)?;
    Ok(points
        .iter()
        .zip(outcomes.chunks(3))
        .zip(masks.chunks(3))
        .map(|((&i, o), m)| {
            debug_assert!(m[0].num_zeros() == m[1].num_zeros() && m[1].num_zeros() == m[2].num_zeros());
            PrunerComparison {
                iteration: i,
                sparsity: m[0].sparsity(),
                imp: (&o[0]).into(),
                omp: (&o[1]).into(),
                rp: (&o[2]).into(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ExperimentConfig {
            model: Backbone::LightGcn(crate::models::LightGcnConfig::uniform(2)),
            ..Default::default()
        };
        let text = cfg.to_toml();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg: ExperimentConfig = toml::from_str("embedding_size = 64\n[train]\nepochs = 5\n").unwrap();
        assert_eq!(cfg.embedding_size, 64);
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.train.batch_size, 2048);
        assert_eq!(cfg.prune.iterations, 30);
    }

    #[test]
    fn schedule_counts_follow_floor_recurrence() {
        let z = schedule_zero_counts(1000, 0.1, 3);
        assert_eq!(z, vec![0, 100, 190, 271]);
    }

    #[test]
    fn relative_epoch_ratios() {
        assert_eq!(relative_epochs(40, 40), Some(1.0));
        assert_eq!(relative_epochs(80, 10), Some(8.0));
        assert_eq!(relative_epochs(80, 0), None);
    }

    #[test]
    fn complexity_for_dense_mask() {
        let r = complexity_report(&PruneMask::ones(10, 32), 4, 3, Some(20));
        assert_eq!((r.stats.max_user_dim, r.stats.max_item_dim), (32, 32));
        assert!(r.stats.csr_bytes > r.stats.dense_bytes);
        assert!(r.ticket_memory.starts_with("O(M×F_u* + N×F_i*)"));
    }
}
