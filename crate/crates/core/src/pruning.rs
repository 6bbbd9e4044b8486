//! Iterative magnitude pruning with rewinding, the random and one-shot
//! baselines, and winner adjudication.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::InteractionGraph;
use crate::embedding::{mask_matrix, read_matrix, write_matrix, EmbeddingTable, MaskHeader, PruneMask, TicketRecord};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::models::Model;
use crate::training::{train_to_best, RunOutcome, TrainConfig};

/// How the next mask is chosen from the surviving entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PruneStrategy {
    /// Lowest magnitude in the trained table.
    #[default]
    Magnitude,
    /// Uniformly random among survivors.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImpConfig {
    pub pruning_rate: f64,
    pub iterations: usize,
    pub rewind: bool,
    pub strategy: PruneStrategy,
    /// Seeds the random strategy; each iteration derives its own stream.
    pub prune_seed: u64,
    pub train: TrainConfig,
}

impl Default for ImpConfig {
    fn default() -> Self {
        Self {
            pruning_rate: 0.1,
            iterations: 30,
            rewind: true,
            strategy: PruneStrategy::Magnitude,
            prune_seed: 17,
            train: TrainConfig::default(),
        }
    }
}

impl ImpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pruning_rate > 0.0 && self.pruning_rate < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "pruning_rate must lie in (0, 1), got {}",
                self.pruning_rate
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        self.train.validate()
    }
}

/// Scheduled sparsity after `iteration` prunes: `1 - (1 - rate)^iteration`.
pub fn sparsity_after(rate: f64, iteration: usize) -> f64 {
    1.0 - (1.0 - rate).powi(iteration as i32)
}

fn prune_count(rate: f64, nnz: usize) -> Result<usize> {
    let count = (rate * nnz as f64).floor() as usize;
    if count == 0 {
        return Err(Error::PruningStalled { rate, nnz });
    }
    Ok(count.min(nnz))
}

fn next_tag(mask: &PruneMask) -> u32 {
    mask.pruned_at().iter().copied().max().unwrap_or(0) + 1
}

/// Zeroes the `⌊rate · nnz⌋` surviving entries of smallest `|value|`, taking
/// lower flat indices first on equal magnitudes.
pub fn prune_lowest_magnitude(values: &DenseMatrix, mask: &PruneMask, rate: f64) -> Result<PruneMask> {
    mask.ensure_shape(values.shape())?;
    let count = prune_count(rate, mask.nnz())?;
    let selected = smallest_magnitudes(values.as_slice(), mask.kept_indices(), count);
    Ok(mask.pruned(&selected, next_tag(mask)))
}

fn smallest_magnitudes(values: &[f64], mut candidates: Vec<usize>, count: usize) -> Vec<usize> {
    let key = |&i: &usize| (values[i].abs(), i);
    let cmp = |a: &usize, b: &usize| {
        let (ma, ia) = key(a);
        let (mb, ib) = key(b);
        ma.total_cmp(&mb).then(ia.cmp(&ib))
    };
    if count < candidates.len() {
        candidates.select_nth_unstable_by(count, cmp);
        candidates.truncate(count);
    }
    candidates
}

/// Zeroes `⌊rate · nnz⌋` survivors chosen uniformly at random.
pub fn prune_random(mask: &PruneMask, rate: f64, rng: &mut ChaCha8Rng) -> Result<PruneMask> {
    let kept = mask.kept_indices();
    let count = prune_count(rate, kept.len())?;
    let selected: Vec<usize> = rand::seq::index::sample(rng, kept.len(), count)
        .into_iter()
        .map(|k| kept[k])
        .collect();
    Ok(mask.pruned(&selected, next_tag(mask)))
}

/// One magnitude cut of a trained dense table to `⌊target · total⌋` zeros.
pub fn prune_oneshot(values: &DenseMatrix, target_sparsity: f64) -> Result<PruneMask> {
    if !(0.0..=1.0).contains(&target_sparsity) {
        return Err(Error::InvalidConfig(format!(
            "target sparsity must be in [0, 1], got {target_sparsity}"
        )));
    }
    let zeros = (target_sparsity * values.len() as f64).floor() as usize;
    prune_oneshot_count(values, zeros)
}

/// One magnitude cut to exactly `zeros` pruned entries.
pub fn prune_oneshot_count(values: &DenseMatrix, zeros: usize) -> Result<PruneMask> {
    let full = PruneMask::ones(values.rows(), values.cols());
    if zeros > values.len() {
        return Err(Error::InvalidConfig(format!(
            "cannot prune {zeros} of {} entries",
            values.len()
        )));
    }
    let selected = smallest_magnitudes(values.as_slice(), full.kept_indices(), zeros);
    Ok(full.pruned(&selected, 1))
}

/// Share of `a`'s surviving entries that also survive in `b`.
pub fn mask_overlap(a: &PruneMask, b: &PruneMask) -> f64 {
    let kept = a.nnz();
    if kept == 0 {
        return 0.0;
    }
    let both = a.bits().zip(b.bits()).filter(|&(x, y)| x && y).count();
    both as f64 / kept as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adjudication {
    pub accuracy_ok: bool,
    pub speed_ok: bool,
    /// Both conditions.
    pub strict_winner: bool,
    /// Recall condition only.
    pub accuracy_winner: bool,
}

/// Winner iff test Recall@K is at least the baseline's and the best epoch is
/// no later than the baseline's.
pub fn adjudicate(ticket: &RunOutcome, baseline: &RunOutcome) -> Adjudication {
    adjudicate_values(ticket.test.recall, baseline.test.recall, ticket.best_epoch, baseline.best_epoch)
}

pub fn adjudicate_values(ticket_recall: f64, baseline_recall: f64, ticket_epoch: usize, baseline_epoch: usize) -> Adjudication {
    let accuracy_ok = ticket_recall >= baseline_recall;
    let speed_ok = ticket_epoch <= baseline_epoch;
    Adjudication {
        accuracy_ok,
        speed_ok,
        strict_winner: accuracy_ok && speed_ok,
        accuracy_winner: accuracy_ok,
    }
}

/// Output of a search: one ticket per iteration plus the training run that
/// preceded each prune (`search[0]` is the dense model).
#[derive(Debug, Clone, PartialEq)]
pub struct TicketSet {
    pub tickets: Vec<TicketRecord>,
    pub search: Vec<RunOutcome>,
    pub pruning_rate: f64,
}

impl TicketSet {
    pub fn dense_baseline(&self) -> Option<&RunOutcome> {
        self.search.first()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Progress {
    schema_version: u32,
    completed_iterations: usize,
    num_users: usize,
    num_items: usize,
    dim: usize,
    init_seed: u64,
    config: ImpConfig,
}

/// A search in progress. Each call to [`ImpRun::step`] performs one
/// train → prune → rewind iteration and, when a directory is attached,
/// persists the new mask before committing progress.
pub struct ImpRun<'a> {
    model: &'a Model,
    graph: &'a InteractionGraph,
    config: ImpConfig,
    table: EmbeddingTable,
    mask: PruneMask,
    tickets: Vec<TicketRecord>,
    search: Vec<RunOutcome>,
    dir: Option<PathBuf>,
    manifest_hash: Option<String>,
}

impl<'a> ImpRun<'a> {
    pub fn new(model: &'a Model, graph: &'a InteractionGraph, table: EmbeddingTable, config: ImpConfig) -> Result<Self> {
        config.validate()?;
        let mut table = table;
        table.rewind();
        let (rows, cols) = table.shape();
        Ok(Self {
            model,
            graph,
            config,
            table,
            mask: PruneMask::ones(rows, cols),
            tickets: Vec::new(),
            search: Vec::new(),
            dir: None,
            manifest_hash: None,
        })
    }

    /// Persists the initialization snapshot and every subsequent iteration into `dir`.
    pub fn persist_to(mut self, dir: &Path, manifest_hash: Option<String>) -> Result<Self> {
        fs::create_dir_all(dir.join("masks"))?;
        fs::create_dir_all(dir.join("search"))?;
        self.table.write_snapshot(&dir.join("snapshot.bin"))?;
        self.dir = Some(dir.to_path_buf());
        self.manifest_hash = manifest_hash;
        self.write_progress()?;
        Ok(self)
    }

    /// Reloads a persisted search so it can continue where it stopped.
    pub fn resume(model: &'a Model, graph: &'a InteractionGraph, dir: &Path, manifest_hash: Option<String>) -> Result<Self> {
        let progress: Progress = serde_json::from_str(&fs::read_to_string(dir.join("progress.json"))?)?;
        let (snapshot, seed) = read_matrix(&dir.join("snapshot.bin"))?;
        let (current, _) = read_matrix(&dir.join("current.bin")).or_else(|_| Ok::<_, Error>((snapshot.clone(), seed)))?;
        let table = EmbeddingTable::from_parts(progress.num_users, progress.num_items, current, snapshot, seed)?;
        let (rows, cols) = table.shape();
        let mut mask = PruneMask::ones(rows, cols);
        let mut tickets = Vec::new();
        let mut search = Vec::new();
        for i in 0..progress.completed_iterations {
            let (header, next) = PruneMask::read_artifact(&mask_path(dir, i + 1))?;
            if header.parent_checksum.as_deref() != Some(mask.checksum().as_str()) {
                return Err(Error::corrupt(mask_path(dir, i + 1), "parent checksum does not match the previous mask"));
            }
            let next = next.with_provenance(&mask, (i + 1) as u32);
            tickets.push(TicketRecord::new(i + 1, next.clone(), header.theoretical_sparsity));
            search.push(serde_json::from_str(&fs::read_to_string(search_path(dir, i))?)?);
            mask = next;
        }
        Ok(Self {
            model,
            graph,
            config: progress.config,
            table,
            mask,
            tickets,
            search,
            dir: Some(dir.to_path_buf()),
            manifest_hash,
        })
    }

    pub fn config(&self) -> &ImpConfig {
        &self.config
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    pub fn mask(&self) -> &PruneMask {
        &self.mask
    }

    pub fn completed(&self) -> usize {
        self.tickets.len()
    }

    pub fn is_done(&self) -> bool {
        self.completed() >= self.config.iterations
    }

    pub fn step(&mut self) -> Result<&TicketRecord> {
        let i = self.completed();
        let outcome = train_to_best(self.model, &mut self.table, &self.mask, self.graph, &self.config.train)?;
        let next = match self.config.strategy {
            PruneStrategy::Magnitude => {
                let trained = mask_matrix(self.table.values(), &self.mask)?;
                prune_lowest_magnitude(&trained, &self.mask, self.config.pruning_rate)?
            }
            PruneStrategy::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.config.prune_seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                prune_random(&self.mask, self.config.pruning_rate, &mut rng)?
            }
        };
        if self.config.rewind {
            self.table.rewind();
        } else {
            self.table.zero_masked(&next)?;
        }
        let ticket = TicketRecord::new(i + 1, next.clone(), sparsity_after(self.config.pruning_rate, i + 1));
        if let Some(dir) = &self.dir {
            let header = MaskHeader {
                schema_version: 1,
                rows: next.rows(),
                cols: next.cols(),
                num_users: self.table.num_users(),
                iteration: i + 1,
                theoretical_sparsity: ticket.theoretical_sparsity,
                measured_sparsity: ticket.sparsity,
                checksum: next.checksum(),
                parent_checksum: Some(self.mask.checksum()),
                manifest_hash: self.manifest_hash.clone(),
            };
            next.write_artifact(&mask_path(dir, i + 1), &header)?;
            fs::write(search_path(dir, i), serde_json::to_string(&outcome)?)?;
            if !self.config.rewind {
                write_matrix(&dir.join("current.tmp"), self.table.values(), self.table.init_seed())?;
                fs::rename(dir.join("current.tmp"), dir.join("current.bin"))?;
            }
        }
        self.mask = next;
        self.search.push(outcome);
        self.tickets.push(ticket);
        if self.dir.is_some() {
            self.write_progress()?;
        }
        Ok(self.tickets.last().unwrap())
    }

    fn write_progress(&self) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let progress = Progress {
            schema_version: 1,
            completed_iterations: self.completed(),
            num_users: self.table.num_users(),
            num_items: self.table.num_items(),
            dim: self.table.dim(),
            init_seed: self.table.init_seed(),
            config: self.config.clone(),
        };
        let tmp = dir.join("progress.tmp");
        fs::write(&tmp, serde_json::to_string_pretty(&progress)?)?;
        fs::rename(tmp, dir.join("progress.json"))?;
        Ok(())
    }

    pub fn run(mut self) -> Result<TicketSet> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> TicketSet {
        TicketSet {
            tickets: self.tickets,
            search: self.search,
            pruning_rate: self.config.pruning_rate,
        }
    }
}

pub fn mask_path(dir: &Path, iteration: usize) -> PathBuf {
    dir.join("masks").join(format!("mask_{iteration:03}.mask"))
}

fn search_path(dir: &Path, iteration: usize) -> PathBuf {
    dir.join("search").join(format!("train_{iteration:03}.json"))
}

/// Runs all iterations in memory.
pub fn run_imp(model: &Model, graph: &InteractionGraph, table: EmbeddingTable, config: ImpConfig) -> Result<TicketSet> {
    ImpRun::new(model, graph, table, config)?.run()
}

/// Trains `M ⊙ X⁰` from the initialization snapshot with fresh optimizer state.
pub fn retrain_ticket(
    model: &Model,
    graph: &InteractionGraph,
    table: &EmbeddingTable,
    mask: &PruneMask,
    config: &TrainConfig,
) -> Result<RunOutcome> {
    retrain_ticket_table(model, graph, table, mask, config).map(|(outcome, _)| outcome)
}

/// Like [`retrain_ticket`], also returning the table at its best epoch.
pub fn retrain_ticket_table(
    model: &Model,
    graph: &InteractionGraph,
    table: &EmbeddingTable,
    mask: &PruneMask,
    config: &TrainConfig,
) -> Result<(RunOutcome, EmbeddingTable)> {
    let mut table = table.clone();
    table.rewind();
    let outcome = train_to_best(model, &mut table, mask, graph, config)?;
    Ok((outcome, table))
}

/// Retrains every mask, optionally on a dedicated pool of `threads` workers.
/// Results come back in input order regardless of scheduling.
pub fn retrain_all(
    model: &Model,
    graph: &InteractionGraph,
    table: &EmbeddingTable,
    masks: &[PruneMask],
    config: &TrainConfig,
    threads: Option<usize>,
) -> Result<Vec<RunOutcome>> {
    let runs = retrain_all_tables(model, graph, table, masks, config, threads)?;
    Ok(runs.into_iter().map(|(outcome, _)| outcome).collect())
}

/// [`retrain_all`] keeping each trained table.
pub fn retrain_all_tables(
    model: &Model,
    graph: &InteractionGraph,
    table: &EmbeddingTable,
    masks: &[PruneMask],
    config: &TrainConfig,
    threads: Option<usize>,
) -> Result<Vec<(RunOutcome, EmbeddingTable)>> {
    let job = || {
        masks
            .par_iter()
            .map(|mask| retrain_ticket_table(model, graph, table, mask, config))
            .collect::<Result<Vec<_>>>()
    };
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?
            .install(job),
        None => job(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(values: &[f64]) -> DenseMatrix {
        DenseMatrix::from_vec(1, values.len(), values.to_vec()).unwrap()
    }

    #[test]
    fn magnitude_example() {
        let x = row(&[0.5, -0.1, 0.3, -0.8]);
        let m = prune_lowest_magnitude(&x, &PruneMask::ones(1, 4), 0.5).unwrap();
        assert_eq!(m.as_slice(), &[true, false, false, true]);
    }

    #[test]
    fn single_survivor_is_the_largest() {
        let x = row(&[0.5, -0.1, 0.3, -0.8, 0.2]);
        // floor(0.8 * 5) = 4
        let m = prune_lowest_magnitude(&x, &PruneMask::ones(1, 5), 0.8).unwrap();
        assert_eq!(m.kept_indices(), vec![3]);
    }

    #[test]
    fn ties_prune_lower_index_first() {
        let x = row(&[0.2, 0.9, -0.2, 0.9]);
        let m = prune_lowest_magnitude(&x, &PruneMask::ones(1, 4), 0.25).unwrap();
        assert_eq!(m.as_slice(), &[false, true, true, true]);
    }

    #[test]
    fn stalled_pruning_is_an_error() {
        let x = row(&[1.0, 2.0]);
        assert!(matches!(
            prune_lowest_magnitude(&x, &PruneMask::ones(1, 2), 0.1),
            Err(Error::PruningStalled { .. })
        ));
    }

    #[test]
    fn already_pruned_entries_are_ignored() {
        let x = row(&[0.0, 5.0, 1.0, 3.0]);
        let mask = PruneMask::from_bits(1, 4, vec![false, true, true, true]).unwrap();
        let m = prune_lowest_magnitude(&x, &mask, 0.34).unwrap();
        assert_eq!(m.as_slice(), &[false, true, false, true]);
        assert!(m.is_nested_in(&mask));
        assert_eq!(m.pruned_at()[2], 2);
    }

    #[test]
    fn schedule_values() {
        assert!((sparsity_after(0.1, 10) - 0.6513).abs() < 5e-5);
        assert!((sparsity_after(0.1, 29) - 0.9529).abs() < 5e-5);
        assert_eq!(sparsity_after(0.3, 0), 0.0);
    }

    #[test]
    fn oneshot_cases() {
        let x = row(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(prune_oneshot(&x, 0.0).unwrap(), PruneMask::ones(1, 4));
        assert_eq!(prune_oneshot(&x, 0.5).unwrap().as_slice(), &[false, false, true, true]);
        assert!(prune_oneshot(&x, 1.5).is_err());
    }

    #[test]
    fn random_pruning_count_and_determinism() {
        let mask = PruneMask::ones(10, 10);
        let a = prune_random(&mask, 0.25, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = prune_random(&mask, 0.25, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_zeros(), 25);
        let c = prune_random(&a, 0.25, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(c.num_zeros(), 25 + 18);
        assert!(c.is_nested_in(&a));
    }

    #[test]
    fn adjudication_cases() {
        let w = adjudicate_values(0.0529, 0.0411, 10, 10);
        assert!(w.accuracy_winner);
        assert!(adjudicate_values(0.05, 0.05, 30, 30).strict_winner);
        let l = adjudicate_values(0.04, 0.05, 10, 30);
        assert!(!l.strict_winner && !l.accuracy_winner && l.speed_ok);
        let slow = adjudicate_values(0.06, 0.05, 40, 30);
        assert!(slow.accuracy_winner && !slow.strict_winner);
    }

    #[test]
    fn overlap_fraction() {
        let a = PruneMask::from_bits(1, 4, vec![true, true, false, false]).unwrap();
        let b = PruneMask::from_bits(1, 4, vec![true, false, true, false]).unwrap();
        assert_eq!(mask_overlap(&a, &b), 0.5);
        assert_eq!(mask_overlap(&a, &a), 1.0);
    }
}
