//! BPR training with uniform negative sampling and masked Adam.
//!
//! The trainer only ever reads `M ⊙ X`. Gradients are multiplied by the mask
//! before they reach Adam, so pruned coordinates keep zero moments and never
//! move.

use std::borrow::Cow;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{InteractionGraph, Split};
use crate::embedding::{mask_matrix, read_matrix, write_matrix, EmbeddingTable, PruneMask};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_model, RankingMetrics, DEFAULT_K};
use crate::matrix::{dot, DenseMatrix};
use crate::models::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum L2Mode {
    /// `λ·(‖x_u‖² + ‖x_i‖² + ‖x_j‖²)` per sampled triple, divided by the batch size.
    #[default]
    Triple,
    /// `λ·‖M ⊙ X‖²` over the whole table, once per batch.
    FullTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2_weight: f64,
    pub l2_mode: L2Mode,
    pub batch_size: usize,
    pub negatives_per_positive: usize,
    pub sampler_seed: u64,
    pub eval_every: usize,
    pub k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            learning_rate: 0.001,
            l2_weight: 1e-4,
            l2_mode: L2Mode::Triple,
            batch_size: 2048,
            negatives_per_positive: 1,
            sampler_seed: 2024,
            eval_every: 10,
            k: DEFAULT_K,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.l2_weight.is_finite() && self.l2_weight >= 0.0) {
            return bad("l2_weight must be finite and non-negative");
        }
        if self.batch_size == 0 || self.negatives_per_positive == 0 || self.eval_every == 0 || self.k == 0 {
            return bad("batch_size, negatives_per_positive, eval_every and k must be positive");
        }
        Ok(())
    }

    /// Epochs at which validation runs: 0, every `eval_every`, and the last one.
    pub fn is_eval_epoch(&self, epoch: usize) -> bool {
        epoch.is_multiple_of(self.eval_every) || epoch == self.epochs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

/// Draws up to `batch_size` positives uniformly from the training edges, each
/// paired with `negatives` items the user has not interacted with.
///
/// Users that interacted with every item cannot be paired and are skipped.
pub fn sample_batch(
    graph: &InteractionGraph,
    batch_size: usize,
    negatives: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Triple> {
    let edges = graph.train_edges();
    let n = graph.num_items();
    let mut out = Vec::with_capacity(batch_size * negatives);
    if edges.is_empty() {
        return out;
    }
    for _ in 0..batch_size {
        let (user, pos) = edges[rng.random_range(0..edges.len())];
        if graph.train_items(user).len() >= n {
            log::warn!("user {user} interacted with every item; no negative exists");
            continue;
        }
        for _ in 0..negatives {
            let neg = loop {
                let j = rng.random_range(0..n);
                if !graph.has_train_edge(user, j) {
                    break j;
                }
            };
            out.push(Triple { user, pos, neg });
        }
    }
    out
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean of `-ln σ(pos - neg)` plus `λ · reg_sum_squares / batch`.
pub fn bpr_loss(pos_scores: &[f64], neg_scores: &[f64], l2_weight: f64, reg_sum_squares: f64) -> f64 {
    assert_eq!(pos_scores.len(), neg_scores.len(), "score lists differ in length");
    let b = pos_scores.len();
    if b == 0 {
        return 0.0;
    }
    let ranking: f64 = pos_scores
        .iter()
        .zip(neg_scores)
        .map(|(p, n)| softplus(n - p))
        .sum();
    (ranking + l2_weight * reg_sum_squares) / b as f64
}

/// Ranking part of the batch loss and its gradient with respect to the model
/// input table (pulled back through propagation for LightGCN).
pub fn ranking_term(model: &Model, input: &DenseMatrix, triples: &[Triple]) -> Result<(f64, DenseMatrix)> {
    let m = model.num_users();
    let output = model.output(input)?;
    let mut grad_out = DenseMatrix::zeros(input.rows(), input.cols());
    if triples.is_empty() {
        return Ok((0.0, grad_out));
    }
    let scale = 1.0 / triples.len() as f64;
    let f = input.cols();
    let mut loss = 0.0;
    let mut tmp = vec![0.0; f];
    for t in triples {
        let (ou, oi, oj) = (output.row(t.user), output.row(m + t.pos), output.row(m + t.neg));
        let margin = dot(ou, oi) - dot(ou, oj);
        loss += softplus(-margin);
        // d softplus(-margin) / d margin
        let c = -sigmoid(-margin) * scale;
        for d in 0..f {
            tmp[d] = c * (oi[d] - oj[d]);
        }
        for (g, v) in grad_out.row_mut(t.user).iter_mut().zip(&tmp) {
            *g += v;
        }
        for (g, u) in grad_out.row_mut(m + t.pos).iter_mut().zip(ou) {
            *g += c * u;
        }
        for (g, u) in grad_out.row_mut(m + t.neg).iter_mut().zip(ou) {
            *g -= c * u;
        }
    }
    let pulled = match model.backward(&grad_out)? {
        Cow::Owned(g) => Some(g),
        Cow::Borrowed(_) => None,
    };
    Ok((loss * scale, pulled.unwrap_or(grad_out)))
}

/// L2 term of a batch over the rows of `base` and its gradient, accumulated into `grad`.
pub fn regularization_term(
    base: &DenseMatrix,
    num_users: usize,
    triples: &[Triple],
    config: &TrainConfig,
    grad: &mut DenseMatrix,
) -> f64 {
    let lambda = config.l2_weight;
    if lambda == 0.0 || triples.is_empty() {
        return 0.0;
    }
    match config.l2_mode {
        L2Mode::Triple => {
            let scale = lambda / triples.len() as f64;
            let mut total = 0.0;
            for t in triples {
                for row in [t.user, num_users + t.pos, num_users + t.neg] {
                    let x = base.row(row);
                    total += dot(x, x);
                    for (g, v) in grad.row_mut(row).iter_mut().zip(x) {
                        *g += 2.0 * scale * v;
                    }
                }
            }
            total * scale
        }
        L2Mode::FullTable => {
            grad.add_scaled(2.0 * lambda, base);
            lambda * base.sum_squares()
        }
    }
}

/// Full batch objective over the masked table and its gradient with respect to it.
pub fn batch_objective(
    model: &Model,
    masked: &DenseMatrix,
    triples: &[Triple],
    config: &TrainConfig,
) -> Result<(f64, DenseMatrix)> {
    let (ranking, mut grad) = ranking_term(model, masked, triples)?;
    let reg = regularization_term(masked, model.num_users(), triples, config, &mut grad);
    Ok((ranking + reg, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first_moment: DenseMatrix,
    pub second_moment: DenseMatrix,
}

impl Adam {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first_moment: DenseMatrix::zeros(rows, cols),
            second_moment: DenseMatrix::zeros(rows, cols),
        }
    }

    /// One update of `params`. Coordinates where `keep` is false get no
    /// gradient, no moment and no movement.
    pub fn update(&mut self, params: &mut DenseMatrix, grad: &DenseMatrix, lr: f64, keep: Option<&PruneMask>) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let p = params.as_mut_slice();
        let g = grad.as_slice();
        let m = self.first_moment.as_mut_slice();
        let v = self.second_moment.as_mut_slice();
        for idx in 0..p.len() {
            if let Some(mask) = keep {
                if !mask.is_kept(idx) {
                    m[idx] = 0.0;
                    v[idx] = 0.0;
                    continue;
                }
            }
            let gi = g[idx];
            m[idx] = b1 * m[idx] + (1.0 - b1) * gi;
            v[idx] = b2 * v[idx] + (1.0 - b2) * gi * gi;
            let m_hat = m[idx] / bc1;
            let v_hat = v[idx] / bc2;
            p[idx] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestSnapshot {
    pub epoch: usize,
    pub validation: RankingMetrics,
    pub values: DenseMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: Option<f64>,
    pub recall: Option<f64>,
    pub ndcg: Option<f64>,
}

/// Everything the loop needs to continue from a given epoch.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub epoch: usize,
    pub adam: Adam,
    rng: ChaCha8Rng,
    pub best: Option<BestSnapshot>,
    pub history: Vec<EpochRecord>,
    pub epoch_seconds: Vec<f64>,
}

impl TrainState {
    /// Fresh optimizer and a sampler seeded from the config.
    pub fn new(shape: (usize, usize), config: &TrainConfig) -> Self {
        Self {
            epoch: 0,
            adam: Adam::new(shape.0, shape.1),
            rng: ChaCha8Rng::seed_from_u64(config.sampler_seed),
            best: None,
            history: Vec::new(),
            epoch_seconds: Vec::new(),
        }
    }

    pub fn rng_word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }
}

/// Runs one pass of `⌈|E_train| / batch_size⌉` batches over `M ⊙ X`.
/// Returns the sample-weighted mean loss.
pub fn train_epoch(
    model: &Model,
    table: &mut EmbeddingTable,
    mask: &PruneMask,
    graph: &InteractionGraph,
    config: &TrainConfig,
    state: &mut TrainState,
) -> Result<f64> {
    mask.ensure_shape(table.shape())?;
    let num_edges = graph.train_edges().len();
    let batches = num_edges.div_ceil(config.batch_size);
    let mut loss_sum = 0.0;
    let mut weight = 0usize;
    for b in 0..batches {
        let size = config.batch_size.min(num_edges - b * config.batch_size);
        let triples = sample_batch(graph, size, config.negatives_per_positive, &mut state.rng);
        let masked = mask_matrix(table.values(), mask)?;
        let (loss, grad) = batch_objective(model, &masked, &triples, config)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                loss,
                epoch: state.epoch + 1,
                batch: b,
            });
        }
        loss_sum += loss * triples.len() as f64;
        weight += triples.len();
        state
            .adam
            .update(table.values_mut(), &grad, config.learning_rate, Some(mask));
    }
    state.epoch += 1;
    Ok(if weight == 0 { 0.0 } else { loss_sum / weight as f64 })
}

/// Result of a train-to-best run: validation-selected epoch and its metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOutcome {
    pub best_epoch: usize,
    pub validation: RankingMetrics,
    pub test: RankingMetrics,
    pub history: Vec<EpochRecord>,
    #[serde(skip)]
    pub epoch_seconds: Vec<f64>,
}

impl PartialEq for RunOutcome {
    fn eq(&self, other: &Self) -> bool {
        self.best_epoch == other.best_epoch
            && self.validation == other.validation
            && self.test == other.test
            && self.history == other.history
    }
}

/// Trains for `config.epochs` epochs, keeping the parameters of the best
/// validation Recall@K (earliest epoch on ties). On return the table holds
/// those parameters and the test split has been scored on them.
pub fn train_to_best(
    model: &Model,
    table: &mut EmbeddingTable,
    mask: &PruneMask,
    graph: &InteractionGraph,
    config: &TrainConfig,
) -> Result<RunOutcome> {
    let mut state = TrainState::new(table.shape(), config);
    train_from_state(model, table, mask, graph, config, &mut state, |_, _| Ok(()))
}

/// Continues a run from `state`. `after_epoch` sees the live table and state
/// after each completed epoch (checkpointing, invariant checks).
pub fn train_from_state(
    model: &Model,
    table: &mut EmbeddingTable,
    mask: &PruneMask,
    graph: &InteractionGraph,
    config: &TrainConfig,
    state: &mut TrainState,
    mut after_epoch: impl FnMut(&EmbeddingTable, &TrainState) -> Result<()>,
) -> Result<RunOutcome> {
    config.validate()?;
    table.zero_masked(mask)?;
    if state.epoch == 0 && state.best.is_none() {
        record_eval(model, table, mask, graph, config, state, None)?;
    }
    while state.epoch < config.epochs {
        let started = Instant::now();
        let loss = train_epoch(model, table, mask, graph, config, state)?;
        state.epoch_seconds.push(started.elapsed().as_secs_f64());
        if config.is_eval_epoch(state.epoch) {
            record_eval(model, table, mask, graph, config, state, Some(loss))?;
        } else {
            state.history.push(EpochRecord {
                epoch: state.epoch,
                loss: Some(loss),
                recall: None,
                ndcg: None,
            });
        }
        after_epoch(table, state)?;
    }
    let best = state.best.clone().expect("epoch 0 is always evaluated");
    table.set_values(best.values)?;
    let test = evaluate_model(model, table.values(), mask, graph, Split::Test, config.k)?;
    Ok(RunOutcome {
        best_epoch: best.epoch,
        validation: best.validation,
        test,
        history: state.history.clone(),
        epoch_seconds: state.epoch_seconds.clone(),
    })
}

fn record_eval(
    model: &Model,
    table: &EmbeddingTable,
    mask: &PruneMask,
    graph: &InteractionGraph,
    config: &TrainConfig,
    state: &mut TrainState,
    loss: Option<f64>,
) -> Result<()> {
    let metrics = evaluate_model(model, table.values(), mask, graph, Split::Validation, config.k)?;
    state.history.push(EpochRecord {
        epoch: state.epoch,
        loss,
        recall: Some(metrics.recall),
        ndcg: Some(metrics.ndcg),
    });
    let improved = state
        .best
        .as_ref()
        .is_none_or(|b| metrics.recall > b.validation.recall);
    if improved {
        state.best = Some(BestSnapshot {
            epoch: state.epoch,
            validation: metrics,
            values: table.values().clone(),
        });
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    schema_version: u32,
    epoch: usize,
    adam_step: u64,
    sampler_seed: u64,
    rng_word_pos: String,
    init_seed: u64,
    num_users: usize,
    num_items: usize,
    best_epoch: Option<usize>,
    best_validation: Option<RankingMetrics>,
    history: Vec<EpochRecord>,
    config: TrainConfig,
}

/// Writes `{table, snapshot, mask, Adam moments, best parameters, RNG position}`
/// into `dir` so the run can be resumed bit for bit.
pub fn save_checkpoint(
    dir: &Path,
    table: &EmbeddingTable,
    mask: &PruneMask,
    config: &TrainConfig,
    state: &TrainState,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let seed = table.init_seed();
    write_matrix(&dir.join("table.bin"), table.values(), seed)?;
    write_matrix(&dir.join("snapshot.bin"), table.init_snapshot(), seed)?;
    write_matrix(&dir.join("adam_m.bin"), &state.adam.first_moment, seed)?;
    write_matrix(&dir.join("adam_v.bin"), &state.adam.second_moment, seed)?;
    if let Some(best) = &state.best {
        write_matrix(&dir.join("best.bin"), &best.values, seed)?;
    }
    let header = crate::embedding::MaskHeader {
        schema_version: 1,
        rows: mask.rows(),
        cols: mask.cols(),
        num_users: table.num_users(),
        iteration: 0,
        theoretical_sparsity: mask.sparsity(),
        measured_sparsity: mask.sparsity(),
        checksum: mask.checksum(),
        parent_checksum: None,
        manifest_hash: None,
    };
    mask.write_artifact(&dir.join("mask.mask"), &header)?;
    let manifest = CheckpointManifest {
        schema_version: 1,
        epoch: state.epoch,
        adam_step: state.adam.step,
        sampler_seed: config.sampler_seed,
        rng_word_pos: state.rng.get_word_pos().to_string(),
        init_seed: seed,
        num_users: table.num_users(),
        num_items: table.num_items(),
        best_epoch: state.best.as_ref().map(|b| b.epoch),
        best_validation: state.best.as_ref().map(|b| b.validation.clone()),
        history: state.history.clone(),
        config: config.clone(),
    };
    fs::write(dir.join("checkpoint.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub struct Checkpoint {
    pub table: EmbeddingTable,
    pub mask: PruneMask,
    pub config: TrainConfig,
    pub state: TrainState,
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest: CheckpointManifest = serde_json::from_str(&fs::read_to_string(dir.join("checkpoint.json"))?)?;
    let (values, _) = read_matrix(&dir.join("table.bin"))?;
    let (snapshot, _) = read_matrix(&dir.join("snapshot.bin"))?;
    let (m1, _) = read_matrix(&dir.join("adam_m.bin"))?;
    let (m2, _) = read_matrix(&dir.join("adam_v.bin"))?;
    let (_, mask) = PruneMask::read_artifact(&dir.join("mask.mask"))?;
    let table = EmbeddingTable::from_parts(manifest.num_users, manifest.num_items, values, snapshot, manifest.init_seed)?;
    let best = match (manifest.best_epoch, manifest.best_validation) {
        (Some(epoch), Some(validation)) => Some(BestSnapshot {
            epoch,
            validation,
            values: read_matrix(&dir.join("best.bin"))?.0,
        }),
        _ => None,
    };
    let word_pos: u128 = manifest
        .rng_word_pos
        .parse()
        .map_err(|_| Error::corrupt(dir.join("checkpoint.json"), "bad rng position"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(manifest.sampler_seed);
    rng.set_word_pos(word_pos);
    let mut adam = Adam::new(m1.rows(), m1.cols());
    adam.step = manifest.adam_step;
    adam.first_moment = m1;
    adam.second_moment = m2;
    Ok(Checkpoint {
        table,
        mask,
        config: manifest.config,
        state: TrainState {
            epoch: manifest.epoch,
            adam,
            rng,
            best,
            history: manifest.history,
            epoch_seconds: Vec::new(),
        },
    })
}
