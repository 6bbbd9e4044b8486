//! Linear compression baseline: a narrow dense table `E` of width `F'` and a
//! trainable `F' × F` map `W`, so the backbone sees `E · W`.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{InteractionGraph, Split};
use crate::embedding::INIT_STD;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_output, RankingMetrics, DEFAULT_USER_BLOCK};
use crate::matrix::DenseMatrix;
use crate::models::Model;
use crate::training::{ranking_term, regularization_term, sample_batch, Adam, EpochRecord, RunOutcome, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MapInit {
    /// Identity when `F' = F`, otherwise Gaussian.
    #[default]
    Auto,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearCompression {
    num_users: usize,
    num_items: usize,
    pub table: DenseMatrix,
    pub map: DenseMatrix,
}

/// Builds an LCM with a `(M+N) × F'` table drawn like the dense table and a
/// map scaled so `E · W` starts at the same magnitude.
pub fn compress_linear(
    num_users: usize,
    num_items: usize,
    dim: usize,
    compressed_dim: usize,
    seed: u64,
    init: MapInit,
) -> Result<LinearCompression> {
    if num_users == 0 || num_items == 0 || dim == 0 || compressed_dim == 0 {
        return Err(Error::InvalidConfig("compression dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let rows = num_users + num_items;
    let table = DenseMatrix::from_vec(
        rows,
        compressed_dim,
        (0..rows * compressed_dim).map(|_| normal.sample(&mut rng)).collect(),
    )?;
    let map = if init == MapInit::Auto && compressed_dim == dim {
        let mut id = DenseMatrix::zeros(dim, dim);
        for d in 0..dim {
            id.set(d, d, 1.0);
        }
        id
    } else {
        let map_normal = Normal::new(0.0, 1.0 / (compressed_dim as f64).sqrt()).expect("valid std");
        DenseMatrix::from_vec(
            compressed_dim,
            dim,
            (0..compressed_dim * dim).map(|_| map_normal.sample(&mut rng)).collect(),
        )?
    };
    Ok(LinearCompression {
        num_users,
        num_items,
        table,
        map,
    })
}

impl LinearCompression {
    pub fn dim(&self) -> usize {
        self.map.cols()
    }

    pub fn compressed_dim(&self) -> usize {
        self.table.cols()
    }

    pub fn table_parameters(&self) -> usize {
        self.table.len()
    }

    pub fn map_parameters(&self) -> usize {
        self.map.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.table_parameters() + self.map_parameters()
    }

    /// The `(M+N) × F` table the backbone consumes.
    pub fn effective_table(&self) -> DenseMatrix {
        self.table.matmul(&self.map).expect("inner dimensions agree")
    }

    pub fn evaluate(&self, model: &Model, graph: &InteractionGraph, split: Split, k: usize) -> Result<RankingMetrics> {
        let x = self.effective_table();
        let out = model.output(&x)?;
        Ok(evaluate_output(&out, graph, split, k, DEFAULT_USER_BLOCK))
    }
}

/// Trains table and map end to end with the same BPR schedule as the sparse
/// tickets. The L2 term applies to the rows of `E`.
pub fn train_lcm(
    model: &Model,
    graph: &InteractionGraph,
    lcm: &mut LinearCompression,
    config: &TrainConfig,
) -> Result<RunOutcome> {
    config.validate()?;
    if lcm.num_users != model.num_users() || lcm.num_items != model.num_items() {
        return Err(Error::ShapeMismatch {
            expected: (model.num_users() + model.num_items(), lcm.dim()),
            actual: lcm.table.shape(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.sampler_seed);
    let mut adam_table = Adam::new(lcm.table.rows(), lcm.table.cols());
    let mut adam_map = Adam::new(lcm.map.rows(), lcm.map.cols());
    let mut history = Vec::new();
    let mut epoch_seconds = Vec::new();

    let first = lcm.evaluate(model, graph, Split::Validation, config.k)?;
    history.push(EpochRecord {
        epoch: 0,
        loss: None,
        recall: Some(first.recall),
        ndcg: Some(first.ndcg),
    });
    let mut best = (0usize, first, lcm.clone());

    let num_edges = graph.train_edges().len();
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut loss_sum = 0.0;
        let mut weight = 0usize;
        for b in 0..num_edges.div_ceil(config.batch_size) {
            let size = config.batch_size.min(num_edges - b * config.batch_size);
            let triples = sample_batch(graph, size, config.negatives_per_positive, &mut rng);
            let x = lcm.effective_table();
            let (ranking, grad_x) = ranking_term(model, &x, &triples)?;
            let mut grad_table = grad_x.matmul(&lcm.map.transpose())?;
            let grad_map = lcm.table.transpose().matmul(&grad_x)?;
            let reg = regularization_term(&lcm.table, lcm.num_users, &triples, config, &mut grad_table);
            let loss = ranking + reg;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { loss, epoch, batch: b });
            }
            loss_sum += loss * triples.len() as f64;
            weight += triples.len();
            adam_table.update(&mut lcm.table, &grad_table, config.learning_rate, None);
            adam_map.update(&mut lcm.map, &grad_map, config.learning_rate, None);
        }
        epoch_seconds.push(started.elapsed().as_secs_f64());
        let loss = if weight == 0 { 0.0 } else { loss_sum / weight as f64 };
        if config.is_eval_epoch(epoch) {
            let metrics = lcm.evaluate(model, graph, Split::Validation, config.k)?;
            history.push(EpochRecord {
                epoch,
                loss: Some(loss),
                recall: Some(metrics.recall),
                ndcg: Some(metrics.ndcg),
            });
            if metrics.recall > best.1.recall {
                best = (epoch, metrics, lcm.clone());
            }
        } else {
            history.push(EpochRecord {
                epoch,
                loss: Some(loss),
                recall: None,
                ndcg: None,
            });
        }
    }
    let (best_epoch, validation, snapshot) = best;
    *lcm = snapshot;
    let test = lcm.evaluate(model, graph, Split::Test, config.k)?;
    Ok(RunOutcome {
        best_epoch,
        validation,
        test,
        history,
        epoch_seconds,
    })
}
