//! All-ranking top-K evaluation.
//!
//! Every user with at least one held-out item is ranked against every item
//! outside their training history. Only training items are excluded, also
//! when ranking on the test split.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{InteractionGraph, Split};
use crate::embedding::{mask_matrix, PruneMask};
use crate::error::Result;
use crate::matrix::{dot, DenseMatrix};
use crate::models::Model;

pub const DEFAULT_K: usize = 20;
pub const DEFAULT_USER_BLOCK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub user: usize,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub users_evaluated: usize,
    pub per_user: Vec<UserMetrics>,
}

impl RankingMetrics {
    pub fn from_per_user(k: usize, per_user: Vec<UserMetrics>) -> Self {
        let n = per_user.len();
        let (recall, ndcg) = if n == 0 {
            (0.0, 0.0)
        } else {
            let r: f64 = per_user.iter().map(|m| m.recall).sum();
            let g: f64 = per_user.iter().map(|m| m.ndcg).sum();
            (r / n as f64, g / n as f64)
        };
        Self {
            k,
            recall,
            ndcg,
            users_evaluated: n,
            per_user,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopK {
    pub items: Vec<usize>,
    /// Fewer than `k` candidates remained after exclusion.
    pub truncated: bool,
}

#[derive(PartialEq)]
struct Candidate {
    score: f64,
    item: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    // Greater means worse: lower score, then higher index.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.item.cmp(&other.item))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Top-`k` items by score, skipping `train_items` (sorted), ties to the lower index.
pub fn rank_items(scores: &[f64], train_items: &[usize], k: usize) -> TopK {
    let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
    let mut excluded = train_items.iter().peekable();
    let mut candidates = 0usize;
    for (item, &score) in scores.iter().enumerate() {
        while excluded.next_if(|&&t| t < item).is_some() {}
        if excluded.next_if_eq(&&item).is_some() {
            continue;
        }
        candidates += 1;
        if k == 0 {
            continue;
        }
        let cand = Candidate { score, item };
        if heap.len() < k {
            heap.push(cand);
        } else if cand < *heap.peek().unwrap() {
            heap.pop();
            heap.push(cand);
        }
    }
    TopK {
        items: heap.into_sorted_vec().into_iter().map(|c| c.item).collect(),
        truncated: candidates < k,
    }
}

fn hits<'a>(top: &'a [usize], test_items: &'a [usize]) -> impl Iterator<Item = usize> + 'a {
    top.iter()
        .enumerate()
        .filter(move |(_, item)| test_items.contains(item))
        .map(|(pos, _)| pos)
}

/// `|top ∩ test| / |test|`; zero for an empty test set.
pub fn recall_at_k(top: &[usize], test_items: &[usize]) -> f64 {
    if test_items.is_empty() {
        return 0.0;
    }
    hits(top, test_items).count() as f64 / test_items.len() as f64
}

/// Binary-relevance NDCG with the ideal ranking truncated at `min(|test|, |top|)`.
pub fn ndcg_at_k(top: &[usize], test_items: &[usize]) -> f64 {
    let ideal_len = test_items.len().min(top.len());
    if ideal_len == 0 {
        return 0.0;
    }
    let discount = |pos: usize| 1.0 / ((pos + 2) as f64).log2();
    let dcg = hits(top, test_items).map(discount).fold(0.0, |a, b| a + b);
    let idcg: f64 = (0..ideal_len).map(discount).sum();
    dcg / idcg
}

/// Ranks users in blocks of `block_size`; per-user results come back in user order.
pub fn evaluate_output(
    output: &DenseMatrix,
    graph: &InteractionGraph,
    split: Split,
    k: usize,
    block_size: usize,
) -> RankingMetrics {
    let m = graph.num_users();
    let n = graph.num_items();
    let users: Vec<usize> = (0..m)
        .filter(|&u| !graph.heldout_items(u, split).is_empty())
        .collect();
    let items = DenseMatrix::from_vec(n, output.cols(), output.as_slice()[m * output.cols()..].to_vec())
        .expect("output has M+N rows");
    let per_user: Vec<UserMetrics> = users
        .par_chunks(block_size.max(1))
        .flat_map_iter(|block| {
            let mut scores = vec![0.0; n];
            block
                .iter()
                .map(|&u| {
                    let xu = output.row(u);
                    for (i, s) in scores.iter_mut().enumerate() {
                        *s = dot(xu, items.row(i));
                    }
                    let top = rank_items(&scores, graph.train_items(u), k);
                    let held = graph.heldout_items(u, split);
                    UserMetrics {
                        user: u,
                        recall: recall_at_k(&top.items, held),
                        ndcg: ndcg_at_k(&top.items, held),
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect();
    RankingMetrics::from_per_user(k, per_user)
}

/// Masks the table, runs the backbone forward and ranks every evaluable user.
pub fn evaluate_model(
    model: &Model,
    values: &DenseMatrix,
    mask: &PruneMask,
    graph: &InteractionGraph,
    split: Split,
    k: usize,
) -> Result<RankingMetrics> {
    let masked = mask_matrix(values, mask)?;
    let output = model.output(&masked)?;
    Ok(evaluate_output(&output, graph, split, k, DEFAULT_USER_BLOCK))
}
