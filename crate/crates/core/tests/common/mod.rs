//! Brute-force oracles and fixtures shared by the integration tests.
//!
//! Oracles here work on plain nested vectors and never call the library's
//! numerical code, so agreement is evidence rather than tautology.

#![allow(dead_code)]

use lth_rec::data::{build_graph, DatasetSplit, InteractionGraph, SplitRatio};
use lth_rec::training::Triple;
use lth_rec::DenseMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Dense = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_nested(m: &DenseMatrix) -> Dense {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

pub fn from_nested(d: &Dense) -> DenseMatrix {
    DenseMatrix::from_rows(d).unwrap()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    DenseMatrix::from_vec(rows, cols, data).unwrap()
}

/// Random bipartite graph. Each user-item pair is an interaction with
/// probability `p`; interactions are assigned to train/validation/test
/// with probabilities 0.7/0.1/0.2.
pub fn random_graph(rng: &mut ChaCha8Rng, num_users: usize, num_items: usize, p: f64) -> InteractionGraph {
    let mut split = DatasetSplit {
        num_users,
        num_items,
        seed: 0,
        ratio: SplitRatio::default(),
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        train_only_users: Vec::new(),
    };
    for u in 0..num_users {
        for i in 0..num_items {
            if rng.random_bool(p) {
                let r: f64 = rng.random();
                let target = if r < 0.7 {
                    &mut split.train
                } else if r < 0.8 {
                    &mut split.validation
                } else {
                    &mut split.test
                };
                target.push((u, i));
            }
        }
    }
    build_graph(&split).unwrap()
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let (n, k, m) = (a.len(), b.len(), b.first().map_or(0, Vec::len));
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for l in 0..k {
            for j in 0..m {
                out[i][j] += a[i][l] * b[l][j];
            }
        }
    }
    out
}

/// Dense `D^{-1/2} A D^{-1/2}` rebuilt from the raw training edges.
pub fn dense_normalized_adjacency(num_users: usize, num_items: usize, train: &[(usize, usize)]) -> Dense {
    let n = num_users + num_items;
    let mut a = vec![vec![0.0; n]; n];
    for &(u, i) in train {
        a[u][num_users + i] = 1.0;
        a[num_users + i][u] = 1.0;
    }
    let deg: Vec<f64> = a.iter().map(|row| row.iter().sum()).collect();
    for r in 0..n {
        for c in 0..n {
            if a[r][c] != 0.0 {
                a[r][c] /= (deg[r] * deg[c]).sqrt();
            }
        }
    }
    a
}

/// `Σ_k α_k Ã^k X` by explicit matrix powers.
pub fn dense_propagation(a_norm: &Dense, x: &Dense, alphas: &[f64]) -> Dense {
    let n = a_norm.len();
    let mut power: Dense = (0..n).map(|r| (0..n).map(|c| if r == c { 1.0 } else { 0.0 }).collect()).collect();
    let mut out = vec![vec![0.0; x[0].len()]; n];
    for (k, &alpha) in alphas.iter().enumerate() {
        if k > 0 {
            power = matmul(&power, a_norm);
        }
        let term = matmul(&power, x);
        for r in 0..n {
            for c in 0..x[0].len() {
                out[r][c] += alpha * term[r][c];
            }
        }
    }
    out
}

/// BPR batch objective with triple-wise L2 on the (masked) input rows.
pub fn bpr_objective(output: &Dense, input: &Dense, num_users: usize, triples: &[Triple], l2: f64) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let b = triples.len() as f64;
    let mut total = 0.0;
    for t in triples {
        let (u, i, j) = (t.user, num_users + t.pos, num_users + t.neg);
        let margin = dot(&output[u], &output[i]) - dot(&output[u], &output[j]);
        total += (1.0 + (-margin).exp()).ln();
        for r in [u, i, j] {
            total += l2 * dot(&input[r], &input[r]);
        }
    }
    total / b
}

/// Indices removed by magnitude pruning: the `count` kept entries with the
/// smallest `(|v|, index)` under a full sort.
pub fn magnitude_prune_oracle(values: &[f64], keep: &[bool], rate: f64) -> Vec<bool> {
    let mut alive: Vec<usize> = (0..values.len()).filter(|&i| keep[i]).collect();
    let count = (rate * alive.len() as f64).floor() as usize;
    alive.sort_by(|&a, &b| values[a].abs().total_cmp(&values[b].abs()).then(a.cmp(&b)));
    let mut out = keep.to_vec();
    for &i in &alive[..count] {
        out[i] = false;
    }
    out
}

/// Per-user brute-force Recall@K and NDCG@K: full sort of every non-training
/// item by descending score, ties to the lower index.
pub fn ranking_oracle(
    scores: &[f64],
    train_items: &[usize],
    held_out: &[usize],
    k: usize,
) -> (f64, f64) {
    let mut cands: Vec<usize> = (0..scores.len()).filter(|i| !train_items.contains(i)).collect();
    cands.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    cands.truncate(k);
    let hits: Vec<usize> = (0..cands.len()).filter(|&p| held_out.contains(&cands[p])).collect();
    let recall = hits.len() as f64 / held_out.len() as f64;
    let dcg: f64 = hits.iter().map(|&p| 1.0 / ((p + 2) as f64).log2()).sum();
    let idcg: f64 = (0..held_out.len().min(cands.len())).map(|p| 1.0 / ((p + 2) as f64).log2()).sum();
    (recall, if idcg == 0.0 { 0.0 } else { dcg / idcg })
}

/// Central finite-difference gradient of `f` at `x`.
pub fn finite_difference(x: &Dense, eps: f64, mut f: impl FnMut(&Dense) -> f64) -> Dense {
    let mut probe = x.clone();
    let mut grad = vec![vec![0.0; x[0].len()]; x.len()];
    for r in 0..x.len() {
        for c in 0..x[0].len() {
            let orig = probe[r][c];
            probe[r][c] = orig + eps;
            let up = f(&probe);
            probe[r][c] = orig - eps;
            let down = f(&probe);
            probe[r][c] = orig;
            grad[r][c] = (up - down) / (2.0 * eps);
        }
    }
    grad
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &Dense, b: &Dense) -> f64 {
    let mut diff = 0.0;
    let (mut na, mut nb) = (0.0, 0.0);
    for (ra, rb) in a.iter().zip(b) {
        for (x, y) in ra.iter().zip(rb) {
            diff += (x - y) * (x - y);
            na += x * x;
            nb += y * y;
        }
    }
    let scale = f64::max(na, nb).sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff.sqrt() / scale
    }
}

pub fn random_triples(rng: &mut ChaCha8Rng, num_users: usize, num_items: usize, count: usize) -> Vec<Triple> {
    (0..count)
        .map(|_| Triple {
            user: rng.random_range(0..num_users),
            pos: rng.random_range(0..num_items),
            neg: rng.random_range(0..num_items),
        })
        .collect()
}
