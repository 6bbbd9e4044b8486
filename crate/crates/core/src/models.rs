//! MF and LightGCN forward passes.
//!
//! Both backbones score a user-item pair by the inner product of their output
//! rows. MF uses the (masked) table directly; LightGCN first smooths it over
//! the normalized training graph and sums the layers.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::data::InteractionGraph;
use crate::error::{Error, Result};
use crate::matrix::{dot, DenseMatrix};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightGcnConfig {
    pub num_layers: usize,
    /// `α_0..=α_K`.
    pub layer_coefficients: Vec<f64>,
}

impl Default for LightGcnConfig {
    fn default() -> Self {
        Self::uniform(3)
    }
}

impl LightGcnConfig {
    /// All layer weights equal to one.
    pub fn uniform(num_layers: usize) -> Self {
        Self {
            num_layers,
            layer_coefficients: vec![1.0; num_layers + 1],
        }
    }

    /// Layer weights `1/(K+1)`.
    pub fn mean(num_layers: usize) -> Self {
        Self {
            num_layers,
            layer_coefficients: vec![1.0 / (num_layers + 1) as f64; num_layers + 1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_coefficients.len() != self.num_layers + 1 {
            return Err(Error::InvalidConfig(format!(
                "{} layers need {} coefficients, got {}",
                self.num_layers,
                self.num_layers + 1,
                self.layer_coefficients.len()
            )));
        }
        if self.layer_coefficients.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidConfig("layer coefficients must be finite".into()));
        }
        Ok(())
    }
}

/// `D^{-1/2} A D^{-1/2}` for the training graph. Zero-degree nodes get scale 0.
#[derive(Debug, Clone)]
pub struct PropagationOperator {
    matrix: CsrMatrix,
    inv_sqrt_degree: Vec<f64>,
}

pub fn build_propagation(graph: &InteractionGraph) -> PropagationOperator {
    PropagationOperator::from_adjacency(graph.adjacency())
}

impl PropagationOperator {
    pub fn from_adjacency(adjacency: &CsrMatrix) -> Self {
        let n = adjacency.nrows();
        let inv_sqrt_degree: Vec<f64> = (0..n)
            .map(|r| match adjacency.row_nnz(r) {
                0 => 0.0,
                d => 1.0 / (d as f64).sqrt(),
            })
            .collect();
        let triplets = (0..n)
            .flat_map(|r| {
                let s = &inv_sqrt_degree;
                adjacency.row(r).map(move |(c, v)| (r, c, v * s[r] * s[c]))
            })
            .collect();
        let matrix = CsrMatrix::from_triplets(n, adjacency.ncols(), triplets).expect("indices come from a valid CSR");
        Self {
            matrix,
            inv_sqrt_degree,
        }
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn inv_sqrt_degree(&self) -> &[f64] {
        &self.inv_sqrt_degree
    }

    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.matrix.mul_dense(x)
    }
}

/// `O = Σ_k α_k Ã^k X`.
pub fn propagate(op: &PropagationOperator, x: &DenseMatrix, config: &LightGcnConfig) -> Result<DenseMatrix> {
    config.validate()?;
    let mut out = x.clone();
    out.scale(config.layer_coefficients[0]);
    let mut layer = Cow::Borrowed(x);
    for k in 1..=config.num_layers {
        layer = Cow::Owned(op.apply(&layer)?);
        out.add_scaled(config.layer_coefficients[k], &layer);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Backbone {
    Mf,
    #[serde(rename = "lightgcn")]
    LightGcn(LightGcnConfig),
}

impl Backbone {
    pub fn name(&self) -> &'static str {
        match self {
            Backbone::Mf => "mf",
            Backbone::LightGcn(_) => "lightgcn",
        }
    }
}

/// A backbone bound to a particular training graph.
#[derive(Debug, Clone)]
pub struct Model {
    backbone: Backbone,
    num_users: usize,
    num_items: usize,
    propagation: Option<PropagationOperator>,
}

impl Model {
    pub fn new(backbone: Backbone, graph: &InteractionGraph) -> Result<Self> {
        let propagation = match &backbone {
            Backbone::Mf => None,
            Backbone::LightGcn(cfg) => {
                cfg.validate()?;
                Some(build_propagation(graph))
            }
        };
        Ok(Self {
            backbone,
            num_users: graph.num_users(),
            num_items: graph.num_items(),
            propagation,
        })
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    /// Output rows used for scoring, given the masked table.
    pub fn output<'a>(&self, masked: &'a DenseMatrix) -> Result<Cow<'a, DenseMatrix>> {
        masked.ensure_shape((self.num_users + self.num_items, masked.cols()))?;
        match (&self.backbone, &self.propagation) {
            (Backbone::LightGcn(cfg), Some(op)) => Ok(Cow::Owned(propagate(op, masked, cfg)?)),
            _ => Ok(Cow::Borrowed(masked)),
        }
    }

    /// Pulls a gradient with respect to the output rows back to the table.
    /// Ã is symmetric, so the adjoint of propagation is propagation.
    pub fn backward<'a>(&self, grad_output: &'a DenseMatrix) -> Result<Cow<'a, DenseMatrix>> {
        self.output(grad_output)
    }
}

/// `ỹ[a, b] = x_{users[a]} · x_{M + items[b]}` over any output matrix.
pub fn score_pairs(
    output: &DenseMatrix,
    num_users: usize,
    users: &[usize],
    items: &[usize],
) -> Result<DenseMatrix> {
    let num_items = output.rows().saturating_sub(num_users);
    for &u in users {
        if u >= num_users {
            return Err(Error::IndexOutOfRange {
                what: "user",
                index: u,
                len: num_users,
            });
        }
    }
    for &i in items {
        if i >= num_items {
            return Err(Error::IndexOutOfRange {
                what: "item",
                index: i,
                len: num_items,
            });
        }
    }
    let mut scores = DenseMatrix::zeros(users.len(), items.len());
    for (a, &u) in users.iter().enumerate() {
        let xu = output.row(u);
        for (b, &i) in items.iter().enumerate() {
            scores.set(a, b, dot(xu, output.row(num_users + i)));
        }
    }
    Ok(scores)
}

/// MF scores straight from the masked table.
pub fn score_mf(masked: &DenseMatrix, num_users: usize, users: &[usize], items: &[usize]) -> Result<DenseMatrix> {
    score_pairs(masked, num_users, users, items)
}

/// LightGCN scores from propagated output rows.
pub fn score_lightgcn(output: &DenseMatrix, num_users: usize, users: &[usize], items: &[usize]) -> Result<DenseMatrix> {
    score_pairs(output, num_users, users, items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_graph, split_dataset, Interactions, SplitRatio};

    fn graph_of(pairs: &[(u64, u64)]) -> InteractionGraph {
        let inter = Interactions::from_original_pairs(pairs.iter().copied());
        build_graph(&split_dataset(&inter, SplitRatio::default(), 0)).unwrap()
    }

    #[test]
    fn single_edge_operator_is_one() {
        let op = build_propagation(&graph_of(&[(0, 0)]));
        assert_eq!(op.matrix().get(0, 1), 1.0);
        assert_eq!(op.matrix().get(1, 0), 1.0);
    }

    #[test]
    fn degree_two_user() {
        let op = build_propagation(&graph_of(&[(0, 0), (0, 1)]));
        assert!((op.matrix().get(0, 1) - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!(op.matrix().is_symmetric());
    }

    #[test]
    fn isolated_node_row_is_zero() {
        let adj = CsrMatrix::from_triplets(3, 3, vec![(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let op = PropagationOperator::from_adjacency(&adj);
        assert_eq!(op.matrix().row_nnz(2), 0);
        assert_eq!(op.inv_sqrt_degree()[2], 0.0);
        let x = DenseMatrix::from_rows(&[vec![1.0], vec![2.0], vec![5.0]]).unwrap();
        let o = propagate(&op, &x, &LightGcnConfig::uniform(3)).unwrap();
        assert_eq!(o.get(2, 0), 5.0);
    }

    #[test]
    fn zero_layers_scales_input() {
        let op = build_propagation(&graph_of(&[(0, 0)]));
        let x = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let cfg = LightGcnConfig {
            num_layers: 0,
            layer_coefficients: vec![0.5],
        };
        let o = propagate(&op, &x, &cfg).unwrap();
        assert_eq!(o.as_slice(), &[0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn one_layer_single_edge_sums_neighbors() {
        let op = build_propagation(&graph_of(&[(0, 0)]));
        let x = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0]]).unwrap();
        let o = propagate(&op, &x, &LightGcnConfig::uniform(1)).unwrap();
        assert_eq!(o.row(0), &[4.0, 1.0]);
        let s = score_lightgcn(&o, 1, &[0], &[0]).unwrap();
        assert_eq!(s.get(0, 0), 4.0 * 4.0 + 1.0);
    }

    #[test]
    fn mf_scores() {
        let x = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0], vec![-2.0, 1.0]]).unwrap();
        let s = score_mf(&x, 1, &[0], &[0, 1]).unwrap();
        assert_eq!(s.as_slice(), &[1.0, 0.0]);
        let e1 = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(score_mf(&e1, 1, &[0], &[0]).unwrap().get(0, 0), 1.0);
        assert!(score_mf(&x, 1, &[1], &[0]).is_err());
        assert!(score_mf(&x, 1, &[0], &[2]).is_err());
    }

    #[test]
    fn coefficient_count_is_checked() {
        let cfg = LightGcnConfig {
            num_layers: 2,
            layer_coefficients: vec![1.0],
        };
        assert!(cfg.validate().is_err());
        assert!(LightGcnConfig::mean(3)
            .layer_coefficients
            .iter()
            .all(|&a| a == 0.25));
    }
}
