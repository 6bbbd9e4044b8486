//! The embedding table, its frozen initialization, binary masks and sparse export.
//!
//! Rows `0..M` hold users and rows `M..M+N` hold items.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::sparse::{csr_byte_size, dense_byte_size, sha256_hex, CsrArtifact, CsrMatrix};

pub const INIT_STD: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    num_users: usize,
    num_items: usize,
    values: DenseMatrix,
    init_snapshot: DenseMatrix,
    init_seed: u64,
}

/// Draws an `(M+N) × F` table from `Normal(0, 0.01²)` and freezes a copy as
/// the rewind target.
pub fn init_table(num_users: usize, num_items: usize, dim: usize, seed: u64) -> Result<EmbeddingTable> {
    if num_users == 0 || num_items == 0 || dim == 0 {
        return Err(Error::InvalidConfig(format!(
            "embedding table dimensions must be positive, got M={num_users} N={num_items} F={dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let rows = num_users + num_items;
    let data: Vec<f64> = (0..rows * dim).map(|_| normal.sample(&mut rng)).collect();
    let values = DenseMatrix::from_vec(rows, dim, data)?;
    Ok(EmbeddingTable {
        num_users,
        num_items,
        init_snapshot: values.clone(),
        values,
        init_seed: seed,
    })
}

impl EmbeddingTable {
    /// Rebuilds a table from persisted parts (e.g. a resumed run).
    pub fn from_parts(
        num_users: usize,
        num_items: usize,
        values: DenseMatrix,
        init_snapshot: DenseMatrix,
        init_seed: u64,
    ) -> Result<Self> {
        let shape = (num_users + num_items, init_snapshot.cols());
        init_snapshot.ensure_shape(shape)?;
        values.ensure_shape(shape)?;
        Ok(Self {
            num_users,
            num_items,
            values,
            init_snapshot,
            init_seed,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn values(&self) -> &DenseMatrix {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut DenseMatrix {
        &mut self.values
    }

    /// Replaces the current values. The shape must not change.
    pub fn set_values(&mut self, values: DenseMatrix) -> Result<()> {
        values.ensure_shape(self.shape())?;
        self.values = values;
        Ok(())
    }

    pub fn init_snapshot(&self) -> &DenseMatrix {
        &self.init_snapshot
    }

    /// Resets the values to the initialization snapshot, bit for bit.
    pub fn rewind(&mut self) {
        self.values
            .as_mut_slice()
            .copy_from_slice(self.init_snapshot.as_slice());
    }

    /// Zeroes the masked positions in place.
    pub fn zero_masked(&mut self, mask: &PruneMask) -> Result<()> {
        mask.ensure_shape(self.shape())?;
        for (v, keep) in self.values.as_mut_slice().iter_mut().zip(mask.bits()) {
            if !keep {
                *v = 0.0;
            }
        }
        Ok(())
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        write_matrix(path, &self.init_snapshot, self.init_seed)
    }
}

/// `M ⊙ X` as a fresh dense matrix. Masked entries are exactly `0.0`.
pub fn apply_mask(table: &EmbeddingTable, mask: &PruneMask) -> Result<DenseMatrix> {
    mask_matrix(table.values(), mask)
}

pub fn mask_matrix(values: &DenseMatrix, mask: &PruneMask) -> Result<DenseMatrix> {
    mask.ensure_shape(values.shape())?;
    let data = values
        .as_slice()
        .iter()
        .zip(mask.bits())
        .map(|(&v, keep)| if keep { v } else { 0.0 })
        .collect();
    DenseMatrix::from_vec(values.rows(), values.cols(), data)
}

/// Binary keep-mask aligned with the embedding table.
///
/// `pruned_at` is an audit trail: `0` for surviving entries, otherwise the
/// index of the mask (`M^k`) in which the entry first became zero. Equality
/// compares the bits only.
#[derive(Debug, Clone)]
pub struct PruneMask {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
    pruned_at: Vec<u32>,
}

impl PartialEq for PruneMask {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.keep == other.keep
    }
}

impl Eq for PruneMask {}

impl PruneMask {
    pub fn ones(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            keep: vec![true; rows * cols],
            pruned_at: vec![0; rows * cols],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            keep: vec![false; rows * cols],
            pruned_at: vec![1; rows * cols],
        }
    }

    pub fn from_bits(rows: usize, cols: usize, keep: Vec<bool>) -> Result<Self> {
        if keep.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: (rows, cols),
                actual: (keep.len() / cols.max(1), cols),
            });
        }
        let pruned_at = keep.iter().map(|&k| u32::from(!k)).collect();
        Ok(Self {
            rows,
            cols,
            keep,
            pruned_at,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn ensure_shape(&self, expected: (usize, usize)) -> Result<()> {
        if self.shape() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                actual: self.shape(),
            });
        }
        Ok(())
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        self.keep.iter().copied()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.keep
    }

    #[inline]
    pub fn is_kept(&self, flat: usize) -> bool {
        self.keep[flat]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.keep[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[bool] {
        &self.keep[r * self.cols..(r + 1) * self.cols]
    }

    pub fn pruned_at(&self) -> &[u32] {
        &self.pruned_at
    }

    pub fn nnz(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn num_zeros(&self) -> usize {
        self.len() - self.nnz()
    }

    /// Fraction of zero entries.
    pub fn sparsity(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.num_zeros() as f64 / self.len() as f64
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.row(r).iter().filter(|&&k| k).count()
    }

    /// Flat indices of surviving entries, ascending.
    pub fn kept_indices(&self) -> Vec<usize> {
        self.keep
            .iter()
            .enumerate()
            .filter_map(|(i, &k)| k.then_some(i))
            .collect()
    }

    /// A copy with the given flat indices zeroed; they are tagged with `iteration`.
    pub fn pruned(&self, indices: &[usize], iteration: u32) -> Self {
        let mut next = self.clone();
        for &i in indices {
            if next.keep[i] {
                next.keep[i] = false;
                next.pruned_at[i] = iteration;
            }
        }
        next
    }

    /// True when every surviving entry of `self` also survives in `parent`.
    pub fn is_nested_in(&self, parent: &PruneMask) -> bool {
        self.shape() == parent.shape() && self.keep.iter().zip(&parent.keep).all(|(&c, &p)| !c || p)
    }

    /// Rebuilds the audit trail from the parent mask.
    pub fn with_provenance(mut self, parent: &PruneMask, iteration: u32) -> Self {
        for i in 0..self.keep.len() {
            self.pruned_at[i] = if self.keep[i] {
                0
            } else if !parent.keep[i] {
                parent.pruned_at[i]
            } else {
                iteration
            };
        }
        self
    }

    pub fn packed_bits(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.keep.len().div_ceil(8)];
        for (i, &k) in self.keep.iter().enumerate() {
            if k {
                out[i / 8] |= 1 << (i % 8);
            }
        }
        out
    }

    pub fn checksum(&self) -> String {
        sha256_hex(&self.packed_bits())
    }

    pub fn write_artifact(&self, path: &Path, header: &MaskHeader) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, header)?;
        w.write_all(b"\n")?;
        w.write_all(&self.packed_bits())?;
        w.flush()?;
        Ok(())
    }

    pub fn read_artifact(path: &Path) -> Result<(MaskHeader, PruneMask)> {
        let mut r = BufReader::new(File::open(path)?);
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: MaskHeader = serde_json::from_str(line.trim_end())
            .map_err(|e| Error::corrupt(path, format!("mask header: {e}")))?;
        let mut packed = Vec::new();
        r.read_to_end(&mut packed)?;
        let n = header.rows * header.cols;
        if packed.len() != n.div_ceil(8) {
            return Err(Error::corrupt(path, "packed mask length"));
        }
        let keep = (0..n).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect();
        let mask = PruneMask::from_bits(header.rows, header.cols, keep)?;
        if mask.checksum() != header.checksum {
            return Err(Error::corrupt(path, "mask checksum mismatch"));
        }
        Ok((header, mask))
    }
}

/// Metadata stored as a JSON line in front of each bit-packed mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskHeader {
    pub schema_version: u32,
    pub rows: usize,
    pub cols: usize,
    pub num_users: usize,
    pub iteration: usize,
    pub theoretical_sparsity: f64,
    pub measured_sparsity: f64,
    pub checksum: String,
    pub parent_checksum: Option<String>,
    pub manifest_hash: Option<String>,
}

/// One entry of the ticket set.
#[derive(Debug, Clone, PartialEq)]
pub struct TicketRecord {
    pub iteration: usize,
    pub mask: PruneMask,
    pub theoretical_sparsity: f64,
    pub sparsity: f64,
    pub retrain: Option<crate::training::RunOutcome>,
    pub strict_winner: Option<bool>,
    pub accuracy_winner: Option<bool>,
}

impl TicketRecord {
    pub fn new(iteration: usize, mask: PruneMask, theoretical_sparsity: f64) -> Self {
        Self {
            iteration,
            sparsity: mask.sparsity(),
            mask,
            theoretical_sparsity,
            retrain: None,
            strict_winner: None,
            accuracy_winner: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityStats {
    /// Largest nonzero count over user rows.
    pub max_user_dim: usize,
    /// Largest nonzero count over item rows.
    pub max_item_dim: usize,
    pub nnz: usize,
    pub sparsity: f64,
    /// `M·F_u* + N·F_i*`
    pub memory_units: u64,
    pub dense_bytes: u64,
    pub csr_bytes: u64,
}

pub fn sparsity_stats(mask: &PruneMask, num_users: usize) -> SparsityStats {
    let rows = mask.rows();
    let num_items = rows.saturating_sub(num_users);
    let max_over = |range: std::ops::Range<usize>| range.map(|r| mask.row_nnz(r)).max().unwrap_or(0);
    let max_user_dim = max_over(0..num_users.min(rows));
    let max_item_dim = max_over(num_users.min(rows)..rows);
    let nnz = mask.nnz();
    SparsityStats {
        max_user_dim,
        max_item_dim,
        nnz,
        sparsity: mask.sparsity(),
        memory_units: (num_users * max_user_dim + num_items * max_item_dim) as u64,
        dense_bytes: dense_byte_size(rows, mask.cols()),
        csr_bytes: csr_byte_size(rows, nnz),
    }
}

/// Writes `M ⊙ X` as a CSR artifact (plus checksum sidecar).
///
/// The CSR pattern follows the mask, so a surviving weight that happens to
/// be exactly zero is still stored.
pub fn export_sparse(table: &EmbeddingTable, mask: &PruneMask, path: &Path) -> Result<CsrArtifact> {
    let artifact = sparse_view(table.values(), mask, table.num_users())?;
    artifact.write(path)?;
    Ok(artifact)
}

pub fn sparse_view(values: &DenseMatrix, mask: &PruneMask, num_users: usize) -> Result<CsrArtifact> {
    mask.ensure_shape(values.shape())?;
    let (rows, cols) = values.shape();
    let mut row_ptr = Vec::with_capacity(rows + 1);
    let mut col_idx = Vec::with_capacity(mask.nnz());
    let mut vals = Vec::with_capacity(mask.nnz());
    row_ptr.push(0);
    for r in 0..rows {
        for (c, &keep) in mask.row(r).iter().enumerate() {
            if keep {
                col_idx.push(c);
                vals.push(values.get(r, c));
            }
        }
        row_ptr.push(col_idx.len());
    }
    Ok(CsrArtifact {
        num_users,
        num_items: rows - num_users,
        matrix: CsrMatrix::from_parts(rows, cols, row_ptr, col_idx, vals)?,
    })
}

pub fn import_sparse(path: &Path) -> Result<CsrArtifact> {
    CsrArtifact::read(path)
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"LTHSNAP1";

/// Dense dump: magic, `rows`, `cols`, `seed` as little-endian `u64`, then row-major `f64`s.
pub fn write_matrix(path: &Path, m: &DenseMatrix, seed: u64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SNAPSHOT_MAGIC)?;
    for x in [m.rows() as u64, m.cols() as u64, seed] {
        w.write_all(&x.to_le_bytes())?;
    }
    for v in m.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<(DenseMatrix, u64)> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() < 32 || &bytes[..8] != SNAPSHOT_MAGIC {
        return Err(Error::corrupt(path, "bad snapshot header"));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap());
    let (rows, cols, seed) = (word(0) as usize, word(1) as usize, word(2));
    if bytes.len() != 32 + 8 * rows * cols {
        return Err(Error::corrupt(path, "snapshot length"));
    }
    let data = bytes[32..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((DenseMatrix::from_vec(rows, cols, data)?, seed))
}
