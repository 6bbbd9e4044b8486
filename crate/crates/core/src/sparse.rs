//! Compressed sparse row storage: the propagation operator and the on-disk
//! format for pruned embedding tables.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicates are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        for &(r, c, _) in &triplets {
            if r >= nrows {
                return Err(Error::IndexOutOfRange {
                    what: "row",
                    index: r,
                    len: nrows,
                });
            }
            if c >= ncols {
                return Err(Error::IndexOutOfRange {
                    what: "column",
                    index: c,
                    len: ncols,
                });
            }
        }
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Keeps only the nonzero entries of a dense matrix.
    pub fn from_dense(dense: &DenseMatrix) -> Self {
        let mut row_ptr = Vec::with_capacity(dense.rows() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for r in 0..dense.rows() {
            for (c, &v) in dense.row(r).iter().enumerate() {
                if v != 0.0 {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows: dense.rows(),
            ncols: dense.cols(),
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn from_parts(
        nrows: usize,
        ncols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let bad = |m: &str| Error::InvalidConfig(format!("malformed CSR: {m}"));
        if row_ptr.len() != nrows + 1 || row_ptr[0] != 0 {
            return Err(bad("row pointer length"));
        }
        if row_ptr.windows(2).any(|w| w[0] > w[1]) {
            return Err(bad("row pointers not monotone"));
        }
        let nnz = *row_ptr.last().unwrap();
        if col_idx.len() != nnz || values.len() != nnz {
            return Err(bad("index/value length"));
        }
        if col_idx.iter().any(|&c| c >= ncols) {
            return Err(bad("column index out of range"));
        }
        Ok(Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.row_ptr[r + 1] - self.row_ptr[r]
    }

    /// `(column, value)` pairs of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                out.set(r, c, v);
            }
        }
        out
    }

    pub fn is_symmetric(&self) -> bool {
        self.nrows == self.ncols
            && (0..self.nrows).all(|r| self.row(r).all(|(c, v)| self.get(c, r) == v))
    }

    /// Sparse-dense product `self · x`, rows computed in parallel.
    pub fn mul_dense(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.rows() != self.ncols {
            return Err(Error::ShapeMismatch {
                expected: (self.ncols, x.cols()),
                actual: x.shape(),
            });
        }
        let f = x.cols();
        let mut out = DenseMatrix::zeros(self.nrows, f);
        if f == 0 {
            return Ok(out);
        }
        out.as_mut_slice()
            .par_chunks_mut(f)
            .enumerate()
            .for_each(|(r, dst)| {
                for (c, v) in self.row(r) {
                    for (d, &s) in dst.iter_mut().zip(x.row(c)) {
                        *d += v * s;
                    }
                }
            });
        Ok(out)
    }
}

const CSR_MAGIC: &[u8; 8] = b"LTHCSR01";
const CSR_HEADER_BYTES: u64 = 8 + 4 * 8;

/// A masked embedding table in CSR layout, tagged with its user/item split.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrArtifact {
    pub num_users: usize,
    pub num_items: usize,
    pub matrix: CsrMatrix,
}

impl CsrArtifact {
    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    /// On-disk size: header, `u64` row pointers, `u32` column indices, `f64` values.
    pub fn byte_size(&self) -> u64 {
        csr_byte_size(self.matrix.nrows(), self.matrix.nnz())
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".meta");
        PathBuf::from(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if self.matrix.ncols() > u32::MAX as usize {
            return Err(Error::InvalidConfig("embedding size exceeds u32".into()));
        }
        let m = &self.matrix;
        let row_ptr: Vec<u8> = m
            .row_ptr
            .iter()
            .flat_map(|&p| (p as u64).to_le_bytes())
            .collect();
        let col_idx: Vec<u8> = m
            .col_idx
            .iter()
            .flat_map(|&c| (c as u32).to_le_bytes())
            .collect();
        let values: Vec<u8> = m.values.iter().flat_map(|v| v.to_le_bytes()).collect();

        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CSR_MAGIC)?;
        for x in [self.num_users, self.num_items, self.dim(), m.nnz()] {
            w.write_all(&(x as u64).to_le_bytes())?;
        }
        w.write_all(&row_ptr)?;
        w.write_all(&col_idx)?;
        w.write_all(&values)?;
        w.flush()?;

        let sidecar = format!(
            "format=lth-csr/1\nnum_users={}\nnum_items={}\ndim={}\nnnz={}\nsha256_row_ptr={}\nsha256_col_idx={}\nsha256_values={}\n",
            self.num_users,
            self.num_items,
            self.dim(),
            m.nnz(),
            sha256_hex(&row_ptr),
            sha256_hex(&col_idx),
            sha256_hex(&values),
        );
        std::fs::write(Self::sidecar_path(path), sidecar)?;
        Ok(())
    }

    /// Reads an artifact, verifying the sidecar checksums when the sidecar exists.
    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        if bytes.len() < CSR_HEADER_BYTES as usize || &bytes[..8] != CSR_MAGIC {
            return Err(Error::corrupt(path, "bad CSR header"));
        }
        let word = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap());
        let (num_users, num_items, dim, nnz) = (
            word(0) as usize,
            word(1) as usize,
            word(2) as usize,
            word(3) as usize,
        );
        let rows = num_users + num_items;
        let expected = csr_byte_size(rows, nnz) as usize;
        if bytes.len() != expected {
            return Err(Error::corrupt(
                path,
                format!("expected {expected} bytes, found {}", bytes.len()),
            ));
        }
        let mut off = CSR_HEADER_BYTES as usize;
        let rp_bytes = &bytes[off..off + 8 * (rows + 1)];
        off += rp_bytes.len();
        let ci_bytes = &bytes[off..off + 4 * nnz];
        off += ci_bytes.len();
        let val_bytes = &bytes[off..off + 8 * nnz];

        let sidecar = Self::sidecar_path(path);
        if sidecar.exists() {
            let text = std::fs::read_to_string(&sidecar)?;
            for (key, data) in [
                ("sha256_row_ptr", rp_bytes),
                ("sha256_col_idx", ci_bytes),
                ("sha256_values", val_bytes),
            ] {
                let want = text
                    .lines()
                    .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')));
                if want != Some(sha256_hex(data).as_str()) {
                    return Err(Error::corrupt(path, format!("{key} mismatch")));
                }
            }
        }

        let row_ptr = rp_bytes
            .chunks_exact(8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()) as usize)
            .collect();
        let col_idx = ci_bytes
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
            .collect();
        let values = val_bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let matrix = CsrMatrix::from_parts(rows, dim, row_ptr, col_idx, values)
            .map_err(|e| Error::corrupt(path, e.to_string()))?;
        Ok(Self {
            num_users,
            num_items,
            matrix,
        })
    }
}

pub fn csr_byte_size(rows: usize, nnz: usize) -> u64 {
    CSR_HEADER_BYTES + 8 * (rows as u64 + 1) + 12 * nnz as u64
}

pub fn dense_byte_size(rows: usize, cols: usize) -> u64 {
    8 * (rows as u64) * (cols as u64)
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates_and_sort() {
        let m = CsrMatrix::from_triplets(2, 3, vec![(1, 2, 1.0), (0, 1, 2.0), (1, 2, 0.5)]).unwrap();
        assert_eq!(m.row_ptr(), &[0, 1, 2]);
        assert_eq!(m.get(1, 2), 1.5);
        assert_eq!(m.get(0, 0), 0.0);
    }

    #[test]
    fn mul_dense_matches_dense() {
        let m = CsrMatrix::from_triplets(2, 2, vec![(0, 1, 2.0), (1, 0, 3.0)]).unwrap();
        let x = DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![2.0, -1.0]]).unwrap();
        let y = m.mul_dense(&x).unwrap();
        assert_eq!(y, m.to_dense().matmul(&x).unwrap());
    }

    #[test]
    fn artifact_round_trip_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csr");
        let dense = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, -2.5], vec![0.0, 0.0]]).unwrap();
        let art = CsrArtifact {
            num_users: 1,
            num_items: 2,
            matrix: CsrMatrix::from_dense(&dense),
        };
        art.write(&path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), art.byte_size());
        let back = CsrArtifact::read(&path).unwrap();
        assert_eq!(back, art);

        let mut bytes = std::fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 1] ^= 0x40;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            CsrArtifact::read(&path),
            Err(Error::CorruptArtifact { .. })
        ));
    }
}
