//! Compressed-sparse-row storage for graphs and node features.

use crate::error::{Error, Result};

/// CSR matrix with strictly ascending column indices inside each row.
///
/// Node-feature matrices never store zeros; graph matrices may (a k-NN edge
/// whose similarity is exactly 0 is still an edge).
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_parts(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("malformed CSR: {m}")));
        if row_offsets.len() != n_rows + 1 || row_offsets[0] != 0 {
            return bad(format!("{} offsets for {n_rows} rows", row_offsets.len()));
        }
        if *row_offsets.last().unwrap() != col_indices.len() || col_indices.len() != values.len() {
            return bad("offsets, indices and values disagree on nnz".into());
        }
        for i in 0..n_rows {
            let (lo, hi) = (row_offsets[i], row_offsets[i + 1]);
            if lo > hi {
                return bad(format!("offsets decrease at row {i}"));
            }
            let cols = &col_indices[lo..hi];
            if cols.iter().any(|&c| c >= n_cols) {
                return bad(format!("column out of range in row {i}"));
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("columns not strictly ascending in row {i}"));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return bad("non-finite value".into());
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Builds from per-row `(col, value)` lists that are already sorted.
    /// Only checked in debug builds.
    pub(crate) fn from_sorted_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let nnz = rows.iter().map(Vec::len).sum();
        let mut row_offsets = Vec::with_capacity(rows.len() + 1);
        let mut col_indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_offsets.push(0);
        for row in &rows {
            debug_assert!(row.windows(2).all(|w| w[0].0 < w[1].0));
            for &(c, v) in row {
                col_indices.push(c);
                values.push(v);
            }
            row_offsets.push(col_indices.len());
        }
        Self {
            n_rows: rows.len(),
            n_cols,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn from_dense(n_rows: usize, n_cols: usize, dense: &[f64]) -> Self {
        let rows = dense
            .chunks_exact(n_cols)
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(c, &v)| (c, v))
                    .collect()
            })
            .collect();
        let mut m = Self::from_sorted_rows(n_cols, rows);
        m.n_rows = n_rows;
        m
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn density(&self) -> f64 {
        if self.n_rows == 0 || self.n_cols == 0 {
            return 0.0;
        }
        self.nnz() as f64 / (self.n_rows as f64 * self.n_cols as f64)
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    /// Stored value at `(i, j)`, zero when absent.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map(|p| vals[p]).unwrap_or(0.0)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows * self.n_cols];
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                out[i * self.n_cols + c] = v;
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_indices {
            counts[c + 1] += 1;
        }
        for c in 0..self.n_cols {
            counts[c + 1] += counts[c];
        }
        let row_offsets = counts.clone();
        let mut next = counts;
        let mut col_indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        // rows visited in ascending order keep every output row sorted
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                let slot = next[c];
                col_indices[slot] = i;
                values[slot] = v;
                next[c] += 1;
            }
        }
        Self {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_offsets,
            col_indices,
            values,
        }
    }
}

/// Square weighted adjacency in canonical CSR form.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseGraph {
    adj: CsrMatrix,
    symmetric: bool,
}

impl SparseGraph {
    /// Wraps a square matrix; `symmetric` is verified, not trusted.
    pub fn new(adj: CsrMatrix, symmetric: bool) -> Result<Self> {
        if adj.n_rows != adj.n_cols {
            return Err(Error::InvalidConfig(format!(
                "graph must be square, got {}x{}",
                adj.n_rows, adj.n_cols
            )));
        }
        if symmetric && adj != adj.transpose() {
            return Err(Error::InvalidConfig(
                "graph flagged symmetric but is not".into(),
            ));
        }
        Ok(Self { adj, symmetric })
    }

    pub(crate) fn new_unchecked(adj: CsrMatrix, symmetric: bool) -> Self {
        debug_assert_eq!(adj.n_rows, adj.n_cols);
        Self { adj, symmetric }
    }

    pub fn n(&self) -> usize {
        self.adj.n_rows
    }

    pub fn nnz(&self) -> usize {
        self.adj.nnz()
    }

    pub fn row_offsets(&self) -> &[usize] {
        self.adj.row_offsets()
    }

    pub fn col_indices(&self) -> &[usize] {
        self.adj.col_indices()
    }

    pub fn weights(&self) -> &[f64] {
        self.adj.values()
    }

    pub fn symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.adj
    }

    /// Out-edges of `i` as `(targets, weights)`, targets ascending.
    pub fn edges(&self, i: usize) -> (&[usize], &[f64]) {
        self.adj.row(i)
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adj.get(i, j)
    }
}
