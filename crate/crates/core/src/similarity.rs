//! Phase-1 kernels shared by every method: normalisation, cosine similarity
//! and exact top-k neighbour selection.
//!
//! All similarity values come from one dense kernel ([`similarity_block`]),
//! so the full matrix, a blocked top-k pass and a query-vs-gallery slice
//! agree bit for bit on every entry they share.

use std::cmp::Ordering;
use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureSet;

/// Norms below this are treated as zero vectors.
pub const ZERO_NORM: f64 = 1e-12;

/// Rows processed together by the blocked neighbour search.
const BLOCK_ROWS: usize = 128;

/// L2-normalised rows in `f64`, possibly the union of several feature sets.
#[derive(Clone, Debug)]
pub struct UnitRows {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl UnitRows {
    /// Stacks `sets` in order and normalises every row.
    pub fn from_sets(sets: &[&FeatureSet]) -> Result<Self> {
        let d = sets.first().map(|s| s.dim()).unwrap_or(0);
        if let Some(bad) = sets.iter().find(|s| s.dim() != d) {
            return Err(Error::DimensionMismatch {
                query: d,
                gallery: bad.dim(),
            });
        }
        let n: usize = sets.iter().map(|s| s.len()).sum();
        let mut data = Vec::with_capacity(n * d);
        let mut row = 0;
        for set in sets {
            for r in set.rows() {
                let start = data.len();
                data.extend(r.iter().map(|&v| v as f64));
                normalize_in_place(&mut data[start..]).ok_or(Error::ZeroVector { row })?;
                row += 1;
            }
        }
        Ok(Self { n, d, data })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }
}

/// Divides `v` by its Euclidean norm. Returns `None` (leaving `v` untouched)
/// when the norm is below [`ZERO_NORM`].
pub(crate) fn normalize_in_place(v: &mut [f64]) -> Option<f64> {
    let norm = v.iter().fold(0.0, |acc, x| acc + x * x).sqrt();
    if norm < ZERO_NORM {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(norm)
}

pub fn l2_normalize(fs: &FeatureSet) -> Result<FeatureSet> {
    let unit = UnitRows::from_sets(&[fs])?;
    fs.with_data(unit.data.iter().map(|&v| v as f32).collect())
}

/// Dense `n × n` cosine similarities, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || values.len() != n * n {
            return Err(Error::InvalidConfig(format!(
                "{} values for a {n}x{n} similarity matrix",
                values.len()
            )));
        }
        Ok(Self { n, values })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub fn cosine_similarity_matrix(fs: &FeatureSet) -> Result<SimilarityMatrix> {
    let unit = UnitRows::from_sets(&[fs])?;
    Ok(full_similarity(&unit))
}

pub(crate) fn full_similarity(unit: &UnitRows) -> SimilarityMatrix {
    SimilarityMatrix {
        n: unit.n,
        values: similarity_block(unit, 0..unit.n, unit, 0..unit.n),
    }
}

/// Dot products of `a[rows]` against `b[cols]`, as a `rows.len() × cols.len()`
/// row-major block.
pub(crate) fn similarity_block(
    a: &UnitRows,
    rows: Range<usize>,
    b: &UnitRows,
    cols: Range<usize>,
) -> Vec<f64> {
    assert_eq!(a.d, b.d);
    let (m, n, d) = (rows.len(), cols.len(), a.d);
    let mut out = vec![0.0; m * n];
    if m == 0 || n == 0 {
        return out;
    }
    let a_ptr = a.data[rows.start * d..].as_ptr();
    let b_ptr = b.data[cols.start * d..].as_ptr();
    // SAFETY: A is m×d with row stride d inside `a.data`, B is read as the
    // d×n transpose of `b[cols]` (row stride 1, column stride d), and C is
    // the freshly allocated m×n output. All three stay in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            d,
            n,
            1.0,
            a_ptr,
            d as isize,
            1,
            b_ptr,
            1,
            d as isize,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

/// Per-row neighbour lists, each sorted by descending similarity with ties
/// broken by ascending index.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborLists {
    k: usize,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl NeighborLists {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.indices.len().checked_div(self.k).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    /// Similarities parallel to [`indices`](Self::indices).
    pub fn values(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    /// The first `k` entries of every list. Top-k lists under a total
    /// order are prefixes of top-k' lists for k' > k.
    pub fn truncate(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.k {
            return Err(Error::KOutOfRange { k, n: self.k });
        }
        let mut indices = Vec::with_capacity(self.len() * k);
        let mut values = Vec::with_capacity(self.len() * k);
        for i in 0..self.len() {
            indices.extend_from_slice(&self.indices(i)[..k]);
            values.extend_from_slice(&self.values(i)[..k]);
        }
        Ok(Self { k, indices, values })
    }
}

/// Descending value, then ascending index.
#[inline]
pub(crate) fn rank_order(row: &[f64], a: usize, b: usize) -> Ordering {
    row[b]
        .partial_cmp(&row[a])
        .unwrap_or(Ordering::Equal)
        .then(a.cmp(&b))
}

fn select_top_k(
    row: &[f64],
    k: usize,
    scratch: &mut Vec<usize>,
    idx: &mut [usize],
    val: &mut [f64],
) {
    scratch.clear();
    scratch.extend(0..row.len());
    if k < row.len() {
        scratch.select_nth_unstable_by(k - 1, |&a, &b| rank_order(row, a, b));
    }
    let top = &mut scratch[..k];
    top.sort_unstable_by(|&a, &b| rank_order(row, a, b));
    for (slot, &j) in top.iter().enumerate() {
        idx[slot] = j;
        val[slot] = row[j];
    }
}

pub fn top_k(sim: &SimilarityMatrix, k: usize) -> Result<NeighborLists> {
    let n = sim.n;
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    let mut indices = vec![0; n * k];
    let mut values = vec![0.0; n * k];
    indices
        .par_chunks_mut(k)
        .zip(values.par_chunks_mut(k))
        .enumerate()
        .for_each_init(Vec::new, |scratch, (i, (idx, val))| {
            select_top_k(sim.row(i), k, scratch, idx, val)
        });
    Ok(NeighborLists { k, indices, values })
}

/// Exact top-k over the full similarity of `unit` with itself, computed in
/// row blocks so peak memory stays `O(n · block)`. Same result as
/// `top_k(&full_similarity(unit), k)`.
pub fn knn(unit: &UnitRows, k: usize) -> Result<NeighborLists> {
    let n = unit.n;
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    let mut indices = vec![0; n * k];
    let mut values = vec![0.0; n * k];
    indices
        .par_chunks_mut(BLOCK_ROWS * k)
        .zip(values.par_chunks_mut(BLOCK_ROWS * k))
        .enumerate()
        .for_each(|(b, (idx, val))| {
            let start = b * BLOCK_ROWS;
            let rows = idx.len() / k;
            let block = similarity_block(unit, start..start + rows, unit, 0..n);
            let mut scratch = Vec::with_capacity(n);
            for r in 0..rows {
                select_top_k(
                    &block[r * n..(r + 1) * n],
                    k,
                    &mut scratch,
                    &mut idx[r * k..(r + 1) * k],
                    &mut val[r * k..(r + 1) * k],
                );
            }
        });
    Ok(NeighborLists { k, indices, values })
}
