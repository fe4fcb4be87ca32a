//! Reference re-rankers: plain cosine ranking, k-reciprocal re-ranking with
//! Jaccard distance, average query expansion (AQE) and α-weighted query
//! expansion (α-QE).
//!
//! The "original distance" of k-reciprocal re-ranking is the squared
//! Euclidean distance between L2-normalised features, `2 − 2·cos`, which
//! keeps it monotone in cosine and on the same scale as the Jaccard term.

use std::collections::BTreeSet;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::gnn::message_weight;
use crate::ranking::{Method, PhaseTimings, RankingResult};
use crate::similarity::{
    self, rank_order, similarity_block, NeighborLists, SimilarityMatrix, UnitRows,
};
use crate::sparse::CsrMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KReciprocalConfig {
    pub k1: usize,
    pub k2: usize,
    pub lambda: f64,
}

impl KReciprocalConfig {
    pub const DEFAULT_K2: usize = 7;
    pub const DEFAULT_LAMBDA: f64 = 0.3;

    pub fn new(k1: usize) -> Self {
        Self {
            k1,
            k2: Self::DEFAULT_K2.min(k1),
            lambda: Self::DEFAULT_LAMBDA,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        for k in [self.k1, self.k2] {
            if k == 0 || k > n {
                return Err(Error::KOutOfRange { k, n });
            }
        }
        if self.k2 > self.k1 {
            return Err(Error::InvalidConfig(format!(
                "k2 = {} must not exceed k1 = {}",
                self.k2, self.k1
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig(format!(
                "lambda = {} outside [0, 1]",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Query-by-gallery distances, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    pub n_query: usize,
    pub n_gallery: usize,
    pub values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn get(&self, q: usize, g: usize) -> f64 {
        self.values[q * self.n_gallery + g]
    }

    pub fn row(&self, q: usize) -> &[f64] {
        &self.values[q * self.n_gallery..(q + 1) * self.n_gallery]
    }
}

/// `2 − 2·cos`, floored at 0.
#[inline]
pub fn original_distance(cos: f64) -> f64 {
    (2.0 - 2.0 * cos).max(0.0)
}

/// Anything that can answer `S[i][j]`.
trait Similarity: Sync {
    fn sim(&self, i: usize, j: usize) -> f64;
}

impl Similarity for SimilarityMatrix {
    fn sim(&self, i: usize, j: usize) -> f64 {
        self.get(i, j)
    }
}

impl Similarity for UnitRows {
    fn sim(&self, i: usize, j: usize) -> f64 {
        similarity_block(self, i..i + 1, self, j..j + 1)[0]
    }
}

/// `R(i, k)`, ascending. `k = 0` gives the empty set.
fn reciprocal(nl: &NeighborLists, i: usize, k: usize) -> Vec<usize> {
    if k == 0 {
        return Vec::new();
    }
    let mut out: Vec<usize> = nl.indices(i)[..k]
        .iter()
        .copied()
        .filter(|&j| nl.indices(j)[..k].contains(&i))
        .collect();
    out.sort_unstable();
    out
}

/// `R*(i, k1)`: `R(i, k1)` plus every `R(g, ⌊k1/2⌋)`, `g ∈ R(i, k1)`, that
/// shares at least two thirds of its members with `R(i, k1)`.
fn expanded(nl: &NeighborLists, i: usize, k1: usize) -> Vec<usize> {
    let base = reciprocal(nl, i, k1);
    let mut out: BTreeSet<usize> = base.iter().copied().collect();
    for &g in &base {
        let cand = reciprocal(nl, g, k1 / 2);
        let overlap = cand
            .iter()
            .filter(|c| base.binary_search(c).is_ok())
            .count();
        if 3 * overlap >= 2 * cand.len() {
            out.extend(cand);
        }
    }
    out.into_iter().collect()
}

fn check_item(sim: &SimilarityMatrix, i: usize, k: usize) -> Result<()> {
    let n = sim.len();
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    if i >= n {
        return Err(Error::InvalidConfig(format!(
            "item {i} out of range for {n} items"
        )));
    }
    Ok(())
}

pub fn reciprocal_set(sim: &SimilarityMatrix, i: usize, k: usize) -> Result<Vec<usize>> {
    check_item(sim, i, k)?;
    Ok(reciprocal(&similarity::top_k(sim, k)?, i, k))
}

pub fn expanded_reciprocal_set(sim: &SimilarityMatrix, i: usize, k1: usize) -> Result<Vec<usize>> {
    check_item(sim, i, k1)?;
    Ok(expanded(&similarity::top_k(sim, k1)?, i, k1))
}

fn feature_row<S: Similarity + ?Sized>(
    sim: &S,
    nl: &NeighborLists,
    i: usize,
    k1: usize,
) -> Vec<(usize, f64)> {
    expanded(nl, i, k1)
        .into_iter()
        .map(|g| (g, (-original_distance(sim.sim(i, g))).exp()))
        .collect()
}

/// Sparse k-reciprocal feature of item `i`: `exp(−d(i, g))` on `R*(i, k1)`.
pub fn k_reciprocal_feature(
    sim: &SimilarityMatrix,
    i: usize,
    k1: usize,
) -> Result<Vec<(usize, f64)>> {
    check_item(sim, i, k1)?;
    Ok(feature_row(sim, &similarity::top_k(sim, k1)?, i, k1))
}

/// k-reciprocal features of every item, one CSR row each.
pub fn k_reciprocal_features(sim: &SimilarityMatrix, k1: usize) -> Result<CsrMatrix> {
    let nl = similarity::top_k(sim, k1)?;
    Ok(features_from_lists(sim, &nl, k1))
}

fn features_from_lists<S: Similarity + ?Sized>(
    sim: &S,
    nl: &NeighborLists,
    k1: usize,
) -> CsrMatrix {
    let rows = (0..nl.len())
        .into_par_iter()
        .map(|i| feature_row(sim, nl, i, k1))
        .collect();
    CsrMatrix::from_sorted_rows(nl.len(), rows)
}

/// Replaces every row by the mean of the rows of its `k2` nearest items
/// (self included), summed in ascending item order.
pub fn local_query_expansion(
    f: &CsrMatrix,
    sim: &SimilarityMatrix,
    k2: usize,
) -> Result<CsrMatrix> {
    if f.n_rows() != sim.len() {
        return Err(Error::InvalidConfig(format!(
            "{} feature rows for {} items",
            f.n_rows(),
            sim.len()
        )));
    }
    Ok(expand_rows(f, &similarity::top_k(sim, k2)?))
}

fn expand_rows(f: &CsrMatrix, nl: &NeighborLists) -> CsrMatrix {
    let n = f.n_rows();
    let k2 = nl.k();
    let rows = (0..n)
        .into_par_iter()
        .map_init(
            || (vec![0.0; f.n_cols()], vec![false; f.n_cols()], Vec::new()),
            |(acc, seen, touched), i| {
                let mut nbrs = nl.indices(i).to_vec();
                nbrs.sort_unstable();
                for g in nbrs {
                    let (cols, vals) = f.row(g);
                    for (&c, &v) in cols.iter().zip(vals) {
                        if !seen[c] {
                            seen[c] = true;
                            touched.push(c);
                            acc[c] = 0.0 + v;
                        } else {
                            acc[c] += v;
                        }
                    }
                }
                touched.sort_unstable();
                let row: Vec<(usize, f64)> = touched
                    .iter()
                    .map(|&c| (c, acc[c] / k2 as f64))
                    .filter(|&(_, v)| v != 0.0)
                    .collect();
                for &c in touched.iter() {
                    seen[c] = false;
                }
                touched.clear();
                row
            },
        )
        .collect();
    CsrMatrix::from_sorted_rows(f.n_cols(), rows)
}

/// Generalised Jaccard distance `1 − Σmin / Σmax` between each query row
/// (`0..n_query`) and each gallery row (`n_query..`), sums ascending by
/// column.
pub fn jaccard_distance(f: &CsrMatrix, n_query: usize) -> Result<DistanceMatrix> {
    if n_query > f.n_rows() {
        return Err(Error::InvalidConfig(format!(
            "{n_query} queries but only {} rows",
            f.n_rows()
        )));
    }
    if f.values().iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidConfig(
            "Jaccard distance needs nonnegative rows".into(),
        ));
    }
    let n = f.n_rows();
    let n_gallery = n - n_query;
    let gallery = CsrMatrix::from_sorted_rows(
        f.n_cols(),
        (n_query..n)
            .map(|i| {
                let (c, v) = f.row(i);
                c.iter().copied().zip(v.iter().copied()).collect()
            })
            .collect(),
    );
    let postings = gallery.transpose();

    let rows: Vec<Result<Vec<f64>>> = (0..n_query)
        .into_par_iter()
        .map(|q| {
            let (qc, qv) = f.row(q);
            let mut overlaps = vec![false; n_gallery];
            for &c in qc {
                for &g in postings.row(c).0 {
                    overlaps[g] = true;
                }
            }
            (0..n_gallery)
                .map(|g| {
                    let (gc, gv) = gallery.row(g);
                    if !overlaps[g] {
                        if qc.is_empty() && gc.is_empty() {
                            return Err(Error::ZeroDenominator {
                                query: q,
                                gallery: g,
                            });
                        }
                        return Ok(1.0);
                    }
                    let (mut min_sum, mut max_sum) = (0.0, 0.0);
                    let (mut a, mut b) = (0, 0);
                    while a < qc.len() || b < gc.len() {
                        let ca = qc.get(a).copied().unwrap_or(usize::MAX);
                        let cb = gc.get(b).copied().unwrap_or(usize::MAX);
                        if ca == cb {
                            min_sum += qv[a].min(gv[b]);
                            max_sum += qv[a].max(gv[b]);
                            a += 1;
                            b += 1;
                        } else if ca < cb {
                            max_sum += qv[a];
                            a += 1;
                        } else {
                            max_sum += gv[b];
                            b += 1;
                        }
                    }
                    Ok(1.0 - min_sum / max_sum)
                })
                .collect()
        })
        .collect();
    let mut values = Vec::with_capacity(n_query * n_gallery);
    for r in rows {
        values.extend(r?);
    }
    Ok(DistanceMatrix {
        n_query,
        n_gallery,
        values,
    })
}

fn check_dims(query: &FeatureSet, gallery: &FeatureSet) -> Result<()> {
    if query.dim() != gallery.dim() {
        return Err(Error::DimensionMismatch {
            query: query.dim(),
            gallery: gallery.dim(),
        });
    }
    Ok(())
}

/// Plain cosine ranking of the gallery for every query.
pub fn baseline_rerank(query: &FeatureSet, gallery: &FeatureSet) -> Result<RankingResult> {
    check_dims(query, gallery)?;
    let start = Instant::now();
    let unit = UnitRows::from_sets(&[query, gallery])?;
    let (nq, n) = (query.len(), unit.len());
    let s = similarity_block(&unit, 0..nq, &unit, nq..n);
    let phase1 = start.elapsed();
    let ng = n - nq;
    let mut rr = RankingResult::from_scores(
        Method::None,
        s.chunks_exact(ng).map(<[f64]>::to_vec).collect(),
    );
    let total = start.elapsed();
    rr.timings = PhaseTimings {
        phase1,
        phase2: total - phase1,
        total,
    };
    Ok(rr)
}

/// Final distance `(1 − λ)·d_J + λ·d` and ranking by ascending distance
/// (stored as negated scores).
pub fn k_reciprocal_rerank(
    query: &FeatureSet,
    gallery: &FeatureSet,
    cfg: &KReciprocalConfig,
) -> Result<RankingResult> {
    check_dims(query, gallery)?;
    let start = Instant::now();
    let unit = UnitRows::from_sets(&[query, gallery])?;
    let (nq, n) = (query.len(), unit.len());
    cfg.validate(n)?;
    let nl = similarity::knn(&unit, cfg.k1)?;
    let f = features_from_lists(&unit, &nl, cfg.k1);
    let phase1 = start.elapsed();

    let f = expand_rows(&f, &nl.truncate(cfg.k2)?);
    let jaccard = jaccard_distance(&f, nq)?;
    let cos = similarity_block(&unit, 0..nq, &unit, nq..n);
    let mut rr = RankingResult::from_scores(
        Method::KReciprocal,
        final_scores(&jaccard, &cos, cfg.lambda),
    );
    let total = start.elapsed();
    rr.timings = PhaseTimings {
        phase1,
        phase2: total - phase1,
        total,
    };
    Ok(rr)
}

fn final_scores(jaccard: &DistanceMatrix, cos: &[f64], lambda: f64) -> Vec<Vec<f64>> {
    (0..jaccard.n_query)
        .map(|q| {
            jaccard
                .row(q)
                .iter()
                .zip(&cos[q * jaccard.n_gallery..(q + 1) * jaccard.n_gallery])
                .map(|(&dj, &c)| -((1.0 - lambda) * dj + lambda * original_distance(c)))
                .collect()
        })
        .collect()
}

/// Shared by AQE and α-QE.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryExpansionConfig {
    /// Gallery neighbours averaged into the query.
    pub k: usize,
    /// Neighbour weight exponent; 0 is plain AQE.
    pub alpha: f64,
    /// Whether the query itself takes part in the average (weight 1).
    pub include_self: bool,
}

impl QueryExpansionConfig {
    pub fn aqe(k: usize) -> Self {
        Self {
            k,
            alpha: 0.0,
            include_self: true,
        }
    }

    pub fn alpha_qe(k: usize, alpha: f64) -> Self {
        Self {
            k,
            alpha,
            include_self: true,
        }
    }
}

pub fn aqe(query: &FeatureSet, gallery: &FeatureSet, k: usize) -> Result<RankingResult> {
    query_expansion(query, gallery, &QueryExpansionConfig::aqe(k))
}

pub fn alpha_qe(
    query: &FeatureSet,
    gallery: &FeatureSet,
    k: usize,
    alpha: f64,
) -> Result<RankingResult> {
    query_expansion(query, gallery, &QueryExpansionConfig::alpha_qe(k, alpha))
}

/// Replaces each query by the weighted mean of itself and its top-`k`
/// gallery neighbours (weights `cos^α`), re-normalises, and ranks the
/// original gallery by cosine against it.
pub fn query_expansion(
    query: &FeatureSet,
    gallery: &FeatureSet,
    cfg: &QueryExpansionConfig,
) -> Result<RankingResult> {
    check_dims(query, gallery)?;
    if cfg.k == 0 || cfg.k > gallery.len() {
        return Err(Error::KOutOfRange {
            k: cfg.k,
            n: gallery.len(),
        });
    }
    if !(cfg.alpha >= 0.0 && cfg.alpha.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "alpha = {} must be nonnegative",
            cfg.alpha
        )));
    }
    let start = Instant::now();
    let unit = UnitRows::from_sets(&[query, gallery])?;
    let (nq, n, d) = (query.len(), unit.len(), unit.dim());
    let ng = n - nq;
    let s = similarity_block(&unit, 0..nq, &unit, nq..n);
    let neighbours: Vec<Vec<usize>> = s
        .par_chunks_exact(ng)
        .map(|row| {
            let mut order: Vec<usize> = (0..ng).collect();
            if cfg.k < ng {
                order.select_nth_unstable_by(cfg.k - 1, |&a, &b| rank_order(row, a, b));
            }
            order.truncate(cfg.k);
            order.sort_unstable();
            order
        })
        .collect();
    let phase1 = start.elapsed();

    let method = if cfg.alpha == 0.0 {
        Method::Aqe
    } else {
        Method::AlphaQe
    };
    let scores = (0..nq)
        .into_par_iter()
        .map(|q| {
            let row = &s[q * ng..(q + 1) * ng];
            let mut acc = vec![0.0; d];
            let mut total_weight = 0.0;
            if cfg.include_self {
                acc.copy_from_slice(unit.row(q));
                total_weight = 1.0;
            }
            for &g in &neighbours[q] {
                let w = message_weight(row[g], cfg.alpha);
                for (a, &x) in acc.iter_mut().zip(unit.row(nq + g)) {
                    *a += w * x;
                }
                total_weight += w;
            }
            let expanded: Vec<f64> = if total_weight > 0.0 {
                let mut v: Vec<f64> = acc.iter().map(|a| a / total_weight).collect();
                match similarity::normalize_in_place(&mut v) {
                    Some(_) => v,
                    None => unit.row(q).to_vec(),
                }
            } else {
                unit.row(q).to_vec()
            };
            (nq..n)
                .map(|g| {
                    expanded
                        .iter()
                        .zip(unit.row(g))
                        .fold(0.0, |acc, (a, b)| acc + a * b)
                })
                .collect()
        })
        .collect();
    let mut rr = RankingResult::from_scores(method, scores);
    let total = start.elapsed();
    rr.timings = PhaseTimings {
        phase1,
        phase2: total - phase1,
        total,
    };
    Ok(rr)
}
