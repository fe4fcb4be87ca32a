//! Graph re-ranking by parameter-free message passing.
//!
//! Phase 1 turns the cosine similarities of query ∪ gallery into:
//!
//! * `A`, the 0/1 top-`k1` adjacency (self included),
//! * `A* = (A + Aᵀ) / 2`, whose entries are 1 for mutual neighbours and 0.5
//!   for one-directional ones,
//! * node features `h_i` = row `i` of `A*`, L2-normalised,
//! * a directed top-`k2` propagation graph with edge weights `e_ij = S_ij`.
//!
//! Phase 2 runs `layers` rounds of
//!
//! ```text
//! h_i <- normalize(h_i + aggregate_{j ∈ N(i, k2)} e_ij^α · h_j)
//! ```
//!
//! and ranks the gallery for every query by cosine similarity of the refined
//! features.
//!
//! Every floating-point reduction runs in ascending index order (neighbours
//! ascending by node id, feature sums ascending by column) and sparse paths
//! only skip exact zeros, so the sparse and dense code paths, any thread
//! count, and a naive dense transcription all produce identical bits.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::ranking::{Method, PhaseTimings, RankingResult};
use crate::similarity::{self, NeighborLists, SimilarityMatrix, UnitRows};
use crate::sparse::{CsrMatrix, SparseGraph};

/// Feature matrices at or above this fill ratio are propagated densely.
pub const DENSE_THRESHOLD: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    Sum,
    Mean,
    /// Element-wise maximum over the weighted neighbour vectors.
    Max,
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregator::Sum => "sum",
            Aggregator::Mean => "mean",
            Aggregator::Max => "max",
        })
    }
}

impl FromStr for Aggregator {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sum" => Ok(Aggregator::Sum),
            "mean" => Ok(Aggregator::Mean),
            "max" => Ok(Aggregator::Max),
            other => Err(format!("unknown aggregator {other:?}")),
        }
    }
}

/// What to do with a negative edge weight when `alpha` is fractional
/// (`e^α` would be NaN).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeWeights {
    /// Use `max(e, 0)^α` and log a warning.
    #[default]
    Clamp,
    /// Fail with [`Error::NegativeWeightWithFractionalAlpha`].
    Reject,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GnnConfig {
    pub k1: usize,
    pub k2: usize,
    pub alpha: f64,
    pub layers: usize,
    pub aggregator: Aggregator,
    #[serde(default)]
    pub negative_weights: NegativeWeights,
}

impl GnnConfig {
    pub const DEFAULT_K2: usize = 7;
    pub const DEFAULT_ALPHA: f64 = 2.0;
    pub const DEFAULT_LAYERS: usize = 2;

    /// Two layers, sum aggregation, `α = 2`, `k2 = 7`.
    pub fn new(k1: usize) -> Self {
        Self {
            k1,
            k2: Self::DEFAULT_K2,
            alpha: Self::DEFAULT_ALPHA,
            layers: Self::DEFAULT_LAYERS,
            aggregator: Aggregator::Sum,
            negative_weights: NegativeWeights::Clamp,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        for k in [self.k1, self.k2] {
            if k == 0 || k > n {
                return Err(Error::KOutOfRange { k, n });
            }
        }
        if self.layers == 0 {
            return Err(Error::InvalidConfig("layers must be at least 1".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "alpha = {} must be finite and nonnegative",
                self.alpha
            )));
        }
        if self.k2 > self.k1 {
            log::warn!("k2 = {} exceeds k1 = {}", self.k2, self.k1);
        }
        Ok(())
    }
}

/// `⌊n / c⌋` clamped to `[1, n − 1]`: the average class size as `k1`.
pub fn suggest_k1(n: usize, c: usize) -> usize {
    let k = n / c.max(1);
    k.clamp(1, n.saturating_sub(1).max(1))
}

/// Node features: sparse until they fill in, dense afterwards.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeFeatureMatrix {
    layer: usize,
    storage: Storage,
}

#[derive(Clone, Debug, PartialEq)]
enum Storage {
    Sparse(CsrMatrix),
    Dense { n: usize, values: Vec<f64> },
}

impl NodeFeatureMatrix {
    pub fn n(&self) -> usize {
        match &self.storage {
            Storage::Sparse(m) => m.n_rows(),
            Storage::Dense { n, .. } => *n,
        }
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, Storage::Dense { .. })
    }

    pub fn density(&self) -> f64 {
        match &self.storage {
            Storage::Sparse(m) => m.density(),
            Storage::Dense { n, values } => {
                values.iter().filter(|v| **v != 0.0).count() as f64 / (*n * *n) as f64
            }
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match &self.storage {
            Storage::Sparse(m) => m.get(i, j),
            Storage::Dense { n, values } => values[i * n + j],
        }
    }

    /// Row `i` as `(column, value)` pairs, zeros omitted, columns ascending.
    pub fn row_entries(&self, i: usize) -> Vec<(usize, f64)> {
        match &self.storage {
            Storage::Sparse(m) => {
                let (c, v) = m.row(i);
                c.iter().copied().zip(v.iter().copied()).collect()
            }
            Storage::Dense { n, values } => values[i * n..(i + 1) * n]
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(c, &v)| (c, v))
                .collect(),
        }
    }

    pub fn row_norm(&self, i: usize) -> f64 {
        self.row_entries(i)
            .iter()
            .fold(0.0, |acc, &(_, v)| acc + v * v)
            .sqrt()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        match &self.storage {
            Storage::Sparse(m) => m.to_dense(),
            Storage::Dense { values, .. } => values.clone(),
        }
    }
}

pub fn build_adjacency(sim: &SimilarityMatrix, k1: usize) -> Result<SparseGraph> {
    Ok(adjacency_from_neighbors(&similarity::top_k(sim, k1)?))
}

/// `A` from precomputed neighbour lists: one unit entry per listed neighbour.
pub fn adjacency_from_neighbors(nl: &NeighborLists) -> SparseGraph {
    let n = nl.len();
    let rows = (0..n)
        .map(|i| {
            let mut cols = nl.indices(i).to_vec();
            cols.sort_unstable();
            cols.into_iter().map(|c| (c, 1.0)).collect()
        })
        .collect();
    SparseGraph::new_unchecked(CsrMatrix::from_sorted_rows(n, rows), false)
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &SparseGraph) -> SparseGraph {
    let m = a.matrix();
    let t = m.transpose();
    let n = a.n();
    let rows = (0..n)
        .map(|i| {
            let (ca, va) = m.row(i);
            let (ct, vt) = t.row(i);
            let mut out = Vec::with_capacity(ca.len() + ct.len());
            let (mut p, mut q) = (0, 0);
            while p < ca.len() || q < ct.len() {
                let next = match (ca.get(p), ct.get(q)) {
                    (Some(&x), Some(&y)) if x == y => {
                        p += 1;
                        q += 1;
                        (x, (va[p - 1] + vt[q - 1]) / 2.0)
                    }
                    (Some(&x), Some(&y)) if x < y => {
                        p += 1;
                        (x, va[p - 1] / 2.0)
                    }
                    (Some(&x), None) => {
                        p += 1;
                        (x, va[p - 1] / 2.0)
                    }
                    (_, Some(&y)) => {
                        q += 1;
                        (y, vt[q - 1] / 2.0)
                    }
                    (None, None) => unreachable!(),
                };
                if next.1 != 0.0 {
                    out.push(next);
                }
            }
            out
        })
        .collect();
    SparseGraph::new_unchecked(CsrMatrix::from_sorted_rows(n, rows), true)
}

/// Layer-0 features: the rows of `A*`, L2-normalised.
pub fn node_features(a_star: &SparseGraph) -> Result<NodeFeatureMatrix> {
    if !a_star.symmetric() {
        return Err(Error::InvalidConfig(
            "node features need the symmetrised adjacency".into(),
        ));
    }
    let n = a_star.n();
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let (cols, vals) = a_star.edges(i);
        let mut row: Vec<(usize, f64)> = cols
            .iter()
            .zip(vals)
            .filter(|(_, v)| **v != 0.0)
            .map(|(&c, &v)| (c, v))
            .collect();
        if !normalize_entries(&mut row) {
            return Err(Error::EmptyRow { row: i });
        }
        rows.push(row);
    }
    Ok(NodeFeatureMatrix {
        layer: 0,
        storage: Storage::Sparse(CsrMatrix::from_sorted_rows(n, rows)),
    })
}

pub fn build_propagation_graph(sim: &SimilarityMatrix, k2: usize) -> Result<SparseGraph> {
    Ok(propagation_graph_from_neighbors(&similarity::top_k(
        sim, k2,
    )?))
}

/// Directed graph `i -> N(i, k2)` weighted by the similarities in `nl`.
pub fn propagation_graph_from_neighbors(nl: &NeighborLists) -> SparseGraph {
    let n = nl.len();
    let rows = (0..n)
        .map(|i| {
            let mut row: Vec<(usize, f64)> = nl
                .indices(i)
                .iter()
                .copied()
                .zip(nl.values(i).iter().copied())
                .collect();
            row.sort_unstable_by_key(|&(c, _)| c);
            row
        })
        .collect();
    SparseGraph::new_unchecked(CsrMatrix::from_sorted_rows(n, rows), false)
}

/// `e^α`, with negative `e` clamped to 0 when `α` is fractional.
#[inline]
pub fn message_weight(e: f64, alpha: f64) -> f64 {
    if alpha.fract() == 0.0 {
        e.powf(alpha)
    } else {
        e.max(0.0).powf(alpha)
    }
}

/// Divides by the norm (ascending-column sum of squares). Returns false for
/// an all-zero row, which is left untouched.
fn normalize_entries(row: &mut [(usize, f64)]) -> bool {
    let norm = row.iter().fold(0.0, |acc, &(_, v)| acc + v * v).sqrt();
    if norm == 0.0 {
        return false;
    }
    row.iter_mut().for_each(|(_, v)| *v /= norm);
    true
}

fn normalize_dense(row: &mut [f64]) {
    let norm = row.iter().fold(0.0, |acc, v| acc + v * v).sqrt();
    if norm != 0.0 {
        row.iter_mut().for_each(|v| *v /= norm);
    }
}

/// Runs `cfg.layers` rounds of message passing over `g`.
pub fn propagate(
    h: &NodeFeatureMatrix,
    g: &SparseGraph,
    cfg: &GnnConfig,
) -> Result<NodeFeatureMatrix> {
    let n = h.n();
    if g.n() != n {
        return Err(Error::InvalidConfig(format!(
            "graph has {} nodes, features have {n}",
            g.n()
        )));
    }
    cfg.validate(n)?;
    if let Some(i) = (0..n).find(|&i| g.edges(i).0.len() != cfg.k2) {
        return Err(Error::InvalidConfig(format!(
            "node {i} has {} out-edges, expected k2 = {}",
            g.edges(i).0.len(),
            cfg.k2
        )));
    }

    if cfg.alpha.fract() != 0.0 {
        let negative = (0..n).find_map(|i| {
            let (cols, ws) = g.edges(i);
            cols.iter()
                .zip(ws)
                .find(|(_, w)| **w < 0.0)
                .map(|(&j, &w)| (i, j, w))
        });
        if let Some((from, to, weight)) = negative {
            match cfg.negative_weights {
                NegativeWeights::Reject => {
                    return Err(Error::NegativeWeightWithFractionalAlpha {
                        from,
                        to,
                        weight,
                        alpha: cfg.alpha,
                    })
                }
                NegativeWeights::Clamp => log::warn!(
                    "negative edge weights with fractional alpha {}; clamping to 0",
                    cfg.alpha
                ),
            }
        }
    }

    let messages: Vec<f64> = g
        .weights()
        .iter()
        .map(|&e| message_weight(e, cfg.alpha))
        .collect();
    let step = Step {
        g,
        messages: &messages,
        aggregator: cfg.aggregator,
        k2: cfg.k2,
    };

    let mut cur = h.storage.clone();
    for _ in 0..cfg.layers {
        cur = match cur {
            Storage::Sparse(m) if m.density() < DENSE_THRESHOLD => Storage::Sparse(step.sparse(&m)),
            Storage::Sparse(m) => Storage::Dense {
                n,
                values: step.dense(n, &m.to_dense()),
            },
            Storage::Dense { values, .. } => Storage::Dense {
                n,
                values: step.dense(n, &values),
            },
        };
    }
    Ok(NodeFeatureMatrix {
        layer: h.layer + cfg.layers,
        storage: cur,
    })
}

struct Step<'a> {
    g: &'a SparseGraph,
    messages: &'a [f64],
    aggregator: Aggregator,
    k2: usize,
}

/// Sparse accumulator reused across rows.
struct Spa {
    acc: Vec<f64>,
    hits: Vec<u32>,
    touched: Vec<usize>,
}

impl Step<'_> {
    fn edge_range(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.g.row_offsets()[i];
        let hi = self.g.row_offsets()[i + 1];
        (&self.g.col_indices()[lo..hi], &self.messages[lo..hi])
    }

    fn sparse(&self, h: &CsrMatrix) -> CsrMatrix {
        let n = h.n_rows();
        let rows: Vec<Vec<(usize, f64)>> = (0..n)
            .into_par_iter()
            .map_init(
                || Spa {
                    acc: vec![0.0; n],
                    hits: vec![0; n],
                    touched: Vec::new(),
                },
                |spa, i| self.sparse_row(h, i, spa),
            )
            .collect();
        CsrMatrix::from_sorted_rows(n, rows)
    }

    fn sparse_row(&self, h: &CsrMatrix, i: usize, spa: &mut Spa) -> Vec<(usize, f64)> {
        let (nbrs, ws) = self.edge_range(i);
        for (&j, &w) in nbrs.iter().zip(ws) {
            let (cols, vals) = h.row(j);
            for (&c, &v) in cols.iter().zip(vals) {
                let m = w * v;
                if spa.hits[c] == 0 {
                    spa.touched.push(c);
                    spa.acc[c] = match self.aggregator {
                        Aggregator::Max => m,
                        _ => 0.0 + m,
                    };
                } else {
                    match self.aggregator {
                        Aggregator::Max => {
                            if m > spa.acc[c] {
                                spa.acc[c] = m
                            }
                        }
                        _ => spa.acc[c] += m,
                    }
                }
                spa.hits[c] += 1;
            }
        }
        spa.touched.sort_unstable();

        let (own_cols, own_vals) = h.row(i);
        let mut out = Vec::with_capacity(own_cols.len() + spa.touched.len());
        let (mut p, mut q) = (0, 0);
        while p < own_cols.len() || q < spa.touched.len() {
            let a = own_cols.get(p).copied().unwrap_or(usize::MAX);
            let b = spa.touched.get(q).copied().unwrap_or(usize::MAX);
            let c = a.min(b);
            let own = if a == c {
                p += 1;
                own_vals[p - 1]
            } else {
                0.0
            };
            let agg = if b == c {
                q += 1;
                self.finish(spa.acc[c], spa.hits[c] as usize)
            } else {
                0.0
            };
            let v = own + agg;
            if v != 0.0 {
                out.push((c, v));
            }
        }
        for &c in &spa.touched {
            spa.hits[c] = 0;
        }
        spa.touched.clear();
        normalize_entries(&mut out);
        out
    }

    /// Turns an accumulated value into the aggregate. `hits` is how many
    /// neighbours had a stored entry in this column; the rest contribute 0.
    #[inline]
    fn finish(&self, acc: f64, hits: usize) -> f64 {
        match self.aggregator {
            Aggregator::Sum => acc,
            Aggregator::Mean => acc / self.k2 as f64,
            Aggregator::Max => {
                if hits < self.k2 && (acc <= 0.0 || acc.is_nan()) {
                    0.0
                } else {
                    acc
                }
            }
        }
    }

    fn dense(&self, n: usize, h: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; n * n];
        out.par_chunks_mut(n).enumerate().for_each_init(
            || vec![0.0; n],
            |agg, (i, row)| {
                let (nbrs, ws) = self.edge_range(i);
                for (t, (&j, &w)) in nbrs.iter().zip(ws).enumerate() {
                    let src = &h[j * n..(j + 1) * n];
                    match self.aggregator {
                        Aggregator::Max if t == 0 => {
                            agg.iter_mut().zip(src).for_each(|(a, &v)| *a = w * v)
                        }
                        Aggregator::Max => agg.iter_mut().zip(src).for_each(|(a, &v)| {
                            let m = w * v;
                            if m > *a {
                                *a = m
                            }
                        }),
                        _ if t == 0 => agg.iter_mut().zip(src).for_each(|(a, &v)| *a = 0.0 + w * v),
                        _ => agg.iter_mut().zip(src).for_each(|(a, &v)| *a += w * v),
                    }
                }
                let own = &h[i * n..(i + 1) * n];
                for c in 0..n {
                    let a = match self.aggregator {
                        Aggregator::Mean => agg[c] / self.k2 as f64,
                        _ => agg[c],
                    };
                    row[c] = own[c] + a;
                }
                normalize_dense(row);
            },
        );
        out
    }
}

/// Cosine similarity of refined features: queries are rows `0..n_query`,
/// gallery the rest. Scores are `dot / (‖q‖·‖g‖)`, sums ascending by column.
pub fn rank_by_cosine(h: &NodeFeatureMatrix, n_query: usize) -> RankingResult {
    let n = h.n();
    let n_gallery = n - n_query;
    let scores: Vec<Vec<f64>> = match &h.storage {
        Storage::Sparse(m) => {
            let norms: Vec<f64> = (0..n).map(|i| h.row_norm(i)).collect();
            let gallery = CsrMatrix::from_sorted_rows(
                n,
                (n_query..n)
                    .map(|i| {
                        let (c, v) = m.row(i);
                        c.iter().copied().zip(v.iter().copied()).collect()
                    })
                    .collect(),
            );
            let postings = gallery.transpose();
            (0..n_query)
                .into_par_iter()
                .map(|q| {
                    let mut dots = vec![0.0; n_gallery];
                    let (cols, vals) = m.row(q);
                    for (&c, &qv) in cols.iter().zip(vals) {
                        let (gs, gv) = postings.row(c);
                        for (&g, &v) in gs.iter().zip(gv) {
                            dots[g] += qv * v;
                        }
                    }
                    dots.iter()
                        .enumerate()
                        .map(|(g, &dot)| cosine(dot, norms[q], norms[n_query + g]))
                        .collect()
                })
                .collect()
        }
        Storage::Dense { values, .. } => {
            let norm = |i: usize| {
                values[i * n..(i + 1) * n]
                    .iter()
                    .fold(0.0, |acc, v| acc + v * v)
                    .sqrt()
            };
            let norms: Vec<f64> = (0..n).map(norm).collect();
            (0..n_query)
                .into_par_iter()
                .map(|q| {
                    let qr = &values[q * n..(q + 1) * n];
                    (n_query..n)
                        .map(|g| {
                            let gr = &values[g * n..(g + 1) * n];
                            let dot = qr.iter().zip(gr).fold(0.0, |acc, (a, b)| acc + a * b);
                            cosine(dot, norms[q], norms[g])
                        })
                        .collect()
                })
                .collect()
        }
    };
    RankingResult::from_scores(Method::Gnn, scores)
}

#[inline]
fn cosine(dot: f64, a: f64, b: f64) -> f64 {
    let denom = a * b;
    if denom == 0.0 {
        0.0
    } else {
        dot / denom
    }
}

/// Output of phase 1, kept separate so it can be timed and inspected.
#[derive(Clone, Debug)]
pub struct GnnGraph {
    pub n_query: usize,
    pub adjacency: SparseGraph,
    pub symmetric: SparseGraph,
    pub features: NodeFeatureMatrix,
    pub propagation: SparseGraph,
}

/// Phase 1 on `query ∪ gallery`: similarities, `A`, `A*`, `h`, k2-NN graph.
pub fn build_graph(query: &FeatureSet, gallery: &FeatureSet, cfg: &GnnConfig) -> Result<GnnGraph> {
    if query.dim() != gallery.dim() {
        return Err(Error::DimensionMismatch {
            query: query.dim(),
            gallery: gallery.dim(),
        });
    }
    let unit = UnitRows::from_sets(&[query, gallery])?;
    cfg.validate(unit.len())?;
    let nl = similarity::knn(&unit, cfg.k1.max(cfg.k2))?;
    let adjacency = adjacency_from_neighbors(&nl.truncate(cfg.k1)?);
    let symmetric = symmetrize(&adjacency);
    let features = node_features(&symmetric)?;
    let propagation = propagation_graph_from_neighbors(&nl.truncate(cfg.k2)?);
    Ok(GnnGraph {
        n_query: query.len(),
        adjacency,
        symmetric,
        features,
        propagation,
    })
}

pub fn gnn_rerank(
    query: &FeatureSet,
    gallery: &FeatureSet,
    cfg: &GnnConfig,
) -> Result<RankingResult> {
    let start = Instant::now();
    let graph = build_graph(query, gallery, cfg)?;
    let phase1 = start.elapsed();
    let refined = propagate(&graph.features, &graph.propagation, cfg)?;
    let mut rr = rank_by_cosine(&refined, graph.n_query);
    let total = start.elapsed();
    rr.timings = PhaseTimings {
        phase1,
        phase2: total - phase1,
        total,
    };
    Ok(rr)
}

/// Convenience used by tests and callers that already hold `S`.
pub fn gnn_rerank_from_similarity(
    sim: &SimilarityMatrix,
    n_query: usize,
    cfg: &GnnConfig,
) -> Result<RankingResult> {
    cfg.validate(sim.len())?;
    let a = build_adjacency(sim, cfg.k1)?;
    let h = node_features(&symmetrize(&a))?;
    let g = build_propagation_graph(sim, cfg.k2)?;
    let refined = propagate(&h, &g, cfg)?;
    Ok(rank_by_cosine(&refined, n_query))
}
