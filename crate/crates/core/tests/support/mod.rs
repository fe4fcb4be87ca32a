//! Shared test helpers: instance generators and brute-force oracles.
//!
//! The oracles are naive dense transcriptions of the formulas, written
//! without looking at the library's data structures: plain `Vec<Vec<f64>>`,
//! full sorts, explicit loops. They share only the conventions that the
//! library documents as part of its contract (ties go to the smaller index,
//! sums run in ascending index order, negative edges are clamped when the
//! exponent is fractional).

#![allow(dead_code)]

use knn_rerank::features::{FeatureSet, Role};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Dense = Vec<Vec<f64>>;

// ---------------------------------------------------------------- generators

/// Squared norm every exact row is scaled to: entries are `k / 64`.
const SCALE: i64 = 64;

/// Writes `r` as a sum of four squares (Lagrange), searching from the
/// largest first term down.
fn four_squares(r: i64) -> [i64; 4] {
    let isqrt = |x: i64| (x as f64).sqrt() as i64;
    for a in (0..=isqrt(r)).rev() {
        let ra = r - a * a;
        for b in (0..=isqrt(ra).min(a)).rev() {
            let rb = ra - b * b;
            for c in (0..=isqrt(rb).min(b)).rev() {
                let rc = rb - c * c;
                let d = isqrt(rc);
                for d in [d.saturating_sub(1), d, d + 1] {
                    if d * d == rc {
                        return [a, b, c, d];
                    }
                }
            }
        }
    }
    unreachable!("every nonnegative integer is a sum of four squares")
}

/// A row of `d ≥ 5` entries `k/64` with squared norm exactly 1, close in
/// direction to `x` (the last four slots absorb the rounding remainder).
fn exact_unit_row(x: &[f64], rng: &mut ChaCha8Rng) -> Vec<f32> {
    let d = x.len();
    let body = &x[..d - 4];
    let norm = body.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
    let target = (SCALE * SCALE) as f64;
    let mut scale = 0.93 * target.sqrt() / norm;
    let ints = loop {
        let ints: Vec<i64> = body.iter().map(|v| (v * scale).round() as i64).collect();
        if ints.iter().map(|k| k * k).sum::<i64>() <= SCALE * SCALE {
            break ints;
        }
        scale *= 0.97;
    };
    let rest = SCALE * SCALE - ints.iter().map(|k| k * k).sum::<i64>();
    let mut out: Vec<f32> = ints.iter().map(|&k| k as f32 / SCALE as f32).collect();
    for s in four_squares(rest) {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        out.push(sign * s as f32 / SCALE as f32);
    }
    out
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    StandardNormal.sample(rng)
}

/// A random instance whose similarities are exact in any summation order:
/// rows are unit-norm vectors with entries `k/64`, so every dot product is
/// an integer over 4096. Points are clustered, and some rows are exact
/// duplicates so that ties show up.
#[derive(Clone, Debug)]
pub struct Instance {
    pub query: FeatureSet,
    pub gallery: FeatureSet,
}

impl Instance {
    pub fn n(&self) -> usize {
        self.query.len() + self.gallery.len()
    }

    /// Query rows then gallery rows, as `f32` slices.
    pub fn rows(&self) -> Vec<Vec<f32>> {
        self.query
            .rows()
            .chain(self.gallery.rows())
            .map(<[f32]>::to_vec)
            .collect()
    }
}

pub fn exact_instance(seed: u64, n_min: usize, n_max: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(n_min..=n_max);
    let n_query = rng.random_range(1..=(n / 3).max(1));
    let d = rng.random_range(6..=24);
    let classes = rng.random_range(1..=(n / 2).max(1));
    let sigma = [0.05, 0.2, 0.5, 1.0][rng.random_range(0..4)];
    let dup_rate = [0.0, 0.1, 0.3][rng.random_range(0..3)];
    let centroids: Dense = (0..classes)
        .map(|_| (0..d).map(|_| gaussian(&mut rng)).collect())
        .collect();

    let mut rows: Vec<Vec<f32>> = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 && rng.random_bool(dup_rate) {
            let src = rng.random_range(0..i);
            rows.push(rows[src].clone());
            labels.push(labels[src]);
            continue;
        }
        let c = rng.random_range(0..classes);
        let x: Vec<f64> = centroids[c]
            .iter()
            .map(|m| m + sigma * gaussian(&mut rng))
            .collect();
        rows.push(exact_unit_row(&x, &mut rng));
        labels.push(c as i64);
    }
    let q_data: Vec<f32> = rows[..n_query].concat();
    let g_data: Vec<f32> = rows[n_query..].concat();
    Instance {
        query: FeatureSet::from_rows(d, q_data, labels[..n_query].to_vec(), Role::Query).unwrap(),
        gallery: FeatureSet::from_rows(d, g_data, labels[n_query..].to_vec(), Role::Gallery)
            .unwrap(),
    }
}

/// A Gaussian-cluster instance with generic floating-point values.
pub fn gaussian_instance(seed: u64, n: usize, n_query: usize, d: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = (n / 5).max(1);
    let centroids: Dense = (0..classes)
        .map(|_| (0..d).map(|_| gaussian(&mut rng)).collect())
        .collect();
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.random_range(0..classes);
        data.extend(
            centroids[c]
                .iter()
                .map(|m| (m + 0.5 * gaussian(&mut rng)) as f32),
        );
        labels.push(c as i64);
    }
    Instance {
        query: FeatureSet::from_rows(
            d,
            data[..n_query * d].to_vec(),
            labels[..n_query].to_vec(),
            Role::Query,
        )
        .unwrap(),
        gallery: FeatureSet::from_rows(
            d,
            data[n_query * d..].to_vec(),
            labels[n_query..].to_vec(),
            Role::Gallery,
        )
        .unwrap(),
    }
}

// ---------------------------------------------------------------- basics

pub fn norm(v: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in v {
        s += x * x;
    }
    s.sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] * b[k];
    }
    s
}

pub fn unit_rows(rows: &[Vec<f32>]) -> Dense {
    rows.iter()
        .map(|r| {
            let v: Vec<f64> = r.iter().map(|&x| x as f64).collect();
            let n = norm(&v);
            v.iter().map(|x| x / n).collect()
        })
        .collect()
}

/// Cosine similarity of every pair.
pub fn similarity(rows: &[Vec<f32>]) -> Dense {
    let u = unit_rows(rows);
    u.iter()
        .map(|a| u.iter().map(|b| dot(a, b)).collect())
        .collect()
}

/// Indices sorted by descending score, ties by ascending index.
pub fn sort_desc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    idx
}

pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    sort_desc(scores)[..k].to_vec()
}

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort();
    v
}

// ---------------------------------------------------------------- GNN

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Agg {
    Sum,
    Mean,
    Max,
}

/// `e^α`, negative `e` clamped to 0 when `α` is not an integer.
pub fn edge_weight(e: f64, alpha: f64) -> f64 {
    if alpha == alpha.trunc() {
        e.powf(alpha)
    } else {
        e.max(0.0).powf(alpha)
    }
}

/// Layer-0 node features from `S`: the symmetrised top-`k1` adjacency,
/// each row L2-normalised.
pub fn gnn_initial_features(s: &Dense, k1: usize) -> Dense {
    let n = s.len();
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in top_k(&s[i], k1) {
            a[i][j] = 1.0;
        }
    }
    let mut h = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            h[i][j] = (a[i][j] + a[j][i]) / 2.0;
        }
    }
    for row in &mut h {
        let nr = norm(row);
        for v in row.iter_mut() {
            *v /= nr;
        }
    }
    h
}

/// One round of `h_i ← normalise(h_i + agg_j e_ij^α h_j)` over the
/// top-`k2` neighbours of each node.
pub fn gnn_layer(h: &Dense, s: &Dense, k2: usize, alpha: f64, agg: Agg) -> Dense {
    let n = h.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        let nbrs = sorted(top_k(&s[i], k2));
        for c in 0..n {
            let mut m = match agg {
                Agg::Max => f64::NEG_INFINITY,
                _ => 0.0,
            };
            for &j in &nbrs {
                let x = edge_weight(s[i][j], alpha) * h[j][c];
                match agg {
                    Agg::Max => {
                        if x > m {
                            m = x
                        }
                    }
                    _ => m += x,
                }
            }
            if agg == Agg::Mean {
                m /= k2 as f64;
            }
            out[i][c] = h[i][c] + m;
        }
        let nr = norm(&out[i]);
        if nr != 0.0 {
            for v in out[i].iter_mut() {
                *v /= nr;
            }
        }
    }
    out
}

/// Final cosine between refined query rows `0..nq` and gallery rows.
pub fn cosine_scores(h: &Dense, nq: usize) -> Dense {
    (0..nq)
        .map(|q| {
            (nq..h.len())
                .map(|g| {
                    let den = norm(&h[q]) * norm(&h[g]);
                    if den == 0.0 {
                        0.0
                    } else {
                        dot(&h[q], &h[g]) / den
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
pub struct GnnParams {
    pub k1: usize,
    pub k2: usize,
    pub alpha: f64,
    pub layers: usize,
    pub agg: Agg,
}

pub fn gnn_scores(rows: &[Vec<f32>], nq: usize, p: &GnnParams) -> Dense {
    let s = similarity(rows);
    let mut h = gnn_initial_features(&s, p.k1);
    for _ in 0..p.layers {
        h = gnn_layer(&h, &s, p.k2, p.alpha, p.agg);
    }
    cosine_scores(&h, nq)
}

pub fn gnn_rankings(rows: &[Vec<f32>], nq: usize, p: &GnnParams) -> Vec<Vec<usize>> {
    gnn_scores(rows, nq, p)
        .iter()
        .map(|r| sort_desc(r))
        .collect()
}

// ---------------------------------------------------------------- k-reciprocal

/// Items in each other's top-`k` (self included).
pub fn reciprocal(s: &Dense, i: usize, k: usize) -> Vec<usize> {
    if k == 0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for j in top_k(&s[i], k) {
        if top_k(&s[j], k).contains(&i) {
            out.push(j);
        }
    }
    sorted(out)
}

pub fn expanded_reciprocal(s: &Dense, i: usize, k1: usize) -> Vec<usize> {
    let base = reciprocal(s, i, k1);
    let mut out = base.clone();
    for &g in &base {
        let cand = reciprocal(s, g, k1 / 2);
        let common = cand.iter().filter(|c| base.contains(c)).count();
        // |common| ≥ (2/3)|cand|, kept in integers
        if 3 * common >= 2 * cand.len() {
            out.extend(cand);
        }
    }
    out.sort();
    out.dedup();
    out
}

pub fn distance(cos: f64) -> f64 {
    (2.0 - 2.0 * cos).max(0.0)
}

pub fn k_reciprocal_features(s: &Dense, k1: usize) -> Dense {
    let n = s.len();
    (0..n)
        .map(|i| {
            let set = expanded_reciprocal(s, i, k1);
            (0..n)
                .map(|g| {
                    if set.contains(&g) {
                        (-distance(s[i][g])).exp()
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

pub fn local_expansion(f: &Dense, s: &Dense, k2: usize) -> Dense {
    let n = f.len();
    (0..n)
        .map(|i| {
            let nbrs = sorted(top_k(&s[i], k2));
            (0..f[0].len())
                .map(|c| {
                    let mut acc = 0.0;
                    for &j in &nbrs {
                        acc += f[j][c];
                    }
                    acc / k2 as f64
                })
                .collect()
        })
        .collect()
}

pub fn jaccard(a: &[f64], b: &[f64]) -> f64 {
    let (mut lo, mut hi) = (0.0, 0.0);
    for c in 0..a.len() {
        lo += a[c].min(b[c]);
        hi += a[c].max(b[c]);
    }
    1.0 - lo / hi
}

/// Final k-reciprocal distances, query by gallery.
pub fn k_reciprocal_distances(
    rows: &[Vec<f32>],
    nq: usize,
    k1: usize,
    k2: usize,
    lambda: f64,
) -> Dense {
    let s = similarity(rows);
    let f = local_expansion(&k_reciprocal_features(&s, k1), &s, k2);
    (0..nq)
        .map(|q| {
            (nq..rows.len())
                .map(|g| (1.0 - lambda) * jaccard(&f[q], &f[g]) + lambda * distance(s[q][g]))
                .collect()
        })
        .collect()
}

/// Ascending distance, ties by index.
pub fn sort_asc(d: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..d.len()).collect();
    idx.sort_by(|&a, &b| d[a].partial_cmp(&d[b]).unwrap().then(a.cmp(&b)));
    idx
}

pub fn k_reciprocal_rankings(
    rows: &[Vec<f32>],
    nq: usize,
    k1: usize,
    k2: usize,
    lambda: f64,
) -> Vec<Vec<usize>> {
    k_reciprocal_distances(rows, nq, k1, k2, lambda)
        .iter()
        .map(|r| sort_asc(r))
        .collect()
}

// ---------------------------------------------------------------- baselines

pub fn baseline_rankings(rows: &[Vec<f32>], nq: usize) -> Vec<Vec<usize>> {
    let s = similarity(rows);
    (0..nq).map(|q| sort_desc(&s[q][nq..])).collect()
}

/// Weighted mean of the query (weight 1 when `include_self`) and its top-`k`
/// gallery items (weight `cos^α`), normalised, then ranked by dot product.
pub fn query_expansion_rankings(
    rows: &[Vec<f32>],
    nq: usize,
    k: usize,
    alpha: f64,
    include_self: bool,
) -> Vec<Vec<usize>> {
    let u = unit_rows(rows);
    let d = u[0].len();
    (0..nq)
        .map(|q| {
            let sims: Vec<f64> = (nq..rows.len()).map(|g| dot(&u[q], &u[g])).collect();
            let nbrs = sorted(top_k(&sims, k));
            let mut acc = vec![0.0; d];
            let mut wsum = 0.0;
            if include_self {
                acc = u[q].clone();
                wsum = 1.0;
            }
            for &g in &nbrs {
                let w = edge_weight(sims[g], alpha);
                for c in 0..d {
                    acc[c] += w * u[nq + g][c];
                }
                wsum += w;
            }
            let mut e: Vec<f64> = if wsum > 0.0 {
                acc.iter().map(|a| a / wsum).collect()
            } else {
                u[q].clone()
            };
            let nr = norm(&e);
            if nr < 1e-12 {
                e = u[q].clone();
            } else {
                e.iter_mut().for_each(|x| *x /= nr);
            }
            let scores: Vec<f64> = (nq..rows.len()).map(|g| dot(&e, &u[g])).collect();
            sort_desc(&scores)
        })
        .collect()
}

// ---------------------------------------------------------------- metrics

/// AP as the area under the stepwise precision-recall curve: at every cut-off
/// `t` of the junk-free list, precision@t times the recall gained at `t`.
pub fn average_precision(ranking: &[usize], relevant: &[bool], junk: &[bool]) -> Option<f64> {
    let total = relevant
        .iter()
        .zip(junk)
        .filter(|(r, j)| **r && !**j)
        .count();
    if total == 0 {
        return None;
    }
    let clean: Vec<usize> = ranking.iter().copied().filter(|&g| !junk[g]).collect();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for t in 1..=clean.len() {
        let hits = clean[..t].iter().filter(|&&g| relevant[g]).count();
        let precision = hits as f64 / t as f64;
        let recall = hits as f64 / total as f64;
        ap += precision * (recall - prev_recall);
        prev_recall = recall;
    }
    Some(ap)
}
