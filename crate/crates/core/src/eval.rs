//! Retrieval metrics: average precision, mAP and Recall@K with
//! re-identification junk filtering.
//!
//! A gallery item is junk for a query when its label is −1, or when it has
//! the query's label *and* the query's camera (only if the query has a
//! camera, i.e. camera ≠ −1). Junk is removed from the list before scoring.
//! Queries without a single valid positive are excluded from the averages.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::features::{FeatureSet, JUNK_LABEL, NO_CAMERA};
use crate::ranking::RankingResult;

/// Identity of one query for junk filtering.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QueryIdentity {
    pub label: i64,
    pub camera: i64,
}

#[inline]
fn is_junk(q: QueryIdentity, label: i64, camera: i64) -> bool {
    label == JUNK_LABEL || (q.camera != NO_CAMERA && label == q.label && camera == q.camera)
}

#[inline]
fn is_positive(q: QueryIdentity, label: i64, camera: i64) -> bool {
    label == q.label && !is_junk(q, label, camera)
}

/// Ranks (1-based, junk skipped) of the valid positives in `ranking`, plus
/// the number of valid positives in the whole gallery.
fn hit_ranks(
    ranking: &[usize],
    gallery_labels: &[i64],
    gallery_cameras: &[i64],
    q: QueryIdentity,
) -> (Vec<usize>, usize) {
    let positives = gallery_labels
        .iter()
        .zip(gallery_cameras)
        .filter(|(&l, &c)| is_positive(q, l, c))
        .count();
    let mut hits = Vec::new();
    let mut rank = 0;
    for &g in ranking {
        let (l, c) = (gallery_labels[g], gallery_cameras[g]);
        if is_junk(q, l, c) {
            continue;
        }
        rank += 1;
        if l == q.label {
            hits.push(rank);
        }
    }
    (hits, positives)
}

/// Mean over the valid positives of precision at each positive's rank.
/// Positives missing from a truncated list contribute zero.
pub fn average_precision(
    ranking: &[usize],
    gallery_labels: &[i64],
    gallery_cameras: &[i64],
    query: QueryIdentity,
) -> Result<f64> {
    if query.label == JUNK_LABEL {
        return Err(Error::NoValidPositives { query: 0 });
    }
    let (hits, positives) = hit_ranks(ranking, gallery_labels, gallery_cameras, query);
    if positives == 0 {
        return Err(Error::NoValidPositives { query: 0 });
    }
    let sum: f64 = hits
        .iter()
        .enumerate()
        .map(|(found, &rank)| (found + 1) as f64 / rank as f64)
        .sum();
    Ok(sum / positives as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub map: f64,
    pub recall_at: BTreeMap<usize, f64>,
    pub per_query_ap: Vec<f64>,
    pub n_queries_evaluated: usize,
    pub n_queries_skipped: usize,
}

impl EvalReport {
    /// Flat JSON object: `map`, `recall_at_<K>` per K, the query counts and
    /// the per-query AP array.
    pub fn to_json(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("map".into(), self.map.into());
        for (k, r) in &self.recall_at {
            obj.insert(format!("recall_at_{k}"), (*r).into());
        }
        obj.insert(
            "n_queries_evaluated".into(),
            self.n_queries_evaluated.into(),
        );
        obj.insert("n_queries_skipped".into(), self.n_queries_skipped.into());
        obj.insert("per_query_ap".into(), self.per_query_ap.clone().into());
        Value::Object(obj)
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>9}", "metric", "value")?;
        writeln!(f, "{:<12} {:>8.2}%", "mAP", 100.0 * self.map)?;
        for (k, r) in &self.recall_at {
            writeln!(f, "{:<12} {:>8.2}%", format!("Recall@{k}"), 100.0 * r)?;
        }
        write!(
            f,
            "{:<12} {:>9}\n{:<12} {:>9}",
            "queries", self.n_queries_evaluated, "skipped", self.n_queries_skipped
        )
    }
}

pub fn evaluate(
    rr: &RankingResult,
    query: &FeatureSet,
    gallery: &FeatureSet,
    ks: &[usize],
) -> Result<EvalReport> {
    if rr.num_queries() != query.len() {
        return Err(Error::InvalidConfig(format!(
            "ranking has {} queries, query set has {}",
            rr.num_queries(),
            query.len()
        )));
    }
    if let Some(&k) = ks.iter().find(|&&k| k == 0) {
        return Err(Error::InvalidConfig(format!("Recall@{k} is undefined")));
    }
    rr.validate(gallery.len())?;

    let mut per_query_ap = Vec::with_capacity(query.len());
    let mut first_hits = Vec::with_capacity(query.len());
    let mut skipped = 0;
    for (qi, list) in rr.lists.iter().enumerate() {
        let q = QueryIdentity {
            label: query.labels()[qi],
            camera: query.cameras()[qi],
        };
        match average_precision(list, gallery.labels(), gallery.cameras(), q) {
            Ok(ap) => {
                per_query_ap.push(ap);
                let (hits, _) = hit_ranks(list, gallery.labels(), gallery.cameras(), q);
                first_hits.push(hits.first().copied());
            }
            Err(Error::NoValidPositives { .. }) => {
                log::debug!(
                    "query {:?} has no valid positives; skipped",
                    query.ids()[qi]
                );
                skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    let evaluated = per_query_ap.len();
    let mean = |sum: f64| {
        if evaluated == 0 {
            0.0
        } else {
            sum / evaluated as f64
        }
    };
    let map = mean(per_query_ap.iter().sum());
    let recall_at = ks
        .iter()
        .map(|&k| {
            let found = first_hits
                .iter()
                .filter(|h| matches!(h, Some(r) if *r <= k))
                .count();
            (k, mean(found as f64))
        })
        .collect();
    Ok(EvalReport {
        map,
        recall_at,
        per_query_ap,
        n_queries_evaluated: evaluated,
        n_queries_skipped: skipped,
    })
}
