//! Per-query ranked gallery lists and the ranking CSV format
//! (`query_id,rank,gallery_id,score`, ranks 1-based).

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Plain cosine ranking, no re-ranking.
    None,
    Gnn,
    KReciprocal,
    Aqe,
    AlphaQe,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::None,
        Method::Gnn,
        Method::KReciprocal,
        Method::Aqe,
        Method::AlphaQe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Gnn => "gnn",
            Method::KReciprocal => "kreciprocal",
            Method::Aqe => "aqe",
            Method::AlphaQe => "alpha-qe",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

/// Wall-clock split of one re-ranking run. Phase 1 builds neighbourhoods,
/// phase 2 updates features and ranks.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhaseTimings {
    pub phase1: Duration,
    pub phase2: Duration,
    pub total: Duration,
}

/// Ranked gallery indices per query, best first, with parallel scores
/// (higher is better; distance-based methods store negated distances).
#[derive(Clone, Debug, PartialEq)]
pub struct RankingResult {
    pub method: Option<Method>,
    pub lists: Vec<Vec<usize>>,
    pub scores: Vec<Vec<f64>>,
    pub timings: PhaseTimings,
}

impl RankingResult {
    /// Sorts every gallery item of each query by descending score, ties by
    /// ascending gallery index.
    pub fn from_scores(method: Method, scores: Vec<Vec<f64>>) -> Self {
        let (lists, scores) = scores
            .into_iter()
            .map(|s| {
                let order = argsort_desc(&s);
                let sorted = order.iter().map(|&g| s[g]).collect();
                (order, sorted)
            })
            .unzip();
        Self {
            method: Some(method),
            lists,
            scores,
            timings: PhaseTimings::default(),
        }
    }

    pub fn num_queries(&self) -> usize {
        self.lists.len()
    }

    /// Keeps the best `top` entries of every list.
    pub fn truncate(&mut self, top: usize) {
        for (l, s) in self.lists.iter_mut().zip(&mut self.scores) {
            l.truncate(top);
            s.truncate(top);
        }
    }

    /// Checks the structural invariants against a gallery of `n_gallery`.
    pub fn validate(&self, n_gallery: usize) -> Result<()> {
        if self.lists.len() != self.scores.len() {
            return Err(Error::InvalidConfig(
                "lists and scores differ in length".into(),
            ));
        }
        for (q, (l, s)) in self.lists.iter().zip(&self.scores).enumerate() {
            if l.len() != s.len() {
                return Err(Error::InvalidConfig(format!(
                    "query {q}: score count mismatch"
                )));
            }
            let mut seen = vec![false; n_gallery];
            for &g in l {
                if g >= n_gallery || std::mem::replace(&mut seen[g], true) {
                    return Err(Error::InvalidConfig(format!(
                        "query {q}: gallery index {g} repeated or out of range"
                    )));
                }
            }
            if s.windows(2).any(|w| w[0] < w[1]) {
                return Err(Error::InvalidConfig(format!("query {q}: scores increase")));
            }
        }
        Ok(())
    }
}

/// Indices of `scores` by descending value, ties by ascending index.
pub fn argsort_desc(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| crate::similarity::rank_order(scores, a, b));
    order
}

#[derive(Debug, Serialize, Deserialize)]
struct RankingRow {
    query_id: String,
    rank: usize,
    gallery_id: String,
    score: f64,
}

pub fn write_ranking_csv(
    rr: &RankingResult,
    query: &FeatureSet,
    gallery: &FeatureSet,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let wrap = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::BadRanking {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    };
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    for (q, (list, scores)) in rr.lists.iter().zip(&rr.scores).enumerate() {
        for (r, (&g, &s)) in list.iter().zip(scores).enumerate() {
            w.serialize(RankingRow {
                query_id: query.ids()[q].clone(),
                rank: r + 1,
                gallery_id: gallery.ids()[g].clone(),
                score: s,
            })
            .map_err(wrap)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a ranking CSV, resolving ids against the two feature sets. Rows may
/// appear in any order; ranks per query must be `1..=len` without gaps.
pub fn read_ranking_csv(
    path: impl AsRef<Path>,
    query: &FeatureSet,
    gallery: &FeatureSet,
) -> Result<RankingResult> {
    let path = path.as_ref();
    let bad = |message: String| Error::BadRanking {
        path: path.to_path_buf(),
        message,
    };
    let q_index: HashMap<&str, usize> = query
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let g_index: HashMap<&str, usize> = gallery
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();

    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => bad(format!("{other:?}")),
    })?;
    let mut rows: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); query.len()];
    for (line, rec) in rdr.deserialize::<RankingRow>().enumerate() {
        let rec = rec.map_err(|e| bad(format!("row {}: {e}", line + 1)))?;
        let q = *q_index
            .get(rec.query_id.as_str())
            .ok_or_else(|| bad(format!("unknown query id {:?}", rec.query_id)))?;
        let g = *g_index
            .get(rec.gallery_id.as_str())
            .ok_or_else(|| bad(format!("unknown gallery id {:?}", rec.gallery_id)))?;
        rows[q].push((rec.rank, g, rec.score));
    }
    let mut lists = Vec::with_capacity(query.len());
    let mut scores = Vec::with_capacity(query.len());
    for (q, mut r) in rows.into_iter().enumerate() {
        r.sort_unstable_by_key(|&(rank, _, _)| rank);
        if r.iter().enumerate().any(|(i, &(rank, _, _))| rank != i + 1) {
            return Err(bad(format!(
                "query {:?}: ranks are not 1..={}",
                query.ids()[q],
                r.len()
            )));
        }
        lists.push(r.iter().map(|&(_, g, _)| g).collect());
        scores.push(r.iter().map(|&(_, _, s)| s).collect());
    }
    let rr = RankingResult {
        method: None,
        lists,
        scores,
        timings: PhaseTimings::default(),
    };
    rr.validate(gallery.len()).map_err(|e| bad(e.to_string()))?;
    Ok(rr)
}
