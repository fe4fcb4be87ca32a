//! One entry point for every re-ranking method, plus thread-pool control.

use serde::{Deserialize, Serialize};

use crate::baselines::{self, KReciprocalConfig, QueryExpansionConfig};
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::gnn::{self, GnnConfig};
use crate::ranking::{Method, RankingResult};

/// A method together with its hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum MethodSpec {
    None,
    Gnn(GnnConfig),
    KReciprocal(KReciprocalConfig),
    Aqe(QueryExpansionConfig),
    AlphaQe(QueryExpansionConfig),
}

impl MethodSpec {
    pub fn method(&self) -> Method {
        match self {
            MethodSpec::None => Method::None,
            MethodSpec::Gnn(_) => Method::Gnn,
            MethodSpec::KReciprocal(_) => Method::KReciprocal,
            MethodSpec::Aqe(_) => Method::Aqe,
            MethodSpec::AlphaQe(_) => Method::AlphaQe,
        }
    }

    pub fn run(&self, query: &FeatureSet, gallery: &FeatureSet) -> Result<RankingResult> {
        match self {
            MethodSpec::None => baselines::baseline_rerank(query, gallery),
            MethodSpec::Gnn(cfg) => gnn::gnn_rerank(query, gallery, cfg),
            MethodSpec::KReciprocal(cfg) => baselines::k_reciprocal_rerank(query, gallery, cfg),
            MethodSpec::Aqe(cfg) | MethodSpec::AlphaQe(cfg) => {
                let mut rr = baselines::query_expansion(query, gallery, cfg)?;
                rr.method = Some(self.method());
                Ok(rr)
            }
        }
    }
}

/// Runs `f` on a dedicated pool of exactly `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Err(Error::InvalidConfig(
            "thread count must be at least 1".into(),
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}
