//! Two-phase wall-clock timing of re-ranking methods.
//!
//! Each method runs once as a warm-up (discarded), then `repeats` timed
//! runs. The reported phase times are those of the median run by total time
//! (lower median for an even count), so the phases always add up within the
//! reported total.

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::features::FeatureSet;
use crate::pipeline::{with_threads, MethodSpec};
use crate::ranking::{Method, RankingResult};

#[derive(Clone, Debug)]
pub struct BenchResult {
    pub spec: MethodSpec,
    pub n_query: usize,
    pub n_gallery: usize,
    pub dim: usize,
    pub phase1_s: f64,
    pub phase2_s: f64,
    pub total_s: f64,
    pub threads: usize,
    pub repeats: usize,
    /// Total seconds of every timed run, in run order.
    pub per_repeat: Vec<f64>,
    pub map: f64,
    pub recall_at_1: f64,
    /// Ranking of the median run.
    pub ranking: RankingResult,
}

impl BenchResult {
    pub fn method(&self) -> Method {
        self.spec.method()
    }
}

pub fn run_bench(
    query: &FeatureSet,
    gallery: &FeatureSet,
    specs: &[MethodSpec],
    repeats: usize,
    threads: usize,
) -> Result<Vec<BenchResult>> {
    if repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be at least 1".into()));
    }
    if repeats < 3 {
        log::warn!("{repeats} repeats; medians are unstable below 3");
    }
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let runs = with_threads(threads, || -> Result<Vec<RankingResult>> {
            spec.run(query, gallery)?;
            (0..repeats).map(|_| spec.run(query, gallery)).collect()
        })??;
        let per_repeat: Vec<f64> = runs.iter().map(|r| r.timings.total.as_secs_f64()).collect();
        let mut order: Vec<usize> = (0..runs.len()).collect();
        order.sort_by(|&a, &b| per_repeat[a].total_cmp(&per_repeat[b]));
        let median = runs.into_iter().nth(order[(repeats - 1) / 2]).unwrap();
        let report = evaluate(&median, query, gallery, &[1])?;
        log::info!(
            "{}: phase1 {:.4}s phase2 {:.4}s total {:.4}s mAP {:.4}",
            spec.method(),
            median.timings.phase1.as_secs_f64(),
            median.timings.phase2.as_secs_f64(),
            median.timings.total.as_secs_f64(),
            report.map
        );
        out.push(BenchResult {
            spec: spec.clone(),
            n_query: query.len(),
            n_gallery: gallery.len(),
            dim: query.dim(),
            phase1_s: median.timings.phase1.as_secs_f64(),
            phase2_s: median.timings.phase2.as_secs_f64(),
            total_s: median.timings.total.as_secs_f64(),
            threads,
            repeats,
            per_repeat,
            map: report.map,
            recall_at_1: report.recall_at[&1],
            ranking: median,
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct CsvRow {
    method: &'static str,
    n_query: usize,
    n_gallery: usize,
    dim: usize,
    k1: Option<usize>,
    k2: Option<usize>,
    alpha: Option<f64>,
    layers: Option<usize>,
    threads: usize,
    phase1_s: f64,
    phase2_s: f64,
    total_s: f64,
    map: f64,
    recall_at_1: f64,
}

impl From<&BenchResult> for CsvRow {
    fn from(r: &BenchResult) -> Self {
        let (k1, k2, alpha, layers) = match &r.spec {
            MethodSpec::None => (None, None, None, None),
            MethodSpec::Gnn(c) => (Some(c.k1), Some(c.k2), Some(c.alpha), Some(c.layers)),
            MethodSpec::KReciprocal(c) => (Some(c.k1), Some(c.k2), None, None),
            MethodSpec::Aqe(c) | MethodSpec::AlphaQe(c) => (None, Some(c.k), Some(c.alpha), None),
        };
        Self {
            method: r.method().name(),
            n_query: r.n_query,
            n_gallery: r.n_gallery,
            dim: r.dim,
            k1,
            k2,
            alpha,
            layers,
            threads: r.threads,
            phase1_s: r.phase1_s,
            phase2_s: r.phase2_s,
            total_s: r.total_s,
            map: r.map,
            recall_at_1: r.recall_at_1,
        }
    }
}

/// Appends one row per result, writing the header only when the file is new
/// or empty.
pub fn append_csv(results: &[BenchResult], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let fresh = std::fs::metadata(path)
        .map(|m| m.len() == 0)
        .unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(fresh)
        .from_writer(file);
    for r in results {
        w.serialize(CsvRow::from(r))
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Where [`write_machine_descriptor`] puts the descriptor for a results CSV.
pub fn machine_descriptor_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("machine.json")
}

pub fn machine_descriptor() -> serde_json::Value {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown".into());
    serde_json::json!({
        "os": std::env::consts::OS,
        "arch": std::env::consts::ARCH,
        "cpu": cpu,
        "available_parallelism": std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        "crate_version": env!("CARGO_PKG_VERSION"),
    })
}

pub fn write_machine_descriptor(csv_path: &Path) -> Result<PathBuf> {
    let path = machine_descriptor_path(csv_path);
    let body = serde_json::to_string_pretty(&machine_descriptor()).expect("static json");
    std::fs::write(&path, body + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
