//! C ABI for `knn-rerank`.
//!
//! Feature sets and rankings are opaque heap handles owned by the caller and
//! released with their `*_free` function. Every fallible call returns a
//! [`KrrStatus`]; on failure, [`krr_last_error_message`] describes the most
//! recent error on the calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use knn_rerank::baselines::{KReciprocalConfig, QueryExpansionConfig};
use knn_rerank::eval::evaluate;
use knn_rerank::features::{self, FeatureSet, Role, SynthSpec};
use knn_rerank::gnn::{suggest_k1, Aggregator, GnnConfig};
use knn_rerank::pipeline::{with_threads, MethodSpec};
use knn_rerank::ranking::RankingResult;
use knn_rerank::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KrrStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A parameter is out of range or inconsistent with the data.
    InvalidArgument = 2,
    /// The file system refused a read or write.
    Io = 3,
    /// A feature, sidecar or ranking file is malformed.
    Format = 4,
    /// The data cannot be processed (zero vectors, empty rows, ...).
    Data = 5,
    /// An internal panic was caught.
    Panic = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KrrMethod {
    None = 0,
    Gnn = 1,
    KReciprocal = 2,
    Aqe = 3,
    AlphaQe = 4,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KrrAggregator {
    Sum = 0,
    Mean = 1,
    Max = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KrrRole {
    Query = 0,
    Gallery = 1,
}

/// Hyperparameters for [`krr_rerank`]. Fields a method does not use are
/// ignored. Start from [`krr_params_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct KrrParams {
    pub k1: usize,
    /// Propagation neighbourhood (gnn, kreciprocal) or expansion size (aqe).
    pub k2: usize,
    pub alpha: f64,
    pub layers: usize,
    pub aggregator: KrrAggregator,
    pub lambda: f64,
    pub include_self: bool,
    /// Worker threads; at least 1.
    pub threads: usize,
}

/// Opaque feature set handle.
pub struct KrrFeatureSet(FeatureSet);

/// Opaque ranking handle.
pub struct KrrRanking(RankingResult);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<Vec<u8>>) {
    let mut bytes = msg.into();
    bytes.retain(|&b| b != 0);
    let c = CString::new(bytes).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> KrrStatus {
    match e {
        Error::Io { .. } => KrrStatus::Io,
        Error::MagicMismatch { .. }
        | Error::UnsupportedVersion { .. }
        | Error::TruncatedFile { .. }
        | Error::TrailingData { .. }
        | Error::LabelCountMismatch { .. }
        | Error::BadSidecar { .. }
        | Error::NonFiniteFeature { .. }
        | Error::BadRanking { .. } => KrrStatus::Format,
        Error::InvalidFeatureSet(_)
        | Error::DegenerateSpec(_)
        | Error::KOutOfRange { .. }
        | Error::DimensionMismatch { .. }
        | Error::InvalidConfig(_) => KrrStatus::InvalidArgument,
        _ => KrrStatus::Data,
    }
}

struct Fail(KrrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> KrrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KrrStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            KrrStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(KrrStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(KrrStatus::InvalidArgument, msg.into())
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<T>(p: *mut *mut T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    *p = ptr::null_mut();
    Ok(())
}

/// Message describing the last failure on this thread, or an empty string.
/// Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn krr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn krr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default hyperparameters for a given `k1`: `k2 = 7`, `alpha = 2`,
/// two layers, sum aggregation, `lambda = 0.3`, query included in its own
/// expansion, one thread.
#[no_mangle]
pub extern "C" fn krr_params_default(k1: usize) -> KrrParams {
    KrrParams {
        k1,
        k2: GnnConfig::DEFAULT_K2,
        alpha: GnnConfig::DEFAULT_ALPHA,
        layers: GnnConfig::DEFAULT_LAYERS,
        aggregator: KrrAggregator::Sum,
        lambda: KReciprocalConfig::DEFAULT_LAMBDA,
        include_self: true,
        threads: 1,
    }
}

/// `floor(n / c)` clamped to `[1, n - 1]`.
#[no_mangle]
pub extern "C" fn krr_suggest_k1(n: usize, c: usize) -> usize {
    suggest_k1(n, c)
}

/// Loads a feature file and its label sidecar.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn krr_feature_set_load(
    path: *const c_char,
    out: *mut *mut KrrFeatureSet,
) -> KrrStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let fs = features::load_feature_set(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(KrrFeatureSet(fs)));
        Ok(())
    })
}

/// Builds a feature set from `n × d` row-major values and `n` labels.
/// Ids are generated (`q0, q1, ...` or `g0, g1, ...`), cameras are unset.
///
/// # Safety
/// `data` must hold `n * d` floats and `labels` `n` integers.
#[no_mangle]
pub unsafe extern "C" fn krr_feature_set_from_rows(
    n: usize,
    d: usize,
    data: *const f32,
    labels: *const i64,
    role: KrrRole,
    out: *mut *mut KrrFeatureSet,
) -> KrrStatus {
    guard(|| {
        out_ptr(out, "out")?;
        if data.is_null() || labels.is_null() {
            return Err(null("data or labels"));
        }
        let len = n.checked_mul(d).ok_or_else(|| invalid("n * d overflows"))?;
        let data = std::slice::from_raw_parts(data, len).to_vec();
        let labels = std::slice::from_raw_parts(labels, n).to_vec();
        let role = match role {
            KrrRole::Query => Role::Query,
            KrrRole::Gallery => Role::Gallery,
        };
        let fs = FeatureSet::from_rows(d, data, labels, role)?;
        *out = Box::into_raw(Box::new(KrrFeatureSet(fs)));
        Ok(())
    })
}

/// Writes a feature file and its sidecar.
///
/// # Safety
/// `fs` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn krr_feature_set_write(
    fs: *const KrrFeatureSet,
    path: *const c_char,
) -> KrrStatus {
    guard(|| {
        let fs = handle(fs, "feature set")?;
        features::write_feature_set(&fs.0, path_arg(path)?)?;
        Ok(())
    })
}

/// Number of rows, or 0 for a null handle.
///
/// # Safety
/// `fs` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn krr_feature_set_len(fs: *const KrrFeatureSet) -> usize {
    fs.as_ref().map_or(0, |f| f.0.len())
}

/// Feature dimension, or 0 for a null handle.
///
/// # Safety
/// `fs` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn krr_feature_set_dim(fs: *const KrrFeatureSet) -> usize {
    fs.as_ref().map_or(0, |f| f.0.dim())
}

/// Releases a feature set. Null is ignored.
///
/// # Safety
/// `fs` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn krr_feature_set_free(fs: *mut KrrFeatureSet) {
    if !fs.is_null() {
        drop(Box::from_raw(fs));
    }
}

/// Seeded Gaussian-cluster query and gallery sets.
///
/// # Safety
/// `query` and `gallery` must be writable.
#[no_mangle]
pub unsafe extern "C" fn krr_synth(
    n_classes: usize,
    per_class: usize,
    dim: usize,
    noise_sigma: f64,
    queries_per_class: usize,
    seed: u64,
    query: *mut *mut KrrFeatureSet,
    gallery: *mut *mut KrrFeatureSet,
) -> KrrStatus {
    guard(|| {
        out_ptr(query, "query")?;
        out_ptr(gallery, "gallery")?;
        let (q, g) = features::synth_dataset(&SynthSpec {
            n_classes,
            per_class,
            dim,
            noise_sigma,
            queries_per_class,
            seed,
        })?;
        *query = Box::into_raw(Box::new(KrrFeatureSet(q)));
        *gallery = Box::into_raw(Box::new(KrrFeatureSet(g)));
        Ok(())
    })
}

fn method_spec(method: KrrMethod, p: &KrrParams) -> MethodSpec {
    match method {
        KrrMethod::None => MethodSpec::None,
        KrrMethod::Gnn => MethodSpec::Gnn(GnnConfig {
            k2: p.k2,
            alpha: p.alpha,
            layers: p.layers,
            aggregator: match p.aggregator {
                KrrAggregator::Sum => Aggregator::Sum,
                KrrAggregator::Mean => Aggregator::Mean,
                KrrAggregator::Max => Aggregator::Max,
            },
            ..GnnConfig::new(p.k1)
        }),
        KrrMethod::KReciprocal => MethodSpec::KReciprocal(KReciprocalConfig {
            k1: p.k1,
            k2: p.k2,
            lambda: p.lambda,
        }),
        KrrMethod::Aqe => MethodSpec::Aqe(QueryExpansionConfig {
            include_self: p.include_self,
            ..QueryExpansionConfig::aqe(p.k2)
        }),
        KrrMethod::AlphaQe => MethodSpec::AlphaQe(QueryExpansionConfig {
            include_self: p.include_self,
            ..QueryExpansionConfig::alpha_qe(p.k2, p.alpha)
        }),
    }
}

/// Re-ranks `gallery` for every query. `params` may be null for
/// `KRR_METHOD_NONE`.
///
/// # Safety
/// Handles must be live; `params` null or valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn krr_rerank(
    query: *const KrrFeatureSet,
    gallery: *const KrrFeatureSet,
    method: KrrMethod,
    params: *const KrrParams,
    out: *mut *mut KrrRanking,
) -> KrrStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let q = handle(query, "query")?;
        let g = handle(gallery, "gallery")?;
        let p = match (params.as_ref(), method) {
            (Some(p), _) => *p,
            (None, KrrMethod::None) => krr_params_default(1),
            (None, _) => return Err(null("params")),
        };
        let spec = method_spec(method, &p);
        let rr = with_threads(p.threads, || spec.run(&q.0, &g.0))??;
        *out = Box::into_raw(Box::new(KrrRanking(rr)));
        Ok(())
    })
}

/// Number of queries, or 0 for a null handle.
///
/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn krr_ranking_num_queries(r: *const KrrRanking) -> usize {
    r.as_ref().map_or(0, |r| r.0.num_queries())
}

/// Length of query `q`'s list, or 0 when out of range.
///
/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn krr_ranking_list_len(r: *const KrrRanking, q: usize) -> usize {
    r.as_ref()
        .and_then(|r| r.0.lists.get(q))
        .map_or(0, Vec::len)
}

/// Copies up to `cap` gallery indices (best first) and their scores for
/// query `q`. Either output may be null. Higher scores rank first.
///
/// # Safety
/// Non-null outputs must have room for `cap` elements.
#[no_mangle]
pub unsafe extern "C" fn krr_ranking_get(
    r: *const KrrRanking,
    q: usize,
    indices: *mut usize,
    scores: *mut f64,
    cap: usize,
) -> KrrStatus {
    guard(|| {
        let r = handle(r, "ranking")?;
        let list =
            r.0.lists
                .get(q)
                .ok_or_else(|| invalid(format!("query {q} out of range")))?;
        let m = cap.min(list.len());
        if !indices.is_null() {
            ptr::copy_nonoverlapping(list.as_ptr(), indices, m);
        }
        if !scores.is_null() {
            ptr::copy_nonoverlapping(r.0.scores[q].as_ptr(), scores, m);
        }
        Ok(())
    })
}

/// Wall-clock seconds of phase 1, phase 2 and the whole run.
///
/// # Safety
/// `r` must be a live handle; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn krr_ranking_timings(
    r: *const KrrRanking,
    phase1: *mut f64,
    phase2: *mut f64,
    total: *mut f64,
) -> KrrStatus {
    guard(|| {
        let t = handle(r, "ranking")?.0.timings;
        for (p, v) in [(phase1, t.phase1), (phase2, t.phase2), (total, t.total)] {
            if !p.is_null() {
                *p = v.as_secs_f64();
            }
        }
        Ok(())
    })
}

/// Writes the ranking as CSV (`query_id,rank,gallery_id,score`).
///
/// # Safety
/// Handles must be live and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn krr_ranking_write_csv(
    r: *const KrrRanking,
    query: *const KrrFeatureSet,
    gallery: *const KrrFeatureSet,
    path: *const c_char,
) -> KrrStatus {
    guard(|| {
        let r = handle(r, "ranking")?;
        let q = handle(query, "query")?;
        let g = handle(gallery, "gallery")?;
        knn_rerank::ranking::write_ranking_csv(&r.0, &q.0, &g.0, path_arg(path)?)?;
        Ok(())
    })
}

/// Releases a ranking. Null is ignored.
///
/// # Safety
/// `r` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn krr_ranking_free(r: *mut KrrRanking) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// mAP and Recall@1 of a ranking, with junk filtering by label and camera.
///
/// # Safety
/// Handles must be live; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn krr_evaluate(
    r: *const KrrRanking,
    query: *const KrrFeatureSet,
    gallery: *const KrrFeatureSet,
    map: *mut f64,
    recall_at_1: *mut f64,
) -> KrrStatus {
    guard(|| {
        let r = handle(r, "ranking")?;
        let q = handle(query, "query")?;
        let g = handle(gallery, "gallery")?;
        let rep = evaluate(&r.0, &q.0, &g.0, &[1])?;
        if !map.is_null() {
            *map = rep.map;
        }
        if !recall_at_1.is_null() {
            *recall_at_1 = rep.recall_at[&1];
        }
        Ok(())
    })
}
