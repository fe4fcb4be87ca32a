//! Command-line front end.
//!
//! Every flag can also be set through an environment variable named
//! `KNN_RERANK_<FLAG>` (upper case, dashes as underscores), for example
//! `KNN_RERANK_K1=26` or `KNN_RERANK_THREADS=4`. Explicit flags win.
//!
//! Exit codes: 0 on success, 1 on a usage error, 2 on a data error.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::baselines::{KReciprocalConfig, QueryExpansionConfig};
use crate::bench::{append_csv, run_bench, write_machine_descriptor};
use crate::error::Error;
use crate::eval::evaluate;
use crate::features::{load_feature_set, synth_dataset, write_feature_set, FeatureSet, SynthSpec};
use crate::gnn::{suggest_k1, Aggregator, GnnConfig, NegativeWeights};
use crate::pipeline::{with_threads, MethodSpec};
use crate::ranking::{read_ranking_csv, write_ranking_csv, Method};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

/// File names `synth` writes inside its output directory.
pub const QUERY_FILE: &str = "query.feat";
pub const GALLERY_FILE: &str = "gallery.feat";

#[derive(Debug, Parser)]
#[command(
    name = "knn-rerank",
    version,
    about = "k-NN graph re-ranking for image retrieval"
)]
pub struct Cli {
    /// Worker threads for the re-ranking methods.
    #[arg(long, global = true, default_value_t = 1, env = "KNN_RERANK_THREADS")]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded Gaussian-cluster query/gallery pair.
    Synth(SynthArgs),
    /// Re-rank a gallery for every query and write a ranking CSV.
    Rerank(RerankArgs),
    /// Score a ranking CSV against the label sidecars.
    Eval(EvalArgs),
    /// Time one or more methods and append the results CSV.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, env = "KNN_RERANK_CLASSES")]
    pub classes: usize,
    #[arg(long, env = "KNN_RERANK_PER_CLASS")]
    pub per_class: usize,
    #[arg(long, env = "KNN_RERANK_DIM")]
    pub dim: usize,
    #[arg(long, env = "KNN_RERANK_SIGMA")]
    pub sigma: f64,
    #[arg(long, env = "KNN_RERANK_QUERIES_PER_CLASS")]
    pub queries_per_class: usize,
    #[arg(long, default_value_t = 0, env = "KNN_RERANK_SEED")]
    pub seed: u64,
    /// Output directory; receives query.feat, gallery.feat and their sidecars.
    #[arg(long, env = "KNN_RERANK_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    #[arg(long, env = "KNN_RERANK_QUERY")]
    pub query: PathBuf,
    #[arg(long, env = "KNN_RERANK_GALLERY")]
    pub gallery: PathBuf,
}

#[derive(Debug, Args)]
pub struct MethodArgs {
    /// Adjacency neighbourhood size; defaults to the suggestion from --classes.
    #[arg(long, env = "KNN_RERANK_K1")]
    pub k1: Option<usize>,
    /// Estimated number of classes, used to suggest --k1.
    #[arg(long, env = "KNN_RERANK_CLASSES")]
    pub classes: Option<usize>,
    /// Propagation (or expansion) neighbourhood size.
    #[arg(long, env = "KNN_RERANK_K2")]
    pub k2: Option<usize>,
    /// Edge weight exponent for gnn and alpha-qe.
    #[arg(long, default_value_t = 2.0, env = "KNN_RERANK_ALPHA")]
    pub alpha: f64,
    #[arg(long, default_value_t = 2, env = "KNN_RERANK_LAYERS")]
    pub layers: usize,
    /// sum, mean or max.
    #[arg(long, default_value = "sum", env = "KNN_RERANK_AGGREGATOR")]
    pub aggregator: Aggregator,
    /// Fail instead of clamping negative edges when alpha is fractional.
    #[arg(long, env = "KNN_RERANK_REJECT_NEGATIVE")]
    pub reject_negative: bool,
    /// Weight of the original distance in k-reciprocal re-ranking.
    #[arg(long, default_value_t = 0.3, env = "KNN_RERANK_LAMBDA")]
    pub lambda: f64,
    /// Leave the query out of its own expansion (aqe, alpha-qe).
    #[arg(long, env = "KNN_RERANK_NO_SELF")]
    pub no_self: bool,
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// none, gnn, kreciprocal, aqe or alpha-qe.
    #[arg(long, default_value = "gnn", env = "KNN_RERANK_METHOD")]
    pub method: Method,
    #[command(flatten)]
    pub params: MethodArgs,
    /// Keep only the first N gallery items per query.
    #[arg(long, env = "KNN_RERANK_TOP")]
    pub top: Option<usize>,
    #[arg(long, env = "KNN_RERANK_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, env = "KNN_RERANK_RANKING")]
    pub ranking: PathBuf,
    /// Cut-offs for Recall@K.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "1,5,10",
        env = "KNN_RERANK_RECALL_AT"
    )]
    pub recall_at: Vec<usize>,
    /// Report JSON path.
    #[arg(long, env = "KNN_RERANK_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Comma-separated methods to time.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "none,gnn,kreciprocal",
        env = "KNN_RERANK_METHODS"
    )]
    pub methods: Vec<Method>,
    #[command(flatten)]
    pub params: MethodArgs,
    #[arg(long, default_value_t = 3, env = "KNN_RERANK_REPEATS")]
    pub repeats: usize,
    /// Results CSV, appended to.
    #[arg(long, env = "KNN_RERANK_OUT")]
    pub out: PathBuf,
}

/// Failure of one CLI invocation, already classified by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(e) => write!(f, "error: {e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        // Bad hyperparameters are the caller's fault, not the data's.
        match e {
            Error::InvalidConfig(_) | Error::KOutOfRange { .. } | Error::DegenerateSpec(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Data(other),
        }
    }
}

impl MethodArgs {
    fn k1(&self, n: usize) -> Result<usize, CliError> {
        match (self.k1, self.classes) {
            (Some(k1), _) => Ok(k1),
            (None, Some(c)) if c > 0 => Ok(suggest_k1(n, c)),
            _ => Err(CliError::Usage(
                "--k1 is required unless --classes is given".into(),
            )),
        }
    }

    /// Resolves the flags into a full configuration for `method` on a
    /// problem with `n` items (queries plus gallery).
    pub fn spec(&self, method: Method, n: usize) -> Result<MethodSpec, CliError> {
        Ok(match method {
            Method::None => MethodSpec::None,
            Method::Gnn => {
                let mut cfg = GnnConfig::new(self.k1(n)?);
                cfg.k2 = self.k2.unwrap_or(cfg.k2);
                cfg.alpha = self.alpha;
                cfg.layers = self.layers;
                cfg.aggregator = self.aggregator;
                if self.reject_negative {
                    cfg.negative_weights = NegativeWeights::Reject;
                }
                cfg.validate(n)?;
                MethodSpec::Gnn(cfg)
            }
            Method::KReciprocal => {
                let mut cfg = KReciprocalConfig::new(self.k1(n)?);
                cfg.k2 = self.k2.unwrap_or(cfg.k2);
                cfg.lambda = self.lambda;
                cfg.validate(n)?;
                MethodSpec::KReciprocal(cfg)
            }
            Method::Aqe | Method::AlphaQe => {
                let k = self.k2.unwrap_or(7);
                let mut cfg = if method == Method::Aqe {
                    QueryExpansionConfig::aqe(k)
                } else {
                    QueryExpansionConfig::alpha_qe(k, self.alpha)
                };
                cfg.include_self = !self.no_self;
                if method == Method::Aqe {
                    MethodSpec::Aqe(cfg)
                } else {
                    MethodSpec::AlphaQe(cfg)
                }
            }
        })
    }
}

/// Parses `argv` (program name first) and runs it, returning the exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if cli.threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Rerank(a) => rerank(a, cli.threads),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a, cli.threads),
    }
}

fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let (query, gallery) = synth_dataset(&SynthSpec {
        n_classes: a.classes,
        per_class: a.per_class,
        dim: a.dim,
        noise_sigma: a.sigma,
        queries_per_class: a.queries_per_class,
        seed: a.seed,
    })?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_feature_set(&query, a.out.join(QUERY_FILE))?;
    write_feature_set(&gallery, a.out.join(GALLERY_FILE))?;
    log::info!(
        "wrote {} queries and {} gallery items to {}",
        query.len(),
        gallery.len(),
        a.out.display()
    );
    Ok(())
}

fn load_pair(input: &InputArgs) -> Result<(FeatureSet, FeatureSet), CliError> {
    Ok((
        load_feature_set(&input.query)?,
        load_feature_set(&input.gallery)?,
    ))
}

fn rerank(a: &RerankArgs, threads: usize) -> Result<(), CliError> {
    let (query, gallery) = load_pair(&a.input)?;
    let spec = a.params.spec(a.method, query.len() + gallery.len())?;
    let mut rr = with_threads(threads, || spec.run(&query, &gallery))??;
    if let Some(top) = a.top {
        if top == 0 {
            return Err(CliError::Usage("--top must be at least 1".into()));
        }
        rr.truncate(top);
    }
    write_ranking_csv(&rr, &query, &gallery, &a.out)?;
    log::info!(
        "{}: phase1 {:.3}s phase2 {:.3}s total {:.3}s",
        a.method,
        rr.timings.phase1.as_secs_f64(),
        rr.timings.phase2.as_secs_f64(),
        rr.timings.total.as_secs_f64()
    );
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let (query, gallery) = load_pair(&a.input)?;
    let rr = read_ranking_csv(&a.ranking, &query, &gallery)?;
    let report = evaluate(&rr, &query, &gallery, &a.recall_at)?;
    if let Some(out) = &a.out {
        let body = serde_json::to_string_pretty(&report.to_json()).expect("report is plain json");
        std::fs::write(out, body + "\n").map_err(|e| Error::io(out, e))?;
    }
    println!("{report}");
    Ok(())
}

fn bench(a: &BenchArgs, threads: usize) -> Result<(), CliError> {
    let (query, gallery) = load_pair(&a.input)?;
    let n = query.len() + gallery.len();
    let specs = a
        .methods
        .iter()
        .map(|&m| a.params.spec(m, n))
        .collect::<Result<Vec<_>, _>>()?;
    let results = run_bench(&query, &gallery, &specs, a.repeats, threads)?;
    append_csv(&results, &a.out)?;
    write_machine_descriptor(&a.out)?;
    for r in &results {
        println!(
            "{:<12} phase1 {:>9.4}s  phase2 {:>9.4}s  total {:>9.4}s  mAP {:.4}",
            r.method().name(),
            r.phase1_s,
            r.phase2_s,
            r.total_s,
            r.map
        );
    }
    Ok(())
}
