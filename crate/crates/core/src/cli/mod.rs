//! Command-line front end: `generate`, `train`, `evaluate`, `classify`, `export`.
//!
//! Every command is a pure function of its inputs, flags and seed. Outputs
//! are written atomically into `--out-dir`. `HDSP_THREADS` caps the worker
//! count without changing any result.

pub mod io;
pub mod snapshot;

use std::collections::HashSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{HdspError, Result};
use crate::eval::{self, Evaluator};
use crate::inference::{fit, FitConfig};
use crate::model::{Corpus, HyperParams, ScalingKind};
use crate::synth::{self, GeometricConfig, MixedConfig, SynthConfig};

use self::io::{atomic_write, format_corpus, format_labels, format_vocab, load_corpus, synthetic_vocab};
use self::snapshot::{ground_truth_value, to_canonical_string, Snapshot};

pub const THREADS_ENV: &str = "HDSP_THREADS";

/// Rating grid searched by `classify`.
pub const RATING_GRID: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];

#[derive(Debug, Parser)]
#[command(name = "hdsp", version, about = "Hierarchical Dirichlet scaling process topic model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a synthetic corpus with its ground truth.
    Generate(GenerateArgs),
    /// Fit a model on the training split and write a snapshot.
    Train(TrainArgs),
    /// Held-out perplexity given labels.
    Evaluate(EvalArgs),
    /// Predict the rating (first label) of held-out documents.
    Classify(EvalArgs),
    /// Write weights, topics and posterior word counts as CSV.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Design {
    Fixed,
    Geometric,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScalingArg {
    Categorical,
    Loglinear,
}

impl From<ScalingArg> for ScalingKind {
    fn from(s: ScalingArg) -> Self {
        match s {
            ScalingArg::Categorical => ScalingKind::Categorical,
            ScalingArg::Loglinear => ScalingKind::LogLinear,
        }
    }
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value = "fixed")]
    design: Design,
    #[arg(long)]
    docs: Option<usize>,
    /// Number of true topics (fixed and geometric designs).
    #[arg(long)]
    topics: Option<usize>,
    #[arg(long)]
    vocab: Option<usize>,
    /// Number of binary labels (fixed and geometric designs).
    #[arg(long)]
    labels: Option<usize>,
    #[arg(long)]
    mean_length: Option<f64>,
    /// Cube side x of the geometric design.
    #[arg(long, default_value_t = 1.0)]
    side: f64,
    /// Number of categories of the mixed design.
    #[arg(long, default_value_t = 3)]
    categories: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct DataArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ModelFlags {
    #[arg(long, value_enum, default_value = "categorical")]
    scaling: ScalingArg,
    #[arg(long, default_value_t = 200)]
    truncation: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Topic Dirichlet parameter; 0.1, 0.25, 0.5, 0.75 and 1.0 are the usual grid.
    #[arg(long, default_value_t = 0.5)]
    eta: f64,
    #[arg(long, default_value_t = 1.0)]
    a_w: f64,
    #[arg(long, default_value_t = 1.0)]
    b_w: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Relative ELBO change that stops training; `inf` runs one sweep.
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[arg(long, default_value_t = 1000)]
    max_iters: usize,
}

#[derive(Debug, Args)]
struct SplitFlags {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of documents held out from training, chosen by seeded shuffle.
    #[arg(long, default_value_t = 0.2)]
    heldout_fraction: f64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    split: SplitFlags,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    split: SplitFlags,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

/// Validated settings of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scaling: ScalingKind,
    pub hyper: HyperParams,
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub heldout_fraction: f64,
    pub out_dir: PathBuf,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scaling: ScalingKind::Categorical,
            hyper: HyperParams::default(),
            tol: 1e-3,
            max_iters: 1000,
            seed: 0,
            heldout_fraction: 0.2,
            out_dir: PathBuf::from("."),
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        check_fraction(self.heldout_fraction)?;
        self.fit_config().validate()
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            hyper: self.hyper,
            scaling: self.scaling,
            tol: self.tol,
            max_iters: self.max_iters,
            seed: self.seed,
            threads: self.threads,
            ..FitConfig::default()
        }
    }
}

fn check_fraction(f: f64) -> Result<()> {
    if (0.0..1.0).contains(&f) {
        Ok(())
    } else {
        Err(HdspError::Config(format!("heldout fraction must lie in [0, 1) (got {f})")))
    }
}

/// Seeded shuffle split: (training indices, held-out indices), each ascending.
pub fn split_indices(n: usize, heldout_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    check_fraction(heldout_fraction)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let heldout = ((heldout_fraction * n as f64).round() as usize).min(n);
    let (mut test, mut train) = (order[..heldout].to_vec(), order[heldout..].to_vec());
    if train.is_empty() {
        return Err(HdspError::Config(format!("no training documents left out of {n}")));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(HdspError::Config(format!("{THREADS_ENV} must be a positive integer (got `{v}`)"))),
        },
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    atomic_write(&dir.join(name), contents.as_bytes())
}

/// Parses arguments and runs one command. Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            return 2;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}: {}", e.category(), e.to_string().replace('\n', " "));
            1
        }
    }
}

fn run(command: Command) -> Result<()> {
    let threads = threads_from_env()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| HdspError::Config(format!("thread pool: {e}")))?;
    pool.install(|| match command {
        Command::Generate(a) => generate(&a),
        Command::Train(a) => train(&a, threads),
        Command::Evaluate(a) => evaluate(&a),
        Command::Classify(a) => classify(&a),
        Command::Export(a) => export(&a),
    })
}

fn generate(a: &GenerateArgs) -> Result<()> {
    let (corpus, truth) = match a.design {
        Design::Fixed | Design::Geometric => {
            let mut base = if a.design == Design::Fixed {
                SynthConfig::default()
            } else {
                GeometricConfig::default().base
            };
            base.num_docs = a.docs.unwrap_or(base.num_docs);
            base.num_topics = a.topics.unwrap_or(base.num_topics);
            base.vocab_size = a.vocab.unwrap_or(base.vocab_size);
            base.num_labels = a.labels.unwrap_or(base.num_labels);
            base.mean_length = a.mean_length.unwrap_or(base.mean_length);
            base.alpha = a.alpha;
            base.beta = a.beta;
            if a.design == Design::Fixed {
                synth::generate_fixed(&base, a.seed)?
            } else {
                let cfg = GeometricConfig {
                    base,
                    side: a.side,
                    ..GeometricConfig::default()
                };
                synth::generate_geometric(&cfg, a.seed)?
            }
        }
        Design::Mixed => {
            let d = MixedConfig::default();
            let cfg = MixedConfig {
                num_docs: a.docs.unwrap_or(d.num_docs),
                num_categories: a.categories,
                vocab_size: a.vocab.unwrap_or(d.vocab_size),
                mean_length: a.mean_length.unwrap_or(d.mean_length),
                alpha: a.alpha,
                beta: a.beta,
                ..d
            };
            synth::generate_mixed(&cfg, a.seed)?
        }
    };
    let dir = &a.out_dir;
    write(dir, "corpus.txt", &format_corpus(&corpus))?;
    write(dir, "vocab.txt", &format_vocab(&synthetic_vocab(corpus.vocab_size)))?;
    write(dir, "labels.txt", &format_labels(&corpus))?;
    write(dir, "truth.json", &to_canonical_string(&ground_truth_value(&truth)))
}

fn train(a: &TrainArgs, threads: Option<usize>) -> Result<()> {
    let m = &a.model;
    let config = RunConfig {
        scaling: m.scaling.into(),
        hyper: HyperParams {
            alpha: m.alpha,
            beta: m.beta,
            eta: m.eta,
            a_w: m.a_w,
            b_w: m.b_w,
            sigma: m.sigma,
            truncation: m.truncation,
        },
        tol: m.tol,
        max_iters: m.max_iters,
        seed: a.split.seed,
        heldout_fraction: a.split.heldout_fraction,
        out_dir: a.split.out_dir.clone(),
        threads,
    };
    config.validate()?;
    let corpus = load_corpus(&a.data.corpus, &a.data.vocab, a.data.labels.as_deref(), config.scaling)?;
    let (train_idx, _) = split_indices(corpus.len(), config.heldout_fraction, config.seed)?;
    let train = corpus.subset(&train_idx);
    let fitted = fit(&train, &config.fit_config())?;
    let snap = Snapshot::from_fit(fitted, &train);
    let mut trace = String::from("iteration,elbo\n");
    for (i, e) in snap.elbo_trace.iter().enumerate() {
        trace.push_str(&format!("{},{e:.17e}\n", i + 1));
    }
    snap.save(&config.out_dir.join("model.json"))?;
    write(&config.out_dir, "elbo_trace.csv", &trace)?;
    println!(
        "trained on {} documents: {} sweeps, converged {}, final elbo {:.10e}",
        train.len(),
        snap.stats.iterations,
        snap.stats.converged,
        snap.elbo_trace.last().copied().unwrap_or(snap.stats.initial_elbo)
    );
    Ok(())
}

/// Loads the snapshot and the held-out documents it was not trained on.
fn heldout(a: &EvalArgs) -> Result<(Snapshot, Corpus)> {
    let snap = Snapshot::load(&a.model)?;
    let kind = snap.model.kind();
    let corpus = load_corpus(&a.data.corpus, &a.data.vocab, a.data.labels.as_deref(), kind)?;
    if corpus.vocab_size != snap.model.global.vocab_size() || corpus.label_names != snap.label_names {
        return Err(HdspError::Incompatible("corpus vocabulary or label schema differs from the model's".into()));
    }
    let (_, test_idx) = split_indices(corpus.len(), a.split.heldout_fraction, a.split.seed)?;
    if test_idx.is_empty() {
        return Err(HdspError::Config("held-out split is empty".into()));
    }
    let test = corpus.subset(&test_idx);
    let trained: HashSet<&str> = snap.doc_ids.iter().map(String::as_str).collect();
    if let Some(d) = test.documents.iter().find(|d| trained.contains(d.id.as_str())) {
        return Err(HdspError::Validation(format!(
            "held-out document `{}` was used in training; pass the --seed and --heldout-fraction given to train",
            d.id
        )));
    }
    Ok((snap, test))
}

fn evaluate(a: &EvalArgs) -> Result<()> {
    let (snap, test) = heldout(a)?;
    let ev = Evaluator::new(&snap.model);
    let rows: Vec<(String, f64)> = test
        .documents
        .iter()
        .map(|d| Ok((d.id.clone(), ev.perplexity(d, &d.labels)?)))
        .collect::<Result<_>>()?;
    let labels: Vec<Vec<f64>> = test.documents.iter().map(|d| d.labels.clone()).collect();
    let total = ev.corpus_perplexity(&test.documents, &labels)?;
    write(&a.split.out_dir, "perplexity.csv", &eval::perplexity_csv(&rows)?)?;
    println!("held-out documents\t{}", test.len());
    println!("perplexity\t{total:.10e}");
    Ok(())
}

fn classify(a: &EvalArgs) -> Result<()> {
    let (snap, test) = heldout(a)?;
    if snap.model.kind() != ScalingKind::LogLinear || snap.label_names.is_empty() {
        return Err(HdspError::Config(
            "classify needs a log-linear model whose first label is the rating".into(),
        ));
    }
    let ev = Evaluator::new(&snap.model);
    let mut truths = Vec::new();
    let mut preds = Vec::new();
    let mut out = String::from("doc_id,true_rating,predicted_rating\n");
    for d in &test.documents {
        let truth = d.labels[0];
        if !RATING_GRID.contains(&truth) {
            return Err(HdspError::Validation(format!(
                "document `{}` has rating {truth}, expected an integer in 1..5",
                d.id
            )));
        }
        let pred = ev.classify_rating(d, &d.labels[1..], &RATING_GRID)?;
        out.push_str(&format!("{},{truth},{pred}\n", d.id));
        truths.push(truth);
        preds.push(pred);
    }
    let report = eval::classification_report(&preds, &truths, &RATING_GRID)?;
    let names: Vec<String> = RATING_GRID.iter().map(|r| r.to_string()).collect();
    let dir = &a.split.out_dir;
    write(dir, "predictions.csv", &out)?;
    write(dir, "confusion.csv", &eval::confusion_csv(&report, &names)?)?;
    write(dir, "f1.csv", &eval::f1_csv(&report, &names)?)?;
    println!("macro_f1\t{:.6}", report.macro_f1);
    println!("micro_f1\t{:.6}", report.micro_f1);
    Ok(())
}

fn export(a: &ExportArgs) -> Result<()> {
    let snap = Snapshot::load(&a.model)?;
    let vocab = io::parse_vocab(&io::read_text(&a.vocab)?, &a.vocab)?;
    let global = &snap.model.global;
    if vocab.len() != global.vocab_size() {
        return Err(HdspError::Incompatible(format!(
            "vocabulary has {} terms, model has {}",
            vocab.len(),
            global.vocab_size()
        )));
    }
    let weights = snap.model.scaling.weight_summary();
    let means = global.topic_means();
    let mut topics = String::from("topic");
    for t in &vocab {
        topics.push(',');
        topics.push_str(t);
    }
    topics.push('\n');
    for (k, row) in means.rows().into_iter().enumerate() {
        topics.push_str(&k.to_string());
        for x in row {
            topics.push_str(&format!(",{x:.17e}"));
        }
        topics.push('\n');
    }
    // After the topic update λ_k = η + expected counts, so the row excess is the word count.
    let excess = snap.model.hyper.eta * vocab.len() as f64;
    let counts: Vec<f64> = global
        .topic_dirichlet
        .rows()
        .into_iter()
        .map(|r| (r.sum() - excess).max(0.0))
        .collect();
    let dir = &a.out_dir;
    write(dir, "weights.csv", &eval::weights_csv(&weights, &snap.label_names)?)?;
    write(dir, "topics.csv", &topics)?;
    write(dir, "word_counts.csv", &eval::word_counts_csv(&counts)?)
}
