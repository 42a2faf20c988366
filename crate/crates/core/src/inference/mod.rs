//! Coordinate-ascent variational inference.
//!
//! One sweep runs the document phase (γ, then ξ, then q(π) for every
//! document, in parallel against a frozen snapshot of the corpus-level
//! state) followed by the corpus phase (scaling weights, sticks, topic
//! Dirichlets, then α and β). Every step is either an exact coordinate
//! maximizer or a line search that refuses to lower the bound, so the
//! surrogate ELBO never decreases from one sweep to the next.

mod elbo;
mod init;
mod sticks;

pub use elbo::{compute_elbo, elbo_terms, ElboTerms};
pub use init::{initialize, lda_warm_start, random_topics, sort_topics_by_count, state_from_topics};
pub use sticks::{optimize_hyperparameters, update_sticks, StickObjective, StickOutcome};

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{HdspError, Result};
use crate::model::{Corpus, DocState, Document, GlobalState, HyperParams, ScalingKind, PI_PARAM_FLOOR};
use crate::numerics::log_normalize_in_place;
use crate::scaling::{update_w_categorical, update_w_loglinear, NewtonConfig, ScalingState};

/// Smallest concentration βp_k handed to ln Γ and ψ.
const MIN_CONCENTRATION: f64 = 1e-300;

/// βp_k for every topic, floored away from zero.
pub(crate) fn concentrations(beta: f64, weights: &[f64]) -> Vec<f64> {
    weights.iter().map(|&p| (beta * p).max(MIN_CONCENTRATION)).collect()
}

/// Corpus-level state: hyperparameters, sticks and topics, scaling weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub hyper: HyperParams,
    pub global: GlobalState,
    pub scaling: ScalingState,
}

impl Model {
    pub fn kind(&self) -> ScalingKind {
        self.scaling.kind()
    }

    pub fn num_topics(&self) -> usize {
        self.global.num_topics()
    }

    pub fn concentrations(&self) -> Vec<f64> {
        concentrations(self.hyper.beta, self.global.weights())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub hyper: HyperParams,
    pub scaling: ScalingKind,
    /// Stop once |ΔELBO / ELBO| falls below this.
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub newton: NewtonConfig,
    /// Passes over (k, j) for the categorical weights per sweep.
    pub w_sweeps: usize,
    /// Steepest-ascent steps on V per sweep.
    pub stick_steps: usize,
    pub optimize_hyper: bool,
    pub warm_start_sweeps: usize,
    /// γ/π passes per document in each document phase.
    pub local_passes: usize,
    /// Document-phase worker count; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            hyper: HyperParams::default(),
            scaling: ScalingKind::Categorical,
            tol: 1e-3,
            max_iters: 1000,
            seed: 0,
            newton: NewtonConfig::default(),
            w_sweeps: 1,
            stick_steps: 5,
            optimize_hyper: true,
            warm_start_sweeps: 3,
            local_passes: 1,
            threads: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if !(self.tol >= 0.0) {
            return Err(HdspError::Config(format!("tol must be ≥ 0 (got {})", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(HdspError::Config("max_iters must be ≥ 1".into()));
        }
        if self.local_passes == 0 {
            return Err(HdspError::Config("local_passes must be ≥ 1".into()));
        }
        if self.threads == Some(0) {
            return Err(HdspError::Config("thread count must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitStats {
    pub iterations: usize,
    pub converged: bool,
    pub initial_elbo: f64,
    /// Sweeps whose stick line search could not improve the bound.
    pub stick_stalls: usize,
    /// Newton solves that stopped before reaching the gradient tolerance.
    pub newton_failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fitted {
    pub model: Model,
    pub docs: Vec<DocState>,
    /// Bound after each sweep.
    pub elbo_trace: Vec<f64>,
    pub stats: FitStats,
}

/// γ_mik ∝ exp(E[ln φ_ki] + E[ln π_mk]) for every word type i of the document.
pub fn update_gamma(doc: &Document, st: &mut DocState, log_topics: &Array2<f64>) {
    let t = st.num_topics();
    let log_pi: Vec<f64> = (0..t).map(|k| st.log_pi(k)).collect();
    for (mut row, &(w, _)) in st.resp.rows_mut().into_iter().zip(&doc.tokens) {
        let slice = row.as_slice_mut().expect("standard layout");
        for k in 0..t {
            slice[k] = log_topics[[k, w]] + log_pi[k];
        }
        log_normalize_in_place(slice);
    }
}

/// Refreshes ξ_m = Σ_k E[π_mk] from the current q(π), then sets
/// a_mk = βp_k + Σ_i c_i γ_mik and b_mk = E[1/s_k(r_m)] + N_m / ξ_m.
pub fn update_pi(doc: &Document, st: &mut DocState, beta_p: &[f64], scaling: &ScalingState) {
    let t = st.num_topics();
    st.xi = st.expected_total();
    let counts = st.topic_counts(doc);
    let mut rate = vec![0.0; t];
    let mut log_rate = vec![0.0; t];
    scaling.rate_moments(&doc.labels, &mut rate, &mut log_rate);
    let load = doc.len() as f64 / st.xi;
    for k in 0..t {
        st.a_pi[k] = (beta_p[k] + counts[k]).max(PI_PARAM_FLOOR);
        st.b_pi[k] = (rate[k] + load).max(PI_PARAM_FLOOR);
    }
}

/// One document-phase pass over every document.
pub fn document_phase(model: &Model, docs: &mut [DocState], corpus: &Corpus, passes: usize) {
    let log_topics = model.global.log_topic_expectations();
    let beta_p = model.concentrations();
    docs.par_iter_mut()
        .zip(corpus.documents.par_iter())
        .for_each(|(st, doc)| {
            for _ in 0..passes {
                update_gamma(doc, st, &log_topics);
                update_pi(doc, st, &beta_p, &model.scaling);
            }
        });
}

/// Updates every scaling weight. Returns the number of Newton solves that
/// stopped short of the gradient tolerance (their last iterate is kept).
pub fn update_scaling(
    model: &mut Model,
    docs: &[DocState],
    corpus: &Corpus,
    newton: NewtonConfig,
    w_sweeps: usize,
) -> Result<usize> {
    let beta_p = model.concentrations();
    let hyper = model.hyper;
    let mut failures = 0;
    match &mut model.scaling {
        ScalingState::Categorical(state) => {
            for k in 0..state.shape.nrows() {
                for _ in 0..w_sweeps {
                    for j in 0..state.shape.ncols() {
                        let q = update_w_categorical(k, j, beta_p[k], state, docs, corpus, &hyper);
                        state.shape[[k, j]] = q.shape;
                        state.scale[[k, j]] = q.scale;
                    }
                }
            }
        }
        ScalingState::LogLinear(state) => {
            let rows: Vec<Result<Vec<f64>>> = (0..state.weights.nrows())
                .into_par_iter()
                .map(|k| update_w_loglinear(k, beta_p[k], state, docs, corpus, newton))
                .collect();
            for (k, row) in rows.into_iter().enumerate() {
                let row = match row {
                    Ok(row) => row,
                    Err(HdspError::Convergence { last, .. }) => {
                        failures += 1;
                        last
                    }
                    Err(e) => return Err(e),
                };
                for (j, w) in row.into_iter().enumerate() {
                    state.weights[[k, j]] = w;
                }
            }
        }
    }
    Ok(failures)
}

/// η_ki = η + Σ_m Σ_n γ_mnk 1(x_mn = i).
pub fn update_eta(global: &mut GlobalState, eta: f64, docs: &[DocState], corpus: &Corpus) {
    let topics = &mut global.topic_dirichlet;
    topics.fill(eta);
    for (doc, st) in corpus.documents.iter().zip(docs) {
        for (row, &(w, c)) in st.resp.rows().into_iter().zip(&doc.tokens) {
            for (k, &g) in row.iter().enumerate() {
                topics[[k, w]] += c as f64 * g;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct SweepReport {
    stick_stalled: bool,
    newton_failures: usize,
}

fn sweep(model: &mut Model, docs: &mut [DocState], corpus: &Corpus, config: &FitConfig) -> Result<SweepReport> {
    document_phase(model, docs, corpus, config.local_passes);
    let newton_failures = update_scaling(model, docs, corpus, config.newton, config.w_sweeps)?;
    let outcome = update_sticks(model, docs, corpus, config.stick_steps);
    update_eta(&mut model.global, model.hyper.eta, docs, corpus);
    if config.optimize_hyper {
        optimize_hyperparameters(model, docs, corpus);
    }
    Ok(SweepReport {
        stick_stalled: outcome == StickOutcome::Stalled,
        newton_failures,
    })
}

/// Path of the first non-finite parameter, if any.
pub fn find_non_finite(model: &Model, docs: &[DocState]) -> Option<String> {
    let first_bad = |xs: &[f64]| xs.iter().position(|x| !x.is_finite());
    if let Some(k) = first_bad(model.global.sticks()) {
        return Some(format!("global.sticks[{k}]"));
    }
    if let Some(((k, i), _)) = model.global.topic_dirichlet.indexed_iter().find(|(_, x)| !x.is_finite()) {
        return Some(format!("global.topic_dirichlet[{k},{i}]"));
    }
    for (name, v) in [("alpha", model.hyper.alpha), ("beta", model.hyper.beta)] {
        if !v.is_finite() {
            return Some(format!("hyper.{name}"));
        }
    }
    let matrices: Vec<(&str, &Array2<f64>)> = match &model.scaling {
        ScalingState::Categorical(s) => vec![("scaling.shape", &s.shape), ("scaling.scale", &s.scale)],
        ScalingState::LogLinear(s) => vec![("scaling.weights", &s.weights)],
    };
    for (name, m) in matrices {
        if let Some(((k, j), _)) = m.indexed_iter().find(|(_, x)| !x.is_finite()) {
            return Some(format!("{name}[{k},{j}]"));
        }
    }
    for (m, st) in docs.iter().enumerate() {
        if let Some(k) = first_bad(&st.a_pi) {
            return Some(format!("docs[{m}].a_pi[{k}]"));
        }
        if let Some(k) = first_bad(&st.b_pi) {
            return Some(format!("docs[{m}].b_pi[{k}]"));
        }
        if !st.xi.is_finite() {
            return Some(format!("docs[{m}].xi"));
        }
        if let Some(((i, k), _)) = st.resp.indexed_iter().find(|(_, x)| !x.is_finite()) {
            return Some(format!("docs[{m}].resp[{i},{k}]"));
        }
    }
    None
}

fn check_corpus(corpus: &Corpus, config: &FitConfig) -> Result<()> {
    config.validate()?;
    corpus.validate()?;
    if config.scaling == ScalingKind::Categorical {
        corpus.check_binary_labels()?;
    }
    Ok(())
}

/// Fits the model from the standard initialization.
pub fn fit(corpus: &Corpus, config: &FitConfig) -> Result<Fitted> {
    check_corpus(corpus, config)?;
    with_pool(config.threads, || {
        let (model, docs) = initialize(corpus, config);
        run(corpus, config, model, docs)
    })
}

/// Continues coordinate ascent from a given state.
pub fn fit_from(corpus: &Corpus, config: &FitConfig, model: Model, docs: Vec<DocState>) -> Result<Fitted> {
    check_corpus(corpus, config)?;
    if docs.len() != corpus.len() {
        return Err(HdspError::Dimension(format!(
            "{} document states for {} documents",
            docs.len(),
            corpus.len()
        )));
    }
    if let Some(path) = find_non_finite(&model, &docs) {
        return Err(HdspError::NonFinite { iteration: 0, path });
    }
    with_pool(config.threads, || run(corpus, config, model, docs))
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool")
            .install(f),
        None => f(),
    }
}

fn run(corpus: &Corpus, config: &FitConfig, mut model: Model, mut docs: Vec<DocState>) -> Result<Fitted> {
    let mut stats = FitStats {
        initial_elbo: compute_elbo(&model, &docs, corpus)?,
        ..FitStats::default()
    };
    let mut previous = stats.initial_elbo;
    let mut trace = Vec::new();
    for iteration in 1..=config.max_iters {
        let report = sweep(&mut model, &mut docs, corpus, config)?;
        stats.iterations = iteration;
        stats.stick_stalls += report.stick_stalled as usize;
        stats.newton_failures += report.newton_failures;
        if let Some(path) = find_non_finite(&model, &docs) {
            return Err(HdspError::NonFinite { iteration, path });
        }
        let elbo = compute_elbo(&model, &docs, corpus)?;
        trace.push(elbo);
        let change = ((elbo - previous) / elbo).abs();
        previous = elbo;
        if change < config.tol {
            stats.converged = true;
            break;
        }
    }
    Ok(Fitted {
        model,
        docs,
        elbo_trace: trace,
        stats,
    })
}
