//! The surrogate lower bound, broken down by term.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{HdspError, Result};
use crate::inference::{concentrations, Model};
use crate::model::{Corpus, DocState, Document};
use crate::numerics::lgamma;
use crate::scaling::ScalingState;

/// Every term of the bound. `assignments` carries the first-order Taylor
/// surrogate of −E[ln Σ_k π_mk] anchored at ξ_m.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ElboTerms {
    pub words: f64,
    pub assignments: f64,
    pub proportions: f64,
    pub sticks: f64,
    pub scaling_prior: f64,
    pub topics: f64,
    pub entropy_assignments: f64,
    pub entropy_proportions: f64,
    pub entropy_scaling: f64,
    pub entropy_topics: f64,
}

impl ElboTerms {
    pub fn total(&self) -> f64 {
        self.named().iter().map(|(_, v)| v).sum()
    }

    fn named(&self) -> [(&'static str, f64); 10] {
        [
            ("words", self.words),
            ("assignments", self.assignments),
            ("proportions", self.proportions),
            ("sticks", self.sticks),
            ("scaling_prior", self.scaling_prior),
            ("topics", self.topics),
            ("entropy_assignments", self.entropy_assignments),
            ("entropy_proportions", self.entropy_proportions),
            ("entropy_scaling", self.entropy_scaling),
            ("entropy_topics", self.entropy_topics),
        ]
    }

    /// The total, or the name of the first non-finite term.
    pub fn checked_total(&self) -> Result<f64> {
        for (name, v) in self.named() {
            if !v.is_finite() {
                return Err(HdspError::Numerical(name));
            }
        }
        Ok(self.total())
    }
}

#[derive(Default, Clone, Copy)]
struct DocTerms {
    words: f64,
    assignments: f64,
    proportions: f64,
    entropy_assignments: f64,
    entropy_proportions: f64,
}

fn doc_terms(
    doc: &Document,
    st: &DocState,
    log_topics: &Array2<f64>,
    beta_p: &[f64],
    lgamma_beta_p: &[f64],
    scaling: &ScalingState,
) -> DocTerms {
    let t = beta_p.len();
    let mut out = DocTerms::default();
    let mut counts = vec![0.0; t];
    for (row, &(w, c)) in st.resp.rows().into_iter().zip(&doc.tokens) {
        let c = c as f64;
        for (k, &g) in row.iter().enumerate() {
            if g > 0.0 {
                out.words += c * g * log_topics[[k, w]];
                out.entropy_assignments -= c * g * g.ln();
                counts[k] += c * g;
            }
        }
    }

    let mut rate = vec![0.0; t];
    let mut log_rate = vec![0.0; t];
    scaling.rate_moments(&doc.labels, &mut rate, &mut log_rate);

    let n = doc.len() as f64;
    let mut total_mean = 0.0;
    for k in 0..t {
        let q = st.pi(k);
        let mean = q.mean();
        let log_mean = q.log_mean();
        total_mean += mean;
        out.assignments += counts[k] * log_mean;
        out.proportions += beta_p[k] * log_rate[k] - lgamma_beta_p[k] + (beta_p[k] - 1.0) * log_mean
            - rate[k] * mean;
        out.entropy_proportions += q.entropy();
    }
    out.assignments -= n * (st.xi.ln() + (total_mean - st.xi) / st.xi);
    out
}

/// Evaluates every term of the bound for the current state.
pub fn elbo_terms(model: &Model, docs: &[DocState], corpus: &Corpus) -> ElboTerms {
    let hyper = &model.hyper;
    let global = &model.global;
    let t = global.num_topics();
    let vocab = global.vocab_size() as f64;
    let log_topics = global.log_topic_expectations();
    let beta_p = concentrations(hyper.beta, global.weights());
    let lgamma_beta_p: Vec<f64> = beta_p.iter().map(|&x| lgamma(x)).collect();

    let per_doc: Vec<DocTerms> = corpus
        .documents
        .par_iter()
        .zip(docs.par_iter())
        .map(|(doc, st)| doc_terms(doc, st, &log_topics, &beta_p, &lgamma_beta_p, &model.scaling))
        .collect();

    let mut terms = ElboTerms::default();
    for d in &per_doc {
        terms.words += d.words;
        terms.assignments += d.assignments;
        terms.proportions += d.proportions;
        terms.entropy_assignments += d.entropy_assignments;
        terms.entropy_proportions += d.entropy_proportions;
    }

    let sticks = global.sticks();
    terms.sticks = sticks[..t - 1]
        .iter()
        .map(|&v| hyper.alpha.ln() + (hyper.alpha - 1.0) * (1.0 - v).ln())
        .sum();

    let topic_norm = lgamma(vocab * hyper.eta) - vocab * lgamma(hyper.eta);
    for (lambda, elog) in global.topic_dirichlet.rows().into_iter().zip(log_topics.rows()) {
        terms.topics += topic_norm + (hyper.eta - 1.0) * elog.sum();
        terms.entropy_topics += -lgamma(lambda.sum())
            + lambda
                .iter()
                .zip(elog)
                .map(|(&l, &e)| lgamma(l) - (l - 1.0) * e)
                .sum::<f64>();
    }

    match &model.scaling {
        ScalingState::Categorical(s) => {
            let (a0, b0) = (hyper.a_w, hyper.b_w);
            let norm = a0 * b0.ln() - lgamma(a0);
            for k in 0..s.shape.nrows() {
                for j in 0..s.shape.ncols() {
                    let q = s.factor(k, j);
                    terms.scaling_prior += norm - (a0 + 1.0) * q.log_mean() - b0 * q.inv_mean();
                    terms.entropy_scaling += q.entropy();
                }
            }
        }
        ScalingState::LogLinear(s) => {
            let norm = -0.5 * (2.0 * std::f64::consts::PI * s.sigma).ln();
            terms.scaling_prior = s.weights.iter().map(|w| norm - w * w / (2.0 * s.sigma)).sum();
        }
    }
    terms
}

/// The surrogate lower bound; fails naming the first non-finite term.
pub fn compute_elbo(model: &Model, docs: &[DocState], corpus: &Corpus) -> Result<f64> {
    elbo_terms(model, docs, corpus).checked_total()
}
