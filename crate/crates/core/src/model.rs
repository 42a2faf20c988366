//! Corpus and state types, the stick-breaking construction and the
//! variational moments shared by both scaling functions.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{HdspError, Result};
use crate::numerics::{lgamma, psi};

/// Lower clamp for corpus-level sticks during optimization.
pub const STICK_MIN: f64 = 1e-6;
/// Upper clamp for corpus-level sticks during optimization (the last stick is pinned to 1).
pub const STICK_MAX: f64 = 1.0 - 1e-6;
/// Floor on the gamma shape and rate of q(π).
pub const PI_PARAM_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalingKind {
    /// Product of per-label weights over observed binary labels, inverse-gamma prior.
    Categorical,
    /// exp(-w . r) over real-valued labels, normal prior.
    LogLinear,
}

impl fmt::Display for ScalingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScalingKind::Categorical => "categorical",
            ScalingKind::LogLinear => "loglinear",
        })
    }
}

impl FromStr for ScalingKind {
    type Err = HdspError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "categorical" => Ok(ScalingKind::Categorical),
            "loglinear" => Ok(ScalingKind::LogLinear),
            other => Err(HdspError::Config(format!(
                "unknown scaling function `{other}` (expected categorical or loglinear)"
            ))),
        }
    }
}

/// A bag-of-words document with its label vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    /// (word id, count) pairs sorted by word id, counts ≥ 1.
    pub tokens: Vec<(usize, u32)>,
    pub labels: Vec<f64>,
}

impl Document {
    pub fn new(id: impl Into<String>, counts: &BTreeMap<usize, u32>, labels: Vec<f64>) -> Self {
        Document {
            id: id.into(),
            tokens: counts
                .iter()
                .filter(|(_, &c)| c > 0)
                .map(|(&w, &c)| (w, c))
                .collect(),
            labels,
        }
    }

    /// N_m, the number of tokens.
    pub fn len(&self) -> u32 {
        self.tokens.iter().map(|&(_, c)| c).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_types(&self) -> usize {
        self.tokens.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub vocab_size: usize,
    pub label_names: Vec<String>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>, vocab_size: usize, label_names: Vec<String>) -> Result<Self> {
        let corpus = Corpus {
            documents,
            vocab_size,
            label_names,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn num_labels(&self) -> usize {
        self.label_names.len()
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn total_tokens(&self) -> u64 {
        self.documents.iter().map(|d| d.len() as u64).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(HdspError::Validation("vocabulary is empty".into()));
        }
        let j = self.num_labels();
        let mut empty = Vec::new();
        for doc in &self.documents {
            if doc.is_empty() {
                empty.push(doc.id.clone());
                continue;
            }
            let mut prev = None;
            for &(w, c) in &doc.tokens {
                if w >= self.vocab_size {
                    return Err(HdspError::Validation(format!(
                        "document `{}` has word id {w} outside vocabulary of size {}",
                        doc.id, self.vocab_size
                    )));
                }
                if c == 0 || prev.is_some_and(|p| p >= w) {
                    return Err(HdspError::Validation(format!(
                        "document `{}` has unsorted, duplicate or zero-count tokens",
                        doc.id
                    )));
                }
                prev = Some(w);
            }
            if doc.labels.len() != j {
                return Err(HdspError::Validation(format!(
                    "document `{}` has {} label values, schema has {j}",
                    doc.id,
                    doc.labels.len()
                )));
            }
            if let Some(v) = doc.labels.iter().find(|v| !v.is_finite()) {
                return Err(HdspError::Validation(format!(
                    "document `{}` has non-finite label value {v}",
                    doc.id
                )));
            }
        }
        if !empty.is_empty() {
            return Err(HdspError::Validation(format!(
                "documents without tokens: {}",
                empty.join(", ")
            )));
        }
        Ok(())
    }

    /// Checks that every label value is 0 or 1, as the categorical scaling requires.
    pub fn check_binary_labels(&self) -> Result<()> {
        for doc in &self.documents {
            for (j, &v) in doc.labels.iter().enumerate() {
                if v != 0.0 && v != 1.0 {
                    return Err(HdspError::Validation(format!(
                        "document `{}`: label `{}` = {v} is not binary",
                        doc.id, self.label_names[j]
                    )));
                }
            }
        }
        Ok(())
    }

    /// A corpus over the same vocabulary and schema holding only the selected documents.
    pub fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            documents: indices.iter().map(|&i| self.documents[i].clone()).collect(),
            vocab_size: self.vocab_size,
            label_names: self.label_names.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub alpha: f64,
    pub beta: f64,
    /// Symmetric Dirichlet parameter of the topics.
    pub eta: f64,
    pub a_w: f64,
    pub b_w: f64,
    /// Variance of the normal prior on log-linear weights.
    pub sigma: f64,
    pub truncation: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            alpha: 1.0,
            beta: 1.0,
            eta: 0.5,
            a_w: 1.0,
            b_w: 1.0,
            sigma: 1.0,
            truncation: 200,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("eta", self.eta),
            ("a_w", self.a_w),
            ("b_w", self.b_w),
            ("sigma", self.sigma),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(HdspError::Config(format!("{name} must be finite and > 0 (got {v})")));
            }
        }
        if self.truncation < 2 {
            return Err(HdspError::Config(format!(
                "truncation must be at least 2 (got {})",
                self.truncation
            )));
        }
        Ok(())
    }
}

/// p_k = V_k Π_{j<k} (1 − V_j). The last stick must be exactly 1.
pub fn stick_breaking(sticks: &[f64]) -> Result<Vec<f64>> {
    if sticks.is_empty() {
        return Err(HdspError::Domain("no sticks".into()));
    }
    if let Some(v) = sticks.iter().find(|&&v| !(v > 0.0 && v <= 1.0)) {
        return Err(HdspError::Domain(format!("stick {v} outside (0, 1]")));
    }
    if *sticks.last().unwrap() != 1.0 {
        return Err(HdspError::Domain("last stick must equal 1".into()));
    }
    Ok(stick_weights(sticks))
}

pub(crate) fn stick_weights(sticks: &[f64]) -> Vec<f64> {
    let mut rest = 1.0;
    sticks
        .iter()
        .map(|&v| {
            let p = v * rest;
            rest *= 1.0 - v;
            p
        })
        .collect()
}

/// Normalizes positive gamma weights into a probability vector.
pub fn normalize_measure(pi: &[f64]) -> Result<Vec<f64>> {
    if pi.is_empty() {
        return Err(HdspError::Domain("empty measure".into()));
    }
    if let Some(x) = pi.iter().find(|&&x| !(x.is_finite() && x > 0.0)) {
        return Err(HdspError::Domain(format!("measure weight {x} is not positive")));
    }
    let total: f64 = pi.iter().sum();
    Ok(pi.iter().map(|x| x / total).collect())
}

/// Gamma(shape, rate) variational factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl GammaParams {
    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn log_mean(&self) -> f64 {
        psi(self.shape) - self.rate.ln()
    }

    pub fn entropy(&self) -> f64 {
        self.shape - self.rate.ln() + lgamma(self.shape) + (1.0 - self.shape) * psi(self.shape)
    }
}

/// InvGamma(shape, scale) variational factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvGammaParams {
    pub shape: f64,
    pub scale: f64,
}

impl InvGammaParams {
    /// E[w]; only defined for shape > 1.
    pub fn mean(&self) -> Result<f64> {
        if self.shape > 1.0 {
            Ok(self.scale / (self.shape - 1.0))
        } else {
            Err(HdspError::UndefinedMoment(format!(
                "inverse-gamma mean needs shape > 1 (shape = {})",
                self.shape
            )))
        }
    }

    /// E[1/w]
    pub fn inv_mean(&self) -> f64 {
        self.shape / self.scale
    }

    /// E[ln w]
    pub fn log_mean(&self) -> f64 {
        self.scale.ln() - psi(self.shape)
    }

    /// E[w] when it exists, otherwise 1 / E[1/w].
    pub fn point_summary(&self) -> f64 {
        self.mean().unwrap_or(self.scale / self.shape)
    }

    pub fn entropy(&self) -> f64 {
        self.shape + self.scale.ln() + lgamma(self.shape) - (1.0 + self.shape) * psi(self.shape)
    }
}

/// E[ln φ_ki] = ψ(η_ki) − ψ(Σ_i η_ki) for one topic row.
pub fn dirichlet_log_expectation(row: ArrayView1<f64>) -> Vec<f64> {
    let total = psi(row.sum());
    row.iter().map(|&x| psi(x) - total).collect()
}

/// Row-wise E[ln φ] for a matrix of Dirichlet parameters.
pub fn dirichlet_log_expectations(params: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(params.raw_dim());
    for (k, row) in params.rows().into_iter().enumerate() {
        for (i, v) in dirichlet_log_expectation(row).into_iter().enumerate() {
            out[[k, i]] = v;
        }
    }
    out
}

/// Corpus-level variational state: delta sticks and topic Dirichlets.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState {
    sticks: Vec<f64>,
    weights: Vec<f64>,
    /// T × I variational Dirichlet parameters.
    pub topic_dirichlet: Array2<f64>,
}

impl GlobalState {
    pub fn new(sticks: Vec<f64>, topic_dirichlet: Array2<f64>) -> Result<Self> {
        if sticks.len() != topic_dirichlet.nrows() {
            return Err(HdspError::Dimension(format!(
                "{} sticks but {} topics",
                sticks.len(),
                topic_dirichlet.nrows()
            )));
        }
        let weights = stick_breaking(&sticks)?;
        if let Some(x) = topic_dirichlet.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
            return Err(HdspError::Domain(format!("topic Dirichlet parameter {x} not positive")));
        }
        Ok(GlobalState {
            sticks,
            weights,
            topic_dirichlet,
        })
    }

    pub fn num_topics(&self) -> usize {
        self.sticks.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.topic_dirichlet.ncols()
    }

    pub fn sticks(&self) -> &[f64] {
        &self.sticks
    }

    /// Corpus-level topic weights p.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Replaces the sticks; the last entry is forced to 1.
    pub fn set_sticks(&mut self, mut sticks: Vec<f64>) {
        assert_eq!(sticks.len(), self.sticks.len());
        *sticks.last_mut().unwrap() = 1.0;
        self.weights = stick_weights(&sticks);
        self.sticks = sticks;
    }

    /// E[ln φ] as a T × I matrix.
    pub fn log_topic_expectations(&self) -> Array2<f64> {
        dirichlet_log_expectations(&self.topic_dirichlet)
    }

    /// Variational mean of each topic, E[φ_k].
    pub fn topic_means(&self) -> Array2<f64> {
        let mut out = self.topic_dirichlet.clone();
        for mut row in out.rows_mut() {
            let s = row.sum();
            row /= s;
        }
        out
    }
}

/// Per-document variational state.
#[derive(Debug, Clone, PartialEq)]
pub struct DocState {
    pub a_pi: Vec<f64>,
    pub b_pi: Vec<f64>,
    /// One row per distinct word type of the document, T columns.
    pub resp: Array2<f64>,
    /// Taylor anchor for E[ln Σ_k π_mk].
    pub xi: f64,
}

impl DocState {
    pub fn num_topics(&self) -> usize {
        self.a_pi.len()
    }

    pub fn pi(&self, k: usize) -> GammaParams {
        GammaParams {
            shape: self.a_pi[k],
            rate: self.b_pi[k],
        }
    }

    pub fn mean_pi(&self, k: usize) -> f64 {
        self.a_pi[k] / self.b_pi[k]
    }

    pub fn log_pi(&self, k: usize) -> f64 {
        psi(self.a_pi[k]) - self.b_pi[k].ln()
    }

    /// Σ_k E[π_mk], the value the Taylor anchor is refreshed to.
    pub fn expected_total(&self) -> f64 {
        (0..self.num_topics()).map(|k| self.mean_pi(k)).sum()
    }

    pub fn expectations(&self) -> DocExpectations {
        let t = self.num_topics();
        DocExpectations {
            mean_pi: (0..t).map(|k| self.mean_pi(k)).collect(),
            log_pi: (0..t).map(|k| self.log_pi(k)).collect(),
        }
    }

    /// Token-weighted responsibility mass per topic for this document.
    pub fn topic_counts(&self, doc: &Document) -> Vec<f64> {
        let mut out = vec![0.0; self.num_topics()];
        for (row, &(_, c)) in self.resp.rows().into_iter().zip(&doc.tokens) {
            for (o, g) in out.iter_mut().zip(row) {
                *o += c as f64 * g;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocExpectations {
    pub mean_pi: Vec<f64>,
    pub log_pi: Vec<f64>,
}
