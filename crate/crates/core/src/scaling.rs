//! Label scaling functions, their variational states and updates.
//!
//! A topic's gamma weight in document m is Gamma(βp_k, rate) with
//! rate = 1 / s_k(r_m). The categorical function uses s = Π_j w_kj^{r_mj}
//! with inverse-gamma weights; the log-linear function uses
//! s = exp(−w_k · r_m) with a normal prior and point estimates.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

use crate::error::{HdspError, Result};
use crate::model::{Corpus, DocState, HyperParams, InvGammaParams, ScalingKind};

/// Largest |w · r| accepted before exp overflows to something unusable.
pub const MAX_EXPONENT: f64 = 700.0;

/// q(w_kj) = InvGamma(shape_kj, scale_kj), one entry per topic and label.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalScalingState {
    pub shape: Array2<f64>,
    pub scale: Array2<f64>,
}

impl CategoricalScalingState {
    pub fn prior(num_topics: usize, num_labels: usize, a_w: f64, b_w: f64) -> Self {
        CategoricalScalingState {
            shape: Array2::from_elem((num_topics, num_labels), a_w),
            scale: Array2::from_elem((num_topics, num_labels), b_w),
        }
    }

    pub fn factor(&self, k: usize, j: usize) -> InvGammaParams {
        InvGammaParams {
            shape: self.shape[[k, j]],
            scale: self.scale[[k, j]],
        }
    }
}

/// Delta q(w_kj) with a N(0, σ) prior.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLinearScalingState {
    pub weights: Array2<f64>,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScalingState {
    Categorical(CategoricalScalingState),
    LogLinear(LogLinearScalingState),
}

/// Moments of a topic's scaling weight for a given label vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingMoments {
    /// E[s]
    pub mean: f64,
    /// E[ln s]
    pub log_mean: f64,
    /// E[1/s], the expected gamma rate.
    pub inv_mean: f64,
}

/// Π_j w_j^{r_j} for binary r.
pub fn scale_categorical(w_row: &[f64], r: &[f64]) -> Result<f64> {
    check_len(w_row, r)?;
    let mut s = 1.0;
    for (&w, &rj) in w_row.iter().zip(r) {
        if rj == 1.0 {
            s *= w;
        } else if rj != 0.0 {
            return Err(HdspError::Domain(format!("categorical label value {rj} is not binary")));
        }
    }
    Ok(s)
}

/// exp(−Σ_j w_j r_j).
pub fn scale_loglinear(w_row: &[f64], r: &[f64]) -> Result<f64> {
    check_len(w_row, r)?;
    Ok((-checked_dot(w_row, r)?).exp())
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(HdspError::Dimension(format!("{} weights for {} labels", a.len(), b.len())))
    }
}

fn checked_dot(w: &[f64], r: &[f64]) -> Result<f64> {
    let x: f64 = w.iter().zip(r).map(|(a, b)| a * b).sum();
    if x.abs() > MAX_EXPONENT || !x.is_finite() {
        Err(HdspError::Saturation(x))
    } else {
        Ok(x)
    }
}

impl ScalingState {
    /// State at prior values: (a_w, b_w) for categorical, w = 0 for log-linear.
    pub fn prior(kind: ScalingKind, num_topics: usize, num_labels: usize, hyper: &HyperParams) -> Self {
        match kind {
            ScalingKind::Categorical => ScalingState::Categorical(CategoricalScalingState::prior(
                num_topics, num_labels, hyper.a_w, hyper.b_w,
            )),
            ScalingKind::LogLinear => ScalingState::LogLinear(LogLinearScalingState {
                weights: Array2::zeros((num_topics, num_labels)),
                sigma: hyper.sigma,
            }),
        }
    }

    pub fn kind(&self) -> ScalingKind {
        match self {
            ScalingState::Categorical(_) => ScalingKind::Categorical,
            ScalingState::LogLinear(_) => ScalingKind::LogLinear,
        }
    }

    pub fn num_topics(&self) -> usize {
        match self {
            ScalingState::Categorical(s) => s.shape.nrows(),
            ScalingState::LogLinear(s) => s.weights.nrows(),
        }
    }

    pub fn num_labels(&self) -> usize {
        match self {
            ScalingState::Categorical(s) => s.shape.ncols(),
            ScalingState::LogLinear(s) => s.weights.ncols(),
        }
    }

    /// (E[s], E[ln s], E[1/s]) for topic k under labels r.
    pub fn expected_scaling(&self, k: usize, r: &[f64]) -> Result<ScalingMoments> {
        if r.len() != self.num_labels() {
            return Err(HdspError::Dimension(format!(
                "{} label values, model has {} labels",
                r.len(),
                self.num_labels()
            )));
        }
        match self {
            ScalingState::Categorical(s) => {
                let mut m = ScalingMoments {
                    mean: 1.0,
                    log_mean: 0.0,
                    inv_mean: 1.0,
                };
                for (j, &rj) in r.iter().enumerate() {
                    if rj == 0.0 {
                        continue;
                    }
                    if rj != 1.0 {
                        return Err(HdspError::Domain(format!(
                            "categorical label value {rj} is not binary"
                        )));
                    }
                    let q = s.factor(k, j);
                    m.mean *= q.point_summary();
                    m.log_mean += q.log_mean();
                    m.inv_mean *= q.inv_mean();
                }
                Ok(m)
            }
            ScalingState::LogLinear(s) => {
                let row = s.weights.row(k);
                let x = checked_dot(row.as_slice().expect("standard layout"), r)?;
                Ok(ScalingMoments {
                    mean: (-x).exp(),
                    log_mean: -x,
                    inv_mean: x.exp(),
                })
            }
        }
    }

    /// (E[rate], E[ln rate]) for every topic, rate = 1/s. Used on the hot path,
    /// where labels have already been validated.
    pub(crate) fn rate_moments(&self, r: &[f64], mean: &mut [f64], log_mean: &mut [f64]) {
        match self {
            ScalingState::Categorical(s) => {
                for k in 0..s.shape.nrows() {
                    let mut e = 1.0;
                    let mut l = 0.0;
                    for (j, &rj) in r.iter().enumerate() {
                        if rj != 0.0 {
                            let q = s.factor(k, j);
                            e *= q.inv_mean();
                            l -= q.log_mean();
                        }
                    }
                    mean[k] = e;
                    log_mean[k] = l;
                }
            }
            ScalingState::LogLinear(s) => {
                for (k, row) in s.weights.rows().into_iter().enumerate() {
                    let x: f64 = row.iter().zip(r).map(|(w, v)| w * v).sum();
                    mean[k] = x.exp();
                    log_mean[k] = x;
                }
            }
        }
    }

    /// Point summary of every w_kj (T × J), for export and recovery metrics.
    pub fn weight_summary(&self) -> Array2<f64> {
        match self {
            ScalingState::Categorical(s) => {
                let mut out = Array2::zeros(s.shape.raw_dim());
                for ((k, j), o) in out.indexed_iter_mut() {
                    *o = s.factor(k, j).point_summary();
                }
                out
            }
            ScalingState::LogLinear(s) => s.weights.clone(),
        }
    }
}

/// Closed-form q(w_kj) update for the categorical scaling function.
///
/// shape' = βp_k Σ_m r_mj + a_w,
/// scale' = Σ_{m: r_mj = 1} Π_{j' ≠ j, r_mj' = 1} E[1/w_kj'] E[π_mk] + b_w.
pub fn update_w_categorical(
    k: usize,
    j: usize,
    beta_p: f64,
    state: &CategoricalScalingState,
    docs: &[DocState],
    corpus: &Corpus,
    hyper: &HyperParams,
) -> InvGammaParams {
    let mut observed = 0.0;
    let mut scale = 0.0;
    for (doc, st) in corpus.documents.iter().zip(docs) {
        if doc.labels[j] != 1.0 {
            continue;
        }
        observed += 1.0;
        let mut others = 1.0;
        for (jj, &r) in doc.labels.iter().enumerate() {
            if jj != j && r == 1.0 {
                others *= state.factor(k, jj).inv_mean();
            }
        }
        scale += others * st.mean_pi(k);
    }
    InvGammaParams {
        shape: beta_p * observed + hyper.a_w,
        scale: scale + hyper.b_w,
    }
}

/// Settings for the damped Newton solve of the log-linear weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    pub max_iters: usize,
    /// Stop once ‖∇‖_∞ falls to this value.
    pub tol: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            max_iters: 50,
            tol: 1e-6,
        }
    }
}

/// The part of the lower bound that depends on w_k under the log-linear function:
///
/// L(w) = Σ_m [βp_k (w · r_m) − exp(w · r_m) E[π_mk]] − ‖w‖² / (2σ)
#[derive(Debug, Clone)]
pub struct LogLinearObjective<'a> {
    pub beta_p: f64,
    pub sigma: f64,
    /// (r_m, E[π_mk]) for documents with at least one non-zero label.
    pub rows: Vec<(&'a [f64], f64)>,
}

impl<'a> LogLinearObjective<'a> {
    pub fn new(k: usize, beta_p: f64, sigma: f64, docs: &[DocState], corpus: &'a Corpus) -> Self {
        let rows = corpus
            .documents
            .iter()
            .zip(docs)
            .filter(|(d, _)| d.labels.iter().any(|&r| r != 0.0))
            .map(|(d, st)| (d.labels.as_slice(), st.mean_pi(k)))
            .collect();
        LogLinearObjective { beta_p, sigma, rows }
    }

    pub fn value(&self, w: &[f64]) -> Result<f64> {
        let mut total = -w.iter().map(|x| x * x).sum::<f64>() / (2.0 * self.sigma);
        for &(r, mean_pi) in &self.rows {
            let x = checked_dot(w, r)?;
            total += self.beta_p * x - x.exp() * mean_pi;
        }
        Ok(total)
    }

    pub fn gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        let mut g: Vec<f64> = w.iter().map(|x| -x / self.sigma).collect();
        for &(r, mean_pi) in &self.rows {
            let e = checked_dot(w, r)?.exp() * mean_pi;
            for (gj, &rj) in g.iter_mut().zip(r) {
                *gj += rj * (self.beta_p - e);
            }
        }
        Ok(g)
    }

    pub fn hessian(&self, w: &[f64]) -> Result<DMatrix<f64>> {
        let j = w.len();
        let mut h = DMatrix::from_diagonal_element(j, j, -1.0 / self.sigma);
        for &(r, mean_pi) in &self.rows {
            let e = checked_dot(w, r)?.exp() * mean_pi;
            for a in 0..j {
                if r[a] == 0.0 {
                    continue;
                }
                for b in 0..j {
                    h[(a, b)] -= r[a] * r[b] * e;
                }
            }
        }
        Ok(h)
    }

    /// Objective value, or −∞ where the exponent saturates.
    fn value_or_neg_inf(&self, w: &[f64]) -> f64 {
        self.value(w).unwrap_or(f64::NEG_INFINITY)
    }

    /// Damped Newton ascent from `start`. Every accepted step leaves the
    /// objective no lower than before.
    pub fn maximize(&self, start: &[f64], cfg: NewtonConfig) -> Result<Vec<f64>> {
        let mut w = start.to_vec();
        let mut f = self.value(&w)?;
        let mut grad_norm = f64::INFINITY;
        for _ in 0..cfg.max_iters {
            let g = self.gradient(&w)?;
            grad_norm = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if grad_norm <= cfg.tol {
                return Ok(w);
            }
            let neg_h = -self.hessian(&w)?;
            let direction = match neg_h.cholesky() {
                Some(chol) => chol.solve(&DVector::from_column_slice(&g)).as_slice().to_vec(),
                None => g.clone(),
            };
            let accepted = self
                .line_search(&w, f, &direction, 20)
                .or_else(|| {
                    // Newton direction failed; steepest ascent with backtracking.
                    let scaled: Vec<f64> = g.iter().map(|x| x / grad_norm).collect();
                    self.line_search(&w, f, &scaled, 40)
                });
            match accepted {
                Some((next, fnext)) => {
                    w = next;
                    f = fnext;
                }
                None => break,
            }
        }
        let g = self.gradient(&w)?;
        let final_norm = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if final_norm <= cfg.tol {
            return Ok(w);
        }
        grad_norm = grad_norm.min(final_norm);
        Err(HdspError::Convergence {
            iterations: cfg.max_iters,
            grad_norm,
            last: w,
        })
    }

    fn line_search(&self, w: &[f64], f: f64, dir: &[f64], halvings: usize) -> Option<(Vec<f64>, f64)> {
        let mut t = 1.0;
        for _ in 0..=halvings {
            let trial: Vec<f64> = w.iter().zip(dir).map(|(a, d)| a + t * d).collect();
            let ft = self.value_or_neg_inf(&trial);
            if ft >= f && trial != w {
                return Some((trial, ft));
            }
            t *= 0.5;
        }
        None
    }
}

/// Newton update of one topic's log-linear weight row.
pub fn update_w_loglinear(
    k: usize,
    beta_p: f64,
    state: &LogLinearScalingState,
    docs: &[DocState],
    corpus: &Corpus,
    cfg: NewtonConfig,
) -> Result<Vec<f64>> {
    let objective = LogLinearObjective::new(k, beta_p, state.sigma, docs, corpus);
    let row = state.weights.row(k).to_vec();
    objective.maximize(&row, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Document, GammaParams};
    use std::collections::BTreeMap;

    fn doc(id: &str, labels: Vec<f64>) -> Document {
        let mut counts = BTreeMap::new();
        counts.insert(0, 1);
        Document::new(id, &counts, labels)
    }

    fn doc_state(a: &[f64], b: &[f64]) -> DocState {
        DocState {
            a_pi: a.to_vec(),
            b_pi: b.to_vec(),
            resp: Array2::from_elem((1, a.len()), 1.0 / a.len() as f64),
            xi: 1.0,
        }
    }

    #[test]
    fn scale_examples() {
        assert_eq!(scale_categorical(&[2.0, 3.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(scale_categorical(&[2.0, 3.0], &[1.0, 1.0]).unwrap(), 6.0);
        assert_eq!(scale_categorical(&[2.0, 3.0], &[1.0, 0.0]).unwrap(), 2.0);
        assert!(matches!(scale_categorical(&[2.0], &[0.5]), Err(HdspError::Domain(_))));

        assert_eq!(scale_loglinear(&[0.0, 5.0], &[3.0, 0.0]).unwrap(), 1.0);
        assert!((scale_loglinear(&[2f64.ln()], &[1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(scale_loglinear(&[1.0, -1.0], &[2.0, 2.0]).unwrap(), 1.0);
        assert!(matches!(scale_loglinear(&[800.0], &[1.0]), Err(HdspError::Saturation(_))));
    }

    #[test]
    fn expected_scaling_examples() {
        let hyper = HyperParams::default();
        for kind in [ScalingKind::Categorical, ScalingKind::LogLinear] {
            let s = ScalingState::prior(kind, 2, 3, &hyper);
            let m = s.expected_scaling(1, &[0.0, 0.0, 0.0]).unwrap();
            assert_eq!((m.mean, m.log_mean, m.inv_mean), (1.0, 0.0, 1.0));
        }
        let mut cat = CategoricalScalingState::prior(1, 1, 1.0, 1.0);
        cat.shape[[0, 0]] = 3.0;
        cat.scale[[0, 0]] = 4.0;
        let m = ScalingState::Categorical(cat).expected_scaling(0, &[1.0]).unwrap();
        assert_eq!(m.inv_mean, 0.75);
        assert_eq!(m.mean, 2.0);

        let ll = ScalingState::LogLinear(LogLinearScalingState {
            weights: Array2::from_elem((1, 1), 3f64.ln()),
            sigma: 1.0,
        });
        let m = ll.expected_scaling(0, &[1.0]).unwrap();
        assert!((m.inv_mean - 3.0).abs() < 1e-14);
    }

    #[test]
    fn categorical_update_small_cases() {
        let hyper = HyperParams {
            a_w: 1.5,
            b_w: 0.7,
            ..HyperParams::default()
        };
        let state = CategoricalScalingState::prior(2, 2, 2.0, 3.0);
        // label 1 never observed: prior comes back
        let corpus = Corpus::new(vec![doc("a", vec![1.0, 0.0])], 1, vec!["x".into(), "y".into()]).unwrap();
        let docs = vec![doc_state(&[2.0, 1.0], &[4.0, 1.0])];
        let q = update_w_categorical(0, 1, 0.3, &state, &docs, &corpus, &hyper);
        assert_eq!((q.shape, q.scale), (1.5, 0.7));
        // single document with only label 0
        let q = update_w_categorical(0, 0, 0.3, &state, &docs, &corpus, &hyper);
        assert!((q.shape - (0.3 + 1.5)).abs() < 1e-15);
        assert!((q.scale - (0.5 + 0.7)).abs() < 1e-15);
    }

    #[test]
    fn categorical_update_matches_direct_sums() {
        // two documents with overlapping label sets {0,1} and {1,2}
        let hyper = HyperParams {
            a_w: 1.0,
            b_w: 1.0,
            ..HyperParams::default()
        };
        let mut state = CategoricalScalingState::prior(1, 3, 1.0, 1.0);
        state.shape[[0, 0]] = 2.0;
        state.scale[[0, 0]] = 5.0;
        state.shape[[0, 2]] = 4.0;
        state.scale[[0, 2]] = 1.0;
        let corpus = Corpus::new(
            vec![doc("a", vec![1.0, 1.0, 0.0]), doc("b", vec![0.0, 1.0, 1.0])],
            1,
            vec!["x".into(), "y".into(), "z".into()],
        )
        .unwrap();
        let docs = vec![doc_state(&[3.0], &[2.0]), doc_state(&[1.0], &[4.0])];
        let q = update_w_categorical(0, 1, 0.5, &state, &docs, &corpus, &hyper);
        // shape: 0.5 * 2 docs + 1; scale: (2/5)(3/2) + (4/1)(1/4) + 1
        assert!((q.shape - 2.0).abs() < 1e-15);
        assert!((q.scale - (0.4 * 1.5 + 4.0 * 0.25 + 1.0)).abs() < 1e-14);
    }

    #[test]
    fn loglinear_with_no_documents_returns_zero() {
        let corpus = Corpus::new(vec![], 1, vec!["x".into(), "y".into()]).unwrap();
        let state = LogLinearScalingState {
            weights: Array2::from_elem((1, 2), 0.7),
            sigma: 2.0,
        };
        let w = update_w_loglinear(0, 0.4, &state, &[], &corpus, NewtonConfig::default()).unwrap();
        assert!(w.iter().all(|x| x.abs() < 1e-6));
    }

    #[test]
    fn loglinear_single_label_matches_bisection() {
        // stationary point solves βp = exp(w) E[π] + w/σ
        let beta_p = 0.8;
        let sigma = 1.5;
        let mean_pi = GammaParams { shape: 3.0, rate: 2.0 }.mean();
        let corpus = Corpus::new(vec![doc("a", vec![1.0])], 1, vec!["x".into()]).unwrap();
        let docs = vec![doc_state(&[3.0], &[2.0])];
        let state = LogLinearScalingState {
            weights: Array2::zeros((1, 1)),
            sigma,
        };
        let cfg = NewtonConfig {
            max_iters: 50,
            tol: 1e-12,
        };
        let w = update_w_loglinear(0, beta_p, &state, &docs, &corpus, cfg).unwrap()[0];

        let f = |w: f64| beta_p - w.exp() * mean_pi - w / sigma;
        let (mut lo, mut hi) = (-50.0, 50.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((w - 0.5 * (lo + hi)).abs() < 1e-8, "{w} vs {}", 0.5 * (lo + hi));
    }

    #[test]
    fn categorical_rescaling_leaves_normalized_proportions() {
        let mut cat = CategoricalScalingState::prior(3, 2, 1.0, 1.0);
        let vals = [[2.0, 0.5], [3.0, 1.5], [0.7, 4.0]];
        for k in 0..3 {
            for j in 0..2 {
                cat.shape[[k, j]] = 1.0 + k as f64 + 0.3 * j as f64;
                cat.scale[[k, j]] = vals[k][j];
            }
        }
        let p = [0.5, 0.3, 0.2];
        let r = [1.0, 1.0];
        let props = |s: &ScalingState| {
            let raw: Vec<f64> = (0..3)
                .map(|k| p[k] / s.expected_scaling(k, &r).unwrap().inv_mean)
                .collect();
            let z: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / z).collect::<Vec<_>>()
        };
        let before = props(&ScalingState::Categorical(cat.clone()));
        // w_k0 → c w_k0 for all k is InvGamma(a, c b)
        for k in 0..3 {
            cat.scale[[k, 0]] *= 7.3;
        }
        let after = props(&ScalingState::Categorical(cat));
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
