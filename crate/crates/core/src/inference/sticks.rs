//! Corpus-level sticks V and the concentration parameters α, β.
//!
//! With the document factors frozen, the bound depends on V only through
//!
//!   f(V) = Σ_{k<T} (α − 1) ln(1 − V_k) + Σ_k [βp_k C_k − M ln Γ(βp_k)],
//!
//! where C_k = Σ_m (E[ln rate_mk] + E[ln π_mk]) and rate_mk = 1 / s_k(r_m).

use crate::inference::{concentrations, Model};
use crate::model::{stick_weights, Corpus, DocState, STICK_MAX, STICK_MIN};
use crate::numerics::{lgamma, psi};

const HYPER_MIN: f64 = 1e-4;
const HYPER_MAX: f64 = 1e4;
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct StickObjective {
    pub alpha: f64,
    pub beta: f64,
    pub num_docs: f64,
    /// C_k for every topic.
    pub coef: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StickOutcome {
    Moved,
    /// Gradient already zero.
    Stationary,
    /// Line search exhausted its halvings; sticks left unchanged.
    Stalled,
}

impl StickObjective {
    pub fn from_state(model: &Model, docs: &[DocState], corpus: &Corpus) -> Self {
        let t = model.global.num_topics();
        let mut coef = vec![0.0; t];
        let mut rate = vec![0.0; t];
        let mut log_rate = vec![0.0; t];
        for (doc, st) in corpus.documents.iter().zip(docs) {
            model.scaling.rate_moments(&doc.labels, &mut rate, &mut log_rate);
            for k in 0..t {
                coef[k] += log_rate[k] + st.log_pi(k);
            }
        }
        StickObjective {
            alpha: model.hyper.alpha,
            beta: model.hyper.beta,
            num_docs: corpus.len() as f64,
            coef,
        }
    }

    fn data_term(&self, beta: f64, weights: &[f64]) -> f64 {
        concentrations(beta, weights)
            .iter()
            .zip(&self.coef)
            .map(|(&bp, &c)| bp * c - self.num_docs * lgamma(bp))
            .sum()
    }

    /// f(V). The last stick is taken as 1 regardless of its stored value.
    pub fn value(&self, sticks: &[f64]) -> f64 {
        let t = sticks.len();
        let mut v = sticks.to_vec();
        v[t - 1] = 1.0;
        let prior: f64 = v[..t - 1].iter().map(|&x| (self.alpha - 1.0) * (1.0 - x).ln()).sum();
        prior + self.data_term(self.beta, &stick_weights(&v))
    }

    /// ∂f/∂V_k for k < T − 1 (the last stick is fixed).
    pub fn gradient(&self, sticks: &[f64]) -> Vec<f64> {
        let t = sticks.len();
        let mut v = sticks.to_vec();
        v[t - 1] = 1.0;
        let p = stick_weights(&v);
        let bp = concentrations(self.beta, &p);
        // ∂f/∂p_k · p_k
        let dp: Vec<f64> = (0..t)
            .map(|k| self.beta * (self.coef[k] - self.num_docs * psi(bp[k])) * p[k])
            .collect();
        let mut tail = 0.0;
        let mut grad = vec![0.0; t - 1];
        for k in (0..t - 1).rev() {
            tail += dp[k + 1];
            grad[k] = -(self.alpha - 1.0) / (1.0 - v[k]) + dp[k] / v[k] - tail / (1.0 - v[k]);
        }
        grad
    }

    /// β-dependent part of the bound at the given sticks.
    pub fn beta_value(&self, beta: f64, weights: &[f64]) -> f64 {
        self.data_term(beta, weights)
    }

    pub fn beta_derivative(&self, beta: f64, weights: &[f64]) -> f64 {
        concentrations(beta, weights)
            .iter()
            .zip(weights)
            .zip(&self.coef)
            .map(|((&bp, &p), &c)| p * (c - self.num_docs * psi(bp)))
            .sum()
    }
}

/// Steepest ascent on V with backtracking, `steps` times. Sticks stay in
/// [STICK_MIN, STICK_MAX] and the last one stays at 1.
pub fn update_sticks(model: &mut Model, docs: &[DocState], corpus: &Corpus, steps: usize) -> StickOutcome {
    let objective = StickObjective::from_state(model, docs, corpus);
    let mut sticks = model.global.sticks().to_vec();
    let t = sticks.len();
    let mut f = objective.value(&sticks);
    let mut outcome = StickOutcome::Stationary;
    for _ in 0..steps {
        let g = objective.gradient(&sticks);
        let scale = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if scale == 0.0 || !scale.is_finite() {
            break;
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let mut trial = sticks.clone();
            for k in 0..t - 1 {
                trial[k] = (sticks[k] + step * g[k] / scale).clamp(STICK_MIN, STICK_MAX);
            }
            if trial != sticks {
                let ft = objective.value(&trial);
                if ft >= f {
                    sticks = trial;
                    f = ft;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            if outcome == StickOutcome::Stationary {
                outcome = StickOutcome::Stalled;
            }
            break;
        }
        outcome = StickOutcome::Moved;
    }
    model.global.set_sticks(sticks);
    outcome
}

/// α by its closed-form maximizer, β by backtracking ascent in ln β.
pub fn optimize_hyperparameters(model: &mut Model, docs: &[DocState], corpus: &Corpus) {
    let sticks = model.global.sticks();
    let t = sticks.len();
    let s: f64 = -sticks[..t - 1].iter().map(|&v| (1.0 - v).ln()).sum::<f64>();
    if s > 0.0 && s.is_finite() {
        model.hyper.alpha = ((t - 1) as f64 / s).clamp(HYPER_MIN, HYPER_MAX);
    }

    let objective = StickObjective::from_state(model, docs, corpus);
    let weights = model.global.weights().to_vec();
    let mut beta = model.hyper.beta;
    let mut f = objective.beta_value(beta, &weights);
    for _ in 0..20 {
        let d = objective.beta_derivative(beta, &weights) * beta;
        if d.abs() < 1e-10 {
            break;
        }
        let mut step = d.signum();
        let mut moved = false;
        for _ in 0..=MAX_HALVINGS {
            let trial = (beta * step.exp()).clamp(HYPER_MIN, HYPER_MAX);
            if trial != beta {
                let ft = objective.beta_value(trial, &weights);
                if ft >= f {
                    beta = trial;
                    f = ft;
                    moved = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    model.hyper.beta = beta;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn objective(alpha: f64, beta: f64, num_docs: f64, coef: Vec<f64>) -> StickObjective {
        StickObjective {
            alpha,
            beta,
            num_docs,
            coef,
        }
    }

    #[test]
    fn data_free_gradient_vanishes_for_flat_prior() {
        let obj = objective(1.0, 1.0, 0.0, vec![0.0; 4]);
        let g = obj.gradient(&[0.3, 0.6, 0.2, 1.0]);
        assert!(g.iter().all(|&x| x == 0.0));
        let obj = objective(3.0, 1.0, 0.0, vec![0.0; 3]);
        let g = obj.gradient(&[0.5, 0.25, 1.0]);
        assert_eq!(g, vec![-4.0, -2.0 / 0.75]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let obj = objective(0.7, 2.3, 5.0, vec![-3.0, -8.5, -1.2, -20.0, -4.4]);
        let v = [0.35, 0.2, 0.6, 0.45, 1.0];
        let g = obj.gradient(&v);
        let h = 1e-5;
        for k in 0..4 {
            let mut up = v;
            let mut dn = v;
            up[k] += h;
            dn[k] -= h;
            let fd = (obj.value(&up) - obj.value(&dn)) / (2.0 * h);
            assert!(((fd - g[k]) / g[k].abs().max(1e-8)).abs() < 1e-6, "k={k}: {fd} vs {}", g[k]);
        }
    }
}
