#![allow(dead_code)]

use std::collections::BTreeMap;

use hdsp::inference::Model;
use hdsp::model::{Corpus, DocState, Document, GlobalState, HyperParams, ScalingKind};
use hdsp::scaling::{CategoricalScalingState, LogLinearScalingState, ScalingState};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Lanczos (g = 7, n = 9) log-gamma, kept apart from the library's version.
pub fn ln_gamma(x: f64) -> f64 {
    const P: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let mut a = P[0];
    for (i, p) in P.iter().enumerate().skip(1) {
        a += p / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Digamma by upward recurrence and the asymptotic series.
pub fn digamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc + x.ln() - 0.5 / x
        - x2 * (1.0 / 12.0 - x2 * (1.0 / 120.0 - x2 * (1.0 / 252.0 - x2 * (1.0 / 240.0 - x2 / 132.0))))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random corpus with documents of 1..=max_len tokens. Binary labels for the
/// categorical function, values in [-1, 2] for the log-linear one.
pub fn random_corpus(seed: u64, docs: usize, vocab: usize, labels: usize, kind: ScalingKind) -> Corpus {
    let mut r = rng(seed);
    let documents = (0..docs)
        .map(|m| {
            let len = r.random_range(1..=25);
            let mut counts = BTreeMap::new();
            for _ in 0..len {
                *counts.entry(r.random_range(0..vocab)).or_insert(0u32) += 1;
            }
            let lab = (0..labels)
                .map(|_| match kind {
                    ScalingKind::Categorical => f64::from(r.random_bool(0.5) as u8),
                    ScalingKind::LogLinear => r.random_range(-1.0..2.0),
                })
                .collect();
            Document::new(format!("d{m}"), &counts, lab)
        })
        .collect();
    Corpus::new(documents, vocab, (0..labels).map(|j| format!("l{j}")).collect()).unwrap()
}

/// A valid but otherwise arbitrary variational state.
pub fn random_state(corpus: &Corpus, t: usize, kind: ScalingKind, seed: u64) -> (Model, Vec<DocState>) {
    let mut r = rng(seed);
    let j = corpus.num_labels();
    let mut sticks: Vec<f64> = (0..t).map(|_| r.random_range(0.05..0.95)).collect();
    sticks[t - 1] = 1.0;
    let topics = Array2::from_shape_fn((t, corpus.vocab_size), |_| r.random_range(0.1..5.0));
    let hyper = HyperParams {
        alpha: r.random_range(0.3..3.0),
        beta: r.random_range(0.5..5.0),
        eta: r.random_range(0.1..1.0),
        a_w: r.random_range(0.5..2.0),
        b_w: r.random_range(0.5..2.0),
        sigma: r.random_range(0.5..2.0),
        truncation: t,
    };
    let scaling = match kind {
        ScalingKind::Categorical => ScalingState::Categorical(CategoricalScalingState {
            shape: Array2::from_shape_fn((t, j), |_| r.random_range(0.5..4.0)),
            scale: Array2::from_shape_fn((t, j), |_| r.random_range(0.5..4.0)),
        }),
        ScalingKind::LogLinear => ScalingState::LogLinear(LogLinearScalingState {
            weights: Array2::from_shape_fn((t, j), |_| r.random_range(-0.5..0.5)),
            sigma: hyper.sigma,
        }),
    };
    let docs = corpus
        .documents
        .iter()
        .map(|d| {
            let mut resp = Array2::from_shape_fn((d.num_types(), t), |_| r.random_range(0.01..1.0));
            for mut row in resp.rows_mut() {
                let s = row.sum();
                row /= s;
            }
            DocState {
                a_pi: (0..t).map(|_| r.random_range(0.2..5.0)).collect(),
                b_pi: (0..t).map(|_| r.random_range(0.2..5.0)).collect(),
                resp,
                xi: r.random_range(0.5..5.0),
            }
        })
        .collect();
    let model = Model {
        hyper,
        global: GlobalState::new(sticks, topics).unwrap(),
        scaling,
    };
    (model, docs)
}

/// (E[rate], E[ln rate]) of every topic, rate = 1/s.
pub fn rate_moments(scaling: &ScalingState, r: &[f64]) -> Vec<(f64, f64)> {
    match scaling {
        ScalingState::Categorical(s) => (0..s.shape.nrows())
            .map(|k| {
                let mut e = 1.0;
                let mut l = 0.0;
                for (j, &rj) in r.iter().enumerate() {
                    if rj == 1.0 {
                        // 1/w ~ Gamma(shape, rate = scale)
                        let (a, b) = (s.shape[[k, j]], s.scale[[k, j]]);
                        e *= a / b;
                        l += digamma(a) - b.ln();
                    }
                }
                (e, l)
            })
            .collect(),
        ScalingState::LogLinear(s) => (0..s.weights.nrows())
            .map(|k| {
                let x: f64 = (0..r.len()).map(|j| s.weights[[k, j]] * r[j]).sum();
                (x.exp(), x)
            })
            .collect(),
    }
}

/// p_k = V_k Π_{j<k} (1 − V_j).
pub fn stick_weights(v: &[f64]) -> Vec<f64> {
    (0..v.len())
        .map(|k| v[k] * v[..k].iter().map(|x| 1.0 - x).product::<f64>())
        .collect()
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}
