//! Initial state: random topics warmed up by a few variational LDA sweeps,
//! reordered by posterior word count.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;

use crate::inference::{concentrations, update_pi, FitConfig, Model};
use crate::model::{
    dirichlet_log_expectations, stick_weights, Corpus, DocState, Document, GlobalState, HyperParams, PI_PARAM_FLOOR,
    STICK_MAX, STICK_MIN,
};
use crate::numerics::{log_normalize_in_place, psi};
use crate::scaling::ScalingState;

const LDA_INNER_ITERS: usize = 50;
const LDA_INNER_TOL: f64 = 1e-3;

/// η_ki = η + u_ki · (tokens / (T·I)) with u_ki ~ Gamma(100, 1/100).
pub fn random_topics(corpus: &Corpus, num_topics: usize, eta: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Gamma::new(100.0, 0.01).expect("valid gamma");
    let scale = corpus.total_tokens().max(1) as f64 / (num_topics * corpus.vocab_size) as f64;
    Array2::from_shape_fn((num_topics, corpus.vocab_size), |_| eta + scale * noise.sample(&mut rng))
}

/// Responsibilities of one document under plain LDA with a
/// Dirichlet(`doc_alpha`) prior over topic proportions.
fn lda_document(doc: &Document, log_topics: &Array2<f64>, doc_alpha: &[f64]) -> Array2<f64> {
    let t = log_topics.nrows();
    let n = doc.len() as f64;
    let mut dir: Vec<f64> = doc_alpha.iter().map(|a| a + n / t as f64).collect();
    let mut resp = Array2::zeros((doc.num_types(), t));
    let mut row = vec![0.0; t];
    for _ in 0..LDA_INNER_ITERS {
        let elog: Vec<f64> = dir.iter().map(|&x| psi(x)).collect();
        let mut next = doc_alpha.to_vec();
        for (i, &(w, c)) in doc.tokens.iter().enumerate() {
            for k in 0..t {
                row[k] = log_topics[[k, w]] + elog[k];
            }
            log_normalize_in_place(&mut row);
            for k in 0..t {
                resp[[i, k]] = row[k];
                next[k] += c as f64 * row[k];
            }
        }
        let change = dir.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum::<f64>() / t as f64;
        dir = next;
        if change < LDA_INNER_TOL {
            break;
        }
    }
    resp
}

/// V_k = 1/(1 + α), the prior mean, with V_T = 1.
fn prior_sticks(alpha: f64, t: usize) -> Vec<f64> {
    let mut sticks = vec![(1.0 / (1.0 + alpha)).clamp(STICK_MIN, STICK_MAX); t];
    sticks[t - 1] = 1.0;
    sticks
}

/// Runs `sweeps` rounds of variational LDA (E-step per document, then the
/// topic Dirichlet update) starting from `topics`. Document proportions get
/// the Dirichlet(βp) prior implied by prior-mean sticks, so later topics start
/// with little mass instead of splitting the large ones. Returns the last
/// E-step's responsibilities, or `None` when `sweeps` is 0.
pub fn lda_warm_start(
    corpus: &Corpus,
    topics: &mut Array2<f64>,
    hyper: &HyperParams,
    sweeps: usize,
) -> Option<Vec<Array2<f64>>> {
    let eta = hyper.eta;
    let t = topics.nrows();
    let doc_alpha = concentrations(hyper.beta, &stick_weights(&prior_sticks(hyper.alpha, t)));
    let mut last = None;
    for _ in 0..sweeps {
        let log_topics = dirichlet_log_expectations(topics);
        let resps: Vec<Array2<f64>> = corpus
            .documents
            .par_iter()
            .map(|doc| lda_document(doc, &log_topics, &doc_alpha))
            .collect();
        topics.fill(eta);
        for (doc, resp) in corpus.documents.iter().zip(&resps) {
            for (row, &(w, c)) in resp.rows().into_iter().zip(&doc.tokens) {
                for (k, &g) in row.iter().enumerate() {
                    topics[[k, w]] += c as f64 * g;
                }
            }
        }
        last = Some(resps);
    }
    last
}

/// Reorders topic rows by posterior word count Σ_i (η_ki − η), largest first.
/// Returns the order: new row k is old row order[k].
pub fn sort_topics_by_count(topics: &mut Array2<f64>, eta: f64) -> Vec<usize> {
    let counts: Vec<f64> = topics.rows().into_iter().map(|r| r.sum() - eta * r.len() as f64).collect();
    let mut order: Vec<usize> = (0..topics.nrows()).collect();
    order.sort_by(|&a, &b| counts[b].total_cmp(&counts[a]).then(a.cmp(&b)));
    let sorted = Array2::from_shape_fn(topics.raw_dim(), |(k, i)| topics[[order[k], i]]);
    *topics = sorted;
    order
}

/// State that corresponds to the given topics with prior-mean sticks,
/// q(π_mk) = Gamma(βp_k, 1) and scaling at its prior.
pub fn state_from_topics(corpus: &Corpus, config: &FitConfig, topics: Array2<f64>) -> (Model, Vec<DocState>) {
    let hyper = config.hyper;
    let t = hyper.truncation;
    let global = GlobalState::new(prior_sticks(hyper.alpha, t), topics).expect("valid initial state");
    let scaling = ScalingState::prior(config.scaling, t, corpus.num_labels(), &hyper);
    let beta_p = concentrations(hyper.beta, &stick_weights(global.sticks()));
    let docs = corpus
        .documents
        .iter()
        .map(|doc| {
            let a_pi: Vec<f64> = beta_p.iter().map(|&x| x.max(PI_PARAM_FLOOR)).collect();
            let b_pi = vec![1.0; t];
            let xi = a_pi.iter().sum();
            DocState {
                a_pi,
                b_pi,
                resp: Array2::from_elem((doc.num_types(), t), 1.0 / t as f64),
                xi,
            }
        })
        .collect();
    (
        Model {
            hyper,
            global,
            scaling,
        },
        docs,
    )
}

/// Random topics, `config.warm_start_sweeps` LDA sweeps, reorder, then the
/// prior-valued remainder of the state. Document responsibilities are taken
/// from the warm start and q(π) is fitted to them, so the first γ update
/// does not see prior-only proportions.
pub fn initialize(corpus: &Corpus, config: &FitConfig) -> (Model, Vec<DocState>) {
    let eta = config.hyper.eta;
    let mut topics = random_topics(corpus, config.hyper.truncation, eta, config.seed);
    let resps = lda_warm_start(corpus, &mut topics, &config.hyper, config.warm_start_sweeps);
    let order = sort_topics_by_count(&mut topics, eta);
    let (model, mut docs) = state_from_topics(corpus, config, topics);
    if let Some(resps) = resps {
        let beta_p = model.concentrations();
        docs.par_iter_mut()
            .zip(corpus.documents.par_iter())
            .zip(resps.par_iter())
            .for_each(|((st, doc), resp)| {
                st.resp = Array2::from_shape_fn(resp.raw_dim(), |(i, k)| resp[[i, order[k]]]);
                update_pi(doc, st, &beta_p, &model.scaling);
            });
    }
    (model, docs)
}
