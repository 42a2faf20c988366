//! Corpora drawn from the generative process with known ground truth.
//!
//! Each document gets its own ChaCha stream (stream id m + 1) under the
//! master seed, so generation is a pure function of (config, seed).

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Beta, Distribution, Gamma, Poisson};

use crate::error::{HdspError, Result};
use crate::model::{stick_weights, Corpus, Document, ScalingKind};

/// Smallest scaling weight the geometric generator produces.
pub const MIN_DISTANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_docs: usize,
    pub num_topics: usize,
    pub vocab_size: usize,
    pub num_labels: usize,
    /// Poisson mean of the document length.
    pub mean_length: f64,
    /// Bernoulli rate of each label.
    pub label_rate: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_docs: 500,
            num_topics: 5,
            vocab_size: 10,
            num_labels: 4,
            mean_length: 20.0,
            label_rate: 0.5,
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HdspError::Config(msg));
        if self.num_topics < 1 {
            return bad("need at least one topic".into());
        }
        if self.vocab_size < 2 {
            return bad(format!("vocabulary must have at least 2 terms (got {})", self.vocab_size));
        }
        if !(self.mean_length.is_finite() && self.mean_length > 0.0) {
            return bad(format!("mean document length must be > 0 (got {})", self.mean_length));
        }
        if !(0.0..=1.0).contains(&self.label_rate) {
            return bad(format!("label rate must lie in [0, 1] (got {})", self.label_rate));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be > 0 (got {v})"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometricConfig {
    pub base: SynthConfig,
    /// Side length x of the cube [0, x]^3.
    pub side: f64,
    /// Symmetric Dirichlet parameter of the random topics.
    pub topic_concentration: f64,
}

impl Default for GeometricConfig {
    fn default() -> Self {
        GeometricConfig {
            base: SynthConfig {
                num_docs: 1000,
                num_topics: 10,
                vocab_size: 20,
                ..SynthConfig::default()
            },
            side: 1.0,
            topic_concentration: 0.1,
        }
    }
}

/// Ratings plus one-hot categories, scored with the log-linear function.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedConfig {
    pub num_docs: usize,
    pub num_categories: usize,
    pub vocab_size: usize,
    pub mean_length: f64,
    /// P(rating = 1..=5).
    pub rating_probs: [f64; 5],
    /// |w| on the rating column for negative and positive topics.
    pub rating_effect: f64,
    /// −w on a category column for that category's topics.
    pub category_effect: f64,
    pub topic_concentration: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for MixedConfig {
    fn default() -> Self {
        MixedConfig {
            num_docs: 1000,
            num_categories: 3,
            vocab_size: 60,
            mean_length: 40.0,
            rating_probs: [0.13, 0.07, 0.08, 0.20, 0.52],
            rating_effect: 0.8,
            category_effect: 2.0,
            topic_concentration: 0.1,
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

/// Topic and label positions of the geometric design.
#[derive(Debug, Clone, PartialEq)]
pub struct Positions {
    pub topics: Vec<[f64; 3]>,
    pub labels: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub kind: ScalingKind,
    /// K × I, rows sum to one.
    pub topics: Array2<f64>,
    /// K × J scaling parameters.
    pub weights: Array2<f64>,
    /// Corpus-level topic weights p.
    pub topic_weights: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub labels: Vec<Vec<f64>>,
    pub positions: Option<Positions>,
}

fn doc_rng(seed: u64, m: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(m as u64 + 1);
    rng
}

fn draw_sticks(num_topics: usize, alpha: f64, rng: &mut impl Rng) -> Vec<f64> {
    let beta = Beta::new(1.0, alpha).expect("alpha > 0");
    let mut v: Vec<f64> = (0..num_topics).map(|_| beta.sample(rng)).collect();
    v[num_topics - 1] = 1.0;
    stick_weights(&v)
}

fn draw_length(mean: f64, rng: &mut impl Rng) -> u32 {
    let poisson = Poisson::new(mean).expect("mean > 0");
    loop {
        let n = poisson.sample(rng) as u32;
        if n > 0 {
            return n;
        }
    }
}

struct Process<'a> {
    kind: ScalingKind,
    topics: &'a Array2<f64>,
    weights: &'a Array2<f64>,
    topic_weights: &'a [f64],
    beta: f64,
    mean_length: f64,
}

impl Process<'_> {
    /// s_k(r) for every topic.
    fn scales(&self, r: &[f64]) -> Vec<f64> {
        self.weights
            .rows()
            .into_iter()
            .map(|w| match self.kind {
                ScalingKind::Categorical => w.iter().zip(r).filter(|(_, &x)| x == 1.0).map(|(w, _)| w).product(),
                ScalingKind::LogLinear => (-w.iter().zip(r).map(|(a, b)| a * b).sum::<f64>()).exp(),
            })
            .collect()
    }

    /// Draws π_mk ~ Gamma(βp_k, scale s_k(r)), normalizes, then the words.
    fn document(&self, id: String, labels: Vec<f64>, rng: &mut impl Rng) -> Document {
        let scales = self.scales(&labels);
        let proportions = loop {
            let pi: Vec<f64> = self
                .topic_weights
                .iter()
                .zip(&scales)
                .map(|(&p, &s)| {
                    let shape = (self.beta * p).max(f64::MIN_POSITIVE);
                    Gamma::new(shape, s).expect("positive gamma").sample(rng)
                })
                .collect();
            if pi.iter().sum::<f64>() > 0.0 && pi.iter().all(|x| x.is_finite()) {
                break pi;
            }
        };
        let topic_draw = WeightedIndex::new(&proportions).expect("positive proportions");
        let word_draws: Vec<WeightedIndex<f64>> = self
            .topics
            .rows()
            .into_iter()
            .map(|row| WeightedIndex::new(row.iter().copied()).expect("topic row"))
            .collect();
        let n = draw_length(self.mean_length, rng);
        let mut counts = BTreeMap::new();
        for _ in 0..n {
            let k = topic_draw.sample(rng);
            let w = word_draws[k].sample(rng);
            *counts.entry(w).or_insert(0u32) += 1;
        }
        Document::new(id, &counts, labels)
    }
}

fn doc_id(m: usize) -> String {
    format!("d{m:05}")
}

fn binary_labels(num_labels: usize, rate: f64, rng: &mut impl Rng) -> Vec<f64> {
    let b = Bernoulli::new(rate).expect("rate in [0,1]");
    (0..num_labels).map(|_| if b.sample(rng) { 1.0 } else { 0.0 }).collect()
}

fn label_names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|j| format!("{prefix}{j}")).collect()
}

/// Block-diagonal topics: topic k puts 90% of its mass on its own block of
/// terms and spreads the rest by a Dirichlet(1) draw.
fn block_topics(num_topics: usize, vocab_size: usize, rng: &mut impl Rng) -> Array2<f64> {
    let block = (vocab_size / num_topics).max(1);
    let noise = Gamma::new(1.0, 1.0).expect("valid gamma");
    let mut topics = Array2::zeros((num_topics, vocab_size));
    for k in 0..num_topics {
        let spread = symmetric_dirichlet(&noise, vocab_size, rng);
        let start = (k * block) % vocab_size;
        for i in 0..vocab_size {
            let in_block = i >= start && i < start + block;
            topics[[k, i]] = 0.1 * spread[i] + if in_block { 0.9 / block as f64 } else { 0.0 };
        }
    }
    topics
}

/// Label j pulls hard on topic j, mildly on topic j + 1, and pushes the rest away.
fn pattern_weights(num_topics: usize, num_labels: usize) -> Array2<f64> {
    Array2::from_shape_fn((num_topics, num_labels), |(k, j)| {
        if k == j % num_topics {
            4.0
        } else if k == (j + 1) % num_topics {
            2.0
        } else {
            0.5
        }
    })
}

/// Normalized independent Gamma(a, 1) draws; redrawn if all underflow.
fn symmetric_dirichlet(gamma: &Gamma<f64>, dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let d: Vec<f64> = (0..dim).map(|_| gamma.sample(rng)).collect();
        let total: f64 = d.iter().sum();
        if total > 0.0 && total.is_finite() {
            return d.into_iter().map(|x| x / total).collect();
        }
    }
}

fn dirichlet_topics(num_topics: usize, vocab_size: usize, concentration: f64, rng: &mut impl Rng) -> Result<Array2<f64>> {
    let gamma = Gamma::new(concentration, 1.0)
        .map_err(|e| HdspError::Config(format!("topic concentration {concentration}: {e}")))?;
    let mut topics = Array2::zeros((num_topics, vocab_size));
    for mut row in topics.rows_mut() {
        for (r, d) in row.iter_mut().zip(symmetric_dirichlet(&gamma, vocab_size, rng)) {
            *r = d;
        }
    }
    Ok(topics)
}

fn assemble(
    cfg: &SynthConfig,
    seed: u64,
    kind: ScalingKind,
    topics: Array2<f64>,
    weights: Array2<f64>,
    topic_weights: Vec<f64>,
    names: Vec<String>,
    mut labels_for: impl FnMut(&mut ChaCha8Rng) -> Vec<f64>,
) -> Result<(Corpus, GroundTruth)> {
    let process = Process {
        kind,
        topics: &topics,
        weights: &weights,
        topic_weights: &topic_weights,
        beta: cfg.beta,
        mean_length: cfg.mean_length,
    };
    let documents: Vec<Document> = (0..cfg.num_docs)
        .map(|m| {
            let mut rng = doc_rng(seed, m);
            let labels = labels_for(&mut rng);
            process.document(doc_id(m), labels, &mut rng)
        })
        .collect();
    let labels = documents.iter().map(|d| d.labels.clone()).collect();
    let corpus = Corpus::new(documents, cfg.vocab_size, names)?;
    Ok((
        corpus,
        GroundTruth {
            kind,
            topics,
            weights,
            topic_weights,
            alpha: cfg.alpha,
            beta: cfg.beta,
            labels,
            positions: None,
        },
    ))
}

/// Block-structured topics with a fixed topic–label weight pattern, scored
/// with the categorical function.
pub fn generate_fixed(cfg: &SynthConfig, seed: u64) -> Result<(Corpus, GroundTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topics = block_topics(cfg.num_topics, cfg.vocab_size, &mut rng);
    let weights = pattern_weights(cfg.num_topics, cfg.num_labels);
    let p = draw_sticks(cfg.num_topics, cfg.alpha, &mut rng);
    let (j, rate) = (cfg.num_labels, cfg.label_rate);
    assemble(
        cfg,
        seed,
        ScalingKind::Categorical,
        topics,
        weights,
        p,
        label_names("label", j),
        |rng| binary_labels(j, rate, rng),
    )
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Dirichlet topics whose weight to each label is their Euclidean distance
/// after uniform placement in [0, x]^3.
pub fn generate_geometric(cfg: &GeometricConfig, seed: u64) -> Result<(Corpus, GroundTruth)> {
    cfg.base.validate()?;
    if !(cfg.side.is_finite() && cfg.side > 0.0) {
        return Err(HdspError::Config(format!("cube side must be > 0 (got {})", cfg.side)));
    }
    let base = &cfg.base;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topics = dirichlet_topics(base.num_topics, base.vocab_size, cfg.topic_concentration, &mut rng)?;
    let point = |rng: &mut ChaCha8Rng| -> [f64; 3] {
        [
            rng.random::<f64>() * cfg.side,
            rng.random::<f64>() * cfg.side,
            rng.random::<f64>() * cfg.side,
        ]
    };
    let topic_pos: Vec<[f64; 3]> = (0..base.num_topics).map(|_| point(&mut rng)).collect();
    let label_pos: Vec<[f64; 3]> = (0..base.num_labels).map(|_| point(&mut rng)).collect();
    let weights = Array2::from_shape_fn((base.num_topics, base.num_labels), |(k, j)| {
        distance(&topic_pos[k], &label_pos[j]).max(MIN_DISTANCE)
    });
    let p = draw_sticks(base.num_topics, base.alpha, &mut rng);
    let (j, rate) = (base.num_labels, base.label_rate);
    let (corpus, mut truth) = assemble(
        base,
        seed,
        ScalingKind::Categorical,
        topics,
        weights,
        p,
        label_names("label", j),
        |rng| binary_labels(j, rate, rng),
    )?;
    truth.positions = Some(Positions {
        topics: topic_pos,
        labels: label_pos,
    });
    Ok((corpus, truth))
}

/// Three topics per category (negative, neutral, positive). Labels are
/// [rating, category one-hot]; negative topics carry +effect on the rating
/// column, positive topics −effect, and each category's topics carry
/// −category_effect on that category's column.
pub fn generate_mixed(cfg: &MixedConfig, seed: u64) -> Result<(Corpus, GroundTruth)> {
    if cfg.num_categories < 1 {
        return Err(HdspError::Config("need at least one category".into()));
    }
    let num_topics = 3 * cfg.num_categories;
    let base = SynthConfig {
        num_docs: cfg.num_docs,
        num_topics,
        vocab_size: cfg.vocab_size,
        num_labels: 1 + cfg.num_categories,
        mean_length: cfg.mean_length,
        label_rate: 0.0,
        alpha: cfg.alpha,
        beta: cfg.beta,
    };
    base.validate()?;
    let rating_draw = WeightedIndex::new(cfg.rating_probs)
        .map_err(|e| HdspError::Config(format!("rating probabilities: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topics = dirichlet_topics(num_topics, cfg.vocab_size, cfg.topic_concentration, &mut rng)?;
    let weights = Array2::from_shape_fn((num_topics, 1 + cfg.num_categories), |(k, j)| {
        let (category, sentiment) = (k / 3, k % 3);
        if j == 0 {
            match sentiment {
                0 => cfg.rating_effect,
                2 => -cfg.rating_effect,
                _ => 0.0,
            }
        } else if j - 1 == category {
            -cfg.category_effect
        } else {
            0.0
        }
    });
    // Uniform corpus-level weights keep every planted topic in play.
    let p = vec![1.0 / num_topics as f64; num_topics];
    let c = cfg.num_categories;
    let mut names = vec!["rating".to_string()];
    names.extend(label_names("category", c));
    assemble(&base, seed, ScalingKind::LogLinear, topics, weights, p, names, |rng| {
        let mut r = vec![0.0; 1 + c];
        r[0] = (rating_draw.sample(rng) + 1) as f64;
        r[1 + rng.random_range(0..c)] = 1.0;
        r
    })
}
