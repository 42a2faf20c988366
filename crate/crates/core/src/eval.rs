//! Held-out evaluation, rating classification, recovery metrics and
//! diagnostics. Everything here is read-only over a trained model.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{HdspError, Result};
use crate::inference::Model;
use crate::model::{Corpus, DocState, Document, ScalingKind};
use crate::numerics::log_normalize;
use crate::scaling::ScalingState;

/// Cost used in place of an infinite KL divergence during matching.
const KL_CAP: f64 = 1e12;

/// ln E[1/s_k(r)] for every topic.
fn log_expected_rates(scaling: &ScalingState, r: &[f64]) -> Result<Vec<f64>> {
    if r.len() != scaling.num_labels() {
        return Err(HdspError::Dimension(format!(
            "{} label values, model has {} labels",
            r.len(),
            scaling.num_labels()
        )));
    }
    if let Some(&bad) = r.iter().find(|x| !x.is_finite()) {
        return Err(HdspError::Domain(format!("label value {bad} is not finite")));
    }
    Ok(match scaling {
        ScalingState::Categorical(s) => {
            if let Some(&bad) = r.iter().find(|&&x| x != 0.0 && x != 1.0) {
                return Err(HdspError::Domain(format!("categorical label value {bad} is not binary")));
            }
            (0..s.shape.nrows())
                .map(|k| {
                    r.iter()
                        .enumerate()
                        .filter(|(_, &x)| x == 1.0)
                        .map(|(j, _)| s.factor(k, j).inv_mean().ln())
                        .sum()
                })
                .collect()
        }
        ScalingState::LogLinear(s) => s
            .weights
            .rows()
            .into_iter()
            .map(|w| w.iter().zip(r).map(|(a, b)| a * b).sum())
            .collect(),
    })
}

/// π̃_k ∝ βp_k / E[1/s_k(r)], the mean of q-free topic proportions given labels.
pub fn expected_proportions_given_labels(model: &Model, r: &[f64]) -> Result<Vec<f64>> {
    let log_rates = log_expected_rates(&model.scaling, r)?;
    let logits: Vec<f64> = model
        .concentrations()
        .iter()
        .zip(&log_rates)
        .map(|(bp, lr)| bp.ln() - lr)
        .collect();
    log_normalize(&logits)
}

/// Precomputed topic means for repeated perplexity evaluations.
pub struct Evaluator<'a> {
    model: &'a Model,
    topic_means: Array2<f64>,
}

impl<'a> Evaluator<'a> {
    pub fn new(model: &'a Model) -> Self {
        Evaluator {
            model,
            topic_means: model.global.topic_means(),
        }
    }

    /// (ln p(doc | r), N) under label-conditioned expected proportions.
    pub fn log_likelihood(&self, doc: &Document, r: &[f64]) -> Result<(f64, u32)> {
        let vocab = self.topic_means.ncols();
        if let Some(&(word, _)) = doc.tokens.iter().find(|(w, _)| *w >= vocab) {
            return Err(HdspError::UnseenWord { word, vocab });
        }
        if doc.is_empty() {
            return Err(HdspError::Domain(format!("document {} is empty", doc.id)));
        }
        let pi = expected_proportions_given_labels(self.model, r)?;
        let mut ll = 0.0;
        for &(w, c) in &doc.tokens {
            let p: f64 = pi.iter().zip(self.topic_means.column(w)).map(|(a, b)| a * b).sum();
            ll += c as f64 * p.ln();
        }
        Ok((ll, doc.len()))
    }

    pub fn perplexity(&self, doc: &Document, r: &[f64]) -> Result<f64> {
        let (ll, n) = self.log_likelihood(doc, r)?;
        Ok((-ll / n as f64).exp())
    }

    /// exp(−Σ ln p / Σ N) over documents, each scored with its own labels.
    pub fn corpus_perplexity(&self, documents: &[Document], labels: &[Vec<f64>]) -> Result<f64> {
        if documents.len() != labels.len() {
            return Err(HdspError::Dimension(format!(
                "{} documents but {} label vectors",
                documents.len(),
                labels.len()
            )));
        }
        let parts: Vec<(f64, u32)> = documents
            .par_iter()
            .zip(labels)
            .map(|(d, r)| self.log_likelihood(d, r))
            .collect::<Result<_>>()?;
        let (ll, n) = parts.iter().fold((0.0, 0u64), |(a, b), &(l, c)| (a + l, b + c as u64));
        if n == 0 {
            return Err(HdspError::Domain("no documents to score".into()));
        }
        Ok((-ll / n as f64).exp())
    }

    /// Rating in `grid` with the lowest perplexity for r = [rating, categories].
    /// Ties go to the lowest rating.
    pub fn classify_rating(&self, doc: &Document, categories: &[f64], grid: &[f64]) -> Result<f64> {
        if self.model.kind() != ScalingKind::LogLinear {
            return Err(HdspError::Config("rating classification needs the log-linear scaling function".into()));
        }
        if grid.is_empty() {
            return Err(HdspError::Config("rating grid is empty".into()));
        }
        let mut r = Vec::with_capacity(1 + categories.len());
        r.push(0.0);
        r.extend_from_slice(categories);
        let mut best: Option<(f64, f64)> = None;
        for &rating in grid {
            r[0] = rating;
            let p = self.perplexity(doc, &r)?;
            best = match best {
                Some((bp, br)) if bp < p || (bp == p && br <= rating) => Some((bp, br)),
                _ => Some((p, rating)),
            };
        }
        Ok(best.expect("non-empty grid").1)
    }
}

pub fn heldout_perplexity(model: &Model, doc: &Document, r: &[f64]) -> Result<f64> {
    Evaluator::new(model).perplexity(doc, r)
}

pub fn classify_rating(model: &Model, doc: &Document, categories: &[f64], grid: &[f64]) -> Result<f64> {
    Evaluator::new(model).classify_rating(doc, categories, grid)
}

/// KL(p‖q) in nats; zero entries of p contribute nothing.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| if b > 0.0 { a * (a / b).ln() } else { f64::INFINITY })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicMatching {
    /// assignment[k] is the inferred topic matched to true topic k.
    pub assignment: Vec<usize>,
    /// KL(true_k ‖ inferred_assignment[k]).
    pub divergences: Vec<f64>,
}

impl TopicMatching {
    pub fn total(&self) -> f64 {
        self.divergences.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.total() / self.divergences.len() as f64
    }
}

/// Minimum-cost assignment of rows to distinct columns (rows ≤ columns),
/// by the shortest augmenting path form of the Hungarian method.
pub fn min_cost_assignment(cost: &Array2<f64>) -> Vec<usize> {
    let (n, m) = cost.dim();
    assert!(n <= m, "more rows than columns");
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Matches each true topic to a distinct inferred topic minimizing total
/// KL(true‖inferred).
pub fn match_topics(true_topics: &Array2<f64>, inferred: &Array2<f64>) -> Result<TopicMatching> {
    if true_topics.ncols() != inferred.ncols() {
        return Err(HdspError::Dimension(format!(
            "vocabularies differ: {} vs {} terms",
            true_topics.ncols(),
            inferred.ncols()
        )));
    }
    if inferred.nrows() < true_topics.nrows() {
        return Err(HdspError::Dimension(format!(
            "{} inferred topics cannot cover {} true topics",
            inferred.nrows(),
            true_topics.nrows()
        )));
    }
    let kl = Array2::from_shape_fn((true_topics.nrows(), inferred.nrows()), |(a, b)| {
        kl_divergence(
            true_topics.row(a).as_slice().expect("standard layout"),
            inferred.row(b).as_slice().expect("standard layout"),
        )
    });
    let capped = kl.mapv(|x| x.min(KL_CAP));
    let assignment = min_cost_assignment(&capped);
    let divergences = assignment.iter().enumerate().map(|(a, &b)| kl[[a, b]]).collect();
    Ok(TopicMatching { assignment, divergences })
}

/// Ranks starting at 1; tied values share their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(HdspError::UndefinedStatistic("correlation of a constant vector".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's ρ: Pearson correlation of average ranks.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(HdspError::Dimension(format!("lengths {} and {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(HdspError::Dimension("Spearman's rho needs at least two points".into()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

pub fn mean_absolute_error(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(HdspError::Dimension(format!("lengths {} and {}", x.len(), y.len())));
    }
    Ok(x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of true instances.
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub per_class: Vec<ClassScore>,
    pub macro_f1: f64,
    pub micro_f1: f64,
    /// confusion[[predicted, true]] counts; normalize columns to get the
    /// prediction distribution of each true class.
    pub confusion: Array2<u64>,
}

impl ClassificationReport {
    pub fn column_normalized(&self) -> Array2<f64> {
        let mut out = self.confusion.mapv(|c| c as f64);
        for mut col in out.columns_mut() {
            let s = col.sum();
            if s > 0.0 {
                col /= s;
            }
        }
        out
    }
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn classification_report<T: PartialEq + std::fmt::Debug>(
    predictions: &[T],
    truths: &[T],
    classes: &[T],
) -> Result<ClassificationReport> {
    if predictions.len() != truths.len() {
        return Err(HdspError::Dimension(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let index = |x: &T| {
        classes
            .iter()
            .position(|c| c == x)
            .ok_or_else(|| HdspError::Domain(format!("unknown class {x:?}")))
    };
    let c = classes.len();
    let mut confusion = Array2::zeros((c, c));
    for (p, t) in predictions.iter().zip(truths) {
        confusion[[index(p)?, index(t)?]] += 1u64;
    }
    let (mut tp_all, mut fp_all, mut fn_all) = (0, 0, 0);
    let per_class: Vec<ClassScore> = (0..c)
        .map(|k| {
            let tp = confusion[[k, k]];
            let predicted = confusion.row(k).sum();
            let actual = confusion.column(k).sum();
            tp_all += tp;
            fp_all += predicted - tp;
            fn_all += actual - tp;
            let (precision, recall) = (ratio(tp, predicted), ratio(tp, actual));
            ClassScore {
                precision,
                recall,
                f1: f1(precision, recall),
                support: actual,
            }
        })
        .collect();
    let macro_f1 = if c == 0 {
        0.0
    } else {
        per_class.iter().map(|s| s.f1).sum::<f64>() / c as f64
    };
    let micro_f1 = f1(ratio(tp_all, tp_all + fp_all), ratio(tp_all, tp_all + fn_all));
    Ok(ClassificationReport {
        per_class,
        macro_f1,
        micro_f1,
        confusion,
    })
}

/// Expected tokens per topic, Σ_m Σ_i c_mi γ_mik.
pub fn posterior_word_counts(docs: &[DocState], corpus: &Corpus) -> Result<Vec<f64>> {
    if docs.len() != corpus.len() {
        return Err(HdspError::Dimension(format!(
            "{} document states for {} documents",
            docs.len(),
            corpus.len()
        )));
    }
    let t = docs.first().map_or(0, |d| d.num_topics());
    let mut counts = vec![0.0; t];
    for (st, doc) in docs.iter().zip(&corpus.documents) {
        if st.resp.nrows() != doc.num_types() || st.num_topics() != t {
            return Err(HdspError::Dimension(format!("responsibilities of {} have the wrong shape", doc.id)));
        }
        for (c, k) in st.topic_counts(doc).into_iter().zip(counts.iter_mut()) {
            *k += c;
        }
    }
    Ok(counts)
}

/// Topics whose share of the posterior word mass exceeds `threshold`.
pub fn active_topics(counts: &[f64], threshold: f64) -> usize {
    let total: f64 = counts.iter().sum();
    counts.iter().filter(|&&c| c > threshold * total).count()
}

fn to_csv<F>(header: &[String], write_rows: F) -> Result<String>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
{
    let run = || -> csv::Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        write_rows(&mut w)?;
        w.into_inner().map_err(|e| e.into_error().into())
    };
    let bytes = run().map_err(|e| HdspError::Validation(format!("csv output: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}

fn fmt(x: f64) -> String {
    format!("{x:.17e}")
}

/// Rows of (document id, perplexity).
pub fn perplexity_csv(rows: &[(String, f64)]) -> Result<String> {
    to_csv(&["doc_id".into(), "perplexity".into()], |w| {
        for (id, p) in rows {
            w.write_record([id.clone(), fmt(*p)])?;
        }
        Ok(())
    })
}

/// T × J weight matrix with one column per label.
pub fn weights_csv(weights: &Array2<f64>, label_names: &[String]) -> Result<String> {
    let mut header = vec!["topic".to_string()];
    header.extend(label_names.iter().cloned());
    to_csv(&header, |w| {
        for (k, row) in weights.rows().into_iter().enumerate() {
            let mut rec = vec![k.to_string()];
            rec.extend(row.iter().map(|&x| fmt(x)));
            w.write_record(rec)?;
        }
        Ok(())
    })
}

pub fn word_counts_csv(counts: &[f64]) -> Result<String> {
    to_csv(&["topic".into(), "count".into()], |w| {
        for (k, &c) in counts.iter().enumerate() {
            w.write_record([k.to_string(), fmt(c)])?;
        }
        Ok(())
    })
}

/// Confusion counts, rows predicted, columns true.
pub fn confusion_csv(report: &ClassificationReport, class_names: &[String]) -> Result<String> {
    let mut header = vec!["predicted\\true".to_string()];
    header.extend(class_names.iter().cloned());
    to_csv(&header, |w| {
        for (k, row) in report.confusion.rows().into_iter().enumerate() {
            let mut rec = vec![class_names[k].clone()];
            rec.extend(row.iter().map(|c| c.to_string()));
            w.write_record(rec)?;
        }
        Ok(())
    })
}

pub fn f1_csv(report: &ClassificationReport, class_names: &[String]) -> Result<String> {
    to_csv(
        &["class".into(), "precision".into(), "recall".into(), "f1".into(), "support".into()],
        |w| {
            for (name, s) in class_names.iter().zip(&report.per_class) {
                w.write_record([name.clone(), fmt(s.precision), fmt(s.recall), fmt(s.f1), s.support.to_string()])?;
            }
            w.write_record(["macro".into(), String::new(), String::new(), fmt(report.macro_f1), String::new()])?;
            w.write_record(["micro".into(), String::new(), String::new(), fmt(report.micro_f1), String::new()])
        },
    )
}
