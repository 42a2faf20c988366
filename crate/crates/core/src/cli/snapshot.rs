//! Versioned text snapshots of a trained model.
//!
//! The document is JSON with keys in sorted order and every float written
//! with 17 significant digits, so save → load → save is byte-identical and
//! loading reproduces each parameter bit for bit. Loading revalidates every
//! invariant and names the offending parameter on failure.

use std::io;
use std::path::Path;

use ndarray::Array2;
use serde_json::ser::Formatter;
use serde_json::{json, Map, Value};

use crate::cli::io::{atomic_write, read_text};
use crate::error::{HdspError, Result};
use crate::inference::{find_non_finite, FitStats, Fitted, Model};
use crate::model::{Corpus, DocState, GlobalState, HyperParams, ScalingKind};
use crate::scaling::{CategoricalScalingState, LogLinearScalingState, ScalingState};
use crate::synth::GroundTruth;

pub const FORMAT: &str = "hdsp-snapshot";
pub const VERSION: u64 = 1;

/// Tolerance on Σ_k γ_ik = 1 when validating a loaded snapshot.
const RESP_SUM_TOL: f64 = 1e-9;

/// Objects one key per line, arrays inline, floats as `{:.16e}`.
#[derive(Default)]
struct CanonicalFormatter {
    depth: usize,
    has_value: bool,
}

impl CanonicalFormatter {
    fn indent<W: ?Sized + io::Write>(&self, w: &mut W) -> io::Result<()> {
        for _ in 0..self.depth {
            w.write_all(b"  ")?;
        }
        Ok(())
    }
}

impl Formatter for CanonicalFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.depth += 1;
        self.has_value = false;
        w.write_all(b"{")
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.depth -= 1;
        if self.has_value {
            w.write_all(b"\n")?;
            self.indent(w)?;
        }
        w.write_all(b"}")
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        w.write_all(if first { b"\n" } else { b",\n" })?;
        self.indent(w)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        w.write_all(b": ")
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, _w: &mut W) -> io::Result<()> {
        self.has_value = true;
        Ok(())
    }
}

/// Serializes a value in canonical form with a trailing newline.
pub fn to_canonical_string(value: &Value) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, CanonicalFormatter::default());
    serde::Serialize::serialize(value, &mut ser).expect("in-memory serialization");
    out.push(b'\n');
    String::from_utf8(out).expect("json is utf-8")
}

fn matrix(m: &Array2<f64>) -> Value {
    Value::Array(m.rows().into_iter().map(|r| json!(r.to_vec())).collect())
}

/// A trained model together with its training documents' states.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub model: Model,
    pub docs: Vec<DocState>,
    /// Ids of the training documents, aligned with `docs`.
    pub doc_ids: Vec<String>,
    pub label_names: Vec<String>,
    pub elbo_trace: Vec<f64>,
    pub stats: FitStats,
}

impl Snapshot {
    pub fn from_fit(fitted: Fitted, corpus: &Corpus) -> Self {
        Snapshot {
            model: fitted.model,
            docs: fitted.docs,
            doc_ids: corpus.documents.iter().map(|d| d.id.clone()).collect(),
            label_names: corpus.label_names.clone(),
            elbo_trace: fitted.elbo_trace,
            stats: fitted.stats,
        }
    }

    /// Checks that `corpus` is the training corpus this snapshot was fitted on.
    pub fn check_corpus(&self, corpus: &Corpus) -> Result<()> {
        if corpus.vocab_size != self.model.global.vocab_size() {
            return Err(HdspError::Incompatible(format!(
                "corpus vocabulary has {} terms, model has {}",
                corpus.vocab_size,
                self.model.global.vocab_size()
            )));
        }
        if corpus.label_names != self.label_names {
            return Err(HdspError::Incompatible("corpus label schema differs from the model's".into()));
        }
        if corpus.len() != self.docs.len() {
            return Err(HdspError::Incompatible(format!(
                "corpus has {} documents, snapshot has {}",
                corpus.len(),
                self.docs.len()
            )));
        }
        for (m, (doc, (st, id))) in corpus.documents.iter().zip(self.docs.iter().zip(&self.doc_ids)).enumerate() {
            if &doc.id != id || doc.num_types() != st.resp.nrows() {
                return Err(HdspError::Incompatible(format!("document {m} (`{}`) does not match the snapshot", doc.id)));
            }
        }
        Ok(())
    }

    pub fn to_value(&self) -> Result<Value> {
        if let Some(path) = find_non_finite(&self.model, &self.docs) {
            return Err(HdspError::Validation(format!("cannot save non-finite parameter {path}")));
        }
        if let Some(i) = self.elbo_trace.iter().position(|x| !x.is_finite()) {
            return Err(HdspError::Validation(format!("cannot save non-finite elbo_trace[{i}]")));
        }
        let h = &self.model.hyper;
        let scaling = match &self.model.scaling {
            ScalingState::Categorical(s) => json!({
                "kind": ScalingKind::Categorical.to_string(),
                "shape": matrix(&s.shape),
                "scale": matrix(&s.scale),
            }),
            ScalingState::LogLinear(s) => json!({
                "kind": ScalingKind::LogLinear.to_string(),
                "weights": matrix(&s.weights),
                "sigma": s.sigma,
            }),
        };
        let docs: Vec<Value> = self
            .docs
            .iter()
            .zip(&self.doc_ids)
            .map(|(d, id)| {
                json!({
                    "id": id,
                    "a_pi": d.a_pi,
                    "b_pi": d.b_pi,
                    "xi": d.xi,
                    "resp": matrix(&d.resp),
                })
            })
            .collect();
        let s = &self.stats;
        Ok(json!({
            "format": FORMAT,
            "version": VERSION,
            "hyper": {
                "alpha": h.alpha,
                "beta": h.beta,
                "eta": h.eta,
                "a_w": h.a_w,
                "b_w": h.b_w,
                "sigma": h.sigma,
                "truncation": h.truncation,
            },
            "sticks": self.model.global.sticks(),
            "topics": matrix(&self.model.global.topic_dirichlet),
            "scaling": scaling,
            "label_names": self.label_names,
            "docs": docs,
            "elbo_trace": self.elbo_trace,
            "stats": {
                "iterations": s.iterations,
                "converged": s.converged,
                "initial_elbo": s.initial_elbo,
                "stick_stalls": s.stick_stalls,
                "newton_failures": s.newton_failures,
            },
        }))
    }

    pub fn to_canonical_string(&self) -> Result<String> {
        Ok(to_canonical_string(&self.to_value()?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_canonical_string()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Snapshot> {
        Snapshot::parse(&read_text(path)?)
    }

    pub fn parse(text: &str) -> Result<Snapshot> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| HdspError::Corrupt(format!("not a JSON document: {e}")))?;
        Snapshot::from_value(&value)
    }

    pub fn from_value(value: &Value) -> Result<Snapshot> {
        let root = Node::root(value);
        let format = root.get("format").map_err(|_| HdspError::Incompatible("missing format tag".into()))?;
        if format.str()? != FORMAT {
            return Err(HdspError::Incompatible(format!("unknown format `{}`", format.str()?)));
        }
        let version = root.get("version")?.u64()?;
        if version != VERSION {
            return Err(HdspError::Incompatible(format!(
                "snapshot version {version}, this build reads version {VERSION}"
            )));
        }

        let h = root.get("hyper")?;
        let hyper = HyperParams {
            alpha: h.get("alpha")?.positive()?,
            beta: h.get("beta")?.positive()?,
            eta: h.get("eta")?.positive()?,
            a_w: h.get("a_w")?.positive()?,
            b_w: h.get("b_w")?.positive()?,
            sigma: h.get("sigma")?.positive()?,
            truncation: h.get("truncation")?.u64()? as usize,
        };
        hyper.validate().map_err(|e| h.corrupt(e.to_string()))?;
        let t = hyper.truncation;

        let sticks_node = root.get("sticks")?;
        let sticks = sticks_node.vec(Some(t))?;
        for (k, &v) in sticks.iter().enumerate() {
            if !(v > 0.0 && v <= 1.0) {
                return Err(sticks_node.index(k).corrupt(format!("must lie in (0, 1] (got {v})")));
            }
        }
        if sticks[t - 1] != 1.0 {
            return Err(sticks_node.index(t - 1).corrupt("last stick must equal 1"));
        }
        let topics = root.get("topics")?.matrix(Some(t), None, |x| x > 0.0, "> 0")?;
        let global = GlobalState::new(sticks, topics).map_err(|e| root.get("topics").unwrap().corrupt(e.to_string()))?;

        let label_names: Vec<String> = root
            .get("label_names")?
            .array()?
            .iter()
            .enumerate()
            .map(|(j, _)| root.get("label_names")?.index(j).str().map(str::to_string))
            .collect::<Result<_>>()?;
        let j = label_names.len();

        let sc = root.get("scaling")?;
        let kind: ScalingKind = sc
            .get("kind")?
            .str()?
            .parse()
            .map_err(|_| sc.get("kind").unwrap().corrupt("unknown scaling kind"))?;
        let scaling = match kind {
            ScalingKind::Categorical => ScalingState::Categorical(CategoricalScalingState {
                shape: sc.get("shape")?.matrix(Some(t), Some(j), |x| x > 0.0, "> 0")?,
                scale: sc.get("scale")?.matrix(Some(t), Some(j), |x| x > 0.0, "> 0")?,
            }),
            ScalingKind::LogLinear => ScalingState::LogLinear(LogLinearScalingState {
                weights: sc.get("weights")?.matrix(Some(t), Some(j), |_| true, "finite")?,
                sigma: sc.get("sigma")?.positive()?,
            }),
        };

        let docs_node = root.get("docs")?;
        let mut docs = Vec::new();
        let mut doc_ids = Vec::new();
        for m in 0..docs_node.array()?.len() {
            let d = docs_node.index(m);
            doc_ids.push(d.get("id")?.str()?.to_string());
            let positive_vec = |key: &str| -> Result<Vec<f64>> {
                let node = d.get(key)?;
                let v = node.vec(Some(t))?;
                match v.iter().position(|&x| !(x > 0.0)) {
                    Some(k) => Err(node.index(k).corrupt(format!("must be > 0 (got {})", v[k]))),
                    None => Ok(v),
                }
            };
            let a_pi = positive_vec("a_pi")?;
            let b_pi = positive_vec("b_pi")?;
            let xi = d.get("xi")?.positive()?;
            let resp_node = d.get("resp")?;
            let resp = resp_node.matrix(None, Some(t), |x| (0.0..=1.0).contains(&x), "in [0, 1]")?;
            for (i, row) in resp.rows().into_iter().enumerate() {
                if (row.sum() - 1.0).abs() > RESP_SUM_TOL {
                    return Err(resp_node.index(i).corrupt(format!("responsibilities sum to {}", row.sum())));
                }
            }
            docs.push(DocState { a_pi, b_pi, resp, xi });
        }

        let elbo_trace = root.get("elbo_trace")?.vec(None)?;
        let s = root.get("stats")?;
        let stats = FitStats {
            iterations: s.get("iterations")?.u64()? as usize,
            converged: s.get("converged")?.bool()?,
            initial_elbo: s.get("initial_elbo")?.finite()?,
            stick_stalls: s.get("stick_stalls")?.u64()? as usize,
            newton_failures: s.get("newton_failures")?.u64()? as usize,
        };
        Ok(Snapshot {
            model: Model { hyper, global, scaling },
            docs,
            doc_ids,
            label_names,
            elbo_trace,
            stats,
        })
    }
}

/// A JSON node that remembers its path for error messages.
struct Node<'a> {
    value: &'a Value,
    path: String,
}

impl<'a> Node<'a> {
    fn root(value: &'a Value) -> Self {
        Node {
            value,
            path: String::new(),
        }
    }

    fn corrupt(&self, msg: impl std::fmt::Display) -> HdspError {
        let path = if self.path.is_empty() { "<root>" } else { &self.path };
        HdspError::Corrupt(format!("{path}: {msg}"))
    }

    fn get(&self, key: &str) -> Result<Node<'a>> {
        let obj: &Map<String, Value> = self.value.as_object().ok_or_else(|| self.corrupt("expected an object"))?;
        let path = if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        };
        let value = obj
            .get(key)
            .ok_or_else(|| HdspError::Corrupt(format!("{path}: missing")))?;
        Ok(Node { value, path })
    }

    fn index(&self, i: usize) -> Node<'a> {
        Node {
            value: self.value.get(i).unwrap_or(&Value::Null),
            path: format!("{}[{i}]", self.path),
        }
    }

    fn array(&self) -> Result<&'a Vec<Value>> {
        self.value.as_array().ok_or_else(|| self.corrupt("expected an array"))
    }

    fn str(&self) -> Result<&'a str> {
        self.value.as_str().ok_or_else(|| self.corrupt("expected a string"))
    }

    fn bool(&self) -> Result<bool> {
        self.value.as_bool().ok_or_else(|| self.corrupt("expected a boolean"))
    }

    fn u64(&self) -> Result<u64> {
        self.value.as_u64().ok_or_else(|| self.corrupt("expected a non-negative integer"))
    }

    fn finite(&self) -> Result<f64> {
        match self.value.as_f64() {
            Some(x) if x.is_finite() => Ok(x),
            _ => Err(self.corrupt("expected a finite number")),
        }
    }

    fn positive(&self) -> Result<f64> {
        let x = self.finite()?;
        if x > 0.0 {
            Ok(x)
        } else {
            Err(self.corrupt(format!("must be > 0 (got {x})")))
        }
    }

    fn vec(&self, len: Option<usize>) -> Result<Vec<f64>> {
        let items = self.array()?;
        if let Some(n) = len.filter(|&n| n != items.len()) {
            return Err(self.corrupt(format!("expected {n} entries, found {}", items.len())));
        }
        (0..items.len()).map(|i| self.index(i).finite()).collect()
    }

    fn matrix(&self, rows: Option<usize>, cols: Option<usize>, ok: impl Fn(f64) -> bool, what: &str) -> Result<Array2<f64>> {
        let items = self.array()?;
        if let Some(n) = rows.filter(|&n| n != items.len()) {
            return Err(self.corrupt(format!("expected {n} rows, found {}", items.len())));
        }
        let mut data = Vec::new();
        let mut width = cols;
        for r in 0..items.len() {
            let row = self.index(r);
            let v = row.vec(width)?;
            width = Some(v.len());
            if let Some(c) = v.iter().position(|&x| !ok(x)) {
                return Err(row.index(c).corrupt(format!("must be {what} (got {})", v[c])));
            }
            data.extend(v);
        }
        let width = width.unwrap_or(0);
        Ok(Array2::from_shape_vec((items.len(), width), data).expect("rectangular"))
    }
}

pub fn ground_truth_value(truth: &GroundTruth) -> Value {
    let mut v = json!({
        "kind": truth.kind.to_string(),
        "topics": matrix(&truth.topics),
        "weights": matrix(&truth.weights),
        "topic_weights": truth.topic_weights,
        "alpha": truth.alpha,
        "beta": truth.beta,
    });
    if let Some(p) = &truth.positions {
        v["positions"] = json!({ "topics": p.topics, "labels": p.labels });
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_use_seventeen_digits_and_sorted_keys() {
        let s = to_canonical_string(&json!({"b": 0.1, "a": [1.0, -0.0], "c": {"z": 1, "y": 2.5e-300}}));
        assert_eq!(
            s,
            "{\n  \"a\": [1.0000000000000000e0,-0.0000000000000000e0],\n  \"b\": 1.0000000000000001e-1,\n  \"c\": {\n    \"y\": 2.5000000000000000e-300,\n    \"z\": 1\n  }\n}\n"
        );
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["b"].as_f64().unwrap().to_bits(), 0.1f64.to_bits());
        assert_eq!(back["a"][1].as_f64().unwrap().to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn rejects_other_versions() {
        let err = Snapshot::parse(r#"{"format": "hdsp-snapshot", "version": 99}"#).unwrap_err();
        assert!(matches!(err, HdspError::Incompatible(_)));
        let err = Snapshot::parse(r#"{"format": "other", "version": 1}"#).unwrap_err();
        assert!(matches!(err, HdspError::Incompatible(_)));
        assert!(matches!(Snapshot::parse("not json"), Err(HdspError::Corrupt(_))));
    }
}
