//! Text formats for corpora, vocabularies and labels, plus atomic writes.
//!
//! Corpus: one document per line, `doc_id<TAB>wordid:count wordid:count …`
//! with 0-based ids into the vocabulary file (one token per line).
//! Labels: a header `#labels<TAB>name name …` declaring the schema, then
//! `doc_id<TAB>name[=value] …` lines; a bare name means 1.0 and documents
//! without a line have every label at 0.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{HdspError, Result};
use crate::model::{Corpus, Document, ScalingKind};

pub const LABELS_HEADER: &str = "#labels";

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| HdspError::io(path, e))
}

/// Writes through a temporary file in the same directory, then renames.
pub fn atomic_write(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| HdspError::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| HdspError::io(&dir, e))?;
    tmp.write_all(contents).map_err(|e| HdspError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| HdspError::io(path, e))?;
    tmp.persist(path).map_err(|e| HdspError::io(path, e.error))?;
    Ok(())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> HdspError {
    HdspError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub fn parse_vocab(text: &str, path: &Path) -> Result<Vec<String>> {
    let mut seen = HashSet::new();
    let mut vocab = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let token = line.trim_end_matches('\r');
        if token.is_empty() || token.contains(char::is_whitespace) {
            return Err(parse_err(path, n + 1, "vocabulary lines must hold exactly one token"));
        }
        if !seen.insert(token) {
            return Err(parse_err(path, n + 1, format!("duplicate token `{token}`")));
        }
        vocab.push(token.to_string());
    }
    if vocab.is_empty() {
        return Err(parse_err(path, 1, "vocabulary is empty"));
    }
    Ok(vocab)
}

/// (doc id, word counts) per line, in file order.
pub fn parse_corpus(text: &str, path: &Path, vocab_size: usize) -> Result<Vec<(String, BTreeMap<usize, u32>)>> {
    let mut ids = HashSet::new();
    let mut docs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() {
            continue;
        }
        let (id, rest) = raw
            .split_once('\t')
            .ok_or_else(|| parse_err(path, line, "expected `doc_id<TAB>wordid:count …`"))?;
        if id.is_empty() || id.contains(char::is_whitespace) {
            return Err(parse_err(path, line, format!("invalid document id `{id}`")));
        }
        if !ids.insert(id.to_string()) {
            return Err(parse_err(path, line, format!("duplicate document id `{id}`")));
        }
        let mut counts = BTreeMap::new();
        for item in rest.split_whitespace() {
            let (w, c) = item
                .split_once(':')
                .ok_or_else(|| parse_err(path, line, format!("expected wordid:count, got `{item}`")))?;
            let w: usize = w
                .parse()
                .map_err(|_| parse_err(path, line, format!("invalid word id `{w}`")))?;
            let c: u32 = c
                .parse()
                .map_err(|_| parse_err(path, line, format!("invalid count `{c}`")))?;
            if w >= vocab_size {
                return Err(parse_err(
                    path,
                    line,
                    format!("word id {w} outside vocabulary of size {vocab_size}"),
                ));
            }
            if c == 0 {
                return Err(parse_err(path, line, format!("zero count for word {w}")));
            }
            if counts.insert(w, c).is_some() {
                return Err(parse_err(path, line, format!("word id {w} listed twice")));
            }
        }
        docs.push((id.to_string(), counts));
    }
    Ok(docs)
}

/// Label schema and sparse per-document values.
pub struct Labels {
    pub names: Vec<String>,
    pub values: HashMap<String, Vec<f64>>,
}

pub fn parse_labels(text: &str, path: &Path) -> Result<Labels> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, format!("missing `{LABELS_HEADER}` header")))?;
    let header = header.trim_end_matches('\r');
    let names: Vec<String> = match header.split_once('\t') {
        Some((LABELS_HEADER, rest)) => rest.split_whitespace().map(str::to_string).collect(),
        None if header == LABELS_HEADER => Vec::new(),
        _ => return Err(parse_err(path, 1, format!("expected `{LABELS_HEADER}<TAB>name …` header"))),
    };
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(j, n)| (n.as_str(), j)).collect();
    if index.len() != names.len() {
        return Err(parse_err(path, 1, "duplicate label name in header"));
    }
    let mut values = HashMap::new();
    for (n, raw) in lines {
        let line = n + 1;
        let raw = raw.trim_end_matches('\r');
        let (id, rest) = raw
            .split_once('\t')
            .ok_or_else(|| parse_err(path, line, "expected `doc_id<TAB>name[=value] …`"))?;
        let mut r = vec![0.0; names.len()];
        for item in rest.split_whitespace() {
            let (name, value) = match item.split_once('=') {
                Some((name, v)) => {
                    let value: f64 = v
                        .parse()
                        .map_err(|_| parse_err(path, line, format!("invalid label value `{v}`")))?;
                    if !value.is_finite() {
                        return Err(parse_err(path, line, format!("non-finite label value `{v}`")));
                    }
                    (name, value)
                }
                None => (item, 1.0),
            };
            let &j = index
                .get(name)
                .ok_or_else(|| parse_err(path, line, format!("label `{name}` is not declared in the header")))?;
            r[j] = value;
        }
        if values.insert(id.to_string(), r).is_some() {
            return Err(parse_err(path, line, format!("duplicate document id `{id}`")));
        }
    }
    Ok(Labels { names, values })
}

/// Reads and validates a corpus. Without a labels file the schema is empty.
/// Under the categorical scaling every label value must be 0 or 1.
pub fn load_corpus(corpus_path: &Path, vocab_path: &Path, labels_path: Option<&Path>, kind: ScalingKind) -> Result<Corpus> {
    let vocab = parse_vocab(&read_text(vocab_path)?, vocab_path)?;
    let docs = parse_corpus(&read_text(corpus_path)?, corpus_path, vocab.len())?;
    let labels = match labels_path {
        Some(p) => parse_labels(&read_text(p)?, p)?,
        None => Labels {
            names: Vec::new(),
            values: HashMap::new(),
        },
    };
    let known: HashSet<&str> = docs.iter().map(|(id, _)| id.as_str()).collect();
    let mut orphans: Vec<&str> = labels.values.keys().map(String::as_str).filter(|id| !known.contains(id)).collect();
    if !orphans.is_empty() {
        orphans.sort_unstable();
        return Err(HdspError::Validation(format!(
            "labels given for unknown documents: {}",
            orphans.join(", ")
        )));
    }
    let j = labels.names.len();
    let documents = docs
        .into_iter()
        .map(|(id, counts)| {
            let r = labels.values.get(&id).cloned().unwrap_or_else(|| vec![0.0; j]);
            Document::new(id, &counts, r)
        })
        .collect();
    let corpus = Corpus::new(documents, vocab.len(), labels.names)?;
    if kind == ScalingKind::Categorical {
        corpus.check_binary_labels()?;
    }
    Ok(corpus)
}

pub fn format_corpus(corpus: &Corpus) -> String {
    let mut out = String::new();
    for doc in &corpus.documents {
        out.push_str(&doc.id);
        out.push('\t');
        let items: Vec<String> = doc.tokens.iter().map(|(w, c)| format!("{w}:{c}")).collect();
        out.push_str(&items.join(" "));
        out.push('\n');
    }
    out
}

pub fn format_vocab(vocab: &[String]) -> String {
    vocab.iter().map(|t| format!("{t}\n")).collect()
}

/// Documents with every label at 0 are omitted.
pub fn format_labels(corpus: &Corpus) -> String {
    let mut out = format!("{LABELS_HEADER}\t{}\n", corpus.label_names.join(" "));
    for doc in &corpus.documents {
        let items: Vec<String> = doc
            .labels
            .iter()
            .zip(&corpus.label_names)
            .filter(|(v, _)| **v != 0.0)
            .map(|(&v, name)| if v == 1.0 { name.clone() } else { format!("{name}={v}") })
            .collect();
        if !items.is_empty() {
            out.push_str(&format!("{}\t{}\n", doc.id, items.join(" ")));
        }
    }
    out
}

/// `w0`, `w1`, … for generated corpora.
pub fn synthetic_vocab(size: usize) -> Vec<String> {
    (0..size).map(|i| format!("w{i}")).collect()
}
