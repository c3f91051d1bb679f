//! Statement canonicalization, hashing and near-duplicate removal.
//!
//! Canonical form, in order: lowercase, decode HTML entities and strip tags,
//! rewrite LaTeX through a fixed table, cut at the first sample I/O heading,
//! collapse whitespace. Whitespace is collapsed last so that the sample I/O
//! cut can still see line starts.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Bumped whenever the canonical form changes.
pub const CANON_VERSION: u32 = 1;
pub const DEFAULT_NGRAM: usize = 5;
pub const DEFAULT_FUZZY_THRESHOLD: f64 = 0.8;

const ENTITIES: &[(&str, &str)] = &[
    ("&lt;", "<"),
    ("&gt;", ">"),
    ("&quot;", "\""),
    ("&#39;", "'"),
    ("&apos;", "'"),
    ("&nbsp;", " "),
    ("&amp;", "&"),
];

/// Symbol macros and their canonical tokens. Anything else loses its backslash.
const LATEX_MACROS: &[(&str, &str)] = &[
    ("le", " leq "),
    ("leq", " leq "),
    ("leqslant", " leq "),
    ("ge", " geq "),
    ("geq", " geq "),
    ("geqslant", " geq "),
    ("ne", " neq "),
    ("neq", " neq "),
    ("lt", " lt "),
    ("gt", " gt "),
    ("times", " times "),
    ("cdot", " times "),
    ("ldots", " ... "),
    ("cdots", " ... "),
    ("dots", " ... "),
    ("infty", " inf "),
    ("in", " in "),
    ("sum", " sum "),
    ("text", " "),
    ("mathrm", " "),
    ("mathbf", " "),
    ("mathit", " "),
    ("left", " "),
    ("right", " "),
    ("quad", " "),
    ("qquad", " "),
];

static TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"<[^<>]*>").unwrap());
static DELIMS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\$\$|\$|\\\(|\\\)|\\\[|\\\]").unwrap());
static MACRO: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\\([a-zA-Z]+)").unwrap());
static ESCAPED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\\[{}\\,;!:\s]|[{}]").unwrap());
static SAMPLE_IO: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^\s*(sample|example)s?\s*(input|output)").unwrap());
static SPACE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s+").unwrap());

fn decode_entities(mut s: String) -> String {
    loop {
        let mut next = s.clone();
        for (from, to) in ENTITIES {
            next = next.replace(from, to);
        }
        if next == s {
            return s;
        }
        s = next;
    }
}

fn strip_tags(mut s: String) -> String {
    loop {
        let next = TAG.replace_all(&s, "\n").into_owned();
        if next == s {
            return s;
        }
        s = next;
    }
}

fn rewrite_latex(s: &str) -> String {
    let table: HashMap<&str, &str> = LATEX_MACROS.iter().copied().collect();
    let s = DELIMS.replace_all(s, " ");
    let s = MACRO.replace_all(&s, |c: &regex::Captures| {
        let name = &c[1];
        table.get(name).map(|t| t.to_string()).unwrap_or_else(|| format!(" {name} "))
    });
    ESCAPED.replace_all(&s, " ").into_owned()
}

fn cut_sample_io(s: &str) -> &str {
    match SAMPLE_IO.find(s) {
        Some(m) => &s[..m.start()],
        None => s,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalStatement {
    pub original: String,
    pub canonical: String,
    /// SHA-256 of the canonical bytes, lowercase hex.
    pub digest: String,
}

pub fn canonical_text(text: &str) -> String {
    let s = text.to_lowercase();
    let s = strip_tags(decode_entities(s));
    let s = rewrite_latex(&s);
    let s = cut_sample_io(&s);
    SPACE.replace_all(s, " ").trim().to_string()
}

pub fn canonicalize(text: &str) -> CanonicalStatement {
    let canonical = canonical_text(text);
    let digest = hex::encode(Sha256::digest(canonical.as_bytes()));
    CanonicalStatement { original: text.to_string(), canonical, digest }
}

fn char_ngrams(s: &str, n: usize) -> HashSet<&str> {
    let bounds: Vec<usize> = s.char_indices().map(|(i, _)| i).chain([s.len()]).collect();
    if bounds.len() <= n {
        return HashSet::new();
    }
    (0..bounds.len() - n).map(|i| &s[bounds[i]..bounds[i + n]]).collect()
}

/// Jaccard similarity of two already-canonical texts' character n-gram sets.
pub fn ngram_jaccard(a: &str, b: &str, n: usize) -> f64 {
    let ga = char_ngrams(a, n);
    let gb = char_ngrams(b, n);
    if ga.is_empty() && gb.is_empty() {
        return if a == b { 1.0 } else { 0.0 };
    }
    let inter = ga.intersection(&gb).count();
    inter as f64 / (ga.len() + gb.len() - inter) as f64
}

/// Character n-gram Jaccard similarity over canonical text.
pub fn fuzzy_match(a: &str, b: &str, n: usize) -> f64 {
    ngram_jaccard(&canonical_text(a), &canonical_text(b), n)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusItem {
    pub id: String,
    pub source: String,
    pub text: String,
}

/// Ids containing `:` carry a namespace and are matched across corpora.
pub fn is_namespaced(id: &str) -> bool {
    id.contains(':')
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeconConfig {
    pub ngram: usize,
    pub threshold: f64,
}

impl Default for DeconConfig {
    fn default() -> Self {
        Self { ngram: DEFAULT_NGRAM, threshold: DEFAULT_FUZZY_THRESHOLD }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzyMatch {
    pub train_id: String,
    pub eval_id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OverlapReport {
    pub canon_version: u32,
    pub ngram: usize,
    pub threshold: f64,
    pub id_matches: Vec<(String, String)>,
    pub exact_matches: Vec<(String, String)>,
    pub fuzzy_matches: Vec<FuzzyMatch>,
    pub removed: Vec<String>,
}

impl OverlapReport {
    pub fn is_empty(&self) -> bool {
        self.id_matches.is_empty() && self.exact_matches.is_empty() && self.fuzzy_matches.is_empty()
    }
}

/// Removes training items that match an evaluation item by namespaced id,
/// canonical digest, or n-gram similarity at or above the threshold. The
/// evaluation corpus is only read.
pub fn decontaminate(train: &[CorpusItem], eval: &[CorpusItem], cfg: &DeconConfig) -> Result<(Vec<CorpusItem>, OverlapReport)> {
    if cfg.ngram == 0 || !(0.0..=1.0).contains(&cfg.threshold) {
        return Err(Error::Config("ngram must be positive and threshold in [0, 1]".into()));
    }
    let eval_ids: HashMap<&str, usize> = eval.iter().enumerate().map(|(i, e)| (e.id.as_str(), i)).collect();
    for t in train {
        if eval_ids.contains_key(t.id.as_str()) && !is_namespaced(&t.id) {
            return Err(Error::Input(format!(
                "id {} appears in both corpora without a namespace prefix",
                t.id
            )));
        }
    }
    let train_canon: Vec<CanonicalStatement> = train.par_iter().map(|t| canonicalize(&t.text)).collect();
    let eval_canon: Vec<CanonicalStatement> = eval.par_iter().map(|e| canonicalize(&e.text)).collect();
    let mut eval_digest: HashMap<&str, usize> = HashMap::new();
    for (i, c) in eval_canon.iter().enumerate() {
        eval_digest.entry(c.digest.as_str()).or_insert(i);
    }

    let mut report = OverlapReport {
        canon_version: CANON_VERSION,
        ngram: cfg.ngram,
        threshold: cfg.threshold,
        ..Default::default()
    };
    let mut removed: BTreeSet<usize> = BTreeSet::new();
    // Hash join on ids and digests first.
    for (ti, t) in train.iter().enumerate() {
        if let Some(&ei) = eval_ids.get(t.id.as_str()) {
            report.id_matches.push((t.id.clone(), eval[ei].id.clone()));
            removed.insert(ti);
        }
        if let Some(&ei) = eval_digest.get(train_canon[ti].digest.as_str()) {
            report.exact_matches.push((t.id.clone(), eval[ei].id.clone()));
            removed.insert(ti);
        }
    }
    // Fuzzy scan over what the hash join missed.
    let remaining: Vec<usize> = (0..train.len()).filter(|i| !removed.contains(i)).collect();
    let fuzzy: Vec<Option<FuzzyMatch>> = remaining
        .par_iter()
        .map(|&ti| {
            let mut best: Option<(usize, f64)> = None;
            for (ei, ec) in eval_canon.iter().enumerate() {
                let sim = ngram_jaccard(&train_canon[ti].canonical, &ec.canonical, cfg.ngram);
                if sim >= cfg.threshold && best.is_none_or(|(_, b)| sim > b) {
                    best = Some((ei, sim));
                }
            }
            best.map(|(ei, similarity)| FuzzyMatch {
                train_id: train[ti].id.clone(),
                eval_id: eval[ei].id.clone(),
                similarity,
            })
        })
        .collect();
    for (&ti, m) in remaining.iter().zip(fuzzy) {
        if let Some(m) = m {
            report.fuzzy_matches.push(m);
            removed.insert(ti);
        }
    }
    report.removed = removed.iter().map(|&i| train[i].id.clone()).collect();
    let kept: Vec<CorpusItem> = train
        .iter()
        .enumerate()
        .filter(|(i, _)| !removed.contains(i))
        .map(|(_, t)| t.clone())
        .collect();

    let overlap = exact_overlap(&kept, eval);
    if overlap != 0 {
        return Err(Error::AuditFailed(format!("{overlap} exact overlaps remain after decontamination")));
    }
    Ok((kept, report))
}

/// Number of training items whose canonical digest appears in `eval`.
pub fn exact_overlap(train: &[CorpusItem], eval: &[CorpusItem]) -> usize {
    let digests: HashSet<String> = eval.par_iter().map(|e| canonicalize(&e.text).digest).collect();
    train
        .par_iter()
        .filter(|t| digests.contains(&canonicalize(&t.text).digest))
        .count()
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusItem>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut items = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Input(format!("{}:{}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(items)
}

pub fn write_corpus(path: &Path, items: &[CorpusItem]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
