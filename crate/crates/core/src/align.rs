//! Word alignment and slot projection.
//!
//! An [`AlignmentTable`] holds IBM Model 1 lexical translation
//! probabilities, optionally sharpened by a fixed diagonal positional
//! prior in the fast-align style. [`viterbi_align`] links each target
//! position to its best source position (or NULL), and [`project_slots`]
//! carries slot spans across those links.

use std::collections::{BTreeSet, HashMap};

use ndarray::Array2;
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::corpus::{AnnotatedUtterance, CorpusError, SlotSpan};

/// Row 0 of the table: the empty source word every target word may align to.
pub const NULL_TOKEN: &str = "<null>";

/// Diagonal tension used when the positional prior is enabled.
pub const DIAGONAL_TENSION: f64 = 4.0;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("alignment training needs a non-empty parallel corpus")]
    EmptyCorpus,
    #[error("alignment training needs at least one EM iteration")]
    NoIterations,
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Lexical translation probabilities `t(target | source)` with the source
/// vocabulary on rows (row 0 is NULL) and the target vocabulary on
/// columns. Every row is a distribution over target words.
#[derive(Debug, Clone)]
pub struct AlignmentTable {
    src_vocab: Vec<String>,
    tgt_vocab: Vec<String>,
    src_index: HashMap<String, usize>,
    tgt_index: HashMap<String, usize>,
    /// `t[(j, i)]` is `t(tgt_vocab[i] | src_vocab[j])`.
    table: Array2<f64>,
    /// Diagonal tension; 0 means the uniform positional prior.
    lambda: f64,
    /// Corpus log-likelihood after each EM iteration.
    ll_history: Vec<f64>,
}

/// Per-sentence links: `links[i]` is the source position target position
/// `i` aligns to, or `None` for NULL.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentLinkSet {
    pub links: Vec<Option<usize>>,
}

impl AlignmentLinkSet {
    /// The conventional "i-j" pair text: space-separated `src-tgt` links,
    /// NULL links omitted.
    pub fn to_pairs(&self) -> String {
        let mut out = String::new();
        for (tgt, src) in self.links.iter().enumerate() {
            if let Some(src) = src {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(&format!("{src}-{tgt}"));
            }
        }
        out
    }
}

/// Positional prior over source position `j` (0-based, `None` = NULL) for
/// target position `i`, with `n` source and `m` target tokens. With zero
/// tension every choice weighs `1/(n+1)`; with positive tension the NULL
/// share stays `1/(n+1)` and the rest concentrates near the diagonal.
fn position_weight(lambda: f64, i: usize, j: Option<usize>, m: usize, n: usize) -> f64 {
    let null_share = 1.0 / (n as f64 + 1.0);
    let Some(j) = j else { return null_share };
    if lambda == 0.0 {
        return null_share;
    }
    let rel = |pos: usize, len: usize| (pos as f64 + 1.0) / len as f64;
    let h = |j: usize| (-lambda * (rel(i, m) - rel(j, n)).abs()).exp();
    let z: f64 = (0..n).map(h).sum();
    (1.0 - null_share) * h(j) / z
}

/// Runs EM on the Model 1 likelihood. The positional prior is fixed
/// throughout (tension [`DIAGONAL_TENSION`] when `diagonal` is set), so
/// the corpus log-likelihood is non-decreasing across iterations.
pub fn train_aligner(
    pairs: &[(Vec<String>, Vec<String>)],
    iterations: usize,
    diagonal: bool,
) -> Result<AlignmentTable, AlignError> {
    if pairs.is_empty() {
        return Err(AlignError::EmptyCorpus);
    }
    if iterations == 0 {
        return Err(AlignError::NoIterations);
    }
    let lambda = if diagonal { DIAGONAL_TENSION } else { 0.0 };

    let mut src_set = BTreeSet::new();
    let mut tgt_set = BTreeSet::new();
    for (src, tgt) in pairs {
        src_set.extend(src.iter().cloned());
        tgt_set.extend(tgt.iter().cloned());
    }
    let mut src_vocab = vec![NULL_TOKEN.to_string()];
    src_vocab.extend(src_set);
    let tgt_vocab: Vec<String> = tgt_set.into_iter().collect();
    let src_index: HashMap<String, usize> =
        src_vocab.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
    let tgt_index: HashMap<String, usize> =
        tgt_vocab.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();

    let rows = src_vocab.len();
    let cols = tgt_vocab.len();
    let mut table = Array2::from_elem((rows, cols), 1.0 / cols as f64);

    let encoded: Vec<(Vec<usize>, Vec<usize>)> = pairs
        .iter()
        .map(|(src, tgt)| {
            (
                src.iter().map(|w| src_index[w]).collect(),
                tgt.iter().map(|w| tgt_index[w]).collect(),
            )
        })
        .collect();

    let mut ll_history = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let mut counts = Array2::<f64>::zeros((rows, cols));
        let mut ll = 0.0;
        for (src, tgt) in &encoded {
            let (n, m) = (src.len(), tgt.len());
            for (i, &f) in tgt.iter().enumerate() {
                let null_post = position_weight(lambda, i, None, m, n) * table[(0, f)];
                let mut posts = Vec::with_capacity(n);
                let mut z = null_post;
                for (j, &e) in src.iter().enumerate() {
                    let p = position_weight(lambda, i, Some(j), m, n) * table[(e, f)];
                    posts.push(p);
                    z += p;
                }
                ll += z.ln();
                if z == 0.0 {
                    continue;
                }
                counts[(0, f)] += null_post / z;
                for (j, &e) in src.iter().enumerate() {
                    counts[(e, f)] += posts[j] / z;
                }
            }
        }
        ll_history.push(ll);
        for mut row in counts.rows_mut() {
            let total: f64 = row.sum();
            if total > 0.0 {
                row.mapv_inplace(|c| c / total);
            } else {
                row.fill(1.0 / cols as f64);
            }
        }
        table = counts;
    }

    Ok(AlignmentTable {
        src_vocab,
        tgt_vocab,
        src_index,
        tgt_index,
        table,
        lambda,
        ll_history,
    })
}

impl AlignmentTable {
    /// `t(target | source)`; zero when either word is out of vocabulary.
    pub fn prob(&self, source: &str, target: &str) -> f64 {
        match (self.src_index.get(source), self.tgt_index.get(target)) {
            (Some(&j), Some(&i)) => self.table[(j, i)],
            _ => 0.0,
        }
    }

    /// `t(target | NULL)`.
    pub fn null_prob(&self, target: &str) -> f64 {
        self.tgt_index.get(target).map_or(0.0, |&i| self.table[(0, i)])
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Corpus log-likelihood after each EM iteration.
    pub fn ll_history(&self) -> &[f64] {
        &self.ll_history
    }

    pub fn src_vocab(&self) -> &[String] {
        &self.src_vocab
    }

    pub fn tgt_vocab(&self) -> &[String] {
        &self.tgt_vocab
    }

    /// The target word maximizing `t(target | source)`, ties to the
    /// lexicographically first. None for out-of-vocabulary sources.
    pub fn argmax_target(&self, source: &str) -> Option<&str> {
        let &j = self.src_index.get(source)?;
        let mut best = 0usize;
        for i in 1..self.tgt_vocab.len() {
            if self.table[(j, i)] > self.table[(j, best)] {
                best = i;
            }
        }
        Some(&self.tgt_vocab[best])
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), AlignError> {
        let header = serde_json::json!({
            "src_vocab": self.src_vocab,
            "tgt_vocab": self.tgt_vocab,
            "lambda": self.lambda,
            "ll_history": self.ll_history,
        });
        let ckpt = Checkpoint {
            kind: "align".to_string(),
            header,
            tensors: vec![("table".to_string(), self.table.clone())],
        };
        ckpt.save(path)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, AlignError> {
        let ckpt = Checkpoint::load(path, "align")?;
        let bad = |m: &str| CheckpointError::BadHeader(m.to_string());
        let vocab = |key: &str| -> Result<Vec<String>, AlignError> {
            let v = ckpt.header.get(key).ok_or_else(|| bad(key))?;
            Ok(serde_json::from_value(v.clone())
                .map_err(|e| bad(&format!("{key}: {e}")))?)
        };
        let src_vocab = vocab("src_vocab")?;
        let tgt_vocab = vocab("tgt_vocab")?;
        let lambda = ckpt
            .header
            .get("lambda")
            .and_then(|v| v.as_f64())
            .ok_or_else(|| bad("lambda"))?;
        let ll_history: Vec<f64> = ckpt
            .header
            .get("ll_history")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .ok_or_else(|| bad("ll_history"))?;
        let table = ckpt
            .tensors
            .into_iter()
            .find(|(name, _)| name == "table")
            .map(|(_, t)| t)
            .ok_or_else(|| bad("missing table tensor"))?;
        if table.dim() != (src_vocab.len(), tgt_vocab.len()) {
            return Err(bad("table shape does not match vocabularies").into());
        }
        let src_index = src_vocab.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let tgt_index = tgt_vocab.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(AlignmentTable {
            src_vocab,
            tgt_vocab,
            src_index,
            tgt_index,
            table,
            lambda,
            ll_history,
        })
    }
}

/// Links each target position to the source position (or NULL) with the
/// highest `prior × t`. NULL wins ties; among source positions the
/// smaller index wins. Out-of-vocabulary target words link to NULL.
pub fn viterbi_align(
    table: &AlignmentTable,
    src_tokens: &[String],
    tgt_tokens: &[String],
) -> AlignmentLinkSet {
    let (n, m) = (src_tokens.len(), tgt_tokens.len());
    let links = tgt_tokens
        .iter()
        .enumerate()
        .map(|(i, f)| {
            if !table.tgt_index.contains_key(f) {
                return None;
            }
            let mut best = None;
            let mut best_score =
                position_weight(table.lambda, i, None, m, n) * table.null_prob(f);
            for (j, e) in src_tokens.iter().enumerate() {
                let score =
                    position_weight(table.lambda, i, Some(j), m, n) * table.prob(e, f);
                if score > best_score {
                    best_score = score;
                    best = Some(j);
                }
            }
            best
        })
        .collect();
    AlignmentLinkSet { links }
}

/// What projection had to discard: spans with no aligned target position
/// and spans dropped by overlap resolution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProjectionDamage {
    pub unaligned: usize,
    pub overlapping: usize,
}

impl ProjectionDamage {
    pub fn total(&self) -> usize {
        self.unaligned + self.overlapping
    }
}

/// Projects each source span onto the minimal contiguous target interval
/// covering every target position linked into it. Spans that would
/// overlap keep the one whose source span starts first; losers are
/// counted, not kept. The domain carries over unchanged.
pub fn project_slots(
    source: &AnnotatedUtterance,
    tgt_tokens: &[String],
    links: &AlignmentLinkSet,
) -> Result<(AnnotatedUtterance, ProjectionDamage), CorpusError> {
    let mut damage = ProjectionDamage::default();
    let mut projected: Vec<SlotSpan> = Vec::new();
    for span in source.spans() {
        let mut lo = usize::MAX;
        let mut hi = 0usize;
        for (tgt_pos, src_pos) in links.links.iter().enumerate() {
            if let Some(j) = src_pos {
                if span.start <= *j && *j < span.end && tgt_pos < tgt_tokens.len() {
                    lo = lo.min(tgt_pos);
                    hi = hi.max(tgt_pos + 1);
                }
            }
        }
        if lo == usize::MAX {
            damage.unaligned += 1;
            continue;
        }
        let candidate = SlotSpan { start: lo, end: hi, label: span.label.clone() };
        if projected.iter().any(|p| candidate.start < p.end && p.start < candidate.end) {
            damage.overlapping += 1;
            continue;
        }
        projected.push(candidate);
    }
    projected.sort_by_key(|s| s.start);
    let utterance =
        AnnotatedUtterance::new(tgt_tokens.to_vec(), projected, source.domain())?;
    Ok((utterance, damage))
}
