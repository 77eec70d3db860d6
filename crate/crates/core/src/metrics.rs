//! Slot keeping ratio, chunk F1, and domain accuracy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{parse_class_symbol, AnnotatedUtterance, ClassPattern, SlotLabel};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("got {left} items on one side and {right} on the other")]
    LengthMismatch { left: usize, right: usize },
    #[error("token sequences differ at record {index}")]
    TokenMismatch { index: usize },
}

/// Per-label slot occurrence counts for one sentence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotCountVector(BTreeMap<SlotLabel, usize>);

impl SlotCountVector {
    pub fn new() -> Self {
        SlotCountVector(BTreeMap::new())
    }

    pub fn add(&mut self, label: &SlotLabel, n: usize) {
        if n > 0 {
            *self.0.entry(label.clone()).or_insert(0) += n;
        }
    }

    pub fn get(&self, label: &SlotLabel) -> usize {
        self.0.get(label).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.0.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SlotLabel, usize)> {
        self.0.iter().map(|(l, &n)| (l, n))
    }

    /// Occurrences kept by a hypothesis, clamped per label so surplus
    /// slots never count.
    pub fn kept_by(&self, hyp: &SlotCountVector) -> usize {
        self.0.iter().map(|(l, &n)| n.min(hyp.get(l))).sum()
    }
}

/// Counts each span occurrence once, whatever its width.
pub fn slot_counts(utt: &AnnotatedUtterance) -> SlotCountVector {
    let mut v = SlotCountVector::new();
    for s in utt.spans() {
        v.add(&s.label, 1);
    }
    v
}

/// Counts the class symbols of a pattern.
pub fn slot_counts_pattern(pattern: &ClassPattern) -> SlotCountVector {
    slot_counts_tokens(pattern.tokens())
}

/// Counts class-symbol tokens (`$label` form) in a raw token sequence.
pub fn slot_counts_tokens(tokens: &[String]) -> SlotCountVector {
    let mut v = SlotCountVector::new();
    for t in tokens {
        if let Some(label) = parse_class_symbol(t) {
            v.add(&label, 1);
        }
    }
    v
}

/// Slot keeping ratio of one hypothesis against its source counts.
///
/// Kept occurrences are clamped per label, so the ratio never exceeds 1.
/// A source with no slots keeps everything vacuously: the ratio is 1.
pub fn skr(source: &SlotCountVector, hypothesis: &SlotCountVector) -> f64 {
    let total = source.total();
    if total == 0 {
        return 1.0;
    }
    source.kept_by(hypothesis) as f64 / total as f64
}

/// Corpus-level slot keeping: micro-averaged over slot occurrences.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkrReport {
    /// Total clamped kept occurrences over total source occurrences.
    pub corpus: f64,
    pub kept: usize,
    pub total: usize,
    /// Per-sentence ratios, 1.0 for zero-slot sentences.
    pub per_sentence: Vec<f64>,
    /// Sentences with no source slots; they carry no weight in `corpus`.
    pub zero_slot_sentences: usize,
}

/// Micro-averages SKR over aligned source/hypothesis count vectors.
///
/// Zero-slot sentences are excluded from the average (they have no
/// occurrences to keep); a corpus with no slots at all scores 1.0.
pub fn corpus_skr(
    sources: &[SlotCountVector],
    hypotheses: &[SlotCountVector],
) -> Result<SkrReport, MetricsError> {
    if sources.len() != hypotheses.len() {
        return Err(MetricsError::LengthMismatch { left: sources.len(), right: hypotheses.len() });
    }
    let mut kept = 0usize;
    let mut total = 0usize;
    let mut zero = 0usize;
    let mut per_sentence = Vec::with_capacity(sources.len());
    for (src, hyp) in sources.iter().zip(hypotheses) {
        per_sentence.push(skr(src, hyp));
        let t = src.total();
        if t == 0 {
            zero += 1;
        } else {
            kept += src.kept_by(hyp);
            total += t;
        }
    }
    let corpus = if total == 0 { 1.0 } else { kept as f64 / total as f64 };
    Ok(SkrReport { corpus, kept, total, per_sentence, zero_slot_sentences: zero })
}

/// Gold/predicted/correct counts with the usual derived scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrfCounts {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

impl PrfCounts {
    pub fn precision(&self) -> f64 {
        if self.predicted == 0 { 0.0 } else { self.correct as f64 / self.predicted as f64 }
    }

    pub fn recall(&self) -> f64 {
        if self.gold == 0 { 0.0 } else { self.correct as f64 / self.gold as f64 }
    }

    pub fn f1(&self) -> f64 {
        let p = self.precision();
        let r = self.recall();
        if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) }
    }
}

/// Exact-match chunk scores, overall and per label.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ChunkScore {
    pub overall: PrfCounts,
    pub per_label: BTreeMap<SlotLabel, PrfCounts>,
}

/// Scores predicted spans against gold spans; a chunk is correct only if
/// start, end, and label all match. Both corpora must be aligned over the
/// same token sequences.
pub fn chunk_f1(
    gold: &[AnnotatedUtterance],
    predicted: &[AnnotatedUtterance],
) -> Result<ChunkScore, MetricsError> {
    if gold.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch { left: gold.len(), right: predicted.len() });
    }
    let mut score = ChunkScore::default();
    for (index, (g, p)) in gold.iter().zip(predicted).enumerate() {
        if g.tokens() != p.tokens() {
            return Err(MetricsError::TokenMismatch { index });
        }
        for span in g.spans() {
            score.overall.gold += 1;
            score.per_label.entry(span.label.clone()).or_default().gold += 1;
        }
        for span in p.spans() {
            score.overall.predicted += 1;
            let entry = score.per_label.entry(span.label.clone()).or_default();
            entry.predicted += 1;
            if g.spans().contains(span) {
                score.overall.correct += 1;
                entry.correct += 1;
            }
        }
    }
    Ok(score)
}

/// Fraction of records whose predicted domain matches the gold domain.
pub fn domain_accuracy<S: AsRef<str>, T: AsRef<str>>(
    gold: &[S],
    predicted: &[T],
) -> Result<f64, MetricsError> {
    if gold.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch { left: gold.len(), right: predicted.len() });
    }
    if gold.is_empty() {
        return Ok(1.0);
    }
    let hits = gold
        .iter()
        .zip(predicted)
        .filter(|(g, p)| g.as_ref() == p.as_ref())
        .count();
    Ok(hits as f64 / gold.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_markup, Registry, to_class_pattern};

    fn utt(markup: &str, domain: &str) -> AnnotatedUtterance {
        parse_markup(markup, domain, &Registry::standard()).unwrap()
    }

    fn label(s: &str) -> SlotLabel {
        SlotLabel::new(s).unwrap()
    }

    #[test]
    fn counts_spans_not_tokens() {
        let u = utt("play <album>they don't know</album> and <album>purpose</album>", "music");
        let v = slot_counts(&u);
        assert_eq!(v.get(&label("album")), 2);
        assert_eq!(v.total(), 2);
    }

    #[test]
    fn pattern_and_token_counts_agree() {
        let u = utt("play <song_name>sorry</song_name> by <artist>x y</artist>", "music");
        let p = to_class_pattern(&u);
        assert_eq!(slot_counts_pattern(&p), slot_counts(&u));
        assert_eq!(slot_counts_tokens(p.tokens()), slot_counts(&u));
    }

    #[test]
    fn surplus_slots_are_clamped() {
        let mut src = SlotCountVector::new();
        src.add(&label("artist"), 1);
        let mut hyp = SlotCountVector::new();
        hyp.add(&label("artist"), 3);
        assert_eq!(skr(&src, &hyp), 1.0);
    }

    #[test]
    fn wrong_label_does_not_count() {
        let mut src = SlotCountVector::new();
        src.add(&label("artist"), 1);
        src.add(&label("album"), 1);
        let mut hyp = SlotCountVector::new();
        hyp.add(&label("artist"), 1);
        hyp.add(&label("song_name"), 1);
        assert_eq!(skr(&src, &hyp), 0.5);
    }

    #[test]
    fn zero_slot_sentence_scores_one() {
        let src = SlotCountVector::new();
        let hyp = SlotCountVector::new();
        assert_eq!(skr(&src, &hyp), 1.0);
    }

    #[test]
    fn corpus_skr_is_micro_averaged() {
        let mk = |pairs: &[(&str, usize)]| {
            let mut v = SlotCountVector::new();
            for (l, n) in pairs {
                v.add(&label(l), *n);
            }
            v
        };
        // Sentence 1 keeps 1 of 3, sentence 2 keeps 1 of 1, sentence 3 has
        // no slots. Micro average: 2/4, not the mean of (1/3, 1, 1).
        let sources = vec![mk(&[("artist", 3)]), mk(&[("album", 1)]), mk(&[])];
        let hyps = vec![mk(&[("artist", 1)]), mk(&[("album", 1)]), mk(&[])];
        let rep = corpus_skr(&sources, &hyps).unwrap();
        assert_eq!(rep.corpus, 0.5);
        assert_eq!(rep.kept, 2);
        assert_eq!(rep.total, 4);
        assert_eq!(rep.zero_slot_sentences, 1);
        assert_eq!(rep.per_sentence, vec![1.0 / 3.0, 1.0, 1.0]);
    }

    #[test]
    fn chunk_f1_exact_match_only() {
        let gold = vec![utt("play <song_name>sorry sorry</song_name> now", "music")];
        // Boundary off by one: predicted span covers one token fewer.
        let pred = vec![utt("play <song_name>sorry</song_name> sorry now", "music")];
        let score = chunk_f1(&gold, &pred).unwrap();
        assert_eq!(score.overall.correct, 0);
        assert_eq!(score.overall.gold, 1);
        assert_eq!(score.overall.predicted, 1);
        assert_eq!(score.overall.f1(), 0.0);
    }

    #[test]
    fn chunk_f1_perfect() {
        let gold = vec![utt("play <song_name>sorry</song_name> by <artist>jb</artist>", "music")];
        let score = chunk_f1(&gold, &gold.clone()).unwrap();
        assert_eq!(score.overall.f1(), 1.0);
        assert_eq!(score.per_label.len(), 2);
    }

    #[test]
    fn chunk_f1_checks_tokens() {
        let gold = vec![utt("a b", "music")];
        let pred = vec![utt("a c", "music")];
        assert!(matches!(chunk_f1(&gold, &pred), Err(MetricsError::TokenMismatch { index: 0 })));
    }

    #[test]
    fn domain_accuracy_counts_matches() {
        let gold = ["music", "navigation", "others"];
        let pred = ["music", "music", "others"];
        let acc = domain_accuracy(&gold, &pred).unwrap();
        assert!((acc - 2.0 / 3.0).abs() < 1e-12);
    }
}
