//! Slot-annotated utterances and the representations they convert to.
//!
//! The base record is [`AnnotatedUtterance`]: whitespace-free tokens, a
//! sorted non-overlapping list of [`SlotSpan`]s over them, and a domain
//! name. Conversions to and from angle-bracket markup, IOB tag sequences,
//! class-symbol patterns, and the token-added parenthesis format live in
//! the submodules and re-export from here.

mod io;
mod iob;
mod markup;
mod pattern;
mod token_added;

pub use io::{read_corpus, read_corpus_str, write_corpus, write_corpus_string};
pub use iob::{from_iob, to_iob};
pub use markup::{parse_markup, render_markup};
pub use pattern::{class_symbol, fill_class_pattern, parse_class_symbol, to_class_pattern};
pub use token_added::{parse_token_added, to_token_added, TokenAddedParse, CLOSE_TOKEN, OPEN_TOKEN};

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Errors raised by corpus construction, conversion, and file IO.
#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("invalid slot label {0:?}: labels are non-empty lowercase ascii with underscores")]
    InvalidLabel(String),
    #[error("label {0:?} is not registered")]
    UnknownLabel(String),
    #[error("domain {0:?} is not registered")]
    UnknownDomain(String),
    #[error("duplicate name {0:?} in registry")]
    DuplicateName(String),
    #[error("invalid token {0:?}: tokens are non-empty and free of whitespace and angle brackets")]
    InvalidToken(String),
    #[error("invalid span {start}..{end} over {len} tokens")]
    InvalidSpan { start: usize, end: usize, len: usize },
    #[error("spans must be sorted by start and non-overlapping")]
    OverlappingSpans,
    #[error("unbalanced markup tag {0:?}")]
    UnbalancedTag(String),
    #[error("markup tags may not nest (inside {0:?})")]
    NestedTag(String),
    #[error("token count {tokens} does not match tag count {tags}")]
    LengthMismatch { tokens: usize, tags: usize },
    #[error("invalid IOB tag {0:?}")]
    InvalidTag(String),
    #[error("class pattern has {symbols} symbols but {fills} fills")]
    FillMismatch { symbols: usize, fills: usize },
    #[error("assignment count {got} does not match {expected} class symbols")]
    MissingAssignment { expected: usize, got: usize },
    #[error("token {0:?} is not a registered class symbol")]
    UnknownSymbol(String),
    #[error("no letter mapped for label {0:?}")]
    UnmappedLabel(String),
    #[error("letter map entries must be unique in both directions")]
    AmbiguousLetterMap,
    #[error("malformed corpus record on line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A validated slot label: non-empty, lowercase ascii letters and
/// underscores only.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SlotLabel(String);

impl SlotLabel {
    pub fn new(name: impl Into<String>) -> Result<Self, CorpusError> {
        let name = name.into();
        let ok = !name.is_empty()
            && name
                .chars()
                .all(|c| c.is_ascii_lowercase() || c == '_');
        if ok {
            Ok(SlotLabel(name))
        } else {
            Err(CorpusError::InvalidLabel(name))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SlotLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for SlotLabel {
    type Error = CorpusError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        SlotLabel::new(s)
    }
}

impl From<SlotLabel> for String {
    fn from(l: SlotLabel) -> String {
        l.0
    }
}

/// The closed sets of slot labels and domain names a corpus may use.
///
/// Label order is significant: it fixes the default letter assignment and
/// the IOB tag layout, so it is preserved as given rather than sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registry {
    slot_labels: Vec<SlotLabel>,
    domains: Vec<String>,
}

impl Registry {
    pub fn new(
        labels: impl IntoIterator<Item = impl Into<String>>,
        domains: impl IntoIterator<Item = impl Into<String>>,
    ) -> Result<Self, CorpusError> {
        let mut slot_labels = Vec::new();
        let mut seen = BTreeSet::new();
        for l in labels {
            let label = SlotLabel::new(l)?;
            if !seen.insert(label.clone()) {
                return Err(CorpusError::DuplicateName(label.0));
            }
            slot_labels.push(label);
        }
        let mut domain_names = Vec::new();
        let mut seen = BTreeSet::new();
        for d in domains {
            let d = d.into();
            if d.is_empty() || d.chars().any(char::is_whitespace) {
                return Err(CorpusError::UnknownDomain(d));
            }
            if !seen.insert(d.clone()) {
                return Err(CorpusError::DuplicateName(d));
            }
            domain_names.push(d);
        }
        Ok(Registry { slot_labels, domains: domain_names })
    }

    /// The seven-label, four-domain registry used throughout the toolkit
    /// unless a grammar fixture says otherwise.
    pub fn standard() -> Self {
        Registry::new(
            [
                "contact_name",
                "contact_type",
                "address_type",
                "song_name",
                "album",
                "feature",
                "artist",
            ],
            ["communication", "navigation", "music", "others"],
        )
        .expect("standard registry is well formed")
    }

    pub fn slot_labels(&self) -> &[SlotLabel] {
        &self.slot_labels
    }

    pub fn domains(&self) -> &[String] {
        &self.domains
    }

    pub fn contains_label(&self, name: &str) -> bool {
        self.slot_labels.iter().any(|l| l.as_str() == name)
    }

    pub fn contains_domain(&self, name: &str) -> bool {
        self.domains.iter().any(|d| d == name)
    }

    pub fn label(&self, name: &str) -> Result<SlotLabel, CorpusError> {
        self.slot_labels
            .iter()
            .find(|l| l.as_str() == name)
            .cloned()
            .ok_or_else(|| CorpusError::UnknownLabel(name.to_string()))
    }

    /// Registers a label not present yet, keeping existing order intact.
    pub fn register_label(&mut self, name: &str) -> Result<SlotLabel, CorpusError> {
        if self.contains_label(name) {
            return self.label(name);
        }
        let label = SlotLabel::new(name)?;
        self.slot_labels.push(label.clone());
        Ok(label)
    }
}

/// A half-open token range `start..end` carrying a slot label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpan {
    pub start: usize,
    pub end: usize,
    pub label: SlotLabel,
}

impl SlotSpan {
    pub fn new(start: usize, end: usize, label: SlotLabel) -> Self {
        SlotSpan { start, end, label }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

pub(crate) fn check_token(tok: &str) -> Result<(), CorpusError> {
    let ok = !tok.is_empty()
        && !tok.chars().any(char::is_whitespace)
        && !tok.contains('<')
        && !tok.contains('>');
    if ok {
        Ok(())
    } else {
        Err(CorpusError::InvalidToken(tok.to_string()))
    }
}

/// A tokenized utterance with slot spans and a domain name.
///
/// Construction enforces every structural invariant, so a value of this
/// type is always well formed: tokens are non-empty and free of whitespace
/// and angle brackets, spans are non-empty, in range, sorted by start, and
/// pairwise disjoint. The fields stay private to keep it that way.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "io::RawRecord", into = "io::RawRecord")]
pub struct AnnotatedUtterance {
    tokens: Vec<String>,
    spans: Vec<SlotSpan>,
    domain: String,
}

impl AnnotatedUtterance {
    pub fn new(
        tokens: Vec<String>,
        spans: Vec<SlotSpan>,
        domain: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        for t in &tokens {
            check_token(t)?;
        }
        let mut prev_end = 0usize;
        for (i, s) in spans.iter().enumerate() {
            if s.is_empty() || s.end > tokens.len() {
                return Err(CorpusError::InvalidSpan {
                    start: s.start,
                    end: s.end,
                    len: tokens.len(),
                });
            }
            if i > 0 && s.start < prev_end {
                return Err(CorpusError::OverlappingSpans);
            }
            prev_end = s.end;
        }
        Ok(AnnotatedUtterance { tokens, spans, domain: domain.into() })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn spans(&self) -> &[SlotSpan] {
        &self.spans
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    /// The value tokens covered by a span.
    pub fn span_value(&self, span: &SlotSpan) -> &[String] {
        &self.tokens[span.start..span.end]
    }

    /// Checks that every span label and the domain are registered.
    pub fn check_registered(&self, registry: &Registry) -> Result<(), CorpusError> {
        for s in &self.spans {
            if !registry.contains_label(s.label.as_str()) {
                return Err(CorpusError::UnknownLabel(s.label.as_str().to_string()));
            }
        }
        if !registry.contains_domain(&self.domain) {
            return Err(CorpusError::UnknownDomain(self.domain.clone()));
        }
        Ok(())
    }
}

/// A class-symbol pattern: tokens where each slot is a single `$label`
/// symbol, paired with the value sequence each symbol replaced.
///
/// `fills` lines up with the symbol tokens left to right; the invariant is
/// checked on construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassPattern {
    tokens: Vec<String>,
    fills: Vec<(SlotLabel, Vec<String>)>,
    domain: String,
}

impl ClassPattern {
    pub fn new(
        tokens: Vec<String>,
        fills: Vec<(SlotLabel, Vec<String>)>,
        domain: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let symbols: Vec<SlotLabel> = tokens.iter().filter_map(|t| parse_class_symbol(t)).collect();
        if symbols.len() != fills.len() {
            return Err(CorpusError::FillMismatch { symbols: symbols.len(), fills: fills.len() });
        }
        for (sym, (label, _)) in symbols.iter().zip(&fills) {
            if sym != label {
                return Err(CorpusError::FillMismatch { symbols: symbols.len(), fills: fills.len() });
            }
        }
        Ok(ClassPattern { tokens, fills, domain: domain.into() })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn fills(&self) -> &[(SlotLabel, Vec<String>)] {
        &self.fills
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }
}

/// Bijective mapping between slot labels and single-letter marker tokens
/// for the token-added format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LetterMap {
    pairs: Vec<(SlotLabel, char)>,
}

impl LetterMap {
    pub fn new(pairs: Vec<(SlotLabel, char)>) -> Result<Self, CorpusError> {
        let labels: BTreeSet<_> = pairs.iter().map(|(l, _)| l.clone()).collect();
        let letters: BTreeSet<_> = pairs.iter().map(|(_, c)| *c).collect();
        if labels.len() != pairs.len() || letters.len() != pairs.len() {
            return Err(CorpusError::AmbiguousLetterMap);
        }
        Ok(LetterMap { pairs })
    }

    /// Maps the registry's labels to `a`, `b`, `c`, ... in registry order.
    pub fn for_registry(registry: &Registry) -> Self {
        let pairs = registry
            .slot_labels()
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), (b'a' + (i % 26) as u8) as char))
            .collect();
        LetterMap { pairs }
    }

    pub fn letter(&self, label: &SlotLabel) -> Option<char> {
        self.pairs.iter().find(|(l, _)| l == label).map(|(_, c)| *c)
    }

    pub fn label(&self, letter: char) -> Option<&SlotLabel> {
        self.pairs.iter().find(|(_, c)| *c == letter).map(|(l, _)| l)
    }

    pub fn pairs(&self) -> &[(SlotLabel, char)] {
        &self.pairs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(s: &str) -> SlotLabel {
        SlotLabel::new(s).unwrap()
    }

    #[test]
    fn label_form_is_checked() {
        assert!(SlotLabel::new("contact_name").is_ok());
        assert!(SlotLabel::new("").is_err());
        assert!(SlotLabel::new("Contact").is_err());
        assert!(SlotLabel::new("song-name").is_err());
        assert!(SlotLabel::new("song name").is_err());
        assert!(SlotLabel::new("song2").is_err());
    }

    #[test]
    fn standard_registry_order() {
        let reg = Registry::standard();
        let names: Vec<_> = reg.slot_labels().iter().map(|l| l.as_str()).collect();
        assert_eq!(
            names,
            ["contact_name", "contact_type", "address_type", "song_name", "album", "feature", "artist"]
        );
        assert_eq!(reg.domains(), ["communication", "navigation", "music", "others"]);
    }

    #[test]
    fn utterance_rejects_bad_tokens() {
        assert!(AnnotatedUtterance::new(vec!["a b".into()], vec![], "music").is_err());
        assert!(AnnotatedUtterance::new(vec!["<x>".into()], vec![], "music").is_err());
        assert!(AnnotatedUtterance::new(vec!["".into()], vec![], "music").is_err());
        assert!(AnnotatedUtterance::new(vec!["ok".into()], vec![], "music").is_ok());
    }

    #[test]
    fn utterance_rejects_bad_spans() {
        let toks = |n: usize| (0..n).map(|i| format!("t{i}")).collect::<Vec<_>>();
        // Empty span.
        assert!(AnnotatedUtterance::new(
            toks(3),
            vec![SlotSpan::new(1, 1, label("artist"))],
            "music"
        )
        .is_err());
        // Out of range.
        assert!(AnnotatedUtterance::new(
            toks(3),
            vec![SlotSpan::new(2, 4, label("artist"))],
            "music"
        )
        .is_err());
        // Overlap.
        assert!(AnnotatedUtterance::new(
            toks(4),
            vec![SlotSpan::new(0, 2, label("artist")), SlotSpan::new(1, 3, label("album"))],
            "music"
        )
        .is_err());
        // Unsorted.
        assert!(AnnotatedUtterance::new(
            toks(4),
            vec![SlotSpan::new(2, 3, label("artist")), SlotSpan::new(0, 1, label("album"))],
            "music"
        )
        .is_err());
        // Adjacent spans are fine.
        assert!(AnnotatedUtterance::new(
            toks(4),
            vec![SlotSpan::new(0, 2, label("artist")), SlotSpan::new(2, 4, label("album"))],
            "music"
        )
        .is_ok());
    }

    #[test]
    fn letter_map_defaults_follow_registry_order() {
        let reg = Registry::standard();
        let map = LetterMap::for_registry(&reg);
        assert_eq!(map.letter(&label("contact_name")), Some('a'));
        assert_eq!(map.letter(&label("artist")), Some('g'));
        assert_eq!(map.label('c'), Some(&label("address_type")));
    }

    #[test]
    fn letter_map_rejects_duplicates() {
        assert!(LetterMap::new(vec![(label("artist"), 'a'), (label("album"), 'a')]).is_err());
        assert!(LetterMap::new(vec![(label("artist"), 'a'), (label("artist"), 'b')]).is_err());
    }

    #[test]
    fn class_pattern_checks_fill_alignment() {
        let toks = vec!["play".to_string(), "$song_name".to_string()];
        assert!(ClassPattern::new(
            toks.clone(),
            vec![(label("song_name"), vec!["sorry".into()])],
            "music"
        )
        .is_ok());
        assert!(ClassPattern::new(toks.clone(), vec![], "music").is_err());
        assert!(ClassPattern::new(
            toks,
            vec![(label("album"), vec!["sorry".into()])],
            "music"
        )
        .is_err());
    }
}
