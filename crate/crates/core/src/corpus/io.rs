//! Corpus files: one JSON object per line.
//!
//! ```text
//! {"tokens":["play","sorry"],"spans":[[1,2,"song_name"]],"domain":"music"}
//! ```
//!
//! Spans are `[start, end, label]` triples over token indices, end
//! exclusive. Field names are part of the on-disk contract.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AnnotatedUtterance, CorpusError, Registry, SlotLabel, SlotSpan};

#[derive(Serialize, Deserialize)]
pub(crate) struct RawRecord {
    tokens: Vec<String>,
    spans: Vec<(usize, usize, String)>,
    domain: String,
}

impl TryFrom<RawRecord> for AnnotatedUtterance {
    type Error = CorpusError;
    fn try_from(raw: RawRecord) -> Result<Self, Self::Error> {
        let spans = raw
            .spans
            .into_iter()
            .map(|(start, end, label)| Ok(SlotSpan::new(start, end, SlotLabel::new(label)?)))
            .collect::<Result<Vec<_>, CorpusError>>()?;
        AnnotatedUtterance::new(raw.tokens, spans, raw.domain)
    }
}

impl From<AnnotatedUtterance> for RawRecord {
    fn from(utt: AnnotatedUtterance) -> Self {
        RawRecord {
            spans: utt
                .spans
                .iter()
                .map(|s| (s.start, s.end, s.label.as_str().to_string()))
                .collect(),
            tokens: utt.tokens,
            domain: utt.domain,
        }
    }
}

/// Parses corpus lines, checking structure and registry membership.
/// Blank lines are permitted and skipped; anything else must parse.
pub fn read_corpus_str(data: &str, registry: &Registry) -> Result<Vec<AnnotatedUtterance>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in data.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| CorpusError::MalformedRecord { line: idx + 1, reason };
        let utt: AnnotatedUtterance =
            serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        utt.check_registered(registry).map_err(|e| malformed(e.to_string()))?;
        out.push(utt);
    }
    Ok(out)
}

pub fn read_corpus(path: impl AsRef<Path>, registry: &Registry) -> Result<Vec<AnnotatedUtterance>, CorpusError> {
    read_corpus_str(&fs::read_to_string(path)?, registry)
}

/// Serializes a corpus to its line format. Output is byte-deterministic.
pub fn write_corpus_string(corpus: &[AnnotatedUtterance]) -> String {
    let mut out = String::new();
    for utt in corpus {
        out.push_str(&serde_json::to_string(utt).expect("corpus records serialize"));
        out.push('\n');
    }
    out
}

pub fn write_corpus(path: impl AsRef<Path>, corpus: &[AnnotatedUtterance]) -> Result<(), CorpusError> {
    fs::write(path, write_corpus_string(corpus))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_markup;

    #[test]
    fn line_format_round_trip() {
        let reg = Registry::standard();
        let corpus = vec![
            parse_markup("play <song_name>sorry</song_name>", "music", &reg).unwrap(),
            parse_markup("go home", "navigation", &reg).unwrap(),
        ];
        let text = write_corpus_string(&corpus);
        assert_eq!(text.lines().count(), 2);
        let back = read_corpus_str(&text, &reg).unwrap();
        assert_eq!(back, corpus);
    }

    #[test]
    fn field_names_are_stable() {
        let reg = Registry::standard();
        let corpus = vec![parse_markup("play <song_name>sorry</song_name>", "music", &reg).unwrap()];
        let text = write_corpus_string(&corpus);
        assert_eq!(
            text.trim_end(),
            r#"{"tokens":["play","sorry"],"spans":[[1,2,"song_name"]],"domain":"music"}"#
        );
    }

    #[test]
    fn malformed_lines_carry_line_numbers() {
        let reg = Registry::standard();
        let good = r#"{"tokens":["x"],"spans":[],"domain":"music"}"#;
        let bad = r#"{"tokens":["x"],"spans":[[0,2,"artist"]],"domain":"music"}"#;
        let text = format!("{good}\n{bad}\n");
        match read_corpus_str(&text, &reg).unwrap_err() {
            CorpusError::MalformedRecord { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unregistered_names_are_rejected() {
        let reg = Registry::standard();
        let bad_label = r#"{"tokens":["x"],"spans":[[0,1,"color"]],"domain":"music"}"#;
        assert!(read_corpus_str(bad_label, &reg).is_err());
        let bad_domain = r#"{"tokens":["x"],"spans":[],"domain":"sports"}"#;
        assert!(read_corpus_str(bad_domain, &reg).is_err());
    }

    #[test]
    fn blank_lines_are_skipped() {
        let reg = Registry::standard();
        let text = "\n{\"tokens\":[\"x\"],\"spans\":[],\"domain\":\"music\"}\n\n";
        assert_eq!(read_corpus_str(text, &reg).unwrap().len(), 1);
    }
}
