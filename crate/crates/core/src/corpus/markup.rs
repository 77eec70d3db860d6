//! Angle-bracket markup: `play <song_name>sorry</song_name> now`.
//!
//! Tags sit between whitespace-delimited words; the text between an open
//! and its close tag is tokenized by whitespace and becomes the span. Tags
//! do not nest.

use super::{AnnotatedUtterance, CorpusError, Registry, SlotLabel, SlotSpan};

fn push_words(text: &str, tokens: &mut Vec<String>) {
    tokens.extend(text.split_whitespace().map(str::to_string));
}

/// Parses markup text into an utterance with the given domain.
///
/// Labels must be registered. A close without an open, a mismatched close,
/// a tag left open, or a tag missing its `>` is `UnbalancedTag`; an open
/// inside an open is `NestedTag`.
pub fn parse_markup(
    text: &str,
    domain: &str,
    registry: &Registry,
) -> Result<AnnotatedUtterance, CorpusError> {
    let mut tokens: Vec<String> = Vec::new();
    let mut spans: Vec<SlotSpan> = Vec::new();
    let mut open: Option<(SlotLabel, usize)> = None;
    let mut rest = text;
    while let Some(i) = rest.find('<') {
        push_words(&rest[..i], &mut tokens);
        let after = &rest[i + 1..];
        let j = after
            .find('>')
            .ok_or_else(|| CorpusError::UnbalancedTag(rest.chars().take(16).collect()))?;
        let inner = &after[..j];
        if let Some(name) = inner.strip_prefix('/') {
            match open.take() {
                Some((label, start)) if label.as_str() == name => {
                    spans.push(SlotSpan::new(start, tokens.len(), label));
                }
                _ => return Err(CorpusError::UnbalancedTag(format!("</{name}>"))),
            }
        } else {
            if let Some((outer, _)) = &open {
                let _ = outer;
                return Err(CorpusError::NestedTag(inner.to_string()));
            }
            let label = registry.label(inner)?;
            open = Some((label, tokens.len()));
        }
        rest = &after[j + 1..];
    }
    push_words(rest, &mut tokens);
    if let Some((label, _)) = open {
        return Err(CorpusError::UnbalancedTag(format!("<{}>", label.as_str())));
    }
    AnnotatedUtterance::new(tokens, spans, domain)
}

/// Renders an utterance back to markup, joining tokens with single spaces.
/// The domain is not part of the markup and is dropped.
pub fn render_markup(utt: &AnnotatedUtterance) -> String {
    let mut pieces: Vec<String> = Vec::with_capacity(utt.tokens().len());
    for (i, tok) in utt.tokens().iter().enumerate() {
        let mut piece = tok.clone();
        for span in utt.spans() {
            if span.start == i {
                piece = format!("<{}>{piece}", span.label);
            }
            if span.end == i + 1 {
                piece = format!("{piece}</{}>", span.label);
            }
        }
        pieces.push(piece);
    }
    pieces.join(" ")
}
