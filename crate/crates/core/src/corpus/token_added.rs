//! Token-added format: each slot becomes `( letter value… )` with the
//! parentheses and the letter as separate tokens.
//!
//! Parsing is damage-tolerant: whatever the translator did to the markers,
//! the result is still a valid utterance plus a flag saying whether any
//! region had to be demoted.

use super::{AnnotatedUtterance, CorpusError, LetterMap, SlotLabel, SlotSpan};

pub const OPEN_TOKEN: &str = "(";
pub const CLOSE_TOKEN: &str = ")";

/// Wraps every slot as `( letter value… )`. Every span label must have a
/// letter in the map.
pub fn to_token_added(utt: &AnnotatedUtterance, map: &LetterMap) -> Result<Vec<String>, CorpusError> {
    let mut out: Vec<String> = Vec::new();
    let mut i = 0usize;
    let mut spans = utt.spans().iter().peekable();
    while i < utt.tokens().len() {
        if let Some(span) = spans.peek() {
            if span.start == i {
                let letter = map
                    .letter(&span.label)
                    .ok_or_else(|| CorpusError::UnmappedLabel(span.label.as_str().to_string()))?;
                out.push(OPEN_TOKEN.to_string());
                out.push(letter.to_string());
                out.extend(utt.span_value(span).iter().cloned());
                out.push(CLOSE_TOKEN.to_string());
                i = span.end;
                spans.next();
                continue;
            }
        }
        out.push(utt.tokens()[i].clone());
        i += 1;
    }
    Ok(out)
}

/// Result of recovering an utterance from token-added output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenAddedParse {
    pub utterance: AnnotatedUtterance,
    /// True when any marker region was malformed and had to be demoted.
    pub damaged: bool,
}

enum Item {
    Tok(String),
    Span(SlotLabel, Vec<String>),
    Open,
}

fn letter_of(map: &LetterMap, tok: &str) -> Option<SlotLabel> {
    let mut chars = tok.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => map.label(c).cloned(),
        _ => None,
    }
}

/// Rebuilds an utterance from token-added output.
///
/// A maximal well-formed region `( letter value… )` becomes a span. Any
/// malformed region (stray close, missing close, unknown letter, empty
/// body, or a body that already contains a parsed span) is demoted: its
/// parentheses and letter are stripped, the remaining tokens stay plain,
/// and the damage flag is set. Matching is leftmost-innermost, so in
/// nested opens the inner region wins. Never errors.
pub fn parse_token_added(tokens: &[String], map: &LetterMap, domain: &str) -> TokenAddedParse {
    let mut items: Vec<Item> = Vec::new();
    let mut stack: Vec<usize> = Vec::new();
    let mut damaged = false;

    for tok in tokens {
        if tok == OPEN_TOKEN {
            stack.push(items.len());
            items.push(Item::Open);
        } else if tok == CLOSE_TOKEN {
            match stack.pop() {
                None => damaged = true,
                Some(j) => {
                    let region = &items[j + 1..];
                    let well_formed = region.len() >= 2
                        && matches!(&region[0], Item::Tok(t) if letter_of(map, t).is_some())
                        && region.iter().all(|it| matches!(it, Item::Tok(_)));
                    if well_formed {
                        let label = match &items[j + 1] {
                            Item::Tok(t) => letter_of(map, t).expect("checked above"),
                            _ => unreachable!(),
                        };
                        let values: Vec<String> = items[j + 2..]
                            .iter()
                            .map(|it| match it {
                                Item::Tok(t) => t.clone(),
                                _ => unreachable!(),
                            })
                            .collect();
                        items.truncate(j);
                        items.push(Item::Span(label, values));
                    } else {
                        damaged = true;
                        demote_at(&mut items, j, map);
                    }
                }
            }
        } else if super::check_token(tok).is_ok() {
            items.push(Item::Tok(tok.clone()));
        } else {
            // Structurally impossible tokens cannot enter an utterance;
            // dropping them is the damage-tolerant reading.
            damaged = true;
        }
    }
    while let Some(j) = stack.pop() {
        damaged = true;
        demote_at(&mut items, j, map);
    }

    let mut out_tokens: Vec<String> = Vec::new();
    let mut spans: Vec<SlotSpan> = Vec::new();
    for item in items {
        match item {
            Item::Tok(t) => out_tokens.push(t),
            Item::Span(label, values) => {
                let start = out_tokens.len();
                out_tokens.extend(values);
                spans.push(SlotSpan::new(start, out_tokens.len(), label));
            }
            Item::Open => unreachable!("all opens are matched or demoted"),
        }
    }
    let utterance = AnnotatedUtterance::new(out_tokens, spans, domain)
        .expect("demotion only yields valid tokens and spans");
    TokenAddedParse { utterance, damaged }
}

/// Removes the open marker at `j` and the letter token right after it, if
/// there is one. The rest of the region stays in place as plain content.
fn demote_at(items: &mut Vec<Item>, j: usize, map: &LetterMap) {
    debug_assert!(matches!(items[j], Item::Open));
    items.remove(j);
    if let Some(Item::Tok(t)) = items.get(j) {
        if letter_of(map, t).is_some() {
            items.remove(j);
        }
    }
}
