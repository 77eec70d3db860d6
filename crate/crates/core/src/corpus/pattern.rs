//! Class-symbol patterns: each slot collapses to a single `$label` token.

use super::{AnnotatedUtterance, ClassPattern, CorpusError, Registry, SlotLabel, SlotSpan};

/// The class-symbol token for a label: `$` followed by the label name.
pub fn class_symbol(label: &SlotLabel) -> String {
    format!("${label}")
}

/// Recognizes a class-symbol token by form alone: `$` plus a well-formed
/// label name. Registry membership is a separate concern.
pub fn parse_class_symbol(token: &str) -> Option<SlotLabel> {
    token.strip_prefix('$').and_then(|rest| SlotLabel::new(rest).ok())
}

/// Replaces every slot with its class symbol, remembering the values.
pub fn to_class_pattern(utt: &AnnotatedUtterance) -> ClassPattern {
    let mut tokens: Vec<String> = Vec::new();
    let mut fills: Vec<(SlotLabel, Vec<String>)> = Vec::new();
    let mut i = 0usize;
    let mut spans = utt.spans().iter().peekable();
    while i < utt.tokens().len() {
        if let Some(span) = spans.peek() {
            if span.start == i {
                tokens.push(class_symbol(&span.label));
                fills.push((span.label.clone(), utt.span_value(span).to_vec()));
                i = span.end;
                spans.next();
                continue;
            }
        }
        tokens.push(utt.tokens()[i].clone());
        i += 1;
    }
    ClassPattern::new(tokens, fills, utt.domain()).expect("fills align with symbols by construction")
}

/// Expands class symbols in a pattern token sequence back into slots using
/// one (label, value tokens) assignment per symbol occurrence, in order.
///
/// Every `$`-form token must name a registered label; assignments must
/// match the occurrences one to one, label included.
pub fn fill_class_pattern(
    pattern_tokens: &[String],
    assignments: &[(SlotLabel, Vec<String>)],
    domain: &str,
    registry: &Registry,
) -> Result<AnnotatedUtterance, CorpusError> {
    let mut tokens: Vec<String> = Vec::new();
    let mut spans: Vec<SlotSpan> = Vec::new();
    let mut next = 0usize;
    for tok in pattern_tokens {
        match parse_class_symbol(tok) {
            Some(label) => {
                if !registry.contains_label(label.as_str()) {
                    return Err(CorpusError::UnknownSymbol(tok.clone()));
                }
                let (want, values) = assignments.get(next).ok_or({
                    CorpusError::MissingAssignment { expected: next + 1, got: assignments.len() }
                })?;
                if *want != label {
                    return Err(CorpusError::UnknownSymbol(tok.clone()));
                }
                let start = tokens.len();
                tokens.extend(values.iter().cloned());
                spans.push(SlotSpan::new(start, tokens.len(), label));
                next += 1;
            }
            None => tokens.push(tok.clone()),
        }
    }
    if next != assignments.len() {
        return Err(CorpusError::MissingAssignment { expected: next, got: assignments.len() });
    }
    AnnotatedUtterance::new(tokens, spans, domain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_markup;

    fn reg() -> Registry {
        Registry::standard()
    }

    #[test]
    fn pattern_extraction() {
        let u = parse_markup(
            "play <song_name>sorry</song_name> by <artist>justin bieber</artist>",
            "music",
            &reg(),
        )
        .unwrap();
        let p = to_class_pattern(&u);
        assert_eq!(p.tokens(), ["play", "$song_name", "by", "$artist"]);
        assert_eq!(p.fills().len(), 2);
        assert_eq!(p.fills()[0].1, ["sorry"]);
        assert_eq!(p.fills()[1].1, ["justin", "bieber"]);
        assert_eq!(p.domain(), "music");
    }

    #[test]
    fn fill_round_trip() {
        let u = parse_markup(
            "play <song_name>sorry</song_name> by <artist>justin bieber</artist>",
            "music",
            &reg(),
        )
        .unwrap();
        let p = to_class_pattern(&u);
        let back =
            fill_class_pattern(p.tokens(), p.fills(), p.domain(), &reg()).unwrap();
        assert_eq!(back, u);
    }

    #[test]
    fn repeated_label_uses_per_occurrence_values() {
        let u = parse_markup(
            "<artist>a1</artist> versus <artist>a2 a3</artist>",
            "music",
            &reg(),
        )
        .unwrap();
        let p = to_class_pattern(&u);
        assert_eq!(p.tokens(), ["$artist", "versus", "$artist"]);
        let back = fill_class_pattern(p.tokens(), p.fills(), "music", &reg()).unwrap();
        assert_eq!(back, u);
    }

    #[test]
    fn missing_assignment_is_an_error() {
        let toks: Vec<String> = vec!["$artist".into(), "x".into(), "$artist".into()];
        let fills = vec![(SlotLabel::new("artist").unwrap(), vec!["a".to_string()])];
        let e = fill_class_pattern(&toks, &fills, "music", &reg()).unwrap_err();
        assert!(matches!(e, CorpusError::MissingAssignment { .. }));
    }

    #[test]
    fn unregistered_symbol_is_an_error() {
        let toks: Vec<String> = vec!["$color".into()];
        let fills = vec![(SlotLabel::new("color").unwrap(), vec!["red".to_string()])];
        let e = fill_class_pattern(&toks, &fills, "music", &reg()).unwrap_err();
        assert!(matches!(e, CorpusError::UnknownSymbol(_)));
    }

    #[test]
    fn non_symbol_dollar_tokens_pass_through() {
        // `$5` is not a well-formed symbol, so it is a plain token.
        assert!(parse_class_symbol("$5").is_none());
        assert!(parse_class_symbol("$").is_none());
        let toks: Vec<String> = vec!["pay".into(), "$5".into()];
        let u = fill_class_pattern(&toks, &[], "others", &reg()).unwrap();
        assert_eq!(u.tokens(), ["pay", "$5"]);
    }
}
