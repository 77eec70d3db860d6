//! IOB tag sequences: one tag per token, `O` outside, `B-label` opening a
//! chunk, `I-label` continuing it.

use super::{AnnotatedUtterance, CorpusError, SlotLabel, SlotSpan};

/// Converts an utterance into parallel token and tag sequences.
pub fn to_iob(utt: &AnnotatedUtterance) -> (Vec<String>, Vec<String>) {
    let mut tags = vec!["O".to_string(); utt.tokens().len()];
    for span in utt.spans() {
        tags[span.start] = format!("B-{}", span.label);
        for tag in tags.iter_mut().take(span.end).skip(span.start + 1) {
            *tag = format!("I-{}", span.label);
        }
    }
    (utt.tokens().to_vec(), tags)
}

enum Tag {
    Outside,
    Begin(SlotLabel),
    Inside(SlotLabel),
}

fn parse_tag(tag: &str) -> Result<Tag, CorpusError> {
    if tag == "O" {
        return Ok(Tag::Outside);
    }
    let invalid = || CorpusError::InvalidTag(tag.to_string());
    let (head, name) = tag.split_once('-').ok_or_else(invalid)?;
    let label = SlotLabel::new(name).map_err(|_| invalid())?;
    match head {
        "B" => Ok(Tag::Begin(label)),
        "I" => Ok(Tag::Inside(label)),
        _ => Err(invalid()),
    }
}

/// Rebuilds an utterance from tokens and IOB tags.
///
/// An `I-x` with no live `x` chunk before it (sequence start, after `O`,
/// or after a chunk of a different label) is repaired to `B-x`. Token and
/// tag counts must match.
pub fn from_iob(
    tokens: &[String],
    tags: &[String],
    domain: &str,
) -> Result<AnnotatedUtterance, CorpusError> {
    if tokens.len() != tags.len() {
        return Err(CorpusError::LengthMismatch { tokens: tokens.len(), tags: tags.len() });
    }
    let mut spans: Vec<SlotSpan> = Vec::new();
    let mut open: Option<(SlotLabel, usize)> = None;
    for (i, tag) in tags.iter().enumerate() {
        match parse_tag(tag)? {
            Tag::Outside => {
                if let Some((label, start)) = open.take() {
                    spans.push(SlotSpan::new(start, i, label));
                }
            }
            Tag::Begin(label) => {
                if let Some((prev, start)) = open.take() {
                    spans.push(SlotSpan::new(start, i, prev));
                }
                open = Some((label, i));
            }
            Tag::Inside(label) => match &open {
                Some((prev, _)) if *prev == label => {}
                _ => {
                    if let Some((prev, start)) = open.take() {
                        spans.push(SlotSpan::new(start, i, prev));
                    }
                    open = Some((label, i));
                }
            },
        }
    }
    if let Some((label, start)) = open {
        spans.push(SlotSpan::new(start, tokens.len(), label));
    }
    AnnotatedUtterance::new(tokens.to_vec(), spans, domain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Registry;

    fn utt(markup: &str, domain: &str) -> AnnotatedUtterance {
        super::super::parse_markup(markup, domain, &Registry::standard()).unwrap()
    }

    fn tags(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn to_iob_basic() {
        let u = utt("play <album>they don't know</album> now", "music");
        let (toks, t) = to_iob(&u);
        assert_eq!(toks, ["play", "they", "don't", "know", "now"]);
        assert_eq!(t, ["O", "B-album", "I-album", "I-album", "O"]);
    }

    #[test]
    fn round_trip() {
        let u = utt(
            "call <contact_name>bai xiaoxia</contact_name> <contact_type>mobile</contact_type>",
            "communication",
        );
        let (toks, t) = to_iob(&u);
        assert_eq!(from_iob(&toks, &t, "communication").unwrap(), u);
    }

    #[test]
    fn orphan_inside_becomes_begin() {
        let toks: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let u = from_iob(&toks, &tags(&["O", "I-album", "I-album"]), "music").unwrap();
        assert_eq!(u.spans().len(), 1);
        assert_eq!((u.spans()[0].start, u.spans()[0].end), (1, 3));

        // Label switch without B starts a fresh chunk.
        let u = from_iob(&toks, &tags(&["B-album", "I-artist", "O"]), "music").unwrap();
        assert_eq!(u.spans().len(), 2);
        assert_eq!(u.spans()[0].label.as_str(), "album");
        assert_eq!(u.spans()[1].label.as_str(), "artist");
    }

    #[test]
    fn adjacent_begins_split_chunks() {
        let toks: Vec<String> = ["x", "y"].iter().map(|s| s.to_string()).collect();
        let u = from_iob(&toks, &tags(&["B-artist", "B-artist"]), "music").unwrap();
        assert_eq!(u.spans().len(), 2);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let toks: Vec<String> = vec!["x".into()];
        let e = from_iob(&toks, &tags(&["O", "O"]), "music").unwrap_err();
        assert!(matches!(e, CorpusError::LengthMismatch { .. }));
    }

    #[test]
    fn bad_tag_syntax_is_an_error() {
        let toks: Vec<String> = vec!["x".into()];
        assert!(from_iob(&toks, &tags(&["Q-album"]), "music").is_err());
        assert!(from_iob(&toks, &tags(&["B-"]), "music").is_err());
        assert!(from_iob(&toks, &tags(&["b-album"]), "music").is_err());
    }
}
