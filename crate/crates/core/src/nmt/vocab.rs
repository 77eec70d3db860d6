//! Word-level closed vocabularies with fixed reserved ids.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const UNK_ID: usize = 3;

const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Token-to-id mapping; ids 0..=3 are pad, bos, eos, unk in that order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id for a token; unknown tokens map to [`UNK_ID`].
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Ids back to tokens. Reserved ids (pad, bos, eos, unk) are dropped:
    /// they are control symbols, not text.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| i >= RESERVED.len())
            .map(|&i| self.tokens[i].clone())
            .collect()
    }

    /// One token per line, reserved tokens first; the inverse of
    /// [`Vocab::from_lines`].
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_lines(text: &str) -> Option<Vocab> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < RESERVED.len() {
            return None;
        }
        for (i, r) in RESERVED.iter().enumerate() {
            if tokens[i] != *r {
                return None;
            }
        }
        Some(Vocab::from_tokens(tokens))
    }
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        Vocab::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Vec<String> {
        v.tokens
    }
}

/// Builds a closed vocabulary from token sequences plus any extra tokens
/// (class symbols, marker letters). Non-reserved tokens are sorted, so the
/// layout is independent of corpus order.
pub fn build_vocab<'a, I, S>(sequences: I, extras: &[String]) -> Vocab
where
    I: IntoIterator<Item = &'a [S]>,
    S: AsRef<str> + 'a,
{
    let mut set: BTreeSet<String> = BTreeSet::new();
    for seq in sequences {
        for tok in seq {
            set.insert(tok.as_ref().to_string());
        }
    }
    for e in extras {
        set.insert(e.clone());
    }
    let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    tokens.extend(set);
    Vocab::from_tokens(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn reserved_layout() {
        let v = build_vocab([strs(&["b", "a"]).as_slice()], &[]);
        assert_eq!(v.token(PAD_ID), "<pad>");
        assert_eq!(v.token(BOS_ID), "<bos>");
        assert_eq!(v.token(EOS_ID), "<eos>");
        assert_eq!(v.token(UNK_ID), "<unk>");
        assert_eq!(v.token(4), "a");
        assert_eq!(v.token(5), "b");
        assert_eq!(v.len(), 6);
    }

    #[test]
    fn unknown_maps_to_unk() {
        let v = build_vocab([strs(&["a"]).as_slice()], &[]);
        assert_eq!(v.id("zzz"), UNK_ID);
        assert_eq!(v.id("a"), 4);
    }

    #[test]
    fn decode_drops_specials() {
        let v = build_vocab([strs(&["a", "b"]).as_slice()], &[]);
        let ids = vec![BOS_ID, 4, PAD_ID, 5, UNK_ID, EOS_ID];
        assert_eq!(v.decode(&ids), strs(&["a", "b"]));
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = build_vocab([strs(&["play", "sorry"]).as_slice()], &[strs(&["$artist"])[0].clone()]);
        let text = v.to_lines();
        let back = Vocab::from_lines(&text).unwrap();
        assert_eq!(back, v);
        assert!(Vocab::from_lines("a\nb\n").is_none());
    }

    #[test]
    fn build_is_order_independent() {
        let a = build_vocab([strs(&["x", "y"]).as_slice(), strs(&["z"]).as_slice()], &[]);
        let b = build_vocab([strs(&["z", "y"]).as_slice(), strs(&["x"]).as_slice()], &[]);
        assert_eq!(a, b);
    }
}
