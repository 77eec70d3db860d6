//! N-gram presence features behind a frozen dictionary.
//!
//! The dictionary is built once from training counts with a frequency
//! cutoff; extraction afterwards only ever looks features up, so ids are
//! stable between training and prediction and unseen n-grams vanish.

use std::collections::{BTreeMap, BTreeSet, HashMap};

/// Function words dropped before n-gram formation.
const STOPWORDS_EN: &str = include_str!("../../data/stopwords_en.txt");

/// The built-in English stopword list, one word per line in the data file.
pub fn default_stopwords() -> BTreeSet<String> {
    STOPWORDS_EN
        .lines()
        .map(str::trim)
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

fn ngrams(tokens: &[String], order: usize, stopwords: &BTreeSet<String>) -> Vec<String> {
    let kept: Vec<&String> = tokens.iter().filter(|t| !stopwords.contains(*t)).collect();
    let mut out = Vec::new();
    for n in 1..=order {
        for window in kept.windows(n) {
            // Tokens never contain whitespace, so the space join is
            // unambiguous.
            let mut gram = String::new();
            for (i, t) in window.iter().enumerate() {
                if i > 0 {
                    gram.push(' ');
                }
                gram.push_str(t);
            }
            out.push(gram);
        }
    }
    out
}

/// Counts every 1..=order-gram over a training corpus, after stopword
/// removal.
pub fn count_ngrams<'a>(
    sentences: impl IntoIterator<Item = &'a [String]>,
    order: usize,
    stopwords: &BTreeSet<String>,
) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for tokens in sentences {
        for gram in ngrams(tokens, order, stopwords) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// A frozen feature-name-to-id mapping. Ids follow the sorted name order,
/// so the dictionary is deterministic for a given corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDict {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl FeatureDict {
    /// Keeps the n-grams whose training count reaches `cutoff`.
    pub fn build(counts: &BTreeMap<String, usize>, cutoff: usize) -> Self {
        let names: Vec<String> = counts
            .iter()
            .filter(|(_, &c)| c >= cutoff)
            .map(|(name, _)| name.clone())
            .collect();
        FeatureDict::from_names(names)
    }

    /// Restores a dictionary from its saved name list, preserving ids.
    pub fn from_names(names: Vec<String>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        FeatureDict { names, index }
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Sparse binary feature vector keyed by dictionary id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureVector(BTreeMap<usize, f64>);

impl FeatureVector {
    pub fn ids(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.0.iter().map(|(&i, &w)| (i, w))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.0.contains_key(&id)
    }
}

/// Binary presence features for every in-dictionary 1..=order-gram of the
/// sentence. Out-of-dictionary n-grams are ignored.
pub fn extract_ngram_features(
    tokens: &[String],
    order: usize,
    dict: &FeatureDict,
    stopwords: &BTreeSet<String>,
) -> FeatureVector {
    let mut v = BTreeMap::new();
    for gram in ngrams(tokens, order, stopwords) {
        if let Some(id) = dict.id(&gram) {
            v.insert(id, 1.0);
        }
    }
    FeatureVector(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn stopword_list_loads() {
        let stops = default_stopwords();
        assert!(stops.contains("the"));
        assert!(stops.contains("please"));
        assert!(!stops.contains("play"));
    }

    #[test]
    fn bigrams_form_after_stopword_removal() {
        let stops = default_stopwords();
        let tokens = strs(&["play", "the", "Sorry"]);
        let grams = ngrams(&tokens, 2, &stops);
        assert_eq!(grams, vec!["play", "Sorry", "play Sorry"]);
    }

    #[test]
    fn all_stopwords_yield_nothing() {
        let stops = default_stopwords();
        let tokens = strs(&["the", "a", "of"]);
        assert!(ngrams(&tokens, 2, &stops).is_empty());
        let dict = FeatureDict::from_names(vec!["the".to_string()]);
        let v = extract_ngram_features(&tokens, 2, &dict, &stops);
        assert!(v.is_empty());
    }

    #[test]
    fn cutoff_filters_rare_grams() {
        let stops = BTreeSet::new();
        let sentences: Vec<Vec<String>> = (0..3)
            .map(|_| strs(&["play", "jazz"]))
            .chain([strs(&["play", "rock"])])
            .collect();
        let refs: Vec<&[String]> = sentences.iter().map(|s| s.as_slice()).collect();
        let counts = count_ngrams(refs.iter().copied(), 2, &stops);
        assert_eq!(counts["play"], 4);
        assert_eq!(counts["play jazz"], 3);
        assert_eq!(counts["rock"], 1);

        let dict = FeatureDict::build(&counts, 3);
        assert!(dict.id("play").is_some());
        assert!(dict.id("play jazz").is_some());
        assert!(dict.id("rock").is_none(), "below-cutoff gram must be absent");

        let v = extract_ngram_features(&strs(&["play", "rock"]), 2, &dict, &stops);
        assert!(v.contains(dict.id("play").unwrap()));
        assert_eq!(v.len(), 1);
    }

    #[test]
    fn ids_are_stable_and_sorted() {
        let stops = BTreeSet::new();
        let sentences = [strs(&["b", "a"]), strs(&["a", "b"])];
        let refs: Vec<&[String]> = sentences.iter().map(|s| s.as_slice()).collect();
        let counts = count_ngrams(refs.iter().copied(), 1, &stops);
        let dict = FeatureDict::build(&counts, 1);
        assert_eq!(dict.names(), &["a".to_string(), "b".to_string()]);
        let rebuilt = FeatureDict::from_names(dict.names().to_vec());
        assert_eq!(rebuilt, dict);
    }
}
