//! Downstream spoken-language-understanding evaluation: a linear domain
//! classifier and a CRF slot tagger, trained on a transferred corpus and
//! scored with the metrics module.

use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::corpus::{from_iob, AnnotatedUtterance, CorpusError};
use crate::metrics::{chunk_f1, domain_accuracy, ChunkScore, MetricsError};

pub mod crf;
pub mod domain;
pub mod features;

pub use crf::{train_crf, CrfHyper, CrfModel, CrfTrainReport, TemplateSet};
pub use domain::{train_domain, DomainHyper, DomainModel, DomainTrainReport};
pub use features::{
    count_ngrams, default_stopwords, extract_ngram_features, FeatureDict, FeatureVector,
};

#[derive(Debug, Error)]
pub enum SluError {
    #[error("domain training needs at least two distinct domains")]
    SingleClassCorpus,
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Joint scores of the two downstream models on one test corpus.
#[derive(Debug, Clone)]
pub struct SluReport {
    pub sentences: usize,
    pub domain_accuracy: f64,
    pub slot: ChunkScore,
}

/// Runs both models over a corpus, returning fully annotated predictions
/// (predicted spans and predicted domain) in corpus form.
pub fn predict_corpus(
    domain_model: &DomainModel,
    crf_model: &CrfModel,
    corpus: &[AnnotatedUtterance],
) -> Result<Vec<AnnotatedUtterance>, SluError> {
    corpus
        .iter()
        .map(|utt| {
            let tags = crf_model.tag_slots(utt.tokens());
            let domain = domain_model.classify(utt.tokens());
            Ok(from_iob(utt.tokens(), &tags, domain)?)
        })
        .collect()
}

/// Scores predictions against gold annotations: exact-span chunk F1 for
/// slots, accuracy for domains.
pub fn evaluate_slu(
    domain_model: &DomainModel,
    crf_model: &CrfModel,
    test: &[AnnotatedUtterance],
) -> Result<SluReport, SluError> {
    let predicted = predict_corpus(domain_model, crf_model, test)?;
    let slot = chunk_f1(test, &predicted)?;
    let gold_domains: Vec<&str> = test.iter().map(|u| u.domain()).collect();
    let pred_domains: Vec<&str> = predicted.iter().map(|u| u.domain()).collect();
    let accuracy = domain_accuracy(&gold_domains, &pred_domains)?;
    Ok(SluReport { sentences: test.len(), domain_accuracy: accuracy, slot })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Registry, SlotSpan};

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    /// Two domains, each with a deterministic slot pattern, repeated past
    /// the n-gram cutoff.
    fn rig() -> (Vec<AnnotatedUtterance>, Registry) {
        let registry = Registry::new(
            ["song_name", "contact_name"],
            ["music", "communication"],
        )
        .unwrap();
        let song = registry.label("song_name").unwrap().clone();
        let contact = registry.label("contact_name").unwrap().clone();
        let mut corpus = Vec::new();
        for value in ["thriller", "imagine", "yesterday"] {
            for _ in 0..4 {
                corpus.push(
                    AnnotatedUtterance::new(
                        strs(&["play", value, "loud"]),
                        vec![SlotSpan::new(1, 2, song.clone())],
                        "music",
                    )
                    .unwrap(),
                );
            }
        }
        for value in ["anna", "bob", "carol"] {
            for _ in 0..4 {
                corpus.push(
                    AnnotatedUtterance::new(
                        strs(&["call", value, "now"]),
                        vec![SlotSpan::new(1, 2, contact.clone())],
                        "communication",
                    )
                    .unwrap(),
                );
            }
        }
        (corpus, registry)
    }

    #[test]
    fn models_fit_their_own_training_data() {
        let (corpus, registry) = rig();
        let hyper = DomainHyper { cutoff: 1, ..DomainHyper::default() };
        let (domain_model, _) = domain::train_domain(&corpus, &hyper, 5).unwrap();
        let (crf_model, _) = crf::train_crf(
            &corpus,
            &registry,
            &TemplateSet::default(),
            &CrfHyper::default(),
        )
        .unwrap();
        let report = evaluate_slu(&domain_model, &crf_model, &corpus).unwrap();
        assert_eq!(report.domain_accuracy, 1.0);
        assert_eq!(report.slot.overall.f1(), 1.0);
        assert_eq!(report.sentences, corpus.len());
    }

    #[test]
    fn empty_test_corpus_reports_zeros() {
        let (corpus, registry) = rig();
        let hyper = DomainHyper { cutoff: 1, ..DomainHyper::default() };
        let (domain_model, _) = domain::train_domain(&corpus, &hyper, 5).unwrap();
        let (crf_model, _) = crf::train_crf(
            &corpus,
            &registry,
            &TemplateSet::default(),
            &CrfHyper::default(),
        )
        .unwrap();
        let report = evaluate_slu(&domain_model, &crf_model, &[]).unwrap();
        assert_eq!(report.sentences, 0);
        assert_eq!(report.slot.overall.gold, 0);
        assert_eq!(report.slot.overall.f1(), 0.0);
    }

    #[test]
    fn report_matches_recomputation_from_predictions() {
        let (corpus, registry) = rig();
        let hyper = DomainHyper { cutoff: 1, ..DomainHyper::default() };
        let (domain_model, _) = domain::train_domain(&corpus, &hyper, 5).unwrap();
        let (crf_model, _) = crf::train_crf(
            &corpus,
            &registry,
            &TemplateSet::default(),
            &CrfHyper::default(),
        )
        .unwrap();
        let report = evaluate_slu(&domain_model, &crf_model, &corpus).unwrap();
        let predicted = predict_corpus(&domain_model, &crf_model, &corpus).unwrap();
        let slot = chunk_f1(&corpus, &predicted).unwrap();
        assert_eq!(report.slot.overall, slot.overall);
        let gold: Vec<&str> = corpus.iter().map(|u| u.domain()).collect();
        let pred: Vec<&str> = predicted.iter().map(|u| u.domain()).collect();
        assert_eq!(
            report.domain_accuracy,
            domain_accuracy(&gold, &pred).unwrap()
        );
    }
}
