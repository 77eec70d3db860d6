//! One-vs-rest linear domain classification over n-gram features.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::corpus::AnnotatedUtterance;
use crate::seed::stage_rng;

use super::features::{
    count_ngrams, default_stopwords, extract_ngram_features, FeatureDict, FeatureVector,
};
use super::SluError;

#[derive(Debug, Clone)]
pub struct DomainHyper {
    /// Maximum n-gram order.
    pub order: usize,
    /// Minimum training count for an n-gram to become a feature.
    pub cutoff: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for DomainHyper {
    fn default() -> Self {
        DomainHyper { order: 2, cutoff: 10, epochs: 30, learning_rate: 0.1, l2: 1e-3 }
    }
}

/// Per-domain linear scorers sharing one frozen feature dictionary.
/// Domains are kept in name order, which is also the tie-break order.
#[derive(Debug, Clone)]
pub struct DomainModel {
    domains: Vec<String>,
    dict: FeatureDict,
    stopwords: BTreeSet<String>,
    order: usize,
    /// Row per domain, column per feature.
    weights: Array2<f64>,
    biases: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DomainTrainReport {
    pub accuracy: f64,
    /// Regularized hinge objective after each epoch.
    pub objective: Vec<f64>,
}

fn hinge_objective(
    weights: &Array2<f64>,
    biases: &[f64],
    l2: f64,
    examples: &[(FeatureVector, usize)],
) -> f64 {
    let domains = weights.nrows();
    let n = examples.len() as f64;
    let mut obj = 0.0;
    for d in 0..domains {
        let row = weights.row(d);
        obj += 0.5 * l2 * row.dot(&row);
        let mut hinge = 0.0;
        for (x, gold) in examples {
            let y = if *gold == d { 1.0 } else { -1.0 };
            let score: f64 =
                biases[d] + x.ids().map(|(i, w)| w * weights[(d, i)]).sum::<f64>();
            hinge += (1.0 - y * score).max(0.0);
        }
        obj += hinge / n;
    }
    obj
}

/// Trains one max-margin scorer per domain with epoch-wise SGD. Epochs
/// that would raise the exact regularized objective are rolled back and
/// retried at half the learning rate, so the reported objective never
/// increases.
pub fn train_domain(
    corpus: &[AnnotatedUtterance],
    hyper: &DomainHyper,
    seed: u64,
) -> Result<(DomainModel, DomainTrainReport), SluError> {
    let mut domain_set = BTreeSet::new();
    for utt in corpus {
        domain_set.insert(utt.domain().to_string());
    }
    if domain_set.len() < 2 {
        return Err(SluError::SingleClassCorpus);
    }
    let domains: Vec<String> = domain_set.into_iter().collect();
    let stopwords = default_stopwords();
    let counts = count_ngrams(
        corpus.iter().map(|u| u.tokens()),
        hyper.order,
        &stopwords,
    );
    let dict = FeatureDict::build(&counts, hyper.cutoff);

    let examples: Vec<(FeatureVector, usize)> = corpus
        .iter()
        .map(|u| {
            let x = extract_ngram_features(u.tokens(), hyper.order, &dict, &stopwords);
            let gold = domains.iter().position(|d| d == u.domain()).unwrap();
            (x, gold)
        })
        .collect();

    let mut weights = Array2::<f64>::zeros((domains.len(), dict.len()));
    let mut biases = vec![0.0; domains.len()];
    let mut rng = stage_rng(seed, "domain-shuffle");
    let mut lr = hyper.learning_rate;
    let mut objective =
        vec![hinge_objective(&weights, &biases, hyper.l2, &examples)];

    let mut order: Vec<usize> = (0..examples.len()).collect();
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let before = objective.last().copied().unwrap();
        let snapshot = (weights.clone(), biases.clone());
        loop {
            for &i in &order {
                let (x, gold) = &examples[i];
                for d in 0..domains.len() {
                    let y = if *gold == d { 1.0 } else { -1.0 };
                    let score: f64 = biases[d]
                        + x.ids().map(|(i, w)| w * weights[(d, i)]).sum::<f64>();
                    let shrink = 1.0 - lr * hyper.l2;
                    for v in weights.row_mut(d).iter_mut() {
                        *v *= shrink;
                    }
                    if y * score < 1.0 {
                        for (i, w) in x.ids() {
                            weights[(d, i)] += lr * y * w;
                        }
                        biases[d] += lr * y;
                    }
                }
            }
            let after = hinge_objective(&weights, &biases, hyper.l2, &examples);
            if after <= before || lr < 1e-12 {
                objective.push(after.min(before));
                if after > before {
                    weights = snapshot.0;
                    biases = snapshot.1;
                }
                break;
            }
            weights = snapshot.0.clone();
            biases = snapshot.1.clone();
            lr /= 2.0;
        }
    }

    let model = DomainModel { domains, dict, stopwords, order: hyper.order, weights, biases };
    let correct = corpus
        .iter()
        .filter(|u| model.classify(u.tokens()) == u.domain())
        .count();
    let report = DomainTrainReport {
        accuracy: correct as f64 / corpus.len().max(1) as f64,
        objective,
    };
    Ok((model, report))
}

impl DomainModel {
    /// Argmax of the per-domain linear scores; ties go to the earliest
    /// domain in name order. Sentences with no known features fall back
    /// to the bias-only argmax.
    pub fn classify(&self, tokens: &[String]) -> &str {
        let x = extract_ngram_features(tokens, self.order, &self.dict, &self.stopwords);
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for d in 0..self.domains.len() {
            let score: f64 =
                self.biases[d] + x.ids().map(|(i, w)| w * self.weights[(d, i)]).sum::<f64>();
            if score > best_score {
                best_score = score;
                best = d;
            }
        }
        &self.domains[best]
    }

    pub fn domains(&self) -> &[String] {
        &self.domains
    }

    pub fn save(&self, path: &Path) -> Result<(), SluError> {
        let header = serde_json::json!({
            "domains": self.domains,
            "features": self.dict.names(),
            "stopwords": self.stopwords,
            "order": self.order,
        });
        let mut biases = Array2::zeros((1, self.biases.len()));
        for (i, b) in self.biases.iter().enumerate() {
            biases[(0, i)] = *b;
        }
        let ckpt = Checkpoint {
            kind: "domain".to_string(),
            header,
            tensors: vec![
                ("weights".to_string(), self.weights.clone()),
                ("biases".to_string(), biases),
            ],
        };
        ckpt.save(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SluError> {
        let ckpt = Checkpoint::load(path, "domain")?;
        let bad = |m: &str| CheckpointError::BadHeader(m.to_string());
        let field = |key: &str| -> Result<serde_json::Value, CheckpointError> {
            ckpt.header.get(key).cloned().ok_or_else(|| bad(key))
        };
        let domains: Vec<String> = serde_json::from_value(field("domains")?)
            .map_err(|e| bad(&e.to_string()))?;
        let features: Vec<String> = serde_json::from_value(field("features")?)
            .map_err(|e| bad(&e.to_string()))?;
        let stopwords: BTreeSet<String> = serde_json::from_value(field("stopwords")?)
            .map_err(|e| bad(&e.to_string()))?;
        let order = field("order")?
            .as_u64()
            .ok_or_else(|| bad("order"))? as usize;
        let mut weights = None;
        let mut biases_t = None;
        for (name, t) in ckpt.tensors {
            match name.as_str() {
                "weights" => weights = Some(t),
                "biases" => biases_t = Some(t),
                _ => {}
            }
        }
        let weights = weights.ok_or_else(|| bad("missing weights tensor"))?;
        let biases_t = biases_t.ok_or_else(|| bad("missing biases tensor"))?;
        if weights.dim() != (domains.len(), features.len())
            || biases_t.dim() != (1, domains.len())
        {
            return Err(bad("tensor shapes do not match header").into());
        }
        Ok(DomainModel {
            domains,
            dict: FeatureDict::from_names(features),
            stopwords,
            order,
            weights,
            biases: biases_t.row(0).to_vec(),
        })
    }
}
