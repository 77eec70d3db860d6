//! Linear-chain CRF slot tagger over IOB tags.
//!
//! Potentials are emission weights over (feature, tag) plus transition
//! weights over tag pairs with dedicated begin and end vectors. Training
//! maximizes the L2-regularized conditional log-likelihood by full-batch
//! gradient ascent with a halving line search, so the objective never
//! decreases across epochs.

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::corpus::{to_iob, AnnotatedUtterance, Registry};

use super::features::FeatureDict;
use super::SluError;

pub const OUTSIDE_TAG: &str = "O";

/// Token offsets and pairings that generate emission features.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TemplateSet {
    /// Single-token features at these offsets from the current position.
    pub unigram_offsets: Vec<i64>,
    /// One feature joining the previous and current token.
    pub prev_bigram: bool,
}

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet { unigram_offsets: vec![-2, -1, 0, 1, 2], prev_bigram: true }
    }
}

impl TemplateSet {
    /// Feature strings for one position. Out-of-range offsets produce
    /// boundary markers so edge positions still get distinct features.
    fn extract(&self, tokens: &[String], t: usize) -> Vec<String> {
        let at = |o: i64| -> String {
            let idx = t as i64 + o;
            if idx < 0 || idx >= tokens.len() as i64 {
                format!("_B{o}")
            } else {
                tokens[idx as usize].clone()
            }
        };
        let mut out = Vec::with_capacity(self.unigram_offsets.len() + 1);
        for &o in &self.unigram_offsets {
            out.push(format!("U{o}:{}", at(o)));
        }
        if self.prev_bigram {
            // Tokens never contain whitespace, so the space join is safe.
            out.push(format!("B:{} {}", at(-1), at(0)));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct CrfHyper {
    pub l2: f64,
    pub epochs: usize,
    /// Initial gradient-ascent step; halved whenever a step would lower
    /// the objective.
    pub step: f64,
    /// Stop early when the gradient norm falls below this.
    pub tolerance: f64,
}

impl Default for CrfHyper {
    fn default() -> Self {
        CrfHyper { l2: 1e-2, epochs: 100, step: 0.5, tolerance: 1e-6 }
    }
}

/// IOB tag inventory: O first, then the B-/I- expansion of the registered
/// labels in lexicographic order. Index 0 being O makes the all-zero
/// model tag everything O through the tie-break.
fn tag_inventory(registry: &Registry) -> Vec<String> {
    let mut tags: Vec<String> = registry
        .slot_labels()
        .iter()
        .flat_map(|l| [format!("B-{}", l.as_str()), format!("I-{}", l.as_str())])
        .collect();
    tags.sort();
    let mut out = vec![OUTSIDE_TAG.to_string()];
    out.extend(tags);
    out
}

#[derive(Debug, Clone)]
pub struct CrfModel {
    tags: Vec<String>,
    tag_index: HashMap<String, usize>,
    dict: FeatureDict,
    templates: TemplateSet,
    /// `trans[(i, j)]` scores tag `i` followed by tag `j`.
    trans: Array2<f64>,
    begin: Vec<f64>,
    end: Vec<f64>,
    /// `emit[(f, y)]` scores feature `f` under tag `y`.
    emit: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct CrfTrainReport {
    /// Regularized conditional log-likelihood after each epoch, starting
    /// with the initial model.
    pub objective: Vec<f64>,
    pub epochs_run: usize,
    pub converged: bool,
}

/// One training sentence reduced to dictionary ids.
struct Instance {
    feats: Vec<Vec<usize>>,
    gold: Vec<usize>,
}

fn logsumexp(xs: impl Iterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.collect();
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl CrfModel {
    fn zeroed(registry: &Registry, templates: TemplateSet, dict: FeatureDict) -> Self {
        let tags = tag_inventory(registry);
        let tag_index =
            tags.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let t = tags.len();
        let f = dict.len();
        CrfModel {
            tags,
            tag_index,
            dict,
            templates,
            trans: Array2::zeros((t, t)),
            begin: vec![0.0; t],
            end: vec![0.0; t],
            emit: Array2::zeros((f, t)),
        }
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    fn emission(&self, feats: &[usize], y: usize) -> f64 {
        feats.iter().map(|&f| self.emit[(f, y)]).sum()
    }

    fn features_for(&self, tokens: &[String]) -> Vec<Vec<usize>> {
        (0..tokens.len())
            .map(|t| {
                self.templates
                    .extract(tokens, t)
                    .iter()
                    .filter_map(|name| self.dict.id(name))
                    .collect()
            })
            .collect()
    }

    /// Unnormalized log score of one tag path.
    pub fn path_score(&self, tokens: &[String], tags: &[String]) -> f64 {
        assert_eq!(tokens.len(), tags.len(), "token/tag length mismatch");
        if tokens.is_empty() {
            return 0.0;
        }
        let ids: Vec<usize> = tags.iter().map(|t| self.tag_index[t]).collect();
        let feats = self.features_for(tokens);
        let mut score = self.begin[ids[0]] + self.emission(&feats[0], ids[0]);
        for t in 1..ids.len() {
            score += self.trans[(ids[t - 1], ids[t])] + self.emission(&feats[t], ids[t]);
        }
        score + self.end[ids[ids.len() - 1]]
    }

    fn alphas(&self, feats: &[Vec<usize>]) -> Vec<Vec<f64>> {
        let t_count = self.tags.len();
        let mut alpha = vec![vec![0.0; t_count]; feats.len()];
        for y in 0..t_count {
            alpha[0][y] = self.begin[y] + self.emission(&feats[0], y);
        }
        for t in 1..feats.len() {
            for y in 0..t_count {
                let em = self.emission(&feats[t], y);
                alpha[t][y] = em
                    + logsumexp(
                        (0..t_count).map(|i| alpha[t - 1][i] + self.trans[(i, y)]),
                    );
            }
        }
        alpha
    }

    fn betas(&self, feats: &[Vec<usize>]) -> Vec<Vec<f64>> {
        let t_count = self.tags.len();
        let len = feats.len();
        let mut beta = vec![vec![0.0; t_count]; len];
        for y in 0..t_count {
            beta[len - 1][y] = self.end[y];
        }
        for t in (0..len - 1).rev() {
            for i in 0..t_count {
                beta[t][i] = logsumexp((0..t_count).map(|y| {
                    self.trans[(i, y)] + self.emission(&feats[t + 1], y) + beta[t + 1][y]
                }));
            }
        }
        beta
    }

    /// Log partition computed by the forward pass.
    pub fn log_partition_forward(&self, tokens: &[String]) -> f64 {
        if tokens.is_empty() {
            return 0.0;
        }
        let feats = self.features_for(tokens);
        let alpha = self.alphas(&feats);
        logsumexp(
            (0..self.tags.len()).map(|y| alpha[tokens.len() - 1][y] + self.end[y]),
        )
    }

    /// Log partition computed by the backward pass; agrees with the
    /// forward value up to float noise.
    pub fn log_partition_backward(&self, tokens: &[String]) -> f64 {
        if tokens.is_empty() {
            return 0.0;
        }
        let feats = self.features_for(tokens);
        let beta = self.betas(&feats);
        logsumexp(
            (0..self.tags.len())
                .map(|y| self.begin[y] + self.emission(&feats[0], y) + beta[0][y]),
        )
    }

    /// Per-position tag marginals; each row sums to 1.
    pub fn marginals(&self, tokens: &[String]) -> Vec<Vec<f64>> {
        if tokens.is_empty() {
            return Vec::new();
        }
        let feats = self.features_for(tokens);
        let alpha = self.alphas(&feats);
        let beta = self.betas(&feats);
        let log_z = logsumexp(
            (0..self.tags.len()).map(|y| alpha[tokens.len() - 1][y] + self.end[y]),
        );
        alpha
            .iter()
            .zip(&beta)
            .map(|(a, b)| {
                (0..self.tags.len()).map(|y| (a[y] + b[y] - log_z).exp()).collect()
            })
            .collect()
    }

    /// Viterbi-optimal IOB tags. Ties break toward O, then the earlier
    /// tag in the inventory, because candidates are scanned in index
    /// order and only a strictly better score displaces the incumbent.
    pub fn tag_slots(&self, tokens: &[String]) -> Vec<String> {
        self.viterbi(tokens).0
    }

    /// The Viterbi path and its unnormalized log score.
    pub fn viterbi(&self, tokens: &[String]) -> (Vec<String>, f64) {
        if tokens.is_empty() {
            return (Vec::new(), 0.0);
        }
        let t_count = self.tags.len();
        let feats = self.features_for(tokens);
        let len = tokens.len();
        let mut delta = vec![vec![0.0; t_count]; len];
        let mut back = vec![vec![0usize; t_count]; len];
        for y in 0..t_count {
            delta[0][y] = self.begin[y] + self.emission(&feats[0], y);
        }
        for t in 1..len {
            for y in 0..t_count {
                let mut best_i = 0usize;
                let mut best = delta[t - 1][0] + self.trans[(0, y)];
                for i in 1..t_count {
                    let s = delta[t - 1][i] + self.trans[(i, y)];
                    if s > best {
                        best = s;
                        best_i = i;
                    }
                }
                delta[t][y] = best + self.emission(&feats[t], y);
                back[t][y] = best_i;
            }
        }
        let mut best_y = 0usize;
        let mut best = delta[len - 1][0] + self.end[0];
        for y in 1..t_count {
            let s = delta[len - 1][y] + self.end[y];
            if s > best {
                best = s;
                best_y = y;
            }
        }
        let mut path = vec![0usize; len];
        path[len - 1] = best_y;
        for t in (1..len).rev() {
            path[t - 1] = back[t][path[t]];
        }
        (path.iter().map(|&y| self.tags[y].clone()).collect(), best)
    }

    /// Flat parameter access in the order begin, end, trans, emit; used
    /// by training and by finite-difference checks.
    pub fn flat_len(&self) -> usize {
        let t = self.tags.len();
        2 * t + t * t + self.emit.len()
    }

    pub fn get_flat(&self, i: usize) -> f64 {
        let t = self.tags.len();
        if i < t {
            return self.begin[i];
        }
        let i = i - t;
        if i < t {
            return self.end[i];
        }
        let i = i - t;
        if i < t * t {
            return self.trans[(i / t, i % t)];
        }
        let i = i - t * t;
        let cols = self.emit.ncols();
        self.emit[(i / cols, i % cols)]
    }

    pub fn set_flat(&mut self, i: usize, v: f64) {
        let t = self.tags.len();
        if i < t {
            self.begin[i] = v;
            return;
        }
        let i = i - t;
        if i < t {
            self.end[i] = v;
            return;
        }
        let i = i - t;
        if i < t * t {
            self.trans[(i / t, i % t)] = v;
            return;
        }
        let i = i - t * t;
        let cols = self.emit.ncols();
        self.emit[(i / cols, i % cols)] = v;
    }

    fn instance_objective_and_gradient(
        &self,
        inst: &Instance,
        grad: &mut [f64],
    ) -> f64 {
        let t_count = self.tags.len();
        let feats = &inst.feats;
        let len = feats.len();
        let alpha = self.alphas(feats);
        let beta = self.betas(feats);
        let log_z =
            logsumexp((0..t_count).map(|y| alpha[len - 1][y] + self.end[y]));

        let t = t_count;
        let begin_at = |y: usize| y;
        let end_at = |y: usize| t + y;
        let trans_at = |i: usize, j: usize| 2 * t + i * t + j;
        let emit_at = |f: usize, y: usize| 2 * t + t * t + f * t + y;

        // Observed features.
        let mut gold_score = self.begin[inst.gold[0]] + self.emission(&feats[0], inst.gold[0]);
        grad[begin_at(inst.gold[0])] += 1.0;
        grad[end_at(inst.gold[len - 1])] += 1.0;
        for pos in 0..len {
            if pos > 0 {
                gold_score += self.trans[(inst.gold[pos - 1], inst.gold[pos])]
                    + self.emission(&feats[pos], inst.gold[pos]);
                grad[trans_at(inst.gold[pos - 1], inst.gold[pos])] += 1.0;
            }
            for &f in &feats[pos] {
                grad[emit_at(f, inst.gold[pos])] += 1.0;
            }
        }
        gold_score += self.end[inst.gold[len - 1]];

        // Expected features from the marginals.
        for y in 0..t_count {
            grad[begin_at(y)] -= (alpha[0][y] + beta[0][y] - log_z).exp();
            grad[end_at(y)] -= (alpha[len - 1][y] + beta[len - 1][y] - log_z).exp();
        }
        for pos in 0..len {
            for y in 0..t_count {
                let p = (alpha[pos][y] + beta[pos][y] - log_z).exp();
                for &f in &feats[pos] {
                    grad[emit_at(f, y)] -= p;
                }
            }
        }
        for pos in 1..len {
            for i in 0..t_count {
                for j in 0..t_count {
                    let p = (alpha[pos - 1][i]
                        + self.trans[(i, j)]
                        + self.emission(&feats[pos], j)
                        + beta[pos][j]
                        - log_z)
                        .exp();
                    grad[trans_at(i, j)] -= p;
                }
            }
        }
        gold_score - log_z
    }

    /// The regularized conditional log-likelihood of tagged sentences and
    /// its gradient over the flat parameter layout.
    pub fn objective_and_gradient(
        &self,
        data: &[(Vec<String>, Vec<String>)],
        l2: f64,
    ) -> (f64, Vec<f64>) {
        let instances: Vec<Instance> = data
            .iter()
            .map(|(tokens, tags)| Instance {
                feats: self.features_for(tokens),
                gold: tags.iter().map(|t| self.tag_index[t]).collect(),
            })
            .collect();
        self.objective_and_gradient_encoded(&instances, l2)
    }

    fn objective_and_gradient_encoded(
        &self,
        instances: &[Instance],
        l2: f64,
    ) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.flat_len()];
        let mut obj = 0.0;
        for inst in instances {
            if inst.gold.is_empty() {
                continue;
            }
            obj += self.instance_objective_and_gradient(inst, &mut grad);
        }
        for i in 0..grad.len() {
            let w = self.get_flat(i);
            obj -= 0.5 * l2 * w * w;
            grad[i] -= l2 * w;
        }
        (obj, grad)
    }

    pub fn save(&self, path: &Path) -> Result<(), SluError> {
        let header = serde_json::json!({
            "tags": self.tags,
            "features": self.dict.names(),
            "templates": self.templates,
        });
        let t = self.tags.len();
        let mut ends = Array2::zeros((2, t));
        for y in 0..t {
            ends[(0, y)] = self.begin[y];
            ends[(1, y)] = self.end[y];
        }
        let ckpt = Checkpoint {
            kind: "crf".to_string(),
            header,
            tensors: vec![
                ("ends".to_string(), ends),
                ("trans".to_string(), self.trans.clone()),
                ("emit".to_string(), self.emit.clone()),
            ],
        };
        ckpt.save(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SluError> {
        let ckpt = Checkpoint::load(path, "crf")?;
        let bad = |m: &str| CheckpointError::BadHeader(m.to_string());
        let field = |key: &str| -> Result<serde_json::Value, CheckpointError> {
            ckpt.header.get(key).cloned().ok_or_else(|| bad(key))
        };
        let tags: Vec<String> =
            serde_json::from_value(field("tags")?).map_err(|e| bad(&e.to_string()))?;
        let features: Vec<String> =
            serde_json::from_value(field("features")?).map_err(|e| bad(&e.to_string()))?;
        let templates: TemplateSet =
            serde_json::from_value(field("templates")?).map_err(|e| bad(&e.to_string()))?;
        let mut ends = None;
        let mut trans = None;
        let mut emit = None;
        for (name, tensor) in ckpt.tensors {
            match name.as_str() {
                "ends" => ends = Some(tensor),
                "trans" => trans = Some(tensor),
                "emit" => emit = Some(tensor),
                _ => {}
            }
        }
        let ends = ends.ok_or_else(|| bad("missing ends tensor"))?;
        let trans = trans.ok_or_else(|| bad("missing trans tensor"))?;
        let emit = emit.ok_or_else(|| bad("missing emit tensor"))?;
        let t = tags.len();
        if ends.dim() != (2, t) || trans.dim() != (t, t) || emit.dim() != (features.len(), t) {
            return Err(bad("tensor shapes do not match header").into());
        }
        let tag_index = tags.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(CrfModel {
            tags,
            tag_index,
            dict: FeatureDict::from_names(features),
            templates,
            trans,
            begin: ends.row(0).to_vec(),
            end: ends.row(1).to_vec(),
            emit,
        })
    }
}

/// Trains a CRF on the IOB expansion of an annotated corpus.
pub fn train_crf(
    corpus: &[AnnotatedUtterance],
    registry: &Registry,
    templates: &TemplateSet,
    hyper: &CrfHyper,
) -> Result<(CrfModel, CrfTrainReport), SluError> {
    if corpus.is_empty() {
        return Err(SluError::EmptyCorpus);
    }
    let tagged: Vec<(Vec<String>, Vec<String>)> = corpus.iter().map(to_iob).collect();

    // Freeze the feature dictionary on everything the templates can see
    // in the training corpus.
    let mut counts = std::collections::BTreeMap::new();
    for (tokens, _) in &tagged {
        for t in 0..tokens.len() {
            for name in templates.extract(tokens, t) {
                *counts.entry(name).or_insert(0) += 1;
            }
        }
    }
    let dict = FeatureDict::build(&counts, 1);
    let mut model = CrfModel::zeroed(registry, templates.clone(), dict);

    let instances: Vec<Instance> = tagged
        .iter()
        .map(|(tokens, tags)| Instance {
            feats: model.features_for(tokens),
            gold: tags.iter().map(|t| model.tag_index[t]).collect(),
        })
        .collect();

    let (mut current, mut grad) = model.objective_and_gradient_encoded(&instances, hyper.l2);
    let mut report = CrfTrainReport {
        objective: vec![current],
        epochs_run: 0,
        converged: false,
    };
    let mut step = hyper.step;
    for _ in 0..hyper.epochs {
        let norm: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm < hyper.tolerance {
            report.converged = true;
            break;
        }
        loop {
            let mut candidate = model.clone();
            for (i, g) in grad.iter().enumerate() {
                candidate.set_flat(i, candidate.get_flat(i) + step * g);
            }
            let (obj, g) = candidate.objective_and_gradient_encoded(&instances, hyper.l2);
            if obj >= current || step < 1e-15 {
                if obj >= current {
                    model = candidate;
                    current = obj;
                    grad = g;
                }
                break;
            }
            step /= 2.0;
        }
        report.objective.push(current);
        report.epochs_run += 1;
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::from_iob;

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn toy_registry() -> Registry {
        Registry::new(["song_name"], ["music"]).unwrap()
    }

    /// A slot value is always the token right after "play".
    fn pattern_corpus() -> (Vec<AnnotatedUtterance>, Registry) {
        let registry = toy_registry();
        let label = registry.label("song_name").unwrap().clone();
        let values = ["thriller", "imagine", "yesterday", "help"];
        let fillers = ["loud", "now", "again", "twice"];
        let mut corpus = Vec::new();
        for (i, v) in values.iter().enumerate() {
            for f in &fillers[..3] {
                let tokens = strs(&["play", v, f]);
                let spans =
                    vec![crate::corpus::SlotSpan::new(1, 2, label.clone())];
                corpus.push(AnnotatedUtterance::new(tokens, spans, "music").unwrap());
            }
            let tokens = strs(&["stop", fillers[i]]);
            corpus.push(AnnotatedUtterance::new(tokens, vec![], "music").unwrap());
        }
        (corpus, registry)
    }

    #[test]
    fn tag_inventory_puts_o_first() {
        let registry = Registry::standard();
        let tags = tag_inventory(&registry);
        assert_eq!(tags[0], "O");
        assert_eq!(tags.len(), 1 + 2 * registry.slot_labels().len());
        let mut sorted = tags[1..].to_vec();
        sorted.sort();
        assert_eq!(&tags[1..], sorted.as_slice());
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let registry = toy_registry();
        assert!(matches!(
            train_crf(&[], &registry, &TemplateSet::default(), &CrfHyper::default()),
            Err(SluError::EmptyCorpus)
        ));
    }

    #[test]
    fn zero_epochs_tag_everything_outside() {
        let (corpus, registry) = pattern_corpus();
        let hyper = CrfHyper { epochs: 0, ..CrfHyper::default() };
        let (model, report) =
            train_crf(&corpus, &registry, &TemplateSet::default(), &hyper).unwrap();
        assert_eq!(report.epochs_run, 0);
        let tags = model.tag_slots(&strs(&["play", "thriller", "loud"]));
        assert_eq!(tags, vec!["O", "O", "O"]);
    }

    #[test]
    fn pattern_corpus_is_learned_exactly() {
        let (corpus, registry) = pattern_corpus();
        let (model, report) =
            train_crf(&corpus, &registry, &TemplateSet::default(), &CrfHyper::default())
                .unwrap();
        for w in report.objective.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "objective dropped: {} -> {}", w[0], w[1]);
        }
        // Held-out sentence with the same pattern and an unseen value
        // word: the position features carry it.
        let tags = model.tag_slots(&strs(&["play", "wonderwall", "loud"]));
        assert_eq!(tags, vec!["O", "B-song_name", "O"]);
        for utt in &corpus {
            let (tokens, gold) = to_iob(utt);
            assert_eq!(model.tag_slots(&tokens), gold);
        }
    }

    #[test]
    fn viterbi_score_dominates_gold_paths() {
        let (corpus, registry) = pattern_corpus();
        let (model, _) =
            train_crf(&corpus, &registry, &TemplateSet::default(), &CrfHyper::default())
                .unwrap();
        for utt in &corpus {
            let (tokens, gold) = to_iob(utt);
            let (_, best) = model.viterbi(&tokens);
            let gold_score = model.path_score(&tokens, &gold);
            assert!(best >= gold_score - 1e-9);
        }
    }

    #[test]
    fn empty_input_gets_empty_tags() {
        let (corpus, registry) = pattern_corpus();
        let (model, _) =
            train_crf(&corpus, &registry, &TemplateSet::default(), &CrfHyper::default())
                .unwrap();
        assert!(model.tag_slots(&[]).is_empty());
    }

    #[test]
    fn partition_matches_both_directions() {
        let (corpus, registry) = pattern_corpus();
        let (model, _) =
            train_crf(&corpus, &registry, &TemplateSet::default(), &CrfHyper::default())
                .unwrap();
        let tokens = strs(&["play", "imagine", "twice"]);
        let f = model.log_partition_forward(&tokens);
        let b = model.log_partition_backward(&tokens);
        assert!(((f - b) / f.abs().max(1.0)).abs() < 1e-6, "forward {f} backward {b}");
    }

    #[test]
    fn marginals_sum_to_one() {
        let (corpus, registry) = pattern_corpus();
        let (model, _) =
            train_crf(&corpus, &registry, &TemplateSet::default(), &CrfHyper::default())
                .unwrap();
        let tokens = strs(&["play", "imagine", "twice", "now"]);
        for row in model.marginals(&tokens) {
            let total: f64 = row.iter().sum();
            assert!((total - 1.0).abs() < 1e-6, "marginal row sums to {total}");
        }
    }

    /// Every tag path of a short sentence, scored directly.
    fn exhaustive_best(model: &CrfModel, tokens: &[String]) -> f64 {
        let t = model.tags.len();
        let len = tokens.len();
        let mut best = f64::NEG_INFINITY;
        let total = t.pow(len as u32);
        for code in 0..total {
            let mut c = code;
            let tags: Vec<String> = (0..len)
                .map(|_| {
                    let y = c % t;
                    c /= t;
                    model.tags[y].clone()
                })
                .collect();
            best = best.max(model.path_score(tokens, &tags));
        }
        best
    }

    #[test]
    fn viterbi_matches_exhaustive_search() {
        let (corpus, registry) = pattern_corpus();
        let (model, _) =
            train_crf(&corpus, &registry, &TemplateSet::default(), &CrfHyper::default())
                .unwrap();
        for tokens in [
            strs(&["play", "thriller"]),
            strs(&["stop", "now"]),
            strs(&["play", "help", "loud"]),
            strs(&["play", "play", "play", "play"]),
        ] {
            let (_, score) = model.viterbi(&tokens);
            let best = exhaustive_best(&model, &tokens);
            assert!((score - best).abs() < 1e-9, "viterbi {score} exhaustive {best}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (corpus, registry) = pattern_corpus();
        // A slightly trained model gives non-trivial marginals.
        let hyper = CrfHyper { epochs: 3, ..CrfHyper::default() };
        let (model, _) =
            train_crf(&corpus, &registry, &TemplateSet::default(), &hyper).unwrap();
        let data: Vec<(Vec<String>, Vec<String>)> =
            corpus.iter().take(3).map(to_iob).collect();
        let l2 = 0.01;
        let (_, grad) = model.objective_and_gradient(&data, l2);
        let eps = 1e-6;
        let n = model.flat_len();
        let stride = (n / 60).max(1);
        for i in (0..n).step_by(stride) {
            let mut m = model.clone();
            let orig = m.get_flat(i);
            m.set_flat(i, orig + eps);
            let (plus, _) = m.objective_and_gradient(&data, l2);
            m.set_flat(i, orig - eps);
            let (minus, _) = m.objective_and_gradient(&data, l2);
            let fd = (plus - minus) / (2.0 * eps);
            let denom = fd.abs().max(grad[i].abs()).max(1e-8);
            assert!(
                ((fd - grad[i]) / denom).abs() < 1e-4,
                "coordinate {i}: fd {fd} vs grad {}",
                grad[i]
            );
        }
    }

    #[test]
    fn predictions_round_trip_through_iob() {
        let (corpus, registry) = pattern_corpus();
        let (model, _) =
            train_crf(&corpus, &registry, &TemplateSet::default(), &CrfHyper::default())
                .unwrap();
        let tokens = strs(&["play", "thriller", "loud"]);
        let tags = model.tag_slots(&tokens);
        let utt = from_iob(&tokens, &tags, "music").unwrap();
        assert_eq!(utt.spans().len(), 1);
    }

    #[test]
    fn checkpoint_round_trip() {
        let (corpus, registry) = pattern_corpus();
        let hyper = CrfHyper { epochs: 10, ..CrfHyper::default() };
        let (model, _) =
            train_crf(&corpus, &registry, &TemplateSet::default(), &hyper).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("crf.ckpt");
        model.save(&path).unwrap();
        let loaded = CrfModel::load(&path).unwrap();
        assert_eq!(loaded.tags, model.tags);
        assert_eq!(loaded.trans, model.trans);
        assert_eq!(loaded.begin, model.begin);
        assert_eq!(loaded.end, model.end);
        assert_eq!(loaded.emit, model.emit);
        let tokens = strs(&["play", "imagine", "now"]);
        assert_eq!(loaded.tag_slots(&tokens), model.tag_slots(&tokens));
    }
}
