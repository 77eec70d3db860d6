//! Supervised training: label-smoothed cross entropy, Adam, and the
//! warmup-then-decay learning-rate schedule.

use rand::seq::SliceRandom;

use crate::seed::stage_rng;

use super::model::TranslationModel;
use super::params::{Adam, GradSet, ParamSet};
use super::NmtError;

#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub steps: usize,
    pub batch_size: usize,
    /// Warmup steps of the inverse-square-root schedule.
    pub warmup: usize,
    /// Multiplier on the schedule; 1.0 is the standard curve.
    pub lr_scale: f64,
    pub seed: u64,
    /// Overrides the config's label smoothing when set.
    pub label_smoothing: Option<f64>,
    /// Evaluate validation perplexity every this many steps (0 = never).
    pub val_every: usize,
    /// Stop after this many evaluations without improvement (0 = never).
    pub patience: usize,
    /// Restore the best-validation parameters when training ends.
    pub keep_best: bool,
}

impl TrainSettings {
    pub fn new(steps: usize, batch_size: usize, seed: u64) -> Self {
        TrainSettings {
            steps,
            batch_size: batch_size.max(1),
            warmup: 400,
            lr_scale: 1.0,
            seed,
            label_smoothing: None,
            val_every: 0,
            patience: 0,
            keep_best: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub steps_run: usize,
    /// Mean per-token training loss of each step.
    pub train_loss: Vec<f64>,
    /// (step, validation perplexity) pairs.
    pub validation: Vec<(usize, f64)>,
    pub best_val: Option<(usize, f64)>,
    pub stopped_early: bool,
}

/// The inverse-square-root schedule with linear warmup, scaled by
/// `d_model^-0.5`.
fn learning_rate(d_model: usize, warmup: usize, step: u64, scale: f64) -> f64 {
    let step = step.max(1) as f64;
    let warmup = warmup.max(1) as f64;
    scale * (d_model as f64).powf(-0.5) * step.powf(-0.5).min(step * warmup.powf(-1.5))
}

/// Perplexity of a parallel corpus under the model: exp of mean per-token
/// negative log-likelihood, EOS included, no smoothing, no dropout.
pub fn perplexity(model: &TranslationModel, pairs: &[(Vec<usize>, Vec<usize>)]) -> f64 {
    let mut nll = 0.0;
    let mut tokens = 0usize;
    for (src, tgt) in pairs {
        let (steps, _) = model.score_sequence(src, tgt, false);
        nll -= steps.iter().sum::<f64>();
        tokens += steps.len();
    }
    if tokens == 0 {
        return f64::NAN;
    }
    (nll / tokens as f64).exp()
}

fn encode_pairs(
    model: &TranslationModel,
    pairs: &[(Vec<String>, Vec<String>)],
) -> Vec<(Vec<usize>, Vec<usize>)> {
    pairs
        .iter()
        .map(|(s, t)| (model.src_vocab().encode(s), model.tgt_vocab().encode(t)))
        .collect()
}

/// Trains in place for a fixed number of optimizer steps.
///
/// A step draws `batch_size` sentence pairs from a seeded shuffled order,
/// accumulates their gradients one by one, normalizes by the number of
/// predicted tokens, and applies Adam under the warmup schedule. With a
/// validation set and `val_every`, perplexity is tracked and the best
/// parameters can be kept.
pub fn train_supervised(
    model: &mut TranslationModel,
    pairs: &[(Vec<String>, Vec<String>)],
    validation: Option<&[(Vec<String>, Vec<String>)]>,
    settings: &TrainSettings,
) -> Result<TrainReport, NmtError> {
    if pairs.is_empty() {
        return Err(NmtError::EmptyCorpus);
    }
    let encoded = encode_pairs(model, pairs);
    let encoded_val = validation.map(|v| encode_pairs(model, v));
    let smoothing = settings.label_smoothing.unwrap_or(model.config().label_smoothing);

    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut shuffle_rng = stage_rng(settings.seed, "train-shuffle");
    let mut dropout_rng = stage_rng(settings.seed, "train-dropout");
    order.shuffle(&mut shuffle_rng);
    let mut cursor = 0usize;

    let mut opt = Adam::new(model.params());
    let mut report = TrainReport {
        steps_run: 0,
        train_loss: Vec::with_capacity(settings.steps),
        validation: Vec::new(),
        best_val: None,
        stopped_early: false,
    };
    let mut best_params: Option<ParamSet> = None;
    let mut evals_since_best = 0usize;

    for step in 1..=settings.steps {
        let mut grads = GradSet::zeros_like(model.params());
        let mut loss_sum = 0.0;
        let mut predictions = 0usize;
        for _ in 0..settings.batch_size {
            if cursor >= order.len() {
                order.shuffle(&mut shuffle_rng);
                cursor = 0;
            }
            let (src, tgt) = &encoded[order[cursor]];
            cursor += 1;
            let graph = model.loss_graph(src, tgt, smoothing, Some(&mut dropout_rng));
            loss_sum += graph.tape.value(graph.loss)[(0, 0)];
            predictions += graph.predictions;
            let node_grads = graph.tape.backward(graph.loss);
            grads.accumulate(&graph.leaves, &node_grads);
        }
        if !loss_sum.is_finite() || !grads.is_finite() {
            return Err(NmtError::NonFiniteLoss { step });
        }
        grads.scale(1.0 / predictions as f64);
        let lr = learning_rate(model.config().d_model, settings.warmup, opt.steps() + 1, settings.lr_scale);
        opt.step(model.params_mut(), &grads, lr);
        report.steps_run = step;
        report.train_loss.push(loss_sum / predictions as f64);

        if settings.val_every > 0 && step % settings.val_every == 0 {
            if let Some(val) = &encoded_val {
                let ppl = perplexity(model, val);
                report.validation.push((step, ppl));
                let improved = report.best_val.is_none_or(|(_, best)| ppl < best);
                if improved {
                    report.best_val = Some((step, ppl));
                    evals_since_best = 0;
                    if settings.keep_best {
                        best_params = Some(model.params().clone());
                    }
                } else {
                    evals_since_best += 1;
                    if settings.patience > 0 && evals_since_best >= settings.patience {
                        report.stopped_early = true;
                        break;
                    }
                }
            }
        }
    }

    if let Some(best) = best_params {
        *model.params_mut() = best;
    }
    model.note_steps(report.steps_run as u64);
    Ok(report)
}
