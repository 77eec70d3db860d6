//! Greedy, beam, and sampling decoders.
//!
//! All three decode one sentence at a time with a fresh graph per step,
//! so results never depend on batching or padding. Ties in greedy argmax
//! go to the lowest token id; beam candidate ordering breaks score ties
//! by token sequence, so every decode is fully deterministic.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::model::TranslationModel;
use super::vocab::EOS_ID;

#[derive(Debug, Clone)]
pub struct DecodeOptions {
    /// Cap on decode steps (the EOS step counts as one). Defaults to the
    /// longest target the positional table supports.
    pub max_steps: Option<usize>,
    /// Keep the full next-token probability distribution of every step.
    pub record_distributions: bool,
    /// Run a final teacher-forced pass over the output to collect
    /// cross-attention maps (one per decoder layer per head).
    pub record_attention: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions { max_steps: None, record_distributions: false, record_attention: false }
    }
}

/// One decoded hypothesis.
#[derive(Debug, Clone)]
pub struct DecodeResult {
    /// Emitted token ids, without BOS or EOS.
    pub tokens: Vec<usize>,
    /// Sum of per-step log-probabilities; includes the EOS step when the
    /// hypothesis finished.
    pub log_prob: f64,
    /// The per-step terms behind `log_prob`.
    pub per_step_log_probs: Vec<f64>,
    /// Whether the hypothesis ended with EOS (as opposed to the cap).
    pub finished: bool,
    /// Per-step full distributions (probabilities), when requested.
    pub distributions: Option<Vec<Vec<f64>>>,
    /// Cross-attention maps from a teacher-forced pass, when requested.
    pub attention: Option<Vec<Array2<f64>>>,
}

impl DecodeResult {
    /// Output as target-language tokens.
    pub fn text(&self, model: &TranslationModel) -> Vec<String> {
        model.tgt_vocab().decode(&self.tokens)
    }
}

/// Greedy and beam results both come from [`beam_decode`]; greedy is also
/// available directly.
#[derive(Debug, Clone)]
pub struct BeamResult {
    /// Winner under length-normalized score (log-prob over step count).
    pub best: DecodeResult,
    /// Winner under raw summed log-prob, no normalization.
    pub raw_best: DecodeResult,
}

fn argmax_tie_lowest(xs: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn step_cap(model: &TranslationModel, opts: &DecodeOptions) -> usize {
    let hard = model.config().max_len - 1;
    opts.max_steps.map_or(hard, |m| m.min(hard)).max(1)
}

fn finish(
    model: &TranslationModel,
    src_ids: &[usize],
    tokens: Vec<usize>,
    per_step: Vec<f64>,
    finished: bool,
    distributions: Option<Vec<Vec<f64>>>,
    opts: &DecodeOptions,
) -> DecodeResult {
    let attention = if opts.record_attention {
        let (_, maps) = model.score_sequence(src_ids, &tokens, true);
        maps
    } else {
        None
    };
    DecodeResult {
        log_prob: per_step.iter().sum(),
        tokens,
        per_step_log_probs: per_step,
        finished,
        distributions,
        attention,
    }
}

impl TranslationModel {
    /// Greedy decode; ties pick the lowest token id.
    pub fn greedy_decode(&self, src_tokens: &[String], opts: &DecodeOptions) -> DecodeResult {
        let src_ids = self.src_vocab().encode(src_tokens);
        self.greedy_decode_ids(&src_ids, opts)
    }

    pub(crate) fn greedy_decode_ids(&self, src_ids: &[usize], opts: &DecodeOptions) -> DecodeResult {
        let enc = self.encode_value(src_ids);
        let cap = step_cap(self, opts);
        let mut tokens: Vec<usize> = Vec::new();
        let mut per_step: Vec<f64> = Vec::new();
        let mut dists = opts.record_distributions.then(Vec::new);
        let mut finished = false;
        for _ in 0..cap {
            let lps = self.step_log_probs(&enc, &tokens);
            if let Some(d) = &mut dists {
                d.push(lps.iter().map(|&x| x.exp()).collect());
            }
            let pick = argmax_tie_lowest(&lps);
            per_step.push(lps[pick]);
            if pick == EOS_ID {
                finished = true;
                break;
            }
            tokens.push(pick);
        }
        finish(self, src_ids, tokens, per_step, finished, dists, opts)
    }

    /// Samples from the per-step softmax at temperature one.
    pub fn sample_decode(
        &self,
        src_tokens: &[String],
        opts: &DecodeOptions,
        rng: &mut ChaCha8Rng,
    ) -> DecodeResult {
        let src_ids = self.src_vocab().encode(src_tokens);
        self.sample_decode_ids(&src_ids, opts, rng)
    }

    pub(crate) fn sample_decode_ids(
        &self,
        src_ids: &[usize],
        opts: &DecodeOptions,
        rng: &mut ChaCha8Rng,
    ) -> DecodeResult {
        let enc = self.encode_value(src_ids);
        let cap = step_cap(self, opts);
        let mut tokens: Vec<usize> = Vec::new();
        let mut per_step: Vec<f64> = Vec::new();
        let mut dists = opts.record_distributions.then(Vec::new);
        let mut finished = false;
        for _ in 0..cap {
            let lps = self.step_log_probs(&enc, &tokens);
            let probs: Vec<f64> = lps.iter().map(|&x| x.exp()).collect();
            if let Some(d) = &mut dists {
                d.push(probs.clone());
            }
            let draw: f64 = rng.random();
            let mut cum = 0.0;
            let mut pick = probs.len() - 1;
            for (i, &p) in probs.iter().enumerate() {
                cum += p;
                if draw < cum {
                    pick = i;
                    break;
                }
            }
            per_step.push(lps[pick]);
            if pick == EOS_ID {
                finished = true;
                break;
            }
            tokens.push(pick);
        }
        finish(self, src_ids, tokens, per_step, finished, dists, opts)
    }

    /// Beam search over raw cumulative log-probability.
    ///
    /// Hypotheses that emit EOS leave the beam and enter the finished
    /// pool; the greedy hypothesis always joins the pool too, so the raw
    /// winner never scores below greedy. The normalized winner divides by
    /// step count (EOS step included).
    pub fn beam_decode(
        &self,
        src_tokens: &[String],
        beam_width: usize,
        opts: &DecodeOptions,
    ) -> BeamResult {
        let src_ids = self.src_vocab().encode(src_tokens);
        self.beam_decode_ids(&src_ids, beam_width, opts)
    }

    pub(crate) fn beam_decode_ids(
        &self,
        src_ids: &[usize],
        beam_width: usize,
        opts: &DecodeOptions,
    ) -> BeamResult {
        assert!(beam_width >= 1, "beam width must be at least 1");
        let enc = self.encode_value(src_ids);
        let cap = step_cap(self, opts);

        #[derive(Clone)]
        struct Hyp {
            tokens: Vec<usize>,
            per_step: Vec<f64>,
            lp: f64,
            finished: bool,
        }

        let mut live = vec![Hyp { tokens: Vec::new(), per_step: Vec::new(), lp: 0.0, finished: false }];
        let mut pool: Vec<Hyp> = Vec::new();
        for _ in 0..cap {
            if live.is_empty() {
                break;
            }
            let mut candidates: Vec<Hyp> = Vec::new();
            for hyp in &live {
                let lps = self.step_log_probs(&enc, &hyp.tokens);
                for (tok, &lp) in lps.iter().enumerate() {
                    let mut next = hyp.clone();
                    next.lp += lp;
                    next.per_step.push(lp);
                    if tok == EOS_ID {
                        next.finished = true;
                    } else {
                        next.tokens.push(tok);
                    }
                    candidates.push(next);
                }
            }
            candidates.sort_by(|a, b| {
                b.lp.total_cmp(&a.lp).then_with(|| a.tokens.cmp(&b.tokens))
            });
            candidates.truncate(beam_width);
            live = Vec::new();
            for c in candidates {
                if c.finished {
                    pool.push(c);
                } else {
                    live.push(c);
                }
            }
        }
        // Hypotheses still alive at the cap compete as unfinished output.
        pool.extend(live);

        // The greedy path always competes, which pins the raw winner at or
        // above the greedy score.
        let greedy = self.greedy_decode_ids(src_ids, &DecodeOptions::default());
        if !pool
            .iter()
            .any(|h| h.tokens == greedy.tokens && h.finished == greedy.finished)
        {
            pool.push(Hyp {
                tokens: greedy.tokens.clone(),
                per_step: greedy.per_step_log_probs.clone(),
                lp: greedy.log_prob,
                finished: greedy.finished,
            });
        }

        let pick = |key: &dyn Fn(&Hyp) -> f64| -> Hyp {
            pool.iter()
                .max_by(|a, b| {
                    key(a)
                        .total_cmp(&key(b))
                        .then_with(|| b.tokens.cmp(&a.tokens))
                })
                .expect("pool always holds the greedy hypothesis")
                .clone()
        };
        let raw = pick(&|h: &Hyp| h.lp);
        let norm = pick(&|h: &Hyp| h.lp / h.per_step.len().max(1) as f64);

        let build = |h: Hyp| {
            finish(self, src_ids, h.tokens, h.per_step, h.finished, None, opts)
        };
        BeamResult { raw_best: build(raw), best: build(norm) }
    }

    /// Decodes each sentence independently; included to make the
    /// batching-invariance contract explicit and testable.
    pub fn greedy_decode_batch(
        &self,
        sources: &[Vec<String>],
        opts: &DecodeOptions,
    ) -> Vec<DecodeResult> {
        sources.iter().map(|s| self.greedy_decode(s, opts)).collect()
    }
}
