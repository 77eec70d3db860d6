//! The transformer translation model and its forward passes.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, Tape};
use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::seed::stage_rng;

use super::params::ParamSet;
use super::vocab::{Vocab, BOS_ID, EOS_ID};
use super::{ModelConfig, NmtError};

/// Encoder-decoder transformer with word-level vocabularies.
#[derive(Debug, Clone)]
pub struct TranslationModel {
    config: ModelConfig,
    src_vocab: Vocab,
    tgt_vocab: Vocab,
    params: ParamSet,
    steps_trained: u64,
    pos: Array2<f64>,
}

fn sinusoid_table(max_len: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((max_len, d), |(pos, i)| {
        let exponent = (2 * (i / 2)) as f64 / d as f64;
        let angle = pos as f64 / 10_000f64.powf(exponent);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

fn init_params(
    config: &ModelConfig,
    src_vocab: &Vocab,
    tgt_vocab: &Vocab,
    rng: &mut ChaCha8Rng,
) -> ParamSet {
    let d = config.d_model;
    let dh = config.head_dim();
    let mut p = ParamSet::new();
    let embed_limit = (3.0 / d as f64).sqrt();
    let embed = |rng: &mut ChaCha8Rng, rows: usize| {
        Array2::from_shape_fn((rows, d), |_| rng.random_range(-embed_limit..embed_limit))
    };
    p.insert("src_embed", embed(rng, src_vocab.len()));
    p.insert("tgt_embed", embed(rng, tgt_vocab.len()));
    let attention = |p: &mut ParamSet, rng: &mut ChaCha8Rng, prefix: &str| {
        for h in 0..config.heads {
            p.insert(format!("{prefix}.wq{h}"), xavier(rng, d, dh));
            p.insert(format!("{prefix}.wk{h}"), xavier(rng, d, dh));
            p.insert(format!("{prefix}.wv{h}"), xavier(rng, d, dh));
        }
        p.insert(format!("{prefix}.wo"), xavier(rng, d, d));
        p.insert(format!("{prefix}.bo"), Array2::zeros((1, d)));
    };
    let layer_norm = |p: &mut ParamSet, name: &str| {
        p.insert(format!("{name}.g"), Array2::ones((1, d)));
        p.insert(format!("{name}.b"), Array2::zeros((1, d)));
    };
    let ffn = |p: &mut ParamSet, rng: &mut ChaCha8Rng, prefix: &str| {
        p.insert(format!("{prefix}.w1"), xavier(rng, d, config.d_ff));
        p.insert(format!("{prefix}.b1"), Array2::zeros((1, config.d_ff)));
        p.insert(format!("{prefix}.w2"), xavier(rng, config.d_ff, d));
        p.insert(format!("{prefix}.b2"), Array2::zeros((1, d)));
    };
    for l in 0..config.layers {
        attention(&mut p, rng, &format!("enc{l}.attn"));
        layer_norm(&mut p, &format!("enc{l}.ln1"));
        ffn(&mut p, rng, &format!("enc{l}.ff"));
        layer_norm(&mut p, &format!("enc{l}.ln2"));
    }
    for l in 0..config.layers {
        attention(&mut p, rng, &format!("dec{l}.self"));
        layer_norm(&mut p, &format!("dec{l}.ln1"));
        attention(&mut p, rng, &format!("dec{l}.cross"));
        layer_norm(&mut p, &format!("dec{l}.ln2"));
        ffn(&mut p, rng, &format!("dec{l}.ff"));
        layer_norm(&mut p, &format!("dec{l}.ln3"));
    }
    p.insert("out.w", xavier(rng, d, tgt_vocab.len()));
    p.insert("out.b", Array2::zeros((1, tgt_vocab.len())));
    p
}

impl TranslationModel {
    pub fn new(
        config: ModelConfig,
        src_vocab: Vocab,
        tgt_vocab: Vocab,
        seed: u64,
    ) -> Result<Self, NmtError> {
        config.validate()?;
        let mut rng = stage_rng(seed, "nmt-init");
        let params = init_params(&config, &src_vocab, &tgt_vocab, &mut rng);
        let pos = sinusoid_table(config.max_len, config.d_model);
        Ok(TranslationModel { config, src_vocab, tgt_vocab, params, steps_trained: 0, pos })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn src_vocab(&self) -> &Vocab {
        &self.src_vocab
    }

    pub fn tgt_vocab(&self) -> &Vocab {
        &self.tgt_vocab
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn steps_trained(&self) -> u64 {
        self.steps_trained
    }

    pub fn note_steps(&mut self, n: u64) {
        self.steps_trained += n;
    }

    /// Truncates an id sequence to the positional table.
    pub(crate) fn clip<'a>(&self, ids: &'a [usize]) -> &'a [usize] {
        &ids[..ids.len().min(self.config.max_len)]
    }

    // ---- checkpoint io ----

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), NmtError> {
        let header = serde_json::json!({
            "config": self.config,
            "src_vocab": self.src_vocab,
            "tgt_vocab": self.tgt_vocab,
            "steps_trained": self.steps_trained,
        });
        let ck = Checkpoint {
            kind: "nmt".into(),
            header,
            tensors: self.params.entries().to_vec(),
        };
        ck.save(path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, NmtError> {
        let ck = Checkpoint::load(path, "nmt")?;
        let bad = |msg: &str| NmtError::Checkpoint(CheckpointError::BadHeader(msg.to_string()));
        let config: ModelConfig = serde_json::from_value(ck.header["config"].clone())
            .map_err(|e| bad(&e.to_string()))?;
        let src_vocab: Vocab = serde_json::from_value(ck.header["src_vocab"].clone())
            .map_err(|e| bad(&e.to_string()))?;
        let tgt_vocab: Vocab = serde_json::from_value(ck.header["tgt_vocab"].clone())
            .map_err(|e| bad(&e.to_string()))?;
        let steps = ck.header["steps_trained"].as_u64().unwrap_or(0);
        let mut model = TranslationModel::new(config, src_vocab, tgt_vocab, 0)?;
        let expected: Vec<String> = model.params.names().map(str::to_string).collect();
        let found: Vec<&String> = ck.tensors.iter().map(|(n, _)| n).collect();
        if expected.len() != found.len() || expected.iter().zip(&found).any(|(a, b)| a != *b) {
            return Err(NmtError::Checkpoint(CheckpointError::Corrupt(
                "parameter layout does not match header config".into(),
            )));
        }
        for (name, tensor) in ck.tensors {
            let slot = model.params.get_mut(&name);
            if slot.dim() != tensor.dim() {
                return Err(NmtError::Checkpoint(CheckpointError::Corrupt(format!(
                    "tensor {name:?} has shape {:?}, expected {:?}",
                    tensor.dim(),
                    slot.dim()
                ))));
            }
            *slot = tensor;
        }
        model.steps_trained = steps;
        Ok(model)
    }

    /// Loads a checkpoint that must carry exactly this architecture.
    pub fn load_expecting(
        path: impl AsRef<std::path::Path>,
        expected: &ModelConfig,
    ) -> Result<Self, NmtError> {
        let model = TranslationModel::load(path)?;
        if model.config != *expected {
            return Err(NmtError::Checkpoint(CheckpointError::VersionMismatch {
                found: serde_json::to_string(&model.config).expect("config serializes"),
                expected: serde_json::to_string(expected).expect("config serializes"),
            }));
        }
        Ok(model)
    }

    // ---- forward passes ----

    /// Builds the teacher-forced loss graph for one sentence pair.
    ///
    /// The decoder reads BOS plus the target and predicts the target
    /// shifted left plus EOS. `rng` enables dropout; pass `None` for
    /// evaluation passes.
    pub fn loss_graph(
        &self,
        src_ids: &[usize],
        tgt_ids: &[usize],
        smoothing: f64,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> LossGraph {
        let src_ids = self.clip(src_ids);
        let tgt_ids = &tgt_ids[..tgt_ids.len().min(self.config.max_len - 1)];
        let mut net = Net::new(self);
        let enc = net.encode(src_ids, &mut rng);
        let mut dec_in = Vec::with_capacity(tgt_ids.len() + 1);
        dec_in.push(BOS_ID);
        dec_in.extend_from_slice(tgt_ids);
        let states = net.decode_states(&dec_in, enc, &mut rng, false);
        let logits = net.logits(states);
        let mut targets = Vec::with_capacity(tgt_ids.len() + 1);
        targets.extend_from_slice(tgt_ids);
        targets.push(EOS_ID);
        let loss = net.tape.cross_entropy(logits, &targets, smoothing);
        let leaves = net.used_leaves();
        LossGraph {
            tape: net.tape,
            loss,
            logits,
            leaves,
            predictions: targets.len(),
        }
    }

    /// Encoder output as a plain value, for incremental decoding.
    pub(crate) fn encode_value(&self, src_ids: &[usize]) -> Array2<f64> {
        let src_ids = self.clip(src_ids);
        let mut net = Net::new(self);
        let enc = net.encode(src_ids, &mut None);
        net.tape.value(enc).clone()
    }

    /// Log-probability distribution over the next token given the target
    /// prefix (without BOS). Returns log-probs for every vocabulary id.
    pub(crate) fn step_log_probs(&self, enc_value: &Array2<f64>, prefix: &[usize]) -> Vec<f64> {
        let mut net = Net::new(self);
        let enc = net.tape.leaf(enc_value.clone());
        let mut dec_in = Vec::with_capacity(prefix.len() + 1);
        dec_in.push(BOS_ID);
        dec_in.extend_from_slice(self.clip(prefix));
        let states = net.decode_states(&dec_in, enc, &mut None, false);
        let logits = net.logits(states);
        let row = net.tape.value(logits).row(net.tape.value(logits).nrows() - 1).to_owned();
        log_softmax(row.as_slice().expect("row is contiguous"))
    }

    /// Per-step log-probabilities of a full target sequence, teacher
    /// forced without dropout or smoothing. The last entry is the EOS
    /// step. Cross-attention maps are returned when requested.
    pub(crate) fn score_sequence(
        &self,
        src_ids: &[usize],
        tgt_ids: &[usize],
        record_attention: bool,
    ) -> (Vec<f64>, Option<Vec<Array2<f64>>>) {
        let src_ids = self.clip(src_ids);
        let tgt_ids = &tgt_ids[..tgt_ids.len().min(self.config.max_len - 1)];
        let mut net = Net::new(self);
        net.record_cross = record_attention;
        let enc = net.encode(src_ids, &mut None);
        let mut dec_in = Vec::with_capacity(tgt_ids.len() + 1);
        dec_in.push(BOS_ID);
        dec_in.extend_from_slice(tgt_ids);
        let states = net.decode_states(&dec_in, enc, &mut None, record_attention);
        let logits = net.logits(states);
        let logits_v = net.tape.value(logits);
        let mut steps = Vec::with_capacity(tgt_ids.len() + 1);
        for (r, &target) in tgt_ids.iter().chain(std::iter::once(&EOS_ID)).enumerate() {
            let row = logits_v.row(r).to_owned();
            let lp = log_softmax(row.as_slice().expect("row is contiguous"));
            steps.push(lp[target]);
        }
        let attention = record_attention.then_some(net.cross_maps);
        (steps, attention)
    }

    /// Teacher-forced log-probability of a target sequence, EOS step
    /// included. No smoothing: this is the model's actual log-likelihood.
    pub fn sequence_log_prob(&self, src_tokens: &[String], tgt_tokens: &[String]) -> f64 {
        let src = self.src_vocab.encode(src_tokens);
        let tgt = self.tgt_vocab.encode(tgt_tokens);
        let (steps, _) = self.score_sequence(&src, &tgt, false);
        steps.iter().sum()
    }
}

pub(crate) fn log_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
    row.iter().map(|&x| x - lse).collect()
}

pub struct LossGraph {
    pub tape: Tape,
    pub loss: NodeId,
    #[allow(dead_code)]
    pub logits: NodeId,
    pub leaves: Vec<(usize, NodeId)>,
    pub predictions: usize,
}

/// One forward construction over a fresh tape. Parameters become leaves
/// lazily, so passes that skip parts of the network never copy them.
pub(crate) struct Net<'m> {
    model: &'m TranslationModel,
    pub tape: Tape,
    leaves: Vec<Option<NodeId>>,
    pub record_cross: bool,
    pub cross_maps: Vec<Array2<f64>>,
}

impl<'m> Net<'m> {
    pub fn new(model: &'m TranslationModel) -> Self {
        Net {
            tape: Tape::new(),
            leaves: vec![None; model.params.entries().len()],
            model,
            record_cross: false,
            cross_maps: Vec::new(),
        }
    }

    fn p(&mut self, name: &str) -> NodeId {
        let idx = self.model.params.index_of(name);
        if let Some(id) = self.leaves[idx] {
            return id;
        }
        let id = self.tape.leaf(self.model.params.entries()[idx].1.clone());
        self.leaves[idx] = Some(id);
        id
    }

    /// Parameter leaves touched by this pass, as (param index, node id).
    pub fn used_leaves(&self) -> Vec<(usize, NodeId)> {
        self.leaves
            .iter()
            .enumerate()
            .filter_map(|(i, id)| id.map(|id| (i, id)))
            .collect()
    }

    fn dropout(&mut self, x: NodeId, rng: &mut Option<&mut ChaCha8Rng>) -> NodeId {
        let rate = self.model.config.dropout;
        let Some(rng) = rng.as_deref_mut() else { return x };
        if rate == 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let shape = self.tape.value(x).dim();
        let mask = Array2::from_shape_fn(shape, |_| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        self.tape.dropout(x, mask)
    }

    fn embed(&mut self, table: &str, ids: &[usize], rng: &mut Option<&mut ChaCha8Rng>) -> NodeId {
        let d = self.model.config.d_model;
        let t = self.p(table);
        let e = self.tape.gather_rows(t, ids);
        let scaled = self.tape.scale(e, (d as f64).sqrt());
        let pos = self.model.pos.slice(ndarray::s![..ids.len(), ..]).to_owned();
        let with_pos = self.tape.add_const(scaled, &pos);
        self.dropout(with_pos, rng)
    }

    fn attention(
        &mut self,
        prefix: &str,
        q_in: NodeId,
        kv_in: NodeId,
        mask: Option<&Array2<f64>>,
        record: bool,
    ) -> NodeId {
        let dh = self.model.config.head_dim();
        let mut contexts = Vec::with_capacity(self.model.config.heads);
        for h in 0..self.model.config.heads {
            let wq = self.p(&format!("{prefix}.wq{h}"));
            let wk = self.p(&format!("{prefix}.wk{h}"));
            let wv = self.p(&format!("{prefix}.wv{h}"));
            let q = self.tape.matmul(q_in, wq);
            let k = self.tape.matmul(kv_in, wk);
            let v = self.tape.matmul(kv_in, wv);
            let raw = self.tape.matmul_nt(q, k);
            let scores = self.tape.scale(raw, 1.0 / (dh as f64).sqrt());
            let probs = self.tape.row_softmax(scores, mask);
            if record {
                self.cross_maps.push(self.tape.value(probs).clone());
            }
            contexts.push(self.tape.matmul(probs, v));
        }
        let cat = self.tape.concat_cols(&contexts);
        let wo = self.p(&format!("{prefix}.wo"));
        let bo = self.p(&format!("{prefix}.bo"));
        let projected = self.tape.matmul(cat, wo);
        self.tape.add_row(projected, bo)
    }

    /// Post-norm residual: `LayerNorm(x + Dropout(sub))` with affine.
    fn residual(
        &mut self,
        ln: &str,
        x: NodeId,
        sub: NodeId,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> NodeId {
        let dropped = self.dropout(sub, rng);
        let sum = self.tape.add(x, dropped);
        let normed = self.tape.layer_norm(sum, 1e-6);
        let g = self.p(&format!("{ln}.g"));
        let b = self.p(&format!("{ln}.b"));
        let scaled = self.tape.mul_row(normed, g);
        self.tape.add_row(scaled, b)
    }

    fn ffn(&mut self, prefix: &str, x: NodeId) -> NodeId {
        let w1 = self.p(&format!("{prefix}.w1"));
        let b1 = self.p(&format!("{prefix}.b1"));
        let w2 = self.p(&format!("{prefix}.w2"));
        let b2 = self.p(&format!("{prefix}.b2"));
        let h = self.tape.matmul(x, w1);
        let h = self.tape.add_row(h, b1);
        let h = self.tape.relu(h);
        let out = self.tape.matmul(h, w2);
        self.tape.add_row(out, b2)
    }

    pub fn encode(&mut self, src_ids: &[usize], rng: &mut Option<&mut ChaCha8Rng>) -> NodeId {
        assert!(!src_ids.is_empty(), "encoder input must be non-empty");
        let mut x = self.embed("src_embed", src_ids, rng);
        for l in 0..self.model.config.layers {
            let a = self.attention(&format!("enc{l}.attn"), x, x, None, false);
            x = self.residual(&format!("enc{l}.ln1"), x, a, rng);
            let f = self.ffn(&format!("enc{l}.ff"), x);
            x = self.residual(&format!("enc{l}.ln2"), x, f, rng);
        }
        x
    }

    pub fn decode_states(
        &mut self,
        dec_in: &[usize],
        enc: NodeId,
        rng: &mut Option<&mut ChaCha8Rng>,
        record_cross: bool,
    ) -> NodeId {
        let t = dec_in.len();
        let causal = Array2::from_shape_fn((t, t), |(i, j)| if j <= i { 1.0 } else { 0.0 });
        let mut x = self.embed("tgt_embed", dec_in, rng);
        for l in 0..self.model.config.layers {
            let a = self.attention(&format!("dec{l}.self"), x, x, Some(&causal), false);
            x = self.residual(&format!("dec{l}.ln1"), x, a, rng);
            let c = self.attention(&format!("dec{l}.cross"), x, enc, None, record_cross);
            x = self.residual(&format!("dec{l}.ln2"), x, c, rng);
            let f = self.ffn(&format!("dec{l}.ff"), x);
            x = self.residual(&format!("dec{l}.ln3"), x, f, rng);
        }
        x
    }

    pub fn logits(&mut self, states: NodeId) -> NodeId {
        let w = self.p("out.w");
        let b = self.p("out.b");
        let raw = self.tape.matmul(states, w);
        self.tape.add_row(raw, b)
    }
}
