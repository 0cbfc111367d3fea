//! Confidence-gated iterative-distillation transceiver.
//!
//! Both sides refine their embedding with a shared residual transformer
//! stack, `eᵢ = f(eᵢ₋₁) + eᵢ₋₁`, for at most `N` passes. After every pass a
//! confidence head scores the embedding; inference stops at the first pass
//! whose confidence reaches `τ`. Training uses soft halting: pass `i`
//! receives weight `wᵢ = cᵢ ∏_{j<i}(1 − cⱼ)`, the last pass takes the
//! remaining mass, the output is the `w`-weighted mixture and the expected
//! pass count is charged at `ponder_cost`.
//!
//! All refinement happens locally: nothing in this module touches a channel.

mod checkpoint;

use std::rc::Rc;

use ndarray::{s, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_codec, save_codec, Checkpoint};

use crate::autograd::{sigmoid_scalar, Mat, ParamId, ParamStore, Segments, Tape, Var};
use crate::channel::{apply_draws, Channel, ChannelDraw, SymbolBlock};
use crate::corpus::{TokenSequence, BOS, EOS};
use crate::nn::{packed_positions, sinusoidal_positions, DecoderBlock, EncoderBlock, LayerNorm, Linear};
use crate::rng::{self, Rng};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecConfig {
    /// Embedding dimension `D`.
    pub embed_dim: usize,
    /// Transformer layers per refinement pass (and in the token decoder).
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    /// Maximum distillation passes `N`.
    pub max_distill: usize,
    /// Halting threshold `τ`.
    pub confidence_threshold: f64,
    /// Channel symbols per token position `k`.
    pub symbols_per_token: usize,
    /// Weight `λp` of the expected pass count in the training loss.
    pub ponder_cost: f64,
    pub max_len: usize,
    /// Reuse one refinement stack for every pass; otherwise each pass owns its weights.
    pub share_distill_weights: bool,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            embed_dim: 64,
            n_layers: 2,
            n_heads: 2,
            ffn_dim: 128,
            max_distill: 6,
            confidence_threshold: 0.9,
            symbols_per_token: 4,
            ponder_cost: 0.01,
            max_len: 24,
            share_distill_weights: true,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.max_distill < 1 {
            errs.push("codec.max_distill must be >= 1".to_string());
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            errs.push("codec.confidence_threshold must lie in [0, 1]".to_string());
        }
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("symbols_per_token", self.symbols_per_token),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("ffn_dim", self.ffn_dim),
        ] {
            if v < 1 {
                errs.push(format!("codec.{name} must be >= 1"));
            }
        }
        if self.max_len < 3 {
            errs.push("codec.max_len must be >= 3".to_string());
        }
        if self.n_heads >= 1 && !self.embed_dim.is_multiple_of(self.n_heads) {
            errs.push("codec.embed_dim must be divisible by codec.n_heads".to_string());
        }
        if !(self.ponder_cost >= 0.0) {
            errs.push("codec.ponder_cost must be >= 0".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Soft halting mixture (differentiable).
    Train,
    /// Hard threshold halting.
    Infer,
}

/// Per-side distillation record for one message.
#[derive(Clone, Debug, PartialEq)]
pub struct SideTrace {
    /// Passes used: first pass with confidence ≥ τ, or `N`.
    pub steps: usize,
    /// Confidence after each computed pass.
    pub confidences: Vec<f64>,
}

impl SideTrace {
    fn from_confidences(confidences: Vec<f64>, tau: f64, n: usize) -> Self {
        let steps = confidences
            .iter()
            .position(|&c| c >= tau)
            .map_or(n, |p| p + 1)
            .min(n);
        SideTrace { steps, confidences }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistillationTrace {
    pub encoder_steps: usize,
    pub decoder_steps: usize,
    pub encoder_confidences: Vec<f64>,
    pub decoder_confidences: Vec<f64>,
}

impl DistillationTrace {
    pub fn new(enc: &SideTrace, dec: &SideTrace) -> Self {
        DistillationTrace {
            encoder_steps: enc.steps,
            decoder_steps: dec.steps,
            encoder_confidences: enc.confidences.clone(),
            decoder_confidences: dec.confidences.clone(),
        }
    }
}

/// Multiply-accumulate counts for one message of length `L`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OpsEstimate {
    /// One confidence evaluation.
    pub confidence_ops: u64,
    /// One refinement pass of the base encoder.
    pub encoder_ops_per_pass: u64,
    /// The `L²·D` attention part of `encoder_ops_per_pass`.
    pub attention_quadratic_ops: u64,
    /// The position-wise (`L·D²` and `L·D·F`) part of `encoder_ops_per_pass`.
    pub linear_ops: u64,
}

pub fn count_ops_estimate(cfg: &CodecConfig, len: usize) -> OpsEstimate {
    let (l, d, f, layers) = (
        len as u64,
        cfg.embed_dim as u64,
        cfg.ffn_dim as u64,
        cfg.n_layers as u64,
    );
    // level projection, squaring and energy projection per position
    let confidence_ops = 3 * l * d;
    let attention_quadratic_ops = layers * 2 * l * l * d;
    let linear_ops = layers * (4 * l * d * d + 2 * l * d * f);
    OpsEstimate {
        confidence_ops,
        encoder_ops_per_pass: attention_quadratic_ops + linear_ops,
        attention_quadratic_ops,
        linear_ops,
    }
}

/// Scores an embedding: `σ(mean_t(e_t·w_level + (e_t⊙e_t)·w_energy) + b)` over
/// the valid positions of each message. Cost is linear in `L·D`.
#[derive(Clone, Debug)]
pub struct ConfidenceHead {
    pub w_level: ParamId,
    pub w_energy: ParamId,
    pub bias: ParamId,
}

impl ConfidenceHead {
    fn new(store: &mut ParamStore, name: &str, d: usize, rng: &mut Rng) -> Self {
        ConfidenceHead {
            w_level: store.add_normal(&format!("{name}.w_level"), d, 1, 0.02, rng),
            w_energy: store.add_normal(&format!("{name}.w_energy"), d, 1, 0.02, rng),
            bias: store.add_constant(&format!("{name}.bias"), 1, 1, 0.0),
        }
    }

    /// `B × 1` confidences for the packed embedding `e`.
    pub fn forward(&self, t: &mut Tape, e: Var, segs: &Rc<Segments>) -> Var {
        let wl = t.param(self.w_level);
        let we = t.param(self.w_energy);
        let b = t.param(self.bias);
        let level = t.matmul(e, wl);
        let sq = t.mul(e, e);
        let energy = t.matmul(sq, we);
        let per_pos = t.add(level, energy);
        let pooled = t.segment_mean(per_pos, segs);
        let logit = t.add_row(pooled, b);
        t.sigmoid(logit)
    }
}

/// Confidence of one `L × D` embedding whose rows at and beyond `valid_len`
/// are padding.
pub fn confidence(e: &Mat, valid_len: usize, head: &ConfidenceHead, store: &ParamStore) -> Result<f64> {
    if valid_len == 0 || valid_len > e.nrows() {
        return Err(Error::InvalidArgument(format!(
            "valid length {valid_len} for a {}-row embedding",
            e.nrows()
        )));
    }
    if e.iter().take(valid_len * e.ncols()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite embedding".into()));
    }
    let wl = store.get(head.w_level).column(0);
    let we = store.get(head.w_energy).column(0);
    let mut acc = 0.0;
    for row in e.slice(s![..valid_len, ..]).outer_iter() {
        acc += row.dot(&wl) + row.mapv(|v| v * v).dot(&we);
    }
    Ok(sigmoid_scalar(acc / valid_len as f64 + store.get(head.bias)[[0, 0]]))
}

/// Result of one side's distillation loop over a packed batch.
pub struct Distilled {
    /// Halting-weighted mixture (train) or the selected pass (infer), after `project`.
    pub output: Var,
    pub traces: Vec<SideTrace>,
    /// Per-message halting weights over passes (train) or a one-hot vector (infer).
    pub halting_weights: Vec<Vec<f64>>,
    /// `B × 1` expected pass count `Σ i·wᵢ` (train mode only).
    pub expected_steps: Option<Var>,
}

/// Everything the receiver needs after its distillation loop.
pub struct ReceiverMemory {
    pub memory: Var,
    pub segs: Rc<Segments>,
    pub distilled: Distilled,
}

/// Teacher-forced decoder outputs.
pub struct TeacherForced {
    /// `Σ(L_b − 1) × |V|` next-token logits.
    pub logits: Var,
    /// Decoder hidden state feeding the output head (the recurrent summary).
    pub hidden: Var,
    pub targets: Vec<usize>,
    pub segs: Rc<Segments>,
}

/// Encoder output on a tape.
pub struct EncodedBatch {
    pub symbols: Var,
    pub segs: Rc<Segments>,
    pub distilled: Distilled,
}

/// Learnable state of the transceiver.
#[derive(Clone, Debug)]
pub struct CodecState {
    cfg: CodecConfig,
    vocab_size: usize,
    pub params: ParamStore,
    enc_embed: ParamId,
    enc_blocks: Vec<Vec<EncoderBlock>>,
    enc_conf: ConfidenceHead,
    enc_out_ln: LayerNorm,
    to_symbols: Linear,
    from_symbols: Linear,
    rx_blocks: Vec<Vec<EncoderBlock>>,
    dec_conf: ConfidenceHead,
    mem_ln: LayerNorm,
    dec_embed: ParamId,
    dec_blocks: Vec<DecoderBlock>,
    dec_out_ln: LayerNorm,
    out_head: Linear,
    positions: Mat,
}

/// Sampling rule for autoregressive decoding.
pub enum Decoding<'r> {
    Greedy,
    /// Softmax sampling at `temperature`; `0` falls back to greedy.
    Sample { temperature: f64, rng: &'r mut Rng },
}

/// One autoregressive decode of a batch.
pub struct Generated {
    /// Generated tokens per message (BOS excluded, EOS included when emitted).
    pub tokens: Vec<Vec<u32>>,
    /// Log-probability of each generated token under the sampling distribution.
    pub logprobs: Vec<Vec<f64>>,
    /// Next-token logits for every generated step.
    pub logits: Vec<Vec<Vec<f64>>>,
    /// Decoder hidden state at every generated step.
    pub hidden: Vec<Vec<Vec<f64>>>,
}

impl CodecState {
    pub fn new(cfg: &CodecConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if vocab_size < 5 {
            return Err(Error::InvalidArgument("vocabulary must hold at least one non-special token".into()));
        }
        let mut rng = rng::substream(seed, "init");
        let mut p = ParamStore::new();
        let (d, h, f) = (cfg.embed_dim, cfg.n_heads, cfg.ffn_dim);
        let groups = if cfg.share_distill_weights { 1 } else { cfg.max_distill };
        let stack = |p: &mut ParamStore, prefix: &str, rng: &mut Rng| -> Vec<Vec<EncoderBlock>> {
            (0..groups)
                .map(|g| {
                    (0..cfg.n_layers)
                        .map(|l| EncoderBlock::new(p, &format!("{prefix}.pass{g}.layer{l}"), d, h, f, rng))
                        .collect()
                })
                .collect()
        };
        let enc_embed = p.add_normal("enc.embed", vocab_size, d, 1.0, &mut rng);
        let enc_blocks = stack(&mut p, "enc.refine", &mut rng);
        let enc_conf = ConfidenceHead::new(&mut p, "enc.confidence", d, &mut rng);
        let enc_out_ln = LayerNorm::new(&mut p, "enc.out_ln", d);
        let to_symbols = Linear::new(&mut p, "enc.to_symbols", d, cfg.symbols_per_token, true, &mut rng);
        let from_symbols = Linear::new(&mut p, "dec.from_symbols", cfg.symbols_per_token, d, true, &mut rng);
        let rx_blocks = stack(&mut p, "dec.refine", &mut rng);
        let dec_conf = ConfidenceHead::new(&mut p, "dec.confidence", d, &mut rng);
        let mem_ln = LayerNorm::new(&mut p, "dec.memory_ln", d);
        let dec_embed = p.add_normal("dec.embed", vocab_size, d, 1.0, &mut rng);
        let dec_blocks = (0..cfg.n_layers)
            .map(|l| DecoderBlock::new(&mut p, &format!("dec.block{l}"), d, h, f, &mut rng))
            .collect();
        let dec_out_ln = LayerNorm::new(&mut p, "dec.out_ln", d);
        let out_head = Linear::new(&mut p, "dec.out_head", d, vocab_size, true, &mut rng);
        Ok(CodecState {
            cfg: cfg.clone(),
            vocab_size,
            params: p,
            enc_embed,
            enc_blocks,
            enc_conf,
            enc_out_ln,
            to_symbols,
            from_symbols,
            rx_blocks,
            dec_conf,
            mem_ln,
            dec_embed,
            dec_blocks,
            dec_out_ln,
            out_head,
            positions: sinusoidal_positions(cfg.max_len, d),
        })
    }

    pub fn config(&self) -> &CodecConfig {
        &self.cfg
    }

    /// Adjusts inference-time knobs (threshold, ponder weight) that do not
    /// change the parameter layout.
    pub fn set_threshold(&mut self, tau: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidArgument(format!("threshold {tau} outside [0,1]")));
        }
        self.cfg.confidence_threshold = tau;
        Ok(())
    }

    /// Changes the pass budget `N` when weights are shared across passes.
    pub fn set_max_distill(&mut self, n: usize) -> Result<()> {
        if n < 1 || (!self.cfg.share_distill_weights && n != self.cfg.max_distill) {
            return Err(Error::InvalidArgument(format!("cannot set max_distill to {n}")));
        }
        self.cfg.max_distill = n;
        Ok(())
    }

    pub fn set_ponder_cost(&mut self, lambda: f64) {
        self.cfg.ponder_cost = lambda;
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn encoder_confidence_head(&self) -> &ConfidenceHead {
        &self.enc_conf
    }

    pub fn decoder_confidence_head(&self) -> &ConfidenceHead {
        &self.dec_conf
    }

    /// Parameters of the transmitter side.
    pub fn encoder_param_ids(&self) -> Vec<ParamId> {
        self.params.ids_with_prefix("enc.").collect()
    }

    fn check_batch(&self, batch: &[TokenSequence]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        for m in batch {
            if m.len() > self.cfg.max_len {
                return Err(Error::MessageTooLong {
                    len: m.len(),
                    max_len: self.cfg.max_len,
                });
            }
            if m.len() < 2 {
                return Err(Error::InvalidArgument("messages need at least BOS and EOS".into()));
            }
            if let Some(&bad) = m.ids().iter().find(|&&i| i as usize >= self.vocab_size) {
                return Err(Error::InvalidArgument(format!("token id {bad} outside vocabulary")));
            }
        }
        Ok(())
    }

    fn refine(&self, t: &mut Tape, e: Var, segs: &Rc<Segments>, stacks: &[Vec<EncoderBlock>], pass: usize) -> Var {
        let stack = &stacks[if stacks.len() == 1 { 0 } else { pass }];
        stack.iter().fold(e, |x, block| block.forward(t, x, segs))
    }

    /// Runs up to `N` refinement passes from `e0` under `head`.
    #[allow(clippy::too_many_arguments)]
    fn distill(
        &self,
        t: &mut Tape,
        e0: Var,
        segs: &Rc<Segments>,
        stacks: &[Vec<EncoderBlock>],
        head: &ConfidenceHead,
        mode: Mode,
        project: &dyn Fn(&mut Tape, Var) -> Var,
    ) -> Distilled {
        let n = self.cfg.max_distill;
        let tau = self.cfg.confidence_threshold;
        let b = segs.count();
        let mut confs: Vec<Vec<f64>> = vec![Vec::new(); b];
        let mut e = e0;
        match mode {
            Mode::Infer => {
                let mut halted_at = vec![0usize; b];
                let mut selected: Option<Var> = None;
                for pass in 0..n {
                    e = self.refine(t, e, segs, stacks, pass);
                    let c = head.forward(t, e, segs);
                    let cv = t.value(c).column(0).to_vec();
                    let mut newly = vec![false; b];
                    for m in 0..b {
                        if halted_at[m] == 0 {
                            confs[m].push(cv[m]);
                            if cv[m] >= tau || pass + 1 == n {
                                halted_at[m] = pass + 1;
                                newly[m] = true;
                            }
                        }
                    }
                    selected = Some(match selected {
                        None => e,
                        Some(prev) => t.segment_where(e, prev, segs, &newly),
                    });
                    if halted_at.iter().all(|&h| h > 0) {
                        break;
                    }
                }
                let output = project(t, selected.expect("at least one pass"));
                let halting_weights = halted_at
                    .iter()
                    .map(|&h| (1..=n).map(|i| if i == h { 1.0 } else { 0.0 }).collect())
                    .collect();
                let traces = confs
                    .into_iter()
                    .map(|c| SideTrace::from_confidences(c, tau, n))
                    .collect();
                Distilled {
                    output,
                    traces,
                    halting_weights,
                    expected_steps: None,
                }
            }
            Mode::Train => {
                let mut remaining: Option<Var> = None; // ∏_{j<i}(1 − c_j); None means 1
                let mut weight_sum: Option<Var> = None; // Σ_{j<i} w_j
                let mut mixture: Option<Var> = None;
                let mut expected: Option<Var> = None;
                let mut weights: Vec<Vec<f64>> = vec![Vec::with_capacity(n); b];
                for pass in 0..n {
                    e = self.refine(t, e, segs, stacks, pass);
                    let c = head.forward(t, e, segs);
                    for (m, &cv) in t.value(c).column(0).iter().enumerate() {
                        confs[m].push(cv);
                    }
                    let w = if pass + 1 < n {
                        let w = match remaining {
                            None => c,
                            Some(r) => t.mul(c, r),
                        };
                        let keep = t.one_minus(c);
                        remaining = Some(match remaining {
                            None => keep,
                            Some(r) => t.mul(r, keep),
                        });
                        w
                    } else {
                        match weight_sum {
                            None => {
                                let ones = Mat::ones((b, 1));
                                t.constant(ones)
                            }
                            Some(s) => t.one_minus(s),
                        }
                    };
                    if pass + 1 < n {
                        weight_sum = Some(match weight_sum {
                            None => w,
                            Some(s) => t.add(s, w),
                        });
                    }
                    for (m, &wv) in t.value(w).column(0).iter().enumerate() {
                        weights[m].push(wv);
                    }
                    let projected = project(t, e);
                    let wexp = t.segment_expand(w, segs);
                    let term = t.mul_col(projected, wexp);
                    mixture = Some(match mixture {
                        None => term,
                        Some(acc) => t.add(acc, term),
                    });
                    let iw = t.scale(w, (pass + 1) as f64);
                    expected = Some(match expected {
                        None => iw,
                        Some(acc) => t.add(acc, iw),
                    });
                }
                let traces = confs
                    .into_iter()
                    .map(|c| SideTrace::from_confidences(c, tau, n))
                    .collect();
                Distilled {
                    output: mixture.expect("at least one pass"),
                    traces,
                    halting_weights: weights,
                    expected_steps: expected,
                }
            }
        }
    }

    /// Embeds, refines and projects a batch to unit-power symbol blocks.
    pub fn encode(&self, t: &mut Tape, batch: &[TokenSequence], mode: Mode) -> Result<EncodedBatch> {
        self.check_batch(batch)?;
        let lens: Vec<usize> = batch.iter().map(TokenSequence::len).collect();
        let segs = Rc::new(Segments::from_lengths(&lens));
        let ids: Vec<usize> = batch.iter().flat_map(|m| m.ids().iter().map(|&i| i as usize)).collect();
        let table = t.param(self.enc_embed);
        let emb = t.gather(table, &ids);
        let pos = t.constant(packed_positions(&self.positions, &segs));
        let e0 = t.add(emb, pos);
        let project = |t: &mut Tape, e: Var| -> Var {
            let h = self.enc_out_ln.forward(t, e);
            let x = self.to_symbols.forward(t, h);
            t.segment_normalize(x, &segs)
        };
        let distilled = self.distill(t, e0, &segs, &self.enc_blocks, &self.enc_conf, mode, &project);
        let symbols = match mode {
            Mode::Train => t.segment_normalize(distilled.output, &segs),
            Mode::Infer => distilled.output,
        };
        Ok(EncodedBatch {
            symbols,
            segs,
            distilled,
        })
    }

    /// Receiver-side distillation of packed received symbols.
    pub fn receive(&self, t: &mut Tape, y: Var, segs: &Rc<Segments>, mode: Mode) -> Result<ReceiverMemory> {
        let (rows, cols) = t.shape(y);
        if cols != self.cfg.symbols_per_token || rows != segs.total() {
            return Err(Error::Shape(format!(
                "received {rows}x{cols} symbols, expected {}x{}",
                segs.total(),
                self.cfg.symbols_per_token
            )));
        }
        if let Some(&l) = segs.lens().iter().find(|&&l| l > self.cfg.max_len || l < 2) {
            return Err(Error::Shape(format!("block of {l} positions (max_len {})", self.cfg.max_len)));
        }
        let d0 = self.from_symbols.forward(t, y);
        let pos = t.constant(packed_positions(&self.positions, segs));
        let d0 = t.add(d0, pos);
        let identity = |_: &mut Tape, e: Var| e;
        let distilled = self.distill(t, d0, segs, &self.rx_blocks, &self.dec_conf, mode, &identity);
        let memory = self.mem_ln.forward(t, distilled.output);
        Ok(ReceiverMemory {
            memory,
            segs: segs.clone(),
            distilled,
        })
    }

    fn decoder_stack(&self, t: &mut Tape, inputs: &[usize], segs: &Rc<Segments>, mem: &ReceiverMemory) -> Var {
        let table = t.param(self.dec_embed);
        let emb = t.gather(table, inputs);
        let pos = t.constant(packed_positions(&self.positions, segs));
        let mut x = t.add(emb, pos);
        for block in &self.dec_blocks {
            x = block.forward(t, x, segs, mem.memory, &mem.segs);
        }
        self.dec_out_ln.forward(t, x)
    }

    /// Next-token logits for `batch` given its receiver memory (inputs are
    /// tokens `0..L−1`, targets `1..L`).
    pub fn teacher_forced(&self, t: &mut Tape, mem: &ReceiverMemory, batch: &[TokenSequence]) -> TeacherForced {
        let lens: Vec<usize> = batch.iter().map(|m| m.len() - 1).collect();
        let segs = Rc::new(Segments::from_lengths(&lens));
        let mut inputs = Vec::with_capacity(segs.total());
        let mut targets = Vec::with_capacity(segs.total());
        for m in batch {
            let ids = m.ids();
            inputs.extend(ids[..ids.len() - 1].iter().map(|&i| i as usize));
            targets.extend(ids[1..].iter().map(|&i| i as usize));
        }
        let hidden = self.decoder_stack(t, &inputs, &segs, mem);
        let logits = self.out_head.forward(t, hidden);
        TeacherForced {
            logits,
            hidden,
            targets,
            segs,
        }
    }

    /// Autoregressive decoding of at most `max_len − 1` tokens per message.
    pub fn generate(&self, t: &mut Tape, mem: &ReceiverMemory, mut rule: Decoding<'_>) -> Generated {
        let b = mem.segs.count();
        let max_new = self.cfg.max_len - 1;
        let mut prefixes: Vec<Vec<u32>> = vec![vec![BOS]; b];
        let mut done = vec![false; b];
        let mut out = Generated {
            tokens: vec![Vec::new(); b],
            logprobs: vec![Vec::new(); b],
            logits: vec![Vec::new(); b],
            hidden: vec![Vec::new(); b],
        };
        for _ in 0..max_new {
            let active: Vec<usize> = (0..b).filter(|&m| !done[m]).collect();
            if active.is_empty() {
                break;
            }
            let (sub_mem, inputs, segs) = self.active_view(t, mem, &active, &prefixes);
            let hidden = self.decoder_stack(t, &inputs, &segs, &sub_mem);
            let logits = self.out_head.forward(t, hidden);
            for (slot, &m) in active.iter().enumerate() {
                let last = segs.range(slot).end - 1;
                let row = t.value(logits).row(last).to_vec();
                let (tok, lp) = choose(&row, &mut rule);
                out.tokens[m].push(tok);
                out.logprobs[m].push(lp);
                out.hidden[m].push(t.value(hidden).row(last).to_vec());
                out.logits[m].push(row);
                prefixes[m].push(tok);
                if tok == EOS {
                    done[m] = true;
                }
            }
        }
        out
    }

    fn active_view(
        &self,
        t: &mut Tape,
        mem: &ReceiverMemory,
        active: &[usize],
        prefixes: &[Vec<u32>],
    ) -> (ReceiverMemory, Vec<usize>, Rc<Segments>) {
        let sub_mem = if active.len() == mem.segs.count() {
            ReceiverMemory {
                memory: mem.memory,
                segs: mem.segs.clone(),
                distilled: Distilled {
                    output: mem.distilled.output,
                    traces: Vec::new(),
                    halting_weights: Vec::new(),
                    expected_steps: None,
                },
            }
        } else {
            let rows: Vec<usize> = active.iter().flat_map(|&m| mem.segs.range(m)).collect();
            let lens: Vec<usize> = active.iter().map(|&m| mem.segs.len_of(m)).collect();
            let memory = t.gather(mem.memory, &rows);
            ReceiverMemory {
                memory,
                segs: Rc::new(Segments::from_lengths(&lens)),
                distilled: Distilled {
                    output: memory,
                    traces: Vec::new(),
                    halting_weights: Vec::new(),
                    expected_steps: None,
                },
            }
        };
        let inputs: Vec<usize> = active
            .iter()
            .flat_map(|&m| prefixes[m].iter().map(|&i| i as usize))
            .collect();
        let lens: Vec<usize> = active.iter().map(|&m| prefixes[m].len()).collect();
        (sub_mem, inputs, Rc::new(Segments::from_lengths(&lens)))
    }

    /// Encode → channel draw per message → receive → greedy decode, all in inference mode.
    pub fn transmit_batch(&self, batch: &[TokenSequence], draws: &[ChannelDraw]) -> Result<Vec<Transmission>> {
        if draws.len() != batch.len() {
            return Err(Error::InvalidArgument("one channel draw per message required".into()));
        }
        let mut t = Tape::new(&self.params);
        let enc = self.encode(&mut t, batch, Mode::Infer)?;
        for (m, d) in draws.iter().enumerate() {
            if d.noise.dim() != (batch[m].len(), self.cfg.symbols_per_token) {
                return Err(Error::Shape("channel draw does not match block shape".into()));
            }
        }
        let y = apply_draws(&mut t, enc.symbols, &enc.segs, draws);
        let mem = self.receive(&mut t, y, &enc.segs, Mode::Infer)?;
        let gen = self.generate(&mut t, &mem, Decoding::Greedy);
        Ok(gen
            .tokens
            .into_iter()
            .enumerate()
            .map(|(m, toks)| Transmission {
                tokens: toks,
                trace: DistillationTrace::new(&enc.distilled.traces[m], &mem.distilled.traces[m]),
            })
            .collect())
    }
}

/// Greedy-decoded output of one message.
#[derive(Clone, Debug, PartialEq)]
pub struct Transmission {
    /// Generated tokens (BOS excluded).
    pub tokens: Vec<u32>,
    pub trace: DistillationTrace,
}

impl Transmission {
    pub fn content(&self) -> &[u32] {
        crate::corpus::content_ids(&self.tokens)
    }
}

fn log_softmax_row(row: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = row.iter().map(|v| v / temperature).collect();
    let mx = scaled.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = mx + scaled.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
    scaled.iter().map(|v| v - lse).collect()
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

fn choose(row: &[f64], rule: &mut Decoding<'_>) -> (u32, f64) {
    match rule {
        Decoding::Greedy => {
            let i = argmax(row);
            (i as u32, log_softmax_row(row, 1.0)[i])
        }
        Decoding::Sample { temperature, rng } => {
            if *temperature <= 0.0 {
                let i = argmax(row);
                return (i as u32, 0.0);
            }
            let lp = log_softmax_row(row, *temperature);
            let u: f64 = rng.random_range(0.0..1.0);
            let mut acc = 0.0;
            let mut pick = argmax(&lp);
            for (i, &l) in lp.iter().enumerate() {
                acc += l.exp();
                if u < acc {
                    pick = i;
                    break;
                }
            }
            (pick as u32, lp[pick])
        }
    }
}

/// Single-message encoder output.
#[derive(Clone, Debug)]
pub struct EncodeResult {
    pub symbols: SymbolBlock,
    pub trace: SideTrace,
    pub halting_weights: Vec<f64>,
}

/// Single-message decoder output.
#[derive(Clone, Debug)]
pub struct DecodeResult {
    /// One row of next-token logits per generated token.
    pub logits: Mat,
    /// Generated tokens (BOS excluded).
    pub tokens: Vec<u32>,
    pub trace: SideTrace,
}

pub fn semantic_encode(msg: &TokenSequence, state: &CodecState, mode: Mode) -> Result<EncodeResult> {
    let mut t = Tape::new(&state.params);
    let enc = state.encode(&mut t, std::slice::from_ref(msg), mode)?;
    let symbols = SymbolBlock::new(t.value(enc.symbols).clone())?;
    let mut d = enc.distilled;
    Ok(EncodeResult {
        symbols,
        trace: d.traces.remove(0),
        halting_weights: d.halting_weights.remove(0),
    })
}

pub fn semantic_decode(y: &SymbolBlock, state: &CodecState, mode: Mode) -> Result<DecodeResult> {
    let mut t = Tape::new(&state.params);
    let segs = Rc::new(Segments::from_lengths(&[y.shape().0]));
    let yv = t.constant(y.symbols().clone());
    let mut mem = state.receive(&mut t, yv, &segs, mode)?;
    let gen = state.generate(&mut t, &mem, Decoding::Greedy);
    let rows = &gen.logits[0];
    let logits = if rows.is_empty() {
        Mat::zeros((0, state.vocab_size))
    } else {
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Mat::from_shape_vec((rows.len(), state.vocab_size), flat).expect("logit rows")
    };
    Ok(DecodeResult {
        logits,
        tokens: gen.tokens.into_iter().next().unwrap_or_default(),
        trace: mem.distilled.traces.remove(0),
    })
}

/// Row-wise argmax of a matrix.
pub fn argmax_rows(m: &Mat) -> Vec<usize> {
    m.axis_iter(Axis(0)).map(|r| argmax(&r.to_vec())).collect()
}

/// Encode, one channel use, decode (inference mode).
pub fn transmit_message(
    msg: &TokenSequence,
    state: &CodecState,
    channel: &dyn Channel,
    rng: &mut Rng,
) -> Result<Transmission> {
    let enc = semantic_encode(msg, state, Mode::Infer)?;
    let y = channel.transmit(&enc.symbols, rng)?;
    let dec = semantic_decode(&y, state, Mode::Infer)?;
    Ok(Transmission {
        tokens: dec.tokens,
        trace: DistillationTrace::new(&enc.trace, &dec.trace),
    })
}
