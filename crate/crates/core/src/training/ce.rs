//! Supervised regimes: token cross-entropy and differentiable-similarity
//! training, both end-to-end through a sampled channel.

use std::rc::Rc;
use std::time::Instant;

use rand::Rng as _;

use super::{check_finite, elapsed, LogRow, TrainConfig, TrainLog};
use crate::autograd::{Adam, Grads, Mat, Segments, Tape};
use crate::channel::{apply_draws, ChannelDraw, ChannelSpec};
use crate::codec::{CodecState, Mode};
use crate::corpus::{index_batches, ImageMessage, TokenSequence};
use crate::metrics::{MaskedCe, SimilarityMetric};
use crate::rng::{self, Rng};
use crate::training::image::{images_to_mat, ImageCodec};
use crate::{Error, Result};

/// One channel realisation per message; with `snr_range_db` set, each
/// message gets its own SNR drawn uniformly from the range.
pub fn sample_draws(
    channel: &ChannelSpec,
    snr_range_db: Option<[f64; 2]>,
    shapes: &[(usize, usize)],
    rng: &mut Rng,
) -> Vec<ChannelDraw> {
    shapes
        .iter()
        .map(|&(rows, cols)| {
            let spec = match snr_range_db {
                Some([lo, hi]) if hi > lo => channel.with_snr(rng.random_range(lo..=hi)),
                Some([lo, _]) => channel.with_snr(lo),
                None => channel.clone(),
            };
            spec.draw(rows, cols, rng)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SupervisedStats {
    pub loss: f64,
    /// The similarity distance without the ponder term.
    pub distance: f64,
    pub enc_steps_mean: f64,
    pub dec_steps_mean: f64,
}

/// Loss and gradients of one batch: `distance + λp · mean(E[enc passes] + E[dec passes])`,
/// with `λp` passed explicitly so schedules can override the configured value.
pub fn supervised_loss(
    state: &CodecState,
    batch: &[TokenSequence],
    draws: &[ChannelDraw],
    metric: &dyn SimilarityMetric,
    lambda: f64,
) -> Result<(Grads, SupervisedStats)> {
    let mut t = Tape::new(&state.params);
    let enc = state.encode(&mut t, batch, Mode::Train)?;
    let y = apply_draws(&mut t, enc.symbols, &enc.segs, draws);
    let mem = state.receive(&mut t, y, &enc.segs, Mode::Train)?;
    let tf = state.teacher_forced(&mut t, &mem, batch);
    let distance = metric.token_distance(&mut t, tf.logits, &tf.targets)?;
    let mut loss = distance;
    if lambda > 0.0 {
        let e = enc.distilled.expected_steps.expect("train mode");
        let d = mem.distilled.expected_steps.expect("train mode");
        let both = t.add(e, d);
        let mean = t.mean_all(both);
        let pc = t.scale(mean, lambda);
        loss = t.add(loss, pc);
    }
    let grads = t.backward(loss);
    let n = batch.len() as f64;
    let stats = SupervisedStats {
        loss: t.scalar(loss),
        distance: t.scalar(distance),
        enc_steps_mean: enc.distilled.traces.iter().map(|tr| tr.steps as f64).sum::<f64>() / n,
        dec_steps_mean: mem.distilled.traces.iter().map(|tr| tr.steps as f64).sum::<f64>() / n,
    };
    Ok((grads, stats))
}

/// Cycles through shuffled epochs of mini-batch indices.
pub(crate) struct BatchCycle {
    n: usize,
    batch_size: usize,
    rng: Rng,
    pending: Vec<Vec<usize>>,
}

impl BatchCycle {
    pub(crate) fn new(n: usize, batch_size: usize, rng: Rng) -> Self {
        BatchCycle {
            n,
            batch_size,
            rng,
            pending: Vec::new(),
        }
    }

    pub(crate) fn next_batch(&mut self) -> Vec<usize> {
        if self.pending.is_empty() {
            self.pending = index_batches(self.n, self.batch_size, Some(&mut self.rng));
            self.pending.reverse();
        }
        self.pending.pop().expect("at least one batch per epoch")
    }
}

fn supervised_loop(
    state: &mut CodecState,
    channel: &ChannelSpec,
    messages: &[TokenSequence],
    metric: &dyn SimilarityMetric,
    cfg: &TrainConfig,
    log_wall_time: bool,
) -> Result<TrainLog> {
    cfg.validate()?;
    channel.validate()?;
    if messages.is_empty() {
        return Err(Error::InvalidArgument("training corpus is empty".into()));
    }
    let start = log_wall_time.then(Instant::now);
    let mut adam = Adam::new(cfg.lr);
    let mut batches = BatchCycle::new(messages.len(), cfg.batch_size, rng::substream(cfg.seed, "shuffle"));
    let mut chan_rng = rng::substream(cfg.seed, "train-channel");
    let k = state.config().symbols_per_token;
    let mut log = TrainLog::default();
    for step in 0..cfg.steps {
        let batch: Vec<TokenSequence> = batches.next_batch().into_iter().map(|i| messages[i].clone()).collect();
        let shapes: Vec<(usize, usize)> = batch.iter().map(|m| (m.len(), k)).collect();
        let draws = sample_draws(channel, cfg.snr_range_db, &shapes, &mut chan_rng);
        let lambda = state.config().ponder_cost * cfg.ponder_ramp(step);
        let (mut grads, stats) = supervised_loss(state, &batch, &draws, metric, lambda)?;
        check_finite(step, stats.loss, &grads)?;
        if cfg.grad_clip > 0.0 {
            grads.clip_global_norm(cfg.grad_clip);
        }
        adam.step(&mut state.params, &grads);
        log.rows.push(LogRow {
            step,
            loss: stats.loss,
            reward_mean: -stats.distance,
            reward_std: 0.0,
            distill_enc_mean: stats.enc_steps_mean,
            distill_dec_mean: stats.dec_steps_mean,
            wall_time_s: elapsed(start),
        });
    }
    Ok(log)
}

/// Token-level cross-entropy plus ponder cost with fresh channel noise per batch.
pub fn train_ce(
    state: &mut CodecState,
    channel: &ChannelSpec,
    messages: &[TokenSequence],
    cfg: &TrainConfig,
    log_wall_time: bool,
) -> Result<TrainLog> {
    supervised_loop(state, channel, messages, &MaskedCe::default(), cfg, log_wall_time)
}

/// Minimises the negative similarity end-to-end; the metric must be differentiable.
pub fn train_ssc_d(
    state: &mut CodecState,
    channel: &ChannelSpec,
    messages: &[TokenSequence],
    metric: &dyn SimilarityMetric,
    cfg: &TrainConfig,
    log_wall_time: bool,
) -> Result<TrainLog> {
    if !metric.differentiable() {
        return Err(Error::NotDifferentiable(metric.name().to_string()));
    }
    supervised_loop(state, channel, messages, metric, cfg, log_wall_time)
}

/// Image autoencoding through the channel under a differentiable image metric.
pub fn train_ssc_d_image(
    codec: &mut ImageCodec,
    channel: &ChannelSpec,
    images: &[ImageMessage],
    metric: &dyn SimilarityMetric,
    cfg: &TrainConfig,
    log_wall_time: bool,
) -> Result<TrainLog> {
    if !metric.differentiable() {
        return Err(Error::NotDifferentiable(metric.name().to_string()));
    }
    cfg.validate()?;
    channel.validate()?;
    if images.is_empty() {
        return Err(Error::InvalidArgument("no training images".into()));
    }
    let start = log_wall_time.then(Instant::now);
    let mut adam = Adam::new(cfg.lr);
    let mut batches = BatchCycle::new(images.len(), cfg.batch_size, rng::substream(cfg.seed, "shuffle"));
    let mut chan_rng = rng::substream(cfg.seed, "train-channel");
    let s = codec.config().symbols;
    let mut log = TrainLog::default();
    for step in 0..cfg.steps {
        let idx = batches.next_batch();
        let batch: Vec<ImageMessage> = idx.iter().map(|&i| images[i].clone()).collect();
        let x = images_to_mat(&batch)?;
        let draws = sample_draws(channel, cfg.snr_range_db, &vec![(1, s); batch.len()], &mut chan_rng);
        let mut t = Tape::new(&codec.params);
        let xv = t.constant(x);
        let sym = codec.encode(&mut t, xv);
        let segs = Rc::new(Segments::from_lengths(&vec![1; batch.len()]));
        let y = apply_draws(&mut t, sym, &segs, &draws);
        let recon = codec.decode(&mut t, y);
        let loss = metric.image_distance(&mut t, recon, xv)?;
        let mut grads = t.backward(loss);
        let lv = t.scalar(loss);
        drop(t);
        check_finite(step, lv, &grads)?;
        if cfg.grad_clip > 0.0 {
            grads.clip_global_norm(cfg.grad_clip);
        }
        adam.step(&mut codec.params, &grads);
        log.rows.push(LogRow {
            step,
            loss: lv,
            reward_mean: -lv,
            reward_std: 0.0,
            distill_enc_mean: 0.0,
            distill_dec_mean: 0.0,
            wall_time_s: elapsed(start),
        });
    }
    Ok(log)
}

/// Mean reconstruction MSE of `images` through the channel (inference).
pub fn reconstruction_mse(
    codec: &ImageCodec,
    images: &[ImageMessage],
    draws: &[ChannelDraw],
) -> Result<f64> {
    let x = images_to_mat(images)?;
    let mut t = Tape::new(&codec.params);
    let xv = t.constant(x.clone());
    let sym = codec.encode(&mut t, xv);
    let segs = Rc::new(Segments::from_lengths(&vec![1; images.len()]));
    let y = apply_draws(&mut t, sym, &segs, draws);
    let recon = codec.decode(&mut t, y);
    let diff: Mat = t.value(recon) - &x;
    Ok(diff.mapv(|v| v * v).mean().unwrap_or(0.0))
}
