//! Actor-critic reinforcement learning on scalar rewards: sentence rollouts
//! with terminal similarity rewards, pixel-increment image rollouts with
//! per-step MSE gains, and a two-armed bandit used as an estimator check.

use std::rc::Rc;
use std::time::Instant;

use rand::Rng as _;

use super::ce::{sample_draws, BatchCycle};
use super::image::{images_to_mat, ImagePolicy};
use super::{check_finite, discounted_returns, elapsed, mean_std, Episode, LogRow, TrainConfig, TrainLog};
use crate::autograd::{col, Adam, Mat, ParamId, ParamStore, Segments, Tape, Var};
use crate::channel::{apply_draws, ChannelDraw, ChannelSpec, SymbolBlock};
use crate::codec::{CodecState, Decoding, DistillationTrace, Mode};
use crate::corpus::{content_ids, ImageMessage, TokenSequence, BOS};
use crate::metrics::{mse_gain, SimilarityMetric};
use crate::nn::Linear;
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// State-value network with its own parameters and optimiser state.
#[derive(Clone, Debug)]
pub struct Critic {
    pub params: ParamStore,
    l1: Linear,
    l2: Linear,
    outputs: usize,
}

impl Critic {
    /// Maps `inputs` features to `outputs` values per state.
    pub fn new(inputs: usize, hidden: usize, outputs: usize, seed: u64) -> Self {
        let mut rng = rng::substream(seed, "critic-init");
        let mut p = ParamStore::new();
        let l1 = Linear::new(&mut p, "critic.l1", inputs, hidden, true, &mut rng);
        let l2 = Linear::new(&mut p, "critic.l2", hidden, outputs, true, &mut rng);
        Critic {
            params: p,
            l1,
            l2,
            outputs,
        }
    }

    /// `(R·outputs) × 1` values for `R × inputs` features.
    pub fn values(&self, t: &mut Tape, features: &Mat) -> Var {
        let rows = features.nrows();
        let x = t.constant(features.clone());
        let h = self.l1.forward(t, x);
        let h = t.tanh(h);
        let v = self.l2.forward(t, h);
        t.reshape(v, rows * self.outputs, 1)
    }
}

/// What an actor contributes to one update: log-probabilities of the taken
/// actions, per-action entropies, critic features and the targets.
pub struct ActorOutput {
    /// `M × 1`.
    pub logp: Var,
    /// `M × 1` entropy of the distribution each action was drawn from.
    pub entropy: Var,
    /// Critic input, one row per state; the critic yields `M` values in total.
    pub features: Mat,
    /// `M` discounted returns.
    pub returns: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AcDiagnostics {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub value_mean: f64,
    pub advantage_mean: f64,
}

/// One actor-critic step: `A = R − V(s)` (optionally normalised), actor loss
/// `−mean(A·log π) − β·mean(H)`, critic loss `c_v · mean((V − R)²)`, one
/// optimiser step each. Parameters in `frozen` receive no update.
#[allow(clippy::too_many_arguments)]
pub fn actor_critic_update(
    actor: &mut ParamStore,
    actor_opt: &mut Adam,
    frozen: &[ParamId],
    critic: &mut Critic,
    critic_opt: &mut Adam,
    cfg: &TrainConfig,
    step: usize,
    actor_fn: &dyn Fn(&mut Tape) -> Result<ActorOutput>,
) -> Result<AcDiagnostics> {
    let mut t = Tape::with_frozen(actor, frozen);
    let out = actor_fn(&mut t)?;
    let m = out.returns.len();
    if t.shape(out.logp) != (m, 1) || t.shape(out.entropy) != (m, 1) || m == 0 {
        return Err(Error::Shape("actor output does not match the returns".into()));
    }
    let mut ct = Tape::new(&critic.params);
    let v = critic.values(&mut ct, &out.features);
    if ct.shape(v) != (m, 1) {
        return Err(Error::Shape(format!("critic gave {:?} values for {m} returns", ct.shape(v))));
    }
    let values: Vec<f64> = ct.value(v).column(0).to_vec();
    let mut adv: Vec<f64> = out.returns.iter().zip(&values).map(|(r, v)| r - v).collect();
    let (adv_mean, adv_std) = mean_std(&adv);
    if cfg.advantage_norm && m > 1 {
        for a in &mut adv {
            *a = (*a - adv_mean) / (adv_std + 1e-8);
        }
    }
    let a = t.constant(col(&adv));
    let weighted = t.mul(out.logp, a);
    let pg = t.mean_all(weighted);
    let pg = t.scale(pg, -1.0);
    let ent = t.mean_all(out.entropy);
    let ent_term = t.scale(ent, -cfg.entropy_coef);
    let actor_loss = t.add(pg, ent_term);
    let mut grads = t.backward(actor_loss);
    let actor_loss_v = t.scalar(actor_loss);
    let entropy_v = t.scalar(ent);
    drop(t);
    check_finite(step, actor_loss_v, &grads)?;

    let r = ct.constant(col(&out.returns));
    let diff = ct.sub(v, r);
    let sq = ct.mul(diff, diff);
    let mse = ct.mean_all(sq);
    let critic_loss = ct.scale(mse, cfg.value_coef);
    let mut cgrads = ct.backward(critic_loss);
    let critic_loss_v = ct.scalar(critic_loss);
    drop(ct);
    check_finite(step, critic_loss_v, &cgrads)?;

    if cfg.grad_clip > 0.0 {
        grads.clip_global_norm(cfg.grad_clip);
        cgrads.clip_global_norm(cfg.grad_clip);
    }
    actor_opt.step(actor, &grads);
    critic_opt.step(&mut critic.params, &cgrads);
    Ok(AcDiagnostics {
        actor_loss: actor_loss_v,
        critic_loss: critic_loss_v,
        entropy: entropy_v,
        value_mean: values.iter().sum::<f64>() / m as f64,
        advantage_mean: adv_mean,
    })
}

/// Entropy of each row of a log-probability matrix, `n × 1`.
fn row_entropy(t: &mut Tape, logp: Var) -> Var {
    let p = t.exp(logp);
    let plogp = t.mul(p, logp);
    let s = t.sum_rows(plogp);
    t.scale(s, -1.0)
}

/// Sampled decodes of a batch with their channel draws and distillation traces.
pub struct SentenceRollout {
    pub episodes: Vec<Episode<u32>>,
    pub traces: Vec<DistillationTrace>,
}

/// Encodes `batch`, applies `draws` and samples one decode per message.
pub fn rollout_sentences(
    state: &CodecState,
    batch: &[TokenSequence],
    draws: &[ChannelDraw],
    temperature: f64,
    rng: &mut Rng,
) -> Result<SentenceRollout> {
    let mut t = Tape::new(&state.params);
    let enc = state.encode(&mut t, batch, Mode::Infer)?;
    let y = apply_draws(&mut t, enc.symbols, &enc.segs, draws);
    let mem = state.receive(&mut t, y, &enc.segs, Mode::Infer)?;
    let gen = state.generate(&mut t, &mem, Decoding::Sample { temperature, rng });
    let traces = (0..batch.len())
        .map(|m| DistillationTrace::new(&enc.distilled.traces[m], &mem.distilled.traces[m]))
        .collect();
    let episodes = gen
        .tokens
        .into_iter()
        .zip(gen.logprobs)
        .zip(gen.hidden)
        .map(|((actions, logprobs), states)| Episode {
            rewards: vec![0.0; actions.len()],
            states,
            actions,
            logprobs,
            returns: Vec::new(),
        })
        .collect();
    Ok(SentenceRollout { episodes, traces })
}

/// Samples a decode of one received block. States are the decoder hidden
/// states that produced each token; rewards are left at zero.
pub fn rollout_sentence(state: &CodecState, received: &SymbolBlock, temperature: f64, rng: &mut Rng) -> Result<Episode<u32>> {
    let mut t = Tape::new(&state.params);
    let segs = Rc::new(Segments::from_lengths(&[received.shape().0]));
    let y = t.constant(received.symbols().clone());
    let mem = state.receive(&mut t, y, &segs, Mode::Infer)?;
    let gen = state.generate(&mut t, &mem, Decoding::Sample { temperature, rng });
    let actions = gen.tokens.into_iter().next().unwrap_or_default();
    Ok(Episode {
        states: gen.hidden.into_iter().next().unwrap_or_default(),
        rewards: vec![0.0; actions.len()],
        logprobs: gen.logprobs.into_iter().next().unwrap_or_default(),
        actions,
        returns: Vec::new(),
    })
}

/// Terminal reward `metric(refs, sentence)` on the last step, zero elsewhere.
pub fn assign_sentence_reward(
    mut episode: Episode<u32>,
    refs: &[Vec<u32>],
    metric: &dyn SimilarityMetric,
    gamma: f64,
) -> Result<Episode<u32>> {
    let score = metric.score_tokens(refs, content_ids(&episode.actions))?;
    episode.rewards = vec![0.0; episode.actions.len()];
    if let Some(last) = episode.rewards.last_mut() {
        *last = score;
    }
    episode.compute_returns(gamma)?;
    Ok(episode)
}

fn sampled_sequence(actions: &[u32]) -> TokenSequence {
    let mut ids = Vec::with_capacity(actions.len() + 1);
    ids.push(BOS);
    ids.extend_from_slice(actions);
    TokenSequence::from_ids_unchecked(ids)
}

/// Teacher-forced log-probability of each sampled token, recomputed with
/// gradients through the receiver and (unless frozen) the transmitter.
pub(crate) fn sentence_actor(
    state: &CodecState,
    t: &mut Tape,
    batch: &[TokenSequence],
    draws: &[ChannelDraw],
    episodes: &[Episode<u32>],
) -> Result<ActorOutput> {
    let enc = state.encode(t, batch, Mode::Infer)?;
    let y = apply_draws(t, enc.symbols, &enc.segs, draws);
    let mem = state.receive(t, y, &enc.segs, Mode::Infer)?;
    let sampled: Vec<TokenSequence> = episodes.iter().map(|e| sampled_sequence(&e.actions)).collect();
    let tf = state.teacher_forced(t, &mem, &sampled);
    let lp = t.log_softmax(tf.logits);
    let logp = t.pick(lp, &tf.targets);
    let entropy = row_entropy(t, lp);
    let features = t.value(tf.hidden).clone();
    let returns = episodes.iter().flat_map(|e| e.returns.iter().copied()).collect();
    Ok(ActorOutput {
        logp,
        entropy,
        features,
        returns,
    })
}

/// Actor-critic fine-tuning of a (typically CE-pretrained) transceiver with
/// a terminal similarity reward per sampled sentence.
#[allow(clippy::too_many_arguments)]
pub fn train_ssc_nd_sentence(
    state: &mut CodecState,
    critic: &mut Critic,
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
    let frozen: Vec<ParamId> = if cfg.freeze_encoder {
        state.encoder_param_ids()
    } else {
        Vec::new()
    };
    let mut actor_opt = Adam::new(cfg.lr);
    let mut critic_opt = Adam::new(cfg.critic_lr());
    let mut batches = BatchCycle::new(messages.len(), cfg.batch_size, rng::substream(cfg.seed, "shuffle"));
    let mut chan_rng = rng::substream(cfg.seed, "train-channel");
    let mut roll_rng = rng::substream(cfg.seed, "rollout");
    let k = state.config().symbols_per_token;
    let mut log = TrainLog::default();
    for step in 0..cfg.steps {
        let batch: Vec<TokenSequence> = batches.next_batch().into_iter().map(|i| messages[i].clone()).collect();
        let shapes: Vec<(usize, usize)> = batch.iter().map(|m| (m.len(), k)).collect();
        let draws = sample_draws(channel, cfg.snr_range_db, &shapes, &mut chan_rng);
        let roll = rollout_sentences(state, &batch, &draws, cfg.temperature, &mut roll_rng)?;
        let episodes = roll
            .episodes
            .into_iter()
            .zip(&batch)
            .map(|(ep, m)| assign_sentence_reward(ep, &[m.content().to_vec()], metric, cfg.gamma))
            .collect::<Result<Vec<_>>>()?;
        let totals: Vec<f64> = episodes.iter().map(Episode::total_reward).collect();
        let st: &CodecState = state;
        let diag = {
            let mut params = st.params.clone();
            let d = actor_critic_update(
                &mut params,
                &mut actor_opt,
                &frozen,
                critic,
                &mut critic_opt,
                cfg,
                step,
                &|t: &mut Tape| sentence_actor(st, t, &batch, &draws, &episodes),
            )?;
            state.params = params;
            d
        };
        let (rm, rs) = mean_std(&totals);
        let n = batch.len() as f64;
        log.rows.push(LogRow {
            step,
            loss: diag.actor_loss + diag.critic_loss,
            reward_mean: rm,
            reward_std: rs,
            distill_enc_mean: roll.traces.iter().map(|t| t.encoder_steps as f64).sum::<f64>() / n,
            distill_dec_mean: roll.traces.iter().map(|t| t.decoder_steps as f64).sum::<f64>() / n,
            wall_time_s: elapsed(start),
        });
    }
    Ok(log)
}

/// Runs the pixel-increment policy for `T` steps from mid-gray.
///
/// Actions are per-pixel indices (`0 → +δ`, `1 → −δ`, `2 → keep`); states are
/// the images the actions were taken from, followed by the final image.
/// [`attach_image_rewards`] fills in the rewards.
pub fn rollout_image(
    policy: &ImagePolicy,
    received: &SymbolBlock,
    steps: usize,
    delta: f64,
    rng: &mut Rng,
) -> Result<Episode<Vec<u8>>> {
    if steps < 1 {
        return Err(Error::InvalidArgument("image rollouts need T >= 1".into()));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument("pixel step must be positive".into()));
    }
    if received.shape() != (1, policy.config().symbols) {
        return Err(Error::Shape(format!(
            "received block {:?}, policy expects (1, {})",
            received.shape(),
            policy.config().symbols
        )));
    }
    let mut eps = rollout_images(policy, received.symbols(), steps, delta, Some(rng))?;
    Ok(eps.remove(0))
}

/// Batched image rollouts (`y`: `B × S` received symbols). Greedy when `rng` is `None`.
pub(crate) fn rollout_images(
    policy: &ImagePolicy,
    y: &Mat,
    steps: usize,
    delta: f64,
    mut rng: Option<&mut Rng>,
) -> Result<Vec<Episode<Vec<u8>>>> {
    let b = y.nrows();
    let p = policy.pixels();
    let mut imgs = Mat::from_elem((b, p), 0.5);
    let mut eps: Vec<Episode<Vec<u8>>> = (0..b)
        .map(|_| Episode {
            states: Vec::new(),
            actions: Vec::new(),
            logprobs: Vec::new(),
            rewards: Vec::new(),
            returns: Vec::new(),
        })
        .collect();
    for _ in 0..steps {
        let mut t = Tape::new(&policy.params);
        let yv = t.constant(y.clone());
        let iv = t.constant(imgs.clone());
        let lp = policy.action_logprobs(&mut t, yv, iv);
        let lpv = t.value(lp);
        for (m, ep) in eps.iter_mut().enumerate() {
            ep.states.push(imgs.row(m).to_vec());
            let mut acts = Vec::with_capacity(p);
            let mut total_lp = 0.0;
            for px in 0..p {
                let row = lpv.row(m * p + px);
                let a = match rng.as_deref_mut() {
                    Some(r) => sample_row(row.as_slice().expect("contiguous"), r),
                    None => greedy_row(row.as_slice().expect("contiguous")),
                };
                total_lp += row[a];
                let v = imgs[[m, px]] + policy.action_delta(a, delta);
                imgs[[m, px]] = v.clamp(0.0, 1.0);
                acts.push(a as u8);
            }
            ep.actions.push(acts);
            ep.logprobs.push(total_lp);
            ep.rewards.push(0.0);
        }
    }
    for (m, ep) in eps.iter_mut().enumerate() {
        // final image kept as an extra trailing state for reward bookkeeping
        ep.states.push(imgs.row(m).to_vec());
    }
    Ok(eps)
}

fn sample_row(logp: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, l) in logp.iter().enumerate() {
        acc += l.exp();
        if u < acc {
            return i;
        }
    }
    logp.len() - 1
}

fn greedy_row(logp: &[f64]) -> usize {
    let mut best = 0;
    for (i, &l) in logp.iter().enumerate() {
        if l > logp[best] {
            best = i;
        }
    }
    best
}

/// Attaches `mse_gain` rewards to a finished rollout and returns the
/// per-pixel reward split and the final image. The trailing state added by
/// the rollout is removed.
pub fn attach_image_rewards(
    ep: &mut Episode<Vec<u8>>,
    target: &ImageMessage,
    gamma: f64,
) -> Result<(Vec<Vec<f64>>, ImageMessage)> {
    let (h, w, c) = target.shape();
    let frames: Vec<ImageMessage> = ep
        .states
        .iter()
        .map(|s| ImageMessage::new(h, w, c, s.clone()))
        .collect::<Result<_>>()?;
    let steps = ep.actions.len();
    let mut per_pixel = Vec::with_capacity(steps);
    for t in 0..steps {
        ep.rewards[t] = mse_gain(target, &frames[t], &frames[t + 1])?;
        let p = target.len() as f64;
        per_pixel.push(
            target
                .pixels()
                .iter()
                .zip(frames[t].pixels().iter().zip(frames[t + 1].pixels()))
                .map(|(g, (a, b))| ((g - a) * (g - a) - (g - b) * (g - b)) / p)
                .collect::<Vec<f64>>(),
        );
    }
    ep.states.truncate(steps);
    ep.compute_returns(gamma)?;
    Ok((per_pixel, frames[steps].clone()))
}

/// Per-pixel discounted returns, flattened in (step, pixel) order.
fn pixel_returns(per_pixel: &[Vec<f64>], gamma: f64) -> Vec<Vec<f64>> {
    let steps = per_pixel.len();
    let p = per_pixel.first().map_or(0, Vec::len);
    let mut out = vec![vec![0.0; p]; steps];
    for px in 0..p {
        let series: Vec<f64> = per_pixel.iter().map(|r| r[px]).collect();
        for (t, v) in discounted_returns(&series, gamma).into_iter().enumerate() {
            out[t][px] = v;
        }
    }
    out
}

/// Transmits `images` through `draws` and decodes them greedily; returns
/// `(mse(target, img_0), mse(target, img_T))` averaged over the images.
pub fn evaluate_image_policy(
    policy: &ImagePolicy,
    images: &[ImageMessage],
    draws: &[ChannelDraw],
    steps: usize,
    delta: f64,
) -> Result<(f64, f64)> {
    let y = received_images(policy, images, draws)?;
    let mut eps = rollout_images(policy, &y, steps, delta, None)?;
    let mut before = 0.0;
    let mut after = 0.0;
    for (ep, target) in eps.iter_mut().zip(images) {
        let first = ImageMessage::new(target.shape().0, target.shape().1, target.shape().2, ep.states[0].clone())?;
        let (_, last) = attach_image_rewards(ep, target, 1.0)?;
        before += crate::metrics::mse(target, &first)?;
        after += crate::metrics::mse(target, &last)?;
    }
    let n = images.len() as f64;
    Ok((before / n, after / n))
}

fn received_images(policy: &ImagePolicy, images: &[ImageMessage], draws: &[ChannelDraw]) -> Result<Mat> {
    let x = images_to_mat(images)?;
    let mut t = Tape::new(&policy.params);
    let xv = t.constant(x);
    let s = policy.encode(&mut t, xv);
    let segs = Rc::new(Segments::from_lengths(&vec![1; images.len()]));
    let y = apply_draws(&mut t, s, &segs, draws);
    Ok(t.value(y).clone())
}

/// Actor-critic training of the pixel-increment policy (transmitter
/// included) with per-step MSE-gain rewards.
pub fn train_ssc_nd_image(
    policy: &mut ImagePolicy,
    critic: &mut Critic,
    channel: &ChannelSpec,
    images: &[ImageMessage],
    cfg: &TrainConfig,
    log_wall_time: bool,
) -> Result<TrainLog> {
    cfg.validate()?;
    channel.validate()?;
    if images.is_empty() {
        return Err(Error::InvalidArgument("no training images".into()));
    }
    let start = log_wall_time.then(Instant::now);
    let frozen: Vec<ParamId> = if cfg.freeze_encoder {
        policy.params.ids_with_prefix("enc.").collect()
    } else {
        Vec::new()
    };
    let mut actor_opt = Adam::new(cfg.lr);
    let mut critic_opt = Adam::new(cfg.critic_lr());
    let mut batches = BatchCycle::new(images.len(), cfg.batch_size, rng::substream(cfg.seed, "shuffle"));
    let mut chan_rng = rng::substream(cfg.seed, "train-channel");
    let mut roll_rng = rng::substream(cfg.seed, "rollout");
    let s = policy.config().symbols;
    let p = policy.pixels();
    let steps = cfg.rollout_len;
    let mut log = TrainLog::default();
    for step in 0..cfg.steps {
        let batch: Vec<ImageMessage> = batches.next_batch().into_iter().map(|i| images[i].clone()).collect();
        let b = batch.len();
        let draws = sample_draws(channel, cfg.snr_range_db, &vec![(1, s); b], &mut chan_rng);
        let y = received_images(policy, &batch, &draws)?;
        let mut eps = rollout_images(policy, &y, steps, cfg.pixel_step, Some(&mut roll_rng))?;
        let mut returns = Vec::with_capacity(b * steps * p);
        let mut totals = Vec::with_capacity(b);
        for (ep, target) in eps.iter_mut().zip(&batch) {
            let (per_pixel, _) = attach_image_rewards(ep, target, cfg.gamma)?;
            totals.push(ep.total_reward());
            returns.extend(pixel_returns(&per_pixel, cfg.gamma).into_iter().flatten());
        }
        let mut states = Mat::zeros((b * steps, p));
        let mut actions = Vec::with_capacity(b * steps * p);
        let mut y_rows = Vec::with_capacity(b * steps);
        for (m, ep) in eps.iter().enumerate() {
            for (t_i, st) in ep.states.iter().enumerate() {
                states.row_mut(m * steps + t_i).assign(&ndarray::ArrayView1::from(st.as_slice()));
                actions.extend(ep.actions[t_i].iter().map(|&a| a as usize));
                y_rows.push(m);
            }
        }
        let mut features = Mat::zeros((b * steps, s + p));
        for (r, &m) in y_rows.iter().enumerate() {
            features.slice_mut(ndarray::s![r, ..s]).assign(&y.row(m));
            features.slice_mut(ndarray::s![r, s..]).assign(&states.row(r));
        }
        let xmat = images_to_mat(&batch)?;
        let pol: &ImagePolicy = policy;
        let actor_fn = |t: &mut Tape| -> Result<ActorOutput> {
            let xv = t.constant(xmat.clone());
            let sym = pol.encode(t, xv);
            let segs = Rc::new(Segments::from_lengths(&vec![1; b]));
            let yv = apply_draws(t, sym, &segs, &draws);
            let y_rep = t.gather(yv, &y_rows);
            let iv = t.constant(states.clone());
            let lp = pol.action_logprobs(t, y_rep, iv);
            let logp = t.pick(lp, &actions);
            let entropy = row_entropy(t, lp);
            Ok(ActorOutput {
                logp,
                entropy,
                features: features.clone(),
                returns: returns.clone(),
            })
        };
        let mut params = pol.params.clone();
        let diag = actor_critic_update(
            &mut params,
            &mut actor_opt,
            &frozen,
            critic,
            &mut critic_opt,
            cfg,
            step,
            &actor_fn,
        )?;
        policy.params = params;
        let (rm, rs) = mean_std(&totals);
        log.rows.push(LogRow {
            step,
            loss: diag.actor_loss + diag.critic_loss,
            reward_mean: rm,
            reward_std: rs,
            distill_enc_mean: 0.0,
            distill_dec_mean: 0.0,
            wall_time_s: elapsed(start),
        });
    }
    Ok(log)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BanditOutcome {
    /// Policy probability of the rewarding arm after training.
    pub prob_optimal: f64,
    /// Critic value of the single state after training.
    pub value: f64,
    /// Probability of the rewarding arm after each update.
    pub prob_curve: Vec<f64>,
}

/// Single-state two-armed bandit: arm 0 pays 1, arm 1 pays 0.
pub fn train_bandit(cfg: &TrainConfig, updates: usize) -> Result<BanditOutcome> {
    cfg.validate()?;
    let mut actor = ParamStore::new();
    let logits = actor.add_constant("bandit.logits", 1, 2, 0.0);
    let mut critic = Critic::new(1, cfg.critic_hidden, 1, cfg.seed);
    let mut actor_opt = Adam::new(cfg.lr);
    let mut critic_opt = Adam::new(cfg.critic_lr());
    let mut rng = rng::substream(cfg.seed, "bandit");
    let mut curve = Vec::with_capacity(updates);
    let prob = |store: &ParamStore| {
        let l = store.get(logits);
        crate::autograd::sigmoid_scalar(l[[0, 0]] - l[[0, 1]])
    };
    for step in 0..updates {
        let p0 = prob(&actor);
        let arms: Vec<usize> = (0..cfg.batch_size)
            .map(|_| usize::from(rng.random_range(0.0..1.0) >= p0))
            .collect();
        let returns: Vec<f64> = arms.iter().map(|&a| if a == 0 { 1.0 } else { 0.0 }).collect();
        let features = Mat::ones((arms.len(), 1));
        let actor_fn = |t: &mut Tape| -> Result<ActorOutput> {
            let l = t.param(logits);
            let rows = t.gather(l, &vec![0; arms.len()]);
            let lp = t.log_softmax(rows);
            let logp = t.pick(lp, &arms);
            let entropy = row_entropy(t, lp);
            Ok(ActorOutput {
                logp,
                entropy,
                features: features.clone(),
                returns: returns.clone(),
            })
        };
        actor_critic_update(&mut actor, &mut actor_opt, &[], &mut critic, &mut critic_opt, cfg, step, &actor_fn)?;
        curve.push(prob(&actor));
    }
    let mut t = Tape::new(&critic.params);
    let v = critic.values(&mut t, &Mat::ones((1, 1)));
    Ok(BanditOutcome {
        prob_optimal: prob(&actor),
        value: t.scalar(v),
        prob_curve: curve,
    })
}

/// Single-sample policy-gradient estimates `∂/∂θ₀ [(r − b)·log π(a)]` for
/// the bandit with logits `(θ₀, 0)`: one vector without a baseline and one
/// with the exact state value `b = π(arm 0)`.
pub fn bandit_gradient_samples(theta: f64, samples: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut store = ParamStore::new();
    let logits = store.add("bandit.logits", crate::autograd::row(&[theta, 0.0]));
    let p0 = crate::autograd::sigmoid_scalar(theta);
    let mut rng = rng::substream(seed, "bandit-gradient");
    let mut plain = Vec::with_capacity(samples);
    let mut based = Vec::with_capacity(samples);
    for _ in 0..samples {
        let a = usize::from(rng.random_range(0.0..1.0) >= p0);
        let r = if a == 0 { 1.0 } else { 0.0 };
        for (baseline, out) in [(0.0, &mut plain), (p0, &mut based)] {
            let mut t = Tape::new(&store);
            let l = t.param(logits);
            let lp = t.log_softmax(l);
            let pick = t.pick(lp, &[a]);
            let obj = t.scale(pick, r - baseline);
            let g = t.backward(obj);
            out.push(g.get(logits).map_or(0.0, |m| m[[0, 0]]));
        }
    }
    (plain, based)
}
