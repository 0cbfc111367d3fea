//! Learning regimes over the codec + channel pipeline: cross-entropy
//! training, differentiable-similarity training and actor-critic
//! reinforcement learning against arbitrary scalar rewards.

mod ce;
mod image;
mod rl;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use ce::{reconstruction_mse, sample_draws, supervised_loss, train_ce, train_ssc_d, train_ssc_d_image, SupervisedStats};
pub use image::{ImageCodec, ImageCodecConfig, ImagePolicy};
pub use rl::{
    actor_critic_update, assign_sentence_reward, attach_image_rewards, bandit_gradient_samples, rollout_image, rollout_sentence,
    rollout_sentences, train_bandit, train_ssc_nd_image, train_ssc_nd_sentence, AcDiagnostics, ActorOutput,
    BanditOutcome, Critic, SentenceRollout, evaluate_image_policy,
};

use crate::autograd::Grads;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Critic learning rate; defaults to `lr` when absent.
    pub critic_lr: Option<f64>,
    /// Discount `γ ∈ (0, 1]`.
    pub gamma: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Pixel increment `δ` of the image policy.
    pub pixel_step: f64,
    /// Image rollout length `T`.
    pub rollout_len: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Name of the reward / similarity metric.
    pub metric: String,
    /// Sample each message's training SNR uniformly from this dB range
    /// instead of using the channel's fixed SNR.
    pub snr_range_db: Option<[f64; 2]>,
    pub freeze_encoder: bool,
    pub advantage_norm: bool,
    pub grad_clip: f64,
    pub temperature: f64,
    /// Adds a third "keep" action to the image policy.
    pub noop_action: bool,
    pub critic_hidden: usize,
    /// Steps over which the ponder cost ramps linearly up from zero.
    pub ponder_warmup: usize,
    /// Cross-entropy warm-start steps run before a reinforcement-learning
    /// regime when no initial checkpoint is given.
    pub pretrain_steps: usize,
    /// Learning rate of the warm start; defaults to `lr`.
    pub pretrain_lr: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            critic_lr: None,
            gamma: 1.0,
            entropy_coef: 0.01,
            value_coef: 0.5,
            pixel_step: 0.05,
            rollout_len: 16,
            batch_size: 16,
            steps: 1000,
            seed: 0,
            metric: "cider_d".into(),
            snr_range_db: None,
            freeze_encoder: false,
            advantage_norm: true,
            grad_clip: 1.0,
            temperature: 1.0,
            noop_action: false,
            critic_hidden: 32,
            ponder_warmup: 0,
            pretrain_steps: 0,
            pretrain_lr: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            errs.push("train.gamma must lie in (0, 1]".to_string());
        }
        if !(self.pixel_step > 0.0) {
            errs.push("train.pixel_step must be > 0".to_string());
        }
        if self.rollout_len < 1 {
            errs.push("train.rollout_len must be >= 1".to_string());
        }
        if self.batch_size < 1 {
            errs.push("train.batch_size must be >= 1".to_string());
        }
        if !(self.lr > 0.0) || [self.critic_lr, self.pretrain_lr].iter().flatten().any(|l| !(*l > 0.0)) {
            errs.push("train.lr, train.critic_lr and train.pretrain_lr must be > 0".to_string());
        }
        if !(self.temperature >= 0.0) {
            errs.push("train.temperature must be >= 0".to_string());
        }
        if let Some([lo, hi]) = self.snr_range_db {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                errs.push("train.snr_range_db must be a finite [low, high] pair".to_string());
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Multiplier in `[0, 1]` applied to the ponder cost at `step`.
    pub fn ponder_ramp(&self, step: usize) -> f64 {
        if self.ponder_warmup == 0 {
            1.0
        } else {
            (step as f64 / self.ponder_warmup as f64).min(1.0)
        }
    }

    pub fn critic_lr(&self) -> f64 {
        self.critic_lr.unwrap_or(self.lr)
    }
}

/// One reinforcement-learning rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode<A> {
    /// Decoder hidden states, or flattened intermediate images.
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<A>,
    pub logprobs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub returns: Vec<f64>,
}

impl<A> Episode<A> {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Sets `returns[t] = rewards[t] + γ·returns[t+1]`.
    pub fn compute_returns(&mut self, gamma: f64) -> Result<()> {
        if self.rewards.len() != self.actions.len()
            || self.states.len() != self.actions.len()
            || self.logprobs.len() != self.actions.len()
        {
            return Err(Error::Shape("episode fields differ in length".into()));
        }
        self.returns = discounted_returns(&self.rewards, gamma);
        Ok(())
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// One logged optimisation step.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub distill_enc_mean: f64,
    pub distill_dec_mean: f64,
    pub wall_time_s: f64,
}

pub const METRICS_HEADER: [&str; 7] = [
    "step",
    "loss",
    "reward_mean",
    "reward_std",
    "distill_enc_mean",
    "distill_dec_mean",
    "wall_time_s",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss).collect()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.reward_mean).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(METRICS_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.step.to_string(),
                fmt_f(r.loss),
                fmt_f(r.reward_mean),
                fmt_f(r.reward_std),
                fmt_f(r.distill_enc_mean),
                fmt_f(r.distill_dec_mean),
                fmt_f(r.wall_time_s),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<metrics csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(f)
    }
}

/// Shortest round-trip decimal representation.
pub(crate) fn fmt_f(v: f64) -> String {
    format!("{v:?}")
}

/// Trailing moving average with the given window.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        acc += v;
        if i >= w {
            acc -= values[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

pub(crate) fn check_finite(step: usize, loss: f64, grads: &Grads) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Diverged {
            step,
            detail: format!("loss is {loss}"),
        });
    }
    if !grads.all_finite() {
        return Err(Error::Diverged {
            step,
            detail: "non-finite gradient".into(),
        });
    }
    Ok(())
}

/// Wall-clock seconds since `start`, or 0 when timing is disabled so logs stay reproducible.
pub(crate) fn elapsed(start: Option<std::time::Instant>) -> f64 {
    start.map_or(0.0, |s| s.elapsed().as_secs_f64())
}
