use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{prepare_images, prepare_sentences, report, ExperimentConfig, Regime, SentenceData, Task};
use crate::channel::{ChannelKind, ChannelSpec};
use crate::codec::{load_codec, save_codec, CodecState};
use crate::corpus::TokenSequence;
use crate::metrics::{bleu, metric_by_name, positional_wer, wer, IdfTable};
use crate::rng;
use crate::training::{
    evaluate_image_policy, reconstruction_mse, train_ce, train_ssc_d, train_ssc_d_image, train_ssc_nd_image,
    train_ssc_nd_sentence, Critic, ImageCodec, ImagePolicy, TrainConfig, TrainLog,
};
use crate::{Error, Result};

/// Version written into every summary and length-breakdown row.
pub const SUMMARY_SCHEMA: u32 = 1;

/// One evaluation cell: a model (seed) on one channel at one SNR. Columns
/// that do not apply to the task or regime are left empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub schema_version: u32,
    pub task: String,
    pub regime: String,
    pub channel: String,
    pub snr_db: f64,
    pub seed: u64,
    pub n_messages: usize,
    pub wer: Option<f64>,
    pub wer_positional: Option<f64>,
    pub bleu: Option<f64>,
    pub cider_d: Option<f64>,
    pub mse_initial: Option<f64>,
    pub mse_final: Option<f64>,
    pub distill_enc_mean: Option<f64>,
    pub distill_dec_mean: Option<f64>,
    pub symbols_per_message: f64,
}

/// Distillation counts of one cell restricted to messages of one length (in words).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthRow {
    pub schema_version: u32,
    pub channel: String,
    pub snr_db: f64,
    pub seed: u64,
    pub length: usize,
    pub n_messages: usize,
    pub distill_enc_mean: f64,
    pub distill_dec_mean: f64,
    pub wer: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalTable {
    pub rows: Vec<SummaryRow>,
    pub lengths: Vec<LengthRow>,
}

#[derive(Clone, Debug, Default)]
pub struct RunOutcome {
    pub summary: Vec<SummaryRow>,
    pub lengths: Vec<LengthRow>,
    /// Training log per seed (empty for the classical baseline).
    pub logs: Vec<(u64, TrainLog)>,
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(f);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

const SUMMARY_HEADER: [&str; 16] = [
    "schema_version",
    "task",
    "regime",
    "channel",
    "snr_db",
    "seed",
    "n_messages",
    "wer",
    "wer_positional",
    "bleu",
    "cider_d",
    "mse_initial",
    "mse_final",
    "distill_enc_mean",
    "distill_dec_mean",
    "symbols_per_message",
];

const LENGTH_HEADER: [&str; 9] = [
    "schema_version",
    "channel",
    "snr_db",
    "seed",
    "length",
    "n_messages",
    "distill_enc_mean",
    "distill_dec_mean",
    "wer",
];

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_rows(path, rows, &SUMMARY_HEADER)
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    read_rows(path)
}

pub fn write_lengths(path: &Path, rows: &[LengthRow]) -> Result<()> {
    write_rows(path, rows, &LENGTH_HEADER)
}

pub fn read_lengths(path: &Path) -> Result<Vec<LengthRow>> {
    read_rows(path)
}

/// Noise stream of one evaluation cell, independent of every other cell.
pub(crate) fn cell_rng(seed: u64, kind: ChannelKind, snr_db: f64) -> rng::Rng {
    rng::substream(seed, &format!("eval/{kind}/{snr_db:?}"))
}

pub(crate) fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Per-message outcome of one transmission.
pub(crate) struct MessageOutcome {
    pub words: usize,
    pub wer: f64,
    pub wer_positional: f64,
    pub bleu: f64,
    pub cider_d: f64,
    pub enc_steps: usize,
    pub dec_steps: usize,
    pub symbols: usize,
}

pub(crate) fn transmit_all(
    state: &CodecState,
    messages: &[TokenSequence],
    idf: Option<&IdfTable<u32>>,
    spec: &ChannelSpec,
    seed: u64,
    bleu_n: usize,
) -> Result<Vec<MessageOutcome>> {
    let mut rng = cell_rng(seed, spec.kind, spec.snr_db);
    let k = state.config().symbols_per_token;
    let mut out = Vec::with_capacity(messages.len());
    for chunk in messages.chunks(32) {
        let draws: Vec<_> = chunk.iter().map(|m| spec.draw(m.len(), k, &mut rng)).collect();
        for (m, tx) in chunk.iter().zip(state.transmit_batch(chunk, &draws)?) {
            let reference = m.content().to_vec();
            let hyp = tx.content();
            out.push(MessageOutcome {
                words: reference.len(),
                wer: wer(&reference, hyp)?,
                wer_positional: positional_wer(&reference, hyp)?,
                bleu: bleu(std::slice::from_ref(&reference), hyp, bleu_n),
                cider_d: idf.map_or(0.0, |t| t.cider_d(std::slice::from_ref(&reference), hyp)),
                enc_steps: tx.trace.encoder_steps,
                dec_steps: tx.trace.decoder_steps,
                symbols: m.len() * k,
            });
        }
    }
    Ok(out)
}

/// WER / BLEU / CIDEr-D and mean distillation counts of a transceiver over
/// `snr_grid × kinds × seeds`, with a per-length breakdown.
pub fn eval_sweep(
    state: &CodecState,
    messages: &[TokenSequence],
    idf: &IdfTable<u32>,
    snr_grid: &[f64],
    kinds: &[ChannelKind],
    seeds: &[u64],
    bleu_n: usize,
) -> Result<EvalTable> {
    if messages.is_empty() {
        return Err(Error::InvalidArgument("no evaluation messages".into()));
    }
    if let Some(bad) = messages
        .iter()
        .flat_map(|m| m.ids().iter())
        .find(|&&id| id as usize >= state.vocab_size())
    {
        return Err(Error::Checkpoint(format!(
            "token id {bad} outside the checkpoint vocabulary of {}",
            state.vocab_size()
        )));
    }
    let mut table = EvalTable::default();
    for &seed in seeds {
        for &kind in kinds {
            for &snr in snr_grid {
                let spec = ChannelSpec::new(kind, snr);
                let outs = transmit_all(state, messages, Some(idf), &spec, seed, bleu_n)?;
                table.rows.push(SummaryRow {
                    schema_version: SUMMARY_SCHEMA,
                    task: "sentence".into(),
                    regime: String::new(),
                    channel: kind.to_string(),
                    snr_db: snr,
                    seed,
                    n_messages: outs.len(),
                    wer: Some(mean(outs.iter().map(|o| o.wer))),
                    wer_positional: Some(mean(outs.iter().map(|o| o.wer_positional))),
                    bleu: Some(mean(outs.iter().map(|o| o.bleu))),
                    cider_d: Some(mean(outs.iter().map(|o| o.cider_d))),
                    mse_initial: None,
                    mse_final: None,
                    distill_enc_mean: Some(mean(outs.iter().map(|o| o.enc_steps as f64))),
                    distill_dec_mean: Some(mean(outs.iter().map(|o| o.dec_steps as f64))),
                    symbols_per_message: mean(outs.iter().map(|o| o.symbols as f64)),
                });
                let mut by_len: BTreeMap<usize, Vec<&MessageOutcome>> = BTreeMap::new();
                for o in &outs {
                    by_len.entry(o.words).or_default().push(o);
                }
                for (length, group) in by_len {
                    table.lengths.push(LengthRow {
                        schema_version: SUMMARY_SCHEMA,
                        channel: kind.to_string(),
                        snr_db: snr,
                        seed,
                        length,
                        n_messages: group.len(),
                        distill_enc_mean: mean(group.iter().map(|o| o.enc_steps as f64)),
                        distill_dec_mean: mean(group.iter().map(|o| o.dec_steps as f64)),
                        wer: mean(group.iter().map(|o| o.wer)),
                    });
                }
            }
        }
    }
    Ok(table)
}

fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !force {
            return Err(Error::OutputExists(dir.to_path_buf()));
        }
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn seed_dir(cfg: &ExperimentConfig, seed: u64) -> Result<PathBuf> {
    let d = cfg.output_dir.join(format!("seed-{seed}"));
    fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    Ok(d)
}

fn eval_subset<T>(items: &[T], n: usize) -> &[T] {
    if n == 0 || n >= items.len() {
        items
    } else {
        &items[..n]
    }
}

fn train_sentence_model(
    cfg: &ExperimentConfig,
    data: &SentenceData,
    seed: u64,
    dir: &Path,
) -> Result<(CodecState, TrainLog)> {
    let tc = cfg.train_for_seed(seed);
    let wall = cfg.log_wall_time;
    match cfg.regime {
        Regime::Ce => {
            let mut state = CodecState::new(&cfg.codec, data.vocab.len(), seed)?;
            let log = train_ce(&mut state, &cfg.channel, &data.train, &tc, wall)?;
            Ok((state, log))
        }
        Regime::SscD => {
            let mut state = CodecState::new(&cfg.codec, data.vocab.len(), seed)?;
            let metric = metric_by_name(&tc.metric, Some(&data.train_idf))?;
            let log = train_ssc_d(&mut state, &cfg.channel, &data.train, metric.as_ref(), &tc, wall)?;
            Ok((state, log))
        }
        Regime::SscNd => {
            let mut state = match &cfg.data.init_checkpoint {
                Some(path) => {
                    let (state, vocab, _) = load_codec(path)?;
                    if vocab != data.vocab {
                        return Err(Error::Checkpoint(format!(
                            "vocabulary of {} does not match the configured corpus",
                            path.display()
                        )));
                    }
                    state
                }
                None => {
                    let mut state = CodecState::new(&cfg.codec, data.vocab.len(), seed)?;
                    if tc.pretrain_steps > 0 {
                        let pre = TrainConfig {
                            steps: tc.pretrain_steps,
                            lr: tc.pretrain_lr.unwrap_or(tc.lr),
                            ..tc.clone()
                        };
                        let log = train_ce(&mut state, &cfg.channel, &data.train, &pre, wall)?;
                        log.save_csv(&dir.join("pretrain_metrics.csv"))?;
                    }
                    state
                }
            };
            let metric = metric_by_name(&tc.metric, Some(&data.train_idf))?;
            let mut critic = Critic::new(state.config().embed_dim, tc.critic_hidden, 1, seed);
            let log = train_ssc_nd_sentence(&mut state, &mut critic, &cfg.channel, &data.train, metric.as_ref(), &tc, wall)?;
            Ok((state, log))
        }
        Regime::BaselineRs => unreachable!("the classical chain has no trainable model"),
    }
}

fn image_draws(cfg: &ExperimentConfig, n: usize, symbols: usize, kind: ChannelKind, snr: f64, seed: u64) -> Vec<crate::channel::ChannelDraw> {
    let spec = ChannelSpec {
        kind,
        snr_db: snr,
        ..cfg.channel.clone()
    };
    let mut rng = cell_rng(seed, kind, snr);
    (0..n).map(|_| spec.draw(1, symbols, &mut rng)).collect()
}

fn image_row(cfg: &ExperimentConfig, kind: ChannelKind, snr: f64, seed: u64, n: usize, mse: (Option<f64>, f64)) -> SummaryRow {
    SummaryRow {
        schema_version: SUMMARY_SCHEMA,
        task: "image".into(),
        regime: cfg.regime.as_str().into(),
        channel: kind.to_string(),
        snr_db: snr,
        seed,
        n_messages: n,
        wer: None,
        wer_positional: None,
        bleu: None,
        cider_d: None,
        mse_initial: mse.0,
        mse_final: Some(mse.1),
        distill_enc_mean: None,
        distill_dec_mean: None,
        symbols_per_message: cfg.image.symbols as f64,
    }
}

fn run_images(cfg: &ExperimentConfig, evaluate: bool, out: &mut RunOutcome) -> Result<()> {
    let (train, eval) = prepare_images(cfg)?;
    let eval = eval_subset(&eval, cfg.eval.messages);
    let shape = cfg.image_shape();
    let s = cfg.image.symbols;
    for &seed in &cfg.seeds {
        let dir = seed_dir(cfg, seed)?;
        let tc = cfg.train_for_seed(seed);
        log::info!("image {} seed {seed}", cfg.regime.as_str());
        match cfg.regime {
            Regime::SscD => {
                let mut codec = ImageCodec::new(&cfg.image, shape, seed)?;
                let metric = metric_by_name(&tc.metric, None)?;
                let log = train_ssc_d_image(&mut codec, &cfg.channel, &train, metric.as_ref(), &tc, cfg.log_wall_time)?;
                log.save_csv(&dir.join("metrics.csv"))?;
                codec.save(&dir.join("model.ckpt"), tc.steps as u64)?;
                if evaluate {
                    for kind in cfg.eval_channels() {
                        for &snr in &cfg.snr_grid {
                            let draws = image_draws(cfg, eval.len(), s, kind, snr, seed);
                            let m = reconstruction_mse(&codec, eval, &draws)?;
                            out.summary.push(image_row(cfg, kind, snr, seed, eval.len(), (None, m)));
                        }
                    }
                }
                out.logs.push((seed, log));
            }
            Regime::SscNd => {
                let mut policy = ImagePolicy::new(&cfg.image, shape, tc.noop_action, seed)?;
                let p = policy.pixels();
                let mut critic = Critic::new(s + p, tc.critic_hidden, p, seed);
                let log = train_ssc_nd_image(&mut policy, &mut critic, &cfg.channel, &train, &tc, cfg.log_wall_time)?;
                log.save_csv(&dir.join("metrics.csv"))?;
                policy.save(&dir.join("model.ckpt"), tc.steps as u64)?;
                if evaluate {
                    for kind in cfg.eval_channels() {
                        for &snr in &cfg.snr_grid {
                            let draws = image_draws(cfg, eval.len(), s, kind, snr, seed);
                            let (m0, mt) = evaluate_image_policy(&policy, eval, &draws, tc.rollout_len, tc.pixel_step)?;
                            out.summary.push(image_row(cfg, kind, snr, seed, eval.len(), (Some(m0), mt)));
                        }
                    }
                }
                out.logs.push((seed, log));
            }
            Regime::Ce | Regime::BaselineRs => unreachable!("rejected by validation"),
        }
    }
    Ok(())
}

fn run_sentences(cfg: &ExperimentConfig, evaluate: bool, out: &mut RunOutcome) -> Result<()> {
    let data = prepare_sentences(cfg)?;
    data.vocab.save(&cfg.output_dir.join("vocab.txt"))?;
    let eval_msgs = eval_subset(&data.eval, cfg.eval.messages);
    let kinds = cfg.eval_channels();
    for &seed in &cfg.seeds {
        let dir = seed_dir(cfg, seed)?;
        log::info!("sentence {} seed {seed}", cfg.regime.as_str());
        if cfg.regime == Regime::BaselineRs {
            if evaluate {
                let texts = eval_subset(&data.eval_lines, cfg.eval.messages);
                let rows = report::baseline_sweep(
                    texts,
                    &data.vocab,
                    &data.eval_idf,
                    &cfg.rs,
                    &cfg.snr_grid,
                    &kinds,
                    &[seed],
                    cfg.eval.bleu_n,
                )?;
                out.summary.extend(rows);
            }
            continue;
        }
        let (state, log) = train_sentence_model(cfg, &data, seed, &dir)?;
        log.save_csv(&dir.join("metrics.csv"))?;
        save_codec(&dir.join("model.ckpt"), &state, &data.vocab, cfg.train.steps as u64)?;
        if evaluate {
            let mut table = eval_sweep(&state, eval_msgs, &data.eval_idf, &cfg.snr_grid, &kinds, &[seed], cfg.eval.bleu_n)?;
            for r in &mut table.rows {
                r.regime = cfg.regime.as_str().into();
            }
            out.summary.extend(table.rows);
            out.lengths.extend(table.lengths);
        }
        out.logs.push((seed, log));
    }
    Ok(())
}

fn execute(cfg: &ExperimentConfig, force: bool, evaluate: bool) -> Result<RunOutcome> {
    cfg.validate()?;
    prepare_output_dir(&cfg.output_dir, force)?;
    let snapshot = cfg.output_dir.join("config.toml");
    fs::write(&snapshot, cfg.to_toml()?).map_err(|e| Error::io(&snapshot, e))?;
    let mut out = RunOutcome::default();
    match cfg.task {
        Task::Sentence => run_sentences(cfg, evaluate, &mut out)?,
        Task::Image => run_images(cfg, evaluate, &mut out)?,
    }
    if evaluate {
        write_summary(&cfg.output_dir.join("summary.csv"), &out.summary)?;
        if cfg.task == Task::Sentence && cfg.regime != Regime::BaselineRs {
            write_lengths(&cfg.output_dir.join("length_breakdown.csv"), &out.lengths)?;
        }
    }
    Ok(out)
}

/// Trains every seed, evaluates the SNR grid and writes metrics, checkpoints,
/// the config snapshot, `summary.csv` and `length_breakdown.csv`.
pub fn run(cfg: &ExperimentConfig, force: bool) -> Result<RunOutcome> {
    execute(cfg, force, true)
}

/// Like [`run`] without the evaluation sweep.
pub fn train_only(cfg: &ExperimentConfig, force: bool) -> Result<RunOutcome> {
    execute(cfg, force, false)
}

/// Evaluates a saved model over the configured grid and channels. The
/// checkpoint kind selects the evaluation (sentence transceiver, image
/// autoencoder or image policy); its vocabulary or image shape must match
/// the configured data.
pub fn eval_checkpoint(cfg: &ExperimentConfig, path: &Path, seeds: &[u64]) -> Result<EvalTable> {
    let ck_kind = crate::codec::Checkpoint::read(path)?.kind;
    let wrong_task = || Error::Checkpoint(format!("{ck_kind} checkpoint does not fit a {} config", cfg.task.as_str()));
    match ck_kind.as_str() {
        "codec" => {
            if cfg.task != Task::Sentence {
                return Err(wrong_task());
            }
            let (state, vocab, _) = load_codec(path)?;
            let data = prepare_sentences(cfg)?;
            if vocab != data.vocab {
                return Err(Error::Checkpoint(format!(
                    "vocabulary of {} does not match the configured corpus",
                    path.display()
                )));
            }
            let msgs = eval_subset(&data.eval, cfg.eval.messages);
            let mut table =
                eval_sweep(&state, msgs, &data.eval_idf, &cfg.snr_grid, &cfg.eval_channels(), seeds, cfg.eval.bleu_n)?;
            for r in &mut table.rows {
                r.regime = cfg.regime.as_str().into();
            }
            Ok(table)
        }
        "image_codec" | "image_policy" => {
            if cfg.task != Task::Image {
                return Err(wrong_task());
            }
            let (_, eval) = prepare_images(cfg)?;
            let eval = eval_subset(&eval, cfg.eval.messages);
            let codec = if ck_kind == "image_codec" { Some(ImageCodec::load(path)?.0) } else { None };
            let policy = if ck_kind == "image_policy" { Some(ImagePolicy::load(path)?.0) } else { None };
            let (shape, symbols) = match (&codec, &policy) {
                (Some(c), _) => (c.shape(), c.config().symbols),
                (_, Some(p)) => (p.shape(), p.config().symbols),
                _ => unreachable!(),
            };
            if shape != cfg.image_shape() {
                return Err(Error::Checkpoint(format!(
                    "checkpoint images are {shape:?}, config uses {:?}",
                    cfg.image_shape()
                )));
            }
            let mut table = EvalTable::default();
            for &seed in seeds {
                for kind in cfg.eval_channels() {
                    for &snr in &cfg.snr_grid {
                        let draws = image_draws(cfg, eval.len(), symbols, kind, snr, seed);
                        let mse = match (&codec, &policy) {
                            (Some(c), _) => (None, reconstruction_mse(c, eval, &draws)?),
                            (_, Some(p)) => {
                                let (m0, mt) =
                                    evaluate_image_policy(p, eval, &draws, cfg.train.rollout_len, cfg.train.pixel_step)?;
                                (Some(m0), mt)
                            }
                            _ => unreachable!(),
                        };
                        let mut row = image_row(cfg, kind, snr, seed, eval.len(), mse);
                        row.symbols_per_message = symbols as f64;
                        table.rows.push(row);
                    }
                }
            }
            Ok(table)
        }
        other => Err(Error::Checkpoint(format!("unsupported checkpoint kind {other}"))),
    }
}
