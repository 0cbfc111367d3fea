use std::fmt::Write as _;

use serde::Serialize;

use super::run::{cell_rng, mean, transmit_all, SummaryRow, SUMMARY_SCHEMA};
use crate::baselines::{classical_chain, wire_bits, RsCode};
use crate::channel::{ChannelKind, ChannelSpec};
use crate::codec::{transmit_message, CodecState};
use crate::corpus::{decode_ids, encode_text, tokenize, TokenSequence, Vocabulary, UNK};
use crate::metrics::{bleu, positional_wer, wer, IdfTable};
use crate::rng;
use crate::{Error, Result};

/// Measurable transmission overhead per message.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OverheadReport {
    /// Real channel uses (L·k for the neural path, one per bit for BPSK).
    pub channel_symbols_per_message: f64,
    /// Bits on the wire of the classical chain for the same messages.
    pub bits_equivalent: f64,
    /// Mean encoder + decoder refinement passes (0 for the classical chain).
    pub local_distill_passes: f64,
    pub encoder_passes: f64,
    pub decoder_passes: f64,
}

fn mean_wire_bits(texts: &[String], code: &RsCode) -> Result<f64> {
    code.validate()?;
    Ok(mean(texts.iter().map(|t| wire_bits(&normalise(t), code) as f64)))
}

fn normalise(text: &str) -> String {
    tokenize(text).join(" ")
}

/// Overhead of a transceiver on `messages` (with their source `texts`, used
/// for the classical-chain bit count) under one channel cell. Pass counts use
/// the same noise stream as [`super::eval_sweep`] for that cell.
pub fn overhead_report(
    state: &CodecState,
    messages: &[TokenSequence],
    texts: &[String],
    code: &RsCode,
    channel: &ChannelSpec,
    seed: u64,
) -> Result<OverheadReport> {
    if messages.is_empty() || messages.len() != texts.len() {
        return Err(Error::InvalidArgument("need one text per message".into()));
    }
    let outs = transmit_all(state, messages, None, channel, seed, 1)?;
    let enc = mean(outs.iter().map(|o| o.enc_steps as f64));
    let dec = mean(outs.iter().map(|o| o.dec_steps as f64));
    Ok(OverheadReport {
        channel_symbols_per_message: mean(outs.iter().map(|o| o.symbols as f64)),
        bits_equivalent: mean_wire_bits(texts, code)?,
        local_distill_passes: enc + dec,
        encoder_passes: enc,
        decoder_passes: dec,
    })
}

/// Overhead of the classical chain alone.
pub fn overhead_report_rs(texts: &[String], code: &RsCode) -> Result<OverheadReport> {
    if texts.is_empty() {
        return Err(Error::InvalidArgument("no messages".into()));
    }
    let bits = mean_wire_bits(texts, code)?;
    Ok(OverheadReport {
        channel_symbols_per_message: bits,
        bits_equivalent: bits,
        local_distill_passes: 0.0,
        encoder_passes: 0.0,
        decoder_passes: 0.0,
    })
}

fn word_ids(words: &[String], vocab: &Vocabulary) -> Vec<u32> {
    words.iter().map(|w| vocab.id(w).unwrap_or(UNK)).collect()
}

/// The classical chain over `snr_grid × kinds × seeds`, scored like the neural sweeps.
#[allow(clippy::too_many_arguments)]
pub fn baseline_sweep(
    texts: &[String],
    vocab: &Vocabulary,
    idf: &IdfTable<u32>,
    code: &RsCode,
    snr_grid: &[f64],
    kinds: &[ChannelKind],
    seeds: &[u64],
    bleu_n: usize,
) -> Result<Vec<SummaryRow>> {
    code.validate()?;
    let texts: Vec<String> = texts.iter().map(|t| normalise(t)).filter(|t| !t.is_empty()).collect();
    if texts.is_empty() {
        return Err(Error::InvalidArgument("no messages".into()));
    }
    let mut rows = Vec::new();
    for &seed in seeds {
        for &kind in kinds {
            for &snr in snr_grid {
                let spec = ChannelSpec::new(kind, snr);
                let mut rng = cell_rng(seed, kind, snr);
                let (mut w, mut pw, mut b, mut c, mut bits) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for text in &texts {
                    let res = classical_chain(text, code, &spec, &mut rng)?;
                    let reference = tokenize(text);
                    let hyp = tokenize(&res.decoded);
                    w += wer(&reference, &hyp)?;
                    pw += positional_wer(&reference, &hyp)?;
                    b += bleu(std::slice::from_ref(&reference), &hyp, bleu_n);
                    let ref_ids = word_ids(&reference, vocab);
                    c += idf.cider_d(std::slice::from_ref(&ref_ids), &word_ids(&hyp, vocab));
                    bits += res.bits_sent as f64;
                }
                let n = texts.len() as f64;
                rows.push(SummaryRow {
                    schema_version: SUMMARY_SCHEMA,
                    task: "sentence".into(),
                    regime: "baseline_rs".into(),
                    channel: kind.to_string(),
                    snr_db: snr,
                    seed,
                    n_messages: texts.len(),
                    wer: Some(w / n),
                    wer_positional: Some(pw / n),
                    bleu: Some(b / n),
                    cider_d: Some(c / n),
                    mse_initial: None,
                    mse_final: None,
                    distill_enc_mean: None,
                    distill_dec_mean: None,
                    symbols_per_message: bits / n,
                });
            }
        }
    }
    Ok(rows)
}

/// One input sentence and its repeated decodes from both models.
#[derive(Clone, Debug, PartialEq)]
pub struct DumpBlock {
    pub input: String,
    pub ce: Vec<String>,
    pub rl: Vec<String>,
}

/// Sends each sentence `n_repeats` times through each model under fresh
/// channel noise.
pub fn qualitative_dump(
    ce: (&CodecState, &Vocabulary),
    rl: (&CodecState, &Vocabulary),
    sentences: &[String],
    channel: &ChannelSpec,
    n_repeats: usize,
    seed: u64,
) -> Result<Vec<DumpBlock>> {
    channel.validate()?;
    let mut rng_ce = rng::substream(seed, "dump/ce");
    let mut rng_rl = rng::substream(seed, "dump/rl");
    let decode = |(state, vocab): (&CodecState, &Vocabulary), text: &str, r: &mut rng::Rng| -> Result<Vec<String>> {
        let msg = encode_text(text, vocab, state.config().max_len)?;
        (0..n_repeats)
            .map(|_| Ok(decode_ids(transmit_message(&msg, state, channel, r)?.content(), vocab)))
            .collect()
    };
    sentences
        .iter()
        .map(|s| {
            Ok(DumpBlock {
                input: normalise(s),
                ce: decode(ce, s, &mut rng_ce)?,
                rl: decode(rl, s, &mut rng_rl)?,
            })
        })
        .collect()
}

/// Text layout: one block per input, the input line followed by every CE
/// decode and then every RL decode, blocks separated by a blank line.
pub fn format_dump(blocks: &[DumpBlock], channel: &ChannelSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# channel {} at {} dB", channel.kind, channel.snr_db);
    for (i, b) in blocks.iter().enumerate() {
        let _ = writeln!(out);
        let _ = writeln!(out, "[{}] input : {}", i + 1, b.input);
        for (r, s) in b.ce.iter().enumerate() {
            let _ = writeln!(out, "    ce #{} : {s}", r + 1);
        }
        for (r, s) in b.rl.iter().enumerate() {
            let _ = writeln!(out, "    rl #{} : {s}", r + 1);
        }
    }
    out
}
