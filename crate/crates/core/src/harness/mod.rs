//! Experiment configuration, training/evaluation sweeps, overhead accounting,
//! qualitative dumps and plots. The `semcom` binary is a thin CLI over this
//! module.

mod plot;
mod report;
mod run;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use plot::{plot, PlotReport};
pub use report::{
    baseline_sweep, format_dump, overhead_report, overhead_report_rs, qualitative_dump, DumpBlock, OverheadReport,
};
pub use run::{
    eval_checkpoint, eval_sweep, read_lengths, read_summary, run, train_only, write_lengths, write_summary, EvalTable, LengthRow,
    RunOutcome, SummaryRow, SUMMARY_SCHEMA,
};

use crate::baselines::RsCode;
use crate::channel::{ChannelKind, ChannelSpec};
use crate::codec::CodecConfig;
use crate::corpus::{
    build_vocab, encode_text, generate_toy_corpus, generate_toy_images, load_corpus, tokenize, ImageMessage,
    TokenSequence, Vocabulary,
};
use crate::metrics::IdfTable;
use crate::training::{ImageCodecConfig, TrainConfig};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Sentence,
    Image,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Ce,
    SscD,
    SscNd,
    BaselineRs,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Sentence => "sentence",
            Task::Image => "image",
        }
    }
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Ce => "ce",
            Regime::SscD => "ssc_d",
            Regime::SscNd => "ssc_nd",
            Regime::BaselineRs => "baseline_rs",
        }
    }
}

/// Where messages come from. Without `corpus` a templated toy corpus is generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub corpus: Option<PathBuf>,
    pub toy_seed: u64,
    pub toy_lines: usize,
    pub toy_len: [usize; 2],
    pub toy_vocab: usize,
    /// Lines held out from the end of the corpus for evaluation.
    pub eval_lines: usize,
    pub min_freq: usize,
    pub images: usize,
    pub eval_images: usize,
    pub image_size: [usize; 3],
    /// Starting checkpoint for the reinforcement-learning regime.
    pub init_checkpoint: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            corpus: None,
            toy_seed: 1,
            toy_lines: 1000,
            toy_len: [4, 20],
            toy_vocab: 60,
            eval_lines: 200,
            min_freq: 1,
            images: 250,
            eval_images: 50,
            image_size: [8, 8, 1],
            init_checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Channel kinds to evaluate on; empty means the training channel only.
    pub channels: Vec<ChannelKind>,
    /// Evaluation messages per cell; 0 uses the whole held-out set.
    pub messages: usize,
    pub bleu_n: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            channels: Vec::new(),
            messages: 0,
            bleu_n: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub regime: Regime,
    /// Evaluation SNRs in dB, strictly increasing.
    pub snr_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Record real elapsed time in metric logs (breaks byte-identical reruns).
    #[serde(default)]
    pub log_wall_time: bool,
    /// Training channel.
    pub channel: ChannelSpec,
    #[serde(default)]
    pub codec: CodecConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub image: ImageCodecConfig,
    #[serde(default)]
    pub rs: RsCode,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn collect(errs: &mut Vec<String>, r: Result<()>) {
    match r {
        Ok(()) => {}
        Err(Error::Config(v)) => errs.extend(v),
        Err(e) => errs.push(e.to_string()),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(vec![e.message().to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    /// Checks every section and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.snr_grid.is_empty() {
            errs.push("snr_grid must not be empty".into());
        }
        if self.snr_grid.iter().any(|s| !s.is_finite()) {
            errs.push("snr_grid entries must be finite".into());
        }
        if self.snr_grid.windows(2).any(|w| w[1] <= w[0]) {
            errs.push("snr_grid must be strictly increasing".into());
        }
        if self.seeds.is_empty() {
            errs.push("seeds must not be empty".into());
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            errs.push("seeds must be distinct".into());
        }
        match (self.task, self.regime) {
            (Task::Image, Regime::Ce) | (Task::Image, Regime::BaselineRs) => errs.push(format!(
                "regime {} is not available for the image task",
                self.regime.as_str()
            )),
            _ => {}
        }
        collect(&mut errs, self.channel.validate());
        collect(&mut errs, self.train.validate());
        if self.task == Task::Sentence && self.regime != Regime::BaselineRs {
            collect(&mut errs, self.codec.validate());
        }
        if self.task == Task::Image {
            collect(&mut errs, self.image.validate());
        }
        if self.regime == Regime::BaselineRs {
            collect(&mut errs, self.rs.validate());
        }
        if self.regime == Regime::SscD || self.regime == Regime::SscNd {
            let known = ["cider_d", "bleu", "neg_wer", "neg_mse", "mse_gain", "masked_ce", "ce"];
            if !known.contains(&self.train.metric.as_str()) {
                errs.push(format!("train.metric `{}` is not a known metric", self.train.metric));
            }
            if self.regime == Regime::SscD {
                let ok = match self.task {
                    Task::Sentence => ["masked_ce", "ce"].contains(&self.train.metric.as_str()),
                    Task::Image => ["neg_mse", "mse_gain"].contains(&self.train.metric.as_str()),
                };
                if !ok {
                    errs.push(format!(
                        "train.metric `{}` is not differentiable for the {} task; use regime ssc_nd",
                        self.train.metric,
                        self.task.as_str()
                    ));
                }
            }
        }
        let d = &self.data;
        if let Some(p) = &d.corpus {
            if !p.is_file() {
                errs.push(format!("data.corpus {} does not exist", p.display()));
            }
        }
        if let Some(p) = &d.init_checkpoint {
            if !p.is_file() {
                errs.push(format!("data.init_checkpoint {} does not exist", p.display()));
            }
        }
        if d.toy_len[0] < 4 || d.toy_len[0] > d.toy_len[1] {
            errs.push("data.toy_len must satisfy 4 <= min <= max".into());
        }
        if d.toy_vocab < 10 {
            errs.push("data.toy_vocab must be >= 10".into());
        }
        if d.min_freq < 1 {
            errs.push("data.min_freq must be >= 1".into());
        }
        if d.eval_lines < 1 || (d.corpus.is_none() && d.eval_lines >= d.toy_lines) {
            errs.push("data.eval_lines must be >= 1 and leave training lines".into());
        }
        if d.eval_images < 1 || d.eval_images >= d.images {
            errs.push("data.eval_images must be >= 1 and below data.images".into());
        }
        if d.image_size.contains(&0) || d.image_size[0] > 32 || d.image_size[1] > 32 {
            errs.push("data.image_size must be positive with height and width <= 32".into());
        }
        if self.eval.bleu_n < 1 {
            errs.push("eval.bleu_n must be >= 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Channel kinds evaluated by sweeps.
    pub fn eval_channels(&self) -> Vec<ChannelKind> {
        if self.eval.channels.is_empty() {
            vec![self.channel.kind]
        } else {
            self.eval.channels.clone()
        }
    }

    /// The training configuration with its seed replaced.
    pub fn train_for_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        let [h, w, c] = self.data.image_size;
        (h, w, c)
    }
}

/// Tokenised training and held-out messages with their vocabulary.
#[derive(Clone, Debug)]
pub struct SentenceData {
    pub vocab: Vocabulary,
    pub train_lines: Vec<String>,
    pub eval_lines: Vec<String>,
    pub train: Vec<TokenSequence>,
    pub eval: Vec<TokenSequence>,
    /// Document frequencies over the training references (reward shaping).
    pub train_idf: IdfTable<u32>,
    /// Document frequencies over the evaluation references.
    pub eval_idf: IdfTable<u32>,
}

/// Loads or generates the corpus, drops empty and over-long lines, splits off
/// the held-out tail and builds the vocabulary from the training part.
pub fn prepare_sentences(cfg: &ExperimentConfig) -> Result<SentenceData> {
    let d = &cfg.data;
    let raw = match &d.corpus {
        Some(p) => load_corpus(p)?,
        None => generate_toy_corpus(d.toy_seed, d.toy_lines, (d.toy_len[0], d.toy_len[1]), d.toy_vocab)?,
    };
    let max_words = cfg.codec.max_len.saturating_sub(2);
    let lines: Vec<String> = raw
        .into_iter()
        .filter(|l| {
            let n = tokenize(l).len();
            n >= 1 && n <= max_words
        })
        .collect();
    if lines.len() <= d.eval_lines {
        return Err(Error::Config(vec![format!(
            "corpus has {} usable lines, fewer than data.eval_lines + 1 = {}",
            lines.len(),
            d.eval_lines + 1
        )]));
    }
    let split = lines.len() - d.eval_lines;
    let train_lines = lines[..split].to_vec();
    let eval_lines = lines[split..].to_vec();
    let vocab = build_vocab(&train_lines, d.min_freq)?;
    let enc = |ls: &[String]| -> Result<Vec<TokenSequence>> {
        ls.iter().map(|l| encode_text(l, &vocab, cfg.codec.max_len)).collect()
    };
    let train = enc(&train_lines)?;
    let eval = enc(&eval_lines)?;
    let refs = |ms: &[TokenSequence]| -> Vec<Vec<u32>> { ms.iter().map(|m| m.content().to_vec()).collect() };
    let train_idf = IdfTable::from_sentences(&refs(&train))?;
    let eval_idf = IdfTable::from_sentences(&refs(&eval))?;
    Ok(SentenceData {
        vocab,
        train_lines,
        eval_lines,
        train,
        eval,
        train_idf,
        eval_idf,
    })
}

/// Toy images split into training and held-out sets.
pub fn prepare_images(cfg: &ExperimentConfig) -> Result<(Vec<ImageMessage>, Vec<ImageMessage>)> {
    let d = &cfg.data;
    let mut all = generate_toy_images(d.toy_seed, d.images, cfg.image_shape())?;
    let eval = all.split_off(d.images - d.eval_images);
    Ok((all, eval))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
task = "sentence"
regime = "ce"
snr_grid = [0.0, 10.0]
seeds = [1]
output_dir = "out"

[channel]
kind = "awgn"
snr_db = 10.0
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.codec, CodecConfig::default());
        assert_eq!(cfg.eval_channels(), vec![ChannelKind::Awgn]);
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[train]\nlearning_rate = 0.1\n");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::Config(_))));
        let text = MINIMAL.replace("seeds = [1]", "seeds = [1]\nsnr_grid_db = [1.0]");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::Config(_))));
    }

    #[test]
    fn every_violation_is_listed() {
        let text = MINIMAL
            .replace("snr_grid = [0.0, 10.0]", "snr_grid = [10.0, 0.0]")
            .replace("seeds = [1]", "seeds = []")
            .replace("snr_db = 10.0", "snr_db = 10.0\n[codec]\nmax_distill = 0\n[data]\ncorpus = \"/nonexistent/corpus.txt\"");
        match ExperimentConfig::from_toml_str(&text) {
            Err(Error::Config(v)) => {
                assert!(v.len() >= 4, "{v:?}");
                assert!(v.iter().any(|m| m.contains("strictly increasing")));
                assert!(v.iter().any(|m| m.contains("seeds")));
                assert!(v.iter().any(|m| m.contains("corpus")));
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn differentiability_is_checked_for_ssc_d() {
        let text = MINIMAL.replace("regime = \"ce\"", "regime = \"ssc_d\"");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("not differentiable"), "{err}");
    }

    #[test]
    fn sentence_split_is_disjoint_and_sized() {
        let mut cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        cfg.data.toy_lines = 120;
        cfg.data.eval_lines = 20;
        let d = prepare_sentences(&cfg).unwrap();
        assert_eq!(d.eval.len(), 20);
        assert_eq!(d.train.len() + d.eval.len(), 120);
        assert_eq!(d.eval_idf.num_docs(), 20);
    }
}
