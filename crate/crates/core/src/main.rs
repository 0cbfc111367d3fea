use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use semcom::baselines::RsCode;
use semcom::channel::{ChannelKind, ChannelSpec};
use semcom::codec::load_codec;
use semcom::harness::{
    self, eval_checkpoint, format_dump, overhead_report, overhead_report_rs, qualitative_dump, write_lengths,
    write_summary, ExperimentConfig, Regime, Task,
};
use semcom::{Error, Result};

#[derive(Parser)]
#[command(name = "semcom", version, about = "Semantic communication experiments")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Overwrite an existing output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Scheme {
    /// 5-bit source code, Reed-Solomon over GF(32), BPSK.
    Rs,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one model per seed and save checkpoints.
    Train(Common),
    /// Train and evaluate over the SNR grid.
    Sweep(Common),
    /// Evaluate a checkpoint over the configured SNR grid and channels.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory; defaults to `<output_dir>/eval`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the 5-bit + Reed-Solomon + BPSK chain over the configured grid.
    Baseline {
        #[arg(value_enum)]
        scheme: Scheme,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long = "k-rs", alias = "k")]
        k: Option<usize>,
        /// Comma-separated SNRs in dB; replaces the config's snr_grid.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        snr_grid: Option<Vec<f64>>,
        /// Output directory; defaults to the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Channel uses, bit equivalent and local passes per message (JSON on stdout).
    Overhead {
        #[arg(long)]
        config: PathBuf,
        /// Transceiver checkpoint; without it only the classical chain is reported.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        snr: Option<f64>,
        #[arg(long)]
        channel: Option<ChannelKind>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Side-by-side decodes of held-out sentences from two checkpoints.
    Dump {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ce: PathBuf,
        #[arg(long)]
        rl: PathBuf,
        #[arg(long, default_value_t = 3)]
        sentences: usize,
        #[arg(long, default_value_t = 2)]
        repeats: usize,
        #[arg(long)]
        snr: Option<f64>,
        #[arg(long)]
        channel: Option<ChannelKind>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render figures (SVG + CSV) from summary files or run directories.
    Plot {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    Ok(cfg)
}

fn cell_spec(cfg: &ExperimentConfig, snr: Option<f64>, channel: Option<ChannelKind>) -> Result<ChannelSpec> {
    let mut spec = cfg.channel.clone();
    if let Some(k) = channel {
        spec.kind = k;
    }
    if let Some(s) = snr {
        spec.snr_db = s;
    }
    spec.validate()?;
    Ok(spec)
}

fn fresh_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !force {
            return Err(Error::OutputExists(dir.to_path_buf()));
        }
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Train(c) => {
            let cfg = load_config(&c.config, c.seed)?;
            harness::train_only(&cfg, c.force)?;
            println!("checkpoints written under {}", cfg.output_dir.display());
        }
        Cmd::Sweep(c) => {
            let cfg = load_config(&c.config, c.seed)?;
            let out = harness::run(&cfg, c.force)?;
            println!("{} summary rows written to {}", out.summary.len(), cfg.output_dir.join("summary.csv").display());
        }
        Cmd::Eval { common, checkpoint, out } => {
            let cfg = load_config(&common.config, common.seed)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.join("eval"));
            let table = eval_checkpoint(&cfg, &checkpoint, &cfg.seeds)?;
            fresh_dir(&dir, common.force)?;
            write_summary(&dir.join("summary.csv"), &table.rows)?;
            if !table.lengths.is_empty() {
                write_lengths(&dir.join("length_breakdown.csv"), &table.lengths)?;
            }
            println!("{} summary rows written to {}", table.rows.len(), dir.join("summary.csv").display());
        }
        Cmd::Baseline {
            scheme: Scheme::Rs,
            common,
            n,
            k,
            snr_grid,
            out,
        } => {
            let mut cfg = load_config(&common.config, common.seed)?;
            if cfg.task != Task::Sentence {
                return Err(Error::Config(vec!["the classical baseline only applies to the sentence task".into()]));
            }
            cfg.regime = Regime::BaselineRs;
            cfg.rs = RsCode {
                n: n.unwrap_or(cfg.rs.n),
                k: k.unwrap_or(cfg.rs.k),
            };
            if let Some(grid) = snr_grid {
                cfg.snr_grid = grid;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            cfg.validate()?;
            let res = harness::run(&cfg, common.force)?;
            println!("{} summary rows written to {}", res.summary.len(), cfg.output_dir.join("summary.csv").display());
        }
        Cmd::Overhead {
            config,
            checkpoint,
            snr,
            channel,
            seed,
        } => {
            let cfg = load_config(&config, None)?;
            let spec = cell_spec(&cfg, snr, channel)?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let data = harness::prepare_sentences(&cfg)?;
            let report = match checkpoint {
                Some(path) => {
                    let (state, vocab, _) = load_codec(&path)?;
                    let texts = &data.eval_lines;
                    let msgs = texts
                        .iter()
                        .map(|t| semcom::corpus::encode_text(t, &vocab, state.config().max_len))
                        .collect::<Result<Vec<_>>>()?;
                    overhead_report(&state, &msgs, texts, &cfg.rs, &spec, seed)?
                }
                None => overhead_report_rs(&data.eval_lines, &cfg.rs)?,
            };
            println!("{}", serde_json::to_string_pretty(&report).map_err(|e| Error::InvalidArgument(e.to_string()))?);
        }
        Cmd::Dump {
            config,
            ce,
            rl,
            sentences,
            repeats,
            snr,
            channel,
            seed,
            out,
        } => {
            let cfg = load_config(&config, None)?;
            let spec = cell_spec(&cfg, snr, channel)?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let data = harness::prepare_sentences(&cfg)?;
            let picked: Vec<String> = data.eval_lines.iter().take(sentences).cloned().collect();
            let (ce_state, ce_vocab, _) = load_codec(&ce)?;
            let (rl_state, rl_vocab, _) = load_codec(&rl)?;
            let blocks = qualitative_dump((&ce_state, &ce_vocab), (&rl_state, &rl_vocab), &picked, &spec, repeats, seed)?;
            let text = format_dump(&blocks, &spec);
            match out {
                Some(p) => fs::write(&p, text).map_err(|e| Error::io(&p, e))?,
                None => print!("{text}"),
            }
        }
        Cmd::Plot { inputs, out } => {
            let report = harness::plot(&inputs, &out)?;
            for p in &report.written {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::OutputExists(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
