//! Python bindings for semcom.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use semcom::baselines::{classical_chain, RsCode};
use semcom::channel::{ChannelSpec, SymbolBlock};
use semcom::codec::{load_codec, save_codec, semantic_decode, semantic_encode, transmit_message, CodecConfig, CodecState, Mode};
use semcom::corpus::{build_vocab, decode_ids, encode_text, generate_toy_corpus, tokenize};
use semcom::harness::{run, ExperimentConfig};
use semcom::metrics::IdfTable;
use semcom::{rng, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn words(s: &str) -> Vec<String> {
    tokenize(s)
}

#[pyclass(name = "Vocabulary", module = "pysemcom", skip_from_py_object)]
#[derive(Clone)]
struct PyVocabulary {
    inner: semcom::corpus::Vocabulary,
}

#[pymethods]
impl PyVocabulary {
    /// Builds a vocabulary from whitespace-tokenised lines.
    #[staticmethod]
    #[pyo3(signature = (lines, min_freq = 1))]
    fn build(lines: Vec<String>, min_freq: usize) -> PyResult<Self> {
        Ok(PyVocabulary {
            inner: build_vocab(&lines, min_freq).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyVocabulary {
            inner: semcom::corpus::Vocabulary::load(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn id(&self, token: &str) -> Option<u32> {
        self.inner.id(token)
    }

    fn token(&self, id: u32) -> Option<String> {
        self.inner.token(id).map(String::from)
    }

    /// `[BOS, ids.., EOS]`, truncated to `max_len`.
    fn encode(&self, line: &str, max_len: usize) -> PyResult<Vec<u32>> {
        Ok(encode_text(line, &self.inner, max_len).map_err(py_err)?.ids().to_vec())
    }

    fn decode(&self, ids: Vec<u32>) -> String {
        decode_ids(&ids, &self.inner)
    }
}

#[pyclass(name = "Channel", module = "pysemcom", skip_from_py_object)]
#[derive(Clone)]
struct PyChannel {
    inner: ChannelSpec,
}

#[pymethods]
impl PyChannel {
    /// `kind` is "awgn" or "fif".
    #[new]
    fn new(kind: &str, snr_db: f64) -> PyResult<Self> {
        let kind = kind.parse().map_err(py_err)?;
        let inner = ChannelSpec::new(kind, snr_db);
        inner.validate().map_err(py_err)?;
        Ok(PyChannel { inner })
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind.as_str().to_string()
    }

    #[getter]
    fn snr_db(&self) -> f64 {
        self.inner.snr_db
    }

    #[getter]
    fn noise_variance(&self) -> f64 {
        self.inner.noise_variance()
    }

    /// Passes a block of real symbols (list of rows) through one channel realisation.
    fn transmit(&self, symbols: Vec<Vec<f64>>, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let x = SymbolBlock::from_rows(&symbols).map_err(py_err)?;
        let mut r = rng::seeded(seed);
        let y = self.inner.draw(x.shape().0, x.shape().1, &mut r).apply(&x).map_err(py_err)?;
        Ok(rows(y.symbols()))
    }

    fn __repr__(&self) -> String {
        format!("Channel({:?}, {})", self.inner.kind.as_str(), self.inner.snr_db)
    }
}

fn rows(m: &semcom::autograd::Mat) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Confidence-gated transceiver together with its vocabulary.
#[pyclass(name = "Codec", module = "pysemcom")]
struct PyCodec {
    state: CodecState,
    vocab: semcom::corpus::Vocabulary,
}

#[pymethods]
impl PyCodec {
    /// Fresh, untrained codec. Keyword arguments override the default configuration.
    #[new]
    #[pyo3(signature = (vocab, seed = 0, **config))]
    fn new(vocab: &PyVocabulary, seed: u64, config: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut cfg = CodecConfig::default();
        if let Some(kw) = config {
            for (k, v) in kw.iter() {
                let key: String = k.extract()?;
                match key.as_str() {
                    "embed_dim" => cfg.embed_dim = v.extract()?,
                    "n_layers" => cfg.n_layers = v.extract()?,
                    "n_heads" => cfg.n_heads = v.extract()?,
                    "ffn_dim" => cfg.ffn_dim = v.extract()?,
                    "max_distill" => cfg.max_distill = v.extract()?,
                    "confidence_threshold" => cfg.confidence_threshold = v.extract()?,
                    "symbols_per_token" => cfg.symbols_per_token = v.extract()?,
                    "ponder_cost" => cfg.ponder_cost = v.extract()?,
                    "max_len" => cfg.max_len = v.extract()?,
                    "share_distill_weights" => cfg.share_distill_weights = v.extract()?,
                    other => return Err(PyValueError::new_err(format!("unknown codec option `{other}`"))),
                }
            }
        }
        let state = CodecState::new(&cfg, vocab.inner.len(), seed).map_err(py_err)?;
        Ok(PyCodec {
            state,
            vocab: vocab.inner.clone(),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (state, vocab, _) = load_codec(&path).map_err(py_err)?;
        Ok(PyCodec { state, vocab })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_codec(&path, &self.state, &self.vocab, 0).map_err(py_err)
    }

    #[getter]
    fn vocabulary(&self) -> PyVocabulary {
        PyVocabulary {
            inner: self.vocab.clone(),
        }
    }

    #[getter]
    fn max_len(&self) -> usize {
        self.state.config().max_len
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.state.config().confidence_threshold
    }

    #[setter]
    fn set_threshold(&mut self, tau: f64) -> PyResult<()> {
        self.state.set_threshold(tau).map_err(py_err)
    }

    /// Channel symbols (`L × k` rows) of a line and the encoder pass count.
    fn encode(&self, line: &str) -> PyResult<(Vec<Vec<f64>>, usize)> {
        let msg = encode_text(line, &self.vocab, self.state.config().max_len).map_err(py_err)?;
        let enc = semantic_encode(&msg, &self.state, Mode::Infer).map_err(py_err)?;
        Ok((rows(enc.symbols.symbols()), enc.trace.steps))
    }

    /// Greedy decode of received symbols; returns the text and the decoder pass count.
    fn decode(&self, received: Vec<Vec<f64>>) -> PyResult<(String, usize)> {
        let y = SymbolBlock::from_rows(&received).map_err(py_err)?;
        let dec = semantic_decode(&y, &self.state, Mode::Infer).map_err(py_err)?;
        Ok((decode_ids(&dec.tokens, &self.vocab), dec.trace.steps))
    }

    /// Encode, one channel use, decode. Returns a dict with the decoded text,
    /// word error rate and both distillation counts.
    fn transmit<'py>(&self, py: Python<'py>, line: &str, channel: &PyChannel, seed: u64) -> PyResult<Bound<'py, PyDict>> {
        let msg = encode_text(line, &self.vocab, self.state.config().max_len).map_err(py_err)?;
        let mut r = rng::seeded(seed);
        let out = transmit_message(&msg, &self.state, &channel.inner, &mut r).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("text", decode_ids(&out.tokens, &self.vocab))?;
        d.set_item("wer", semcom::metrics::wer(msg.content(), out.content()).map_err(py_err)?)?;
        d.set_item("encoder_steps", out.trace.encoder_steps)?;
        d.set_item("decoder_steps", out.trace.decoder_steps)?;
        Ok(d)
    }
}

#[pyfunction]
fn wer(reference: &str, hypothesis: &str) -> PyResult<f64> {
    semcom::metrics::wer(&words(reference), &words(hypothesis)).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (references, hypothesis, max_n = 4))]
fn bleu(references: Vec<String>, hypothesis: &str, max_n: usize) -> f64 {
    let refs: Vec<Vec<String>> = references.iter().map(|r| words(r)).collect();
    semcom::metrics::bleu(&refs, &words(hypothesis), max_n)
}

/// CIDEr-D of `hypothesis` against `references`. Document frequencies come
/// from `corpus`, a list of reference sets; by default the references alone.
#[pyfunction]
#[pyo3(signature = (references, hypothesis, corpus = None))]
fn cider_d(references: Vec<String>, hypothesis: &str, corpus: Option<Vec<Vec<String>>>) -> PyResult<f64> {
    let refs: Vec<Vec<String>> = references.iter().map(|r| words(r)).collect();
    let docs: Vec<Vec<Vec<String>>> = match corpus {
        Some(c) => c.iter().map(|doc| doc.iter().map(|r| words(r)).collect()).collect(),
        None => vec![refs.clone()],
    };
    let idf = IdfTable::from_documents(&docs).map_err(py_err)?;
    Ok(idf.cider_d(&refs, &words(hypothesis)))
}

#[pyfunction]
#[pyo3(signature = (data, n = 31, k = 23))]
fn rs_encode(data: Vec<u8>, n: usize, k: usize) -> PyResult<Vec<u32>> {
    let code = RsCode::new(n, k).map_err(py_err)?;
    let cw = semcom::baselines::rs_encode(&data, &code).map_err(py_err)?;
    Ok(cw.into_iter().map(u32::from).collect())
}

/// Returns `(data, ok)`; `ok` is false when the word had too many errors.
#[pyfunction]
#[pyo3(signature = (received, n = 31, k = 23))]
fn rs_decode(received: Vec<u8>, n: usize, k: usize) -> PyResult<(Vec<u32>, bool)> {
    let code = RsCode::new(n, k).map_err(py_err)?;
    let (data, ok) = semcom::baselines::rs_decode(&received, &code).map_err(py_err)?;
    Ok((data.into_iter().map(u32::from).collect(), ok))
}

/// Classical chain (5-bit source code, RS, BPSK) for one line.
#[pyfunction]
#[pyo3(signature = (line, channel, seed, n = 31, k = 23))]
fn classical_transmit(line: &str, channel: &PyChannel, seed: u64, n: usize, k: usize) -> PyResult<(String, f64)> {
    let code = RsCode::new(n, k).map_err(py_err)?;
    let out = classical_chain(line, &code, &channel.inner, &mut rng::seeded(seed)).map_err(py_err)?;
    Ok((out.decoded, out.wer))
}

#[pyfunction]
#[pyo3(signature = (seed, n_lines, min_len = 4, max_len = 20, vocab_size = 60))]
fn toy_corpus(seed: u64, n_lines: usize, min_len: usize, max_len: usize, vocab_size: usize) -> PyResult<Vec<String>> {
    generate_toy_corpus(seed, n_lines, (min_len, max_len), vocab_size).map_err(py_err)
}

/// Runs the experiment described by a TOML config and returns the summary rows.
#[pyfunction]
#[pyo3(signature = (config_path, force = false))]
fn run_experiment<'py>(py: Python<'py>, config_path: PathBuf, force: bool) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = ExperimentConfig::load(&config_path).map_err(py_err)?;
    let out = py.detach(|| run(&cfg, force)).map_err(py_err)?;
    out.summary
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("task", &r.task)?;
            d.set_item("regime", &r.regime)?;
            d.set_item("channel", &r.channel)?;
            d.set_item("snr_db", r.snr_db)?;
            d.set_item("seed", r.seed)?;
            d.set_item("n_messages", r.n_messages)?;
            d.set_item("wer", r.wer)?;
            d.set_item("bleu", r.bleu)?;
            d.set_item("cider_d", r.cider_d)?;
            d.set_item("mse_initial", r.mse_initial)?;
            d.set_item("mse_final", r.mse_final)?;
            d.set_item("distill_enc_mean", r.distill_enc_mean)?;
            d.set_item("distill_dec_mean", r.distill_dec_mean)?;
            d.set_item("symbols_per_message", r.symbols_per_message)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn pysemcom(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVocabulary>()?;
    m.add_class::<PyChannel>()?;
    m.add_class::<PyCodec>()?;
    m.add_function(wrap_pyfunction!(wer, m)?)?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(cider_d, m)?)?;
    m.add_function(wrap_pyfunction!(rs_encode, m)?)?;
    m.add_function(wrap_pyfunction!(rs_decode, m)?)?;
    m.add_function(wrap_pyfunction!(classical_transmit, m)?)?;
    m.add_function(wrap_pyfunction!(toy_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
