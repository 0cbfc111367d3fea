//! Versioned binary checkpoint container.
//!
//! Layout (little endian): the magic line, then length-prefixed sections for
//! the model kind, its TOML configuration, the vocabulary (one token per
//! line, may be empty) and the training step, followed by every parameter
//! as `name, rows, cols, rows·cols f64`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{CodecConfig, CodecState};
use crate::autograd::{Mat, ParamStore};
use crate::corpus::Vocabulary;
use crate::{Error, Result};

const MAGIC: &[u8] = b"semcom-checkpoint v1\n";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub kind: String,
    pub config_toml: String,
    pub vocab: Option<Vec<String>>,
    pub step: u64,
    pub params: ParamStore,
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u64).to_le_bytes());
    out.extend_from_slice(b);
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() - self.at < n {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn bytes(&mut self) -> Result<&[u8]> {
        let n = self.u64()? as usize;
        self.take(n)
    }

    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| Error::Checkpoint("invalid utf-8 section".into()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        put_bytes(&mut out, self.kind.as_bytes());
        put_bytes(&mut out, self.config_toml.as_bytes());
        match &self.vocab {
            Some(v) => {
                out.push(1);
                put_bytes(&mut out, v.join("\n").as_bytes());
            }
            None => out.push(0),
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, m) in self.params.iter() {
            put_bytes(&mut out, name.as_bytes());
            out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
            for v in m.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if !buf.starts_with(MAGIC) {
            return Err(Error::Checkpoint("not a semcom checkpoint (bad magic)".into()));
        }
        let mut r = Reader { buf, at: MAGIC.len() };
        let kind = r.string()?;
        let config_toml = r.string()?;
        let vocab = match r.take(1)?[0] {
            0 => None,
            1 => {
                let text = r.string()?;
                Some(text.split('\n').map(str::to_string).collect())
            }
            _ => return Err(Error::Checkpoint("corrupt vocabulary flag".into())),
        };
        let step = r.u64()?;
        let count = r.u64()?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name = r.string()?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let raw = r.take(rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).ok_or_else(|| {
                Error::Checkpoint(format!("parameter {name} has an absurd shape"))
            })?)?;
            let vals: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if params.id(&name).is_some() {
                return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
            }
            params.add(name, Mat::from_shape_vec((rows, cols), vals).expect("sized above"));
        }
        if r.at != buf.len() {
            return Err(Error::Checkpoint("trailing bytes after parameters".into()));
        }
        Ok(Checkpoint {
            kind,
            config_toml,
            vocab,
            step,
            params,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    /// Overwrites every parameter of `target` by name, checking shapes.
    pub fn restore_into(&self, target: &mut ParamStore) -> Result<()> {
        if self.params.len() != target.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} parameters, model expects {}",
                self.params.len(),
                target.len()
            )));
        }
        for id in target.ids().collect::<Vec<_>>() {
            let name = target.name(id).to_string();
            let src = self
                .params
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            let value = self.params.get(src);
            if value.dim() != target.get(id).dim() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: shape {:?} in checkpoint, {:?} in model",
                    value.dim(),
                    target.get(id).dim()
                )));
            }
            target.get_mut(id).assign(value);
        }
        Ok(())
    }
}

pub fn save_codec(path: &Path, state: &CodecState, vocab: &Vocabulary, step: u64) -> Result<()> {
    let config_toml = toml::to_string(state.config()).map_err(|e| Error::Checkpoint(e.to_string()))?;
    Checkpoint {
        kind: "codec".into(),
        config_toml,
        vocab: Some(vocab.tokens().to_vec()),
        step,
        params: state.params.clone(),
    }
    .write(path)
}

/// Rebuilds a transceiver from a checkpoint written by [`save_codec`].
pub fn load_codec(path: &Path) -> Result<(CodecState, Vocabulary, u64)> {
    let ck = Checkpoint::read(path)?;
    if ck.kind != "codec" {
        return Err(Error::Checkpoint(format!("expected a codec checkpoint, found {}", ck.kind)));
    }
    let cfg: CodecConfig = toml::from_str(&ck.config_toml).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let tokens = ck.vocab.clone().unwrap_or_default();
    let vocab = Vocabulary::from_lines(tokens.iter().map(String::as_str))?;
    let mut state = CodecState::new(&cfg, vocab.len(), 0)?;
    ck.restore_into(&mut state.params)?;
    Ok((state, vocab, ck.step))
}
