//! Channel models between transmitter and receiver.
//!
//! Symbols are real-valued and power-normalised so that SNR is the inverse
//! of the per-entry noise variance: `σ² = 10^(−snr_db/10)`.
//!
//! The fading model (FIF) is block Rayleigh: `y = h·x + n` with one
//! magnitude `h = |g|`, `g ~ CN(0, 1)` (so `E[h²] = 1`) per message and no
//! receiver-side equalisation. Per-symbol fading is available through
//! [`FadingGranularity::Symbol`].

use std::rc::Rc;

use ndarray::{s, Array2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autograd::{Mat, Segments, Tape, Var};
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Awgn,
    Fif,
}

impl ChannelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelKind::Awgn => "awgn",
            ChannelKind::Fif => "fif",
        }
    }
}

impl std::fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "awgn" => Ok(ChannelKind::Awgn),
            "fif" => Ok(ChannelKind::Fif),
            other => Err(Error::InvalidArgument(format!("unknown channel kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FadingGranularity {
    /// One fade per message.
    #[default]
    Block,
    /// Independent fade per channel symbol.
    Symbol,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub kind: ChannelKind,
    pub snr_db: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fading: FadingGranularity,
}

impl ChannelSpec {
    pub fn new(kind: ChannelKind, snr_db: f64) -> Self {
        ChannelSpec {
            kind,
            snr_db,
            seed: 0,
            fading: FadingGranularity::Block,
        }
    }

    pub fn awgn(snr_db: f64) -> Self {
        Self::new(ChannelKind::Awgn, snr_db)
    }

    pub fn fif(snr_db: f64) -> Self {
        Self::new(ChannelKind::Fif, snr_db)
    }

    pub fn with_snr(&self, snr_db: f64) -> Self {
        ChannelSpec {
            snr_db,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.snr_db.is_finite() {
            return Err(Error::InvalidArgument(format!("snr_db must be finite, got {}", self.snr_db)));
        }
        Ok(())
    }

    pub fn noise_variance(&self) -> f64 {
        noise_variance(self.snr_db)
    }

    /// Draws one realisation (fade + noise) for a `rows × cols` block.
    pub fn draw(&self, rows: usize, cols: usize, rng: &mut Rng) -> ChannelDraw {
        let gain = match (self.kind, self.fading) {
            (ChannelKind::Awgn, _) => Gain::Unit,
            (ChannelKind::Fif, FadingGranularity::Block) => Gain::Block(rayleigh(rng)),
            (ChannelKind::Fif, FadingGranularity::Symbol) => {
                Gain::Symbol(Array2::from_shape_fn((rows, cols), |_| rayleigh(rng)))
            }
        };
        let noise = gaussian_block(rows, cols, self.noise_variance().sqrt(), rng);
        ChannelDraw { gain, noise }
    }
}

/// `σ² = 10^(−snr_db/10)` for unit signal power.
pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Real-valued `L × k` block of channel symbols.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolBlock {
    symbols: Mat,
}

impl SymbolBlock {
    pub fn new(symbols: Mat) -> Result<Self> {
        if symbols.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite channel symbol".into()));
        }
        Ok(SymbolBlock {
            symbols: symbols.as_standard_layout().into_owned(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged symbol rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(Array2::from_shape_vec((rows.len(), cols), flat).map_err(|e| Error::Shape(e.to_string()))?)
    }

    pub fn symbols(&self) -> &Mat {
        &self.symbols
    }

    pub fn into_inner(self) -> Mat {
        self.symbols
    }

    /// `(L, k)`.
    pub fn shape(&self) -> (usize, usize) {
        self.symbols.dim()
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn mean_power(&self) -> f64 {
        mean_power(&self.symbols)
    }
}

fn mean_power(x: &Mat) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }
}

/// Scales `x` to unit mean-square power.
pub fn normalize_power(x: &SymbolBlock) -> Result<SymbolBlock> {
    let p = x.mean_power();
    if p == 0.0 {
        return Err(Error::ZeroPower);
    }
    let r = p.sqrt();
    Ok(SymbolBlock {
        symbols: x.symbols.mapv(|v| v / r),
    })
}

/// Multiplicative fade of one realisation.
#[derive(Clone, Debug, PartialEq)]
pub enum Gain {
    Unit,
    Block(f64),
    Symbol(Mat),
}

/// A sampled channel realisation that can be applied to plain blocks or to
/// recorded tape values (fade and noise are constants for differentiation).
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelDraw {
    pub gain: Gain,
    pub noise: Mat,
}

impl ChannelDraw {
    pub fn apply(&self, x: &SymbolBlock) -> Result<SymbolBlock> {
        if x.shape() != self.noise.dim() {
            return Err(Error::Shape(format!(
                "channel draw for {:?} applied to block {:?}",
                self.noise.dim(),
                x.shape()
            )));
        }
        let faded = match &self.gain {
            Gain::Unit => x.symbols.clone(),
            Gain::Block(h) => x.symbols.mapv(|v| v * h),
            Gain::Symbol(h) => &x.symbols * h,
        };
        SymbolBlock::new(faded + &self.noise)
    }

    /// Block-level fade magnitude (1 for AWGN, mean magnitude for per-symbol fading).
    pub fn block_gain(&self) -> f64 {
        match &self.gain {
            Gain::Unit => 1.0,
            Gain::Block(h) => *h,
            Gain::Symbol(h) => h.mean().unwrap_or(1.0),
        }
    }
}

/// Applies one draw per segment of a packed `Σ L_b × k` tape value.
pub fn apply_draws(t: &mut Tape, x: Var, segs: &Rc<Segments>, draws: &[ChannelDraw]) -> Var {
    assert_eq!(segs.count(), draws.len());
    let (rows, cols) = t.shape(x);
    let mut gain = Mat::ones((rows, cols));
    let mut noise = Mat::zeros((rows, cols));
    for (b, d) in draws.iter().enumerate() {
        let r = segs.range(b);
        match &d.gain {
            Gain::Unit => {}
            Gain::Block(h) => gain.slice_mut(s![r.clone(), ..]).fill(*h),
            Gain::Symbol(h) => gain.slice_mut(s![r.clone(), ..]).assign(h),
        }
        noise.slice_mut(s![r, ..]).assign(&d.noise);
    }
    let g = t.constant(gain);
    let n = t.constant(noise);
    let faded = t.mul(x, g);
    t.add(faded, n)
}

fn gaussian_block(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Mat {
    Array2::from_shape_fn((rows, cols), |_| {
        let z: f64 = rng.sample(StandardNormal);
        z * std
    })
}

/// Rayleigh magnitude with unit mean power: `|g|`, `g ~ CN(0, 1)`.
pub fn rayleigh(rng: &mut Rng) -> f64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    ((re * re + im * im) / 2.0).sqrt()
}

/// `y = x + n`, `n ~ N(0, 10^(−snr_db/10))` i.i.d.
pub fn transmit_awgn(x: &SymbolBlock, snr_db: f64, rng: &mut Rng) -> Result<SymbolBlock> {
    ChannelSpec::awgn(snr_db).draw(x.shape().0, x.shape().1, rng).apply(x)
}

/// `y = h·x + n` with a Rayleigh block fade `h` drawn before the noise.
pub fn transmit_fif(x: &SymbolBlock, snr_db: f64, rng: &mut Rng) -> Result<SymbolBlock> {
    ChannelSpec::fif(snr_db).draw(x.shape().0, x.shape().1, rng).apply(x)
}

/// FIF with an injected fade `h`; the noise consumes `rng` exactly as AWGN does.
pub fn transmit_fif_with_gain(x: &SymbolBlock, h: f64, snr_db: f64, rng: &mut Rng) -> Result<SymbolBlock> {
    let (rows, cols) = x.shape();
    ChannelDraw {
        gain: Gain::Block(h),
        noise: gaussian_block(rows, cols, noise_variance(snr_db).sqrt(), rng),
    }
    .apply(x)
}

/// Anything that carries a symbol block from transmitter to receiver.
pub trait Channel {
    fn transmit(&self, x: &SymbolBlock, rng: &mut Rng) -> Result<SymbolBlock>;
}

impl Channel for ChannelSpec {
    fn transmit(&self, x: &SymbolBlock, rng: &mut Rng) -> Result<SymbolBlock> {
        self.draw(x.shape().0, x.shape().1, rng).apply(x)
    }
}
