//! Separate source/channel coding reference chain: a 5-bit fixed-length
//! character code, Reed-Solomon over GF(32) and hard-decision BPSK.

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelKind, ChannelSpec, Gain, SymbolBlock};
use crate::autograd::Mat;
use crate::metrics::{edit_distance, wer};
use crate::rng::Rng;
use crate::{Error, Result};

/// Primitive polynomial `x⁵ + x² + 1`.
pub const PRIMITIVE_POLY: u16 = 0b10_0101;
pub const FIELD_SIZE: usize = 32;
pub const BITS_PER_SYMBOL: usize = 5;

/// GF(2⁵) arithmetic through exponent/logarithm tables.
#[derive(Clone, Debug)]
pub struct Gf32 {
    exp: [u8; 62],
    log: [u8; 32],
}

impl Default for Gf32 {
    fn default() -> Self {
        Self::new()
    }
}

impl Gf32 {
    pub fn new() -> Self {
        let mut exp = [0u8; 62];
        let mut log = [0u8; 32];
        let mut x: u16 = 1;
        for i in 0..31 {
            exp[i] = x as u8;
            exp[i + 31] = x as u8;
            log[x as usize] = i as u8;
            x <<= 1;
            if x & 0b10_0000 != 0 {
                x ^= PRIMITIVE_POLY;
            }
        }
        Gf32 { exp, log }
    }

    /// `αⁱ`.
    pub fn alpha_pow(&self, i: usize) -> u8 {
        self.exp[i % 31]
    }

    pub fn mul(&self, a: u8, b: u8) -> u8 {
        if a == 0 || b == 0 {
            0
        } else {
            self.exp[self.log[a as usize] as usize + self.log[b as usize] as usize]
        }
    }

    pub fn inv(&self, a: u8) -> u8 {
        assert!(a != 0, "zero has no inverse");
        self.exp[(31 - self.log[a as usize] as usize) % 31]
    }

    pub fn div(&self, a: u8, b: u8) -> u8 {
        self.mul(a, self.inv(b))
    }

    /// Evaluates a polynomial with coefficients in ascending degree order.
    pub fn eval_ascending(&self, poly: &[u8], x: u8) -> u8 {
        poly.iter().rev().fold(0, |acc, &c| self.mul(acc, x) ^ c)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RsCode {
    pub n: usize,
    pub k: usize,
}

impl Default for RsCode {
    fn default() -> Self {
        RsCode { n: 31, k: 23 }
    }
}

impl RsCode {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        let c = RsCode { n, k };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.n != FIELD_SIZE - 1 {
            errs.push(format!("rs.n must be {} for GF(32)", FIELD_SIZE - 1));
        }
        if self.k < 1 || self.k >= self.n {
            errs.push("rs.k must satisfy 1 <= k < n".to_string());
        } else if !(self.n - self.k).is_multiple_of(2) {
            errs.push("rs.n - rs.k must be even".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Correctable symbol errors `t = (n − k) / 2`.
    pub fn t(&self) -> usize {
        (self.n - self.k) / 2
    }

    pub fn parity_len(&self) -> usize {
        self.n - self.k
    }
}

/// `g(x) = ∏_{i=1}^{n−k} (x − αⁱ)`, coefficients from highest degree down (monic).
pub fn generator_poly(gf: &Gf32, code: &RsCode) -> Vec<u8> {
    let mut g = vec![1u8];
    for i in 1..=code.parity_len() {
        let root = gf.alpha_pow(i);
        let mut next = vec![0u8; g.len() + 1];
        for (j, &c) in g.iter().enumerate() {
            next[j] ^= c;
            next[j + 1] ^= gf.mul(c, root);
        }
        g = next;
    }
    g
}

/// Systematic codeword: the `k` data symbols followed by `n − k` parity
/// symbols, i.e. `d(x)·x^{n−k} + (d(x)·x^{n−k} mod g(x))` written from the
/// highest degree down.
pub fn rs_encode(data: &[u8], code: &RsCode) -> Result<Vec<u8>> {
    code.validate()?;
    if data.len() != code.k {
        return Err(Error::InvalidArgument(format!("expected {} data symbols, got {}", code.k, data.len())));
    }
    if let Some(&bad) = data.iter().find(|&&s| s as usize >= FIELD_SIZE) {
        return Err(Error::InvalidArgument(format!("symbol {bad} outside GF(32)")));
    }
    let gf = Gf32::new();
    let g = generator_poly(&gf, code);
    let p = code.parity_len();
    let mut rem = vec![0u8; p];
    for &d in data {
        let factor = d ^ rem[0];
        rem.rotate_left(1);
        rem[p - 1] = 0;
        if factor != 0 {
            for j in 0..p {
                rem[j] ^= gf.mul(g[j + 1], factor);
            }
        }
    }
    let mut out = data.to_vec();
    out.extend_from_slice(&rem);
    Ok(out)
}

fn syndromes(gf: &Gf32, received: &[u8], count: usize) -> Vec<u8> {
    (1..=count)
        .map(|j| {
            let x = gf.alpha_pow(j);
            received.iter().fold(0u8, |acc, &c| gf.mul(acc, x) ^ c)
        })
        .collect()
}

/// Berlekamp-Massey error locator `Λ(x)`, ascending coefficients.
fn berlekamp_massey(gf: &Gf32, s: &[u8]) -> Vec<u8> {
    let mut c = vec![1u8];
    let mut b = vec![1u8];
    let mut l = 0usize;
    let mut m = 1usize;
    let mut bb = 1u8;
    for n in 0..s.len() {
        let mut d = s[n];
        for i in 1..=l.min(c.len() - 1) {
            d ^= gf.mul(c[i], s[n - i]);
        }
        if d == 0 {
            m += 1;
            continue;
        }
        let coef = gf.div(d, bb);
        let mut next = c.clone();
        if next.len() < b.len() + m {
            next.resize(b.len() + m, 0);
        }
        for (i, &bi) in b.iter().enumerate() {
            next[i + m] ^= gf.mul(coef, bi);
        }
        if 2 * l <= n {
            b = c;
            l = n + 1 - l;
            bb = d;
            m = 1;
        } else {
            m += 1;
        }
        c = next;
    }
    c.truncate(l + 1);
    c
}

/// Decodes a received word. Returns the data symbols and whether decoding
/// succeeded; on failure the systematic part of the received word is returned.
pub fn rs_decode(received: &[u8], code: &RsCode) -> Result<(Vec<u8>, bool)> {
    code.validate()?;
    if received.len() != code.n {
        return Err(Error::InvalidArgument(format!("expected {} symbols, got {}", code.n, received.len())));
    }
    if let Some(&bad) = received.iter().find(|&&s| s as usize >= FIELD_SIZE) {
        return Err(Error::InvalidArgument(format!("symbol {bad} outside GF(32)")));
    }
    let gf = Gf32::new();
    let two_t = code.parity_len();
    let s = syndromes(&gf, received, two_t);
    let raw = received[..code.k].to_vec();
    if s.iter().all(|&v| v == 0) {
        return Ok((raw, true));
    }
    let lambda = berlekamp_massey(&gf, &s);
    let nu = lambda.len() - 1;
    if nu == 0 || nu > code.t() {
        return Ok((raw, false));
    }
    // Ω(x) = S(x)·Λ(x) mod x^{2t}
    let mut omega = vec![0u8; two_t];
    for (i, &li) in lambda.iter().enumerate() {
        for (j, &sj) in s.iter().enumerate() {
            if i + j < two_t {
                omega[i + j] ^= gf.mul(li, sj);
            }
        }
    }
    // formal derivative: odd-degree terms survive in characteristic 2
    let dlambda: Vec<u8> = (1..lambda.len())
        .map(|i| if i % 2 == 1 { lambda[i] } else { 0 })
        .collect();
    let mut fixed = received.to_vec();
    let mut found = 0;
    for pos in 0..code.n {
        // symbol at index pos multiplies x^{n−1−pos}
        let e = code.n - 1 - pos;
        let x_inv = gf.alpha_pow(31 - e % 31);
        if gf.eval_ascending(&lambda, x_inv) == 0 {
            let denom = gf.eval_ascending(&dlambda, x_inv);
            if denom == 0 {
                return Ok((raw, false));
            }
            fixed[pos] ^= gf.div(gf.eval_ascending(&omega, x_inv), denom);
            found += 1;
        }
    }
    if found != nu || syndromes(&gf, &fixed, two_t).iter().any(|&v| v != 0) {
        return Ok((raw, false));
    }
    Ok((fixed[..code.k].to_vec(), true))
}

pub const SYM_PAD: u8 = 0;
pub const SYM_SPACE: u8 = 27;
pub const SYM_PERIOD: u8 = 28;
pub const SYM_COMMA: u8 = 29;
/// Followed by one symbol `1..=10` carrying the digit value plus one.
pub const SYM_DIGIT: u8 = 30;
pub const SYM_UNKNOWN: u8 = 31;

/// Fixed 32-entry character code: pad, `a`–`z`, space, period, comma,
/// digit escape, unknown.
pub fn source_encode_5bit(text: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            'a'..='z' => out.push(ch as u8 - b'a' + 1),
            ' ' => out.push(SYM_SPACE),
            '.' => out.push(SYM_PERIOD),
            ',' => out.push(SYM_COMMA),
            '0'..='9' => {
                out.push(SYM_DIGIT);
                out.push(ch as u8 - b'0' + 1);
            }
            _ => out.push(SYM_UNKNOWN),
        }
    }
    out
}

/// Inverse of [`source_encode_5bit`]; pads are dropped, unknowns become `U+FFFD`.
pub fn source_decode_5bit(symbols: &[u8]) -> String {
    let mut out = String::with_capacity(symbols.len());
    let mut it = symbols.iter().copied();
    while let Some(s) = it.next() {
        match s {
            SYM_PAD => {}
            1..=26 => out.push((b'a' + s - 1) as char),
            SYM_SPACE => out.push(' '),
            SYM_PERIOD => out.push('.'),
            SYM_COMMA => out.push(','),
            SYM_DIGIT => match it.next() {
                Some(d @ 1..=10) => out.push((b'0' + d - 1) as char),
                _ => out.push(char::REPLACEMENT_CHARACTER),
            },
            _ => out.push(char::REPLACEMENT_CHARACTER),
        }
    }
    out
}

/// Bits on the wire for `text`: `⌈symbols / k⌉ · n · 5`.
pub fn wire_bits(text: &str, code: &RsCode) -> usize {
    let symbols = source_encode_5bit(text).len();
    symbols.div_ceil(code.k) * code.n * BITS_PER_SYMBOL
}

fn symbols_to_bits(symbols: &[u8]) -> Vec<u8> {
    symbols
        .iter()
        .flat_map(|&s| (0..BITS_PER_SYMBOL).rev().map(move |b| (s >> b) & 1))
        .collect()
}

fn bits_to_symbols(bits: &[u8]) -> Vec<u8> {
    bits.chunks(BITS_PER_SYMBOL)
        .map(|c| c.iter().fold(0u8, |acc, &b| (acc << 1) | b))
        .collect()
}

/// Sends bits as BPSK (`0 → +1`, `1 → −1`) through one channel realisation
/// and slices by sign (after dividing by the known fade for FIF).
///
/// The symbols are complex baseband with the bit on the in-phase rail, so
/// only half of the noise power σ² reaches the decision and the AWGN bit
/// error rate is Q(√(2·SNR)).
pub fn bpsk_transmit(bits: &[u8], channel: &ChannelSpec, rng: &mut Rng) -> Result<Vec<u8>> {
    if bits.is_empty() {
        return Ok(Vec::new());
    }
    let mut in_phase = channel.clone();
    in_phase.snr_db += 10.0 * 2f64.log10();
    let channel = &in_phase;
    let x = SymbolBlock::new(Mat::from_shape_fn((bits.len(), 1), |(i, _)| {
        if bits[i] == 0 {
            1.0
        } else {
            -1.0
        }
    }))?;
    let draw = channel.draw(bits.len(), 1, rng);
    let y = draw.apply(&x)?;
    let gains: Option<&Mat> = match &draw.gain {
        Gain::Symbol(h) => Some(h),
        _ => None,
    };
    let block_h = draw.block_gain();
    Ok(y
        .symbols()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let h = match (channel.kind, gains) {
                (ChannelKind::Fif, Some(h)) => h[[i, 0]],
                (ChannelKind::Fif, None) => block_h,
                _ => 1.0,
            };
            u8::from(v / h < 0.0)
        })
        .collect())
}

/// Empirical uncoded BPSK bit-error rate over `n_bits` random bits.
pub fn uncoded_bpsk_ber(channel: &ChannelSpec, n_bits: usize, rng: &mut Rng) -> Result<f64> {
    use rand::Rng as _;
    let bits: Vec<u8> = (0..n_bits).map(|_| rng.random_range(0..2u8)).collect();
    let out = bpsk_transmit(&bits, channel, rng)?;
    let errors = bits.iter().zip(&out).filter(|(a, b)| a != b).count();
    Ok(errors as f64 / n_bits.max(1) as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassicalResult {
    pub decoded: String,
    pub wer: f64,
    pub cer: f64,
    pub bits_sent: usize,
    pub bit_errors: usize,
    pub codewords: usize,
    pub codewords_failed: usize,
}

/// Source code → RS → BPSK → channel → hard slicing → RS decode → source decode.
pub fn classical_chain(text: &str, code: &RsCode, channel: &ChannelSpec, rng: &mut Rng) -> Result<ClassicalResult> {
    code.validate()?;
    channel.validate()?;
    let symbols = source_encode_5bit(text);
    let mut codewords = Vec::new();
    for chunk in symbols.chunks(code.k) {
        let mut data = chunk.to_vec();
        data.resize(code.k, SYM_PAD);
        codewords.extend(rs_encode(&data, code)?);
    }
    let bits = symbols_to_bits(&codewords);
    let rx_bits = bpsk_transmit(&bits, channel, rng)?;
    let bit_errors = bits.iter().zip(&rx_bits).filter(|(a, b)| a != b).count();
    let rx_symbols = bits_to_symbols(&rx_bits);
    let mut decoded_symbols = Vec::with_capacity(symbols.len());
    let mut failed = 0;
    for word in rx_symbols.chunks(code.n) {
        let (data, ok) = rs_decode(word, code)?;
        failed += usize::from(!ok);
        decoded_symbols.extend(data);
    }
    decoded_symbols.truncate(symbols.len());
    let decoded = source_decode_5bit(&decoded_symbols);
    let ref_words: Vec<&str> = text.split_whitespace().collect();
    let hyp_words: Vec<&str> = decoded.split_whitespace().collect();
    let ref_chars: Vec<char> = text.chars().collect();
    let hyp_chars: Vec<char> = decoded.chars().collect();
    let word_rate = if ref_words.is_empty() {
        if hyp_words.is_empty() {
            0.0
        } else {
            1.0
        }
    } else {
        wer(&ref_words, &hyp_words)?
    };
    let cer = if ref_chars.is_empty() {
        0.0
    } else {
        edit_distance(&ref_chars, &hyp_chars) as f64 / ref_chars.len() as f64
    };
    Ok(ClassicalResult {
        decoded,
        wer: word_rate,
        cer,
        bits_sent: bits.len(),
        bit_errors,
        codewords: codewords.len() / code.n,
        codewords_failed: failed,
    })
}
