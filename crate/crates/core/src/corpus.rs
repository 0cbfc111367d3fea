//! Text and image message sources: vocabularies, token sequences, toy
//! datasets and padded batching.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::rng::{self, Rng};
use crate::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Bijective token ↔ id map. Ids `0..4` are the specials `PAD, BOS, EOS, UNK`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Vocabulary holding only the four specials.
    pub fn specials_only() -> Self {
        Self::from_tokens(std::iter::empty::<String>()).expect("specials are unique")
    }

    /// Builds a vocabulary from non-special tokens in id order (ids start at 4).
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        for s in SPECIALS {
            v.push(s.to_string())?;
        }
        for t in tokens {
            v.push(t.into())?;
        }
        Ok(v)
    }

    fn push(&mut self, token: String) -> Result<()> {
        if self.token_to_id.contains_key(&token) {
            return Err(Error::InvalidArgument(format!("duplicate token `{token}`")));
        }
        self.token_to_id.insert(token.clone(), self.id_to_token.len() as u32);
        self.id_to_token.push(token);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn is_special(id: u32) -> bool {
        id <= UNK
    }

    /// One token per line, in id order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = self.id_to_token.join("\n");
        s.push('\n');
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_lines(text.lines())
    }

    /// Parses the persisted form (specials included, in id order).
    pub fn from_lines<'a>(lines: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let lines: Vec<&str> = lines.into_iter().filter(|l| !l.is_empty()).collect();
        if lines.len() < 4 || lines[..4] != SPECIALS {
            return Err(Error::InvalidArgument(
                "vocabulary must start with <pad>, <bos>, <eos>, <unk>".into(),
            ));
        }
        Self::from_tokens(lines[4..].iter().map(|s| s.to_string()))
    }
}

/// Lowercased whitespace tokenisation.
pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_lowercase).collect()
}

/// Specials plus every token seen at least `min_freq` times, ordered by
/// descending frequency, ties broken lexicographically.
pub fn build_vocab<S: AsRef<str>>(lines: &[S], min_freq: usize) -> Result<Vocabulary> {
    if min_freq == 0 {
        return Err(Error::InvalidArgument("min_freq must be >= 1".into()));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for line in lines {
        for tok in tokenize(line.as_ref()) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_freq && !SPECIALS.contains(&t.as_str()))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_tokens(kept.into_iter().map(|(t, _)| t))
}

/// A tokenised message `[BOS, w₁ … wₙ, EOS]` without padding.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    ids: Vec<u32>,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>, vocab: &Vocabulary, max_len: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::InvalidArgument("empty token sequence".into()));
        }
        if ids.len() > max_len {
            return Err(Error::MessageTooLong {
                len: ids.len(),
                max_len,
            });
        }
        if let Some(bad) = ids.iter().find(|&&i| i as usize >= vocab.len() || i == PAD) {
            return Err(Error::InvalidArgument(format!("invalid token id {bad}")));
        }
        Ok(TokenSequence { ids })
    }

    /// Skips validation; used where ids come from a trusted decoder.
    pub(crate) fn from_ids_unchecked(ids: Vec<u32>) -> Self {
        TokenSequence { ids }
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    /// Length `L`, counting BOS and EOS but no padding.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Content tokens between BOS and the first EOS.
    pub fn content(&self) -> &[u32] {
        content_ids(&self.ids)
    }

    /// Ids right-padded with `pad_id` to `width`.
    pub fn padded(&self, width: usize, pad_id: u32) -> Vec<u32> {
        let mut v = self.ids.clone();
        v.resize(width.max(v.len()), pad_id);
        v
    }
}

/// Tokens between a leading BOS (if any) and the first EOS, specials dropped.
pub fn content_ids(ids: &[u32]) -> &[u32] {
    let start = usize::from(ids.first() == Some(&BOS));
    let end = ids[start..]
        .iter()
        .position(|&i| i == EOS)
        .map_or(ids.len(), |p| p + start);
    &ids[start..end]
}

/// `BOS + ids + EOS`, unknown tokens mapped to UNK, truncated to `max_len`
/// (the EOS is kept).
pub fn encode_text(line: &str, vocab: &Vocabulary, max_len: usize) -> Result<TokenSequence> {
    if max_len < 3 {
        return Err(Error::InvalidArgument("max_len must be >= 3".into()));
    }
    let mut ids = vec![BOS];
    ids.extend(
        tokenize(line)
            .iter()
            .take(max_len - 2)
            .map(|t| vocab.id(t).unwrap_or(UNK)),
    );
    ids.push(EOS);
    Ok(TokenSequence { ids })
}

/// Content tokens joined by single spaces; PAD/BOS/EOS omitted.
pub fn decode_ids(ids: &[u32], vocab: &Vocabulary) -> String {
    content_ids(ids)
        .iter()
        .filter(|&&i| i != PAD && i != BOS)
        .map(|&i| vocab.token(i).unwrap_or(SPECIALS[UNK as usize]))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn decode_text(seq: &TokenSequence, vocab: &Vocabulary) -> String {
    decode_ids(seq.ids(), vocab)
}

/// Reads one sentence per line, skipping blank lines.
pub fn load_corpus(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

const DETERMINERS: &[&str] = &["the", "a", "every", "this", "that", "some", "my", "our"];
const PREPOSITIONS: &[&str] = &[
    "in", "on", "near", "with", "under", "behind", "beside", "across", "above", "around",
];
const ADVERBS: &[&str] = &[
    "quickly", "slowly", "today", "again", "carefully", "often", "rarely", "quietly", "openly",
    "gladly", "soon", "twice",
];
const NOUNS: &[&str] = &[
    "council", "member", "report", "committee", "citizen", "market", "policy", "country",
    "budget", "farmer", "court", "treaty", "region", "worker", "union", "minister", "debate",
    "vote", "proposal", "agency", "bank", "river", "city", "school", "doctor", "road", "letter",
    "law", "parliament", "commission", "company", "family", "village", "station", "garden",
    "program", "system", "network", "signal", "message",
];
const VERBS: &[&str] = &[
    "supports", "rejects", "reviews", "funds", "builds", "protects", "reports", "questions",
    "approves", "visits", "follows", "signs", "opens", "closes", "changes", "sends", "helps",
    "delays", "examines", "welcomes", "improves", "limits", "joins", "thanks", "meets",
];
const ADJECTIVES: &[&str] = &[
    "new", "old", "large", "small", "public", "local", "european", "national", "green", "strong",
    "fair", "open", "clear", "young", "rural", "urban", "common", "final", "early", "modern",
    "free", "safe", "active", "annual", "joint", "future", "social", "economic", "legal",
    "digital",
];

struct Lexicon {
    det: Vec<&'static str>,
    prep: Vec<&'static str>,
    adv: Vec<&'static str>,
    noun: Vec<&'static str>,
    verb: Vec<&'static str>,
    adj: Vec<&'static str>,
}

impl Lexicon {
    fn with_budget(vocab_size: usize) -> Self {
        let small = |cap: usize| (vocab_size / 12).clamp(1, cap);
        let det = small(DETERMINERS.len());
        let prep = small(PREPOSITIONS.len());
        let adv = small(ADVERBS.len());
        let rest = vocab_size - det - prep - adv;
        let noun = ((rest * 2) / 5).clamp(2, NOUNS.len());
        let verb = (rest / 4).clamp(1, VERBS.len());
        let adj = (rest - noun - verb).clamp(1, ADJECTIVES.len());
        Lexicon {
            det: DETERMINERS[..det].to_vec(),
            prep: PREPOSITIONS[..prep].to_vec(),
            adv: ADVERBS[..adv].to_vec(),
            noun: NOUNS[..noun].to_vec(),
            verb: VERBS[..verb].to_vec(),
            adj: ADJECTIVES[..adj].to_vec(),
        }
    }
}

fn pick<'a>(rng: &mut Rng, pool: &[&'a str]) -> &'a str {
    pool[rng.random_range(0..pool.len())]
}

/// Slots that each add one token to the core clause.
const SMALL_SLOTS: usize = 6; // subject det, 2 subject adj, 2 object adj, adverb

/// One subject-verb-object sentence of exactly `len` tokens (`len >= 4`).
fn toy_sentence(rng: &mut Rng, lex: &Lexicon, len: usize) -> String {
    let extra = len - 4;
    // prepositional phrases take 3 tokens and offer 2 more adjective slots each
    let feasible: Vec<usize> = (0..=extra / 3)
        .filter(|p| extra - 3 * p <= SMALL_SLOTS + 2 * p)
        .collect();
    let n_pp = feasible[rng.random_range(0..feasible.len())];
    let mut leftover = extra - 3 * n_pp;
    // slot capacities: [subj det, subj adj, obj adj, adverb, pp adj...]
    let mut caps = vec![1usize, 2, 2, 1];
    caps.extend(std::iter::repeat_n(2, n_pp));
    let mut fill = vec![0usize; caps.len()];
    while leftover > 0 {
        let open: Vec<usize> = (0..caps.len()).filter(|&i| fill[i] < caps[i]).collect();
        let i = open[rng.random_range(0..open.len())];
        fill[i] += 1;
        leftover -= 1;
    }
    let mut words: Vec<&str> = Vec::with_capacity(len);
    if fill[0] == 1 {
        words.push(pick(rng, &lex.det));
    }
    for _ in 0..fill[1] {
        words.push(pick(rng, &lex.adj));
    }
    words.push(pick(rng, &lex.noun));
    words.push(pick(rng, &lex.verb));
    words.push(pick(rng, &lex.det));
    for _ in 0..fill[2] {
        words.push(pick(rng, &lex.adj));
    }
    words.push(pick(rng, &lex.noun));
    for p in 0..n_pp {
        words.push(pick(rng, &lex.prep));
        words.push(pick(rng, &lex.det));
        for _ in 0..fill[4 + p] {
            words.push(pick(rng, &lex.adj));
        }
        words.push(pick(rng, &lex.noun));
    }
    if fill[3] == 1 {
        words.push(pick(rng, &lex.adv));
    }
    debug_assert_eq!(words.len(), len);
    words.join(" ")
}

/// Deterministic templated corpus: subject-verb-object clauses expanded with
/// determiners, adjectives, prepositional phrases and adverbs. Each line's
/// length is drawn uniformly from `len_range`.
pub fn generate_toy_corpus(
    seed: u64,
    n_lines: usize,
    len_range: (usize, usize),
    vocab_size: usize,
) -> Result<Vec<String>> {
    let (lo, hi) = len_range;
    if lo < 4 || lo > hi {
        return Err(Error::InvalidArgument(format!(
            "length range must satisfy 4 <= min <= max, got ({lo}, {hi})"
        )));
    }
    if vocab_size < 10 {
        return Err(Error::InvalidArgument("vocab_size must be >= 10".into()));
    }
    let lex = Lexicon::with_budget(vocab_size);
    let mut rng = rng::substream(seed, "toy-corpus");
    Ok((0..n_lines)
        .map(|_| {
            let len = rng.random_range(lo..=hi);
            toy_sentence(&mut rng, &lex, len)
        })
        .collect())
}

/// `H × W × C` image with pixel values in `[0, 1]`, stored row-major with
/// channels innermost.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageMessage {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl ImageMessage {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{} pixels for a {height}x{width}x{channels} image",
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidArgument(format!("pixel value {p} outside [0,1]")));
        }
        Ok(ImageMessage {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn filled(shape: (usize, usize, usize), value: f64) -> Self {
        let (h, w, c) = shape;
        ImageMessage {
            height: h,
            width: w,
            channels: c,
            pixels: vec![value.clamp(0.0, 1.0); h * w * c],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// Adds `delta` to every pixel and clamps to `[0, 1]`.
    pub fn stepped(&self, delta: &[f64]) -> Result<Self> {
        if delta.len() != self.pixels.len() {
            return Err(Error::Shape(format!(
                "step of length {} for {} pixels",
                delta.len(),
                self.pixels.len()
            )));
        }
        let pixels = self
            .pixels
            .iter()
            .zip(delta)
            .map(|(p, d)| (p + d).clamp(0.0, 1.0))
            .collect();
        Ok(ImageMessage { pixels, ..*self })
    }
}

/// Deterministic images of one or two filled rectangles or discs over a
/// uniform background.
pub fn generate_toy_images(seed: u64, n: usize, size: (usize, usize, usize)) -> Result<Vec<ImageMessage>> {
    let (h, w, c) = size;
    if h == 0 || w == 0 || c == 0 || h > 32 || w > 32 {
        return Err(Error::InvalidArgument(format!(
            "image size must be within 1..=32 per side, got {h}x{w}x{c}"
        )));
    }
    let mut rng = rng::substream(seed, "toy-images");
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let bg: Vec<f64> = (0..c).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut pixels = Vec::with_capacity(h * w * c);
        for _ in 0..h * w {
            pixels.extend_from_slice(&bg);
        }
        let n_shapes = rng.random_range(1..=2);
        for _ in 0..n_shapes {
            // foreground kept at least 0.3 away from the background
            let fg: Vec<f64> = bg
                .iter()
                .map(|&b| {
                    let v: f64 = rng.random_range(0.3..1.0);
                    if b + v <= 1.0 && (b - v < 0.0 || rng.random_bool(0.5)) {
                        b + v
                    } else if b - v >= 0.0 {
                        b - v
                    } else if b < 0.5 {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            let disc = rng.random_bool(0.5);
            let cy = rng.random_range(0.0..h as f64);
            let cx = rng.random_range(0.0..w as f64);
            let ry = rng.random_range(1.0..(h as f64 / 2.0).max(1.5));
            let rx = rng.random_range(1.0..(w as f64 / 2.0).max(1.5));
            for y in 0..h {
                for x in 0..w {
                    let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                    let inside = if disc {
                        (dy / ry).powi(2) + (dx / rx).powi(2) <= 1.0
                    } else {
                        dy.abs() <= ry && dx.abs() <= rx
                    };
                    if inside {
                        let base = (y * w + x) * c;
                        pixels[base..base + c].copy_from_slice(&fg);
                    }
                }
            }
        }
        out.push(ImageMessage::new(h, w, c, pixels)?);
    }
    Ok(out)
}

/// A batch of sequences right-padded to the longest member.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaddedBatch {
    pub ids: Vec<Vec<u32>>,
    pub lengths: Vec<usize>,
    /// Indices of the batch members in the input slice.
    pub indices: Vec<usize>,
}

/// Index batches covering `0..n`, shuffled when a seed is given.
pub fn index_batches(n: usize, batch_size: usize, shuffle: Option<&mut Rng>) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    if let Some(rng) = shuffle {
        idx.shuffle(rng);
    }
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Splits `messages` into padded batches; the order is shuffled
/// deterministically when `shuffle_seed` is given.
pub fn batch<'a>(
    messages: &'a [TokenSequence],
    batch_size: usize,
    pad_id: u32,
    shuffle_seed: Option<u64>,
) -> impl Iterator<Item = PaddedBatch> + 'a {
    let mut rng = shuffle_seed.map(|s| rng::substream(s, "shuffle"));
    index_batches(messages.len(), batch_size, rng.as_mut())
        .into_iter()
        .map(move |indices| {
            let width = indices.iter().map(|&i| messages[i].len()).max().unwrap_or(0);
            PaddedBatch {
                ids: indices.iter().map(|&i| messages[i].padded(width, pad_id)).collect(),
                lengths: indices.iter().map(|&i| messages[i].len()).collect(),
                indices,
            }
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ab_vocab() -> Vocabulary {
        build_vocab(&["a b", "a"], 1).unwrap()
    }

    #[test]
    fn build_vocab_examples() {
        let empty: [&str; 0] = [];
        let v = build_vocab(&empty, 1).unwrap();
        assert_eq!(v.tokens(), SPECIALS);
        let v = ab_vocab();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("a"), Some(4));
        assert_eq!(v.id("b"), Some(5));
        let v = build_vocab(&["a b", "a"], 2).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("b"), None);
        assert!(build_vocab(&["a"], 0).is_err());
    }

    #[test]
    fn vocab_ties_are_lexicographic() {
        let v = build_vocab(&["zeta alpha mid", "mid"], 1).unwrap();
        assert_eq!(&v.tokens()[4..], ["mid", "alpha", "zeta"]);
    }

    #[test]
    fn encode_decode_examples() {
        let v = ab_vocab();
        let (a, b) = (v.id("a").unwrap(), v.id("b").unwrap());
        assert_eq!(encode_text("a b", &v, 10).unwrap().ids(), [BOS, a, b, EOS]);
        assert_eq!(encode_text("a z", &v, 10).unwrap().ids(), [BOS, a, UNK, EOS]);
        assert_eq!(encode_text("", &v, 10).unwrap().ids(), [BOS, EOS]);
        assert_eq!(decode_ids(&[BOS, a, b, EOS, PAD, PAD], &v), "a b");
        assert_eq!(decode_ids(&[BOS, EOS], &v), "");
        assert!(encode_text("a", &v, 2).is_err());
    }

    #[test]
    fn encode_truncates_but_keeps_eos() {
        let v = ab_vocab();
        let s = encode_text("a b a b a b", &v, 5).unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(*s.ids().last().unwrap(), EOS);
    }

    #[test]
    fn token_sequence_validation() {
        let v = ab_vocab();
        assert!(TokenSequence::new(vec![BOS, 4, EOS], &v, 5).is_ok());
        assert!(matches!(
            TokenSequence::new(vec![BOS, 4, 4, 4, EOS], &v, 4),
            Err(Error::MessageTooLong { .. })
        ));
        assert!(TokenSequence::new(vec![BOS, 99, EOS], &v, 5).is_err());
        assert!(TokenSequence::new(vec![], &v, 5).is_err());
    }

    #[test]
    fn vocab_file_roundtrip() {
        let v = ab_vocab();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "<pad>\n<bos>\n<eos>\n<unk>\na\nb\n");
        assert_eq!(Vocabulary::load(&p).unwrap(), v);
    }

    #[test]
    fn toy_corpus_contract() {
        let a = generate_toy_corpus(7, 1000, (4, 20), 64).unwrap();
        let b = generate_toy_corpus(7, 1000, (4, 20), 64).unwrap();
        assert_eq!(a, b);
        let mut seen_len = [false; 21];
        let mut distinct = std::collections::HashSet::new();
        for line in &a {
            let toks = tokenize(line);
            assert!((4..=20).contains(&toks.len()), "{line}");
            seen_len[toks.len()] = true;
            distinct.extend(toks);
        }
        assert!(seen_len[4..=20].iter().all(|&s| s));
        assert!(distinct.len() <= 64);
        assert_ne!(a, generate_toy_corpus(8, 1000, (4, 20), 64).unwrap());
    }

    #[test]
    fn toy_corpus_tiny_vocab() {
        let lines = generate_toy_corpus(1, 200, (4, 12), 10).unwrap();
        let distinct: std::collections::HashSet<String> =
            lines.iter().flat_map(|l| tokenize(l)).collect();
        assert!(distinct.len() <= 10);
        assert!(generate_toy_corpus(1, 5, (3, 8), 20).is_err());
        assert!(generate_toy_corpus(1, 5, (6, 5), 20).is_err());
        assert!(generate_toy_corpus(1, 5, (4, 8), 9).is_err());
    }

    #[test]
    fn toy_images_contract() {
        let a = generate_toy_images(3, 64, (8, 8, 1)).unwrap();
        assert_eq!(a, generate_toy_images(3, 64, (8, 8, 1)).unwrap());
        assert_eq!(a.len(), 64);
        for img in &a {
            assert_eq!(img.shape(), (8, 8, 1));
            assert!(img.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
            let (lo, hi) = img
                .pixels()
                .iter()
                .fold((1.0f64, 0.0f64), |(l, h), &p| (l.min(p), h.max(p)));
            assert!(hi - lo > 0.2, "image should contain a shape");
        }
        assert!(generate_toy_images(3, 1, (33, 8, 1)).is_err());
    }

    #[test]
    fn image_step_clamps() {
        let img = ImageMessage::filled((1, 2, 1), 1.0);
        let s = img.stepped(&[0.05, -0.05]).unwrap();
        assert_eq!(s.pixels(), [1.0, 0.95]);
        let z = ImageMessage::filled((2, 2, 1), 0.0).stepped(&[0.05; 4]).unwrap();
        assert!(z.pixels().iter().all(|&p| p == 0.05));
    }

    #[test]
    fn batching() {
        let v = ab_vocab();
        let msgs: Vec<TokenSequence> = (0..10)
            .map(|i| encode_text(&"a ".repeat(i % 3 + 1), &v, 10).unwrap())
            .collect();
        let sizes: Vec<usize> = batch(&msgs, 4, PAD, None).map(|b| b.ids.len()).collect();
        assert_eq!(sizes, [4, 4, 2]);
        for b in batch(&msgs, 4, PAD, Some(5)) {
            for (row, &len) in b.ids.iter().zip(&b.lengths) {
                assert_eq!(row[len - 1], EOS);
                assert!(row[..len].iter().all(|&i| i != PAD));
                assert!(row[len..].iter().all(|&i| i == PAD));
            }
        }
        let o1: Vec<_> = batch(&msgs, 4, PAD, Some(5)).map(|b| b.indices).collect();
        let o2: Vec<_> = batch(&msgs, 4, PAD, Some(5)).map(|b| b.indices).collect();
        assert_eq!(o1, o2);
    }

    proptest! {
        #[test]
        fn encode_decode_roundtrip(words in proptest::collection::vec(0usize..6, 0..8)) {
            let pool = ["alpha", "beta", "gamma", "delta", "eps", "zeta"];
            let v = build_vocab(&[pool.join(" ")], 1).unwrap();
            let line = words.iter().map(|&i| pool[i]).collect::<Vec<_>>().join(" ");
            let seq = encode_text(&line, &v, (words.len() + 2).max(3)).unwrap();
            prop_assert_eq!(decode_text(&seq, &v), line);
        }

        #[test]
        fn vocab_is_order_invariant(mut lines in proptest::collection::vec("[a-e]( [a-e]){0,4}", 0..8), seed in 0u64..100) {
            let v1 = build_vocab(&lines, 1).unwrap();
            lines.shuffle(&mut rng::seeded(seed));
            let v2 = build_vocab(&lines, 1).unwrap();
            prop_assert_eq!(v1.tokens(), v2.tokens());
            for (i, t) in v1.tokens().iter().enumerate() {
                prop_assert_eq!(v1.id(t), Some(i as u32));
            }
        }
    }
}
