//! Fidelity and semantic-similarity scores: WER, BLEU, CIDEr-D, MSE and MSE
//! gain, plus the [`SimilarityMetric`] interface used as a training signal.

use std::collections::hash_map::DefaultHasher;
use std::collections::{HashMap as StdHashMap, HashSet as StdHashSet};
use std::hash::BuildHasherDefault;
use std::fmt::Display;
use std::fs;
use std::hash::Hash;
use std::path::Path;
use std::str::FromStr;

use crate::autograd::{Tape, Var};
use crate::corpus::ImageMessage;
use crate::{Error, Result};

// Fixed hashing keeps n-gram iteration, and so float summation order, identical across runs.
type HashMap<K, V> = StdHashMap<K, V, BuildHasherDefault<DefaultHasher>>;
type HashSet<K> = StdHashSet<K, BuildHasherDefault<DefaultHasher>>;

/// Word-level Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance divided by the reference length (may exceed 1).
pub fn wer<T: PartialEq>(reference: &[T], hyp: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::InvalidArgument("WER needs a non-empty reference".into()));
    }
    Ok(edit_distance(reference, hyp) as f64 / reference.len() as f64)
}

/// Position-by-position mismatch rate: missing or extra positions count as
/// errors, normalised by the reference length.
pub fn positional_wer<T: PartialEq>(reference: &[T], hyp: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::InvalidArgument("WER needs a non-empty reference".into()));
    }
    let n = reference.len().max(hyp.len());
    let errors = (0..n)
        .filter(|&i| reference.get(i).zip(hyp.get(i)).is_none_or(|(r, h)| r != h))
        .count();
    Ok(errors as f64 / reference.len() as f64)
}

fn ngram_counts<T: Hash + Eq + Clone>(tokens: &[T], n: usize) -> HashMap<Vec<T>, usize> {
    let mut counts = HashMap::default();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU with uniform weights over `1..=max_n`.
///
/// Modified precisions are clipped by the maximum count in any reference. A
/// zero precision for `n ≥ 2` is replaced by `1 / (hyp n-grams + 1)`; a zero
/// unigram precision gives 0. The brevity penalty uses the reference length
/// closest to the hypothesis (shorter on ties).
pub fn bleu<T: Hash + Eq + Clone>(refs: &[Vec<T>], hyp: &[T], max_n: usize) -> f64 {
    if hyp.is_empty() || refs.is_empty() || max_n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let hyp_counts = ngram_counts(hyp, n);
        let total: usize = hyp_counts.values().sum();
        let mut max_ref: HashMap<Vec<T>, usize> = HashMap::default();
        for r in refs {
            for (g, c) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        let matched: usize = hyp_counts
            .iter()
            .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        let p = if matched > 0 {
            matched as f64 / total as f64
        } else if n == 1 {
            return 0.0;
        } else {
            1.0 / (total as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    let c = hyp.len() as f64;
    let r = refs
        .iter()
        .map(|r| r.len())
        .min_by_key(|&l| (l.abs_diff(hyp.len()), l))
        .expect("non-empty refs") as f64;
    let bp = (1.0 - r / c).min(0.0).exp();
    bp * (log_sum / max_n as f64).exp()
}

/// Document frequencies of 1..4-grams over a reference corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct IdfTable<T: Hash + Eq> {
    num_docs: usize,
    df: HashMap<Vec<T>, usize>,
}

pub const CIDER_MAX_N: usize = 4;
pub const CIDER_SIGMA: f64 = 6.0;

impl<T: Hash + Eq + Clone> IdfTable<T> {
    /// Each document is the reference set of one item; an n-gram counts once per document.
    pub fn from_documents(docs: &[Vec<Vec<T>>]) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::InvalidArgument("IDF statistics need at least one document".into()));
        }
        let mut df = HashMap::default();
        for doc in docs {
            let mut seen = HashSet::default();
            for r in doc {
                for n in 1..=CIDER_MAX_N {
                    seen.extend(ngram_counts(r, n).into_keys());
                }
            }
            for g in seen {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        Ok(IdfTable {
            num_docs: docs.len(),
            df,
        })
    }

    /// One single-reference document per sentence.
    pub fn from_sentences(sentences: &[Vec<T>]) -> Result<Self> {
        let docs: Vec<Vec<Vec<T>>> = sentences.iter().map(|s| vec![s.clone()]).collect();
        Self::from_documents(&docs)
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn doc_freq(&self, ngram: &[T]) -> usize {
        self.df.get(ngram).copied().unwrap_or(0)
    }

    fn vectors(&self, tokens: &[T]) -> (Vec<HashMap<Vec<T>, f64>>, Vec<f64>) {
        let log_docs = (self.num_docs as f64).ln();
        let mut vecs = Vec::with_capacity(CIDER_MAX_N);
        let mut norms = Vec::with_capacity(CIDER_MAX_N);
        for n in 1..=CIDER_MAX_N {
            let v: HashMap<Vec<T>, f64> = ngram_counts(tokens, n)
                .into_iter()
                .map(|(g, tf)| {
                    let df = self.doc_freq(&g).max(1) as f64;
                    (g, tf as f64 * (log_docs - df.ln()))
                })
                .collect();
            norms.push(v.values().map(|x| x * x).sum::<f64>().sqrt());
            vecs.push(v);
        }
        (vecs, norms)
    }

    /// CIDEr-D in `[0, 10]`: clipped TF-IDF cosine per n-gram order with a
    /// Gaussian length penalty (σ = 6), averaged over orders and references, × 10.
    pub fn cider_d(&self, refs: &[Vec<T>], hyp: &[T]) -> f64 {
        if refs.is_empty() || hyp.is_empty() {
            return 0.0;
        }
        let (hv, hn) = self.vectors(hyp);
        let mut total = 0.0;
        for r in refs {
            let (rv, rn) = self.vectors(r);
            let delta = hyp.len() as f64 - r.len() as f64;
            let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
            let mut per_n = 0.0;
            for n in 0..CIDER_MAX_N {
                let mut val = 0.0;
                for (g, &x) in &hv[n] {
                    if let Some(&y) = rv[n].get(g) {
                        val += x.min(y) * y;
                    }
                }
                if hn[n] != 0.0 && rn[n] != 0.0 {
                    val /= hn[n] * rn[n];
                }
                per_n += val * penalty;
            }
            total += per_n / CIDER_MAX_N as f64;
        }
        10.0 * total / refs.len() as f64
    }
}

impl<T: Hash + Eq + Clone + Display + FromStr + Ord> IdfTable<T> {
    /// Text table: a `docs` header line, then `df<TAB>n-gram` lines (tokens
    /// space-separated), sorted for stable output.
    pub fn to_text(&self) -> String {
        let mut rows: Vec<(&Vec<T>, usize)> = self.df.iter().map(|(g, &c)| (g, c)).collect();
        rows.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.0.cmp(b.0)));
        let mut out = format!("docs\t{}\n", self.num_docs);
        for (g, c) in rows {
            let words: Vec<String> = g.iter().map(ToString::to_string).collect();
            out.push_str(&format!("{c}\t{}\n", words.join(" ")));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize| Error::InvalidArgument(format!("malformed IDF table at line {line}"));
        let mut lines = text.lines().enumerate();
        let num_docs = match lines.next() {
            Some((_, l)) => l
                .strip_prefix("docs\t")
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(1))?,
            None => return Err(bad(1)),
        };
        let mut df = HashMap::default();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let (c, g) = line.split_once('\t').ok_or_else(|| bad(i + 1))?;
            let c: usize = c.parse().map_err(|_| bad(i + 1))?;
            let gram = g
                .split(' ')
                .map(|w| w.parse::<T>().map_err(|_| bad(i + 1)))
                .collect::<Result<Vec<T>>>()?;
            df.insert(gram, c);
        }
        Ok(IdfTable { num_docs, df })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

fn check_shapes(a: &ImageMessage, b: &ImageMessage) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("images {:?} and {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn mse(a: &ImageMessage, b: &ImageMessage) -> Result<f64> {
    check_shapes(a, b)?;
    let s: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(s / a.len() as f64)
}

/// `mse(target, img_t) − mse(target, img_t1)`; positive means improvement.
pub fn mse_gain(target: &ImageMessage, img_t: &ImageMessage, img_t1: &ImageMessage) -> Result<f64> {
    check_shapes(img_t, img_t1)?;
    Ok(mse(target, img_t)? - mse(target, img_t1)?)
}

/// A semantic similarity score usable as a loss (when differentiable) or as
/// a reinforcement-learning reward (always).
pub trait SimilarityMetric {
    fn name(&self) -> &str;

    fn differentiable(&self) -> bool;

    /// Higher is better.
    fn score_tokens(&self, _refs: &[Vec<u32>], _hyp: &[u32]) -> Result<f64> {
        Err(Error::Unsupported {
            metric: self.name().to_string(),
            what: "token sequences".into(),
        })
    }

    /// Higher is better.
    fn score_image(&self, _target: &ImageMessage, _img: &ImageMessage) -> Result<f64> {
        Err(Error::Unsupported {
            metric: self.name().to_string(),
            what: "images".into(),
        })
    }

    /// Differentiable distance (negative similarity) between next-token
    /// logits and target ids.
    fn token_distance(&self, _t: &mut Tape, _logits: Var, _targets: &[usize]) -> Result<Var> {
        Err(Error::NotDifferentiable(self.name().to_string()))
    }

    /// Differentiable distance between a reconstruction and its target.
    fn image_distance(&self, _t: &mut Tape, _recon: Var, _target: Var) -> Result<Var> {
        Err(Error::NotDifferentiable(self.name().to_string()))
    }
}

/// CIDEr-D against fixed IDF statistics.
#[derive(Clone, Debug)]
pub struct CiderD {
    pub idf: IdfTable<u32>,
}

impl SimilarityMetric for CiderD {
    fn name(&self) -> &str {
        "cider_d"
    }
    fn differentiable(&self) -> bool {
        false
    }
    fn score_tokens(&self, refs: &[Vec<u32>], hyp: &[u32]) -> Result<f64> {
        Ok(self.idf.cider_d(refs, hyp))
    }
}

#[derive(Clone, Debug)]
pub struct Bleu {
    pub max_n: usize,
}

impl SimilarityMetric for Bleu {
    fn name(&self) -> &str {
        "bleu"
    }
    fn differentiable(&self) -> bool {
        false
    }
    fn score_tokens(&self, refs: &[Vec<u32>], hyp: &[u32]) -> Result<f64> {
        Ok(bleu(refs, hyp, self.max_n))
    }
}

/// `−WER` against the first reference.
#[derive(Clone, Debug, Default)]
pub struct NegWer;

impl SimilarityMetric for NegWer {
    fn name(&self) -> &str {
        "neg_wer"
    }
    fn differentiable(&self) -> bool {
        false
    }
    fn score_tokens(&self, refs: &[Vec<u32>], hyp: &[u32]) -> Result<f64> {
        let r = refs
            .first()
            .ok_or_else(|| Error::InvalidArgument("no reference".into()))?;
        Ok(-wer(r, hyp)?)
    }
}

/// `−MSE` between images.
#[derive(Clone, Debug, Default)]
pub struct NegMse;

impl SimilarityMetric for NegMse {
    fn name(&self) -> &str {
        "neg_mse"
    }
    fn differentiable(&self) -> bool {
        true
    }
    fn score_image(&self, target: &ImageMessage, img: &ImageMessage) -> Result<f64> {
        Ok(-mse(target, img)?)
    }
    fn image_distance(&self, t: &mut Tape, recon: Var, target: Var) -> Result<Var> {
        if t.shape(recon) != t.shape(target) {
            return Err(Error::Shape("reconstruction and target differ in shape".into()));
        }
        let d = t.sub(recon, target);
        let sq = t.mul(d, d);
        Ok(t.mean_all(sq))
    }
}

/// Token cross-entropy weighted per target id, normalised by the total
/// weight. Without weights it is the plain token-mean cross-entropy.
#[derive(Clone, Debug, Default)]
pub struct MaskedCe {
    pub token_weights: Option<Vec<f64>>,
}

impl MaskedCe {
    pub fn weights_for(&self, targets: &[usize]) -> Result<Vec<f64>> {
        match &self.token_weights {
            None => Ok(vec![1.0; targets.len()]),
            Some(w) => targets
                .iter()
                .map(|&i| {
                    w.get(i)
                        .copied()
                        .ok_or_else(|| Error::InvalidArgument(format!("no weight for token {i}")))
                })
                .collect(),
        }
    }
}

impl SimilarityMetric for MaskedCe {
    fn name(&self) -> &str {
        "masked_ce"
    }
    fn differentiable(&self) -> bool {
        true
    }
    fn token_distance(&self, t: &mut Tape, logits: Var, targets: &[usize]) -> Result<Var> {
        let w = self.weights_for(targets)?;
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidArgument("mask removes every target token".into()));
        }
        let ce = t.softmax_cross_entropy(logits, targets, &w);
        Ok(t.scale(ce, 1.0 / total))
    }
}

/// Looks a metric up by its configuration name.
pub fn metric_by_name(name: &str, idf: Option<&IdfTable<u32>>) -> Result<Box<dyn SimilarityMetric>> {
    Ok(match name {
        "cider_d" => Box::new(CiderD {
            idf: idf
                .cloned()
                .ok_or_else(|| Error::InvalidArgument("cider_d needs IDF statistics".into()))?,
        }),
        "bleu" => Box::new(Bleu { max_n: 4 }),
        "neg_wer" => Box::new(NegWer),
        "neg_mse" | "mse_gain" => Box::new(NegMse),
        "masked_ce" | "ce" => Box::new(MaskedCe::default()),
        other => return Err(Error::Config(vec![format!("unknown metric `{other}`")])),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn wer_examples() {
        assert_eq!(wer(&w("a b c"), &w("a b c")).unwrap(), 0.0);
        assert_eq!(wer(&w("a b c d"), &w("a x c d")).unwrap(), 0.25);
        assert_eq!(wer(&w("a b c d"), &[]).unwrap(), 1.0);
        assert!(wer::<String>(&[], &w("a")).is_err());
        assert_eq!(wer(&w("a"), &w("a b c")).unwrap(), 2.0);
    }

    #[test]
    fn positional_wer_counts_shifts() {
        // an insertion at the front shifts every later position
        assert_eq!(positional_wer(&w("a b c d"), &w("x a b c d")).unwrap(), 5.0 / 4.0);
        assert_eq!(wer(&w("a b c d"), &w("x a b c d")).unwrap(), 0.25);
    }

    #[test]
    fn bleu_repeated_token() {
        let r = vec![w("the cat sat on the mat")];
        let h = w("the the the the the the");
        // p1 = 2/6 (clipped); p2..p4 have no matches: 1/(5+1), 1/(4+1), 1/(3+1)
        let expect = ((2.0f64 / 6.0) * (1.0 / 6.0) * (1.0 / 5.0) * (1.0 / 4.0)).powf(0.25);
        assert!((bleu(&r, &h, 4) - expect).abs() < 1e-12);
    }

    #[test]
    fn bleu_brevity_penalty() {
        let r = vec![w("a b c d e f g h")];
        let h = w("a b c d e f");
        let expect = (1.0f64 - 8.0 / 6.0).exp();
        assert!((bleu(&r, &h, 4) - expect).abs() < 1e-12);
        assert_eq!(bleu(&r, &w("a b c d e f g h"), 4), 1.0);
        assert_eq!(bleu(&r, &[], 4), 0.0);
    }

    #[test]
    fn cider_identical_is_ten_and_disjoint_is_zero() {
        let corpus = vec![w("a b c d e"), w("f g h i"), w("a f k l m")];
        let idf = IdfTable::from_sentences(&corpus).unwrap();
        let refs = vec![w("f g h i")];
        assert!((idf.cider_d(&refs, &w("f g h i")) - 10.0).abs() < 1e-12);
        assert_eq!(idf.cider_d(&refs, &w("x y z")), 0.0);
        assert_eq!(idf.cider_d(&refs, &[]), 0.0);
    }

    #[test]
    fn idf_table_roundtrip() {
        let corpus = vec![vec![4u32, 5, 6], vec![4, 7]];
        let idf = IdfTable::from_sentences(&corpus).unwrap();
        let back = IdfTable::<u32>::from_text(&idf.to_text()).unwrap();
        assert_eq!(back, idf);
        assert_eq!(idf.doc_freq(&[4]), 2);
        assert_eq!(idf.doc_freq(&[4, 5, 6]), 1);
    }

    #[test]
    fn mse_examples() {
        let z = ImageMessage::filled((2, 2, 1), 0.0);
        let o = ImageMessage::filled((2, 2, 1), 1.0);
        let h = ImageMessage::filled((2, 2, 1), 0.5);
        assert_eq!(mse(&z, &z).unwrap(), 0.0);
        assert_eq!(mse(&z, &o).unwrap(), 1.0);
        assert_eq!(mse(&z, &h).unwrap(), 0.25);
        assert_eq!(mse_gain(&z, &h, &h).unwrap(), 0.0);
        assert!(mse_gain(&z, &z, &h).unwrap() < 0.0);
        assert!(mse(&z, &ImageMessage::filled((2, 3, 1), 0.0)).is_err());
    }

    #[test]
    fn non_differentiable_metrics_refuse_gradients() {
        let store = crate::autograd::ParamStore::new();
        let mut t = Tape::new(&store);
        let x = t.constant(crate::autograd::Mat::zeros((1, 3)));
        assert!(matches!(NegWer.token_distance(&mut t, x, &[0]), Err(Error::NotDifferentiable(_))));
        assert!(MaskedCe::default().token_distance(&mut t, x, &[0]).is_ok());
    }

    proptest! {
        #[test]
        fn wer_normalisation_symmetry(a in proptest::collection::vec(0u8..4, 1..8), b in proptest::collection::vec(0u8..4, 1..8)) {
            let l = wer(&a, &b).unwrap() * a.len() as f64;
            let r = wer(&b, &a).unwrap() * b.len() as f64;
            prop_assert!((l - r).abs() < 1e-9);
        }

        #[test]
        fn cider_reference_order_invariant(
            refs in proptest::collection::vec(proptest::collection::vec(0u32..6, 1..7), 2..4),
            hyp in proptest::collection::vec(0u32..6, 1..7),
        ) {
            let idf = IdfTable::from_sentences(&refs).unwrap();
            let mut rev = refs.clone();
            rev.reverse();
            let a = idf.cider_d(&refs, &hyp);
            let b = idf.cider_d(&rev, &hyp);
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!((0.0..=10.0 + 1e-9).contains(&a));
        }

        #[test]
        fn bleu_in_unit_interval(r in proptest::collection::vec(0u8..5, 1..10), h in proptest::collection::vec(0u8..5, 1..10)) {
            let s = bleu(std::slice::from_ref(&r), &h, 4);
            prop_assert!((0.0..=1.0).contains(&s));
            if s == 1.0 && r.len() >= 4 {
                prop_assert_eq!(r, h);
            }
        }
    }
}
