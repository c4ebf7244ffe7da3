//! Skip-gram with negative sampling over walk corpora, plus incremental
//! vocabulary extension for adding new entities to a trained model.
//!
//! Training is single-threaded and bit-reproducible for a given seed. Every
//! training call derives its own RNG from the seed it is given, so a model
//! restored from disk continues exactly like the in-memory original.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use log::debug;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;
use crate::walker::WalkCorpus;

const MAGIC: &[u8; 8] = b"GKEMBED\0";
const VERSION: u32 = 1;
const LR_FLOOR: f64 = 1e-4;
const NOISE_POWER: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkipGramParams {
    pub dim: usize,
    pub window: usize,
    pub epochs: usize,
    pub negatives: usize,
    pub learning_rate: f64,
    pub min_count: u64,
}

impl Default for SkipGramParams {
    fn default() -> Self {
        Self {
            dim: 500,
            window: 5,
            epochs: 5,
            negatives: 5,
            learning_rate: 0.025,
            min_count: 1,
        }
    }
}

impl SkipGramParams {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidParameter("embedding dimension must be positive".into()));
        }
        if self.window == 0 {
            return Err(Error::InvalidParameter("window must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter("learning rate must be positive".into()));
        }
        if self.min_count == 0 {
            return Err(Error::InvalidParameter("min_count must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<u64>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, i: usize) -> &str {
        &self.tokens[i]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn count(&self, i: usize) -> u64 {
        self.counts[i]
    }

    fn push(&mut self, token: String, count: u64) -> usize {
        let i = self.tokens.len();
        self.index.insert(token.clone(), i);
        self.tokens.push(token);
        self.counts.push(count);
        i
    }

    /// Unigram counts raised to 0.75.
    fn noise(&self) -> Option<WeightedIndex<f64>> {
        WeightedIndex::new(self.counts.iter().map(|&c| (c as f64).powf(NOISE_POWER))).ok()
    }
}

/// Token counts in first-appearance order.
fn count_tokens(corpus: &WalkCorpus) -> Vec<(String, u64)> {
    let mut order: Vec<(String, u64)> = Vec::new();
    let mut pos: HashMap<&str, usize> = HashMap::new();
    for w in &corpus.walks {
        for t in &w.tokens {
            match pos.get(t.as_str()) {
                Some(&i) => order[i].1 += 1,
                None => {
                    pos.insert(t.as_str(), order.len());
                    order.push((t.clone(), 1));
                }
            }
        }
    }
    order
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// -ln σ(x), computed without overflow.
#[inline]
fn neg_log_sigmoid(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Negative-sampling loss for one (center, context) pair:
/// `-ln σ(v·u) - Σ ln σ(-v·u_neg)`.
pub fn pair_loss(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> f64 {
    neg_log_sigmoid(dot(center, context))
        + negatives.iter().map(|n| neg_log_sigmoid(-dot(center, n))).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairGradients {
    pub center: Vec<f64>,
    pub context: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

/// Analytic gradient of [`pair_loss`] with respect to every vector involved.
pub fn pair_gradients(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> PairGradients {
    let mut g_center = vec![0.0; center.len()];
    // d/dx -ln σ(x) = σ(x) - 1 ; d/dx -ln σ(-x) = σ(x)
    let coef = sigmoid(dot(center, context)) - 1.0;
    let g_context: Vec<f64> = center.iter().map(|c| coef * c).collect();
    for (g, u) in g_center.iter_mut().zip(context) {
        *g += coef * u;
    }
    let mut g_negs = Vec::with_capacity(negatives.len());
    for n in negatives {
        let coef = sigmoid(dot(center, n));
        g_negs.push(center.iter().map(|c| coef * c).collect());
        for (g, u) in g_center.iter_mut().zip(n.iter()) {
            *g += coef * u;
        }
    }
    PairGradients {
        center: g_center,
        context: g_context,
        negatives: g_negs,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    params: SkipGramParams,
    vocab: Vocabulary,
    /// |V| × dim, row-major. These are the embeddings.
    input: Vec<f64>,
    /// |V| × dim context vectors.
    output: Vec<f64>,
    /// Mean pair loss per epoch of the most recent training call.
    epoch_losses: Vec<f64>,
}

impl EmbeddingModel {
    pub fn params(&self) -> &SkipGramParams {
        &self.params
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.params.dim
    }

    pub fn epoch_losses(&self) -> &[f64] {
        &self.epoch_losses
    }

    pub fn input_row(&self, i: usize) -> &[f64] {
        let d = self.params.dim;
        &self.input[i * d..(i + 1) * d]
    }

    pub fn output_row(&self, i: usize) -> &[f64] {
        let d = self.params.dim;
        &self.output[i * d..(i + 1) * d]
    }

    pub fn get_embedding(&self, token: &str) -> Result<&[f64]> {
        self.vocab
            .get(token)
            .map(|i| self.input_row(i))
            .ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vocab.get(token).is_some()
    }

    pub fn cosine(&self, a: &str, b: &str) -> Result<f64> {
        let (x, y) = (self.get_embedding(a)?, self.get_embedding(b)?);
        let n = dot(x, x).sqrt() * dot(y, y).sqrt();
        Ok(if n > 0.0 { dot(x, y) / n } else { 0.0 })
    }

    fn empty(params: SkipGramParams) -> Self {
        Self {
            params,
            vocab: Vocabulary::default(),
            input: Vec::new(),
            output: Vec::new(),
            epoch_losses: Vec::new(),
        }
    }

    /// Appends tokens not yet in the vocabulary (input rows uniform in
    /// ±0.5/dim, output rows zero) and adds the counts of known ones.
    /// Returns the number of tokens added.
    fn absorb_counts(&mut self, counts: &[(String, u64)], rng: &mut impl Rng) -> usize {
        let d = self.params.dim;
        let bound = 0.5 / d as f64;
        let mut added = 0;
        for (tok, c) in counts {
            match self.vocab.get(tok) {
                Some(i) => self.vocab.counts[i] += c,
                None if *c >= self.params.min_count => {
                    self.vocab.push(tok.clone(), *c);
                    self.input.extend((0..d).map(|_| rng.random_range(-bound..bound)));
                    self.output.extend(std::iter::repeat_n(0.0, d));
                    added += 1;
                }
                None => {}
            }
        }
        added
    }

    fn encode(&self, corpus: &WalkCorpus) -> Vec<Vec<usize>> {
        corpus
            .walks
            .iter()
            .map(|w| w.tokens.iter().filter_map(|t| self.vocab.get(t)).collect())
            .collect()
    }

    fn train_encoded(&mut self, walks: &[Vec<usize>], rng: &mut impl Rng) -> Result<()> {
        let p = self.params;
        let d = p.dim;
        let noise = self
            .vocab
            .noise()
            .ok_or_else(|| Error::InvalidInput("vocabulary is empty".into()))?;
        let n_tokens: usize = walks.iter().map(Vec::len).sum();
        let total = (p.epochs * n_tokens).max(1) as f64;
        let mut processed = 0usize;
        let mut neu1e = vec![0.0; d];
        let mut targets: Vec<(usize, f64)> = Vec::with_capacity(p.negatives + 1);
        self.epoch_losses.clear();

        for epoch in 0..p.epochs {
            let mut loss_sum = 0.0;
            let mut pairs = 0usize;
            for walk in walks {
                for (pos, &center) in walk.iter().enumerate() {
                    let lr = p.learning_rate * (1.0 - processed as f64 / total).max(LR_FLOOR);
                    processed += 1;
                    let lo = pos.saturating_sub(p.window);
                    let hi = (pos + p.window).min(walk.len() - 1);
                    for (j, &ctx) in walk.iter().enumerate().take(hi + 1).skip(lo) {
                        if j == pos {
                            continue;
                        }
                        targets.clear();
                        targets.push((ctx, 1.0));
                        for _ in 0..p.negatives {
                            let mut neg = noise.sample(rng);
                            let mut tries = 0;
                            while neg == ctx && tries < 10 && self.vocab.len() > 1 {
                                neg = noise.sample(rng);
                                tries += 1;
                            }
                            if neg != ctx {
                                targets.push((neg, 0.0));
                            }
                        }
                        neu1e.iter_mut().for_each(|x| *x = 0.0);
                        let v = &self.input[center * d..(center + 1) * d];
                        for &(t, label) in &targets {
                            let u = &mut self.output[t * d..(t + 1) * d];
                            let f = dot(v, u);
                            loss_sum += if label > 0.0 { neg_log_sigmoid(f) } else { neg_log_sigmoid(-f) };
                            // -(dL/df) scaled by the learning rate
                            let g = (label - sigmoid(f)) * lr;
                            for k in 0..d {
                                neu1e[k] += g * u[k];
                                u[k] += g * v[k];
                            }
                        }
                        let v = &mut self.input[center * d..(center + 1) * d];
                        for k in 0..d {
                            v[k] += neu1e[k];
                        }
                        pairs += 1;
                    }
                }
            }
            let mean = if pairs > 0 { loss_sum / pairs as f64 } else { 0.0 };
            debug!("skip-gram epoch {epoch}: mean pair loss {mean:.6}");
            self.epoch_losses.push(mean);
        }
        Ok(())
    }

    /// Extends the vocabulary with tokens first seen in `corpus` and trains
    /// on `corpus` alone, with a fresh learning-rate schedule. Input vectors
    /// of tokens absent from `corpus` are left bit-identical.
    pub fn update(&mut self, corpus: &WalkCorpus, seed: u64) -> Result<usize> {
        let mut rng = seed::rng(seed);
        let counts = count_tokens(corpus);
        let added = self.absorb_counts(&counts, &mut rng);
        let walks = self.encode(corpus);
        self.train_encoded(&walks, &mut rng)?;
        Ok(added)
    }
}

pub fn train_skipgram(corpus: &WalkCorpus, params: &SkipGramParams, seed: u64) -> Result<EmbeddingModel> {
    params.validate()?;
    if corpus.n_tokens() == 0 {
        return Err(Error::InvalidInput("cannot train on an empty corpus".into()));
    }
    let mut model = EmbeddingModel::empty(*params);
    model.update(corpus, seed)?;
    Ok(model)
}

/// Returns a copy of `model` extended and trained on `new_corpus`.
pub fn update_model(model: &EmbeddingModel, new_corpus: &WalkCorpus, seed: u64) -> Result<EmbeddingModel> {
    let mut m = model.clone();
    m.update(new_corpus, seed)?;
    Ok(m)
}

/// `token<TAB>v1<TAB>...<TAB>vd` lines for the given tokens.
pub fn export_tsv<'a>(model: &EmbeddingModel, tokens: impl IntoIterator<Item = &'a str>) -> Result<String> {
    let mut out = String::new();
    for t in tokens {
        let v = model.get_embedding(t)?;
        out.push_str(t);
        for x in v {
            let _ = write!(out, "\t{x}");
        }
        out.push('\n');
    }
    Ok(out)
}

// --- binary format -------------------------------------------------------

fn put_u64(w: &mut impl Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64s(w: &mut impl Write, vs: &[f64]) -> io::Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => Error::ModelFormat("truncated file".into()),
            _ => Error::ModelFormat(e.to_string()),
        })?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn usize(&mut self, limit: u64, what: &str) -> Result<usize> {
        let v = self.u64()?;
        if v > limit {
            return Err(Error::ModelFormat(format!("implausible {what} {v}")));
        }
        Ok(v as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

impl EmbeddingModel {
    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        let p = &self.params;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for v in [p.dim as u64, p.window as u64, p.epochs as u64, p.negatives as u64] {
            put_u64(w, v)?;
        }
        w.write_all(&p.learning_rate.to_le_bytes())?;
        put_u64(w, p.min_count)?;
        put_u64(w, self.vocab.len() as u64)?;
        for (t, c) in self.vocab.tokens.iter().zip(&self.vocab.counts) {
            put_u64(w, t.len() as u64)?;
            w.write_all(t.as_bytes())?;
            put_u64(w, *c)?;
        }
        put_f64s(w, &self.input)?;
        put_f64s(w, &self.output)?;
        put_u64(w, self.epoch_losses.len() as u64)?;
        put_f64s(w, &self.epoch_losses)
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = Reader { inner: r };
        if &r.bytes::<8>()? != MAGIC {
            return Err(Error::ModelFormat("bad magic header".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        const LIMIT: u64 = 1 << 32;
        let params = SkipGramParams {
            dim: r.usize(LIMIT, "dimension")?,
            window: r.usize(LIMIT, "window")?,
            epochs: r.usize(LIMIT, "epochs")?,
            negatives: r.usize(LIMIT, "negatives")?,
            learning_rate: r.f64()?,
            min_count: r.u64()?,
        };
        params.validate().map_err(|e| Error::ModelFormat(e.to_string()))?;
        let n = r.usize(LIMIT, "vocabulary size")?;
        let mut vocab = Vocabulary::default();
        for _ in 0..n {
            let len = r.usize(1 << 20, "token length")?;
            let mut buf = vec![0u8; len];
            r.inner
                .read_exact(&mut buf)
                .map_err(|_| Error::ModelFormat("truncated file".into()))?;
            let tok = String::from_utf8(buf).map_err(|_| Error::ModelFormat("token is not UTF-8".into()))?;
            let count = r.u64()?;
            if vocab.get(&tok).is_some() {
                return Err(Error::ModelFormat(format!("duplicate token {tok}")));
            }
            vocab.push(tok, count);
        }
        let input = r.f64s(n * params.dim)?;
        let output = r.f64s(n * params.dim)?;
        let n_losses = r.usize(LIMIT, "epoch count")?;
        let epoch_losses = r.f64s(n_losses)?;
        let mut rest = [0u8; 1];
        if r.inner.read(&mut rest).map_err(|e| Error::ModelFormat(e.to_string()))? != 0 {
            return Err(Error::ModelFormat("trailing bytes after model".into()));
        }
        Ok(Self {
            params,
            vocab,
            input,
            output,
            epoch_losses,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(bytes.as_slice())
    }
}

pub fn save_model(model: &EmbeddingModel, path: impl AsRef<Path>) -> Result<()> {
    model.save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<EmbeddingModel> {
    EmbeddingModel::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(lines: &[&str]) -> WalkCorpus {
        WalkCorpus::from_text(&lines.join("\n"))
    }

    fn small() -> SkipGramParams {
        SkipGramParams {
            dim: 16,
            ..SkipGramParams::default()
        }
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(train_skipgram(&WalkCorpus::default(), &small(), 1).is_err());
    }

    #[test]
    fn default_dimension() {
        let m = train_skipgram(&corpus(&["a p b"]), &SkipGramParams::default(), 1).unwrap();
        assert_eq!(m.get_embedding("a").unwrap().len(), 500);
        assert_eq!(m.get_embedding("a").unwrap(), m.get_embedding("a").unwrap());
        assert!(matches!(m.get_embedding("zz"), Err(Error::UnknownToken(_))));
    }

    #[test]
    fn zero_epochs_keeps_initialization() {
        let p = SkipGramParams { epochs: 0, ..small() };
        let m = train_skipgram(&corpus(&["a p b", "b q c"]), &p, 9).unwrap();
        let bound = 0.5 / 16.0;
        for i in 0..m.vocab().len() {
            assert!(m.input_row(i).iter().all(|x| x.abs() <= bound));
            assert!(m.output_row(i).iter().all(|&x| x == 0.0));
        }
        // same seed, same initialization
        let again = train_skipgram(&corpus(&["a p b", "b q c"]), &p, 9).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn one_step_matches_gradient_descent() {
        // a single positive pair with no negatives: v' = v - lr * dL/dv
        let p = SkipGramParams {
            dim: 4,
            window: 1,
            epochs: 1,
            negatives: 0,
            learning_rate: 0.5,
            min_count: 1,
        };
        let mut m = EmbeddingModel::empty(p);
        let mut rng = seed::rng(3);
        m.absorb_counts(&[("a".into(), 1), ("b".into(), 1)], &mut rng);
        m.output[4..8].copy_from_slice(&[0.1, -0.2, 0.3, 0.05]);
        let v0 = m.input_row(0).to_vec();
        let u0 = m.output_row(1).to_vec();
        let g = pair_gradients(&v0, &u0, &[]);
        // walk "a" only as center with context "b": encode manually
        m.train_encoded(&[vec![0, 1]], &mut rng).unwrap();
        // the first update (center a) uses lr = 0.5 * (1 - 0/2)
        // second update (center b, context a) modifies input[b] and output[a] only
        for k in 0..4 {
            assert!((m.input_row(0)[k] - (v0[k] - 0.5 * g.center[k])).abs() < 1e-15);
        }
    }

    #[test]
    fn save_load_roundtrip_and_truncation() {
        let m = train_skipgram(&corpus(&["a p b", "b q c d"]), &small(), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        m.save(&path).unwrap();
        assert_eq!(EmbeddingModel::load(&path).unwrap(), m);

        let bytes = fs::read(&path).unwrap();
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(EmbeddingModel::read_from(cut), Err(Error::ModelFormat(_))));
        let mut wrong = bytes.clone();
        wrong[8] = 99;
        assert!(EmbeddingModel::read_from(wrong.as_slice()).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn export_rows() {
        let m = train_skipgram(&corpus(&["a p b"]), &small(), 2).unwrap();
        let tsv = export_tsv(&m, ["a", "b"]).unwrap();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split('\t').count(), 17);
        assert!(export_tsv(&m, ["nope"]).is_err());
    }
}
