//! Skip-gram word embeddings with negative sampling, review-vector averaging
//! and the hybrid (embedding ‖ CHI indicator) document features.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Vocabulary;

/// Dense real-valued feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl From<Vec<f64>> for DenseVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl AsRef<[f64]> for DenseVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkipGramParams {
    pub window: usize,
    pub negatives: usize,
    pub min_count: u64,
    pub epochs: usize,
    pub initial_lr: f64,
    /// Frequent-word subsampling threshold; 0 disables subsampling.
    pub subsample: f64,
    pub seed: u64,
    /// 1 gives bit-reproducible training. More workers update the shared
    /// matrices without locks and are only statistically reproducible.
    pub workers: usize,
}

impl Default for SkipGramParams {
    fn default() -> Self {
        Self {
            window: 5,
            negatives: 5,
            min_count: 5,
            epochs: 5,
            initial_lr: 0.025,
            subsample: 1e-3,
            seed: 1,
            workers: 1,
        }
    }
}

/// Word vectors plus the output (context) vectors used during training.
///
/// Models read back from disk carry only the input vectors; their counts are
/// zero and the output matrix is empty.
#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    dim: usize,
    vocab: Vocabulary,
    counts: Vec<u64>,
    input: Vec<f32>,
    output: Vec<f32>,
    params: SkipGramParams,
}

/// f32 matrix whose cells may be updated concurrently without locks.
struct SharedMatrix(Vec<AtomicU32>);

impl SharedMatrix {
    fn from_values(values: &[f32]) -> Self {
        Self(values.iter().map(|v| AtomicU32::new(v.to_bits())).collect())
    }

    fn load_row(&self, row: usize, dim: usize, buf: &mut [f32]) {
        let cells = &self.0[row * dim..(row + 1) * dim];
        for (b, c) in buf.iter_mut().zip(cells) {
            *b = f32::from_bits(c.load(Ordering::Relaxed));
        }
    }

    fn add_row(&self, row: usize, dim: usize, scale: f32, delta: &[f32]) {
        let cells = &self.0[row * dim..(row + 1) * dim];
        for (c, d) in cells.iter().zip(delta) {
            let v = f32::from_bits(c.load(Ordering::Relaxed)) + scale * d;
            c.store(v.to_bits(), Ordering::Relaxed);
        }
    }

    fn into_values(self) -> Vec<f32> {
        self.0
            .into_iter()
            .map(|c| f32::from_bits(c.into_inner()))
            .collect()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot32(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

/// Cumulative unigram^0.75 distribution for drawing negatives.
struct NoiseDistribution {
    cumulative: Vec<f64>,
}

impl NoiseDistribution {
    fn new(counts: &[u64]) -> Self {
        let mut acc = 0.0;
        let cumulative = counts
            .iter()
            .map(|&c| {
                acc += (c as f64).powf(0.75);
                acc
            })
            .collect();
        Self { cumulative }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().unwrap();
        let u = rng.gen::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }
}

struct Trainer<'a> {
    dim: usize,
    params: &'a SkipGramParams,
    counts: &'a [u64],
    total_words: u64,
    input: SharedMatrix,
    output: SharedMatrix,
    noise: NoiseDistribution,
    processed: AtomicU64,
}

impl Trainer<'_> {
    fn learning_rate(&self) -> f64 {
        let budget = (self.params.epochs as u64 * self.total_words + 1) as f64;
        let done = self.processed.load(Ordering::Relaxed) as f64;
        self.params.initial_lr * (1.0 - done / budget).max(1e-4)
    }

    fn keep<R: Rng>(&self, word: usize, rng: &mut R) -> bool {
        let t = self.params.subsample;
        if t <= 0.0 {
            return true;
        }
        let f = self.counts[word] as f64;
        let threshold = t * self.total_words as f64;
        let keep = ((f / threshold).sqrt() + 1.0) * threshold / f;
        keep >= 1.0 || rng.gen::<f64>() < keep
    }

    fn run_shard(&self, sentences: &[Vec<u32>], seed: u64) {
        let dim = self.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut center = vec![0f32; dim];
        let mut target = vec![0f32; dim];
        let mut grad = vec![0f32; dim];
        let mut kept: Vec<usize> = Vec::new();
        for _ in 0..self.params.epochs {
            for sentence in sentences {
                let lr = self.learning_rate();
                kept.clear();
                kept.extend(
                    sentence
                        .iter()
                        .map(|&w| w as usize)
                        .filter(|&w| self.keep(w, &mut rng)),
                );
                for pos in 0..kept.len() {
                    let reach = self.params.window - rng.gen_range(0..self.params.window.max(1));
                    let lo = pos.saturating_sub(reach);
                    let hi = (pos + reach).min(kept.len().saturating_sub(1));
                    let word = kept[pos];
                    for (ctx_pos, &context) in kept.iter().enumerate().take(hi + 1).skip(lo) {
                        if ctx_pos == pos {
                            continue;
                        }
                        self.input.load_row(word, dim, &mut center);
                        grad.iter_mut().for_each(|g| *g = 0.0);
                        for k in 0..=self.params.negatives {
                            let (tgt, label) = if k == 0 {
                                (context, 1.0)
                            } else {
                                let n = self.noise.sample(&mut rng);
                                if n == context {
                                    continue;
                                }
                                (n, 0.0)
                            };
                            self.output.load_row(tgt, dim, &mut target);
                            let g = ((label - sigmoid(dot32(&center, &target))) * lr) as f32;
                            for (gr, t) in grad.iter_mut().zip(&target) {
                                *gr += g * t;
                            }
                            self.output.add_row(tgt, dim, g, &center);
                        }
                        self.input.add_row(word, dim, 1.0, &grad);
                    }
                }
                self.processed
                    .fetch_add(sentence.len() as u64, Ordering::Relaxed);
            }
        }
    }
}

/// Trains skip-gram embeddings of dimension `dim` with negative sampling.
pub fn train_skipgram<D: AsRef<[String]>>(
    docs: &[D],
    dim: usize,
    params: &SkipGramParams,
) -> Result<EmbeddingModel> {
    if dim == 0 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: 0,
        });
    }
    if docs.is_empty() {
        return Err(Error::Empty("embedding training corpus"));
    }
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for doc in docs {
        for t in doc.as_ref() {
            *freq.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut words: Vec<(&str, u64)> = freq
        .into_iter()
        .filter(|&(_, c)| c >= params.min_count)
        .collect();
    if words.is_empty() {
        return Err(Error::EmptyVocabulary {
            min_count: params.min_count,
        });
    }
    words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let vocab = Vocabulary::from_words(words.iter().map(|&(w, _)| w));
    let counts: Vec<u64> = words.iter().map(|&(_, c)| c).collect();

    let sentences: Vec<Vec<u32>> = docs
        .iter()
        .map(|d| {
            d.as_ref()
                .iter()
                .filter_map(|t| vocab.get(t).map(|i| i as u32))
                .collect::<Vec<u32>>()
        })
        .filter(|s| !s.is_empty())
        .collect();
    let total_words: u64 = sentences.iter().map(|s| s.len() as u64).sum();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let half = 0.5 / dim as f32;
    let input: Vec<f32> = (0..vocab.len() * dim)
        .map(|_| rng.gen_range(-half..half))
        .collect();

    let trainer = Trainer {
        dim,
        params,
        counts: &counts,
        total_words,
        input: SharedMatrix::from_values(&input),
        output: SharedMatrix::from_values(&vec![0.0; vocab.len() * dim]),
        noise: NoiseDistribution::new(&counts),
        processed: AtomicU64::new(0),
    };

    let workers = params.workers.max(1);
    if workers == 1 {
        trainer.run_shard(&sentences, params.seed.wrapping_add(1));
    } else {
        let chunk = sentences.len().div_ceil(workers).max(1);
        std::thread::scope(|scope| {
            for (w, shard) in sentences.chunks(chunk).enumerate() {
                let trainer = &trainer;
                let seed = params.seed.wrapping_add(1 + w as u64);
                scope.spawn(move || trainer.run_shard(shard, seed));
            }
        });
    }

    let Trainer { input, output, .. } = trainer;
    Ok(EmbeddingModel {
        dim,
        vocab,
        counts,
        input: input.into_values(),
        output: output.into_values(),
        params: params.clone(),
    })
}

impl EmbeddingModel {
    /// Builds a model from explicit word vectors (all of length `dim`).
    pub fn from_vectors<S: Into<String>>(
        dim: usize,
        vectors: impl IntoIterator<Item = (S, Vec<f32>)>,
    ) -> Result<Self> {
        let mut vocab = Vocabulary::new();
        let mut input = Vec::new();
        for (word, v) in vectors {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            let word = word.into();
            if vocab.contains(&word) {
                return Err(Error::Parse(format!("duplicate word `{word}`")));
            }
            vocab.insert(word);
            input.extend_from_slice(&v);
        }
        Ok(Self {
            dim,
            counts: vec![0; vocab.len()],
            vocab,
            input,
            output: Vec::new(),
            params: SkipGramParams::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn params(&self) -> &SkipGramParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn vector(&self, word: &str) -> Option<&[f32]> {
        self.vocab.get(word).map(|i| self.row(i))
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.input[i * self.dim..(i + 1) * self.dim]
    }

    pub fn input_vectors(&self) -> &[f32] {
        &self.input
    }

    pub fn output_vectors(&self) -> &[f32] {
        &self.output
    }

    pub fn is_finite(&self) -> bool {
        self.input.iter().chain(&self.output).all(|v| v.is_finite())
    }

    /// Mean negative-sampling loss over `(center, context)` index pairs with
    /// the given negative samples per pair. Requires output vectors.
    pub fn negative_sampling_loss(
        &self,
        pairs: &[(usize, usize)],
        negatives: &[Vec<usize>],
    ) -> f64 {
        assert!(!self.output.is_empty(), "model has no output vectors");
        let out_row = |i: usize| &self.output[i * self.dim..(i + 1) * self.dim];
        let mut total = 0.0;
        for (&(center, context), negs) in pairs.iter().zip(negatives) {
            let c = self.row(center);
            total -= sigmoid(dot32(c, out_row(context))).ln();
            for &n in negs {
                total -= sigmoid(-dot32(c, out_row(n))).ln();
            }
        }
        total / pairs.len().max(1) as f64
    }

    fn header(&self) -> String {
        format!("word2vec D={} V={}", self.dim, self.vocab.len())
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.header())?;
        for (i, word) in self.vocab.words().iter().enumerate() {
            write!(out, "{word}")?;
            for v in self.row(i) {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.header())?;
        for (i, word) in self.vocab.words().iter().enumerate() {
            out.write_all(word.as_bytes())?;
            out.write_all(b" ")?;
            for v in self.row(i) {
                out.write_all(&v.to_le_bytes())?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    fn parse_header(line: &str) -> Result<(usize, usize)> {
        let bad = || Error::Parse(format!("bad embedding header `{}`", line.trim_end()));
        let mut parts = line.split_whitespace();
        if parts.next() != Some("word2vec") {
            return Err(bad());
        }
        let mut field = |key: &str| -> Result<usize> {
            parts
                .next()
                .and_then(|p| p.strip_prefix(key))
                .and_then(|v| v.parse().ok())
                .ok_or_else(bad)
        };
        let dim = field("D=")?;
        let size = field("V=")?;
        Ok((dim, size))
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty embedding file".into()))??;
        let (dim, size) = Self::parse_header(&header)?;
        let mut vectors = Vec::with_capacity(size);
        for line in lines.take(size) {
            let line = line?;
            let mut parts = line.split(' ');
            let word = parts.next().unwrap_or_default().to_owned();
            let v = parts
                .map(|p| p.parse::<f32>())
                .collect::<std::result::Result<Vec<f32>, _>>()
                .map_err(|e| Error::Parse(format!("bad vector for `{word}`: {e}")))?;
            vectors.push((word, v));
        }
        if vectors.len() != size {
            return Err(Error::Parse(format!(
                "expected {size} vectors, found {}",
                vectors.len()
            )));
        }
        Self::from_vectors(dim, vectors)
    }

    pub fn read_binary<R: BufRead>(mut input: R) -> Result<Self> {
        let mut header = String::new();
        input.read_line(&mut header)?;
        let (dim, size) = Self::parse_header(&header)?;
        let mut vectors = Vec::with_capacity(size);
        let mut buf = vec![0u8; dim * 4];
        for _ in 0..size {
            let mut word = Vec::new();
            input.read_until(b' ', &mut word)?;
            if word.pop() != Some(b' ') {
                return Err(Error::Parse("truncated binary embedding file".into()));
            }
            let word = String::from_utf8(word)
                .map_err(|e| Error::Parse(format!("word is not UTF-8: {e}")))?;
            input.read_exact(&mut buf)?;
            let v: Vec<f32> = buf
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let mut nl = [0u8; 1];
            input.read_exact(&mut nl)?;
            if nl[0] != b'\n' {
                return Err(Error::Parse(format!(
                    "missing record terminator after `{word}`"
                )));
            }
            vectors.push((word, v));
        }
        Self::from_vectors(dim, vectors)
    }

    pub fn save_binary(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_binary(&mut out)?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_binary(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_binary(BufReader::new(file))
    }
}

/// Mean of the input vectors of in-vocabulary tokens; all-unknown documents
/// map to the zero vector.
pub fn average_review_vector(tokens: &[String], model: &EmbeddingModel) -> DenseVector {
    let mut sum = vec![0.0f64; model.dim()];
    let mut n = 0usize;
    for t in tokens {
        if let Some(v) = model.vector(t) {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += *x as f64;
            }
            n += 1;
        }
    }
    if n > 0 {
        let inv = 1.0 / n as f64;
        sum.iter_mut().for_each(|s| *s *= inv);
    }
    DenseVector(sum)
}

/// Expected block sizes of the hybrid vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HybridDims {
    pub embedding: usize,
    pub chi_words: usize,
}

impl Default for HybridDims {
    fn default() -> Self {
        Self {
            embedding: 300,
            chi_words: 150,
        }
    }
}

/// `[average embedding ‖ binary CHI-word indicators]`.
pub fn hybrid_feature_vector(
    tokens: &[String],
    model: &EmbeddingModel,
    chi_vocab: &Vocabulary,
    dims: HybridDims,
) -> Result<DenseVector> {
    if model.dim() != dims.embedding {
        return Err(Error::DimensionMismatch {
            expected: dims.embedding,
            got: model.dim(),
        });
    }
    if chi_vocab.len() != dims.chi_words {
        return Err(Error::DimensionMismatch {
            expected: dims.chi_words,
            got: chi_vocab.len(),
        });
    }
    let mut out = average_review_vector(tokens, model).into_inner();
    let base = out.len();
    out.resize(base + chi_vocab.len(), 0.0);
    for t in tokens {
        if let Some(i) = chi_vocab.get(t) {
            out[base + i] = 1.0;
        }
    }
    Ok(DenseVector(out))
}

pub fn cosine(a: &DenseVector, b: &DenseVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}
