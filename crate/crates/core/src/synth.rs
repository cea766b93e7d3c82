//! Synthetic review corpora with class-conditional word distributions.
//!
//! Every document mixes neutral words, drawn from a Zipf law over the neutral
//! block, with sentiment words. A sentiment word comes from the document's
//! own class block with probability `purity` and from the opposite block
//! otherwise. Label noise flips the observed rating of an exact fraction of
//! each class after generation.

use std::io::Write;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{label_reviews, LabeledDoc, Polarity, RawReview};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    /// Total documents; split evenly between the classes.
    pub n_docs: usize,
    pub vocab_size: usize,
    /// Size of each class's sentiment block.
    pub sentiment_words: usize,
    /// Probability that a token is a sentiment word.
    pub sentiment_rate: f64,
    /// Probability that a sentiment word matches the document's class.
    pub purity: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Fraction of each class whose observed label is flipped.
    pub label_noise: f64,
    pub zipf_exponent: f64,
    /// Fraction of each sentiment block listed in the generated lexicon.
    pub lexicon_coverage: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_docs: 5000,
            vocab_size: 2000,
            sentiment_words: 100,
            sentiment_rate: 0.2,
            purity: 0.9,
            min_len: 30,
            max_len: 80,
            label_noise: 0.1,
            zipf_exponent: 1.0,
            lexicon_coverage: 0.6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    /// Observed reviews, noise included. Ratings are 4/5 or 1/2.
    pub reviews: Vec<RawReview>,
    /// Class each review was generated from, before label noise.
    pub clean_labels: Vec<Polarity>,
    /// Sentiment lexicon: part of both sentiment blocks plus a few words that
    /// never occur in the corpus.
    pub lexicon: Vec<String>,
}

impl SynthCorpus {
    pub fn labeled(&self) -> Vec<LabeledDoc> {
        label_reviews(&self.reviews)
    }

    /// One `rating<TAB>text` line per review.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.reviews {
            writeln!(out, "{}\t{}", r.rating, r.tokens.join(" "))?;
        }
        Ok(())
    }

    pub fn write_lexicon<W: Write>(&self, mut out: W) -> Result<()> {
        for w in &self.lexicon {
            writeln!(out, "{w}")?;
        }
        Ok(())
    }
}

fn positive_word(i: usize) -> String {
    format!("pos{i:04}")
}

fn negative_word(i: usize) -> String {
    format!("neg{i:04}")
}

fn neutral_word(i: usize) -> String {
    format!("w{i:04}")
}

fn check(params: &SynthParams) -> Result<()> {
    let bad = |msg: &str| Err(Error::Parse(format!("synthetic corpus: {msg}")));
    if params.n_docs < 2 || !params.n_docs.is_multiple_of(2) {
        return bad("n_docs must be a positive even number");
    }
    if params.sentiment_words == 0 || 2 * params.sentiment_words >= params.vocab_size {
        return bad("sentiment blocks must leave room for neutral words");
    }
    if params.min_len == 0 || params.min_len > params.max_len {
        return bad("need 0 < min_len <= max_len");
    }
    for (name, v) in [
        ("sentiment_rate", params.sentiment_rate),
        ("purity", params.purity),
        ("label_noise", params.label_noise),
        ("lexicon_coverage", params.lexicon_coverage),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return bad(&format!("{name} must lie in [0, 1]"));
        }
    }
    Ok(())
}

/// Generates a balanced corpus; identical parameters give identical output.
pub fn generate(params: &SynthParams) -> Result<SynthCorpus> {
    check(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let s = params.sentiment_words;
    let neutral = params.vocab_size - 2 * s;
    let zipf = WeightedIndex::new((1..=neutral).map(|r| (r as f64).powf(-params.zipf_exponent)))
        .map_err(|e| Error::Parse(format!("synthetic corpus: {e}")))?;

    let half = params.n_docs / 2;
    let mut clean_labels: Vec<Polarity> = (0..params.n_docs)
        .map(|i| Polarity::from_bit(i < half))
        .collect();
    clean_labels.shuffle(&mut rng);

    let mut reviews: Vec<RawReview> = clean_labels
        .iter()
        .map(|&label| {
            let len = rng.gen_range(params.min_len..=params.max_len);
            let tokens = (0..len)
                .map(|_| {
                    if rng.gen_bool(params.sentiment_rate) {
                        let own = rng.gen_bool(params.purity);
                        let word = rng.gen_range(0..s);
                        if own == label.is_positive() {
                            positive_word(word)
                        } else {
                            negative_word(word)
                        }
                    } else {
                        neutral_word(zipf.sample(&mut rng))
                    }
                })
                .collect();
            RawReview {
                rating: star(label, &mut rng),
                tokens,
            }
        })
        .collect();

    let flips = (params.label_noise * half as f64).round() as usize;
    for class in [Polarity::Negative, Polarity::Positive] {
        let mut members: Vec<usize> = (0..params.n_docs)
            .filter(|&i| clean_labels[i] == class)
            .collect();
        members.shuffle(&mut rng);
        for &i in &members[..flips] {
            reviews[i].rating = star(class.flip(), &mut rng);
        }
    }

    let covered = (params.lexicon_coverage * s as f64).round() as usize;
    let mut lexicon: Vec<String> = (0..covered)
        .flat_map(|i| [positive_word(i), negative_word(i)])
        .collect();
    lexicon.extend((0..10).map(|i| format!("absent{i:02}")));

    Ok(SynthCorpus {
        reviews,
        clean_labels,
        lexicon,
    })
}

fn star(label: Polarity, rng: &mut impl Rng) -> u8 {
    let high = rng.gen_bool(0.5) as u8;
    match label {
        Polarity::Positive => 4 + high,
        Polarity::Negative => 1 + high,
    }
}
