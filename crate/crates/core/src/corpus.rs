//! Loading, labeling, balancing and fold splitting of star-rated reviews.
//!
//! Reviews arrive pre-tokenized: tokens are separated by whitespace. Ratings
//! of 4 and 5 stars are positive, 1 and 2 are negative, and 3-star reviews are
//! discarded as ambiguous.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawReview {
    pub rating: u8,
    pub tokens: Vec<String>,
}

/// Binary sentiment label. The numeric codes are the bits used in prediction
/// vectors: 0 is negative, 1 is positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Polarity {
    Negative = 0,
    Positive = 1,
}

impl Polarity {
    pub const ALL: [Polarity; 2] = [Polarity::Negative, Polarity::Positive];

    pub fn from_bit(bit: bool) -> Self {
        if bit {
            Polarity::Positive
        } else {
            Polarity::Negative
        }
    }

    /// Index into per-class arrays (`[negative, positive]`).
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn bit(self) -> u8 {
        self as u8
    }

    pub fn is_positive(self) -> bool {
        self == Polarity::Positive
    }

    /// `+1.0` for positive, `-1.0` for negative.
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Positive => 1.0,
            Polarity::Negative => -1.0,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Polarity::Negative => f.write_str("negative"),
            Polarity::Positive => f.write_str("positive"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDoc {
    pub tokens: Vec<String>,
    pub label: Polarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Tsv,
    Jsonl,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(CorpusFormat::Tsv),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(Error::Parse(format!("unknown corpus format `{other}`"))),
        }
    }
}

/// Parsed reviews plus the number of malformed lines that were skipped.
#[derive(Debug, Clone, Default)]
pub struct LoadedCorpus {
    pub reviews: Vec<RawReview>,
    pub skipped: usize,
}

#[derive(Deserialize)]
struct JsonReview {
    rating: i64,
    text: String,
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<LoadedCorpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let loaded = parse_corpus(BufReader::new(file), format).map_err(|e| match e {
        Error::Stream(source) => Error::io(path, source),
        other => other,
    })?;
    if loaded.skipped > 0 {
        log::warn!(
            "{}: skipped {} malformed line(s)",
            path.display(),
            loaded.skipped
        );
    }
    Ok(loaded)
}

/// Parses a corpus from any reader. Blank lines are ignored; malformed lines
/// and ratings outside 1..=5 are counted in [`LoadedCorpus::skipped`].
pub fn parse_corpus<R: BufRead>(reader: R, format: CorpusFormat) -> Result<LoadedCorpus> {
    let mut out = LoadedCorpus::default();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = match format {
            CorpusFormat::Tsv => parse_tsv_line(&line),
            CorpusFormat::Jsonl => parse_jsonl_line(&line),
        };
        match parsed {
            Some(review) => out.reviews.push(review),
            None => {
                log::debug!("skipping malformed line {}", lineno + 1);
                out.skipped += 1;
            }
        }
    }
    Ok(out)
}

fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_owned).collect()
}

fn make_review(rating: i64, text: &str) -> Option<RawReview> {
    if !(1..=5).contains(&rating) {
        return None;
    }
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return None;
    }
    Some(RawReview {
        rating: rating as u8,
        tokens,
    })
}

fn parse_tsv_line(line: &str) -> Option<RawReview> {
    let (rating, text) = line.split_once('\t')?;
    let rating: i64 = rating.trim().parse().ok()?;
    make_review(rating, text)
}

fn parse_jsonl_line(line: &str) -> Option<RawReview> {
    let review: JsonReview = serde_json::from_str(line).ok()?;
    make_review(review.rating, &review.text)
}

/// Maps star ratings to polarity, dropping 3-star reviews.
pub fn label_reviews(reviews: &[RawReview]) -> Vec<LabeledDoc> {
    reviews
        .iter()
        .filter_map(|r| {
            let label = match r.rating {
                4 | 5 => Polarity::Positive,
                1 | 2 => Polarity::Negative,
                _ => return None,
            };
            Some(LabeledDoc {
                tokens: r.tokens.clone(),
                label,
            })
        })
        .collect()
}

pub fn class_counts(docs: &[LabeledDoc]) -> [usize; 2] {
    let mut counts = [0usize; 2];
    for d in docs {
        counts[d.label.index()] += 1;
    }
    counts
}

/// Samples exactly `per_class` documents of each class without replacement.
/// The output is shuffled so classes are interleaved.
pub fn balance(docs: &[LabeledDoc], per_class: usize, seed: u64) -> Result<Vec<LabeledDoc>> {
    let counts = class_counts(docs);
    for class in Polarity::ALL {
        if counts[class.index()] < per_class {
            return Err(Error::InsufficientClass {
                class,
                available: counts[class.index()],
                requested: per_class,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(2 * per_class);
    for class in Polarity::ALL {
        let mut idx: Vec<usize> = (0..docs.len())
            .filter(|&i| docs[i].label == class)
            .collect();
        idx.shuffle(&mut rng);
        picked.extend_from_slice(&idx[..per_class]);
    }
    picked.shuffle(&mut rng);
    Ok(picked.into_iter().map(|i| docs[i].clone()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldScheme {
    /// Two folds train, one fold test.
    ThreeFold,
    /// Two folds train, one validates, one tests.
    FourFold,
}

impl FoldScheme {
    pub fn folds(self) -> usize {
        match self {
            FoldScheme::ThreeFold => 3,
            FoldScheme::FourFold => 4,
        }
    }

    /// Target sizes of (train, validate, test) for `n` documents.
    fn part_sizes(self, n: usize) -> [usize; 3] {
        match self {
            FoldScheme::ThreeFold => {
                let test = n / 3;
                [n - test, 0, test]
            }
            FoldScheme::FourFold => {
                let quarter = n / 4;
                [n - 2 * quarter, quarter, quarter]
            }
        }
    }
}

impl FromStr for FoldScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "three_fold" | "3" => Ok(FoldScheme::ThreeFold),
            "four_fold" | "4" => Ok(FoldScheme::FourFold),
            other => Err(Error::Parse(format!("unknown fold scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Train,
    Validate,
    Test,
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Part::Train => f.write_str("train"),
            Part::Validate => f.write_str("validate"),
            Part::Test => f.write_str("test"),
        }
    }
}

/// Where a document set came from: which split, and which part of it.
/// Models carry the provenance of their training data so that stacking can
/// refuse bases that saw validation or test documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Provenance {
    pub split_id: u64,
    pub part: Part,
}

#[derive(Debug, Clone)]
pub struct DocSet {
    pub provenance: Provenance,
    pub docs: Vec<LabeledDoc>,
}

impl DocSet {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn labels(&self) -> Vec<Polarity> {
        self.docs.iter().map(|d| d.label).collect()
    }

    pub fn tokens(&self) -> Vec<&[String]> {
        self.docs.iter().map(|d| d.tokens.as_slice()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct CorpusSplit {
    pub train: DocSet,
    pub validate: Option<DocSet>,
    pub test: DocSet,
    pub seed: u64,
}

/// Stratified split into train / (validate) / test parts.
///
/// Part sizes are fixed by the scheme (test and validate get `n / folds`
/// documents each, train the rest). Within each part the class counts differ
/// from the exact proportional share by less than one document.
pub fn split(docs: &[LabeledDoc], scheme: FoldScheme, seed: u64) -> Result<CorpusSplit> {
    let folds = scheme.folds();
    if docs.len() < folds {
        return Err(Error::TooFewDocs {
            available: docs.len(),
            folds,
        });
    }
    let n = docs.len();
    let sizes = scheme.part_sizes(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let split_id: u64 = rng.gen();

    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, d) in docs.iter().enumerate() {
        by_class[d.label.index()].push(i);
    }
    for idx in by_class.iter_mut() {
        idx.shuffle(&mut rng);
    }

    // Largest-remainder apportionment of the negative class over the parts;
    // the positive class takes whatever is left in each part.
    let n_neg = by_class[0].len();
    let mut neg_share = [0usize; 3];
    let mut remainders = [(0usize, 0usize); 3];
    for p in 0..3 {
        let num = n_neg * sizes[p];
        neg_share[p] = num / n;
        remainders[p] = (num % n, p);
    }
    let left = n_neg - neg_share.iter().sum::<usize>();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, p) in remainders.iter().take(left) {
        neg_share[p] += 1;
    }

    let mut parts: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let (mut neg_at, mut pos_at) = (0usize, 0usize);
    for p in 0..3 {
        let neg = neg_share[p];
        let pos = sizes[p] - neg;
        parts[p].extend_from_slice(&by_class[0][neg_at..neg_at + neg]);
        parts[p].extend_from_slice(&by_class[1][pos_at..pos_at + pos]);
        neg_at += neg;
        pos_at += pos;
        parts[p].shuffle(&mut rng);
    }

    let make = |idx: &[usize], part: Part| DocSet {
        provenance: Provenance { split_id, part },
        docs: idx.iter().map(|&i| docs[i].clone()).collect(),
    };
    let [train_idx, validate_idx, test_idx] = parts;
    Ok(CorpusSplit {
        train: make(&train_idx, Part::Train),
        validate: match scheme {
            FoldScheme::ThreeFold => None,
            FoldScheme::FourFold => Some(make(&validate_idx, Part::Validate)),
        },
        test: make(&test_idx, Part::Test),
        seed,
    })
}
