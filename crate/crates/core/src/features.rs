//! Vocabularies, lexicon merging, chi-square ranking and sparse binary
//! bag-of-words / n-gram vectors.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::{LabeledDoc, Polarity};
use crate::error::{Error, Result};

/// Separator between the two tokens of a bigram feature key.
pub const BIGRAM_SEP: char = '\u{1}';

pub fn bigram_key(first: &str, second: &str) -> String {
    let mut key = String::with_capacity(first.len() + second.len() + 1);
    key.push_str(first);
    key.push(BIGRAM_SEP);
    key.push_str(second);
    key
}

/// Ordered feature list with dense indices `0..len`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a vocabulary keeping the first occurrence of each word.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self::new();
        for w in words {
            vocab.insert(w.into());
        }
        vocab
    }

    /// Appends `word` if absent and returns its index.
    pub fn insert(&mut self, word: String) -> usize {
        if let Some(&i) = self.index.get(&word) {
            return i;
        }
        let i = self.words.len();
        self.index.insert(word.clone(), i);
        self.words.push(word);
        i
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Writes `m=<count>` followed by one word per line.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "m={}", self.len())?;
        for w in &self.words {
            writeln!(out, "{w}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("missing feature-space header".into()))??;
        let m: usize = header
            .strip_prefix("m=")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::Parse(format!("bad feature-space header `{header}`")))?;
        let mut vocab = Vocabulary::new();
        for line in lines {
            vocab.insert(line?);
        }
        if vocab.len() != m {
            return Err(Error::Parse(format!(
                "feature space declares m={m} but lists {} words",
                vocab.len()
            )));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_to(&mut out)?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}

/// Reads a lexicon: one word per line, blank lines ignored.
pub fn read_word_list(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut words = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let w = line.trim();
        if !w.is_empty() {
            words.push(w.to_owned());
        }
    }
    Ok(words)
}

/// Every distinct token of `docs`, sorted lexicographically.
pub fn corpus_vocabulary<'a, I>(docs: I) -> Vocabulary
where
    I: IntoIterator<Item = &'a [String]>,
{
    let mut seen: HashSet<&str> = HashSet::new();
    for doc in docs {
        seen.extend(doc.iter().map(String::as_str));
    }
    let mut words: Vec<&str> = seen.into_iter().collect();
    words.sort_unstable();
    Vocabulary::from_words(words)
}

fn doc_ngrams(tokens: &[String]) -> HashSet<String> {
    let mut grams: HashSet<String> = tokens.iter().cloned().collect();
    grams.extend(tokens.windows(2).map(|w| bigram_key(&w[0], &w[1])));
    grams
}

/// Unigrams and adjacent bigrams occurring in at least `min_df` documents,
/// sorted lexicographically.
pub fn ngram_vocabulary<'a, I>(docs: I, min_df: usize) -> Vocabulary
where
    I: IntoIterator<Item = &'a [String]>,
{
    let mut df: HashMap<String, usize> = HashMap::new();
    for doc in docs {
        for g in doc_ngrams(doc) {
            *df.entry(g).or_default() += 1;
        }
    }
    let mut kept: Vec<String> = df
        .into_iter()
        .filter(|&(_, n)| n >= min_df)
        .map(|(g, _)| g)
        .collect();
    kept.sort_unstable();
    Vocabulary::from_words(kept)
}

/// Union of the lexicons, restricted to words the corpus actually uses.
/// Order: first appearance across the lists.
pub fn merge_lexicons(lists: &[Vec<String>], corpus_vocab: &Vocabulary) -> Vocabulary {
    Vocabulary::from_words(
        lists
            .iter()
            .flatten()
            .filter(|w| corpus_vocab.contains(w))
            .cloned(),
    )
}

/// Two-class contingency chi-square:
/// `N (AD - CB)^2 / ((A+C)(B+D)(A+B)(C+D))`.
///
/// `a`: docs of class c containing the word, `b`: other-class docs containing
/// it, `c`: class-c docs without it, `d`: other-class docs without it.
/// A zero marginal yields 0.
pub fn chi_square(a: u64, b: u64, c: u64, d: u64) -> f64 {
    let (a, b, c, d) = (a as f64, b as f64, c as f64, d as f64);
    let n = a + b + c + d;
    let denom = (a + c) * (b + d) * (a + b) * (c + d);
    if denom == 0.0 {
        return 0.0;
    }
    let diff = a * d - c * b;
    n * diff * diff / denom
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChiEntry {
    pub word: String,
    /// Positive docs with the word.
    pub a: u64,
    /// Negative docs with the word.
    pub b: u64,
    /// Positive docs without the word.
    pub c: u64,
    /// Negative docs without the word.
    pub d: u64,
    /// Total occurrences of the word in the corpus.
    pub frequency: u64,
    pub score: f64,
}

/// Contingency counts and scores for every vocabulary word, in vocabulary
/// order. The table is built with the positive class as `c`; the score is the
/// max over both class orientations.
pub fn chi_table(docs: &[LabeledDoc], vocab: &Vocabulary) -> Vec<ChiEntry> {
    let m = vocab.len();
    let mut df = vec![[0u64; 2]; m];
    let mut freq = vec![0u64; m];
    let mut class_docs = [0u64; 2];
    let mut present: Vec<usize> = Vec::new();
    for doc in docs {
        class_docs[doc.label.index()] += 1;
        present.clear();
        for t in &doc.tokens {
            if let Some(i) = vocab.get(t) {
                freq[i] += 1;
                present.push(i);
            }
        }
        present.sort_unstable();
        present.dedup();
        for &i in &present {
            df[i][doc.label.index()] += 1;
        }
    }
    let pos = Polarity::Positive.index();
    let neg = Polarity::Negative.index();
    (0..m)
        .map(|i| {
            let a = df[i][pos];
            let b = df[i][neg];
            let c = class_docs[pos] - a;
            let d = class_docs[neg] - b;
            let score = chi_square(a, b, c, d).max(chi_square(b, a, d, c));
            ChiEntry {
                word: vocab.word(i).to_owned(),
                a,
                b,
                c,
                d,
                frequency: freq[i],
                score,
            }
        })
        .collect()
}

/// The `k` highest-scoring words (ties: higher corpus frequency, then
/// lexicographic), in rank order.
pub fn select_top_chi(docs: &[LabeledDoc], vocab: &Vocabulary, k: usize) -> Vocabulary {
    let mut table = chi_table(docs, vocab);
    table.sort_by(|x, y| {
        y.score
            .total_cmp(&x.score)
            .then(y.frequency.cmp(&x.frequency))
            .then_with(|| x.word.cmp(&y.word))
    });
    Vocabulary::from_words(table.into_iter().take(k).map(|e| e.word))
}

/// Sentiment words first, then CHI words not already present.
pub fn build_feature_space(sentiment: &Vocabulary, chi: &Vocabulary) -> Vocabulary {
    Vocabulary::from_words(sentiment.words().iter().chain(chi.words()).cloned())
}

/// Sorted `(index, value)` pairs with strictly increasing indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector {
    entries: Vec<(usize, f64)>,
}

impl SparseVector {
    /// Builds from unsorted pairs; duplicate indices keep the last value.
    pub fn from_pairs(mut pairs: Vec<(usize, f64)>) -> Self {
        pairs.sort_by_key(|&(i, _)| i);
        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            match entries.last_mut() {
                Some(last) if last.0 == i => last.1 = v,
                _ => entries.push((i, v)),
            }
        }
        Self { entries }
    }

    /// Binary vector with value 1 at each index.
    pub fn indicator(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self {
            entries: indices.into_iter().map(|i| (i, 1.0)).collect(),
        }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|&(i, _)| i)
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One past the largest index, or 0 when empty.
    pub fn min_dim(&self) -> usize {
        self.entries.last().map_or(0, |&(i, _)| i + 1)
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, v)| v * dense[i]).sum()
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for &(i, v) in &self.entries {
            out[i] = v;
        }
        out
    }
}

/// Presence vector over `space`: 1 for every space word in `tokens`,
/// regardless of how often it occurs.
pub fn vectorize_binary(tokens: &[String], space: &Vocabulary) -> SparseVector {
    SparseVector::indicator(tokens.iter().filter_map(|t| space.get(t)).collect())
}

/// Presence vector over a unigram + bigram space.
pub fn vectorize_ngrams(tokens: &[String], space: &Vocabulary) -> SparseVector {
    let mut idx: Vec<usize> = tokens.iter().filter_map(|t| space.get(t)).collect();
    idx.extend(
        tokens
            .windows(2)
            .filter_map(|w| space.get(&bigram_key(&w[0], &w[1]))),
    );
    SparseVector::indicator(idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    fn doc(s: &str, label: Polarity) -> LabeledDoc {
        LabeledDoc {
            tokens: toks(s),
            label,
        }
    }

    #[test]
    fn chi_square_hand_values() {
        assert!((chi_square(4, 1, 1, 4) - 3.6).abs() < 1e-12);
        assert!((chi_square(5, 0, 0, 5) - 10.0).abs() < 1e-12);
        assert_eq!(chi_square(7, 7, 7, 7), 0.0);
        // A word present in every document has a zero marginal.
        assert_eq!(chi_square(5, 5, 0, 0), 0.0);
    }

    #[test]
    fn merge_restricts_to_corpus() {
        let corpus = Vocabulary::from_words(["a", "b", "c"]);
        let merged = merge_lexicons(&[toks("a"), toks("b z")], &corpus);
        assert_eq!(merged.words(), &["a", "b"]);
        let merged = merge_lexicons(&[toks("a b"), toks("b a")], &corpus);
        assert_eq!(merged.len(), 2);
    }

    /// Independent scorer: recount every contingency cell by scanning docs.
    fn brute_scores(docs: &[LabeledDoc], words: &[&str]) -> Vec<f64> {
        words
            .iter()
            .map(|w| {
                let has = |d: &LabeledDoc| d.tokens.iter().any(|t| t == w);
                let cnt = |label: Polarity, present: bool| {
                    docs.iter()
                        .filter(|d| d.label == label && has(d) == present)
                        .count() as u64
                };
                let a = cnt(Polarity::Positive, true);
                let b = cnt(Polarity::Negative, true);
                let c = cnt(Polarity::Positive, false);
                let d = cnt(Polarity::Negative, false);
                let n = (a + b + c + d) as f64;
                let (a, b, c, d) = (a as f64, b as f64, c as f64, d as f64);
                let den = (a + c) * (b + d) * (a + b) * (c + d);
                if den == 0.0 {
                    0.0
                } else {
                    n * (a * d - b * c).powi(2) / den
                }
            })
            .collect()
    }

    #[test]
    fn correlated_word_ranks_first() {
        let mut docs = Vec::new();
        for i in 0..5 {
            docs.push(doc(&format!("great room n{i} common"), Polarity::Positive));
            docs.push(doc(&format!("room n{} common", i + 5), Polarity::Negative));
        }
        docs[1].tokens.push("great".into()); // one noisy negative
        docs[3].tokens.push("dirty".into());
        let vocab = corpus_vocabulary(docs.iter().map(|d| d.tokens.as_slice()));
        let words: Vec<&str> = vocab.words().iter().map(String::as_str).collect();
        let brute = brute_scores(&docs, &words);
        let table = chi_table(&docs, &vocab);
        for (entry, expected) in table.iter().zip(&brute) {
            assert!((entry.score - expected).abs() < 1e-12, "{}", entry.word);
        }
        let best = brute
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        let top = select_top_chi(&docs, &vocab, 1);
        assert_eq!(top.words(), &[words[best]]);
        assert_eq!(top.word(0), "great");
        assert!(select_top_chi(&docs, &vocab, 0).is_empty());
    }

    #[test]
    fn chi_ties_break_by_frequency_then_word() {
        let docs = vec![
            doc("x y y", Polarity::Positive),
            doc("z", Polarity::Negative),
        ];
        let vocab = Vocabulary::from_words(["x", "y", "z"]);
        // All three words are perfectly class-correlated (score 2).
        let top = select_top_chi(&docs, &vocab, 3);
        assert_eq!(top.words(), &["y", "x", "z"]);
    }

    #[test]
    fn feature_space_union() {
        let lex = Vocabulary::from_words(["a", "b", "c"]);
        let chi = Vocabulary::from_words(["d", "b"]);
        let space = build_feature_space(&lex, &chi);
        assert_eq!(space.words(), &["a", "b", "c", "d"]);
        assert_eq!(build_feature_space(&lex, &lex), lex);
        let disjoint = build_feature_space(&lex, &Vocabulary::from_words(["x", "y"]));
        assert_eq!(disjoint.len(), 5);
    }

    #[test]
    fn binary_vectors_clip_counts() {
        let space = Vocabulary::from_words(["clean"]);
        let v = vectorize_binary(&toks("clean clean clean"), &space);
        assert_eq!(v.entries(), &[(0, 1.0)]);
        assert!(vectorize_binary(&toks("dirty"), &space).is_empty());

        let space = Vocabulary::from_words(["a", "b", "c"]);
        let v = vectorize_binary(&toks("c a b"), &space);
        assert_eq!(v.to_dense(3), vec![1.0; 3]);
    }

    #[test]
    fn ngram_vectors() {
        let docs = [toks("a b c")];
        let space = ngram_vocabulary(docs.iter().map(Vec::as_slice), 1);
        assert_eq!(space.len(), 5);
        let v = vectorize_ngrams(&docs[0], &space);
        assert_eq!(v.nnz(), 5);
        for key in ["a", "b", "c", &bigram_key("a", "b"), &bigram_key("b", "c")] {
            assert!(v.indices().any(|i| space.word(i) == key), "{key:?}");
        }

        let single = toks("a");
        assert_eq!(vectorize_ngrams(&single, &space).nnz(), 1);
    }

    #[test]
    fn ngram_vectors_match_counting_oracle() {
        let docs = [toks("a b a b a"), toks("b a c"), toks("c c")];
        let space = ngram_vocabulary(docs.iter().map(Vec::as_slice), 1);
        for d in &docs {
            let mut counts: HashMap<String, usize> = HashMap::new();
            for t in d {
                *counts.entry(t.clone()).or_default() += 1;
            }
            for w in d.windows(2) {
                *counts.entry(bigram_key(&w[0], &w[1])).or_default() += 1;
            }
            let dense = vectorize_ngrams(d, &space).to_dense(space.len());
            for (i, &v) in dense.iter().enumerate() {
                let expected = counts.get(space.word(i)).map_or(0.0, |_| 1.0);
                assert_eq!(v, expected);
            }
        }
    }

    #[test]
    fn ngram_min_df_prunes() {
        let docs = [toks("a b"), toks("a c")];
        let space = ngram_vocabulary(docs.iter().map(Vec::as_slice), 2);
        assert_eq!(space.words(), &["a"]);
    }

    #[test]
    fn feature_space_file_round_trip() {
        let space = Vocabulary::from_words(["房间", "干净", &bigram_key("x", "y")]);
        let mut buf = Vec::new();
        space.write_to(&mut buf).unwrap();
        assert!(buf.starts_with(b"m=3\n"));
        assert_eq!(Vocabulary::read_from(buf.as_slice()).unwrap(), space);
        assert!(Vocabulary::read_from("m=4\na\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn chi_symmetric_under_relabel(a in 0u64..50, b in 0u64..50, c in 0u64..50, d in 0u64..50) {
            let x = chi_square(a, b, c, d);
            let y = chi_square(b, a, d, c);
            prop_assert!((x - y).abs() <= 1e-9 * x.max(1.0));
            prop_assert!(x >= 0.0);
        }

        #[test]
        fn chi_zero_iff_independent(a in 1u64..30, b in 1u64..30, c in 1u64..30, d in 1u64..30) {
            let x = chi_square(a, b, c, d);
            prop_assert_eq!(x == 0.0, a * d == c * b);
        }

        #[test]
        fn binary_vector_depends_on_token_set(
            words in proptest::collection::vec(0usize..8, 0..20),
            perm_seed in any::<u64>(),
        ) {
            let space = Vocabulary::from_words((0..6).map(|i| format!("w{i}")));
            let tokens: Vec<String> = words.iter().map(|i| format!("w{i}")).collect();
            let mut shuffled = tokens.clone();
            shuffled.sort();
            shuffled.dedup();
            let len = shuffled.len().max(1);
            shuffled.rotate_left((perm_seed as usize) % len);
            prop_assert_eq!(vectorize_binary(&tokens, &space), vectorize_binary(&shuffled, &space));
        }
    }
}
