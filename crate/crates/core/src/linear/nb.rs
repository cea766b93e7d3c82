use std::io::{BufRead, Write};

use super::{parse_dim, parse_row, write_row, Prediction};
use crate::corpus::Polarity;
use crate::error::{Error, Result};
use crate::features::SparseVector;

/// Naive Bayes over binary feature occurrences.
///
/// `P̂(f_i | c) = (1 + n_ic) / (m + Σ_k n_kc)`, where `n_ic` is the number of
/// class-`c` documents containing feature `i`. The conditionals of one class
/// do not sum to one; this is the add-one estimator as stated, not a
/// normalized multinomial.
#[derive(Debug, Clone, PartialEq)]
pub struct NbModel {
    pub log_prior: [f64; 2],
    pub log_cond: Vec<[f64; 2]>,
}

pub fn nb_train(data: &[(SparseVector, Polarity)], m: usize) -> Result<NbModel> {
    let mut docs = [0usize; 2];
    let mut n = vec![[0u64; 2]; m];
    for (x, label) in data {
        let c = label.index();
        docs[c] += 1;
        for i in x.indices() {
            if i >= m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: i + 1,
                });
            }
            n[i][c] += 1;
        }
    }
    for class in Polarity::ALL {
        if docs[class.index()] == 0 {
            return Err(Error::EmptyClass(class));
        }
    }
    let total = (docs[0] + docs[1]) as f64;
    let log_prior = [(docs[0] as f64 / total).ln(), (docs[1] as f64 / total).ln()];
    let mut denom = [m as f64; 2];
    for row in &n {
        denom[0] += row[0] as f64;
        denom[1] += row[1] as f64;
    }
    let log_denom = [denom[0].ln(), denom[1].ln()];
    let log_cond = n
        .iter()
        .map(|row| {
            [
                (1.0 + row[0] as f64).ln() - log_denom[0],
                (1.0 + row[1] as f64).ln() - log_denom[1],
            ]
        })
        .collect();
    Ok(NbModel {
        log_prior,
        log_cond,
    })
}

impl NbModel {
    pub fn m(&self) -> usize {
        self.log_cond.len()
    }

    /// Unnormalized log `P(c) Π_i P̂(f_i|c)^{n_i(d)}` for both classes.
    pub fn joint_log(&self, x: &SparseVector) -> [f64; 2] {
        let mut score = self.log_prior;
        for i in x.indices() {
            if let Some(row) = self.log_cond.get(i) {
                score[0] += row[0];
                score[1] += row[1];
            }
        }
        score
    }

    pub fn predict(&self, x: &SparseVector) -> Prediction {
        let s = self.joint_log(x);
        let hi = s[0].max(s[1]);
        let e = [(s[0] - hi).exp(), (s[1] - hi).exp()];
        let z = e[0] + e[1];
        Prediction::from_probs([e[0] / z, e[1] / z])
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "nb")?;
        writeln!(out, "dim {}", self.m())?;
        write_row(&mut out, &self.log_prior)?;
        for row in &self.log_cond {
            write_row(&mut out, row)?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Parse("truncated nb model".into()))?
                .map_err(Error::from)
        };
        if next()? != "nb" {
            return Err(Error::Parse("missing `nb` header".into()));
        }
        let m = parse_dim(&next()?)?;
        let p = parse_row(&next()?, 2)?;
        let mut log_cond = Vec::with_capacity(m);
        for _ in 0..m {
            let r = parse_row(&next()?, 2)?;
            log_cond.push([r[0], r[1]]);
        }
        Ok(Self {
            log_prior: [p[0], p[1]],
            log_cond,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(idx: &[usize], label: Polarity) -> (SparseVector, Polarity) {
        (SparseVector::indicator(idx.to_vec()), label)
    }

    fn good_bad() -> NbModel {
        // feature 0 = good, 1 = bad
        let data = vec![
            ex(&[0], Polarity::Positive),
            ex(&[0], Polarity::Positive),
            ex(&[1], Polarity::Negative),
            ex(&[1], Polarity::Negative),
        ];
        nb_train(&data, 2).unwrap()
    }

    #[test]
    fn add_one_estimates() {
        let m = good_bad();
        let pos = Polarity::Positive.index();
        assert!((m.log_cond[0][pos].exp() - 0.75).abs() < 1e-12);
        assert!((m.log_cond[1][pos].exp() - 0.25).abs() < 1e-12);
        // Smoothing floor: 1 / (m + Σ n_kj).
        assert!(m.log_cond[1][pos].exp() > 0.0);
        assert!((m.log_prior[0].exp() + m.log_prior[1].exp() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn posterior_of_good() {
        let m = good_bad();
        let p = m.predict(&SparseVector::indicator(vec![0]));
        assert_eq!(p.label, Polarity::Positive);
        assert!((p.probs[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn empty_doc_follows_prior() {
        let data = vec![
            ex(&[0], Polarity::Positive),
            ex(&[1], Polarity::Negative),
            ex(&[1], Polarity::Negative),
        ];
        let m = nb_train(&data, 2).unwrap();
        let p = m.predict(&SparseVector::default());
        assert_eq!(p.label, Polarity::Negative);
        assert!((p.probs[0] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_corpus_gives_equal_conditionals() {
        let data = vec![
            ex(&[0, 1, 2], Polarity::Positive),
            ex(&[0, 1, 2], Polarity::Negative),
            ex(&[0, 1, 2], Polarity::Positive),
            ex(&[0, 1, 2], Polarity::Negative),
        ];
        let m = nb_train(&data, 3).unwrap();
        for row in &m.log_cond {
            assert_eq!(row[0], row[1]);
        }
    }

    #[test]
    fn missing_class_is_an_error() {
        let data = vec![ex(&[0], Polarity::Positive)];
        assert!(matches!(
            nb_train(&data, 1),
            Err(Error::EmptyClass(Polarity::Negative))
        ));
    }

    #[test]
    fn text_round_trip() {
        let m = good_bad();
        let mut buf = Vec::new();
        m.write_text(&mut buf).unwrap();
        assert_eq!(NbModel::read_text(buf.as_slice()).unwrap(), m);
    }
}
