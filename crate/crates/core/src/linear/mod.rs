//! Naive Bayes, maximum entropy, logistic regression and linear SVM.

mod logistic;
mod maxent;
mod nb;
mod svm;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

pub use logistic::{lr_objective, lr_train, LrParams};
pub use maxent::{maxent_train_iis, MaxEntModel, MaxEntTraining};
pub use nb::{nb_train, NbModel};
pub use svm::{svm_train, SvmFit, SvmParams};

use crate::corpus::Polarity;
use crate::embeddings::DenseVector;
use crate::error::{Error, Result};
use crate::features::SparseVector;

/// Label plus per-class probabilities, indexed by [`Polarity::index`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: Polarity,
    pub probs: [f64; 2],
}

impl Prediction {
    /// Argmax over the two classes; an exact tie goes to positive.
    pub fn from_probs(probs: [f64; 2]) -> Self {
        let label = Polarity::from_bit(probs[1] >= probs[0]);
        Self { label, probs }
    }
}

/// A feature row that linear models and the SVM solver can consume.
pub trait FeatureRow {
    fn dot(&self, w: &[f64]) -> f64;
    /// `w += scale * self`
    fn axpy(&self, scale: f64, w: &mut [f64]);
    fn sq_norm(&self) -> f64;
    /// Dimension this row must be checked against: the length for dense
    /// rows, one past the largest index for sparse rows.
    fn min_dim(&self) -> usize;
    /// Whether a model of dimension `dim` can consume this row.
    fn fits(&self, dim: usize) -> bool {
        self.min_dim() == dim
    }
}

impl FeatureRow for SparseVector {
    fn dot(&self, w: &[f64]) -> f64 {
        SparseVector::dot(self, w)
    }

    fn axpy(&self, scale: f64, w: &mut [f64]) {
        for &(i, v) in self.entries() {
            w[i] += scale * v;
        }
    }

    fn sq_norm(&self) -> f64 {
        self.entries().iter().map(|&(_, v)| v * v).sum()
    }

    fn min_dim(&self) -> usize {
        SparseVector::min_dim(self)
    }

    fn fits(&self, dim: usize) -> bool {
        self.min_dim() <= dim
    }
}

impl FeatureRow for [f64] {
    fn dot(&self, w: &[f64]) -> f64 {
        self.iter().zip(w).map(|(a, b)| a * b).sum()
    }

    fn axpy(&self, scale: f64, w: &mut [f64]) {
        for (wi, x) in w.iter_mut().zip(self) {
            *wi += scale * x;
        }
    }

    fn sq_norm(&self) -> f64 {
        self.iter().map(|x| x * x).sum()
    }

    fn min_dim(&self) -> usize {
        self.len()
    }
}

impl FeatureRow for DenseVector {
    fn dot(&self, w: &[f64]) -> f64 {
        self.as_slice().dot(w)
    }

    fn axpy(&self, scale: f64, w: &mut [f64]) {
        self.as_slice().axpy(scale, w)
    }

    fn sq_norm(&self) -> f64 {
        self.as_slice().sq_norm()
    }

    fn min_dim(&self) -> usize {
        self.dim()
    }
}

impl FeatureRow for Vec<f64> {
    fn dot(&self, w: &[f64]) -> f64 {
        self.as_slice().dot(w)
    }

    fn axpy(&self, scale: f64, w: &mut [f64]) {
        self.as_slice().axpy(scale, w)
    }

    fn sq_norm(&self) -> f64 {
        self.as_slice().sq_norm()
    }

    fn min_dim(&self) -> usize {
        self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearKind {
    Logistic,
    Svm,
}

/// Linear decision function over `w`.
///
/// * `Svm`: positive iff `w·x − b ≥ 0`.
/// * `Logistic`: positive iff `sigmoid(w·x + b) ≥ 0.5`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub w: Vec<f64>,
    pub b: f64,
    pub kind: LinearKind,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.w.len()
    }

    fn check_dim<R: FeatureRow + ?Sized>(&self, x: &R) -> Result<()> {
        if !x.fits(self.w.len()) {
            return Err(Error::DimensionMismatch {
                expected: self.w.len(),
                got: x.min_dim(),
            });
        }
        Ok(())
    }

    /// Signed score whose sign decides the class (0 counts as positive).
    pub fn score<R: FeatureRow + ?Sized>(&self, x: &R) -> Result<f64> {
        self.check_dim(x)?;
        let wx = x.dot(&self.w);
        Ok(match self.kind {
            LinearKind::Svm => wx - self.b,
            LinearKind::Logistic => wx + self.b,
        })
    }

    /// Probability of the positive class (logistic models only; SVM scores
    /// are passed through the same sigmoid without calibration).
    pub fn probability<R: FeatureRow + ?Sized>(&self, x: &R) -> Result<f64> {
        Ok(sigmoid(self.score(x)?))
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        let kind = match self.kind {
            LinearKind::Logistic => "logistic",
            LinearKind::Svm => "svm",
        };
        writeln!(out, "linear {kind}")?;
        writeln!(out, "dim {}", self.w.len())?;
        writeln!(out, "{}", self.b)?;
        write_row(&mut out, &self.w)?;
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Parse("truncated linear model".into()))?
                .map_err(Error::from)
        };
        let kind = match next()?.as_str() {
            "linear logistic" => LinearKind::Logistic,
            "linear svm" => LinearKind::Svm,
            other => return Err(Error::Parse(format!("bad linear header `{other}`"))),
        };
        let dim = parse_dim(&next()?)?;
        let b = parse_f64(&next()?)?;
        let w = parse_row(&next()?, dim)?;
        Ok(Self { w, b, kind })
    }
}

/// Decision of a linear model; the boundary belongs to the positive class.
pub fn linear_predict<R: FeatureRow + ?Sized>(model: &LinearModel, x: &R) -> Result<Polarity> {
    Ok(Polarity::from_bit(model.score(x)? >= 0.0))
}

pub(crate) fn write_row<W: Write>(out: &mut W, row: &[f64]) -> std::io::Result<()> {
    let mut first = true;
    for v in row {
        if !first {
            out.write_all(b" ")?;
        }
        write!(out, "{v}")?;
        first = false;
    }
    out.write_all(b"\n")
}

pub(crate) fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|e| Error::Parse(format!("bad number `{s}`: {e}")))
}

pub(crate) fn parse_row(line: &str, dim: usize) -> Result<Vec<f64>> {
    let row = line
        .split_whitespace()
        .map(parse_f64)
        .collect::<Result<Vec<f64>>>()?;
    if row.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: row.len(),
        });
    }
    Ok(row)
}

pub(crate) fn parse_dim(line: &str) -> Result<usize> {
    line.strip_prefix("dim ")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| Error::Parse(format!("bad dimension line `{line}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svm_decision_rule() {
        let m = LinearModel {
            w: vec![1.0],
            b: 0.0,
            kind: LinearKind::Svm,
        };
        assert_eq!(linear_predict(&m, &vec![2.0]).unwrap(), Polarity::Positive);
        assert_eq!(linear_predict(&m, &vec![-2.0]).unwrap(), Polarity::Negative);
        assert_eq!(linear_predict(&m, &vec![0.0]).unwrap(), Polarity::Positive);
        let shifted = LinearModel {
            b: 1.0,
            ..m.clone()
        };
        assert_eq!(
            linear_predict(&shifted, &vec![1.0]).unwrap(),
            Polarity::Positive
        );
        assert_eq!(
            linear_predict(&shifted, &vec![0.5]).unwrap(),
            Polarity::Negative
        );
        assert!(matches!(
            linear_predict(&m, &vec![1.0, 2.0]),
            Err(Error::DimensionMismatch {
                expected: 1,
                got: 2
            })
        ));
    }

    #[test]
    fn logistic_zero_model_is_positive() {
        let m = LinearModel {
            w: vec![0.0, 0.0],
            b: 0.0,
            kind: LinearKind::Logistic,
        };
        assert_eq!(m.probability(&vec![3.0, -1.0]).unwrap(), 0.5);
        assert_eq!(
            linear_predict(&m, &vec![3.0, -1.0]).unwrap(),
            Polarity::Positive
        );
    }

    #[test]
    fn sparse_rows_check_dimension() {
        let m = LinearModel {
            w: vec![1.0, -1.0],
            b: 0.0,
            kind: LinearKind::Svm,
        };
        let x = SparseVector::indicator(vec![1]);
        assert_eq!(linear_predict(&m, &x).unwrap(), Polarity::Negative);
        let far = SparseVector::indicator(vec![5]);
        assert!(linear_predict(&m, &far).is_err());
    }

    #[test]
    fn text_round_trip() {
        let m = LinearModel {
            w: vec![0.1, -2.5e-7, 3.0],
            b: -0.75,
            kind: LinearKind::Logistic,
        };
        let mut buf = Vec::new();
        m.write_text(&mut buf).unwrap();
        assert_eq!(LinearModel::read_text(buf.as_slice()).unwrap(), m);
    }
}
