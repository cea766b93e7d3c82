use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::tree::{Fitter, LeafRule};
use super::{expect_header, DecisionTree, Lines, TrainingSet, TreeParams};
use crate::corpus::Polarity;
use crate::error::{Error, Result};

/// Floor on the weighted error when computing α, so a perfect stump gets a
/// large but finite weight.
const MIN_ERROR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaBoostParams {
    pub rounds: usize,
}

impl Default for AdaBoostParams {
    fn default() -> Self {
        Self { rounds: 100 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaBoostModel {
    pub stumps: Vec<DecisionTree>,
    pub alphas: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AdaBoostFit {
    pub model: AdaBoostModel,
    /// Weighted error of each accepted round.
    pub errors: Vec<f64>,
    /// Running training-error bound `Π 2√(ε_t(1−ε_t))`.
    pub bound: Vec<f64>,
    /// Sum of the sample weights after each round's renormalization.
    pub weight_sums: Vec<f64>,
}

/// Discrete AdaBoost over depth-1 trees.
pub fn adaboost_train(
    set: &TrainingSet,
    labels: &[Polarity],
    params: &AdaBoostParams,
) -> Result<AdaBoostFit> {
    let n = set.len();
    if labels.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: labels.len(),
        });
    }
    let y01: Vec<f64> = labels.iter().map(|l| l.bit() as f64).collect();
    let stump_params = TreeParams {
        max_depth: Some(1),
        ..TreeParams::default()
    };
    let mut w = vec![1.0 / n as f64; n];
    let mut model = AdaBoostModel {
        stumps: Vec::new(),
        alphas: Vec::new(),
    };
    let mut errors = Vec::new();
    let mut bound = Vec::new();
    let mut weight_sums = Vec::new();
    let mut running = 1.0;

    for _ in 0..params.rounds {
        let stump = Fitter::new(set, &y01, &w, LeafRule::Majority, &stump_params, 0).fit();
        let h: Vec<f64> = (0..n)
            .map(|i| {
                if stump.eval_row(set, i) >= 0.5 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        let eps: f64 = (0..n)
            .filter(|&i| h[i] != labels[i].sign())
            .map(|i| w[i])
            .sum();
        if eps >= 0.5 {
            break;
        }
        let e = eps.max(MIN_ERROR);
        let alpha = 0.5 * ((1.0 - e) / e).ln();
        model.stumps.push(stump);
        model.alphas.push(alpha);
        errors.push(eps);
        running *= 2.0 * (eps * (1.0 - eps)).sqrt();
        bound.push(running);
        if eps == 0.0 {
            weight_sums.push(w.iter().sum());
            break;
        }
        for i in 0..n {
            w[i] *= (-alpha * labels[i].sign() * h[i]).exp();
        }
        let z: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= z);
        weight_sums.push(w.iter().sum());
    }
    Ok(AdaBoostFit {
        model,
        errors,
        bound,
        weight_sums,
    })
}

impl AdaBoostModel {
    /// `Σ α_t h_t(x)` with `h_t ∈ {−1, +1}`.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        let mut s = 0.0;
        for (stump, a) in self.stumps.iter().zip(&self.alphas) {
            stump.check(x)?;
            s += if stump.eval(x) >= 0.5 { *a } else { -*a };
        }
        Ok(s)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Polarity> {
        Ok(Polarity::from_bit(self.score(x)? >= 0.0))
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "adaboost {}", self.stumps.len())?;
        for (stump, a) in self.stumps.iter().zip(&self.alphas) {
            writeln!(out, "alpha {a}")?;
            stump.write_text(&mut out)?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = Lines::new(input);
        let head = expect_header(&mut lines, "adaboost")?;
        let count: usize = lines.parse_field(head.first().map(String::as_str))?;
        let mut stumps = Vec::with_capacity(count);
        let mut alphas = Vec::with_capacity(count);
        for _ in 0..count {
            let a = expect_header(&mut lines, "alpha")?;
            alphas.push(lines.parse_field(a.first().map(String::as_str))?);
            stumps.push(DecisionTree::read_from(&mut lines)?);
        }
        Ok(Self { stumps, alphas })
    }
}
