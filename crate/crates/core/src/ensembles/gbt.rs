use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::tree::{Fitter, LeafRule};
use super::{expect_header, DecisionTree, Lines, TrainingSet, TreeParams};
use crate::corpus::Polarity;
use crate::error::{Error, Result};
use crate::linear::sigmoid;

/// Log-odds are clamped to ±LOGIT_CAP so pure data stays finite.
pub const LOGIT_CAP: f64 = 15.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtParams {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            learning_rate: 0.1,
            max_depth: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbtModel {
    pub init_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<DecisionTree>,
}

#[derive(Debug, Clone)]
pub struct GbtFit {
    pub model: GbtModel,
    /// Mean training log-loss before the first tree and after each tree.
    pub loss_history: Vec<f64>,
}

fn log_loss(f: f64, y: f64) -> f64 {
    // log(1 + e^f) − y·f, computed stably.
    f.max(0.0) + (-f.abs()).exp().ln_1p() - y * f
}

/// Gradient boosting of regression trees on the logistic loss.
pub fn gbt_train(set: &TrainingSet, labels: &[Polarity], params: &GbtParams) -> Result<GbtFit> {
    let n = set.len();
    if labels.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: labels.len(),
        });
    }
    let y: Vec<f64> = labels.iter().map(|l| l.bit() as f64).collect();
    let pos = y.iter().sum::<f64>() / n as f64;
    let init_score = if pos <= 0.0 {
        -LOGIT_CAP
    } else if pos >= 1.0 {
        LOGIT_CAP
    } else {
        (pos / (1.0 - pos)).ln().clamp(-LOGIT_CAP, LOGIT_CAP)
    };
    let mut model = GbtModel {
        init_score,
        learning_rate: params.learning_rate,
        trees: Vec::new(),
    };
    let mut f = vec![init_score; n];
    let mean_loss =
        |f: &[f64]| f.iter().zip(&y).map(|(&f, &y)| log_loss(f, y)).sum::<f64>() / n as f64;
    let mut loss_history = vec![mean_loss(&f)];
    if pos <= 0.0 || pos >= 1.0 {
        return Ok(GbtFit {
            model,
            loss_history,
        });
    }

    let tree_params = TreeParams {
        max_depth: Some(params.max_depth),
        ..TreeParams::default()
    };
    let ones = vec![1.0; n];
    for _ in 0..params.n_trees {
        let p: Vec<f64> = f.iter().map(|&v| sigmoid(v)).collect();
        let residual: Vec<f64> = y.iter().zip(&p).map(|(y, p)| y - p).collect();
        let hess: Vec<f64> = p.iter().map(|p| p * (1.0 - p)).collect();
        let tree = Fitter::new(
            set,
            &residual,
            &ones,
            LeafRule::Newton(&hess),
            &tree_params,
            0,
        )
        .fit();
        for (i, fi) in f.iter_mut().enumerate() {
            *fi += params.learning_rate * tree.eval_row(set, i);
        }
        model.trees.push(tree);
        loss_history.push(mean_loss(&f));
    }
    Ok(GbtFit {
        model,
        loss_history,
    })
}

impl GbtModel {
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        let mut s = 0.0;
        for t in &self.trees {
            t.check(x)?;
            s += t.eval(x);
        }
        Ok(self.init_score + self.learning_rate * s)
    }

    pub fn probability(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.score(x)?))
    }

    /// Positive iff the probability is at least ½.
    pub fn predict(&self, x: &[f64]) -> Result<Polarity> {
        Ok(Polarity::from_bit(self.score(x)? >= 0.0))
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "gbt {} {} {}",
            self.trees.len(),
            self.init_score,
            self.learning_rate
        )?;
        for t in &self.trees {
            t.write_text(&mut out)?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = Lines::new(input);
        let head = expect_header(&mut lines, "gbt")?;
        let mut fields = head.iter().map(String::as_str);
        let count: usize = lines.parse_field(fields.next())?;
        let init_score = lines.parse_field(fields.next())?;
        let learning_rate = lines.parse_field(fields.next())?;
        let trees = (0..count)
            .map(|_| DecisionTree::read_from(&mut lines))
            .collect::<Result<_>>()?;
        Ok(Self {
            init_score,
            learning_rate,
            trees,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable() -> (Vec<Vec<f64>>, Vec<Polarity>) {
        let xs: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![i as f64 / 10.0 - 2.0, ((i * 13) % 7) as f64])
            .collect();
        let ys = xs.iter().map(|x| Polarity::from_bit(x[0] > 0.05)).collect();
        (xs, ys)
    }

    #[test]
    fn single_class_is_capped() {
        let xs = vec![vec![1.0], vec![2.0]];
        let set = TrainingSet::new(&xs).unwrap();
        let fit = gbt_train(&set, &[Polarity::Positive; 2], &GbtParams::default()).unwrap();
        assert_eq!(fit.model.init_score, LOGIT_CAP);
        assert!(fit.model.trees.is_empty());
        assert_eq!(fit.model.predict(&[0.0]).unwrap(), Polarity::Positive);
    }

    #[test]
    fn loss_strictly_decreases_on_separable_data() {
        let (xs, ys) = separable();
        let set = TrainingSet::new(&xs).unwrap();
        let fit = gbt_train(&set, &ys, &GbtParams::default()).unwrap();
        for w in fit.loss_history[..11].windows(2) {
            assert!(w[1] < w[0], "{:?}", &fit.loss_history[..11]);
        }
        for (x, y) in xs.iter().zip(&ys) {
            assert_eq!(fit.model.predict(x).unwrap(), *y);
        }
    }

    #[test]
    fn zero_learning_rate_predicts_prior() {
        let (xs, mut ys) = separable();
        ys[30] = Polarity::Negative;
        let set = TrainingSet::new(&xs).unwrap();
        let params = GbtParams {
            learning_rate: 0.0,
            n_trees: 5,
            ..GbtParams::default()
        };
        let fit = gbt_train(&set, &ys, &params).unwrap();
        let majority =
            Polarity::from_bit(2 * ys.iter().filter(|y| y.is_positive()).count() >= ys.len());
        for x in &xs {
            assert_eq!(fit.model.predict(x).unwrap(), majority);
        }
        let none = gbt_train(
            &set,
            &ys,
            &GbtParams {
                n_trees: 0,
                ..GbtParams::default()
            },
        )
        .unwrap();
        assert_eq!(none.model.predict(&xs[0]).unwrap(), majority);
    }

    #[test]
    fn zero_score_is_positive() {
        let m = GbtModel {
            init_score: 0.0,
            learning_rate: 0.1,
            trees: Vec::new(),
        };
        assert_eq!(m.probability(&[]).unwrap(), 0.5);
        assert_eq!(m.predict(&[]).unwrap(), Polarity::Positive);
    }

    #[test]
    fn text_round_trip() {
        let (xs, ys) = separable();
        let set = TrainingSet::new(&xs).unwrap();
        let fit = gbt_train(
            &set,
            &ys,
            &GbtParams {
                n_trees: 3,
                ..GbtParams::default()
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        fit.model.write_text(&mut buf).unwrap();
        assert_eq!(GbtModel::read_text(buf.as_slice()).unwrap(), fit.model);
    }
}
