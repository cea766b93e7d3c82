use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{Fitter, LeafRule};
use super::{expect_header, DecisionTree, Lines, TrainingSet, TreeParams};
use crate::corpus::Polarity;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RfParams {
    pub n_trees: usize,
    /// `None` means ⌈√dims⌉.
    pub features_per_split: Option<usize>,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for RfParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            features_per_split: None,
            max_depth: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<DecisionTree>,
    pub features_per_split: usize,
    pub seed: u64,
}

/// Random forest. Tree `t` draws its bootstrap sample and feature subsets
/// from `seed + t`, so the result does not depend on thread scheduling.
pub fn rf_train(set: &TrainingSet, labels: &[Polarity], params: &RfParams) -> Result<ForestModel> {
    let n = set.len();
    if labels.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: labels.len(),
        });
    }
    let d = set.dim();
    let fps = params
        .features_per_split
        .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
        .clamp(1, d.max(1));
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        features_per_split: Some(fps),
        min_samples_split: 2,
    };
    let y: Vec<f64> = labels.iter().map(|l| l.bit() as f64).collect();
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let seed = params.seed.wrapping_add(t as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let weights = if params.bootstrap {
                let mut w = vec![0.0; n];
                for _ in 0..n {
                    w[rng.gen_range(0..n)] += 1.0;
                }
                w
            } else {
                vec![1.0; n]
            };
            Fitter::new(
                set,
                &y,
                &weights,
                LeafRule::Majority,
                &tree_params,
                rng.gen(),
            )
            .fit()
        })
        .collect();
    Ok(ForestModel {
        trees,
        features_per_split: fps,
        seed: params.seed,
    })
}

impl ForestModel {
    /// Number of trees voting positive.
    pub fn positive_votes(&self, x: &[f64]) -> Result<usize> {
        let mut votes = 0;
        for t in &self.trees {
            t.check(x)?;
            if t.eval(x) >= 0.5 {
                votes += 1;
            }
        }
        Ok(votes)
    }

    /// Majority vote; a tie goes to positive.
    pub fn predict(&self, x: &[f64]) -> Result<Polarity> {
        let pos = self.positive_votes(x)?;
        Ok(Polarity::from_bit(2 * pos >= self.trees.len()))
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "forest {} {} {}",
            self.trees.len(),
            self.features_per_split,
            self.seed
        )?;
        for t in &self.trees {
            t.write_text(&mut out)?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = Lines::new(input);
        let head = expect_header(&mut lines, "forest")?;
        let mut fields = head.iter().map(String::as_str);
        let count: usize = lines.parse_field(fields.next())?;
        let features_per_split = lines.parse_field(fields.next())?;
        let seed = lines.parse_field(fields.next())?;
        let trees = (0..count)
            .map(|_| DecisionTree::read_from(&mut lines))
            .collect::<Result<_>>()?;
        Ok(Self {
            trees,
            features_per_split,
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::{tree_train, Node};

    fn xor(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Polarity>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.gen_range(-1.0..1.0);
            let b: f64 = rng.gen_range(-1.0..1.0);
            let mut label = (a > 0.0) == (b > 0.0);
            if rng.gen_bool(0.1) {
                label = !label;
            }
            xs.push(vec![a, b, rng.gen_range(-1.0..1.0)]);
            ys.push(Polarity::from_bit(label));
        }
        (xs, ys)
    }

    fn accuracy(pred: impl Fn(&[f64]) -> Polarity, xs: &[Vec<f64>], ys: &[Polarity]) -> f64 {
        let hits = xs.iter().zip(ys).filter(|(x, y)| pred(x) == **y).count();
        hits as f64 / xs.len() as f64
    }

    #[test]
    fn degenerate_forest_is_one_tree() {
        let (xs, ys) = xor(80, 1);
        let set = TrainingSet::new(&xs).unwrap();
        let params = RfParams {
            n_trees: 1,
            features_per_split: Some(3),
            bootstrap: false,
            ..RfParams::default()
        };
        let forest = rf_train(&set, &ys, &params).unwrap();
        let tree = tree_train(&set, &ys, &TreeParams::default(), 0).unwrap();
        for x in &xs {
            assert_eq!(forest.predict(x).unwrap(), tree.predict(x).unwrap());
        }
    }

    #[test]
    fn seeded_forests_agree() {
        let (xs, ys) = xor(100, 2);
        let set = TrainingSet::new(&xs).unwrap();
        let params = RfParams {
            n_trees: 15,
            seed: 9,
            ..RfParams::default()
        };
        let a = rf_train(&set, &ys, &params).unwrap();
        let b = rf_train(&set, &ys, &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forest_beats_a_stump_on_xor() {
        let (xs, ys) = xor(200, 3);
        let set = TrainingSet::new(&xs).unwrap();
        let forest = rf_train(
            &set,
            &ys,
            &RfParams {
                n_trees: 25,
                ..RfParams::default()
            },
        )
        .unwrap();
        let stump = tree_train(
            &set,
            &ys,
            &TreeParams {
                max_depth: Some(1),
                ..TreeParams::default()
            },
            0,
        )
        .unwrap();
        let f = accuracy(|x| forest.predict(x).unwrap(), &xs, &ys);
        let s = accuracy(|x| stump.predict(x).unwrap(), &xs, &ys);
        assert!(f >= s, "forest {f} stump {s}");
    }

    #[test]
    fn vote_ties_go_positive() {
        let leaf = |v: f64| DecisionTree {
            dim: 1,
            nodes: vec![Node::Leaf { value: v }],
        };
        let f = ForestModel {
            trees: vec![leaf(1.0), leaf(1.0), leaf(0.0)],
            features_per_split: 1,
            seed: 0,
        };
        assert_eq!(f.predict(&[0.0]).unwrap(), Polarity::Positive);
        let tie = ForestModel {
            trees: vec![leaf(1.0), leaf(0.0)],
            ..f.clone()
        };
        assert_eq!(tie.predict(&[0.0]).unwrap(), Polarity::Positive);
        assert!(f.predict(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn identical_trees_match_one_tree() {
        let (xs, ys) = xor(60, 4);
        let set = TrainingSet::new(&xs).unwrap();
        let tree = tree_train(&set, &ys, &TreeParams::default(), 0).unwrap();
        let f = ForestModel {
            trees: vec![tree.clone(); 4],
            features_per_split: 3,
            seed: 0,
        };
        for x in &xs {
            assert_eq!(f.predict(x).unwrap(), tree.predict(x).unwrap());
        }
    }

    #[test]
    fn text_round_trip() {
        let (xs, ys) = xor(50, 5);
        let set = TrainingSet::new(&xs).unwrap();
        let f = rf_train(
            &set,
            &ys,
            &RfParams {
                n_trees: 4,
                ..RfParams::default()
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        f.write_text(&mut buf).unwrap();
        assert_eq!(ForestModel::read_text(buf.as_slice()).unwrap(), f);
    }
}
