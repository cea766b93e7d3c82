use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Lines;
use crate::corpus::Polarity;
use crate::error::{Error, Result};

/// Column-major copy of a dense training matrix with every column's sample
/// order precomputed, shared by all trees grown on the same data.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    n: usize,
    d: usize,
    cols: Vec<f64>,
    orders: Vec<Vec<u32>>,
}

impl TrainingSet {
    pub fn new<X: AsRef<[f64]>>(rows: &[X]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Empty("training set"));
        }
        let d = rows[0].as_ref().len();
        let mut cols = vec![0.0; n * d];
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
            for (f, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: i });
                }
                cols[f * n + i] = v;
            }
        }
        let orders = (0..d)
            .map(|f| {
                let col = &cols[f * n..(f + 1) * n];
                let mut order: Vec<u32> = (0..n as u32).collect();
                order.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
                order
            })
            .collect();
        Ok(Self { n, d, cols, orders })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    fn value(&self, f: usize, i: u32) -> f64 {
        self.cols[f * self.n + i as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    /// Features drawn per split; `None` examines all of them.
    pub features_per_split: Option<usize>,
    pub min_samples_split: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            features_per_split: None,
            min_samples_split: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Binary axis-aligned tree; `nodes` are stored in preorder with the root
/// at index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub dim: usize,
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Stats {
    w: f64,
    wy: f64,
    wyy: f64,
    wh: f64,
}

impl Stats {
    fn add(&mut self, w: f64, y: f64, h: f64) {
        self.w += w;
        self.wy += w * y;
        self.wyy += w * y * y;
        self.wh += w * h;
    }

    fn minus(&self, o: &Stats) -> Stats {
        Stats {
            w: self.w - o.w,
            wy: self.wy - o.wy,
            wyy: self.wyy - o.wyy,
            wh: self.wh - o.wh,
        }
    }

    /// Weighted sum of squared deviations. For 0/1 targets this is half the
    /// weighted Gini impurity `2p(1−p)·w`, so minimizing it is the Gini rule.
    fn sse(&self) -> f64 {
        if self.w <= 0.0 {
            0.0
        } else {
            self.wyy - self.wy * self.wy / self.w
        }
    }
}

/// How leaves turn their samples into a value.
#[derive(Debug, Clone, Copy)]
pub(crate) enum LeafRule<'a> {
    /// 1.0 if the weighted positive share is at least ½, else 0.0.
    Majority,
    /// One Newton step `Σ w·y / Σ w·h` with per-sample curvature `h`.
    Newton(&'a [f64]),
}

pub(crate) struct Fitter<'a> {
    set: &'a TrainingSet,
    y: &'a [f64],
    w: &'a [f64],
    rule: LeafRule<'a>,
    params: &'a TreeParams,
    rng: ChaCha8Rng,
    mask: Vec<bool>,
    nodes: Vec<Node>,
}

struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl<'a> Fitter<'a> {
    pub(crate) fn new(
        set: &'a TrainingSet,
        y: &'a [f64],
        w: &'a [f64],
        rule: LeafRule<'a>,
        params: &'a TreeParams,
        seed: u64,
    ) -> Self {
        Self {
            set,
            y,
            w,
            rule,
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mask: vec![false; set.n],
            nodes: Vec::new(),
        }
    }

    pub(crate) fn fit(mut self) -> DecisionTree {
        let samples: Vec<u32> = (0..self.set.n as u32)
            .filter(|&i| self.w[i as usize] > 0.0)
            .collect();
        self.build(samples, 0);
        DecisionTree {
            dim: self.set.d,
            nodes: self.nodes,
        }
    }

    fn stats(&self, samples: &[u32]) -> Stats {
        let mut s = Stats::default();
        for &i in samples {
            let i = i as usize;
            let h = match self.rule {
                LeafRule::Newton(h) => h[i],
                LeafRule::Majority => 0.0,
            };
            s.add(self.w[i], self.y[i], h);
        }
        s
    }

    fn leaf_value(&self, s: &Stats) -> f64 {
        match self.rule {
            LeafRule::Majority => {
                if s.w > 0.0 && s.wy / s.w >= 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
            LeafRule::Newton(_) => {
                if s.wh.abs() < 1e-150 {
                    0.0
                } else {
                    s.wy / s.wh
                }
            }
        }
    }

    fn build(&mut self, samples: Vec<u32>, depth: usize) -> usize {
        let idx = self.nodes.len();
        let stats = self.stats(&samples);
        self.nodes.push(Node::Leaf {
            value: self.leaf_value(&stats),
        });

        let at_cap = self.params.max_depth.is_some_and(|m| depth >= m);
        let pure = {
            let mut it = samples.iter().map(|&i| self.y[i as usize]);
            let first = it.next();
            it.all(|v| Some(v) == first)
        };
        if at_cap || pure || samples.len() < self.params.min_samples_split.max(2) {
            return idx;
        }
        let Some(best) = self.find_split(&samples, &stats) else {
            return idx;
        };
        let (left, right): (Vec<u32>, Vec<u32>) = samples
            .into_iter()
            .partition(|&i| self.set.value(best.feature, i) <= best.threshold);
        let l = self.build(left, depth + 1);
        let r = self.build(right, depth + 1);
        self.nodes[idx] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: l,
            right: r,
        };
        idx
    }

    fn find_split(&mut self, samples: &[u32], total: &Stats) -> Option<Candidate> {
        let d = self.set.d;
        let k = self.params.features_per_split.unwrap_or(d).clamp(1, d);
        let mut features: Vec<usize> = (0..d).collect();
        if k < d {
            features.shuffle(&mut self.rng);
            features[..k].sort_unstable();
        }
        for &i in samples {
            self.mask[i as usize] = true;
        }
        let mut sorted = Vec::with_capacity(samples.len());
        let mut best: Option<Candidate> = None;
        for (pos, &f) in features.iter().enumerate() {
            // Past the first k draws, keep looking only until some feature
            // yields a valid split.
            if pos >= k && best.is_some() {
                break;
            }
            self.sorted_by(f, samples, &mut sorted);
            if let Some(c) = self.scan(f, &sorted, total) {
                if best.as_ref().is_none_or(|b| c.gain > b.gain) {
                    best = Some(c);
                }
            }
        }
        for &i in samples {
            self.mask[i as usize] = false;
        }
        best
    }

    fn sorted_by(&self, f: usize, samples: &[u32], out: &mut Vec<u32>) {
        out.clear();
        let m = samples.len() as f64;
        if m * m.log2().max(1.0) < self.set.n as f64 {
            out.extend_from_slice(samples);
            out.sort_by(|&a, &b| self.set.value(f, a).total_cmp(&self.set.value(f, b)));
        } else {
            out.extend(
                self.set.orders[f]
                    .iter()
                    .filter(|&&i| self.mask[i as usize]),
            );
        }
    }

    fn scan(&self, f: usize, sorted: &[u32], total: &Stats) -> Option<Candidate> {
        let parent = total.sse();
        let mut left = Stats::default();
        let mut best: Option<Candidate> = None;
        for pair in sorted.windows(2) {
            let i = pair[0] as usize;
            let h = match self.rule {
                LeafRule::Newton(h) => h[i],
                LeafRule::Majority => 0.0,
            };
            left.add(self.w[i], self.y[i], h);
            let lo = self.set.value(f, pair[0]);
            let hi = self.set.value(f, pair[1]);
            if lo >= hi {
                continue;
            }
            let right = total.minus(&left);
            let gain = parent - left.sse() - right.sse();
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                let mut threshold = lo + (hi - lo) / 2.0;
                if threshold >= hi {
                    threshold = lo;
                }
                best = Some(Candidate {
                    gain,
                    feature: f,
                    threshold,
                });
            }
        }
        best
    }
}

impl DecisionTree {
    pub(crate) fn eval(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    /// Evaluates training row `i` without copying it out.
    pub(crate) fn eval_row(&self, set: &TrainingSet, i: usize) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    k = if set.value(feature, i as u32) <= threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    pub(crate) fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Leaf value reached by `x`.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.eval(x))
    }

    /// Class of a classification tree (leaf values 0/1).
    pub fn predict(&self, x: &[f64]) -> Result<Polarity> {
        Ok(Polarity::from_bit(self.value(x)? >= 0.5))
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &DecisionTree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(t, left).max(walk(t, right)),
            }
        }
        walk(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    pub fn write_text<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "tree {} {}", self.dim, self.nodes.len())?;
        for node in &self.nodes {
            match node {
                Node::Leaf { value } => writeln!(out, "L {value}")?,
                Node::Split {
                    feature, threshold, ..
                } => writeln!(out, "S {feature} {threshold}")?,
            }
        }
        Ok(())
    }

    pub(crate) fn read_from(lines: &mut Lines<'_>) -> Result<Self> {
        let head = lines.next_line()?;
        let mut parts = head.split_whitespace();
        if parts.next() != Some("tree") {
            return Err(Error::Parse(format!("expected tree header, got `{head}`")));
        }
        let dim = lines.parse_field(parts.next())?;
        let count: usize = lines.parse_field(parts.next())?;
        let mut raw = Vec::with_capacity(count);
        for _ in 0..count {
            raw.push(lines.next_line()?);
        }
        let mut nodes = Vec::with_capacity(count);
        let mut pos = 0;
        fn parse(
            raw: &[String],
            pos: &mut usize,
            nodes: &mut Vec<Node>,
            lines: &Lines<'_>,
            dim: usize,
        ) -> Result<usize> {
            let line = raw
                .get(*pos)
                .ok_or_else(|| Error::Parse("tree ends early".into()))?;
            *pos += 1;
            let idx = nodes.len();
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("L") => {
                    let value = lines.parse_field(parts.next())?;
                    nodes.push(Node::Leaf { value });
                }
                Some("S") => {
                    let feature: usize = lines.parse_field(parts.next())?;
                    let threshold: f64 = lines.parse_field(parts.next())?;
                    if feature >= dim || !threshold.is_finite() {
                        return Err(Error::Parse(format!("bad split `{line}`")));
                    }
                    nodes.push(Node::Leaf { value: 0.0 });
                    let left = parse(raw, pos, nodes, lines, dim)?;
                    let right = parse(raw, pos, nodes, lines, dim)?;
                    nodes[idx] = Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    };
                }
                _ => return Err(Error::Parse(format!("bad tree node `{line}`"))),
            }
            Ok(idx)
        }
        parse(&raw, &mut pos, &mut nodes, lines, dim)?;
        if pos != count {
            return Err(Error::Parse("trailing tree nodes".into()));
        }
        Ok(Self { dim, nodes })
    }
}

fn labels_to_targets(labels: &[Polarity]) -> Vec<f64> {
    labels.iter().map(|l| l.bit() as f64).collect()
}

/// CART classification tree on uniformly weighted samples.
pub fn tree_train(
    set: &TrainingSet,
    labels: &[Polarity],
    params: &TreeParams,
    seed: u64,
) -> Result<DecisionTree> {
    tree_train_weighted(set, labels, &vec![1.0; set.len()], params, seed)
}

pub fn tree_train_weighted(
    set: &TrainingSet,
    labels: &[Polarity],
    weights: &[f64],
    params: &TreeParams,
    seed: u64,
) -> Result<DecisionTree> {
    if labels.len() != set.len() || weights.len() != set.len() {
        return Err(Error::LengthMismatch {
            left: set.len(),
            right: labels.len().min(weights.len()),
        });
    }
    let y = labels_to_targets(labels);
    Ok(Fitter::new(set, &y, weights, LeafRule::Majority, params, seed).fit())
}
