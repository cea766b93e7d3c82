use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use super::{parse_dim, parse_row, write_row, Prediction};
use crate::corpus::Polarity;
use crate::error::{Error, Result};
use crate::features::SparseVector;

const NEWTON_STEPS: usize = 20;
const NEWTON_TOL: f64 = 1e-10;

/// Maximum-entropy classifier with one weight per (feature, class) pair.
///
/// `P(c|d) = exp(Σ_{i ∈ d} λ_{i,c}) / π(d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxEntModel {
    pub lambda: Vec<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct MaxEntTraining {
    pub model: MaxEntModel,
    /// Training log-likelihood before the first pass and after each pass.
    pub log_likelihood: Vec<f64>,
}

impl MaxEntModel {
    pub fn zeros(m: usize) -> Self {
        Self {
            lambda: vec![[0.0; 2]; m],
        }
    }

    pub fn m(&self) -> usize {
        self.lambda.len()
    }

    /// Class probabilities; indices outside the model are ignored.
    pub fn probs(&self, x: &SparseVector) -> [f64; 2] {
        let mut s = [0.0; 2];
        for i in x.indices() {
            if let Some(l) = self.lambda.get(i) {
                s[0] += l[0];
                s[1] += l[1];
            }
        }
        let hi = s[0].max(s[1]);
        let e = [(s[0] - hi).exp(), (s[1] - hi).exp()];
        let z = e[0] + e[1];
        [e[0] / z, e[1] / z]
    }

    pub fn predict(&self, x: &SparseVector) -> Prediction {
        Prediction::from_probs(self.probs(x))
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "maxent")?;
        writeln!(out, "dim {}", self.m())?;
        for row in &self.lambda {
            write_row(&mut out, row)?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Parse("truncated maxent model".into()))?
                .map_err(Error::from)
        };
        if next()? != "maxent" {
            return Err(Error::Parse("missing `maxent` header".into()));
        }
        let m = parse_dim(&next()?)?;
        let mut lambda = Vec::with_capacity(m);
        for _ in 0..m {
            let r = parse_row(&next()?, 2)?;
            lambda.push([r[0], r[1]]);
        }
        Ok(Self { lambda })
    }
}

fn log_likelihood(model: &MaxEntModel, data: &[(SparseVector, Polarity)]) -> f64 {
    data.iter()
        .map(|(x, y)| model.probs(x)[y.index()].ln())
        .sum()
}

/// Solve `Σ_k M_k e^{δk} = E` for δ, where `mass` maps active-feature
/// count `k` to model mass `M_k`.
fn solve_delta(mass: &BTreeMap<usize, f64>, observed: f64) -> f64 {
    let mut delta = 0.0;
    if observed > 0.0 {
        // h(δ) = ln Σ M_k e^{δk} − ln E is convex and increasing.
        let log_e = observed.ln();
        let terms: Vec<(f64, f64)> = mass.iter().map(|(&k, &m)| (k as f64, m.ln())).collect();
        for _ in 0..NEWTON_STEPS {
            let hi = terms
                .iter()
                .map(|(k, lm)| lm + delta * k)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            let mut zk = 0.0;
            for (k, lm) in &terms {
                let e = (lm + delta * k - hi).exp();
                z += e;
                zk += k * e;
            }
            let h = hi + z.ln() - log_e;
            let step = h / (zk / z);
            delta -= step;
            if step.abs() < NEWTON_TOL {
                break;
            }
        }
    } else {
        // The exact solution is −∞; a fixed number of Newton steps on
        // Σ M_k e^{δk} gives a finite move in the right direction.
        for _ in 0..NEWTON_STEPS {
            let mut g = 0.0;
            let mut dg = 0.0;
            for (&k, &m) in mass {
                let e = m * (delta * k as f64).exp();
                g += e;
                dg += k as f64 * e;
            }
            if dg <= 0.0 {
                break;
            }
            let step = g / dg;
            delta -= step;
            if step.abs() < NEWTON_TOL {
                break;
            }
        }
    }
    delta
}

/// Improved iterative scaling over binary features.
///
/// Every feature present in a document fires for both classes, so the
/// feature count `f#(d)` of a document is its number of active features.
pub fn maxent_train_iis(
    data: &[(SparseVector, Polarity)],
    m: usize,
    iterations: usize,
) -> Result<MaxEntTraining> {
    let mut postings: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut observed = vec![[0.0f64; 2]; m];
    let mut active = Vec::with_capacity(data.len());
    for (d, (x, y)) in data.iter().enumerate() {
        let mut k = 0;
        for i in x.indices() {
            if i >= m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: i + 1,
                });
            }
            postings[i].push(d);
            observed[i][y.index()] += 1.0;
            k += 1;
        }
        active.push(k);
    }

    let mut model = MaxEntModel::zeros(m);
    let mut history = vec![log_likelihood(&model, data)];
    for _ in 0..iterations {
        let probs: Vec<[f64; 2]> = data.iter().map(|(x, _)| model.probs(x)).collect();
        let mut deltas = vec![[0.0f64; 2]; m];
        for (i, docs) in postings.iter().enumerate() {
            if docs.is_empty() {
                continue;
            }
            for c in 0..2 {
                let mut mass = BTreeMap::new();
                for &d in docs {
                    *mass.entry(active[d]).or_insert(0.0) += probs[d][c];
                }
                mass.retain(|_, v| *v > 0.0);
                if !mass.is_empty() {
                    deltas[i][c] = solve_delta(&mass, observed[i][c]);
                }
            }
        }
        for (l, d) in model.lambda.iter_mut().zip(&deltas) {
            l[0] += d[0];
            l[1] += d[1];
        }
        history.push(log_likelihood(&model, data));
    }
    Ok(MaxEntTraining {
        model,
        log_likelihood: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(idx: &[usize], label: Polarity) -> (SparseVector, Polarity) {
        (SparseVector::indicator(idx.to_vec()), label)
    }

    fn separable() -> Vec<(SparseVector, Polarity)> {
        vec![
            ex(&[0], Polarity::Positive),
            ex(&[0], Polarity::Positive),
            ex(&[0, 1], Polarity::Positive),
            ex(&[1], Polarity::Negative),
            ex(&[1], Polarity::Negative),
            ex(&[1], Polarity::Negative),
        ]
    }

    #[test]
    fn zero_iterations_is_uniform() {
        let t = maxent_train_iis(&separable(), 2, 0).unwrap();
        let p = t.model.predict(&SparseVector::indicator(vec![0, 1]));
        assert_eq!(p.probs, [0.5, 0.5]);
        assert_eq!(p.label, Polarity::Positive);
        assert_eq!(t.log_likelihood.len(), 1);
    }

    #[test]
    fn ln3_weight_gives_three_quarters() {
        let model = MaxEntModel {
            lambda: vec![[0.0, 3f64.ln()]],
        };
        let p = model.predict(&SparseVector::indicator(vec![0]));
        assert!((p.probs[1] - 0.75).abs() < 1e-12);
        let empty = model.predict(&SparseVector::default());
        assert_eq!(empty.probs, [0.5, 0.5]);
    }

    #[test]
    fn separable_toy_is_fit_perfectly() {
        let data = separable();
        let t = maxent_train_iis(&data, 2, 15).unwrap();
        for (x, y) in &data {
            assert_eq!(t.model.predict(x).label, *y);
        }
        assert_eq!(t.log_likelihood.len(), 16);
    }

    #[test]
    fn likelihood_is_monotone() {
        let data = vec![
            ex(&[0, 2], Polarity::Positive),
            ex(&[0, 1, 3], Polarity::Positive),
            ex(&[2, 3], Polarity::Positive),
            ex(&[1], Polarity::Negative),
            ex(&[1, 2], Polarity::Negative),
            ex(&[0, 1, 2, 3], Polarity::Negative),
            ex(&[], Polarity::Negative),
        ];
        let t = maxent_train_iis(&data, 4, 15).unwrap();
        for w in t.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{:?}", t.log_likelihood);
        }
        assert!(t.model.lambda.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn iis_step_solves_the_moment_equation() {
        let mut mass = BTreeMap::new();
        mass.insert(1, 0.5);
        mass.insert(3, 0.25);
        let delta = solve_delta(&mass, 1.2);
        let lhs = 0.5 * delta.exp() + 0.25 * (3.0 * delta).exp();
        assert!((lhs - 1.2).abs() < 1e-9);
    }

    #[test]
    fn text_round_trip() {
        let t = maxent_train_iis(&separable(), 2, 3).unwrap();
        let mut buf = Vec::new();
        t.model.write_text(&mut buf).unwrap();
        assert_eq!(MaxEntModel::read_text(buf.as_slice()).unwrap(), t.model);
    }
}
