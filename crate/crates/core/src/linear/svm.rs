use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FeatureRow, LinearKind, LinearModel};
use crate::corpus::Polarity;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    /// Soft-margin cost.
    pub c: f64,
    /// Stop once the spread of projected gradients within a sweep is below this.
    pub eps: f64,
    pub max_sweeps: usize,
    /// Seeds the per-sweep coordinate order.
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            eps: 0.1,
            max_sweeps: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SvmFit {
    pub model: LinearModel,
    pub alpha: Vec<f64>,
    /// Dual objective after each sweep.
    pub dual_history: Vec<f64>,
}

/// Linear-kernel SVM by dual coordinate ascent.
///
/// Each row is augmented with a constant 1 so the bias is learned as an
/// ordinary weight; the dual then has only box constraints `0 ≤ α_i ≤ C`.
/// The stored model uses `w·x − b`, so `b` is the negated bias weight.
pub fn svm_train<R: FeatureRow>(
    rows: &[R],
    labels: &[Polarity],
    dim: usize,
    params: &SvmParams,
) -> Result<SvmFit> {
    if rows.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: rows.len(),
            right: labels.len(),
        });
    }
    for class in Polarity::ALL {
        if !labels.contains(&class) {
            return Err(Error::EmptyClass(class));
        }
    }
    if let Some(bad) = rows.iter().find(|r| !r.fits(dim)) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.min_dim(),
        });
    }

    let n = rows.len();
    let c = params.c;
    let y: Vec<f64> = labels.iter().map(|l| l.sign()).collect();
    let q: Vec<f64> = rows.iter().map(|r| r.sq_norm() + 1.0).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; dim];
    let mut wb = 0.0;
    let mut alpha_sum = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut history = Vec::new();

    let dual = |w: &[f64], wb: f64, alpha_sum: f64| {
        alpha_sum - 0.5 * (w.iter().map(|v| v * v).sum::<f64>() + wb * wb)
    };

    for _ in 0..params.max_sweeps {
        order.shuffle(&mut rng);
        let mut pg_max = f64::NEG_INFINITY;
        let mut pg_min = f64::INFINITY;
        for &i in &order {
            let g = y[i] * (rows[i].dot(&w) + wb) - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg != 0.0 {
                let old = alpha[i];
                let new = (old - g / q[i]).clamp(0.0, c);
                let d = (new - old) * y[i];
                if d != 0.0 {
                    alpha[i] = new;
                    alpha_sum += new - old;
                    rows[i].axpy(d, &mut w);
                    wb += d;
                }
            }
        }
        history.push(dual(&w, wb, alpha_sum));
        if pg_max - pg_min < params.eps {
            return Ok(SvmFit {
                model: LinearModel {
                    w,
                    b: -wb,
                    kind: LinearKind::Svm,
                },
                alpha,
                dual_history: history,
            });
        }
    }

    let hinge: f64 = rows
        .iter()
        .zip(&y)
        .map(|(r, yi)| (1.0 - yi * (r.dot(&w) + wb)).max(0.0))
        .sum();
    let norm = w.iter().map(|v| v * v).sum::<f64>() + wb * wb;
    let primal = 0.5 * norm + c * hinge;
    Err(Error::SvmNotConverged {
        sweeps: params.max_sweeps,
        gap: primal - dual(&w, wb, alpha_sum),
    })
}
