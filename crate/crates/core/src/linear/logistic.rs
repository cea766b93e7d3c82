use serde::{Deserialize, Serialize};

use super::{sigmoid, LinearKind, LinearModel};
use crate::corpus::Polarity;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrParams {
    /// L2 penalty on the weights (the bias is not penalized).
    pub l2: f64,
    /// Stop once the gradient's max-norm drops below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LrParams {
    fn default() -> Self {
        Self {
            l2: 1.0,
            tol: 1e-6,
            max_iter: 100,
        }
    }
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Penalized negative log-likelihood
/// `½·l2·‖w‖² + Σ log(1 + exp(−s_i (w·x_i + b)))` and its gradient with
/// respect to `[w…, b]`.
pub fn lr_objective<X: AsRef<[f64]>>(
    w: &[f64],
    b: f64,
    xs: &[X],
    ys: &[Polarity],
    l2: f64,
) -> (f64, Vec<f64>) {
    let d = w.len();
    let mut grad = vec![0.0; d + 1];
    let mut f = 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    for (x, y) in xs.iter().zip(ys) {
        let x = x.as_ref();
        let z = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
        f += softplus(-y.sign() * z);
        let r = sigmoid(z) - y.bit() as f64;
        for (g, xi) in grad[..d].iter_mut().zip(x) {
            *g += r * xi;
        }
        grad[d] += r;
    }
    for (g, wi) in grad[..d].iter_mut().zip(w) {
        *g += l2 * wi;
    }
    (f, grad)
}

/// In-place Cholesky solve of `a x = rhs` for symmetric positive-definite
/// `a` (row-major `n × n`). Returns `None` if `a` is not positive definite.
fn cholesky_solve(a: &mut [f64], n: usize, rhs: &[f64]) -> Option<Vec<f64>> {
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag -= a[j * n + k] * a[j * n + k];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return None;
        }
        let diag = diag.sqrt();
        a[j * n + j] = diag;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / diag;
        }
    }
    let mut y = rhs.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= a[i * n + k] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= a[k * n + i] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    Some(y)
}

/// L2-regularized logistic regression fitted by damped Newton iterations.
pub fn lr_train<X: AsRef<[f64]>>(
    xs: &[X],
    ys: &[Polarity],
    params: &LrParams,
) -> Result<LinearModel> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    for class in Polarity::ALL {
        if !ys.contains(&class) {
            return Err(Error::EmptyClass(class));
        }
    }
    let d = xs[0].as_ref().len();
    if let Some(bad) = xs.iter().find(|x| x.as_ref().len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.as_ref().len(),
        });
    }
    let n = d + 1;
    let mut theta = vec![0.0; n];
    let mut hess = vec![0.0; n * n];
    let mut grad_norm = f64::INFINITY;

    for _ in 0..params.max_iter {
        let (f, grad) = lr_objective(&theta[..d], theta[d], xs, ys, params.l2);
        grad_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if grad_norm < params.tol {
            return Ok(LinearModel {
                w: theta[..d].to_vec(),
                b: theta[d],
                kind: LinearKind::Logistic,
            });
        }

        hess.iter_mut().for_each(|h| *h = 0.0);
        for x in xs {
            let x = x.as_ref();
            let z = x.iter().zip(&theta[..d]).map(|(a, b)| a * b).sum::<f64>() + theta[d];
            let p = sigmoid(z);
            let s = p * (1.0 - p);
            if s == 0.0 {
                continue;
            }
            for i in 0..d {
                let si = s * x[i];
                if si == 0.0 {
                    continue;
                }
                let row = &mut hess[i * n..i * n + i + 1];
                for (h, xj) in row.iter_mut().zip(x) {
                    *h += si * xj;
                }
                hess[d * n + i] += si;
            }
            hess[d * n + d] += s;
        }
        for i in 0..n {
            for j in 0..i {
                hess[j * n + i] = hess[i * n + j];
            }
        }
        for i in 0..d {
            hess[i * n + i] += params.l2;
        }
        for i in 0..n {
            hess[i * n + i] += 1e-10;
        }

        let neg_grad: Vec<f64> = grad.iter().map(|g| -g).collect();
        let step = match cholesky_solve(&mut hess.clone(), n, &neg_grad) {
            Some(s) => s,
            // Fall back to steepest descent on an indefinite system.
            None => neg_grad.clone(),
        };
        let slope: f64 = step.iter().zip(&grad).map(|(s, g)| s * g).sum();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = theta.iter().zip(&step).map(|(a, s)| a + t * s).collect();
            let (ft, _) = lr_objective(&trial[..d], trial[d], xs, ys, params.l2);
            if ft <= f + 1e-4 * t * slope {
                theta = trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Err(Error::LrNotConverged {
        iterations: params.max_iter,
        grad_norm,
    })
}
