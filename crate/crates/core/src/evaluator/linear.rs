//! Linear learners: closed-form ridge regression and L2-regularised logistic
//! regression trained by full-batch gradient descent. Both standardise or
//! centre from training statistics, so constant columns are harmless.

use super::EvalError;

/// Solve `a x = b` for symmetric positive definite `a` via Cholesky.
/// Retries with a small diagonal jitter before giving up.
fn cholesky_solve(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>, EvalError> {
    let n = b.len();
    for jitter in [0.0, 1e-10, 1e-6] {
        let mut l = vec![vec![0.0; n]; n];
        let mut ok = true;
        'outer: for i in 0..n {
            for j in 0..=i {
                let mut sum = a[i][j] + if i == j { jitter } else { 0.0 };
                for k in 0..j {
                    sum -= l[i][k] * l[j][k];
                }
                if i == j {
                    if sum <= 0.0 {
                        ok = false;
                        break 'outer;
                    }
                    l[i][j] = sum.sqrt();
                } else {
                    l[i][j] = sum / l[j][j];
                }
            }
        }
        if !ok {
            continue;
        }
        // forward then back substitution
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut sum = b[i];
            for k in 0..i {
                sum -= l[i][k] * y[k];
            }
            y[i] = sum / l[i][i];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut sum = y[i];
            for k in i + 1..n {
                sum -= l[k][i] * x[k];
            }
            x[i] = sum / l[i][i];
        }
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    Err(EvalError::IllConditioned)
}

#[derive(Debug, Clone)]
pub(crate) struct RidgeModel {
    coef: Vec<f64>,
    intercept: f64,
}

impl RidgeModel {
    /// Centred closed form: `(Xc'Xc + alpha I) beta = Xc' yc`; the intercept
    /// is recovered from the means, so it is never penalised.
    pub(crate) fn fit(x: &[Vec<f64>], y: &[f64], alpha: f64) -> Result<RidgeModel, EvalError> {
        let n = x.len();
        let p = x.first().map_or(0, |r| r.len());
        if p == 0 {
            let intercept = y.iter().sum::<f64>() / n.max(1) as f64;
            return Ok(RidgeModel {
                coef: vec![],
                intercept,
            });
        }
        let means: Vec<f64> = (0..p)
            .map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64)
            .collect();
        let y_mean = y.iter().sum::<f64>() / n as f64;

        let mut xtx = vec![vec![0.0; p]; p];
        let mut xty = vec![0.0; p];
        for (row, &yi) in x.iter().zip(y) {
            let yc = yi - y_mean;
            for j in 0..p {
                let xj = row[j] - means[j];
                xty[j] += xj * yc;
                for k in 0..=j {
                    xtx[j][k] += xj * (row[k] - means[k]);
                }
            }
        }
        for j in 0..p {
            for k in j + 1..p {
                xtx[j][k] = xtx[k][j];
            }
            xtx[j][j] += alpha;
        }
        let coef = cholesky_solve(&xtx, &xty)?;
        let intercept = y_mean
            - coef
                .iter()
                .zip(&means)
                .map(|(c, m)| c * m)
                .sum::<f64>();
        Ok(RidgeModel { coef, intercept })
    }

    pub(crate) fn predict(&self, x: &[Vec<f64>]) -> Vec<f64> {
        x.iter()
            .map(|row| {
                self.intercept
                    + row
                        .iter()
                        .zip(&self.coef)
                        .map(|(v, c)| v * c)
                        .sum::<f64>()
            })
            .collect()
    }

    #[cfg(test)]
    pub(crate) fn coefficients(&self) -> (&[f64], f64) {
        (&self.coef, self.intercept)
    }
}

/// `ln(1 + e^z)` without overflow.
fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean cross-entropy plus `l2/(2n) * |w|^2`; the bias is unpenalised.
pub fn logistic_loss(x: &[Vec<f64>], y: &[f64], w: &[f64], b: f64, l2: f64) -> f64 {
    let n = x.len() as f64;
    let data: f64 = x
        .iter()
        .zip(y)
        .map(|(row, &yi)| {
            let z = b + row.iter().zip(w).map(|(v, c)| v * c).sum::<f64>();
            // -y ln sigma(z) - (1-y) ln(1 - sigma(z)) = log1p_exp(z) - y z
            log1p_exp(z) - yi * z
        })
        .sum();
    let penalty = w.iter().map(|c| c * c).sum::<f64>() * l2 / (2.0 * n);
    data / n + penalty
}

/// Analytic gradient of [`logistic_loss`] in `(w, b)`.
pub fn logistic_grad(
    x: &[Vec<f64>],
    y: &[f64],
    w: &[f64],
    b: f64,
    l2: f64,
) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (row, &yi) in x.iter().zip(y) {
        let z = b + row.iter().zip(w).map(|(v, c)| v * c).sum::<f64>();
        let err = sigmoid(z) - yi;
        for (g, v) in gw.iter_mut().zip(row) {
            *g += err * v;
        }
        gb += err;
    }
    for (g, c) in gw.iter_mut().zip(w) {
        *g = *g / n + l2 * c / n;
    }
    (gw, gb / n)
}

#[derive(Debug, Clone)]
pub(crate) struct LogisticModel {
    w: Vec<f64>,
    b: f64,
    means: Vec<f64>,
    sds: Vec<f64>,
}

impl LogisticModel {
    /// Full-batch gradient descent on standardised inputs. `y` must be 0/1.
    pub(crate) fn fit(x: &[Vec<f64>], y: &[f64], l2: f64, steps: usize, lr: f64) -> LogisticModel {
        let n = x.len();
        let p = x.first().map_or(0, |r| r.len());
        let means: Vec<f64> = (0..p)
            .map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64)
            .collect();
        let sds: Vec<f64> = (0..p)
            .map(|j| {
                let var = x
                    .iter()
                    .map(|r| (r[j] - means[j]).powi(2))
                    .sum::<f64>()
                    / n as f64;
                let sd = var.sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        let xs: Vec<Vec<f64>> = x
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(j, v)| (v - means[j]) / sds[j])
                    .collect()
            })
            .collect();
        let mut w = vec![0.0; p];
        let mut b = 0.0;
        for _ in 0..steps {
            let (gw, gb) = logistic_grad(&xs, y, &w, b, l2);
            for (c, g) in w.iter_mut().zip(&gw) {
                *c -= lr * g;
            }
            b -= lr * gb;
        }
        LogisticModel { w, b, means, sds }
    }

    /// Linear score in the standardised space; monotone in probability.
    pub(crate) fn decision(&self, row: &[f64]) -> f64 {
        self.b
            + row
                .iter()
                .enumerate()
                .map(|(j, v)| (v - self.means[j]) / self.sds[j] * self.w[j])
                .sum::<f64>()
    }
}
