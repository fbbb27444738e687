use serde::{Deserialize, Serialize};

use super::{check_training_shape, ModelError, Regressor};
use crate::matrix::Matrix;

/// Relative pivot size below which the normal equations count as singular.
pub const SINGULAR_TOLERANCE: f64 = 1e-10;
/// Ridge term added to the Gram diagonal when the system is singular.
pub const RIDGE_LAMBDA: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Ridge term used by the fit, if the fallback engaged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ridge: Option<f64>,
}

impl Regressor for LinearModel {
    fn n_features(&self) -> usize {
        self.coefficients.len()
    }

    fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
    }
}

/// In-place Cholesky factorization of a symmetric matrix stored row-major.
/// Returns `None` when a pivot falls below `tolerance`.
fn cholesky(a: &mut [f64], n: usize, tolerance: f64) -> Option<()> {
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag -= a[j * n + k] * a[j * n + k];
        }
        if diag <= tolerance {
            return None;
        }
        let diag = diag.sqrt();
        a[j * n + j] = diag;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / diag;
        }
    }
    Some(())
}

fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut z = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            z[i] -= l[i * n + k] * z[k];
        }
        z[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            z[i] -= l[k * n + i] * z[k];
        }
        z[i] /= l[i * n + i];
    }
    z
}

/// Least squares with an intercept, solved through the normal equations of
/// the mean-centered design (algebraically the same system as appending a
/// column of ones). Falls back to a tiny ridge term when the Gram matrix is
/// singular.
pub fn ols_fit(x: &Matrix, y: &[f64]) -> Result<LinearModel, ModelError> {
    check_training_shape(x, y)?;
    let (n, d) = (x.rows(), x.cols());
    if n < d + 1 {
        return Err(ModelError::InsufficientRows {
            rows: n,
            cols: d,
            needed: d + 1,
        });
    }
    let nf = n as f64;
    let x_mean: Vec<f64> = (0..d).map(|j| x.iter_rows().map(|r| r[j]).sum::<f64>() / nf).collect();
    let y_mean = y.iter().sum::<f64>() / nf;

    let mut gram = vec![0.0; d * d];
    let mut rhs = vec![0.0; d];
    let mut centered = vec![0.0; d];
    for (row, &target) in x.iter_rows().zip(y) {
        for j in 0..d {
            centered[j] = row[j] - x_mean[j];
        }
        let yc = target - y_mean;
        for i in 0..d {
            rhs[i] += centered[i] * yc;
            for j in 0..=i {
                gram[i * d + j] += centered[i] * centered[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            gram[j * d + i] = gram[i * d + j];
        }
    }

    let scale = (0..d).map(|i| gram[i * d + i]).fold(0.0f64, f64::max).max(1.0);
    let mut factor = gram.clone();
    let mut ridge = None;
    if cholesky(&mut factor, d, SINGULAR_TOLERANCE * scale).is_none() {
        factor = gram;
        for i in 0..d {
            factor[i * d + i] += RIDGE_LAMBDA;
        }
        cholesky(&mut factor, d, 0.0).ok_or(ModelError::Singular)?;
        ridge = Some(RIDGE_LAMBDA);
    }
    let coefficients = if d == 0 {
        Vec::new()
    } else {
        cholesky_solve(&factor, d, &rhs)
    };
    let intercept = y_mean - coefficients.iter().zip(&x_mean).map(|(b, m)| b * m).sum::<f64>();
    Ok(LinearModel {
        coefficients,
        intercept,
        ridge,
    })
}
