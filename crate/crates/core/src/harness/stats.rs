//! Aggregation statistics for sweeps.

use serde::{Deserialize, Serialize};

/// Sample mean and its standard error (`R - 1` denominator; zero for one sample).
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// OLS slope weights `w_j = (x_j - x-bar) / S_xx`, so that `slope = sum w_j y_j`.
fn slope_weights(x: &[f64]) -> Vec<f64> {
    let xbar = x.iter().sum::<f64>() / x.len() as f64;
    let sxx: f64 = x.iter().map(|v| (v - xbar).powi(2)).sum();
    x.iter().map(|v| (v - xbar) / sxx).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope propagated from the per-point standard errors.
    pub slope_se: f64,
}

/// Least squares `y = a + b x` with `slope_se = sqrt(sum w_j^2 y_se_j^2)`.
pub fn linear_fit(x: &[f64], y: &[f64], y_se: &[f64]) -> LinearFit {
    let w = slope_weights(x);
    let slope: f64 = w.iter().zip(y).map(|(a, b)| a * b).sum();
    let xbar = x.iter().sum::<f64>() / x.len() as f64;
    let ybar = y.iter().sum::<f64>() / y.len() as f64;
    let slope_se = w.iter().zip(y_se).map(|(a, s)| (a * s).powi(2)).sum::<f64>().sqrt();
    LinearFit { slope, intercept: ybar - slope * xbar, slope_se }
}

/// Fit of `ln MSE` against `ln N`; the standard error of `ln MSE_j` is taken as `SE_j / MSE_j`.
pub fn log_log_fit(n: &[f64], mse: &[f64], se: &[f64]) -> LinearFit {
    let x: Vec<f64> = n.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = mse.iter().map(|v| v.ln()).collect();
    let y_se: Vec<f64> = se.iter().zip(mse).map(|(s, m)| s / m).collect();
    linear_fit(&x, &y, &y_se)
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (average ranks on ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}
