//! Exactly solvable i.i.d. scalar recursion `x_{t+1} = x_t + alpha (X_t - x_t)`.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::sampling::stream_rng;

/// `E[x_t^2] = (x0^2 - alpha sigma^2 / (2 - alpha)) (1 - alpha)^{2t} + alpha sigma^2 / (2 - alpha)`.
pub fn iid_second_moment(alpha: f64, sigma: f64, x0: f64, t: usize) -> f64 {
    let limit = alpha * sigma * sigma / (2.0 - alpha);
    (x0 * x0 - limit) * (1.0 - alpha).powi(2 * t as i32) + limit
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IidPoint {
    pub t: usize,
    pub empirical: f64,
    pub exact: f64,
    pub std_error: f64,
    /// `(empirical - exact) / std_error`; zero when both agree exactly.
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IidReport {
    pub alpha: f64,
    pub sigma: f64,
    pub x0: f64,
    pub replications: usize,
    pub points: Vec<IidPoint>,
    pub max_abs_z: f64,
}

/// Simulates `replications` independent paths up to `max(times)` and compares
/// the sample second moment with the closed form at each `t` in `times`.
pub fn iid_scalar_validation(
    alpha: f64,
    sigma: f64,
    x0: f64,
    times: &[usize],
    replications: usize,
    seed: u64,
) -> Result<IidReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(FedError::Parameter(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(FedError::Parameter(format!("sigma = {sigma} must be positive")));
    }
    if replications < 2 {
        return Err(FedError::Parameter("need at least two replications".into()));
    }
    let t_max = times.iter().copied().max().unwrap_or(0);
    let mut sum = vec![0.0; times.len()];
    let mut sum_sq = vec![0.0; times.len()];
    for r in 0..replications {
        let mut rng = stream_rng(seed, r as u64, 0);
        let mut x = x0;
        for t in 0..=t_max {
            for (j, &tj) in times.iter().enumerate() {
                if tj == t {
                    sum[j] += x * x;
                    sum_sq[j] += x.powi(4);
                }
            }
            let noise: f64 = StandardNormal.sample(&mut rng);
            x += alpha * (sigma * noise - x);
        }
    }
    let n = replications as f64;
    let points: Vec<IidPoint> = times
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let mean = sum[j] / n;
            let var = ((sum_sq[j] - n * mean * mean) / (n - 1.0)).max(0.0);
            let std_error = (var / n).sqrt();
            let exact = iid_second_moment(alpha, sigma, x0, t);
            let diff = mean - exact;
            let z = if std_error > 0.0 { diff / std_error } else if diff.abs() < 1e-12 { 0.0 } else { f64::INFINITY };
            IidPoint { t, empirical: mean, exact, std_error, z }
        })
        .collect();
    let max_abs_z = points.iter().map(|p| p.z.abs()).fold(0.0, f64::max);
    Ok(IidReport { alpha, sigma, x0, replications, points, max_abs_z })
}
