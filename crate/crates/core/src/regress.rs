//! Correlation and univariate least squares of response time on CPV.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub r: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    /// Milliseconds per unit of cumulative weight.
    pub slope: f64,
    pub intercept: f64,
    pub n: usize,
    pub r_squared: f64,
    pub adj_r_squared: f64,
    #[serde(rename = "p_value")]
    pub slope_p_value: f64,
    pub residual_std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_id: Option<usize>,
}

impl RegressionModel {
    pub fn predict(&self, cpv: f64) -> f64 {
        predict_rt(self, cpv)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub mae_ms: f64,
    pub rmse_ms: f64,
    pub max_abs_err_ms: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Centered second moments `(sxx, sxy, syy)`.
fn moments(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let (mx, my) = (mean(x), mean(y));
    x.iter()
        .zip(y)
        .fold((0.0, 0.0, 0.0), |(sxx, sxy, syy), (a, b)| {
            let (dx, dy) = (a - mx, b - my);
            (sxx + dx * dx, sxy + dx * dy, syy + dy * dy)
        })
}

fn check_pairs(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Precondition(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 observations, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Precondition("non-finite observation".into()));
    }
    Ok(())
}

pub fn pearson_corr(x: &[f64], y: &[f64]) -> Result<CorrelationReport> {
    check_pairs(x, y)?;
    let (sxx, sxy, syy) = moments(x, y);
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("y"));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    Ok(CorrelationReport { r, n: x.len() })
}

pub fn adjusted_r_squared(r_squared: f64, n: usize) -> f64 {
    let n = n as f64;
    1.0 - (1.0 - r_squared) * (n - 1.0) / (n - 2.0)
}

pub fn ols_fit(cpv: &[f64], rt_ms: &[f64]) -> Result<RegressionModel> {
    check_pairs(cpv, rt_ms)?;
    let (sxx, sxy, syy) = moments(cpv, rt_ms);
    if sxx == 0.0 {
        return Err(Error::DegenerateDesign("constant predictor".into()));
    }
    let n = cpv.len();
    let slope = sxy / sxx;
    let intercept = mean(rt_ms) - slope * mean(cpv);
    let sse: f64 = cpv
        .iter()
        .zip(rt_ms)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (1.0 - sse / syy).max(0.0)
    };
    let df = (n - 2) as f64;
    let residual_std = (sse / df).sqrt();
    let slope_p_value = if sse == 0.0 {
        0.0
    } else {
        let t = slope / (residual_std / sxx.sqrt());
        stats::student_t_two_sided_p(t, df)
    };
    Ok(RegressionModel {
        slope,
        intercept,
        n,
        r_squared,
        adj_r_squared: adjusted_r_squared(r_squared, n),
        slope_p_value,
        residual_std,
        cluster_id: None,
    })
}

pub fn predict_rt(model: &RegressionModel, cpv: f64) -> f64 {
    model.intercept + model.slope * cpv
}

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;

/// Seeded shuffle, then the first `floor(n · train_fraction)` elements
/// train and the rest test.
pub fn split_train_test<T: Clone>(
    pairs: &[T],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Precondition(format!(
            "train fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    if pairs.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "train/test split needs at least 5 pairs, got {}",
            pairs.len()
        )));
    }
    let mut shuffled = pairs.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (pairs.len() as f64 * train_fraction).floor() as usize;
    let test = shuffled.split_off(n_train);
    Ok((shuffled, test))
}

pub fn evaluate(model: &RegressionModel, test: &[(f64, f64)]) -> Result<ErrorMetrics> {
    if test.is_empty() {
        return Err(Error::InsufficientData("empty test set".into()));
    }
    let errs: Vec<f64> = test
        .iter()
        .map(|&(x, y)| (predict_rt(model, x) - y).abs())
        .collect();
    let n = errs.len() as f64;
    Ok(ErrorMetrics {
        mae_ms: errs.iter().sum::<f64>() / n,
        rmse_ms: (errs.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
        max_abs_err_ms: errs.iter().copied().fold(0.0, f64::max),
    })
}

/// Leave-one-out mean absolute prediction error. Needs at least 4 points so
/// every fold has 3.
pub fn leave_one_out_mae(cpv: &[f64], rt_ms: &[f64]) -> Result<f64> {
    check_pairs(cpv, rt_ms)?;
    if cpv.len() < 4 {
        return Err(Error::InsufficientData(
            "leave-one-out needs at least 4 observations".into(),
        ));
    }
    let mut total = 0.0;
    for i in 0..cpv.len() {
        let xs: Vec<f64> = cpv
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, v)| *v)
            .collect();
        let ys: Vec<f64> = rt_ms
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, v)| *v)
            .collect();
        let model = ols_fit(&xs, &ys)?;
        total += (predict_rt(&model, cpv[i]) - rt_ms[i]).abs();
    }
    Ok(total / cpv.len() as f64)
}
