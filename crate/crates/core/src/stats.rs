//! Weighted sample summaries used for posterior reporting and comparisons.

use crate::error::{Error, Result};

fn normalized(weights: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || !(total > 0.0) {
        return Err(Error::DegenerateWeights);
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

fn check_len(values: &[f64], weights: &[f64]) -> Result<()> {
    if values.len() != weights.len() || values.is_empty() {
        return Err(Error::Input(
            "values and weights must be non-empty and of equal length".into(),
        ));
    }
    Ok(())
}

pub fn weighted_mean(values: &[f64], weights: &[f64]) -> Result<f64> {
    check_len(values, weights)?;
    let w = normalized(weights)?;
    Ok(values.iter().zip(&w).map(|(x, w)| x * w).sum())
}

/// Weighted variance with normalised weights (no small-sample correction).
pub fn weighted_variance(values: &[f64], weights: &[f64]) -> Result<f64> {
    let mean = weighted_mean(values, weights)?;
    let w = normalized(weights)?;
    Ok(values
        .iter()
        .zip(&w)
        .map(|(x, w)| w * (x - mean).powi(2))
        .sum())
}

/// Linear-interpolation quantiles that reduce to the usual type-7 estimator
/// when weights are equal.
///
/// After sorting and dropping zero weights, the k-th value sits at
/// cumulative position `(w₁ + … + w_{k−1}) / (1 − w_n)`, and the quantile
/// interpolates linearly between neighbouring positions.
pub fn weighted_quantiles(values: &[f64], weights: &[f64], probs: &[f64]) -> Result<Vec<f64>> {
    check_len(values, weights)?;
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Input(
            "quantile probabilities must lie in [0, 1]".into(),
        ));
    }
    let w = normalized(weights)?;
    let mut pairs: Vec<(f64, f64)> = values
        .iter()
        .copied()
        .zip(w)
        .filter(|(_, w)| *w > 0.0)
        .collect();
    if pairs.iter().any(|(x, _)| x.is_nan()) {
        return Err(Error::Input("NaN in quantile input".into()));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pairs.len();
    if n == 1 {
        return Ok(vec![pairs[0].0; probs.len()]);
    }
    let denom = 1.0 - pairs[n - 1].1;
    let mut pos = Vec::with_capacity(n);
    let mut acc = 0.0;
    for (_, w) in &pairs {
        pos.push((acc / denom).min(1.0));
        acc += w;
    }
    Ok(probs
        .iter()
        .map(|&p| {
            let k = pos.partition_point(|&q| q <= p);
            if k == 0 {
                return pairs[0].0;
            }
            if k >= n {
                return pairs[n - 1].0;
            }
            let (lo, hi) = (pos[k - 1], pos[k]);
            let frac = if hi > lo { (p - lo) / (hi - lo) } else { 0.0 };
            pairs[k - 1].0 + frac * (pairs[k].0 - pairs[k - 1].0)
        })
        .collect())
}

/// Two-sample Kolmogorov–Smirnov statistic between weighted samples: the
/// largest gap between the two weighted empirical CDFs.
pub fn weighted_ks(a: &[f64], wa: &[f64], b: &[f64], wb: &[f64]) -> Result<f64> {
    check_len(a, wa)?;
    check_len(b, wb)?;
    let sorted = |x: &[f64], w: &[f64]| -> Result<Vec<(f64, f64)>> {
        let w = normalized(w)?;
        let mut v: Vec<(f64, f64)> = x.iter().copied().zip(w).collect();
        v.sort_by(|p, q| p.0.total_cmp(&q.0));
        Ok(v)
    };
    let a = sorted(a, wa)?;
    let b = sorted(b, wb)?;
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb) = (0.0f64, 0.0f64);
    let mut d = 0.0f64;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(p), Some(q)) => p.0.min(q.0),
            (Some(p), None) => p.0,
            (None, Some(q)) => q.0,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i].0 <= x {
            fa += a[i].1;
            i += 1;
        }
        while j < b.len() && b[j].0 <= x {
            fb += b[j].1;
            j += 1;
        }
        d = d.max((fa - fb).abs());
    }
    Ok(d.min(1.0))
}

/// Equal-tailed weighted credible interval.
pub fn credible_interval(values: &[f64], weights: &[f64], level: f64) -> Result<(f64, f64)> {
    let tail = (1.0 - level) / 2.0;
    let q = weighted_quantiles(values, weights, &[tail, 1.0 - tail])?;
    Ok((q[0], q[1]))
}

/// Log of the mean of `exp(x)`, computed stably.
pub fn log_mean_exp(x: &[f64]) -> f64 {
    crate::smc::log_sum_exp(x) - (x.len() as f64).ln()
}
