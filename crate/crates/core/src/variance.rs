//! Monte Carlo gradient-variance estimation, closed-form variances for the
//! toy problems, and the clip/smooth convention used when reporting.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{EndpointPolicy, EstimatorKind};
use crate::objectives::Objective;
use crate::rng::RngStream;
use crate::types::ThetaVec;

/// Per-coordinate variance of an estimator at a fixed theta.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceReport {
    /// Sample mean of each coordinate.
    pub mean: Vec<f64>,
    /// Unbiased sample variance (denominator `n - 1`).
    pub raw: Vec<f64>,
    /// Approximate standard error of each variance estimate.
    pub var_se: Vec<f64>,
    pub n_samples: usize,
    pub clip: Option<f64>,
    pub window: usize,
}

impl VarianceReport {
    pub fn with_clip(mut self, clip: f64) -> Self {
        self.clip = Some(clip);
        self
    }

    pub fn clipped(&self) -> Vec<f64> {
        match self.clip {
            Some(c) => self.raw.iter().map(|&v| v.min(c)).collect(),
            None => self.raw.clone(),
        }
    }

    /// Standard error of each coordinate mean.
    pub fn mean_se(&self) -> Vec<f64> {
        self.raw
            .iter()
            .map(|&v| (v / self.n_samples as f64).sqrt())
            .collect()
    }

    /// `coord,var_raw,var_clipped,n_samples`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["coord", "var_raw", "var_clipped", "n_samples"])?;
        for (j, (raw, clipped)) in self.raw.iter().zip(self.clipped()).enumerate() {
            w.write_record([
                j.to_string(),
                raw.to_string(),
                clipped.to_string(),
                self.n_samples.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Sum in a fixed binary-tree order, independent of how the inputs were
/// produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Moments of a set of equally long sample vectors.
pub fn sample_moments(samples: &[Vec<f64>]) -> VarianceReport {
    let n = samples.len();
    let k = samples.first().map_or(0, Vec::len);
    let nf = n as f64;
    let mut mean = Vec::with_capacity(k);
    let mut raw = Vec::with_capacity(k);
    let mut var_se = Vec::with_capacity(k);
    let mut column = vec![0.0; n];
    for j in 0..k {
        for (c, s) in column.iter_mut().zip(samples) {
            *c = s[j];
        }
        let m = pairwise_sum(&column) / nf;
        for c in column.iter_mut() {
            *c = (*c - m).powi(2);
        }
        let m2 = pairwise_sum(&column);
        for c in column.iter_mut() {
            *c = *c * *c;
        }
        let m4 = pairwise_sum(&column) / nf;
        let var = if n > 1 { m2 / (nf - 1.0) } else { 0.0 };
        let biased = m2 / nf;
        mean.push(m);
        raw.push(var);
        var_se.push(((m4 - biased * biased).max(0.0) / nf).sqrt());
    }
    VarianceReport {
        mean,
        raw,
        var_se,
        n_samples: n,
        clip: None,
        window: 1,
    }
}

/// Variance of `n_samples` independent calls of `estimator`; replicate `r`
/// draws from `rng.with_replicate(r)`.
pub fn mc_variance(
    f: &dyn Objective,
    theta: &ThetaVec,
    estimator: &EstimatorKind,
    n_samples: usize,
    rng: &RngStream,
) -> Result<VarianceReport> {
    mc_variance_with(f, theta, estimator, n_samples, rng, EndpointPolicy::Reject)
}

pub fn mc_variance_with(
    f: &dyn Objective,
    theta: &ThetaVec,
    estimator: &EstimatorKind,
    n_samples: usize,
    rng: &RngStream,
    policy: EndpointPolicy,
) -> Result<VarianceReport> {
    mc_variance_averaged(f, theta, estimator, 1, n_samples, rng, policy)
}

/// Variance of the average of `per_sample` independent estimator calls,
/// i.e. of the multi-sample estimator `(1/m) sum_i g^(i)`.
pub fn mc_variance_averaged(
    f: &dyn Objective,
    theta: &ThetaVec,
    estimator: &EstimatorKind,
    per_sample: usize,
    n_samples: usize,
    rng: &RngStream,
    policy: EndpointPolicy,
) -> Result<VarianceReport> {
    if n_samples < 2 {
        return Err(Error::TooFewSamples {
            min: 2,
            got: n_samples,
        });
    }
    if per_sample == 0 {
        return Err(Error::InvalidConfig("per_sample must be positive".into()));
    }
    if estimator.is_deterministic() {
        // one call determines every replicate
        let g = estimator.estimate_with(f, theta, rng, policy)?.g;
        return Ok(VarianceReport {
            var_se: vec![0.0; g.len()],
            raw: vec![0.0; g.len()],
            mean: g,
            n_samples,
            clip: None,
            window: 1,
        });
    }
    let m = per_sample as u64;
    let samples = (0..n_samples as u64)
        .into_par_iter()
        .map(|r| {
            let mut acc = vec![0.0; theta.len()];
            for i in 0..m {
                let g = estimator.estimate_with(f, theta, &rng.with_replicate(r * m + i), policy)?;
                for (a, v) in acc.iter_mut().zip(g.g) {
                    *a += v;
                }
            }
            acc.iter_mut().for_each(|a| *a /= m as f64);
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(sample_moments(&samples))
}

/// bitflip-1 on P1: `(K - 1)(1 - 2t)^2`.
pub fn analytic_var_bitflip1_p1(k: usize, t: f64) -> f64 {
    (k as f64 - 1.0) * (1.0 - 2.0 * t).powi(2)
}

/// DisARM coordinate variance for a separable objective
/// `f(z) = sum_i h(z_i)` with `delta = h(1) - h(0)`.
pub fn analytic_var_disarm_separable(theta: &ThetaVec, j: usize, delta: f64) -> Result<f64> {
    if !theta.is_interior(j) {
        return Err(Error::ThetaAtEndpoint {
            index: j,
            value: theta.values()[j],
        });
    }
    let mj = theta.distance_to_boundary(j);
    let others: f64 = (0..theta.len())
        .filter(|&i| i != j)
        .map(|i| theta.distance_to_boundary(i))
        .sum();
    let d2 = delta * delta;
    Ok((1.0 - 2.0 * mj) / (2.0 * mj) * d2 + others / mj * d2)
}

pub fn analytic_var_disarm_p1(theta: &ThetaVec, j: usize, t: f64) -> Result<f64> {
    analytic_var_disarm_separable(theta, j, 1.0 - 2.0 * t)
}

/// bitflip-1 on P2. With `S = sum_{i != j} theta_i` the flip difference is
/// `2 S' + 1 - 2t` for the sampled count `S'`, giving
/// `4K sum_{i != j} theta_i (1 - theta_i) + (K - 1)(2S + 1 - 2t)^2`.
pub fn analytic_var_bitflip1_p2(theta: &ThetaVec, j: usize, t: f64) -> f64 {
    let k = theta.len() as f64;
    let (mut s, mut v) = (0.0, 0.0);
    for (i, &p) in theta.values().iter().enumerate() {
        if i != j {
            s += p;
            v += p * (1.0 - p);
        }
    }
    4.0 * k * v + (k - 1.0) * (2.0 * s + 1.0 - 2.0 * t).powi(2)
}

/// Elementwise `min(x, clip)` followed by a trailing moving average; the
/// first `window - 1` points average over what is available.
pub fn clip_and_smooth(series: &[f64], clip: f64, window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::InvalidConfig("window must be >= 1".into()));
    }
    let clipped: Vec<f64> = series.iter().map(|&x| x.min(clip)).collect();
    Ok((0..clipped.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let span = &clipped[lo..=i];
            span.iter().sum::<f64>() / span.len() as f64
        })
        .collect())
}
