//! One-dimensional Gaussian mixture: density, CDF, quantile, sampling.
//!
//! The quantile has no closed form; it is solved by bracketing bisection on
//! the monotone CDF, tight enough (|F(q) - u| <= 1e-9) that transforming a
//! uniform sample through it is indistinguishable from exact inversion at
//! the tolerances used elsewhere.

use crate::error::{Error, Result};
use crate::math::{log_sum_exp, normal_cdf, normal_log_pdf};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Smallest standard deviation a component may have.
pub const MIN_SPREAD: f64 = 1e-3;
/// Bisection stops when |cdf(q) - u| falls below this.
pub const QUANTILE_TOL: f64 = 1e-9;

/// A mixture of `K` univariate Gaussians with fixed weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture1D {
    weights: Vec<f64>,
    means: Vec<f64>,
    spreads: Vec<f64>,
    log_weights: Vec<f64>,
}

impl GaussianMixture1D {
    /// Builds a mixture; weights must be positive and sum to 1 within 1e-9,
    /// spreads are clamped up to [`MIN_SPREAD`].
    pub fn new(weights: Vec<f64>, means: Vec<f64>, spreads: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::InvalidConfig("mixture needs at least one component".into()));
        }
        if means.len() != k || spreads.len() != k {
            return Err(Error::Shape(format!(
                "mixture component counts disagree: {k} weights, {} means, {} spreads",
                means.len(),
                spreads.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::Domain("mixture weights must be finite and positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("mixture weights sum to {total}, want 1")));
        }
        if means.iter().any(|m| !m.is_finite()) || spreads.iter().any(|s| !s.is_finite()) {
            return Err(Error::Domain("mixture parameters must be finite".into()));
        }
        let spreads: Vec<f64> = spreads.into_iter().map(|s| s.max(MIN_SPREAD)).collect();
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(GaussianMixture1D { weights, means, spreads, log_weights })
    }

    /// Mixture with uniform weights `1/K`.
    pub fn uniform(means: Vec<f64>, spreads: Vec<f64>) -> Result<Self> {
        let k = means.len();
        if k == 0 {
            return Err(Error::InvalidConfig("mixture needs at least one component".into()));
        }
        Self::new(vec![1.0 / k as f64; k], means, spreads)
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn spreads(&self) -> &[f64] {
        &self.spreads
    }

    /// Log density at `x`, computed via log-sum-exp over components.
    pub fn logpdf(&self, x: f64) -> f64 {
        let terms: Vec<f64> = (0..self.components())
            .map(|k| {
                let z = (x - self.means[k]) / self.spreads[k];
                self.log_weights[k] + normal_log_pdf(z) - self.spreads[k].ln()
            })
            .collect();
        log_sum_exp(&terms)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.logpdf(x).exp()
    }

    /// CDF as the weight-blend of component normal CDFs.
    pub fn cdf(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.components() {
            acc += self.weights[k] * normal_cdf((x - self.means[k]) / self.spreads[k]);
        }
        acc.clamp(0.0, 1.0)
    }

    /// Inverse CDF for `u` in (0, 1) by bracket growth plus bisection.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) || !u.is_finite() {
            return Err(Error::Domain(format!("quantile argument must lie in [0,1], got {u}")));
        }
        // Exact 0 or 1 have no finite preimage; clamp just inside.
        let u = u.clamp(1e-12, 1.0 - 1e-12);
        let max_spread = self.spreads.iter().cloned().fold(f64::MIN, f64::max);
        let mut lo = self.means.iter().cloned().fold(f64::MAX, f64::min) - 10.0 * max_spread;
        let mut hi = self.means.iter().cloned().fold(f64::MIN, f64::max) + 10.0 * max_spread;
        let mut width = hi - lo;
        while self.cdf(lo) > u {
            lo -= width;
            width *= 2.0;
        }
        while self.cdf(hi) < u {
            hi += width;
            width *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let c = self.cdf(mid);
            if (c - u).abs() <= QUANTILE_TOL || hi - lo < f64::EPSILON * mid.abs().max(1.0) {
                return Ok(mid);
            }
            if c < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Draws one sample: pick a component by weight, then a normal draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mut pick = rng.random_range(0.0..1.0);
        let mut idx = self.components() - 1;
        for (k, w) in self.weights.iter().enumerate() {
            if pick < *w {
                idx = k;
                break;
            }
            pick -= w;
        }
        let z: f64 = StandardNormal.sample(rng);
        self.means[idx] + self.spreads[idx] * z
    }
}
