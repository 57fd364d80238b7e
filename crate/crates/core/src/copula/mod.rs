//! Copulas: dependence-only densities on the unit hypercube.
//!
//! Four variants: independence (flat density), an analytic bivariate
//! Gaussian copula used as a closed-form reference, a state-independent
//! kernel density estimate over stored transform points, and a
//! state-dependent Gaussian-mixture copula parameterized in normal-score
//! space.

mod gmm;
mod kde;

pub use gmm::GaussianMixtureCopula;
pub use kde::{kde_fit, KdeCopula, KdeFitOptions, KDE_SUPPORT_CAP};

use crate::error::{Error, Result};
use crate::math::{normal_cdf, normal_quantile, PIT_EPS};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// A point in the open unit hypercube, every coordinate clamped into
/// `[PIT_EPS, 1 - PIT_EPS]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CopulaPoint(Vec<f64>);

impl CopulaPoint {
    /// Validates finiteness and the [0, 1] range, then clamps the boundary.
    pub fn new(u: Vec<f64>) -> Result<Self> {
        if u.is_empty() {
            return Err(Error::Shape("copula point needs at least one coordinate".into()));
        }
        for &v in &u {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!("copula coordinate {v} outside [0, 1]")));
            }
        }
        Ok(CopulaPoint(
            u.into_iter().map(|v| v.clamp(PIT_EPS, 1.0 - PIT_EPS)).collect(),
        ))
    }

    pub fn coords(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for CopulaPoint {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Analytic bivariate Gaussian copula with correlation `rho`; the closed-form
/// reference for oracle tests and swap-style constructions.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCopula {
    rho: f64,
}

impl GaussianCopula {
    pub fn new(rho: f64) -> Result<Self> {
        if !rho.is_finite() || rho.abs() >= 1.0 {
            return Err(Error::Domain(format!("correlation must lie in (-1, 1), got {rho}")));
        }
        Ok(GaussianCopula { rho })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// log c(u1, u2) = -0.5 ln(1-rho^2)
    ///                 - [rho^2 (z1^2 + z2^2) - 2 rho z1 z2] / (2 (1-rho^2)).
    pub fn log_density(&self, u: &[f64]) -> f64 {
        let z1 = normal_quantile(u[0]);
        let z2 = normal_quantile(u[1]);
        let r2 = 1.0 - self.rho * self.rho;
        -0.5 * r2.ln()
            - (self.rho * self.rho * (z1 * z1 + z2 * z2) - 2.0 * self.rho * z1 * z2) / (2.0 * r2)
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 2] {
        let z1: f64 = StandardNormal.sample(rng);
        let e: f64 = StandardNormal.sample(rng);
        let z2 = self.rho * z1 + (1.0 - self.rho * self.rho).sqrt() * e;
        [
            normal_cdf(z1).clamp(PIT_EPS, 1.0 - PIT_EPS),
            normal_cdf(z2).clamp(PIT_EPS, 1.0 - PIT_EPS),
        ]
    }
}

/// The copula variants a policy can carry.
#[derive(Debug, Clone, PartialEq)]
pub enum Copula {
    Independence { coords: usize },
    Gaussian(GaussianCopula),
    Kde(KdeCopula),
    GaussianMixture(GaussianMixtureCopula),
}

impl Copula {
    pub fn coords(&self) -> usize {
        match self {
            Copula::Independence { coords } => *coords,
            Copula::Gaussian(_) => 2,
            Copula::Kde(k) => k.coords(),
            Copula::GaussianMixture(g) => g.coords(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Copula::Independence { .. } => "uniform",
            Copula::Gaussian(_) => "gaussian",
            Copula::Kde(_) => "kde",
            Copula::GaussianMixture(_) => "gmm",
        }
    }

    pub fn is_state_dependent(&self) -> bool {
        matches!(self, Copula::GaussianMixture(_))
    }

    fn check_point(&self, u: &CopulaPoint) -> Result<()> {
        if u.coords() != self.coords() {
            return Err(Error::Shape(format!(
                "copula point has {} coordinates, copula expects {}",
                u.coords(),
                self.coords()
            )));
        }
        Ok(())
    }

    fn state_for<'a>(&self, s: Option<&'a [f64]>) -> Result<Option<&'a [f64]>> {
        match (self.is_state_dependent(), s) {
            (true, None) => Err(Error::Usage(
                "state-dependent copula queried without a state".into(),
            )),
            (_, s) => Ok(s),
        }
    }

    /// Log copula density at `u` (given `s` for the state-dependent variant).
    pub fn log_density(&self, u: &CopulaPoint, s: Option<&[f64]>) -> Result<f64> {
        self.check_point(u)?;
        let s = self.state_for(s)?;
        match self {
            Copula::Independence { .. } => Ok(0.0),
            Copula::Gaussian(g) => Ok(g.log_density(u.as_slice())),
            Copula::Kde(k) => Ok(k.log_density(u.as_slice())),
            Copula::GaussianMixture(g) => g.log_density(u.as_slice(), s.unwrap()),
        }
    }

    /// Draws one point from the copula.
    pub fn sample(&self, s: Option<&[f64]>, rng: &mut ChaCha8Rng) -> Result<CopulaPoint> {
        let s = self.state_for(s)?;
        let u = match self {
            Copula::Independence { coords } => (0..*coords)
                .map(|_| rng.random_range(PIT_EPS..1.0 - PIT_EPS))
                .collect(),
            Copula::Gaussian(g) => g.sample(rng).to_vec(),
            Copula::Kde(k) => k.sample(rng)?,
            Copula::GaussianMixture(g) => g.sample(s.unwrap(), rng)?,
        };
        CopulaPoint::new(u)
    }
}

#[cfg(test)]
pub(crate) fn ks_statistic(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &u)| {
            let hi = ((i + 1) as f64 / n - u).abs();
            let lo = (u - i as f64 / n).abs();
            hi.max(lo)
        })
        .fold(0.0, f64::max)
}
