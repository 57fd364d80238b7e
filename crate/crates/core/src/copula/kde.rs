//! State-independent copula: Gaussian kernel density estimate over the
//! stored transform points, with boundary reflection so no mass leaks out
//! of the cube.

use crate::error::{Error, Result};
use crate::math::{log_sum_exp, normal_log_pdf, PIT_EPS};
use crate::rng::seeded_rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Bandwidths never drop below this, so degenerate supports stay usable.
pub const BANDWIDTH_FLOOR: f64 = 1e-3;
/// Default cap on stored support points; larger fits are subsampled.
pub const KDE_SUPPORT_CAP: usize = 20_000;

#[derive(Debug, Clone, PartialEq)]
pub struct KdeCopula {
    /// Support points, flattened row-major: `support[i * coords + d]`.
    support: Vec<f64>,
    coords: usize,
    bandwidths: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct KdeFitOptions {
    /// Maximum support size; a uniform seeded subsample is kept beyond it.
    pub cap: usize,
    pub seed: u64,
    /// Per-coordinate bandwidths to use instead of Scott's rule.
    pub bandwidth_override: Option<Vec<f64>>,
}

impl Default for KdeFitOptions {
    fn default() -> Self {
        KdeFitOptions { cap: KDE_SUPPORT_CAP, seed: 0, bandwidth_override: None }
    }
}

/// Fits the KDE copula: stores (up to `cap`) points and sets per-coordinate
/// bandwidths by Scott's rule `sigma_d * n^(-1/(D+4))`, floored at
/// [`BANDWIDTH_FLOOR`].
pub fn kde_fit(points: &[Vec<f64>], opts: &KdeFitOptions) -> Result<KdeCopula> {
    if points.len() < 2 {
        return Err(Error::NotEnoughData(format!(
            "kde needs at least 2 points, got {}",
            points.len()
        )));
    }
    if opts.cap < 2 {
        return Err(Error::InvalidConfig("kde support cap must be >= 2".into()));
    }
    let coords = points[0].len();
    if coords == 0 {
        return Err(Error::Shape("kde points need at least one coordinate".into()));
    }
    for p in points {
        if p.len() != coords {
            return Err(Error::Shape(format!(
                "kde point has {} coordinates, expected {coords}",
                p.len()
            )));
        }
        for &v in p {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!("kde point coordinate {v} outside [0, 1]")));
            }
        }
    }
    let kept: Vec<usize> = if points.len() > opts.cap {
        let mut rng = seeded_rng(opts.seed);
        let mut idx = rand::seq::index::sample(&mut rng, points.len(), opts.cap).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..points.len()).collect()
    };
    let n = kept.len();
    let mut support = Vec::with_capacity(n * coords);
    for &i in &kept {
        for &v in &points[i] {
            support.push(v.clamp(PIT_EPS, 1.0 - PIT_EPS));
        }
    }
    let bandwidths = match &opts.bandwidth_override {
        Some(h) => {
            if h.len() != coords {
                return Err(Error::Shape(format!(
                    "{} bandwidths for {coords} coordinates",
                    h.len()
                )));
            }
            if h.iter().any(|&v| !v.is_finite() || v <= 0.0) {
                return Err(Error::Domain("bandwidths must be positive".into()));
            }
            h.clone()
        }
        None => {
            let factor = (n as f64).powf(-1.0 / (coords as f64 + 4.0));
            (0..coords)
                .map(|d| {
                    let col: Vec<f64> = (0..n).map(|i| support[i * coords + d]).collect();
                    (crate::math::sample_std(&col) * factor).max(BANDWIDTH_FLOOR)
                })
                .collect()
        }
    };
    Ok(KdeCopula { support, coords, bandwidths })
}

impl KdeCopula {
    pub fn coords(&self) -> usize {
        self.coords
    }

    pub fn len(&self) -> usize {
        self.support.len() / self.coords
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn support_point(&self, i: usize) -> &[f64] {
        &self.support[i * self.coords..(i + 1) * self.coords]
    }

    /// Log of the reflected-kernel mixture density at `u`.
    ///
    /// Each kernel contributes its direct image plus the reflections across
    /// 0 and 1, so the density integrates to one on the cube.
    pub fn log_density(&self, u: &[f64]) -> f64 {
        let n = self.len();
        let mut terms = Vec::with_capacity(n);
        for i in 0..n {
            let x = self.support_point(i);
            let mut lp = 0.0;
            for d in 0..self.coords {
                lp += ln_reflected_kernel(u[d], x[d], self.bandwidths[d]);
            }
            terms.push(lp);
        }
        log_sum_exp(&terms) - (n as f64).ln()
    }

    /// Picks a stored point uniformly, perturbs by kernel noise, reflects
    /// back into the cube.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(Error::NotFitted("kde copula has no support".into()));
        }
        let i = rng.random_range(0..self.len());
        let x = self.support_point(i);
        Ok((0..self.coords)
            .map(|d| {
                let e: f64 = StandardNormal.sample(rng);
                reflect_into_unit(x[d] + self.bandwidths[d] * e).clamp(PIT_EPS, 1.0 - PIT_EPS)
            })
            .collect())
    }

    /// A new KDE over two selected coordinates of the stored support, with
    /// Scott's rule re-applied at D = 2 (pairwise density extraction).
    pub fn pairwise(&self, dim_a: usize, dim_b: usize) -> Result<KdeCopula> {
        if dim_a == dim_b || dim_a >= self.coords || dim_b >= self.coords {
            return Err(Error::Domain(format!(
                "pairwise dims ({dim_a}, {dim_b}) invalid for {} coordinates",
                self.coords
            )));
        }
        let points: Vec<Vec<f64>> = (0..self.len())
            .map(|i| {
                let p = self.support_point(i);
                vec![p[dim_a], p[dim_b]]
            })
            .collect();
        kde_fit(&points, &KdeFitOptions { cap: usize::MAX, ..Default::default() })
    }

    /// Binary serialization: magic line, then little-endian u64 counts
    /// (points, coords) followed by bandwidths and support as f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"comil-kde v1\n");
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.coords as u64).to_le_bytes());
        for v in self.bandwidths.iter().chain(&self.support) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<KdeCopula> {
        let magic = b"comil-kde v1\n";
        if bytes.len() < magic.len() || &bytes[..magic.len()] != magic {
            return Err(Error::Parse("not a kde record".into()));
        }
        let mut off = magic.len();
        let read_u64 = |off: &mut usize| -> Result<u64> {
            let end = *off + 8;
            if end > bytes.len() {
                return Err(Error::Parse("kde record truncated".into()));
            }
            let v = u64::from_le_bytes(bytes[*off..end].try_into().unwrap());
            *off = end;
            Ok(v)
        };
        let n = read_u64(&mut off)? as usize;
        let coords = read_u64(&mut off)? as usize;
        let want = (coords + n * coords) * 8;
        if bytes.len() != off + want {
            return Err(Error::Parse(format!(
                "kde record length {} does not match header ({n} x {coords})",
                bytes.len()
            )));
        }
        let read_f64 = |off: &mut usize| -> f64 {
            let v = f64::from_le_bytes(bytes[*off..*off + 8].try_into().unwrap());
            *off += 8;
            v
        };
        let bandwidths: Vec<f64> = (0..coords).map(|_| read_f64(&mut off)).collect();
        let support: Vec<f64> = (0..n * coords).map(|_| read_f64(&mut off)).collect();
        if coords == 0 || n == 0 {
            return Err(Error::Parse("kde record is empty".into()));
        }
        if bandwidths.iter().any(|&h| !(h > 0.0))
            || support.iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v))
        {
            return Err(Error::Parse("kde record holds invalid values".into()));
        }
        Ok(KdeCopula { support, coords, bandwidths })
    }
}

/// Gaussian kernel on [0, 1] with reflection across both boundaries:
/// images of the center at -x and 2-x catch the leaked tails.
fn ln_reflected_kernel(u: f64, x: f64, h: f64) -> f64 {
    let direct = normal_log_pdf((u - x) / h);
    let low = normal_log_pdf((u + x) / h);
    let high = normal_log_pdf((2.0 - u - x) / h);
    log_sum_exp(&[direct, low, high]) - h.ln()
}

fn reflect_into_unit(mut x: f64) -> f64 {
    // period-2 sawtooth: finitely many bounces for any finite x
    while !(0.0..=1.0).contains(&x) {
        if x < 0.0 {
            x = -x;
        } else {
            x = 2.0 - x;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use rand::Rng;

    fn uniform_points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seeded_rng(seed);
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn fit_validates_input() {
        assert!(kde_fit(&[vec![0.5, 0.5]], &KdeFitOptions::default()).is_err());
        assert!(kde_fit(&[vec![0.5], vec![0.5, 0.5]], &KdeFitOptions::default()).is_err());
        assert!(kde_fit(&[vec![1.5], vec![0.5]], &KdeFitOptions::default()).is_err());
        assert!(kde_fit(&uniform_points(10, 2, 0), &KdeFitOptions::default()).is_ok());
    }

    #[test]
    fn identical_points_hit_bandwidth_floor() {
        let k = kde_fit(&[vec![0.5, 0.5], vec![0.5, 0.5]], &KdeFitOptions::default()).unwrap();
        assert_eq!(k.bandwidths(), &[BANDWIDTH_FLOOR, BANDWIDTH_FLOOR]);
    }

    #[test]
    fn scott_rule_hand_value() {
        // n = 1000, D = 2, sd = 0.25 -> 0.25 * 1000^(-1/6) ~ 0.0789.
        let n = 1000;
        let points = uniform_points(n, 2, 1);
        let k = kde_fit(&points, &KdeFitOptions::default()).unwrap();
        let factor = (n as f64).powf(-1.0 / 6.0);
        assert!((0.25 * factor - 0.0789).abs() < 5e-4);
        for d in 0..2 {
            let col: Vec<f64> = points.iter().map(|p| p[d]).collect();
            let want = crate::math::sample_std(&col) * factor;
            assert!((k.bandwidths()[d] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn subsampling_caps_support_deterministically() {
        let points = uniform_points(500, 2, 2);
        let opts = KdeFitOptions { cap: 100, seed: 9, ..Default::default() };
        let a = kde_fit(&points, &opts).unwrap();
        let b = kde_fit(&points, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 100);
        let c = kde_fit(&points, &KdeFitOptions { cap: 100, seed: 10, ..Default::default() })
            .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn density_is_positive_and_integrates_to_one() {
        // Monte Carlo over the cube: mean of c(u) at uniform u estimates the
        // integral, which reflection should keep within [0.98, 1.02].
        let points = uniform_points(300, 2, 3);
        let k = kde_fit(&points, &KdeFitOptions::default()).unwrap();
        let mut rng = seeded_rng(4);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let u = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let c = k.log_density(&u).exp();
            assert!(c >= 0.0 && c.is_finite());
            acc += c;
        }
        let integral = acc / n as f64;
        assert!((0.98..=1.02).contains(&integral), "integral {integral}");
    }

    #[test]
    fn tight_cluster_density_integrates_to_one_near_boundary() {
        // Mass pushed against the corner exercises the reflection terms.
        let mut rng = seeded_rng(5);
        let points: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                vec![
                    rng.random_range(0.0..0.05),
                    rng.random_range(0.95..1.0),
                ]
            })
            .collect();
        let k = kde_fit(&points, &KdeFitOptions::default()).unwrap();
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let u = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            acc += k.log_density(&u).exp();
        }
        let integral = acc / n as f64;
        assert!((0.95..=1.05).contains(&integral), "integral {integral}");
    }

    #[test]
    fn single_point_sampling_concentrates() {
        let k = KdeCopula {
            support: vec![0.5, 0.5],
            coords: 2,
            bandwidths: vec![BANDWIDTH_FLOOR, BANDWIDTH_FLOOR],
        };
        let mut rng = seeded_rng(6);
        let draws: Vec<Vec<f64>> = (0..2000).map(|_| k.sample(&mut rng).unwrap()).collect();
        for d in 0..2 {
            let col: Vec<f64> = draws.iter().map(|p| p[d]).collect();
            let sd = crate::math::sample_std(&col);
            assert!(sd < 2.0 * BANDWIDTH_FLOOR, "sd {sd}");
            assert!((crate::math::mean(&col) - 0.5).abs() < 1e-3);
        }
    }

    #[test]
    fn samples_stay_inside_the_cube() {
        let points = uniform_points(50, 3, 7);
        let k = kde_fit(&points, &KdeFitOptions::default()).unwrap();
        let mut rng = seeded_rng(8);
        for _ in 0..5000 {
            let u = k.sample(&mut rng).unwrap();
            for &v in &u {
                assert!((PIT_EPS..=1.0 - PIT_EPS).contains(&v));
            }
        }
    }

    #[test]
    fn sampling_matches_density_mean_log() {
        // Mean log-density of the KDE's own samples must exceed that of
        // uniform points when the support is clustered (consistency check).
        let mut rng = seeded_rng(9);
        let points: Vec<Vec<f64>> = (0..300)
            .map(|_| {
                let x = rng.random_range(0.3..0.4);
                vec![x, x + rng.random_range(0.0..0.05)]
            })
            .collect();
        let k = kde_fit(&points, &KdeFitOptions::default()).unwrap();
        let own: f64 = (0..2000)
            .map(|_| k.log_density(&k.sample(&mut rng).unwrap()))
            .sum::<f64>()
            / 2000.0;
        let unif: f64 = (0..2000)
            .map(|_| {
                k.log_density(&[rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
            })
            .sum::<f64>()
            / 2000.0;
        assert!(own > unif + 1.0, "own {own} vs uniform {unif}");
    }

    #[test]
    fn reflection_helper_is_a_sawtooth() {
        assert_eq!(reflect_into_unit(0.3), 0.3);
        assert!((reflect_into_unit(-0.2) - 0.2).abs() < 1e-15);
        assert!((reflect_into_unit(1.3) - 0.7).abs() < 1e-15);
        assert!((reflect_into_unit(2.4) - 0.4).abs() < 1e-15);
        assert!((reflect_into_unit(-1.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pairwise_extraction_selects_coordinates() {
        let points = uniform_points(200, 4, 10);
        let k = kde_fit(&points, &KdeFitOptions::default()).unwrap();
        let p = k.pairwise(1, 3).unwrap();
        assert_eq!(p.coords(), 2);
        assert_eq!(p.len(), 200);
        for i in 0..5 {
            assert_eq!(p.support_point(i)[0], k.support_point(i)[1]);
            assert_eq!(p.support_point(i)[1], k.support_point(i)[3]);
        }
        assert!(k.pairwise(1, 1).is_err());
        assert!(k.pairwise(0, 4).is_err());
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let points = uniform_points(137, 3, 11);
        let k = kde_fit(&points, &KdeFitOptions::default()).unwrap();
        let bytes = k.to_bytes();
        let back = KdeCopula::from_bytes(&bytes).unwrap();
        assert_eq!(k, back);
        assert_eq!(bytes, back.to_bytes());
        assert!(KdeCopula::from_bytes(&bytes[..20]).is_err());
        assert!(KdeCopula::from_bytes(b"garbage").is_err());
    }
}
