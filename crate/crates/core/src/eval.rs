//! Evaluation: prediction error against recorded actions, held-out
//! likelihood, the marginal/copula swap matrix, copula-density grids, and a
//! paired bootstrap for comparing policies on the same data.

use rand::Rng;
use rayon::prelude::*;

use crate::copula::{Copula, CopulaPoint};
use crate::data::{join_floats, Dataset};
use crate::error::{Error, Result};
use crate::math::{mean, sample_std, PIT_EPS};
use crate::policy::{ActionPredictor, CopulaPolicy, MeanPredictor};
use crate::rng::{seeded_rng, stream_rng};

/// One evaluation outcome: a named scalar, its spread over repeats, the seeds
/// that produced it, and a fingerprint of the exact configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub metric: String,
    pub value: f64,
    pub sd: f64,
    pub seeds: Vec<u64>,
    pub fingerprint: String,
}

impl EvalReport {
    /// A single measurement; spread is zero by definition.
    pub fn single(metric: &str, value: f64, seeds: Vec<u64>, desc: &str) -> Self {
        EvalReport {
            metric: metric.into(),
            value,
            sd: 0.0,
            seeds,
            fingerprint: fingerprint(desc),
        }
    }

    /// Mean and sample standard deviation over repeated runs. One run keeps
    /// its value with zero spread.
    pub fn aggregate(metric: &str, runs: &[(u64, f64)], desc: &str) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::Usage("cannot aggregate zero runs".into()));
        }
        let values: Vec<f64> = runs.iter().map(|&(_, v)| v).collect();
        let sd = if values.len() > 1 { sample_std(&values) } else { 0.0 };
        Ok(EvalReport {
            metric: metric.into(),
            value: mean(&values),
            sd,
            seeds: runs.iter().map(|&(s, _)| s).collect(),
            fingerprint: fingerprint(desc),
        })
    }
}

/// FNV-1a over the canonical configuration description. Stable across runs
/// and platforms, so identical setups produce identical fingerprints.
pub fn fingerprint(desc: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in desc.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

fn check_test_set(test: &Dataset) -> Result<()> {
    test.validate()?;
    if test.steps() == 0 {
        return Err(Error::NotEnoughData("test dataset has no steps".into()));
    }
    Ok(())
}

/// Root-mean-square error of predicted vs recorded actions in normalized
/// action units (the test set's own ranges), pooled over every coordinate of
/// every step. Trajectory `i` draws from `stream_rng(seed, i)`, so the value
/// is deterministic and independent of thread scheduling.
pub fn rmse_with(
    pred: &dyn ActionPredictor,
    test: &Dataset,
    seed: u64,
    desc: &str,
) -> Result<EvalReport> {
    check_test_set(test)?;
    if pred.action_dim() != test.meta.action_dim {
        return Err(Error::Shape(format!(
            "predictor emits {} coordinates, test data has {}",
            pred.action_dim(),
            test.meta.action_dim
        )));
    }
    let per = per_trajectory_sq_err(pred, test, seed)?;
    let (sq, n) = per
        .iter()
        .fold((0.0, 0usize), |(s, c), &(sq, n)| (s + sq, c + n));
    Ok(EvalReport::single("rmse", (sq / n as f64).sqrt(), vec![seed], desc))
}

/// Squared-error sums and counts per trajectory, in test-set order.
fn per_trajectory_sq_err(
    pred: &dyn ActionPredictor,
    test: &Dataset,
    seed: u64,
) -> Result<Vec<(f64, usize)>> {
    let norm = &test.meta.norm;
    test.trajectories
        .par_iter()
        .enumerate()
        .map(|(ti, tr)| {
            let mut rng = stream_rng(seed, ti as u64);
            let mut sq = 0.0;
            let mut n = 0usize;
            for (s, a) in tr.states.iter().zip(&tr.actions) {
                let p = pred.predict(s, &mut rng)?;
                let pn = norm.norm_action(&p);
                let an = norm.norm_action(a);
                for (x, y) in pn.iter().zip(&an) {
                    sq += (x - y) * (x - y);
                    n += 1;
                }
            }
            Ok((sq, n))
        })
        .collect()
}

/// Per-trajectory RMSEs for a policy, for paired comparisons: two policies
/// evaluated with the same seed share the per-trajectory rng streams, so the
/// differences are paired samples.
pub fn rmse_per_trajectory(
    policy: &CopulaPolicy,
    test: &Dataset,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_test_set(test)?;
    let pred = MeanPredictor { policy, n_samples };
    let per = per_trajectory_sq_err(&pred, test, seed)?;
    Ok(per.iter().map(|&(sq, n)| (sq / n as f64).sqrt()).collect())
}

/// RMSE of a policy queried through `n_samples`-average prediction.
pub fn eval_rmse(
    policy: &CopulaPolicy,
    test: &Dataset,
    n_samples: usize,
    seed: u64,
) -> Result<EvalReport> {
    let pred = MeanPredictor { policy, n_samples };
    let desc = format!(
        "rmse env={} m={} t={} data_seed={} copula={} n_samples={n_samples} seed={seed}",
        test.meta.env, test.meta.m, test.meta.t, test.meta.seed,
        policy.copula().kind(),
    );
    rmse_with(&pred, test, seed, &desc)
}

/// Mean negative log-likelihood per timestep of the recorded actions under
/// the policy, in raw action units. Pure density evaluation: deterministic,
/// no seeds involved.
pub fn eval_nll(policy: &CopulaPolicy, test: &Dataset) -> Result<EvalReport> {
    check_test_set(test)?;
    let desc = format!(
        "nll env={} m={} t={} data_seed={} copula={}",
        test.meta.env, test.meta.m, test.meta.t, test.meta.seed,
        policy.copula().kind(),
    );
    let per: Result<Vec<f64>> = test
        .trajectories
        .par_iter()
        .map(|tr| {
            let mut acc = 0.0;
            for (s, a) in tr.states.iter().zip(&tr.actions) {
                acc += policy.joint_log_likelihood(s, a)?;
            }
            Ok(acc)
        })
        .collect();
    let total: f64 = per?.iter().sum();
    Ok(EvalReport::single("nll", -total / test.steps() as f64, vec![], &desc))
}

/// NLL of a cross-wired policy: marginal densities, CDF transforms, and the
/// action jacobian come from `marg_side` under its own normalization, while
/// the copula density comes from `cop_side` with states normalized by that
/// side's ranges. The two policies may have been trained on differently
/// scaled data, so neither normalization can serve both halves.
fn swap_nll(marg_side: &CopulaPolicy, cop_side: &CopulaPolicy, test: &Dataset) -> Result<f64> {
    let m_norm = marg_side.norm();
    let c_norm = cop_side.norm();
    let per: Result<Vec<f64>> = test
        .trajectories
        .par_iter()
        .map(|tr| {
            let mut acc = 0.0;
            for (s, a) in tr.states.iter().zip(&tr.actions) {
                let sn = m_norm.norm_state(s);
                let an = m_norm.norm_action(a);
                let mixtures = marg_side.marginal().forward(&sn)?;
                let mut sum = 0.0;
                let mut u = Vec::with_capacity(an.len());
                for (gm, &x) in mixtures.iter().zip(&an) {
                    sum += gm.logpdf(x);
                    u.push(gm.cdf(x).clamp(PIT_EPS, 1.0 - PIT_EPS));
                }
                let point = CopulaPoint::new(u)?;
                let log_c = cop_side.copula().log_density(&point, Some(&c_norm.norm_state(s)))?;
                acc += sum + log_c + m_norm.action_log_jacobian();
            }
            Ok(acc)
        })
        .collect();
    Ok(-per?.iter().sum::<f64>() / test.steps() as f64)
}

/// The 2x2 factorization diagnostic: held-out NLL for every pairing of
/// {old, new} marginals with {old, new} copula, in that order with marginals
/// varying slowest. Separates "the marginals moved" from "the dependence
/// structure moved" when the data-generating process changes.
pub fn eval_swap(
    old_p: &CopulaPolicy,
    new_p: &CopulaPolicy,
    new_test: &Dataset,
) -> Result<[EvalReport; 4]> {
    check_test_set(new_test)?;
    if old_p.coords() != new_p.coords() || old_p.state_dim() != new_p.state_dim() {
        return Err(Error::Shape(
            "swap requires policies with matching state and action dimensions".into(),
        ));
    }
    let base = format!(
        "swap env={} m={} t={} data_seed={} old_copula={} new_copula={}",
        new_test.meta.env, new_test.meta.m, new_test.meta.t, new_test.meta.seed,
        old_p.copula().kind(), new_p.copula().kind(),
    );
    let combos: [(&str, &CopulaPolicy, &CopulaPolicy); 4] = [
        ("nll marginals=old copula=old", old_p, old_p),
        ("nll marginals=old copula=new", old_p, new_p),
        ("nll marginals=new copula=old", new_p, old_p),
        ("nll marginals=new copula=new", new_p, new_p),
    ];
    let mut out = Vec::with_capacity(4);
    for (label, m_side, c_side) in combos {
        let value = swap_nll(m_side, c_side, new_test)?;
        out.push(EvalReport::single(label, value, vec![], &format!("{base} {label}")));
    }
    Ok(out.try_into().expect("exactly four combos"))
}

/// Percentile bootstrap confidence interval for the mean of `diffs`.
/// Resamples with replacement `reps` times; returns (lo, hi) covering the
/// requested confidence.
pub fn bootstrap_mean_ci(
    diffs: &[f64],
    reps: usize,
    confidence: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    if diffs.is_empty() {
        return Err(Error::NotEnoughData("bootstrap needs at least one value".into()));
    }
    if reps == 0 {
        return Err(Error::InvalidConfig("bootstrap needs at least one resample".into()));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "confidence must lie in (0, 1), got {confidence}"
        )));
    }
    let mut rng = seeded_rng(seed);
    let n = diffs.len();
    let mut means = Vec::with_capacity(reps);
    for _ in 0..reps {
        let mut acc = 0.0;
        for _ in 0..n {
            acc += diffs[rng.random_range(0..n)];
        }
        means.push(acc / n as f64);
    }
    means.sort_by(|a, b| a.total_cmp(b));
    let alpha = 1.0 - confidence;
    let lo_idx = ((alpha / 2.0) * reps as f64).floor() as usize;
    let hi_idx = (((1.0 - alpha / 2.0) * reps as f64).ceil() as usize).saturating_sub(1);
    Ok((means[lo_idx.min(reps - 1)], means[hi_idx.min(reps - 1)]))
}

/// A copula density sampled at the centers of a `resolution x resolution`
/// grid over the unit square for one coordinate pair. Row `i` fixes
/// `u_a = (i + 0.5) / resolution`; column `j` fixes `u_b` likewise.
#[derive(Debug, Clone, PartialEq)]
pub struct CopulaGrid {
    pub kind: String,
    pub dim_a: usize,
    pub dim_b: usize,
    pub resolution: usize,
    pub values: Vec<f64>,
}

impl CopulaGrid {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.resolution + j]
    }

    /// Mean over cells; a midpoint-rule estimate of the pair density's
    /// integral over the unit square, which is 1 for a true copula.
    pub fn mean(&self) -> f64 {
        mean(&self.values)
    }

    /// Plain-text rendering: '#'-prefixed header lines, then one
    /// whitespace-separated row per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("# comil copula grid\n");
        out.push_str(&format!("# kind {}\n", self.kind));
        out.push_str(&format!("# dims {} {}\n", self.dim_a, self.dim_b));
        out.push_str(&format!("# resolution {}\n", self.resolution));
        out.push_str("# rows index u_a, columns index u_b, cell centers (i+0.5)/resolution\n");
        for i in 0..self.resolution {
            let row = &self.values[i * self.resolution..(i + 1) * self.resolution];
            out.push_str(&join_floats(row));
            out.push('\n');
        }
        out
    }
}

/// Evaluates the policy's copula density for the coordinate pair
/// `(dim_a, dim_b)` on a grid of cell centers. The raw state `s` is required
/// for the state-dependent copula (it is normalized internally) and ignored
/// otherwise. Pair densities for the KDE and mixture copulas are exact
/// marginals: the remaining coordinates integrate out in closed form.
pub fn export_copula_grid(
    policy: &CopulaPolicy,
    dim_a: usize,
    dim_b: usize,
    resolution: usize,
    s: Option<&[f64]>,
) -> Result<CopulaGrid> {
    let coords = policy.coords();
    if dim_a == dim_b || dim_a >= coords || dim_b >= coords {
        return Err(Error::Domain(format!(
            "grid dims ({dim_a}, {dim_b}) invalid for {coords} coordinates"
        )));
    }
    if resolution < 2 {
        return Err(Error::InvalidConfig(format!(
            "grid resolution must be at least 2, got {resolution}"
        )));
    }
    if policy.copula().is_state_dependent() && s.is_none() {
        return Err(Error::Usage(
            "state-dependent copula grid requires a state".into(),
        ));
    }
    let sn = s.map(|raw| policy.norm().norm_state(raw));
    // The pairwise KDE is rebuilt once, not per cell.
    let kde_pair = match policy.copula() {
        Copula::Kde(k) => Some(k.pairwise(dim_a, dim_b)?),
        _ => None,
    };
    let mut values = Vec::with_capacity(resolution * resolution);
    for i in 0..resolution {
        let ua = (i as f64 + 0.5) / resolution as f64;
        for j in 0..resolution {
            let ub = (j as f64 + 0.5) / resolution as f64;
            let log_c = match policy.copula() {
                Copula::Independence { .. } => 0.0,
                Copula::Gaussian(g) => {
                    let mut point = [0.0; 2];
                    point[dim_a] = ua;
                    point[dim_b] = ub;
                    g.log_density(&point)
                }
                Copula::Kde(_) => {
                    kde_pair.as_ref().expect("built above").log_density(&[ua, ub])
                }
                Copula::GaussianMixture(g) => g.pairwise_log_density(
                    ua,
                    ub,
                    dim_a,
                    dim_b,
                    sn.as_deref().expect("checked above"),
                )?,
            };
            values.push(log_c.exp());
        }
    }
    Ok(CopulaGrid {
        kind: policy.copula().kind().into(),
        dim_a,
        dim_b,
        resolution,
        values,
    })
}

/// Human-readable aligned table of reports.
pub fn render_table(reports: &[EvalReport]) -> String {
    let width = reports
        .iter()
        .map(|r| r.metric.len())
        .chain(std::iter::once("metric".len()))
        .max()
        .unwrap_or(6);
    let mut out = format!("{:<width$}  {:>14}  {:>12}  fingerprint\n", "metric", "value", "sd");
    for r in reports {
        out.push_str(&format!(
            "{:<width$}  {:>14.6}  {:>12.6}  {}\n",
            r.metric, r.value, r.sd, r.fingerprint
        ));
    }
    out
}

/// Machine-readable TSV; values keep full precision so they parse back
/// bit-exactly.
pub fn render_tsv(reports: &[EvalReport]) -> String {
    let mut out = String::from("metric\tvalue\tsd\tseeds\tfingerprint\n");
    for r in reports {
        let seeds: Vec<String> = r.seeds.iter().map(|s| s.to_string()).collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.metric,
            r.value,
            r.sd,
            seeds.join(","),
            r.fingerprint
        ));
    }
    out
}
