//! State-dependent copula: a diagonal Gaussian mixture in normal-score
//! space. With z_d = quantile(u_d), the copula density is
//! g(z|s) / prod_d phi(z_d), which integrates to one on the cube for any
//! parameters because g integrates to one over z.
//!
//! One network maps the state to G weight logits, G*D component means and
//! G*D log-spreads.

use crate::error::{Error, Result};
use crate::math::{log_sum_exp, normal_cdf, normal_log_pdf, normal_quantile, PIT_EPS};
use crate::mixture::MIN_SPREAD;
use crate::nn::{mlp_init, GradientSet, Layout, NetworkParams};
use crate::rng::stream_rng;
use crate::train::{epoch_order, relative_drop, LossCurve, Pair, TrainConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Spreads in z-space are kept inside this range.
const MAX_SPREAD: f64 = 1e3;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixtureCopula {
    net: NetworkParams,
    components: usize,
    coords: usize,
}

impl GaussianMixtureCopula {
    /// Untrained copula with G `components` over D `coords`.
    ///
    /// The mean-head biases are scattered with small seeded noise. With
    /// zero biases every component would be identical and, because the
    /// normal scores of any data are standardized, the symmetric point is a
    /// stationary saddle that minibatch SGD leaves extremely slowly.
    pub fn new(
        state_dim: usize,
        hidden: usize,
        components: usize,
        coords: usize,
        seed: u64,
    ) -> Result<Self> {
        if components == 0 {
            return Err(Error::InvalidConfig("copula component count G must be >= 1".into()));
        }
        if coords == 0 {
            return Err(Error::InvalidConfig("copula needs at least one coordinate".into()));
        }
        let layout = Layout::new(state_dim, hidden, components * (1 + 2 * coords))?;
        let mut c = GaussianMixtureCopula { net: mlp_init(layout, seed), components, coords };
        let mut rng = stream_rng(seed, 1);
        for j in 0..components {
            for d in 0..coords {
                let idx = c.idx_mean(j, d);
                c.net.b2[idx] = rng.random_range(-0.5..0.5);
            }
        }
        Ok(c)
    }

    pub fn from_parts(net: NetworkParams, components: usize, coords: usize) -> Result<Self> {
        if components == 0 || coords == 0 {
            return Err(Error::InvalidConfig("component and coordinate counts must be >= 1".into()));
        }
        if net.layout.output != components * (1 + 2 * coords) {
            return Err(Error::Shape(format!(
                "network output {} does not match G*(1+2D) = {}",
                net.layout.output,
                components * (1 + 2 * coords)
            )));
        }
        if !net.is_finite() {
            return Err(Error::Domain("copula parameters must be finite".into()));
        }
        Ok(GaussianMixtureCopula { net, components, coords })
    }

    pub fn coords(&self) -> usize {
        self.coords
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn net(&self) -> &NetworkParams {
        &self.net
    }

    pub fn state_dim(&self) -> usize {
        self.net.layout.input
    }

    fn idx_mean(&self, j: usize, d: usize) -> usize {
        self.components + j * self.coords + d
    }

    fn idx_spread(&self, j: usize, d: usize) -> usize {
        self.components * (1 + self.coords) + j * self.coords + d
    }

    fn spread(out: &[f64], idx: usize) -> f64 {
        out[idx].exp().clamp(MIN_SPREAD, MAX_SPREAD)
    }

    fn check(&self, u: &[f64], s: &[f64]) -> Result<()> {
        if u.len() != self.coords {
            return Err(Error::Shape(format!(
                "copula point has {} coordinates, copula expects {}",
                u.len(),
                self.coords
            )));
        }
        if s.len() != self.net.layout.input {
            return Err(Error::Shape(format!(
                "state has {} entries, copula expects {}",
                s.len(),
                self.net.layout.input
            )));
        }
        Ok(())
    }

    /// log c(u|s) = log g(z|s) - sum_d log phi(z_d).
    pub fn log_density(&self, u: &[f64], s: &[f64]) -> Result<f64> {
        self.check(u, s)?;
        let z: Vec<f64> = u.iter().map(|&v| normal_quantile(v.clamp(PIT_EPS, 1.0 - PIT_EPS))).collect();
        let out = self.net.forward(s)?;
        let jac: f64 = z.iter().map(|&zd| normal_log_pdf(zd)).sum();
        Ok(self.log_mixture(&out, &z) - jac)
    }

    fn log_weights(&self, out: &[f64]) -> Vec<f64> {
        let logits = &out[..self.components];
        let lse = log_sum_exp(logits);
        logits.iter().map(|l| l - lse).collect()
    }

    fn log_mixture(&self, out: &[f64], z: &[f64]) -> f64 {
        let lw = self.log_weights(out);
        let terms: Vec<f64> = (0..self.components)
            .map(|j| {
                let mut lp = lw[j];
                for d in 0..self.coords {
                    let sd = Self::spread(out, self.idx_spread(j, d));
                    lp += normal_log_pdf((z[d] - out[self.idx_mean(j, d)]) / sd) - sd.ln();
                }
                lp
            })
            .collect();
        log_sum_exp(&terms)
    }

    /// Marginal copula density of a coordinate pair: other dimensions
    /// integrate out exactly because components are diagonal.
    pub fn pairwise_log_density(
        &self,
        ua: f64,
        ub: f64,
        dim_a: usize,
        dim_b: usize,
        s: &[f64],
    ) -> Result<f64> {
        if dim_a == dim_b || dim_a >= self.coords || dim_b >= self.coords {
            return Err(Error::Domain(format!(
                "pairwise dims ({dim_a}, {dim_b}) invalid for {} coordinates",
                self.coords
            )));
        }
        let out = self.net.forward(s)?;
        let za = normal_quantile(ua.clamp(PIT_EPS, 1.0 - PIT_EPS));
        let zb = normal_quantile(ub.clamp(PIT_EPS, 1.0 - PIT_EPS));
        let lw = self.log_weights(&out);
        let terms: Vec<f64> = (0..self.components)
            .map(|j| {
                let sa = Self::spread(&out, self.idx_spread(j, dim_a));
                let sb = Self::spread(&out, self.idx_spread(j, dim_b));
                lw[j]
                    + normal_log_pdf((za - out[self.idx_mean(j, dim_a)]) / sa)
                    - sa.ln()
                    + normal_log_pdf((zb - out[self.idx_mean(j, dim_b)]) / sb)
                    - sb.ln()
            })
            .collect();
        Ok(log_sum_exp(&terms) - normal_log_pdf(za) - normal_log_pdf(zb))
    }

    /// Samples z from the conditional mixture and maps through the normal CDF.
    pub fn sample(&self, s: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        if s.len() != self.net.layout.input {
            return Err(Error::Shape(format!(
                "state has {} entries, copula expects {}",
                s.len(),
                self.net.layout.input
            )));
        }
        let out = self.net.forward(s)?;
        let lw = self.log_weights(&out);
        let mut pick = rng.random_range(0.0..1.0);
        let mut j = self.components - 1;
        for (idx, l) in lw.iter().enumerate() {
            let w = l.exp();
            if pick < w {
                j = idx;
                break;
            }
            pick -= w;
        }
        Ok((0..self.coords)
            .map(|d| {
                let e: f64 = StandardNormal.sample(rng);
                let z = out[self.idx_mean(j, d)] + Self::spread(&out, self.idx_spread(j, d)) * e;
                normal_cdf(z).clamp(PIT_EPS, 1.0 - PIT_EPS)
            })
            .collect())
    }

    /// Precomputes z-scores and the normal jacobian for a batch; both are
    /// fixed by the data, not the parameters.
    fn prep_rows(&self, pairs: &[Pair]) -> Result<Vec<(Vec<f64>, Vec<f64>, f64)>> {
        pairs
            .iter()
            .map(|(s, u)| {
                if u.len() != self.coords {
                    return Err(Error::Shape(format!(
                        "cube point has {} coordinates, copula expects {}",
                        u.len(),
                        self.coords
                    )));
                }
                let z: Vec<f64> = u
                    .iter()
                    .map(|&v| normal_quantile(v.clamp(PIT_EPS, 1.0 - PIT_EPS)))
                    .collect();
                let jac: f64 = z.iter().map(|&zd| normal_log_pdf(zd)).sum();
                Ok((s.to_vec(), z, jac))
            })
            .collect()
    }

    /// Mean copula NLL of (state, cube point) pairs with parameter
    /// gradients; the seam for external gradient checking.
    pub fn nll_and_grads(&self, pairs: &[Pair]) -> Result<(f64, GradientSet)> {
        let rows = self.prep_rows(pairs)?;
        let views: Vec<(&[f64], &[f64], f64)> = rows
            .iter()
            .map(|(s, z, j)| (s.as_slice(), z.as_slice(), *j))
            .collect();
        self.rows_nll_and_grads(&views)
    }

    /// Mean copula NLL (-log c) of (state, cube point) pairs.
    pub fn mean_nll(&self, pairs: &[Pair]) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::NotEnoughData("cannot score an empty batch".into()));
        }
        let mut acc = 0.0;
        for (s, u) in pairs {
            acc -= self.log_density(u, s)?;
        }
        Ok(acc / pairs.len() as f64)
    }

    /// Mean NLL of a batch of (state, z-scores, jacobian) rows plus network
    /// gradients. The jacobian term sum_d log phi(z_d) is constant in the
    /// parameters, so it shifts the loss but not the gradients.
    ///
    /// Responsibilities r_j drive the pulls: for weight logits the gradient
    /// is softmax_j - r_j; means and log-spreads follow the usual mixture
    /// derivatives scaled by r_j.
    fn rows_nll_and_grads(
        &self,
        rows: &[(&[f64], &[f64], f64)],
    ) -> Result<(f64, GradientSet)> {
        let g = self.components;
        let coords = self.coords;
        let mut grads = GradientSet::zeros(self.net.layout);
        let mut grad_out = vec![0.0; self.net.layout.output];
        let mut loss = 0.0;
        for &(s, z, jac) in rows {
            let (hidden, out) = self.net.forward_full(s)?;
            grad_out.iter_mut().for_each(|v| *v = 0.0);
            let lw = self.log_weights(&out);
            let mut terms = vec![0.0; g];
            for j in 0..g {
                let mut lp = lw[j];
                for d in 0..coords {
                    let sd = Self::spread(&out, self.idx_spread(j, d));
                    lp += normal_log_pdf((z[d] - out[self.idx_mean(j, d)]) / sd) - sd.ln();
                }
                terms[j] = lp;
            }
            let logg = log_sum_exp(&terms);
            loss -= logg - jac;
            for j in 0..g {
                let r = (terms[j] - logg).exp();
                // d(-logg)/d logit_j = softmax_j - r_j
                grad_out[j] = lw[j].exp() - r;
                for d in 0..coords {
                    let sidx = self.idx_spread(j, d);
                    let sd = Self::spread(&out, sidx);
                    let zeta = (z[d] - out[self.idx_mean(j, d)]) / sd;
                    grad_out[self.idx_mean(j, d)] = -r * zeta / sd;
                    let raw = out[sidx].exp();
                    grad_out[sidx] = if raw < MIN_SPREAD || raw > MAX_SPREAD {
                        0.0
                    } else {
                        -r * (zeta * zeta - 1.0)
                    };
                }
            }
            let gset = self.net.backward_from_hidden(s, &hidden, &grad_out)?;
            grads.add_assign(&gset);
        }
        let inv = 1.0 / rows.len() as f64;
        grads.scale(inv);
        Ok((loss * inv, grads))
    }

    /// Minibatch SGD on mean copula NLL over (state, cube point) pairs.
    /// Same protocol as the marginal stage: full-data curve, best parameters
    /// kept, plateaus decay the learning rate until it bottoms out,
    /// validation patience optional.
    pub fn train(
        &mut self,
        data: &[Pair],
        val: Option<&[Pair]>,
        cfg: &TrainConfig,
    ) -> Result<LossCurve> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::NotEnoughData("training set is empty".into()));
        }
        let rows = self.prep_rows(data)?;
        let val_rows = match val {
            Some(v) => Some(self.prep_rows(v)?),
            None => None,
        };
        let score_rows = |c: &Self, rows: &[(Vec<f64>, Vec<f64>, f64)]| -> Result<f64> {
            let mut acc = 0.0;
            for (s, z, jac) in rows {
                let out = c.net.forward(s)?;
                acc -= c.log_mixture(&out, z) - jac;
            }
            Ok(acc / rows.len() as f64)
        };
        let mut curve = LossCurve::default();
        let mut prev = score_rows(self, &rows)?;
        curve.train.push(prev);
        let mut best_score = match &val_rows {
            Some(v) => {
                let nll = score_rows(self, v)?;
                curve.validation.push(nll);
                nll
            }
            None => prev,
        };
        let mut best = self.net.clone();
        let mut stale = 0usize;
        let mut flat = 0usize;
        let mut lr = cfg.lr;
        for epoch in 0..cfg.epochs {
            let order = epoch_order(rows.len(), cfg.seed, epoch);
            for chunk in order.chunks(cfg.batch) {
                let batch: Vec<(&[f64], &[f64], f64)> = chunk
                    .iter()
                    .map(|&i| (rows[i].0.as_slice(), rows[i].1.as_slice(), rows[i].2))
                    .collect();
                let (bl, g) = self.rows_nll_and_grads(&batch)?;
                if !bl.is_finite() {
                    return Err(Error::TrainingDiverged {
                        stage: "copula".into(),
                        detail: format!("non-finite batch loss in epoch {epoch}"),
                    });
                }
                self.net.sgd_step(&g, lr, cfg.l2)?;
            }
            let cur = score_rows(self, &rows)?;
            if !cur.is_finite() {
                return Err(Error::TrainingDiverged {
                    stage: "copula".into(),
                    detail: format!("non-finite NLL after epoch {epoch}"),
                });
            }
            curve.train.push(cur);
            let score = match &val_rows {
                Some(v) => {
                    let nll = score_rows(self, v)?;
                    curve.validation.push(nll);
                    nll
                }
                None => cur,
            };
            if score < best_score {
                best_score = score;
                best = self.net.clone();
                stale = 0;
            } else {
                stale += 1;
            }
            flat = if relative_drop(prev, cur) < cfg.tol { flat + 1 } else { 0 };
            if flat >= 3 || (val_rows.is_some() && stale > cfg.patience) {
                match cfg.next_lr(lr) {
                    Some(next) => {
                        // Resume from the best parameters: the stalled tail
                        // is chatter around them.
                        lr = next;
                        flat = 0;
                        stale = 0;
                        self.net = best.clone();
                    }
                    None => break,
                }
            }
            prev = cur;
        }
        self.net = best;
        Ok(curve)
    }
}
