//! State-conditioned marginal action model: one network maps the state to
//! K mixture means per action coordinate, a free log-spread per coordinate
//! sets the (shared) component spread, weights are fixed uniform.
//!
//! Trains by minimizing mean NLL with analytic gradients through the
//! mixture responsibilities; the probability integral transform `pit` maps
//! observed actions onto the unit cube for the copula stage.

use crate::error::{Error, Result};
use crate::math::{log_sum_exp, normal_cdf, normal_log_pdf, PIT_EPS};
use crate::mixture::{GaussianMixture1D, MIN_SPREAD};
use crate::nn::{mlp_init, GradientSet, Layout, NetworkParams};
use crate::train::{epoch_order, relative_drop, LossCurve, Pair, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalModel {
    net: NetworkParams,
    log_spreads: Vec<f64>,
    components: usize,
    agent_dims: Vec<usize>,
}

/// Deterministic per-component mean offsets, evenly spaced in [-0.3, 0.3]
/// (normalized action units). The network starts with zero biases, which
/// leaves mixture components nearly interchangeable and stalls likelihood
/// training on multimodal data for tens of epochs; a fixed structural offset
/// per component removes that plateau. The network can always cancel the
/// offset, so unimodal fits are unaffected.
fn component_anchor(k: usize, components: usize) -> f64 {
    if components < 2 {
        0.0
    } else {
        -0.3 + 0.6 * k as f64 / (components - 1) as f64
    }
}

impl MarginalModel {
    /// Fresh untrained model. `agent_dims[i]` is the number of scalar action
    /// coordinates agent `i` contributes; their sum is the coordinate count D.
    pub fn new(
        state_dim: usize,
        hidden: usize,
        components: usize,
        agent_dims: Vec<usize>,
        seed: u64,
    ) -> Result<Self> {
        let coords: usize = agent_dims.iter().sum();
        if components == 0 {
            return Err(Error::InvalidConfig("component count K must be >= 1".into()));
        }
        if coords == 0 || agent_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig(
                "every agent must contribute at least one action coordinate".into(),
            ));
        }
        let layout = Layout::new(state_dim, hidden, components * coords)?;
        Ok(MarginalModel {
            net: mlp_init(layout, seed),
            // exp(-1) ~ 0.37: broad enough to cover normalized actions at start
            log_spreads: vec![-1.0; coords],
            components,
            agent_dims,
        })
    }

    /// Rebuilds a model from its stored parts (deserialization, tests).
    pub fn from_parts(
        net: NetworkParams,
        log_spreads: Vec<f64>,
        components: usize,
        agent_dims: Vec<usize>,
    ) -> Result<Self> {
        let coords: usize = agent_dims.iter().sum();
        if components == 0 || coords == 0 {
            return Err(Error::InvalidConfig("component and coordinate counts must be >= 1".into()));
        }
        if net.layout.output != components * coords {
            return Err(Error::Shape(format!(
                "network output {} does not match K*D = {}*{}",
                net.layout.output, components, coords
            )));
        }
        if log_spreads.len() != coords {
            return Err(Error::Shape(format!(
                "{} log-spreads for {} coordinates",
                log_spreads.len(),
                coords
            )));
        }
        if !net.is_finite() || log_spreads.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("model parameters must be finite".into()));
        }
        Ok(MarginalModel { net, log_spreads, components, agent_dims })
    }

    pub fn state_dim(&self) -> usize {
        self.net.layout.input
    }

    pub fn coords(&self) -> usize {
        self.log_spreads.len()
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn agent_dims(&self) -> &[usize] {
        &self.agent_dims
    }

    pub fn net(&self) -> &NetworkParams {
        &self.net
    }

    pub fn log_spreads(&self) -> &[f64] {
        &self.log_spreads
    }

    fn spread(&self, d: usize) -> f64 {
        self.log_spreads[d].exp().max(MIN_SPREAD)
    }

    fn mean(&self, net_out: &[f64], d: usize, j: usize) -> f64 {
        net_out[d * self.components + j] + component_anchor(j, self.components)
    }

    /// Conditional mixture for every action coordinate given the state.
    pub fn forward(&self, s: &[f64]) -> Result<Vec<GaussianMixture1D>> {
        let out = self.net.forward(s)?;
        let k = self.components;
        (0..self.coords())
            .map(|d| {
                let means = (0..k).map(|j| self.mean(&out, d, j)).collect();
                GaussianMixture1D::uniform(means, vec![self.spread(d); k])
            })
            .collect()
    }

    /// Sum over coordinates of the conditional log-density of `a` given `s`.
    pub fn logpdf_sum(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        let out = self.net.forward(s)?;
        self.check_action(a)?;
        Ok((0..self.coords())
            .map(|d| self.coord_logpdf(&out, d, a[d]))
            .sum())
    }

    /// Probability integral transform: `u_d = F_d(a_d | s)`, clamped into
    /// `[PIT_EPS, 1 - PIT_EPS]`.
    pub fn pit(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        let out = self.net.forward(s)?;
        self.check_action(a)?;
        let k = self.components;
        let w = 1.0 / k as f64;
        Ok((0..self.coords())
            .map(|d| {
                let sd = self.spread(d);
                let mut c = 0.0;
                for j in 0..k {
                    c += w * normal_cdf((a[d] - self.mean(&out, d, j)) / sd);
                }
                c.clamp(PIT_EPS, 1.0 - PIT_EPS)
            })
            .collect())
    }

    fn check_action(&self, a: &[f64]) -> Result<()> {
        if a.len() != self.coords() {
            return Err(Error::Shape(format!(
                "action has {} coordinates, model expects {}",
                a.len(),
                self.coords()
            )));
        }
        Ok(())
    }

    fn coord_logpdf(&self, net_out: &[f64], d: usize, x: f64) -> f64 {
        let k = self.components;
        let sd = self.spread(d);
        let lw = -(k as f64).ln();
        let terms: Vec<f64> = (0..k)
            .map(|j| lw + normal_log_pdf((x - self.mean(net_out, d, j)) / sd) - sd.ln())
            .collect();
        log_sum_exp(&terms)
    }

    /// Mean NLL of the pairs under the current parameters.
    pub fn mean_nll(&self, pairs: &[Pair]) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::NotEnoughData("cannot score an empty batch".into()));
        }
        let mut acc = 0.0;
        for (s, a) in pairs {
            acc -= self.logpdf_sum(s, a)?;
        }
        Ok(acc / pairs.len() as f64)
    }

    /// Mean NLL of a batch together with its gradients: network gradients and
    /// per-coordinate log-spread gradients.
    ///
    /// For each coordinate the mixture responsibilities r_j weight the
    /// component pulls: d(-logpdf)/d mean_j = -r_j z_j / sd and
    /// d(-logpdf)/d log-spread = -sum_j r_j (z_j^2 - 1), zero when the spread
    /// sits at the floor.
    pub fn nll_and_grads(&self, pairs: &[Pair]) -> Result<(f64, GradientSet, Vec<f64>)> {
        if pairs.is_empty() {
            return Err(Error::NotEnoughData("cannot train on an empty batch".into()));
        }
        let k = self.components;
        let coords = self.coords();
        let lw = -(k as f64).ln();
        let mut net_grads = GradientSet::zeros(self.net.layout);
        let mut spread_grads = vec![0.0; coords];
        let mut loss = 0.0;
        let mut grad_out = vec![0.0; self.net.layout.output];
        for (s, a) in pairs {
            self.check_action(a)?;
            let (hidden, out) = self.net.forward_full(s)?;
            grad_out.iter_mut().for_each(|g| *g = 0.0);
            for d in 0..coords {
                let sd = self.spread(d);
                let at_floor = self.log_spreads[d].exp() < MIN_SPREAD;
                let mut terms = vec![0.0; k];
                for j in 0..k {
                    let z = (a[d] - self.mean(&out, d, j)) / sd;
                    terms[j] = lw + normal_log_pdf(z) - sd.ln();
                }
                let lp = log_sum_exp(&terms);
                loss -= lp;
                for j in 0..k {
                    let r = (terms[j] - lp).exp();
                    let z = (a[d] - self.mean(&out, d, j)) / sd;
                    grad_out[d * k + j] = -r * z / sd;
                    if !at_floor {
                        spread_grads[d] -= r * (z * z - 1.0);
                    }
                }
            }
            let g = self.net.backward_from_hidden(s, &hidden, &grad_out)?;
            net_grads.add_assign(&g);
        }
        let inv = 1.0 / pairs.len() as f64;
        net_grads.scale(inv);
        spread_grads.iter_mut().for_each(|g| *g *= inv);
        Ok((loss * inv, net_grads, spread_grads))
    }

    /// Minibatch SGD on mean NLL. Records the full-data NLL before training
    /// and after every epoch; returns the best parameters seen (by validation
    /// NLL when `val` is given, else by training NLL), so the final NLL never
    /// exceeds the initial one. A plateau (relative drop below `cfg.tol` for
    /// three consecutive epochs, so one noisy SGD epoch does not count, or a
    /// validation stall past `cfg.patience`) decays the learning rate by
    /// `cfg.lr_decay`; training stops at a plateau once the rate has fallen
    /// below 1% of its initial value.
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
        let mut curve = LossCurve::default();
        let mut prev = self.mean_nll(data)?;
        curve.train.push(prev);
        let mut best_score = match val {
            Some(v) => {
                let nll = self.mean_nll(v)?;
                curve.validation.push(nll);
                nll
            }
            None => prev,
        };
        let mut best = (self.net.clone(), self.log_spreads.clone());
        let mut stale = 0usize;
        let mut flat = 0usize;
        let mut lr = cfg.lr;
        for epoch in 0..cfg.epochs {
            let order = epoch_order(data.len(), cfg.seed, epoch);
            for chunk in order.chunks(cfg.batch) {
                let batch: Vec<Pair> = chunk.iter().map(|&i| data[i]).collect();
                let (bl, g, gs) = self.nll_and_grads(&batch)?;
                if !bl.is_finite() {
                    return Err(Error::TrainingDiverged {
                        stage: "marginal".into(),
                        detail: format!("non-finite batch loss in epoch {epoch}"),
                    });
                }
                self.net.sgd_step(&g, lr, cfg.l2)?;
                for (ls, gd) in self.log_spreads.iter_mut().zip(&gs) {
                    *ls -= lr * gd;
                }
            }
            let cur = self.mean_nll(data)?;
            if !cur.is_finite() {
                return Err(Error::TrainingDiverged {
                    stage: "marginal".into(),
                    detail: format!("non-finite NLL after epoch {epoch}"),
                });
            }
            curve.train.push(cur);
            let score = match val {
                Some(v) => {
                    let nll = self.mean_nll(v)?;
                    curve.validation.push(nll);
                    nll
                }
                None => cur,
            };
            if score < best_score {
                best_score = score;
                best = (self.net.clone(), self.log_spreads.clone());
                stale = 0;
            } else {
                stale += 1;
            }
            flat = if relative_drop(prev, cur) < cfg.tol { flat + 1 } else { 0 };
            if flat >= 3 || (val.is_some() && stale > cfg.patience) {
                match cfg.next_lr(lr) {
                    Some(next) => {
                        // Resume from the best parameters: the stalled tail
                        // is chatter around them.
                        lr = next;
                        flat = 0;
                        stale = 0;
                        self.net = best.0.clone();
                        self.log_spreads = best.1.clone();
                    }
                    None => break,
                }
            }
            prev = cur;
        }
        self.net = best.0;
        self.log_spreads = best.1;
        Ok(curve)
    }
}
