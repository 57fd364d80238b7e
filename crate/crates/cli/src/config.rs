//! Flat key=value run configuration. One file plus the referenced inputs
//! fully determines every command's outputs; the seed is mandatory so no run
//! ever depends on the wall clock.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use comil::envs::driving::DrivingConfig;
use comil::envs::physim::PhySimConfig;
use comil::envs::EnvConfig;
use comil::policy::{CopulaKind, PolicyTrainConfig};
use comil::train::TrainConfig;
use comil::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Environment tag: "physim" or "driving".
    pub env: String,
    /// Particle count for physim (driving is fixed at two cars).
    pub particles: usize,
    /// When set, the intervention: this agent's actions are scaled by
    /// `scale_factor` in generated data (physim regenerates with scaled
    /// dynamics; driving rescales the recorded actions).
    pub scale_agent: Option<usize>,
    pub scale_factor: f64,
    pub m_train: usize,
    pub m_val: usize,
    pub m_test: usize,
    /// Steps per trajectory.
    pub t: usize,
    pub seed: u64,
    pub copula: CopulaKind,
    /// Mixture components per marginal coordinate.
    pub k: usize,
    /// Mixture components of the state-dependent copula.
    pub g: usize,
    pub hidden: usize,
    pub copula_hidden: usize,
    pub lr: f64,
    pub copula_lr: f64,
    pub l2: f64,
    pub epochs: usize,
    pub copula_epochs: usize,
    pub batch: usize,
    /// Copula draws averaged per predicted action.
    pub n_samples: usize,
    /// Sampling-seed repetitions for seeded metrics in `eval`.
    pub eval_reps: usize,
    /// Metrics run by `eval`: any of rmse, nll, swap.
    pub metrics: Vec<String>,
    /// Environment steps per generated rollout.
    pub rollout_len: usize,
    /// Rollouts generated (each starts from a distinct test trajectory).
    pub rollout_count: usize,
    /// Coordinate pairs exported by `export-copula`, e.g. "0:1,2:3".
    pub grid_pairs: Vec<(usize, usize)>,
    pub grid_resolution: usize,
    /// Directory holding train/val/test dataset files.
    pub data: String,
    /// Policy bundle path (written by `train`, read by the rest).
    pub policy: String,
    /// Second bundle for the swap metric: the pre-change policy.
    pub swap_policy: Option<String>,
    /// Primary output path of eval/rollout/export-copula; each command
    /// falls back to its own default when unset.
    pub out: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: "physim".into(),
            particles: 5,
            scale_agent: None,
            scale_factor: 2.0,
            m_train: 500,
            m_val: 100,
            m_test: 100,
            t: 100,
            seed: 0,
            copula: CopulaKind::Kde,
            k: 2,
            g: 4,
            hidden: 64,
            copula_hidden: 64,
            lr: 0.01,
            copula_lr: 0.01,
            l2: 1e-5,
            epochs: 200,
            copula_epochs: 200,
            batch: 128,
            n_samples: 100,
            eval_reps: 3,
            metrics: vec!["rmse".into(), "nll".into()],
            rollout_len: 100,
            rollout_count: 5,
            grid_pairs: vec![(0, 1)],
            grid_resolution: 64,
            data: "data".into(),
            policy: "policy.comil".into(),
            swap_policy: None,
            out: None,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Parse(format!("key {key:?}: cannot parse value {value:?}")))
}

fn parse_pairs(key: &str, value: &str) -> Result<Vec<(usize, usize)>> {
    value
        .split(',')
        .map(|item| {
            let (a, b) = item
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::Parse(format!("key {key:?}: expected a:b, got {item:?}")))?;
            Ok((parse_value(key, a.trim())?, parse_value(key, b.trim())?))
        })
        .collect()
}

impl RunConfig {
    /// Parses key=value lines; '#' starts a comment. Unknown and duplicate
    /// keys are rejected, and the seed must be stated explicitly.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeSet::new();
        let mut has_seed = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("line {}: expected key = value, got {raw:?}", i + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Parse(format!("duplicate configuration key {key:?}")));
            }
            match key {
                "env" => cfg.env = value.into(),
                "particles" => cfg.particles = parse_value(key, value)?,
                "scale_agent" => cfg.scale_agent = Some(parse_value(key, value)?),
                "scale_factor" => cfg.scale_factor = parse_value(key, value)?,
                "m_train" => cfg.m_train = parse_value(key, value)?,
                "m_val" => cfg.m_val = parse_value(key, value)?,
                "m_test" => cfg.m_test = parse_value(key, value)?,
                "t" => cfg.t = parse_value(key, value)?,
                "seed" => {
                    cfg.seed = parse_value(key, value)?;
                    has_seed = true;
                }
                "copula" => cfg.copula = CopulaKind::parse(value)?,
                "k" => cfg.k = parse_value(key, value)?,
                "g" => cfg.g = parse_value(key, value)?,
                "hidden" => cfg.hidden = parse_value(key, value)?,
                "copula_hidden" => cfg.copula_hidden = parse_value(key, value)?,
                "lr" => cfg.lr = parse_value(key, value)?,
                "copula_lr" => cfg.copula_lr = parse_value(key, value)?,
                "l2" => cfg.l2 = parse_value(key, value)?,
                "epochs" => cfg.epochs = parse_value(key, value)?,
                "copula_epochs" => cfg.copula_epochs = parse_value(key, value)?,
                "batch" => cfg.batch = parse_value(key, value)?,
                "n_samples" => cfg.n_samples = parse_value(key, value)?,
                "eval_reps" => cfg.eval_reps = parse_value(key, value)?,
                "metrics" => {
                    cfg.metrics = value.split(',').map(|m| m.trim().to_string()).collect()
                }
                "rollout_len" => cfg.rollout_len = parse_value(key, value)?,
                "rollout_count" => cfg.rollout_count = parse_value(key, value)?,
                "grid_pairs" => cfg.grid_pairs = parse_pairs(key, value)?,
                "grid_resolution" => cfg.grid_resolution = parse_value(key, value)?,
                "data" => cfg.data = value.into(),
                "policy" => cfg.policy = value.into(),
                "swap_policy" => cfg.swap_policy = Some(value.into()),
                "out" => cfg.out = Some(value.into()),
                _ => {
                    return Err(Error::Parse(format!("unknown configuration key {key:?}")));
                }
            }
        }
        if !has_seed {
            return Err(Error::InvalidConfig(
                "configuration must state an explicit seed".into(),
            ));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical rendering: every key in a fixed order, unset options
    /// omitted. parse(render(cfg)) == cfg.
    pub fn render(&self) -> String {
        let mut s = String::from("# comil run configuration\n");
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("string write");
        kv("env", self.env.clone());
        kv("particles", self.particles.to_string());
        if let Some(a) = self.scale_agent {
            kv("scale_agent", a.to_string());
        }
        kv("scale_factor", self.scale_factor.to_string());
        kv("m_train", self.m_train.to_string());
        kv("m_val", self.m_val.to_string());
        kv("m_test", self.m_test.to_string());
        kv("t", self.t.to_string());
        kv("seed", self.seed.to_string());
        kv("copula", self.copula.as_str().to_string());
        kv("k", self.k.to_string());
        kv("g", self.g.to_string());
        kv("hidden", self.hidden.to_string());
        kv("copula_hidden", self.copula_hidden.to_string());
        kv("lr", self.lr.to_string());
        kv("copula_lr", self.copula_lr.to_string());
        kv("l2", self.l2.to_string());
        kv("epochs", self.epochs.to_string());
        kv("copula_epochs", self.copula_epochs.to_string());
        kv("batch", self.batch.to_string());
        kv("n_samples", self.n_samples.to_string());
        kv("eval_reps", self.eval_reps.to_string());
        kv("metrics", self.metrics.join(","));
        kv("rollout_len", self.rollout_len.to_string());
        kv("rollout_count", self.rollout_count.to_string());
        let pairs: Vec<String> = self
            .grid_pairs
            .iter()
            .map(|(a, b)| format!("{a}:{b}"))
            .collect();
        kv("grid_pairs", pairs.join(","));
        kv("grid_resolution", self.grid_resolution.to_string());
        kv("data", self.data.clone());
        kv("policy", self.policy.clone());
        if let Some(p) = &self.swap_policy {
            kv("swap_policy", p.clone());
        }
        if let Some(o) = &self.out {
            kv("out", o.clone());
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.env != "physim" && self.env != "driving" {
            return fail(format!("unknown environment {:?}", self.env));
        }
        if self.env == "physim" && self.particles < 2 {
            return fail("physim needs at least 2 particles".into());
        }
        if let Some(agent) = self.scale_agent {
            if agent >= self.agents() {
                return fail(format!(
                    "scale_agent {agent} out of range for {} agents",
                    self.agents()
                ));
            }
            if !(self.scale_factor.is_finite() && self.scale_factor > 0.0) {
                return fail(format!("scale_factor must be positive, got {}", self.scale_factor));
            }
        }
        for (name, v) in [
            ("m_train", self.m_train),
            ("m_val", self.m_val),
            ("m_test", self.m_test),
            ("t", self.t),
            ("k", self.k),
            ("g", self.g),
            ("hidden", self.hidden),
            ("copula_hidden", self.copula_hidden),
            ("epochs", self.epochs),
            ("copula_epochs", self.copula_epochs),
            ("batch", self.batch),
            ("n_samples", self.n_samples),
            ("eval_reps", self.eval_reps),
            ("rollout_len", self.rollout_len),
            ("rollout_count", self.rollout_count),
        ] {
            if v == 0 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        for (name, v) in [("lr", self.lr), ("copula_lr", self.copula_lr)] {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return fail(format!("l2 must be non-negative, got {}", self.l2));
        }
        if self.metrics.is_empty() {
            return fail("metrics must name at least one of rmse, nll, swap".into());
        }
        for m in &self.metrics {
            if m != "rmse" && m != "nll" && m != "swap" {
                return fail(format!("unknown metric {m:?}"));
            }
        }
        if self.grid_resolution < 2 {
            return fail("grid_resolution must be at least 2".into());
        }
        if self.grid_pairs.is_empty() {
            return fail("grid_pairs must name at least one coordinate pair".into());
        }
        let dim = self.action_dim();
        for &(a, b) in &self.grid_pairs {
            if a == b || a >= dim || b >= dim {
                return fail(format!(
                    "grid pair {a}:{b} invalid for {dim} action coordinates"
                ));
            }
        }
        Ok(())
    }

    pub fn agents(&self) -> usize {
        if self.env == "physim" {
            self.particles
        } else {
            2
        }
    }

    pub fn action_dim(&self) -> usize {
        if self.env == "physim" {
            2 * self.particles
        } else {
            2
        }
    }

    /// Builds the environment. The physim adjacency pair is a deterministic
    /// function of the seed, so train/val/test share one system; the physim
    /// intervention is applied here so regenerated data follows the scaled
    /// dynamics. The driving intervention instead rescales recorded actions
    /// after generation (its expert has no per-agent scale knob).
    pub fn env_config(&self) -> Result<EnvConfig> {
        match self.env.as_str() {
            "physim" => {
                let mut c = PhySimConfig::new(self.particles, self.seed)?;
                if let Some(agent) = self.scale_agent {
                    c.action_scale[agent] = self.scale_factor;
                }
                Ok(EnvConfig::PhySim(c))
            }
            "driving" => Ok(EnvConfig::Driving(DrivingConfig::default())),
            other => Err(Error::InvalidConfig(format!("unknown environment {other:?}"))),
        }
    }

    /// True when generated data needs post-hoc action rescaling (driving
    /// intervention); physim handles scaling inside the dynamics.
    pub fn post_hoc_scale(&self) -> Option<(usize, f64)> {
        match (self.env.as_str(), self.scale_agent) {
            ("driving", Some(agent)) => Some((agent, self.scale_factor)),
            _ => None,
        }
    }

    pub fn train_config(&self) -> PolicyTrainConfig {
        PolicyTrainConfig {
            copula: self.copula,
            components: self.k,
            copula_components: self.g,
            hidden: self.hidden,
            copula_hidden: self.copula_hidden,
            seed: self.seed,
            marginal: TrainConfig {
                epochs: self.epochs,
                batch: self.batch,
                lr: self.lr,
                l2: self.l2,
                seed: self.seed,
                ..TrainConfig::default()
            },
            copula_train: TrainConfig {
                epochs: self.copula_epochs,
                batch: self.batch,
                lr: self.copula_lr,
                l2: self.l2,
                seed: self.seed,
                ..TrainConfig::default()
            },
            ..PolicyTrainConfig::default()
        }
    }

    /// Applies command-line overrides on top of the file.
    pub fn apply_overrides(
        &mut self,
        seed: Option<u64>,
        copula: Option<&str>,
        n_samples: Option<usize>,
    ) -> Result<()> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(c) = copula {
            self.copula = CopulaKind::parse(c)?;
        }
        if let Some(n) = n_samples {
            if n == 0 {
                return Err(Error::InvalidConfig("n_samples must be at least 1".into()));
            }
            self.n_samples = n;
        }
        self.validate()
    }
}
