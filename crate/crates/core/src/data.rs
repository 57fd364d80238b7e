//! Trajectories, datasets, and the [-1, 1] normalization contract.
//!
//! Datasets store raw (unnormalized) states and actions; the per-coordinate
//! min/max of the training split travels in the metadata, and models work
//! entirely in normalized coordinates. The on-disk format is a versioned
//! metadata file plus one decimal-text line per timestep, and doubles as the
//! generic import path for external data.

use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

/// One episode: aligned state and action sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn validate(&self, state_dim: usize, action_dim: usize) -> Result<()> {
        if self.states.len() != self.actions.len() {
            return Err(Error::Shape(format!(
                "{} states vs {} actions in one trajectory",
                self.states.len(),
                self.actions.len()
            )));
        }
        for (s, a) in self.states.iter().zip(&self.actions) {
            if s.len() != state_dim || a.len() != action_dim {
                return Err(Error::Shape(format!(
                    "step dims ({}, {}) do not match dataset dims ({state_dim}, {action_dim})",
                    s.len(),
                    a.len()
                )));
            }
            if s.iter().chain(a.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Domain("trajectory holds non-finite values".into()));
            }
        }
        Ok(())
    }
}

/// Per-coordinate affine map onto [-1, 1]: x -> 2 (x - min) / (max - min) - 1.
/// Degenerate coordinates (max == min) map to 0 and back to their constant.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub state_min: Vec<f64>,
    pub state_max: Vec<f64>,
    pub action_min: Vec<f64>,
    pub action_max: Vec<f64>,
}

fn norm_one(x: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        2.0 * (x - lo) / (hi - lo) - 1.0
    } else {
        0.0
    }
}

fn denorm_one(y: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        lo + (y + 1.0) * (hi - lo) / 2.0
    } else {
        lo
    }
}

impl Normalization {
    /// Min/max scan over every step of the given trajectories.
    pub fn fit(trajectories: &[Trajectory]) -> Result<Self> {
        let first = trajectories
            .iter()
            .find(|t| !t.is_empty())
            .ok_or_else(|| Error::NotEnoughData("no steps to fit normalization".into()))?;
        let sd = first.states[0].len();
        let ad = first.actions[0].len();
        let mut n = Normalization {
            state_min: vec![f64::INFINITY; sd],
            state_max: vec![f64::NEG_INFINITY; sd],
            action_min: vec![f64::INFINITY; ad],
            action_max: vec![f64::NEG_INFINITY; ad],
        };
        for t in trajectories {
            t.validate(sd, ad)?;
            for s in &t.states {
                for (d, &v) in s.iter().enumerate() {
                    n.state_min[d] = n.state_min[d].min(v);
                    n.state_max[d] = n.state_max[d].max(v);
                }
            }
            for a in &t.actions {
                for (d, &v) in a.iter().enumerate() {
                    n.action_min[d] = n.action_min[d].min(v);
                    n.action_max[d] = n.action_max[d].max(v);
                }
            }
        }
        Ok(n)
    }

    /// Identity map: ranges [-1, 1] on every coordinate, so normalized and
    /// raw values coincide and the jacobian is zero.
    pub fn identity(state_dim: usize, action_dim: usize) -> Self {
        Normalization {
            state_min: vec![-1.0; state_dim],
            state_max: vec![1.0; state_dim],
            action_min: vec![-1.0; action_dim],
            action_max: vec![1.0; action_dim],
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_min.len()
    }

    pub fn action_dim(&self) -> usize {
        self.action_min.len()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |min: &[f64], max: &[f64]| {
            min.len() == max.len()
                && min
                    .iter()
                    .zip(max)
                    .all(|(a, b)| a.is_finite() && b.is_finite() && a <= b)
        };
        if !ok(&self.state_min, &self.state_max) || !ok(&self.action_min, &self.action_max) {
            return Err(Error::Domain("normalization ranges must be finite with min <= max".into()));
        }
        Ok(())
    }

    pub fn norm_state(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(self.state_min.iter().zip(&self.state_max))
            .map(|(&x, (&lo, &hi))| norm_one(x, lo, hi))
            .collect()
    }

    pub fn denorm_state(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(self.state_min.iter().zip(&self.state_max))
            .map(|(&y, (&lo, &hi))| denorm_one(y, lo, hi))
            .collect()
    }

    pub fn norm_action(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(self.action_min.iter().zip(&self.action_max))
            .map(|(&x, (&lo, &hi))| norm_one(x, lo, hi))
            .collect()
    }

    pub fn denorm_action(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(self.action_min.iter().zip(&self.action_max))
            .map(|(&y, (&lo, &hi))| denorm_one(y, lo, hi))
            .collect()
    }

    /// log |d a_norm / d a_raw| = sum_d ln(2 / range_d); converts normalized
    /// action log-densities into raw-unit ones. Degenerate coordinates
    /// contribute zero (treated as unit scale).
    pub fn action_log_jacobian(&self) -> f64 {
        self.action_min
            .iter()
            .zip(&self.action_max)
            .map(|(&lo, &hi)| if hi > lo { (2.0 / (hi - lo)).ln() } else { 0.0 })
            .sum()
    }
}

/// Self-describing dataset header.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub env: String,
    pub agents: usize,
    pub agent_dims: Vec<usize>,
    pub state_dim: usize,
    pub action_dim: usize,
    pub m: usize,
    pub t: usize,
    pub seed: u64,
    pub norm: Normalization,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let m = &self.meta;
        if m.agent_dims.len() != m.agents {
            return Err(Error::Shape(format!(
                "{} agent_dims entries for {} agents",
                m.agent_dims.len(),
                m.agents
            )));
        }
        if m.agent_dims.iter().sum::<usize>() != m.action_dim {
            return Err(Error::Shape("agent_dims do not sum to action_dim".into()));
        }
        if self.trajectories.len() != m.m {
            return Err(Error::Shape(format!(
                "{} trajectories but metadata says {}",
                self.trajectories.len(),
                m.m
            )));
        }
        m.norm.validate()?;
        if m.norm.state_dim() != m.state_dim || m.norm.action_dim() != m.action_dim {
            return Err(Error::Shape("normalization dims do not match dataset dims".into()));
        }
        for t in &self.trajectories {
            t.validate(m.state_dim, m.action_dim)?;
            if t.len() != m.t {
                return Err(Error::Shape(format!(
                    "trajectory length {} but metadata says {}",
                    t.len(),
                    m.t
                )));
            }
        }
        Ok(())
    }

    /// All (state, action) steps, borrowed, trajectory-major order.
    pub fn pairs(&self) -> Vec<(&[f64], &[f64])> {
        self.trajectories
            .iter()
            .flat_map(|t| {
                t.states
                    .iter()
                    .zip(&t.actions)
                    .map(|(s, a)| (s.as_slice(), a.as_slice()))
            })
            .collect()
    }

    /// All steps mapped through the stored normalization, owned.
    pub fn normalized_pairs(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.trajectories
            .iter()
            .flat_map(|t| {
                t.states.iter().zip(&t.actions).map(|(s, a)| {
                    (self.meta.norm.norm_state(s), self.meta.norm.norm_action(a))
                })
            })
            .collect()
    }

    pub fn steps(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }

    /// Same data under different normalization metadata (e.g. stamping the
    /// training split's ranges onto a validation or test split).
    pub fn with_normalization(mut self, norm: Normalization) -> Result<Self> {
        if norm.state_dim() != self.meta.state_dim || norm.action_dim() != self.meta.action_dim {
            return Err(Error::Shape("normalization dims do not match dataset dims".into()));
        }
        self.meta.norm = norm;
        Ok(self)
    }

    fn meta_string(&self) -> String {
        let m = &self.meta;
        let mut out = String::new();
        out.push_str("comil-dataset v1\n");
        let _ = writeln!(out, "env {}", m.env);
        let _ = writeln!(out, "agents {}", m.agents);
        let _ = writeln!(out, "agent_dims {}", join_usizes(&m.agent_dims));
        let _ = writeln!(out, "state_dim {}", m.state_dim);
        let _ = writeln!(out, "action_dim {}", m.action_dim);
        let _ = writeln!(out, "m {}", m.m);
        let _ = writeln!(out, "t {}", m.t);
        let _ = writeln!(out, "seed {}", m.seed);
        let _ = writeln!(out, "state_min {}", join_floats(&m.norm.state_min));
        let _ = writeln!(out, "state_max {}", join_floats(&m.norm.state_max));
        let _ = writeln!(out, "action_min {}", join_floats(&m.norm.action_min));
        let _ = writeln!(out, "action_max {}", join_floats(&m.norm.action_max));
        out
    }

    fn records_string(&self) -> String {
        let mut out = String::new();
        for (ti, t) in self.trajectories.iter().enumerate() {
            for (si, (s, a)) in t.states.iter().zip(&t.actions).enumerate() {
                let _ = write!(out, "{ti} {si}");
                for v in s.iter().chain(a.iter()) {
                    let _ = write!(out, " {v}");
                }
                out.push('\n');
            }
        }
        out
    }

    /// Writes `<prefix>.meta` and `<prefix>.records`.
    pub fn write(&self, prefix: &Path) -> Result<()> {
        self.validate()?;
        if let Some(dir) = prefix.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        std::fs::write(with_ext(prefix, "meta"), self.meta_string())?;
        std::fs::write(with_ext(prefix, "records"), self.records_string())?;
        Ok(())
    }

    /// Reads a dataset (or imports external data in the same format).
    pub fn read(prefix: &Path) -> Result<Dataset> {
        let meta_text = std::fs::read_to_string(with_ext(prefix, "meta"))?;
        let records_text = std::fs::read_to_string(with_ext(prefix, "records"))?;
        Self::parse(&meta_text, &records_text)
    }

    pub fn parse(meta_text: &str, records_text: &str) -> Result<Dataset> {
        let mut lines = meta_text.lines();
        if lines.next() != Some("comil-dataset v1") {
            return Err(Error::Parse("not a comil-dataset v1 metadata file".into()));
        }
        let mut env = None;
        let mut agents = None;
        let mut agent_dims = None;
        let mut state_dim = None;
        let mut action_dim = None;
        let mut m = None;
        let mut t = None;
        let mut seed = None;
        let mut state_min = None;
        let mut state_max = None;
        let mut action_min = None;
        let mut action_max = None;
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let (key, rest) = line
                .split_once(' ')
                .ok_or_else(|| Error::Parse(format!("metadata line without value: {line}")))?;
            match key {
                "env" => env = Some(rest.to_string()),
                "agents" => agents = Some(parse_usize(rest)?),
                "agent_dims" => agent_dims = Some(parse_usizes(rest)?),
                "state_dim" => state_dim = Some(parse_usize(rest)?),
                "action_dim" => action_dim = Some(parse_usize(rest)?),
                "m" => m = Some(parse_usize(rest)?),
                "t" => t = Some(parse_usize(rest)?),
                "seed" => seed = Some(parse_u64(rest)?),
                "state_min" => state_min = Some(parse_floats(rest)?),
                "state_max" => state_max = Some(parse_floats(rest)?),
                "action_min" => action_min = Some(parse_floats(rest)?),
                "action_max" => action_max = Some(parse_floats(rest)?),
                other => return Err(Error::Parse(format!("unknown metadata key: {other}"))),
            }
        }
        let missing = |what: &str| Error::Parse(format!("metadata is missing {what}"));
        let meta = DatasetMeta {
            env: env.ok_or_else(|| missing("env"))?,
            agents: agents.ok_or_else(|| missing("agents"))?,
            agent_dims: agent_dims.ok_or_else(|| missing("agent_dims"))?,
            state_dim: state_dim.ok_or_else(|| missing("state_dim"))?,
            action_dim: action_dim.ok_or_else(|| missing("action_dim"))?,
            m: m.ok_or_else(|| missing("m"))?,
            t: t.ok_or_else(|| missing("t"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
            norm: Normalization {
                state_min: state_min.ok_or_else(|| missing("state_min"))?,
                state_max: state_max.ok_or_else(|| missing("state_max"))?,
                action_min: action_min.ok_or_else(|| missing("action_min"))?,
                action_max: action_max.ok_or_else(|| missing("action_max"))?,
            },
        };
        let mut trajectories: Vec<Trajectory> = (0..meta.m)
            .map(|_| Trajectory { states: Vec::new(), actions: Vec::new() })
            .collect();
        for (ln, line) in records_text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(' ').collect();
            let want = 2 + meta.state_dim + meta.action_dim;
            if fields.len() != want {
                return Err(Error::Parse(format!(
                    "records line {}: {} fields, expected {want}",
                    ln + 1,
                    fields.len()
                )));
            }
            let ti = parse_usize(fields[0])?;
            let si = parse_usize(fields[1])?;
            if ti >= meta.m {
                return Err(Error::Parse(format!(
                    "records line {}: trajectory index {ti} out of range",
                    ln + 1
                )));
            }
            if si != trajectories[ti].states.len() {
                return Err(Error::Parse(format!(
                    "records line {}: step index {si} out of order",
                    ln + 1
                )));
            }
            let mut vals = Vec::with_capacity(meta.state_dim + meta.action_dim);
            for f in &fields[2..] {
                vals.push(parse_float(f)?);
            }
            let actions = vals.split_off(meta.state_dim);
            trajectories[ti].states.push(vals);
            trajectories[ti].actions.push(actions);
        }
        let ds = Dataset { meta, trajectories };
        ds.validate()?;
        Ok(ds)
    }
}

fn with_ext(prefix: &Path, ext: &str) -> std::path::PathBuf {
    let mut name = prefix.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(ext);
    prefix.with_file_name(name)
}

pub(crate) fn join_floats(vals: &[f64]) -> String {
    let mut out = String::new();
    for (i, v) in vals.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v}");
    }
    out
}

pub(crate) fn join_usizes(vals: &[usize]) -> String {
    let mut out = String::new();
    for (i, v) in vals.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v}");
    }
    out
}

pub(crate) fn parse_float(s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::Parse(format!("bad float: {s}")))
}

pub(crate) fn parse_floats(s: &str) -> Result<Vec<f64>> {
    s.split(' ').filter(|f| !f.is_empty()).map(parse_float).collect()
}

pub(crate) fn parse_usize(s: &str) -> Result<usize> {
    s.parse::<usize>()
        .map_err(|_| Error::Parse(format!("bad integer: {s}")))
}

pub(crate) fn parse_usizes(s: &str) -> Result<Vec<usize>> {
    s.split(' ').filter(|f| !f.is_empty()).map(parse_usize).collect()
}

pub(crate) fn parse_u64(s: &str) -> Result<u64> {
    s.parse::<u64>()
        .map_err(|_| Error::Parse(format!("bad integer: {s}")))
}
