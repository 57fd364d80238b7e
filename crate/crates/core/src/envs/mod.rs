//! Environments and the data pipeline: expert-demonstration generation,
//! dataset interventions, and policy rollouts.

pub mod driving;
pub mod physim;

use crate::data::{Dataset, DatasetMeta, Normalization, Trajectory};
use crate::error::{Error, Result};
use crate::policy::ActionPredictor;
use crate::rng::stream_rng;
use driving::{DrivingConfig, DrivingState};
use physim::{PhySimConfig, PhySimState};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// One of the two synthetic worlds.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvConfig {
    PhySim(PhySimConfig),
    Driving(DrivingConfig),
}

impl EnvConfig {
    pub fn tag(&self) -> &'static str {
        match self {
            EnvConfig::PhySim(_) => "physim",
            EnvConfig::Driving(_) => "driving",
        }
    }

    pub fn agents(&self) -> usize {
        match self {
            EnvConfig::PhySim(c) => c.particles,
            EnvConfig::Driving(_) => 2,
        }
    }

    /// Action coordinates contributed by each agent.
    pub fn agent_dims(&self) -> Vec<usize> {
        match self {
            EnvConfig::PhySim(c) => vec![2; c.particles],
            EnvConfig::Driving(_) => vec![1, 1],
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            EnvConfig::PhySim(c) => c.state_dim(),
            EnvConfig::Driving(c) => c.state_dim(),
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            EnvConfig::PhySim(c) => c.action_dim(),
            EnvConfig::Driving(c) => c.action_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnvConfig::PhySim(c) => c.validate(),
            EnvConfig::Driving(c) => c.validate(),
        }
    }
}

/// Episode-local simulator state (velocities, phase, a per-episode adjacency
/// pick when per-step resampling is off).
enum Episode<'a> {
    PhySim { cfg: &'a PhySimConfig, sim: PhySimState, episode_adjacency: Option<Vec<u8>> },
    Driving { cfg: &'a DrivingConfig, st: DrivingState },
}

impl Episode<'_> {
    fn start<'a>(env: &'a EnvConfig, rng: &mut ChaCha8Rng) -> Episode<'a> {
        match env {
            EnvConfig::PhySim(cfg) => {
                let sim = PhySimState::random(cfg, rng);
                let episode_adjacency = if cfg.per_step_adjacency {
                    None
                } else if rng.random::<bool>() {
                    Some(cfg.a1.clone())
                } else {
                    Some(cfg.a2.clone())
                };
                Episode::PhySim { cfg, sim, episode_adjacency }
            }
            EnvConfig::Driving(cfg) => {
                Episode::Driving { cfg, st: DrivingState::spawn(cfg, rng) }
            }
        }
    }

    /// Episode used by rollout: dynamics seeded from an observed state.
    fn resume<'a>(env: &'a EnvConfig, s0: &[f64]) -> Result<Episode<'a>> {
        match env {
            EnvConfig::PhySim(cfg) => {
                if s0.len() != cfg.state_dim() {
                    return Err(Error::Shape(format!(
                        "physim state has {} coordinates, got {}",
                        cfg.state_dim(),
                        s0.len()
                    )));
                }
                if s0.iter().any(|r| !r.is_finite() || r.abs() > cfg.half_width) {
                    return Err(Error::Domain("initial positions must lie inside the box".into()));
                }
                Ok(Episode::PhySim {
                    cfg,
                    sim: PhySimState::at(s0.to_vec()),
                    episode_adjacency: None,
                })
            }
            EnvConfig::Driving(cfg) => {
                Ok(Episode::Driving { cfg, st: DrivingState::from_observed(s0)? })
            }
        }
    }

    fn observe(&self) -> Vec<f64> {
        match self {
            Episode::PhySim { sim, .. } => sim.positions.clone(),
            Episode::Driving { st, .. } => st.observed(),
        }
    }

    fn expert(&mut self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        match self {
            Episode::PhySim { cfg, sim, episode_adjacency } => match episode_adjacency {
                Some(a) => {
                    let mut acc = physim::spring_forces(cfg, &sim.positions, a);
                    physim::add_observation_noise(cfg, &mut acc, rng);
                    Ok(acc)
                }
                None => Ok(physim::expert_action(cfg, &sim.positions, rng)),
            },
            Episode::Driving { cfg, st } => {
                let (actions, phase) = driving::expert_action(cfg, st, rng)?;
                st.accelerating = phase;
                Ok(actions.to_vec())
            }
        }
    }

    fn step(&mut self, actions: &[f64]) {
        match self {
            Episode::PhySim { cfg, sim, .. } => physim::step(cfg, sim, actions),
            Episode::Driving { cfg, st } => driving::step(cfg, st, actions),
        }
    }
}

use rand::Rng as _;

/// Generates `m` expert trajectories of length `t`. Trajectory `i` uses the
/// independent stream `(seed, 1 + i)` (stream 0 is reserved for adjacency
/// draws), so generation parallelizes without changing results. States and
/// actions are recorded raw; normalization ranges are fitted from this data
/// and stored in the metadata.
pub fn generate_dataset(env: &EnvConfig, m: usize, t: usize, seed: u64) -> Result<Dataset> {
    env.validate()?;
    if m < 1 || t < 1 {
        return Err(Error::InvalidConfig("dataset needs m >= 1 and t >= 1".into()));
    }
    let trajectories: Vec<Trajectory> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, 1 + i as u64);
            let mut ep = Episode::start(env, &mut rng);
            let mut states = Vec::with_capacity(t);
            let mut actions = Vec::with_capacity(t);
            for _ in 0..t {
                let s = ep.observe();
                let a = ep.expert(&mut rng)?;
                ep.step(&a);
                states.push(s);
                actions.push(a);
            }
            Ok(Trajectory { states, actions })
        })
        .collect::<Result<_>>()?;
    let norm = Normalization::fit(&trajectories)?;
    let ds = Dataset {
        meta: DatasetMeta {
            env: env.tag().to_string(),
            agents: env.agents(),
            agent_dims: env.agent_dims(),
            state_dim: env.state_dim(),
            action_dim: env.action_dim(),
            m,
            t,
            seed,
            norm,
        },
        trajectories,
    };
    ds.validate()?;
    Ok(ds)
}

/// Multiplies one agent's raw action coordinates by `factor` and rescales
/// that agent's normalization ranges to match; everything else is
/// bit-identical. This is the dataset-level intervention; for a dynamics-
/// consistent version on PhySim, regenerate with `action_scale` set instead.
pub fn scale_agent_actions(ds: &Dataset, agent: usize, factor: f64) -> Result<Dataset> {
    if agent >= ds.meta.agents {
        return Err(Error::Domain(format!(
            "agent index {agent} out of range for {} agents",
            ds.meta.agents
        )));
    }
    if !factor.is_finite() {
        return Err(Error::Domain("scale factor must be finite".into()));
    }
    let offset: usize = ds.meta.agent_dims[..agent].iter().sum();
    let width = ds.meta.agent_dims[agent];
    let mut out = ds.clone();
    for traj in &mut out.trajectories {
        for a in &mut traj.actions {
            for v in &mut a[offset..offset + width] {
                *v *= factor;
            }
        }
    }
    for d in offset..offset + width {
        let (lo, hi) = (out.meta.norm.action_min[d] * factor, out.meta.norm.action_max[d] * factor);
        out.meta.norm.action_min[d] = lo.min(hi);
        out.meta.norm.action_max[d] = lo.max(hi);
    }
    out.validate()?;
    Ok(out)
}

/// Runs the policy in the environment for steps `l = 0..=L`: observe,
/// predict, record, step. Returns the L+1 recorded (state, action) pairs.
pub fn rollout(
    predictor: &dyn ActionPredictor,
    env: &EnvConfig,
    s0: &[f64],
    l: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    env.validate()?;
    if predictor.action_dim() != env.action_dim() {
        return Err(Error::Shape(format!(
            "predictor produces {} action coordinates, environment expects {}",
            predictor.action_dim(),
            env.action_dim()
        )));
    }
    let mut ep = Episode::resume(env, s0)?;
    let mut states = Vec::with_capacity(l + 1);
    let mut actions = Vec::with_capacity(l + 1);
    for step in 0..=l {
        let s = ep.observe();
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::RolloutDiverged { step });
        }
        let a = predictor.predict(&s, rng)?;
        if a.len() != env.action_dim() {
            return Err(Error::Shape("predicted action has the wrong dimension".into()));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::RolloutDiverged { step });
        }
        states.push(s);
        if step < l {
            ep.step(&a);
        }
        actions.push(a);
    }
    Ok(Trajectory { states, actions })
}
