//! Spring-particle world: N particles in a 2-D box, coupled by one of two
//! complementary adjacency matrices resampled between steps, moving under
//! Hooke forces with elastic wall reflection.
//!
//! The policy-visible state is positions only; velocities are internal
//! integrator state (accelerations are fully determined by positions, so the
//! expert needs nothing more).

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, PartialEq)]
pub struct PhySimConfig {
    pub particles: usize,
    /// Spring constant: force per unit displacement along each edge.
    pub k: f64,
    /// Standard deviation of the Gaussian noise added to each observed
    /// acceleration component.
    pub noise_sd: f64,
    /// Share of the noise variance carried by a single draw common to every
    /// component of the step. Each component keeps variance `noise_sd^2`;
    /// the common draw is the jitter of the coordination signal itself, felt
    /// by all particles at once, and it is what a state-free copula has to
    /// recover once the marginals are fit.
    pub noise_corr: f64,
    pub dt: f64,
    pub half_width: f64,
    /// Resample the adjacency every step (as opposed to once per episode).
    pub per_step_adjacency: bool,
    /// Per-particle multiplier on the noise-free force; the intervention
    /// knob for the changed-agent experiments.
    pub action_scale: Vec<f64>,
    /// Binary adjacency matrices, row-major N x N. `a2` is the complement of
    /// `a1` off the diagonal.
    pub a1: Vec<u8>,
    pub a2: Vec<u8>,
}

impl PhySimConfig {
    /// Default constants with a random complementary adjacency pair drawn
    /// from stream 0 of `seed` (symmetric Bernoulli(0.5) off-diagonal).
    pub fn new(particles: usize, seed: u64) -> Result<Self> {
        if particles < 2 {
            return Err(Error::InvalidConfig("physim needs at least 2 particles".into()));
        }
        let mut rng = crate::rng::stream_rng(seed, 0);
        let mut a1 = vec![0u8; particles * particles];
        for i in 0..particles {
            for j in (i + 1)..particles {
                let bit = u8::from(rng.random::<bool>());
                a1[i * particles + j] = bit;
                a1[j * particles + i] = bit;
            }
        }
        let a2 = complement(&a1, particles);
        let cfg = PhySimConfig {
            particles,
            k: 0.1,
            noise_sd: 0.02,
            noise_corr: 0.5,
            // Energy error of the symplectic integrator grows with omega*dt;
            // 0.08 keeps two-particle drift under 2% over 500 steps at k=0.1.
            dt: 0.08,
            half_width: 0.5,
            per_step_adjacency: true,
            action_scale: vec![1.0; particles],
            a1,
            a2,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn state_dim(&self) -> usize {
        2 * self.particles
    }

    pub fn action_dim(&self) -> usize {
        2 * self.particles
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.particles;
        if n < 2 {
            return Err(Error::InvalidConfig("physim needs at least 2 particles".into()));
        }
        if !(self.dt > 0.0) || !(self.half_width > 0.0) || !(self.k >= 0.0) || !(self.noise_sd >= 0.0)
        {
            return Err(Error::InvalidConfig(
                "physim needs dt > 0, half_width > 0, k >= 0, noise_sd >= 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.noise_corr) {
            return Err(Error::InvalidConfig(format!(
                "noise correlation must be in [0, 1), got {}",
                self.noise_corr
            )));
        }
        if self.action_scale.len() != n || self.action_scale.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("action_scale needs one finite entry per particle".into()));
        }
        if self.a1.len() != n * n || self.a2.len() != n * n {
            return Err(Error::InvalidConfig("adjacency matrices must be N x N".into()));
        }
        for i in 0..n {
            for j in 0..n {
                let (x, y) = (self.a1[i * n + j], self.a2[i * n + j]);
                if x > 1 || y > 1 || x != self.a1[j * n + i] || y != self.a2[j * n + i] {
                    return Err(Error::InvalidConfig(
                        "adjacency matrices must be binary and symmetric".into(),
                    ));
                }
                // Complementarity: A1 + A2 + I is the all-ones matrix.
                let total = x + y + u8::from(i == j);
                if total != 1 {
                    return Err(Error::InvalidConfig(format!(
                        "A1 + A2 + I must be all ones; entry ({i}, {j}) is {total}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn complement(a: &[u8], n: usize) -> Vec<u8> {
    let mut c = vec![0u8; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                c[i * n + j] = 1 - a[i * n + j];
            }
        }
    }
    c
}

/// Positions and internal velocities, both 2N flat `[x0, y0, x1, y1, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhySimState {
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
}

impl PhySimState {
    /// Rest state at the given positions.
    pub fn at(positions: Vec<f64>) -> Self {
        let n = positions.len();
        PhySimState { positions, velocities: vec![0.0; n] }
    }

    /// Uniform positions inside the box, zero velocities.
    pub fn random(cfg: &PhySimConfig, rng: &mut ChaCha8Rng) -> Self {
        let hw = cfg.half_width;
        let positions = (0..cfg.state_dim()).map(|_| rng.random_range(-hw..hw)).collect();
        PhySimState::at(positions)
    }
}

/// Noise-free spring accelerations under one adjacency:
/// `a_i = -scale_i * k * sum_j A_ij (r_i - r_j)`.
pub fn spring_forces(cfg: &PhySimConfig, positions: &[f64], adjacency: &[u8]) -> Vec<f64> {
    let n = cfg.particles;
    let mut acc = vec![0.0; 2 * n];
    for i in 0..n {
        for j in 0..n {
            if adjacency[i * n + j] == 0 {
                continue;
            }
            for c in 0..2 {
                acc[2 * i + c] -= cfg.k * (positions[2 * i + c] - positions[2 * j + c]);
            }
        }
        for c in 0..2 {
            acc[2 * i + c] *= cfg.action_scale[i];
        }
    }
    acc
}

/// Observation noise on a joint action: every component gets standard
/// deviation `noise_sd`, with `noise_corr` of the variance carried by one
/// draw shared across the step.
pub fn add_observation_noise(cfg: &PhySimConfig, acc: &mut [f64], rng: &mut ChaCha8Rng) {
    if cfg.noise_sd == 0.0 {
        return;
    }
    let shared: f64 = rng.sample::<f64, _>(StandardNormal);
    let own_sd = cfg.noise_sd * (1.0 - cfg.noise_corr).sqrt();
    let shared_sd = cfg.noise_sd * cfg.noise_corr.sqrt();
    for a in acc {
        *a += own_sd * rng.sample::<f64, _>(StandardNormal) + shared_sd * shared;
    }
}

/// Expert joint action: picks A1 or A2 uniformly, applies the spring law,
/// then adds observation noise.
pub fn expert_action(cfg: &PhySimConfig, positions: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let adjacency = if rng.random::<bool>() { &cfg.a1 } else { &cfg.a2 };
    let mut acc = spring_forces(cfg, positions, adjacency);
    add_observation_noise(cfg, &mut acc, rng);
    acc
}

/// Semi-implicit Euler with elastic walls: v += a dt, r += v dt, then mirror
/// any coordinate outside the box and negate its velocity.
pub fn step(cfg: &PhySimConfig, state: &mut PhySimState, actions: &[f64]) {
    let hw = cfg.half_width;
    for ((r, v), &a) in state
        .positions
        .iter_mut()
        .zip(&mut state.velocities)
        .zip(actions)
    {
        *v += a * cfg.dt;
        *r += *v * cfg.dt;
        while *r > hw || *r < -hw {
            if *r > hw {
                *r = 2.0 * hw - *r;
            } else {
                *r = -2.0 * hw - *r;
            }
            *v = -*v;
        }
    }
}

/// Kinetic plus spring potential energy under one fixed adjacency
/// (unit masses): `sum_i |v_i|^2 / 2 + k/2 sum_{i<j} A_ij |r_i - r_j|^2`.
pub fn energy(cfg: &PhySimConfig, state: &PhySimState, adjacency: &[u8]) -> f64 {
    let n = cfg.particles;
    let mut e: f64 = state.velocities.iter().map(|v| v * v / 2.0).sum();
    for i in 0..n {
        for j in (i + 1)..n {
            if adjacency[i * n + j] == 1 {
                let dx = state.positions[2 * i] - state.positions[2 * j];
                let dy = state.positions[2 * i + 1] - state.positions[2 * j + 1];
                e += cfg.k * (dx * dx + dy * dy) / 2.0;
            }
        }
    }
    e
}
