//! Car-following world: a leader alternately accelerates to a speed bound
//! and brakes to a stop; a follower holds a target gap with a clipped PD
//! controller. Two agents, one longitudinal acceleration each.
//!
//! The policy-visible state is `[x_l, v_l, x_f, v_f]`; the leader's phase
//! bit is internal expert state.

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, PartialEq)]
pub struct DrivingConfig {
    /// Leader speed at which the accelerate phase ends (m/s).
    pub speed_bound: f64,
    /// Leader acceleration magnitude in both phases (m/s^2).
    pub leader_accel: f64,
    /// Gap the follower tries to hold (m).
    pub target_gap: f64,
    /// PD gains on gap error and closing speed. The proportional gain must
    /// exceed leader_accel / target_gap, or the follower's static tracking
    /// error under sustained braking (leader_accel / kp) eats the whole gap
    /// and the cars collide.
    pub kp: f64,
    pub kd: f64,
    /// Follower acceleration clip (m/s^2).
    pub accel_clip: f64,
    pub dt: f64,
    /// Standard deviation of the noise added to both observed accelerations.
    pub noise_sd: f64,
    /// Spawn randomization: initial gap is target_gap +- this jitter, and
    /// initial speeds are uniform in [0, spawn_speed_max].
    pub spawn_gap_jitter: f64,
    pub spawn_speed_max: f64,
}

impl Default for DrivingConfig {
    fn default() -> Self {
        DrivingConfig {
            speed_bound: 15.0,
            leader_accel: 2.0,
            target_gap: 8.0,
            kp: 0.5,
            kd: 1.2,
            accel_clip: 3.0,
            dt: 0.1,
            noise_sd: 0.05,
            spawn_gap_jitter: 2.0,
            spawn_speed_max: 3.0,
        }
    }
}

impl DrivingConfig {
    pub fn state_dim(&self) -> usize {
        4
    }

    pub fn action_dim(&self) -> usize {
        2
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.speed_bound,
            self.leader_accel,
            self.target_gap,
            self.kp,
            self.kd,
            self.accel_clip,
            self.dt,
        ];
        if positive.iter().any(|v| !(v > &0.0)) {
            return Err(Error::InvalidConfig(
                "driving bounds, gains, gap, clip, and dt must be positive".into(),
            ));
        }
        if !(self.noise_sd >= 0.0) || !(self.spawn_speed_max >= 0.0) {
            return Err(Error::InvalidConfig("driving noise and spawn speed must be >= 0".into()));
        }
        if !(self.spawn_gap_jitter >= 0.0) || self.spawn_gap_jitter >= self.target_gap {
            return Err(Error::InvalidConfig(
                "spawn gap jitter must be in [0, target_gap)".into(),
            ));
        }
        Ok(())
    }
}

/// Positions/velocities of both cars plus the leader's phase.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivingState {
    pub x_l: f64,
    pub v_l: f64,
    pub x_f: f64,
    pub v_f: f64,
    pub accelerating: bool,
}

impl DrivingState {
    pub fn observed(&self) -> Vec<f64> {
        vec![self.x_l, self.v_l, self.x_f, self.v_f]
    }

    /// Rebuilds a state from the observed vector; the phase is not
    /// observable and is assumed to be the accelerate phase.
    pub fn from_observed(s: &[f64]) -> Result<Self> {
        if s.len() != 4 {
            return Err(Error::Shape(format!("driving state has 4 coordinates, got {}", s.len())));
        }
        Ok(DrivingState { x_l: s[0], v_l: s[1], x_f: s[2], v_f: s[3], accelerating: true })
    }

    /// Spawn: follower at the origin, leader roughly a target gap ahead,
    /// both slow, leader accelerating.
    pub fn spawn(cfg: &DrivingConfig, rng: &mut ChaCha8Rng) -> Self {
        let j = cfg.spawn_gap_jitter;
        let gap = cfg.target_gap + if j > 0.0 { rng.random_range(-j..j) } else { 0.0 };
        let vmax = cfg.spawn_speed_max;
        let v_l = if vmax > 0.0 { rng.random_range(0.0..vmax) } else { 0.0 };
        let v_f = if vmax > 0.0 { rng.random_range(0.0..vmax) } else { 0.0 };
        DrivingState { x_l: gap, v_l, x_f: 0.0, v_f, accelerating: true }
    }
}

/// Expert accelerations `[a_l, a_f]` plus the leader's next phase.
/// Leader: bang-bang between 0 and the speed bound (the flip applies the
/// same step the threshold is reached). Follower: clipped PD on gap error
/// and closing speed. Noise is added to both after clipping.
pub fn expert_action(
    cfg: &DrivingConfig,
    st: &DrivingState,
    rng: &mut ChaCha8Rng,
) -> Result<([f64; 2], bool)> {
    if st.x_f >= st.x_l {
        return Err(Error::Domain(format!(
            "invalid scenario: follower at {} is not behind leader at {}",
            st.x_f, st.x_l
        )));
    }
    let next_phase = if st.accelerating && st.v_l >= cfg.speed_bound {
        false
    } else if !st.accelerating && st.v_l <= 0.0 {
        true
    } else {
        st.accelerating
    };
    let a_l = if next_phase { cfg.leader_accel } else { -cfg.leader_accel };
    let gap = st.x_l - st.x_f;
    let a_f = (cfg.kp * (gap - cfg.target_gap) + cfg.kd * (st.v_l - st.v_f))
        .clamp(-cfg.accel_clip, cfg.accel_clip);
    let mut actions = [a_l, a_f];
    if cfg.noise_sd > 0.0 {
        for a in &mut actions {
            *a += cfg.noise_sd * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok((actions, next_phase))
}

/// Semi-implicit Euler for both cars.
pub fn step(cfg: &DrivingConfig, st: &mut DrivingState, actions: &[f64]) {
    st.v_l += actions[0] * cfg.dt;
    st.x_l += st.v_l * cfg.dt;
    st.v_f += actions[1] * cfg.dt;
    st.x_f += st.v_f * cfg.dt;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    fn quiet(cfg: &mut DrivingConfig) {
        cfg.noise_sd = 0.0;
    }

    #[test]
    fn leader_flips_phase_at_the_bound() {
        let mut cfg = DrivingConfig::default();
        quiet(&mut cfg);
        let st = DrivingState { x_l: 20.0, v_l: 15.0, x_f: 0.0, v_f: 10.0, accelerating: true };
        let (a, phase) = expert_action(&cfg, &st, &mut seeded_rng(0)).unwrap();
        assert!(!phase);
        assert_eq!(a[0], -cfg.leader_accel);
        let stopped = DrivingState { v_l: 0.0, accelerating: false, ..st };
        let (a2, phase2) = expert_action(&cfg, &stopped, &mut seeded_rng(0)).unwrap();
        assert!(phase2);
        assert_eq!(a2[0], cfg.leader_accel);
    }

    #[test]
    fn follower_at_equilibrium_holds_still() {
        let mut cfg = DrivingConfig::default();
        quiet(&mut cfg);
        let st = DrivingState { x_l: 8.0, v_l: 5.0, x_f: 0.0, v_f: 5.0, accelerating: true };
        let (a, _) = expert_action(&cfg, &st, &mut seeded_rng(0)).unwrap();
        assert_eq!(a[1], 0.0);
    }

    #[test]
    fn follower_pd_matches_hand_value() {
        let mut cfg = DrivingConfig::default();
        quiet(&mut cfg);
        cfg.kp = 0.2;
        // Gap 5 m over target with matched speeds: kp * 5 = 1.0.
        let st = DrivingState { x_l: 13.0, v_l: 5.0, x_f: 0.0, v_f: 5.0, accelerating: true };
        let (a, _) = expert_action(&cfg, &st, &mut seeded_rng(0)).unwrap();
        assert!((a[1] - 1.0).abs() < 1e-15, "{}", a[1]);
        // Far ahead: clipped.
        let far = DrivingState { x_l: 100.0, ..st };
        let (a2, _) = expert_action(&cfg, &far, &mut seeded_rng(0)).unwrap();
        assert_eq!(a2[1], cfg.accel_clip);
    }

    #[test]
    fn follower_ahead_is_an_invalid_scenario() {
        let cfg = DrivingConfig::default();
        let st = DrivingState { x_l: 0.0, v_l: 1.0, x_f: 3.0, v_f: 1.0, accelerating: true };
        assert!(matches!(expert_action(&cfg, &st, &mut seeded_rng(0)), Err(Error::Domain(_))));
    }

    #[test]
    fn expert_keeps_the_pair_sane_over_a_long_run() {
        let mut cfg = DrivingConfig::default();
        quiet(&mut cfg);
        let mut rng = seeded_rng(7);
        let mut st = DrivingState::spawn(&cfg, &mut rng);
        for _ in 0..600 {
            let (a, phase) = expert_action(&cfg, &st, &mut rng).unwrap();
            st.accelerating = phase;
            step(&cfg, &mut st, &a);
            // One-step overshoot past either threshold is inherent to the
            // discrete phase rule.
            let slack = cfg.leader_accel * cfg.dt + 1e-9;
            assert!(st.v_l >= -slack && st.v_l <= cfg.speed_bound + slack);
        }
        // The follower holds the gap within its static tracking error
        // (leader_accel / kp = 4 m) through repeated leader cycles.
        let gap = st.x_l - st.x_f;
        assert!((gap - cfg.target_gap).abs() < 4.2, "gap {gap}");
    }

    #[test]
    fn spawn_is_valid_and_randomized() {
        let cfg = DrivingConfig::default();
        let mut rng = seeded_rng(9);
        let a = DrivingState::spawn(&cfg, &mut rng);
        let b = DrivingState::spawn(&cfg, &mut rng);
        assert!(a.x_l > a.x_f && b.x_l > b.x_f);
        assert_ne!(a, b);
        assert!(DrivingState::from_observed(&a.observed()).unwrap().x_l == a.x_l);
    }

    #[test]
    fn config_validation_catches_bad_values() {
        let mut cfg = DrivingConfig::default();
        cfg.spawn_gap_jitter = 10.0;
        assert!(cfg.validate().is_err());
        let mut cfg2 = DrivingConfig::default();
        cfg2.kp = 0.0;
        assert!(cfg2.validate().is_err());
        assert!(DrivingConfig::default().validate().is_ok());
    }

}
