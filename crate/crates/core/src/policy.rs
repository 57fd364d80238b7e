//! The composed policy: per-coordinate marginal mixtures plus a copula over
//! their probability integral transforms.
//!
//! The joint action density factorizes as
//! `log pi(a|s) = sum_d log f_d(a_d|s) + log c(F_1(a_1|s), ..., F_D(a_D|s) | s)`,
//! so the same marginals combine with any copula variant. Models live in
//! normalized coordinates; the public API speaks raw units and converts
//! log-densities with the normalization jacobian.

use crate::copula::{kde_fit, Copula, CopulaPoint, GaussianMixtureCopula, KdeFitOptions};
use crate::data::{Dataset, Normalization};
use crate::error::{Error, Result};
use crate::marginal::MarginalModel;
use crate::math::PIT_EPS;
use crate::train::{LossCurve, Pair, TrainConfig};
use rand_chacha::ChaCha8Rng;

/// Which copula stage 2 fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CopulaKind {
    /// Independence: the mean-field baseline, stage 2 is a no-op.
    Uniform,
    /// State-independent kernel density estimate on the cube.
    Kde,
    /// State-dependent Gaussian mixture in z-space.
    Gmm,
}

impl CopulaKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(CopulaKind::Uniform),
            "kde" => Ok(CopulaKind::Kde),
            "gmm" => Ok(CopulaKind::Gmm),
            other => Err(Error::InvalidConfig(format!(
                "unknown copula kind {other:?} (expected uniform, kde, or gmm)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            CopulaKind::Uniform => "uniform",
            CopulaKind::Kde => "kde",
            CopulaKind::Gmm => "gmm",
        }
    }
}

impl std::fmt::Display for CopulaKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Hyperparameters for the two training stages.
#[derive(Debug, Clone)]
pub struct PolicyTrainConfig {
    pub copula: CopulaKind,
    /// Mixture components per marginal coordinate (K).
    pub components: usize,
    /// Mixture components of the state-dependent copula (G).
    pub copula_components: usize,
    /// Hidden width of the marginal network.
    pub hidden: usize,
    /// Hidden width of the copula network.
    pub copula_hidden: usize,
    pub seed: u64,
    pub marginal: TrainConfig,
    pub copula_train: TrainConfig,
    /// Support cap for the KDE copula.
    pub kde_cap: usize,
}

impl Default for PolicyTrainConfig {
    fn default() -> Self {
        PolicyTrainConfig {
            copula: CopulaKind::Kde,
            components: 2,
            copula_components: 4,
            hidden: 64,
            copula_hidden: 64,
            seed: 0,
            marginal: TrainConfig::default(),
            copula_train: TrainConfig::default(),
            kde_cap: crate::copula::KDE_SUPPORT_CAP,
        }
    }
}

impl PolicyTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.components == 0 || self.copula_components == 0 {
            return Err(Error::InvalidConfig("component counts K and G must be >= 1".into()));
        }
        if self.hidden == 0 || self.copula_hidden == 0 {
            return Err(Error::InvalidConfig("hidden widths must be >= 1".into()));
        }
        if self.kde_cap < 2 {
            return Err(Error::InvalidConfig("kde support cap must be >= 2".into()));
        }
        self.marginal.validate()?;
        self.copula_train.validate()
    }
}

/// Loss curves from the two stages. `copula` is present only for the
/// state-dependent copula; independence has no stage 2 and the KDE fit is
/// closed-form.
#[derive(Debug, Clone, Default)]
pub struct TrainingLog {
    pub marginal: LossCurve,
    pub copula: Option<LossCurve>,
}

/// Marginals + copula + the normalization they were trained under.
#[derive(Debug, Clone)]
pub struct CopulaPolicy {
    marginal: MarginalModel,
    copula: Copula,
    norm: Normalization,
}

impl CopulaPolicy {
    pub fn new(marginal: MarginalModel, copula: Copula, norm: Normalization) -> Result<Self> {
        if copula.coords() != marginal.coords() {
            return Err(Error::Shape(format!(
                "copula over {} coordinates paired with marginals over {}",
                copula.coords(),
                marginal.coords()
            )));
        }
        norm.validate()?;
        if norm.state_dim() != marginal.state_dim() || norm.action_dim() != marginal.coords() {
            return Err(Error::Shape("normalization dims do not match the models".into()));
        }
        Ok(CopulaPolicy { marginal, copula, norm })
    }

    pub fn marginal(&self) -> &MarginalModel {
        &self.marginal
    }

    pub fn copula(&self) -> &Copula {
        &self.copula
    }

    pub fn norm(&self) -> &Normalization {
        &self.norm
    }

    pub fn coords(&self) -> usize {
        self.marginal.coords()
    }

    pub fn state_dim(&self) -> usize {
        self.marginal.state_dim()
    }

    fn check_action(&self, a: &[f64]) -> Result<()> {
        if a.len() != self.coords() {
            return Err(Error::Shape(format!(
                "action has {} coordinates, policy expects {}",
                a.len(),
                self.coords()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("action holds non-finite values".into()));
        }
        Ok(())
    }

    /// Log joint action density in raw units: marginal log-densities plus the
    /// copula log-density at the transformed point, plus the normalization
    /// jacobian.
    pub fn joint_log_likelihood(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        self.check_action(a)?;
        let sn = self.norm.norm_state(s);
        let an = self.norm.norm_action(a);
        let mixtures = self.marginal.forward(&sn)?;
        let mut sum = 0.0;
        let mut u = Vec::with_capacity(an.len());
        for (gm, &x) in mixtures.iter().zip(&an) {
            sum += gm.logpdf(x);
            u.push(gm.cdf(x).clamp(PIT_EPS, 1.0 - PIT_EPS));
        }
        let point = CopulaPoint::new(u)?;
        let log_c = self.copula.log_density(&point, Some(&sn))?;
        Ok(sum + log_c + self.norm.action_log_jacobian())
    }

    /// Maps a cube point through the marginal quantile functions; returns the
    /// joint action in raw units.
    pub fn transform_to_actions(&self, s: &[f64], u: &CopulaPoint) -> Result<Vec<f64>> {
        let sn = self.norm.norm_state(s);
        let mixtures = self.marginal.forward(&sn)?;
        if u.coords() != mixtures.len() {
            return Err(Error::Shape(format!(
                "cube point has {} coordinates, policy expects {}",
                u.coords(),
                mixtures.len()
            )));
        }
        let mut an = Vec::with_capacity(mixtures.len());
        for (gm, &ud) in mixtures.iter().zip(u.as_slice()) {
            an.push(gm.quantile(ud)?);
        }
        Ok(self.norm.denorm_action(&an))
    }

    /// Draws `n_samples` copula points, maps each through the quantiles, and
    /// returns the coordinate-wise mean action (raw units). `n_samples = 1`
    /// is plain ancestral sampling.
    pub fn predict_action(
        &self,
        s: &[f64],
        n_samples: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        if n_samples < 1 {
            return Err(Error::Domain("n_samples must be >= 1".into()));
        }
        let sn = self.norm.norm_state(s);
        let mixtures = self.marginal.forward(&sn)?;
        let mut acc = vec![0.0; mixtures.len()];
        for _ in 0..n_samples {
            let u = self.copula.sample(Some(&sn), rng)?;
            for (d, (gm, &ud)) in mixtures.iter().zip(u.as_slice()).enumerate() {
                acc[d] += gm.quantile(ud)?;
            }
        }
        for v in &mut acc {
            *v /= n_samples as f64;
        }
        Ok(self.norm.denorm_action(&acc))
    }
}

/// Anything that maps a raw state to a raw joint action; the seam between
/// policies and the evaluation/rollout loops. `Sync` so evaluation can fan
/// trajectories out across threads.
pub trait ActionPredictor: Sync {
    fn action_dim(&self) -> usize;
    fn predict(&self, s: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>>;
}

/// A policy queried with a fixed per-prediction sample count.
pub struct MeanPredictor<'a> {
    pub policy: &'a CopulaPolicy,
    pub n_samples: usize,
}

impl ActionPredictor for MeanPredictor<'_> {
    fn action_dim(&self) -> usize {
        self.policy.coords()
    }

    fn predict(&self, s: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        self.policy.predict_action(s, self.n_samples, rng)
    }
}

/// Two-stage training: fit the marginals by SGD on their NLL, freeze them,
/// transform the data through their CDFs, then fit the selected copula on the
/// transformed points. Validation (if given) is normalized with the training
/// ranges and drives early stopping in both gradient stages.
pub fn train_policy(
    ds: &Dataset,
    val: Option<&Dataset>,
    cfg: &PolicyTrainConfig,
) -> Result<(CopulaPolicy, TrainingLog)> {
    cfg.validate()?;
    ds.validate()?;
    if ds.steps() == 0 {
        return Err(Error::NotEnoughData("training dataset has no steps".into()));
    }
    let norm = ds.meta.norm.clone();
    if let Some(v) = val {
        v.validate()?;
        if v.meta.state_dim != ds.meta.state_dim || v.meta.action_dim != ds.meta.action_dim {
            return Err(Error::Shape("validation dims do not match training dims".into()));
        }
    }

    let renorm = |d: &Dataset| -> Vec<(Vec<f64>, Vec<f64>)> {
        d.pairs()
            .into_iter()
            .map(|(s, a)| (norm.norm_state(s), norm.norm_action(a)))
            .collect()
    };
    let train_owned = renorm(ds);
    let val_owned = val.map(renorm);
    let train_views: Vec<Pair> =
        train_owned.iter().map(|(s, a)| (s.as_slice(), a.as_slice())).collect();
    let val_views: Option<Vec<Pair>> =
        val_owned.as_ref().map(|v| v.iter().map(|(s, a)| (s.as_slice(), a.as_slice())).collect());

    let mut marginal = MarginalModel::new(
        ds.meta.state_dim,
        cfg.hidden,
        cfg.components,
        ds.meta.agent_dims.clone(),
        cfg.seed,
    )?;
    let marginal_curve = marginal.train(&train_views, val_views.as_deref(), &cfg.marginal)?;
    let mut log = TrainingLog { marginal: marginal_curve, copula: None };

    let coords = marginal.coords();
    let pit_all = |pairs: &[(Vec<f64>, Vec<f64>)]| -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        pairs
            .iter()
            .map(|(s, a)| Ok((s.clone(), marginal.pit(s, a)?)))
            .collect()
    };

    let copula = match cfg.copula {
        CopulaKind::Uniform => Copula::Independence { coords },
        CopulaKind::Kde => {
            let points: Vec<Vec<f64>> = train_owned
                .iter()
                .map(|(s, a)| marginal.pit(s, a))
                .collect::<Result<_>>()?;
            let opts = KdeFitOptions {
                cap: cfg.kde_cap,
                seed: cfg.seed,
                bandwidth_override: None,
            };
            Copula::Kde(kde_fit(&points, &opts)?)
        }
        CopulaKind::Gmm => {
            let train_u = pit_all(&train_owned)?;
            let val_u = val_owned.as_ref().map(|v| pit_all(v)).transpose()?;
            let tu_views: Vec<Pair> =
                train_u.iter().map(|(s, u)| (s.as_slice(), u.as_slice())).collect();
            let vu_views: Option<Vec<Pair>> =
                val_u.as_ref().map(|v| v.iter().map(|(s, u)| (s.as_slice(), u.as_slice())).collect());
            let mut gm = GaussianMixtureCopula::new(
                ds.meta.state_dim,
                cfg.copula_hidden,
                cfg.copula_components,
                coords,
                cfg.seed.wrapping_add(1),
            )?;
            let curve = gm.train(&tu_views, vu_views.as_deref(), &cfg.copula_train)?;
            log.copula = Some(curve);
            Copula::GaussianMixture(gm)
        }
    };

    let policy = CopulaPolicy::new(marginal, copula, norm)?;
    Ok((policy, log))
}
