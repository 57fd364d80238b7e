//! The release gate: every criterion checked end to end against independent
//! oracles, one verdict line each (run with --nocapture to watch). Heavier
//! artifacts (the reference particle datasets and trained policies) are
//! built once and shared across criteria.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use comil::copula::{Copula, GaussianCopula, GaussianMixtureCopula};
use comil::data::{Dataset, Normalization};
use comil::envs::physim::{energy, spring_forces, step, PhySimConfig, PhySimState};
use comil::envs::{generate_dataset, EnvConfig};
use comil::eval::{bootstrap_mean_ci, eval_nll, eval_swap, rmse_per_trajectory};
use comil::marginal::MarginalModel;
use comil::math::mean;
use comil::mixture::GaussianMixture1D;
use comil::nn::{mlp_init, GradientSet, Layout, NetworkParams};
use comil::policy::{train_policy, CopulaKind, CopulaPolicy, PolicyTrainConfig};
use comil::rng::seeded_rng;
use comil::ser::{policy_from_bytes, policy_to_bytes};
use comil::train::TrainConfig;

/// Base seed of the shared reference system: one adjacency pair, one set of
/// train/val/test draws.
const DESK_SEED: u64 = 20240;
const PARTICLES: usize = 5;
const M_TRAIN: usize = 500;
const M_HELD: usize = 100;
const T: usize = 100;
const TRAIN_SEEDS: [u64; 3] = [7, 8, 9];

struct Verdict {
    name: String,
    pass: bool,
    detail: String,
}

fn record(list: &mut Vec<Verdict>, name: &str, pass: bool, detail: String) {
    println!("{}  {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    list.push(Verdict { name: name.into(), pass, detail });
}

// ---- shared artifacts ----------------------------------------------------

fn desk_env(scale: Option<(usize, f64)>) -> EnvConfig {
    let mut cfg = PhySimConfig::new(PARTICLES, DESK_SEED).unwrap();
    if let Some((agent, factor)) = scale {
        cfg.action_scale[agent] = factor;
    }
    EnvConfig::PhySim(cfg)
}

/// Train/val/test with validation and test stamped in training ranges.
fn desk_data(env: &EnvConfig) -> (Dataset, Dataset, Dataset) {
    let train = generate_dataset(env, M_TRAIN, T, DESK_SEED).unwrap();
    let norm = train.meta.norm.clone();
    let val = generate_dataset(env, M_HELD, T, DESK_SEED + 1)
        .unwrap()
        .with_normalization(norm.clone())
        .unwrap();
    let test = generate_dataset(env, M_HELD, T, DESK_SEED + 2)
        .unwrap()
        .with_normalization(norm)
        .unwrap();
    (train, val, test)
}

fn desk_train_cfg(seed: u64, copula: CopulaKind) -> PolicyTrainConfig {
    // Generous epoch cap; the plateau-decay schedule decides when to stop.
    let stage = TrainConfig { epochs: 150, seed, ..TrainConfig::default() };
    PolicyTrainConfig {
        copula,
        components: 2,
        copula_components: 4,
        hidden: 64,
        copula_hidden: 64,
        seed,
        marginal: stage.clone(),
        copula_train: stage,
        ..PolicyTrainConfig::default()
    }
}

/// The same marginals under the independence copula. Equivalent to training
/// with the uniform copula at the same seed, because the second stage never
/// touches stage-one parameters (verified bitwise in the likelihood
/// criterion).
fn independence_twin(p: &CopulaPolicy) -> CopulaPolicy {
    CopulaPolicy::new(
        p.marginal().clone(),
        Copula::Independence { coords: p.coords() },
        p.norm().clone(),
    )
    .unwrap()
}

// ---- finite differences --------------------------------------------------

fn flat_len(l: Layout) -> usize {
    l.input * l.hidden + l.hidden + l.hidden * l.output + l.output
}

fn flat_grads(g: &GradientSet) -> Vec<f64> {
    g.w1.iter()
        .chain(&g.b1)
        .chain(&g.w2)
        .chain(&g.b2)
        .copied()
        .collect()
}

fn nudge(net: &NetworkParams, idx: usize, delta: f64) -> NetworkParams {
    let mut n = net.clone();
    let (a, b, c) = (n.w1.len(), n.b1.len(), n.w2.len());
    if idx < a {
        n.w1[idx] += delta;
    } else if idx < a + b {
        n.b1[idx - a] += delta;
    } else if idx < a + b + c {
        n.w2[idx - a - b] += delta;
    } else {
        n.b2[idx - a - b - c] += delta;
    }
    n
}

/// Max relative error between analytic gradients and central differences of
/// `loss` over every network parameter.
fn max_rel_err(
    net: &NetworkParams,
    analytic: &[f64],
    loss: &dyn Fn(&NetworkParams) -> f64,
) -> f64 {
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate().take(flat_len(net.layout)) {
        let fd = (loss(&nudge(net, i, h)) - loss(&nudge(net, i, -h))) / (2.0 * h);
        worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
    }
    worst
}

fn criterion_gradients(verdicts: &mut Vec<Verdict>) {
    let started = Instant::now();
    let mut rng = seeded_rng(101);

    // Raw network: loss = g . forward(x) exercises every weight path.
    let mut worst_nn = 0.0f64;
    for case in 0..100 {
        let net = mlp_init(Layout::new(3, 5, 4).unwrap(), 1000 + case);
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let analytic = flat_grads(&net.backward(&x, &g).unwrap());
        let loss = |n: &NetworkParams| -> f64 {
            n.forward(&x).unwrap().iter().zip(&g).map(|(o, gi)| o * gi).sum()
        };
        worst_nn = worst_nn.max(max_rel_err(&net, &analytic, &loss));
    }

    // Marginal NLL, including the spread parameters.
    let mut worst_marginal = 0.0f64;
    for case in 0..100 {
        let layout = Layout::new(2, 4, 4).unwrap();
        let spreads: Vec<f64> = (0..2).map(|_| rng.random_range(-1.5..0.0)).collect();
        let model =
            MarginalModel::from_parts(mlp_init(layout, 2000 + case), spreads.clone(), 2, vec![1, 1])
                .unwrap();
        let batch: Vec<(Vec<f64>, Vec<f64>)> = (0..4)
            .map(|_| {
                let s: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
                let a: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
                (s, a)
            })
            .collect();
        let views: Vec<(&[f64], &[f64])> =
            batch.iter().map(|(s, a)| (s.as_slice(), a.as_slice())).collect();
        let (_, gnet, gspread) = model.nll_and_grads(&views).unwrap();
        let analytic = flat_grads(&gnet);
        let net = model.net().clone();
        let rebuilt = |n: &NetworkParams| {
            MarginalModel::from_parts(n.clone(), spreads.clone(), 2, vec![1, 1])
                .unwrap()
                .mean_nll(&views)
                .unwrap()
        };
        worst_marginal = worst_marginal.max(max_rel_err(&net, &analytic, &rebuilt));
        // Central differences on each log-spread.
        let h = 1e-5;
        for (d, &a) in gspread.iter().enumerate() {
            let eval = |delta: f64| {
                let mut ls = spreads.clone();
                ls[d] += delta;
                MarginalModel::from_parts(net.clone(), ls, 2, vec![1, 1])
                    .unwrap()
                    .mean_nll(&views)
                    .unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            worst_marginal =
                worst_marginal.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
        }
    }

    // State-dependent copula NLL.
    let mut worst_copula = 0.0f64;
    for case in 0..100 {
        let c = GaussianMixtureCopula::new(2, 4, 3, 2, 3000 + case).unwrap();
        let batch: Vec<(Vec<f64>, Vec<f64>)> = (0..4)
            .map(|_| {
                let s: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
                let u: Vec<f64> = (0..2).map(|_| rng.random_range(0.05..0.95)).collect();
                (s, u)
            })
            .collect();
        let views: Vec<(&[f64], &[f64])> =
            batch.iter().map(|(s, u)| (s.as_slice(), u.as_slice())).collect();
        let (_, grads) = c.nll_and_grads(&views).unwrap();
        let analytic = flat_grads(&grads);
        let rebuilt = |n: &NetworkParams| {
            GaussianMixtureCopula::from_parts(n.clone(), 3, 2)
                .unwrap()
                .mean_nll(&views)
                .unwrap()
        };
        worst_copula = worst_copula.max(max_rel_err(c.net(), &analytic, &rebuilt));
    }

    let pass = worst_nn < 1e-4 && worst_marginal < 1e-3 && worst_copula < 1e-3;
    record(
        verdicts,
        "1 analytic gradients match central differences",
        pass,
        format!(
            "max relative error over 100 cases each: network {worst_nn:.2e} (< 1e-4), \
             marginal nll {worst_marginal:.2e} (< 1e-3), copula mixture nll {worst_copula:.2e} \
             (< 1e-3); {:.1}s",
            started.elapsed().as_secs_f64()
        ),
    );
}

// ---- uniformity of held-out probability transforms ------------------------

fn ks_statistic(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &u)| ((i + 1) as f64 / n - u).abs().max((u - i as f64 / n).abs()))
        .fold(0.0, f64::max)
}

fn criterion_pit_uniformity(verdicts: &mut Vec<Verdict>, policy: &CopulaPolicy, test: &Dataset) {
    let started = Instant::now();
    let marginal = policy.marginal();
    let norm = policy.norm();
    let coords = policy.coords();
    let mut per_coord: Vec<Vec<f64>> = vec![Vec::with_capacity(test.steps()); coords];
    for (s, a) in test.pairs() {
        let u = marginal.pit(&norm.norm_state(s), &norm.norm_action(a)).unwrap();
        for (d, &ud) in u.iter().enumerate() {
            per_coord[d].push(ud);
        }
    }
    let n = per_coord[0].len() as f64;
    // Asymptotic Kolmogorov critical value at alpha = 0.01.
    let critical = (-(0.01f64 / 2.0).ln() / 2.0).sqrt() / n.sqrt();
    let mut worst = 0.0f64;
    let mut worst_coord = 0;
    for (d, mut u) in per_coord.into_iter().enumerate() {
        u.sort_by(|a, b| a.total_cmp(b));
        let d_stat = ks_statistic(&u);
        if d_stat > worst {
            worst = d_stat;
            worst_coord = d;
        }
    }
    record(
        verdicts,
        "2 held-out probability transforms are uniform",
        worst < critical,
        format!(
            "worst per-coordinate KS statistic {worst:.4} (coordinate {worst_coord}) vs \
             critical {critical:.4} at alpha 0.01, n = {n}; {:.1}s",
            started.elapsed().as_secs_f64()
        ),
    );
}

// ---- closed-form bivariate normal oracle ----------------------------------

fn analytic_normal_policy(rho: f64) -> CopulaPolicy {
    let mut net = mlp_init(Layout::new(2, 4, 2).unwrap(), 0);
    for w in net.w1.iter_mut().chain(net.w2.iter_mut()).chain(net.b1.iter_mut()) {
        *w = 0.0;
    }
    net.b2 = vec![0.0, 0.0];
    let marginal = MarginalModel::from_parts(net, vec![0.0, 0.0], 1, vec![1, 1]).unwrap();
    CopulaPolicy::new(
        marginal,
        Copula::Gaussian(GaussianCopula::new(rho).unwrap()),
        Normalization::identity(2, 2),
    )
    .unwrap()
}

fn criterion_sklar_oracle(verdicts: &mut Vec<Verdict>) {
    let mut rng = seeded_rng(331);
    let mut worst_ll = 0.0f64;
    let mut worst_centre = 0.0f64;
    for &rho in &[0.0, 0.5, 0.8] {
        let policy = analytic_normal_policy(rho);
        let det = 1.0 - rho * rho;
        for _ in 0..1000 {
            let s: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a: Vec<f64> = (0..2).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let got = policy.joint_log_likelihood(&s, &a).unwrap();
            let q = (a[0] * a[0] - 2.0 * rho * a[0] * a[1] + a[1] * a[1]) / det;
            let want = -q / 2.0
                - det.ln() / 2.0
                - (2.0 * std::f64::consts::PI).ln();
            worst_ll = worst_ll.max((got - want).abs());
        }
        let centre = GaussianCopula::new(rho).unwrap().log_density(&[0.5, 0.5]).exp();
        worst_centre = worst_centre.max((centre - 1.0 / det.sqrt()).abs());
    }
    record(
        verdicts,
        "3 factorized likelihood matches the bivariate normal",
        worst_ll < 1e-4 && worst_centre < 1e-6,
        format!(
            "max log-density error {worst_ll:.2e} (< 1e-4) over 1000 points at rho 0/0.5/0.8; \
             centre density error {worst_centre:.2e} (< 1e-6)"
        ),
    );
}

// ---- held-out likelihood ordering -----------------------------------------

fn criterion_nll_ordering(
    verdicts: &mut Vec<Verdict>,
    policies: &[CopulaPolicy],
    uniform_trained: &CopulaPolicy,
    test: &Dataset,
) {
    let started = Instant::now();
    // Training with the uniform copula at the same seed leaves identical
    // marginals, so the independence twin is the trained uniform policy.
    let stages_identical = uniform_trained.marginal() == policies[0].marginal();
    let mut gaps = Vec::new();
    let mut detail_runs = String::new();
    for (i, p) in policies.iter().enumerate() {
        let twin = independence_twin(p);
        let nll_kde = eval_nll(p, test).unwrap().value;
        let nll_uni = eval_nll(&twin, test).unwrap().value;
        gaps.push(nll_uni - nll_kde);
        detail_runs.push_str(&format!(
            "seed {}: {nll_kde:.3} vs {nll_uni:.3}; ",
            TRAIN_SEEDS[i]
        ));
    }
    let mean_gap = mean(&gaps);
    record(
        verdicts,
        "4 kde copula beats the independence copula by over 0.5 nat",
        mean_gap > 0.5 && stages_identical,
        format!(
            "held-out nll (kde vs uniform) {detail_runs}mean gap {mean_gap:.3} nat (> 0.5); \
             uniform-trained marginals identical to kde-trained: {stages_identical}; {:.1}s",
            started.elapsed().as_secs_f64()
        ),
    );
}

// ---- intervention transfer -------------------------------------------------

fn criterion_intervention_swap(
    verdicts: &mut Vec<Verdict>,
    old_policy: &CopulaPolicy,
    new_policy: &CopulaPolicy,
    new_test: &Dataset,
) {
    let started = Instant::now();
    let m = eval_swap(old_policy, new_policy, new_test).unwrap();
    let (oo, on, no, nn) = (m[0].value, m[1].value, m[2].value, m[3].value);
    let copula_disagreement = (no - nn).abs();
    let improvement = oo - no.max(nn);
    let separation = oo.min(on) - no.max(nn);
    let pass = copula_disagreement <= 0.1 * improvement && separation >= 2.0;
    record(
        verdicts,
        "5 dependence structure survives the scaling intervention",
        pass,
        format!(
            "nll on doubled-agent data: old marginals {oo:.3} (old copula) / {on:.3} (new); \
             new marginals {no:.3} (old copula) / {nn:.3} (new); copula swap shifts \
             {copula_disagreement:.3} <= 10% of the {improvement:.3} marginal improvement; \
             new marginals beat old by {separation:.3} nats (>= 2); {:.1}s",
            started.elapsed().as_secs_f64()
        ),
    );
}

// ---- prediction-error parity ------------------------------------------------

fn criterion_rmse_parity(
    verdicts: &mut Vec<Verdict>,
    policy: &CopulaPolicy,
    test: &Dataset,
) {
    let started = Instant::now();
    let twin = independence_twin(policy);
    let n_samples = 20;
    let per_kde = rmse_per_trajectory(policy, test, n_samples, 777).unwrap();
    let per_uni = rmse_per_trajectory(&twin, test, n_samples, 777).unwrap();
    let rmse_kde = mean(&per_kde);
    let rmse_uni = mean(&per_uni);
    let diffs: Vec<f64> = per_kde.iter().zip(&per_uni).map(|(a, b)| a - b).collect();
    let (lo, hi) = bootstrap_mean_ci(&diffs, 10_000, 0.95, 4242).unwrap();
    // With both policies sharing stage-one marginals, each coordinate's
    // prediction is governed by the same marginal law, so the copula cannot
    // move coordinate-wise error: the honest expectation is parity, and the
    // paired interval should show the copula is no worse. A strict
    // improvement would require conditioning on other agents' actions,
    // which one-shot joint prediction never does.
    let strictly_better = hi < 0.0;
    let not_worse = hi <= 0.005;
    record(
        verdicts,
        "6 copula does not trade prediction error for likelihood",
        not_worse,
        format!(
            "rmse kde {rmse_kde:.4} vs independence {rmse_uni:.4} (normalized units, {} \
             prediction samples); paired bootstrap 95% CI of the difference [{lo:+.4}, {hi:+.4}]; \
             strictly better: {strictly_better} (parity expected: shared marginals fix \
             coordinate-wise error); asserted not-worse bound +0.005; {:.1}s",
            n_samples,
            started.elapsed().as_secs_f64()
        ),
    );
}

// ---- round trips and normalization ------------------------------------------

fn criterion_round_trips(
    verdicts: &mut Vec<Verdict>,
    policy: &CopulaPolicy,
    test: &Dataset,
) {
    let started = Instant::now();
    let mut rng = seeded_rng(557);

    // Quantile then CDF returns the probability.
    let mut worst_q = 0.0f64;
    for _ in 0..50 {
        let k = rng.random_range(1..4usize);
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let means: Vec<f64> = (0..k).map(|_| rng.random_range(-0.5..0.5)).collect();
        let spreads: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..0.5)).collect();
        let gm = GaussianMixture1D::new(weights, means, spreads).unwrap();
        for i in 1..100 {
            let u = i as f64 / 100.0;
            let back = gm.cdf(gm.quantile(u).unwrap());
            worst_q = worst_q.max((back - u).abs());
        }
    }

    // Dataset files survive a write/read/write cycle byte for byte.
    let dir = tempfile::TempDir::new().unwrap();
    let p1 = dir.path().join("first");
    let p2 = dir.path().join("second");
    test.write(&p1).unwrap();
    Dataset::read(&p1).unwrap().write(&p2).unwrap();
    let dataset_identical = std::fs::read(p1.with_extension("meta")).unwrap()
        == std::fs::read(p2.with_extension("meta")).unwrap()
        && std::fs::read(p1.with_extension("records")).unwrap()
            == std::fs::read(p2.with_extension("records")).unwrap();

    // Policy bundles too, for the trained policy and an analytic one.
    let b1 = policy_to_bytes(policy);
    let policy_identical = policy_to_bytes(&policy_from_bytes(&b1).unwrap()) == b1;
    let b2 = policy_to_bytes(&analytic_normal_policy(0.5));
    let analytic_identical = policy_to_bytes(&policy_from_bytes(&b2).unwrap()) == b2;

    // Monte Carlo mass of the fitted copula's (0, 1) pair density and of a
    // randomly parameterized state-dependent copula.
    let kde_pair = match policy.copula() {
        Copula::Kde(k) => k.pairwise(0, 1).unwrap(),
        _ => unreachable!("desk policy carries a kde copula"),
    };
    // Each kde draw scans the full support, so it gets fewer draws; the
    // standard error stays an order of magnitude inside the +-0.02 band.
    let kde_draws = 50_000;
    let mut acc_kde = 0.0;
    for _ in 0..kde_draws {
        let u = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        acc_kde += kde_pair.log_density(&u).exp();
    }
    let mass_kde = acc_kde / kde_draws as f64;

    let gmm = GaussianMixtureCopula::new(3, 16, 4, 2, 9001).unwrap();
    let s: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let gmm_draws = 200_000;
    let mut acc_gmm = 0.0;
    for _ in 0..gmm_draws {
        let u = vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        acc_gmm += gmm.log_density(&u, &s).unwrap().exp();
    }
    let mass_gmm = acc_gmm / gmm_draws as f64;

    let mass_ok = (0.98..=1.02).contains(&mass_kde) && (0.98..=1.02).contains(&mass_gmm);
    let pass = worst_q < 1e-6 && dataset_identical && policy_identical && analytic_identical && mass_ok;
    record(
        verdicts,
        "7 round trips and copula normalization",
        pass,
        format!(
            "quantile/cdf identity error {worst_q:.2e} (< 1e-6); dataset bytes stable: \
             {dataset_identical}; policy bundles stable: {}; monte carlo copula mass: kde pair \
             {mass_kde:.4}, state-dependent {mass_gmm:.4} (both within [0.98, 1.02]); {:.1}s",
            policy_identical && analytic_identical,
            started.elapsed().as_secs_f64()
        ),
    );
}

// ---- simulator physics -------------------------------------------------------

fn criterion_physics(verdicts: &mut Vec<Verdict>) {
    let cfg = PhySimConfig::new(PARTICLES, DESK_SEED).unwrap();
    let n = cfg.particles;

    // The two adjacency matrices plus the identity tile the matrix.
    let mut complementary = true;
    for i in 0..n {
        for j in 0..n {
            let total = cfg.a1[i * n + j] + cfg.a2[i * n + j] + u8::from(i == j);
            complementary &= total == 1;
        }
    }
    let mut broken = cfg.clone();
    broken.a1[1] ^= 1;
    let rejects_broken = broken.validate().is_err();

    // Internal forces cancel pairwise.
    let mut rng = seeded_rng(883);
    let mut worst_net_force = 0.0f64;
    for _ in 0..10 {
        let positions: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-0.5..0.5)).collect();
        for adjacency in [&cfg.a1, &cfg.a2] {
            let f = spring_forces(&cfg, &positions, adjacency);
            for c in 0..2 {
                let total: f64 = (0..n).map(|i| f[2 * i + c]).sum();
                worst_net_force = worst_net_force.max(total.abs());
            }
        }
    }

    // Symplectic integration holds energy on a noise-free connected pair.
    let mut pair = PhySimConfig::new(2, 0).unwrap();
    pair.a1 = vec![0, 1, 1, 0];
    pair.a2 = vec![0, 0, 0, 0];
    pair.noise_sd = 0.0;
    pair.validate().unwrap();
    let mut st = PhySimState::at(vec![-0.2, 0.0, 0.2, 0.0]);
    let e0 = energy(&pair, &st, &pair.a1);
    let mut drift = 0.0f64;
    for _ in 0..500 {
        let a = spring_forces(&pair, &st.positions, &pair.a1);
        step(&pair, &mut st, &a);
        drift = drift.max((energy(&pair, &st, &pair.a1) - e0).abs() / e0);
    }

    let pass =
        complementary && rejects_broken && worst_net_force < 1e-12 && drift < 0.02;
    record(
        verdicts,
        "8 simulator physics invariants",
        pass,
        format!(
            "adjacency complementarity holds: {complementary}, broken matrix rejected: \
             {rejects_broken}; max net internal force {worst_net_force:.2e} (< 1e-12); \
             two-particle energy drift over 500 noise-free steps {:.3}% (< 2%)",
            drift * 100.0
        ),
    );
}

// ---- per-epoch cost scaling ----------------------------------------------------

/// Seconds per epoch of marginal training on a generated dataset, minimum of
/// three runs to shave scheduler noise.
fn epoch_seconds(particles: usize, m: usize, t: usize) -> f64 {
    let env = EnvConfig::PhySim(PhySimConfig::new(particles, 99).unwrap());
    let ds = generate_dataset(&env, m, t, 99).unwrap();
    let pairs_owned = ds.normalized_pairs();
    let views: Vec<(&[f64], &[f64])> =
        pairs_owned.iter().map(|(s, a)| (s.as_slice(), a.as_slice())).collect();
    let epochs = 5;
    let cfg = TrainConfig {
        epochs,
        // Convergence cutoffs off: every run must do identical epoch counts.
        tol: 0.0,
        ..TrainConfig::default()
    };
    let mut best = f64::INFINITY;
    for _ in 0..3 {
        let mut model =
            MarginalModel::new(ds.meta.state_dim, 64, 2, ds.meta.agent_dims.clone(), 1).unwrap();
        let tick = Instant::now();
        let curve = model.train(&views, None, &cfg).unwrap();
        assert_eq!(curve.epochs_run(), epochs, "early stop would skew the timing");
        best = best.min(tick.elapsed().as_secs_f64() / epochs as f64);
    }
    best
}

fn criterion_complexity(verdicts: &mut Vec<Verdict>) {
    let started = Instant::now();
    let (m, t, particles) = (100, 60, 4);
    let units = |m: usize, t: usize, p: usize| (m * t * 2 * p) as f64;
    let base = epoch_seconds(particles, m, t) / units(m, t, particles);
    let double_m = epoch_seconds(particles, 2 * m, t) / units(2 * m, t, particles);
    let double_t = epoch_seconds(particles, m, 2 * t) / units(m, 2 * t, particles);
    let double_d = epoch_seconds(2 * particles, m, t) / units(m, t, 2 * particles);
    let (rm, rt, rd) = (double_m / base, double_t / base, double_d / base);
    let pass = rm <= 1.5 && rt <= 1.5 && rd <= 1.5;
    record(
        verdicts,
        "9 per-epoch cost scales linearly in data and dimension",
        pass,
        format!(
            "per-unit epoch cost ratios after doubling: trajectories {rm:.2}, steps {rt:.2}, \
             coordinates {rd:.2} (each <= 1.5, so per-epoch wall clock stays linear); {:.1}s",
            started.elapsed().as_secs_f64()
        ),
    );
}

// ---- orchestrator ----------------------------------------------------------------

#[test]
fn acceptance() {
    let mut verdicts = Vec::new();
    let total = Instant::now();

    criterion_gradients(&mut verdicts);
    criterion_sklar_oracle(&mut verdicts);
    criterion_physics(&mut verdicts);

    // Shared desk-scale artifacts.
    let tick = Instant::now();
    let env = desk_env(None);
    let (train, val, test) = desk_data(&env);
    let policies: Vec<CopulaPolicy> = TRAIN_SEEDS
        .iter()
        .map(|&s| train_policy(&train, Some(&val), &desk_train_cfg(s, CopulaKind::Kde)).unwrap().0)
        .collect();
    let uniform_trained =
        train_policy(&train, Some(&val), &desk_train_cfg(TRAIN_SEEDS[0], CopulaKind::Uniform))
            .unwrap()
            .0;

    // The doubled-agent system: same adjacency, agent 0's actions scaled.
    let new_env = desk_env(Some((0, 2.0)));
    let (new_train, new_val, new_test) = desk_data(&new_env);
    let new_policy =
        train_policy(&new_train, Some(&new_val), &desk_train_cfg(TRAIN_SEEDS[0], CopulaKind::Kde))
            .unwrap()
            .0;
    println!(
        "artifacts: {} + {} training steps, five policies, {:.1}s",
        train.steps(),
        new_train.steps(),
        tick.elapsed().as_secs_f64()
    );

    criterion_pit_uniformity(&mut verdicts, &policies[0], &test);
    criterion_nll_ordering(&mut verdicts, &policies, &uniform_trained, &test);
    criterion_intervention_swap(&mut verdicts, &policies[0], &new_policy, &new_test);
    criterion_rmse_parity(&mut verdicts, &policies[0], &test);
    criterion_round_trips(&mut verdicts, &policies[0], &test);
    criterion_complexity(&mut verdicts);

    println!("acceptance total {:.1}s", total.elapsed().as_secs_f64());
    let failures: Vec<String> = verdicts
        .iter()
        .filter(|v| !v.pass)
        .map(|v| format!("{}: {}", v.name, v.detail))
        .collect();
    assert!(
        failures.is_empty(),
        "{} of {} criteria failed:\n{}",
        failures.len(),
        verdicts.len(),
        failures.join("\n")
    );
}
