//! The five subcommands. Each is a pure function of its configuration and
//! the files it references: identical inputs produce identical output bytes,
//! so no command writes timestamps or machine-dependent values.

use std::fs;
use std::path::{Path, PathBuf};

use comil::data::{Dataset, DatasetMeta};
use comil::envs::{generate_dataset, rollout, scale_agent_actions};
use comil::eval::{
    eval_nll, eval_rmse, eval_swap, export_copula_grid, render_table, render_tsv, EvalReport,
};
use comil::policy::{train_policy, CopulaKind, MeanPredictor, TrainingLog};
use comil::rng::stream_rng;
use comil::ser::{read_policy, write_policy};
use comil::train::LossCurve;
use comil::{Error, Result};

use crate::config::RunConfig;

fn dataset_path(cfg: &RunConfig, split: &str) -> PathBuf {
    Path::new(&cfg.data).join(split)
}

fn read_split(cfg: &RunConfig, split: &str) -> Result<Dataset> {
    Dataset::read(&dataset_path(cfg, split))
}

/// Generates train/val/test splits from one environment. The validation and
/// test sets get their own seeds but are stamped with the training ranges,
/// so every later consumer normalizes consistently (test coordinates may
/// fall slightly outside [-1, 1]).
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<()> {
    let env = cfg.env_config()?;
    fs::create_dir_all(&cfg.data)?;
    let scale = cfg.post_hoc_scale();
    let generate = |m: usize, seed: u64| -> Result<Dataset> {
        let ds = generate_dataset(&env, m, cfg.t, seed)?;
        match scale {
            Some((agent, factor)) => scale_agent_actions(&ds, agent, factor),
            None => Ok(ds),
        }
    };
    let train = generate(cfg.m_train, cfg.seed)?;
    let splits = [
        ("train", train.clone()),
        (
            "val",
            generate(cfg.m_val, cfg.seed + 1)?.with_normalization(train.meta.norm.clone())?,
        ),
        (
            "test",
            generate(cfg.m_test, cfg.seed + 2)?.with_normalization(train.meta.norm.clone())?,
        ),
    ];
    for (split, ds) in &splits {
        ds.write(&dataset_path(cfg, split))?;
    }
    println!(
        "wrote {}/{}/{} train/val/test trajectories of {} steps ({}, {} action coordinates) under {}",
        cfg.m_train,
        cfg.m_val,
        cfg.m_test,
        cfg.t,
        env.tag(),
        env.action_dim(),
        cfg.data
    );
    Ok(())
}

fn curve_lines(out: &mut String, curve: &LossCurve) {
    out.push_str("epoch train_nll val_nll\n");
    for (e, tr) in curve.train.iter().enumerate() {
        let val = curve
            .validation
            .get(e)
            .map(|v| v.to_string())
            .unwrap_or_else(|| "-".into());
        out.push_str(&format!("{e} {tr} {val}\n"));
    }
}

fn render_training_log(cfg: &RunConfig, ds: &Dataset, log: &TrainingLog) -> String {
    let mut out = String::from("comil training log\n");
    // The effective configuration (file plus overrides), so the log alone
    // suffices to reproduce the bundle.
    out.push_str(&cfg.render());
    out.push_str(&format!("dataset {} steps {}\n", ds.meta.env, ds.steps()));
    out.push_str(&format!(
        "stage 1 marginals: {} epochs\n",
        log.marginal.epochs_run()
    ));
    curve_lines(&mut out, &log.marginal);
    match (&log.copula, cfg.copula) {
        (Some(curve), _) => {
            out.push_str(&format!(
                "stage 2 copula mixture: {} epochs\n",
                curve.epochs_run()
            ));
            curve_lines(&mut out, curve);
        }
        (None, CopulaKind::Uniform) => {
            out.push_str("stage 2 skipped: the independence copula has no parameters\n");
        }
        (None, _) => {
            out.push_str("stage 2 kde: fitted on the transformed training points\n");
        }
    }
    out
}

/// Two-stage fit on the train split with the val split for early stopping;
/// writes the policy bundle and a per-epoch loss log next to it.
pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let train = read_split(cfg, "train")?;
    let val = read_split(cfg, "val")?;
    let env = cfg.env_config()?;
    if train.meta.env != env.tag()
        || train.meta.action_dim != env.action_dim()
        || train.meta.state_dim != env.state_dim()
    {
        return Err(Error::InvalidConfig(format!(
            "dataset is {} with {} action coordinates, config expects {} with {}",
            train.meta.env,
            train.meta.action_dim,
            env.tag(),
            env.action_dim()
        )));
    }
    let (policy, log) = train_policy(&train, Some(&val), &cfg.train_config())?;
    let bundle = Path::new(&cfg.policy);
    if let Some(dir) = bundle.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_policy(bundle, &policy)?;
    let log_path = format!("{}.log", cfg.policy);
    fs::write(&log_path, render_training_log(cfg, &train, &log))?;
    println!(
        "trained {} copula policy on {} steps; bundle {}, log {}",
        cfg.copula.as_str(),
        train.steps(),
        cfg.policy,
        log_path
    );
    Ok(())
}

/// Scores the bundle on the test split. Seeded metrics repeat over
/// `eval_reps` sampling seeds and report mean and spread; the likelihood is
/// deterministic and reported once. Results go to a TSV and stdout.
pub fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let test = read_split(cfg, "test")?;
    let policy = read_policy(Path::new(&cfg.policy))?;
    let mut reports: Vec<EvalReport> = Vec::new();
    for metric in &cfg.metrics {
        match metric.as_str() {
            "rmse" => {
                let mut runs = Vec::with_capacity(cfg.eval_reps);
                for r in 0..cfg.eval_reps {
                    let seed = cfg.seed.wrapping_add(r as u64);
                    runs.push((seed, eval_rmse(&policy, &test, cfg.n_samples, seed)?.value));
                }
                let desc = format!(
                    "rmse env={} m={} t={} data_seed={} copula={} n_samples={} reps={} base_seed={}",
                    test.meta.env,
                    test.meta.m,
                    test.meta.t,
                    test.meta.seed,
                    policy.copula().kind(),
                    cfg.n_samples,
                    cfg.eval_reps,
                    cfg.seed
                );
                reports.push(EvalReport::aggregate("rmse", &runs, &desc)?);
            }
            "nll" => reports.push(eval_nll(&policy, &test)?),
            "swap" => {
                let old_path = cfg.swap_policy.as_ref().ok_or_else(|| {
                    Error::InvalidConfig(
                        "the swap metric needs swap_policy pointing at the pre-change bundle"
                            .into(),
                    )
                })?;
                let old = read_policy(Path::new(old_path))?;
                reports.extend(eval_swap(&old, &policy, &test)?);
            }
            other => {
                return Err(Error::InvalidConfig(format!("unknown metric {other:?}")));
            }
        }
    }
    let out = cfg.out.clone().unwrap_or_else(|| "eval.tsv".into());
    fs::write(&out, render_tsv(&reports))?;
    print!("{}", render_table(&reports));
    println!("reports written to {out}");
    Ok(())
}

/// Rolls the policy out in the environment, one rollout per test-trajectory
/// starting state, and writes the results in the dataset record format so
/// they sit side by side with the demonstrations.
pub fn cmd_rollout(cfg: &RunConfig) -> Result<()> {
    let test = read_split(cfg, "test")?;
    let policy = read_policy(Path::new(&cfg.policy))?;
    let env = cfg.env_config()?;
    if cfg.rollout_count > test.trajectories.len() {
        return Err(Error::InvalidConfig(format!(
            "rollout_count {} exceeds the {} test trajectories available as starts",
            cfg.rollout_count,
            test.trajectories.len()
        )));
    }
    let pred = MeanPredictor {
        policy: &policy,
        n_samples: cfg.n_samples,
    };
    let mut trajectories = Vec::with_capacity(cfg.rollout_count);
    for i in 0..cfg.rollout_count {
        let s0 = &test.trajectories[i].states[0];
        let mut rng = stream_rng(cfg.seed, i as u64);
        trajectories.push(rollout(&pred, &env, s0, cfg.rollout_len, &mut rng)?);
    }
    let ds = Dataset {
        meta: DatasetMeta {
            env: env.tag().into(),
            agents: env.agents(),
            agent_dims: env.agent_dims(),
            state_dim: env.state_dim(),
            action_dim: env.action_dim(),
            m: cfg.rollout_count,
            t: cfg.rollout_len + 1,
            seed: cfg.seed,
            norm: test.meta.norm.clone(),
        },
        trajectories,
    };
    ds.validate()?;
    let out = cfg.out.clone().unwrap_or_else(|| "rollout".into());
    ds.write(Path::new(&out))?;
    println!(
        "wrote {} rollouts of {} steps to {}.meta / {}.records",
        cfg.rollout_count, cfg.rollout_len, out, out
    );
    Ok(())
}

/// Exports the copula density of each configured coordinate pair on a grid.
/// The state-dependent copula is conditioned on the first recorded test
/// state; the other variants need no state.
pub fn cmd_export_copula(cfg: &RunConfig) -> Result<()> {
    let policy = read_policy(Path::new(&cfg.policy))?;
    let state: Option<Vec<f64>> = if policy.copula().is_state_dependent() {
        let test = read_split(cfg, "test")?;
        let first = test
            .trajectories
            .first()
            .ok_or_else(|| Error::NotEnoughData("test split has no trajectories".into()))?;
        Some(first.states[0].clone())
    } else {
        None
    };
    let out = cfg.out.clone().unwrap_or_else(|| "copula".into());
    for &(a, b) in &cfg.grid_pairs {
        let grid = export_copula_grid(&policy, a, b, cfg.grid_resolution, state.as_deref())?;
        let path = format!("{out}.{a}-{b}.grid");
        fs::write(&path, grid.render())?;
        println!(
            "wrote {path}: {0}x{0} {1} copula density, grid mean {2:.4}",
            cfg.grid_resolution,
            grid.kind,
            grid.mean()
        );
    }
    Ok(())
}
