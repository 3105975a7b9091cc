//! Mean–variance portfolio learning with a learned Lagrange multiplier.

use serde::{Deserialize, Serialize};

use qlearn_core::approx::{mv_q, mv_value, MvQ, MvValue, Negated};
use qlearn_core::baselines::{pg_bracket, qdt_mv_preset, sarsa_bracket, QdtMv};
use qlearn_core::envsim::{builtin_mv_env, EnvStepper, MarketModel};
use qlearn_core::learners::{apply_step, ml_increment, offline_td_increment, MlInnerSum, Schedule, TestFunctions};
use qlearn_core::{
    ControlModel, DataSource, Discount, EpisodeConfig, GaussianPolicy, QdtApprox, RngStream, SarsaGrad, SarsaNext,
    ScoreFunction, StreamId, Trajectory, ValueApprox,
};

use crate::config::{Algo, ConfigError};
use crate::metrics::{lagrange_update, metrics_terminal, MultiplierRule};
use crate::record::{named, Metrics, RunRecord, Trace};

// Stream ids inside one replication.
const POOL_STREAM: u64 = 0;
const BATCH_STREAM: u64 = 1;
const POLICY_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvExperimentConfig {
    pub mu: f64,
    pub sigma: f64,
    pub rfree: f64,
    pub horizon: f64,
    pub x0: f64,
    pub z: f64,
    pub gamma: f64,
    /// Multiplier update period in episodes.
    pub m: usize,
    pub alpha_w: f64,
    pub alpha_theta: f64,
    pub alpha_psi: f64,
    pub alpha_phi: f64,
    /// `l(j) = j^{−p}`.
    pub schedule_exponent: f64,
    /// Parameter updates, each from one batch of trajectories.
    pub episodes: usize,
    pub batch: usize,
    pub dt: f64,
    pub eval_runs: usize,
    /// Length of the training pool in units of the horizon.
    pub pool_years: usize,
    pub multiplier_rule: MultiplierRule,
    pub sarsa_grad: SarsaGrad,
    pub ml_inner_sum: MlInnerSum,
    pub trace_points: usize,
}

impl Default for MvExperimentConfig {
    fn default() -> Self {
        Self {
            mu: -0.5,
            sigma: 0.1,
            rfree: 0.0,
            horizon: 1.0,
            x0: 1.0,
            z: 1.4,
            gamma: 0.1,
            m: 10,
            alpha_w: 0.005,
            alpha_theta: 0.001,
            alpha_psi: 0.001,
            alpha_phi: 0.001,
            schedule_exponent: 0.51,
            episodes: 20_000,
            batch: 32,
            dt: 1.0 / 25.0,
            eval_runs: 100,
            pool_years: 20,
            multiplier_rule: MultiplierRule::Target,
            sarsa_grad: SarsaGrad::Raw,
            ml_inner_sum: MlInnerSum::Display,
            trace_points: 200,
        }
    }
}

impl MvExperimentConfig {
    pub fn grid(&self) -> Result<EpisodeConfig<f64>, ConfigError> {
        Ok(EpisodeConfig::new(self.horizon, self.dt)?)
    }

    pub fn market(&self) -> Result<MarketModel<f64>, ConfigError> {
        Ok(builtin_mv_env(self.mu, self.sigma, self.rfree)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.grid()?;
        self.market()?;
        if !(self.gamma > 0.0) {
            return Err(ConfigError::Invalid("gamma must be positive".into()));
        }
        if self.batch == 0 || self.m == 0 || self.pool_years == 0 {
            return Err(ConfigError::Invalid("batch, m and pool_years must be positive".into()));
        }
        if self.eval_runs < 2 {
            return Err(ConfigError::Invalid("eval_runs must be at least 2".into()));
        }
        Ok(())
    }

    pub fn evaluation_protocol(&self) -> String {
        format!(
            "{} out-of-sample episodes per replication on fresh noise, actions drawn from the learned stochastic policy, one terminal wealth per episode",
            self.eval_runs
        )
    }
}

/// Learner state for one algorithm; all parameters live here.
enum Agent {
    Q { value: Negated<MvValue<f64>>, q: MvQ<f64>, ml: Option<MlInnerSum> },
    Sarsa { qdt: QdtMv<f64>, grad: SarsaGrad },
    Pg { value: Negated<MvValue<f64>>, policy: MvQ<f64> },
}

impl Agent {
    /// Zero parameters with `w = z`; SARSA offsets `ψ₁` by `−log Δt` so that every algorithm starts
    /// from the same policy `N(0, γ)`.
    fn new(algo: Algo, cfg: &MvExperimentConfig) -> Result<Self, ConfigError> {
        let (w, z, t, g) = (cfg.z, cfg.z, cfg.horizon, cfg.gamma);
        Ok(match algo {
            Algo::QlearnMl | Algo::QlearnTd => Agent::Q {
                value: Negated(mv_value([0.0; 3], w, z, t)),
                q: mv_q([0.0; 3], w, g, t),
                ml: (algo == Algo::QlearnMl).then_some(cfg.ml_inner_sum),
            },
            Algo::Sarsa => Agent::Sarsa {
                qdt: qdt_mv_preset([-cfg.dt.ln(), 0.0, 0.0, 0.0, 0.0], w, z, t, g, cfg.dt),
                grad: cfg.sarsa_grad,
            },
            Algo::Pg => Agent::Pg { value: Negated(mv_value([0.0; 3], w, z, t)), policy: mv_q([0.0; 3], w, g, t) },
            Algo::QlearnOnline => return Err(ConfigError::Invalid("qlearn-online is an ergodic algorithm".into())),
        })
    }

    fn names(&self) -> &'static [&'static str] {
        match self {
            Agent::Q { .. } => &["theta1", "theta2", "theta3", "psi1", "psi2", "psi3"],
            Agent::Sarsa { .. } => &["psi1", "psi2", "psi3", "psi4", "psi5"],
            Agent::Pg { .. } => &["theta1", "theta2", "theta3", "phi1", "phi2", "phi3"],
        }
    }

    fn params(&self) -> Vec<f64> {
        match self {
            Agent::Q { value, q, .. } => [value.theta(), qlearn_core::QApprox::psi(q)].concat(),
            Agent::Sarsa { qdt, .. } => qdt.psi().to_vec(),
            Agent::Pg { value, policy } => [value.theta(), policy.phi()].concat(),
        }
    }

    fn policy(&self) -> &dyn GaussianPolicy<f64> {
        match self {
            Agent::Q { q, .. } => q,
            Agent::Sarsa { qdt, .. } => qdt,
            Agent::Pg { policy, .. } => policy,
        }
    }

    fn set_w(&mut self, w: f64) {
        match self {
            Agent::Q { value, q, .. } => {
                value.0.w = w;
                q.w = w;
            }
            Agent::Sarsa { qdt, .. } => qdt.w = w,
            Agent::Pg { value, policy } => {
                value.0.w = w;
                policy.w = w;
            }
        }
    }

    /// Adds this trajectory's raw update direction to `acc`.
    fn accumulate(&self, traj: &Trajectory<f64>, gamma: f64, acc: &mut [f64]) -> Result<(), ConfigError> {
        let h = traj.terminal_payoff().ok_or_else(|| ConfigError::Invalid("episode without terminal payoff".into()))?;
        let last = traj.steps() - 1;
        match self {
            Agent::Q { value, q, ml } => {
                let inc = match ml {
                    Some(inner) => ml_increment(traj, value, q, 0.0, *inner)?,
                    None => offline_td_increment(traj, value, q, &TestFunctions::Gradient, 0.0),
                };
                for (a, d) in acc.iter_mut().zip(inc.theta.iter().chain(&inc.psi)) {
                    *a += d;
                }
            }
            Agent::Sarsa { qdt, grad } => {
                let (mut gv, mut ga) = ([0.0; 5], [0.0; 5]);
                let scale = match grad {
                    SarsaGrad::Raw => 1.0,
                    SarsaGrad::Advantage => 1.0 / qdt.dt(),
                };
                for tr in traj.transitions() {
                    let next = if tr.k == last { SarsaNext::Terminal(h) } else { SarsaNext::Action(traj.action(tr.k + 1)) };
                    let b = sarsa_bracket(&tr, next, qdt, Discount::Rate(0.0))?;
                    qdt.grad_psi_parts(tr.t, tr.x, tr.a, &mut gv, &mut ga);
                    for i in 0..5 {
                        acc[i] += (gv[i] + scale * ga[i]) * b;
                    }
                }
            }
            Agent::Pg { value, policy } => {
                let (mut xi, mut score) = ([0.0; 3], [0.0; 3]);
                for tr in traj.transitions() {
                    let next = (tr.k == last).then_some(h);
                    let b = pg_bracket(&tr, traj.dt(), value, policy, gamma, Discount::Rate(0.0), next)?;
                    value.grad_theta(tr.t, tr.x, &mut xi);
                    policy.grad_log_density(tr.t, tr.x, tr.a, &mut score);
                    for i in 0..3 {
                        acc[i] += xi[i] * b;
                        acc[3 + i] += score[i] * b;
                    }
                }
            }
        }
        Ok(())
    }

    fn apply(&mut self, dir: &[f64], l: f64, cfg: &MvExperimentConfig) -> Result<(), ConfigError> {
        match self {
            Agent::Q { value, q, .. } => {
                let mut th = value.theta().to_vec();
                let mut ps = qlearn_core::QApprox::psi(q).to_vec();
                apply_step(&mut th, l * cfg.alpha_theta, &dir[..3])?;
                apply_step(&mut ps, l * cfg.alpha_psi, &dir[3..])?;
                value.set_theta(&th);
                qlearn_core::QApprox::set_psi(q, &ps);
            }
            Agent::Sarsa { qdt, .. } => {
                let mut ps = qdt.psi().to_vec();
                apply_step(&mut ps, l * cfg.alpha_psi, dir)?;
                qdt.set_psi(&ps);
            }
            Agent::Pg { value, policy } => {
                let mut th = value.theta().to_vec();
                let mut ph = policy.phi().to_vec();
                apply_step(&mut th, l * cfg.alpha_theta, &dir[..3])?;
                apply_step(&mut ph, l * cfg.alpha_phi, &dir[3..])?;
                value.set_theta(&th);
                policy.set_phi(&ph);
            }
        }
        Ok(())
    }
}

/// One episode; Brownian increments come from `pool` when given, otherwise from `rng`.
fn rollout(
    model: &MarketModel<f64>,
    policy: &dyn GaussianPolicy<f64>,
    grid: &EpisodeConfig<f64>,
    x0: f64,
    pool: Option<&[f64]>,
    rng: &mut RngStream,
) -> Result<Trajectory<f64>, ConfigError> {
    let k_steps = grid.grid_count;
    let mut st = EnvStepper::new(model, grid.dt, &[x0])?;
    let mut states = Vec::with_capacity(k_steps + 1);
    let mut actions = Vec::with_capacity(k_steps);
    let mut a = [0.0];
    states.push(x0);
    for k in 0..k_steps {
        policy.sample(grid.time_at(k), st.state(), rng, &mut a)?;
        match pool {
            Some(dw) => st.step_with_noise(&a, &dw[k..k + 1])?,
            None => st.step(&a, rng)?,
        };
        actions.push(a[0]);
        states.push(st.state()[0]);
    }
    let h = model.terminal_reward(st.state());
    Ok(Trajectory::new(grid.dt, 1, 1, states, actions, vec![0.0; k_steps], h, DataSource::OnPolicy)?)
}

/// Training data: `pool_years·K` Brownian increments of one step each.
fn training_pool(cfg: &MvExperimentConfig, k_steps: usize, seed: u64, rep: u64) -> Vec<f64> {
    let mut rng = RngStream::new(seed, StreamId::new(rep, POOL_STREAM));
    let mut pool = vec![0.0; cfg.pool_years * k_steps];
    rng.fill_normal(&mut pool, cfg.dt.sqrt());
    pool
}

/// Trains `algo` on one replication's pool and evaluates the learned policy out of sample.
pub fn run_mv(cfg: &MvExperimentConfig, algo: Algo, seed: u64, rep: u64) -> Result<RunRecord, ConfigError> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let market = cfg.market()?;
    let k_steps = grid.grid_count;
    let pool = training_pool(cfg, k_steps, seed, rep);
    let starts = pool.len() - k_steps + 1;
    let mut agent = Agent::new(algo, cfg)?;
    let names = agent.names();
    let mut columns = vec!["episode", "w"];
    columns.extend_from_slice(names);
    let mut trace = Trace::new(&columns);
    let trace_every = (cfg.episodes / cfg.trace_points.max(1)).max(1);
    let schedule = Schedule::InversePower { exponent: cfg.schedule_exponent };
    let mut batch_rng = RngStream::new(seed, StreamId::new(rep, BATCH_STREAM));
    let mut policy_rng = RngStream::new(seed, StreamId::new(rep, POLICY_STREAM));
    let mut w = cfg.z;
    let mut recent = Vec::with_capacity(cfg.m * cfg.batch);
    let mut dir = vec![0.0; names.len()];
    let snapshot = |agent: &Agent, w: f64| {
        let mut p = agent.params();
        p.insert(0, w);
        p
    };
    trace.push([vec![0.0], snapshot(&agent, w)].concat());

    for j in 1..=cfg.episodes {
        let model = market.with_target(w, cfg.z);
        dir.iter_mut().for_each(|d| *d = 0.0);
        let outcome = (|| -> Result<(), ConfigError> {
            for _ in 0..cfg.batch {
                let s = batch_rng.index(starts);
                let traj = rollout(&model, agent.policy(), &grid, cfg.x0, Some(&pool[s..s + k_steps]), &mut policy_rng)?;
                agent.accumulate(&traj, cfg.gamma, &mut dir)?;
                recent.push(traj.final_state()[0]);
            }
            let inv = 1.0 / cfg.batch as f64;
            dir.iter_mut().for_each(|d| *d *= inv);
            agent.apply(&dir, schedule.at(j as f64), cfg)
        })();
        if let Err(e) = outcome {
            let mut params = named(names, &agent.params());
            params.insert("w".into(), w);
            return Ok(RunRecord::diverged(rep, seed, j as f64, e.to_string(), params, trace));
        }
        if j % cfg.m == 0 {
            w = lagrange_update(w, &recent, cfg.alpha_w, cfg.z, cfg.multiplier_rule);
            recent.clear();
            agent.set_w(w);
        }
        if j % trace_every == 0 || j == cfg.episodes {
            trace.push([vec![j as f64], snapshot(&agent, w)].concat());
        }
    }

    let mut params = named(names, &agent.params());
    params.insert("w".into(), w);
    let mut wealth = Vec::with_capacity(cfg.eval_runs);
    let eval_model = market.with_target(w, cfg.z);
    for r in 0..cfg.eval_runs as u64 {
        let mut rng = RngStream::new(seed, StreamId::new(rep, EVAL_STREAM + r));
        match rollout(&eval_model, agent.policy(), &grid, cfg.x0, None, &mut rng) {
            Ok(tr) if tr.final_state()[0].is_finite() => wealth.push(tr.final_state()[0]),
            Ok(_) => return Ok(RunRecord::diverged(rep, seed, cfg.episodes as f64, "non-finite evaluation wealth".into(), params, trace)),
            Err(e) => return Ok(RunRecord::diverged(rep, seed, cfg.episodes as f64, e.to_string(), params, trace)),
        }
    }
    let m = metrics_terminal(&wealth, cfg.x0)?;
    if !m.mean.is_finite() || !m.variance.is_finite() {
        return Ok(RunRecord::diverged(rep, seed, cfg.episodes as f64, "non-finite evaluation metrics".into(), params, trace));
    }
    Ok(RunRecord::ok(rep, seed, Metrics::Terminal(m), params, trace))
}

/// Mean-map slope of a learned policy, `∂ mean / ∂x`.
pub fn learned_slope(record: &RunRecord, algo: Algo) -> Option<f64> {
    let p = &record.params;
    match algo {
        Algo::QlearnMl | Algo::QlearnTd => p.get("psi2").map(|v| -v),
        Algo::Pg => p.get("phi2").map(|v| -v),
        Algo::Sarsa => Some(-p.get("psi2")? * p.get("psi1")?.exp()),
        Algo::QlearnOnline => None,
    }
}
