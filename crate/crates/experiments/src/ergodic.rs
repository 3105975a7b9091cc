//! Ergodic LQ runs on a single long trajectory, on-policy or from a behavior stream.

use serde::{Deserialize, Serialize};

use qlearn_core::approx::{lq_q, lq_value, FixedGaussian, LqQ, LqValue};
use qlearn_core::baselines::{qdt_lq_preset, QdtLq};
use qlearn_core::envsim::{builtin_lq_env, EnvStepper, LqParams, Transition};
use qlearn_core::{
    Discount, ErgodicLearner, GaussianPolicy, LearnerConfig, PgLearner, QApprox, QdtApprox, RngStream, SarsaGrad,
    SarsaLearner, SarsaNext, Schedule, ScoreFunction, StreamId, ValueApprox,
};

use crate::config::{Algo, ConfigError};
use crate::metrics::RunningAverage;
use crate::record::{named, ErgodicMetrics, Metrics, RunRecord, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BehaviorMode {
    /// Actions drawn from the policy being learned.
    OnPolicy,
    /// Actions drawn from a fixed Gaussian behavior policy.
    OffPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicConfig {
    pub params: LqParams<f64>,
    pub gamma: f64,
    pub alpha: f64,
    pub dt: f64,
    pub horizon: f64,
    pub x0: f64,
    pub mode: BehaviorMode,
    pub behavior_mean: f64,
    pub behavior_variance: f64,
    pub sarsa_grad: SarsaGrad,
    pub trace_points: u64,
    pub reward_points: u64,
}

impl Default for ErgodicConfig {
    fn default() -> Self {
        Self {
            params: LqParams::benchmark(),
            gamma: 0.1,
            alpha: 0.001,
            dt: 0.1,
            horizon: 1e5,
            x0: 0.0,
            mode: BehaviorMode::OnPolicy,
            behavior_mean: 0.0,
            behavior_variance: 1.0,
            sarsa_grad: SarsaGrad::Raw,
            trace_points: 1000,
            reward_points: 1000,
        }
    }
}

impl ErgodicConfig {
    pub fn steps(&self) -> u64 {
        (self.horizon / self.dt).round() as u64
    }

    pub fn learner_config(&self) -> LearnerConfig<f64> {
        LearnerConfig::new(self.gamma, self.alpha).with_schedule(Schedule::InverseSqrtLog)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.dt > 0.0 && self.horizon >= self.dt && self.gamma > 0.0 && self.alpha >= 0.0) {
            return Err(ConfigError::Invalid("need dt > 0, horizon ≥ dt, gamma > 0, alpha ≥ 0".into()));
        }
        if !(self.behavior_variance > 0.0) {
            return Err(ConfigError::Invalid("behavior variance must be positive".into()));
        }
        if !self.params.is_finite() {
            return Err(ConfigError::Invalid("LQ coefficients must be finite".into()));
        }
        Ok(())
    }

    /// Every algorithm starts from `N(0, 1)`.
    pub fn initial_variance(&self) -> f64 {
        1.0
    }
}

enum Agent {
    Q { value: LqValue<f64>, q: LqQ<f64>, learner: ErgodicLearner<f64> },
    Sarsa { qdt: QdtLq<f64>, learner: SarsaLearner<f64> },
    Pg { value: LqValue<f64>, policy: LqQ<f64>, learner: PgLearner<f64> },
}

impl Agent {
    fn new(algo: Algo, cfg: &ErgodicConfig) -> Result<Self, ConfigError> {
        let lc = cfg.learner_config();
        let g = cfg.gamma;
        let log_var = (cfg.initial_variance() / g).ln();
        Ok(match algo {
            Algo::QlearnOnline => {
                let (value, q) = (lq_value([0.0; 2]), lq_q([0.0, 0.0, log_var], g));
                let learner = ErgodicLearner::new(&value, &q, 0.0, &lc);
                Agent::Q { value, q, learner }
            }
            Algo::Sarsa => {
                let qdt = qdt_lq_preset([0.0, 0.0, log_var - cfg.dt.ln(), 0.0, 0.0], g, cfg.dt);
                let learner = SarsaLearner::new(&qdt, 0.0, &lc, cfg.sarsa_grad);
                Agent::Sarsa { qdt, learner }
            }
            Algo::Pg => {
                let (value, policy) = (lq_value([0.0; 2]), lq_q([0.0, 0.0, log_var], g));
                let learner = PgLearner::new(&value, &policy, 0.0, &lc);
                Agent::Pg { value, policy, learner }
            }
            Algo::QlearnMl | Algo::QlearnTd => {
                return Err(ConfigError::Invalid(format!("{algo} is an episodic algorithm; use qlearn-online")))
            }
        })
    }

    fn names(&self) -> &'static [&'static str] {
        match self {
            Agent::Q { .. } => &["psi1", "psi2", "psi3", "theta1", "theta2", "v"],
            Agent::Sarsa { .. } => &["psi1", "psi2", "psi3", "psi4", "psi5", "v"],
            Agent::Pg { .. } => &["phi1", "phi2", "phi3", "theta1", "theta2", "v"],
        }
    }

    fn params(&self) -> Vec<f64> {
        match self {
            Agent::Q { value, q, learner } => [q.psi(), value.theta(), &[learner.v]].concat(),
            Agent::Sarsa { qdt, learner } => [qdt.psi(), &[learner.v]].concat(),
            Agent::Pg { value, policy, learner } => [policy.phi(), value.theta(), &[learner.v]].concat(),
        }
    }

    fn policy(&self) -> &dyn GaussianPolicy<f64> {
        match self {
            Agent::Q { q, .. } => q,
            Agent::Sarsa { qdt, .. } => qdt,
            Agent::Pg { policy, .. } => policy,
        }
    }

    fn policy_variance(&self) -> f64 {
        match self {
            Agent::Q { q, .. } => q.variance_scalar(),
            Agent::Sarsa { qdt, .. } => qdt.variance_scalar(),
            Agent::Pg { policy, .. } => policy.variance_scalar(),
        }
    }
}

/// Runs one replication of `algo` for `cfg.horizon` time units.
pub fn run_ergodic(cfg: &ErgodicConfig, algo: Algo, seed: u64, rep: u64) -> Result<RunRecord, ConfigError> {
    cfg.validate()?;
    let env = builtin_lq_env(cfg.params);
    let behavior = FixedGaussian::scalar(cfg.behavior_mean, cfg.behavior_variance)?;
    let mut agent = Agent::new(algo, cfg)?;
    let names = agent.names();
    let mut columns = vec!["time"];
    columns.extend_from_slice(names);
    let mut trace = Trace::new(&columns);
    let steps = cfg.steps();
    let trace_every = (steps / cfg.trace_points.max(1)).max(1);
    let on_policy = cfg.mode == BehaviorMode::OnPolicy;
    let mut avg = RunningAverage::new(steps, cfg.reward_points, cfg.dt);
    let mut rng = RngStream::new(seed, StreamId::new(rep, 0));
    let dt = cfg.dt;
    let mut st = EnvStepper::new(&env, dt, &[cfg.x0])?;
    let (mut a, mut a_next) = ([0.0], [0.0]);
    let (mut x, mut xn) = ([cfg.x0], [cfg.x0]);
    trace.push([vec![0.0], agent.params()].concat());

    let draw = |agent: &Agent, t: f64, x: &[f64], rng: &mut RngStream, out: &mut [f64]| {
        if on_policy {
            agent.policy().sample(t, x, rng, out)
        } else {
            behavior.sample(t, x, rng, out)
        }
    };
    draw(&agent, 0.0, &x, &mut rng, &mut a)?;

    for k in 0..steps {
        let t = k as f64 * dt;
        let elapsed = t + dt;
        let outcome = (|| -> Result<(), ConfigError> {
            x[0] = st.state()[0];
            let r = st.step(&a, &mut rng)?;
            xn[0] = st.state()[0];
            if on_policy {
                avg.push(r);
            }
            let tr = Transition { k: k as usize, t, x: &x, a: &a, r, x_next: &xn };
            match &mut agent {
                Agent::Q { value, q, learner } => {
                    learner.step(value, q, &tr, dt, elapsed)?;
                }
                Agent::Sarsa { .. } => {
                    // a' comes from the policy that generated a.
                    draw(&agent, elapsed, &xn, &mut rng, &mut a_next)?;
                    if let Agent::Sarsa { qdt, learner } = &mut agent {
                        learner.step(qdt, &tr, SarsaNext::Action(&a_next), Discount::Average(0.0), elapsed)?;
                    }
                    return Ok(());
                }
                Agent::Pg { value, policy, learner } => {
                    learner.step(value, policy, &tr, dt, Discount::Average(0.0), None, elapsed)?;
                }
            }
            draw(&agent, elapsed, &xn, &mut rng, &mut a_next)?;
            Ok(())
        })();
        if let Err(e) = outcome {
            let mut rec = RunRecord::diverged(rep, seed, t, e.to_string(), named(names, &agent.params()), trace);
            rec.rewards = avg.series;
            return Ok(rec);
        }
        a = a_next;
        if (k + 1) % trace_every == 0 || k + 1 == steps {
            trace.push([vec![elapsed], agent.params()].concat());
        }
    }

    let p = agent.params();
    let metrics = ErgodicMetrics {
        slope: p[0],
        intercept: p[1],
        policy_variance: agent.policy_variance(),
        v: *p.last().unwrap_or(&f64::NAN),
        average_reward: on_policy.then(|| avg.value()),
    };
    let mut rec = RunRecord::ok(rep, seed, Metrics::Ergodic(metrics), named(names, &p), trace);
    rec.rewards = avg.series;
    Ok(rec)
}
