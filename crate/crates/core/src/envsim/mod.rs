//! Control problems as controlled SDEs, simulated with explicit Euler–Maruyama.

mod models;
mod noise;
mod trajectory;

pub use models::{builtin_lq_env, builtin_mv_env, FnModel, LagrangeTarget, LqModel, LqParams, MarketModel};
pub use noise::{RngStream, StreamId};
pub use trajectory::{DataSource, Trajectory, TrajectoryMeta, Transition};

use crate::error::{Error, Result};
use crate::scalar::{to_f64_vec, Real};

/// States beyond this magnitude abort the episode.
pub const DIVERGENCE_BOUND: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ProblemKind {
    /// Finite horizon with terminal payoff and exponential discounting.
    Episodic,
    /// Long-run average reward; no terminal payoff, no discounting.
    Ergodic,
}

/// Drift `b`, diffusion `σ`, running reward `r`, terminal payoff `h` and discount `β`
/// of one classical control problem.
pub trait ControlModel<T: Real>: Send + Sync {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn kind(&self) -> ProblemKind;

    fn drift(&self, t: T, x: &[T], a: &[T], out: &mut [T]);

    /// Row-major `d × n` diffusion matrix.
    fn diffusion(&self, t: T, x: &[T], a: &[T], out: &mut [T]);

    /// Reward per unit time.
    fn reward_rate(&self, t: T, x: &[T], a: &[T]) -> T;

    fn terminal_reward(&self, x: &[T]) -> Option<T>;

    fn discount(&self) -> T;
}

/// Anything that can draw an action at `(t, x)`.
pub trait SamplingPolicy<T: Real> {
    fn action_dim(&self) -> usize;
    fn sample_action(&self, t: T, x: &[T], rng: &mut RngStream, out: &mut [T]) -> Result<()>;
}

/// Time grid and run sizes for episodic simulation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpisodeConfig<T> {
    pub horizon: T,
    pub dt: T,
    pub grid_count: usize,
    pub episode_count: usize,
    pub seed: u64,
    pub batch_size: usize,
}

impl<T: Real> EpisodeConfig<T> {
    /// Grid with `K = round(T/Δt)`; rejects horizons that are not a whole number of steps.
    pub fn new(horizon: T, dt: T) -> Result<Self> {
        if !(dt > T::zero()) || !dt.is_finite() {
            return Err(Error::InvalidConfig(format!("time step must be positive, got {dt}")));
        }
        if !(horizon > T::zero()) || !horizon.is_finite() {
            return Err(Error::InvalidConfig(format!("horizon must be positive, got {horizon}")));
        }
        let k = (horizon / dt).round();
        let tol = T::of(1e-12) * horizon;
        if (k * dt - horizon).abs() >= tol.max(T::epsilon() * horizon * T::of(4.0)) {
            return Err(Error::InvalidConfig(format!(
                "horizon {horizon} is not an integer multiple of dt {dt}"
            )));
        }
        let grid_count = k
            .to_usize()
            .ok_or_else(|| Error::InvalidConfig("grid count out of range".into()))?;
        Ok(Self { horizon, dt, grid_count, episode_count: 1, seed: 0, batch_size: 1 })
    }

    /// Grid of exactly `steps` steps; `steps = 0` is representable but rejected by the simulators.
    pub fn from_steps(dt: T, steps: usize) -> Self {
        Self {
            horizon: dt * T::of(steps as f64),
            dt,
            grid_count: steps,
            episode_count: 1,
            seed: 0,
            batch_size: 1,
        }
    }

    pub fn with_episodes(mut self, n: usize) -> Self {
        self.episode_count = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_batch(mut self, batch: usize) -> Self {
        self.batch_size = batch.max(1);
        self
    }

    #[inline]
    pub fn time_at(&self, k: usize) -> T {
        T::of(k as f64) * self.dt
    }
}

/// Scratch buffers for one Euler–Maruyama step.
#[derive(Debug, Clone)]
pub struct StepScratch<T> {
    drift: Vec<T>,
    diffusion: Vec<T>,
}

impl<T: Real> StepScratch<T> {
    pub fn for_model<M: ControlModel<T> + ?Sized>(model: &M) -> Self {
        let (d, n) = (model.state_dim(), model.noise_dim());
        Self { drift: vec![T::zero(); d], diffusion: vec![T::zero(); d * n] }
    }
}

/// In-place Euler–Maruyama step: writes `x + b·dt + σ·dW` into `x_next`, returns `r(t,x,a)`.
#[inline]
pub fn euler_step_into<T: Real, M: ControlModel<T> + ?Sized>(
    model: &M,
    t: T,
    x: &[T],
    a: &[T],
    dt: T,
    dw: &[T],
    scratch: &mut StepScratch<T>,
    x_next: &mut [T],
) -> Result<T> {
    let (d, n) = (model.state_dim(), model.noise_dim());
    model.drift(t, x, a, &mut scratch.drift);
    model.diffusion(t, x, a, &mut scratch.diffusion);
    let reward = model.reward_rate(t, x, a);
    let bound = T::of(DIVERGENCE_BOUND);
    let mut ok = reward.is_finite();
    for i in 0..d {
        let mut v = x[i] + scratch.drift[i] * dt;
        for j in 0..n {
            v += scratch.diffusion[i * n + j] * dw[j];
        }
        ok &= v.is_finite() && v.abs() <= bound;
        x_next[i] = v;
    }
    if !ok {
        return Err(Error::SimulationDiverged {
            t: t.to_f64_lossy(),
            x: to_f64_vec(x),
            a: to_f64_vec(a),
        });
    }
    Ok(reward)
}

/// One Euler–Maruyama transition with caller-supplied Brownian increment `dW`.
pub fn step_euler<T: Real, M: ControlModel<T> + ?Sized>(
    model: &M,
    t: T,
    x: &[T],
    a: &[T],
    dt: T,
    dw: &[T],
) -> Result<(Vec<T>, T)> {
    if !(dt > T::zero()) {
        return Err(Error::InvalidConfig(format!("time step must be positive, got {dt}")));
    }
    if dw.len() != model.noise_dim() || x.len() != model.state_dim() || a.len() != model.action_dim() {
        return Err(Error::InvalidConfig("dimension mismatch in Euler step".into()));
    }
    let mut scratch = StepScratch::for_model(model);
    let mut next = vec![T::zero(); model.state_dim()];
    let r = euler_step_into(model, t, x, a, dt, dw, &mut scratch, &mut next)?;
    Ok((next, r))
}

/// Incremental environment: `(x', r) = Environment_dt(t, x, a)` with internal time keeping.
#[derive(Debug, Clone)]
pub struct EnvStepper<'m, T: Real, M: ?Sized> {
    model: &'m M,
    dt: T,
    sqrt_dt: T,
    k: usize,
    x: Vec<T>,
    x_next: Vec<T>,
    dw: Vec<T>,
    scratch: StepScratch<T>,
}

impl<'m, T: Real, M: ControlModel<T> + ?Sized> EnvStepper<'m, T, M> {
    pub fn new(model: &'m M, dt: T, x0: &[T]) -> Result<Self> {
        if !(dt > T::zero()) {
            return Err(Error::InvalidConfig(format!("time step must be positive, got {dt}")));
        }
        if x0.len() != model.state_dim() || !x0.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig("initial state must be finite and match state_dim".into()));
        }
        Ok(Self {
            model,
            dt,
            sqrt_dt: dt.sqrt(),
            k: 0,
            x: x0.to_vec(),
            x_next: x0.to_vec(),
            dw: vec![T::zero(); model.noise_dim()],
            scratch: StepScratch::for_model(model),
        })
    }

    pub fn model(&self) -> &'m M {
        self.model
    }

    pub fn steps_taken(&self) -> usize {
        self.k
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn time(&self) -> T {
        T::of(self.k as f64) * self.dt
    }

    pub fn state(&self) -> &[T] {
        &self.x
    }

    /// Advances one step with a fresh `dW ~ N(0, dt·I)`; returns the reward rate at the pre-step point.
    pub fn step(&mut self, a: &[T], rng: &mut RngStream) -> Result<T> {
        let scale = self.sqrt_dt;
        rng.fill_normal(&mut self.dw, scale);
        let r = self.advance_with(a)?;
        self.swap();
        Ok(r)
    }

    /// Advances one step with the supplied Brownian increment.
    pub fn step_with_noise(&mut self, a: &[T], dw: &[T]) -> Result<T> {
        self.dw.copy_from_slice(dw);
        let r = self.advance_with(a)?;
        self.swap();
        Ok(r)
    }

    fn advance_with(&mut self, a: &[T]) -> Result<T> {
        let t = self.time();
        euler_step_into(self.model, t, &self.x, a, self.dt, &self.dw, &mut self.scratch, &mut self.x_next)
    }

    fn swap(&mut self) {
        std::mem::swap(&mut self.x, &mut self.x_next);
        self.k += 1;
    }

    /// State before the most recent step (valid after at least one step).
    pub fn previous_state(&self) -> &[T] {
        &self.x_next
    }
}

fn rollout<T, M, P>(
    model: &M,
    policy: &P,
    cfg: &EpisodeConfig<T>,
    x0: &[T],
    rng: &mut RngStream,
    source: DataSource,
) -> Result<Trajectory<T>>
where
    T: Real,
    M: ControlModel<T> + ?Sized,
    P: SamplingPolicy<T> + ?Sized,
{
    let k_steps = cfg.grid_count;
    if k_steps == 0 {
        return Err(Error::InvalidConfig("episode must have at least one step (K > 0)".into()));
    }
    let (d, m) = (model.state_dim(), model.action_dim());
    if policy.action_dim() != m {
        return Err(Error::InvalidConfig("policy action dimension does not match model".into()));
    }
    let mut stepper = EnvStepper::new(model, cfg.dt, x0)?;
    let mut states = Vec::with_capacity((k_steps + 1) * d);
    let mut actions = Vec::with_capacity(k_steps * m);
    let mut rewards = Vec::with_capacity(k_steps);
    let mut a = vec![T::zero(); m];
    states.extend_from_slice(x0);
    for k in 0..k_steps {
        let t = cfg.time_at(k);
        policy.sample_action(t, stepper.state(), rng, &mut a)?;
        let r = stepper.step(&a, rng)?;
        actions.extend_from_slice(&a);
        rewards.push(r);
        states.extend_from_slice(stepper.state());
    }
    let terminal = model.terminal_reward(stepper.state());
    Trajectory::new(cfg.dt, d, m, states, actions, rewards, terminal, source)
}

/// On-policy episode: actions drawn from `policy`, one Euler step per grid point.
pub fn simulate_episode<T, M, P>(
    model: &M,
    policy: &P,
    cfg: &EpisodeConfig<T>,
    x0: &[T],
    rng: &mut RngStream,
) -> Result<Trajectory<T>>
where
    T: Real,
    M: ControlModel<T> + ?Sized,
    P: SamplingPolicy<T> + ?Sized,
{
    rollout(model, policy, cfg, x0, rng, DataSource::OnPolicy)
}

/// Observation stream generated by a behavior policy; learners treat its actions as given data.
pub fn make_behavior_stream<T, M, P>(
    model: &M,
    behavior: &P,
    cfg: &EpisodeConfig<T>,
    x0: &[T],
    rng: &mut RngStream,
) -> Result<Trajectory<T>>
where
    T: Real,
    M: ControlModel<T> + ?Sized,
    P: SamplingPolicy<T> + ?Sized,
{
    rollout(model, behavior, cfg, x0, rng, DataSource::OffPolicy)
}
