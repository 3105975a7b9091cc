//! q-learning update engines: martingale loss, offline and online TD with test functions,
//! the ergodic variant and the GMM objective.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::approx::{QApprox, ValueApprox};
use crate::envsim::{Trajectory, Transition};
use crate::error::{Error, Result};
use crate::linalg::SquareMatrix;
use crate::scalar::Real;

/// Parameter magnitude treated as divergence.
pub const PARAM_DIVERGENCE_BOUND: f64 = 1e8;

/// Learning-rate multiplier `l(·)` of an episode index or elapsed time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Schedule {
    Constant,
    /// `l(j) = j^{−p}` for `j ≥ 1`.
    InversePower { exponent: f64 },
    /// `l(t) = 1 / max{1, √log t}`.
    InverseSqrtLog,
}

impl Schedule {
    pub fn at(&self, arg: f64) -> f64 {
        match *self {
            Schedule::Constant => 1.0,
            Schedule::InversePower { exponent } => arg.max(1.0).powf(-exponent),
            Schedule::InverseSqrtLog => {
                if arg <= std::f64::consts::E {
                    1.0
                } else {
                    1.0 / arg.ln().sqrt().max(1.0)
                }
            }
        }
    }
}

/// Inner sum of the martingale-loss `ψ` gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MlInnerSum {
    /// `Σ_{i≥k} e^{−β(t_i−t_k)} ∂q/∂ψ(t_i, x_i, a_i) Δt`.
    #[default]
    Display,
    /// `Σ_{i≥k} ∂q/∂ψ(t_k, x_k, a_k) Δt`, the gradient frozen at `k`.
    Box,
}

/// Where a test function is evaluated: step `k` of a trajectory, or a single transition
/// when learning online (no history available).
#[derive(Debug, Clone, Copy)]
pub struct TestPoint<'a, T> {
    pub k: usize,
    pub t: T,
    pub x: &'a [T],
    pub a: &'a [T],
    /// Observations up to the end of the episode; implementations must only read indices `≤ k`.
    pub history: Option<&'a Trajectory<T>>,
}

pub type TestFn<T> = Arc<dyn Fn(&TestPoint<'_, T>, &mut [T]) + Send + Sync>;

#[derive(Clone, Default)]
pub enum TestFunctions<T> {
    /// `ξ = ∂J/∂θ`, `ζ = ∂q/∂ψ`.
    #[default]
    Gradient,
    Custom { xi: TestFn<T>, zeta: TestFn<T> },
}

impl<T> fmt::Debug for TestFunctions<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestFunctions::Gradient => f.write_str("Gradient"),
            TestFunctions::Custom { .. } => f.write_str("Custom"),
        }
    }
}

impl<T: Real> TestFunctions<T> {
    fn eval<J, Q>(&self, value: &J, q: &Q, p: &TestPoint<'_, T>, xi: &mut [T], zeta: &mut [T])
    where
        J: ValueApprox<T> + ?Sized,
        Q: QApprox<T> + ?Sized,
    {
        match self {
            TestFunctions::Gradient => {
                value.grad_theta(p.t, p.x, xi);
                q.grad_psi(p.t, p.x, p.a, zeta);
            }
            TestFunctions::Custom { xi: fx, zeta: fz } => {
                fx(p, xi);
                fz(p, zeta);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct LearnerConfig<T> {
    pub gamma: T,
    pub alpha_theta: T,
    pub alpha_psi: T,
    pub alpha_v: T,
    pub alpha_w: T,
    pub alpha_phi: T,
    pub schedule: Schedule,
    pub ml_inner_sum: MlInnerSum,
    pub test_functions: TestFunctions<T>,
}

impl<T: Real> LearnerConfig<T> {
    /// Equal base rates `alpha` everywhere, constant schedule, gradient test functions.
    pub fn new(gamma: T, alpha: T) -> Self {
        Self {
            gamma,
            alpha_theta: alpha,
            alpha_psi: alpha,
            alpha_v: alpha,
            alpha_w: alpha,
            alpha_phi: alpha,
            schedule: Schedule::Constant,
            ml_inner_sum: MlInnerSum::Display,
            test_functions: TestFunctions::Gradient,
        }
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn multiplier(&self, arg: f64) -> T {
        T::of(self.schedule.at(arg))
    }
}

/// Raw parameter directions `(Δθ, Δψ, ΔV)` before learning rates are applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Increment<T> {
    pub theta: Vec<T>,
    pub psi: Vec<T>,
    pub v: T,
}

impl<T: Real> Increment<T> {
    pub fn zeros(n_theta: usize, n_psi: usize) -> Self {
        Self { theta: vec![T::zero(); n_theta], psi: vec![T::zero(); n_psi], v: T::zero() }
    }

    pub fn add_assign(&mut self, other: &Self) {
        self.theta.iter_mut().zip(&other.theta).for_each(|(a, &b)| *a += b);
        self.psi.iter_mut().zip(&other.psi).for_each(|(a, &b)| *a += b);
        self.v += other.v;
    }

    pub fn scale(&mut self, s: T) {
        self.theta.iter_mut().for_each(|a| *a *= s);
        self.psi.iter_mut().for_each(|a| *a *= s);
        self.v *= s;
    }
}

/// `δ` of one transition together with the test-function values at its left end.
#[derive(Debug, Clone, PartialEq)]
pub struct TdIncrement<T> {
    pub delta: T,
    pub xi: Vec<T>,
    pub zeta: Vec<T>,
}

fn diverged<T: Real>(v: T) -> bool {
    !v.is_finite() || v.abs() > T::of(PARAM_DIVERGENCE_BOUND)
}

/// `p ← p + rate·dir`, refusing non-finite or exploding results. A zero rate is a no-op.
pub fn apply_step<T: Real>(params: &mut [T], rate: T, dir: &[T]) -> Result<()> {
    if rate == T::zero() {
        return Ok(());
    }
    if params.iter().zip(dir).any(|(&p, &d)| diverged(p + rate * d)) {
        return Err(Error::ParameterDiverged { last_finite: params.iter().map(|v| v.to_f64_lossy()).collect() });
    }
    for (p, &d) in params.iter_mut().zip(dir) {
        *p += rate * d;
    }
    Ok(())
}

/// Applies `l·α` scaled increments to `J` and `q` (and optionally the scalar `V`).
pub fn apply_increment<T, J, Q>(
    value: &mut J,
    q: &mut Q,
    v: Option<&mut T>,
    inc: &Increment<T>,
    cfg: &LearnerConfig<T>,
    l: T,
) -> Result<()>
where
    T: Real,
    J: ValueApprox<T> + ?Sized,
    Q: QApprox<T> + ?Sized,
{
    let mut theta = value.theta().to_vec();
    let mut psi = q.psi().to_vec();
    apply_step(&mut theta, l * cfg.alpha_theta, &inc.theta)?;
    apply_step(&mut psi, l * cfg.alpha_psi, &inc.psi)?;
    if let Some(v) = v {
        let mut vv = [*v];
        apply_step(&mut vv, l * cfg.alpha_v, &[inc.v])?;
        *v = vv[0];
    }
    value.set_theta(&theta);
    q.set_psi(&psi);
    Ok(())
}

/// `J(t_{k+1}, x_{k+1}) − J(t_k, x_k) + r_kΔt − q(t_k, x_k, a_k)Δt − βJ(t_k, x_k)Δt`.
///
/// `next_value` overrides `J(t_{k+1}, x_{k+1})` (the terminal payoff on the last step).
pub fn td_delta<T, J, Q>(tr: &Transition<'_, T>, dt: T, value: &J, q: &Q, beta: T, next_value: Option<T>) -> T
where
    T: Real,
    J: ValueApprox<T> + ?Sized,
    Q: QApprox<T> + ?Sized,
{
    let j0 = value.eval(tr.t, tr.x);
    let j1 = next_value.unwrap_or_else(|| value.eval(tr.t + dt, tr.x_next));
    j1 - j0 + (tr.r - q.eval(tr.t, tr.x, tr.a) - beta * j0) * dt
}

fn require_terminal<T: Real>(traj: &Trajectory<T>) -> Result<T> {
    traj.terminal_payoff()
        .ok_or_else(|| Error::Contract("martingale loss needs a trajectory with a terminal payoff".into()))
}

/// `G_{t_k:T}` for every `k`, by backward recursion.
pub fn martingale_residuals<T, J, Q>(traj: &Trajectory<T>, value: &J, q: &Q, beta: T) -> Result<Vec<T>>
where
    T: Real,
    J: ValueApprox<T> + ?Sized,
    Q: QApprox<T> + ?Sized,
{
    let h = require_terminal(traj)?;
    let dt = traj.dt();
    let disc = (-beta * dt).exp();
    let k_steps = traj.steps();
    let mut g = vec![T::zero(); k_steps];
    let (mut term, mut run) = (h, T::zero());
    for k in (0..k_steps).rev() {
        let tr = traj.transition(k);
        term *= disc;
        run = (tr.r - q.eval(tr.t, tr.x, tr.a)) * dt + disc * run;
        g[k] = term - value.eval(tr.t, tr.x) + run;
    }
    Ok(g)
}

/// `½ Σ_k G²_{t_k:T} Δt`.
pub fn martingale_loss<T, J, Q>(traj: &Trajectory<T>, value: &J, q: &Q, beta: T) -> Result<T>
where
    T: Real,
    J: ValueApprox<T> + ?Sized,
    Q: QApprox<T> + ?Sized,
{
    let g = martingale_residuals(traj, value, q, beta)?;
    Ok(T::half() * g.iter().map(|&v| v * v).sum::<T>() * traj.dt())
}

/// Negative martingale-loss gradient `(Σ ∂J·G·Δt, Σ [inner ∂q sum]·G·Δt)`.
pub fn ml_increment<T, J, Q>(traj: &Trajectory<T>, value: &J, q: &Q, beta: T, inner: MlInnerSum) -> Result<Increment<T>>
where
    T: Real,
    J: ValueApprox<T> + ?Sized,
    Q: QApprox<T> + ?Sized,
{
    let g = martingale_residuals(traj, value, q, beta)?;
    let dt = traj.dt();
    let disc = (-beta * dt).exp();
    let (lt, lp) = (value.n_theta(), q.n_psi());
    let mut inc = Increment::zeros(lt, lp);
    let mut gj = vec![T::zero(); lt];
    let mut gq = vec![T::zero(); lp];
    let mut tail = vec![T::zero(); lp];
    let k_steps = traj.steps();
    for k in (0..k_steps).rev() {
        let tr = traj.transition(k);
        value.grad_theta(tr.t, tr.x, &mut gj);
        q.grad_psi(tr.t, tr.x, tr.a, &mut gq);
        let w = g[k] * dt;
        for (acc, &d) in inc.theta.iter_mut().zip(&gj) {
            *acc += d * w;
        }
        match inner {
            MlInnerSum::Display => {
                for (s, &d) in tail.iter_mut().zip(&gq) {
                    *s = d * dt + disc * *s;
                }
                for (acc, &s) in inc.psi.iter_mut().zip(&tail) {
                    *acc += s * w;
                }
            }
            MlInnerSum::Box => {
                let span = T::of((k_steps - k) as f64) * dt;
                for (acc, &d) in inc.psi.iter_mut().zip(&gq) {
                    *acc += d * span * w;
                }
            }
        }
    }
    Ok(inc)
}

/// One martingale-loss gradient step on a single episode; returns the new `(θ, ψ)`.
pub fn ml_update<T, J, Q>(
    traj: &Trajectory<T>,
    value: &J,
    q: &Q,
    cfg: &LearnerConfig<T>,
    beta: T,
    episode: usize,
) -> Result<(Vec<T>, Vec<T>)>
where
    T: Real,
    J: ValueApprox<T> + ?Sized,
    Q: QApprox<T> + ?Sized,
{
    let inc = ml_increment(traj, value, q, beta, cfg.ml_inner_sum)?;
    step_pair(value, q, &inc, cfg, cfg.multiplier(episode as f64))
}

fn step_pair<T, J, Q>(value: &J, q: &Q, inc: &Increment<T>, cfg: &LearnerConfig<T>, l: T) -> Result<(Vec<T>, Vec<T>)>
where
    T: Real,
    J: ValueApprox<T> + ?Sized,
    Q: QApprox<T> + ?Sized,
{
    let mut theta = value.theta().to_vec();
    let mut psi = q.psi().to_vec();
    apply_step(&mut theta, l * cfg.alpha_theta, &inc.theta)?;
    apply_step(&mut psi, l * cfg.alpha_psi, &inc.psi)?;
    Ok((theta, psi))
}

/// Per-step `δ`, `ξ`, `ζ` along a trajectory; the last step uses the terminal payoff when present.
pub fn td_increments<T, J, Q>(
    traj: &Trajectory<T>,
    value: &J,
    q: &Q,
    tests: &TestFunctions<T>,
    beta: T,
) -> Vec<TdIncrement<T>>
where
    T: Real,
    J: ValueApprox<T> + ?Sized,
    Q: QApprox<T> + ?Sized,
{
    let dt = traj.dt();
    let k_steps = traj.steps();
    traj.transitions()
        .map(|tr| {
            let next = if tr.k + 1 == k_steps { traj.terminal_payoff() } else { None };
            let delta = td_delta(&tr, dt, value, q, beta, next);
            let mut xi = vec![T::zero(); value.n_theta()];
            let mut zeta = vec![T::zero(); q.n_psi()];
            let point = TestPoint { k: tr.k, t: tr.t, x: tr.x, a: tr.a, history: Some(traj) };
            tests.eval(value, q, &point, &mut xi, &mut zeta);
            TdIncrement { delta, xi, zeta }
        })
        .collect()
}

/// `(Σ ξ_i δ_i, Σ ζ_i δ_i)` over one trajectory.
pub fn offline_td_increment<T, J, Q>(
    traj: &Trajectory<T>,
    value: &J,
    q: &Q,
    tests: &TestFunctions<T>,
    beta: T,
) -> Increment<T>
where
    T: Real,
    J: ValueApprox<T> + ?Sized,
    Q: QApprox<T> + ?Sized,
{
    let mut inc = Increment::zeros(value.n_theta(), q.n_psi());
    for td in td_increments(traj, value, q, tests, beta) {
        inc.theta.iter_mut().zip(&td.xi).for_each(|(a, &x)| *a += x * td.delta);
        inc.psi.iter_mut().zip(&td.zeta).for_each(|(a, &z)| *a += z * td.delta);
    }
    inc
}

pub fn offline_td_update<T, J, Q>(
    traj: &Trajectory<T>,
    value: &J,
    q: &Q,
    cfg: &LearnerConfig<T>,
    beta: T,
    episode: usize,
) -> Result<(Vec<T>, Vec<T>)>
where
    T: Real,
    J: ValueApprox<T> + ?Sized,
    Q: QApprox<T> + ?Sized,
{
    let inc = offline_td_increment(traj, value, q, &cfg.test_functions, beta);
    step_pair(value, q, &inc, cfg, cfg.multiplier(episode as f64))
}

/// Single-transition TD update; `next_value` overrides `J(t+Δt, x')` (terminal payoff).
#[allow(clippy::too_many_arguments)]
pub fn online_td_update<T, J, Q>(
    tr: &Transition<'_, T>,
    dt: T,
    value: &J,
    q: &Q,
    cfg: &LearnerConfig<T>,
    beta: T,
    next_value: Option<T>,
    episode: usize,
) -> Result<(Vec<T>, Vec<T>)>
where
    T: Real,
    J: ValueApprox<T> + ?Sized,
    Q: QApprox<T> + ?Sized,
{
    let delta = td_delta(tr, dt, value, q, beta, next_value);
    let mut inc = Increment::zeros(value.n_theta(), q.n_psi());
    let point = TestPoint { k: tr.k, t: tr.t, x: tr.x, a: tr.a, history: None };
    cfg.test_functions.eval(value, q, &point, &mut inc.theta, &mut inc.psi);
    inc.theta.iter_mut().for_each(|v| *v *= delta);
    inc.psi.iter_mut().for_each(|v| *v *= delta);
    step_pair(value, q, &inc, cfg, cfg.multiplier(episode as f64))
}

/// Ergodic `δ = J(x') − J(x) + rΔt − q(x, a)Δt − VΔt`.
pub fn ergodic_delta<T, J, Q>(tr: &Transition<'_, T>, dt: T, value: &J, q: &Q, v: T) -> T
where
    T: Real,
    J: ValueApprox<T> + ?Sized,
    Q: QApprox<T> + ?Sized,
{
    value.eval(tr.t + dt, tr.x_next) - value.eval(tr.t, tr.x) + (tr.r - q.eval(tr.t, tr.x, tr.a) - v) * dt
}

/// One ergodic update at elapsed time `elapsed`; returns `(θ', ψ', V')`.
pub fn ergodic_update<T, J, Q>(
    tr: &Transition<'_, T>,
    dt: T,
    value: &J,
    q: &Q,
    v: T,
    cfg: &LearnerConfig<T>,
    elapsed: f64,
) -> Result<(Vec<T>, Vec<T>, T)>
where
    T: Real,
    J: ValueApprox<T> + ?Sized,
    Q: QApprox<T> + ?Sized,
{
    let mut learner = ErgodicLearner::new(value, q, v, cfg);
    learner.update(value, q, tr, dt, elapsed)?;
    Ok((learner.theta, learner.psi, learner.v))
}

/// Allocation-free driver of the ergodic update over a stream of transitions.
#[derive(Debug, Clone)]
pub struct ErgodicLearner<T> {
    pub theta: Vec<T>,
    pub psi: Vec<T>,
    pub v: T,
    cfg: LearnerConfig<T>,
    xi: Vec<T>,
    zeta: Vec<T>,
}

impl<T: Real> ErgodicLearner<T> {
    pub fn new<J, Q>(value: &J, q: &Q, v: T, cfg: &LearnerConfig<T>) -> Self
    where
        J: ValueApprox<T> + ?Sized,
        Q: QApprox<T> + ?Sized,
    {
        Self {
            theta: value.theta().to_vec(),
            psi: q.psi().to_vec(),
            v,
            cfg: cfg.clone(),
            xi: vec![T::zero(); value.n_theta()],
            zeta: vec![T::zero(); q.n_psi()],
        }
    }

    pub fn config(&self) -> &LearnerConfig<T> {
        &self.cfg
    }

    /// Updates the learner's own parameters from one transition evaluated with `value` and `q`.
    /// Returns `δ`.
    pub fn update<J, Q>(&mut self, value: &J, q: &Q, tr: &Transition<'_, T>, dt: T, elapsed: f64) -> Result<T>
    where
        J: ValueApprox<T> + ?Sized,
        Q: QApprox<T> + ?Sized,
    {
        let delta = ergodic_delta(tr, dt, value, q, self.v);
        let point = TestPoint { k: tr.k, t: tr.t, x: tr.x, a: tr.a, history: None };
        self.cfg.test_functions.eval(value, q, &point, &mut self.xi, &mut self.zeta);
        let l = self.cfg.multiplier(elapsed);
        for d in self.xi.iter_mut().chain(self.zeta.iter_mut()) {
            *d *= delta;
        }
        apply_step(&mut self.theta, l * self.cfg.alpha_theta, &self.xi)?;
        let mut vv = [self.v];
        apply_step(&mut vv, l * self.cfg.alpha_v, &[delta])?;
        self.v = vv[0];
        apply_step(&mut self.psi, l * self.cfg.alpha_psi, &self.zeta)?;
        Ok(delta)
    }

    /// [`Self::update`] followed by writing the new parameters into `value` and `q`.
    pub fn step<J, Q>(&mut self, value: &mut J, q: &mut Q, tr: &Transition<'_, T>, dt: T, elapsed: f64) -> Result<T>
    where
        J: ValueApprox<T> + ?Sized,
        Q: QApprox<T> + ?Sized,
    {
        let delta = self.update(value, q, tr, dt, elapsed)?;
        value.set_theta(&self.theta);
        q.set_psi(&self.psi);
        Ok(delta)
    }
}

/// Empirical moment vectors `(Ê[Σ ξδ], Ê[Σ ζδ])` over a batch.
pub fn gmm_moments<T, J, Q>(batch: &[Trajectory<T>], value: &J, q: &Q, tests: &TestFunctions<T>, beta: T) -> (Vec<T>, Vec<T>)
where
    T: Real,
    J: ValueApprox<T> + ?Sized,
    Q: QApprox<T> + ?Sized,
{
    let mut inc = Increment::zeros(value.n_theta(), q.n_psi());
    for traj in batch {
        inc.add_assign(&offline_td_increment(traj, value, q, tests, beta));
    }
    inc.scale(T::one() / T::of(batch.len().max(1) as f64));
    (inc.theta, inc.psi)
}

/// `(m_θᵀ A_θ m_θ, m_ψᵀ A_ψ m_ψ)`.
#[allow(clippy::too_many_arguments)]
pub fn gmm_objective<T, J, Q>(
    batch: &[Trajectory<T>],
    value: &J,
    q: &Q,
    tests: &TestFunctions<T>,
    beta: T,
    a_theta: &SquareMatrix<T>,
    a_psi: &SquareMatrix<T>,
) -> Result<(T, T)>
where
    T: Real,
    J: ValueApprox<T> + ?Sized,
    Q: QApprox<T> + ?Sized,
{
    a_theta.cholesky()?;
    a_psi.cholesky()?;
    let (mt, mp) = gmm_moments(batch, value, q, tests, beta);
    Ok((a_theta.quad_form(&mt), a_psi.quad_form(&mp)))
}

/// Weighting matrices `(Ê[Σ ξξᵀ Δt])⁻¹` and `(Ê[Σ ζζᵀ Δt])⁻¹`.
pub fn gmm_weighting<T, J, Q>(
    batch: &[Trajectory<T>],
    value: &J,
    q: &Q,
    tests: &TestFunctions<T>,
    beta: T,
) -> Result<(SquareMatrix<T>, SquareMatrix<T>)>
where
    T: Real,
    J: ValueApprox<T> + ?Sized,
    Q: QApprox<T> + ?Sized,
{
    let (lt, lp) = (value.n_theta(), q.n_psi());
    let mut st = SquareMatrix::zeros(lt);
    let mut sp = SquareMatrix::zeros(lp);
    let norm = T::one() / T::of(batch.len().max(1) as f64);
    for traj in batch {
        let dt = traj.dt();
        for td in td_increments(traj, value, q, tests, beta) {
            for i in 0..lt {
                for j in 0..lt {
                    st.set(i, j, st.get(i, j) + td.xi[i] * td.xi[j] * dt * norm);
                }
            }
            for i in 0..lp {
                for j in 0..lp {
                    sp.set(i, j, sp.get(i, j) + td.zeta[i] * td.zeta[j] * dt * norm);
                }
            }
        }
    }
    Ok((st.cholesky()?.inverse(), sp.cholesky()?.inverse()))
}
