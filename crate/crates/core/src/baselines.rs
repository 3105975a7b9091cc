//! Comparison algorithms: SARSA on the Δt-parameterized Q-function and the
//! entropy-regularized policy-gradient actor–critic.

use serde::{Deserialize, Serialize};

use crate::approx::{GaussianPolicy, ScoreFunction, ValueApprox};
use crate::envsim::{RngStream, Transition};
use crate::error::Result;
use crate::learners::{apply_step, LearnerConfig};
use crate::linalg::SquareMatrix;
use crate::scalar::Real;

/// Parametric `Q_Δt^ψ(t, x, a)` whose Gibbs policy `∝ exp{Q/(γΔt)}` is Gaussian.
pub trait QdtApprox<T: Real>: GaussianPolicy<T> {
    fn n_psi(&self) -> usize;
    fn psi(&self) -> &[T];
    fn set_psi(&mut self, psi: &[T]);
    fn gamma(&self) -> T;
    fn dt(&self) -> T;

    fn eval(&self, t: T, x: &[T], a: &[T]) -> T;

    /// Splits `∂Q/∂ψ` into the part coming from the action-free terms and the part
    /// coming from the action-dependent (advantage) terms.
    fn grad_psi_parts(&self, t: T, x: &[T], a: &[T], value: &mut [T], advantage: &mut [T]);

    fn grad_psi(&self, t: T, x: &[T], a: &[T], out: &mut [T]) {
        let mut adv = vec![T::zero(); out.len()];
        self.grad_psi_parts(t, x, a, out, &mut adv);
        out.iter_mut().zip(adv).for_each(|(o, g)| *o += g);
    }
}

/// Mean–variance form
/// `Q = −e^{−ψ₃(T−t)}[(x−w)² + ψ₂a(x−w) + ½e^{−ψ₁}a²] + ψ₄(t²−T²) + ψ₅(t−T) + (w−z)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct QdtMv<T> {
    psi: [T; 5],
    pub w: T,
    pub z: T,
    pub horizon: T,
    pub gamma: T,
    pub dt: T,
}

impl<T: Real> QdtMv<T> {
    pub fn new(psi: [T; 5], w: T, z: T, horizon: T, gamma: T, dt: T) -> Self {
        assert!(gamma > T::zero() && dt > T::zero(), "temperature and step must be positive");
        Self { psi, w, z, horizon, gamma, dt }
    }

    #[inline]
    fn decay(&self, t: T) -> T {
        (-self.psi[2] * (self.horizon - t)).exp()
    }

    #[inline]
    pub fn mean_scalar(&self, x: T) -> T {
        -self.psi[1] * self.psi[0].exp() * (x - self.w)
    }

    #[inline]
    pub fn variance_scalar(&self, t: T) -> T {
        self.gamma * self.dt * (self.psi[2] * (self.horizon - t) + self.psi[0]).exp()
    }
}

pub fn qdt_mv_preset<T: Real>(psi: [T; 5], w: T, z: T, horizon: T, gamma: T, dt: T) -> QdtMv<T> {
    QdtMv::new(psi, w, z, horizon, gamma, dt)
}

impl<T: Real> QdtApprox<T> for QdtMv<T> {
    fn n_psi(&self) -> usize {
        5
    }
    fn psi(&self) -> &[T] {
        &self.psi
    }
    fn set_psi(&mut self, psi: &[T]) {
        self.psi.copy_from_slice(psi);
    }
    fn gamma(&self) -> T {
        self.gamma
    }
    fn dt(&self) -> T {
        self.dt
    }

    fn eval(&self, t: T, x: &[T], a: &[T]) -> T {
        let (dx, a) = (x[0] - self.w, a[0]);
        let big_t = self.horizon;
        let inner = dx * dx + self.psi[1] * a * dx + T::half() * (-self.psi[0]).exp() * a * a;
        let wz = self.w - self.z;
        -self.decay(t) * inner + self.psi[3] * (t * t - big_t * big_t) + self.psi[4] * (t - big_t) + wz * wz
    }

    fn grad_psi_parts(&self, t: T, x: &[T], a: &[T], value: &mut [T], advantage: &mut [T]) {
        let (dx, a) = (x[0] - self.w, a[0]);
        let (e, tau) = (self.decay(t), self.horizon - t);
        let quad = T::half() * (-self.psi[0]).exp() * a * a;
        value[0] = T::zero();
        value[1] = T::zero();
        value[2] = tau * e * dx * dx;
        value[3] = t * t - self.horizon * self.horizon;
        value[4] = t - self.horizon;
        advantage[0] = e * quad;
        advantage[1] = -e * a * dx;
        advantage[2] = tau * e * (self.psi[1] * a * dx + quad);
        advantage[3] = T::zero();
        advantage[4] = T::zero();
    }
}

impl<T: Real> GaussianPolicy<T> for QdtMv<T> {
    fn action_dim(&self) -> usize {
        1
    }
    fn mean(&self, _t: T, x: &[T], out: &mut [T]) {
        out[0] = self.mean_scalar(x[0]);
    }
    fn variance(&self, t: T, _x: &[T]) -> SquareMatrix<T> {
        SquareMatrix::scalar(self.variance_scalar(t))
    }
    fn log_density(&self, t: T, x: &[T], a: &[T]) -> Result<T> {
        Ok(scalar_log_density(a[0], self.mean_scalar(x[0]), self.variance_scalar(t)))
    }
    fn sample(&self, t: T, x: &[T], rng: &mut RngStream, out: &mut [T]) -> Result<()> {
        let xi = T::of(rng.standard_normal());
        out[0] = self.mean_scalar(x[0]) + self.variance_scalar(t).sqrt() * xi;
        Ok(())
    }
}

/// Ergodic LQ form `Q = −(e^{−ψ₃}/2)(a − ψ₁x − ψ₂)² + ψ₄x² + ψ₅x`.
#[derive(Debug, Clone, PartialEq)]
pub struct QdtLq<T> {
    psi: [T; 5],
    pub gamma: T,
    pub dt: T,
}

impl<T: Real> QdtLq<T> {
    pub fn new(psi: [T; 5], gamma: T, dt: T) -> Self {
        assert!(gamma > T::zero() && dt > T::zero(), "temperature and step must be positive");
        Self { psi, gamma, dt }
    }

    #[inline]
    pub fn mean_scalar(&self, x: T) -> T {
        self.psi[0] * x + self.psi[1]
    }

    #[inline]
    pub fn variance_scalar(&self) -> T {
        self.gamma * self.dt * self.psi[2].exp()
    }
}

pub fn qdt_lq_preset<T: Real>(psi: [T; 5], gamma: T, dt: T) -> QdtLq<T> {
    QdtLq::new(psi, gamma, dt)
}

impl<T: Real> QdtApprox<T> for QdtLq<T> {
    fn n_psi(&self) -> usize {
        5
    }
    fn psi(&self) -> &[T] {
        &self.psi
    }
    fn set_psi(&mut self, psi: &[T]) {
        self.psi.copy_from_slice(psi);
    }
    fn gamma(&self) -> T {
        self.gamma
    }
    fn dt(&self) -> T {
        self.dt
    }

    fn eval(&self, _t: T, x: &[T], a: &[T]) -> T {
        let x = x[0];
        let u = a[0] - self.mean_scalar(x);
        -T::half() * (-self.psi[2]).exp() * u * u + self.psi[3] * x * x + self.psi[4] * x
    }

    fn grad_psi_parts(&self, _t: T, x: &[T], a: &[T], value: &mut [T], advantage: &mut [T]) {
        let x = x[0];
        let u = a[0] - self.mean_scalar(x);
        let k = (-self.psi[2]).exp();
        value[..3].fill(T::zero());
        value[3] = x * x;
        value[4] = x;
        advantage[0] = k * u * x;
        advantage[1] = k * u;
        advantage[2] = T::half() * k * u * u;
        advantage[3] = T::zero();
        advantage[4] = T::zero();
    }
}

impl<T: Real> GaussianPolicy<T> for QdtLq<T> {
    fn action_dim(&self) -> usize {
        1
    }
    fn mean(&self, _t: T, x: &[T], out: &mut [T]) {
        out[0] = self.mean_scalar(x[0]);
    }
    fn variance(&self, _t: T, _x: &[T]) -> SquareMatrix<T> {
        SquareMatrix::scalar(self.variance_scalar())
    }
    fn log_density(&self, _t: T, x: &[T], a: &[T]) -> Result<T> {
        Ok(scalar_log_density(a[0], self.mean_scalar(x[0]), self.variance_scalar()))
    }
    fn sample(&self, _t: T, x: &[T], rng: &mut RngStream, out: &mut [T]) -> Result<()> {
        let xi = T::of(rng.standard_normal());
        out[0] = self.mean_scalar(x[0]) + self.variance_scalar().sqrt() * xi;
        Ok(())
    }
}

#[inline]
fn scalar_log_density<T: Real>(a: T, mean: T, var: T) -> T {
    let u = a - mean;
    -T::half() * (u * u / var + var.ln() + T::ln_two_pi())
}

/// How the one-step residual is discounted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Discount<T> {
    /// Episodic or discounted: subtract `β·(·)·Δt`.
    Rate(T),
    /// Ergodic: subtract `V·Δt`; `V` is learned alongside.
    Average(T),
}

/// Which gradient multiplies the SARSA residual in the ψ update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SarsaGrad {
    /// `∂Q/∂ψ` as is.
    #[default]
    Raw,
    /// Action-dependent part divided by `Δt`, so it scales like `∂q/∂ψ`.
    Advantage,
}

/// Right end of a SARSA transition.
#[derive(Debug, Clone, Copy)]
pub enum SarsaNext<'a, T> {
    /// Next action `a' ~ π^ψ(·|t+Δt, x')`.
    Action(&'a [T]),
    /// Last step of an episode: the terminal payoff replaces `Q(T, x', a') − γ log π Δt`.
    Terminal(T),
}

/// `Q(t+Δt,x',a') − γ log π(a'|t+Δt,x')Δt − Q(t,x,a) + rΔt − βQ(t,x,a)Δt` (or `− VΔt`).
pub fn sarsa_bracket<T, Q>(tr: &Transition<'_, T>, next: SarsaNext<'_, T>, qdt: &Q, discount: Discount<T>) -> Result<T>
where
    T: Real,
    Q: QdtApprox<T> + ?Sized,
{
    let dt = qdt.dt();
    let q0 = qdt.eval(tr.t, tr.x, tr.a);
    let target = match next {
        SarsaNext::Action(a1) => {
            let t1 = tr.t + dt;
            qdt.eval(t1, tr.x_next, a1) - qdt.gamma() * qdt.log_density(t1, tr.x_next, a1)? * dt
        }
        SarsaNext::Terminal(h) => h,
    };
    let drag = match discount {
        Discount::Rate(beta) => beta * q0,
        Discount::Average(v) => v,
    };
    Ok(target - q0 + (tr.r - drag) * dt)
}

/// Stateful SARSA learner owning `ψ` (and `V` for ergodic tasks).
#[derive(Debug, Clone)]
pub struct SarsaLearner<T> {
    pub psi: Vec<T>,
    pub v: T,
    pub grad: SarsaGrad,
    cfg: LearnerConfig<T>,
    g_value: Vec<T>,
    g_adv: Vec<T>,
}

impl<T: Real> SarsaLearner<T> {
    pub fn new<Q: QdtApprox<T> + ?Sized>(qdt: &Q, v: T, cfg: &LearnerConfig<T>, grad: SarsaGrad) -> Self {
        let n = qdt.n_psi();
        Self { psi: qdt.psi().to_vec(), v, grad, cfg: cfg.clone(), g_value: vec![T::zero(); n], g_adv: vec![T::zero(); n] }
    }

    /// Updates `ψ` (and `V` under [`Discount::Average`], whose carried value is ignored in
    /// favour of the learner's own). Returns the bracket.
    pub fn update<Q>(&mut self, qdt: &Q, tr: &Transition<'_, T>, next: SarsaNext<'_, T>, discount: Discount<T>, arg: f64) -> Result<T>
    where
        Q: QdtApprox<T> + ?Sized,
    {
        let discount = match discount {
            Discount::Average(_) => Discount::Average(self.v),
            d => d,
        };
        let bracket = sarsa_bracket(tr, next, qdt, discount)?;
        qdt.grad_psi_parts(tr.t, tr.x, tr.a, &mut self.g_value, &mut self.g_adv);
        let adv_scale = match self.grad {
            SarsaGrad::Raw => T::one(),
            SarsaGrad::Advantage => qdt.dt().recip(),
        };
        for (gv, &ga) in self.g_value.iter_mut().zip(&self.g_adv) {
            *gv = (*gv + adv_scale * ga) * bracket;
        }
        let l = self.cfg.multiplier(arg);
        apply_step(&mut self.psi, l * self.cfg.alpha_psi, &self.g_value)?;
        if matches!(discount, Discount::Average(_)) {
            let mut vv = [self.v];
            apply_step(&mut vv, l * self.cfg.alpha_v, &[bracket])?;
            self.v = vv[0];
        }
        Ok(bracket)
    }

    /// [`Self::update`] followed by writing `ψ` back into `qdt`.
    pub fn step<Q>(&mut self, qdt: &mut Q, tr: &Transition<'_, T>, next: SarsaNext<'_, T>, discount: Discount<T>, arg: f64) -> Result<T>
    where
        Q: QdtApprox<T> + ?Sized,
    {
        let bracket = self.update(qdt, tr, next, discount, arg)?;
        qdt.set_psi(&self.psi);
        Ok(bracket)
    }
}

/// One SARSA update with learning-rate argument `arg`; returns `(ψ', V')`.
#[allow(clippy::too_many_arguments)]
pub fn sarsa_update<T, Q>(
    tr: &Transition<'_, T>,
    next: SarsaNext<'_, T>,
    qdt: &Q,
    cfg: &LearnerConfig<T>,
    discount: Discount<T>,
    grad: SarsaGrad,
    arg: f64,
) -> Result<(Vec<T>, T)>
where
    T: Real,
    Q: QdtApprox<T> + ?Sized,
{
    let v = match discount {
        Discount::Average(v) => v,
        Discount::Rate(_) => T::zero(),
    };
    let mut learner = SarsaLearner::new(qdt, v, cfg, grad);
    learner.update(qdt, tr, next, discount, arg)?;
    Ok((learner.psi, learner.v))
}

/// `−γ log π(a|t,x)Δt + J(t+Δt,x') − J(t,x) + rΔt − βJ(t,x)Δt` (or `− VΔt`).
///
/// `next_value` overrides `J(t+Δt, x')` on the last step of an episode.
pub fn pg_bracket<T, J, P>(
    tr: &Transition<'_, T>,
    dt: T,
    value: &J,
    policy: &P,
    gamma: T,
    discount: Discount<T>,
    next_value: Option<T>,
) -> Result<T>
where
    T: Real,
    J: ValueApprox<T> + ?Sized,
    P: GaussianPolicy<T> + ?Sized,
{
    let j0 = value.eval(tr.t, tr.x);
    let j1 = next_value.unwrap_or_else(|| value.eval(tr.t + dt, tr.x_next));
    let drag = match discount {
        Discount::Rate(beta) => beta * j0,
        Discount::Average(v) => v,
    };
    let log_pi = policy.log_density(tr.t, tr.x, tr.a)?;
    Ok(j1 - j0 + (tr.r - gamma * log_pi - drag) * dt)
}

/// Actor–critic learner: the actor follows the score-function update, the critic is
/// TD policy evaluation with `q ≡ γ log π` and test function `∂J/∂θ`.
#[derive(Debug, Clone)]
pub struct PgLearner<T> {
    pub theta: Vec<T>,
    pub phi: Vec<T>,
    pub v: T,
    cfg: LearnerConfig<T>,
    xi: Vec<T>,
    score: Vec<T>,
}

impl<T: Real> PgLearner<T> {
    pub fn new<J, P>(value: &J, policy: &P, v: T, cfg: &LearnerConfig<T>) -> Self
    where
        J: ValueApprox<T> + ?Sized,
        P: ScoreFunction<T> + ?Sized,
    {
        Self {
            theta: value.theta().to_vec(),
            phi: policy.phi().to_vec(),
            v,
            cfg: cfg.clone(),
            xi: vec![T::zero(); value.n_theta()],
            score: vec![T::zero(); policy.n_phi()],
        }
    }

    /// Returns the bracket. Under [`Discount::Average`] the learner's own `V` is used and updated.
    #[allow(clippy::too_many_arguments)]
    pub fn update<J, P>(
        &mut self,
        value: &J,
        policy: &P,
        tr: &Transition<'_, T>,
        dt: T,
        discount: Discount<T>,
        next_value: Option<T>,
        arg: f64,
    ) -> Result<T>
    where
        J: ValueApprox<T> + ?Sized,
        P: ScoreFunction<T> + ?Sized,
    {
        let discount = match discount {
            Discount::Average(_) => Discount::Average(self.v),
            d => d,
        };
        let b = pg_bracket(tr, dt, value, policy, self.cfg.gamma, discount, next_value)?;
        value.grad_theta(tr.t, tr.x, &mut self.xi);
        policy.grad_log_density(tr.t, tr.x, tr.a, &mut self.score);
        for g in self.xi.iter_mut().chain(self.score.iter_mut()) {
            *g *= b;
        }
        let l = self.cfg.multiplier(arg);
        apply_step(&mut self.theta, l * self.cfg.alpha_theta, &self.xi)?;
        apply_step(&mut self.phi, l * self.cfg.alpha_phi, &self.score)?;
        if matches!(discount, Discount::Average(_)) {
            let mut vv = [self.v];
            apply_step(&mut vv, l * self.cfg.alpha_v, &[b])?;
            self.v = vv[0];
        }
        Ok(b)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn step<J, P>(
        &mut self,
        value: &mut J,
        policy: &mut P,
        tr: &Transition<'_, T>,
        dt: T,
        discount: Discount<T>,
        next_value: Option<T>,
        arg: f64,
    ) -> Result<T>
    where
        J: ValueApprox<T> + ?Sized,
        P: ScoreFunction<T> + ?Sized,
    {
        let b = self.update(value, policy, tr, dt, discount, next_value, arg)?;
        value.set_theta(&self.theta);
        policy.set_phi(&self.phi);
        Ok(b)
    }
}

/// Actor step only: `φ' = φ + l·α_φ·bracket·∂ log π/∂φ`.
#[allow(clippy::too_many_arguments)]
pub fn pg_update<T, J, P>(
    tr: &Transition<'_, T>,
    dt: T,
    value: &J,
    policy: &P,
    cfg: &LearnerConfig<T>,
    discount: Discount<T>,
    next_value: Option<T>,
    arg: f64,
) -> Result<Vec<T>>
where
    T: Real,
    J: ValueApprox<T> + ?Sized,
    P: ScoreFunction<T> + ?Sized,
{
    let b = pg_bracket(tr, dt, value, policy, cfg.gamma, discount, next_value)?;
    let mut score = vec![T::zero(); policy.n_phi()];
    policy.grad_log_density(tr.t, tr.x, tr.a, &mut score);
    score.iter_mut().for_each(|g| *g *= b);
    let mut phi = policy.phi().to_vec();
    apply_step(&mut phi, cfg.multiplier(arg) * cfg.alpha_phi, &score)?;
    Ok(phi)
}

/// Critic step only: `θ' = θ + l·α_θ·bracket·∂J/∂θ`, plus `V' = V + l·α_V·bracket` when ergodic.
#[allow(clippy::too_many_arguments)]
pub fn pg_critic_update<T, J, P>(
    tr: &Transition<'_, T>,
    dt: T,
    value: &J,
    policy: &P,
    cfg: &LearnerConfig<T>,
    discount: Discount<T>,
    next_value: Option<T>,
    arg: f64,
) -> Result<(Vec<T>, Option<T>)>
where
    T: Real,
    J: ValueApprox<T> + ?Sized,
    P: GaussianPolicy<T> + ?Sized,
{
    let b = pg_bracket(tr, dt, value, policy, cfg.gamma, discount, next_value)?;
    let mut xi = vec![T::zero(); value.n_theta()];
    value.grad_theta(tr.t, tr.x, &mut xi);
    xi.iter_mut().for_each(|g| *g *= b);
    let l = cfg.multiplier(arg);
    let mut theta = value.theta().to_vec();
    apply_step(&mut theta, l * cfg.alpha_theta, &xi)?;
    let v = match discount {
        Discount::Average(v) => {
            let mut vv = [v];
            apply_step(&mut vv, l * cfg.alpha_v, &[b])?;
            Some(vv[0])
        }
        Discount::Rate(_) => None,
    };
    Ok((theta, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::{lq_q, lq_value};

    #[test]
    fn mv_preset_examples() {
        let q = qdt_mv_preset::<f64>([0.0; 5], 1.3, 1.4, 1.0, 0.1, 0.04);
        let qv = QdtApprox::eval(&q, 1.0, &[1.3], &[0.0]);
        assert!((qv - 0.01).abs() < 1e-15);
        let mut g = [0.0; 5];
        q.grad_psi(0.25, &[0.7], &[0.3], &mut g);
        assert_eq!(g[3], 0.25 * 0.25 - 1.0);
        assert_eq!(g[4], 0.25 - 1.0);
        let fine = qdt_mv_preset::<f64>([0.2, -1.0, 0.5, 0.0, 0.0], 1.3, 1.4, 1.0, 0.1, 0.004);
        let coarse = qdt_mv_preset::<f64>([0.2, -1.0, 0.5, 0.0, 0.0], 1.3, 1.4, 1.0, 0.1, 0.04);
        assert!((coarse.variance_scalar(0.3) / fine.variance_scalar(0.3) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn lq_preset_examples() {
        let q = qdt_lq_preset::<f64>([0.4, -0.2, 0.7, 0.0, 0.0], 0.1, 0.1);
        let mean = q.mean_scalar(1.5);
        assert_eq!(QdtApprox::eval(&q, 0.0, &[1.5], &[mean]), 0.0);
        let mut g = [0.0; 5];
        q.grad_psi(0.0, &[1.5], &[2.0], &mut g);
        let u: f64 = 2.0 - mean;
        assert!((g[2] - 0.5 * (-0.7f64).exp() * u * u).abs() < 1e-15);
        let small = qdt_lq_preset::<f64>([0.4, -0.2, 0.7, 0.0, 0.0], 0.1, 0.01);
        assert!((q.variance_scalar() / small.variance_scalar() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn zero_bracket_keeps_psi() {
        // Q ≡ 0 apart from the log-density term; pick r to cancel it.
        let q = qdt_lq_preset::<f64>([0.0, 0.0, 0.0, 0.0, 0.0], 0.1, 0.1);
        let (x, x1, a, a1) = ([0.5], [0.4], [0.0], [0.0]);
        let lp = q.log_density(0.1, &x1, &a1).unwrap();
        let r = 0.1 * lp;
        let tr = Transition { k: 0, t: 0.0, x: &x, a: &a, r, x_next: &x1 };
        let cfg = LearnerConfig::new(0.1, 0.5);
        let b = sarsa_bracket(&tr, SarsaNext::Action(&a1), &q, Discount::Average(0.0)).unwrap();
        assert!(b.abs() < 1e-15);
        let (psi, v) = sarsa_update(&tr, SarsaNext::Action(&a1), &q, &cfg, Discount::Average(0.0), SarsaGrad::Raw, 1.0).unwrap();
        assert!(psi.iter().all(|p| p.abs() < 1e-15));
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn sarsa_lq_fixture() {
        // ψ = 0, V = 0, (x, a, r, x', a') = (1, 0, −2, 0.9, 0), γ = 0.1, Δt = 0.1.
        // Q(x, a) = −a²/2, so Q(1,0) = Q(0.9,0) = 0; policy N(0, 0.01):
        // log π(0) = −½ log(2π·0.01) = 1.383646...
        // bracket = 0 − 0.1·0.1·1.3836465597893728 − 0 − 0.2 = −0.21383646559789373
        let q = qdt_lq_preset::<f64>([0.0; 5], 0.1, 0.1);
        let tr = Transition { k: 0, t: 0.0, x: &[1.0], a: &[0.0], r: -2.0, x_next: &[0.9] };
        let b = sarsa_bracket(&tr, SarsaNext::Action(&[0.0]), &q, Discount::Average(0.0)).unwrap();
        assert!((b + 0.213_836_465_597_893_73).abs() < 1e-14);
        let cfg = LearnerConfig::new(0.1, 0.01);
        let (psi, v) = sarsa_update(&tr, SarsaNext::Action(&[0.0]), &q, &cfg, Discount::Average(0.0), SarsaGrad::Raw, 1.0).unwrap();
        // Gradient at (1, 0): (0, 0, 0, 1, 1).
        assert_eq!(&psi[..3], &[0.0; 3]);
        assert!((psi[3] - 0.01 * b).abs() < 1e-17 && (psi[4] - 0.01 * b).abs() < 1e-17);
        assert!((v - 0.01 * b).abs() < 1e-17);
    }

    #[test]
    fn terminal_target_replaces_next_q() {
        let q = qdt_mv_preset::<f64>([0.1, 0.2, 0.3, 0.4, 0.5], 1.3, 1.4, 1.0, 0.1, 0.04);
        let tr = Transition { k: 24, t: 0.96, x: &[1.1], a: &[0.2], r: 0.0, x_next: &[1.2] };
        let b = sarsa_bracket(&tr, SarsaNext::Terminal(0.7), &q, Discount::Rate(0.0)).unwrap();
        assert!((b - (0.7 - QdtApprox::eval(&q, 0.96, &[1.1], &[0.2]))).abs() < 1e-15);
    }

    #[test]
    fn pg_bracket_equals_td_delta_for_induced_policy() {
        let q = lq_q::<f64>([-0.3, 0.2, 0.4], 0.1);
        let j = lq_value([-0.2, 0.1]);
        let tr = Transition { k: 3, t: 0.3, x: &[0.8], a: &[-0.1], r: -1.3, x_next: &[0.75] };
        let b = pg_bracket(&tr, 0.1, &j, &q, 0.1, Discount::Average(-0.5), None).unwrap();
        let d = crate::learners::ergodic_delta(&tr, 0.1, &j, &q, -0.5);
        assert!((b - d).abs() < 1e-14);
    }

    #[test]
    fn pg_fixture_and_zero_score() {
        // Policy N(φ₁x + φ₂, γe^{φ₃}) with γ = 0.1, φ = (0, 0, ln 10) so the variance is 1.
        // J ≡ 0, x = 1, a = 0.5, r = −1, Δt = 0.1.
        // log π(0.5) = −½(0.25 + ln 2π) = −1.0439385332046727
        // bracket = (−1 − 0.1·(−1.0439385332046727))·0.1 = −0.08956061466795327
        // score = (u x, u, ½(u² − 1)) with u = 0.5 → (0.5, 0.5, −0.375)
        let phi3 = 10f64.ln();
        let q = lq_q([0.0, 0.0, phi3], 0.1);
        let j = lq_value([0.0, 0.0]);
        let tr = Transition { k: 0, t: 0.0, x: &[1.0], a: &[0.5], r: -1.0, x_next: &[1.0] };
        let mut cfg = LearnerConfig::new(0.1, 0.0);
        cfg.alpha_phi = 0.01;
        let b = pg_bracket(&tr, 0.1, &j, &q, 0.1, Discount::Rate(0.0), None).unwrap();
        assert!((b + 0.089_560_614_667_953_27).abs() < 1e-15);
        let phi = pg_update(&tr, 0.1, &j, &q, &cfg, Discount::Rate(0.0), None, 1.0).unwrap();
        let want = [0.01 * b * 0.5, 0.01 * b * 0.5, phi3 + 0.01 * b * -0.375];
        for (p, w) in phi.iter().zip(want) {
            assert!((p - w).abs() < 1e-15);
        }
        // x = 0 and u² equal to the variance zero the slope and log-variance scores.
        let tr0 = Transition { k: 0, t: 0.0, x: &[0.0], a: &[1.0], r: -1.0, x_next: &[0.0] };
        let p0 = pg_update(&tr0, 0.1, &j, &q, &cfg, Discount::Rate(0.0), None, 1.0).unwrap();
        assert_eq!(p0[0], 0.0);
        assert_eq!(p0[2], phi3);
        assert_ne!(p0[1], 0.0);
    }
}
