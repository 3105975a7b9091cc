//! Model-based ground truth: Hamiltonian, q from a known value function, the exploratory
//! fixed point of the ergodic LQ problem, policy improvement and the `Q_Δt` expansion.

use serde::{Deserialize, Serialize};

use crate::approx::{GaussianPolicy, LqQ, LqValue, ParamSnapshot, SmoothValue};
use crate::envsim::{euler_step_into, ControlModel, LqParams, RngStream, StepScratch};
use crate::error::{Error, Result};
use crate::linalg::SquareMatrix;
use crate::quadrature::GaussHermite;
use crate::scalar::Real;

/// `H = b·p + ½ tr(σσᵀ q) + r`, with `q_hess` a row-major `d × d` matrix.
pub fn hamiltonian<T: Real, M: ControlModel<T> + ?Sized>(
    model: &M,
    t: T,
    x: &[T],
    a: &[T],
    p: &[T],
    q_hess: &[T],
) -> T {
    let (d, n) = (model.state_dim(), model.noise_dim());
    let mut b = vec![T::zero(); d];
    let mut sigma = vec![T::zero(); d * n];
    model.drift(t, x, a, &mut b);
    model.diffusion(t, x, a, &mut sigma);
    let mut h = model.reward_rate(t, x, a);
    for i in 0..d {
        h += b[i] * p[i];
    }
    for i in 0..d {
        for j in 0..d {
            let ss: T = (0..n).map(|k| sigma[i * n + k] * sigma[j * n + k]).sum();
            h += T::half() * ss * q_hess[i * d + j];
        }
    }
    h
}

fn hamiltonian_of<T: Real, M: ControlModel<T> + ?Sized, J: SmoothValue<T> + ?Sized>(
    model: &M,
    value: &J,
    t: T,
    x: &[T],
    a: &[T],
) -> T {
    let d = model.state_dim();
    let mut p = vec![T::zero(); d];
    let mut hess = vec![T::zero(); d * d];
    value.gradient_x(t, x, &mut p);
    value.hessian_x(t, x, &mut hess);
    hamiltonian(model, t, x, a, &p, &hess)
}

/// `q = ∂J/∂t + H(t, x, a, ∂J/∂x, ∂²J/∂x²) − βJ`.
pub fn q_from_value<T: Real, M: ControlModel<T> + ?Sized, J: SmoothValue<T> + ?Sized>(
    model: &M,
    value: &J,
    beta: T,
    t: T,
    x: &[T],
    a: &[T],
) -> T {
    value.time_derivative(t, x) + hamiltonian_of(model, value, t, x, a) - beta * value.eval(t, x)
}

/// Ergodic convention: `q = H(x, a, ∂J/∂x, ∂²J/∂x²) − V`.
pub fn q_from_value_ergodic<T: Real, M: ControlModel<T> + ?Sized, J: SmoothValue<T> + ?Sized>(
    model: &M,
    value: &J,
    v: T,
    x: &[T],
    a: &[T],
) -> T {
    hamiltonian_of(model, value, T::zero(), x, a) - v
}

/// Exploratory optimum of the scalar ergodic LQ problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LqErgodicSolution {
    pub params: LqParams<f64>,
    pub gamma: f64,
    /// `J*(x) = θ₁x² + θ₂x`.
    pub theta_star: [f64; 2],
    /// Optimal policy `N(ψ₁x + ψ₂, γe^{ψ₃})`.
    pub psi_star: [f64; 3],
    /// Optimal long-run average of reward plus `γ·entropy`.
    #[serde(rename = "V_star")]
    pub v_star: f64,
    /// Optimal long-run average reward of the classical problem (no exploration).
    #[serde(rename = "V_noexplore")]
    pub v_noexplore: f64,
}

impl LqErgodicSolution {
    pub fn value(&self) -> LqValue<f64> {
        LqValue::new(self.theta_star)
    }

    pub fn q(&self) -> LqQ<f64> {
        LqQ::new(self.psi_star, self.gamma)
    }

    pub fn policy_variance(&self) -> f64 {
        self.gamma * self.psi_star[2].exp()
    }

    /// Long-run average reward (entropy bonus excluded) collected by the optimal exploratory policy.
    pub fn exploratory_average_reward(&self) -> f64 {
        self.v_star - 0.5 * self.gamma * (std::f64::consts::TAU * std::f64::consts::E * self.policy_variance()).ln()
    }

    /// Largest absolute violation of `∫(H(x,a,∂J*,∂²J*) − γ log π*)π* da = V*` over `xs`.
    pub fn residual(&self, xs: impl IntoIterator<Item = f64>) -> f64 {
        let model = crate::envsim::builtin_lq_env(self.params);
        let value = self.value();
        let q = self.q();
        let gh = GaussHermite::new(12);
        let var = self.policy_variance();
        xs.into_iter()
            .map(|x| {
                let mean = q.mean_scalar(x);
                let avg = gh.gaussian_expectation(mean, var, |a| {
                    let h = hamiltonian_of(&model, &value, 0.0, &[x], &[a]);
                    // γ·log π* = q*
                    h - q.eval_scalar(x, a)
                });
                (avg - self.v_star).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn snapshot(&self) -> ParamSnapshot {
        let mut s = ParamSnapshot::new("lq-ergodic-oracle", &self.theta_star, &self.psi_star, self.gamma);
        s.v = Some(self.v_star);
        s.oracle = true;
        s
    }
}

/// Closed-loop mean-square growth rate `2(A + Bψ₁) + (C + Dψ₁)²`; negative means stable.
pub fn lq_closed_loop_rate(p: &LqParams<f64>, slope: f64) -> f64 {
    2.0 * (p.a + p.b * slope) + (p.c + p.d * slope).powi(2)
}

fn real_roots(a2: f64, a1: f64, a0: f64) -> Vec<f64> {
    let scale = a2.abs().max(a1.abs()).max(a0.abs());
    if scale == 0.0 {
        return Vec::new();
    }
    if a2.abs() <= 1e-14 * scale {
        return if a1 == 0.0 { Vec::new() } else { vec![-a0 / a1] };
    }
    let disc = a1 * a1 - 4.0 * a2 * a0;
    if disc < 0.0 {
        return Vec::new();
    }
    // numerically stable pair
    let sgn = if a1 >= 0.0 { 1.0 } else { -1.0 };
    let qq = -0.5 * (a1 + sgn * disc.sqrt());
    let mut roots = vec![qq / a2];
    if qq != 0.0 {
        roots.push(a0 / qq);
    } else {
        roots.push(-roots[0]);
    }
    roots
}

/// Solves the exploratory HJB of the scalar ergodic LQ problem by coefficient matching.
///
/// A root is admissible when the reward is strictly concave in `a` at the fixed point and the
/// induced closed loop is mean-square stable; among admissible roots the one with the largest
/// `V` is returned.
pub fn lq_ergodic_fixed_point(p: LqParams<f64>, gamma: f64) -> Result<LqErgodicSolution> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidConfig(format!("temperature must be positive, got {gamma}")));
    }
    if !p.is_finite() {
        return Err(Error::InvalidConfig("LQ coefficients must be finite".into()));
    }
    let e = 2.0 * p.a + p.c * p.c;
    let f = p.b + p.c * p.d;
    let a2 = 4.0 * f * f - 4.0 * p.d * p.d * e;
    let a1 = 2.0 * p.n * e + 2.0 * p.m * p.d * p.d - 4.0 * f * p.r;
    let a0 = p.r * p.r - p.m * p.n;
    let mut best: Option<LqErgodicSolution> = None;
    for theta1 in real_roots(a2, a1, a0) {
        let kappa = p.n - 2.0 * p.d * p.d * theta1;
        if !(kappa > 0.0) {
            continue;
        }
        let l1 = 2.0 * f * theta1 - p.r;
        let slope = l1 / kappa;
        if !(lq_closed_loop_rate(&p, slope) < 0.0) {
            continue;
        }
        let denom = p.a + l1 * p.b / kappa;
        if denom == 0.0 {
            continue;
        }
        let theta2 = (p.p + l1 * p.q / kappa) / denom;
        let l0 = p.b * theta2 - p.q;
        let v_noexplore = l0 * l0 / (2.0 * kappa);
        let v_star = v_noexplore + 0.5 * gamma * (std::f64::consts::TAU * gamma / kappa).ln();
        let cand = LqErgodicSolution {
            params: p,
            gamma,
            theta_star: [theta1, theta2],
            psi_star: [slope, l0 / kappa, -kappa.ln()],
            v_star,
            v_noexplore,
        };
        if best.map_or(true, |b| cand.v_star > b.v_star) {
            best = Some(cand);
        }
    }
    best.ok_or_else(|| Error::Infeasible("no stabilizing solution of the ergodic LQ fixed point".into()))
}

/// Value of a fixed linear Gaussian policy `N(ψ₁x + ψ₂, v)` on the ergodic LQ problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqPolicyValue {
    pub theta: [f64; 2],
    /// Long-run average of reward plus `γ·entropy`.
    pub v: f64,
    /// Long-run average reward alone.
    pub average_reward: f64,
}

pub fn lq_policy_value(p: &LqParams<f64>, gamma: f64, slope: f64, intercept: f64, variance: f64) -> Result<LqPolicyValue> {
    if !(variance > 0.0) {
        return Err(Error::Domain(format!("policy variance must be positive, got {variance}")));
    }
    let rate = lq_closed_loop_rate(p, slope);
    if !(rate < 0.0) {
        return Err(Error::Infeasible(format!("policy slope {slope} is not mean-square stabilizing")));
    }
    let theta1 = (0.5 * p.m + p.r * slope + 0.5 * p.n * slope * slope) / rate;
    let drift = p.a + p.b * slope;
    if drift == 0.0 {
        return Err(Error::Infeasible("closed-loop drift coefficient vanishes".into()));
    }
    let (psi1, psi2) = (slope, intercept);
    let theta2 = -(2.0 * theta1 * p.b * psi2 + 2.0 * theta1 * (p.c + p.d * psi1) * p.d * psi2
        - p.r * psi2
        - p.n * psi1 * psi2
        - p.p
        - p.q * psi1)
        / drift;
    let average_reward = p.b * psi2 * theta2 + theta1 * p.d * p.d * psi2 * psi2 - 0.5 * p.n * psi2 * psi2 - p.q * psi2
        + variance * (p.d * p.d * theta1 - 0.5 * p.n);
    let entropy = 0.5 * (std::f64::consts::TAU * std::f64::consts::E * variance).ln();
    Ok(LqPolicyValue { theta: [theta1, theta2], v: average_reward + gamma * entropy, average_reward })
}

/// One policy-improvement step on the ergodic LQ problem: Gibbs policy of `H` under `J^π`.
/// Returns the parameters `(ψ₁, ψ₂, ψ₃)` of the improved policy `N(ψ₁x + ψ₂, γe^{ψ₃})`.
pub fn lq_improve(p: &LqParams<f64>, gamma: f64, psi: [f64; 3]) -> Result<[f64; 3]> {
    let pv = lq_policy_value(p, gamma, psi[0], psi[1], gamma * psi[2].exp())?;
    let [theta1, theta2] = pv.theta;
    let kappa = p.n - 2.0 * p.d * p.d * theta1;
    if !(kappa > 0.0) {
        return Err(Error::ImprovementUndefined(format!("Hamiltonian is not concave in a (κ = {kappa})")));
    }
    let l1 = 2.0 * (p.b + p.c * p.d) * theta1 - p.r;
    let l0 = p.b * theta2 - p.q;
    Ok([l1 / kappa, l0 / kappa, -kappa.ln()])
}

/// Mean and variance of the Gibbs policy `∝ exp{H(t,x,·,∂J/∂x,∂²J/∂x²)/γ}` at one point.
///
/// `H` is assumed quadratic in `a`; its gradient and Hessian are recovered by an exact
/// second-order stencil.
pub fn policy_improvement_at<T: Real, M: ControlModel<T> + ?Sized, J: SmoothValue<T> + ?Sized>(
    model: &M,
    value: &J,
    gamma: T,
    t: T,
    x: &[T],
) -> Result<(Vec<T>, SquareMatrix<T>)> {
    let m = model.action_dim();
    let h = |a: &[T]| hamiltonian_of(model, value, t, x, a);
    let zero = vec![T::zero(); m];
    let h0 = h(&zero);
    let mut grad = vec![T::zero(); m];
    let mut neg_hess = SquareMatrix::zeros(m);
    let mut e = zero.clone();
    let two = T::two();
    for i in 0..m {
        e[i] = T::one();
        let hp = h(&e);
        e[i] = -T::one();
        let hm = h(&e);
        e[i] = T::zero();
        grad[i] = (hp - hm) / two;
        neg_hess.set(i, i, -(hp - two * h0 + hm));
    }
    for i in 0..m {
        for j in 0..i {
            let mut probe = |si: T, sj: T| {
                e[i] = si;
                e[j] = sj;
                let v = h(&e);
                e[i] = T::zero();
                e[j] = T::zero();
                v
            };
            let one = T::one();
            let hij = (probe(one, one) - probe(one, -one) - probe(-one, one) + probe(-one, -one)) / T::of(4.0);
            neg_hess.set(i, j, -hij);
            neg_hess.set(j, i, -hij);
        }
    }
    let chol = neg_hess
        .cholesky()
        .map_err(|_| Error::ImprovementUndefined("Hamiltonian is not strictly concave in the action".into()))?;
    let mut mean = grad;
    chol.solve_in_place(&mut mean);
    Ok((mean, chol.inverse().scaled(gamma)))
}

/// Policy `π'(·|t,x) ∝ exp{H(t,x,·,∂J/∂x,∂²J/∂x²)/γ}` from the improvement map.
pub struct ImprovedPolicy<'a, M: ?Sized, J: ?Sized, T> {
    model: &'a M,
    value: &'a J,
    gamma: T,
}

pub fn policy_improvement_map<'a, T: Real, M: ControlModel<T> + ?Sized, J: SmoothValue<T> + ?Sized>(
    model: &'a M,
    value: &'a J,
    gamma: T,
) -> ImprovedPolicy<'a, M, J, T> {
    ImprovedPolicy { model, value, gamma }
}

impl<'a, T: Real, M: ControlModel<T> + ?Sized, J: SmoothValue<T> + ?Sized> ImprovedPolicy<'a, M, J, T> {
    pub fn at(&self, t: T, x: &[T]) -> Result<(Vec<T>, SquareMatrix<T>)> {
        policy_improvement_at(self.model, self.value, self.gamma, t, x)
    }
}

impl<'a, T: Real, M: ControlModel<T> + ?Sized, J: SmoothValue<T> + ?Sized> GaussianPolicy<T>
    for ImprovedPolicy<'a, M, J, T>
{
    fn action_dim(&self) -> usize {
        self.model.action_dim()
    }
    fn mean(&self, t: T, x: &[T], out: &mut [T]) {
        match self.at(t, x) {
            Ok((m, _)) => out.copy_from_slice(&m),
            Err(_) => out.iter_mut().for_each(|o| *o = T::nan()),
        }
    }
    fn variance(&self, t: T, x: &[T]) -> SquareMatrix<T> {
        self.at(t, x).map(|(_, v)| v).unwrap_or_else(|_| SquareMatrix::scalar(T::nan()))
    }
}

/// Result of regressing `(Q_Δt − J)/Δt` on `Δt`.
#[derive(Debug, Clone, PartialEq)]
pub struct QdtFit {
    pub intercept: f64,
    pub slope: f64,
    /// `q(t, x, a)` from the model and `J`.
    pub q_exact: f64,
    /// `(Δt, estimate of (Q_Δt − J)/Δt, standard error)` per grid value.
    pub points: Vec<(f64, f64, f64)>,
}

/// Monte Carlo check of `Q_Δt(t,x,a) = J(t,x) + q(t,x,a)Δt + o(Δt)`, holding `a` fixed over
/// `[t, t+Δt]` and resolving the interval with `substeps` Euler steps.
///
/// For ergodic models pass the long-run value as `ergodic_v`; the running reward is then
/// centred by it and discounting is ignored.
#[allow(clippy::too_many_arguments)]
pub fn qdt_expansion_check<M: ControlModel<f64> + ?Sized, J: SmoothValue<f64> + ?Sized>(
    model: &M,
    value: &J,
    ergodic_v: Option<f64>,
    t: f64,
    x: &[f64],
    a: &[f64],
    dt_list: &[f64],
    paths: usize,
    substeps: usize,
    rng: &mut RngStream,
) -> Result<QdtFit> {
    if dt_list.len() < 2 || paths < 2 || substeps == 0 {
        return Err(Error::InvalidConfig("need at least two step sizes, two paths and one substep".into()));
    }
    let beta = if ergodic_v.is_some() { 0.0 } else { model.discount() };
    let centre = ergodic_v.unwrap_or(0.0);
    let q_exact = match ergodic_v {
        Some(v) => q_from_value_ergodic(model, value, v, x, a),
        None => q_from_value(model, value, beta, t, x, a),
    };
    let j0 = value.eval(t, x);
    let (d, n) = (model.state_dim(), model.noise_dim());
    let mut scratch = StepScratch::for_model(model);
    let mut cur = vec![0.0; d];
    let mut next = vec![0.0; d];
    let mut dw = vec![0.0; n];
    let mut points = Vec::with_capacity(dt_list.len());
    for &dt in dt_list {
        let h = dt / substeps as f64;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..paths {
            cur.copy_from_slice(x);
            let mut acc = 0.0;
            for k in 0..substeps {
                let s = t + k as f64 * h;
                rng.fill_normal(&mut dw, h.sqrt());
                let r = euler_step_into(model, s, &cur, a, h, &dw, &mut scratch, &mut next)?;
                acc += (-beta * (s - t)).exp() * (r - centre) * h;
                std::mem::swap(&mut cur, &mut next);
            }
            let y = (acc + (-beta * dt).exp() * value.eval(t + dt, &cur) - j0) / dt;
            s1 += y;
            s2 += y * y;
        }
        let nf = paths as f64;
        let mean = s1 / nf;
        let var = ((s2 - nf * mean * mean) / (nf - 1.0)).max(0.0);
        points.push((dt, mean, (var / nf).sqrt()));
    }
    let k = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / k;
    let my = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Ok(QdtFit { intercept: my - slope * mx, slope, q_exact, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::lq_value;
    use crate::envsim::builtin_lq_env;

    #[test]
    fn hamiltonian_hand_value() {
        let env = builtin_lq_env(LqParams::<f64>::benchmark());
        assert_eq!(hamiltonian(&env, 0.0, &[1.0], &[2.0], &[1.0], &[2.0]), -9.0);
    }

    #[test]
    fn q_of_zero_value() {
        let env = builtin_lq_env(LqParams::<f64>::benchmark());
        let j = lq_value([0.0, 0.0]);
        assert_eq!(q_from_value_ergodic(&env, &j, 0.0, &[1.0], &[0.0]), -2.0);
    }

    #[test]
    fn benchmark_fixed_point() {
        let sol = lq_ergodic_fixed_point(LqParams::benchmark(), 0.1).unwrap();
        let psi1 = 7f64.sqrt() - 3.0;
        assert!((sol.psi_star[0] - psi1).abs() < 1e-12);
        assert!((sol.psi_star[1] - 2.0 * psi1).abs() < 1e-12);
        assert!((sol.policy_variance() - 0.035_425).abs() < 1e-6);
        let u = 1.0 - sol.theta_star[0];
        assert!((8.0 * u * u - 12.0 * u + 1.0).abs() < 1e-12);
        assert!(sol.residual((0..=100).map(|i| -5.0 + 0.1 * i as f64)) < 1e-10);
    }

    #[test]
    fn real_roots_cover_degenerate_cases() {
        let mut r = real_roots(1.0, -3.0, 2.0);
        r.sort_by(f64::total_cmp);
        assert!((r[0] - 1.0).abs() < 1e-15 && (r[1] - 2.0).abs() < 1e-15);
        assert_eq!(real_roots(0.0, 2.0, -4.0), vec![2.0]);
        assert!(real_roots(1.0, 0.0, 1.0).is_empty());
        let mut r = real_roots(1.0, 3.0, 2.0);
        r.sort_by(f64::total_cmp);
        assert!((r[0] + 2.0).abs() < 1e-15 && (r[1] + 1.0).abs() < 1e-15);
    }
}
