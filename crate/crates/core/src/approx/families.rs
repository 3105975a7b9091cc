//! The closed-form families used by the mean–variance and ergodic LQ problems.

use super::{GaussianPolicy, QApprox, ScoreFunction, SmoothValue, ValueApprox};
use crate::envsim::RngStream;
use crate::error::Result;
use crate::linalg::SquareMatrix;
use crate::scalar::Real;

/// `J^θ(t,x) = (x−w)² e^{−θ₃(T−t)} + θ₂(t²−T²) + θ₁(t−T) − (w−z)²`, a cost-to-go.
///
/// Wrap in [`super::Negated`] to obtain the reward-to-go matching a market model with target `(w, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MvValue<T> {
    theta: [T; 3],
    pub w: T,
    pub z: T,
    pub horizon: T,
}

impl<T: Real> MvValue<T> {
    pub fn new(theta: [T; 3], w: T, z: T, horizon: T) -> Self {
        Self { theta, w, z, horizon }
    }

    #[inline]
    fn decay(&self, t: T) -> T {
        (-self.theta[2] * (self.horizon - t)).exp()
    }
}

pub fn mv_value<T: Real>(theta: [T; 3], w: T, z: T, horizon: T) -> MvValue<T> {
    MvValue::new(theta, w, z, horizon)
}

impl<T: Real> ValueApprox<T> for MvValue<T> {
    fn n_theta(&self) -> usize {
        3
    }
    fn theta(&self) -> &[T] {
        &self.theta
    }
    fn set_theta(&mut self, theta: &[T]) {
        self.theta.copy_from_slice(theta);
    }
    fn eval(&self, t: T, x: &[T]) -> T {
        let (dx, dz) = (x[0] - self.w, self.w - self.z);
        let th = &self.theta;
        dx * dx * self.decay(t) + th[1] * (t * t - self.horizon * self.horizon) + th[0] * (t - self.horizon)
            - dz * dz
    }
    fn grad_theta(&self, t: T, x: &[T], out: &mut [T]) {
        let dx = x[0] - self.w;
        out[0] = t - self.horizon;
        out[1] = t * t - self.horizon * self.horizon;
        out[2] = -(self.horizon - t) * dx * dx * self.decay(t);
    }
    fn terminal_pinned(&self) -> bool {
        true
    }
}

impl<T: Real> SmoothValue<T> for MvValue<T> {
    fn time_derivative(&self, t: T, x: &[T]) -> T {
        let dx = x[0] - self.w;
        self.theta[2] * dx * dx * self.decay(t) + T::two() * self.theta[1] * t + self.theta[0]
    }
    fn gradient_x(&self, t: T, x: &[T], out: &mut [T]) {
        out[0] = T::two() * (x[0] - self.w) * self.decay(t);
    }
    fn hessian_x(&self, t: T, _x: &[T], out: &mut [T]) {
        out[0] = T::two() * self.decay(t);
    }
}

/// `J^θ(x) = θ₁x² + θ₂x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqValue<T> {
    theta: [T; 2],
}

impl<T: Real> LqValue<T> {
    pub fn new(theta: [T; 2]) -> Self {
        Self { theta }
    }

    #[inline]
    pub fn eval_scalar(&self, x: T) -> T {
        (self.theta[0] * x + self.theta[1]) * x
    }
}

pub fn lq_value<T: Real>(theta: [T; 2]) -> LqValue<T> {
    LqValue::new(theta)
}

impl<T: Real> ValueApprox<T> for LqValue<T> {
    fn n_theta(&self) -> usize {
        2
    }
    fn theta(&self) -> &[T] {
        &self.theta
    }
    fn set_theta(&mut self, theta: &[T]) {
        self.theta.copy_from_slice(theta);
    }
    fn eval(&self, _t: T, x: &[T]) -> T {
        self.eval_scalar(x[0])
    }
    fn grad_theta(&self, _t: T, x: &[T], out: &mut [T]) {
        out[0] = x[0] * x[0];
        out[1] = x[0];
    }
}

impl<T: Real> SmoothValue<T> for LqValue<T> {
    fn time_derivative(&self, _t: T, _x: &[T]) -> T {
        T::zero()
    }
    fn gradient_x(&self, _t: T, x: &[T], out: &mut [T]) {
        out[0] = T::two() * self.theta[0] * x[0] + self.theta[1];
    }
    fn hessian_x(&self, _t: T, _x: &[T], out: &mut [T]) {
        out[0] = T::two() * self.theta[0];
    }
}

/// Scalar-action Gaussian `q = −½e^{−s}(a − μ)² − (γ/2)(log 2πγ + s)` with log-variance offset `s`.
#[inline]
fn scalar_gaussian_q<T: Real>(a: T, mean: T, s: T, gamma: T) -> T {
    let u = a - mean;
    -T::half() * (-s).exp() * u * u - T::half() * gamma * (T::ln_two_pi() + gamma.ln() + s)
}

/// `q^ψ(t,x,a) = −(e^{−ψ₁−ψ₃(T−t)}/2)(a + ψ₂(x−w))² − (γ/2)[log 2πγ + ψ₁ + ψ₃(T−t)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MvQ<T> {
    psi: [T; 3],
    pub gamma: T,
    pub w: T,
    pub horizon: T,
}

impl<T: Real> MvQ<T> {
    pub fn new(psi: [T; 3], w: T, gamma: T, horizon: T) -> Self {
        assert!(gamma > T::zero(), "temperature must be positive");
        Self { psi, gamma, w, horizon }
    }

    #[inline]
    fn log_scale(&self, t: T) -> T {
        self.psi[0] + self.psi[2] * (self.horizon - t)
    }

    #[inline]
    pub fn mean_scalar(&self, x: T) -> T {
        -self.psi[1] * (x - self.w)
    }

    #[inline]
    pub fn variance_scalar(&self, t: T) -> T {
        self.gamma * self.log_scale(t).exp()
    }
}

pub fn mv_q<T: Real>(psi: [T; 3], w: T, gamma: T, horizon: T) -> MvQ<T> {
    MvQ::new(psi, w, gamma, horizon)
}

impl<T: Real> QApprox<T> for MvQ<T> {
    fn n_psi(&self) -> usize {
        3
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
    fn action_dim(&self) -> usize {
        1
    }
    fn eval(&self, t: T, x: &[T], a: &[T]) -> T {
        scalar_gaussian_q(a[0], self.mean_scalar(x[0]), self.log_scale(t), self.gamma)
    }
    fn grad_psi(&self, t: T, x: &[T], a: &[T], out: &mut [T]) {
        let s = self.log_scale(t);
        let dx = x[0] - self.w;
        let u = a[0] + self.psi[1] * dx;
        let k = (-s).exp();
        let ds = T::half() * (k * u * u - self.gamma);
        out[0] = ds;
        out[1] = -k * u * dx;
        out[2] = (self.horizon - t) * ds;
    }
}

impl<T: Real> GaussianPolicy<T> for MvQ<T> {
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
        Ok(QApprox::eval(self, t, x, a) / self.gamma)
    }
    fn entropy(&self, t: T, _x: &[T]) -> Result<T> {
        Ok(T::half() * (T::ln_two_pi() + T::one() + self.variance_scalar(t).ln()))
    }
    fn sample(&self, t: T, x: &[T], rng: &mut RngStream, out: &mut [T]) -> Result<()> {
        let xi = T::of(rng.standard_normal());
        out[0] = self.mean_scalar(x[0]) + self.variance_scalar(t).sqrt() * xi;
        Ok(())
    }
}

impl<T: Real> ScoreFunction<T> for MvQ<T> {
    fn n_phi(&self) -> usize {
        3
    }
    fn phi(&self) -> &[T] {
        &self.psi
    }
    fn set_phi(&mut self, phi: &[T]) {
        self.psi.copy_from_slice(phi);
    }
    fn grad_log_density(&self, t: T, x: &[T], a: &[T], out: &mut [T]) {
        self.grad_psi(t, x, a, out);
        let inv = self.gamma.recip();
        out.iter_mut().for_each(|g| *g *= inv);
    }
}

/// `q^ψ(x,a) = −(e^{−ψ₃}/2)(a − ψ₁x − ψ₂)² − (γ/2)(log 2πγ + ψ₃)`; policy `N(ψ₁x + ψ₂, γe^{ψ₃})`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqQ<T> {
    psi: [T; 3],
    pub gamma: T,
}

impl<T: Real> LqQ<T> {
    pub fn new(psi: [T; 3], gamma: T) -> Self {
        assert!(gamma > T::zero(), "temperature must be positive");
        Self { psi, gamma }
    }

    #[inline]
    pub fn mean_scalar(&self, x: T) -> T {
        self.psi[0] * x + self.psi[1]
    }

    #[inline]
    pub fn variance_scalar(&self) -> T {
        self.gamma * self.psi[2].exp()
    }

    #[inline]
    pub fn eval_scalar(&self, x: T, a: T) -> T {
        scalar_gaussian_q(a, self.mean_scalar(x), self.psi[2], self.gamma)
    }

    #[inline]
    pub fn grad_scalar(&self, x: T, a: T, out: &mut [T]) {
        let u = a - self.mean_scalar(x);
        let k = (-self.psi[2]).exp();
        out[0] = k * u * x;
        out[1] = k * u;
        out[2] = T::half() * (k * u * u - self.gamma);
    }
}

pub fn lq_q<T: Real>(psi: [T; 3], gamma: T) -> LqQ<T> {
    LqQ::new(psi, gamma)
}

impl<T: Real> QApprox<T> for LqQ<T> {
    fn n_psi(&self) -> usize {
        3
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
    fn action_dim(&self) -> usize {
        1
    }
    fn eval(&self, _t: T, x: &[T], a: &[T]) -> T {
        self.eval_scalar(x[0], a[0])
    }
    fn grad_psi(&self, _t: T, x: &[T], a: &[T], out: &mut [T]) {
        self.grad_scalar(x[0], a[0], out)
    }
}

impl<T: Real> GaussianPolicy<T> for LqQ<T> {
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
        Ok(self.eval_scalar(x[0], a[0]) / self.gamma)
    }
    fn entropy(&self, _t: T, _x: &[T]) -> Result<T> {
        Ok(T::half() * (T::ln_two_pi() + T::one() + self.variance_scalar().ln()))
    }
    fn sample(&self, _t: T, x: &[T], rng: &mut RngStream, out: &mut [T]) -> Result<()> {
        let xi = T::of(rng.standard_normal());
        out[0] = self.mean_scalar(x[0]) + self.variance_scalar().sqrt() * xi;
        Ok(())
    }
}

impl<T: Real> ScoreFunction<T> for LqQ<T> {
    fn n_phi(&self) -> usize {
        3
    }
    fn phi(&self) -> &[T] {
        &self.psi
    }
    fn set_phi(&mut self, phi: &[T]) {
        self.psi.copy_from_slice(phi);
    }
    fn grad_log_density(&self, _t: T, x: &[T], a: &[T], out: &mut [T]) {
        self.grad_scalar(x[0], a[0], out);
        let inv = self.gamma.recip();
        out.iter_mut().for_each(|g| *g *= inv);
    }
}
