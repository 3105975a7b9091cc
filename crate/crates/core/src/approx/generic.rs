//! Closure-backed families for user-defined models.

use std::fmt;
use std::sync::Arc;

use super::{GaussianPolicy, QApprox, ScoreFunction, ValueApprox};
use crate::error::{Error, Result};
use crate::linalg::{Cholesky, SquareMatrix};
use crate::scalar::Real;

type EvalFn<T> = Arc<dyn Fn(&[T], T, &[T]) -> T + Send + Sync>;
type MapFn<T> = Arc<dyn Fn(&[T], T, &[T], &mut [T]) + Send + Sync>;

/// Value function given by `eval(θ, t, x)` and `grad(θ, t, x, out)`.
#[derive(Clone)]
pub struct FnValue<T> {
    theta: Vec<T>,
    eval: EvalFn<T>,
    grad: MapFn<T>,
    pinned: bool,
}

impl<T: Real> FnValue<T> {
    pub fn new(
        theta: Vec<T>,
        eval: impl Fn(&[T], T, &[T]) -> T + Send + Sync + 'static,
        grad: impl Fn(&[T], T, &[T], &mut [T]) + Send + Sync + 'static,
    ) -> Self {
        Self { theta, eval: Arc::new(eval), grad: Arc::new(grad), pinned: false }
    }

    /// Declares that `J^θ(T, ·)` equals the terminal payoff for all `θ`.
    pub fn terminal_pinned(mut self) -> Self {
        self.pinned = true;
        self
    }
}

impl<T> fmt::Debug for FnValue<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnValue").field("n_theta", &self.theta.len()).finish_non_exhaustive()
    }
}

impl<T: Real> ValueApprox<T> for FnValue<T> {
    fn n_theta(&self) -> usize {
        self.theta.len()
    }
    fn theta(&self) -> &[T] {
        &self.theta
    }
    fn set_theta(&mut self, theta: &[T]) {
        self.theta.copy_from_slice(theta);
    }
    fn eval(&self, t: T, x: &[T]) -> T {
        (self.eval)(&self.theta, t, x)
    }
    fn grad_theta(&self, t: T, x: &[T], out: &mut [T]) {
        (self.grad)(&self.theta, t, x, out)
    }
    fn terminal_pinned(&self) -> bool {
        self.pinned
    }
}

/// General Gaussian q-function
/// `q^ψ = −½(a − q₁)ᵀ q₂ (a − q₁) + (γ/2) log det q₂ − (mγ/2) log 2πγ`,
/// normalized so that `exp{q^ψ/γ}` is the density of `N(q₁, γ q₂⁻¹)`.
///
/// The caller supplies `q₁`, `q₂` and their Jacobians in `ψ`:
/// `mean_jac` fills an `m × L` row-major block, `precision_jac` fills `L` consecutive
/// row-major `m × m` blocks.
#[derive(Clone)]
pub struct GaussianQApprox<T> {
    psi: Vec<T>,
    gamma: T,
    m: usize,
    mean: MapFn<T>,
    mean_jac: MapFn<T>,
    precision: MapFn<T>,
    precision_jac: MapFn<T>,
}

impl<T> fmt::Debug for GaussianQApprox<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GaussianQApprox")
            .field("n_psi", &self.psi.len())
            .field("action_dim", &self.m)
            .finish_non_exhaustive()
    }
}

impl<T: Real> GaussianQApprox<T> {
    pub fn new(
        psi: Vec<T>,
        gamma: T,
        action_dim: usize,
        mean: impl Fn(&[T], T, &[T], &mut [T]) + Send + Sync + 'static,
        mean_jac: impl Fn(&[T], T, &[T], &mut [T]) + Send + Sync + 'static,
        precision: impl Fn(&[T], T, &[T], &mut [T]) + Send + Sync + 'static,
        precision_jac: impl Fn(&[T], T, &[T], &mut [T]) + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(gamma > T::zero()) {
            return Err(Error::InvalidConfig(format!("temperature must be positive, got {gamma}")));
        }
        Ok(Self {
            psi,
            gamma,
            m: action_dim,
            mean: Arc::new(mean),
            mean_jac: Arc::new(mean_jac),
            precision: Arc::new(precision),
            precision_jac: Arc::new(precision_jac),
        })
    }

    pub fn q1(&self, t: T, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.m];
        (self.mean)(&self.psi, t, x, &mut out);
        out
    }

    /// `q₂(t, x)`; fails unless symmetric positive definite.
    pub fn q2(&self, t: T, x: &[T]) -> Result<SquareMatrix<T>> {
        let mut buf = vec![T::zero(); self.m * self.m];
        (self.precision)(&self.psi, t, x, &mut buf);
        let q2 = SquareMatrix::from_row_major(self.m, &buf)?;
        q2.cholesky()?;
        Ok(q2)
    }

    pub fn q0(&self, t: T, x: &[T]) -> Result<T> {
        super::gaussian_q_normalizer(&self.q2(t, x)?.scaled(self.gamma.recip()), self.gamma, self.m)
    }

    fn factor(&self, t: T, x: &[T]) -> Result<(SquareMatrix<T>, Cholesky<T>)> {
        let q2 = self.q2(t, x)?;
        let chol = q2.cholesky()?;
        Ok((q2, chol))
    }

    fn try_eval(&self, t: T, x: &[T], a: &[T]) -> Result<T> {
        let (q2, chol) = self.factor(t, x)?;
        let mut u = self.q1(t, x);
        for (ui, &ai) in u.iter_mut().zip(a) {
            *ui = ai - *ui;
        }
        let m = T::of(self.m as f64);
        let hg = T::half() * self.gamma;
        Ok(-T::half() * q2.quad_form(&u) + hg * chol.log_det() - hg * m * (T::ln_two_pi() + self.gamma.ln()))
    }

    fn try_grad(&self, t: T, x: &[T], a: &[T], out: &mut [T]) -> Result<()> {
        let (m, l) = (self.m, self.psi.len());
        let (q2, chol) = self.factor(t, x)?;
        let inv = chol.inverse();
        let mut u = self.q1(t, x);
        for (ui, &ai) in u.iter_mut().zip(a) {
            *ui = ai - *ui;
        }
        let mut q2u = vec![T::zero(); m];
        q2.mul_vec(&u, &mut q2u);
        let mut j1 = vec![T::zero(); m * l];
        (self.mean_jac)(&self.psi, t, x, &mut j1);
        let mut j2 = vec![T::zero(); l * m * m];
        (self.precision_jac)(&self.psi, t, x, &mut j2);
        let hg = T::half() * self.gamma;
        for (k, o) in out.iter_mut().enumerate().take(l) {
            let mut g = T::zero();
            for i in 0..m {
                g += q2u[i] * j1[i * l + k];
            }
            let block = &j2[k * m * m..(k + 1) * m * m];
            let dq2 = SquareMatrix::from_row_major(m, block)?;
            g -= T::half() * dq2.quad_form(&u);
            let mut tr = T::zero();
            for i in 0..m {
                for j in 0..m {
                    tr += inv.get(i, j) * dq2.get(j, i);
                }
            }
            *o = g + hg * tr;
        }
        Ok(())
    }
}

impl<T: Real> QApprox<T> for GaussianQApprox<T> {
    fn n_psi(&self) -> usize {
        self.psi.len()
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
        self.m
    }
    /// NaN when `q₂` is not positive definite, so downstream divergence checks fire.
    fn eval(&self, t: T, x: &[T], a: &[T]) -> T {
        self.try_eval(t, x, a).unwrap_or_else(|_| T::nan())
    }
    fn grad_psi(&self, t: T, x: &[T], a: &[T], out: &mut [T]) {
        if self.try_grad(t, x, a, out).is_err() {
            out.iter_mut().for_each(|g| *g = T::nan());
        }
    }
}

impl<T: Real> GaussianPolicy<T> for GaussianQApprox<T> {
    fn action_dim(&self) -> usize {
        self.m
    }
    fn mean(&self, t: T, x: &[T], out: &mut [T]) {
        (self.mean)(&self.psi, t, x, out)
    }
    /// `γ q₂⁻¹`; a non-SPD `q₂` yields a NaN matrix that fails the sampler's Cholesky.
    fn variance(&self, t: T, x: &[T]) -> SquareMatrix<T> {
        match self.factor(t, x) {
            Ok((_, chol)) => chol.inverse().scaled(self.gamma),
            Err(_) => SquareMatrix::scalar(T::nan()),
        }
    }
    fn log_density(&self, t: T, x: &[T], a: &[T]) -> Result<T> {
        Ok(self.try_eval(t, x, a)? / self.gamma)
    }
}

impl<T: Real> ScoreFunction<T> for GaussianQApprox<T> {
    fn n_phi(&self) -> usize {
        self.psi.len()
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

/// State-independent Gaussian, e.g. an off-policy behavior distribution.
#[derive(Debug, Clone)]
pub struct FixedGaussian<T> {
    mean: Vec<T>,
    variance: SquareMatrix<T>,
    lower: SquareMatrix<T>,
}

impl<T: Real> FixedGaussian<T> {
    pub fn new(mean: Vec<T>, variance: SquareMatrix<T>) -> Result<Self> {
        if variance.dim() != mean.len() {
            return Err(Error::InvalidConfig("mean and variance dimensions differ".into()));
        }
        let lower = variance.cholesky()?.lower().clone();
        Ok(Self { mean, variance, lower })
    }

    pub fn scalar(mean: T, variance: T) -> Result<Self> {
        Self::new(vec![mean], SquareMatrix::scalar(variance))
    }
}

impl<T: Real> GaussianPolicy<T> for FixedGaussian<T> {
    fn action_dim(&self) -> usize {
        self.mean.len()
    }
    fn mean(&self, _t: T, _x: &[T], out: &mut [T]) {
        out.copy_from_slice(&self.mean);
    }
    fn variance(&self, _t: T, _x: &[T]) -> SquareMatrix<T> {
        self.variance.clone()
    }
    fn sample(&self, _t: T, _x: &[T], rng: &mut crate::envsim::RngStream, out: &mut [T]) -> Result<()> {
        let m = self.mean.len();
        for i in 0..m {
            out[i] = T::of(rng.standard_normal());
        }
        for i in (0..m).rev() {
            let mut v = self.mean[i];
            for j in 0..=i {
                v += self.lower.get(i, j) * out[j];
            }
            out[i] = v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::{RngStream, StreamId};

    /// 2-D action, ψ = (m₀, m₁, l₀₀, l₁₀, l₁₁) with q₁ = (m₀ + x, m₁) and q₂ = L Lᵀ + 0.1 I.
    pub(crate) fn two_dim(psi: Vec<f64>, gamma: f64) -> GaussianQApprox<f64> {
        GaussianQApprox::new(
            psi,
            gamma,
            2,
            |p, _t, x, out| {
                out[0] = p[0] + x[0];
                out[1] = p[1];
            },
            |_p, _t, _x, out| {
                out.iter_mut().for_each(|v| *v = 0.0);
                out[0] = 1.0;
                out[5 + 1] = 1.0;
            },
            |p, _t, _x, out| {
                let (a, b, c) = (p[2], p[3], p[4]);
                out.copy_from_slice(&[a * a + 0.1, a * b, a * b, b * b + c * c + 0.1]);
            },
            |p, _t, _x, out| {
                let (a, b, c) = (p[2], p[3], p[4]);
                out.iter_mut().for_each(|v| *v = 0.0);
                out[8..12].copy_from_slice(&[2.0 * a, b, b, 0.0]);
                out[12..16].copy_from_slice(&[0.0, a, a, 2.0 * b]);
                out[16..20].copy_from_slice(&[0.0, 0.0, 0.0, 2.0 * c]);
            },
        )
        .unwrap()
    }

    #[test]
    fn two_dim_gradient_matches_central_differences() {
        let q = two_dim(vec![0.3, -0.4, 1.2, 0.5, 0.9], 0.2);
        let (t, x, a) = (0.0, [0.7], [0.1, 1.3]);
        let mut g = [0.0; 5];
        q.grad_psi(t, &x, &a, &mut g);
        for k in 0..5 {
            let h = 1e-6;
            let mut p = q.psi().to_vec();
            p[k] += h;
            let up = two_dim(p.clone(), 0.2).eval(t, &x, &a);
            p[k] -= 2.0 * h;
            let dn = two_dim(p, 0.2).eval(t, &x, &a);
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-7 * (1.0 + g[k].abs()), "k={k} fd={fd} g={}", g[k]);
        }
    }

    #[test]
    fn two_dim_density_identity() {
        let q = two_dim(vec![0.3, -0.4, 1.2, 0.5, 0.9], 0.2);
        let (x, a) = ([0.7], [0.1, 1.3]);
        let via_q = q.log_density(0.0, &x, &a).unwrap();
        let mut mu = [0.0; 2];
        GaussianPolicy::mean(&q, 0.0, &x, &mut mu);
        let cov = q.variance(0.0, &x);
        let chol = cov.cholesky().unwrap();
        let u = [a[0] - mu[0], a[1] - mu[1]];
        let direct = -0.5 * (chol.inv_quad_form(&u) + chol.log_det() + 2.0 * std::f64::consts::TAU.ln());
        assert!((via_q - direct).abs() < 1e-12);
    }

    #[test]
    fn fixed_gaussian_moments() {
        let b = FixedGaussian::scalar(0.0, 1.0).unwrap();
        let mut rng = RngStream::new(3, StreamId::new(0, 0));
        let n = 100_000;
        let mut out = [0.0];
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            b.sample(0.0, &[0.0], &mut rng, &mut out).unwrap();
            s += out[0];
            s2 += out[0] * out[0];
        }
        let var = s2 / n as f64 - (s / n as f64).powi(2);
        assert!((var - 1.0).abs() < 0.03, "var={var}");
    }
}
