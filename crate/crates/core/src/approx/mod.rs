//! Parametric value functions, normalized Gaussian q-functions and the policies they induce.

mod families;
mod generic;

pub use families::{lq_q, lq_value, mv_q, mv_value, LqQ, LqValue, MvQ, MvValue};
pub use generic::{FixedGaussian, FnValue, GaussianQApprox};

use serde::{Deserialize, Serialize};

use crate::envsim::{RngStream, SamplingPolicy};
use crate::error::{Error, Result};
use crate::linalg::SquareMatrix;
use crate::scalar::Real;

/// Parametric value function `J^θ(t, x)`.
pub trait ValueApprox<T: Real>: Send + Sync {
    fn n_theta(&self) -> usize;
    fn theta(&self) -> &[T];
    fn set_theta(&mut self, theta: &[T]);

    fn eval(&self, t: T, x: &[T]) -> T;
    fn grad_theta(&self, t: T, x: &[T], out: &mut [T]);

    /// Whether `J^θ(T, ·)` equals the terminal payoff for every `θ`.
    fn terminal_pinned(&self) -> bool {
        false
    }
}

/// Value function with the analytic derivatives needed by the Hamiltonian.
pub trait SmoothValue<T: Real>: ValueApprox<T> {
    fn time_derivative(&self, t: T, x: &[T]) -> T;
    fn gradient_x(&self, t: T, x: &[T], out: &mut [T]);
    /// Row-major `d × d` Hessian in `x`.
    fn hessian_x(&self, t: T, x: &[T], out: &mut [T]);
}

/// Parametric q-function `q^ψ(t, x, a)`.
pub trait QApprox<T: Real>: Send + Sync {
    fn n_psi(&self) -> usize;
    fn psi(&self) -> &[T];
    fn set_psi(&mut self, psi: &[T]);
    fn gamma(&self) -> T;
    fn action_dim(&self) -> usize;

    fn eval(&self, t: T, x: &[T], a: &[T]) -> T;
    fn grad_psi(&self, t: T, x: &[T], a: &[T], out: &mut [T]);
}

/// Gaussian action distribution `N(mean(t,x), variance(t,x))`.
pub trait GaussianPolicy<T: Real>: Send + Sync {
    fn action_dim(&self) -> usize;
    fn mean(&self, t: T, x: &[T], out: &mut [T]);
    fn variance(&self, t: T, x: &[T]) -> SquareMatrix<T>;

    fn log_density(&self, t: T, x: &[T], a: &[T]) -> Result<T> {
        let m = GaussianPolicy::action_dim(self);
        let mut mu = vec![T::zero(); m];
        self.mean(t, x, &mut mu);
        let chol = self.variance(t, x).cholesky()?;
        for (d, &ai) in mu.iter_mut().zip(a) {
            *d = ai - *d;
        }
        let m_t = T::of(m as f64);
        Ok(-T::half() * (chol.inv_quad_form(&mu) + chol.log_det() + m_t * T::ln_two_pi()))
    }

    fn entropy(&self, t: T, x: &[T]) -> Result<T> {
        let m = T::of(GaussianPolicy::action_dim(self) as f64);
        let chol = self.variance(t, x).cholesky()?;
        Ok(T::half() * (chol.log_det() + m * (T::ln_two_pi() + T::one())))
    }

    /// `a = mean + chol(variance)·ξ`, `ξ ~ N(0, I)` from the stream.
    fn sample(&self, t: T, x: &[T], rng: &mut RngStream, out: &mut [T]) -> Result<()> {
        let m = GaussianPolicy::action_dim(self);
        let chol = self.variance(t, x).cholesky()?;
        let mut xi = vec![T::zero(); m];
        rng.fill_normal(&mut xi, T::one());
        chol.mul_lower(&xi, out);
        let mut mu = vec![T::zero(); m];
        self.mean(t, x, &mut mu);
        for (o, mi) in out.iter_mut().zip(mu) {
            *o += mi;
        }
        Ok(())
    }
}

impl<T: Real, P: GaussianPolicy<T>> SamplingPolicy<T> for P {
    fn action_dim(&self) -> usize {
        GaussianPolicy::action_dim(self)
    }

    fn sample_action(&self, t: T, x: &[T], rng: &mut RngStream, out: &mut [T]) -> Result<()> {
        self.sample(t, x, rng, out)
    }
}

/// Gaussian policy family with an analytic score `∂ log π^φ / ∂φ`.
pub trait ScoreFunction<T: Real>: GaussianPolicy<T> {
    fn n_phi(&self) -> usize;
    fn phi(&self) -> &[T];
    fn set_phi(&mut self, phi: &[T]);
    fn grad_log_density(&self, t: T, x: &[T], a: &[T], out: &mut [T]);
}

pub fn policy_sample<T: Real, P: GaussianPolicy<T> + ?Sized>(
    policy: &P,
    t: T,
    x: &[T],
    rng: &mut RngStream,
) -> Result<Vec<T>> {
    let mut a = vec![T::zero(); policy.action_dim()];
    policy.sample(t, x, rng, &mut a)?;
    Ok(a)
}

pub fn policy_log_density<T: Real, P: GaussianPolicy<T> + ?Sized>(policy: &P, t: T, x: &[T], a: &[T]) -> Result<T> {
    policy.log_density(t, x, a)
}

pub fn policy_entropy<T: Real, P: GaussianPolicy<T> + ?Sized>(policy: &P, t: T, x: &[T]) -> Result<T> {
    policy.entropy(t, x)
}

/// `(γ/2)·log det P − (mγ/2)·log 2π` for a symmetric positive-definite `P`.
///
/// With `P = q₂/γ` (the precision of the induced policy `N(q₁, γ q₂⁻¹)`) this is the
/// constant that makes `∫ exp{q/γ} da = 1`.
pub fn gaussian_q_normalizer<T: Real>(precision: &SquareMatrix<T>, gamma: T, m: usize) -> Result<T> {
    if !(gamma > T::zero()) {
        return Err(Error::Domain(format!("temperature must be positive, got {gamma}")));
    }
    if precision.dim() != m {
        return Err(Error::Domain(format!("expected a {m}x{m} matrix, got {}x{}", precision.dim(), precision.dim())));
    }
    let chol = precision.cholesky()?;
    let half_gamma = T::half() * gamma;
    Ok(half_gamma * chol.log_det() - half_gamma * T::of(m as f64) * T::ln_two_pi())
}

/// Negates a value function, turning a cost-to-go into a reward-to-go.
#[derive(Debug, Clone)]
pub struct Negated<V>(pub V);

impl<T: Real, V: ValueApprox<T>> ValueApprox<T> for Negated<V> {
    fn n_theta(&self) -> usize {
        self.0.n_theta()
    }
    fn theta(&self) -> &[T] {
        self.0.theta()
    }
    fn set_theta(&mut self, theta: &[T]) {
        self.0.set_theta(theta)
    }
    fn eval(&self, t: T, x: &[T]) -> T {
        -self.0.eval(t, x)
    }
    fn grad_theta(&self, t: T, x: &[T], out: &mut [T]) {
        self.0.grad_theta(t, x, out);
        out.iter_mut().for_each(|g| *g = -*g);
    }
    fn terminal_pinned(&self) -> bool {
        self.0.terminal_pinned()
    }
}

impl<T: Real, V: SmoothValue<T>> SmoothValue<T> for Negated<V> {
    fn time_derivative(&self, t: T, x: &[T]) -> T {
        -self.0.time_derivative(t, x)
    }
    fn gradient_x(&self, t: T, x: &[T], out: &mut [T]) {
        self.0.gradient_x(t, x, out);
        out.iter_mut().for_each(|g| *g = -*g);
    }
    fn hessian_x(&self, t: T, x: &[T], out: &mut [T]) {
        self.0.hessian_x(t, x, out);
        out.iter_mut().for_each(|g| *g = -*g);
    }
}

/// JSON parameter snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSnapshot {
    pub name: String,
    pub theta: Vec<f64>,
    pub psi: Vec<f64>,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<f64>,
    #[serde(default, rename = "V", skip_serializing_if = "Option::is_none")]
    pub v: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub oracle: bool,
}

impl ParamSnapshot {
    pub fn new(name: impl Into<String>, theta: &[f64], psi: &[f64], gamma: f64) -> Self {
        Self { name: name.into(), theta: theta.to_vec(), psi: psi.to_vec(), gamma, w: None, v: None, oracle: false }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
