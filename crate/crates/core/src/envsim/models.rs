use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ControlModel, ProblemKind};
use crate::error::{Error, Result};
use crate::scalar::Real;

type VecFn<T> = Arc<dyn Fn(T, &[T], &[T], &mut [T]) + Send + Sync>;
type RewardFn<T> = Arc<dyn Fn(T, &[T], &[T]) -> T + Send + Sync>;
type TerminalFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;

/// Model assembled from closures.
#[derive(Clone)]
pub struct FnModel<T> {
    dims: (usize, usize, usize),
    drift: VecFn<T>,
    diffusion: VecFn<T>,
    reward: RewardFn<T>,
    terminal: Option<TerminalFn<T>>,
    beta: T,
}

impl<T: Real> FnModel<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn episodic(
        state_dim: usize,
        action_dim: usize,
        noise_dim: usize,
        drift: impl Fn(T, &[T], &[T], &mut [T]) + Send + Sync + 'static,
        diffusion: impl Fn(T, &[T], &[T], &mut [T]) + Send + Sync + 'static,
        reward: impl Fn(T, &[T], &[T]) -> T + Send + Sync + 'static,
        terminal: impl Fn(&[T]) -> T + Send + Sync + 'static,
        beta: T,
    ) -> Self {
        assert!(beta >= T::zero(), "discount must be non-negative");
        Self {
            dims: (state_dim, action_dim, noise_dim),
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            reward: Arc::new(reward),
            terminal: Some(Arc::new(terminal)),
            beta,
        }
    }

    /// Long-run average problem: no terminal payoff and no discounting by construction.
    pub fn ergodic(
        state_dim: usize,
        action_dim: usize,
        noise_dim: usize,
        drift: impl Fn(T, &[T], &[T], &mut [T]) + Send + Sync + 'static,
        diffusion: impl Fn(T, &[T], &[T], &mut [T]) + Send + Sync + 'static,
        reward: impl Fn(T, &[T], &[T]) -> T + Send + Sync + 'static,
    ) -> Self {
        Self {
            dims: (state_dim, action_dim, noise_dim),
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            reward: Arc::new(reward),
            terminal: None,
            beta: T::zero(),
        }
    }
}

impl<T> fmt::Debug for FnModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnModel")
            .field("dims", &self.dims)
            .field("terminal", &self.terminal.is_some())
            .finish_non_exhaustive()
    }
}

impl<T: Real> ControlModel<T> for FnModel<T> {
    fn state_dim(&self) -> usize {
        self.dims.0
    }
    fn action_dim(&self) -> usize {
        self.dims.1
    }
    fn noise_dim(&self) -> usize {
        self.dims.2
    }
    fn kind(&self) -> ProblemKind {
        if self.terminal.is_some() {
            ProblemKind::Episodic
        } else {
            ProblemKind::Ergodic
        }
    }
    fn drift(&self, t: T, x: &[T], a: &[T], out: &mut [T]) {
        (self.drift)(t, x, a, out)
    }
    fn diffusion(&self, t: T, x: &[T], a: &[T], out: &mut [T]) {
        (self.diffusion)(t, x, a, out)
    }
    fn reward_rate(&self, t: T, x: &[T], a: &[T]) -> T {
        (self.reward)(t, x, a)
    }
    fn terminal_reward(&self, x: &[T]) -> Option<T> {
        self.terminal.as_ref().map(|h| h(x))
    }
    fn discount(&self) -> T {
        self.beta
    }
}

/// Lagrange-relaxed mean–variance target: terminal payoff `−(x − w)² + (w − z)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagrangeTarget<T> {
    pub w: T,
    pub z: T,
}

/// Discounted wealth of a single risky asset: `dX = a[(μ − r)dt + σ dW]`, no running reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketModel<T> {
    pub mu: T,
    pub sigma: T,
    pub rfree: T,
    pub target: Option<LagrangeTarget<T>>,
}

impl<T: Real> MarketModel<T> {
    pub fn excess_return(&self) -> T {
        self.mu - self.rfree
    }

    pub fn with_target(mut self, w: T, z: T) -> Self {
        self.target = Some(LagrangeTarget { w, z });
        self
    }
}

pub fn builtin_mv_env<T: Real>(mu: T, sigma: T, rfree: T) -> Result<MarketModel<T>> {
    if !(sigma > T::zero()) || !sigma.is_finite() {
        return Err(Error::InvalidConfig(format!("volatility must be positive, got {sigma}")));
    }
    if !mu.is_finite() || !rfree.is_finite() {
        return Err(Error::InvalidConfig("market parameters must be finite".into()));
    }
    Ok(MarketModel { mu, sigma, rfree, target: None })
}

impl<T: Real> ControlModel<T> for MarketModel<T> {
    fn state_dim(&self) -> usize {
        1
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn kind(&self) -> ProblemKind {
        ProblemKind::Episodic
    }
    fn drift(&self, _t: T, _x: &[T], a: &[T], out: &mut [T]) {
        out[0] = a[0] * self.excess_return();
    }
    fn diffusion(&self, _t: T, _x: &[T], a: &[T], out: &mut [T]) {
        out[0] = a[0] * self.sigma;
    }
    fn reward_rate(&self, _t: T, _x: &[T], _a: &[T]) -> T {
        T::zero()
    }
    fn terminal_reward(&self, x: &[T]) -> Option<T> {
        self.target.map(|LagrangeTarget { w, z }| {
            let (dx, dz) = (x[0] - w, w - z);
            dz * dz - dx * dx
        })
    }
    fn discount(&self) -> T {
        T::zero()
    }
}

/// Coefficients of the scalar ergodic LQ problem
/// `dX = (AX + Ba)dt + (CX + Da)dW`, `r = −(M/2 x² + R x a + N/2 a² + P x + Q a)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LqParams<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub d: T,
    pub m: T,
    pub n: T,
    pub r: T,
    pub p: T,
    pub q: T,
}

impl<T: Real> LqParams<T> {
    /// `A=−1, B=C=0, D=1, M=N=Q=2, R=P=1`.
    pub fn benchmark() -> Self {
        let o = T::of;
        Self { a: o(-1.0), b: o(0.0), c: o(0.0), d: o(1.0), m: o(2.0), n: o(2.0), r: o(1.0), p: o(1.0), q: o(2.0) }
    }

    pub fn reward(&self, x: T, a: T) -> T {
        let h = T::half();
        -(h * self.m * x * x + self.r * x * a + h * self.n * a * a + self.p * x + self.q * a)
    }

    pub fn is_finite(&self) -> bool {
        [self.a, self.b, self.c, self.d, self.m, self.n, self.r, self.p, self.q]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LqModel<T> {
    pub params: LqParams<T>,
}

pub fn builtin_lq_env<T: Real>(params: LqParams<T>) -> LqModel<T> {
    LqModel { params }
}

impl<T: Real> ControlModel<T> for LqModel<T> {
    fn state_dim(&self) -> usize {
        1
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn kind(&self) -> ProblemKind {
        ProblemKind::Ergodic
    }
    fn drift(&self, _t: T, x: &[T], a: &[T], out: &mut [T]) {
        out[0] = self.params.a * x[0] + self.params.b * a[0];
    }
    fn diffusion(&self, _t: T, x: &[T], a: &[T], out: &mut [T]) {
        out[0] = self.params.c * x[0] + self.params.d * a[0];
    }
    fn reward_rate(&self, _t: T, x: &[T], a: &[T]) -> T {
        self.params.reward(x[0], a[0])
    }
    fn terminal_reward(&self, _x: &[T]) -> Option<T> {
        None
    }
    fn discount(&self) -> T {
        T::zero()
    }
}
