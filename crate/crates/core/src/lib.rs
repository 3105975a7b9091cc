//! Continuous-time q-learning for entropy-regularized diffusion control.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the aliases below fix `f64`.

pub mod approx;
pub mod baselines;
pub mod envsim;
pub mod error;
pub mod learners;
pub mod linalg;
pub mod oracle;
pub mod quadrature;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub use approx::{GaussianPolicy, ParamSnapshot, QApprox, ScoreFunction, SmoothValue, ValueApprox};
pub use baselines::{Discount, PgLearner, QdtApprox, SarsaGrad, SarsaLearner, SarsaNext};
pub use envsim::{ControlModel, DataSource, EpisodeConfig, ProblemKind, RngStream, StreamId, Trajectory};
pub use learners::{ErgodicLearner, LearnerConfig, Schedule};
pub use oracle::LqErgodicSolution;

pub type Trajectory64 = envsim::Trajectory<f64>;
pub type EpisodeConfig64 = envsim::EpisodeConfig<f64>;
pub type LqParams64 = envsim::LqParams<f64>;
pub type LqModel64 = envsim::LqModel<f64>;
pub type MarketModel64 = envsim::MarketModel<f64>;
pub type LqValue64 = approx::LqValue<f64>;
pub type LqQ64 = approx::LqQ<f64>;
pub type MvValue64 = approx::MvValue<f64>;
pub type MvQ64 = approx::MvQ<f64>;
pub type QdtLq64 = baselines::QdtLq<f64>;
pub type QdtMv64 = baselines::QdtMv<f64>;
pub type LearnerConfig64 = learners::LearnerConfig<f64>;
