//! Experiment harness: mean–variance portfolio learning, ergodic LQ runs, replication
//! management and result files.

pub mod checks;
pub mod config;
pub mod ergodic;
pub mod metrics;
pub mod mv;
pub mod record;

pub use config::{Algo, ConfigError};
pub use ergodic::{run_ergodic, BehaviorMode, ErgodicConfig};
pub use metrics::{lagrange_update, metrics_terminal, running_average_reward, MultiplierRule, Sharpe, TerminalMetrics};
pub use mv::{run_mv, MvExperimentConfig};
pub use record::{replicate, write_outputs, Metrics, RunRecord, Status, Summary};
