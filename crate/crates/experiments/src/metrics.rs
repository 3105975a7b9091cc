use serde::{Serialize, Serializer};

use crate::config::ConfigError;

/// Sharpe ratio; an infinite value is written as the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sharpe(pub f64);

impl Sharpe {
    pub fn is_finite(&self) -> bool {
        self.0.is_finite()
    }
}

impl Serialize for Sharpe {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else {
            s.serialize_str("inf")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TerminalMetrics {
    pub mean: f64,
    pub variance: f64,
    pub sharpe: Sharpe,
}

/// Sample mean, unbiased variance and `(mean − x0)/std` of terminal wealths.
pub fn metrics_terminal(wealths: &[f64], x0: f64) -> Result<TerminalMetrics, ConfigError> {
    if wealths.len() < 2 {
        return Err(ConfigError::Invalid("need at least two evaluation runs".into()));
    }
    let n = wealths.len() as f64;
    let mean = wealths.iter().sum::<f64>() / n;
    let variance = wealths.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sharpe = if variance > 0.0 { Sharpe((mean - x0) / variance.sqrt()) } else { Sharpe(f64::INFINITY) };
    Ok(TerminalMetrics { mean, variance, sharpe })
}

/// How the Lagrange multiplier reacts to the recent terminal wealth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MultiplierRule {
    /// `w ← w − α_w(mean − z)`.
    #[default]
    Target,
    /// `w ← w − α_w·mean`, the rule exactly as printed in the algorithm box.
    Printed,
}

pub fn lagrange_update(w: f64, wealths: &[f64], alpha_w: f64, z: f64, rule: MultiplierRule) -> f64 {
    if wealths.is_empty() {
        return w;
    }
    let mean = wealths.iter().sum::<f64>() / wealths.len() as f64;
    match rule {
        MultiplierRule::Target => w - alpha_w * (mean - z),
        MultiplierRule::Printed => w - alpha_w * mean,
    }
}

/// `Σ_{i≤k} r_iΔt / (kΔt)` for every `k`; the step size cancels.
pub fn running_average_reward(rewards: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    rewards
        .iter()
        .enumerate()
        .map(|(i, r)| {
            acc += r;
            acc / (i + 1) as f64
        })
        .collect()
}

/// Streaming version of [`running_average_reward`] that keeps about `points` samples.
#[derive(Debug, Clone)]
pub struct RunningAverage {
    sum: f64,
    count: u64,
    every: u64,
    dt: f64,
    pub series: Vec<(f64, f64)>,
}

impl RunningAverage {
    pub fn new(total_steps: u64, points: u64, dt: f64) -> Self {
        Self { sum: 0.0, count: 0, every: (total_steps / points.max(1)).max(1), dt, series: Vec::new() }
    }

    pub fn push(&mut self, r: f64) {
        self.sum += r;
        self.count += 1;
        if self.count % self.every == 0 {
            self.series.push((self.count as f64 * self.dt, self.value()));
        }
    }

    pub fn value(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.sum / self.count as f64
        }
    }
}
