use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("config line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error(transparent)]
    Core(#[from] qlearn_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    /// Martingale-loss q-learning, batch of episodes.
    QlearnMl,
    /// Offline TD q-learning with gradient test functions.
    QlearnTd,
    /// Online ergodic q-learning.
    QlearnOnline,
    /// Δt-parameterized Q-learning.
    Sarsa,
    /// Actor–critic policy gradient.
    Pg,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::QlearnMl => "qlearn-ml",
            Algo::QlearnTd => "qlearn-td",
            Algo::QlearnOnline => "qlearn-online",
            Algo::Sarsa => "sarsa",
            Algo::Pg => "pg",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        <Algo as clap::ValueEnum>::from_str(s, false).map_err(|_| ConfigError::Invalid(format!("unknown algorithm `{s}`")))
    }
}

/// Flat `key = value` text. Blank lines and `#` comments are ignored; later keys win.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Syntax { line: i + 1, msg: format!("expected key=value, got `{line}`") });
        };
        let key = k.trim().trim_start_matches("--").to_string();
        if key.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1, msg: "empty key".into() });
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

/// Parses one value, naming the key on failure.
pub fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| ConfigError::Invalid(format!("cannot parse `{v}` for `{key}`")))
}

/// Accepts `0.04`, `1e5` and fractions such as `1/25`.
pub fn parse_number(key: &str, v: &str) -> Result<f64, ConfigError> {
    let x = match v.split_once('/') {
        Some((a, b)) => parse_value::<f64>(key, a.trim())? / parse_value::<f64>(key, b.trim())?,
        None => parse_value::<f64>(key, v)?,
    };
    if x.is_finite() {
        Ok(x)
    } else {
        Err(ConfigError::Invalid(format!("`{key}` must be finite")))
    }
}

/// Integer counts written either plainly or in float notation (`1e5`).
pub fn parse_count(key: &str, v: &str) -> Result<u64, ConfigError> {
    if let Ok(n) = v.parse::<u64>() {
        return Ok(n);
    }
    let x = parse_number(key, v)?;
    if x >= 0.0 && x.fract() == 0.0 && x < u64::MAX as f64 {
        Ok(x as u64)
    } else {
        Err(ConfigError::Invalid(format!("`{key}` must be a non-negative integer, got `{v}`")))
    }
}
