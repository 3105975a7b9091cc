use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::StreamId;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    OnPolicy,
    /// Actions came from a behavior policy unrelated to the learner.
    OffPolicy,
}

/// One `(t_k, x_k, a_k, r_k, x_{k+1})` step.
#[derive(Debug, Clone, Copy)]
pub struct Transition<'a, T> {
    pub k: usize,
    pub t: T,
    pub x: &'a [T],
    pub a: &'a [T],
    pub r: T,
    pub x_next: &'a [T],
}

/// Time-gridded record of one episode: `K + 1` states, `K` actions and reward rates.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    dt: T,
    state_dim: usize,
    action_dim: usize,
    times: Vec<T>,
    states: Vec<T>,
    actions: Vec<T>,
    rewards: Vec<T>,
    terminal: Option<T>,
    source: DataSource,
}

/// JSON sidecar stored next to an exported trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub dt: f64,
    pub state_dim: usize,
    pub action_dim: usize,
    pub steps: usize,
    pub terminal_payoff: Option<f64>,
    pub source: DataSource,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub stream: Option<StreamId>,
    #[serde(default)]
    pub config: serde_json::Value,
}

fn spacing_tolerance<T: Real>() -> T {
    T::of(1e-12).max(T::epsilon() * T::of(8.0))
}

impl<T: Real> Trajectory<T> {
    /// Builds a trajectory on the grid `t_k = k·dt`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dt: T,
        state_dim: usize,
        action_dim: usize,
        states: Vec<T>,
        actions: Vec<T>,
        rewards: Vec<T>,
        terminal: Option<T>,
        source: DataSource,
    ) -> Result<Self> {
        let k = rewards.len();
        let times = (0..=k).map(|i| T::of(i as f64) * dt).collect();
        Self::with_times(times, state_dim, action_dim, states, actions, rewards, terminal, source)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_times(
        times: Vec<T>,
        state_dim: usize,
        action_dim: usize,
        states: Vec<T>,
        actions: Vec<T>,
        rewards: Vec<T>,
        terminal: Option<T>,
        source: DataSource,
    ) -> Result<Self> {
        let k = rewards.len();
        if k == 0 {
            return Err(Error::InvalidConfig("trajectory must contain at least one step".into()));
        }
        if times.len() != k + 1 || states.len() != (k + 1) * state_dim || actions.len() != k * action_dim {
            return Err(Error::Contract(format!(
                "inconsistent trajectory lengths: {} times, {} states, {} actions, {k} rewards",
                times.len(),
                states.len() / state_dim.max(1),
                actions.len() / action_dim.max(1)
            )));
        }
        let dt = times[1] - times[0];
        if !(dt > T::zero()) {
            return Err(Error::Contract("trajectory times must be strictly increasing".into()));
        }
        let tol = spacing_tolerance::<T>();
        for w in times.windows(2) {
            let scale = T::one().max(w[1].abs()).max(dt);
            if !((w[1] - w[0]) > T::zero()) || ((w[1] - w[0]) - dt).abs() > tol * scale {
                return Err(Error::Contract("trajectory times are not evenly spaced".into()));
            }
        }
        Ok(Self { dt, state_dim, action_dim, times, states, actions, rewards, terminal, source })
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.rewards.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn source(&self) -> DataSource {
        self.source
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn time(&self, k: usize) -> T {
        self.times[k]
    }

    pub fn horizon(&self) -> T {
        self.times[self.steps()]
    }

    pub fn state(&self, k: usize) -> &[T] {
        &self.states[k * self.state_dim..(k + 1) * self.state_dim]
    }

    pub fn action(&self, k: usize) -> &[T] {
        &self.actions[k * self.action_dim..(k + 1) * self.action_dim]
    }

    pub fn reward(&self, k: usize) -> T {
        self.rewards[k]
    }

    pub fn rewards(&self) -> &[T] {
        &self.rewards
    }

    pub fn final_state(&self) -> &[T] {
        self.state(self.steps())
    }

    pub fn terminal_payoff(&self) -> Option<T> {
        self.terminal
    }

    /// Replaces the terminal payoff (e.g. after the Lagrange target moves).
    pub fn set_terminal_payoff(&mut self, h: Option<T>) {
        self.terminal = h;
    }

    pub fn transition(&self, k: usize) -> Transition<'_, T> {
        Transition {
            k,
            t: self.times[k],
            x: self.state(k),
            a: self.action(k),
            r: self.rewards[k],
            x_next: self.state(k + 1),
        }
    }

    pub fn transitions(&self) -> impl Iterator<Item = Transition<'_, T>> + '_ {
        (0..self.steps()).map(move |k| self.transition(k))
    }

    pub fn meta(&self) -> TrajectoryMeta {
        TrajectoryMeta {
            dt: self.dt.to_f64_lossy(),
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            steps: self.steps(),
            terminal_payoff: self.terminal.map(|v| v.to_f64_lossy()),
            source: self.source,
            seed: None,
            stream: None,
            config: serde_json::Value::Null,
        }
    }

    /// CSV with columns `k,t,x0..,a0..,r`; the final row carries only the terminal state.
    pub fn to_csv_string(&self) -> String {
        let (d, m) = (self.state_dim, self.action_dim);
        let mut out = String::with_capacity((self.steps() + 2) * 24 * (d + m + 3));
        out.push_str("k,t");
        for i in 0..d {
            let _ = write!(out, ",x{i}");
        }
        for i in 0..m {
            let _ = write!(out, ",a{i}");
        }
        out.push_str(",r\n");
        let num = |out: &mut String, v: T| {
            let _ = write!(out, ",{:.16e}", v.to_f64_lossy());
        };
        for k in 0..=self.steps() {
            let _ = write!(out, "{k}");
            num(&mut out, self.times[k]);
            for &v in self.state(k) {
                num(&mut out, v);
            }
            if k < self.steps() {
                for &v in self.action(k) {
                    num(&mut out, v);
                }
                num(&mut out, self.rewards[k]);
            } else {
                out.push_str(&",".repeat(m + 1));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv_str(csv: &str, meta: &TrajectoryMeta) -> Result<Self> {
        let (d, m) = (meta.state_dim, meta.action_dim);
        let mut lines = csv.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty trajectory file".into()))?;
        let width = 3 + d + m;
        if header.split(',').count() != width {
            return Err(Error::Parse(format!("expected {width} columns, header is {header:?}")));
        }
        let parse = |s: &str| -> Result<T> {
            s.trim()
                .parse::<f64>()
                .map(T::of)
                .map_err(|e| Error::Parse(format!("bad number {s:?}: {e}")))
        };
        let mut times = Vec::new();
        let mut states = Vec::new();
        let mut actions = Vec::new();
        let mut rewards = Vec::new();
        for (row, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != width {
                return Err(Error::Parse(format!("row {row}: expected {width} columns")));
            }
            if cols[0].trim().parse::<usize>().ok() != Some(row) {
                return Err(Error::Parse(format!("row {row}: step index out of order")));
            }
            times.push(parse(cols[1])?);
            for c in &cols[2..2 + d] {
                states.push(parse(c)?);
            }
            if row < meta.steps {
                for c in &cols[2 + d..2 + d + m] {
                    actions.push(parse(c)?);
                }
                rewards.push(parse(cols[2 + d + m])?);
            }
        }
        if rewards.len() != meta.steps || times.len() != meta.steps + 1 {
            return Err(Error::Parse(format!(
                "sidecar declares {} steps, file holds {}",
                meta.steps,
                times.len().saturating_sub(1)
            )));
        }
        Self::with_times(times, d, m, states, actions, rewards, meta.terminal_payoff.map(T::of), meta.source)
    }

    /// Writes `path` (CSV) and the sidecar `path.json`.
    pub fn write_csv(&self, path: impl AsRef<Path>, meta: &TrajectoryMeta) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv_string())?;
        fs::write(sidecar_path(path), serde_json::to_string_pretty(meta)?)?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<(Self, TrajectoryMeta)> {
        let path = path.as_ref();
        let meta: TrajectoryMeta = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
        let traj = Self::from_csv_str(&fs::read_to_string(path)?, &meta)?;
        Ok((traj, meta))
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trajectory<f64> {
        Trajectory::new(
            0.1,
            1,
            1,
            vec![1.0, 0.9, 1.0 / 3.0],
            vec![0.1, -2.0e-17],
            vec![-2.0, std::f64::consts::PI],
            Some(0.5),
            DataSource::OnPolicy,
        )
        .unwrap()
    }

    #[test]
    fn lengths_checked() {
        assert!(Trajectory::new(0.1, 1, 1, vec![1.0], vec![], vec![], None, DataSource::OnPolicy).is_err());
        assert!(Trajectory::new(0.1, 1, 1, vec![1.0, 2.0], vec![0.0, 1.0], vec![0.0], None, DataSource::OnPolicy)
            .is_err());
        let bad_times = vec![0.0, 0.1, 0.3];
        assert!(Trajectory::with_times(
            bad_times,
            1,
            1,
            vec![0.0; 3],
            vec![0.0; 2],
            vec![0.0; 2],
            None,
            DataSource::OnPolicy
        )
        .is_err());
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let tr = sample();
        let back = Trajectory::from_csv_str(&tr.to_csv_string(), &tr.meta()).unwrap();
        assert_eq!(back, tr);
        for k in 0..tr.steps() {
            assert_eq!(back.reward(k).to_bits(), tr.reward(k).to_bits());
            assert_eq!(back.action(k)[0].to_bits(), tr.action(k)[0].to_bits());
        }
    }

    #[test]
    fn transitions_expose_neighbouring_states() {
        let tr = sample();
        let t1 = tr.transition(1);
        assert_eq!(t1.x, &[0.9]);
        assert_eq!(t1.x_next, &[1.0 / 3.0]);
        assert_eq!(tr.transitions().count(), 2);
        assert!((tr.horizon() - 0.2).abs() < 1e-15);
    }
}
