use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Algo, ConfigError};
use crate::metrics::{Sharpe, TerminalMetrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Ok,
    /// Divergence; reported as "NA" and kept out of averaged metrics.
    #[serde(rename = "NA-diverged")]
    NaDiverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErgodicMetrics {
    /// Learned policy mean `slope·x + intercept`.
    pub slope: f64,
    pub intercept: f64,
    pub policy_variance: f64,
    /// Learned long-run value `V`.
    pub v: f64,
    /// Running-average reward at the final time (on-policy runs only).
    pub average_reward: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Metrics {
    Terminal(TerminalMetrics),
    Ergodic(ErgodicMetrics),
}

/// Column-named parameter trace.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Trace {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for row in &self.rows {
            let mut first = true;
            for v in row {
                if !first {
                    s.push(',');
                }
                first = false;
                let _ = write!(s, "{v}");
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub replication: u64,
    pub seed: u64,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    /// Episode index or elapsed time at which divergence was detected.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diverged_at: Option<f64>,
    pub metrics: Option<Metrics>,
    /// Final parameters (last finite ones when diverged).
    pub params: BTreeMap<String, f64>,
    #[serde(skip)]
    pub trace: Trace,
    /// `(time, running-average reward)`.
    #[serde(skip)]
    pub rewards: Vec<(f64, f64)>,
}

impl RunRecord {
    pub fn ok(replication: u64, seed: u64, metrics: Metrics, params: BTreeMap<String, f64>, trace: Trace) -> Self {
        Self { replication, seed, status: Status::Ok, reason: None, diverged_at: None, metrics: Some(metrics), params, trace, rewards: Vec::new() }
    }

    pub fn diverged(replication: u64, seed: u64, at: f64, reason: String, params: BTreeMap<String, f64>, trace: Trace) -> Self {
        Self {
            replication,
            seed,
            status: Status::NaDiverged,
            reason: Some(reason),
            diverged_at: Some(at),
            metrics: None,
            params,
            trace,
            rewards: Vec::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    pub fn terminal(&self) -> Option<&TerminalMetrics> {
        match &self.metrics {
            Some(Metrics::Terminal(m)) => Some(m),
            _ => None,
        }
    }

    pub fn ergodic(&self) -> Option<&ErgodicMetrics> {
        match &self.metrics {
            Some(Metrics::Ergodic(m)) => Some(m),
            _ => None,
        }
    }
}

pub(crate) fn named(names: &[&str], values: &[f64]) -> BTreeMap<String, f64> {
    names.iter().zip(values).map(|(n, v)| (n.to_string(), *v)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TerminalAggregate {
    pub mean: f64,
    pub variance: f64,
    pub sharpe: Sharpe,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErgodicAggregate {
    pub slope: f64,
    pub intercept: f64,
    pub policy_variance: f64,
    pub v: f64,
    pub average_reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub ok: usize,
    /// Diverged replications; they never enter the averages.
    pub na: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub terminal: Option<TerminalAggregate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ergodic: Option<ErgodicAggregate>,
}

impl Aggregate {
    /// Fold over records already sorted by replication index.
    fn fold(records: &[RunRecord]) -> Self {
        let ok: Vec<&RunRecord> = records.iter().filter(|r| r.is_ok()).collect();
        let na = records.len() - ok.len();
        let avg = |f: &dyn Fn(&RunRecord) -> Option<f64>| -> Option<f64> {
            let vals: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        let terminal = avg(&|r| r.terminal().map(|m| m.mean)).map(|mean| TerminalAggregate {
            mean,
            variance: avg(&|r| r.terminal().map(|m| m.variance)).unwrap_or(f64::NAN),
            sharpe: Sharpe(avg(&|r| r.terminal().map(|m| m.sharpe.0)).unwrap_or(f64::NAN)),
        });
        let ergodic = avg(&|r| r.ergodic().map(|m| m.slope)).map(|slope| ErgodicAggregate {
            slope,
            intercept: avg(&|r| r.ergodic().map(|m| m.intercept)).unwrap_or(f64::NAN),
            policy_variance: avg(&|r| r.ergodic().map(|m| m.policy_variance)).unwrap_or(f64::NAN),
            v: avg(&|r| r.ergodic().map(|m| m.v)).unwrap_or(f64::NAN),
            average_reward: avg(&|r| r.ergodic().and_then(|m| m.average_reward)),
        });
        Self { ok: ok.len(), na, terminal, ergodic }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub experiment: String,
    pub algo: Algo,
    pub seed: u64,
    pub reps: usize,
    pub config: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<String>,
    pub aggregate: Aggregate,
    pub replications: Vec<RunRecord>,
}

impl Summary {
    pub fn new(
        experiment: &str,
        algo: Algo,
        seed: u64,
        config: serde_json::Value,
        evaluation: Option<String>,
        mut records: Vec<RunRecord>,
    ) -> Self {
        records.sort_by_key(|r| r.replication);
        let aggregate = Aggregate::fold(&records);
        Self { experiment: experiment.into(), algo, seed, reps: records.len(), config, evaluation, aggregate, replications: records }
    }

    pub fn to_json(&self) -> Result<String, ConfigError> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Runs `reps` replications on the rayon pool; the output is ordered by replication index.
pub fn replicate<F>(reps: usize, run: F) -> Vec<RunRecord>
where
    F: Fn(u64) -> RunRecord + Sync + Send,
{
    let mut out: Vec<RunRecord> = (0..reps as u64).into_par_iter().map(run).collect();
    out.sort_by_key(|r| r.replication);
    out
}

/// Writes `summary.json`, `trace_<rep>.csv` and, when present, `rewards_<rep>.csv`.
pub fn write_outputs(dir: &Path, summary: &Summary) -> Result<(), ConfigError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("summary.json"), summary.to_json()?)?;
    for r in &summary.replications {
        fs::write(dir.join(format!("trace_{}.csv", r.replication)), r.trace.to_csv())?;
        if !r.rewards.is_empty() {
            let mut t = Trace::new(&["time", "average_reward"]);
            for &(a, b) in &r.rewards {
                t.push(vec![a, b]);
            }
            fs::write(dir.join(format!("rewards_{}.csv", r.replication)), t.to_csv())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(rep: u64, sharpe: Option<f64>) -> RunRecord {
        match sharpe {
            Some(s) => RunRecord::ok(
                rep,
                1,
                Metrics::Terminal(TerminalMetrics { mean: 1.4, variance: 0.01, sharpe: Sharpe(s) }),
                named(&["w"], &[1.4]),
                Trace::new(&["episode", "w"]),
            ),
            None => RunRecord::diverged(rep, 1, 10.0, "boom".into(), BTreeMap::new(), Trace::default()),
        }
    }

    #[test]
    fn diverged_runs_are_counted_not_averaged() {
        let s = Summary::new("mv", Algo::Sarsa, 1, serde_json::json!({}), None, vec![rec(0, Some(2.0)), rec(1, None), rec(2, Some(4.0))]);
        assert_eq!((s.aggregate.ok, s.aggregate.na), (2, 1));
        assert_eq!(s.aggregate.terminal.unwrap().sharpe.0, 3.0);
        let json = s.to_json().unwrap();
        assert!(json.contains("\"NA-diverged\""));
        for r in &s.replications {
            assert_eq!(r.metrics.is_some(), r.is_ok());
        }
    }

    #[test]
    fn aggregation_ignores_completion_order() {
        let a = Summary::new("mv", Algo::Pg, 1, serde_json::json!({}), None, vec![rec(0, Some(1.0)), rec(1, Some(2.0)), rec(2, None)]);
        let b = Summary::new("mv", Algo::Pg, 1, serde_json::json!({}), None, vec![rec(2, None), rec(1, Some(2.0)), rec(0, Some(1.0))]);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn trace_csv_layout() {
        let mut t = Trace::new(&["time", "psi1"]);
        t.push(vec![0.5, -0.25]);
        assert_eq!(t.to_csv(), "time,psi1\n0.5,-0.25\n");
    }
}
