use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use qlearn_core::envsim::LqParams;
use qlearn_core::oracle::lq_ergodic_fixed_point;
use qlearn_experiments::checks;
use qlearn_experiments::config::{parse_count, parse_key_values, parse_number};
use qlearn_experiments::{
    replicate, run_ergodic, run_mv, write_outputs, Algo, BehaviorMode, ConfigError, ErgodicConfig, MvExperimentConfig,
    RunRecord, Summary,
};

#[derive(Parser)]
#[command(name = "qlearn", version, about = "Continuous-time q-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mean-variance portfolio selection, episodic.
    Mv(RunArgs),
    /// Ergodic LQ control, learning on-policy.
    Lq(RunArgs),
    /// Ergodic LQ control, learning from a fixed behavior policy.
    LqOff(RunArgs),
    /// Print the closed-form ergodic LQ solution as JSON.
    Oracle {
        #[arg(long, default_value_t = 0.1)]
        gamma: f64,
    },
    /// Run the property checks; exits non-zero if any fails.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Every flag is kept as text so that a `--config` file can override it with the same key.
#[derive(Args, Default)]
struct RunArgs {
    #[arg(long, value_enum)]
    algo: Option<Algo>,
    /// Time step; fractions such as `1/25` are accepted.
    #[arg(long)]
    dt: Option<String>,
    /// Parameter updates (mv).
    #[arg(long)]
    episodes: Option<String>,
    /// Length of the single trajectory (lq, lq-off).
    #[arg(long)]
    horizon: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    reps: Option<String>,
    /// Directory for summary.json and per-replication CSV files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key=value` file; its entries override flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mu: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    eval_runs: Option<String>,
    #[arg(long)]
    z: Option<String>,
    /// `full` (100 reps, 20000 updates) or `desk` (20 reps, 5000 updates).
    #[arg(long)]
    profile: Option<String>,
    /// `raw` or `advantage`.
    #[arg(long)]
    sarsa_grad: Option<String>,
    /// `target` or `printed`.
    #[arg(long)]
    multiplier_rule: Option<String>,
    #[arg(long)]
    behavior_mean: Option<String>,
    #[arg(long)]
    behavior_variance: Option<String>,
}

impl RunArgs {
    fn into_map(self) -> Result<(BTreeMap<String, String>, Option<PathBuf>), ConfigError> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        put("algo", self.algo.map(|a| a.name().to_string()));
        put("dt", self.dt);
        put("episodes", self.episodes);
        put("horizon", self.horizon);
        put("gamma", self.gamma);
        put("alpha", self.alpha);
        put("seed", self.seed);
        put("reps", self.reps);
        put("mu", self.mu);
        put("sigma", self.sigma);
        put("batch", self.batch);
        put("eval-runs", self.eval_runs);
        put("z", self.z);
        put("profile", self.profile);
        put("sarsa-grad", self.sarsa_grad);
        put("multiplier-rule", self.multiplier_rule);
        put("behavior-mean", self.behavior_mean);
        put("behavior-variance", self.behavior_variance);
        let mut out = self.out;
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)?;
            for (k, v) in parse_key_values(&text)? {
                if k == "out" {
                    out = Some(PathBuf::from(v));
                } else {
                    m.insert(k, v);
                }
            }
        }
        Ok((m, out))
    }
}

fn enum_value<T: DeserializeOwned>(key: &str, v: &str) -> Result<T, ConfigError> {
    serde_json::from_value(serde_json::Value::String(v.to_string()))
        .map_err(|_| ConfigError::Invalid(format!("`{key}`: unrecognized value `{v}`")))
}

struct Settings {
    map: BTreeMap<String, String>,
}

impl Settings {
    fn new(mut map: BTreeMap<String, String>, allowed: &[&str]) -> Result<Self, ConfigError> {
        if let Some(bad) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(ConfigError::Invalid(format!("`{bad}` does not apply to this experiment")));
        }
        match map.get("profile").map(String::as_str) {
            None | Some("full") => {}
            Some("desk") => {
                map.entry("reps".into()).or_insert_with(|| "20".into());
                map.entry("episodes".into()).or_insert_with(|| "5000".into());
                map.entry("horizon".into()).or_insert_with(|| "1e4".into());
            }
            Some(p) => return Err(ConfigError::Invalid(format!("unknown profile `{p}`"))),
        }
        Ok(Self { map })
    }

    fn num(&self, key: &str, into: &mut f64) -> Result<(), ConfigError> {
        if let Some(v) = self.map.get(key) {
            *into = parse_number(key, v)?;
        }
        Ok(())
    }

    fn count(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        self.map.get(key).map_or(Ok(default), |v| parse_count(key, v))
    }

    fn enumeration<T: DeserializeOwned>(&self, key: &str, into: &mut T) -> Result<(), ConfigError> {
        if let Some(v) = self.map.get(key) {
            *into = enum_value(key, v)?;
        }
        Ok(())
    }

    fn algo(&self, default: Algo) -> Result<Algo, ConfigError> {
        self.map.get("algo").map_or(Ok(default), |v| v.parse())
    }
}

const COMMON: &[&str] = &["algo", "dt", "gamma", "alpha", "seed", "reps", "profile", "sarsa-grad"];

fn mv_command(args: RunArgs) -> Result<(Summary, Option<PathBuf>), ConfigError> {
    let (map, out) = args.into_map()?;
    let allowed = [COMMON, &["episodes", "mu", "sigma", "batch", "eval-runs", "z", "multiplier-rule"]].concat();
    let s = Settings::new(map, &allowed)?;
    let mut cfg = MvExperimentConfig::default();
    s.num("dt", &mut cfg.dt)?;
    s.num("gamma", &mut cfg.gamma)?;
    s.num("mu", &mut cfg.mu)?;
    s.num("sigma", &mut cfg.sigma)?;
    s.num("z", &mut cfg.z)?;
    if let Some(v) = s.map.get("alpha") {
        let a = parse_number("alpha", v)?;
        (cfg.alpha_theta, cfg.alpha_psi, cfg.alpha_phi) = (a, a, a);
    }
    cfg.episodes = s.count("episodes", cfg.episodes as u64)? as usize;
    cfg.batch = s.count("batch", cfg.batch as u64)? as usize;
    cfg.eval_runs = s.count("eval-runs", cfg.eval_runs as u64)? as usize;
    s.enumeration("sarsa-grad", &mut cfg.sarsa_grad)?;
    s.enumeration("multiplier-rule", &mut cfg.multiplier_rule)?;
    let algo = s.algo(Algo::QlearnMl)?;
    if algo == Algo::QlearnOnline {
        return Err(ConfigError::Invalid("qlearn-online is for the ergodic experiments".into()));
    }
    cfg.validate()?;
    let (seed, reps) = (s.count("seed", 0)?, s.count("reps", 100)? as usize);
    let records = collect(reps, |rep| run_mv(&cfg, algo, seed, rep))?;
    let evaluation = Some(cfg.evaluation_protocol());
    Ok((Summary::new("mv", algo, seed, serde_json::to_value(&cfg)?, evaluation, records), out))
}

fn lq_command(args: RunArgs, mode: BehaviorMode) -> Result<(Summary, Option<PathBuf>), ConfigError> {
    let (map, out) = args.into_map()?;
    let mut extra = vec!["horizon"];
    if mode == BehaviorMode::OffPolicy {
        extra.extend(["behavior-mean", "behavior-variance"]);
    }
    let s = Settings::new(map, &[COMMON, &extra].concat())?;
    let mut cfg = ErgodicConfig { params: LqParams::benchmark(), mode, ..ErgodicConfig::default() };
    s.num("dt", &mut cfg.dt)?;
    s.num("horizon", &mut cfg.horizon)?;
    s.num("gamma", &mut cfg.gamma)?;
    s.num("alpha", &mut cfg.alpha)?;
    s.num("behavior-mean", &mut cfg.behavior_mean)?;
    s.num("behavior-variance", &mut cfg.behavior_variance)?;
    s.enumeration("sarsa-grad", &mut cfg.sarsa_grad)?;
    let algo = s.algo(Algo::QlearnOnline)?;
    cfg.validate()?;
    let (seed, reps) = (s.count("seed", 0)?, s.count("reps", 100)? as usize);
    let records = collect(reps, |rep| run_ergodic(&cfg, algo, seed, rep))?;
    let name = if mode == BehaviorMode::OnPolicy { "lq" } else { "lq-off" };
    Ok((Summary::new(name, algo, seed, serde_json::to_value(&cfg)?, None, records), out))
}

/// Configuration errors surface from the first replication before the rest are launched.
fn collect<F>(reps: usize, run: F) -> Result<Vec<RunRecord>, ConfigError>
where
    F: Fn(u64) -> Result<RunRecord, ConfigError> + Sync + Send,
{
    if reps == 0 {
        return Err(ConfigError::Invalid("reps must be positive".into()));
    }
    let first = run(0)?;
    let mut records = replicate(reps - 1, |i| {
        run(i + 1).unwrap_or_else(|e| RunRecord::diverged(i + 1, 0, 0.0, e.to_string(), BTreeMap::new(), Default::default()))
    });
    records.insert(0, first);
    Ok(records)
}

fn finish(result: Result<(Summary, Option<PathBuf>), ConfigError>) -> ExitCode {
    match result {
        Ok((summary, out)) => {
            if let Some(dir) = out {
                if let Err(e) = write_outputs(&dir, &summary) {
                    eprintln!("error: {e}");
                    return ExitCode::FAILURE;
                }
            }
            match serde_json::to_string_pretty(&summary.aggregate) {
                Ok(s) => println!("{s}"),
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::FAILURE;
                }
            }
            ExitCode::SUCCESS
        }
        Err(e @ (ConfigError::Io(_) | ConfigError::Json(_))) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Mv(args) => finish(mv_command(args)),
        Command::Lq(args) => finish(lq_command(args, BehaviorMode::OnPolicy)),
        Command::LqOff(args) => finish(lq_command(args, BehaviorMode::OffPolicy)),
        Command::Oracle { gamma } => match lq_ergodic_fixed_point(LqParams::benchmark(), gamma) {
            Ok(sol) => {
                let snap = sol.snapshot();
                let json = serde_json::json!({ "solution": sol, "snapshot": snap });
                println!("{}", serde_json::to_string_pretty(&json).unwrap_or_default());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Command::Check { seed } => {
            let results = checks::run_all(seed);
            for r in &results {
                println!("{}", r.line());
            }
            if results.iter().all(|r| r.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
