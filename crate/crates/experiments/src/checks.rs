//! Always-on property suite: normalization constraints, analytic gradients, martingale-loss
//! recursion, zero learning rate, policy improvement, the SARSA mean-zero term and the
//! `Q_Δt` expansion.

use qlearn_core::approx::{lq_q, lq_value, mv_q, mv_value, FixedGaussian, Negated};
use qlearn_core::baselines::{qdt_lq_preset, qdt_mv_preset, sarsa_bracket};
use qlearn_core::envsim::{builtin_lq_env, builtin_mv_env, simulate_episode, EnvStepper, LqParams};
use qlearn_core::learners::{
    ergodic_delta, martingale_residuals, ml_update, offline_td_update, online_td_update, ErgodicLearner,
};
use qlearn_core::oracle::{lq_ergodic_fixed_point, lq_improve, lq_policy_value, q_from_value_ergodic, qdt_expansion_check};
use qlearn_core::quadrature::GaussHermite;
use qlearn_core::{
    Discount, EpisodeConfig, GaussianPolicy, LearnerConfig, PgLearner, QApprox, QdtApprox, RngStream, SarsaGrad,
    SarsaLearner, SarsaNext, ScoreFunction, StreamId, ValueApprox,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }

    pub fn line(&self) -> String {
        format!("[{}] {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

const GAMMA: f64 = 0.1;

/// `(|∫exp{q/γ}da − 1|, |∫(q − γ log π)π da|)` for a scalar policy `N(mean, var)`.
fn constraint_errors(q: impl Fn(f64) -> f64, log_pi: impl Fn(f64) -> f64, gamma: f64, mean: f64, var: f64) -> (f64, f64) {
    let gh = GaussHermite::new(40);
    let mass = gh.gaussian_expectation(mean, var, |a| {
        let u = a - mean;
        let log_phi = -0.5 * (u * u / var + (std::f64::consts::TAU * var).ln());
        (q(a) / gamma - log_phi).exp()
    });
    let gap = gh.gaussian_expectation(mean, var, |a| q(a) - gamma * log_pi(a));
    ((mass - 1.0).abs(), gap.abs())
}

pub fn normalization_constraints() -> CheckOutcome {
    let mut worst: f64 = 0.0;
    let vals = [-1.5, -0.3, 0.0, 0.8, 1.7];
    for &p1 in &vals {
        for &p3 in &vals {
            for &x in &[-2.0, 0.5, 3.0] {
                let q = lq_q([p1, -p3, p3], GAMMA);
                let (m, g) = constraint_errors(
                    |a| q.eval(0.0, &[x], &[a]),
                    |a| q.log_density(0.0, &[x], &[a]).unwrap_or(f64::NAN),
                    GAMMA,
                    q.mean_scalar(x),
                    q.variance_scalar(),
                );
                worst = worst.max(m).max(g);
                let t = 0.25 * (p3 + 1.5);
                let q = mv_q([p1, p3, -p1], 1.3, GAMMA, 1.0);
                let (m, g) = constraint_errors(
                    |a| q.eval(t, &[x], &[a]),
                    |a| q.log_density(t, &[x], &[a]).unwrap_or(f64::NAN),
                    GAMMA,
                    q.mean_scalar(x),
                    q.variance_scalar(t),
                );
                worst = worst.max(m).max(g);
            }
        }
    }
    if let Ok(sol) = lq_ergodic_fixed_point(LqParams::benchmark(), GAMMA) {
        let q = sol.q();
        for x in [-5.0, 0.0, 5.0] {
            let (m, g) = constraint_errors(
                |a| q.eval(0.0, &[x], &[a]),
                |a| q.log_density(0.0, &[x], &[a]).unwrap_or(f64::NAN),
                GAMMA,
                q.mean_scalar(x),
                q.variance_scalar(),
            );
            worst = worst.max(m).max(g);
        }
    } else {
        worst = f64::INFINITY;
    }
    CheckOutcome::new("normalization constraints", worst < 1e-8, format!("max violation {worst:.3e} (tol 1e-8)"))
}

fn central(p: &[f64], f: &dyn Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut q = p.to_vec();
    (0..p.len())
        .map(|i| {
            let h = 1e-6 * p[i].abs().max(1.0);
            q[i] = p[i] + h;
            let up = f(&q);
            q[i] = p[i] - h;
            let dn = f(&q);
            q[i] = p[i];
            (up - dn) / (2.0 * h)
        })
        .collect()
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-2))
        .fold(0.0, f64::max)
}

pub fn analytic_gradients(seed: u64) -> CheckOutcome {
    let mut rng = RngStream::new(seed, StreamId::new(7, 0));
    let mut u = |lo: f64, hi: f64| lo + (hi - lo) * (0.5 + 0.5 * (rng.standard_normal() / 3.0).tanh());
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let p3 = [u(-1.5, 1.5), u(-1.5, 1.5), u(-1.5, 1.5)];
        let p5 = [u(-1.5, 1.5), u(-1.5, 1.5), u(-1.5, 1.5), u(-1.5, 1.5), u(-1.5, 1.5)];
        let (t, x, a, dt) = (u(0.0, 1.0), u(-1.0, 2.5), u(-3.0, 3.0), u(0.001, 0.1));
        let mut g3 = [0.0; 3];
        let mut g5 = [0.0; 5];

        let j = Negated(mv_value(p3, 1.2, 1.4, 1.0));
        j.grad_theta(t, &[x], &mut g3);
        worst = worst.max(rel_err(&g3, &central(&p3, &|p| Negated(mv_value([p[0], p[1], p[2]], 1.2, 1.4, 1.0)).eval(t, &[x]))));

        let jl = lq_value([p3[0], p3[1]]);
        let mut g2 = [0.0; 2];
        jl.grad_theta(0.0, &[x], &mut g2);
        worst = worst.max(rel_err(&g2, &central(&p3[..2], &|p| lq_value([p[0], p[1]]).eval(0.0, &[x]))));

        let q = mv_q(p3, 1.2, GAMMA, 1.0);
        q.grad_psi(t, &[x], &[a], &mut g3);
        worst = worst.max(rel_err(&g3, &central(&p3, &|p| mv_q([p[0], p[1], p[2]], 1.2, GAMMA, 1.0).eval(t, &[x], &[a]))));
        q.grad_log_density(t, &[x], &[a], &mut g3);
        worst = worst.max(rel_err(
            &g3,
            &central(&p3, &|p| mv_q([p[0], p[1], p[2]], 1.2, GAMMA, 1.0).log_density(t, &[x], &[a]).unwrap_or(f64::NAN)),
        ));

        let q = lq_q(p3, GAMMA);
        q.grad_psi(0.0, &[x], &[a], &mut g3);
        worst = worst.max(rel_err(&g3, &central(&p3, &|p| lq_q([p[0], p[1], p[2]], GAMMA).eval(0.0, &[x], &[a]))));
        q.grad_log_density(0.0, &[x], &[a], &mut g3);
        worst = worst.max(rel_err(
            &g3,
            &central(&p3, &|p| lq_q([p[0], p[1], p[2]], GAMMA).log_density(0.0, &[x], &[a]).unwrap_or(f64::NAN)),
        ));

        let qm = qdt_mv_preset(p5, 1.2, 1.4, 1.0, GAMMA, dt);
        qm.grad_psi(t, &[x], &[a], &mut g5);
        worst = worst.max(rel_err(
            &g5,
            &central(&p5, &|p| QdtApprox::eval(&qdt_mv_preset([p[0], p[1], p[2], p[3], p[4]], 1.2, 1.4, 1.0, GAMMA, dt), t, &[x], &[a])),
        ));
        let ql = qdt_lq_preset(p5, GAMMA, dt);
        ql.grad_psi(0.0, &[x], &[a], &mut g5);
        worst = worst.max(rel_err(
            &g5,
            &central(&p5, &|p| QdtApprox::eval(&qdt_lq_preset([p[0], p[1], p[2], p[3], p[4]], GAMMA, dt), 0.0, &[x], &[a])),
        ));
    }
    CheckOutcome::new("analytic gradients", worst < 1e-5, format!("max relative error {worst:.3e} (tol 1e-5)"))
}

fn mv_episode(seed: u64, steps: usize) -> Option<qlearn_core::Trajectory<f64>> {
    let env = builtin_mv_env(0.3, 0.2, 0.0).ok()?.with_target(1.3, 1.4);
    let q = mv_q([0.2, 0.5, -0.1], 1.3, GAMMA, 1.0);
    let cfg = EpisodeConfig::from_steps(1.0 / steps as f64, steps);
    simulate_episode(&env, &q, &cfg, &[1.0], &mut RngStream::new(seed, StreamId::new(3, 0))).ok()
}

pub fn martingale_recursion(seed: u64) -> CheckOutcome {
    let Some(traj) = mv_episode(seed, 60) else {
        return CheckOutcome::new("martingale-loss recursion", false, "simulation failed".into());
    };
    let value = Negated(mv_value([0.3, -0.2, 0.7], 1.3, 1.4, 1.0));
    let q = mv_q([0.1, 0.4, 0.2], 1.3, GAMMA, 1.0);
    let h = traj.terminal_payoff().unwrap_or(f64::NAN);
    let dt = traj.dt();
    let mut worst: f64 = 0.0;
    for beta in [0.0, 0.3] {
        let Ok(fast) = martingale_residuals(&traj, &value, &q, beta) else {
            return CheckOutcome::new("martingale-loss recursion", false, "residuals failed".into());
        };
        let kk = traj.steps();
        for k in 0..kk {
            let tk = traj.time(k);
            let mut g = (-beta * (traj.horizon() - tk)).exp() * h - value.eval(tk, traj.state(k));
            for i in k..kk {
                let tr = traj.transition(i);
                g += (-beta * (tr.t - tk)).exp() * (tr.r - q.eval(tr.t, tr.x, tr.a)) * dt;
            }
            worst = worst.max((g - fast[k]).abs() / g.abs().max(1.0));
        }
    }
    CheckOutcome::new("martingale-loss recursion", worst < 1e-12, format!("max deviation {worst:.3e} (tol 1e-12)"))
}

pub fn zero_learning_rate(seed: u64) -> CheckOutcome {
    let Some(traj) = mv_episode(seed, 20) else {
        return CheckOutcome::new("zero learning rate", false, "simulation failed".into());
    };
    let cfg = LearnerConfig::new(GAMMA, 0.0);
    let value = Negated(mv_value([0.3, -0.2, 0.7], 1.3, 1.4, 1.0));
    let q = mv_q([0.1, 0.4, 0.2], 1.3, GAMMA, 1.0);
    let (th, ps) = (value.theta().to_vec(), q.psi().to_vec());
    let mut same = true;
    let mut check = |r: qlearn_core::Result<(Vec<f64>, Vec<f64>)>| match r {
        Ok((a, b)) => same &= a == th && b == ps,
        Err(_) => same = false,
    };
    check(ml_update(&traj, &value, &q, &cfg, 0.0, 1));
    check(offline_td_update(&traj, &value, &q, &cfg, 0.0, 1));
    check(online_td_update(&traj.transition(3), traj.dt(), &value, &q, &cfg, 0.0, None, 1));

    let lv = lq_value([0.4, -0.2]);
    let lq = lq_q([-0.3, 0.1, 0.5], GAMMA);
    let tr = qlearn_core::envsim::Transition { k: 0, t: 0.0, x: &[1.0], a: &[0.3], r: -2.0, x_next: &[0.9] };
    let mut el = ErgodicLearner::new(&lv, &lq, 0.7, &cfg);
    same &= el.update(&lv, &lq, &tr, 0.1, 1.0).is_ok() && el.theta == lv.theta() && el.psi == lq.psi() && el.v == 0.7;
    let qdt = qdt_lq_preset([-0.3, 0.1, 0.5, 0.2, 0.1], GAMMA, 0.1);
    let mut sl = SarsaLearner::new(&qdt, 0.7, &cfg, SarsaGrad::Raw);
    same &= sl.update(&qdt, &tr, SarsaNext::Action(&[0.2]), Discount::Average(0.7), 1.0).is_ok() && sl.psi == qdt.psi() && sl.v == 0.7;
    let mut pl = PgLearner::new(&lv, &lq, 0.7, &cfg);
    same &= pl.update(&lv, &lq, &tr, 0.1, Discount::Average(0.7), None, 1.0).is_ok()
        && pl.theta == lv.theta()
        && pl.phi == lq.phi()
        && pl.v == 0.7;
    CheckOutcome::new("zero learning rate", same, if same { "parameters bit-identical".into() } else { "parameters moved".into() })
}

/// Long-run average of `r − γ log π` and its batch-means standard error.
fn average_entropy_reward(params: LqParams<f64>, psi: [f64; 3], seed: u64, stream: u64) -> (f64, f64) {
    let env = builtin_lq_env(params);
    let pol = lq_q(psi, GAMMA);
    let (dt, steps, batches) = (0.01, 1_000_000usize, 100usize);
    let per = steps / batches;
    let mut rng = RngStream::new(seed, StreamId::new(11, stream));
    let Ok(mut st) = EnvStepper::new(&env, dt, &[0.0]) else { return (f64::NAN, f64::NAN) };
    let mut a = [0.0];
    let mut means = Vec::with_capacity(batches);
    let mut acc = 0.0;
    for k in 0..steps {
        let x = [st.state()[0]];
        if pol.sample(0.0, &x, &mut rng, &mut a).is_err() {
            return (f64::NAN, f64::NAN);
        }
        let lp = pol.log_density(0.0, &x, &a).unwrap_or(f64::NAN);
        let Ok(r) = st.step(&a, &mut rng) else { return (f64::NAN, f64::NAN) };
        acc += r - GAMMA * lp;
        if (k + 1) % per == 0 {
            means.push(acc / per as f64);
            acc = 0.0;
        }
    }
    let m = means.iter().sum::<f64>() / batches as f64;
    let v = means.iter().map(|b| (b - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (m, (v / batches as f64).sqrt())
}

pub fn policy_improvement(seed: u64) -> CheckOutcome {
    let params = LqParams::benchmark();
    let start = [0.0, 0.0, 0.0];
    let Ok(next) = lq_improve(&params, GAMMA, start) else {
        return CheckOutcome::new("policy improvement", false, "improvement map failed".into());
    };
    let (m0, s0) = average_entropy_reward(params, start, seed, 0);
    let (m1, s1) = average_entropy_reward(params, next, seed, 1);
    let se = (s0 * s0 + s1 * s1).sqrt();
    let ok = m1 >= m0 - 3.0 * se;
    CheckOutcome::new("policy improvement", ok, format!("average {m0:.4} -> {m1:.4} (3 SE = {:.4})", 3.0 * se))
}

pub fn sarsa_mean_zero(seed: u64) -> CheckOutcome {
    let params = LqParams::benchmark();
    let env = builtin_lq_env(params);
    let (slope, intercept, var) = (-0.2, 0.4, 0.3);
    let Ok(pv) = lq_policy_value(&params, GAMMA, slope, intercept, var) else {
        return CheckOutcome::new("SARSA mean-zero term", false, "policy evaluation failed".into());
    };
    let j = lq_value(pv.theta);
    let pi = match FixedGaussian::scalar(0.0, var) {
        Ok(p) => p,
        Err(e) => return CheckOutcome::new("SARSA mean-zero term", false, e.to_string()),
    };
    let n = 100_000;
    let mut rng = RngStream::new(seed, StreamId::new(13, 0));
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for xn in [-1.0, 0.3, 1.7] {
        let mean = slope * xn + intercept;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let a = mean + var.sqrt() * rng.standard_normal();
            let e = q_from_value_ergodic(&env, &j, pv.v, &[xn], &[a]) - GAMMA * pi.log_density(0.0, &[xn], &[a - mean]).unwrap_or(f64::NAN);
            s1 += e;
            s2 += e * e;
        }
        let m = s1 / n as f64;
        let se = ((s2 / n as f64 - m * m).max(0.0) / n as f64).sqrt();
        ok &= m.abs() <= 4.0 * se + 1e-12;
        worst = worst.max(m.abs() / se.max(1e-300));
    }
    // Matched Δt-parameterization: the bracket averaged over a' equals δ.
    let dt: f64 = 0.1;
    let psi = [-0.3, -0.6, 0.4];
    let (q, jl) = (lq_q(psi, GAMMA), lq_value([-0.4, 0.2]));
    let qdt = qdt_lq_preset([psi[0], psi[1], psi[2] - dt.ln(), -0.4, 0.2], GAMMA, dt);
    let tr = qlearn_core::envsim::Transition { k: 0, t: 0.0, x: &[1.0], a: &[0.2], r: -2.0, x_next: &[0.9] };
    let delta = ergodic_delta(&tr, dt, &jl, &q, 0.5);
    let (mut s1, mut s2) = (0.0, 0.0);
    let mut a1 = [0.0];
    let m = 10_000;
    for _ in 0..m {
        if qdt.sample(dt, &[0.9], &mut rng, &mut a1).is_err() {
            ok = false;
            break;
        }
        let d = sarsa_bracket(&tr, SarsaNext::Action(&a1), &qdt, Discount::Average(0.5)).unwrap_or(f64::NAN) - delta;
        s1 += d;
        s2 += d * d;
    }
    let mean = s1 / m as f64;
    let se = ((s2 / m as f64 - mean * mean).max(0.0) / m as f64).sqrt();
    ok &= mean.abs() <= 4.0 * se + 1e-12;
    CheckOutcome::new(
        "SARSA mean-zero term",
        ok,
        format!("largest |mean|/SE {worst:.2} (tol 4); matched bracket − δ mean {mean:.1e}"),
    )
}

pub fn qdt_expansion(seed: u64) -> CheckOutcome {
    let Ok(sol) = lq_ergodic_fixed_point(LqParams::benchmark(), GAMMA) else {
        return CheckOutcome::new("Q_dt expansion", false, "oracle failed".into());
    };
    let env = builtin_lq_env(sol.params);
    let mut rng = RngStream::new(seed, StreamId::new(17, 0));
    match qdt_expansion_check(&env, &sol.value(), Some(sol.v_star), 0.0, &[1.0], &[0.0], &[0.1, 0.05, 0.025], 100_000, 10, &mut rng) {
        Ok(fit) => {
            let err = (fit.intercept - fit.q_exact).abs();
            CheckOutcome::new(
                "Q_dt expansion",
                err < 0.05,
                format!("intercept {:.4} vs q {:.4} (tol 0.05)", fit.intercept, fit.q_exact),
            )
        }
        Err(e) => CheckOutcome::new("Q_dt expansion", false, e.to_string()),
    }
}

/// Every property check, in a fixed order.
pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    vec![
        normalization_constraints(),
        analytic_gradients(seed),
        martingale_recursion(seed),
        zero_learning_rate(seed),
        policy_improvement(seed),
        sarsa_mean_zero(seed),
        qdt_expansion(seed),
    ]
}
