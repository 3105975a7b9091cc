use std::sync::Arc;

use proptest::prelude::*;

use qlearn_core::approx::{lq_q, lq_value, FixedGaussian, FnValue, LqQ, LqValue};
use qlearn_core::envsim::{builtin_lq_env, make_behavior_stream, simulate_episode, LqParams, Transition};
use qlearn_core::learners::{
    ergodic_delta, gmm_objective, gmm_weighting, martingale_loss, martingale_residuals, ml_increment, ml_update,
    offline_td_increment, offline_td_update, online_td_update, MlInnerSum, TestFunctions,
};
use qlearn_core::linalg::SquareMatrix;
use qlearn_core::oracle::lq_ergodic_fixed_point;
use qlearn_core::{
    DataSource, EpisodeConfig, ErgodicLearner, LearnerConfig, QApprox, RngStream, StreamId, Trajectory, ValueApprox,
};

/// `q ≡ 0`, for fixtures where only the value function matters.
struct ZeroQ;

impl QApprox<f64> for ZeroQ {
    fn n_psi(&self) -> usize {
        1
    }
    fn psi(&self) -> &[f64] {
        &[0.0]
    }
    fn set_psi(&mut self, _psi: &[f64]) {}
    fn gamma(&self) -> f64 {
        0.1
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn eval(&self, _t: f64, _x: &[f64], _a: &[f64]) -> f64 {
        0.0
    }
    fn grad_psi(&self, _t: f64, _x: &[f64], _a: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
}

fn const_value(c: f64) -> FnValue<f64> {
    FnValue::new(vec![c], |th, _t, _x| th[0], |_th, _t, _x, out| out[0] = 1.0)
}

fn traj(dt: f64, xs: &[f64], a: &[f64], r: &[f64], h: Option<f64>) -> Trajectory<f64> {
    Trajectory::new(dt, 1, 1, xs.to_vec(), a.to_vec(), r.to_vec(), h, DataSource::OnPolicy).unwrap()
}

/// `G_k` by the direct double sum.
fn brute_residuals(tr: &Trajectory<f64>, j: &dyn ValueApprox<f64>, q: &dyn QApprox<f64>, beta: f64) -> Vec<f64> {
    let (dt, k_steps) = (tr.dt(), tr.steps());
    let big_t = tr.horizon();
    let h = tr.terminal_payoff().unwrap();
    (0..k_steps)
        .map(|k| {
            let tk = tr.time(k);
            let mut s = (-beta * (big_t - tk)).exp() * h - j.eval(tk, tr.state(k));
            for i in k..k_steps {
                let ti = tr.time(i);
                s += (-beta * (ti - tk)).exp() * (tr.reward(i) - q.eval(ti, tr.state(i), tr.action(i))) * dt;
            }
            s
        })
        .collect()
}

#[test]
fn exact_martingale_has_zero_loss() {
    let tr = traj(0.1, &[0.3, -0.2, 0.5, 1.0], &[0.1, 0.4, -1.0], &[0.0; 3], Some(2.5));
    let loss = martingale_loss(&tr, &const_value(2.5), &ZeroQ, 0.0).unwrap();
    assert_eq!(loss, 0.0);
}

#[test]
fn two_step_hand_loss() {
    // J(x) = x, q ≡ 0, β = 0, Δt = 0.5; states (1, 2, 4), rewards (1, 3), h = 5.
    // G₁ = 5 − 2 + 3·0.5 = 4.5, G₀ = 5 − 1 + (1 + 3)·0.5 = 6
    // loss = ½(36 + 20.25)·0.5 = 14.0625
    let j = FnValue::new(vec![1.0], |th, _t, x| th[0] * x[0], |_th, _t, x, out| out[0] = x[0]);
    let tr = traj(0.5, &[1.0, 2.0, 4.0], &[0.0, 0.0], &[1.0, 3.0], Some(5.0));
    assert_eq!(martingale_residuals(&tr, &j, &ZeroQ, 0.0).unwrap(), vec![6.0, 4.5]);
    assert_eq!(martingale_loss(&tr, &j, &ZeroQ, 0.0).unwrap(), 14.0625);
    let missing = traj(0.5, &[1.0, 2.0, 4.0], &[0.0, 0.0], &[1.0, 3.0], None);
    assert!(martingale_loss(&missing, &j, &ZeroQ, 0.0).is_err());
}

fn random_traj(k: usize) -> impl Strategy<Value = Trajectory<f64>> {
    (
        proptest::collection::vec(-2.0..2.0f64, k + 1),
        proptest::collection::vec(-2.0..2.0f64, k),
        proptest::collection::vec(-3.0..3.0f64, k),
        -2.0..2.0f64,
        0.01..0.2f64,
    )
        .prop_map(|(xs, a, r, h, dt)| traj(dt, &xs, &a, &r, Some(h)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn backward_recursion_matches_double_sum(
        tr in (1usize..40).prop_flat_map(random_traj),
        th in [-1.0..1.0f64, -1.0..1.0f64],
        ps in [-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64],
        beta in 0.0..2.0f64,
    ) {
        let (j, q) = (lq_value(th), lq_q(ps, 0.1));
        let fast = martingale_residuals(&tr, &j, &q, beta).unwrap();
        let slow = brute_residuals(&tr, &j, &q, beta);
        for (a, b) in fast.iter().zip(&slow) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn zero_rates_leave_parameters_bit_identical(
        tr in (1usize..20).prop_flat_map(random_traj),
        th in [-1.0..1.0f64, -1.0..1.0f64],
        ps in [-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64],
        v in -1.0..1.0f64,
    ) {
        let (j, q) = (lq_value(th), lq_q(ps, 0.1));
        let cfg = LearnerConfig::new(0.1, 0.0);
        let (t1, p1) = ml_update(&tr, &j, &q, &cfg, 0.3, 1).unwrap();
        prop_assert_eq!((&t1[..], &p1[..]), (&th[..], &ps[..]));
        let (t2, p2) = offline_td_update(&tr, &j, &q, &cfg, 0.3, 1).unwrap();
        prop_assert_eq!((&t2[..], &p2[..]), (&th[..], &ps[..]));
        let step = tr.transition(0);
        let (t3, p3) = online_td_update(&step, tr.dt(), &j, &q, &cfg, 0.0, None, 7).unwrap();
        prop_assert_eq!((&t3[..], &p3[..]), (&th[..], &ps[..]));
        let mut learner = ErgodicLearner::new(&j, &q, v, &cfg);
        learner.update(&j, &q, &step, tr.dt(), 3.0).unwrap();
        prop_assert_eq!((&learner.theta[..], &learner.psi[..]), (&th[..], &ps[..]));
        prop_assert_eq!(learner.v.to_bits(), v.to_bits());
    }
}

#[test]
fn single_step_ml_update_is_hand_expansion() {
    // K = 1: Δθ = α·∂J/∂θ(0, x₀)·G₀·Δt with G₀ = h − J(x₀) + (r − q)Δt.
    let (j, q) = (lq_value([0.2, -0.1]), lq_q([0.1, 0.2, 0.3], 0.1));
    let (x0, a0, r0, h, dt) = (0.7, -0.4, 1.3, 0.25, 0.1);
    let tr = traj(dt, &[x0, 0.9], &[a0], &[r0], Some(h));
    let g0 = h - j.eval(0.0, &[x0]) + (r0 - q.eval(0.0, &[x0], &[a0])) * dt;
    let cfg = LearnerConfig::new(0.1, 0.05);
    let (theta, psi) = ml_update(&tr, &j, &q, &cfg, 0.0, 1).unwrap();
    let mut gq = [0.0; 3];
    q.grad_psi(0.0, &[x0], &[a0], &mut gq);
    let want_t = [0.2 + 0.05 * x0 * x0 * g0 * dt, -0.1 + 0.05 * x0 * g0 * dt];
    for (a, b) in theta.iter().zip(want_t) {
        assert!((a - b).abs() < 1e-15);
    }
    for (i, p) in psi.iter().enumerate() {
        let want = q.psi()[i] + 0.05 * gq[i] * dt * g0 * dt;
        assert!((p - want).abs() < 1e-15);
    }
}

#[test]
fn ml_step_descends_the_loss() {
    let env = builtin_lq_env(LqParams::<f64>::benchmark());
    let behavior = FixedGaussian::scalar(0.0, 1.0).unwrap();
    let cfg = EpisodeConfig::from_steps(0.05, 40);
    let mut rng = RngStream::new(5, StreamId::new(0, 0));
    let mut tr = simulate_episode(&env, &behavior, &cfg, &[0.5], &mut rng).unwrap();
    tr.set_terminal_payoff(Some(0.3));
    let (mut j, mut q) = (lq_value([0.1, 0.2]), lq_q([0.3, -0.2, 0.1], 0.1));
    let before = martingale_loss(&tr, &j, &q, 0.0).unwrap();
    let lc = LearnerConfig::new(0.1, 1e-3);
    let mut last = before;
    for _ in 0..5 {
        let (theta, psi) = ml_update(&tr, &j, &q, &lc, 0.0, 1).unwrap();
        j.set_theta(&theta);
        q.set_psi(&psi);
        let now = martingale_loss(&tr, &j, &q, 0.0).unwrap();
        assert!(now < last);
        last = now;
    }
}

#[test]
fn offline_td_fixtures() {
    // K = 1, J = θ₁x² + θ₂x with θ = (1, 0), q ≡ 0, β = 0:
    // δ = h − J(x₀) + rΔt = 2 − 0.25 + 0.5·0.1 = 1.8, ξ = (x₀², x₀) = (0.25, 0.5)
    let j = lq_value([1.0, 0.0]);
    let tr = traj(0.1, &[0.5, 0.7], &[0.0], &[0.5], Some(2.0));
    let inc = offline_td_increment(&tr, &j, &ZeroQ, &TestFunctions::Gradient, 0.0);
    assert!((inc.theta[0] - 0.45).abs() < 1e-15 && (inc.theta[1] - 0.9).abs() < 1e-15);

    let zero_xi = TestFunctions::Custom {
        xi: Arc::new(|_p, out: &mut [f64]| out.fill(0.0)),
        zeta: Arc::new(|_p, out: &mut [f64]| out.fill(1.0)),
    };
    let mut cfg = LearnerConfig::new(0.1, 0.5);
    cfg.test_functions = zero_xi;
    let (theta, _) = offline_td_update(&tr, &j, &ZeroQ, &cfg, 0.0, 1).unwrap();
    assert_eq!(theta, vec![1.0, 0.0]);
}

#[test]
fn online_and_ergodic_fixtures() {
    let (j, q) = (lq_value::<f64>([0.0, 0.0]), lq_q([0.0, 0.0, 0.0], 0.1));
    let tr = Transition { k: 0, t: 0.0, x: &[1.0], a: &[0.0], r: -2.0, x_next: &[0.9] };
    // q(1, 0) = −(γ/2) log 2πγ = 0.023235...
    let d = ergodic_delta(&tr, 0.1, &j, &q, 0.0);
    assert!((d + 0.20232).abs() < 5e-6);

    // δ = 0 leaves parameters alone.
    let still = Transition { k: 0, t: 0.0, x: &[1.0], a: &[0.0], r: 0.0, x_next: &[1.0] };
    let cfg = LearnerConfig::new(0.1, 0.5);
    let (theta, _) = online_td_update(&still, 0.1, &j, &ZeroQ, &cfg, 0.0, None, 1).unwrap();
    assert_eq!(theta, vec![0.0, 0.0]);

    // δ = −0.2 with l·α_V = 0.001 moves V by −2e-4.
    let mut lc = LearnerConfig::new(0.1, 0.0);
    lc.alpha_v = 0.001;
    let mut learner = ErgodicLearner::new(&j, &ZeroQ, 0.0, &lc);
    let drop = Transition { k: 0, t: 0.0, x: &[0.0], a: &[0.0], r: -2.0, x_next: &[0.0] };
    let delta = learner.update(&j, &ZeroQ, &drop, 0.1, 1.0).unwrap();
    assert!((delta + 0.2).abs() < 1e-15);
    assert!((learner.v + 2e-4).abs() < 1e-18);
}

#[test]
fn ml_theta_equals_td_with_accumulated_test_function() {
    // With β = 0 and J(T) = h, G_k = Σ_{i≥k} δ_i, so Σ_k ∂J_k G_k Δt = Σ_i δ_i Σ_{k≤i} ∂J_k Δt.
    let env = builtin_lq_env(LqParams::<f64>::benchmark());
    let behavior = FixedGaussian::scalar(0.2, 0.5).unwrap();
    let cfg = EpisodeConfig::from_steps(0.02, 50);
    let mut rng = RngStream::new(9, StreamId::new(1, 0));
    let mut tr = simulate_episode(&env, &behavior, &cfg, &[0.4], &mut rng).unwrap();
    tr.set_terminal_payoff(Some(-0.7));
    let (j, q) = (lq_value([-0.3, 0.2]), lq_q([-0.2, 0.1, 0.4], 0.1));
    let ml = ml_increment(&tr, &j, &q, 0.0, MlInnerSum::Display).unwrap();

    let jj = j.clone();
    let accumulated = TestFunctions::Custom {
        xi: Arc::new(move |p, out: &mut [f64]| {
            let h = p.history.expect("offline test functions see the trajectory");
            out.fill(0.0);
            let mut g = [0.0; 2];
            for k in 0..=p.k {
                jj.grad_theta(h.time(k), h.state(k), &mut g);
                out[0] += g[0] * h.dt();
                out[1] += g[1] * h.dt();
            }
        }),
        zeta: Arc::new(|_p, out: &mut [f64]| out.fill(0.0)),
    };
    let td = offline_td_increment(&tr, &j, &q, &accumulated, 0.0);
    for (a, b) in ml.theta.iter().zip(&td.theta) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

fn lq_batch(n: usize, seed: u64) -> Vec<Trajectory<f64>> {
    let env = builtin_lq_env(LqParams::<f64>::benchmark());
    let behavior = FixedGaussian::scalar(0.0, 1.0).unwrap();
    let cfg = EpisodeConfig::from_steps(0.05, 20);
    (0..n)
        .map(|e| {
            let mut rng = RngStream::new(seed, StreamId::new(0, e as u64));
            let mut t = make_behavior_stream(&env, &behavior, &cfg, &[0.3 * e as f64 - 1.0], &mut rng).unwrap();
            t.set_terminal_payoff(Some(0.0));
            t
        })
        .collect()
}

#[test]
fn gmm_objective_fixtures() {
    let batch = lq_batch(8, 3);
    // Zero dynamics of the residual: J ≡ 0, q ≡ 0 and rewards zeroed.
    let flat: Vec<_> = batch
        .iter()
        .map(|t| {
            let xs: Vec<f64> = (0..=t.steps()).map(|k| t.state(k)[0]).collect();
            let a: Vec<f64> = (0..t.steps()).map(|k| t.action(k)[0]).collect();
            traj(t.dt(), &xs, &a, &vec![0.0; t.steps()], Some(0.0))
        })
        .collect();
    let j0 = lq_value([0.0, 0.0]);
    let id2 = SquareMatrix::identity(2);
    let id1 = SquareMatrix::identity(1);
    let (a, b) = gmm_objective(&flat, &j0, &ZeroQ, &TestFunctions::Gradient, 0.0, &id2, &id1).unwrap();
    assert_eq!((a, b), (0.0, 0.0));

    let (j, q) = (lq_value([-0.2, 0.1]), lq_q([-0.3, 0.1, 0.2], 0.1));
    let id3 = SquareMatrix::identity(3);
    let (ot, op) = gmm_objective(&batch, &j, &q, &TestFunctions::Gradient, 0.0, &id2, &id3).unwrap();
    let mut inc = offline_td_increment(&batch[0], &j, &q, &TestFunctions::Gradient, 0.0);
    for t in &batch[1..] {
        inc.add_assign(&offline_td_increment(t, &j, &q, &TestFunctions::Gradient, 0.0));
    }
    inc.scale(1.0 / batch.len() as f64);
    let nt: f64 = inc.theta.iter().map(|v| v * v).sum();
    let np: f64 = inc.psi.iter().map(|v| v * v).sum();
    assert!((ot - nt).abs() < 1e-12 * nt.max(1.0) && (op - np).abs() < 1e-12 * np.max(1.0));
}

#[test]
fn weighted_gmm_is_invariant_to_linear_maps_of_xi() {
    let batch = lq_batch(12, 4);
    let (j, q) = (lq_value([-0.2, 0.1]), lq_q([-0.3, 0.1, 0.2], 0.1));
    let mut rng = RngStream::new(77, StreamId::new(0, 0));
    for _ in 0..5 {
        let m: [f64; 4] = std::array::from_fn(|_| rng.standard_normal());
        if (m[0] * m[3] - m[1] * m[2]).abs() < 0.1 {
            continue;
        }
        let jj = j.clone();
        let mapped = TestFunctions::Custom {
            xi: Arc::new(move |p, out: &mut [f64]| {
                let mut g = [0.0; 2];
                jj.grad_theta(p.t, p.x, &mut g);
                out[0] = m[0] * g[0] + m[1] * g[1];
                out[1] = m[2] * g[0] + m[3] * g[1];
            }),
            zeta: Arc::new({
                let qq = q.clone();
                move |p, out: &mut [f64]| qq.grad_psi(p.t, p.x, p.a, out)
            }),
        };
        let plain = TestFunctions::Gradient;
        let (at, ap) = gmm_weighting(&batch, &j, &q, &plain, 0.0).unwrap();
        let (bt, bp) = gmm_weighting(&batch, &j, &q, &mapped, 0.0).unwrap();
        let (o1, _) = gmm_objective(&batch, &j, &q, &plain, 0.0, &at, &ap).unwrap();
        let (o2, _) = gmm_objective(&batch, &j, &q, &mapped, 0.0, &bt, &bp).unwrap();
        assert!((o1 - o2).abs() < 1e-9 * o1.abs().max(1e-12), "{o1} vs {o2}");
    }
}

#[test]
fn stored_and_live_behavior_data_give_identical_updates() {
    let env = builtin_lq_env(LqParams::<f64>::benchmark());
    let behavior = FixedGaussian::scalar(0.0, 1.0).unwrap();
    let cfg = EpisodeConfig::from_steps(0.1, 500).with_seed(21);
    let mut rng = RngStream::new(21, StreamId::new(2, 0));
    let live = make_behavior_stream(&env, &behavior, &cfg, &[0.0], &mut rng).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("behavior.csv");
    live.write_csv(&path, &live.meta()).unwrap();
    let (stored, _) = Trajectory::<f64>::read_csv(&path).unwrap();
    assert_eq!(stored.source(), DataSource::OffPolicy);

    let run = |data: &Trajectory<f64>| {
        let (mut j, mut q): (LqValue<f64>, LqQ<f64>) = (lq_value([0.0, 0.0]), lq_q([0.0, 0.0, 10f64.ln()], 0.1));
        let lc = LearnerConfig::new(0.1, 0.01);
        let mut learner = ErgodicLearner::new(&j, &q, 0.0, &lc);
        for tr in data.transitions() {
            learner.step(&mut j, &mut q, &tr, data.dt(), data.time(tr.k + 1)).unwrap();
        }
        (learner.theta, learner.psi, learner.v)
    };
    let (a, b) = (run(&live), run(&stored));
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.0), bits(&b.0));
    assert_eq!(bits(&a.1), bits(&b.1));
    assert_eq!(a.2.to_bits(), b.2.to_bits());
}

#[test]
fn oracle_parameters_are_stationary_for_td() {
    let sol = lq_ergodic_fixed_point(LqParams::benchmark(), 0.1).unwrap();
    let (j, q) = (sol.value(), sol.q());
    let env = builtin_lq_env(sol.params);
    let cfg = EpisodeConfig::from_steps(0.01, 100);
    let n = 1000;
    let (mut s1, mut s2) = ([0.0; 5], [0.0; 5]);
    let mut g = [0.0; 5];
    for e in 0..n {
        let mut rng = RngStream::new(2024, StreamId::new(0, e));
        let x0 = 2.0 * rng.standard_normal();
        let tr = simulate_episode(&env, &q, &cfg, &[x0], &mut rng).unwrap();
        let mut inc = [0.0; 5];
        for step in tr.transitions() {
            let d = ergodic_delta(&step, tr.dt(), &j, &q, sol.v_star);
            j.grad_theta(step.t, step.x, &mut g[..2]);
            q.grad_psi(step.t, step.x, step.a, &mut g[2..]);
            for i in 0..5 {
                inc[i] += g[i] * d;
            }
        }
        for i in 0..5 {
            s1[i] += inc[i];
            s2[i] += inc[i] * inc[i];
        }
    }
    for i in 0..5 {
        let mean = s1[i] / n as f64;
        let se = ((s2[i] / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(mean.abs() <= 4.0 * se, "component {i}: mean {mean}, se {se}");
    }
}
