use proptest::prelude::*;

use qlearn_core::approx::{lq_q, lq_value, FixedGaussian};
use qlearn_core::baselines::{qdt_lq_preset, sarsa_bracket};
use qlearn_core::envsim::{builtin_lq_env, LqParams, Transition};
use qlearn_core::learners::ergodic_delta;
use qlearn_core::oracle::{lq_policy_value, q_from_value_ergodic};
use qlearn_core::{Discount, GaussianPolicy, QApprox, QdtApprox, RngStream, SarsaNext, StreamId};

const GAMMA: f64 = 0.1;

fn transition<'a>(x: &'a [f64], a: &'a [f64], r: f64, x_next: &'a [f64]) -> Transition<'a, f64> {
    Transition { k: 0, t: 0.0, x, a, r, x_next }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn sarsa_bracket_matches_td_error_at_matched_parameters(
        psi in [-1.0..0.5f64, -1.0..1.0f64, -1.0..1.0f64],
        theta in [-1.0..1.0f64, -1.0..1.0f64],
        dt in prop::sample::select(vec![0.1f64, 0.01]),
        x in -2.0..2.0f64, a in -2.0..2.0f64, r in -3.0..1.0f64, xn in -2.0..2.0f64,
        v in -2.0..2.0f64, seed in any::<u64>(),
    ) {
        let q = lq_q(psi, GAMMA);
        let j = lq_value(theta);
        let qdt = qdt_lq_preset([psi[0], psi[1], psi[2] - dt.ln(), theta[0], theta[1]], GAMMA, dt);
        let (xs, as_, xns) = ([x], [a], [xn]);
        let tr = transition(&xs, &as_, r, &xns);
        let delta = ergodic_delta(&tr, dt, &j, &q, v);
        let mut rng = RngStream::new(seed, StreamId::new(0, 0));
        let mut a_next = [0.0];
        for _ in 0..5 {
            qdt.sample(dt, &xns, &mut rng, &mut a_next).unwrap();
            let b = sarsa_bracket(&tr, SarsaNext::Action(&a_next), &qdt, Discount::Average(v)).unwrap();
            prop_assert!((b - delta).abs() < 1e-9 * (1.0 + delta.abs()), "bracket {b} vs δ {delta}");
        }
    }
}

#[test]
fn extra_term_has_mean_zero_under_the_policy() {
    // A linear Gaussian policy that is not the Gibbs policy of its own q: the extra term
    // q(x', a') − γ log π(a'|x') varies with a' but averages to zero.
    let params = LqParams::benchmark();
    let env = builtin_lq_env(params);
    let (slope, intercept, var) = (-0.2, 0.4, 0.3);
    let pv = lq_policy_value(&params, GAMMA, slope, intercept, var).unwrap();
    let j = lq_value(pv.theta);
    let pi = FixedGaussian::scalar(0.0, var).unwrap();
    let n = 100_000;
    let mut rng = RngStream::new(41, StreamId::new(0, 0));
    for xn in [-1.0, 0.3, 1.7] {
        let mean = slope * xn + intercept;
        let (mut s1, mut s2, mut lo, mut hi) = (0.0, 0.0, f64::INFINITY, f64::NEG_INFINITY);
        for _ in 0..n {
            let a = mean + var.sqrt() * rng.standard_normal();
            let e = q_from_value_ergodic(&env, &j, pv.v, &[xn], &[a]) - GAMMA * pi.log_density(0.0, &[xn], &[a - mean]).unwrap();
            s1 += e;
            s2 += e * e;
            lo = lo.min(e);
            hi = hi.max(e);
        }
        let m = s1 / n as f64;
        let se = ((s2 / n as f64 - m * m) / n as f64).sqrt();
        assert!(hi - lo > 0.1, "term should not be constant");
        assert!(m.abs() <= 4.0 * se, "x' = {xn}: mean {m}, se {se}");
    }
}

#[test]
fn normalized_presets_make_the_extra_term_vanish() {
    let dt = 0.1;
    let qdt = qdt_lq_preset([-0.3, 0.2, 1.0, -0.5, 0.1], GAMMA, dt);
    let mut rng = RngStream::new(43, StreamId::new(0, 0));
    let xn = [0.7];
    let (mut s1, mut s2) = (0.0, 0.0);
    let n = 10_000;
    let mut a = [0.0];
    let reference = QdtApprox::eval(&qdt, dt, &xn, &[qdt.mean_scalar(0.7)]) - GAMMA * dt * qdt.log_density(dt, &xn, &[qdt.mean_scalar(0.7)]).unwrap();
    for _ in 0..n {
        qdt.sample(dt, &xn, &mut rng, &mut a).unwrap();
        let e = QdtApprox::eval(&qdt, dt, &xn, &a) - GAMMA * dt * qdt.log_density(dt, &xn, &a).unwrap() - reference;
        s1 += e;
        s2 += e * e;
    }
    let m = s1 / n as f64;
    let se = ((s2 / n as f64 - m * m).max(0.0) / n as f64).sqrt();
    assert!(m.abs() <= 4.0 * se + 1e-12, "mean {m}, se {se}");
}

#[test]
fn sarsa_gradient_carries_an_extra_factor_of_dt() {
    let psi = [-0.3, -0.6, 0.4];
    let q = lq_q(psi, GAMMA);
    for dt in [0.1, 0.01] {
        let qdt = qdt_lq_preset([psi[0], psi[1], psi[2] - f64::ln(dt), 0.2, -0.1], GAMMA, dt);
        let mut rng = RngStream::new(47, StreamId::new(0, 0));
        let (mut nq, mut ns) = (0.0, 0.0);
        for _ in 0..2_000 {
            let x = rng.standard_normal();
            let a = rng.standard_normal();
            let mut zeta = [0.0; 3];
            q.grad_psi(0.0, &[x], &[a], &mut zeta);
            let (mut value, mut adv) = ([0.0; 5], [0.0; 5]);
            qdt.grad_psi_parts(0.0, &[x], &[a], &mut value, &mut adv);
            nq += zeta.iter().map(|g| g * g).sum::<f64>();
            ns += adv[..3].iter().map(|g| g * g).sum::<f64>();
        }
        let ratio = (ns / nq).sqrt();
        assert!((0.5 * dt..=2.0 * dt).contains(&ratio), "Δt {dt}: ratio {ratio}");
    }
}
