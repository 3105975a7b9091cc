use proptest::prelude::*;

use qlearn_core::approx::FixedGaussian;
use qlearn_core::envsim::{builtin_lq_env, builtin_mv_env, simulate_episode, EnvStepper, FnModel, LqParams};
use qlearn_core::{DataSource, EpisodeConfig, RngStream, StreamId, Trajectory};

fn decay_model() -> FnModel<f64> {
    FnModel::ergodic(
        1,
        1,
        1,
        |_t, x: &[f64], _a, o: &mut [f64]| o[0] = -x[0],
        |_t, _x, _a, o: &mut [f64]| o[0] = 0.0,
        |_t, _x, _a| 0.0,
    )
}

fn gbm(mu: f64, sigma: f64) -> FnModel<f64> {
    FnModel::ergodic(
        1,
        1,
        1,
        move |_t, x: &[f64], _a, o: &mut [f64]| o[0] = mu * x[0],
        move |_t, x: &[f64], _a, o: &mut [f64]| o[0] = sigma * x[0],
        |_t, _x, _a| 0.0,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn same_seed_same_path(seed in any::<u64>(), rep in 0u64..50, ep in 0u64..50) {
        let env = builtin_lq_env(LqParams::benchmark());
        let pol = FixedGaussian::scalar(0.3, 0.5).unwrap();
        let cfg = EpisodeConfig::from_steps(0.05, 40);
        let run = || simulate_episode(&env, &pol, &cfg, &[0.2], &mut RngStream::new(seed, StreamId::new(rep, ep))).unwrap();
        let (a, b) = (run(), run());
        prop_assert_eq!(a.to_csv_string(), b.to_csv_string());
        let other = simulate_episode(&env, &pol, &cfg, &[0.2], &mut RngStream::new(seed, StreamId::new(rep, ep + 1))).unwrap();
        prop_assert_ne!(a.to_csv_string(), other.to_csv_string());
    }

    #[test]
    fn csv_round_trip_is_exact(seed in any::<u64>(), steps in 1usize..60) {
        let env = builtin_mv_env(0.3, 0.2, 0.0).unwrap().with_target(1.4, 1.4);
        let pol = FixedGaussian::scalar(0.5, 0.3).unwrap();
        let cfg = EpisodeConfig::from_steps(1.0 / steps as f64, steps);
        let tr = simulate_episode(&env, &pol, &cfg, &[1.0], &mut RngStream::new(seed, StreamId::new(0, 0))).unwrap();
        let back = Trajectory::from_csv_str(&tr.to_csv_string(), &tr.meta()).unwrap();
        prop_assert_eq!(back.rewards(), tr.rewards());
        prop_assert_eq!(back.final_state(), tr.final_state());
        prop_assert_eq!(back.terminal_payoff(), tr.terminal_payoff());
        prop_assert_eq!(back.source(), DataSource::OnPolicy);
    }
}

#[test]
fn euler_converges_with_order_one_without_noise() {
    let env = decay_model();
    let exact = (-1.0f64).exp();
    let dts = [0.1f64, 0.05, 0.025, 0.0125, 0.00625];
    let errs: Vec<f64> = dts
        .iter()
        .map(|&dt| {
            let steps = (1.0 / dt).round() as usize;
            let mut st = EnvStepper::new(&env, dt, &[1.0]).unwrap();
            let mut rng = RngStream::zero();
            for _ in 0..steps {
                st.step(&[0.0], &mut rng).unwrap();
            }
            (st.state()[0] - exact).abs()
        })
        .collect();
    // Least-squares slope of log error against log Δt.
    let lx: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / 5.0, ly.iter().sum::<f64>() / 5.0);
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let order = cov / var;
    assert!(order >= 0.9, "order {order}, errors {errs:?}");
}

#[test]
fn geometric_brownian_moments() {
    let (mu, sigma, x0) = (0.1, 0.3, 1.0);
    let env = gbm(mu, sigma);
    let (dt, steps, paths) = (0.01, 100usize, 20_000u64);
    let (mut s1, mut s2, mut s4) = (0.0, 0.0, 0.0);
    for p in 0..paths {
        let mut rng = RngStream::new(5, StreamId::new(0, p));
        let mut st = EnvStepper::new(&env, dt, &[x0]).unwrap();
        for _ in 0..steps {
            st.step(&[0.0], &mut rng).unwrap();
        }
        let x = st.state()[0];
        s1 += x;
        s2 += x * x;
        s4 += x * x * x * x;
    }
    let n = paths as f64;
    let (m1, m2) = (s1 / n, s2 / n);
    let se1 = ((m2 - m1 * m1) / n).sqrt();
    let se2 = ((s4 / n - m2 * m2) / n).sqrt();
    let t = dt * steps as f64;
    assert!((m1 - x0 * (mu * t).exp()).abs() <= 4.0 * se1, "mean {m1}");
    assert!((m2 - x0 * x0 * ((2.0 * mu + sigma * sigma) * t).exp()).abs() <= 4.0 * se2, "second moment {m2}");
}

#[test]
fn runs_in_single_precision() {
    let env = builtin_lq_env(LqParams::<f32>::benchmark());
    let pol = FixedGaussian::scalar(0.0f32, 1.0).unwrap();
    let cfg = EpisodeConfig::<f32>::new(1.0, 0.01).unwrap();
    let tr = simulate_episode(&env, &pol, &cfg, &[0.0f32], &mut RngStream::new(1, StreamId::new(0, 0))).unwrap();
    assert_eq!(tr.steps(), 100);
    assert!(tr.rewards().iter().all(|r| r.is_finite()));
}

#[test]
fn misaligned_horizon_and_empty_episode_are_rejected() {
    assert!(EpisodeConfig::<f64>::new(1.0, 0.3).is_err());
    assert!(EpisodeConfig::<f64>::new(1.0, 0.0).is_err());
    let env = builtin_lq_env(LqParams::benchmark());
    let pol = FixedGaussian::scalar(0.0, 1.0).unwrap();
    let cfg = EpisodeConfig::from_steps(0.1, 0);
    assert!(simulate_episode(&env, &pol, &cfg, &[0.0], &mut RngStream::zero()).is_err());
}
