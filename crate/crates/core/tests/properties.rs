use proptest::prelude::*;
use renege_core::age_posterior::{age_density_given_n, posterior_age};
use renege_core::equilibrium::{solve_s_threshold, solve_t_threshold, t_sequence, SolverOptions};
use renege_core::simulator::{run_traced, DepartureCause, SimConfig, TraceEvent};
use renege_core::steady_state::{solve_steady_state, structure_count, structures, SteadyOptions};
use renege_core::utility::{g_value, ode_residual, u_type1};
use renege_core::*;

fn hyper() -> impl Strategy<Value = ServiceModel> {
    (0.5f64..0.99, 0.5f64..3.0, 0.05f64..0.45)
        .prop_map(|(p, fast, slow)| ServiceModel::hyperexponential(vec![p, 1.0 - p], vec![fast, slow]).unwrap())
}

fn paper() -> (MarketParams, ServiceModel) {
    (
        MarketParams::new(3.0, 4.85, 1.0).unwrap(),
        ServiceModel::hyperexponential(vec![0.95, 0.05], vec![1.0, 0.2]).unwrap(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn t_sequence_strictly_decreasing(model in hyper(), v in 1.0f64..10.0, c in 0.2f64..2.0) {
        let params = MarketParams::new(1.0, v, c).unwrap();
        let t = t_sequence(&params, &model, 8).unwrap();
        let finite: Vec<f64> = t.iter().filter_map(|x| x.finite()).filter(|&x| x > 0.0).collect();
        prop_assert!(finite.windows(2).all(|w| w[0] > w[1]), "{:?}", t);
    }

    #[test]
    fn t_is_root_of_g(model in hyper(), v in 1.0f64..10.0, n in 1usize..5) {
        let params = MarketParams::new(2.0, v, 1.0).unwrap();
        if let Threshold::At(t) = solve_t_threshold(&params, &model, n).unwrap() {
            if t > 0.0 {
                prop_assert!(u_type1(&params, &model, n, t).unwrap() < 1e-3);
                prop_assert!(g_value(&params, &model, n, t).unwrap().abs() < 1e-6);
            }
        }
    }

    #[test]
    fn t_ignores_lambda(model in hyper(), v in 1.0f64..10.0) {
        let at = |lambda: f64| t_sequence(&MarketParams::new(lambda, v, 1.0).unwrap(), &model, 6).unwrap();
        let base = at(1.0);
        prop_assert_eq!(&base, &at(3.0));
        prop_assert_eq!(&base, &at(10.0));
    }

    #[test]
    fn t_invariant_under_scaling(model in hyper(), v in 1.0f64..10.0, c in 0.2f64..2.0, alpha in 0.1f64..10.0) {
        let a = t_sequence(&MarketParams::new(1.0, v, c).unwrap(), &model, 6).unwrap();
        let b = t_sequence(&MarketParams::new(1.0, alpha * v, alpha * c).unwrap(), &model, 6).unwrap();
        for (x, y) in a.iter().zip(&b) {
            match (x, y) {
                (Threshold::At(x), Threshold::At(y)) => prop_assert!((x - y).abs() < 1e-6),
                _ => prop_assert_eq!(x, y),
            }
        }
    }

    #[test]
    fn ode_holds_on_grid(model in hyper(), n in 1usize..=5) {
        let v = 6.0 * model.mean() + 0.5;
        let params = MarketParams::new(1.0, v, 1.0).unwrap();
        for i in 0..50 {
            let t = i as f64 * 0.4;
            prop_assert!(ode_residual(&params, &model, n, t, 1e-6).unwrap() <= 1e-3);
        }
    }

    #[test]
    fn exponential_patience_is_infinite(mu in 0.2f64..5.0, n in 1usize..5) {
        let model = ServiceModel::exponential(mu).unwrap();
        let v = n as f64 / mu * 1.01 + 0.01;
        let params = MarketParams::new(1.0, v, 1.0).unwrap();
        prop_assert_eq!(solve_t_threshold(&params, &model, n).unwrap(), Threshold::Never);
        let prior_s = vec![Threshold::Never; n.saturating_sub(1)];
        let t = vec![Threshold::Never; n.saturating_sub(1)];
        if n <= 2 {
            let (s, _) = solve_s_threshold(&params, &model, n, &prior_s, &t, &SolverOptions::with_points(40)).unwrap();
            prop_assert_eq!(s, Threshold::Never);
        }
        prop_assert!((model.mrl(0.0).unwrap() - model.mrl(7.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn structure_counts(n in 1usize..=10) {
        prop_assert_eq!(structure_count(n), n * (n + 1) / 2);
        if n >= 2 {
            prop_assert_eq!(structures(n).len(), structure_count(n));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn densities_normalize(s1 in 2.0f64..9.0, frac in 0.2f64..0.9, t1 in 4.0f64..10.0) {
        let (params, model) = paper();
        let profile = ThresholdProfile::from_values(3, &[t1], &[s1, s1 * frac]).unwrap();
        let st = solve_steady_state(&profile, &params, &model, &SteadyOptions { points: 120, ..Default::default() }).unwrap();
        prop_assert!((st.pi.iter().sum::<f64>() - 1.0).abs() < 1e-3);
        for n in 1..=3 {
            prop_assert!((age_density_given_n(n, &st).unwrap().mass() - 1.0).abs() < 1e-3);
        }
        for (n, t) in [(1, 0.5 * s1), (2, 0.5 * s1 * frac)] {
            prop_assert!((posterior_age(n, t, &st).unwrap().mass() - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn trace_invariants(seed in 0u64..1000, s1 in 1.0f64..8.0, frac in 0.2f64..0.9) {
        let (params, model) = paper();
        let profile = ThresholdProfile::from_values(4, &[7.737, 4.52], &[s1, s1 * frac, s1 * frac * 0.5]).unwrap();
        let cfg = SimConfig::new(params, model, profile.clone(), 20_000, seed);
        let mut events = Vec::new();
        run_traced(&cfg, &mut |e| events.push(e.clone())).unwrap();
        let mut starts = Vec::new();
        let mut in_system = 0usize;
        let mut last = 0.0;
        let mut i = 0;
        while i < events.len() {
            let e = &events[i];
            prop_assert!(e.time() >= last);
            last = e.time();
            match *e {
                TraceEvent::Arrival { found, joined, .. } => {
                    prop_assert_eq!(found, in_system);
                    prop_assert_eq!(joined, found < profile.n_max);
                    if joined {
                        in_system += 1;
                    }
                }
                TraceEvent::ServiceStart { id, .. } => starts.push(id),
                TraceEvent::Completion { .. } => in_system -= 1,
                TraceEvent::Departure { time, cause, deadline, .. } => match cause {
                    DepartureCause::OwnTimeout => {
                        prop_assert!((time - deadline).abs() < 1e-9);
                        in_system -= 1;
                        // Everyone behind leaves at the same instant as a cascade.
                        let mut j = i + 1;
                        while let Some(TraceEvent::Departure { time: tj, cause: DepartureCause::Cascade, .. }) = events.get(j) {
                            prop_assert_eq!(*tj, time);
                            in_system -= 1;
                            j += 1;
                        }
                        i = j;
                        continue;
                    }
                    DepartureCause::Cascade => prop_assert!(false, "cascade without a leader"),
                    DepartureCause::Served => prop_assert!(time <= deadline + 1e-9),
                    DepartureCause::Balk => {}
                },
            }
            i += 1;
        }
        prop_assert!(starts.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn exponential_prior_equals_posterior() {
    let params = MarketParams::new(0.8, 2.5, 1.0).unwrap();
    let model = ServiceModel::exponential(1.0).unwrap();
    let profile = ThresholdProfile::from_values(2, &[], &[3.0]).unwrap();
    let st = solve_steady_state(&profile, &params, &model, &SteadyOptions { points: 200, ..Default::default() }).unwrap();
    let prior = age_density_given_n(1, &st).unwrap();
    for t in [0.5, 1.5, 2.9] {
        let post = posterior_age(1, t, &st).unwrap();
        assert!((post.mean_age() - prior.mean_age()).abs() < 1e-6);
        assert!((post.expected_residual(&model).unwrap() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn paper_profile_monotone() {
    let (params, model) = paper();
    let opts = SolverOptions::with_points(100);
    let p = renege_core::equilibrium::solve_profile(&params, &model, 3, &opts).unwrap();
    assert!(p.is_monotone());
    let scaled = MarketParams::new(3.0, 9.7, 2.0).unwrap();
    let q = renege_core::equilibrium::solve_profile(&scaled, &model, 3, &opts).unwrap();
    for (a, b) in p.s.iter().chain(&p.t).zip(q.s.iter().chain(&q.t)) {
        assert!((a.value() - b.value()).abs() < 1e-3, "{a:?} vs {b:?}");
    }
}
