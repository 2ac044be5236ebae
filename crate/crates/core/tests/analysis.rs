use proptest::prelude::*;
use stefan_core::*;

fn curve_from(increments: &[f64], dt: f64) -> LossCurve {
    let mut v = 0.0;
    let mut values = vec![0.0];
    for inc in increments {
        v += inc;
        values.push(v);
    }
    let alpha = v.max(1e-3);
    LossCurve::new(dt, alpha, values).unwrap()
}

fn with_alpha(c: LossCurve, alpha: f64) -> LossCurve {
    LossCurve::new(c.dt, alpha, c.values).unwrap()
}

fn increments(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![3 => Just(0.0), 5 => 0.0f64..0.05, 1 => 0.1f64..0.5], len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn sup_error_triangle_inequality(a in increments(20), b in increments(20), c in increments(20)) {
        let alpha = 12.0;
        let (a, b, c) = (
            with_alpha(curve_from(&a, 0.05), alpha),
            with_alpha(curve_from(&b, 0.05), alpha),
            with_alpha(curve_from(&c, 0.05), alpha),
        );
        let ab = sup_error(&a, &b, false).unwrap();
        let bc = sup_error(&b, &c, false).unwrap();
        let ac = sup_error(&a, &c, false).unwrap();
        prop_assert!(ac <= ab + bc + 1e-12);
    }

    #[test]
    fn graph_distance_is_below_sup_error(a in increments(30), b in increments(30)) {
        let alpha = 20.0;
        let a = with_alpha(curve_from(&a, 1.0 / 30.0), alpha);
        let b = with_alpha(curve_from(&b, 1.0 / 30.0), alpha);
        let d = m1_graph_distance(&a, &b).unwrap();
        let s = sup_error(&a, &b, false).unwrap();
        prop_assert!(d >= 0.0 && d <= s + 1e-12, "{} > {}", d, s);
        prop_assert!((d - m1_graph_distance(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert_eq!(m1_graph_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn fit_rate_recovers_power_laws(rate in 0.01f64..2.0, c in 1e-4f64..1e2) {
        let pairs: Vec<(f64, f64)> = [25.0, 50.0, 100.0, 200.0, 400.0, 800.0]
            .iter()
            .map(|&n: &f64| (n, c * n.powf(-rate)))
            .collect();
        let fit = fit_rate(&pairs).unwrap();
        prop_assert!((fit.rate - rate).abs() < 1e-12);
        prop_assert!((fit.r_squared - 1.0).abs() < 1e-12);
        prop_assert!((fit.intercept - c.ln()).abs() < 1e-10);
    }

    #[test]
    fn sup_error_on_a_refined_reference(a in increments(10), b in increments(40)) {
        // the coarse curve is compared at every time of the fine mesh
        let alpha = 25.0;
        let coarse = with_alpha(curve_from(&a, 0.4), alpha);
        let fine = with_alpha(curve_from(&b, 0.1), alpha);
        let brute = (0..=40)
            .map(|k| (coarse.value_at(k as f64 * 0.1) - fine.values[k]).abs())
            .fold(0.0, f64::max);
        prop_assert!((sup_error(&coarse, &fine, false).unwrap() - brute).abs() < 1e-12);
    }
}

#[test]
fn grid_study_on_a_far_law_has_no_error() {
    let law = InitialLaw::uniform(5.0, 6.0).unwrap();
    let spec = StudySpec {
        alpha: 1.0,
        horizon: 0.01,
        n_list: vec![10, 20],
        n_reference: 40,
        engine: Engine::Grid { h: Some(0.01), x_max: None },
        normalized: false,
    };
    let report = convergence_study(&law, &spec).unwrap();
    assert!(report.errors.iter().all(|&e| e < 1e-10));
    assert_eq!(report.fitted_rate, None);
    assert!(!report.coupled_paths);
}

#[test]
fn studies_are_deterministic() {
    let law = InitialLaw::gamma(1.5, 0.5).unwrap();
    let spec = StudySpec {
        alpha: 1.3,
        horizon: 0.8,
        n_list: vec![5, 10, 20],
        n_reference: 80,
        engine: Engine::Particle { n_particles: 20_000, seed: 3, workers: 1 },
        normalized: true,
    };
    let a = convergence_study(&law, &spec).unwrap();
    let b = convergence_study(&law, &spec).unwrap();
    assert_eq!(a, b);
    assert!(a.coupled_paths);
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
    let mut csv = Vec::new();
    a.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 4);
}

#[test]
fn study_rejects_bad_mesh_lists() {
    let law = InitialLaw::gamma(1.5, 0.5).unwrap();
    let mut spec = StudySpec {
        alpha: 1.3,
        horizon: 0.8,
        n_list: vec![],
        n_reference: 80,
        engine: Engine::Grid { h: None, x_max: None },
        normalized: true,
    };
    assert!(matches!(convergence_study(&law, &spec), Err(Error::DegenerateInput(_))));
    spec.n_list = vec![20, 10];
    assert!(matches!(convergence_study(&law, &spec), Err(Error::InvalidMesh(_))));
    spec.n_list = vec![10, 20, 30];
    assert!(matches!(convergence_study(&law, &spec), Err(Error::InvalidMesh(_))));
}
