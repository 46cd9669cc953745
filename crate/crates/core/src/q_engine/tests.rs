use super::*;
use crate::phase_model::conditional_pdf;
use proptest::prelude::*;

#[path = "../../tests/support/oracle.rs"]
mod oracle;

fn quad() -> QuadratureSpec {
    QuadratureSpec::default()
}

fn second(r2: f64, sigma: f64) -> f64 {
    let m = CorrelationModel::second_order(r2, sigma, 0.0).unwrap();
    q_second_order(&m, &quad()).unwrap().q
}

#[test]
fn first_order_reference_point() {
    let r = q_first_order(3.54003, Angle::ZERO, &quad()).unwrap();
    assert!((r.q - 0.9924).abs() <= 5e-4, "q = {}", r.q);
    assert_eq!(r.exactness, Exactness::ClosedForm);
    assert_eq!(r.argmin_phases.len(), 3);
}

#[test]
fn first_order_matches_grid_oracle() {
    let q = q_first_order(1.0, Angle::ZERO, &quad()).unwrap().q;
    let want = oracle::q1_grid(1.0, 0.0, 720);
    assert!((q - want).abs() < 1e-3, "{q} vs {want}");
    assert!(q <= want + 1e-12);
}

#[test]
fn first_order_limits() {
    assert!(q_first_order(10.0, Angle::ZERO, &quad()).unwrap().q >= 0.99999);
    assert!(q_first_order(0.05, Angle::ZERO, &quad()).unwrap().q <= 0.01);
    assert!(q_first_order(0.0, Angle::ZERO, &quad()).is_err());
    assert!(q_first_order(-1.0, Angle::ZERO, &quad()).is_err());
}

#[test]
fn first_order_ignores_mean_increment() {
    let base = q_first_order(1.3, Angle::ZERO, &quad()).unwrap().q;
    for d in [0.4, -2.0, 3.0] {
        let q = q_first_order(1.3, Angle::new(d), &quad()).unwrap().q;
        assert!((q - base).abs() < 1e-6);
    }
}

#[test]
fn argmin_reproduces_reported_value() {
    // Re-evaluate the ratio at the reported phases with an independent
    // fine-grid marginal built from the public conditional density.
    let m = CorrelationModel::second_order(0.7, 1.2, 0.3).unwrap();
    let r = q_second_order(&m, &quad()).unwrap();
    let p = &r.argmin_phases;
    let n_at = |x: Angle| -> f64 {
        conditional_pdf(x, &[p[0], p[1]], &m).unwrap()
            * conditional_pdf(p[3], &[p[1], x], &m).unwrap()
            * conditional_pdf(p[4], &[x, p[3]], &m).unwrap()
    };
    let k = 20_000;
    let marg: f64 = (0..k)
        .map(|j| n_at(Angle::new(-PI + TAU * (j as f64 + 0.5) / k as f64)))
        .sum::<f64>()
        * TAU
        / k as f64;
    let direct = TAU * n_at(p[2]) / marg;
    assert!((direct - r.q).abs() < 1e-8, "{direct} vs {}", r.q);
}

#[test]
fn second_order_matches_grid_oracle() {
    let q = second(1.0, 1.0);
    let want = oracle::q2_grid(1.0, 1.0, 0.0, 72, 1440);
    assert!((q - want).abs() < 2e-3, "{q} vs {want}");
}

#[test]
fn second_order_ordering_in_r() {
    assert!(second(0.2, 1.0) >= second(1.0, 1.0));
}

#[test]
fn second_order_uniform_limit() {
    for r2 in [0.0, 0.5, 1.0] {
        assert!(second(r2, 5.0) >= 0.999);
    }
}

#[test]
fn general_specialises_to_first_and_second_order() {
    let m1 = CorrelationModel::first_order(1.1, 0.2).unwrap();
    let g1 = q_general(&m1, &quad(), &SearchOptions::default()).unwrap();
    let c1 = q_first_order(1.1, Angle::new(0.2), &quad()).unwrap();
    assert!((g1.q - c1.q).abs() < 1e-4, "{} vs {}", g1.q, c1.q);

    for (r2, sigma, d) in [(0.6, 0.9, 0.1), (1.0, 1.7, 0.0)] {
        let m2 = CorrelationModel::second_order(r2, sigma, d).unwrap();
        let g2 = q_general(&m2, &quad(), &SearchOptions::default()).unwrap();
        let s2 = q_second_order(&m2, &quad()).unwrap();
        assert!((g2.q - s2.q).abs() < 1e-4, "{} vs {}", g2.q, s2.q);
    }
}

#[test]
fn third_order_matches_grid_oracle() {
    let m = CorrelationModel::new(vec![1.0, 0.5, 0.25], 0.0, 1.5).unwrap();
    let opts = SearchOptions {
        grid_points: 12,
        ..SearchOptions::default()
    };
    let quad = QuadratureSpec::new(128, QuadratureScheme::Auto).unwrap();
    let r = q_general(&m, &quad, &opts).unwrap();
    assert_eq!(r.exactness, Exactness::BestFound);
    let want = oracle::q3_grid([1.0, 0.5, 0.25], 1.5, 0.0, 48);
    assert!((r.q - want).abs() < 5e-3, "{} vs {want}", r.q);
}

#[test]
fn budget_exhaustion_is_reported() {
    let m = CorrelationModel::new(vec![1.0, 0.5, 0.25], 0.0, 1.5).unwrap();
    let e = q_general(&m, &quad(), &SearchOptions::default()).unwrap_err();
    assert!(matches!(e, Error::BudgetExhausted { needed, .. } if needed == 36u64.pow(5)));
}

#[test]
fn quadrature_converges_under_doubling() {
    for (r2, sigma) in [(1.0, 1.0), (0.7, 0.3), (1.0, 0.2)] {
        let m = CorrelationModel::second_order(r2, sigma, 0.0).unwrap();
        let base = q_second_order(&m, &quad()).unwrap();
        let doubled = q_second_order(&m, &QuadratureSpec::new(1024, QuadratureScheme::Auto).unwrap()).unwrap();
        assert!((base.q - doubled.q).abs() < 1e-4, "r2 {r2} sigma {sigma}: {} vs {}", base.q, doubled.q);
        assert!(base.solver_stats.error_bound < 1e-4);
    }
}

#[test]
fn breakpoint_rule_beats_plain_trapezoid_at_unit_weight() {
    // With r2 = 1 the combined phase jumps by π; the plain trapezoid
    // converges only at first order there.
    let m = CorrelationModel::second_order(1.0, 1.0, 0.0).unwrap();
    let fine = q_second_order(&m, &QuadratureSpec::new(4096, QuadratureScheme::Auto).unwrap()).unwrap().q;
    let auto = q_second_order(&m, &quad()).unwrap().q;
    let trap = q_second_order(&m, &QuadratureSpec::new(512, QuadratureScheme::PeriodicTrapezoid).unwrap()).unwrap().q;
    assert!((auto - fine).abs() <= (trap - fine).abs());
    assert!((auto - fine).abs() < 1e-6);
}

#[test]
fn invalid_models_are_rejected() {
    let m1 = CorrelationModel::first_order(1.0, 0.0).unwrap();
    assert!(q_second_order(&m1, &quad()).is_err());
    let mut m = CorrelationModel::second_order(0.5, 1.0, 0.0).unwrap();
    m.sigma = 0.0;
    assert!(q_second_order(&m, &quad()).is_err());
    m.sigma = 1.0;
    m.r[0] = 2.0;
    assert!(q_second_order(&m, &quad()).is_err());
    assert!(QuadratureSpec::new(10, QuadratureScheme::Auto).is_err());
}

#[test]
fn builders_agree_with_conditional_density() {
    let m = CorrelationModel::second_order(0.8, 0.9, 0.25).unwrap();
    let outer = [0.4, -1.3, 2.2];
    let x = 0.9;
    let wg = WrappedGaussian::new(m.sigma).unwrap();
    let a = second_order_factors(&m, &outer).unwrap().log_n_at(&wg, m.delta_phi_bar, x);
    let b = window_factors(&m, &outer).unwrap().log_n_at(&wg, m.delta_phi_bar, x);
    let ph = |v: f64| Angle::new(v);
    let want = (conditional_pdf(ph(x), &[ph(0.0), ph(0.4)], &m).unwrap()
        * conditional_pdf(ph(-1.3), &[ph(0.4), ph(x)], &m).unwrap()
        * conditional_pdf(ph(2.2), &[ph(x), ph(-1.3)], &m).unwrap())
    .ln();
    assert!((a - want).abs() < 1e-12);
    assert!((b - want).abs() < 1e-12);
}

/// Full objective at arbitrary phases through the public conditional density.
fn ratio_at(m: &CorrelationModel, phases: &[f64]) -> f64 {
    let l = m.ell_c;
    let angles: Vec<Angle> = phases.iter().map(|&p| Angle::new(p)).collect();
    let n_at = |x: f64| -> f64 {
        let mut p = angles.clone();
        p[l] = Angle::new(x);
        (0..=l)
            .map(|k| conditional_pdf(p[l + k], &p[k..l + k], m).unwrap())
            .product()
    };
    let k = 4096;
    let marg: f64 = (0..k).map(|j| n_at(-PI + TAU * (j as f64 + 0.5) / k as f64)).sum::<f64>() * TAU / k as f64;
    n_at(phases[l]) / marg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn objective_is_shift_invariant(
        p in prop::collection::vec(-PI..PI, 5),
        shift in -10.0f64..10.0,
        r2 in 0.1f64..0.9,
        sigma in 0.6f64..2.0,
    ) {
        let m = CorrelationModel::second_order(r2, sigma, 0.3).unwrap();
        let moved: Vec<f64> = p.iter().map(|x| x + shift).collect();
        let a = ratio_at(&m, &p);
        let b = ratio_at(&m, &moved);
        prop_assert!((a - b).abs() <= 1e-10 * a.max(1.0), "{} vs {}", a, b);
    }
}

