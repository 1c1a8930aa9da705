mod common;

use approx::assert_relative_eq;
use dnls_core::functionals::{report, Extended, FunctionalReport};
use dnls_core::ground_state::Gauge;
use dnls_core::kernel::classify_regime;
use dnls_core::oracle::Gaussian;
use dnls_core::spectral::GridSpec;
use dnls_core::threshold::*;
use proptest::prelude::*;

use common::{coarse_q1, gaussian_field};

fn synthetic_curve() -> ThresholdCurve {
    // E decreasing from 1.2 at m = 185 to 0 at m = 240
    let samples = (0..9)
        .map(|i| {
            let t = i as f64 / 8.0;
            CurveSample {
                m: 185.0 + 55.0 * t,
                value: Extended::Finite(1.2 * (1.0 - t).powf(1.5)),
                restarts_used: 3,
            }
        })
        .collect();
    ThresholdCurve {
        mass_q1: 240.0,
        mass_s: 185.0,
        energy_s: 1.2,
        epsilon_curve: 0.02,
        samples,
        gauge: CurveGauge {
            gauge: Gauge::Elliptic,
            lambda1: -1.0,
            lambda2: 0.0,
            grid: GridSpec { n: 32, box_length: 70.0 },
        },
    }
}

#[test]
fn s_profile_anchors() {
    let q = coarse_q1();
    let s = build_s(q).unwrap();
    assert_relative_eq!(s.algebraic.mass / q.report.mass, mass_ratio_s(), max_relative = 1e-12);
    assert_relative_eq!(s.algebraic.gamma, 1.0 / 3.0, epsilon = 1e-10);
    assert!((s.algebraic.i_value / s.algebraic.kinetic).abs() < 1e-10);
    assert!((s.resampled.i_value / s.resampled.kinetic).abs() < 1e-2);
}

#[test]
fn script_e_anchors() {
    let q = coarse_q1();
    let s = build_s(q).unwrap();
    let opts = ThresholdOptions::default();
    let eps = opts.epsilon_curve * s.algebraic.energy;
    let (at_q1, used) = script_e(q.report.mass, q, &opts);
    assert!(used > 0);
    assert!(at_q1.finite().unwrap().abs() < eps);
    let (at_s, _) = script_e(s.algebraic.mass, q, &opts);
    assert!((at_s.finite().unwrap() - s.algebraic.energy).abs() < eps);
    let (below, used) = script_e(0.5 * s.algebraic.mass, q, &opts);
    assert_eq!(below, Extended::Infinite);
    assert_eq!(used, 0);
}

#[test]
fn short_curve_is_monotone_and_serializes() {
    let q = coarse_q1();
    let opts = ThresholdOptions {
        samples: 4,
        ..ThresholdOptions::default()
    };
    let c = build_curve(q, &opts).unwrap();
    assert_eq!(c.samples.len(), 4);
    assert!(c.monotonicity_defect() < c.epsilon());
    let csv = c.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "m,script_e,feasible_flag,restarts_used");
    assert_eq!(lines.count(), 4);
    let meta = serde_json::to_value(c.metadata()).unwrap();
    assert_eq!(meta["gauge"]["lambda1"], -1.0);
    assert!(meta["epsilon_absolute"].as_f64().unwrap() > 0.0);
}

#[test]
fn d_spreads_below_q1_and_is_negative_above() {
    let q = coarse_q1();
    let opts = DOptions::default();
    let m = 0.8 * q.report.mass;
    let floor = uniform_energy(m, q.field.grid().box_length(), &q.params);
    let d = d_of_m(m, q, &opts);
    assert!(d >= floor - 1e-12 && d <= 0.9 * floor, "d = {d}, constant state {floor}");
    assert!(d_of_m(1.2 * q.report.mass, q, &opts) < -0.5);
}

#[test]
fn trial_fields_below_s_have_positive_virial() {
    let q = coarse_q1();
    let s = build_s(q).unwrap();
    let m = 0.5 * s.algebraic.mass;
    for u in random_trial_fields(q, m, 20, 9) {
        let r = report(&u, &q.params);
        assert_relative_eq!(r.mass, m, max_relative = 1e-10);
        assert!(r.i_value > 0.0);
        assert!(gn_bound_margin(&r, s.algebraic.mass) > 0.0);
    }
}

#[test]
fn focusing_gaussian_projects_onto_i_zero() {
    let p = classify_regime(-1.0, 0.0);
    let u = gaussian_field(32, 40.0, Gaussian::isotropic(0.83, 5.0), [0.0; 3]);
    let r = report(&u, &p);
    assert!(r.i_value < 0.0);
    let proj = project_to_i_zero(&r, &p).unwrap();
    assert!(proj.s > 1.0);
    assert!(proj.report.energy < r.energy);
    assert!(proj.report.gamma >= 1.0 / 3.0 - 1e-6);
    assert!((proj.report.i_value / proj.report.kinetic).abs() < 1e-10);
}

#[test]
fn embedding_preserves_functionals() {
    let q = coarse_q1();
    let big = embed_in_larger_box(&q.field, 2).unwrap();
    assert_eq!(big.grid().spec().n, 64);
    let r = report(&big, &q.params);
    assert_relative_eq!(r.mass, q.report.mass, max_relative = 1e-12);
    assert_relative_eq!(r.kinetic, q.report.kinetic, max_relative = 1e-6);
}

#[test]
fn region_and_l_functional_on_synthetic_curve() {
    let c = synthetic_curve();
    assert!(in_region_k(100.0, 50.0, &c));
    assert!(in_region_k(200.0, 0.1, &c));
    assert!(!in_region_k(200.0, 1.1, &c));
    assert!(!in_region_k(250.0, 0.1, &c));
    assert_eq!(l_functional(200.0, 1.1, &c).unwrap(), Extended::Infinite);
    assert!(l_functional(100.0, 0.5, &c).unwrap().is_finite());
    assert!(matches!(l_functional(260.0, -0.5, &c), Err(ThresholdError::OutsideCurve { .. })));
}

fn i_zero_report(g: Gaussian) -> Option<FunctionalReport> {
    let p = classify_regime(-1.0, 0.0);
    let r = FunctionalReport::from_terms(g.mass(), g.kinetic(), g.quartic(), 0.0, g.sextic(), [0.0; 3], &p);
    let m_min = minimal_feasible_mass(&r).finite()?;
    let a = (1.3 * m_min / r.mass).sqrt();
    project_to_i_zero(&r.rescaled(a, 1.0, &p), &p).ok().map(|x| x.report)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn l_functional_is_monotone(m1 in 10.0..239.0f64, e1 in 0.01..1.0f64, dm in 0.0..30.0f64, de in 0.0..0.3f64) {
        let c = synthetic_curve();
        let (m2, e2) = (m1 + dm, e1 + de);
        let l1 = l_functional(m1, e1, &c);
        let l2 = l_functional(m2, e2, &c);
        if let (Ok(l1), Ok(l2)) = (l1, l2) {
            prop_assert!(l1.le(&l2), "L({m1},{e1}) = {l1:?} > L({m2},{e2}) = {l2:?}");
        }
    }

    #[test]
    fn mass_raise_keeps_i_zero(w in 1.0..3.0f64, c in 0.5..2.0f64, factor in 1.01..2.0f64) {
        let Some(u) = i_zero_report(Gaussian::axial(1.0, w, c * w)) else { return Ok(()); };
        let p = classify_regime(-1.0, 0.0);
        let target = factor * u.mass;
        let (v, tau, sigma) = raise_mass(&u, target, &p).unwrap();
        prop_assert!(tau > 1.0 && sigma > 0.0);
        prop_assert!((v.mass / target - 1.0).abs() < 1e-12);
        prop_assert!((v.i_value / v.kinetic).abs() < 1e-10);
        prop_assert!(v.energy <= raised_energy_bound(&u, target) + 1e-12 * u.kinetic);
    }
}
