mod common;

use approx::assert_relative_eq;
use dnls_core::evolution::{evolve, EvolutionConfig};
use dnls_core::functionals::report;
use dnls_core::kernel::classify_regime;
use dnls_core::oracle::Gaussian;
use dnls_core::spectral::{Field3D, C64};
use dnls_core::virial::*;
use proptest::prelude::*;

use common::gaussian_field;

#[test]
fn quadratic_identity_without_dipole() {
    let p = classify_regime(-1.0, 0.0);
    let u = gaussian_field(32, 20.0, Gaussian::axial(0.9, 1.3, 1.8), [0.2, 0.0, 0.1]);
    let w = VirialWeight::new(u.grid(), WeightKind::Quadratic);
    assert_relative_eq!(virial_vpp(&u, &w, &p), 8.0 * report(&u, &p).i_value, max_relative = 1e-10);
}

#[test]
fn quadratic_moments_of_a_boosted_gaussian() {
    // V = M (3 w^2 / 2 + |a|^2) and V' = 4 xi . a M for exp(i x.xi) g(x - a)
    let grid = dnls_core::spectral::make_grid(48, 24.0).unwrap();
    let g = Gaussian::isotropic(0.6, 1.5);
    let (a, xi) = ([1.0, -0.5, 0.75], [0.3, 0.2, -0.4]);
    let u = Field3D::from_fn(&grid, |x| {
        let y = [x[0] - a[0], x[1] - a[1], x[2] - a[2]];
        C64::from_polar(g.eval(y), xi[0] * x[0] + xi[1] * x[1] + xi[2] * x[2])
    });
    let w = VirialWeight::new(&grid, WeightKind::Quadratic);
    let a2: f64 = a.iter().map(|v| v * v).sum();
    let xa: f64 = (0..3).map(|j| xi[j] * a[j]).sum();
    assert_relative_eq!(virial_v(&u, &w), g.mass() * (1.5 * 1.5 * 1.5 + a2), max_relative = 1e-10);
    assert_relative_eq!(virial_vp(&u, &w), 4.0 * xa * g.mass(), max_relative = 1e-10);
    let c = center_of_mass(&u);
    for j in 0..3 {
        assert!((c[j] - a[j]).abs() < 1e-10);
    }
}

#[test]
fn localized_weight_reduces_to_quadratic_on_compact_data() {
    let p = classify_regime(-1.0, 0.3);
    let u = gaussian_field(48, 40.0, Gaussian::axial(0.8, 1.2, 1.6), [0.0; 3]);
    let radius = covering_radius(&u, 0.999999);
    assert!(radius < 10.0);
    let q = virial_eval(&u, &VirialWeight::new(u.grid(), WeightKind::Quadratic), &p);
    let l = virial_eval(&u, &VirialWeight::new(u.grid(), WeightKind::Localized { radius }), &p);
    assert_relative_eq!(l.v, q.v, max_relative = 1e-5);
    assert_relative_eq!(l.vpp, q.vpp, max_relative = 1e-3);
    assert!(!l.boundary_flag);
}

#[test]
fn localized_terms_sum_to_total() {
    let p = classify_regime(-1.0, 0.3);
    let u = gaussian_field(32, 24.0, Gaussian::axial(0.8, 1.6, 2.4), [0.1, 0.0, 0.0]);
    let w = VirialWeight::new(u.grid(), WeightKind::Localized { radius: 2.0 });
    let t = virial_vpp_terms(&u, &w, &p);
    assert_relative_eq!(t.total(), t.kinetic + t.angular + t.local - t.bilaplacian + t.dipolar, max_relative = 1e-14);
    assert_relative_eq!(t.total(), virial_vpp(&u, &w, &p), max_relative = 1e-14);
}

#[test]
fn dipolar_bound_is_controlled_by_tails() {
    let p = classify_regime(-1.0, 0.3);
    let u = gaussian_field(32, 24.0, Gaussian::axial(0.8, 1.6, 2.4), [0.0; 3]);
    let b = dipolar_virial_bound(&u, 2.0, &p);
    assert!(b.constant.is_finite() && b.constant >= 0.0);
    assert!(b.tails.iter().all(|v| *v > 0.0));
    let far = dipolar_virial_bound(&u, 9.0, &p);
    assert!(far.deficit <= 1e-3 * far.homogeneous.abs());
}

#[test]
fn series_matches_finite_differences() {
    let p = classify_regime(-1.0, 0.3);
    let u = gaussian_field(32, 20.0, Gaussian::axial(0.8, 1.3, 1.8), [0.0; 3]);
    let dt = 0.005;
    let cfg = EvolutionConfig {
        dt,
        t_final: 0.3,
        output_stride: 2,
        ..EvolutionConfig::default()
    };
    let (tr, vs) = virial_series(&u, &cfg, &p, WeightKind::Quadratic).unwrap();
    assert_eq!(vs.times.len(), tr.times.len());
    assert!(vs.vpp_fd[0].is_nan() && vs.vpp_fd.last().unwrap().is_nan());
    assert!(vs.vpp_discrepancy() < 1e-3);
    let csv = vs.to_csv();
    assert_eq!(csv.lines().next().unwrap(), "t,V,Vp,Vpp_direct,Vpp_fd,I");
    assert_eq!(csv.lines().count(), 1 + vs.times.len());
}

#[test]
fn i_positivity_monitor_on_dispersing_data() {
    let p = classify_regime(-1.0, 0.0);
    let u = gaussian_field(32, 32.0, Gaussian::isotropic(0.4, 1.8), [0.0; 3]);
    let cfg = EvolutionConfig {
        dt: 0.02,
        t_final: 1.0,
        output_stride: 5,
        ..EvolutionConfig::default()
    };
    let tr = evolve(&u, &cfg, &p).unwrap();
    let rep = monitor_i_positivity(&tr, 0.5);
    assert!(rep.i_initial > 0.0 && rep.passed);
    assert!(rep.i_min <= rep.i_initial);
    assert_relative_eq!(rep.eta, 0.5 * rep.i_initial);
}

#[test]
fn boundary_mass_is_flagged() {
    let spread = gaussian_field(16, 10.0, Gaussian::isotropic(1.0, 3.0), [0.0; 3]);
    assert!(boundary_mass_fraction(&spread) > BOUNDARY_MASS_LIMIT);
    let compact = gaussian_field(16, 10.0, Gaussian::isotropic(1.0, 0.8), [0.0; 3]);
    assert!(boundary_mass_fraction(&compact) < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn blend_constraints(r in 0.0..3.0f64) {
        let [psi, d1, d2, _, d4] = psi_derivatives(r);
        prop_assert!(d1 >= -1e-12);
        prop_assert!(d2 <= 2.0 + 1e-12);
        prop_assert!(d4.abs() <= blend_profile().fourth_derivative_bound + 1e-9);
        if r <= 1.0 {
            prop_assert!((psi - r * r).abs() < 1e-14);
        }
        if r >= 2.0 {
            prop_assert_eq!(d1, 0.0);
        }
    }
}
