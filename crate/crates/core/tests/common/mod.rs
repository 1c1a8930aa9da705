#![allow(dead_code)]

use std::sync::OnceLock;

use dnls_core::ground_state::{ground_state_from_gaussian, GroundState, WeinsteinOptions};
use dnls_core::kernel::classify_regime;
use dnls_core::oracle::Gaussian;
use dnls_core::spectral::{make_grid, Field3D, C64};

/// `Q_1` for `(lambda1, lambda2) = (-1, 0)` on a coarse 32^3 grid.
pub fn coarse_q1() -> &'static GroundState {
    static Q: OnceLock<GroundState> = OnceLock::new();
    Q.get_or_init(|| {
        let grid = make_grid(32, 56.0).unwrap();
        let opts = WeinsteinOptions {
            boundary_tol: 1e-3,
            ..WeinsteinOptions::default()
        };
        ground_state_from_gaussian(&classify_regime(-1.0, 0.0), 1.0, &grid, &opts).unwrap()
    })
}

pub fn gaussian_field(n: usize, l: f64, g: Gaussian, xi: [f64; 3]) -> Field3D {
    let grid = make_grid(n, l).unwrap();
    Field3D::from_fn(&grid, |x| C64::from_polar(g.eval(x), xi[0] * x[0] + xi[1] * x[1] + xi[2] * x[2]))
}
