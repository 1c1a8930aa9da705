//! Closed-form and quadrature reference values for Gaussian fields.
//!
//! Nothing here touches the grid or the FFT; these functions serve as
//! independent references for the spectral code.

use std::f64::consts::PI;

use crate::kernel::DipoleParams;

/// `amp * exp(-sum_i x_i^2 / (2 w_i^2))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian {
    pub amp: f64,
    pub widths: [f64; 3],
}

impl Gaussian {
    pub fn isotropic(amp: f64, width: f64) -> Self {
        Self {
            amp,
            widths: [width; 3],
        }
    }

    /// Axially symmetric about `x3`: transverse width `a`, axial width `c`.
    pub fn axial(amp: f64, a: f64, c: f64) -> Self {
        Self {
            amp,
            widths: [a, a, c],
        }
    }

    pub fn eval(&self, x: [f64; 3]) -> f64 {
        let q: f64 = (0..3).map(|i| x[i] * x[i] / (2.0 * self.widths[i].powi(2))).sum();
        self.amp * (-q).exp()
    }

    fn width_product(&self) -> f64 {
        self.widths.iter().product()
    }

    /// `int |g|^p`.
    pub fn lp_power(&self, p: f64) -> f64 {
        self.amp.abs().powf(p) * (2.0 * PI / p).powf(1.5) * self.width_product()
    }

    pub fn mass(&self) -> f64 {
        self.lp_power(2.0)
    }

    pub fn kinetic(&self) -> f64 {
        let s: f64 = self.widths.iter().map(|w| 1.0 / (2.0 * w * w)).sum();
        self.mass() * s
    }

    pub fn quartic(&self) -> f64 {
        self.lp_power(4.0)
    }

    pub fn sextic(&self) -> f64 {
        self.lp_power(6.0)
    }

    /// `int |x|^2 |g|^2`.
    pub fn second_moment(&self) -> f64 {
        let s: f64 = self.widths.iter().map(|w| w * w / 2.0).sum();
        self.mass() * s
    }

    /// `int (K * |g|^2) |g|^2` for an axially symmetric Gaussian, reduced to a
    /// single angular integral after doing the radial one in closed form.
    pub fn dipolar(&self) -> f64 {
        let [a, b, c] = self.widths;
        assert!(
            (a - b).abs() <= 1e-15 * a.abs(),
            "dipolar oracle needs equal transverse widths"
        );
        // |rho^(xi)|^2 = amp^4 pi^3 (a^2 c)^2 exp(-r^2 (a^2 (1 - t^2) + c^2 t^2) / 2)
        let pref = (2.0 * PI).powi(-3)
            * self.amp.powi(4)
            * PI.powi(3)
            * (a * a * c).powi(2)
            * 2.0
            * PI
            * (4.0 * PI / 3.0)
            * (PI / 2.0).sqrt();
        let integrand = |t: f64| (3.0 * t * t - 1.0) * (a * a * (1.0 - t * t) + c * c * t * t).powf(-1.5);
        pref * adaptive_simpson(&integrand, -1.0, 1.0, 1e-14)
    }

    /// `N = -lambda1 ||g||_4^4 - lambda2 D(g)`.
    pub fn n_value(&self, p: &DipoleParams) -> f64 {
        let d = if p.lambda2 == 0.0 { 0.0 } else { self.dipolar() };
        -p.lambda1 * self.quartic() - p.lambda2 * d
    }

    pub fn energy(&self, p: &DipoleParams) -> f64 {
        let d = if p.lambda2 == 0.0 { 0.0 } else { self.dipolar() };
        0.5 * self.kinetic() + 0.25 * (p.lambda1 * self.quartic() + p.lambda2 * d) + self.sextic() / 6.0
    }

    /// The Weinstein quotient, `None` when `N <= 0`.
    pub fn weinstein(&self, alpha: f64, p: &DipoleParams) -> Option<f64> {
        let n = self.n_value(p);
        if n <= 0.0 {
            return None;
        }
        Some(
            self.mass().sqrt()
                * self.kinetic().powf(3.0 / (2.0 * (1.0 + alpha)))
                * self.sextic().powf(alpha / (2.0 * (1.0 + alpha)))
                / n,
        )
    }
}

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(fa, fm, fb, a, b);
    recurse(f, a, b, fa, fm, fb, whole, tol, 40)
}
