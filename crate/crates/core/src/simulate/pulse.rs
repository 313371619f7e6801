//! Laser pulse shapes: a Gaussian for the instantaneous return and its
//! analytic convolution with the exponential diffuse kernel.

use std::f64::consts::{PI, SQRT_2};

use crate::real::Real;

/// Standard deviation of a Gaussian with the given full width at half maximum.
pub fn sigma_from_fwhm(fwhm: f64) -> f64 {
    fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
}

/// Unit-area Gaussian pulse.
pub fn gaussian<T: Real>(t: T, sigma: f64) -> T {
    (t.sq() * (-0.5 / (sigma * sigma))).exp() / (sigma * (2.0 * PI).sqrt())
}

/// Scaled complementary error function `exp(x²)·erfc(x)` for `x ≥ 0`.
pub fn erfcx(x: f64) -> f64 {
    x.erfcx()
}

/// Unit-area Gaussian convolved with `(1/τ) exp(-t/τ)`, `t ≥ 0`
/// (exponentially modified Gaussian). Reduces to [`gaussian`] as `τ → 0`.
pub fn emg<T: Real>(t: T, sigma: f64, tau: T) -> T {
    if tau.re() <= 0.0 {
        return gaussian(t, sigma);
    }
    let z = (tau.recip() * sigma - t / sigma) / SQRT_2;
    if z.re() < 0.0 {
        let a = (tau.recip() * sigma).sq() * 0.5 - t / tau;
        a.exp() * z.erfc() / (tau * 2.0)
    } else {
        (t.sq() * (-0.5 / (sigma * sigma))).exp() * z.erfcx() / (tau * 2.0)
    }
}

/// Time support outside of which both shapes are negligible (< 1e-12 of peak).
pub fn support(sigma: f64, tau: f64) -> (f64, f64) {
    (-8.0 * sigma, 8.0 * sigma + 30.0 * tau.max(0.0))
}
