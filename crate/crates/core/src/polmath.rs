//! Stokes–Mueller algebra: ideal optical elements, Fresnel interfaces and
//! frame rotations.
//!
//! Conventions used throughout the crate:
//!
//! * Stokes vectors are `(s0, s1, s2, s3)` with `s1 = I_x - I_y` in the
//!   local reference frame.
//! * [`Mueller::rotator`] re-expresses a Stokes vector in a frame rotated by
//!   `theta`; an element at angle `theta` is `rotator(-theta) · E₀ · rotator(theta)`.
//! * Retarders have their fast axis horizontal at `theta = 0`; a quarter-wave
//!   plate at 0 maps `(1,0,1,0)` to `(1,0,0,-1)`.
//! * Fresnel reflection uses a single transverse frame for the incident and
//!   the reflected beam (backscatter alignment), so normal-incidence
//!   reflection is `R · I`.

use std::f64::consts::PI;
use std::ops::{Add, Mul};

use serde::{Deserialize, Serialize};

use crate::real::Real;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stokes<T = f64>(pub [T; 4]);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mueller<T = f64>(pub [[T; 4]; 4]);

impl<T: Real> Stokes<T> {
    pub fn new(s0: T, s1: T, s2: T, s3: T) -> Self {
        Self([s0, s1, s2, s3])
    }

    pub fn s0(&self) -> T {
        self.0[0]
    }

    pub fn polarized_intensity(&self) -> T {
        (self.0[1].sq() + self.0[2].sq() + self.0[3].sq()).sqrt()
    }
}

impl Stokes<f64> {
    pub const UNPOLARIZED: Stokes = Stokes([1.0, 0.0, 0.0, 0.0]);
    pub const HORIZONTAL: Stokes = Stokes([1.0, 1.0, 0.0, 0.0]);

    /// `s0² ≥ s1² + s2² + s3²` within `slack`.
    pub fn is_physical(&self, slack: f64) -> bool {
        self.0[0] >= 0.0 && self.0[0] * self.0[0] + slack >= self.polarized_intensity().powi(2)
    }

    pub fn max_abs_diff(&self, o: &Stokes) -> f64 {
        (0..4).map(|i| (self.0[i] - o.0[i]).abs()).fold(0.0, f64::max)
    }
}

impl<T: Real> Mueller<T> {
    pub fn zero() -> Self {
        Self([[T::zero(); 4]; 4])
    }

    pub fn identity() -> Self {
        Self::diag(T::one(), T::one(), T::one(), T::one())
    }

    pub fn diag(a: T, b: T, c: T, d: T) -> Self {
        let mut m = Self::zero();
        m.0[0][0] = a;
        m.0[1][1] = b;
        m.0[2][2] = c;
        m.0[3][3] = d;
        m
    }

    /// Frame rotation by `theta`; acts on `(s1, s2)` with
    /// `[cos2θ, sin2θ; -sin2θ, cos2θ]`.
    pub fn rotator(theta: T) -> Self {
        let (s, c) = (theta * 2.0).sin_cos();
        Self::rotator_cs(c, s)
    }

    /// Rotator from precomputed `cos 2θ`, `sin 2θ`.
    pub fn rotator_cs(c2: T, s2: T) -> Self {
        let mut m = Self::identity();
        m.0[1][1] = c2;
        m.0[1][2] = s2;
        m.0[2][1] = -s2;
        m.0[2][2] = c2;
        m
    }

    /// Element `self` physically rotated by `theta`.
    pub fn rotated(&self, theta: T) -> Self {
        Self::rotator(-theta) * *self * Self::rotator(theta)
    }

    /// `rotator(-ψ) · self · rotator(ψ)` from `cos 2ψ`, `sin 2ψ`.
    pub fn conjugate_cs(&self, c2: T, s2: T) -> Self {
        Self::rotator_cs(c2, -s2) * *self * Self::rotator_cs(c2, s2)
    }

    /// Canonical interface block `[[A,B,0,0],[B,A,0,0],[0,0,C,S],[0,0,-S,C]]`.
    pub fn interface(a: T, b: T, c: T, s: T) -> Self {
        let z = T::zero();
        Self([[a, b, z, z], [b, a, z, z], [z, z, c, s], [z, z, -s, c]])
    }

    pub fn scale(&self, k: T) -> Self {
        let mut m = *self;
        for row in m.0.iter_mut() {
            for v in row.iter_mut() {
                *v = *v * k;
            }
        }
        m
    }

    pub fn transpose(&self) -> Self {
        let mut m = *self;
        for i in 0..4 {
            for j in 0..4 {
                m.0[i][j] = self.0[j][i];
            }
        }
        m
    }

    pub fn apply(&self, s: &Stokes<T>) -> Stokes<T> {
        let mut out = [T::zero(); 4];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.0[i][0] * s.0[0] + self.0[i][1] * s.0[1] + self.0[i][2] * s.0[2] + self.0[i][3] * s.0[3];
        }
        Stokes(out)
    }

    /// Row-major flattening.
    pub fn to_vec16(&self) -> [T; 16] {
        let mut v = [T::zero(); 16];
        for i in 0..4 {
            for j in 0..4 {
                v[4 * i + j] = self.0[i][j];
            }
        }
        v
    }

    pub fn from_vec16(v: &[T]) -> Self {
        let mut m = Self::zero();
        for i in 0..4 {
            for j in 0..4 {
                m.0[i][j] = v[4 * i + j];
            }
        }
        m
    }
}

impl Mueller<f64> {
    /// Ideal linear polarizer with transmission axis at `theta`.
    pub fn linear_polarizer(theta: f64) -> Self {
        let mut lp0 = Self::zero();
        for i in 0..2 {
            for j in 0..2 {
                lp0.0[i][j] = 0.5;
            }
        }
        lp0.rotated(theta)
    }

    /// Ideal linear retarder, fast axis at `theta`.
    pub fn waveplate(theta: f64, retardance: f64) -> Self {
        let (s, c) = retardance.sin_cos();
        let mut r0 = Self::identity();
        r0.0[2][2] = c;
        r0.0[2][3] = s;
        r0.0[3][2] = -s;
        r0.0[3][3] = c;
        r0.rotated(theta)
    }

    pub fn half_wave_plate(theta: f64) -> Self {
        Self::waveplate(theta, PI)
    }

    pub fn quarter_wave_plate(theta: f64) -> Self {
        Self::waveplate(theta, PI / 2.0)
    }

    pub fn max_abs_diff(&self, o: &Mueller) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                d = d.max((self.0[i][j] - o.0[i][j]).abs());
            }
        }
        d
    }

    pub fn frobenius(&self) -> f64 {
        self.0.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest output `s0` over unit-intensity physical inputs.
    pub fn max_gain(&self) -> f64 {
        let r = &self.0[0];
        r[0] + (r[1] * r[1] + r[2] * r[2] + r[3] * r[3]).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

impl<T: Real> Mul for Mueller<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut m = Self::zero();
        for i in 0..4 {
            for j in 0..4 {
                m.0[i][j] = self.0[i][0] * o.0[0][j]
                    + self.0[i][1] * o.0[1][j]
                    + self.0[i][2] * o.0[2][j]
                    + self.0[i][3] * o.0[3][j];
            }
        }
        m
    }
}

impl<T: Real> Add for Mueller<T> {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        for i in 0..4 {
            for j in 0..4 {
                self.0[i][j] = self.0[i][j] + o.0[i][j];
            }
        }
        self
    }
}

/// Rotation angles of the emitter HWP, emitter QWP, receiver QWP and
/// receiver LP, each normalized to `[0, π)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpticAngles {
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
    pub theta4: f64,
}

impl OpticAngles {
    pub fn new(theta1: f64, theta2: f64, theta3: f64, theta4: f64) -> Self {
        Self {
            theta1: wrap_pi(theta1),
            theta2: wrap_pi(theta2),
            theta3: wrap_pi(theta3),
            theta4: wrap_pi(theta4),
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.theta1, self.theta2, self.theta3, self.theta4]
    }

    /// Polarizing optics `Q(θ²)·W(θ¹)`.
    pub fn generator(&self) -> Mueller {
        Mueller::quarter_wave_plate(self.theta2) * Mueller::half_wave_plate(self.theta1)
    }

    /// Analyzing optics `L(θ⁴)·Q(θ³)`.
    pub fn analyzer(&self) -> Mueller {
        Mueller::linear_polarizer(self.theta4) * Mueller::quarter_wave_plate(self.theta3)
    }
}

/// Wrap an angle into `[0, π)`.
pub fn wrap_pi(theta: f64) -> f64 {
    let w = theta.rem_euclid(PI);
    if w >= PI {
        0.0
    } else {
        w
    }
}

/// Fresnel reflectances for a dielectric interface entered from air.
/// Returns `(r_s, r_p)` amplitude coefficients in the shared-frame
/// convention (`r_s = r_p` at normal incidence).
pub fn fresnel_amplitudes<T: Real>(cos_i: T, eta: T) -> (T, T) {
    let sin2 = (T::one() - cos_i.sq()).max_re(T::zero());
    let cos_t = (T::one() - sin2 / eta.sq()).sqrt();
    let rs = (cos_i - eta * cos_t) / (cos_i + eta * cos_t);
    let rp = (cos_t - eta * cos_i) / (cos_t + eta * cos_i);
    (rs, rp)
}

/// Reflection Mueller matrix from the cosine of the incidence angle.
pub fn fresnel_reflection_cos<T: Real>(cos_i: T, eta: T) -> Mueller<T> {
    let (rs, rp) = fresnel_amplitudes(cos_i, eta);
    let (rs2, rp2) = (rs.sq(), rp.sq());
    Mueller::interface((rs2 + rp2) * 0.5, (rs2 - rp2) * 0.5, rs * rp, T::zero())
}

/// Transmission Mueller matrix (air → medium) from the cosine of the
/// external angle; includes the index/solid-angle throughput factor.
pub fn fresnel_transmission_cos<T: Real>(cos_i: T, eta: T) -> Mueller<T> {
    let (rs, rp) = fresnel_amplitudes(cos_i, eta);
    let ts = T::one() - rs.sq();
    let tp = T::one() - rp.sq();
    Mueller::interface((ts + tp) * 0.5, (ts - tp) * 0.5, (ts * tp).sqrt(), T::zero())
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 1.0) || !eta.is_finite() {
        return Err(Error::Domain(format!("refractive index must be > 1, got {eta}")));
    }
    Ok(())
}

/// Fresnel reflection at incidence `theta_d` on a dielectric of index `eta`.
pub fn fresnel_reflection(theta_d: f64, eta: f64) -> Result<Mueller> {
    check_eta(eta)?;
    if !(0.0..PI / 2.0).contains(&theta_d) {
        return Err(Error::Domain(format!("incidence angle {theta_d} outside [0, π/2)")));
    }
    Ok(fresnel_reflection_cos(theta_d.cos(), eta))
}

/// Fresnel transmission through an interface of relative index `eta`.
///
/// `entering = true`: air → medium at external angle `theta`.
/// `entering = false`: medium → air at internal angle `theta`; errors past
/// the critical angle.
pub fn fresnel_transmission(theta: f64, eta: f64, entering: bool) -> Result<Mueller> {
    check_eta(eta)?;
    if !(0.0..PI / 2.0).contains(&theta) {
        return Err(Error::Domain(format!("incidence angle {theta} outside [0, π/2)")));
    }
    if entering {
        return Ok(fresnel_transmission_cos(theta.cos(), eta));
    }
    let sin_out = eta * theta.sin();
    if sin_out >= 1.0 {
        return Err(Error::Domain(format!(
            "internal angle {theta} beyond critical angle {}",
            (1.0 / eta).asin()
        )));
    }
    // transmittance is symmetric in direction; evaluate at the external angle
    Ok(fresnel_transmission_cos((1.0 - sin_out * sin_out).sqrt(), eta))
}

/// Degree of polarization.
pub fn dop(s: &Stokes) -> Result<f64> {
    if !(s.0[0] > 0.0) {
        return Err(Error::Undefined(format!("DoP needs s0 > 0, got {}", s.0[0])));
    }
    Ok(s.polarized_intensity() / s.0[0])
}

/// Angle of linear polarization in `[0, π)`.
pub fn aop(s: &Stokes) -> Result<f64> {
    if s.0[1] * s.0[1] + s.0[2] * s.0[2] <= 0.0 {
        return Err(Error::Undefined("AoP of light without linear polarization".into()));
    }
    Ok(wrap_pi(0.5 * s.0[2].atan2(s.0[1])))
}
