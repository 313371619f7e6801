//! Temporal polarimetric reflectance under the monostatic approximation.
//!
//! A surface interaction returns two Mueller matrices expressed in the
//! sensor's transverse frame of the ray: an instantaneous specular lobe
//! (GGX microfacets, height-correlated Smith masking, Fresnel reflection,
//! partial depolarizer) and a diffuse lobe (transmit in, depolarize,
//! transmit out) whose energy is spread in time by an exponential kernel.
//!
//! With emitter and receiver co-located the half vector is `-ω`, so the
//! microfacet, incidence and exitance angles all coincide.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::polmath::{fresnel_reflection_cos, fresnel_transmission_cos, Mueller};
use crate::real::Real;
use crate::{Error, Result};

pub type Vec3 = Vector3<f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    /// Refractive index (> 1).
    pub eta: f64,
    /// GGX roughness in (0, 1].
    pub roughness: f64,
    /// Specular depolarizer amplitude `|D^s|` in [0, 1].
    pub spec_depol: f64,
    /// Residual polarization of the diffuse depolarizer `|D^d|` in [0, 1].
    pub diff_depol: f64,
    /// Diffuse temporal constant, ns.
    pub diff_tau: f64,
    pub diffuse_albedo: f64,
    pub specular_albedo: f64,
    pub material_id: u32,
}

impl Material {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("material {}: {what}", self.material_id)));
        if !(self.eta > 1.0 && self.eta.is_finite()) {
            return bad("eta must be > 1");
        }
        if !(self.roughness > 0.0 && self.roughness <= 1.0) {
            return bad("roughness must be in (0, 1]");
        }
        for (v, n) in [
            (self.spec_depol, "spec_depol"),
            (self.diff_depol, "diff_depol"),
            (self.diffuse_albedo, "diffuse_albedo"),
            (self.specular_albedo, "specular_albedo"),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("{n} must be in [0, 1]"));
            }
        }
        if !(self.diff_tau > 0.0 && self.diff_tau.is_finite()) {
            return bad("diff_tau must be > 0");
        }
        Ok(())
    }

    pub fn params(&self) -> MaterialParams<f64> {
        MaterialParams {
            eta: self.eta,
            roughness: self.roughness,
            spec_depol: self.spec_depol,
            diff_depol: self.diff_depol,
            specular_albedo: self.specular_albedo,
            diffuse_albedo: self.diffuse_albedo,
        }
    }
}

/// The reflectance-relevant material fields, generic so the fitters can
/// differentiate through them.
#[derive(Clone, Copy, Debug)]
pub struct MaterialParams<T> {
    pub eta: T,
    pub roughness: T,
    pub spec_depol: T,
    pub diff_depol: T,
    pub specular_albedo: T,
    pub diffuse_albedo: T,
}

/// Materials keyed by id. Serialized as a JSON object `{"<id>": {...}}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MaterialDb {
    pub materials: BTreeMap<u32, Material>,
}

impl MaterialDb {
    /// Built-in outdoor materials. Refractive indices are near-infrared
    /// values for the dominant constituent (bitumen, automotive clear coat,
    /// soda-lime glass, leaf cuticle/water, cement paste).
    pub fn defaults() -> Self {
        let m = |id, name: &str, eta, roughness, sd, dd, tau, kd, ks| Material {
            name: name.to_string(),
            eta,
            roughness,
            spec_depol: sd,
            diff_depol: dd,
            diff_tau: tau,
            diffuse_albedo: kd,
            specular_albedo: ks,
            material_id: id,
        };
        let list = [
            m(1, "asphalt", 1.64, 0.7, 0.6, 0.2, 0.15, 0.15, 0.5),
            m(2, "painted_metal", 1.50, 0.15, 0.9, 0.5, 0.05, 0.6, 0.8),
            m(3, "glass", 1.51, 0.05, 0.95, 0.7, 0.02, 0.05, 1.0),
            m(4, "foliage", 1.42, 0.6, 0.4, 0.1, 0.25, 0.45, 0.3),
            m(5, "concrete", 1.55, 0.5, 0.7, 0.3, 0.1, 0.35, 0.5),
        ];
        Self { materials: list.into_iter().map(|m| (m.material_id, m)).collect() }
    }

    pub fn get(&self, id: u32) -> Option<&Material> {
        self.materials.get(&id)
    }

    pub fn insert(&mut self, m: Material) {
        self.materials.insert(m.material_id, m);
    }

    pub fn validate(&self) -> Result<()> {
        for (id, m) in &self.materials {
            if *id != m.material_id {
                return Err(Error::Config(format!(
                    "material key {id} does not match material_id {}",
                    m.material_id
                )));
            }
            m.validate()?;
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let db: Self = serde_json::from_str(s)?;
        db.validate()?;
        Ok(db)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Horizontal/vertical polarization reference axes for a ray travelling
/// along `omega` in the camera frame (x right, y down, z forward).
pub fn transverse_frame(omega: &Vec3) -> (Vec3, Vec3) {
    let down = Vec3::new(0.0, 1.0, 0.0);
    let mut eh = down.cross(omega);
    if eh.norm() < 1e-12 {
        eh = Vec3::x();
    }
    let eh = eh.normalize();
    let ev = omega.cross(&eh);
    (eh, ev)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceInteraction {
    pub n: Vec3,
    pub omega: Vec3,
    /// One-way range, m.
    pub d: f64,
    pub cos_phi: f64,
}

impl SurfaceInteraction {
    pub fn new(n: Vec3, omega: Vec3, d: f64) -> Result<Self> {
        if !(d > 0.0) {
            return Err(Error::Domain(format!("range must be > 0, got {d}")));
        }
        let (n, omega) = (n.normalize(), omega.normalize());
        Ok(Self { n, omega, d, cos_phi: n.dot(&-omega).max(0.0) })
    }

    /// Incidence geometry: cosine of the incidence angle and
    /// `(cos 2φ, sin 2φ)` of the azimuth of the normal's transverse
    /// component in the ray's reference frame.
    pub fn geometry(&self) -> IncidenceGeometry {
        incidence_geometry(&self.n, &self.omega)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IncidenceGeometry {
    pub cos_i: f64,
    pub cos2az: f64,
    pub sin2az: f64,
}

pub fn incidence_geometry(n: &Vec3, omega: &Vec3) -> IncidenceGeometry {
    let cos_i = n.dot(&-omega);
    let (eh, ev) = transverse_frame(omega);
    let u = n + omega * cos_i;
    let (ux, uy) = (u.dot(&eh), u.dot(&ev));
    let r2 = ux * ux + uy * uy;
    let (c2, s2) = if r2 > 1e-24 { ((ux * ux - uy * uy) / r2, 2.0 * ux * uy / r2) } else { (1.0, 0.0) };
    IncidenceGeometry { cos_i, cos2az: c2, sin2az: s2 }
}

/// Normal with zenith `zenith` (angle to `-omega`) and azimuth `azimuth`
/// measured in the ray's transverse frame.
pub fn normal_from_angles(omega: &Vec3, zenith: f64, azimuth: f64) -> Vec3 {
    let (eh, ev) = transverse_frame(omega);
    let u = eh * azimuth.cos() + ev * azimuth.sin();
    (-omega * zenith.cos() + u * zenith.sin()).normalize()
}

/// Zenith and azimuth of `n` relative to the ray `omega` (inverse of
/// [`normal_from_angles`]).
pub fn angles_from_normal(omega: &Vec3, n: &Vec3) -> (f64, f64) {
    let (eh, ev) = transverse_frame(omega);
    let cz = n.dot(&-omega).clamp(-1.0, 1.0);
    let u = n + omega * cz;
    (cz.acos(), u.dot(&ev).atan2(u.dot(&eh)))
}

/// GGX normal distribution at microfacet angle with cosine `c`.
pub fn ggx_d<T: Real>(c: T, m: T) -> T {
    let c2 = c.sq();
    let s2 = T::one() - c2;
    let m2 = m.sq();
    m2 / ((m2 * c2 + s2).sq() * std::f64::consts::PI)
}

/// Height-correlated Smith masking-shadowing for coincident incident and
/// outgoing directions: `1 / (1 + 2Λ)`.
pub fn smith_g_monostatic<T: Real>(c: T, m: T) -> T {
    let c2 = c.sq();
    c / (c2 + m.sq() * (T::one() - c2)).sqrt()
}

/// Specular lobe in the local s/p frame (before shading and attenuation).
pub fn specular_local<T: Real>(cos_i: T, p: &MaterialParams<T>) -> Mueller<T> {
    let f = ggx_d(cos_i, p.roughness) * smith_g_monostatic(cos_i, p.roughness) / (cos_i.sq() * 4.0);
    let a = p.spec_depol;
    let dep = Mueller::diag(T::one(), a, a, a);
    (dep * fresnel_reflection_cos(cos_i, p.eta)).scale(f * p.specular_albedo)
}

/// Diffuse lobe amplitude in the local s/p frame.
pub fn diffuse_local<T: Real>(cos_i: T, p: &MaterialParams<T>) -> Mueller<T> {
    let ft = fresnel_transmission_cos(cos_i, p.eta);
    let a = p.diff_depol;
    let dep = Mueller::diag(T::one(), a, a, a).scale(p.diffuse_albedo);
    ft * dep * ft
}

/// Specular and diffuse Mueller matrices in the ray frame, before shading.
/// `(cos2az, sin2az)` is the doubled azimuth of the plane of incidence.
/// Back-facing geometry yields zero matrices.
pub fn monostatic_lobes<T: Real>(cos_i: T, cos2az: T, sin2az: T, p: &MaterialParams<T>) -> (Mueller<T>, Mueller<T>) {
    if cos_i.re() <= 0.0 {
        return (Mueller::zero(), Mueller::zero());
    }
    // s axis is perpendicular to the azimuth: 2ψ = 2φ - π
    let (c2, s2) = (-cos2az, -sin2az);
    let spec = specular_local(cos_i, p).conjugate_cs(c2, s2);
    let diff = diffuse_local(cos_i, p).conjugate_cs(c2, s2);
    (spec, diff)
}

pub fn specular_mueller(si: &SurfaceInteraction, mat: &Material) -> Mueller {
    let g = si.geometry();
    monostatic_lobes(g.cos_i, g.cos2az, g.sin2az, &mat.params()).0
}

pub fn diffuse_mueller(si: &SurfaceInteraction, mat: &Material) -> Mueller {
    let g = si.geometry();
    monostatic_lobes(g.cos_i, g.cos2az, g.sin2az, &mat.params()).1
}

/// Shaded, range-attenuated response `H = (cos φ / d²) M`, split into the
/// instantaneous specular part and the amplitude of the diffuse lobe.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TemporalMueller {
    pub specular_part: Mueller,
    pub diffuse_part: Mueller,
    /// Diffuse temporal constant, ns.
    pub diffuse_kernel_tau: f64,
}

impl TemporalMueller {
    /// Time-integrated response.
    pub fn integrated(&self) -> Mueller {
        self.specular_part + self.diffuse_part
    }
}

pub fn reflectance(si: &SurfaceInteraction, mat: &Material) -> Result<TemporalMueller> {
    if !(si.d > 0.0) {
        return Err(Error::Domain(format!("range must be > 0, got {}", si.d)));
    }
    let g = si.geometry();
    let (spec, diff) = monostatic_lobes(g.cos_i, g.cos2az, g.sin2az, &mat.params());
    let k = si.cos_phi / (si.d * si.d);
    Ok(TemporalMueller { specular_part: spec.scale(k), diffuse_part: diff.scale(k), diffuse_kernel_tau: mat.diff_tau })
}

/// Closed-form degree of polarization of diffusely emitted light at
/// emission angle `theta` from a dielectric of index `eta`.
pub fn diffuse_dop_curve(theta: f64, eta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    let s2 = s * s;
    let n = eta;
    let num = (n - 1.0 / n).powi(2) * s2;
    let den = 2.0 + 2.0 * n * n - (n + 1.0 / n).powi(2) * s2 + 4.0 * c * (n * n - s2).sqrt();
    num / den
}

/// Maximum zenith handled by [`invert_diffuse_dop`].
pub const MAX_ZENITH: f64 = 89.0 * std::f64::consts::PI / 180.0;

/// Inverse of [`diffuse_dop_curve`] on `[0, 89°]` by bisection.
/// Returns `(theta, clamped)`; `clamped` is set when `dop` exceeds the curve.
pub fn invert_diffuse_dop(dop: f64, eta: f64) -> (f64, bool) {
    if dop <= 0.0 {
        return (0.0, false);
    }
    if dop >= diffuse_dop_curve(MAX_ZENITH, eta) {
        return (MAX_ZENITH, true);
    }
    let (mut lo, mut hi) = (0.0, MAX_ZENITH);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if diffuse_dop_curve(mid, eta) < dop {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    (0.5 * (lo + hi), false)
}

/// Unit-area diffuse temporal kernel `(1/τ) exp(-t/τ)` for `t ≥ 0`.
pub fn diffuse_kernel(t: f64, tau: f64) -> f64 {
    if t < 0.0 {
        0.0
    } else {
        (-t / tau).exp() / tau
    }
}

/// Exact integral of the diffuse kernel over consecutive steps
/// `[k·dt, (k+1)·dt)`, `k = 0..n`.
pub fn diffuse_kernel_bins(tau: f64, dt: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let a = (-(k as f64) * dt / tau).exp();
            let b = (-((k + 1) as f64) * dt / tau).exp();
            a - b
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polmath::{dop, Stokes};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn mat(eta: f64, m: f64) -> Material {
        Material {
            name: String::new(),
            eta,
            roughness: m,
            spec_depol: 0.8,
            diff_depol: 0.0,
            diff_tau: 1.0,
            diffuse_albedo: 0.5,
            specular_albedo: 0.7,
            material_id: 1,
        }
    }

    fn oblique(theta: f64, az: f64) -> SurfaceInteraction {
        let omega = Vec3::new(0.1, -0.05, 1.0).normalize();
        SurfaceInteraction::new(normal_from_angles(&omega, theta, az), omega, 10.0).unwrap()
    }

    #[test]
    fn back_facing_is_zero() {
        let omega = Vec3::z();
        let si = SurfaceInteraction::new(Vec3::z(), omega, 5.0).unwrap();
        let m = mat(1.5, 0.3);
        assert_eq!(specular_mueller(&si, &m), Mueller::zero());
        assert_eq!(diffuse_mueller(&si, &m), Mueller::zero());
        let r = reflectance(&si, &m).unwrap();
        assert_eq!(r.integrated(), Mueller::zero());
    }

    #[test]
    fn specular_head_on_gain() {
        let si = SurfaceInteraction::new(-Vec3::z(), Vec3::z(), 1.0).unwrap();
        let m = mat(1.5, 0.2);
        let s = specular_mueller(&si, &m);
        // D(0; m) = 1/(π m²), G = 1 at normal incidence
        let oracle = 1.0 / (std::f64::consts::PI * 0.04) / 4.0 * 0.04 * 0.7;
        assert_abs_diff_eq!(s.0[0][0], oracle, epsilon = 1e-12);
        let out = s.apply(&Stokes::HORIZONTAL);
        assert_abs_diff_eq!(dop(&out).unwrap(), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn diffuse_head_on_unpolarized() {
        let si = SurfaceInteraction::new(-Vec3::z(), Vec3::z(), 1.0).unwrap();
        let mut m = mat(1.5, 0.3);
        m.diff_depol = 0.6;
        let d = diffuse_mueller(&si, &m);
        assert!(dop(&d.apply(&Stokes::UNPOLARIZED)).unwrap() < 1e-12);
        m.diff_depol = 0.0;
        let d = diffuse_mueller(&oblique(0.9, 0.3), &m);
        // ideal depolarizer: output polarization is the exit-interface imprint only
        let out = d.apply(&Stokes::HORIZONTAL);
        let out2 = d.apply(&Stokes([1.0, -1.0, 0.0, 0.0]));
        for k in 0..4 {
            assert!((out.0[k] / out.0[0] - out2.0[k] / out2.0[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn diffuse_dop_law_grid() {
        for eta in [1.3, 1.5, 1.8] {
            let m = mat(eta, 0.3);
            for deg in 0..=80 {
                let th = (deg as f64).to_radians();
                let d = diffuse_mueller(&oblique(th, 0.7), &m);
                let p = dop(&d.apply(&Stokes::UNPOLARIZED)).unwrap();
                assert_abs_diff_eq!(p, diffuse_dop_curve(th, eta), epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn diffuse_dop_monotone() {
        for eta in [1.3, 1.5, 1.8] {
            let mut prev = -1.0;
            for k in 0..=800 {
                let v = diffuse_dop_curve((k as f64 * 0.1).to_radians(), eta);
                assert!(v > prev || k == 0);
                prev = v;
            }
        }
    }

    #[test]
    fn example_50_degrees() {
        let th = 50f64.to_radians();
        let d = diffuse_mueller(&oblique(th, 0.0), &mat(1.5, 0.3));
        let p = dop(&d.apply(&Stokes::UNPOLARIZED)).unwrap();
        assert_abs_diff_eq!(p, diffuse_dop_curve(th, 1.5), epsilon = 1e-9);
        assert!(p > 0.03 && p < 0.06);
    }

    #[test]
    fn attenuation_and_grazing() {
        let m = mat(1.5, 0.3);
        let s1 = oblique(0.4, 1.0);
        let mut s2 = s1;
        s2.d *= 2.0;
        let (a, b) = (reflectance(&s1, &m).unwrap(), reflectance(&s2, &m).unwrap());
        assert!(a.integrated().scale(0.25).max_abs_diff(&b.integrated()) < 1e-15);
        let mut g = s1;
        g.cos_phi = 0.0;
        assert_eq!(reflectance(&g, &m).unwrap().integrated(), Mueller::zero());
        let mut bad = s1;
        bad.d = 0.0;
        assert!(reflectance(&bad, &m).is_err());
    }

    #[test]
    fn head_on_plane_entries() {
        // composed from independent scalar formulas
        let m = mat(1.5, 0.3);
        let si = SurfaceInteraction::new(-Vec3::z(), Vec3::z(), 10.0).unwrap();
        let h = reflectance(&si, &m).unwrap();
        let r = 0.04;
        let spec = 1.0 / (std::f64::consts::PI * 0.09) / 4.0 * r * 0.7 / 100.0;
        let diff = 0.5 * (1.0 - r) * (1.0 - r) / 100.0;
        assert_abs_diff_eq!(h.specular_part.0[0][0], spec, epsilon = 1e-15);
        assert_abs_diff_eq!(h.specular_part.0[1][1], spec * 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(h.diffuse_part.0[0][0], diff, epsilon = 1e-15);
        assert_abs_diff_eq!(h.diffuse_part.0[1][1], 0.0, epsilon = 1e-15);
        assert_eq!(h.diffuse_kernel_tau, 1.0);
    }

    #[test]
    fn kernel_normalization() {
        for tau in [0.1, 0.8, 3.0] {
            let n = (20.0 * tau / 1.0f64).ceil() as usize;
            let s: f64 = diffuse_kernel_bins(tau, 1.0, n).iter().sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-6);
        }
        assert_eq!(diffuse_kernel(-1.0, 1.0), 0.0);
    }

    #[test]
    fn inversion_round_trip() {
        for eta in [1.3, 1.5, 1.8] {
            for deg in 1..=80 {
                let th = (deg as f64).to_radians();
                let (back, clamped) = invert_diffuse_dop(diffuse_dop_curve(th, eta), eta);
                assert!(!clamped);
                assert!((back - th).abs().to_degrees() < 0.01);
            }
        }
        assert_eq!(invert_diffuse_dop(0.0, 1.5), (0.0, false));
        assert!(invert_diffuse_dop(0.99, 1.5).1);
    }

    #[test]
    fn material_db_roundtrip() {
        let db = MaterialDb::defaults();
        assert_eq!(db.materials.len(), 5);
        let back = MaterialDb::from_json(&db.to_json().unwrap()).unwrap();
        assert_eq!(db, back);
        let mut bad = db.clone();
        bad.materials.get_mut(&1).unwrap().eta = 0.9;
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn azimuth_equivariance(th in 0.0..1.4f64, az in -3.0..3.0f64, alpha in -3.0..3.0f64, eta in 1.2..2.2f64) {
            let m = mat(eta, 0.4);
            let a = oblique(th, az);
            let b = oblique(th, az + alpha);
            let ha = reflectance(&a, &m).unwrap();
            let hb = reflectance(&b, &m).unwrap();
            // rotating the normal by α about the ray conjugates the response
            let expect = Mueller::rotator(-alpha) * ha.integrated() * Mueller::rotator(alpha);
            prop_assert!(expect.max_abs_diff(&hb.integrated()) < 1e-9 * ha.integrated().frobenius());
        }

        #[test]
        fn lobes_are_physical(th in 0.0..1.5f64, az in -3.0..3.0f64, eta in 1.1..2.5f64, m in 0.01..1.0f64, s0 in 0.0..1.0f64, s1 in -1.0..1.0f64) {
            let mm = mat(eta, m);
            let si = oblique(th, az);
            let d = diffuse_mueller(&si, &mm);
            let n = (1.0f64 - s1 * s1).sqrt();
            let s = Stokes([1.0, s1, n * s0, n * (1.0 - s0 * s0).sqrt()]);
            let out = d.apply(&s);
            prop_assert!(out.0[0] <= 1.0 + 1e-12);
            prop_assert!(out.is_physical(1e-9));
        }
    }
}
