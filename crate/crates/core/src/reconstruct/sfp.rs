use super::{Method, ReconMaps, FLAG_CLAMPED, FLAG_LOW_CONFIDENCE};
use crate::pbrdf::{invert_diffuse_dop, normal_from_angles, Vec3};
use crate::polmath::{dop, Stokes};
use crate::preprocess::MuellerMovie;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SfpConfig {
    /// Scene-wide refractive index assumed for the diffuse DoP law.
    pub eta: f64,
    /// Below this DoP the zenith is unobservable.
    pub dop_floor: f64,
}

impl Default for SfpConfig {
    fn default() -> Self {
        Self { eta: 1.5, dop_floor: 0.01 }
    }
}

/// Pick between the two azimuth candidates `n_a`, `n_b`: the one facing
/// the sensor more, ties going to the one facing the optical axis.
pub(super) fn facing_choice(n_a: Vec3, n_b: Vec3, omega: &Vec3) -> Vec3 {
    let (fa, fb) = (n_a.dot(&-omega), n_b.dot(&-omega));
    if (fa - fb).abs() > 1e-12 {
        return if fa > fb { n_a } else { n_b };
    }
    if n_a.z <= n_b.z {
        n_a
    } else {
        n_b
    }
}

/// Diffuse shape-from-polarization on the peak-bin Mueller matrices.
/// `views` are per-pixel ray directions.
pub fn sfp_dop_normals(mm: &MuellerMovie, laser: &Stokes, views: &[Vec3], cfg: &SfpConfig) -> Result<ReconMaps> {
    if !(cfg.eta > 1.0) {
        return Err(Error::Config(format!("assumed refractive index must be > 1, got {}", cfg.eta)));
    }
    if views.len() != mm.pixels() {
        return Err(Error::Config("view directions do not match the Mueller movie".into()));
    }
    let mut out = ReconMaps::empty(mm.rows, mm.cols, Method::Sfp);
    for p in 0..mm.pixels() {
        let omega = views[p];
        let s = mm.peak(p).apply(laser);
        let rho = dop(&s).unwrap_or(0.0);
        if s.0[0] <= 0.0 || rho < cfg.dop_floor {
            out.normal[p] = -omega;
            out.flags[p] |= FLAG_LOW_CONFIDENCE;
            continue;
        }
        let (theta, clamped) = invert_diffuse_dop(rho, cfg.eta);
        if clamped {
            out.flags[p] |= FLAG_CLAMPED;
        }
        // diffusely emitted light is polarized in the plane of emission
        let phi = 0.5 * s.0[2].atan2(s.0[1]);
        let a = normal_from_angles(&omega, theta, phi);
        let b = normal_from_angles(&omega, theta, phi + std::f64::consts::PI);
        out.normal[p] = facing_choice(a, b, &omega);
        out.confidence[p] = 1;
        out.fit_residual[p] = rho;
    }
    Ok(out)
}
