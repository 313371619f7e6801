//! Per-pixel inverse rendering: normal and material parameters that make
//! the forward model reproduce the measured Mueller response.
//!
//! The measured window is first split into its specular and diffuse parts
//! (see [`temporal_split`]). When the split is resolved both parts are fit,
//! otherwise only the time-integrated response. Albedos are not fitted:
//! the specular albedo trades off exactly against the GGX amplitude, so
//! they are supplied (scene-wide or per pixel).

use serde::{Deserialize, Serialize};

use super::split::DEFAULT_MIN_SEPARATION;
use super::{
    temporal_split, MaterialEstimate, Method, ReconMaps, TemporalSplit, FLAG_LOW_CONFIDENCE, FLAG_NOT_CONVERGED,
};
use crate::exec::Exec;
use crate::lm::{cost, minimize, LmConfig, LmReport, Loss, Residuals};
use crate::pbrdf::{monostatic_lobes, normal_from_angles, MaterialParams, Vec3, MAX_ZENITH};
use crate::polmath::Mueller;
use crate::preprocess::MuellerMovie;
use crate::real::Real;
use crate::scene::SensorConfig;
use crate::simulate::sigma_from_fwhm;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitBounds {
    pub eta: [f64; 2],
    pub roughness: [f64; 2],
    pub spec_depol: [f64; 2],
    pub diff_depol: [f64; 2],
}

impl Default for FitBounds {
    fn default() -> Self {
        Self { eta: [1.1, 2.5], roughness: [0.01, 1.0], spec_depol: [0.0, 1.0], diff_depol: [0.0, 1.0] }
    }
}

impl FitBounds {
    pub fn validate(&self) -> Result<()> {
        let ok = |b: [f64; 2]| b[0] <= b[1] && b[0].is_finite() && b[1].is_finite();
        if !(ok(self.eta) && ok(self.roughness) && ok(self.spec_depol) && ok(self.diff_depol)) {
            return Err(Error::Config("fit bounds must be finite with lo ≤ hi".into()));
        }
        if self.eta[0] <= 1.0 || self.roughness[0] <= 0.0 || self.spec_depol[0] < 0.0 || self.diff_depol[1] > 1.0 {
            return Err(Error::Config("fit bounds outside the physical domain".into()));
        }
        Ok(())
    }

    pub fn mid(&self) -> MaterialEstimate {
        MaterialEstimate {
            eta: 1.5f64.clamp(self.eta[0], self.eta[1]),
            roughness: 0.3f64.clamp(self.roughness[0], self.roughness[1]),
            spec_depol: 0.5 * (self.spec_depol[0] + self.spec_depol[1]),
            diff_depol: 0.5 * (self.diff_depol[0] + self.diff_depol[1]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelFitConfig {
    pub bounds: FitBounds,
    pub max_iters: usize,
    /// Scene-wide albedos used when no per-pixel map is given.
    pub specular_albedo: f64,
    pub diffuse_albedo: f64,
    /// Per-pixel `(specular, diffuse)` albedos.
    #[serde(skip)]
    pub albedo_map: Option<Vec<(f64, f64)>>,
    pub min_separation: f64,
    /// Transition scale of the smooth L1 loss, relative to the response norm.
    pub loss_eps: f64,
    /// Seeds carried from screening into full refinement.
    pub refine_starts: usize,
}

impl Default for ModelFitConfig {
    fn default() -> Self {
        Self {
            bounds: FitBounds::default(),
            max_iters: 200,
            specular_albedo: 0.5,
            diffuse_albedo: 0.35,
            albedo_map: None,
            min_separation: DEFAULT_MIN_SEPARATION,
            loss_eps: 1e-4,
            refine_starts: 3,
        }
    }
}

impl ModelFitConfig {
    fn albedo(&self, p: usize) -> (f64, f64) {
        match &self.albedo_map {
            Some(m) => m[p],
            None => (self.specular_albedo, self.diffuse_albedo),
        }
    }
}

/// Render the shaded specular and diffuse responses for
/// `x = [zenith, azimuth, eta, roughness, spec_depol, diff_depol]`.
pub(crate) fn render<T: Real>(x: &[T; 6], d: f64, albedo: (f64, f64)) -> (Mueller<T>, Mueller<T>) {
    let cos_i = x[0].cos();
    let (s2, c2) = (x[1] * 2.0).sin_cos();
    let p = MaterialParams {
        eta: x[2],
        roughness: x[3],
        spec_depol: x[4],
        diff_depol: x[5],
        specular_albedo: T::cst(albedo.0),
        diffuse_albedo: T::cst(albedo.1),
    };
    let (s, df) = monostatic_lobes(cos_i, c2, s2, &p);
    let k = cos_i / (d * d);
    (s.scale(k), df.scale(k))
}

/// Objective of one pixel's model fit.
#[derive(Clone, Debug)]
pub struct ModelFitProblem {
    pub split: TemporalSplit,
    pub distance: f64,
    pub albedo: (f64, f64),
    /// Residual normalization (Frobenius norm of the integrated response).
    pub scale: f64,
}

impl ModelFitProblem {
    pub fn new(split: TemporalSplit, distance: f64, albedo: (f64, f64)) -> Self {
        let n = split.h_total.iter().map(|v| v * v).sum::<f64>().sqrt();
        Self { split, distance, albedo, scale: if n > 0.0 { n } else { 1.0 } }
    }

    pub fn render(&self, x: &[f64; 6]) -> (Mueller, Mueller) {
        render(x, self.distance, self.albedo)
    }
}

impl Residuals<6> for ModelFitProblem {
    fn eval<T: Real>(&self, x: &[T; 6], out: &mut Vec<T>) {
        out.clear();
        let (hs, hd) = render(x, self.distance, self.albedo);
        let k = 1.0 / self.scale;
        if self.split.resolved {
            let (hs, hd) = (hs.to_vec16(), hd.to_vec16());
            for c in 0..16 {
                out.push((-hs[c] + self.split.h_s[c]) * k);
            }
            for c in 0..16 {
                out.push((-hd[c] + self.split.h_d[c]) * k);
            }
        } else {
            let h = (hs + hd).to_vec16();
            for c in 0..16 {
                out.push((-h[c] + self.split.h_total[c]) * k);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelFit {
    pub zenith: f64,
    /// Azimuth in `[0, π)`; `azimuth + π` explains the data equally well.
    pub azimuth: f64,
    pub material: MaterialEstimate,
    /// Sum of absolute normalized residuals.
    pub residual: f64,
    pub converged: bool,
}

/// Zenith below which the head-on explanation is also tried.
const HEAD_ON_CHECK: f64 = 20.0 * std::f64::consts::PI / 180.0;

fn lm_config(cfg: &ModelFitConfig) -> LmConfig {
    LmConfig { max_iters: cfg.max_iters, loss: Loss::Charbonnier(cfg.loss_eps), ..LmConfig::default() }
}

/// Multi-start fit of one pixel: 8 azimuth × 3 zenith seeds plus two seeds
/// whose azimuth is read off the measured diattenuation. All seeds are
/// ranked by their starting cost and the best few are refined.
pub fn fit_pixel(problem: &ModelFitProblem, cfg: &ModelFitConfig) -> PixelFit {
    let b = &cfg.bounds;
    let m0 = b.mid();
    let zeniths = [10f64.to_radians(), 40f64.to_radians(), 70f64.to_radians(), 85f64.to_radians()];
    let h = &problem.split.h_total;
    let phi_a = 0.5 * h[2].atan2(h[1]);
    let mut azimuths: Vec<f64> = (0..8).map(|k| k as f64 * std::f64::consts::FRAC_PI_4).collect();
    azimuths.extend([phi_a, phi_a + std::f64::consts::FRAC_PI_2]);
    let lcfg = lm_config(cfg);
    let mut seeds: Vec<([f64; 6], f64)> = azimuths
        .iter()
        .flat_map(|az| zeniths.iter().map(move |z| [*z, *az, m0.eta, m0.roughness, m0.spec_depol, m0.diff_depol]))
        .map(|x| (x, cost(problem, &x, lcfg.loss)))
        .collect();
    seeds.sort_by(|a, b| a.1.total_cmp(&b.1));
    let tau = std::f64::consts::TAU;
    let lo = [0.0, -2.0 * tau, b.eta[0], b.roughness[0], b.spec_depol[0], b.diff_depol[0]];
    let hi = [MAX_ZENITH, 2.0 * tau, b.eta[1], b.roughness[1], b.spec_depol[1], b.diff_depol[1]];
    let mut best: Option<LmReport<6>> = None;
    for (x0, _) in seeds.iter().take(cfg.refine_starts.max(1)) {
        let r = minimize(problem, *x0, &lo, &hi, &lcfg);
        if best.is_none_or(|b| r.cost < b.cost) {
            best = Some(r);
        }
    }
    let mut r = best.expect("at least one seed");
    // near head-on the zenith trades off against the material parameters;
    // of equally good explanations report the one facing the sensor
    if r.x[0] < HEAD_ON_CHECK {
        let mut lo0 = lo;
        let mut hi0 = hi;
        lo0[0] = 0.0;
        hi0[0] = 0.0;
        let r0 = minimize(problem, r.x, &lo0, &hi0, &lcfg);
        if r0.cost <= r.cost * 1.01 + 1e-12 {
            r = r0;
        }
    }
    let mut resid = Vec::new();
    problem.eval(&r.x, &mut resid);
    PixelFit {
        zenith: r.x[0],
        azimuth: r.x[1].rem_euclid(std::f64::consts::PI),
        material: MaterialEstimate { eta: r.x[2], roughness: r.x[3], spec_depol: r.x[4], diff_depol: r.x[5] },
        residual: resid.iter().map(|v| v.abs()).sum(),
        converged: r.converged,
    }
}

/// Normals from the local gradient of the distance map, oriented toward the
/// sensor. Neighbours across a depth jump (over 3 % of the range) are not
/// used; `None` where no tangent pair is available.
pub fn depth_normals(distance: &[f64], confidence: &[u8], views: &[Vec3], rows: usize, cols: usize) -> Vec<Option<Vec3>> {
    let point = |p: usize| -> Option<Vec3> { (confidence[p] == 1 && distance[p] > 0.0).then(|| views[p] * distance[p]) };
    let near = |a: usize, b: usize| (distance[a] - distance[b]).abs() <= 0.03 * distance[a];
    let tangent = |p: usize, prev: Option<usize>, next: Option<usize>| -> Option<Vec3> {
        let pp = point(p)?;
        let f = next.filter(|q| point(*q).is_some() && near(p, *q));
        let b = prev.filter(|q| point(*q).is_some() && near(p, *q));
        match (b, f) {
            (Some(b), Some(f)) => Some(point(f)? - point(b)?),
            (None, Some(f)) => Some(point(f)? - pp),
            (Some(b), None) => Some(pp - point(b)?),
            (None, None) => None,
        }
    };
    (0..rows * cols)
        .map(|p| {
            let (r, c) = (p / cols, p % cols);
            let tx = tangent(p, (c > 0).then(|| p - 1), (c + 1 < cols).then(|| p + 1))?;
            let ty = tangent(p, (r > 0).then(|| p - cols), (r + 1 < rows).then(|| p + cols))?;
            let n = tx.cross(&ty);
            if n.norm() == 0.0 {
                return None;
            }
            let n = n.normalize();
            Some(if n.dot(&-views[p]) < 0.0 { -n } else { n })
        })
        .collect()
}

/// How badly the plane through pixel `p` with normal `n` predicts the
/// measured distances in a 5×5 neighbourhood. Each neighbour contributes its
/// relative misfit, capped at 1 so depth jumps count the same for any `n`.
pub fn plane_misfit(n: &Vec3, p: usize, distance: &[f64], confidence: &[u8], views: &[Vec3], cols: usize) -> Option<f64> {
    let rows = distance.len() / cols;
    let (r, c) = ((p / cols) as isize, (p % cols) as isize);
    let dp = distance[p];
    let np = n.dot(&views[p]);
    let mut sum = 0.0;
    let mut count = 0;
    for dr in -2..=2isize {
        for dc in -2..=2isize {
            let (rq, cq) = (r + dr, c + dc);
            if (dr, dc) == (0, 0) || rq < 0 || cq < 0 || rq >= rows as isize || cq >= cols as isize {
                continue;
            }
            let q = rq as usize * cols + cq as usize;
            if confidence[q] != 1 || !(distance[q] > 0.0) {
                continue;
            }
            let nq = n.dot(&views[q]);
            let err = if nq < 0.0 { (dp * np / nq - distance[q]).abs() / dp } else { 1.0 };
            sum += err.min(1.0);
            count += 1;
        }
    }
    (count > 0).then_some(sum)
}

/// Choose between the two normals the polarimetric data cannot tell apart:
/// the one closer to the depth-gradient normal, falling back to the one
/// facing the optical axis.
pub fn resolve_pi_ambiguity(n_a: Vec3, n_b: Vec3, omega: &Vec3, depth_normal: Option<Vec3>) -> Vec3 {
    if let Some(dn) = depth_normal {
        let (a, b) = (n_a.dot(&dn), n_b.dot(&dn));
        if (a - b).abs() > 1e-9 {
            return if a > b { n_a } else { n_b };
        }
    }
    super::sfp::facing_choice(n_a, n_b, omega)
}

/// Fit every confident pixel of `mm` at the given distances.
pub fn modelfit_normals(
    mm: &MuellerMovie,
    distance: &[f64],
    confidence: &[u8],
    sensor: &SensorConfig,
    cfg: &ModelFitConfig,
    exec: Exec,
) -> Result<ReconMaps> {
    cfg.bounds.validate()?;
    let np = mm.pixels();
    if (mm.rows, mm.cols) != (sensor.rows, sensor.cols) || distance.len() != np || confidence.len() != np {
        return Err(Error::Config("distance map, Mueller movie and sensor disagree in size".into()));
    }
    if cfg.albedo_map.as_ref().is_some_and(|m| m.len() != np) {
        return Err(Error::Config("albedo map does not match the raster".into()));
    }
    let views = sensor.view_dirs();
    let sigma = sigma_from_fwhm(sensor.pulse_fwhm_ns);
    let fits = exec.map(np, |p| {
        if confidence[p] != 1 || !(distance[p] > 0.0) {
            return None;
        }
        let split = temporal_split(mm.pixel(p), sensor.bin_width_ns, sigma, cfg.min_separation);
        let prob = ModelFitProblem::new(split, distance[p], cfg.albedo(p));
        Some(fit_pixel(&prob, cfg))
    });
    let dn = depth_normals(distance, confidence, &views, mm.rows, mm.cols);
    let mut out = ReconMaps::empty(mm.rows, mm.cols, Method::Modelfit);
    let mut mats = vec![MaterialEstimate::default(); np];
    for (p, fit) in fits.into_iter().enumerate() {
        let Some(f) = fit else {
            out.flags[p] |= FLAG_LOW_CONFIDENCE;
            continue;
        };
        let omega = views[p];
        let a = normal_from_angles(&omega, f.zenith, f.azimuth);
        let b = normal_from_angles(&omega, f.zenith, f.azimuth + std::f64::consts::PI);
        let misfit = |n: &Vec3| plane_misfit(n, p, distance, confidence, &views, mm.cols);
        out.normal[p] = match (misfit(&a), misfit(&b)) {
            (Some(ea), Some(eb)) if (ea - eb).abs() > 1e-9 => {
                if ea < eb {
                    a
                } else {
                    b
                }
            }
            _ => resolve_pi_ambiguity(a, b, &omega, dn[p]),
        };
        out.distance[p] = distance[p].min(sensor.max_range);
        out.confidence[p] = 1;
        out.fit_residual[p] = f.residual;
        if !f.converged {
            out.flags[p] |= FLAG_NOT_CONVERGED;
        }
        mats[p] = f.material;
    }
    out.material = Some(mats);
    Ok(out)
}
