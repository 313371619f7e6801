//! Material estimation with fixed normals.
//!
//! Two phases per pixel. Phase 1 fits the refractive index and the diffuse
//! depolarizer to the diffuse part of the response, on pixels whose
//! measured diffuse DoP is high enough to carry index information. Phase 2
//! starts from there and fits all four parameters with most of the weight
//! on the remaining specular part.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::io::Raster;
use crate::lm::{minimize, LmConfig, Loss, Residuals};
use crate::pbrdf::{angles_from_normal, Vec3};
use crate::polmath::{dop, Mueller, Stokes};
use crate::preprocess::MuellerMovie;
use crate::real::Real;
use crate::reconstruct::{
    modelfit_render, temporal_split, FitBounds, MaterialEstimate, TemporalSplit, DEFAULT_MIN_SEPARATION,
    FLAG_LOW_CONFIDENCE, FLAG_NOT_CONVERGED, FLAG_UNIDENTIFIABLE,
};
use crate::scene::SensorConfig;
use crate::simulate::sigma_from_fwhm;
use crate::{Error, Result};

/// Specular amplitude (relative to the whole response) below which the
/// specular lobe carries no information.
pub const SPECULAR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaterialFitConfig {
    /// Diffuse-term weight in phase 1 and phase 2.
    pub lambda_d: [f64; 2],
    /// Specular-term weight in phase 1 and phase 2.
    pub lambda_s: [f64; 2],
    /// Minimum measured diffuse DoP for the diffuse term to apply.
    pub dop_threshold: f64,
    pub phase1_iters: usize,
    pub phase2_iters: usize,
    pub bounds: FitBounds,
    pub specular_albedo: f64,
    pub diffuse_albedo: f64,
    /// Per-pixel `(specular, diffuse)` albedos.
    #[serde(skip)]
    pub albedo_map: Option<Vec<(f64, f64)>>,
    pub min_separation: f64,
    pub loss_eps: f64,
}

impl Default for MaterialFitConfig {
    fn default() -> Self {
        Self {
            lambda_d: [1.0, 0.1],
            lambda_s: [0.0, 1.0],
            dop_threshold: 0.1,
            phase1_iters: 100,
            phase2_iters: 200,
            bounds: FitBounds::default(),
            specular_albedo: 0.5,
            diffuse_albedo: 0.35,
            albedo_map: None,
            min_separation: DEFAULT_MIN_SEPARATION,
            loss_eps: 1e-4,
        }
    }
}

impl MaterialFitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_d.iter().chain(&self.lambda_s).any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(self.dop_threshold > 0.0 && self.dop_threshold < 1.0) {
            return Err(Error::Config(format!("dop_threshold must lie in (0, 1), got {}", self.dop_threshold)));
        }
        self.bounds.validate()
    }

    fn albedo(&self, p: usize) -> (f64, f64) {
        match &self.albedo_map {
            Some(m) => m[p],
            None => (self.specular_albedo, self.diffuse_albedo),
        }
    }
}

/// Degree of polarization of a response under unpolarized illumination.
pub fn response_dop(h: &[f64; 16]) -> f64 {
    dop(&Mueller::from_vec16(h).apply(&Stokes::UNPOLARIZED)).unwrap_or(0.0)
}

/// One pixel's material objective at fixed geometry.
#[derive(Clone, Debug)]
pub struct MaterialProblem {
    pub split: TemporalSplit,
    pub zenith: f64,
    pub azimuth: f64,
    pub distance: f64,
    pub albedo: (f64, f64),
    /// 1 when the diffuse term applies.
    pub c_dop: f64,
    pub lambda_d: f64,
    pub lambda_s: f64,
    pub scale: f64,
}

impl MaterialProblem {
    pub fn new(split: TemporalSplit, normal: &Vec3, omega: &Vec3, distance: f64, albedo: (f64, f64), c_dop: f64) -> Self {
        let (zenith, azimuth) = angles_from_normal(omega, normal);
        let n = split.h_total.iter().map(|v| v * v).sum::<f64>().sqrt();
        Self {
            split,
            zenith,
            azimuth,
            distance,
            albedo,
            c_dop,
            lambda_d: 1.0,
            lambda_s: 1.0,
            scale: if n > 0.0 { n } else { 1.0 },
        }
    }

    pub fn with_weights(mut self, lambda_d: f64, lambda_s: f64) -> Self {
        self.lambda_d = lambda_d;
        self.lambda_s = lambda_s;
        self
    }

    /// L1 objective `λd·|c_dop ⊙ (h_d − H_d)| + λs·|(h − H_d) − H_s|`,
    /// normalized by the response norm.
    pub fn objective(&self, x: &[f64; 4]) -> f64 {
        let mut r = Vec::new();
        self.eval(x, &mut r);
        r.iter().map(|v| v.abs()).sum()
    }
}

impl Residuals<4> for MaterialProblem {
    fn eval<T: Real>(&self, x: &[T; 4], out: &mut Vec<T>) {
        out.clear();
        let full = [T::cst(self.zenith), T::cst(self.azimuth), x[0], x[1], x[2], x[3]];
        let (hs, hd) = modelfit_render(&full, self.distance, self.albedo);
        let (hs, hd) = (hs.to_vec16(), hd.to_vec16());
        let k = 1.0 / self.scale;
        let wd = self.lambda_d * self.c_dop * k;
        if wd > 0.0 {
            for c in 0..16 {
                out.push((-hd[c] + self.split.h_d[c]) * wd);
            }
        }
        let ws = self.lambda_s * k;
        if ws > 0.0 {
            for c in 0..16 {
                out.push((-hd[c] - hs[c] + self.split.h_total[c]) * ws);
            }
        }
    }
}

/// Per-pixel fit result.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaterialFit {
    pub material: MaterialEstimate,
    /// Phase-2 objective at the estimate.
    pub residual: f64,
    pub c_dop: bool,
    pub flags: u8,
}

/// Fit one pixel. `normal` is the fixed surface normal, `omega` the ray.
pub fn fit_material(split: TemporalSplit, normal: &Vec3, omega: &Vec3, distance: f64, albedo: (f64, f64), cfg: &MaterialFitConfig) -> MaterialFit {
    let b = &cfg.bounds;
    let m0 = b.mid();
    let total = split.h_total.iter().map(|v| v * v).sum::<f64>().sqrt();
    let spec = split.h_s.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dop_d = response_dop(&split.h_d);
    let c_dop = split.resolved && dop_d >= cfg.dop_threshold;
    if dop_d < cfg.dop_threshold && !(spec >= SPECULAR_FLOOR * total && total > 0.0) {
        return MaterialFit { material: m0, residual: 0.0, c_dop, flags: FLAG_UNIDENTIFIABLE };
    }
    let base = MaterialProblem::new(split, normal, omega, distance, albedo, f64::from(u8::from(c_dop)));
    let loss = Loss::Charbonnier(cfg.loss_eps);
    let lo = [b.eta[0], b.roughness[0], b.spec_depol[0], b.diff_depol[0]];
    let hi = [b.eta[1], b.roughness[1], b.spec_depol[1], b.diff_depol[1]];
    let mut x = [m0.eta, m0.roughness, m0.spec_depol, m0.diff_depol];
    let mut flags = 0;
    if c_dop {
        let p1 = base.clone().with_weights(cfg.lambda_d[0], cfg.lambda_s[0]);
        // only index and diffuse depolarizer move in phase 1
        let (mut lo1, mut hi1) = (lo, hi);
        for k in [1, 2] {
            lo1[k] = x[k];
            hi1[k] = x[k];
        }
        let r = minimize(&p1, x, &lo1, &hi1, &LmConfig { max_iters: cfg.phase1_iters, loss, ..LmConfig::default() });
        x = r.x;
    }
    let p2 = base.with_weights(cfg.lambda_d[1], cfg.lambda_s[1]);
    let r = minimize(&p2, x, &lo, &hi, &LmConfig { max_iters: cfg.phase2_iters, loss, ..LmConfig::default() });
    if !r.converged {
        flags |= FLAG_NOT_CONVERGED;
    }
    MaterialFit {
        material: MaterialEstimate { eta: r.x[0], roughness: r.x[1], spec_depol: r.x[2], diff_depol: r.x[3] },
        residual: p2.objective(&r.x),
        c_dop,
        flags,
    }
}

/// Per-pixel material maps.
#[derive(Clone, Debug, PartialEq)]
pub struct MaterialMaps {
    pub rows: usize,
    pub cols: usize,
    pub material: Vec<MaterialEstimate>,
    pub residual: Vec<f64>,
    pub c_dop: Vec<u8>,
    pub flags: Vec<u8>,
}

pub fn estimate_materials(
    mm: &MuellerMovie,
    normals: &[Vec3],
    distance: &[f64],
    confidence: &[u8],
    sensor: &SensorConfig,
    cfg: &MaterialFitConfig,
    exec: Exec,
) -> Result<MaterialMaps> {
    cfg.validate()?;
    let np = mm.pixels();
    if (mm.rows, mm.cols) != (sensor.rows, sensor.cols) || normals.len() != np || distance.len() != np || confidence.len() != np {
        return Err(Error::Config("normals, distances, Mueller movie and sensor disagree in size".into()));
    }
    if cfg.albedo_map.as_ref().is_some_and(|m| m.len() != np) {
        return Err(Error::Config("albedo map does not match the raster".into()));
    }
    for (p, n) in normals.iter().enumerate() {
        if confidence[p] == 1 && (n.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::Domain(format!("normal at pixel {p} is not unit length")));
        }
    }
    let views = sensor.view_dirs();
    let sigma = sigma_from_fwhm(sensor.pulse_fwhm_ns);
    let fits = exec.map(np, |p| {
        if confidence[p] != 1 || !(distance[p] > 0.0) {
            return None;
        }
        let split = temporal_split(mm.pixel(p), sensor.bin_width_ns, sigma, cfg.min_separation);
        Some(fit_material(split, &normals[p], &views[p], distance[p], cfg.albedo(p), cfg))
    });
    let mut out = MaterialMaps {
        rows: mm.rows,
        cols: mm.cols,
        material: vec![MaterialEstimate::default(); np],
        residual: vec![0.0; np],
        c_dop: vec![0; np],
        flags: vec![0; np],
    };
    for (p, f) in fits.into_iter().enumerate() {
        match f {
            None => out.flags[p] = FLAG_LOW_CONFIDENCE,
            Some(f) => {
                out.material[p] = f.material;
                out.residual[p] = f.residual;
                out.c_dop[p] = u8::from(f.c_dop);
                out.flags[p] = f.flags;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentStats {
    pub pixels: usize,
    pub mean: MaterialEstimate,
    pub std: MaterialEstimate,
}

fn fields(m: &MaterialEstimate) -> [f64; 4] {
    [m.eta, m.roughness, m.spec_depol, m.diff_depol]
}

fn from_fields(v: [f64; 4]) -> MaterialEstimate {
    MaterialEstimate { eta: v[0], roughness: v[1], spec_depol: v[2], diff_depol: v[3] }
}

impl MaterialMaps {
    /// Mean and standard deviation per segment label over pixels that were
    /// fitted without flags.
    pub fn segment_summary(&self, segments: &[u32]) -> Result<BTreeMap<u32, SegmentStats>> {
        if segments.len() != self.material.len() {
            return Err(Error::Config("segment map does not match the raster".into()));
        }
        let mut groups: BTreeMap<u32, Vec<[f64; 4]>> = BTreeMap::new();
        for (p, s) in segments.iter().enumerate() {
            if self.flags[p] == 0 {
                groups.entry(*s).or_default().push(fields(&self.material[p]));
            }
        }
        Ok(groups
            .into_iter()
            .map(|(s, v)| {
                let n = v.len() as f64;
                let mean: [f64; 4] = std::array::from_fn(|k| v.iter().map(|x| x[k]).sum::<f64>() / n);
                let std: [f64; 4] =
                    std::array::from_fn(|k| (v.iter().map(|x| (x[k] - mean[k]).powi(2)).sum::<f64>() / n).sqrt());
                (s, SegmentStats { pixels: v.len(), mean: from_fields(mean), std: from_fields(std) })
            })
            .collect())
    }

    /// Replace every fitted pixel's estimate by its segment mean.
    pub fn average_segments(&mut self, segments: &[u32]) -> Result<()> {
        let summary = self.segment_summary(segments)?;
        for (p, s) in segments.iter().enumerate() {
            if let (0, Some(st)) = (self.flags[p], summary.get(s)) {
                self.material[p] = st.mean;
            }
        }
        Ok(())
    }

    /// Per-field rasters (`material_eta.pfm`, ...), `residual.pfm`,
    /// `flags.pfm` and `materials.json` with per-segment statistics when a
    /// segment map is given.
    pub fn write(&self, dir: &Path, segments: Option<&[u32]>) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let (w, h) = (self.cols, self.rows);
        for (k, name) in ["eta", "roughness", "spec_depol", "diff_depol"].iter().enumerate() {
            let v: Vec<f64> = self.material.iter().map(|m| fields(m)[k]).collect();
            Raster::from_f64(w, h, 1, &v)?.write_pfm(&dir.join(format!("material_{name}.pfm")))?;
        }
        Raster::from_f64(w, h, 1, &self.residual)?.write_pfm(&dir.join("residual.pfm"))?;
        let flags: Vec<f64> = self.flags.iter().map(|f| f64::from(*f)).collect();
        Raster::from_f64(w, h, 1, &flags)?.write_pfm(&dir.join("flags.pfm"))?;
        let segs = match segments {
            Some(s) => Some(self.segment_summary(s)?),
            None => None,
        };
        let fitted = self.flags.iter().filter(|f| **f == 0).count();
        let summary = serde_json::json!({
            "rows": self.rows,
            "cols": self.cols,
            "fitted_pixels": fitted,
            "dop_masked_pixels": self.c_dop.iter().filter(|c| **c == 1).count(),
            "unidentifiable_pixels": self.flags.iter().filter(|f| **f & FLAG_UNIDENTIFIABLE != 0).count(),
            "segments": segs,
        });
        std::fs::write(dir.join("materials.json"), serde_json::to_string_pretty(&summary)?)?;
        Ok(())
    }
}
