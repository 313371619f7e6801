//! Geometry recovery: time-of-flight distance, shape from polarization,
//! point-cloud PCA normals and the per-pixel forward-model fit.

mod export;
mod kdtree;
mod modelfit;
mod pca;
mod sfp;
mod split;
mod tof;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::io::Raster;
use crate::pbrdf::Vec3;
use crate::scene::SceneMaps;
use crate::{Error, Result};

pub use export::{export_features, feature_channels, FeatureTensor};
pub use kdtree::KdTree;
pub use modelfit::{
    depth_normals, modelfit_normals, plane_misfit, resolve_pi_ambiguity, FitBounds, ModelFitConfig, ModelFitProblem, PixelFit,
};
pub use pca::{pca_normals, unproject, PcaConfig, PointCloud};
pub use sfp::{sfp_dop_normals, SfpConfig};
pub use split::{temporal_split, TemporalSplit, DEFAULT_MIN_SEPARATION};
pub(crate) use modelfit::render as modelfit_render;
pub use tof::{tof_distance, Refine};

/// Estimate missing or not trustworthy (e.g. DoP below floor, too few neighbours).
pub const FLAG_LOW_CONFIDENCE: u8 = 1;
/// A bounded quantity hit its bound (e.g. zenith clamped to 89°).
pub const FLAG_CLAMPED: u8 = 2;
/// Degenerate neighbourhood (collinear points).
pub const FLAG_DEGENERATE: u8 = 4;
/// Solver stopped at the iteration limit.
pub const FLAG_NOT_CONVERGED: u8 = 8;
/// Material not identifiable from the measurement.
pub const FLAG_UNIDENTIFIABLE: u8 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Argmax,
    Parabolic,
    Sfp,
    Pca,
    Modelfit,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "argmax" => Self::Argmax,
            "parabolic" => Self::Parabolic,
            "sfp" => Self::Sfp,
            "pca" => Self::Pca,
            "modelfit" => Self::Modelfit,
            _ => return Err(Error::Config(format!("unknown method '{s}'"))),
        })
    }
}

/// Per-pixel material estimate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MaterialEstimate {
    pub eta: f64,
    pub roughness: f64,
    pub spec_depol: f64,
    pub diff_depol: f64,
}

/// Reconstruction output, row-major `H × W`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconMaps {
    pub rows: usize,
    pub cols: usize,
    pub method: Method,
    /// m, 0 where undefined.
    pub distance: Vec<f64>,
    /// Unit vectors facing the sensor; zero where undefined.
    pub normal: Vec<Vec3>,
    /// 1 where the estimate is defined and trusted.
    pub confidence: Vec<u8>,
    /// `FLAG_*` bits.
    pub flags: Vec<u8>,
    pub material: Option<Vec<MaterialEstimate>>,
    pub fit_residual: Vec<f64>,
}

impl ReconMaps {
    pub fn empty(rows: usize, cols: usize, method: Method) -> Self {
        let n = rows * cols;
        Self {
            rows,
            cols,
            method,
            distance: vec![0.0; n],
            normal: vec![Vec3::zeros(); n],
            confidence: vec![0; n],
            flags: vec![0; n],
            material: None,
            fit_residual: vec![0.0; n],
        }
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    /// Write rasters (`distance.pfm`, `normal.pfm`, `confidence.pfm`,
    /// `flags.pfm`, `residual.pfm`, material fields) and `recon.json`.
    pub fn write(&self, dir: &Path, parameters: serde_json::Value) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let (w, h) = (self.cols, self.rows);
        Raster::from_f64(w, h, 1, &self.distance)?.write_pfm(&dir.join("distance.pfm"))?;
        let nv: Vec<f64> = self.normal.iter().flat_map(|n| [n.x, n.y, n.z]).collect();
        Raster::from_f64(w, h, 3, &nv)?.write_pfm(&dir.join("normal.pfm"))?;
        let conf: Vec<f64> = self.confidence.iter().map(|c| f64::from(*c)).collect();
        Raster::from_f64(w, h, 1, &conf)?.write_pfm(&dir.join("confidence.pfm"))?;
        let flags: Vec<f64> = self.flags.iter().map(|c| f64::from(*c)).collect();
        Raster::from_f64(w, h, 1, &flags)?.write_pfm(&dir.join("flags.pfm"))?;
        Raster::from_f64(w, h, 1, &self.fit_residual)?.write_pfm(&dir.join("residual.pfm"))?;
        if let Some(m) = &self.material {
            let fields: [(&str, fn(&MaterialEstimate) -> f64); 4] = [
                ("eta", |m| m.eta),
                ("roughness", |m| m.roughness),
                ("spec_depol", |m| m.spec_depol),
                ("diff_depol", |m| m.diff_depol),
            ];
            for (name, f) in fields {
                let v: Vec<f64> = m.iter().map(f).collect();
                Raster::from_f64(w, h, 1, &v)?.write_pfm(&dir.join(format!("material_{name}.pfm")))?;
            }
        }
        let confident = self.confidence.iter().filter(|c| **c == 1).count();
        let side = serde_json::json!({
            "method": self.method,
            "rows": self.rows,
            "cols": self.cols,
            "parameters": parameters,
            "confidence": {
                "confident_pixels": confident,
                "coverage": confident as f64 / self.pixels().max(1) as f64,
                "flagged_pixels": self.flags.iter().filter(|f| **f != 0).count(),
            },
        });
        std::fs::write(dir.join("recon.json"), serde_json::to_string_pretty(&side)?)?;
        Ok(())
    }
}

/// Distance, normal and confidence rasters read from a result or
/// ground-truth directory.
#[derive(Clone, Debug, PartialEq)]
pub struct MapSet {
    pub rows: usize,
    pub cols: usize,
    pub distance: Vec<f64>,
    pub normal: Vec<Vec3>,
    pub confidence: Vec<u8>,
}

impl MapSet {
    pub fn read(dir: &Path) -> Result<Self> {
        let d = Raster::read_pfm(&dir.join("distance.pfm"))?;
        let n = Raster::read_pfm(&dir.join("normal.pfm"))?;
        let c = Raster::read_pfm(&dir.join("confidence.pfm"))?;
        if (n.width, n.height, n.channels) != (d.width, d.height, 3) || (c.width, c.height) != (d.width, d.height) {
            return Err(Error::Config(format!("{}: raster dimensions differ", dir.display())));
        }
        Ok(Self {
            rows: d.height,
            cols: d.width,
            distance: d.data.iter().map(|v| f64::from(*v)).collect(),
            normal: n.data.chunks_exact(3).map(|v| Vec3::new(v[0].into(), v[1].into(), v[2].into())).collect(),
            confidence: c.data.iter().map(|v| u8::from(*v > 0.5)).collect(),
        })
    }

    pub fn from_scene(m: &SceneMaps) -> Self {
        Self {
            rows: m.rows,
            cols: m.cols,
            distance: m.distance.clone(),
            normal: m.normal.clone(),
            confidence: m.confidence.clone(),
        }
    }

    /// Write ground truth in the same layout as [`ReconMaps::write`].
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let (w, h) = (self.cols, self.rows);
        Raster::from_f64(w, h, 1, &self.distance)?.write_pfm(&dir.join("distance.pfm"))?;
        let nv: Vec<f64> = self.normal.iter().flat_map(|n| [n.x, n.y, n.z]).collect();
        Raster::from_f64(w, h, 3, &nv)?.write_pfm(&dir.join("normal.pfm"))?;
        let conf: Vec<f64> = self.confidence.iter().map(|c| f64::from(*c)).collect();
        Raster::from_f64(w, h, 1, &conf)?.write_pfm(&dir.join("confidence.pfm"))?;
        Ok(())
    }
}

impl From<&ReconMaps> for MapSet {
    fn from(r: &ReconMaps) -> Self {
        Self {
            rows: r.rows,
            cols: r.cols,
            distance: r.distance.clone(),
            normal: r.normal.clone(),
            confidence: r.confidence.clone(),
        }
    }
}

#[cfg(test)]
mod tests;
