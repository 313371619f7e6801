use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{KdTree, Method, ReconMaps, FLAG_DEGENERATE, FLAG_LOW_CONFIDENCE};
use crate::exec::Exec;
use crate::pbrdf::Vec3;
use crate::{Error, Result};

/// Points in the camera frame with the pixel each came from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub pixel: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PcaConfig {
    pub k: usize,
    /// Neighbour search radius, m.
    pub r_max: f64,
}

impl Default for PcaConfig {
    fn default() -> Self {
        Self { k: 16, r_max: 2.0 }
    }
}

/// Back-project confident pixels along their view directions.
pub fn unproject(distance: &[f64], confidence: &[u8], views: &[Vec3]) -> PointCloud {
    let mut pc = PointCloud::default();
    for (p, ((d, c), v)) in distance.iter().zip(confidence).zip(views).enumerate() {
        if *c == 1 && *d > 0.0 && d.is_finite() {
            pc.points.push(v * *d);
            pc.pixel.push(p);
        }
    }
    pc
}

/// Normal of the best-fit plane through `pts`; `None` when the points are
/// (nearly) collinear.
pub(super) fn plane_normal(pts: &[Vec3]) -> Option<Vec3> {
    let n = pts.len() as f64;
    let mean: Vec3 = pts.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov / n);
    let mut idx = [0, 1, 2];
    idx.sort_by(|a, b| eig.eigenvalues[*a].total_cmp(&eig.eigenvalues[*b]));
    let (l_mid, l_max) = (eig.eigenvalues[idx[1]], eig.eigenvalues[idx[2]]);
    if !(l_max > 0.0) || l_mid < 1e-4 * l_max {
        return None;
    }
    Some(eig.eigenvectors.column(idx[0]).normalize())
}

/// Per-point normals from the covariance of the `k` nearest neighbours.
pub fn pca_normals(pc: &PointCloud, rows: usize, cols: usize, views: &[Vec3], cfg: &PcaConfig, exec: Exec) -> Result<ReconMaps> {
    if cfg.k < 3 {
        return Err(Error::Config(format!("PCA needs k ≥ 3 neighbours, got {}", cfg.k)));
    }
    if views.len() != rows * cols || pc.pixel.iter().any(|p| *p >= rows * cols) {
        return Err(Error::Config("point cloud does not match the raster".into()));
    }
    let tree = KdTree::new(pc.points.clone());
    let per_point = exec.map(pc.points.len(), |i| {
        let nb = tree.nearest(&pc.points[i], cfg.k, cfg.r_max);
        let pts: Vec<Vec3> = nb.iter().map(|(j, _)| tree.point(*j)).collect();
        let enough = nb.len() >= cfg.k;
        let normal = if pts.len() >= 3 { plane_normal(&pts) } else { None };
        (normal, enough)
    });
    let mut out = ReconMaps::empty(rows, cols, Method::Pca);
    out.flags.fill(FLAG_LOW_CONFIDENCE);
    for (i, (normal, enough)) in per_point.into_iter().enumerate() {
        let p = pc.pixel[i];
        let omega = views[p];
        out.flags[p] = 0;
        out.distance[p] = pc.points[i].norm();
        match normal {
            Some(n) => {
                out.normal[p] = if n.dot(&-omega) < 0.0 { -n } else { n };
                if enough {
                    out.confidence[p] = 1;
                } else {
                    out.flags[p] |= FLAG_LOW_CONFIDENCE;
                }
            }
            None => {
                out.normal[p] = -omega;
                out.flags[p] |= FLAG_DEGENERATE;
                if !enough {
                    out.flags[p] |= FLAG_LOW_CONFIDENCE;
                }
            }
        }
    }
    Ok(out)
}
