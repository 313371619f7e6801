//! Masked error statistics for normal and distance maps.
//!
//! Per-pixel errors are sorted before they are summed, so every statistic
//! is independent of pixel order, bit for bit.

use serde::{Deserialize, Serialize};

use crate::pbrdf::Vec3;
use crate::reconstruct::MapSet;
use crate::{Error, Result};

pub const ACCURACY_THRESHOLDS_DEG: [f64; 3] = [3.0, 5.0, 10.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngularMetrics {
    pub mean_deg: f64,
    pub median_deg: f64,
    pub rmse_deg: f64,
    /// Percent of pixels with error ≤ 3°, 5°, 10°.
    pub acc_3: f64,
    pub acc_5: f64,
    pub acc_10: f64,
    pub pixels: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceMetrics {
    pub mae: f64,
    pub medae: f64,
    pub rmse: f64,
    pub pixels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub angular: AngularMetrics,
    pub distance: DistanceMetrics,
    pub total_pixels: usize,
    /// Fraction of pixels inside the mask.
    pub mask_coverage: f64,
}

/// Pairwise sum of `v` in the given order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 16 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Sorted copy, so sums do not depend on the input order.
fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Lower median by exact selection.
pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut w = v.to_vec();
    let k = (w.len() - 1) / 2;
    let (_, m, _) = w.select_nth_unstable_by(k, f64::total_cmp);
    Some(*m)
}

fn check_shapes(a: usize, b: usize, m: usize) -> Result<()> {
    if a != b || a != m {
        return Err(Error::Config(format!("shape mismatch: {a} predictions, {b} references, {m} mask entries")));
    }
    Ok(())
}

/// Angle between two directions in degrees. The atan2 form stays exact
/// near 0° where `acos` of a rounded dot product does not.
pub fn angle_deg(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b)).to_degrees()
}

pub fn angular_metrics(pred: &[Vec3], gt: &[Vec3], mask: &[u8]) -> Result<AngularMetrics> {
    check_shapes(pred.len(), gt.len(), mask.len())?;
    let err = sorted(
        pred.iter().zip(gt).zip(mask).filter(|(_, m)| **m != 0).map(|((p, g), _)| angle_deg(p, g)).collect(),
    );
    if err.is_empty() {
        return Err(Error::EmptyMask("no pixels inside the mask for angular metrics".into()));
    }
    let n = err.len() as f64;
    let sq: Vec<f64> = err.iter().map(|e| e * e).collect();
    let acc = |t: f64| 100.0 * err.partition_point(|e| *e <= t) as f64 / n;
    Ok(AngularMetrics {
        mean_deg: pairwise_sum(&err) / n,
        median_deg: median(&err).unwrap_or(0.0),
        rmse_deg: (pairwise_sum(&sq) / n).sqrt(),
        acc_3: acc(ACCURACY_THRESHOLDS_DEG[0]),
        acc_5: acc(ACCURACY_THRESHOLDS_DEG[1]),
        acc_10: acc(ACCURACY_THRESHOLDS_DEG[2]),
        pixels: err.len(),
    })
}

pub fn distance_metrics(pred: &[f64], gt: &[f64], mask: &[u8]) -> Result<DistanceMetrics> {
    check_shapes(pred.len(), gt.len(), mask.len())?;
    let err =
        sorted(pred.iter().zip(gt).zip(mask).filter(|(_, m)| **m != 0).map(|((p, g), _)| (p - g).abs()).collect());
    if err.is_empty() {
        return Err(Error::EmptyMask("no pixels inside the mask for distance metrics".into()));
    }
    let n = err.len() as f64;
    let sq: Vec<f64> = err.iter().map(|e| e * e).collect();
    Ok(DistanceMetrics {
        mae: pairwise_sum(&err) / n,
        medae: median(&err).unwrap_or(0.0),
        rmse: (pairwise_sum(&sq) / n).sqrt(),
        pixels: err.len(),
    })
}

/// Compare a prediction against ground truth over the ground-truth mask.
pub fn evaluate(pred: &MapSet, gt: &MapSet) -> Result<MetricsReport> {
    if (pred.rows, pred.cols) != (gt.rows, gt.cols) {
        return Err(Error::Config(format!(
            "prediction is {}×{}, ground truth {}×{}",
            pred.rows, pred.cols, gt.rows, gt.cols
        )));
    }
    let angular = angular_metrics(&pred.normal, &gt.normal, &gt.confidence)?;
    let distance = distance_metrics(&pred.distance, &gt.distance, &gt.confidence)?;
    let total = gt.rows * gt.cols;
    Ok(MetricsReport { angular, distance, total_pixels: total, mask_coverage: angular.pixels as f64 / total as f64 })
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "mean_deg,median_deg,rmse_deg,acc_3,acc_5,acc_10,mae_m,medae_m,rmse_m,pixels,coverage";

    pub fn csv_row(&self) -> String {
        let a = &self.angular;
        let d = &self.distance;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            a.mean_deg, a.median_deg, a.rmse_deg, a.acc_3, a.acc_5, a.acc_10, d.mae, d.medae, d.rmse, a.pixels, self.mask_coverage
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, UnitSphere};

    fn unit(v: [f64; 3]) -> Vec3 {
        Vec3::from(v).normalize()
    }

    #[test]
    fn identical_maps_are_perfect() {
        let n: Vec<Vec3> = (0..50).map(|i| unit([i as f64, 1.0, -3.0])).collect();
        let m = angular_metrics(&n, &n, &[1; 50]).unwrap();
        assert!(m.mean_deg < 1e-6 && m.acc_3 == 100.0 && m.acc_10 == 100.0);
        let d = distance_metrics(&[3.0; 50], &[3.0; 50], &[1; 50]).unwrap();
        assert_eq!((d.mae, d.medae, d.rmse), (0.0, 0.0, 0.0));
    }

    #[test]
    fn constant_rotation_of_five_degrees() {
        let gt: Vec<Vec3> = (0..200).map(|i| unit([0.1 * i as f64, 1.0, 2.0])).collect();
        let pred: Vec<Vec3> = gt
            .iter()
            .map(|g| {
                let axis = nalgebra::Unit::new_normalize(g.cross(&Vec3::x()));
                Rotation3::from_axis_angle(&axis, 5f64.to_radians()) * g
            })
            .collect();
        let m = angular_metrics(&pred, &gt, &[1; 200]).unwrap();
        assert!((m.mean_deg - 5.0).abs() < 1e-6);
        assert_eq!(m.acc_3, 0.0);
        // 5° exactly may round either side of the threshold
        assert!(m.acc_10 == 100.0);
    }

    #[test]
    fn constant_distance_offset() {
        let gt: Vec<f64> = (0..30).map(|i| 5.0 + i as f64).collect();
        let pred: Vec<f64> = gt.iter().map(|d| d + 0.15).collect();
        let d = distance_metrics(&pred, &gt, &[1; 30]).unwrap();
        assert!((d.mae - 0.15).abs() < 1e-12 && (d.rmse - 0.15).abs() < 1e-12);
    }

    #[test]
    fn random_directions_average_ninety_degrees() {
        let mut rng = rand_pcg::Pcg64::seed_from_u64(1);
        let n = 100_000;
        let a: Vec<Vec3> = (0..n).map(|_| Vec3::from(UnitSphere.sample(&mut rng))).collect();
        let b: Vec<Vec3> = (0..n).map(|_| Vec3::from(UnitSphere.sample(&mut rng))).collect();
        let m = angular_metrics(&a, &b, &vec![1; n]).unwrap();
        assert!((m.mean_deg - 90.0).abs() < 2.0, "{}", m.mean_deg);
    }

    #[test]
    fn empty_mask_and_shape_errors() {
        let n = vec![Vec3::z(); 3];
        assert!(matches!(angular_metrics(&n, &n, &[0; 3]), Err(Error::EmptyMask(_))));
        assert!(matches!(distance_metrics(&[1.0], &[1.0], &[0]), Err(Error::EmptyMask(_))));
        assert!(angular_metrics(&n, &n[..2], &[1; 3]).is_err());
    }

    #[test]
    fn exact_lower_median() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.0));
        assert_eq!(median(&[5.0, 1.0, 3.0]), Some(3.0));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn report_serializes_with_stable_keys() {
        let n = vec![Vec3::z(); 4];
        let ms = MapSet { rows: 2, cols: 2, distance: vec![1.0; 4], normal: n, confidence: vec![1, 1, 0, 1] };
        let r = evaluate(&ms, &ms).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        for k in ["mean_deg", "median_deg", "rmse_deg", "acc_3", "acc_5", "acc_10", "pixels"] {
            assert!(v["angular"].get(k).is_some(), "{k}");
        }
        assert_eq!(v["mask_coverage"], 0.75);
        assert_eq!(r.csv_row().split(',').count(), MetricsReport::CSV_HEADER.split(',').count());
    }

    proptest! {
        #[test]
        fn permutation_invariant_and_ordered(
            vals in prop::collection::vec((0.0..50.0f64, -1.0..1.0f64, -1.0..1.0f64, 0u8..2), 1..200),
            seed in 0u64..1000,
        ) {
            let mut mask: Vec<u8> = vals.iter().map(|v| v.3).collect();
            mask[0] = 1;
            let gt: Vec<f64> = vals.iter().map(|v| v.0).collect();
            let pred: Vec<f64> = vals.iter().map(|v| v.0 + v.1).collect();
            let np: Vec<Vec3> = vals.iter().map(|v| unit([v.1, v.2, -1.0])).collect();
            let ng: Vec<Vec3> = vals.iter().map(|v| unit([v.2, v.1, -1.0])).collect();
            let mut idx: Vec<usize> = (0..vals.len()).collect();
            let mut rng = rand_pcg::Pcg64::seed_from_u64(seed);
            for i in (1..idx.len()).rev() {
                idx.swap(i, rng.random_range(0..=i));
            }
            let perm = |v: &[f64]| idx.iter().map(|i| v[*i]).collect::<Vec<_>>();
            let permv = |v: &[Vec3]| idx.iter().map(|i| v[*i]).collect::<Vec<_>>();
            let pm: Vec<u8> = idx.iter().map(|i| mask[*i]).collect();
            let d1 = distance_metrics(&pred, &gt, &mask).unwrap();
            let d2 = distance_metrics(&perm(&pred), &perm(&gt), &pm).unwrap();
            prop_assert_eq!(d1, d2);
            let a1 = angular_metrics(&np, &ng, &mask).unwrap();
            let a2 = angular_metrics(&permv(&np), &permv(&ng), &pm).unwrap();
            prop_assert_eq!(a1, a2);
            prop_assert!(d1.rmse >= d1.mae && d1.mae >= 0.0);
            prop_assert!(a1.rmse_deg >= a1.mean_deg - 1e-12);
            prop_assert!(a1.acc_3 <= a1.acc_5 && a1.acc_5 <= a1.acc_10);
        }
    }
}
