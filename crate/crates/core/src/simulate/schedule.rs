use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::polmath::{OpticAngles, Stokes};
use crate::{Error, Result};

/// Largest condition number accepted for an acquisition schedule.
pub const MAX_CONDITION: f64 = 100.0;

/// Ordered list of optic rotations, one per acquired state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleSchedule {
    pub entries: Vec<OpticAngles>,
    pub laser_stokes: Stokes,
}

/// Rank and conditioning of a schedule's design matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScheduleReport {
    pub states: usize,
    pub rank: usize,
    pub condition: f64,
}

impl ScheduleReport {
    pub fn ok(&self) -> bool {
        self.rank == 16 && self.condition < MAX_CONDITION
    }
}

impl AngleSchedule {
    /// Validated schedule: at least 16 states, full rank, well conditioned.
    pub fn new(entries: Vec<OpticAngles>, laser_stokes: Stokes) -> Result<Self> {
        let s = Self { entries, laser_stokes };
        let rep = s.report();
        if s.entries.len() < 16 || !rep.ok() {
            return Err(Error::Config(format!(
                "acquisition schedule unusable: {} states, rank {}, condition {:.3e}",
                rep.states, rep.rank, rep.condition
            )));
        }
        Ok(s)
    }

    /// Unchecked construction, for analysing arbitrary schedules.
    pub fn unchecked(entries: Vec<OpticAngles>, laser_stokes: Stokes) -> Self {
        Self { entries, laser_stokes }
    }

    /// Dual rotating retarder: emitter HWP and receiver LP fixed at 0,
    /// emitter QWP at `5k°` and receiver QWP at `25k°`, `k = 0..36`.
    pub fn default_schedule() -> Self {
        let entries = (0..36)
            .map(|k| {
                let k = k as f64;
                OpticAngles::new(0.0, (5.0 * k).to_radians(), (25.0 * k).to_radians(), 0.0)
            })
            .collect();
        Self::new(entries, Stokes::HORIZONTAL).expect("default schedule is well conditioned")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Emitted Stokes vector of each state, `P_i · s_laser`.
    pub fn generator_states(&self) -> Vec<Stokes> {
        self.entries.iter().map(|e| e.generator().apply(&self.laser_stokes)).collect()
    }

    /// First row of each analyzer, `row₀(A_i)`.
    pub fn analyzer_rows(&self) -> Vec<[f64; 4]> {
        self.entries.iter().map(|e| e.analyzer().0[0]).collect()
    }

    /// `S × 16` matrix mapping row-major `vec(H)` to the measured intensities.
    pub fn design_matrix(&self) -> DMatrix<f64> {
        let g = self.generator_states();
        let a = self.analyzer_rows();
        DMatrix::from_fn(self.len(), 16, |i, c| a[i][c / 4] * g[i].0[c % 4])
    }

    pub fn report(&self) -> ScheduleReport {
        if self.is_empty() {
            return ScheduleReport { states: 0, rank: 0, condition: f64::INFINITY };
        }
        let sv = self.design_matrix().singular_values();
        let max = sv.max();
        let rank = sv.iter().filter(|v| **v > max * 1e-10).count();
        let condition = if rank == 16 { max / sv.min() } else { f64::INFINITY };
        ScheduleReport { states: self.len(), rank, condition }
    }

    /// Intensities `[A_i H P_i s_laser]₀` for a fixed Mueller matrix.
    pub fn forward(&self, h: &crate::polmath::Mueller) -> Vec<f64> {
        let g = self.generator_states();
        let a = self.analyzer_rows();
        (0..self.len())
            .map(|i| {
                let out = h.apply(&g[i]);
                (0..4).map(|j| a[i][j] * out.0[j]).sum()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polmath::Mueller;

    #[test]
    fn default_is_full_rank_and_well_conditioned() {
        let s = AngleSchedule::default_schedule();
        assert_eq!(s.len(), 36);
        assert_eq!(s.entries[0].as_array(), [0.0; 4]);
        let r = s.report();
        assert_eq!(r.rank, 16);
        assert!(r.condition < MAX_CONDITION, "{}", r.condition);
    }

    #[test]
    fn naive_ten_fifty_schedule_aliases() {
        // 10°/50° steps repeat after 18 states and leave the design rank deficient
        let e = (0..36)
            .map(|k| OpticAngles::new(0.0, (10.0 * k as f64).to_radians(), (50.0 * k as f64).to_radians(), 0.0))
            .collect::<Vec<_>>();
        let s = AngleSchedule::unchecked(e.clone(), Stokes::HORIZONTAL);
        assert!(s.report().rank < 16);
        assert!(AngleSchedule::new(e, Stokes::HORIZONTAL).is_err());
    }

    #[test]
    fn truncated_schedule_fails_loudly_or_is_full_rank() {
        let d = AngleSchedule::default_schedule();
        let e = d.entries[..16].to_vec();
        match AngleSchedule::new(e.clone(), d.laser_stokes) {
            Ok(s) => assert_eq!(s.report().rank, 16),
            Err(err) => assert!(err.to_string().contains("rank")),
        }
        assert!(AngleSchedule::new(d.entries[..15].to_vec(), d.laser_stokes).is_err());
    }

    #[test]
    fn design_matrix_matches_forward() {
        let s = AngleSchedule::default_schedule();
        let mut v = [0.0; 16];
        for (i, x) in v.iter_mut().enumerate() {
            *x = (i as f64 * 0.37).sin();
        }
        let h = Mueller::from_vec16(&v);
        let y = s.design_matrix() * nalgebra::DVector::from_column_slice(&v);
        for (a, b) in y.iter().zip(s.forward(&h)) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
