//! Separation of a pixel's Mueller movie into the instantaneous specular
//! response and the exponentially delayed diffuse response.
//!
//! Every one of the 16 channels is `h_s·g(t − τ₀) + h_d·e(t − τ₀; τ_d)`
//! with `g` the unit-area pulse and `e` its convolution with the diffuse
//! kernel. For fixed `(τ₀, τ_d)` the amplitudes are linear, so they are
//! projected out and only the two temporal parameters are searched.

use nalgebra::DMatrix;

use crate::lm::{cost, minimize, LmConfig, Residuals};
use crate::real::Real;
use crate::simulate::{emg, gaussian};

/// Minimum sine of the angle between the two temporal bases for the split
/// to count as resolved.
pub const DEFAULT_MIN_SEPARATION: f64 = 0.3;

/// Largest RMS misfit of the two-basis model, relative to the RMS of the
/// window, for the split to count as resolved. Pulses broadened by range
/// spread inside the beam footprint fit far worse than this.
pub const MAX_RELATIVE_MISFIT: f64 = 0.05;

const TAU_MIN: f64 = 1e-3;
const TAU_MAX: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TemporalSplit {
    /// Specular amplitude (row-major Mueller).
    pub h_s: [f64; 16],
    /// Diffuse amplitude.
    pub h_d: [f64; 16],
    /// Time-integrated response, independent of the split.
    pub h_total: [f64; 16],
    /// Pulse delay relative to the window centre, ns.
    pub tau0: f64,
    pub tau_d: f64,
    /// Basis separation at the solution.
    pub separation: f64,
    pub resolved: bool,
    /// RMS misfit of the two-basis model.
    pub residual: f64,
}

struct VarPro {
    /// `L × channels`, row-major.
    data: Vec<f64>,
    channels: usize,
    times: Vec<f64>,
    sigma: f64,
}

impl VarPro {
    fn bases<T: Real>(&self, x: &[T; 2]) -> (Vec<T>, Vec<T>) {
        let tau = x[1].exp();
        let g = self.times.iter().map(|t| gaussian(-x[0] + *t, self.sigma)).collect();
        let e = self.times.iter().map(|t| emg(-x[0] + *t, self.sigma, tau)).collect();
        (g, e)
    }

    /// Amplitudes per channel for fixed bases.
    fn amplitudes<T: Real>(&self, g: &[T], e: &[T]) -> Vec<(T, T)> {
        let (mut a11, mut a12, mut a22) = (T::zero(), T::zero(), T::zero());
        for (gv, ev) in g.iter().zip(e) {
            a11 = a11 + *gv * *gv;
            a12 = a12 + *gv * *ev;
            a22 = a22 + *ev * *ev;
        }
        // tiny ridge keeps nearly collinear bases solvable
        let ridge = (a11 + a22) * 1e-13;
        let (a11, a22) = (a11 + ridge, a22 + ridge);
        let det = a11 * a22 - a12 * a12;
        (0..self.channels)
            .map(|c| {
                let (mut b1, mut b2) = (T::zero(), T::zero());
                for (l, (gv, ev)) in g.iter().zip(e).enumerate() {
                    let y = self.data[l * self.channels + c];
                    b1 = b1 + *gv * y;
                    b2 = b2 + *ev * y;
                }
                ((a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det)
            })
            .collect()
    }
}

impl Residuals<2> for VarPro {
    fn eval<T: Real>(&self, x: &[T; 2], out: &mut Vec<T>) {
        out.clear();
        let (g, e) = self.bases(x);
        let amp = self.amplitudes(&g, &e);
        for (l, (gv, ev)) in g.iter().zip(&e).enumerate() {
            for (c, (a, b)) in amp.iter().enumerate() {
                out.push(-(*a * *gv + *b * *ev) + self.data[l * self.channels + c]);
            }
        }
    }
}

/// Split the `L × 16` window `movie` (bins `bin_width` ns apart, window
/// centre at index `L/2`) for a pulse of standard deviation `sigma`.
pub fn temporal_split(movie: &[f64], bin_width: f64, sigma: f64, min_separation: f64) -> TemporalSplit {
    let l = movie.len() / 16;
    let half = (l / 2) as f64;
    let times: Vec<f64> = (0..l).map(|k| (k as f64 - half) * bin_width).collect();
    let mut h_total = [0.0; 16];
    for k in 0..l {
        for c in 0..16 {
            h_total[c] += movie[k * 16 + c] * bin_width;
        }
    }
    // the projected misfit depends on the data only through `Y·Yᵀ`, so the
    // left singular vectors scaled by their singular values stand in for
    // the 16 channels; a noise-free window has rank two
    let y = DMatrix::from_row_slice(l, 16, &movie[..l * 16]);
    let svd = y.svd(true, false);
    let u = svd.u.expect("left singular vectors");
    let s0 = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|k| svd.singular_values[*k] > 1e-12 * s0).collect();
    let reduced = VarPro {
        data: (0..l).flat_map(|r| keep.iter().map(|k| u[(r, *k)] * svd.singular_values[*k]).collect::<Vec<_>>()).collect(),
        channels: keep.len(),
        times: times.clone(),
        sigma,
    };
    let vp = VarPro { data: movie[..l * 16].to_vec(), channels: 16, times, sigma };
    let cfg = LmConfig { max_iters: 100, ..LmConfig::default() };
    let lo = [-5.0 * bin_width, TAU_MIN.ln()];
    let hi = [2.0 * bin_width, TAU_MAX.ln()];
    // screen a coarse grid by cost and refine only the most promising start
    let mut starts: Vec<([f64; 2], f64)> = [-1.0, -0.5, 0.0]
        .iter()
        .flat_map(|k| [0.02, 0.06, 0.2, 0.6, 2.0, 6.0, 15.0].map(|tau| [k * bin_width, f64::ln(tau)]))
        .map(|x| (x, cost(&reduced, &x, cfg.loss)))
        .collect();
    starts.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut best: Option<crate::lm::LmReport<2>> = None;
    for (x0, _) in starts.iter().take(1) {
        let r = minimize(&reduced, *x0, &lo, &hi, &cfg);
        if best.is_none_or(|b| r.cost < b.cost) {
            best = Some(r);
        }
    }
    let best = best.expect("at least one start");
    let (g, e) = vp.bases(&best.x);
    let amp = vp.amplitudes(&g, &e);
    let mut h_s = [0.0; 16];
    let mut h_d = [0.0; 16];
    for (c, (a, b)) in amp.iter().enumerate() {
        h_s[c] = *a;
        h_d[c] = *b;
    }
    let gg: f64 = g.iter().map(|v| v * v).sum();
    let ee: f64 = e.iter().map(|v| v * v).sum();
    let ge: f64 = g.iter().zip(&e).map(|(a, b)| a * b).sum();
    let separation = if gg > 0.0 && ee > 0.0 { (1.0 - ge * ge / (gg * ee)).max(0.0).sqrt() } else { 0.0 };
    let tau_d = best.x[1].exp();
    let interior = best.x[1] > lo[1] + 1e-6 && best.x[1] < hi[1] - 1e-6;
    let residual = (2.0 * best.cost / (l * 16).max(1) as f64).sqrt();
    let rms = (movie[..l * 16].iter().map(|v| v * v).sum::<f64>() / (l * 16).max(1) as f64).sqrt();
    TemporalSplit {
        h_s,
        h_d,
        h_total,
        tau0: best.x[0],
        tau_d,
        separation,
        resolved: interior && separation >= min_separation && residual <= MAX_RELATIVE_MISFIT * rms,
        residual,
    }
}
