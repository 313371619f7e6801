use serde::{Deserialize, Serialize};

use super::{Method, ReconMaps, FLAG_LOW_CONFIDENCE};
use crate::preprocess::SlicedCube;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Refine {
    None,
    /// Parabola through the log-amplitudes of the peak bin and its neighbours
    /// (exact for a Gaussian pulse).
    Parabolic,
}

fn parabolic_offset(ym: f64, y0: f64, yp: f64) -> f64 {
    let (a, b, c) = if ym > 0.0 && y0 > 0.0 && yp > 0.0 { (ym.ln(), y0.ln(), yp.ln()) } else { (ym, y0, yp) };
    let den = a - 2.0 * b + c;
    if den >= 0.0 || !den.is_finite() {
        return 0.0;
    }
    (0.5 * (a - c) / den).clamp(-0.5, 0.5)
}

/// Distance per pixel from the state-mean waveform peak of `sliced`.
pub fn tof_distance(sliced: &SlicedCube, refine: Refine) -> ReconMaps {
    let method = match refine {
        Refine::None => Method::Argmax,
        Refine::Parabolic => Method::Parabolic,
    };
    let mut out = ReconMaps::empty(sliced.rows, sliced.cols, method);
    let c = sliced.window / 2;
    for p in 0..sliced.pixels() {
        if sliced.confidence[p] == 0 {
            out.flags[p] |= FLAG_LOW_CONFIDENCE;
            continue;
        }
        let mut bin = sliced.t_peak[p] as f64;
        if refine == Refine::Parabolic && sliced.window >= 3 {
            let w = sliced.mean_window(p);
            let last = sliced.sensor.bins - 1;
            let t = sliced.t_peak[p];
            // padded neighbours carry no data
            if t > 0 && t < last {
                bin += parabolic_offset(w[c - 1], w[c], w[c + 1]);
            }
        }
        let d = sliced.bin_to_range(bin);
        if d > 0.0 && d <= sliced.sensor.max_range + sliced.sensor.bin_range() {
            out.distance[p] = d.min(sliced.sensor.max_range);
            out.confidence[p] = 1;
        } else {
            out.flags[p] |= FLAG_LOW_CONFIDENCE;
        }
    }
    out
}
