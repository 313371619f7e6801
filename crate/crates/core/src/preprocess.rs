//! Peak-centred window slicing and per-bin Mueller recovery.
//!
//! Each pixel's waveforms are cut to a short window around the return so the
//! per-bin linear inversion only runs where there is signal. The window is
//! placed on the state-mean waveform so that all states share the same bins.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::exec::Exec;
use crate::io::{expect_magic, get_f32s, get_u32, put_f32s, put_u32};
use crate::polmath::Mueller;
use crate::scene::SensorConfig;
use crate::simulate::{AngleSchedule, CubeMeta, WavefrontCube};
use crate::{Error, Result, C_M_PER_NS};

pub const DEFAULT_WINDOW: usize = 51;

/// Window touched the start of the record.
pub const PAD_LEFT: u8 = 1;
/// Window touched the end of the record.
pub const PAD_RIGHT: u8 = 2;

/// Peak-centred windows of every state, in ideal intensity units.
#[derive(Clone, Debug)]
pub struct SlicedCube {
    pub states: usize,
    pub rows: usize,
    pub cols: usize,
    pub window: usize,
    /// `(pixel, state, l)` order.
    pub data: Vec<f64>,
    pub t_peak: Vec<usize>,
    /// `(state, pixel)` order, metres.
    pub d_prior: Vec<f64>,
    pub confidence: Vec<u8>,
    /// `PAD_LEFT` / `PAD_RIGHT` bits.
    pub padding: Vec<u8>,
    pub sensor: SensorConfig,
    pub schedule: AngleSchedule,
    pub meta: CubeMeta,
}

impl SlicedCube {
    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    /// Window of pixel `p`, `S × L` state-major.
    pub fn pixel(&self, p: usize) -> &[f64] {
        let n = self.states * self.window;
        &self.data[p * n..(p + 1) * n]
    }

    /// State-mean waveform inside the window of pixel `p`.
    pub fn mean_window(&self, p: usize) -> Vec<f64> {
        let w = self.pixel(p);
        let l = self.window;
        (0..l).map(|k| (0..self.states).map(|s| w[s * l + k]).sum::<f64>() / self.states as f64).collect()
    }

    /// Range for a (possibly fractional) bin position.
    pub fn bin_to_range(&self, bin: f64) -> f64 {
        (bin * self.sensor.bin_width_ns - self.sensor.t0_offset_ns) * C_M_PER_NS / 2.0
    }
}

/// Mean-waveform peak level below which a pixel counts as empty.
fn empty_threshold(cube: &WavefrontCube) -> f64 {
    match &cube.meta.noise {
        None => 0.0,
        Some(p) => {
            // clamped read noise biases empty bins upward by ~0.4σ; demand a
            // clear margin over the state-averaged noise on top of that
            let adc = p.read_sigma * (0.4 + 6.0 / (cube.schedule.len() as f64).sqrt());
            adc / cube.meta.adc_per_unit().max(f64::MIN_POSITIVE)
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

struct PixelSlice {
    window: Vec<f64>,
    t_peak: usize,
    d_prior: Vec<f64>,
    confident: bool,
    padding: u8,
}

/// Locate the return in each pixel and cut a window of `window` bins
/// (odd) centred on it.
pub fn slice_peaks(cube: &WavefrontCube, window: usize, exec: Exec) -> Result<SlicedCube> {
    if window % 2 == 0 || window == 0 {
        return Err(Error::Config(format!("window length must be odd, got {window}")));
    }
    let (ns, nh, nw, nt) = cube.dims();
    let half = window / 2;
    let thr = empty_threshold(cube);
    let meta = &cube.meta;
    let bin_range = |k: usize| (k as f64 * cube.sensor.bin_width_ns - cube.sensor.t0_offset_ns) * C_M_PER_NS / 2.0;
    let slices = cube.map_pixels(exec, |_, raw| {
        let ideal: Vec<f64> = raw.iter().map(|x| meta.to_ideal(*x)).collect();
        let mut mean = vec![0.0; nt];
        for row in ideal.chunks_exact(nt) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= ns as f64);
        let peak = argmax(&mean);
        let confident = mean[peak] > thr;
        let t_peak = if confident { peak } else { 0 };
        let mut out = vec![0.0; ns * window];
        let mut padding = 0;
        if t_peak < half {
            padding |= PAD_LEFT;
        }
        if t_peak + half >= nt {
            padding |= PAD_RIGHT;
        }
        for s in 0..ns {
            for l in 0..window {
                let t = t_peak as isize + l as isize - half as isize;
                if t >= 0 && (t as usize) < nt {
                    out[s * window + l] = ideal[s * nt + t as usize];
                }
            }
        }
        let d_prior = (0..ns)
            .map(|s| if confident { bin_range(argmax(&ideal[s * nt..(s + 1) * nt])) } else { 0.0 })
            .collect();
        PixelSlice { window: out, t_peak, d_prior, confident, padding }
    })?;
    let np = nh * nw;
    let mut sc = SlicedCube {
        states: ns,
        rows: nh,
        cols: nw,
        window,
        data: Vec::with_capacity(np * ns * window),
        t_peak: Vec::with_capacity(np),
        d_prior: vec![0.0; ns * np],
        confidence: Vec::with_capacity(np),
        padding: Vec::with_capacity(np),
        sensor: cube.sensor.clone(),
        schedule: cube.schedule.clone(),
        meta: cube.meta.clone(),
    };
    for (p, s) in slices.into_iter().enumerate() {
        sc.data.extend_from_slice(&s.window);
        sc.t_peak.push(s.t_peak);
        sc.confidence.push(u8::from(s.confident));
        sc.padding.push(s.padding);
        for (i, d) in s.d_prior.iter().enumerate() {
            sc.d_prior[i * np + p] = *d;
        }
    }
    Ok(sc)
}

/// Least-squares solver for `vec(H)` from the state intensities, with the
/// design matrix factorized once.
#[derive(Clone, Debug)]
pub struct EllipsometrySolver {
    design: DMatrix<f64>,
    pinv: DMatrix<f64>,
}

impl EllipsometrySolver {
    pub fn new(schedule: &AngleSchedule) -> Result<Self> {
        let rep = schedule.report();
        if rep.rank < 16 {
            return Err(Error::Config(format!("schedule rank {} < 16, Mueller matrix not recoverable", rep.rank)));
        }
        let design = schedule.design_matrix();
        let svd = design.clone().svd(true, true);
        let pinv = svd.pseudo_inverse(0.0).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self { design, pinv })
    }

    pub fn states(&self) -> usize {
        self.design.nrows()
    }

    /// Row-major `vec(H)` minimizing `‖y − D·vec(H)‖₂`.
    pub fn solve(&self, y: &[f64]) -> [f64; 16] {
        let v = &self.pinv * DVector::from_column_slice(y);
        let mut out = [0.0; 16];
        out.copy_from_slice(v.as_slice());
        out
    }

    /// Squared residual norm of a solution.
    pub fn residual_sq(&self, y: &[f64], h: &[f64; 16]) -> f64 {
        let fit = &self.design * DVector::from_column_slice(h);
        fit.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum()
    }
}

/// Per-pixel, per-window-bin Mueller matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct MuellerMovie {
    pub rows: usize,
    pub cols: usize,
    pub window: usize,
    /// `(h, w, l, 16)` with each matrix row-major.
    pub data: Vec<f64>,
    /// Least-squares residual norm per pixel over the whole window.
    pub residual: Vec<f64>,
}

impl MuellerMovie {
    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn bin(&self, p: usize, l: usize) -> Mueller {
        let o = (p * self.window + l) * 16;
        Mueller::from_vec16(&self.data[o..o + 16])
    }

    /// Matrix at the window centre (the detected peak).
    pub fn peak(&self, p: usize) -> Mueller {
        self.bin(p, self.window / 2)
    }

    /// All window bins of pixel `p`, `L × 16`.
    pub fn pixel(&self, p: usize) -> &[f64] {
        let n = self.window * 16;
        &self.data[p * n..(p + 1) * n]
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(b"PMM1")?;
        for v in [1, self.rows as u32, self.cols as u32, self.window as u32] {
            put_u32(&mut w, v)?;
        }
        put_f32s(&mut w, self.data.iter().map(|v| *v as f32))?;
        put_f32s(&mut w, self.residual.iter().map(|v| *v as f32))?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        expect_magic(&mut r, b"PMM1")?;
        let version = get_u32(&mut r)?;
        if version != 1 {
            return Err(Error::Format(format!("unsupported PMM version {version}")));
        }
        let (rows, cols, window) = (get_u32(&mut r)? as usize, get_u32(&mut r)? as usize, get_u32(&mut r)? as usize);
        let data = get_f32s(&mut r, rows * cols * window * 16)?.into_iter().map(f64::from).collect();
        let residual = get_f32s(&mut r, rows * cols)?.into_iter().map(f64::from).collect();
        Ok(Self { rows, cols, window, data, residual })
    }
}

/// Solve every window bin of every pixel for its Mueller matrix.
pub fn invert_ellipsometry(sliced: &SlicedCube, schedule: &AngleSchedule, exec: Exec) -> Result<MuellerMovie> {
    if schedule.len() != sliced.states {
        return Err(Error::Config(format!("schedule has {} states, cube {}", schedule.len(), sliced.states)));
    }
    let solver = EllipsometrySolver::new(schedule)?;
    let (ns, l) = (sliced.states, sliced.window);
    let per_pixel = exec.map(sliced.pixels(), |p| {
        let win = sliced.pixel(p);
        let mut out = Vec::with_capacity(l * 16);
        let mut res = 0.0;
        let mut y = vec![0.0; ns];
        for k in 0..l {
            for s in 0..ns {
                y[s] = win[s * l + k];
            }
            let h = solver.solve(&y);
            res += solver.residual_sq(&y, &h);
            out.extend_from_slice(&h);
        }
        (out, res.sqrt())
    });
    let mut data = Vec::with_capacity(sliced.pixels() * l * 16);
    let mut residual = Vec::with_capacity(sliced.pixels());
    for (d, r) in per_pixel {
        data.extend(d);
        residual.push(r);
    }
    Ok(MuellerMovie { rows: sliced.rows, cols: sliced.cols, window: l, data, residual })
}
