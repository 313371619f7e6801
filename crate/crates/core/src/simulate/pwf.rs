//! `PWF1` wavefront cube files.
//!
//! Layout (little endian): magic `PWF1`, u32 version = 1, u32 S, H, W, T,
//! f64 bin width (ns), f64 t0 (ns), S×4 f64 optic angles (rad), 4 f64
//! laser Stokes, then S·H·W·T f32 samples in `(s, h, w, t)` order.
//!
//! The remaining sensor fields and the acquisition metadata live in a JSON
//! sidecar next to the cube (`<file>.json`).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{AngleSchedule, CubeMeta, Source, WavefrontCube};
use crate::exec::Exec;
use crate::io::{expect_magic, get_f64, get_u32, put_f32s, put_f64, put_u32};
use crate::polmath::{OpticAngles, Stokes};
use crate::scene::SensorConfig;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"PWF1";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    sensor: SensorConfig,
    meta: CubeMeta,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn header_len(states: usize) -> u64 {
    4 + 5 * 4 + 2 * 8 + states as u64 * 4 * 8 + 4 * 8
}

/// Write `cube` (evaluating it row by row) and its sidecar.
pub fn write_pwf(cube: &WavefrontCube, path: &Path, exec: Exec) -> Result<()> {
    let (ns, nh, nw, nt) = cube.dims();
    let dim = |v: usize| u32::try_from(v).map_err(|_| Error::Config("cube dimension exceeds u32".into()));
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(MAGIC)?;
    for v in [VERSION, dim(ns)?, dim(nh)?, dim(nw)?, dim(nt)?] {
        put_u32(&mut f, v)?;
    }
    put_f64(&mut f, cube.sensor.bin_width_ns)?;
    put_f64(&mut f, cube.sensor.t0_offset_ns)?;
    for e in &cube.schedule.entries {
        for a in e.as_array() {
            put_f64(&mut f, a)?;
        }
    }
    for v in cube.schedule.laser_stokes.0 {
        put_f64(&mut f, v)?;
    }
    let mut f = f.into_inner().map_err(|e| e.into_error())?;
    let base = header_len(ns);
    f.set_len(base + (ns * nh * nw * nt) as u64 * 4)?;
    for h in 0..nh {
        let px = cube.map_row(h, exec, |_, b| b.iter().map(|v| *v as f32).collect::<Vec<f32>>())?;
        for s in 0..ns {
            f.seek(SeekFrom::Start(base + ((s * nh + h) * nw * nt) as u64 * 4))?;
            let mut w = BufWriter::new(&mut f);
            for p in &px {
                put_f32s(&mut w, p[s * nt..(s + 1) * nt].iter().copied())?;
            }
            w.flush()?;
        }
    }
    f.sync_all()?;
    let side = Sidecar { format: "PWF1".into(), sensor: cube.sensor.clone(), meta: cube.meta.clone() };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

/// Open a cube file lazily. Without a sidecar the optics default to the
/// standard field of view scaled to the raster and samples are taken as
/// ideal intensities.
pub fn read_pwf(path: &Path) -> Result<WavefrontCube> {
    let mut r = BufReader::new(File::open(path)?);
    expect_magic(&mut r, MAGIC)?;
    let version = get_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported PWF version {version}")));
    }
    let ns = get_u32(&mut r)? as usize;
    let nh = get_u32(&mut r)? as usize;
    let nw = get_u32(&mut r)? as usize;
    let nt = get_u32(&mut r)? as usize;
    let bw = get_f64(&mut r)?;
    let t0 = get_f64(&mut r)?;
    let mut entries = Vec::with_capacity(ns);
    for _ in 0..ns {
        let a = [get_f64(&mut r)?, get_f64(&mut r)?, get_f64(&mut r)?, get_f64(&mut r)?];
        entries.push(OpticAngles::new(a[0], a[1], a[2], a[3]));
    }
    let laser = Stokes([get_f64(&mut r)?, get_f64(&mut r)?, get_f64(&mut r)?, get_f64(&mut r)?]);
    let expected = header_len(ns) + (ns * nh * nw * nt) as u64 * 4;
    let actual = std::fs::metadata(path)?.len();
    if actual != expected {
        return Err(Error::Format(format!("{}: {actual} bytes, header implies {expected}", path.display())));
    }
    let side = sidecar_path(path);
    let (sensor, meta) = if side.exists() {
        let s: Sidecar = serde_json::from_str(&std::fs::read_to_string(&side)?)
            .map_err(|e| Error::Format(format!("{}: {e}", side.display())))?;
        (s.sensor, s.meta)
    } else {
        let mut s = SensorConfig::small(nh, nw, nt);
        s.bin_width_ns = bw;
        s.max_range = s.record_range();
        (s, CubeMeta::default())
    };
    let mut sensor = sensor;
    if (sensor.rows, sensor.cols, sensor.bins) != (nh, nw, nt) {
        return Err(Error::Format("sidecar sensor does not match cube dimensions".into()));
    }
    sensor.bin_width_ns = bw;
    sensor.t0_offset_ns = t0;
    let reader = PwfReader { file: Mutex::new(r.into_inner()), base: header_len(ns), ns, nh, nw, nt };
    Ok(WavefrontCube {
        schedule: AngleSchedule::unchecked(entries, laser),
        sensor,
        meta,
        source: Source::File(Arc::new(reader)),
        lazy_noise: false,
    })
}

pub(super) struct PwfReader {
    file: Mutex<File>,
    base: u64,
    ns: usize,
    nh: usize,
    nw: usize,
    nt: usize,
}

impl PwfReader {
    /// Samples of image row `h` in `(s, w, t)` order.
    pub(super) fn read_row(&self, h: usize) -> Result<Vec<f32>> {
        let seg = self.nw * self.nt;
        let mut bytes = vec![0u8; seg * 4];
        let mut out = Vec::with_capacity(self.ns * seg);
        let mut f = self.file.lock().map_err(|_| Error::Format("cube reader poisoned".into()))?;
        for s in 0..self.ns {
            f.seek(SeekFrom::Start(self.base + ((s * self.nh + h) * seg) as u64 * 4))?;
            f.read_exact(&mut bytes)?;
            out.extend(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])));
        }
        Ok(out)
    }

    pub(super) fn extract_pixel(&self, row: &[f32], w: usize, buf: &mut [f64]) {
        let nt = self.nt;
        for s in 0..self.ns {
            let src = &row[(s * self.nw + w) * nt..(s * self.nw + w + 1) * nt];
            for (d, v) in buf[s * nt..(s + 1) * nt].iter_mut().zip(src) {
                *d = *v as f64;
            }
        }
    }
}
