//! Raw polarimetric wavefront rendering.
//!
//! Each acquired state `i` sees the pixel response through the emitter
//! optics `P_i` and the receiver optics `A_i`; the detector records the
//! intensity row of the result over time. The specular part of the
//! response arrives as the bare laser pulse, the diffuse part as the pulse
//! convolved with the material's exponential kernel.
//!
//! Cubes are lazy. A full-size cube (36 × 150 × 236 × 1488) does not fit in
//! memory, so the rendered cube keeps the per-sub-ray hit records and
//! evaluates waveforms on demand, pixel by pixel. Noise is applied lazily
//! as well, seeded per waveform from a counter so the result does not
//! depend on evaluation order or worker count.

mod pulse;
mod pwf;
mod schedule;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Poisson, StandardNormal};
use rand_pcg::Pcg64Mcg;
use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::pbrdf::{reflectance, MaterialDb, SurfaceInteraction};
use crate::polmath::Stokes;
use crate::scene::{CastResult, Scene, SensorConfig, SubrayHit};
use crate::{Error, Result, C_M_PER_NS};

pub use pulse::{emg, erfcx, gaussian, sigma_from_fwhm, support};
pub use pwf::{read_pwf, sidecar_path, write_pwf};
pub use schedule::{AngleSchedule, ScheduleReport, MAX_CONDITION};

/// Default emitted power multiplier, chosen so a diffuse plane at 30 m
/// peaks at roughly a fifth of the ADC range.
pub const DEFAULT_LASER_POWER: f64 = 1000.0;

/// Shot, read-out and digitizer model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseParams {
    /// Expected photon count per unit ideal intensity and unit laser power.
    pub photons_per_unit: f64,
    /// Gaussian read-noise std, ADC units.
    pub read_sigma: f64,
    pub adc_saturation: f64,
    pub dark_offset: f64,
    /// ADC units per detected photon.
    pub adc_gain: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self { photons_per_unit: 1e4, read_sigma: 2.0, adc_saturation: 4095.0, dark_offset: 0.0, adc_gain: 1.0 }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<()> {
        let v = [self.photons_per_unit, self.read_sigma, self.dark_offset, self.adc_gain];
        if v.iter().any(|x| !(*x >= 0.0 && x.is_finite())) || !(self.adc_saturation > 0.0) {
            return Err(Error::Config("noise parameters must be non-negative, saturation > 0".into()));
        }
        Ok(())
    }
}

/// Acquisition metadata carried alongside the samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeMeta {
    pub laser_power: f64,
    /// Present when samples are digitized ADC values; absent for ideal
    /// (noise-free, unit laser power) intensities.
    pub noise: Option<NoiseParams>,
    pub seed: u64,
}

impl Default for CubeMeta {
    fn default() -> Self {
        Self { laser_power: DEFAULT_LASER_POWER, noise: None, seed: 0 }
    }
}

impl CubeMeta {
    /// Multiplier from ideal intensity to expected ADC counts above dark.
    pub fn adc_per_unit(&self) -> f64 {
        match &self.noise {
            None => 1.0,
            Some(p) => p.photons_per_unit * self.laser_power * p.adc_gain,
        }
    }

    /// Converts a stored sample back to ideal intensity units.
    pub fn to_ideal(&self, x: f64) -> f64 {
        match &self.noise {
            None => x,
            Some(p) => {
                let k = self.adc_per_unit();
                if k > 0.0 {
                    (x - p.dark_offset) / k
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone)]
enum Source {
    /// Samples in `(s, h, w, t)` order.
    Dense(Arc<Vec<f64>>),
    Procedural(Arc<Procedural>),
    File(Arc<pwf::PwfReader>),
}

/// Raw measurement `S × H × W × T`.
#[derive(Clone)]
pub struct WavefrontCube {
    pub schedule: AngleSchedule,
    pub sensor: SensorConfig,
    pub meta: CubeMeta,
    source: Source,
    /// Noise still to be applied to the source samples on read.
    lazy_noise: bool,
}

impl std::fmt::Debug for WavefrontCube {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self.source {
            Source::Dense(_) => "dense",
            Source::Procedural(_) => "procedural",
            Source::File(_) => "file",
        };
        f.debug_struct("WavefrontCube")
            .field("dims", &self.dims())
            .field("source", &kind)
            .field("meta", &self.meta)
            .finish()
    }
}

impl WavefrontCube {
    /// In-memory cube from samples in `(s, h, w, t)` order.
    pub fn from_dense(schedule: AngleSchedule, sensor: SensorConfig, meta: CubeMeta, data: Vec<f64>) -> Result<Self> {
        let n = schedule.len() * sensor.pixels() * sensor.bins;
        if data.len() != n {
            return Err(Error::Config(format!("cube data has {} samples, expected {n}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("cube samples must be finite".into()));
        }
        Ok(Self { schedule, sensor, meta, source: Source::Dense(Arc::new(data)), lazy_noise: false })
    }

    /// `(S, H, W, T)`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.schedule.len(), self.sensor.rows, self.sensor.cols, self.sensor.bins)
    }

    pub fn is_noisy(&self) -> bool {
        self.meta.noise.is_some()
    }

    /// Waveforms of pixel `p` (`S × T`, state-major) in stored units.
    pub fn pixel(&self, p: usize) -> Result<Vec<f64>> {
        let (s, _, _, t) = self.dims();
        let mut buf = vec![0.0; s * t];
        match &self.source {
            Source::File(r) => {
                let row = r.read_row(p / self.sensor.cols)?;
                r.extract_pixel(&row, p % self.sensor.cols, &mut buf);
            }
            _ => self.fill_pixel(p, &mut buf)?,
        }
        Ok(buf)
    }

    fn fill_pixel(&self, p: usize, buf: &mut [f64]) -> Result<()> {
        let (ns, _, _, nt) = self.dims();
        match &self.source {
            Source::Dense(d) => {
                let np = self.sensor.pixels();
                for s in 0..ns {
                    let off = (s * np + p) * nt;
                    buf[s * nt..(s + 1) * nt].copy_from_slice(&d[off..off + nt]);
                }
            }
            Source::Procedural(pr) => pr.fill(p, buf)?,
            Source::File(_) => unreachable!("file-backed cubes are read by rows"),
        }
        if self.lazy_noise {
            if let Some(np) = &self.meta.noise {
                for s in 0..ns {
                    let mut rng = waveform_rng(self.meta.seed, (s * self.sensor.pixels() + p) as u64);
                    digitize(&mut buf[s * nt..(s + 1) * nt], np, self.meta.laser_power, &mut rng);
                }
            }
        }
        Ok(())
    }

    /// Apply `f(pixel_index, waveforms)` to every pixel; results in pixel order.
    /// `waveforms` is `S × T`, state-major, in stored units.
    pub fn map_pixels<R, F>(&self, exec: Exec, f: F) -> Result<Vec<R>>
    where
        R: Send,
        F: Fn(usize, &[f64]) -> R + Sync + Send,
    {
        let mut out = Vec::with_capacity(self.sensor.pixels());
        match &self.source {
            Source::File(_) => {
                for h in 0..self.sensor.rows {
                    out.extend(self.map_row(h, exec, &f)?);
                }
            }
            _ => {
                // one flat parallel loop balances better than row by row
                let res = exec.map(self.sensor.pixels(), |p| self.with_pixel(p, &f));
                for r in res {
                    out.push(r?);
                }
            }
        }
        Ok(out)
    }

    /// [`Self::map_pixels`] restricted to image row `h`.
    pub fn map_row<R, F>(&self, h: usize, exec: Exec, f: F) -> Result<Vec<R>>
    where
        R: Send,
        F: Fn(usize, &[f64]) -> R + Sync + Send,
    {
        let (ns, _, nw, nt) = self.dims();
        match &self.source {
            Source::File(r) => {
                let row = r.read_row(h)?;
                Ok(exec.map(nw, |w| {
                    let mut buf = vec![0.0; ns * nt];
                    r.extract_pixel(&row, w, &mut buf);
                    f(h * nw + w, &buf)
                }))
            }
            _ => exec.map(nw, |w| self.with_pixel(h * nw + w, &f)).into_iter().collect(),
        }
    }

    fn with_pixel<R>(&self, p: usize, f: impl Fn(usize, &[f64]) -> R) -> Result<R> {
        let (ns, _, _, nt) = self.dims();
        let mut buf = vec![0.0; ns * nt];
        self.fill_pixel(p, &mut buf)?;
        Ok(f(p, &buf))
    }

    /// All samples in `(s, h, w, t)` order.
    pub fn to_dense(&self, exec: Exec) -> Result<Vec<f64>> {
        let (ns, nh, nw, nt) = self.dims();
        let np = nh * nw;
        let px = self.map_pixels(exec, |_, b| b.to_vec())?;
        let mut out = vec![0.0; ns * np * nt];
        for (p, b) in px.iter().enumerate() {
            for s in 0..ns {
                out[(s * np + p) * nt..(s * np + p + 1) * nt].copy_from_slice(&b[s * nt..(s + 1) * nt]);
            }
        }
        Ok(out)
    }

    /// Evaluate everything into memory.
    pub fn materialize(&self, exec: Exec) -> Result<Self> {
        let data = self.to_dense(exec)?;
        Ok(Self { source: Source::Dense(Arc::new(data)), lazy_noise: false, ..self.clone() })
    }
}

/// Pixel responses kept as sub-ray hit records.
struct Procedural {
    hits: Vec<Vec<SubrayHit>>,
    weight: f64,
    materials: MaterialDb,
    gen: Vec<Stokes>,
    ana: Vec<[f64; 4]>,
    sigma: f64,
    bin_width: f64,
    t0: f64,
    bins: usize,
}

impl Procedural {
    fn fill(&self, p: usize, buf: &mut [f64]) -> Result<()> {
        buf.fill(0.0);
        let nt = self.bins;
        let mut g = Vec::new();
        let mut e = Vec::new();
        for hit in &self.hits[p] {
            let mat = self
                .materials
                .get(hit.material_id)
                .ok_or_else(|| Error::Config(format!("unknown material_id {}", hit.material_id)))?;
            let si = SurfaceInteraction::new(hit.normal, hit.omega, hit.range)?;
            let tm = reflectance(&si, mat)?;
            let tau = tm.diffuse_kernel_tau;
            let delay = 2.0 * hit.range / C_M_PER_NS + self.t0;
            let (lo, hi) = support(self.sigma, tau);
            let k0 = ((delay + lo) / self.bin_width).ceil().max(0.0) as usize;
            let k1 = (((delay + hi) / self.bin_width).floor()).min(nt as f64 - 1.0);
            if k1 < k0 as f64 {
                continue;
            }
            let k1 = k1 as usize;
            g.clear();
            e.clear();
            for k in k0..=k1 {
                let t = k as f64 * self.bin_width - delay;
                g.push(gaussian(t, self.sigma));
                e.push(emg(t, self.sigma, tau));
            }
            for (s, (gs, a)) in self.gen.iter().zip(&self.ana).enumerate() {
                let os = tm.specular_part.apply(gs);
                let od = tm.diffuse_part.apply(gs);
                let a_s = self.weight * (0..4).map(|j| a[j] * os.0[j]).sum::<f64>();
                let a_d = self.weight * (0..4).map(|j| a[j] * od.0[j]).sum::<f64>();
                let row = &mut buf[s * nt + k0..=s * nt + k1];
                for ((x, gv), ev) in row.iter_mut().zip(&g).zip(&e) {
                    *x += a_s * gv + a_d * ev;
                }
            }
        }
        Ok(())
    }
}

/// Noise-free cube for a cast scene; waveforms are evaluated on demand.
pub fn render_ideal(cast: &CastResult, scene: &Scene, schedule: &AngleSchedule, sensor: &SensorConfig) -> Result<WavefrontCube> {
    sensor.validate()?;
    scene.validate()?;
    if cast.maps.rows != sensor.rows || cast.maps.cols != sensor.cols || cast.hits.len() != sensor.pixels() {
        return Err(Error::Config(format!(
            "ray cast is {}×{}, sensor is {}×{}",
            cast.maps.rows, cast.maps.cols, sensor.rows, sensor.cols
        )));
    }
    if schedule.is_empty() {
        return Err(Error::Config("empty acquisition schedule".into()));
    }
    let pr = Procedural {
        hits: cast.hits.clone(),
        weight: 1.0 / cast.subrays_per_pixel.max(1) as f64,
        materials: scene.materials.clone(),
        gen: schedule.generator_states(),
        ana: schedule.analyzer_rows(),
        sigma: sigma_from_fwhm(sensor.pulse_fwhm_ns),
        bin_width: sensor.bin_width_ns,
        t0: sensor.t0_offset_ns,
        bins: sensor.bins,
    };
    Ok(WavefrontCube {
        schedule: schedule.clone(),
        sensor: sensor.clone(),
        meta: CubeMeta::default(),
        source: Source::Procedural(Arc::new(pr)),
        lazy_noise: false,
    })
}

/// Attach the shot/read-out noise model to a noise-free cube. Samples
/// become ADC values; evaluation stays lazy and deterministic in `seed`.
pub fn apply_noise(cube: &WavefrontCube, p: &NoiseParams, seed: u64) -> Result<WavefrontCube> {
    p.validate()?;
    if cube.meta.noise.is_some() {
        return Err(Error::Config("cube already carries noise".into()));
    }
    let mut out = cube.clone();
    out.meta.noise = Some(p.clone());
    out.meta.seed = seed;
    out.lazy_noise = true;
    Ok(out)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for waveform number `index` under `seed`.
pub fn waveform_rng(seed: u64, index: u64) -> Pcg64Mcg {
    Pcg64Mcg::seed_from_u64(splitmix(seed ^ splitmix(index)))
}

/// Digitize ideal samples in place: Poisson photon counts, ADC gain, read
/// noise, dark offset, clamp to the ADC range.
pub fn digitize<R: Rng>(samples: &mut [f64], p: &NoiseParams, laser_power: f64, rng: &mut R) {
    let scale = p.photons_per_unit * laser_power;
    for x in samples.iter_mut() {
        let lambda = *x * scale;
        let photons = if lambda > 0.0 {
            match Poisson::new(lambda) {
                Ok(d) => d.sample(rng),
                Err(_) => lambda,
            }
        } else {
            0.0
        };
        let read: f64 = rng.sample(StandardNormal);
        *x = (photons * p.adc_gain + p.read_sigma * read + p.dark_offset).clamp(0.0, p.adc_saturation);
    }
}

#[cfg(test)]
mod tests;
