//! Procedural scenes and monostatic ray casting.
//!
//! The sensor sits at the origin of the camera frame (x right, y down,
//! z forward). Pixels lie on an equal-angle grid across the field of view;
//! each pixel fires a stratified, jittered bundle of sub-rays to model beam
//! divergence.

use std::path::{Path, PathBuf};

use nalgebra::Rotation3;
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::pbrdf::{Material, MaterialDb, Vec3};
use crate::{Error, Result, C_M_PER_NS};

mod generate;

pub use generate::{generate_scene, Template};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    pub rows: usize,
    pub cols: usize,
    pub vfov_deg: f64,
    pub hfov_deg: f64,
    pub bins: usize,
    pub bin_width_ns: f64,
    pub max_range: f64,
    pub pulse_fwhm_ns: f64,
    /// Sub-rays per pixel along each axis (total `beam_subrays²`).
    pub beam_subrays: usize,
    pub t0_offset_ns: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            rows: 150,
            cols: 236,
            vfov_deg: 23.95,
            hfov_deg: 31.53,
            bins: 1488,
            bin_width_ns: 1.0,
            max_range: 223.2,
            pulse_fwhm_ns: 3.0,
            beam_subrays: 4,
            t0_offset_ns: 0.0,
        }
    }
}

impl SensorConfig {
    /// Default optics with a different raster and record length;
    /// `max_range` follows the record length.
    pub fn small(rows: usize, cols: usize, bins: usize) -> Self {
        let d = Self::default();
        let mut s = Self {
            rows,
            cols,
            vfov_deg: d.vfov_deg * rows as f64 / d.rows as f64,
            hfov_deg: d.hfov_deg * cols as f64 / d.cols as f64,
            bins,
            ..d
        };
        s.max_range = s.record_range();
        s
    }

    /// Range covered by the record, `T · Δt · c / 2`.
    pub fn record_range(&self) -> f64 {
        self.bins as f64 * self.bin_width_ns * C_M_PER_NS / 2.0
    }

    /// Range covered by one bin.
    pub fn bin_range(&self) -> f64 {
        self.bin_width_ns * C_M_PER_NS / 2.0
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            self.vfov_deg,
            self.hfov_deg,
            self.bin_width_ns,
            self.max_range,
            self.pulse_fwhm_ns,
        ];
        if self.rows == 0 || self.cols == 0 || self.bins == 0 || self.beam_subrays == 0 {
            return Err(Error::Config("sensor dimensions must be positive".into()));
        }
        if pos.iter().any(|v| !(*v > 0.0 && v.is_finite())) || !self.t0_offset_ns.is_finite() {
            return Err(Error::Config("sensor parameters must be positive and finite".into()));
        }
        if self.vfov_deg >= 180.0 || self.hfov_deg >= 180.0 {
            return Err(Error::Config("field of view must be below 180°".into()));
        }
        let rr = self.record_range();
        if ((rr - self.max_range) / self.max_range).abs() > 1e-3 {
            return Err(Error::Config(format!(
                "max_range {} inconsistent with bins·bin_width·c/2 = {rr:.3}",
                self.max_range
            )));
        }
        Ok(())
    }

    /// Direction through fractional position `(u, v) ∈ [0,1)²` of pixel `(row, col)`.
    pub fn ray_dir(&self, row: usize, col: usize, u: f64, v: f64) -> Vec3 {
        let vf = self.vfov_deg.to_radians();
        let hf = self.hfov_deg.to_radians();
        let el = vf / 2.0 - (row as f64 + v) * vf / self.rows as f64;
        let az = -hf / 2.0 + (col as f64 + u) * hf / self.cols as f64;
        Vec3::new(el.cos() * az.sin(), -el.sin(), el.cos() * az.cos())
    }

    /// Per-pixel viewing direction (pixel center).
    pub fn view_dir(&self, row: usize, col: usize) -> Vec3 {
        self.ray_dir(row, col, 0.5, 0.5)
    }

    pub fn view_dirs(&self) -> Vec<Vec3> {
        (0..self.pixels()).map(|p| self.view_dir(p / self.cols, p % self.cols)).collect()
    }

    /// Sub-ray sample positions inside a pixel: stratified grid, jittered
    /// deterministically by pixel index.
    pub fn subray_offsets(&self, pixel: usize) -> Vec<(f64, f64)> {
        let k = self.beam_subrays;
        if k == 1 {
            return vec![(0.5, 0.5)];
        }
        let mut rng = Pcg64::seed_from_u64(0x9e37_79b9_7f4a_7c15 ^ pixel as u64);
        let mut out = Vec::with_capacity(k * k);
        for j in 0..k {
            for i in 0..k {
                let (ju, jv): (f64, f64) = (rng.random(), rng.random());
                out.push(((i as f64 + ju) / k as f64, (j as f64 + jv) / k as f64));
            }
        }
        out
    }
}

/// Rigid placement: rotation (Euler angles about x, y, z in degrees,
/// applied in that order) followed by translation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose {
    pub translation: [f64; 3],
    #[serde(default)]
    pub rotation_deg: [f64; 3],
}

impl Pose {
    pub fn at(x: f64, y: f64, z: f64) -> Self {
        Self { translation: [x, y, z], rotation_deg: [0.0; 3] }
    }

    pub fn rotated(mut self, rx: f64, ry: f64, rz: f64) -> Self {
        self.rotation_deg = [rx, ry, rz];
        self
    }

    fn rotation(&self) -> Rotation3<f64> {
        let [a, b, c] = self.rotation_deg;
        Rotation3::from_euler_angles(a.to_radians(), b.to_radians(), c.to_radians())
    }

    fn origin(&self) -> Vec3 {
        Vec3::from(self.translation)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveKind {
    /// Local z = 0 plane; `extent` = half sizes `[x, y]` (empty = unbounded).
    Plane,
    /// `extent = [radius]`.
    Sphere,
    /// `extent` = half sizes `[x, y, z]`.
    Box,
    /// Triangle soup in `triangles` (requires the `mesh` feature).
    TriangleMesh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenePrimitive {
    pub kind: PrimitiveKind,
    pub pose: Pose,
    #[serde(default)]
    pub extent: Vec<f64>,
    pub material_id: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub triangles: Vec<[[f64; 3]; 3]>,
}

impl ScenePrimitive {
    pub fn plane(pose: Pose, half: Option<[f64; 2]>, material_id: u32) -> Self {
        Self {
            kind: PrimitiveKind::Plane,
            pose,
            extent: half.map(|h| h.to_vec()).unwrap_or_default(),
            material_id,
            triangles: vec![],
        }
    }

    pub fn sphere(center: [f64; 3], radius: f64, material_id: u32) -> Self {
        Self {
            kind: PrimitiveKind::Sphere,
            pose: Pose::at(center[0], center[1], center[2]),
            extent: vec![radius],
            material_id,
            triangles: vec![],
        }
    }

    pub fn cuboid(pose: Pose, half: [f64; 3], material_id: u32) -> Self {
        Self { kind: PrimitiveKind::Box, pose, extent: half.to_vec(), material_id, triangles: vec![] }
    }

    fn validate(&self, index: usize) -> Result<()> {
        let err = |m: &str| Err(Error::Config(format!("primitive {index} ({:?}): {m}", self.kind)));
        if self.pose.translation.iter().chain(&self.pose.rotation_deg).any(|v| !v.is_finite()) {
            return err("non-finite pose");
        }
        let positive = self.extent.iter().all(|v| *v > 0.0 && v.is_finite());
        match self.kind {
            PrimitiveKind::Plane if !(self.extent.is_empty() || self.extent.len() == 2) || !positive => {
                err("plane extent must be empty or two positive half sizes")
            }
            PrimitiveKind::Sphere if self.extent.len() != 1 || !positive => err("sphere extent must be [radius > 0]"),
            PrimitiveKind::Box if self.extent.len() != 3 || !positive => err("box extent must be three positive half sizes"),
            PrimitiveKind::TriangleMesh if !cfg!(feature = "mesh") => err("mesh support not enabled (feature `mesh`)"),
            PrimitiveKind::TriangleMesh if self.triangles.is_empty() => err("mesh without triangles"),
            _ => Ok(()),
        }
    }

    /// Nearest hit along `origin + t·dir` with `t > 1e-9`; the returned
    /// normal is unit length and faces the ray origin.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, Vec3)> {
        let rot = self.pose.rotation();
        let o = rot.inverse() * (origin - self.pose.origin());
        let d = rot.inverse() * dir;
        let (t, n_local) = match self.kind {
            PrimitiveKind::Plane => intersect_plane(&o, &d, &self.extent)?,
            PrimitiveKind::Sphere => intersect_sphere(&o, &d, self.extent[0])?,
            PrimitiveKind::Box => intersect_box(&o, &d, [self.extent[0], self.extent[1], self.extent[2]])?,
            PrimitiveKind::TriangleMesh => intersect_mesh(&o, &d, &self.triangles)?,
        };
        let mut n = rot * n_local;
        if n.dot(dir) > 0.0 {
            n = -n;
        }
        Some((t, n.normalize()))
    }
}

const T_MIN: f64 = 1e-9;

fn intersect_plane(o: &Vec3, d: &Vec3, half: &[f64]) -> Option<(f64, Vec3)> {
    if d.z.abs() < 1e-15 {
        return None;
    }
    let t = -o.z / d.z;
    if t <= T_MIN {
        return None;
    }
    if half.len() == 2 {
        let p = o + d * t;
        if p.x.abs() > half[0] || p.y.abs() > half[1] {
            return None;
        }
    }
    Some((t, Vec3::z()))
}

fn intersect_sphere(o: &Vec3, d: &Vec3, r: f64) -> Option<(f64, Vec3)> {
    let a = d.norm_squared();
    let b = o.dot(d);
    let c = o.norm_squared() - r * r;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    // numerically stable roots
    let q = -(b + b.signum() * sq);
    let (mut t0, mut t1) = (q / a, c / q);
    if t0 > t1 {
        std::mem::swap(&mut t0, &mut t1);
    }
    let t = if t0 > T_MIN { t0 } else if t1 > T_MIN { t1 } else { return None };
    Some((t, (o + d * t) / r))
}

fn intersect_box(o: &Vec3, d: &Vec3, h: [f64; 3]) -> Option<(f64, Vec3)> {
    let (mut tn, mut tf) = (f64::NEG_INFINITY, f64::INFINITY);
    let (mut an, mut af) = (0usize, 0usize);
    for i in 0..3 {
        if d[i].abs() < 1e-300 {
            if o[i].abs() > h[i] {
                return None;
            }
            continue;
        }
        let mut t1 = (-h[i] - o[i]) / d[i];
        let mut t2 = (h[i] - o[i]) / d[i];
        if t1 > t2 {
            std::mem::swap(&mut t1, &mut t2);
        }
        if t1 > tn {
            tn = t1;
            an = i;
        }
        if t2 < tf {
            tf = t2;
            af = i;
        }
    }
    if tn > tf {
        return None;
    }
    let (t, axis) = if tn > T_MIN { (tn, an) } else if tf > T_MIN { (tf, af) } else { return None };
    let p = o + d * t;
    let mut n = Vec3::zeros();
    n[axis] = p[axis].signum();
    Some((t, n))
}

#[cfg(feature = "mesh")]
fn intersect_mesh(o: &Vec3, d: &Vec3, tris: &[[[f64; 3]; 3]]) -> Option<(f64, Vec3)> {
    let mut best: Option<(f64, Vec3)> = None;
    for tri in tris {
        let (v0, v1, v2) = (Vec3::from(tri[0]), Vec3::from(tri[1]), Vec3::from(tri[2]));
        let (e1, e2) = (v1 - v0, v2 - v0);
        let p = d.cross(&e2);
        let det = e1.dot(&p);
        if det.abs() < 1e-15 {
            continue;
        }
        let inv = 1.0 / det;
        let s = o - v0;
        let u = s.dot(&p) * inv;
        if !(0.0..=1.0).contains(&u) {
            continue;
        }
        let q = s.cross(&e1);
        let v = d.dot(&q) * inv;
        if v < 0.0 || u + v > 1.0 {
            continue;
        }
        let t = e2.dot(&q) * inv;
        if t > T_MIN && best.is_none_or(|(bt, _)| t < bt) {
            best = Some((t, e1.cross(&e2).normalize()));
        }
    }
    best
}

#[cfg(not(feature = "mesh"))]
fn intersect_mesh(_o: &Vec3, _d: &Vec3, _tris: &[[[f64; 3]; 3]]) -> Option<(f64, Vec3)> {
    None
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub primitives: Vec<ScenePrimitive>,
    pub materials: MaterialDb,
}

impl Scene {
    pub fn new(primitives: Vec<ScenePrimitive>, materials: MaterialDb) -> Self {
        Self { primitives, materials }
    }

    pub fn validate(&self) -> Result<()> {
        self.materials.validate()?;
        for (i, p) in self.primitives.iter().enumerate() {
            p.validate(i)?;
            if self.materials.get(p.material_id).is_none() {
                return Err(Error::Config(format!(
                    "primitive {i} ({:?}) references unknown material_id {}",
                    p.kind, p.material_id
                )));
            }
        }
        Ok(())
    }

    /// Nearest hit from the sensor origin: `(range, normal, material_id)`.
    pub fn trace(&self, dir: &Vec3) -> Option<(f64, Vec3, u32)> {
        let o = Vec3::zeros();
        let mut best: Option<(f64, Vec3, u32)> = None;
        for p in &self.primitives {
            if let Some((t, n)) = p.intersect(&o, dir) {
                if best.as_ref().is_none_or(|b| t < b.0) {
                    best = Some((t, n, p.material_id));
                }
            }
        }
        best
    }

    pub fn material(&self, id: u32) -> Option<&Material> {
        self.materials.get(id)
    }
}

/// One sub-ray hit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubrayHit {
    pub range: f64,
    pub normal: Vec3,
    pub omega: Vec3,
    pub material_id: u32,
}

/// Per-pixel ground truth rasters, row-major `H × W`.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneMaps {
    pub rows: usize,
    pub cols: usize,
    /// m, 0 where nothing was hit.
    pub distance: Vec<f64>,
    pub normal: Vec<Vec3>,
    pub material_id: Vec<u32>,
    pub cos_phi: Vec<f64>,
    pub confidence: Vec<u8>,
    /// Fraction of sub-rays that hit something.
    pub hit_fraction: Vec<f64>,
}

/// Ray casting output: maps plus the raw sub-ray hits, grouped per pixel.
#[derive(Clone, Debug)]
pub struct CastResult {
    pub maps: SceneMaps,
    /// Sub-rays fired per pixel.
    pub subrays_per_pixel: usize,
    pub hits: Vec<Vec<SubrayHit>>,
}

pub fn cast_rays(scene: &Scene, sensor: &SensorConfig) -> CastResult {
    cast_rays_with(scene, sensor, Exec::default())
}

pub fn cast_rays_with(scene: &Scene, sensor: &SensorConfig, exec: Exec) -> CastResult {
    let hits: Vec<Vec<SubrayHit>> = exec.map(sensor.pixels(), |p| {
        let (r, c) = (p / sensor.cols, p % sensor.cols);
        sensor
            .subray_offsets(p)
            .into_iter()
            .filter_map(|(u, v)| {
                let dir = sensor.ray_dir(r, c, u, v);
                scene.trace(&dir).and_then(|(t, n, m)| {
                    (t <= sensor.max_range).then_some(SubrayHit { range: t, normal: n, omega: dir, material_id: m })
                })
            })
            .collect()
    });
    let n_sub = sensor.beam_subrays * sensor.beam_subrays;
    let np = sensor.pixels();
    let mut maps = SceneMaps {
        rows: sensor.rows,
        cols: sensor.cols,
        distance: vec![0.0; np],
        normal: vec![Vec3::zeros(); np],
        material_id: vec![0; np],
        cos_phi: vec![0.0; np],
        confidence: vec![0; np],
        hit_fraction: vec![0.0; np],
    };
    for (p, hs) in hits.iter().enumerate() {
        if hs.is_empty() {
            continue;
        }
        let k = hs.len() as f64;
        maps.distance[p] = hs.iter().map(|h| h.range).sum::<f64>() / k;
        let n: Vec3 = hs.iter().map(|h| h.normal).sum();
        maps.normal[p] = if n.norm() > 0.0 { n.normalize() } else { -sensor.view_dir(p / sensor.cols, p % sensor.cols) };
        maps.cos_phi[p] = hs.iter().map(|h| h.normal.dot(&-h.omega).max(0.0)).sum::<f64>() / k;
        maps.material_id[p] = mode(hs.iter().map(|h| h.material_id));
        maps.confidence[p] = 1;
        maps.hit_fraction[p] = k / n_sub as f64;
    }
    CastResult { maps, subrays_per_pixel: n_sub, hits }
}

fn mode(ids: impl Iterator<Item = u32>) -> u32 {
    let mut counts = std::collections::BTreeMap::new();
    for id in ids {
        *counts.entry(id).or_insert(0usize) += 1;
    }
    // ties go to the lowest id
    counts.into_iter().fold((0, 0), |best, (id, c)| if c > best.1 { (id, c) } else { best }).0
}

/// Materials block of a scene file: inline map or a path to a MaterialDB file.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum MaterialsRef {
    Path(PathBuf),
    Inline(MaterialDb),
}

impl<'de> Deserialize<'de> for MaterialsRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::String(p) => Ok(Self::Path(p.into())),
            v => MaterialDb::deserialize(v).map(Self::Inline).map_err(D::Error::custom),
        }
    }
}

/// On-disk scene description (`"schema": 1`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub schema: u32,
    #[serde(default)]
    pub sensor: SensorConfig,
    #[serde(default)]
    pub materials: Option<MaterialsRef>,
    pub primitives: Vec<ScenePrimitive>,
}

impl SceneFile {
    pub const SCHEMA: u32 = 1;

    pub fn new(scene: &Scene, sensor: &SensorConfig) -> Self {
        Self {
            schema: Self::SCHEMA,
            sensor: sensor.clone(),
            materials: Some(MaterialsRef::Inline(scene.materials.clone())),
            primitives: scene.primitives.clone(),
        }
    }

    /// Parse and validate; relative material paths resolve against `base`.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<(Scene, SensorConfig)> {
        let f: SceneFile = serde_json::from_str(text).map_err(|e| Error::Config(format!("scene file: {e}")))?;
        if f.schema != Self::SCHEMA {
            return Err(Error::Config(format!("unsupported scene schema {} (expected 1)", f.schema)));
        }
        f.sensor.validate()?;
        let materials = match f.materials {
            None => MaterialDb::defaults(),
            Some(MaterialsRef::Inline(db)) => db,
            Some(MaterialsRef::Path(p)) => {
                let p = match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p,
                };
                MaterialDb::load(&p)?
            }
        };
        let scene = Scene::new(f.primitives, materials);
        scene.validate()?;
        Ok((scene, f.sensor))
    }

    pub fn load(path: &Path) -> Result<(Scene, SensorConfig)> {
        Self::parse(&std::fs::read_to_string(path)?, path.parent())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
