use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use polwave::exec::Exec;
use polwave::io::Raster;
use polwave::material::{estimate_materials, MaterialFitConfig};
use polwave::metrics::{evaluate, MetricsReport};
use polwave::pbrdf::MaterialDb;
use polwave::polmath::{aop, dop};
use polwave::preprocess::{invert_ellipsometry, slice_peaks, DEFAULT_WINDOW};
use polwave::reconstruct::{
    export_features, modelfit_normals, pca_normals, sfp_dop_normals, tof_distance, unproject, MapSet, Method,
    ModelFitConfig, PcaConfig, ReconMaps, Refine, SfpConfig, FLAG_LOW_CONFIDENCE,
};
use polwave::scene::{cast_rays_with, generate_scene, SceneFile, SensorConfig, Template};
use polwave::simulate::{apply_noise, read_pwf, render_ideal, sidecar_path, write_pwf, AngleSchedule, NoiseParams};
use polwave::Error;
use serde::{Deserialize, Serialize};

use crate::manifest::{beside, Recorder};
use crate::{DiagnosticsArgs, EvalArgs, FitMaterialsArgs, ReconstructArgs, ScheduleArgs, SimulateArgs};

const EXEC: Exec = Exec::Parallel;

fn config_err(msg: String) -> anyhow::Error {
    Error::Config(msg).into()
}

fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn load_schedule(path: Option<&Path>) -> Result<AngleSchedule> {
    match path {
        Some(p) => load_json(p),
        None => Ok(AngleSchedule::default_schedule()),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p)?;
    }
    Ok(())
}

pub fn simulate(a: &SimulateArgs, threads: usize) -> Result<()> {
    let mut rec = Recorder::new("simulate", threads);
    let (scene, mut sensor) = match (&a.scene, &a.template) {
        (Some(p), _) => {
            rec.config(p)?;
            SceneFile::load(p).with_context(|| format!("scene {}", p.display()))?
        }
        (None, Some(t)) => (generate_scene(a.seed, t.parse::<Template>()?), SensorConfig::default()),
        (None, None) => return Err(config_err("simulate needs a scene file or --template".into())),
    };
    if let Some(p) = &a.sensor {
        rec.config(p)?;
        sensor = load_json(p)?;
        sensor.validate()?;
    }
    if let Some(p) = &a.schedule {
        rec.config(p)?;
    }
    let schedule = load_schedule(a.schedule.as_deref())?;
    let report = schedule.report();
    if !report.ok() {
        eprintln!(
            "warning: schedule has rank {} and condition {:.3e}; the cube cannot be inverted",
            report.rank, report.condition
        );
    }
    rec.seed("scene", a.seed);

    let cast = cast_rays_with(&scene, &sensor, EXEC);
    let mut cube = render_ideal(&cast, &scene, &schedule, &sensor)?;
    if let Some(p) = a.laser_power {
        if !(p > 0.0 && p.is_finite()) {
            return Err(config_err(format!("laser power must be positive, got {p}")));
        }
        cube.meta.laser_power = p;
    }
    let noise = match a.noise.as_str() {
        "off" => None,
        "default" => Some(NoiseParams::default()),
        path => {
            let p = PathBuf::from(path);
            rec.config(&p)?;
            Some(load_json::<NoiseParams>(&p)?)
        }
    };
    if let Some(n) = noise {
        cube = apply_noise(&cube, &n, a.seed)?;
        rec.seed("noise", a.seed);
    }
    ensure_parent(&a.out)?;
    write_pwf(&cube, &a.out, EXEC).with_context(|| format!("writing {}", a.out.display()))?;

    let gt = a.gt.clone().unwrap_or_else(|| {
        let stem = a.out.file_stem().and_then(|s| s.to_str()).unwrap_or("cube");
        a.out.with_file_name(format!("{stem}_gt"))
    });
    MapSet::from_scene(&cast.maps).write(&gt)?;
    let ids: Vec<f64> = cast.maps.material_id.iter().map(|m| f64::from(*m)).collect();
    Raster::from_f64(sensor.cols, sensor.rows, 1, &ids)?.write_pfm(&gt.join("material_id.pfm"))?;
    std::fs::write(gt.join("materials.json"), scene.materials.to_json()?)?;
    std::fs::write(gt.join("scene.json"), SceneFile::new(&scene, &sensor).to_json()?)?;

    rec.finish(&gt.join("manifest.json"), &[&a.out, &sidecar_path(&a.out), &gt])
}

/// Tunables of `reconstruct`, read from `--config`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ReconConfig {
    window: usize,
    sfp_eta: f64,
    sfp_dop_floor: f64,
    pca: PcaConfig,
    modelfit: ModelFitConfig,
}

impl Default for ReconConfig {
    fn default() -> Self {
        let sfp = SfpConfig::default();
        Self {
            window: DEFAULT_WINDOW,
            sfp_eta: sfp.eta,
            sfp_dop_floor: sfp.dop_floor,
            pca: PcaConfig::default(),
            modelfit: ModelFitConfig::default(),
        }
    }
}

/// Per-pixel `(specular, diffuse)` albedos from a ground-truth directory;
/// pixels without a known material get `fallback`.
fn albedo_map(gt: &Path, rows: usize, cols: usize, fallback: (f64, f64)) -> Result<Vec<(f64, f64)>> {
    let ids = Raster::read_pfm(&gt.join("material_id.pfm"))?;
    if (ids.height, ids.width) != (rows, cols) {
        return Err(config_err(format!(
            "{}: material map is {}×{}, cube is {rows}×{cols}",
            gt.display(),
            ids.height,
            ids.width
        )));
    }
    let db = MaterialDb::load(&gt.join("materials.json"))?;
    Ok(ids
        .data
        .iter()
        .map(|id| db.get(*id as u32).map_or(fallback, |m| (m.specular_albedo, m.diffuse_albedo)))
        .collect())
}

pub fn reconstruct(a: &ReconstructArgs, threads: usize) -> Result<()> {
    let mut rec = Recorder::new("reconstruct", threads);
    rec.input(&a.cube)?;
    let mut cfg: ReconConfig = match &a.config {
        Some(p) => {
            rec.config(p)?;
            load_json(p)?
        }
        None => ReconConfig::default(),
    };
    if let Some(eta) = a.eta {
        cfg.sfp_eta = eta;
    }
    let cube = read_pwf(&a.cube).with_context(|| format!("reading {}", a.cube.display()))?;
    let (rows, cols) = (cube.sensor.rows, cube.sensor.cols);
    let views = cube.sensor.view_dirs();
    let sliced = slice_peaks(&cube, cfg.window, EXEC)?;
    let needs_mm = matches!(a.method, Method::Sfp | Method::Modelfit) || a.export_features;
    let mm = if needs_mm { Some(invert_ellipsometry(&sliced, &cube.schedule, EXEC)?) } else { None };
    let refine = if a.method == Method::Argmax { Refine::None } else { Refine::Parabolic };
    let tof = tof_distance(&sliced, refine);

    let maps = match a.method {
        Method::Argmax | Method::Parabolic => tof,
        Method::Sfp => {
            let sc = SfpConfig { eta: cfg.sfp_eta, dop_floor: cfg.sfp_dop_floor };
            let mut m = sfp_dop_normals(mm.as_ref().expect("movie"), &cube.schedule.laser_stokes, &views, &sc)?;
            for p in 0..m.pixels() {
                m.distance[p] = tof.distance[p];
                if tof.confidence[p] == 0 {
                    m.confidence[p] = 0;
                    m.flags[p] |= FLAG_LOW_CONFIDENCE;
                }
            }
            m
        }
        Method::Pca => {
            let pc = unproject(&tof.distance, &tof.confidence, &views);
            pca_normals(&pc, rows, cols, &views, &cfg.pca, EXEC)?
        }
        Method::Modelfit => {
            let mut mc = cfg.modelfit.clone();
            if let Some(gt) = &a.albedo_from {
                rec.input(gt)?;
                mc.albedo_map = Some(albedo_map(gt, rows, cols, (mc.specular_albedo, mc.diffuse_albedo))?);
            }
            modelfit_normals(mm.as_ref().expect("movie"), &tof.distance, &tof.confidence, &cube.sensor, &mc, EXEC)?
        }
    };
    let mut params = serde_json::to_value(&cfg)?;
    params["albedo_from_ground_truth"] = serde_json::Value::Bool(a.albedo_from.is_some());
    maps.write(&a.out, params)?;
    if a.export_features {
        export_features(&sliced, mm.as_ref().expect("movie"), &views)?.write(&a.out.join("features.pfx"))?;
    }
    report_coverage(&maps);
    rec.finish(&a.out.join("manifest.json"), &[&a.out])
}

fn report_coverage(maps: &ReconMaps) {
    let confident = maps.confidence.iter().filter(|c| **c == 1).count();
    eprintln!("{} confident pixels of {}", confident, maps.pixels());
}

pub fn fit_materials(a: &FitMaterialsArgs, threads: usize) -> Result<()> {
    let mut rec = Recorder::new("fit-materials", threads);
    rec.input(&a.cube)?;
    rec.input(&a.normals)?;
    let mut cfg: MaterialFitConfig = match &a.config {
        Some(p) => {
            rec.config(p)?;
            load_json(p)?
        }
        None => MaterialFitConfig::default(),
    };
    let cube = read_pwf(&a.cube).with_context(|| format!("reading {}", a.cube.display()))?;
    let (rows, cols) = (cube.sensor.rows, cube.sensor.cols);
    let geo = MapSet::read(&a.normals)?;
    if (geo.rows, geo.cols) != (rows, cols) {
        return Err(config_err(format!(
            "normals are {}×{}, cube is {rows}×{cols}",
            geo.rows, geo.cols
        )));
    }
    if let Some(gt) = &a.albedo_from {
        rec.input(gt)?;
        cfg.albedo_map = Some(albedo_map(gt, rows, cols, (cfg.specular_albedo, cfg.diffuse_albedo))?);
    }
    let segments = match &a.segments_from {
        Some(gt) => {
            let ids = Raster::read_pfm(&gt.join("material_id.pfm"))?;
            if (ids.height, ids.width) != (rows, cols) {
                return Err(config_err(format!("{}: segment map does not match the cube", gt.display())));
            }
            Some(ids.data.iter().map(|v| *v as u32).collect::<Vec<u32>>())
        }
        None => None,
    };
    // stored normals are f32; restore unit length before the fit checks it
    let normals: Vec<_> = geo.normal.iter().map(|n| if n.norm() > 0.0 { n.normalize() } else { *n }).collect();
    let sliced = slice_peaks(&cube, DEFAULT_WINDOW, EXEC)?;
    let mm = invert_ellipsometry(&sliced, &cube.schedule, EXEC)?;
    let mut maps = estimate_materials(&mm, &normals, &geo.distance, &geo.confidence, &cube.sensor, &cfg, EXEC)?;
    if a.average {
        maps.average_segments(segments.as_deref().expect("segments"))?;
    }
    maps.write(&a.out, segments.as_deref())?;
    rec.finish(&a.out.join("manifest.json"), &[&a.out])
}

pub fn eval(a: &EvalArgs, threads: usize) -> Result<()> {
    let mut rec = Recorder::new("eval", threads);
    rec.input(&a.pred)?;
    rec.input(&a.gt)?;
    let pred = MapSet::read(&a.pred).with_context(|| format!("prediction {}", a.pred.display()))?;
    let gt = MapSet::read(&a.gt).with_context(|| format!("ground truth {}", a.gt.display()))?;
    let report = evaluate(&pred, &gt)?;
    ensure_parent(&a.out)?;
    std::fs::write(&a.out, report.to_json()?)?;
    let mut outs: Vec<&Path> = vec![&a.out];
    if let Some(csv) = &a.csv {
        ensure_parent(csv)?;
        let mut text = if csv.exists() { std::fs::read_to_string(csv)? } else { format!("{}\n", MetricsReport::CSV_HEADER) };
        text.push_str(&report.csv_row());
        text.push('\n');
        std::fs::write(csv, text)?;
        outs.push(csv);
    }
    println!("{}", report.to_json()?);
    rec.finish(&beside(&a.out), &outs)
}

pub fn schedule(a: &ScheduleArgs) -> Result<()> {
    let mut s = load_schedule(a.file.as_deref())?;
    if let Some(n) = a.states {
        if n == 0 || n > s.entries.len() {
            return Err(config_err(format!("--states must lie in 1..={}", s.entries.len())));
        }
        s.entries.truncate(n);
    }
    let rep = s.report();
    println!("{}", serde_json::to_string_pretty(&rep)?);
    if a.check && !rep.ok() {
        anyhow::bail!(
            "schedule check failed: {} states, rank {}, condition {:.3e}",
            rep.states,
            rep.rank,
            rep.condition
        );
    }
    Ok(())
}

pub fn diagnostics(a: &DiagnosticsArgs, threads: usize) -> Result<()> {
    let mut rec = Recorder::new("diagnostics", threads);
    rec.input(&a.cube)?;
    let cube = read_pwf(&a.cube).with_context(|| format!("reading {}", a.cube.display()))?;
    let (_, rows, cols, nt) = cube.dims();
    let bw = cube.sensor.bin_width_ns;
    let meta = cube.meta.clone();
    // state 0 of the default schedule has every optic at 0 rad
    let intensity = cube.map_pixels(EXEC, |_, w| w[..nt].iter().map(|x| meta.to_ideal(*x)).sum::<f64>() * bw)?;
    let sliced = slice_peaks(&cube, DEFAULT_WINDOW, EXEC)?;
    let mm = invert_ellipsometry(&sliced, &cube.schedule, EXEC)?;
    let (mut dop_map, mut aop_map) = (vec![0.0; rows * cols], vec![0.0; rows * cols]);
    for p in 0..rows * cols {
        if sliced.confidence[p] == 0 {
            continue;
        }
        let s = mm.peak(p).apply(&cube.schedule.laser_stokes);
        dop_map[p] = dop(&s).unwrap_or(0.0);
        aop_map[p] = aop(&s).unwrap_or(0.0);
    }
    std::fs::create_dir_all(&a.out)?;
    Raster::from_f64(cols, rows, 1, &intensity)?.write_pfm(&a.out.join("intensity.pfm"))?;
    Raster::from_f64(cols, rows, 1, &dop_map)?.write_pfm(&a.out.join("dop.pfm"))?;
    Raster::from_f64(cols, rows, 1, &aop_map)?.write_pfm(&a.out.join("aop.pfm"))?;
    rec.finish(&a.out.join("manifest.json"), &[&a.out])
}
