use super::*;
use crate::pbrdf::Material;
use crate::polmath::OpticAngles;
use crate::scene::{cast_rays, Pose, ScenePrimitive};

fn matte(tau: f64) -> Material {
    Material {
        name: "matte".into(),
        eta: 1.5,
        roughness: 0.3,
        spec_depol: 0.8,
        diff_depol: 0.6,
        diff_tau: tau,
        diffuse_albedo: 0.5,
        specular_albedo: 0.5,
        material_id: 9,
    }
}

fn plane_scene(z: f64, tilt_deg: f64, mat: Material) -> Scene {
    let mut db = MaterialDb::default();
    db.insert(mat);
    Scene::new(vec![ScenePrimitive::plane(Pose::at(0.0, 0.0, z).rotated(0.0, tilt_deg, 0.0), None, 9)], db)
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold((0, f64::MIN), |b, (i, x)| if *x > b.1 { (i, *x) } else { b }).0
}

fn state_mean(buf: &[f64], ns: usize, nt: usize) -> Vec<f64> {
    (0..nt).map(|t| (0..ns).map(|s| buf[s * nt + t]).sum::<f64>() / ns as f64).collect()
}

#[test]
fn head_on_peak_bin() {
    let sensor = SensorConfig::small(3, 3, 400);
    let sched = AngleSchedule::default_schedule();
    for id in 1..=5 {
        let mut mat = MaterialDb::defaults().get(id).unwrap().clone();
        mat.material_id = 9;
        let scene = plane_scene(30.0, 0.0, mat);
        let cube = render_ideal(&cast_rays(&scene, &sensor), &scene, &sched, &sensor).unwrap();
        assert_eq!(argmax(&state_mean(&cube.pixel(4).unwrap(), 36, 400)), 200, "material {id}");
    }
    let scene = plane_scene(30.0, 0.0, matte(0.1));
    let mut s2 = sensor.clone();
    s2.t0_offset_ns = 7.0;
    let cube = render_ideal(&cast_rays(&scene, &s2), &scene, &sched, &s2).unwrap();
    assert_eq!(argmax(&state_mean(&cube.pixel(4).unwrap(), 36, 400)), 207);
}

#[test]
fn symmetric_return_peaks_at_rounded_delay() {
    use rand::Rng;
    let mut sensor = SensorConfig::small(1, 1, 1488);
    sensor.beam_subrays = 1;
    let sched = AngleSchedule::default_schedule();
    let mut rng = waveform_rng(9, 9);
    let mut mat = matte(0.5);
    mat.diffuse_albedo = 0.0;
    for _ in 0..200 {
        let r = rng.random_range(1.0..220.0);
        let frac = (2.0 * r / C_M_PER_NS).fract();
        if (frac - 0.5).abs() < 1e-9 {
            continue;
        }
        let scene = plane_scene(r, 0.0, mat.clone());
        let cube = render_ideal(&cast_rays(&scene, &sensor), &scene, &sched, &sensor).unwrap();
        let expect = (2.0 * r / C_M_PER_NS).round() as usize;
        assert_eq!(argmax(&state_mean(&cube.pixel(0).unwrap(), 36, 1488)), expect, "range {r}");
    }
}

#[test]
fn crossed_polarizer_extinguishes_mirror_return() {
    let mut mat = matte(0.5);
    mat.diffuse_albedo = 0.0;
    mat.spec_depol = 1.0;
    let scene = plane_scene(20.0, 0.0, mat);
    let mut sensor = SensorConfig::small(1, 1, 300);
    sensor.beam_subrays = 1;
    let half = std::f64::consts::FRAC_PI_2;
    let entries = vec![OpticAngles::new(0.0, 0.0, 0.0, 0.0), OpticAngles::new(0.0, 0.0, 0.0, half)];
    let sched = AngleSchedule::unchecked(entries, Stokes::HORIZONTAL);
    let cube = render_ideal(&cast_rays(&scene, &sensor), &scene, &sched, &sensor).unwrap();
    let buf = cube.pixel(0).unwrap();
    let parallel = buf[..300].iter().cloned().fold(0.0, f64::max);
    let crossed = buf[300..].iter().cloned().fold(0.0, f64::max);
    assert!(parallel > 1e-5);
    assert!(crossed < 1e-12 * parallel, "{crossed} vs {parallel}");
}

fn fwhm(v: &[f64]) -> f64 {
    let k = argmax(v);
    let half = v[k] / 2.0;
    let cross = |mut i: usize, step: isize| {
        while v[i] > half {
            i = (i as isize + step) as usize;
        }
        let j = (i as isize - step) as usize;
        i as f64 + (half - v[i]) / (v[j] - v[i]) * (j as f64 - i as f64)
    };
    cross(k, 1) - cross(k, -1)
}

#[test]
fn oblique_plane_widens_pulse() {
    let sched = AngleSchedule::default_schedule();
    // a few wide pixels so the footprint spans several bins when tilted
    let mut sensor = SensorConfig::small(1, 1, 400);
    sensor.vfov_deg = 2.0;
    sensor.hfov_deg = 2.0;
    let mut w = Vec::new();
    for tilt in [0.0, 60.0] {
        let scene = plane_scene(30.0, tilt, matte(0.05));
        let cube = render_ideal(&cast_rays(&scene, &sensor), &scene, &sched, &sensor).unwrap();
        w.push(fwhm(&state_mean(&cube.pixel(0).unwrap(), 36, 400)));
    }
    assert!(w[1] > w[0] * 1.05, "{w:?}");
}

fn render_mean(scene: &Scene, sched: &AngleSchedule, sensor: &SensorConfig) -> Vec<f64> {
    render_ideal(&cast_rays(scene, sensor), scene, sched, sensor).unwrap().to_dense(Exec::Sequential).unwrap()
}

#[test]
fn linear_in_laser_and_albedos() {
    let mut sensor = SensorConfig::small(4, 5, 500);
    sensor.vfov_deg = 10.0;
    sensor.hfov_deg = 10.0;
    let mut db = MaterialDb::defaults();
    db.insert(matte(0.3));
    let base = Scene::new(
        vec![
            ScenePrimitive::plane(Pose::at(0.0, 0.0, 40.0).rotated(20.0, 35.0, 0.0), None, 5),
            ScenePrimitive::sphere([0.5, 0.3, 25.0], 2.0, 9),
            ScenePrimitive::sphere([-2.0, -1.0, 30.0], 1.5, 2),
        ],
        db,
    );
    let sched = AngleSchedule::default_schedule();
    let with_laser = |s: Stokes| AngleSchedule::unchecked(sched.entries.clone(), s);
    let (s1, s2) = (Stokes([1.0, 0.3, -0.2, 0.5]), Stokes([0.7, -0.1, 0.4, 0.2]));
    let a = render_mean(&base, &with_laser(s1), &sensor);
    let b = render_mean(&base, &with_laser(s2), &sensor);
    let ab = render_mean(&base, &with_laser(Stokes([1.7 * 2.0, 0.2 * 2.0, 0.2 * 2.0, 0.7 * 2.0])), &sensor);
    let scale = a.iter().chain(&b).fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(scale > 0.0);
    for i in 0..a.len() {
        assert!((ab[i] - 2.0 * (a[i] + b[i])).abs() <= 1e-9 * scale);
    }
    // diffuse and specular albedo superposition
    let mut only_d = base.clone();
    let mut only_s = base.clone();
    for m in only_d.materials.materials.values_mut() {
        m.specular_albedo = 0.0;
    }
    for m in only_s.materials.materials.values_mut() {
        m.diffuse_albedo = 0.0;
    }
    let full = render_mean(&base, &sched, &sensor);
    let d = render_mean(&only_d, &sched, &sensor);
    let s = render_mean(&only_s, &sched, &sensor);
    let scale = full.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..full.len() {
        assert!((full[i] - d[i] - s[i]).abs() <= 1e-9 * scale);
    }
}

#[test]
fn dims_mismatch_rejected() {
    let scene = plane_scene(10.0, 0.0, matte(0.5));
    let cast = cast_rays(&scene, &SensorConfig::small(2, 2, 100));
    let other = SensorConfig::small(3, 2, 100);
    assert!(render_ideal(&cast, &scene, &AngleSchedule::default_schedule(), &other).is_err());
}

#[test]
fn zero_photons_and_read_noise_give_dark_offset() {
    let p = NoiseParams { photons_per_unit: 0.0, read_sigma: 0.0, dark_offset: 7.0, ..Default::default() };
    let mut v = vec![0.3, 0.0, 12.0, 1e-4];
    digitize(&mut v, &p, 1000.0, &mut waveform_rng(1, 2));
    assert!(v.iter().all(|x| *x == 7.0));
}

#[test]
fn noise_mean_and_variance_law() {
    let p = NoiseParams { read_sigma: 3.0, adc_gain: 2.0, dark_offset: 10.0, adc_saturation: 1e9, ..Default::default() };
    let ideal = 2.5e-5;
    let lp = 1.0;
    let n = 100_000;
    let mut v = vec![ideal; n];
    let mut rng = waveform_rng(42, 0);
    digitize(&mut v, &p, lp, &mut rng);
    let mean = v.iter().sum::<f64>() / n as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let lam = ideal * p.photons_per_unit * lp;
    let expect_mean = lam * p.adc_gain + p.dark_offset;
    let expect_var = lam * p.adc_gain * p.adc_gain + p.read_sigma.powi(2);
    assert!((mean - expect_mean).abs() / expect_mean < 0.02);
    assert!((var - expect_var).abs() / expect_var < 0.05, "{var} vs {expect_var}");
}

#[test]
fn noisy_reads_are_order_independent() {
    let sensor = SensorConfig::small(3, 4, 300);
    let scene = plane_scene(20.0, 30.0, matte(0.5));
    let cube = render_ideal(&cast_rays(&scene, &sensor), &scene, &AngleSchedule::default_schedule(), &sensor).unwrap();
    let noisy = apply_noise(&cube, &NoiseParams::default(), 5).unwrap();
    let a = noisy.to_dense(Exec::Sequential).unwrap();
    let b = noisy.to_dense(Exec::Parallel).unwrap();
    assert_eq!(a, b);
    assert_eq!(noisy.pixel(7).unwrap(), noisy.pixel(7).unwrap());
    assert!(a.iter().all(|x| *x >= 0.0 && *x <= 4095.0));
    let other = apply_noise(&cube, &NoiseParams::default(), 6).unwrap().to_dense(Exec::Sequential).unwrap();
    assert_ne!(a, other);
    assert!(apply_noise(&noisy, &NoiseParams::default(), 1).is_err());
}

#[test]
fn pwf_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.pwf");
    let sensor = SensorConfig::small(3, 4, 300);
    let scene = plane_scene(20.0, 30.0, matte(0.5));
    let cube = render_ideal(&cast_rays(&scene, &sensor), &scene, &AngleSchedule::default_schedule(), &sensor).unwrap();
    let noisy = apply_noise(&cube, &NoiseParams::default(), 5).unwrap();
    write_pwf(&noisy, &path, Exec::Parallel).unwrap();
    let back = read_pwf(&path).unwrap();
    assert_eq!(back.dims(), noisy.dims());
    assert_eq!(back.meta, noisy.meta);
    assert_eq!(back.sensor, noisy.sensor);
    for (e, f) in back.schedule.entries.iter().zip(&noisy.schedule.entries) {
        assert_eq!(e.as_array(), f.as_array());
    }
    let a = noisy.to_dense(Exec::Sequential).unwrap();
    let b = back.to_dense(Exec::Sequential).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| (*x as f32) as f64 == *y));
    assert_eq!(back.pixel(5).unwrap(), back.map_pixels(Exec::Parallel, |_, w| w.to_vec()).unwrap()[5]);
    // header + payload size is exact
    let (s, h, w, t) = noisy.dims();
    let len = std::fs::metadata(&path).unwrap().len();
    assert_eq!(len, 4 + 20 + 16 + s as u64 * 32 + 32 + (s * h * w * t) as u64 * 4);
    // rewriting gives identical bytes
    let p2 = dir.path().join("d.pwf");
    write_pwf(&back, &p2, Exec::Sequential).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn truncated_file_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.pwf");
    let sensor = SensorConfig::small(2, 2, 100);
    let scene = plane_scene(5.0, 0.0, matte(0.5));
    let cube = render_ideal(&cast_rays(&scene, &sensor), &scene, &AngleSchedule::default_schedule(), &sensor).unwrap();
    write_pwf(&cube, &path, Exec::Sequential).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
    assert!(read_pwf(&path).is_err());
    std::fs::write(&path, b"XXXX").unwrap();
    assert!(read_pwf(&path).is_err());
}
