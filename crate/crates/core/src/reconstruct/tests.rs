use super::*;
use crate::exec::Exec;
use crate::pbrdf::{angles_from_normal, diffuse_dop_curve, invert_diffuse_dop, Material, MaterialDb};
use crate::preprocess::{invert_ellipsometry, slice_peaks, MuellerMovie, SlicedCube, DEFAULT_WINDOW};
use crate::scene::{cast_rays, CastResult, Pose, Scene, ScenePrimitive, SensorConfig};
use crate::simulate::{render_ideal, AngleSchedule};
use crate::C_M_PER_NS;
use proptest::prelude::*;

fn mat(id: u32, eta: f64, kd: f64, ks: f64, dd: f64, tau: f64) -> Material {
    Material {
        name: String::new(),
        eta,
        roughness: 0.3,
        spec_depol: 0.8,
        diff_depol: dd,
        diff_tau: tau,
        diffuse_albedo: kd,
        specular_albedo: ks,
        material_id: id,
    }
}

fn db(ms: &[Material]) -> MaterialDb {
    let mut db = MaterialDb::default();
    for m in ms {
        db.insert(m.clone());
    }
    db
}

fn run(scene: &Scene, sensor: &SensorConfig) -> (CastResult, SlicedCube, MuellerMovie) {
    let sched = AngleSchedule::default_schedule();
    let cast = cast_rays(scene, sensor);
    let cube = render_ideal(&cast, scene, &sched, sensor).unwrap();
    let sc = slice_peaks(&cube, DEFAULT_WINDOW, Exec::Parallel).unwrap();
    let mm = invert_ellipsometry(&sc, &sched, Exec::Parallel).unwrap();
    (cast, sc, mm)
}

fn one_pixel(bins: usize) -> SensorConfig {
    let mut s = SensorConfig::small(1, 1, bins);
    s.beam_subrays = 1;
    s
}

fn angle_deg(a: &Vec3, b: &Vec3) -> f64 {
    a.dot(b).clamp(-1.0, 1.0).acos().to_degrees()
}

#[test]
fn method_names_round_trip() {
    for m in ["argmax", "parabolic", "sfp", "pca", "modelfit"] {
        let parsed: Method = m.parse().unwrap();
        assert_eq!(serde_json::to_string(&parsed).unwrap(), format!("\"{m}\""));
    }
    assert!("hough".parse::<Method>().is_err());
}

#[test]
fn argmax_on_bin_centre_is_exact() {
    let r = 200.0 * C_M_PER_NS / 2.0;
    let m = mat(1, 1.5, 0.5, 0.5, 0.6, 0.05);
    let scene = Scene::new(vec![ScenePrimitive::plane(Pose::at(0.0, 0.0, r), None, 1)], db(&[m]));
    let (_, sc, _) = run(&scene, &one_pixel(400));
    let d = tof_distance(&sc, Refine::None);
    assert!((d.distance[0] - r).abs() < 1e-9);
    assert_eq!(d.confidence[0], 1);
}

#[test]
fn half_bin_offset_and_parabolic_refinement() {
    let r = 200.5 * C_M_PER_NS / 2.0;
    let m = mat(1, 1.5, 0.5, 0.5, 0.6, 0.02);
    let scene = Scene::new(vec![ScenePrimitive::plane(Pose::at(0.0, 0.0, r), None, 1)], db(&[m]));
    let (_, sc, _) = run(&scene, &one_pixel(400));
    let a = tof_distance(&sc, Refine::None);
    let p = tof_distance(&sc, Refine::Parabolic);
    assert!(((a.distance[0] - r).abs() - C_M_PER_NS / 4.0).abs() < 1e-3);
    assert!((p.distance[0] - r).abs() < 0.02, "{}", p.distance[0] - r);
}

#[test]
fn max_range_plane_lands_in_last_bin() {
    let sensor = SensorConfig { rows: 1, cols: 1, beam_subrays: 1, ..SensorConfig::default() };
    let scene = Scene::new(vec![ScenePrimitive::plane(Pose::at(0.0, 0.0, 223.2), None, 1)], MaterialDb::defaults());
    let (cast, sc, _) = run(&scene, &sensor);
    assert_eq!(cast.maps.confidence[0], 1);
    assert_eq!(sc.t_peak[0], sensor.bins - 1);
    let d = tof_distance(&sc, Refine::Parabolic);
    assert_eq!(d.confidence[0], 1);
    assert!(d.distance[0] <= sensor.max_range && d.distance[0] > 222.0);
}

#[test]
fn empty_pixel_has_no_distance() {
    let (_, sc, _) = run(&Scene::new(vec![], MaterialDb::defaults()), &one_pixel(100));
    let d = tof_distance(&sc, Refine::Parabolic);
    assert_eq!((d.confidence[0], d.distance[0]), (0, 0.0));
    assert_ne!(d.flags[0] & FLAG_LOW_CONFIDENCE, 0);
}

fn diffuse_sphere() -> (Scene, SensorConfig) {
    let m = mat(3, 1.5, 0.6, 0.0, 0.0, 0.05);
    let scene = Scene::new(vec![ScenePrimitive::sphere([0.0, 0.0, 20.0], 2.5, 3)], db(&[m]));
    let mut sensor = SensorConfig::small(24, 24, 200);
    sensor.vfov_deg = 16.0;
    sensor.hfov_deg = 16.0;
    sensor.beam_subrays = 1;
    (scene, sensor)
}

#[test]
fn sfp_recovers_zenith_on_diffuse_sphere() {
    let (scene, sensor) = diffuse_sphere();
    let (cast, _, mm) = run(&scene, &sensor);
    let views = sensor.view_dirs();
    let cfg = SfpConfig { eta: 1.5, ..SfpConfig::default() };
    let out = sfp_dop_normals(&mm, &AngleSchedule::default_schedule().laser_stokes, &views, &cfg).unwrap();
    let mut n = 0;
    for p in 0..sensor.pixels() {
        if cast.maps.confidence[p] == 0 {
            continue;
        }
        let s = mm.peak(p).apply(&AngleSchedule::default_schedule().laser_stokes);
        if crate::polmath::dop(&s).unwrap() <= 0.05 {
            continue;
        }
        let (zt, _) = angles_from_normal(&views[p], &cast.maps.normal[p]);
        let (ze, _) = angles_from_normal(&views[p], &out.normal[p]);
        assert!((zt - ze).abs().to_degrees() < 0.5, "pixel {p}: {} vs {}", zt.to_degrees(), ze.to_degrees());
        assert!(out.normal[p].dot(&-views[p]) >= 0.0);
        n += 1;
    }
    assert!(n > 20, "{n}");
}

#[test]
fn sfp_zero_dop_faces_sensor() {
    let m = mat(1, 1.5, 0.6, 0.0, 0.0, 0.05);
    let scene = Scene::new(vec![ScenePrimitive::plane(Pose::at(0.0, 0.0, 10.0), None, 1)], db(&[m]));
    let sensor = one_pixel(120);
    let (_, _, mm) = run(&scene, &sensor);
    let views = sensor.view_dirs();
    let out = sfp_dop_normals(&mm, &AngleSchedule::default_schedule().laser_stokes, &views, &SfpConfig::default()).unwrap();
    assert!((out.normal[0] + views[0]).norm() < 1e-6);
    assert!(sfp_dop_normals(&mm, &AngleSchedule::default_schedule().laser_stokes, &views, &SfpConfig { eta: 1.0, dop_floor: 0.01 })
        .is_err());
}

proptest! {
    #[test]
    fn dop_inversion_is_exact(theta in 1.0..80.0f64, eta in 1.2..2.2f64) {
        let t = theta.to_radians();
        let (back, clamped) = invert_diffuse_dop(diffuse_dop_curve(t, eta), eta);
        prop_assert!(!clamped);
        prop_assert!((back - t).abs().to_degrees() < 0.01);
    }

    #[test]
    fn pca_is_exact_on_planes(nx in -0.6..0.6f64, ny in -0.6..0.6f64, z0 in 5.0..40.0f64, k in 3usize..20) {
        let n = Vec3::new(nx, ny, -1.0).normalize();
        let sensor = SensorConfig::small(10, 10, 10);
        let views = sensor.view_dirs();
        // distance along each view ray to the plane n·x = n·(0,0,z0)
        let c = n.dot(&Vec3::new(0.0, 0.0, z0));
        let dist: Vec<f64> = views.iter().map(|v| c / n.dot(v)).collect();
        let pc = unproject(&dist, &vec![1; 100], &views);
        let cfg = PcaConfig { k, r_max: 1e3 };
        let out = pca_normals(&pc, 10, 10, &views, &cfg, Exec::Sequential).unwrap();
        for p in 0..100 {
            if out.flags[p] & FLAG_DEGENERATE != 0 {
                // only possible with three grid neighbours in a row
                prop_assert!(k < 5);
                prop_assert!((out.normal[p] + views[p]).norm() < 1e-12);
            } else {
                prop_assert!((out.normal[p] - n).norm() < 1e-9, "{:?} vs {:?}", out.normal[p], n);
            }
        }
    }
}

#[test]
fn pca_rejects_small_k_and_handles_empty_cloud() {
    let views = SensorConfig::small(2, 2, 10).view_dirs();
    let pc = unproject(&[0.0; 4], &[0; 4], &views);
    assert!(pc.points.is_empty());
    assert!(pca_normals(&pc, 2, 2, &views, &PcaConfig { k: 2, r_max: 2.0 }, Exec::Sequential).is_err());
    let out = pca_normals(&pc, 2, 2, &views, &PcaConfig::default(), Exec::Sequential).unwrap();
    assert!(out.flags.iter().all(|f| *f & FLAG_LOW_CONFIDENCE != 0));
}

#[test]
fn isolated_pole_is_not_trusted() {
    // one column wide, far in front of a distant wall
    let sensor = SensorConfig::small(40, 40, 600);
    let col_width = sensor.hfov_deg.to_radians() / 40.0 * 20.0;
    let scene = Scene::new(
        vec![
            ScenePrimitive::cuboid(Pose::at(0.5 * col_width, 0.0, 20.0), [0.49 * col_width, 5.0, 0.49 * col_width], 5),
            ScenePrimitive::plane(Pose::at(0.0, 0.0, 80.0), None, 5),
        ],
        MaterialDb::defaults(),
    );
    let cast = cast_rays(&scene, &sensor);
    let views = sensor.view_dirs();
    let pc = unproject(&cast.maps.distance, &cast.maps.confidence, &views);
    let out = pca_normals(&pc, 40, 40, &views, &PcaConfig::default(), Exec::Parallel).unwrap();
    let pole: Vec<usize> = (0..1600).filter(|p| (cast.maps.distance[*p] - 20.0).abs() < 1.0).collect();
    assert!(!pole.is_empty());
    assert!(pole.iter().all(|p| out.confidence[*p] == 0 && out.flags[*p] != 0));
}

#[test]
fn kd_tree_neighbours_include_self() {
    let pts: Vec<Vec3> = (0..50).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
    let t = KdTree::new(pts);
    let nb = t.nearest(&Vec3::new(10.0, 0.0, 0.0), 3, 1.5);
    assert_eq!(nb.iter().map(|x| x.0).collect::<Vec<_>>(), vec![10, 9, 11]);
}

#[test]
fn temporal_split_separates_slow_diffuse_tail() {
    let m = mat(1, 1.5, 0.5, 0.5, 0.6, 1.0);
    let scene =
        Scene::new(vec![ScenePrimitive::plane(Pose::at(0.0, 0.0, 15.0).rotated(0.0, 55.0, 0.0), None, 1)], db(&[m.clone()]));
    let sensor = one_pixel(200);
    let (cast, _, mm) = run(&scene, &sensor);
    let sigma = crate::simulate::sigma_from_fwhm(sensor.pulse_fwhm_ns);
    let split = temporal_split(mm.pixel(0), 1.0, sigma, 0.3);
    assert!(split.resolved);
    assert!((split.tau_d - 1.0).abs() < 1e-6, "{}", split.tau_d);
    let hit = cast.hits[0][0];
    let si = crate::pbrdf::SurfaceInteraction::new(hit.normal, hit.omega, hit.range).unwrap();
    let tm = crate::pbrdf::reflectance(&si, &m).unwrap();
    let (hs, hd) = (tm.specular_part.to_vec16(), tm.diffuse_part.to_vec16());
    let scale = hs.iter().chain(&hd).map(|v| v.abs()).fold(0.0, f64::max);
    for c in 0..16 {
        assert!((split.h_s[c] - hs[c]).abs() < 1e-7 * scale);
        assert!((split.h_d[c] - hd[c]).abs() < 1e-7 * scale);
        assert!((split.h_total[c] - hs[c] - hd[c]).abs() < 1e-9 * scale);
    }
}

#[test]
fn modelfit_head_on_returns_view_normal() {
    let m = mat(1, 1.5, 0.5, 0.5, 0.6, 0.05);
    let scene = Scene::new(vec![ScenePrimitive::plane(Pose::at(0.0, 0.0, 12.0), None, 1)], db(&[m]));
    let sensor = one_pixel(150);
    let (cast, _, mm) = run(&scene, &sensor);
    let cfg = ModelFitConfig { specular_albedo: 0.5, diffuse_albedo: 0.5, ..ModelFitConfig::default() };
    let out = modelfit_normals(&mm, &cast.maps.distance, &cast.maps.confidence, &sensor, &cfg, Exec::Sequential).unwrap();
    let v = sensor.view_dir(0, 0);
    assert!(angle_deg(&out.normal[0], &-v) < 1.0, "{}", angle_deg(&out.normal[0], &-v));
}

#[test]
fn modelfit_recovers_oblique_normal_and_index() {
    let m = mat(1, 1.5, 0.5, 0.5, 0.6, 0.1);
    let scene =
        Scene::new(vec![ScenePrimitive::plane(Pose::at(0.0, 0.0, 12.0).rotated(20.0, 35.0, 0.0), None, 1)], db(&[m]));
    let mut sensor = SensorConfig::small(3, 3, 150);
    sensor.beam_subrays = 1;
    let (cast, _, mm) = run(&scene, &sensor);
    let cfg = ModelFitConfig { specular_albedo: 0.5, diffuse_albedo: 0.5, ..ModelFitConfig::default() };
    let out = modelfit_normals(&mm, &cast.maps.distance, &cast.maps.confidence, &sensor, &cfg, Exec::Parallel).unwrap();
    let mats = out.material.as_ref().unwrap();
    for p in 0..9 {
        let e = angle_deg(&out.normal[p], &cast.maps.normal[p]);
        assert!(e < 1.0, "pixel {p}: {e}");
        assert!((mats[p].eta - 1.5).abs() < 0.075, "{}", mats[p].eta);
        assert!(out.fit_residual[p] < 1e-4);
    }
}

#[test]
fn pi_ambiguity_follows_depth_gradient() {
    let omega = Vec3::z();
    let a = normal_from_angles_pub(&omega, 0.5, 0.0);
    let b = normal_from_angles_pub(&omega, 0.5, std::f64::consts::PI);
    assert_eq!(resolve_pi_ambiguity(a, b, &omega, Some(b)), b);
    assert_eq!(resolve_pi_ambiguity(a, b, &omega, Some(a)), a);
    // no depth cue: both face the sensor equally, prefer the optical axis
    let n = resolve_pi_ambiguity(a, b, &omega, None);
    assert!(n == a || n == b);
}

fn normal_from_angles_pub(omega: &Vec3, z: f64, az: f64) -> Vec3 {
    crate::pbrdf::normal_from_angles(omega, z, az)
}

#[test]
fn depth_normals_of_tilted_plane() {
    let sensor = SensorConfig::small(8, 8, 10);
    let views = sensor.view_dirs();
    let n = Vec3::new(0.3, -0.2, -1.0).normalize();
    let c = n.dot(&Vec3::new(0.0, 0.0, 10.0));
    let dist: Vec<f64> = views.iter().map(|v| c / n.dot(v)).collect();
    let dn = depth_normals(&dist, &[1; 64], &views, 8, 8);
    for x in dn {
        assert!((x.unwrap() - n).norm() < 1e-9);
    }
}

#[test]
fn plane_misfit_prefers_the_true_grazing_normal() {
    let sensor = SensorConfig::small(9, 9, 10);
    let views = sensor.view_dirs();
    // steep plane seen almost edge-on
    let n = Vec3::new(0.0, -0.99, -0.14).normalize();
    let c = n.dot(&Vec3::new(0.0, 0.0, 10.0));
    let dist: Vec<f64> = views.iter().map(|v| c / n.dot(v)).collect();
    let p = 40;
    let (z, az) = angles_from_normal(&views[p], &n);
    let flipped = normal_from_angles_pub(&views[p], z, az + std::f64::consts::PI);
    let good = plane_misfit(&n, p, &dist, &[1; 81], &views, 9).unwrap();
    let bad = plane_misfit(&flipped, p, &dist, &[1; 81], &views, 9).unwrap();
    assert!(good < 1e-9 && bad > 1.0, "{good} {bad}");
    assert_eq!(plane_misfit(&n, p, &dist, &[0; 81], &views, 9), None);
}

#[test]
fn broadened_pulse_is_not_split() {
    use crate::simulate::{emg, gaussian};
    let bw = 1.0;
    let sigma = 0.6;
    let t = |k: usize| (k as f64 - 25.0) * bw;
    let ch = |c: usize| [1.0, 0.3, -0.2, 0.1][c % 4];
    let clean: Vec<f64> = (0..51 * 16).map(|i| ch(i % 16) * gaussian(t(i / 16), sigma) + 0.5 * emg(t(i / 16), sigma, 1.5)).collect();
    assert!(temporal_split(&clean, bw, sigma, DEFAULT_MIN_SEPARATION).resolved);
    // a flat-topped return from range spread inside the footprint
    let spread: Vec<f64> = (0..51 * 16)
        .map(|i| (0..8).map(|k| ch(i % 16) * gaussian(t(i / 16) - k as f64 * 0.5, sigma)).sum())
        .collect();
    let s = temporal_split(&spread, bw, sigma, DEFAULT_MIN_SEPARATION);
    assert!(!s.resolved, "{s:?}");
}

#[test]
fn feature_export_layout_and_round_trip() {
    let m = mat(1, 1.5, 0.5, 0.5, 0.6, 0.05);
    let scene = Scene::new(vec![ScenePrimitive::plane(Pose::at(0.0, 0.0, 10.0), None, 1)], db(&[m]));
    let sensor = SensorConfig::small(2, 3, 120);
    let (_, sc, mm) = run(&scene, &sensor);
    let views = sensor.view_dirs();
    let ft = export_features(&sc, &mm, &views).unwrap();
    assert_eq!(ft.channels, 36 * 51 + 36 + 51 * 16 + 3);
    assert_eq!(feature_channels(36, 51), ft.channels);
    let c = ft.channels;
    let p = 4;
    assert_eq!(ft.data[p * c + 7], sc.pixel(p)[7] as f32);
    assert_eq!(ft.data[p * c + 36 * 51 + 2], sc.d_prior[2 * 6 + p] as f32);
    assert_eq!(ft.data[p * c + c - 1], views[p].z as f32);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.pfx");
    ft.write(&path).unwrap();
    assert_eq!(FeatureTensor::read(&path).unwrap(), ft);
}

#[test]
fn maps_write_and_read_back() {
    let mut r = ReconMaps::empty(2, 2, Method::Pca);
    r.distance = vec![1.0, 2.0, 0.0, 4.5];
    r.normal = vec![Vec3::new(0.0, 0.0, -1.0); 4];
    r.confidence = vec![1, 1, 0, 1];
    let dir = tempfile::tempdir().unwrap();
    r.write(dir.path(), serde_json::json!({"k": 16})).unwrap();
    let back = MapSet::read(dir.path()).unwrap();
    assert_eq!(back, MapSet::from(&r));
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("recon.json")).unwrap()).unwrap();
    assert_eq!(side["method"], "pca");
    assert_eq!(side["confidence"]["confident_pixels"], 3);
}
