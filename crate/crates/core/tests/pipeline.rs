//! Whole-pipeline checks through the public API.

use polwave::exec::Exec;
use polwave::pbrdf::MaterialDb;
use polwave::preprocess::{invert_ellipsometry, slice_peaks, DEFAULT_WINDOW};
use polwave::reconstruct::{modelfit_normals, tof_distance, ModelFitConfig, Refine};
use polwave::scene::{cast_rays_with, Pose, Scene, ScenePrimitive, SensorConfig};
use polwave::simulate::{apply_noise, read_pwf, render_ideal, write_pwf, AngleSchedule, NoiseParams, WavefrontCube};

fn small() -> (Scene, SensorConfig) {
    let mut sensor = SensorConfig { rows: 6, cols: 8, bins: 300, beam_subrays: 1, ..Default::default() };
    sensor.max_range = sensor.record_range();
    let scene = Scene::new(
        vec![
            ScenePrimitive::plane(Pose::at(0.0, 0.0, 30.0).rotated(-20.0, 25.0, 0.0), None, 5),
            ScenePrimitive::sphere([0.0, 0.0, 18.0], 1.0, 2),
        ],
        MaterialDb::defaults(),
    );
    (scene, sensor)
}

fn noisy_cube() -> WavefrontCube {
    let (scene, sensor) = small();
    let cast = cast_rays_with(&scene, &sensor, Exec::Parallel);
    let ideal = render_ideal(&cast, &scene, &AngleSchedule::default_schedule(), &sensor).unwrap();
    apply_noise(&ideal, &NoiseParams::default(), 11).unwrap()
}

#[test]
fn file_backed_cube_matches_lazy_cube() {
    let cube = noisy_cube();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.pwf");
    write_pwf(&cube, &path, Exec::Parallel).unwrap();
    let back = read_pwf(&path).unwrap();
    assert_eq!(back.dims(), cube.dims());
    for p in 0..cube.sensor.pixels() {
        let a = cube.pixel(p).unwrap();
        let b = back.pixel(p).unwrap();
        // stored as f32
        assert!(a.iter().zip(&b).all(|(x, y)| (*x as f32) as f64 == *y), "pixel {p}");
    }
    let sa = slice_peaks(&cube, DEFAULT_WINDOW, Exec::Parallel).unwrap();
    let sb = slice_peaks(&back, DEFAULT_WINDOW, Exec::Parallel).unwrap();
    assert_eq!(sa.t_peak, sb.t_peak);
}

#[test]
fn modelfit_is_identical_under_both_policies() {
    let cube = noisy_cube();
    let run = |exec| {
        let sc = slice_peaks(&cube, DEFAULT_WINDOW, exec).unwrap();
        let mm = invert_ellipsometry(&sc, &cube.schedule, exec).unwrap();
        let tof = tof_distance(&sc, Refine::Parabolic);
        let fit = modelfit_normals(&mm, &tof.distance, &tof.confidence, &cube.sensor, &ModelFitConfig::default(), exec).unwrap();
        (tof.distance, fit.normal, fit.material)
    };
    assert_eq!(run(Exec::Sequential), run(Exec::Parallel));
}
