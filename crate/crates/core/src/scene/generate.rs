use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;

use super::{Pose, Scene, ScenePrimitive};
use crate::pbrdf::MaterialDb;
use crate::{Error, Result};

/// Sensor mounting height above the road (ground plane is `y = +h`).
pub const SENSOR_HEIGHT: f64 = 1.8;

const ASPHALT: u32 = 1;
const PAINTED_METAL: u32 = 2;
const GLASS: u32 = 3;
const FOLIAGE: u32 = 4;
const CONCRETE: u32 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Template {
    Road,
    Lot,
    LostCargo,
}

impl FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "road" => Ok(Self::Road),
            "lot" => Ok(Self::Lot),
            "lostcargo" => Ok(Self::LostCargo),
            _ => Err(Error::Config(format!("unknown template '{s}' (road, lot, lostcargo)"))),
        }
    }
}

fn ground() -> ScenePrimitive {
    ScenePrimitive::plane(Pose::at(0.0, SENSOR_HEIGHT, 0.0).rotated(90.0, 0.0, 0.0), None, ASPHALT)
}

/// Lateral position at range `z` that stays inside a ±`half_deg` cone.
fn lateral<R: Rng>(rng: &mut R, z: f64, half_deg: f64) -> f64 {
    let lim = z * half_deg.to_radians().tan();
    rng.random_range(-lim..=lim)
}

fn obstacle<R: Rng>(rng: &mut R) -> ScenePrimitive {
    let z = rng.random_range(5.0..100.0);
    let x = lateral(rng, z, 12.0);
    let material = [PAINTED_METAL, GLASS, CONCRETE, FOLIAGE][rng.random_range(0..4)];
    if rng.random_bool(0.6) {
        // vehicle-sized box resting on the road
        let half = [rng.random_range(0.8..1.1), rng.random_range(0.6..0.9), rng.random_range(1.8..2.5)];
        let yaw = rng.random_range(-40.0..40.0);
        ScenePrimitive::cuboid(Pose::at(x, SENSOR_HEIGHT - half[1], z + half[2]).rotated(0.0, yaw, 0.0), half, material)
    } else {
        let r = rng.random_range(0.3..1.5);
        ScenePrimitive::sphere([x, SENSOR_HEIGHT - r, z + r], r, material)
    }
}

fn pole<R: Rng>(rng: &mut R) -> ScenePrimitive {
    let z = rng.random_range(15.0..40.0);
    let x = lateral(rng, z, 13.0);
    // roughly one pixel wide at its range
    let half_w = 0.5 * z * (31.53f64 / 236.0).to_radians();
    let half_h = 3.0;
    ScenePrimitive::cuboid(Pose::at(x, SENSOR_HEIGHT - half_h, z), [half_w, half_h, half_w], PAINTED_METAL)
}

/// Deterministic pseudo-random scene for `template`.
pub fn generate_scene(seed: u64, template: Template) -> Scene {
    let mut rng = Pcg64::seed_from_u64(seed);
    let mut prims = vec![ground()];
    match template {
        Template::Road => {
            let n = rng.random_range(1..=10);
            prims.extend((0..n).map(|_| obstacle(&mut rng)));
            prims.push(pole(&mut rng));
        }
        Template::Lot => {
            let z = rng.random_range(25.0..40.0);
            prims.push(ScenePrimitive::plane(Pose::at(0.0, 0.0, z), Some([40.0, 20.0]), CONCRETE));
            let n = rng.random_range(1..=6);
            prims.extend((0..n).map(|_| {
                let mut o = obstacle(&mut rng);
                // keep parked objects in front of the facade
                let t = &mut o.pose.translation;
                t[2] = 5.0 + (t[2] - 5.0) * (z - 8.0) / 100.0;
                o
            }));
            prims.push(pole(&mut rng));
        }
        Template::LostCargo => {
            let half = 0.25;
            let x = rng.random_range(-0.5..0.5);
            let yaw = rng.random_range(-10.0..10.0);
            prims.push(ScenePrimitive::cuboid(
                Pose::at(x, SENSOR_HEIGHT - half, 50.0 + half).rotated(0.0, yaw, 0.0),
                [half; 3],
                CONCRETE,
            ));
        }
    }
    Scene::new(prims, MaterialDb::defaults())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::PrimitiveKind;

    #[test]
    fn deterministic() {
        for t in [Template::Road, Template::Lot, Template::LostCargo] {
            assert_eq!(generate_scene(11, t), generate_scene(11, t));
        }
        assert_ne!(generate_scene(1, Template::Road), generate_scene(2, Template::Road));
    }

    #[test]
    fn lostcargo_single_box_at_fifty() {
        let s = generate_scene(7, Template::LostCargo);
        let boxes: Vec<_> = s.primitives.iter().filter(|p| p.kind == PrimitiveKind::Box).collect();
        assert_eq!(boxes.len(), 1);
        let t = boxes[0].pose.translation;
        let front = (t[0].powi(2) + t[1].powi(2) + (t[2] - 0.25).powi(2)).sqrt();
        assert!((front - 50.0).abs() < 0.5, "{front}");
        s.validate().unwrap();
    }

    #[test]
    fn road_object_count() {
        for seed in 0..50 {
            let s = generate_scene(seed, Template::Road);
            let objects = s.primitives.len() - 1;
            assert!((2..=11).contains(&objects), "seed {seed}: {objects}");
            s.validate().unwrap();
        }
    }

    #[test]
    fn unknown_template() {
        assert!("highway".parse::<Template>().is_err());
        assert_eq!("lot".parse::<Template>().unwrap(), Template::Lot);
    }
}
