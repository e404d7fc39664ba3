//! Seeded fixtures shared by the benchmarks.

use std::f64::consts::PI;

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pushxfer::motion::{ContactRole, MotionKernel};
use pushxfer::{Bandwidths, Condition, MotionModel, ParticleDensity, PointCloud, Pose, RigidMotion, ShapeSpec, SurfaceFeature};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_pose<R: Rng>(rng: &mut R, spread: f64) -> Pose {
    let p = Vector3::from_fn(|_, _| rng.random_range(-spread..spread));
    let q = UnitQuaternion::from_euler_angles(rng.random_range(-PI..PI), rng.random_range(-1.5..1.5), rng.random_range(-PI..PI));
    Pose::new(p, q)
}

pub fn random_feature<R: Rng>(rng: &mut R) -> SurfaceFeature {
    SurfaceFeature { pose: random_pose(rng, 0.05), r: Vector2::new(rng.random_range(-5.0..15.0), rng.random_range(-5.0..5.0)) }
}

pub fn feature_density(n: usize, seed: u64) -> ParticleDensity<SurfaceFeature> {
    let mut r = rng(seed);
    let particles = (0..n).map(|_| random_feature(&mut r)).collect();
    ParticleDensity::uniform(particles, Bandwidths::default()).expect("non-empty")
}

/// A motion model of `n` kernels with conditions near the identity frame,
/// as produced by pushes from one contact model.
pub fn motion_model(n: usize, seed: u64) -> MotionModel {
    let mut r = rng(seed);
    let kernels = (0..n)
        .map(|_| {
            let f = SurfaceFeature { pose: random_pose(&mut r, 0.02), r: Vector2::new(r.random_range(0.0..2.0), 0.0) };
            let m = Pose::new(
                Vector3::new(r.random_range(0.3..0.4), r.random_range(-0.05..0.05), 0.0),
                UnitQuaternion::from_euler_angles(0.0, 0.0, r.random_range(-0.3..0.3)),
            );
            MotionKernel { c: Condition { u: f.pose, r: f.r }, m: RigidMotion::from_pose(&m) }
        })
        .collect();
    MotionModel::new("linear", "front", ContactRole::RobotObject, kernels, Bandwidths::default()).expect("non-empty")
}

pub fn cube_cloud(seed: u64) -> PointCloud {
    ShapeSpec::cube(0.2).sample(&mut rng(seed)).expect("valid shape").cloud
}
