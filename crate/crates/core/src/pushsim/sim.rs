//! Quasi-static planar pushing with an ellipsoidal limit surface.
//!
//! The object slides on a uniform-pressure support. Its body twist `V` and
//! the applied wrench `W` are related by `V ∝ L·W`, `L = diag(1, 1, 1/c²)`,
//! with `c` the mean footprint radius. Each pusher contact is Coulomb with
//! coefficient `μ`; per step the first consistent combination of
//! stick / slide± / separate modes determines `V`.

use nalgebra::{Matrix3, SMatrix, SVector, Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::planar::{self, ContactPoint, Planar};
use super::robot::Link;
use super::shapes::{mean_radius, ShapeSpec};
use crate::error::{Error, Result};
use crate::geom::{relative_pose, yaw_rotation, Pose};
use crate::motion::Action;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub friction_min: f64,
    pub friction_max: f64,
    /// Overrides the limit-surface torque radius; by default the mean
    /// footprint radius under uniform pressure.
    pub pressure_radius: Option<f64>,
    pub dt: f64,
    pub ground_height: f64,
    /// Gap below which the pusher counts as touching, meters.
    pub contact_tolerance: f64,
    /// Final gap above which a push is flagged as having lost contact.
    pub lost_contact_gap: f64,
    /// Intermediate trajectory samples besides start and end.
    pub waypoints: usize,
    /// Chords per full turn when polygonizing curved footprints.
    pub arc_segments: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            friction_min: 0.15,
            friction_max: 0.35,
            pressure_radius: None,
            dt: 0.01,
            ground_height: 0.0,
            contact_tolerance: 1e-3,
            lost_contact_gap: 0.01,
            waypoints: 10,
            arc_segments: 64,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.friction_min > 0.0 && self.friction_min <= self.friction_max) {
            return Err(Error::Config("friction range must satisfy 0 < min ≤ max".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("timestep must be positive".into()));
        }
        Ok(())
    }
}

/// Uniform draw from the configured friction interval.
pub fn sample_friction<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> f64 {
    rng.random_range(cfg.friction_min..=cfg.friction_max)
}

/// An object prepared for simulation.
#[derive(Clone, Debug)]
pub struct SimObject {
    pub spec: ShapeSpec,
    /// Footprint polygon in the object frame (CCW).
    pub footprint: Vec<Vector2<f64>>,
    pub pressure_radius: f64,
}

impl SimObject {
    pub fn new(spec: &ShapeSpec, cfg: &SimConfig) -> Result<Self> {
        spec.validate()?;
        let footprint = spec.footprint(cfg.arc_segments);
        let pressure_radius = cfg.pressure_radius.unwrap_or_else(|| mean_radius(&footprint));
        Ok(Self { spec: spec.clone(), footprint, pressure_radius })
    }

    /// Resting pose with the footprint centroid at `(x, y)`.
    pub fn resting_pose(&self, x: f64, y: f64, yaw: f64, cfg: &SimConfig) -> Pose {
        Pose::planar(x, y, cfg.ground_height + self.spec.height() / 2.0, yaw)
    }

    pub fn world_footprint(&self, pose: &Pose) -> Vec<Vector2<f64>> {
        planar::transform(&self.footprint, &to_planar(pose))
    }
}

pub fn to_planar(p: &Pose) -> Planar {
    Planar::new(p.p().x, p.p().y, p.yaw())
}

fn from_planar(p: &Planar, z: f64) -> Pose {
    Pose::new(Vector3::new(p.x, p.y, z), yaw_rotation(p.theta))
}

/// Everything needed to run one push.
#[derive(Clone, Debug)]
pub struct PushScene<'a> {
    pub object: &'a SimObject,
    pub object_pose: Pose,
    pub base_pose: Pose,
    pub link: &'a Link,
    /// Frames rigidly attached to the object, given at the start pose.
    pub tracked: Vec<Pose>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub times: Vec<f64>,
    pub object: Vec<Pose>,
    pub link: Vec<Pose>,
    /// One trajectory per tracked frame.
    pub frames: Vec<Vec<Pose>>,
    pub contact_lost: bool,
    pub final_gap: f64,
    pub friction: f64,
}

impl SimResult {
    pub fn initial_object(&self) -> &Pose {
        &self.object[0]
    }

    pub fn final_object(&self) -> &Pose {
        self.object.last().expect("non-empty trajectory")
    }

    /// `t, object (x y z qw qx qy qz), link (…)` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,obj_x,obj_y,obj_z,obj_qw,obj_qx,obj_qy,obj_qz,link_x,link_y,link_z,link_qw,link_qx,link_qy,link_qz\n");
        for i in 0..self.times.len() {
            let mut row = vec![format!("{}", self.times[i])];
            for pose in [&self.object[i], &self.link[i]] {
                row.extend(pose.p().iter().map(|v| format!("{v}")));
                row.extend(pose.wxyz().iter().map(|v| format!("{v}")));
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Stick,
    SlidePos,
    SlideNeg,
    Separate,
}

const MODES: [Mode; 4] = [Mode::Stick, Mode::SlidePos, Mode::SlideNeg, Mode::Separate];

/// A contact in the object frame: position relative to the centre, normal
/// into the object, and the pusher's velocity at that point.
#[derive(Clone, Copy, Debug)]
struct BodyContact {
    r: Vector2<f64>,
    n: Vector2<f64>,
    vp: Vector2<f64>,
}

impl BodyContact {
    fn tangent(&self) -> Vector2<f64> {
        Vector2::new(-self.n.y, self.n.x)
    }

    fn wrench(&self, f: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new(f.x, f.y, planar::cross(&self.r, f))
    }

    fn point_velocity(&self, v: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(v.x - v.z * self.r.y, v.y + v.z * self.r.x)
    }
}

/// Body twist of the object for the given contacts, or `None` when no mode
/// combination is consistent.
fn solve_twist(contacts: &[BodyContact], pusher_twist: &Vector3<f64>, c2: f64, mu: f64) -> Option<Vector3<f64>> {
    let l = Vector3::new(1.0, 1.0, 1.0 / c2);
    let scale = contacts.iter().map(|c| c.vp.norm()).fold(pusher_twist.xy().norm(), f64::max).max(1e-12);
    let eps = 1e-9 * scale;
    let n = contacts.len();
    let combos = 4usize.pow(n as u32);
    for code in 0..combos {
        let modes: Vec<Mode> = (0..n).map(|i| MODES[(code / 4usize.pow((n - 1 - i) as u32)) % 4]).collect();
        if n == 2 && modes.iter().all(|m| *m == Mode::Stick) {
            if stick_all_consistent(contacts, pusher_twist, c2, mu) {
                return Some(*pusher_twist);
            }
            continue;
        }
        // force generators and their owning contact
        let mut gens: Vec<(usize, Vector2<f64>)> = Vec::new();
        for (i, (c, m)) in contacts.iter().zip(&modes).enumerate() {
            let t = c.tangent();
            match m {
                Mode::Stick => {
                    gens.push((i, c.n));
                    gens.push((i, t));
                }
                Mode::SlidePos => gens.push((i, c.n + t * mu)),
                Mode::SlideNeg => gens.push((i, c.n - t * mu)),
                Mode::Separate => {}
            }
        }
        let k = gens.len();
        let lambda: Vec<f64> = if k == 0 {
            Vec::new()
        } else {
            // V = Σ λ_g L·w_g; one equation per constrained velocity component
            let cols: Vec<Vector3<f64>> = gens.iter().map(|(i, g)| contacts[*i].wrench(g).component_mul(&l)).collect();
            let mut rows: Vec<(Vector3<f64>, f64)> = Vec::new();
            for (c, m) in contacts.iter().zip(&modes) {
                let jx = Vector3::new(1.0, 0.0, -c.r.y);
                let jy = Vector3::new(0.0, 1.0, c.r.x);
                match m {
                    Mode::Stick => {
                        rows.push((jx, c.vp.x));
                        rows.push((jy, c.vp.y));
                    }
                    Mode::SlidePos | Mode::SlideNeg => rows.push((jx * c.n.x + jy * c.n.y, c.n.dot(&c.vp))),
                    Mode::Separate => {}
                }
            }
            debug_assert_eq!(rows.len(), k);
            match solve_square(&cols, &rows) {
                Some(x) => x,
                None => continue,
            }
        };
        let v: Vector3<f64> = gens
            .iter()
            .zip(&lambda)
            .map(|((i, g), lam)| contacts[*i].wrench(g).component_mul(&l) * *lam)
            .sum();
        let lam_scale = lambda.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1e-300);
        let mut ok = true;
        let mut gi = 0;
        for (c, m) in contacts.iter().zip(&modes) {
            let rel = c.point_velocity(&v) - c.vp;
            let t = c.tangent();
            match m {
                Mode::Stick => {
                    let (ln, lt) = (lambda[gi], lambda[gi + 1]);
                    gi += 2;
                    ok &= ln >= -1e-9 * lam_scale && lt.abs() <= mu * ln + 1e-9 * lam_scale;
                }
                Mode::SlidePos | Mode::SlideNeg => {
                    let s = if *m == Mode::SlidePos { 1.0 } else { -1.0 };
                    let lam = lambda[gi];
                    gi += 1;
                    // friction along +s·t opposes slip of the object along +s·t
                    ok &= lam >= -1e-9 * lam_scale && s * t.dot(&rel) <= eps;
                }
                Mode::Separate => ok &= c.n.dot(&rel) >= -eps,
            }
        }
        if ok {
            return Some(v);
        }
    }
    None
}

fn solve_square(cols: &[Vector3<f64>], rows: &[(Vector3<f64>, f64)]) -> Option<Vec<f64>> {
    let k = cols.len();
    let a = nalgebra::DMatrix::from_fn(k, k, |r, c| rows[r].0.dot(&cols[c]));
    let b = nalgebra::DVector::from_fn(k, |r, _| rows[r].1);
    let norm = a.amax().max(1e-300);
    let lu = a.clone().lu();
    let det = lu.determinant();
    if det.abs() < 1e-12 * norm.powi(k as i32) {
        return None;
    }
    lu.solve(&b).map(|x| x.iter().copied().collect())
}

/// Both contacts sticking: the object moves with the pusher, which requires
/// `W = L⁻¹V` to lie in the cone spanned by the four friction-cone edges.
fn stick_all_consistent(contacts: &[BodyContact], v: &Vector3<f64>, c2: f64, mu: f64) -> bool {
    let w = Vector3::new(v.x, v.y, v.z * c2);
    if w.norm() < 1e-15 {
        return true;
    }
    let mut edges = Vec::with_capacity(4);
    for c in contacts {
        let t = c.tangent();
        edges.push(c.wrench(&(c.n + t * mu)));
        edges.push(c.wrench(&(c.n - t * mu)));
    }
    let tol = 1e-9;
    for skip in 0..4 {
        let tri: Vec<&Vector3<f64>> = edges.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, e)| e).collect();
        let m = Matrix3::from_columns(&[*tri[0], *tri[1], *tri[2]]);
        if let Some(inv) = m.try_inverse() {
            let x = inv * w;
            if x.iter().all(|c| *c >= -tol * x.amax().max(1e-300)) {
                return true;
            }
        }
    }
    // degenerate cones (collinear contacts): least squares on pairs
    for i in 0..4 {
        for j in (i + 1)..4 {
            let m = SMatrix::<f64, 3, 2>::from_columns(&[edges[i], edges[j]]);
            let mtm = m.transpose() * m;
            if let Some(inv) = mtm.try_inverse() {
                let x: SVector<f64, 2> = inv * m.transpose() * w;
                if x.iter().all(|c| *c >= 0.0) && (m * x - w).norm() <= 1e-9 * w.norm() {
                    return true;
                }
            }
        }
    }
    false
}

/// Runs one push: the base follows the action's constant twist, the link
/// pushes the object quasi-statically, and all trajectories are sampled at
/// start, end and `cfg.waypoints` evenly spaced instants.
pub fn simulate_push(scene: &PushScene, action: &Action, mu: f64, cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    if !(mu >= 0.0) {
        return Err(Error::Config(format!("friction must be non-negative, got {mu}")));
    }
    let steps = (action.duration / cfg.dt).round() as usize;
    let dt = if steps > 0 { action.duration / steps as f64 } else { 0.0 };
    let z = scene.object_pose.p().z;
    let hs: Vec<Pose> = scene.tracked.iter().map(|f| relative_pose(f, &scene.object_pose)).collect();
    let c2 = scene.object.pressure_radius.powi(2);

    let total = cfg.waypoints + 1;
    let sample_at: Vec<usize> = (0..=total).map(|k| ((k * steps) as f64 / total as f64).round() as usize).collect();
    let mut out = SimResult {
        times: Vec::new(),
        object: Vec::new(),
        link: Vec::new(),
        frames: vec![Vec::new(); hs.len()],
        contact_lost: false,
        final_gap: 0.0,
        friction: mu,
    };
    let mut obj = to_planar(&scene.object_pose);
    let mut touched = false;
    let record = |out: &mut SimResult, step: usize, obj: &Planar| {
        let t = step as f64 * dt;
        let b = from_planar(obj, z);
        let link = scene.link.pose(&action.base_pose_at(&scene.base_pose, t));
        for (traj, h) in out.frames.iter_mut().zip(&hs) {
            traj.push(b.compose(&h.inverse()));
        }
        out.times.push(t);
        out.object.push(b);
        out.link.push(link);
    };
    let mut next_sample = 0;
    for step in 0..=steps {
        while next_sample < sample_at.len() && sample_at[next_sample] == step {
            record(&mut out, step, &obj);
            next_sample += 1;
        }
        let t = step as f64 * dt;
        let base = action.base_pose_at(&scene.base_pose, t);
        let link_pose = scene.link.pose(&base);
        let pusher = scene.link.footprint(&link_pose);
        let object_poly = planar::transform(&scene.object.footprint, &obj);
        let (_, contacts) = planar::contact_manifold(&pusher, &object_poly, cfg.contact_tolerance);
        touched |= !contacts.is_empty();
        if step == steps {
            out.final_gap = planar::distance(&pusher, &object_poly);
            break;
        }
        if !contacts.is_empty() {
            let (v_base, omega) = action.base_twist_world(&base);
            let v = body_twist(&contacts, &obj, &base, &v_base, omega, c2, mu);
            obj = obj.integrate_body(&v.xy(), v.z, dt);
        }
        // settle any interpenetration left by the pusher's own motion
        let next_link = scene.link.pose(&action.base_pose_at(&scene.base_pose, t + dt));
        let next_pusher = scene.link.footprint(&next_link);
        let moved = planar::transform(&scene.object.footprint, &obj);
        let mtv = planar::push_out(&next_pusher, &moved);
        obj.x += mtv.x;
        obj.y += mtv.y;
    }
    if !touched {
        return Err(Error::NoContactDuringPush);
    }
    out.contact_lost = out.final_gap > cfg.lost_contact_gap;
    Ok(out)
}

fn body_twist(
    contacts: &[ContactPoint],
    obj: &Planar,
    base: &Pose,
    v_base: &Vector2<f64>,
    omega: f64,
    c2: f64,
    mu: f64,
) -> Vector3<f64> {
    let rot_inv = obj.rotation().inverse();
    let pb = base.p().xy();
    let world_vel = |x: &Vector2<f64>| v_base + Vector2::new(-omega * (x.y - pb.y), omega * (x.x - pb.x));
    let body: Vec<BodyContact> = contacts
        .iter()
        .map(|c| BodyContact {
            r: rot_inv * (c.point - obj.origin()),
            n: rot_inv * c.normal,
            vp: rot_inv * world_vel(&c.point),
        })
        .collect();
    let carry = {
        let v = rot_inv * world_vel(&obj.origin());
        Vector3::new(v.x, v.y, omega)
    };
    solve_twist(&body, &carry, c2, mu).unwrap_or(carry)
}
