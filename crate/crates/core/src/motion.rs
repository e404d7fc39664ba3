//! Actions, motion experts and product-of-experts prediction.
//!
//! A motion expert is a kernel density over (contact condition, local frame
//! motion) pairs for one action and one contact type. Conditioned on the
//! contact observed on a new object it yields a density over local motions,
//! which maps to object motions through the fixed frame-to-object pose `h`.

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{
    log_gaussian, log_motion_kernel, log_pose_kernel, log_sum_exp, Bandwidths, DensityKind, KernelPoint,
    ParticleDensity, PoseKernel,
};
use crate::error::{Error, Result};
use crate::features::SurfaceFeature;
use crate::geom::{local_to_object_motion, motion_between, object_to_local_motion, yaw_rotation, Pose, RigidMotion};
use crate::optimize::{anneal_maximize, perturb_motion_step, AnnealSchedule};
use crate::pushsim::SimResult;
use crate::seeding::stream_rng;

/// Densities below this are treated as zero: the expert vetoes.
pub const UNDERFLOW_FLOOR: f64 = 1e-300;

/// A constant base velocity command held for a fixed duration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub id: String,
    /// m/s in the robot base frame.
    pub linear: Vector3<f64>,
    /// Yaw rate, degrees per second.
    pub angular_deg: f64,
    /// Seconds.
    pub duration: f64,
}

impl Action {
    pub fn new(id: &str, linear: Vector3<f64>, angular_deg: f64, duration: f64) -> Self {
        Self { id: id.into(), linear, angular_deg, duration }
    }

    pub fn omega(&self) -> f64 {
        self.angular_deg.to_radians()
    }

    /// Commanded displacement `a·l` in the base frame.
    pub fn displacement(&self) -> Vector3<f64> {
        self.linear * self.duration
    }

    /// Base pose after `t` seconds: the exact unicycle solution
    /// `B(t) = B₀ ∘ exp(t ξ)`.
    pub fn base_pose_at(&self, base: &Pose, t: f64) -> Pose {
        let w = self.omega();
        let th = w * t;
        let (vx, vy) = (self.linear.x, self.linear.y);
        let local = if th.abs() < 1e-12 {
            Vector2::new(vx, vy) * t
        } else {
            let (s, c) = th.sin_cos();
            Vector2::new(vx * s - vy * (1.0 - c), vx * (1.0 - c) + vy * s) / w
        };
        base.compose(&Pose::new(Vector3::new(local.x, local.y, self.linear.z * t), yaw_rotation(th)))
    }

    /// World-frame linear velocity of the base origin and yaw rate (rad/s).
    pub fn base_twist_world(&self, base: &Pose) -> (Vector2<f64>, f64) {
        ((base.q() * self.linear).xy(), self.omega())
    }
}

/// The contact type an expert conditions on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContactRole {
    RobotObject,
    ObjectEnvironment,
}

impl ContactRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            ContactRole::RobotObject => "robot-object",
            ContactRole::ObjectEnvironment => "object-environment",
        }
    }
}

/// Contact condition `c = (u, r)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub u: Pose,
    pub r: Vector2<f64>,
}

impl From<&SurfaceFeature> for Condition {
    fn from(f: &SurfaceFeature) -> Self {
        Self { u: f.pose, r: f.r }
    }
}

pub fn log_condition_kernel(c: &Condition, mu: &Condition, bw: &Bandwidths) -> f64 {
    log_pose_kernel(&c.u, &mu.u, bw.sigma_p, bw.sigma_q) + log_gaussian(c.r.as_slice(), mu.r.as_slice(), bw.sigma_r)
}

/// One observed rollout: condition at push start and the local motion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionKernel {
    pub c: Condition,
    pub m: RigidMotion,
}

impl KernelPoint for MotionKernel {
    const KIND: DensityKind = DensityKind::Joint;

    fn log_kernel(x: &Self, mu: &Self, bw: &Bandwidths) -> f64 {
        log_condition_kernel(&x.c, &mu.c, bw) + log_motion_kernel(&x.m, &mu.m, bw)
    }

    fn perturb<R: Rng + ?Sized>(mu: &Self, bw: &Bandwidths, rng: &mut R) -> Self {
        let f = SurfaceFeature::perturb(&SurfaceFeature { pose: mu.c.u, r: mu.c.r }, bw, rng);
        Self { c: Condition::from(&f), m: RigidMotion::perturb(&mu.m, bw, rng) }
    }
}

/// Kernel for frame `frame_index` of a simulated push: the motion between
/// the frame's first and last recorded poses.
pub fn record_rollout(sim: &SimResult, frame_index: usize, condition: Condition) -> Result<MotionKernel> {
    if sim.contact_lost {
        return Err(Error::LostContact);
    }
    let traj = sim
        .frames
        .get(frame_index)
        .ok_or_else(|| Error::Config(format!("no tracked frame {frame_index}")))?;
    let (Some(first), Some(last)) = (traj.first(), traj.last()) else {
        return Err(Error::Config("empty frame trajectory".into()));
    };
    Ok(MotionKernel { c: condition, m: motion_between(first, last) })
}

/// Motion expert for one (link, contact role, action).
#[derive(Clone, Debug)]
pub struct MotionModel {
    pub action: String,
    pub link: String,
    pub role: ContactRole,
    pub density: ParticleDensity<MotionKernel>,
}

#[derive(Serialize, Deserialize)]
struct MotionDocument {
    action: String,
    link: String,
    role: ContactRole,
    density: serde_json::Value,
}

impl MotionModel {
    pub fn new(action: &str, link: &str, role: ContactRole, kernels: Vec<MotionKernel>, bw: Bandwidths) -> Result<Self> {
        if kernels.is_empty() {
            return Err(Error::EmptyMotionModel);
        }
        Ok(Self { action: action.into(), link: link.into(), role, density: ParticleDensity::uniform(kernels, bw)? })
    }

    pub fn len(&self) -> usize {
        self.density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.density.is_empty()
    }

    pub fn with_bandwidths(&self, bw: Bandwidths) -> Result<Self> {
        Ok(Self {
            density: ParticleDensity::new(self.density.particles().to_vec(), self.density.weights().to_vec(), bw)?,
            ..self.clone()
        })
    }

    pub fn to_value(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(MotionDocument {
            action: self.action.clone(),
            link: self.link.clone(),
            role: self.role,
            density: self.density.to_value()?,
        })?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_value()?)?)
    }

    pub fn from_value(v: serde_json::Value) -> Result<Self> {
        let doc: MotionDocument = serde_json::from_value(v)?;
        Ok(Self { action: doc.action, link: doc.link, role: doc.role, density: ParticleDensity::from_value(doc.density)? })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_value(serde_json::from_str(text)?)
    }
}

/// `Σ w_j M(m_v|m_j) K(c|c_j) / Σ w_j K(c|c_j)` with `m_v = h ∘ m_b ∘ h⁻¹`.
pub fn expert_conditional(model: &MotionModel, m_b: &RigidMotion, c: &Condition, h: &Pose) -> Result<f64> {
    Ok(log_expert_conditional(model, m_b, c, h)?.exp())
}

pub fn log_expert_conditional(model: &MotionModel, m_b: &RigidMotion, c: &Condition, h: &Pose) -> Result<f64> {
    if model.is_empty() {
        return Err(Error::EmptyMotionModel);
    }
    let bw = model.density.bandwidths();
    let m_v = object_to_local_motion(m_b, h);
    let mut den = Vec::with_capacity(model.len());
    let mut num = Vec::with_capacity(model.len());
    for (k, w) in model.density.iter() {
        let a = w.ln() + log_condition_kernel(c, &k.c, bw);
        den.push(a);
        num.push(a + log_motion_kernel(&m_v, &k.m, bw));
    }
    let log_den = log_sum_exp(den);
    if !(log_den >= UNDERFLOW_FLOOR.ln()) {
        return Err(Error::UnsupportedCondition(log_den));
    }
    Ok(log_sum_exp(num) - log_den)
}

/// An expert conditioned on one contact: normalized conditional weights over
/// the model's motions, with negligible ones pruned.
#[derive(Clone, Debug)]
pub struct PreparedExpert {
    pub role: ContactRole,
    pub action: String,
    pub h: Pose,
    motions: Vec<RigidMotion>,
    log_w: Vec<f64>,
    cumulative: Vec<f64>,
    bw: Bandwidths,
    kernel: PoseKernel,
}

/// Conditional weights more than this many nats below the largest are dropped.
const PRUNE_NATS: f64 = 30.0;

impl PreparedExpert {
    pub fn new(model: &MotionModel, c: &Condition, h: Pose) -> Result<Self> {
        if model.is_empty() {
            return Err(Error::EmptyMotionModel);
        }
        let bw = *model.density.bandwidths();
        let a: Vec<f64> = model.density.iter().map(|(k, w)| w.ln() + log_condition_kernel(c, &k.c, &bw)).collect();
        let log_den = log_sum_exp(a.iter().copied());
        if !(log_den >= UNDERFLOW_FLOOR.ln()) {
            return Err(Error::UnsupportedCondition(log_den));
        }
        let top = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut motions = Vec::new();
        let mut log_w = Vec::new();
        for (ai, k) in a.iter().zip(model.density.particles()) {
            if *ai >= top - PRUNE_NATS {
                motions.push(k.m);
                log_w.push(ai - log_den);
            }
        }
        let mut acc = 0.0;
        let cumulative = log_w
            .iter()
            .map(|l| {
                acc += l.exp();
                acc
            })
            .collect();
        let kernel = PoseKernel::new(bw.motion_p, bw.motion_q);
        Ok(Self { role: model.role, action: model.action.clone(), h, motions, log_w, cumulative, bw, kernel })
    }

    pub fn len(&self) -> usize {
        self.motions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.motions.is_empty()
    }

    /// Log conditional density of the object motion `m_b`.
    pub fn log_eval(&self, m_b: &RigidMotion) -> f64 {
        let m_v = object_to_local_motion(m_b, &self.h).as_pose();
        log_sum_exp(self.motions.iter().zip(&self.log_w).map(|(m, lw)| lw + self.kernel.log(&m_v, &m.as_pose())))
    }

    /// Draws an object motion from the conditional mixture.
    pub fn sample_object_motion<R: Rng + ?Sized>(&self, rng: &mut R) -> RigidMotion {
        let total = *self.cumulative.last().unwrap_or(&1.0);
        let u = rng.random::<f64>() * total;
        let j = self.cumulative.partition_point(|c| *c <= u).min(self.motions.len() - 1);
        let m_v = RigidMotion::perturb(&self.motions[j], &self.bw, rng);
        local_to_object_motion(&m_v, &self.h)
    }
}

/// Sum of expert log densities; `−∞` as soon as any expert vetoes.
pub fn poe_score(experts: &[PreparedExpert], m_b: &RigidMotion) -> f64 {
    let floor = UNDERFLOW_FLOOR.ln();
    let mut total = 0.0;
    for e in experts {
        let l = e.log_eval(m_b);
        if !(l >= floor) {
            return f64::NEG_INFINITY;
        }
        total += l;
    }
    total
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictConfig {
    pub candidates: usize,
    pub seeds: usize,
    pub keep: usize,
    pub schedule: AnnealSchedule,
    /// Candidates closer than this to a better one are duplicates (meters, radians).
    pub dedupe_p: f64,
    pub dedupe_q: f64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            candidates: 500,
            seeds: 100,
            keep: 10,
            // log-likelihood differences near the optimum are fractions of a
            // nat, so the walk starts cool
            schedule: AnnealSchedule { t0: 0.01, t_min: 1e-4, step_p: 0.01, step_q: 3f64.to_radians(), iterations: 100 },
            dedupe_p: 1e-3,
            dedupe_q: 0.5f64.to_radians(),
        }
    }
}

impl PredictConfig {
    /// Reduced effort for laptop-scale runs.
    pub fn desk() -> Self {
        let full = Self::default();
        Self { candidates: 50, seeds: 50, schedule: full.schedule.with_iterations(50), ..full }
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates == 0 || self.seeds == 0 || self.keep == 0 {
            return Err(Error::Config("candidates, seeds and keep must be positive".into()));
        }
        self.schedule.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub m_b: RigidMotion,
    pub log_likelihood: f64,
    pub rank: usize,
}

/// Product-of-experts prediction. `experts[0]` must be the robot-object
/// expert; it supplies the seed motions. Each candidate draws `seeds`
/// motions, keeps the likeliest and refines it by annealing; the best
/// distinct refined candidates are returned in rank order.
pub fn predict<R: Rng + ?Sized>(experts: &[PreparedExpert], cfg: &PredictConfig, rng: &mut R) -> Result<Vec<Prediction>> {
    cfg.validate()?;
    let Some(lead) = experts.first() else {
        return Err(Error::Config("prediction needs at least one expert".into()));
    };
    if lead.role != ContactRole::RobotObject {
        return Err(Error::Config("the first expert must be the robot-object expert".into()));
    }
    if experts.iter().any(|e| e.action != lead.action) {
        return Err(Error::Config("experts disagree on the action".into()));
    }
    let seed: u64 = rng.random();
    let score = |m: &RigidMotion| poe_score(experts, m);
    let refined: Vec<Option<(RigidMotion, f64)>> = (0..cfg.candidates)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, "predict-candidate", i as u64);
            let mut best: Option<(RigidMotion, f64)> = None;
            for _ in 0..cfg.seeds {
                let m = lead.sample_object_motion(&mut rng);
                let s = score(&m);
                if s.is_finite() && best.as_ref().is_none_or(|b| s > b.1) {
                    best = Some((m, s));
                }
            }
            let (init, _) = best?;
            anneal_maximize(score, init, &cfg.schedule, |m, t, r| perturb_motion_step(m, &cfg.schedule, t, r), &mut rng)
                .ok()
        })
        .collect();
    let mut found: Vec<(usize, RigidMotion, f64)> =
        refined.into_iter().enumerate().filter_map(|(i, c)| c.map(|(m, s)| (i, m, s))).collect();
    if found.is_empty() {
        return Err(Error::AllVetoed);
    }
    found.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    let mut out: Vec<Prediction> = Vec::with_capacity(cfg.keep);
    for (_, m, s) in found {
        let duplicate = out.iter().any(|p| {
            let (dp, dq) = p.m_b.distance_to(&m);
            dp < cfg.dedupe_p && dq < cfg.dedupe_q
        });
        if !duplicate {
            out.push(Prediction { m_b: m, log_likelihood: s, rank: out.len() + 1 });
            if out.len() == cfg.keep {
                break;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{eval_motion_kernel, sample_theta};
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng, scale: f64) -> Pose {
        let p = Vector3::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale), rng.random_range(-scale..scale));
        Pose::new(p, sample_theta(&UnitQuaternion::identity(), 0.5, rng))
    }

    fn cond(rng: &mut ChaCha8Rng) -> Condition {
        Condition { u: random_pose(rng, 0.02), r: Vector2::new(rng.random_range(0.0..5.0), rng.random_range(-1.0..1.0)) }
    }

    fn push_motion(dx: f64, yaw_deg: f64) -> RigidMotion {
        RigidMotion::new(Vector3::new(dx, 0.0, 0.0), yaw_rotation(yaw_deg.to_radians()))
    }

    #[test]
    fn unicycle_base_motion() {
        let a = Action::new("linear", Vector3::new(0.1, 0.0, 0.0), 0.0, 4.0);
        let b0 = Pose::planar(1.0, 2.0, 0.0, std::f64::consts::FRAC_PI_2);
        let b = a.base_pose_at(&b0, 4.0);
        assert!((b.p() - Vector3::new(1.0, 2.4, 0.0)).norm() < 1e-12);
        assert!((a.displacement().norm() - 0.4).abs() < 1e-15);
        let turn = Action::new("turn", Vector3::new(0.1, 0.0, 0.0), 10.0, 4.0);
        let end = turn.base_pose_at(&Pose::identity(), 4.0);
        let r = 0.1 / 10f64.to_radians();
        let th = 40f64.to_radians();
        assert!((end.p() - Vector3::new(r * th.sin(), r * (1.0 - th.cos()), 0.0)).norm() < 1e-12);
        assert!((end.yaw() - th).abs() < 1e-12);
        let (v, w) = turn.base_twist_world(&b0);
        assert!((v - Vector2::new(0.0, 0.1)).norm() < 1e-12 && (w - 10f64.to_radians()).abs() < 1e-15);
    }

    #[test]
    fn single_kernel_conditional_is_motion_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = cond(&mut rng);
        let m1 = push_motion(0.4, 3.0);
        let model = MotionModel::new("linear", "front", ContactRole::RobotObject, vec![MotionKernel { c, m: m1 }], Bandwidths::default()).unwrap();
        let h = random_pose(&mut rng, 0.2);
        let m_b = push_motion(0.39, 1.0);
        let got = expert_conditional(&model, &m_b, &c, &h).unwrap();
        let want = eval_motion_kernel(&object_to_local_motion(&m_b, &h), &m1, &Bandwidths::default()).unwrap();
        assert_relative_eq!(got, want, max_relative = 1e-12);
    }

    #[test]
    fn conditional_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bw = Bandwidths { sigma_p: 0.05, sigma_q: 5.0, sigma_r: 3.0, motion_p: 0.05, motion_q: 20.0 };
        let kernels: Vec<_> = (0..50)
            .map(|_| MotionKernel { c: cond(&mut rng), m: RigidMotion::from_pose(&random_pose(&mut rng, 0.05)) })
            .collect();
        let weights: Vec<f64> = (0..50).map(|_| rng.random_range(0.1..1.0)).collect();
        let model = MotionModel {
            action: "a".into(),
            link: "front".into(),
            role: ContactRole::RobotObject,
            density: ParticleDensity::new(kernels.clone(), weights.clone(), bw).unwrap(),
        };
        let c = cond(&mut rng);
        let h = random_pose(&mut rng, 0.1);
        let m_b = RigidMotion::from_pose(&random_pose(&mut rng, 0.05));
        let m_v = object_to_local_motion(&m_b, &h);
        let z: f64 = weights.iter().sum();
        let (mut num, mut den) = (0.0, 0.0);
        for (k, w) in kernels.iter().zip(&weights) {
            let kc = log_condition_kernel(&c, &k.c, &bw).exp();
            num += w / z * eval_motion_kernel(&m_v, &k.m, &bw).unwrap() * kc;
            den += w / z * kc;
        }
        let got = expert_conditional(&model, &m_b, &c, &h).unwrap();
        assert_relative_eq!(got, num / den, max_relative = 1e-12);
        let prepared = PreparedExpert::new(&model, &c, h).unwrap();
        assert_relative_eq!(prepared.log_eval(&m_b), (num / den).ln(), max_relative = 1e-9);
    }

    #[test]
    fn far_condition_is_vetoed() {
        let c = Condition { u: Pose::identity(), r: Vector2::zeros() };
        let model = MotionModel::new("a", "front", ContactRole::RobotObject, vec![MotionKernel { c, m: RigidMotion::identity() }], Bandwidths::default()).unwrap();
        let far = Condition { u: Pose::from_translation(Vector3::new(1.0, 0.0, 0.0)), r: Vector2::zeros() };
        assert!(matches!(
            expert_conditional(&model, &RigidMotion::identity(), &far, &Pose::identity()),
            Err(Error::UnsupportedCondition(_))
        ));
        assert!(matches!(PreparedExpert::new(&model, &far, Pose::identity()), Err(Error::UnsupportedCondition(_))));
    }

    #[test]
    fn conditional_integrates_to_one() {
        // importance sampling with a broader Gaussian × Θ proposal
        let bw = Bandwidths { motion_p: 0.05, motion_q: 20.0, ..Bandwidths::default() };
        let c = Condition { u: Pose::identity(), r: Vector2::zeros() };
        let kernels = vec![
            MotionKernel { c, m: push_motion(0.1, 5.0) },
            MotionKernel { c, m: push_motion(0.05, -5.0) },
        ];
        let model = MotionModel::new("a", "front", ContactRole::RobotObject, kernels, bw).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (centre, sp, kp) = (Vector3::new(0.075, 0.0, 0.0), 0.1, 5.0);
        let n = 20_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let p = centre + crate::density::sample_gaussian3(sp, &mut rng);
            let mut q = sample_theta(&UnitQuaternion::identity(), kp, &mut rng);
            if rng.random::<bool>() {
                q = UnitQuaternion::new_unchecked(-q.into_inner());
            }
            let log_prop = log_gaussian(p.as_slice(), centre.as_slice(), sp)
                + crate::density::log_theta(&q, &UnitQuaternion::identity(), kp);
            let m = RigidMotion::new(p, q);
            acc += (log_expert_conditional(&model, &m, &c, &Pose::identity()).unwrap() - log_prop).exp();
        }
        let integral = acc / n as f64;
        assert!((integral - 1.0).abs() < 0.05, "integral {integral}");
    }

    #[test]
    fn poe_veto_and_shift_invariance() {
        let c = Condition { u: Pose::identity(), r: Vector2::zeros() };
        let m = MotionModel::new("a", "front", ContactRole::RobotObject, vec![MotionKernel { c, m: push_motion(0.4, 0.0) }], Bandwidths::default()).unwrap();
        let e = PreparedExpert::new(&m, &c, Pose::identity()).unwrap();
        let x = push_motion(0.41, 0.5);
        assert_eq!(poe_score(std::slice::from_ref(&e), &x), e.log_eval(&x));
        let far = push_motion(-3.0, 0.0);
        assert_eq!(poe_score(&[e.clone(), e.clone()], &far), f64::NEG_INFINITY);
    }

    #[test]
    fn single_rollout_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = cond(&mut rng);
        let h = Pose::planar(0.1, 0.02, 0.03, 0.3);
        let m_b = push_motion(0.38, 7.0);
        let m_v = object_to_local_motion(&m_b, &h);
        let model = MotionModel::new("a", "front", ContactRole::RobotObject, vec![MotionKernel { c, m: m_v }], Bandwidths::default()).unwrap();
        let e = PreparedExpert::new(&model, &c, h).unwrap();
        let cfg = PredictConfig::desk();
        let out = predict(&[e.clone()], &cfg, &mut rng).unwrap();
        let (dp, dq) = out[0].m_b.distance_to(&m_b);
        assert!(dp < 0.01 && dq < 2f64.to_radians(), "{dp} {dq}");
        assert!(out.windows(2).all(|w| w[0].log_likelihood >= w[1].log_likelihood));
        assert_eq!(out[0].rank, 1);
        let again = predict(&[e], &cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let first = predict(&[PreparedExpert::new(&model, &c, h).unwrap()], &cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(again, first);
    }

    #[test]
    fn predict_rejects_environment_lead() {
        let c = Condition { u: Pose::identity(), r: Vector2::zeros() };
        let m = MotionModel::new("a", "front", ContactRole::ObjectEnvironment, vec![MotionKernel { c, m: RigidMotion::identity() }], Bandwidths::default()).unwrap();
        let e = PreparedExpert::new(&m, &c, Pose::identity()).unwrap();
        assert!(predict(&[e], &PredictConfig::desk(), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn model_json_round_trip() {
        let c = Condition { u: Pose::planar(0.01, 0.0, 0.0, 0.2), r: Vector2::new(1.0, 0.5) };
        let m = MotionModel::new("turn-left", "side", ContactRole::ObjectEnvironment, vec![MotionKernel { c, m: push_motion(0.3, 2.0) }], Bandwidths::default()).unwrap();
        let back = MotionModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back.action, "turn-left");
        assert_eq!(back.role, ContactRole::ObjectEnvironment);
        assert_eq!(back.density.particles(), m.density.particles());
    }

    proptest! {
        #[test]
        fn log_shift_invariance_of_argmax(scale in 0.1f64..10.0, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = Condition { u: Pose::identity(), r: Vector2::zeros() };
            let m = MotionModel::new("a", "front", ContactRole::RobotObject, vec![MotionKernel { c, m: push_motion(0.4, 0.0) }], Bandwidths::default()).unwrap();
            let e = PreparedExpert::new(&m, &c, Pose::identity()).unwrap();
            let cands: Vec<_> = (0..10).map(|_| e.sample_object_motion(&mut rng)).collect();
            let argmax = |f: &dyn Fn(&RigidMotion) -> f64| (0..cands.len()).max_by(|a, b| f(&cands[*a]).total_cmp(&f(&cands[*b]))).unwrap();
            let a = argmax(&|x| poe_score(std::slice::from_ref(&e), x));
            let b = argmax(&|x| poe_score(std::slice::from_ref(&e), x) + scale.ln());
            prop_assert_eq!(a, b);
        }
    }
}
