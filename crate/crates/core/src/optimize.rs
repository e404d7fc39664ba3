//! Simulated annealing maximizer.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::density::{sample_gaussian3, sample_unit_vector};
use crate::error::{Error, Result};
use crate::geom::{axis_angle, Pose, RigidMotion};

/// Geometric cooling `T_k = T0·(Tmin/T0)^(k/iterations)`; proposal steps
/// shrink in proportion to `T/T0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub iterations: usize,
    pub t0: f64,
    pub t_min: f64,
    /// Translation proposal scale at `T0`, meters.
    pub step_p: f64,
    /// Rotation proposal scale at `T0`, radians.
    pub step_q: f64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self { iterations: 100, t0: 1.0, t_min: 0.01, step_p: 0.01, step_q: 5f64.to_radians() }
    }
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_min > 0.0 && self.t0 >= self.t_min && self.t0.is_finite()) {
            return Err(Error::Config(format!("need t0 ≥ t_min > 0, got t0={} t_min={}", self.t0, self.t_min)));
        }
        if !(self.step_p >= 0.0 && self.step_q >= 0.0) {
            return Err(Error::Config("proposal steps must be non-negative".into()));
        }
        Ok(())
    }

    pub fn temperature(&self, k: usize) -> f64 {
        if self.iterations == 0 {
            return self.t0;
        }
        self.t0 * (self.t_min / self.t0).powf(k as f64 / self.iterations as f64)
    }

    /// Proposal scale factor `T/T0`.
    pub fn scale(&self, t: f64) -> f64 {
        t / self.t0
    }

    pub fn with_iterations(self, iterations: usize) -> Self {
        Self { iterations, ..self }
    }
}

/// Result of an annealing run: best candidate seen and its score, plus the
/// best-so-far score after every iteration.
#[derive(Clone, Debug)]
pub struct AnnealOutcome<C> {
    pub best: C,
    pub score: f64,
    pub trace: Vec<f64>,
}

/// Maximizes `score`, starting from `init`. Worse proposals are accepted with
/// probability `exp(Δ/T)`; non-finite proposals are always rejected.
pub fn anneal_maximize<C, S, P, R>(score: S, init: C, schedule: &AnnealSchedule, proposal: P, rng: &mut R) -> Result<(C, f64)>
where
    C: Clone,
    S: FnMut(&C) -> f64,
    P: FnMut(&C, f64, &mut R) -> C,
    R: Rng + ?Sized,
{
    let out = anneal_traced(score, init, schedule, proposal, rng)?;
    Ok((out.best, out.score))
}

pub fn anneal_traced<C, S, P, R>(mut score: S, init: C, schedule: &AnnealSchedule, mut proposal: P, rng: &mut R) -> Result<AnnealOutcome<C>>
where
    C: Clone,
    S: FnMut(&C) -> f64,
    P: FnMut(&C, f64, &mut R) -> C,
    R: Rng + ?Sized,
{
    schedule.validate()?;
    let s0 = score(&init);
    if !s0.is_finite() {
        return Err(Error::NonFiniteScore);
    }
    let (mut cur, mut cur_s) = (init.clone(), s0);
    let (mut best, mut best_s) = (init, s0);
    let mut trace = Vec::with_capacity(schedule.iterations);
    for k in 0..schedule.iterations {
        let t = schedule.temperature(k);
        let cand = proposal(&cur, t, rng);
        let s = score(&cand);
        // one uniform per iteration keeps the stream aligned across outcomes
        let u: f64 = rng.random::<f64>();
        if s.is_finite() && (s >= cur_s || u < ((s - cur_s) / t).exp()) {
            cur = cand;
            cur_s = s;
            if s > best_s {
                best = cur.clone();
                best_s = s;
            }
        }
        trace.push(best_s);
    }
    Ok(AnnealOutcome { best, score: best_s, trace })
}

/// Gaussian translation plus random-axis rotation, both scaled by `T/T0`.
pub fn perturb_pose_step<R: Rng + ?Sized>(x: &Pose, schedule: &AnnealSchedule, t: f64, rng: &mut R) -> Pose {
    let s = schedule.scale(t);
    let dp = sample_gaussian3(schedule.step_p * s, rng);
    let angle: f64 = rng.sample::<f64, _>(StandardNormal) * schedule.step_q * s;
    let axis = sample_unit_vector(rng);
    Pose::new(x.p() + dp, axis_angle(&axis, angle) * x.q())
}

/// As [`perturb_pose_step`], restricted to the ground plane: translation in
/// x/y and rotation about z.
pub fn perturb_planar_step<R: Rng + ?Sized>(x: &Pose, schedule: &AnnealSchedule, t: f64, rng: &mut R) -> Pose {
    let s = schedule.scale(t);
    let dx: f64 = rng.sample::<f64, _>(StandardNormal) * schedule.step_p * s;
    let dy: f64 = rng.sample::<f64, _>(StandardNormal) * schedule.step_p * s;
    let angle: f64 = rng.sample::<f64, _>(StandardNormal) * schedule.step_q * s;
    Pose::new(x.p() + nalgebra::Vector3::new(dx, dy, 0.0), crate::geom::yaw_rotation(angle) * x.q())
}

pub fn perturb_motion_step<R: Rng + ?Sized>(m: &RigidMotion, schedule: &AnnealSchedule, t: f64, rng: &mut R) -> RigidMotion {
    RigidMotion::from_pose(&perturb_pose_step(&m.as_pose(), schedule, t, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quad_schedule(iterations: usize) -> AnnealSchedule {
        AnnealSchedule { iterations, t0: 1.0, t_min: 1e-4, step_p: 1.0, step_q: 0.0 }
    }

    fn step(x: &f64, t: f64, rng: &mut ChaCha8Rng) -> f64 {
        x + rng.sample::<f64, _>(StandardNormal) * t
    }

    #[test]
    fn zero_iterations_returns_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (x, s) = anneal_maximize(|x: &f64| -x * x, 1.5, &quad_schedule(0), step, &mut rng).unwrap();
        assert_eq!(x, 1.5);
        assert_eq!(s, -2.25);
    }

    #[test]
    fn quadratic_maximum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (x, _) = anneal_maximize(|x: &f64| -(x - 3.0).powi(2), 0.0, &quad_schedule(1000), step, &mut rng).unwrap();
        assert!((x - 3.0).abs() < 0.05, "{x}");
    }

    #[test]
    fn deterministic_for_seed() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            anneal_traced(|x: &f64| -(x - 3.0).powi(2), 0.0, &quad_schedule(200), step, &mut rng).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.best, b.best);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn non_finite_init_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = anneal_maximize(|_: &f64| f64::NEG_INFINITY, 0.0, &quad_schedule(10), step, &mut rng);
        assert!(matches!(r, Err(Error::NonFiniteScore)));
    }

    #[test]
    fn cooling_endpoints() {
        let s = AnnealSchedule { iterations: 10, t0: 2.0, t_min: 0.02, ..Default::default() };
        assert_eq!(s.temperature(0), 2.0);
        assert!((s.temperature(10) - 0.02).abs() < 1e-15);
        assert!((s.temperature(5) - 0.2).abs() < 1e-12);
        assert!(AnnealSchedule { t0: 0.01, t_min: 0.1, ..s }.validate().is_err());
    }

    #[test]
    fn pose_annealing_finds_target() {
        let target = Pose::new(nalgebra::Vector3::new(0.02, -0.01, 0.03), crate::geom::yaw_rotation(0.1));
        let score = |x: &Pose| {
            let (d, a) = x.distance_to(&target);
            -(d / 0.01).powi(2) - (a / 0.05).powi(2)
        };
        let sched = AnnealSchedule { iterations: 2000, t0: 1.0, t_min: 1e-3, step_p: 0.01, step_q: 0.1 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (best, _) =
            anneal_maximize(score, Pose::identity(), &sched, |x, t, r| perturb_pose_step(x, &sched, t, r), &mut rng).unwrap();
        let (d, a) = best.distance_to(&target);
        assert!(d < 2e-3 && a < 0.02, "{d} {a}");
    }

    proptest! {
        #[test]
        fn best_so_far_is_monotone_and_not_below_init(seed in 0u64..1000, init in -10.0f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = |x: &f64| (3.0 * x).sin() - 0.1 * x * x;
            let out = anneal_traced(f, init, &quad_schedule(100), step, &mut rng).unwrap();
            prop_assert!(out.score >= f(&init));
            prop_assert!(out.trace.windows(2).all(|w| w[1] >= w[0]));
            prop_assert_eq!(out.score, f(&out.best));
        }
    }
}
