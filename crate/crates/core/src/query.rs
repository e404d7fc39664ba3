//! Query densities: a contact model combined with the features of a novel
//! object, giving a density over where the learned contact can occur.

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::contact::{environment_frame, ContactKind, ContactModel};
use crate::density::{
    log_gaussian, log_pose_kernel, log_sum_exp, perturb_pose, Bandwidths, DensityKind, KernelPoint, ParticleDensity,
    PoseKernel,
};
use crate::error::{Error, Result};
use crate::features::{NeighborIndex, PointCloud, SurfaceFeature};
use crate::geom::{relative_pose, Pose};
use crate::motion::Condition;
use crate::optimize::{anneal_maximize, perturb_pose_step, AnnealSchedule};
use crate::pushsim::Link;

pub const DEFAULT_QUERY_PARTICLES: usize = 200;

/// One query particle: the body pose `s = v ∘ u` it implies, the object
/// feature frame `v`, and the contact-model sample it came from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryParticle {
    pub s: Pose,
    pub v: Pose,
    pub u: Pose,
    pub r: Vector2<f64>,
    pub feature: usize,
}

impl KernelPoint for QueryParticle {
    const KIND: DensityKind = DensityKind::PosePair;

    fn log_kernel(x: &Self, mu: &Self, bw: &Bandwidths) -> f64 {
        log_pose_kernel(&x.s, &mu.s, bw.sigma_p, bw.sigma_q) + log_pose_kernel(&x.v, &mu.v, bw.sigma_p, bw.sigma_q)
    }

    fn perturb<R: Rng + ?Sized>(mu: &Self, bw: &Bandwidths, rng: &mut R) -> Self {
        Self {
            s: perturb_pose(&mu.s, bw.sigma_p, bw.sigma_q, rng),
            v: perturb_pose(&mu.v, bw.sigma_p, bw.sigma_q, rng),
            ..*mu
        }
    }
}

/// Kernel widths used when annealing over contact frames. Wider than the
/// learning bandwidths so the score surface is smooth between particles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub sigma_p: f64,
    pub kappa: f64,
    pub schedule: AnnealSchedule,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { sigma_p: 0.02, kappa: 20.0, schedule: AnnealSchedule::default() }
    }
}

pub struct QueryDensity {
    pub density: ParticleDensity<QueryParticle>,
    pub model: ContactModel,
    features: Vec<SurfaceFeature>,
    index: NeighborIndex,
}

impl std::fmt::Debug for QueryDensity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QueryDensity")
            .field("particles", &self.density.len())
            .field("kind", &self.model.kind)
            .field("features", &self.features.len())
            .finish()
    }
}

/// Angle between a frame's z axis and world up.
fn tilt(p: &Pose) -> f64 {
    p.axis(2).z.clamp(-1.0, 1.0).acos()
}

/// Draws `k_q` (feature, contact-sample) pairs and weights each by how well
/// the feature's curvature matches the sample's. For environment models only
/// features within the model's cutoff of the ground are drawn, and the
/// implied ground frame is further weighted by its height and tilt.
pub fn build_query_density<R: Rng + ?Sized>(
    model: &ContactModel,
    features: &[SurfaceFeature],
    k_q: usize,
    rng: &mut R,
) -> Result<QueryDensity> {
    if model.is_empty() {
        return Err(Error::EmptyModel);
    }
    if features.is_empty() {
        return Err(Error::EmptyFeatures);
    }
    if k_q == 0 {
        return Err(Error::Config("query particle count must be positive".into()));
    }
    let bw = *model.bandwidths();
    let pool: Vec<usize> = match model.kind {
        ContactKind::RobotObject => (0..features.len()).collect(),
        ContactKind::ObjectEnvironment { ground_height } => (0..features.len())
            .filter(|&j| features[j].pose.p().z - ground_height < model.cutoff)
            .collect(),
    };
    if pool.is_empty() {
        return Err(Error::NoContact("no object feature can touch the environment".into()));
    }
    let tilt_sigma = 2.0 / bw.sigma_q.sqrt();
    let mut particles = Vec::with_capacity(k_q);
    let mut log_w = Vec::with_capacity(k_q);
    for _ in 0..k_q {
        let j = pool[rng.random_range(0..pool.len())];
        let i = model.density.select_index(rng);
        let c = &model.density.particles()[i];
        let f = &features[j];
        let s = f.pose.compose(&c.pose);
        let mut lw = log_gaussian(f.r.as_slice(), c.r.as_slice(), bw.sigma_r);
        if let ContactKind::ObjectEnvironment { ground_height } = model.kind {
            let t = tilt(&s);
            lw += log_gaussian(&[s.p().z], &[ground_height], bw.sigma_p) - t * t / (2.0 * tilt_sigma * tilt_sigma);
        }
        particles.push(QueryParticle { s, v: f.pose, u: c.pose, r: f.r, feature: j });
        log_w.push(lw);
    }
    let points: Vec<Vector3<f64>> = features.iter().map(|f| *f.pose.p()).collect();
    Ok(QueryDensity {
        density: ParticleDensity::from_log_weights(particles, &log_w, bw)?,
        model: model.clone(),
        features: features.to_vec(),
        index: NeighborIndex::new(&points),
    })
}

/// A selected contact frame on the object and its conditioning pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactFrame {
    pub v: Pose,
    pub condition: Condition,
    /// Nearest object feature.
    pub feature: usize,
    pub score: f64,
}

/// Contact frames for one push, with their poses relative to the object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactFrameSet {
    pub v_l: Pose,
    pub link_pose: Pose,
    pub h_l: Pose,
    pub env_frames: Vec<(Pose, Pose)>,
    /// Robot-object condition first, then one per environment frame.
    pub conditions: Vec<Condition>,
}

impl ContactFrameSet {
    pub fn new(link: &ContactFrame, link_pose: Pose, env: &[ContactFrame], object_pose: &Pose) -> Self {
        let mut conditions = vec![link.condition];
        conditions.extend(env.iter().map(|e| e.condition));
        Self {
            v_l: link.v,
            link_pose,
            h_l: relative_pose(&link.v, object_pose),
            env_frames: env.iter().map(|e| (e.v, relative_pose(&e.v, object_pose))).collect(),
            conditions,
        }
    }

    pub fn env_count(&self) -> usize {
        self.env_frames.len()
    }
}

impl QueryDensity {
    pub fn len(&self) -> usize {
        self.density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.density.is_empty()
    }

    pub fn features(&self) -> &[SurfaceFeature] {
        &self.features
    }

    pub fn particles(&self) -> &[QueryParticle] {
        self.density.particles()
    }

    fn nearest_feature(&self, p: &Vector3<f64>) -> usize {
        self.index.nearest(p, 1)[0]
    }

    /// A link pose from the `s` marginal: weighted particle plus kernel noise.
    pub fn sample_link_pose<R: Rng + ?Sized>(&self, rng: &mut R) -> Pose {
        let bw = self.density.bandwidths();
        let s = self.density.particles()[self.density.select_index(rng)].s;
        perturb_pose(&s, bw.sigma_p, bw.sigma_q, rng)
    }

    /// Frame candidates for a link at `link_pose`: `v_i = s ∘ u_i⁻¹` for every
    /// contact sample, weighted by sample weight, closeness to the object
    /// surface and curvature agreement.
    fn frame_candidates(&self, link_pose: &Pose, sel: &SelectionConfig) -> Vec<(Pose, f64)> {
        let bw = self.model.bandwidths();
        let mut out: Vec<(Pose, f64)> = self
            .model
            .density
            .iter()
            .map(|(c, w)| {
                let v = link_pose.compose(&c.pose.inverse());
                let f = &self.features[self.nearest_feature(v.p())];
                let lw = w.ln()
                    + log_pose_kernel(&v, &f.pose, sel.sigma_p, sel.kappa)
                    + log_gaussian(f.r.as_slice(), c.r.as_slice(), bw.sigma_r);
                (v, lw)
            })
            .collect();
        let top = out.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
        out.retain(|c| c.1.is_finite() && c.1 >= top - 30.0);
        out
    }

    fn frame_score(cands: &[(Pose, f64)], v: &Pose, sel: &SelectionConfig) -> f64 {
        let k = PoseKernel::new(sel.sigma_p, sel.kappa);
        log_sum_exp(cands.iter().map(|(c, lw)| lw + k.log(v, c)))
    }

    /// Object frame in contact with a link at `link_pose`, maximizing the
    /// frame density by annealing from the best candidate or particle.
    pub fn select_contact_frame<R: Rng + ?Sized>(
        &self,
        link_pose: &Pose,
        sel: &SelectionConfig,
        rng: &mut R,
    ) -> Result<ContactFrame> {
        let cands = self.frame_candidates(link_pose, sel);
        if cands.is_empty() {
            return Err(Error::NoContact("no contact frame is compatible with the link pose".into()));
        }
        let score = |v: &Pose| Self::frame_score(&cands, v, sel);
        let init = cands
            .iter()
            .map(|c| c.0)
            .chain(self.density.particles().iter().map(|p| p.v))
            .map(|v| (score(&v), v))
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, v)| v)
            .unwrap_or(cands[0].0);
        let (v, s) = anneal_maximize(score, init, &sel.schedule, |x, t, r| perturb_pose_step(x, &sel.schedule, t, r), rng)?;
        let feature = self.nearest_feature(v.p());
        Ok(ContactFrame {
            v,
            condition: Condition { u: relative_pose(&v, link_pose), r: self.features[feature].r },
            feature,
            score: s,
        })
    }

    /// Density of the frame `v` given a link at `link_pose`, as maximized by
    /// [`Self::select_contact_frame`].
    pub fn frame_density(&self, link_pose: &Pose, v: &Pose, sel: &SelectionConfig) -> f64 {
        Self::frame_score(&self.frame_candidates(link_pose, sel), v, sel)
    }

    /// `n_e` environment frames drawn from the `v` marginal, each with its
    /// condition relative to the ground point below it.
    pub fn sample_env_frames<R: Rng + ?Sized>(&self, n_e: usize, rng: &mut R) -> Result<Vec<ContactFrame>> {
        let ContactKind::ObjectEnvironment { ground_height } = self.model.kind else {
            return Err(Error::Config("environment frames need an object-environment query density".into()));
        };
        Ok((0..n_e)
            .map(|_| {
                let i = self.density.select_index(rng);
                let p = &self.density.particles()[i];
                let z = environment_frame(&p.v, ground_height);
                ContactFrame {
                    v: p.v,
                    condition: Condition { u: relative_pose(&p.v, &z), r: p.r },
                    feature: p.feature,
                    score: self.density.weights()[i].ln(),
                }
            })
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        self.density.to_json()
    }
}

/// Feasibility limits for sampled link poses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    /// Largest allowed offset from the link's mount height, meters.
    pub height_tolerance: f64,
    /// Largest allowed tilt of the link's up axis, radians.
    pub tilt_tolerance: f64,
    /// Largest slide along the link normal to reach the surface, meters.
    pub max_shift: f64,
    /// Cloud points deeper than this inside the link reject the pose, meters.
    pub penetration: f64,
    /// Draws per requested pose before giving up.
    pub oversampling: usize,
}

impl Default for Feasibility {
    fn default() -> Self {
        Self {
            height_tolerance: 0.02,
            tilt_tolerance: 10f64.to_radians(),
            max_shift: 0.05,
            penetration: 0.002,
            oversampling: 100,
        }
    }
}

/// Turns a sampled link pose into one the robot can realize: upright at the
/// mount height and slid along its normal until the face touches the cloud.
/// `None` when the sample is too far off or the link would cut into the object.
pub fn place_link(s: &Pose, link: &Link, cloud: &PointCloud, lim: &Feasibility) -> Option<Pose> {
    if (s.p().z - link.mount_height()).abs() > lim.height_tolerance || tilt(s) > lim.tilt_tolerance {
        return None;
    }
    let upright = Pose::planar(s.p().x, s.p().y, link.mount_height(), s.yaw());
    let (hl, hh) = (link.length / 2.0, link.height / 2.0);
    let offset = cloud
        .points
        .iter()
        .map(|p| upright.inverse_transform_point(p))
        .filter(|l| l.y.abs() <= hl && l.z.abs() <= hh)
        .map(|l| l.x)
        .min_by(f64::total_cmp)?;
    if offset.abs() > lim.max_shift {
        return None;
    }
    let placed = upright.compose(&Pose::from_translation(Vector3::new(offset, 0.0, 0.0)));
    if cloud.points.iter().any(|p| link.penetration(&placed, p) > lim.penetration) {
        return None;
    }
    Some(placed)
}

/// Draws link poses from the query density until one is feasible.
pub fn sample_feasible_link_pose<R: Rng + ?Sized>(
    q: &QueryDensity,
    link: &Link,
    cloud: &PointCloud,
    lim: &Feasibility,
    rng: &mut R,
) -> Result<Pose> {
    for _ in 0..lim.oversampling {
        if let Some(p) = place_link(&q.sample_link_pose(rng), link, cloud, lim) {
            return Ok(p);
        }
    }
    Err(Error::NoFeasiblePose(lim.oversampling))
}
