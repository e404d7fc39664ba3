//! Experiment protocol: training-set generation, model learning, test pushes,
//! predictors, error metrics and reports.

mod evaluate;
mod report;
mod train;

use std::fmt;
use std::str::FromStr;

use nalgebra::{Quaternion, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::KeyValues;
use crate::contact::{DEFAULT_ENV_CUTOFF, DEFAULT_ENV_SAMPLES, DEFAULT_ROBOT_CUTOFF};
use crate::density::Bandwidths;
use crate::error::{Error, Result};
use crate::geom::{yaw_rotation, Pose, RigidMotion};
use crate::motion::{Action, PredictConfig};
use crate::pushsim::{Link, ShapeSpec, SimConfig};
use crate::query::{Feasibility, SelectionConfig, DEFAULT_QUERY_PARTICLES};

pub use evaluate::{
    generate_test_set, grid_search, predict_case, predicted_final, run_evaluation, CaseSetup, GridPoint, TestCase, TestSet, TruthPush,
    VariantPrediction,
};
pub use report::{summarize, EvaluationReport, EvaluationRow, SummaryRow, ALL};
pub use train::{run_training, ContactRecord, ModelBundle, MotionSet, PreparedObject, TrainingPush, TrainingStats};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    Paper,
    Desk,
}

impl Scale {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scale::Paper => "paper",
            Scale::Desk => "desk",
        }
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "paper" => Ok(Scale::Paper),
            "desk" => Ok(Scale::Desk),
            other => Err(Error::Config(format!("unknown scale '{other}' (paper, desk)"))),
        }
    }
}

/// Prediction methods compared in the evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Predictor {
    Ro,
    Ro3oe,
    Ro5oe,
    Baseline,
}

pub const TRAINED_PREDICTORS: [Predictor; 3] = [Predictor::Ro, Predictor::Ro3oe, Predictor::Ro5oe];

impl Predictor {
    pub fn as_str(&self) -> &'static str {
        match self {
            Predictor::Ro => "ro",
            Predictor::Ro3oe => "ro3oe",
            Predictor::Ro5oe => "ro5oe",
            Predictor::Baseline => "baseline",
        }
    }

    /// Environment experts used alongside the robot-object expert.
    pub fn env_frames(&self) -> usize {
        match self {
            Predictor::Ro | Predictor::Baseline => 0,
            Predictor::Ro3oe => 3,
            Predictor::Ro5oe => 5,
        }
    }

    pub fn is_trained(&self) -> bool {
        *self != Predictor::Baseline
    }
}

impl fmt::Display for Predictor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Predictor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(['+', '-', '_'], "").as_str() {
            "ro" => Ok(Predictor::Ro),
            "ro3oe" => Ok(Predictor::Ro3oe),
            "ro5oe" => Ok(Predictor::Ro5oe),
            "baseline" => Ok(Predictor::Baseline),
            _ => Err(Error::Config(format!("unknown predictor '{s}' (ro, ro3oe, ro5oe, baseline)"))),
        }
    }
}

/// How the baseline's deflection angle for angular pushes is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaMode {
    /// α equals the commanded yaw rate read as an angle (10°).
    Literal,
    /// α is the yaw turned over the whole push (rate × duration).
    Integrated,
}

impl FromStr for AlphaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "literal" => Ok(AlphaMode::Literal),
            "integrated" => Ok(AlphaMode::Integrated),
            other => Err(Error::Config(format!("unknown alpha mode '{other}' (literal, integrated)"))),
        }
    }
}

/// Which prediction of the ranked list is scored.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scoring {
    Rank1,
    /// The candidate with the lowest error among the kept list (an oracle
    /// upper bound on ranking quality).
    BestOfList,
}

impl FromStr for Scoring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rank1" | "rank-1" => Ok(Scoring::Rank1),
            "best" | "best-of-list" | "best-of-10" => Ok(Scoring::BestOfList),
            other => Err(Error::Config(format!("unknown scoring '{other}' (rank1, best-of-10)"))),
        }
    }
}

/// Robot command shared by every action: forward speed, turn rate magnitude
/// and duration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionParams {
    pub speed: f64,
    pub angular_deg: f64,
    pub duration: f64,
}

impl Default for ActionParams {
    fn default() -> Self {
        Self { speed: 0.1, angular_deg: 10.0, duration: 4.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub scale: Scale,
    pub training_object: ShapeSpec,
    pub test_objects: Vec<ShapeSpec>,
    /// Feasible training contacts per robot-object contact model.
    pub contacts: usize,
    /// Rollouts per (contact, action).
    pub rollouts: usize,
    /// Environment frames tracked per training rollout.
    pub train_env_frames: usize,
    /// Training pushes per motion model.
    pub training_sizes: Vec<usize>,
    /// Query poses per (test object, link).
    pub query_poses: usize,
    /// Ground-truth pushes per (query pose, action).
    pub repeats: usize,
    pub predictors: Vec<Predictor>,
    pub actions: ActionParams,
    pub alpha: AlphaMode,
    pub scoring: Scoring,
    pub feature_k: usize,
    pub query_particles: usize,
    pub robot_cutoff: f64,
    pub env_cutoff: f64,
    pub env_samples: usize,
    /// Grid spacing of the link face used to learn robot-object contacts.
    pub link_spacing: f64,
    pub bandwidths: Bandwidths,
    pub predict: PredictConfig,
    pub selection: SelectionConfig,
    pub sim: SimConfig,
    pub feasibility: Feasibility,
}

pub fn default_training_object() -> ShapeSpec {
    ShapeSpec::cube(0.2)
}

pub fn default_test_objects() -> Vec<ShapeSpec> {
    vec![
        ShapeSpec::cube(0.2),
        ShapeSpec::cuboid(0.3, 0.2, 0.2),
        ShapeSpec::triangular_prism(0.2, 0.2),
        ShapeSpec::rounded_prism(0.2, 0.2, 0.2, 0.05),
        ShapeSpec::cylinder(0.1, 0.2),
    ]
}

/// The two robot links carrying contact models.
pub fn default_links() -> Vec<Link> {
    vec![Link::front(), Link::side()]
}

const KEYS: &[&str] = &[
    "seed",
    "scale",
    "training_object",
    "test_object",
    "contacts",
    "rollouts",
    "train_env_frames",
    "training_sizes",
    "query_poses",
    "repeats",
    "predictors",
    "speed",
    "angular_deg",
    "duration",
    "alpha",
    "scoring",
    "feature_k",
    "query_particles",
    "robot_cutoff",
    "env_cutoff",
    "env_samples",
    "link_spacing",
    "sigma_p",
    "sigma_q",
    "sigma_r",
    "motion_p",
    "motion_q",
    "candidates",
    "seeds",
    "keep",
    "iterations",
    "t0",
    "t_min",
    "friction_min",
    "friction_max",
    "waypoints",
    "oversampling",
];

impl ExperimentConfig {
    /// Full protocol: 100 contacts × 5 rollouts per model, 50 query poses.
    pub fn paper(seed: u64) -> Self {
        Self {
            seed,
            scale: Scale::Paper,
            training_object: default_training_object(),
            test_objects: default_test_objects(),
            contacts: 100,
            rollouts: 5,
            train_env_frames: 5,
            training_sizes: vec![100, 200, 500],
            query_poses: 50,
            repeats: 4,
            predictors: TRAINED_PREDICTORS.to_vec(),
            actions: ActionParams::default(),
            alpha: AlphaMode::Literal,
            scoring: Scoring::Rank1,
            feature_k: 20,
            query_particles: DEFAULT_QUERY_PARTICLES,
            robot_cutoff: DEFAULT_ROBOT_CUTOFF,
            env_cutoff: DEFAULT_ENV_CUTOFF,
            env_samples: DEFAULT_ENV_SAMPLES,
            link_spacing: 0.005,
            bandwidths: Bandwidths::default(),
            predict: PredictConfig::default(),
            selection: SelectionConfig::default(),
            sim: SimConfig::default(),
            feasibility: Feasibility::default(),
        }
    }

    /// Same training protocol with 3 query poses per (object, link), i.e. 60
    /// test pushes per object, and a lighter optimizer.
    pub fn desk(seed: u64) -> Self {
        Self {
            scale: Scale::Desk,
            training_sizes: vec![100, 500],
            query_poses: 3,
            predict: PredictConfig::desk(),
            ..Self::paper(seed)
        }
    }

    pub fn preset(scale: Scale, seed: u64) -> Self {
        match scale {
            Scale::Paper => Self::paper(seed),
            Scale::Desk => Self::desk(seed),
        }
    }

    /// Preset named by `scale` (default desk) with every other key applied
    /// as an override.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        kv.check_known(KEYS)?;
        let scale = kv.parse_value::<Scale>("scale")?.unwrap_or(Scale::Desk);
        let mut c = Self::preset(scale, kv.parse_value("seed")?.unwrap_or(0));
        if let Some(s) = kv.get("training_object") {
            c.training_object = s.parse()?;
        }
        let tests = kv.get_all("test_object");
        if !tests.is_empty() {
            c.test_objects = tests.into_iter().map(str::parse).collect::<Result<_>>()?;
        }
        macro_rules! set {
            ($($key:literal => $field:expr),* $(,)?) => {
                $(if let Some(v) = kv.parse_value($key)? { $field = v; })*
            };
        }
        set! {
            "contacts" => c.contacts,
            "rollouts" => c.rollouts,
            "train_env_frames" => c.train_env_frames,
            "query_poses" => c.query_poses,
            "repeats" => c.repeats,
            "speed" => c.actions.speed,
            "angular_deg" => c.actions.angular_deg,
            "duration" => c.actions.duration,
            "alpha" => c.alpha,
            "scoring" => c.scoring,
            "feature_k" => c.feature_k,
            "query_particles" => c.query_particles,
            "robot_cutoff" => c.robot_cutoff,
            "env_cutoff" => c.env_cutoff,
            "env_samples" => c.env_samples,
            "link_spacing" => c.link_spacing,
            "sigma_p" => c.bandwidths.sigma_p,
            "sigma_q" => c.bandwidths.sigma_q,
            "sigma_r" => c.bandwidths.sigma_r,
            "motion_p" => c.bandwidths.motion_p,
            "motion_q" => c.bandwidths.motion_q,
            "candidates" => c.predict.candidates,
            "seeds" => c.predict.seeds,
            "keep" => c.predict.keep,
            "iterations" => c.predict.schedule.iterations,
            "t0" => c.predict.schedule.t0,
            "t_min" => c.predict.schedule.t_min,
            "friction_min" => c.sim.friction_min,
            "friction_max" => c.sim.friction_max,
            "waypoints" => c.sim.waypoints,
            "oversampling" => c.feasibility.oversampling,
        }
        if let Some(v) = kv.parse_list("training_sizes")? {
            c.training_sizes = v;
        }
        if let Some(v) = kv.parse_list("predictors")? {
            c.predictors = v;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_key_values(&KeyValues::parse(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("contacts", self.contacts),
            ("rollouts", self.rollouts),
            ("query_poses", self.query_poses),
            ("repeats", self.repeats),
            ("feature_k", self.feature_k),
            ("query_particles", self.query_particles),
            ("env_samples", self.env_samples),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.training_sizes.is_empty() || self.training_sizes.contains(&0) {
            return Err(Error::Config("training sizes must be positive".into()));
        }
        let pool = self.contacts * self.rollouts;
        if let Some(s) = self.training_sizes.iter().find(|s| **s > pool) {
            return Err(Error::Config(format!("training size {s} exceeds the {pool} pushes generated per model")));
        }
        if self.predictors.iter().any(|p| !p.is_trained()) {
            return Err(Error::Config("predictors lists trained variants only; the baseline always runs".into()));
        }
        let need = self.predictors.iter().map(Predictor::env_frames).max().unwrap_or(0);
        if need > 0 && self.train_env_frames == 0 {
            return Err(Error::Config("environment predictors need train_env_frames > 0".into()));
        }
        if self.test_objects.is_empty() {
            return Err(Error::Config("no test objects".into()));
        }
        if !(self.actions.speed > 0.0 && self.actions.duration > 0.0) {
            return Err(Error::Config("action speed and duration must be positive".into()));
        }
        if !(self.robot_cutoff > 0.0 && self.env_cutoff > 0.0 && self.link_spacing > 0.0) {
            return Err(Error::Config("cutoffs and link spacing must be positive".into()));
        }
        self.training_object.validate()?;
        for o in &self.test_objects {
            o.validate()?;
        }
        self.bandwidths.validate()?;
        self.predict.validate()?;
        self.sim.validate()
    }

    /// SHA-256 of the canonical JSON form; identifies the configuration in
    /// every artifact.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Push length `L`: distance covered by the linear push.
    pub fn push_length(&self) -> f64 {
        self.actions.speed * self.actions.duration
    }

    pub fn action_set(&self) -> Vec<Action> {
        action_set_with(&self.actions)
    }

    pub fn alpha_rad(&self) -> f64 {
        match self.alpha {
            AlphaMode::Literal => self.actions.angular_deg.to_radians(),
            AlphaMode::Integrated => (self.actions.angular_deg * self.actions.duration).to_radians(),
        }
    }
}

/// The three pushes: straight ahead, turning left, turning right.
pub fn build_action_set() -> Vec<Action> {
    action_set_with(&ActionParams::default())
}

fn action_set_with(p: &ActionParams) -> Vec<Action> {
    let v = Vector3::new(p.speed, 0.0, 0.0);
    vec![
        Action::new("linear", v, 0.0, p.duration),
        Action::new("left", v, p.angular_deg, p.duration),
        Action::new("right", v, -p.angular_deg, p.duration),
    ]
}

/// Actions used with `link`: angular pushes that turn the robot away from
/// the side its link faces are dropped. A link facing straight ahead keeps
/// both turns.
pub fn actions_for_link(link: &Link, actions: &[Action]) -> Vec<Action> {
    let lateral = link.offset.axis(0).y;
    actions.iter().filter(|a| a.omega() * lateral >= -1e-12).cloned().collect()
}

/// Translation-only prediction: the commanded displacement `a·l`, deflected
/// by `α` toward the turn for angular pushes, expressed in world axes via the
/// robot base orientation.
pub fn baseline_predict(action: &Action, robot_pose: &Pose, alpha: f64) -> RigidMotion {
    let turn = if action.angular_deg == 0.0 { 0.0 } else { alpha * action.angular_deg.signum() };
    let t = robot_pose.q() * (yaw_rotation(turn) * action.displacement());
    RigidMotion::from_translation(t)
}

/// Final object pose under [`baseline_predict`]: the translation is applied
/// to the initial centre of mass, orientation unchanged.
pub fn baseline_final_pose(action: &Action, com_pose: &Pose, robot_pose: &Pose, alpha: f64) -> Pose {
    let m = baseline_predict(action, robot_pose, alpha);
    Pose::new(com_pose.p() + m.p(), *com_pose.q())
}

fn check_unit(q: &Quaternion<f64>) -> Result<()> {
    let n = q.norm();
    if (n - 1.0).abs() > 1e-9 || !n.is_finite() {
        return Err(Error::NonUnitQuaternion(n));
    }
    Ok(())
}

/// Angular error `1 − (q_test · q_pred)²`; zero for antipodal quaternions.
pub fn d_ang(q_test: &Quaternion<f64>, q_pred: &Quaternion<f64>) -> Result<f64> {
    check_unit(q_test)?;
    check_unit(q_pred)?;
    let d = q_test.coords.dot(&q_pred.coords);
    Ok((1.0 - d * d).clamp(0.0, 1.0))
}

pub fn d_lin(p_test: &Vector3<f64>, p_pred: &Vector3<f64>) -> f64 {
    (p_test - p_pred).norm()
}

/// Normalized error `½ d_ang + d_lin / (2L)`.
pub fn d_norm(d_lin: f64, d_ang: f64, push_length: f64) -> f64 {
    0.5 * d_ang + d_lin / (2.0 * push_length)
}
