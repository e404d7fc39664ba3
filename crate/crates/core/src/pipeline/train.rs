//! Training-set generation on the training object and model learning.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{actions_for_link, default_links, ExperimentConfig};
use crate::contact::{learn_object_environment, learn_robot_object, ContactModel};
use crate::density::Bandwidths;
use crate::error::{Error, Result};
use crate::features::{build_features_with, FeatureConfig, PointCloud, SurfaceFeature};
use crate::geom::Pose;
use crate::motion::{record_rollout, Action, ContactRole, MotionKernel, MotionModel};
use crate::pushsim::shapes::bounding_box;
use crate::pushsim::{
    estimate_pose_from_cloud, estimate_upright_pose, sample_friction, simulate_push, Link, PushScene, ShapeSpec,
    SimObject,
};
use crate::query::{build_query_density, sample_feasible_link_pose, ContactFrame, QueryDensity};
use crate::seeding::stream_rng;

/// An object resting on the ground with its sampled cloud and features.
#[derive(Clone, Debug)]
pub struct PreparedObject {
    pub spec: ShapeSpec,
    pub sim: SimObject,
    /// True pose.
    pub pose: Pose,
    /// World-frame cloud.
    pub cloud: PointCloud,
    pub features: Vec<SurfaceFeature>,
    /// Object frame estimated from the cloud, used for `h`.
    pub estimate: Pose,
}

impl PreparedObject {
    pub fn new<R: Rng + ?Sized>(spec: &ShapeSpec, yaw: f64, cfg: &ExperimentConfig, rng: &mut R) -> Result<Self> {
        let sim = SimObject::new(spec, &cfg.sim)?;
        let pose = sim.resting_pose(0.0, 0.0, yaw, &cfg.sim);
        let cloud = spec.sample(rng)?.cloud.transformed(&pose);
        let features = build_features_with(&cloud, &FeatureConfig::with_k(cfg.feature_k))?;
        let estimate = estimate_pose_from_cloud(&cloud).or_else(|_| estimate_upright_pose(&cloud))?;
        Ok(Self { spec: spec.clone(), sim, pose, cloud, features, estimate })
    }

    pub fn label(&self) -> String {
        self.spec.label()
    }
}

/// A feasible training contact and the frames tracked while pushing it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactRecord {
    pub link: String,
    pub index: usize,
    /// Draw number among all attempts for this link, feasible or not.
    pub draw: usize,
    pub link_pose: Pose,
    pub base_pose: Pose,
    pub frame: ContactFrame,
    pub env: Vec<ContactFrame>,
}

/// One successful training rollout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingPush {
    pub link: String,
    pub action: String,
    pub contact: usize,
    pub rollout: usize,
    pub friction: f64,
    pub ro: MotionKernel,
    pub oe: Vec<MotionKernel>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingStats {
    pub contact_draws: usize,
    pub infeasible_contacts: usize,
    pub rollouts: usize,
    /// Rollouts excluded because the link separated from the object.
    pub lost_contact: usize,
    /// Rollouts excluded because the link never touched the object.
    pub no_contact: usize,
}

/// Contact models and the full training set they produced.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub links: Vec<Link>,
    /// One per link, in `links` order.
    pub robot_object: Vec<ContactModel>,
    pub environment: ContactModel,
    pub contacts: Vec<ContactRecord>,
    pub pushes: Vec<TrainingPush>,
    pub stats: TrainingStats,
}

/// Motion models for one training-set size, one per (link, role, action).
#[derive(Clone, Debug)]
pub struct MotionSet {
    pub size: usize,
    pub models: Vec<MotionModel>,
}

impl MotionSet {
    pub fn get(&self, link: &str, role: ContactRole, action: &str) -> Result<&MotionModel> {
        self.models
            .iter()
            .find(|m| m.link == link && m.role == role && m.action == action)
            .ok_or_else(|| Error::Config(format!("no {} motion model for link '{link}', action '{action}'", role.as_str())))
    }

    pub fn with_bandwidths(&self, bw: Bandwidths) -> Result<Self> {
        Ok(Self { size: self.size, models: self.models.iter().map(|m| m.with_bandwidths(bw)).collect::<Result<_>>()? })
    }

    pub fn file_name(m: &MotionModel) -> String {
        format!("{}-{}-{}.json", m.link, m.role.as_str(), m.action)
    }
}

fn full_face_pose(obj: &PreparedObject, link: &Link) -> Pose {
    let (lo, _) = bounding_box(&obj.sim.world_footprint(&obj.pose));
    Pose::planar(lo.x, obj.pose.p().y, link.mount_height(), 0.0)
}

fn draw_contact(
    cfg: &ExperimentConfig,
    obj: &PreparedObject,
    link: &Link,
    li: usize,
    draw: usize,
    q_link: &QueryDensity,
    q_env: &QueryDensity,
) -> Result<ContactRecord> {
    let mut rng = stream_rng(cfg.seed, "train-contact", ((li as u64) << 32) | draw as u64);
    let link_pose = sample_feasible_link_pose(q_link, link, &obj.cloud, &cfg.feasibility, &mut rng)?;
    let frame = q_link.select_contact_frame(&link_pose, &cfg.selection, &mut rng)?;
    let env = q_env.sample_env_frames(cfg.train_env_frames, &mut rng)?;
    Ok(ContactRecord {
        link: link.name.clone(),
        index: 0,
        draw,
        link_pose,
        base_pose: link.base_for(&link_pose),
        frame,
        env,
    })
}

/// Feasible contacts for one link, drawn in parallel batches; infeasible
/// draws are skipped, up to ten draws per requested contact.
fn draw_contacts(
    cfg: &ExperimentConfig,
    obj: &PreparedObject,
    link: &Link,
    li: usize,
    q_link: &QueryDensity,
    q_env: &QueryDensity,
    stats: &mut TrainingStats,
) -> Result<Vec<ContactRecord>> {
    let limit = cfg.contacts * 10;
    let mut out = Vec::with_capacity(cfg.contacts);
    let mut next = 0;
    while out.len() < cfg.contacts {
        if next >= limit {
            return Err(Error::NoFeasiblePose(next));
        }
        let end = (next + cfg.contacts - out.len()).min(limit);
        let batch: Vec<Result<ContactRecord>> =
            (next..end).into_par_iter().map(|d| draw_contact(cfg, obj, link, li, d, q_link, q_env)).collect();
        stats.contact_draws += end - next;
        next = end;
        for r in batch {
            match r {
                Ok(mut c) => {
                    c.index = out.len();
                    out.push(c);
                }
                Err(Error::NoFeasiblePose(_) | Error::NoContact(_)) => stats.infeasible_contacts += 1,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

enum Rollout {
    Kept(TrainingPush),
    Lost,
    Untouched,
}

fn rollout(
    cfg: &ExperimentConfig,
    obj: &PreparedObject,
    link: &Link,
    li: usize,
    contact: &ContactRecord,
    ai: usize,
    action: &Action,
    r: usize,
) -> Result<Rollout> {
    let key = ((li as u64) << 48) | ((contact.index as u64) << 16) | ((ai as u64) << 8) | r as u64;
    let mut rng = stream_rng(cfg.seed, "train-push", key);
    let mu = sample_friction(&cfg.sim, &mut rng);
    let mut tracked = vec![contact.frame.v];
    tracked.extend(contact.env.iter().map(|e| e.v));
    let scene = PushScene { object: &obj.sim, object_pose: obj.pose, base_pose: contact.base_pose, link, tracked };
    let sim = match simulate_push(&scene, action, mu, &cfg.sim) {
        Ok(s) => s,
        Err(Error::NoContactDuringPush) => return Ok(Rollout::Untouched),
        Err(e) => return Err(e),
    };
    if sim.contact_lost {
        return Ok(Rollout::Lost);
    }
    let ro = record_rollout(&sim, 0, contact.frame.condition)?;
    let oe = contact
        .env
        .iter()
        .enumerate()
        .map(|(k, e)| record_rollout(&sim, k + 1, e.condition))
        .collect::<Result<_>>()?;
    Ok(Rollout::Kept(TrainingPush {
        link: link.name.clone(),
        action: action.id.clone(),
        contact: contact.index,
        rollout: r,
        friction: mu,
        ro,
        oe,
    }))
}

/// Learns the contact models on the training object, then pushes every
/// feasible training contact with every action of its link.
pub fn run_training(cfg: &ExperimentConfig) -> Result<ModelBundle> {
    cfg.validate()?;
    let links = default_links();
    let actions = cfg.action_set();
    let obj = PreparedObject::new(&cfg.training_object, 0.0, cfg, &mut stream_rng(cfg.seed, "train-object", 0))?;

    let robot_object = links
        .iter()
        .map(|link| {
            let pose = full_face_pose(&obj, link);
            let face = link.face_cloud(&pose, cfg.link_spacing);
            learn_robot_object(&obj.features, &pose, &face, cfg.robot_cutoff, cfg.bandwidths)
        })
        .collect::<Result<Vec<_>>>()?;
    let environment = learn_object_environment(
        &obj.features,
        cfg.sim.ground_height,
        cfg.env_cutoff,
        cfg.env_samples,
        cfg.bandwidths,
        &mut stream_rng(cfg.seed, "train-env", 0),
    )?;
    let q_env =
        build_query_density(&environment, &obj.features, cfg.query_particles, &mut stream_rng(cfg.seed, "train-query-env", 0))?;

    let mut stats = TrainingStats::default();
    let mut contacts = Vec::new();
    let mut pushes = Vec::new();
    for (li, link) in links.iter().enumerate() {
        let q_link = build_query_density(
            &robot_object[li],
            &obj.features,
            cfg.query_particles,
            &mut stream_rng(cfg.seed, "train-query", li as u64),
        )?;
        let records = draw_contacts(cfg, &obj, link, li, &q_link, &q_env, &mut stats)?;
        let link_actions = actions_for_link(link, &actions);
        let jobs: Vec<(usize, usize, usize)> = (0..records.len())
            .flat_map(|c| (0..link_actions.len()).flat_map(move |a| (0..cfg.rollouts).map(move |r| (c, a, r))))
            .collect();
        let outcomes: Vec<Result<Rollout>> = jobs
            .par_iter()
            .map(|&(c, a, r)| {
                let ai = actions.iter().position(|x| x.id == link_actions[a].id).unwrap_or(a);
                rollout(cfg, &obj, link, li, &records[c], ai, &link_actions[a], r)
            })
            .collect();
        for o in outcomes {
            stats.rollouts += 1;
            match o? {
                Rollout::Kept(p) => pushes.push(p),
                Rollout::Lost => stats.lost_contact += 1,
                Rollout::Untouched => stats.no_contact += 1,
            }
        }
        contacts.extend(records);
    }
    Ok(ModelBundle {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        links,
        robot_object,
        environment,
        contacts,
        pushes,
        stats,
    })
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    seed: u64,
    config_hash: String,
    config: ExperimentConfig,
    links: Vec<Link>,
    stats: TrainingStats,
    training_pushes: usize,
    motion_sets: Vec<MotionSetEntry>,
}

#[derive(Serialize, Deserialize)]
struct MotionSetEntry {
    size: usize,
    files: Vec<String>,
}

const MANIFEST: &str = "manifest.json";
const FORMAT: &str = "pushxfer-models";

fn contact_file(name: &str) -> String {
    format!("contact-{name}.json")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text.as_bytes())?;
    Ok(())
}

impl ModelBundle {
    /// Motion models trained on `size` pushes per (link, action), drawn by a
    /// seeded shuffle of that model's rollouts; the same shuffle serves every
    /// size, so smaller sets are prefixes of larger ones.
    pub fn motion_models(&self, size: usize) -> Result<MotionSet> {
        let bw = self.config.bandwidths;
        let actions = self.config.action_set();
        let mut models = Vec::new();
        for link in &self.links {
            for action in actions_for_link(link, &actions) {
                let mut pool: Vec<usize> = (0..self.pushes.len())
                    .filter(|&i| self.pushes[i].link == link.name && self.pushes[i].action == action.id)
                    .collect();
                pool.shuffle(&mut stream_rng(self.config.seed, &format!("subset/{}/{}", link.name, action.id), 0));
                pool.truncate(size);
                pool.sort_unstable();
                let ro: Vec<MotionKernel> = pool.iter().map(|&i| self.pushes[i].ro).collect();
                let oe: Vec<MotionKernel> = pool.iter().flat_map(|&i| self.pushes[i].oe.iter().copied()).collect();
                models.push(MotionModel::new(&action.id, &link.name, ContactRole::RobotObject, ro, bw)?);
                if !oe.is_empty() {
                    models.push(MotionModel::new(&action.id, &link.name, ContactRole::ObjectEnvironment, oe, bw)?);
                }
            }
        }
        Ok(MotionSet { size, models })
    }

    pub fn robot_object_for(&self, link: &str) -> Result<&ContactModel> {
        self.links
            .iter()
            .position(|l| l.name == link)
            .map(|i| &self.robot_object[i])
            .ok_or_else(|| Error::Config(format!("unknown link '{link}'")))
    }

    pub fn link(&self, name: &str) -> Result<&Link> {
        self.links.iter().find(|l| l.name == name).ok_or_else(|| Error::Config(format!("unknown link '{name}'")))
    }

    /// Writes contact models, the training set and motion models for every
    /// configured size. The directory is assembled under a temporary name
    /// and renamed into place, so a failure leaves no partial bundle.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let name = dir.file_name().ok_or_else(|| Error::Config(format!("bad output directory {}", dir.display())))?;
        let tmp: PathBuf = dir.with_file_name(format!(".{}.partial", name.to_string_lossy()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp)?;
        let result = self.write_into(&tmp);
        if let Err(e) = result {
            let _ = fs::remove_dir_all(&tmp);
            return Err(e);
        }
        if dir.exists() {
            fs::remove_dir_all(dir)?;
        }
        fs::rename(&tmp, dir)?;
        Ok(())
    }

    fn write_into(&self, dir: &Path) -> Result<()> {
        for (link, model) in self.links.iter().zip(&self.robot_object) {
            write_text(&dir.join(contact_file(&link.name)), &model.to_json()?)?;
        }
        write_text(&dir.join(contact_file("environment")), &self.environment.to_json()?)?;
        write_text(&dir.join("contacts.json"), &serde_json::to_string_pretty(&self.contacts)?)?;
        write_text(&dir.join("pushes.json"), &serde_json::to_string_pretty(&self.pushes)?)?;
        let mut motion_sets = Vec::new();
        for &size in &self.config.training_sizes {
            let set = self.motion_models(size)?;
            let sub = dir.join("motion").join(size.to_string());
            fs::create_dir_all(&sub)?;
            let mut files = Vec::new();
            for m in &set.models {
                let f = MotionSet::file_name(m);
                write_text(&sub.join(&f), &m.to_json()?)?;
                files.push(format!("motion/{size}/{f}"));
            }
            motion_sets.push(MotionSetEntry { size, files });
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            version: 1,
            seed: self.config.seed,
            config_hash: self.config_hash.clone(),
            config: self.config.clone(),
            links: self.links.clone(),
            stats: self.stats.clone(),
            training_pushes: self.pushes.len(),
            motion_sets,
        };
        write_text(&dir.join(MANIFEST), &serde_json::to_string_pretty(&manifest)?)
    }

    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?;
        if manifest.format != FORMAT {
            return Err(Error::Parse(format!("not a model bundle: format '{}'", manifest.format)));
        }
        if manifest.config.hash() != manifest.config_hash {
            return Err(Error::Parse("manifest config does not match its hash".into()));
        }
        let robot_object = manifest
            .links
            .iter()
            .map(|l| ContactModel::from_json(&fs::read_to_string(dir.join(contact_file(&l.name)))?))
            .collect::<Result<Vec<_>>>()?;
        let environment = ContactModel::from_json(&fs::read_to_string(dir.join(contact_file("environment")))?)?;
        let contacts = serde_json::from_str(&fs::read_to_string(dir.join("contacts.json"))?)?;
        let pushes = serde_json::from_str(&fs::read_to_string(dir.join("pushes.json"))?)?;
        Ok(Self {
            config: manifest.config,
            config_hash: manifest.config_hash,
            links: manifest.links,
            robot_object,
            environment,
            contacts,
            pushes,
            stats: manifest.stats,
        })
    }

    /// Motion models of one size as written by [`Self::write_dir`].
    pub fn read_motion_set(dir: impl AsRef<Path>, size: usize) -> Result<MotionSet> {
        let sub = dir.as_ref().join("motion").join(size.to_string());
        let mut names: Vec<PathBuf> = fs::read_dir(&sub)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
        names.sort();
        let models = names
            .iter()
            .map(|p| MotionModel::from_json(&fs::read_to_string(p)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(MotionSet { size, models })
    }
}
