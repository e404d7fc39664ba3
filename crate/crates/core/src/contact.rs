//! Contact models: densities over the relative pose `u = v⁻¹ ∘ s` between an
//! object surface frame `v` and a contacting body frame `s`, together with
//! the surface descriptor at `v`.
//!
//! Particles reuse [`SurfaceFeature`]: `pose` holds `u` and `r` the
//! curvature descriptor of the object feature.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::density::{Bandwidths, ParticleDensity};
use crate::error::{Error, Result};
use crate::features::{NeighborIndex, PointCloud, SurfaceFeature};
use crate::geom::{relative_pose, Pose};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ContactKind {
    RobotObject,
    ObjectEnvironment { ground_height: f64 },
}

#[derive(Clone, Debug)]
pub struct ContactModel {
    pub kind: ContactKind,
    /// Distance cutoff used when learning, meters.
    pub cutoff: f64,
    pub density: ParticleDensity<SurfaceFeature>,
}

pub const DEFAULT_ROBOT_CUTOFF: f64 = 0.01;
pub const DEFAULT_ENV_CUTOFF: f64 = 0.05;
pub const DEFAULT_ENV_SAMPLES: usize = 1000;

/// Environment frame for a feature: the ground point directly below it,
/// with world-aligned axes.
pub fn environment_frame(feature: &Pose, ground_height: f64) -> Pose {
    let p = feature.p();
    Pose::from_translation(Vector3::new(p.x, p.y, ground_height))
}

/// Weight for a feature at distance `d` from the link: a Gaussian with
/// standard deviation `cutoff/2`, zero beyond the cutoff.
pub fn robot_weight(d: f64, cutoff: f64) -> f64 {
    if d > cutoff {
        return 0.0;
    }
    let s = cutoff / 2.0;
    (-d * d / (2.0 * s * s)).exp()
}

/// Robot-object contact model from features near the link surface.
pub fn learn_robot_object(
    features: &[SurfaceFeature],
    link_pose: &Pose,
    link_surface: &PointCloud,
    cutoff: f64,
    bandwidths: Bandwidths,
) -> Result<ContactModel> {
    if features.is_empty() {
        return Err(Error::EmptyFeatures);
    }
    if link_surface.is_empty() {
        return Err(Error::NoContact("link surface has no points".into()));
    }
    let index = NeighborIndex::new(&link_surface.points);
    let mut particles = Vec::new();
    let mut weights = Vec::new();
    for f in features {
        let d = index.nearest_distance2(f.pose.p()).sqrt();
        let w = robot_weight(d, cutoff);
        if w > 0.0 {
            particles.push(SurfaceFeature { pose: relative_pose(&f.pose, link_pose), r: f.r });
            weights.push(w);
        }
    }
    if particles.is_empty() {
        return Err(Error::NoContact(format!("no feature within {cutoff} m of the link")));
    }
    Ok(ContactModel {
        kind: ContactKind::RobotObject,
        cutoff,
        density: ParticleDensity::new(particles, weights, bandwidths)?,
    })
}

/// Object-environment contact model with the binary weight
/// `1[‖p_j − z_j‖ < δ_E]` over `n_samples` features drawn without
/// replacement (all features when there are fewer).
pub fn learn_object_environment<R: Rng + ?Sized>(
    features: &[SurfaceFeature],
    ground_height: f64,
    delta_e: f64,
    n_samples: usize,
    bandwidths: Bandwidths,
    rng: &mut R,
) -> Result<ContactModel> {
    if features.is_empty() {
        return Err(Error::EmptyFeatures);
    }
    let chosen: Vec<usize> = if n_samples >= features.len() {
        (0..features.len()).collect()
    } else {
        let mut idx = rand::seq::index::sample(rng, features.len(), n_samples).into_vec();
        idx.sort_unstable();
        idx
    };
    let mut particles = Vec::new();
    for i in chosen {
        let f = &features[i];
        let z = environment_frame(&f.pose, ground_height);
        if (f.pose.p() - z.p()).norm() < delta_e {
            particles.push(SurfaceFeature { pose: relative_pose(&f.pose, &z), r: f.r });
        }
    }
    if particles.is_empty() {
        return Err(Error::NoContact(format!("no feature within {delta_e} m of the ground")));
    }
    Ok(ContactModel {
        kind: ContactKind::ObjectEnvironment { ground_height },
        cutoff: delta_e,
        density: ParticleDensity::uniform(particles, bandwidths)?,
    })
}

#[derive(Serialize, Deserialize)]
struct ContactDocument {
    kind: ContactKind,
    cutoff: f64,
    density: serde_json::Value,
}

impl ContactModel {
    pub fn len(&self) -> usize {
        self.density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.density.is_empty()
    }

    pub fn bandwidths(&self) -> &Bandwidths {
        self.density.bandwidths()
    }

    pub fn with_bandwidths(&self, bw: Bandwidths) -> Result<Self> {
        Ok(Self {
            kind: self.kind,
            cutoff: self.cutoff,
            density: ParticleDensity::new(self.density.particles().to_vec(), self.density.weights().to_vec(), bw)?,
        })
    }

    pub fn to_value(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(ContactDocument {
            kind: self.kind,
            cutoff: self.cutoff,
            density: self.density.to_value()?,
        })?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_value()?)?)
    }

    pub fn from_value(v: serde_json::Value) -> Result<Self> {
        let doc: ContactDocument = serde_json::from_value(v)?;
        Ok(Self { kind: doc.kind, cutoff: doc.cutoff, density: ParticleDensity::from_value(doc.density)? })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_value(serde_json::from_str(text)?)
    }
}
