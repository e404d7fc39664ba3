//! Robot links: flat rectangular plates mounted on a planar mobile base.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::features::PointCloud;
use crate::geom::Pose;

/// A plate-shaped link. Its frame sits at the centre of the contact face with
/// x along the outward face normal, y along the plate, z up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub name: String,
    /// Link frame in the robot base frame.
    pub offset: Pose,
    /// Extent along y, meters.
    pub length: f64,
    /// Extent along z, meters.
    pub height: f64,
    /// Extent behind the face along −x, meters.
    pub thickness: f64,
}

pub const MOUNT_HEIGHT: f64 = 0.07;

impl Link {
    /// Bumper across the robot's front.
    pub fn front() -> Self {
        Self {
            name: "front".into(),
            offset: Pose::planar(0.25, 0.0, MOUNT_HEIGHT, 0.0),
            length: 0.3,
            height: 0.1,
            thickness: 0.02,
        }
    }

    /// Plate on the front-left corner, facing 45° to the left.
    pub fn side() -> Self {
        Self {
            name: "side".into(),
            offset: Pose::planar(0.17, 0.27, MOUNT_HEIGHT, std::f64::consts::FRAC_PI_4),
            length: 0.3,
            height: 0.1,
            thickness: 0.02,
        }
    }

    pub fn mount_height(&self) -> f64 {
        self.offset.p().z
    }

    pub fn pose(&self, base: &Pose) -> Pose {
        base.compose(&self.offset)
    }

    /// Base pose that puts this link at `link_pose`.
    pub fn base_for(&self, link_pose: &Pose) -> Pose {
        link_pose.compose(&self.offset.inverse())
    }

    /// Regular grid over the contact face, in world coordinates.
    pub fn face_cloud(&self, link_pose: &Pose, spacing: f64) -> PointCloud {
        let ny = (self.length / spacing).round().max(1.0) as usize;
        let nz = (self.height / spacing).round().max(1.0) as usize;
        let mut pts = Vec::with_capacity((ny + 1) * (nz + 1));
        for i in 0..=ny {
            for j in 0..=nz {
                let y = -self.length / 2.0 + self.length * i as f64 / ny as f64;
                let z = -self.height / 2.0 + self.height * j as f64 / nz as f64;
                pts.push(link_pose.transform_point(&Vector3::new(0.0, y, z)));
            }
        }
        PointCloud::new(pts)
    }

    /// Plate cross-section in the ground plane (CCW), for a link whose frame
    /// is upright.
    pub fn footprint(&self, link_pose: &Pose) -> Vec<Vector2<f64>> {
        let h = self.length / 2.0;
        [
            Vector3::new(-self.thickness, -h, 0.0),
            Vector3::new(0.0, -h, 0.0),
            Vector3::new(0.0, h, 0.0),
            Vector3::new(-self.thickness, h, 0.0),
        ]
        .iter()
        .map(|p| link_pose.transform_point(p).xy())
        .collect()
    }

    /// How far `p` lies inside the plate volume (negative when outside).
    pub fn penetration(&self, link_pose: &Pose, p: &Vector3<f64>) -> f64 {
        let l = link_pose.inverse_transform_point(p);
        let dx = (-l.x).min(l.x + self.thickness);
        let dy = self.length / 2.0 - l.y.abs();
        let dz = self.height / 2.0 - l.z.abs();
        dx.min(dy).min(dz)
    }
}
