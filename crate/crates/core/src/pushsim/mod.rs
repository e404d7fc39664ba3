//! Synthetic objects and a quasi-static planar push simulator, standing in
//! for a physics engine when generating training rollouts and ground truth.

pub mod planar;
pub mod robot;
pub mod shapes;
pub mod sim;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

pub use robot::{Link, MOUNT_HEIGHT};
pub use shapes::{ShapeKind, ShapeSample, ShapeSpec};
pub use sim::{sample_friction, simulate_push, PushScene, SimConfig, SimObject, SimResult};

use crate::error::{Error, Result};
use crate::features::PointCloud;
use crate::geom::Pose;

/// Object pose from a cloud: the centroid, and the covariance eigenvectors
/// ordered by decreasing variance (x, y; z = x × y). Each of x and y is
/// signed so that its largest-magnitude component is positive.
pub fn estimate_pose_from_cloud(cloud: &PointCloud) -> Result<Pose> {
    if cloud.len() < 4 {
        return Err(Error::DegenerateCloud(format!("{} points", cloud.len())));
    }
    let c = cloud.centroid();
    let mut cov = Matrix3::zeros();
    for p in &cloud.points {
        let d = p - c;
        cov += d * d.transpose();
    }
    cov /= cloud.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let top = eig.eigenvalues[order[0]];
    if !(top > 0.0) || eig.eigenvalues[order[2]] <= 1e-10 * top {
        return Err(Error::DegenerateCloud("points are coplanar".into()));
    }
    let signed = |v: Vector3<f64>| {
        let i = v.iamax();
        if v[i] < 0.0 {
            -v
        } else {
            v
        }
    };
    let x = signed(eig.eigenvectors.column(order[0]).normalize());
    let y = signed(eig.eigenvectors.column(order[1]).normalize());
    let z = x.cross(&y);
    Ok(Pose::from_axes(c, &x, &y, &z))
}

/// Centroid position with an upright frame whose heading follows the
/// dominant horizontal axis of the cloud. Suited to objects resting on a
/// plane, where the 3D eigenframe can tilt for near-isotropic shapes.
pub fn estimate_upright_pose(cloud: &PointCloud) -> Result<Pose> {
    if cloud.len() < 4 {
        return Err(Error::DegenerateCloud(format!("{} points", cloud.len())));
    }
    let c = cloud.centroid();
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in &cloud.points {
        let d = p - c;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    let yaw = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    Ok(Pose::planar(c.x, c.y, c.z, yaw))
}
