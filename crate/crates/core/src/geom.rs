//! Pose algebra on SE(3).
//!
//! Poses and rigid motions share one representation: a translation plus a
//! unit quaternion kept in the hemisphere with non-negative scalar part.
//! Motions follow the body-frame convention, `x_{t+1} = x_t ∘ m`, so a motion
//! learned in one local frame carries over to any placement of that frame.

use nalgebra::{Matrix3, Quaternion, Rotation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Returns the representative of `q` with non-negative scalar part.
///
/// Ties at `w == 0` are broken by making the first non-zero vector
/// component positive.
pub fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let c = q.into_inner();
    let flip = if c.w != 0.0 {
        c.w < 0.0
    } else {
        [c.i, c.j, c.k]
            .into_iter()
            .find(|v| *v != 0.0)
            .is_some_and(|v| v < 0.0)
    };
    let c = if flip { -c } else { c };
    // renormalize so |q| = 1 holds to machine precision after chained
    // products; already-unit input is kept bit-exact so round trips are stable
    if (c.norm_squared() - 1.0).abs() <= 4.0 * f64::EPSILON {
        UnitQuaternion::new_unchecked(c)
    } else {
        UnitQuaternion::new_normalize(c)
    }
}

/// Absolute quaternion inner product, in `[0, 1]`. Equal to 1 for identical
/// orientations regardless of the antipodal sign.
pub fn quat_abs_dot(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    a.coords.dot(&b.coords).abs().min(1.0)
}

/// Rotation angle in radians between two orientations.
pub fn rotation_angle(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    2.0 * quat_abs_dot(a, b).acos()
}

/// Rotation about the world z-axis.
pub fn yaw_rotation(yaw: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw)
}

fn rotation_from_axes(x: &Vector3<f64>, y: &Vector3<f64>, z: &Vector3<f64>) -> UnitQuaternion<f64> {
    let m = Matrix3::from_columns(&[*x, *y, *z]);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m))
}

/// A frame in world coordinates: position in meters plus orientation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    p: Vector3<f64>,
    q: UnitQuaternion<f64>,
}

/// A rigid transformation between two poses of the same frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidMotion {
    p: Vector3<f64>,
    q: UnitQuaternion<f64>,
}

macro_rules! rigid_common {
    ($t:ident) => {
        impl $t {
            pub fn new(p: Vector3<f64>, q: UnitQuaternion<f64>) -> Self {
                Self { p, q: canonical(q) }
            }

            pub fn identity() -> Self {
                Self { p: Vector3::zeros(), q: UnitQuaternion::identity() }
            }

            pub fn from_translation(p: Vector3<f64>) -> Self {
                Self::new(p, UnitQuaternion::identity())
            }

            pub fn from_rotation(q: UnitQuaternion<f64>) -> Self {
                Self::new(Vector3::zeros(), q)
            }

            /// Builds from a raw `[w, x, y, z]` quaternion, normalizing it
            /// unless it is already unit to rounding.
            pub fn from_parts(p: [f64; 3], wxyz: [f64; 4]) -> Self {
                let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
                Self::new(Vector3::from(p), UnitQuaternion::new_unchecked(q))
            }

            pub fn p(&self) -> &Vector3<f64> {
                &self.p
            }

            pub fn q(&self) -> &UnitQuaternion<f64> {
                &self.q
            }

            pub fn wxyz(&self) -> [f64; 4] {
                let c = self.q.coords;
                [c.w, c.x, c.y, c.z]
            }

            /// Translation distance and rotation angle (radians) to `other`.
            pub fn distance_to(&self, other: &Self) -> (f64, f64) {
                ((self.p - other.p).norm(), rotation_angle(&self.q, &other.q))
            }

            pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
                let (a, b) = (self.q.coords, other.q.coords);
                (self.p - other.p).norm() <= tol && (a - b).norm().min((a + b).norm()) <= tol
            }

            pub fn is_finite(&self) -> bool {
                self.p.iter().all(|v| v.is_finite()) && self.q.coords.iter().all(|v| v.is_finite())
            }
        }

        impl Serialize for $t {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                RawPose { p: [self.p.x, self.p.y, self.p.z], q: self.wxyz() }.serialize(s)
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let raw = RawPose::deserialize(d)?;
                let n = raw.q.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(n.is_finite() && n > 0.0) {
                    return Err(serde::de::Error::custom("zero or non-finite quaternion"));
                }
                Ok(Self::from_parts(raw.p, raw.q))
            }
        }
    };
}

#[derive(Serialize, Deserialize)]
struct RawPose {
    p: [f64; 3],
    q: [f64; 4],
}

rigid_common!(Pose);
rigid_common!(RigidMotion);

impl Pose {
    /// Frame whose columns are the given orthonormal axes.
    pub fn from_axes(p: Vector3<f64>, x: &Vector3<f64>, y: &Vector3<f64>, z: &Vector3<f64>) -> Self {
        Self::new(p, rotation_from_axes(x, y, z))
    }

    /// Planar pose at height `z` with heading `yaw`.
    pub fn planar(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self::new(Vector3::new(x, y, z), yaw_rotation(yaw))
    }

    /// Heading of the frame's x-axis projected on the ground plane.
    pub fn yaw(&self) -> f64 {
        let x = self.q * Vector3::x();
        x.y.atan2(x.x)
    }

    pub fn axis(&self, i: usize) -> Vector3<f64> {
        self.q * Vector3::ith(i, 1.0)
    }

    pub fn transform_point(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.p + self.q * v
    }

    pub fn inverse_transform_point(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.q.inverse() * (v - self.p)
    }

    /// Pose composition `self ∘ other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        compose(self, other)
    }

    pub fn inverse(&self) -> Pose {
        inverse(self)
    }
}

impl RigidMotion {
    pub fn as_pose(&self) -> Pose {
        Pose { p: self.p, q: self.q }
    }

    pub fn from_pose(p: &Pose) -> Self {
        Self { p: p.p, q: p.q }
    }

    pub fn inverse(&self) -> RigidMotion {
        RigidMotion::from_pose(&inverse(&self.as_pose()))
    }

    pub fn rotation_angle(&self) -> f64 {
        self.q.angle()
    }
}

/// `a ∘ b`: translation `a.p + a.q·b.p`, rotation `a.q·b.q`.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose::new(a.p + a.q * b.p, a.q * b.q)
}

/// `v⁻¹ = (−q⁻¹p, q⁻¹)`.
pub fn inverse(v: &Pose) -> Pose {
    let qi = v.q.inverse();
    Pose::new(-(qi * v.p), qi)
}

/// Relative pose `h = v⁻¹ ∘ b` of `b` expressed in frame `v`.
pub fn relative_pose(v: &Pose, b: &Pose) -> Pose {
    compose(&inverse(v), b)
}

/// Body-frame motion taking `x_t` to `x_t1`.
pub fn motion_between(x_t: &Pose, x_t1: &Pose) -> RigidMotion {
    RigidMotion::from_pose(&relative_pose(x_t, x_t1))
}

pub fn apply_motion(x: &Pose, m: &RigidMotion) -> Pose {
    compose(x, &m.as_pose())
}

/// Object motion implied by the motion `m_v` of a frame rigidly attached at
/// relative pose `h = v⁻¹ ∘ b`: `m_b = h⁻¹ ∘ m_v ∘ h`.
pub fn local_to_object_motion(m_v: &RigidMotion, h: &Pose) -> RigidMotion {
    RigidMotion::from_pose(&compose(&compose(&inverse(h), &m_v.as_pose()), h))
}

/// Inverse of [`local_to_object_motion`]: `m_v = h ∘ m_b ∘ h⁻¹`.
pub fn object_to_local_motion(m_b: &RigidMotion, h: &Pose) -> RigidMotion {
    RigidMotion::from_pose(&compose(&compose(h, &m_b.as_pose()), &inverse(h)))
}

/// World-frame displacement `x ∘ m ∘ x⁻¹` of a body-frame motion applied at `x`.
pub fn world_displacement(x: &Pose, m: &RigidMotion) -> Pose {
    compose(&compose(x, &m.as_pose()), &inverse(x))
}

/// Unit vector orthogonal to `n`, deterministic.
pub fn any_orthogonal(n: &Vector3<f64>) -> Vector3<f64> {
    let a = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let t = a - n * n.dot(&a);
    t.normalize()
}

/// Small rotation of `angle` radians about the unit `axis`.
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Unit::new_normalize(*axis), angle)
}
