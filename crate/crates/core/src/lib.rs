//! Contact-based push forward models that transfer to novel object shapes.
//!
//! Training observes how local contact frames move when a robot link pushes
//! an object; at prediction time contacts on a new object are located through
//! query densities, and the local motion experts are combined as a product
//! of experts over the object's rigid motion.

pub mod config;
pub mod contact;
pub mod density;
pub mod error;
pub mod features;
pub mod geom;
pub mod motion;
pub mod optimize;
pub mod pipeline;
pub mod pushsim;
pub mod query;
pub mod seeding;

pub use contact::{ContactKind, ContactModel};
pub use density::{Bandwidths, ParticleDensity};
pub use error::{Error, Result};
pub use features::{PointCloud, SurfaceFeature};
pub use geom::{Pose, RigidMotion};
pub use motion::{Action, Condition, MotionModel, Prediction, PredictConfig};
pub use optimize::AnnealSchedule;
pub use pushsim::{ShapeSpec, SimConfig};
pub use query::{ContactFrameSet, QueryDensity};
