use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("kernel bandwidth must be strictly positive, got {0}")]
    NonPositiveBandwidth(f64),
    #[error("quaternion is not unit length (norm {0})")]
    NonUnitQuaternion(f64),
    #[error("density kind mismatch: expected {expected}, found {found}")]
    KindMismatch { expected: String, found: String },
    #[error("particle density is empty")]
    EmptyDensity,
    #[error("invalid particle weights: {0}")]
    InvalidWeights(String),

    #[error("point cloud has {got} points, at least {need} required")]
    TooFewPoints { got: usize, need: usize },
    #[error("degenerate neighbourhood around point {0}")]
    DegenerateNeighborhood(usize),
    #[error("degenerate point cloud: {0}")]
    DegenerateCloud(String),

    #[error("score is not finite at the initial candidate")]
    NonFiniteScore,

    #[error("no contact: {0}")]
    NoContact(String),
    #[error("contact model has no particles")]
    EmptyModel,
    #[error("object has no surface features")]
    EmptyFeatures,
    #[error("no feasible link pose found after {0} draws")]
    NoFeasiblePose(usize),

    #[error("rollout lost contact before the end of the push")]
    LostContact,
    #[error("conditioning contact is unsupported by the motion model (log density {0:.1})")]
    UnsupportedCondition(f64),
    #[error("every prediction candidate was vetoed")]
    AllVetoed,
    #[error("motion model has no kernels")]
    EmptyMotionModel,

    #[error("unknown shape kind '{0}'")]
    UnknownShape(String),
    #[error("the link never touched the object during the push")]
    NoContactDuringPush,

    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable identifier, used in CLI error documents.
    pub fn code(&self) -> &'static str {
        match self {
            Error::NonPositiveBandwidth(_) => "non_positive_bandwidth",
            Error::NonUnitQuaternion(_) => "non_unit_quaternion",
            Error::KindMismatch { .. } => "kind_mismatch",
            Error::EmptyDensity => "empty_density",
            Error::InvalidWeights(_) => "invalid_weights",
            Error::TooFewPoints { .. } => "too_few_points",
            Error::DegenerateNeighborhood(_) => "degenerate_neighborhood",
            Error::DegenerateCloud(_) => "degenerate_cloud",
            Error::NonFiniteScore => "non_finite_score",
            Error::NoContact(_) => "no_contact",
            Error::EmptyModel => "empty_model",
            Error::EmptyFeatures => "empty_features",
            Error::NoFeasiblePose(_) => "no_feasible_pose",
            Error::LostContact => "lost_contact",
            Error::UnsupportedCondition(_) => "unsupported_condition",
            Error::AllVetoed => "all_vetoed",
            Error::EmptyMotionModel => "empty_motion_model",
            Error::UnknownShape(_) => "unknown_shape",
            Error::NoContactDuringPush => "no_contact_during_push",
            Error::Config(_) => "config",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
