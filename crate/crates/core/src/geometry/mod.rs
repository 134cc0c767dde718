//! Point-cloud representation, rigid-motion algebra, synthetic pair
//! generation, file ingestion, and evaluation metrics.

pub mod builtin;
pub mod cloud;
pub mod mesh;
pub mod metrics;
pub mod pair;
pub mod rigid;
pub mod sample;
pub mod vec3;

use thiserror::Error;

pub use builtin::{builtin_set, builtin_shape, BuiltinKind, BUILTIN_KINDS};
pub use cloud::PointCloudOf;
pub use mesh::{parse_off, parse_ply, read_mesh, TriMesh};
pub use metrics::{compute_metrics, MetricsReport};
pub use pair::{add_noise, full_clouds, make_pair, partial_view, PairSpec, RegistrationPairOf};
pub use rigid::{euler_from_rotation, random_rigid, EulerAngles, RigidTransformOf};
pub use sample::{cloud_from_mesh, farthest_point_sample, load_point_cloud};
pub use vec3::{Mat3, Vec3};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error reading {path}: {message}")]
    Io { path: String, message: String },
    #[error("too few points: needed {needed}, available {available}")]
    TooFewPoints { needed: usize, available: usize },
    #[error("non-finite point {point:?}")]
    NonFinitePoint { point: [f64; 3] },
    #[error("source_indices length {indices} does not match point count {points}")]
    SourceIndexMismatch { points: usize, indices: usize },
    #[error("source_indices contain duplicates")]
    DuplicateSourceIndex,
    #[error("invalid pair spec: {0}")]
    InvalidSpec(String),
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
}
