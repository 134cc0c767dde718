//! Partial-to-partial point cloud registration, framework-free.
//!
//! The crate bundles synthetic partial-pair generation, a classical ICP
//! baseline, closed-form SVD alignment, a reverse-mode gradient tape, the
//! learned feature stack (k-NN graph encoder + attention co-context +
//! temperature value head), Gumbel-Softmax correspondence sampling with
//! straight-through gradients, the iterative refinement loop, training,
//! and an evaluation harness.
//!
//! All math is generic over the scalar type ([`scalar::Scalar`], `f32` or
//! `f64`); the aliases below pin the shipped precision to 64-bit.

pub mod autodiff;
pub mod geometry;
pub mod checkpoint;
pub mod icp;
pub mod matcher;
pub mod networks;
pub mod pipeline;
pub mod procrustes;
pub mod result;
pub mod rng;
pub mod scalar;

/// Working precision of the shipped pipeline.
pub type Real = f64;

pub type Vec3 = geometry::Vec3<Real>;
pub type Mat3 = geometry::Mat3<Real>;
pub type PointCloud = geometry::PointCloudOf<Real>;
pub type RigidTransform = geometry::RigidTransformOf<Real>;
pub type RegistrationPair = geometry::RegistrationPairOf<Real>;
