//! Registration outcome shared by the ICP baseline and the learned
//! pipeline: the final transform plus per-iteration increments and
//! diagnostics.

use serde::{Deserialize, Serialize};

use crate::geometry::RigidTransformOf;
use crate::scalar::Scalar;

/// Diagnostics recorded by one ICP iteration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IcpStepDiagnostics {
    pub objective: f64,
    pub degenerate: bool,
}

/// Diagnostics recorded by one learned-matcher iteration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AcpDiagnostics {
    /// Gumbel-Softmax temperature used by this step.
    pub lambda: f64,
    pub keypoints_source: Vec<usize>,
    pub keypoints_target: Vec<usize>,
    /// Mean entropy (nats) of the soft matching rows.
    pub mean_row_entropy: f64,
    /// Alignment residual of the hard matching at the predicted transform.
    pub objective: f64,
    pub degenerate: bool,
    /// Hard target assignment per source keypoint row.
    pub matched_targets: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepDiagnostics {
    Icp(IcpStepDiagnostics),
    Acp(AcpDiagnostics),
}

/// One refinement step: the incremental transform applied at this step and
/// what the step observed.
#[derive(Clone, Debug)]
pub struct StepRecordOf<S> {
    pub transform: RigidTransformOf<S>,
    pub diagnostics: StepDiagnostics,
}

#[derive(Clone, Debug)]
pub struct RegistrationResultOf<S> {
    pub final_transform: RigidTransformOf<S>,
    pub per_step: Vec<StepRecordOf<S>>,
    pub elapsed_seconds: f64,
}

impl<S: Scalar> RegistrationResultOf<S> {
    /// Folds the per-step increments; equals `final_transform` by
    /// construction.
    pub fn fold_steps(&self) -> RigidTransformOf<S> {
        let mut acc = RigidTransformOf::identity();
        for step in &self.per_step {
            acc = RigidTransformOf::compose(&step.transform, &acc);
        }
        acc
    }
}
