//! Side-by-side evaluation of registration algorithms over a pair set.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::geometry::{compute_metrics, MetricsReport, RegistrationPairOf, RigidTransformOf};
use crate::icp::{icp_register, IcpConfig};
use crate::networks::ModelParams;
use crate::pipeline::register::{prnet_register, PrnetOptions};
use crate::pipeline::PipelineError;
use crate::rng::SplitRng;
use crate::scalar::Scalar;

/// An algorithm entry for the evaluation harness.
pub enum Algorithm<'a, S: Scalar> {
    Icp(IcpConfig<S>),
    Prnet {
        params: &'a ModelParams<S>,
        opts: PrnetOptions,
        /// Seed for eval-time noise (unused when the matcher runs
        /// deterministically).
        seed: u64,
    },
    /// Returns the stored ground truth (metric-identity fixture).
    Oracle,
}

impl<S: Scalar> Algorithm<'_, S> {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Icp(_) => "icp",
            Algorithm::Prnet { .. } => "prnet",
            Algorithm::Oracle => "oracle",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub algorithm: String,
    pub pairs: usize,
    pub metrics: MetricsReport,
    pub mean_seconds_per_registration: f64,
}

/// Runs every algorithm over every pair and pools the metrics.
pub fn evaluate<S: Scalar>(
    pairs: &[RegistrationPairOf<S>],
    algorithms: &[Algorithm<S>],
) -> Result<Vec<EvaluationRow>, PipelineError> {
    if pairs.is_empty() {
        return Err(PipelineError::InvalidConfig("no pairs to evaluate".into()));
    }
    let truths: Vec<RigidTransformOf<S>> = pairs.iter().map(|p| p.ground_truth).collect();
    let mut rows = Vec::with_capacity(algorithms.len());
    for algo in algorithms {
        let started = Instant::now();
        let preds: Result<Vec<RigidTransformOf<S>>, PipelineError> = pairs
            .par_iter()
            .enumerate()
            .map(|(i, pair)| match algo {
                Algorithm::Icp(cfg) => Ok(icp_register(&pair.source, &pair.target, cfg)?
                    .final_transform),
                Algorithm::Prnet { params, opts, seed } => {
                    let tape = Tape::new();
                    let rng = SplitRng::new(*seed).child(i as u64);
                    Ok(prnet_register(&tape, pair, params, opts, &rng)?
                        .result
                        .final_transform)
                }
                Algorithm::Oracle => Ok(pair.ground_truth),
            })
            .collect();
        let preds = preds?;
        let metrics = compute_metrics(&preds, &truths)?;
        rows.push(EvaluationRow {
            algorithm: algo.name().to_string(),
            pairs: pairs.len(),
            metrics,
            mean_seconds_per_registration: started.elapsed().as_secs_f64() / pairs.len() as f64,
        });
    }
    Ok(rows)
}
