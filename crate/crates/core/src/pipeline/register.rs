//! The iterative refinement loop: repeated directional ACP passes with
//! transform accumulation and the discounted three-term training loss.

use std::time::Instant;

use crate::autodiff::{Tape, Var};
use crate::geometry::{RegistrationPairOf, RigidTransformOf};
use crate::matcher::{acp_direction, cloud_to_tensor, embed_pair, AcpOptions};
use crate::networks::{ModelParams, NetCtx};
use crate::pipeline::loss::{cycle_loss, feature_align_loss, rigid_motion_loss};
use crate::pipeline::PipelineError;
use crate::result::{RegistrationResultOf, StepDiagnostics, StepRecordOf};
use crate::rng::SplitRng;
use crate::scalar::{cast, Scalar};

/// Loss weighting for training-mode registration.
#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    /// Per-step discount; step p is weighted by `gamma^p` (first step 1).
    pub gamma: f64,
    /// Cycle-consistency weight.
    pub alpha: f64,
    /// Global feature alignment weight.
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            alpha: 0.1,
            beta: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PrnetOptions {
    /// Refinement passes per pair.
    pub iterations: usize,
    pub acp: AcpOptions,
    pub weights: LossWeights,
    /// Compute the discounted loss (requires ground truth in the pair).
    pub train_mode: bool,
}

impl Default for PrnetOptions {
    fn default() -> Self {
        Self {
            iterations: 3,
            acp: AcpOptions::default(),
            weights: LossWeights::default(),
            train_mode: false,
        }
    }
}

/// Per-step loss term values (training mode).
#[derive(Clone, Copy, Debug)]
pub struct StepLossValues {
    pub rigid: f64,
    pub cycle: f64,
    pub feature: f64,
}

/// Eq. 5/6 bookkeeping snapshot for one step: the accumulated transform
/// entering the step and the localized ground truth computed from it.
#[derive(Clone, Copy, Debug)]
pub struct StepBookkeeping<S> {
    pub accumulated_before: RigidTransformOf<S>,
    pub local_gt: RigidTransformOf<S>,
}

pub struct PrnetRun<S> {
    pub result: RegistrationResultOf<S>,
    /// Total discounted loss on the tape (training mode only).
    pub total_loss: Option<Var>,
    pub step_losses: Vec<StepLossValues>,
    pub bookkeeping: Vec<StepBookkeeping<S>>,
}

/// Runs the iterative registration loop on `tape`.
///
/// Each pass embeds the current source state against the target, runs the
/// matcher in both directions (the reverse direction feeds the cycle
/// loss), applies the forward transform to the source on-tape (so later
/// steps stay differentiable through the moved coordinates), and
/// accumulates the motion. In training mode the per-step losses are
/// discounted by `gamma^p` and summed into `total_loss`.
pub fn prnet_register<S: Scalar>(
    tape: &Tape<S>,
    pair: &RegistrationPairOf<S>,
    params: &ModelParams<S>,
    opts: &PrnetOptions,
    rng: &SplitRng,
) -> Result<PrnetRun<S>, PipelineError> {
    if opts.iterations == 0 {
        return Err(PipelineError::InvalidConfig(
            "iterations must be >= 1".into(),
        ));
    }
    let started = Instant::now();
    let ctx = NetCtx::new(tape, params);
    let tgt_coords = tape.constant(cloud_to_tensor(&pair.target));
    let mut src_coords = tape.constant(cloud_to_tensor(&pair.source));
    let mut accumulated = RigidTransformOf::identity();
    let mut per_step = Vec::with_capacity(opts.iterations);
    let mut step_losses = Vec::new();
    let mut bookkeeping = Vec::new();
    let mut total_loss: Option<Var> = None;

    for p in 0..opts.iterations {
        let emb = embed_pair(&ctx, src_coords, tgt_coords)?;
        let mut rng_fwd = rng.child2(p as u64, 0);
        let forward = acp_direction(
            &ctx,
            emb.phi_src,
            emb.phi_tgt,
            emb.psi_src,
            emb.psi_tgt,
            src_coords,
            tgt_coords,
            &opts.acp,
            &mut rng_fwd,
        )?;

        if opts.train_mode {
            let mut rng_rev = rng.child2(p as u64, 1);
            let reverse = acp_direction(
                &ctx,
                emb.phi_tgt,
                emb.phi_src,
                emb.psi_tgt,
                emb.psi_src,
                tgt_coords,
                src_coords,
                &opts.acp,
                &mut rng_rev,
            )?;
            let local_gt = RigidTransformOf::local_ground_truth(&pair.ground_truth, &accumulated);
            bookkeeping.push(StepBookkeeping {
                accumulated_before: accumulated,
                local_gt,
            });
            let l_rigid = rigid_motion_loss(tape, forward.rotation, forward.translation, &local_gt)?;
            let l_cycle = cycle_loss(
                tape,
                forward.rotation,
                reverse.rotation,
                forward.translation,
                reverse.translation,
            )?;
            let l_feat = feature_align_loss(tape, emb.psi_src, emb.psi_tgt)?;
            step_losses.push(StepLossValues {
                rigid: tape.scalar_value(l_rigid).to_f64().unwrap(),
                cycle: tape.scalar_value(l_cycle).to_f64().unwrap(),
                feature: tape.scalar_value(l_feat).to_f64().unwrap(),
            });
            let weighted_cycle = tape.scale(l_cycle, cast::<S>(opts.weights.alpha))?;
            let weighted_feat = tape.scale(l_feat, cast::<S>(opts.weights.beta))?;
            let step_loss = tape.add(l_rigid, tape.add(weighted_cycle, weighted_feat)?)?;
            let discount = cast::<S>(opts.weights.gamma.powi(p as i32));
            let discounted = tape.scale(step_loss, discount)?;
            total_loss = Some(match total_loss {
                None => discounted,
                Some(acc) => tape.add(acc, discounted)?,
            });
        }

        accumulated = RigidTransformOf::compose(&forward.transform, &accumulated);
        per_step.push(StepRecordOf {
            transform: forward.transform,
            diagnostics: StepDiagnostics::Acp(forward.diagnostics.clone()),
        });

        // Move the source for the next pass, on-tape: X' = X R^T + t.
        if p + 1 < opts.iterations {
            let rotated = tape.matmul(src_coords, tape.transpose_last2(forward.rotation)?)?;
            let t_row = tape.reshape(forward.translation, &[3])?;
            src_coords = tape.broadcast_add_row(rotated, t_row)?;
        }
    }

    Ok(PrnetRun {
        result: RegistrationResultOf {
            final_transform: accumulated,
            per_step,
            elapsed_seconds: started.elapsed().as_secs_f64(),
        },
        total_loss,
        step_losses,
        bookkeeping,
    })
}
