//! Epoch-driven training with per-epoch pair regeneration, deterministic
//! batching, and held-out evaluation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Tensor};
use crate::geometry::{compute_metrics, make_pair, PairSpec, PointCloudOf, RegistrationPairOf};
use crate::matcher::{AcpOptions, KeypointStrategy, MatchForward, StBackward, TemperatureMode};
use crate::networks::ModelParams;
use crate::pipeline::adam::{adam_step, AdamConfig, AdamState};
use crate::pipeline::register::{prnet_register, LossWeights, PrnetOptions};
use crate::pipeline::PipelineError;
use crate::rng::SplitRng;
use crate::scalar::Scalar;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Refinement passes per pair (P).
    pub iterations: usize,
    /// Per-step loss discount.
    pub gamma: f64,
    /// Cycle-consistency weight.
    pub alpha: f64,
    /// Feature-alignment weight.
    pub beta: f64,
    pub epochs: usize,
    pub lr: f64,
    pub lr_drop_epochs: Vec<usize>,
    pub lr_drop_factor: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub keypoints: KeypointStrategy,
    pub temp_mode: TemperatureMode,
    pub st_backward: StBackward,
    /// Shapes reserved from the end of the dataset for held-out metrics.
    pub holdout_shapes: usize,
    /// Held-out pairs evaluated per epoch.
    pub eval_pairs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 3,
            gamma: 0.9,
            alpha: 0.1,
            beta: 0.1,
            epochs: 100,
            lr: 1e-3,
            lr_drop_epochs: vec![30, 60, 80],
            lr_drop_factor: 10.0,
            weight_decay: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 8,
            seed: 0,
            keypoints: KeypointStrategy::default(),
            temp_mode: TemperatureMode::Predicted,
            st_backward: StBackward::Relaxed,
            holdout_shapes: 4,
            eval_pairs: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.iterations == 0 {
            return Err(PipelineError::InvalidConfig("iterations must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(PipelineError::InvalidConfig(format!(
                "gamma must be in (0, 1], got {}",
                self.gamma
            )));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(PipelineError::InvalidConfig(
                "alpha and beta must be nonnegative".into(),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(PipelineError::InvalidConfig("lr must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(PipelineError::InvalidConfig(
                "batch_size and epochs must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.lr_drop_epochs.iter().filter(|&&e| epoch >= e).count();
        self.lr / self.lr_drop_factor.powi(drops as i32)
    }

    fn weights(&self) -> LossWeights {
        LossWeights {
            gamma: self.gamma,
            alpha: self.alpha,
            beta: self.beta,
        }
    }

    fn acp_train(&self, progress: f64) -> AcpOptions {
        AcpOptions {
            strategy: self.keypoints,
            temp_mode: self.temp_mode,
            st_backward: self.st_backward,
            match_forward: MatchForward::Hard,
            deterministic: false,
            anneal_progress: progress,
        }
    }

    fn acp_eval(&self) -> AcpOptions {
        AcpOptions {
            strategy: self.keypoints,
            temp_mode: self.temp_mode,
            st_backward: self.st_backward,
            match_forward: MatchForward::Hard,
            deterministic: true,
            anneal_progress: 1.0,
        }
    }
}

/// One JSON-lines record per epoch. No wall-clock fields: identical
/// seeds and configs reproduce the log byte-for-byte.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub mean_rigid: f64,
    pub mean_cycle: f64,
    pub mean_feature: f64,
    pub mean_lambda: f64,
    pub eval_mae_r: f64,
    pub eval_mae_t: f64,
    pub eval_r2_r: f64,
}

pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
}

const PAIR_STREAM: u64 = 0x70;
const EVAL_STREAM: u64 = 0x71;

/// Deterministic per-(epoch, slot) pair from a shape.
fn training_pair<S: Scalar>(
    shape: &PointCloudOf<S>,
    template: &PairSpec,
    root: &SplitRng,
    epoch: usize,
    slot: usize,
) -> Result<RegistrationPairOf<S>, PipelineError> {
    let mut spec = template.clone();
    spec.seed = root
        .child2(PAIR_STREAM, epoch as u64)
        .child(slot as u64)
        .next_u64();
    Ok(make_pair(shape, &spec)?)
}

/// Fixed held-out pairs cycled over the holdout shapes.
pub fn holdout_pairs<S: Scalar>(
    shapes: &[PointCloudOf<S>],
    template: &PairSpec,
    seed: u64,
    count: usize,
) -> Result<Vec<RegistrationPairOf<S>>, PipelineError> {
    if shapes.is_empty() {
        return Err(PipelineError::InvalidConfig("no holdout shapes".into()));
    }
    let root = SplitRng::new(seed);
    (0..count)
        .map(|i| {
            let mut spec = template.clone();
            spec.seed = root.child2(EVAL_STREAM, i as u64).next_u64();
            Ok(make_pair(&shapes[i % shapes.len()], &spec)?)
        })
        .collect()
}

/// Gradient and loss stats for one training pair.
struct PairGrad<S> {
    grads: Gradients<S>,
    loss: f64,
    rigid: f64,
    cycle: f64,
    feature: f64,
    lambda: f64,
}

fn pair_gradient<S: Scalar>(
    pair: &RegistrationPairOf<S>,
    params: &ModelParams<S>,
    opts: &PrnetOptions,
    rng: &SplitRng,
) -> Result<PairGrad<S>, PipelineError> {
    let tape = Tape::new();
    let run = prnet_register(&tape, pair, params, opts, rng)?;
    let total = run.total_loss.expect("train mode produces a loss");
    let loss = tape.scalar_value(total).to_f64().unwrap();
    if !loss.is_finite() {
        return Err(PipelineError::NonFiniteLoss);
    }
    let grads = tape.backward(total)?;
    let steps = run.step_losses.len().max(1) as f64;
    let lambda = run
        .result
        .per_step
        .iter()
        .map(|s| match &s.diagnostics {
            crate::result::StepDiagnostics::Acp(d) => d.lambda,
            _ => 0.0,
        })
        .sum::<f64>()
        / run.result.per_step.len().max(1) as f64;
    Ok(PairGrad {
        grads,
        loss,
        rigid: run.step_losses.iter().map(|l| l.rigid).sum::<f64>() / steps,
        cycle: run.step_losses.iter().map(|l| l.cycle).sum::<f64>() / steps,
        feature: run.step_losses.iter().map(|l| l.feature).sum::<f64>() / steps,
        lambda,
    })
}

fn merge_gradients<S: Scalar>(into: &mut Gradients<S>, from: Gradients<S>) {
    for (name, g) in from {
        match into.get_mut(&name) {
            Some(acc) => {
                for (a, b) in acc.data.iter_mut().zip(g.data.iter()) {
                    *a += *b;
                }
            }
            None => {
                into.insert(name, g);
            }
        }
    }
}

/// Held-out rotation/translation MAE for the current parameters.
pub fn holdout_metrics<S: Scalar>(
    pairs: &[RegistrationPairOf<S>],
    params: &ModelParams<S>,
    opts: &PrnetOptions,
) -> Result<(f64, f64, f64), PipelineError> {
    let preds: Result<Vec<_>, PipelineError> = pairs
        .par_iter()
        .map(|pair| {
            let tape = Tape::new();
            let run = prnet_register(&tape, pair, params, opts, &SplitRng::new(0))?;
            Ok(run.result.final_transform)
        })
        .collect();
    let preds = preds?;
    let truths: Vec<_> = pairs.iter().map(|p| p.ground_truth).collect();
    let m = compute_metrics(&preds, &truths)?;
    Ok((m.mae_r, m.mae_t, m.r2_r))
}

/// Trains in place. Per epoch: regenerate pairs (fresh transforms and
/// crops), accumulate gradients over each batch in fixed order, take one
/// Adam step per batch, then evaluate on the fixed held-out pairs.
/// `on_epoch` fires after every epoch (checkpoint cadence is the
/// caller's concern). `start_epoch` supports resuming: randomness is
/// keyed by (seed, epoch, slot), never by call count.
pub fn train<S: Scalar>(
    shapes: &[PointCloudOf<S>],
    template: &PairSpec,
    config: &TrainConfig,
    params: &mut ModelParams<S>,
    state: &mut AdamState<S>,
    start_epoch: usize,
    mut on_epoch: impl FnMut(usize, &ModelParams<S>, &AdamState<S>, &EpochRecord),
) -> Result<TrainOutcome, PipelineError> {
    config.validate()?;
    if shapes.len() <= config.holdout_shapes {
        return Err(PipelineError::InvalidConfig(format!(
            "need more than {} shapes for a {}-shape holdout",
            config.holdout_shapes, config.holdout_shapes
        )));
    }
    let split = shapes.len() - config.holdout_shapes;
    let (train_shapes, held_shapes) = shapes.split_at(split);
    let eval_set = holdout_pairs(held_shapes, template, config.seed, config.eval_pairs)?;
    let root = SplitRng::new(config.seed);
    let adam_cfg = config.adam();
    let mut log = Vec::new();

    for epoch in start_epoch..config.epochs {
        let progress = if config.epochs > 1 {
            epoch as f64 / (config.epochs - 1) as f64
        } else {
            1.0
        };
        let lr = config.lr_at(epoch);
        let opts = PrnetOptions {
            iterations: config.iterations,
            acp: config.acp_train(progress),
            weights: config.weights(),
            train_mode: true,
        };
        let mut order: Vec<usize> = (0..train_shapes.len()).collect();
        root.child2(crate::rng::stream::SHUFFLE, epoch as u64)
            .shuffle(&mut order);

        let mut epoch_loss = 0.0;
        let mut epoch_rigid = 0.0;
        let mut epoch_cycle = 0.0;
        let mut epoch_feature = 0.0;
        let mut epoch_lambda = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(config.batch_size) {
            // Parallel over the batch; reduction order fixed by batch order.
            let results: Result<Vec<PairGrad<S>>, PipelineError> = batch
                .par_iter()
                .map(|&shape_idx| {
                    let pair = training_pair(&train_shapes[shape_idx], template, &root, epoch, shape_idx)?;
                    let rng = root.child2(epoch as u64, shape_idx as u64);
                    pair_gradient(&pair, params, &opts, &rng)
                })
                .collect();
            let results = results?;
            let mut grads: Gradients<S> = Gradients::new();
            for r in &results {
                epoch_loss += r.loss;
                epoch_rigid += r.rigid;
                epoch_cycle += r.cycle;
                epoch_feature += r.feature;
                epoch_lambda += r.lambda;
            }
            seen += results.len();
            let scale = S::from_f64(1.0 / results.len() as f64).unwrap();
            for r in results {
                merge_gradients(&mut grads, r.grads);
            }
            for g in grads.values_mut() {
                for v in g.data.iter_mut() {
                    *v *= scale;
                }
            }
            adam_step(params, &grads, state, lr, &adam_cfg);
            if !params.all_finite() {
                return Err(PipelineError::NonFiniteLoss);
            }
        }

        let eval_opts = PrnetOptions {
            iterations: config.iterations,
            acp: config.acp_eval(),
            weights: config.weights(),
            train_mode: false,
        };
        let (mae_r, mae_t, r2_r) = holdout_metrics(&eval_set, params, &eval_opts)?;
        let denom = seen.max(1) as f64;
        let record = EpochRecord {
            epoch,
            lr,
            mean_loss: epoch_loss / denom,
            mean_rigid: epoch_rigid / denom,
            mean_cycle: epoch_cycle / denom,
            mean_feature: epoch_feature / denom,
            mean_lambda: epoch_lambda / denom,
            eval_mae_r: mae_r,
            eval_mae_t: mae_t,
            eval_r2_r: r2_r,
        };
        on_epoch(epoch, params, state, &record);
        log.push(record);
    }
    Ok(TrainOutcome { log })
}
