//! Actor-critic closest point: keypoint detection, Gumbel-Softmax
//! correspondence sampling with straight-through gradients, temperature
//! control, and the differentiable alignment head.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::geometry::{PointCloudOf, RigidTransformOf, Vec3};
use crate::networks::{
    cocontext, encode, global_pool, value_head, NetCtx, NetworkError,
};
use crate::procrustes::{alignment_objective, Matching, ProcrustesError};
use crate::result::AcpDiagnostics;
use crate::rng::{stream, SplitRng};
use crate::scalar::{cast, Scalar};

#[derive(Debug, Error)]
pub enum MatcherError {
    #[error("k = {k} keypoints requested from {n} points")]
    KTooLarge { k: usize, n: usize },
    #[error("keypoint count must be >= 3, got {0}")]
    KTooSmall(usize),
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Procrustes(#[from] ProcrustesError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeypointKind {
    /// Rows with the largest feature norms.
    L2Norm,
    /// Uniformly random distinct rows.
    Random,
    /// Rows minimizing mean feature-space distance to all rows.
    Centrality,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeypointStrategy {
    pub kind: KeypointKind,
    pub k: usize,
}

impl Default for KeypointStrategy {
    fn default() -> Self {
        Self {
            kind: KeypointKind::L2Norm,
            k: 48,
        }
    }
}

/// How the Gumbel-Softmax temperature is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TemperatureMode {
    Fixed { value: f64 },
    /// Log-linear schedule from `start` to `end` over training progress.
    Annealed { start: f64, end: f64 },
    /// A single trainable scalar.
    LearnedGlobal,
    /// Predicted per pair by the value head.
    Predicted,
}

impl Default for TemperatureMode {
    fn default() -> Self {
        TemperatureMode::Predicted
    }
}

/// What the straight-through backward differentiates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StBackward {
    /// softmax((logits + g) / lambda), the standard relaxed surrogate;
    /// lambda and the value head receive gradients.
    Relaxed,
    /// softmax(logits), the plain soft map with no noise and no temperature.
    PlainSoftmax,
}

/// Forward semantics of the matching matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatchForward {
    /// One-hot argmax rows (production).
    Hard,
    /// The smooth surrogate itself (gradient-check fixtures).
    SoftSurrogate,
}

#[derive(Clone, Copy, Debug)]
pub struct AcpOptions {
    pub strategy: KeypointStrategy,
    pub temp_mode: TemperatureMode,
    pub st_backward: StBackward,
    pub match_forward: MatchForward,
    /// Zero the Gumbel noise (deterministic argmax matching).
    pub deterministic: bool,
    /// Training progress in [0, 1] for the annealed schedule.
    pub anneal_progress: f64,
}

impl Default for AcpOptions {
    fn default() -> Self {
        Self {
            strategy: KeypointStrategy::default(),
            temp_mode: TemperatureMode::default(),
            st_backward: StBackward::Relaxed,
            match_forward: MatchForward::Hard,
            deterministic: false,
            anneal_progress: 0.0,
        }
    }
}

/// Picks `k` keypoint rows of a feature matrix. Selection is
/// non-differentiable; gradients flow only through the selected rows.
pub fn detect_keypoints<S: Scalar>(
    phi: &Tensor<S>,
    strategy: &KeypointStrategy,
    rng: &mut SplitRng,
) -> Result<Vec<usize>, MatcherError> {
    let (n, d) = phi.dims2().map_err(MatcherError::Autodiff)?;
    let k = strategy.k;
    if k > n {
        return Err(MatcherError::KTooLarge { k, n });
    }
    if k < 3 {
        return Err(MatcherError::KTooSmall(k));
    }
    let picked = match strategy.kind {
        KeypointKind::L2Norm => {
            let mut scored: Vec<(S, usize)> = (0..n)
                .map(|i| {
                    let row = &phi.data[i * d..(i + 1) * d];
                    let norm_sq: S = row.iter().map(|&v| v * v).sum();
                    (norm_sq, i)
                })
                .collect();
            scored.sort_by(|a, b| {
                b.0.partial_cmp(&a.0)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.1.cmp(&b.1))
            });
            scored[..k].iter().map(|&(_, i)| i).collect()
        }
        KeypointKind::Random => rng.distinct_indices(n, k),
        KeypointKind::Centrality => {
            let mut scored: Vec<(S, usize)> = (0..n)
                .map(|i| {
                    let ri = &phi.data[i * d..(i + 1) * d];
                    let total: S = (0..n)
                        .map(|j| {
                            let rj = &phi.data[j * d..(j + 1) * d];
                            ri.iter()
                                .zip(rj.iter())
                                .map(|(&a, &b)| (a - b) * (a - b))
                                .sum::<S>()
                                .sqrt()
                        })
                        .sum();
                    (total, i)
                })
                .collect();
            scored.sort_by(|a, b| {
                a.0.partial_cmp(&b.0)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.1.cmp(&b.1))
            });
            scored[..k].iter().map(|&(_, i)| i).collect()
        }
    };
    Ok(picked)
}

/// `-ln(-ln u)` with `u` clamped into `[1e-12, 1 - 1e-12]`.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(1e-12, 1.0 - 1e-12);
    -(-(u.ln())).ln()
}

/// I.i.d. Gumbel(0, 1) noise; treated as a constant downstream.
pub fn sample_gumbel<S: Scalar>(shape: &[usize], rng: &mut SplitRng) -> Tensor<S> {
    let numel = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        data: (0..numel)
            .map(|_| cast::<S>(gumbel_from_uniform(rng.uniform())))
            .collect(),
    }
}

/// Value-level soft map: row-stochastic `softmax(phi_src phi_tgt^T)`.
pub fn soft_match<S: Scalar>(
    phi_src: &Tensor<S>,
    phi_tgt: &Tensor<S>,
) -> Result<Matching<S>, MatcherError> {
    let (k_src, d) = phi_src.dims2().map_err(MatcherError::Autodiff)?;
    let (k_tgt, d2) = phi_tgt.dims2().map_err(MatcherError::Autodiff)?;
    if d != d2 || k_src == 0 || k_tgt == 0 {
        return Err(MatcherError::Autodiff(AutodiffError::ShapeMismatch(
            format!("soft_match {:?} vs {:?}", phi_src.shape, phi_tgt.shape),
        )));
    }
    let tape: Tape<S> = Tape::new();
    let a = tape.constant(phi_src.clone());
    let b = tape.constant(phi_tgt.clone());
    let logits = tape.matmul(a, tape.transpose_last2(b)?)?;
    let probs = tape.value(tape.softmax_lastdim(logits)?);
    Ok(Matching::Soft(crate::procrustes::SoftMatching {
        rows: k_src,
        cols: k_tgt,
        weights: probs.data,
    }))
}

/// Tape-level matching matrix with hard forward and soft backward.
pub struct GumbelMatch<S> {
    /// The matching matrix on the tape (one-hot values in hard mode; the
    /// surrogate's smooth values in soft-surrogate mode).
    pub matrix: Var,
    /// Argmax target per source row (lowest index on ties).
    pub hard_targets: Vec<usize>,
    /// The surrogate probabilities the backward pass differentiates.
    pub soft_probs: Tensor<S>,
}

/// Materializes a `[rows, cols]` grid of a `[1, 1]` scalar var through two
/// rank-preserving matmuls, keeping the scalar differentiable.
fn broadcast_scalar<S: Scalar>(
    tape: &Tape<S>,
    v: Var,
    rows: usize,
    cols: usize,
) -> Result<Var, AutodiffError> {
    let ones_col = tape.constant(Tensor::full(&[rows, 1], S::one()));
    let ones_row = tape.constant(Tensor::full(&[1, cols], S::one()));
    let col = tape.matmul(ones_col, v)?;
    tape.matmul(col, ones_row)
}

/// Gumbel-Softmax matching: forward one-hot at `argmax(logits + g)` per
/// row (ties to the lowest index, invariant to the positive temperature);
/// backward through the configured soft surrogate. The temperature
/// receives gradients through the relaxed surrogate.
pub fn gumbel_match<S: Scalar>(
    tape: &Tape<S>,
    phi_src: Var,
    phi_tgt: Var,
    lambda: Var,
    noise: &Tensor<S>,
    st_backward: StBackward,
    forward: MatchForward,
) -> Result<GumbelMatch<S>, MatcherError> {
    let k_src = tape.shape(phi_src)[0];
    let k_tgt = tape.shape(phi_tgt)[0];
    if noise.shape != [k_src, k_tgt] {
        return Err(MatcherError::Autodiff(AutodiffError::ShapeMismatch(
            format!("noise shape {:?}, expected [{k_src}, {k_tgt}]", noise.shape),
        )));
    }
    let lambda_value = tape.scalar_value(lambda).to_f64().unwrap();
    if !(lambda_value > 0.0) {
        return Err(MatcherError::NonPositiveTemperature(lambda_value));
    }
    let logits = tape.matmul(phi_src, tape.transpose_last2(phi_tgt)?)?;
    let noisy = tape.add(logits, tape.constant(noise.clone()))?;

    // Hard argmax is computed before the temperature division; a positive
    // scale cannot change the argmax, so the forward is exactly
    // lambda-invariant.
    let noisy_values = tape.value(noisy);
    let mut hard_targets = Vec::with_capacity(k_src);
    for row in noisy_values.data.chunks(k_tgt) {
        let mut best = 0usize;
        let mut best_v = row[0];
        for (j, &v) in row.iter().enumerate().skip(1) {
            if v > best_v {
                best_v = v;
                best = j;
            }
        }
        hard_targets.push(best);
    }

    let soft = match st_backward {
        StBackward::Relaxed => {
            let inv_lambda = tape.exp(tape.scale(tape.log(lambda)?, -S::one())?)?;
            let grid = broadcast_scalar(tape, inv_lambda, k_src, k_tgt)?;
            tape.softmax_lastdim(tape.mul(noisy, grid)?)?
        }
        StBackward::PlainSoftmax => tape.softmax_lastdim(logits)?,
    };
    let soft_probs = tape.value(soft);

    let matrix = match forward {
        MatchForward::SoftSurrogate => soft,
        MatchForward::Hard => {
            let mut one_hot = Tensor::zeros(&[k_src, k_tgt]);
            for (i, &j) in hard_targets.iter().enumerate() {
                one_hot.data[i * k_tgt + j] = S::one();
            }
            // hard + (soft - soft.values): forward equals the one-hot
            // exactly, backward passes gradients straight to the surrogate.
            let detached = tape.constant(soft_probs.clone());
            let delta = tape.sub(soft, detached)?;
            tape.add(tape.constant(one_hot), delta)?
        }
    };
    Ok(GumbelMatch {
        matrix,
        hard_targets,
        soft_probs,
    })
}

/// Mean row entropy (nats) of a row-stochastic matrix.
pub fn mean_row_entropy<S: Scalar>(probs: &Tensor<S>) -> f64 {
    let cols = probs.last_dim();
    let rows = probs.outer_count();
    if rows == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for row in probs.data.chunks(cols) {
        for &p in row {
            let p = p.to_f64().unwrap();
            if p > 0.0 {
                total -= p * p.ln();
            }
        }
    }
    total / rows as f64
}

/// Embeddings shared by both directions of one refinement step.
pub struct PairEmbedding {
    pub phi_src: Var,
    pub phi_tgt: Var,
    pub psi_src: Var,
    pub psi_tgt: Var,
}

/// Siamese encode + co-context + pooling for one (source, target) state.
pub fn embed_pair<S: Scalar>(
    ctx: &NetCtx<S>,
    src_coords: Var,
    tgt_coords: Var,
) -> Result<PairEmbedding, MatcherError> {
    let f_src = encode(ctx, src_coords)?;
    let f_tgt = encode(ctx, tgt_coords)?;
    let (phi_src, phi_tgt) = cocontext(ctx, f_src, f_tgt)?;
    let psi_src = global_pool(ctx.tape, phi_src)?;
    let psi_tgt = global_pool(ctx.tape, phi_tgt)?;
    Ok(PairEmbedding {
        phi_src,
        phi_tgt,
        psi_src,
        psi_tgt,
    })
}

/// The temperature for one directional match, as a `[1, 1]` tape var.
pub fn temperature<S: Scalar>(
    ctx: &NetCtx<S>,
    psi_src: Var,
    psi_tgt: Var,
    mode: &TemperatureMode,
    anneal_progress: f64,
    lambda_floor: f64,
) -> Result<Var, MatcherError> {
    let t = ctx.tape;
    match mode {
        TemperatureMode::Fixed { value } => {
            if !(*value > 0.0) {
                return Err(MatcherError::NonPositiveTemperature(*value));
            }
            Ok(t.constant(Tensor::new(vec![1, 1], vec![cast::<S>(*value)]).unwrap()))
        }
        TemperatureMode::Annealed { start, end } => {
            if !(*start > 0.0 && *end > 0.0) {
                return Err(MatcherError::NonPositiveTemperature(start.min(*end)));
            }
            let p = anneal_progress.clamp(0.0, 1.0);
            let value = (start.ln() * (1.0 - p) + end.ln() * p).exp();
            Ok(t.constant(Tensor::new(vec![1, 1], vec![cast::<S>(value)]).unwrap()))
        }
        TemperatureMode::LearnedGlobal => {
            // softplus(x) + floor, sharing the stable formulation.
            let x = ctx.p("temperature.global");
            let pos = t.relu(x)?;
            let neg = t.relu(t.scale(x, -S::one())?)?;
            let abs = t.add(pos, neg)?;
            let e = t.exp(t.scale(abs, -S::one())?)?;
            let ones = t.constant(Tensor::full(&[1, 1], S::one()));
            let sp = t.add(pos, t.log(t.add(e, ones)?)?)?;
            let floor = t.constant(Tensor::full(&[1, 1], cast::<S>(lambda_floor)));
            Ok(t.add(sp, floor)?)
        }
        TemperatureMode::Predicted => Ok(value_head(ctx, psi_src, psi_tgt)?),
    }
}

/// Output of one directional ACP pass.
pub struct AcpStepOutput<S> {
    pub rotation: Var,
    pub translation: Var,
    pub transform: RigidTransformOf<S>,
    pub diagnostics: AcpDiagnostics,
}

/// One directional pass: keypoints, Gumbel-Softmax matching on keypoint
/// embeddings, and the differentiable closed-form alignment on keypoint
/// coordinates (hard matching forward, soft surrogate backward).
#[allow(clippy::too_many_arguments)]
pub fn acp_direction<S: Scalar>(
    ctx: &NetCtx<S>,
    phi_src: Var,
    phi_tgt: Var,
    psi_src: Var,
    psi_tgt: Var,
    src_coords: Var,
    tgt_coords: Var,
    opts: &AcpOptions,
    rng: &mut SplitRng,
) -> Result<AcpStepOutput<S>, MatcherError> {
    let t = ctx.tape;
    let k = opts.strategy.k;
    let idx_src = detect_keypoints(
        &t.value(phi_src),
        &opts.strategy,
        &mut rng.child(stream::KEYPOINTS),
    )?;
    let idx_tgt = detect_keypoints(
        &t.value(phi_tgt),
        &opts.strategy,
        &mut rng.child(stream::KEYPOINTS).child(1),
    )?;
    let kp_src = t.gather_rows(phi_src, &idx_src)?;
    let kp_tgt = t.gather_rows(phi_tgt, &idx_tgt)?;
    let src_pts = t.gather_rows(src_coords, &idx_src)?;
    let tgt_pts = t.gather_rows(tgt_coords, &idx_tgt)?;

    let lambda_floor = ctx.params.config.value_head.lambda_floor;
    let lambda = temperature(ctx, psi_src, psi_tgt, &opts.temp_mode, opts.anneal_progress, lambda_floor)?;
    let lambda_value = t.scalar_value(lambda).to_f64().unwrap();

    let noise = if opts.deterministic {
        Tensor::zeros(&[k, k])
    } else {
        sample_gumbel(&[k, k], &mut rng.child(stream::GUMBEL))
    };
    let gm = gumbel_match(
        t,
        kp_src,
        kp_tgt,
        lambda,
        &noise,
        opts.st_backward,
        opts.match_forward,
    )?;

    // mapped_i = sum_j m_ij y_j; equals the matched target row in hard mode.
    let mapped = t.matmul(gm.matrix, tgt_pts)?;
    let inv_k = S::one() / S::from_usize(k).unwrap();
    let mean_row = t.constant(Tensor::full(&[1, k], inv_k));
    let ones_col = t.constant(Tensor::full(&[k, 1], S::one()));
    let xbar = t.matmul(mean_row, src_pts)?;
    let ybar = t.matmul(mean_row, mapped)?;
    let xc = t.sub(src_pts, t.matmul(ones_col, xbar)?)?;
    let yc = t.sub(mapped, t.matmul(ones_col, ybar)?)?;
    let h = t.matmul(t.transpose_last2(xc)?, yc)?;
    let (rotation, degenerate) = t.rotation_from_cov(h)?;
    let translation = t.sub(ybar, t.matmul(xbar, t.transpose_last2(rotation)?)?)?;

    let transform = {
        let r = crate::autodiff::Tensor::clone(&t.value(rotation));
        let tr = t.value(translation);
        RigidTransformOf::new(
            crate::geometry::Mat3::from_rows(
                [r.data[0], r.data[1], r.data[2]],
                [r.data[3], r.data[4], r.data[5]],
                [r.data[6], r.data[7], r.data[8]],
            ),
            Vec3::new(tr.data[0], tr.data[1], tr.data[2]),
        )
    };

    let src_cloud = tensor_rows_to_cloud(&t.value(src_pts));
    let tgt_cloud = tensor_rows_to_cloud(&t.value(tgt_pts));
    let objective = alignment_objective(
        &src_cloud,
        &tgt_cloud,
        &transform,
        &Matching::Hard(gm.hard_targets.clone()),
    )?
    .to_f64()
    .unwrap();

    let diagnostics = AcpDiagnostics {
        lambda: lambda_value,
        keypoints_source: idx_src,
        keypoints_target: idx_tgt,
        mean_row_entropy: mean_row_entropy(&gm.soft_probs),
        objective,
        degenerate,
        matched_targets: gm.hard_targets,
    };
    Ok(AcpStepOutput {
        rotation,
        translation,
        transform,
        diagnostics,
    })
}

/// One standalone ACP step on a fresh pair of clouds: embeds both, then
/// runs the source-to-target direction. The result's `rotation` /
/// `translation` handles stay differentiable on the caller's tape.
pub fn acp_step<S: Scalar>(
    tape: &Tape<S>,
    source: &PointCloudOf<S>,
    target: &PointCloudOf<S>,
    params: &crate::networks::ModelParams<S>,
    opts: &AcpOptions,
    rng: &mut SplitRng,
) -> Result<AcpStepOutput<S>, MatcherError> {
    let ctx = NetCtx::new(tape, params);
    let src_coords = tape.constant(cloud_to_tensor(source));
    let tgt_coords = tape.constant(cloud_to_tensor(target));
    let emb = embed_pair(&ctx, src_coords, tgt_coords)?;
    acp_direction(
        &ctx,
        emb.phi_src,
        emb.phi_tgt,
        emb.psi_src,
        emb.psi_tgt,
        src_coords,
        tgt_coords,
        opts,
        rng,
    )
}

pub fn cloud_to_tensor<S: Scalar>(cloud: &PointCloudOf<S>) -> Tensor<S> {
    Tensor {
        shape: vec![cloud.len(), 3],
        data: cloud.flat_coords(),
    }
}

pub fn tensor_rows_to_cloud<S: Scalar>(t: &Tensor<S>) -> PointCloudOf<S> {
    let points = t
        .data
        .chunks(3)
        .map(|c| Vec3::new(c[0], c[1], c[2]))
        .collect();
    PointCloudOf {
        points,
        source_indices: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{tiny_config, ModelParams};

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = SplitRng::new(seed);
        let numel = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..numel).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn l2norm_keypoints_pick_largest_rows() {
        let phi = Tensor::new(vec![3, 1], vec![3.0, 1.0, 2.0]).unwrap();
        let idx = detect_keypoints(
            &phi,
            &KeypointStrategy {
                kind: KeypointKind::L2Norm,
                k: 3,
            },
            &mut SplitRng::new(0),
        )
        .unwrap();
        assert_eq!(idx, vec![0, 2, 1]);
        let mut top2 = idx[..2].to_vec();
        top2.sort_unstable();
        assert_eq!(top2, vec![0, 2]);
    }

    #[test]
    fn l2norm_matches_brute_force_sort() {
        for seed in 0..100 {
            let phi = rand_tensor(&[30, 6], seed);
            let idx = detect_keypoints(
                &phi,
                &KeypointStrategy {
                    kind: KeypointKind::L2Norm,
                    k: 10,
                },
                &mut SplitRng::new(seed),
            )
            .unwrap();
            let mut scored: Vec<(f64, usize)> = (0..30)
                .map(|i| {
                    let row = &phi.data[i * 6..(i + 1) * 6];
                    (-row.iter().map(|v| v * v).sum::<f64>(), i)
                })
                .collect();
            scored.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let expect: Vec<usize> = scored[..10].iter().map(|&(_, i)| i).collect();
            assert_eq!(idx, expect, "seed {seed}");
        }
    }

    #[test]
    fn k_equal_n_returns_all_indices() {
        let phi = rand_tensor(&[8, 4], 1);
        for kind in [KeypointKind::L2Norm, KeypointKind::Random, KeypointKind::Centrality] {
            let mut idx = detect_keypoints(
                &phi,
                &KeypointStrategy { kind, k: 8 },
                &mut SplitRng::new(2),
            )
            .unwrap();
            idx.sort_unstable();
            assert_eq!(idx, (0..8).collect::<Vec<_>>(), "{kind:?}");
        }
    }

    #[test]
    fn centrality_prefers_the_mean_row() {
        // Row 1 is the mean of rows 0 and 2.
        let phi = Tensor::new(vec![3, 2], vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0]).unwrap();
        let idx = detect_keypoints(
            &phi,
            &KeypointStrategy {
                kind: KeypointKind::Centrality,
                k: 3,
            },
            &mut SplitRng::new(3),
        )
        .unwrap();
        assert_eq!(idx[0], 1);
    }

    #[test]
    fn random_keypoints_are_distinct_and_seeded() {
        let phi = rand_tensor(&[20, 3], 4);
        let s = KeypointStrategy {
            kind: KeypointKind::Random,
            k: 12,
        };
        let a = detect_keypoints(&phi, &s, &mut SplitRng::new(9)).unwrap();
        let b = detect_keypoints(&phi, &s, &mut SplitRng::new(9)).unwrap();
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 12);
    }

    #[test]
    fn gumbel_formula_and_clamp() {
        assert!((gumbel_from_uniform(0.5) - 0.36651).abs() < 1e-5);
        assert!(gumbel_from_uniform(1.0).is_finite());
        assert!(gumbel_from_uniform(0.0).is_finite());
    }

    #[test]
    fn gumbel_empirical_mean_is_euler_mascheroni() {
        let mut rng = SplitRng::new(5);
        let n = 1_000_000;
        let mean: f64 = (0..n)
            .map(|_| gumbel_from_uniform(rng.uniform()))
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.5772).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn soft_match_uniform_and_saturated() {
        // Identical target embeddings: uniform rows.
        let src = rand_tensor(&[2, 4], 6);
        let tgt_row = rand_tensor(&[1, 4], 7);
        let tgt = Tensor::new(
            vec![3, 4],
            tgt_row.data.iter().cycle().take(12).copied().collect(),
        )
        .unwrap();
        match soft_match(&src, &tgt).unwrap() {
            Matching::Soft(m) => {
                for i in 0..2 {
                    for &w in m.row(i) {
                        assert!((w - 1.0 / 3.0).abs() < 1e-12);
                    }
                }
            }
            _ => unreachable!(),
        }
        // A +20 logit dominates.
        let src = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        let tgt = Tensor::new(vec![3, 1], vec![21.0, 1.0, 0.0]).unwrap();
        match soft_match(&src, &tgt).unwrap() {
            Matching::Soft(m) => {
                assert!(m.row(0)[0] > 1.0 - 1e-8);
                let sum: f64 = m.row(0).iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn soft_match_rows_sum_to_one() {
        let src = rand_tensor(&[5, 6], 8);
        let tgt = rand_tensor(&[7, 6], 9);
        match soft_match(&src, &tgt).unwrap() {
            Matching::Soft(m) => {
                for i in 0..5 {
                    let sum: f64 = m.row(i).iter().sum();
                    assert!((sum - 1.0).abs() < 1e-12);
                }
            }
            _ => unreachable!(),
        }
    }

    fn match_fixture(
        lambda: f64,
        noise: &Tensor<f64>,
        st: StBackward,
        forward: MatchForward,
        phi_src: &Tensor<f64>,
        phi_tgt: &Tensor<f64>,
    ) -> (Vec<usize>, Tensor<f64>) {
        let tape: Tape<f64> = Tape::new();
        let a = tape.constant(phi_src.clone());
        let b = tape.constant(phi_tgt.clone());
        let l = tape.constant(Tensor::new(vec![1, 1], vec![lambda]).unwrap());
        let gm = gumbel_match(&tape, a, b, l, noise, st, forward).unwrap();
        (gm.hard_targets, tape.value(gm.matrix))
    }

    #[test]
    fn gumbel_match_zero_noise_takes_argmax() {
        // logits row = [2, 0]
        let src = Tensor::new(vec![1, 1], vec![2.0]).unwrap();
        let tgt = Tensor::new(vec![2, 1], vec![1.0, 0.0]).unwrap();
        let noise = Tensor::zeros(&[1, 2]);
        let (hard, matrix) = match_fixture(
            1.0,
            &noise,
            StBackward::Relaxed,
            MatchForward::Hard,
            &src,
            &tgt,
        );
        assert_eq!(hard, vec![0]);
        assert_eq!(matrix.data, vec![1.0, 0.0]);
    }

    #[test]
    fn forward_argmax_is_lambda_invariant() {
        let src = rand_tensor(&[6, 5], 10);
        let tgt = rand_tensor(&[6, 5], 11);
        let noise = sample_gumbel(&[6, 6], &mut SplitRng::new(12));
        let mut results = Vec::new();
        for lambda in [0.1, 1.0, 10.0] {
            let (hard, matrix) = match_fixture(
                lambda,
                &noise,
                StBackward::Relaxed,
                MatchForward::Hard,
                &src,
                &tgt,
            );
            results.push((hard, matrix.data));
        }
        assert_eq!(results[0], results[1]);
        assert_eq!(results[1], results[2]);
    }

    #[test]
    fn straight_through_backward_equals_surrogate_jacobian() {
        // With identical upstream weights, gradients through the hard
        // (straight-through) matrix must equal gradients through the
        // surrogate itself, bit for bit.
        let src = rand_tensor(&[4, 3], 13);
        let tgt = rand_tensor(&[4, 3], 14);
        let noise = sample_gumbel(&[4, 4], &mut SplitRng::new(15));
        let w = rand_tensor(&[4, 4], 16);
        let run = |forward: MatchForward| -> crate::autodiff::Gradients<f64> {
            let tape: Tape<f64> = Tape::new();
            let a = tape.leaf("src", &src);
            let b = tape.leaf("tgt", &tgt);
            let l = tape.constant(Tensor::new(vec![1, 1], vec![0.7]).unwrap());
            let gm =
                gumbel_match(&tape, a, b, l, &noise, StBackward::Relaxed, forward).unwrap();
            let weighted = tape.mul(gm.matrix, tape.constant(w.clone())).unwrap();
            let loss = tape.reduce_sum(weighted).unwrap();
            tape.backward(loss).unwrap()
        };
        let hard = run(MatchForward::Hard);
        let soft = run(MatchForward::SoftSurrogate);
        for name in ["src", "tgt"] {
            assert_eq!(hard[name].data, soft[name].data, "{name}");
        }
    }

    #[test]
    fn lambda_receives_gradient_in_relaxed_mode() {
        let src = rand_tensor(&[4, 3], 17);
        let tgt = rand_tensor(&[4, 3], 18);
        let noise = sample_gumbel(&[4, 4], &mut SplitRng::new(19));
        let w = rand_tensor(&[4, 4], 20);
        let tape: Tape<f64> = Tape::new();
        let a = tape.constant(src);
        let b = tape.constant(tgt);
        let l = tape.leaf("lambda", &Tensor::new(vec![1, 1], vec![0.8]).unwrap());
        let gm = gumbel_match(&tape, a, b, l, &noise, StBackward::Relaxed, MatchForward::Hard)
            .unwrap();
        let loss = tape
            .reduce_sum(tape.mul(gm.matrix, tape.constant(w)).unwrap())
            .unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads["lambda"].data[0].abs() > 1e-12);
    }

    #[test]
    fn non_positive_temperature_is_rejected() {
        let src = rand_tensor(&[3, 2], 21);
        let tgt = rand_tensor(&[3, 2], 22);
        let tape: Tape<f64> = Tape::new();
        let a = tape.constant(src);
        let b = tape.constant(tgt);
        let l = tape.constant(Tensor::new(vec![1, 1], vec![0.0]).unwrap());
        let noise = Tensor::zeros(&[3, 3]);
        assert!(matches!(
            gumbel_match(&tape, a, b, l, &noise, StBackward::Relaxed, MatchForward::Hard),
            Err(MatcherError::NonPositiveTemperature(_))
        ));
    }

    #[test]
    fn acp_step_produces_valid_rotations() {
        let cfg = tiny_config();
        let params = ModelParams::<f64>::init(&cfg, &mut SplitRng::new(23)).unwrap();
        let opts = AcpOptions {
            strategy: KeypointStrategy {
                kind: KeypointKind::L2Norm,
                k: 6,
            },
            ..AcpOptions::default()
        };
        for seed in 0..50 {
            let mut rng = SplitRng::new(seed);
            let src = tensor_rows_to_cloud(&rand_tensor(&[12, 3], seed + 100));
            let tgt = tensor_rows_to_cloud(&rand_tensor(&[12, 3], seed + 200));
            let tape = Tape::new();
            let out = acp_step(&tape, &src, &tgt, &params, &opts, &mut rng).unwrap();
            assert!(out.transform.is_valid(), "seed {seed}");
            assert!(out.diagnostics.lambda > 0.0);
            assert_eq!(out.diagnostics.keypoints_source.len(), 6);
        }
    }

    #[test]
    fn identity_matching_on_identical_clouds_gives_identity_transform() {
        // Orthogonal feature rows with distinct norms force the sampled
        // matching (zero noise) to be the identity permutation; with
        // target = source the aligned transform must then be the identity.
        let cfg = tiny_config();
        let params = ModelParams::<f64>::init(&cfg, &mut SplitRng::new(24)).unwrap();
        let k = 8;
        let mut phi = Tensor::zeros(&[k, k]);
        for i in 0..k {
            phi.data[i * k + i] = 1.0 + 0.1 * i as f64;
        }
        let coords = rand_tensor(&[k, 3], 25);
        let tape = Tape::new();
        let ctx = NetCtx::new(&tape, &params);
        let phi_src = tape.constant(phi.clone());
        let phi_tgt = tape.constant(phi);
        let psi = tape.constant(rand_tensor(&[1, 8], 26));
        let pts = tape.constant(coords);
        let opts = AcpOptions {
            strategy: KeypointStrategy {
                kind: KeypointKind::L2Norm,
                k,
            },
            temp_mode: TemperatureMode::Fixed { value: 1.0 },
            deterministic: true,
            ..AcpOptions::default()
        };
        let mut rng = SplitRng::new(27);
        let out = acp_direction(
            &ctx, phi_src, phi_tgt, psi, psi, pts, pts, &opts, &mut rng,
        )
        .unwrap();
        let ident: Vec<usize> = (0..k).collect();
        assert_eq!(out.diagnostics.matched_targets, ident);
        assert!(
            (out.transform.rotation - crate::geometry::Mat3::identity()).frobenius_norm() < 1e-8
        );
        assert!(out.transform.translation.norm() < 1e-8);
    }
}
