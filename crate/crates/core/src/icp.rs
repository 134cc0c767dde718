//! Classical ICP baseline: alternate nearest-neighbor correspondence with
//! the closed-form Procrustes solve; each step decreases the objective.

use std::time::Instant;

use thiserror::Error;

use crate::geometry::{PointCloudOf, RigidTransformOf, Vec3};
use crate::procrustes::{alignment_objective, solve_procrustes, Matching, ProcrustesError};
use crate::result::{IcpStepDiagnostics, RegistrationResultOf, StepDiagnostics, StepRecordOf};
use crate::scalar::{cast, Scalar};

#[derive(Debug, Error)]
pub enum IcpError {
    #[error("target cloud is empty")]
    EmptyTarget,
    #[error("need at least 3 points per cloud, got {source_len} source / {target_len} target")]
    TooFewPoints { source_len: usize, target_len: usize },
    #[error(transparent)]
    Procrustes(#[from] ProcrustesError),
}

#[derive(Clone, Copy, Debug)]
pub struct IcpConfig<S> {
    pub max_iterations: usize,
    /// Stop when the objective decrease falls below this threshold.
    pub convergence_tol: S,
    pub init: RigidTransformOf<S>,
}

impl<S: Scalar> Default for IcpConfig<S> {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            convergence_tol: cast(1e-8),
            init: RigidTransformOf::identity(),
        }
    }
}

/// Exact nearest-neighbor structure: a 3D k-d tree, with brute force below
/// 64 points where the tree buys nothing.
pub struct NearestNeighbors<S> {
    points: Vec<Vec3<S>>,
    /// Node layout: sorted index array plus split metadata, empty when brute.
    tree: Option<KdTree<S>>,
}

struct KdTree<S> {
    /// Point indices arranged so each subtree occupies a contiguous range.
    order: Vec<usize>,
    nodes: Vec<KdNode<S>>,
}

#[derive(Clone, Copy)]
struct KdNode<S> {
    axis: usize,
    split: S,
    /// Index into `order` of the pivot point stored at this node.
    pivot: usize,
    left: usize,
    right: usize,
}

const KD_LEAF: usize = usize::MAX;
const BRUTE_FORCE_LIMIT: usize = 64;

impl<S: Scalar> NearestNeighbors<S> {
    pub fn build(points: &[Vec3<S>]) -> Self {
        if points.len() < BRUTE_FORCE_LIMIT {
            return Self {
                points: points.to_vec(),
                tree: None,
            };
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::with_capacity(points.len());
        build_node(points, &mut order, &mut nodes, 0, points.len(), 0);
        Self {
            points: points.to_vec(),
            tree: Some(KdTree { order, nodes }),
        }
    }

    /// Index of the nearest point, ties broken by lowest index.
    pub fn nearest(&self, query: Vec3<S>) -> usize {
        match &self.tree {
            None => {
                let mut best = 0usize;
                let mut best_d = S::infinity();
                for (i, &p) in self.points.iter().enumerate() {
                    let d = (p - query).norm_sq();
                    if d < best_d {
                        best_d = d;
                        best = i;
                    }
                }
                best
            }
            Some(tree) => {
                let mut best = usize::MAX;
                let mut best_d = S::infinity();
                self.search(tree, 0, query, &mut best, &mut best_d);
                best
            }
        }
    }

    fn search(&self, tree: &KdTree<S>, node: usize, query: Vec3<S>, best: &mut usize, best_d: &mut S) {
        if node == KD_LEAF {
            return;
        }
        let n = tree.nodes[node];
        let idx = tree.order[n.pivot];
        let d = (self.points[idx] - query).norm_sq();
        // Strictly closer wins; equal distance prefers the lower index.
        if d < *best_d || (d == *best_d && idx < *best) {
            *best_d = d;
            *best = idx;
        }
        let delta = query[n.axis] - n.split;
        let (near, far) = if delta < S::zero() {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.search(tree, near, query, best, best_d);
        // Visit the far side when the splitting plane is within (or at) the
        // best distance, so equal-distance ties are still found.
        if delta * delta <= *best_d {
            self.search(tree, far, query, best, best_d);
        }
    }
}

fn build_node<S: Scalar>(
    points: &[Vec3<S>],
    order: &mut [usize],
    nodes: &mut Vec<KdNode<S>>,
    lo: usize,
    hi: usize,
    offset: usize,
) -> usize {
    if lo >= hi {
        return KD_LEAF;
    }
    // Split on the axis with the largest extent in this range.
    let mut min = [S::infinity(); 3];
    let mut max = [S::neg_infinity(); 3];
    for &i in order[lo - offset..hi - offset].iter() {
        for a in 0..3 {
            let v = points[i][a];
            if v < min[a] {
                min[a] = v;
            }
            if v > max[a] {
                max[a] = v;
            }
        }
    }
    let mut axis = 0;
    for a in 1..3 {
        if max[a] - min[a] > max[axis] - min[axis] {
            axis = a;
        }
    }
    let mid = (lo + hi) / 2;
    let slice = &mut order[lo - offset..hi - offset];
    slice.sort_by(|&a, &b| {
        points[a][axis]
            .partial_cmp(&points[b][axis])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let node_index = nodes.len();
    nodes.push(KdNode {
        axis,
        split: points[order[mid - offset]][axis],
        pivot: mid - offset,
        left: KD_LEAF,
        right: KD_LEAF,
    });
    let left = build_node(points, order, nodes, lo, mid, offset);
    let right = build_node(points, order, nodes, mid + 1, hi, offset);
    nodes[node_index].left = left;
    nodes[node_index].right = right;
    node_index
}

/// Hard matching sending each source point to its Euclidean-nearest target,
/// ties broken by lowest target index.
pub fn nearest_neighbor_map<S: Scalar>(
    source: &PointCloudOf<S>,
    target: &PointCloudOf<S>,
) -> Result<Matching<S>, IcpError> {
    if target.is_empty() {
        return Err(IcpError::EmptyTarget);
    }
    let nn = NearestNeighbors::build(&target.points);
    Ok(Matching::Hard(
        source.points.iter().map(|&p| nn.nearest(p)).collect(),
    ))
}

/// Runs ICP from `config.init`, recording the objective after every
/// update. The recorded sequence is non-increasing.
pub fn icp_register<S: Scalar>(
    source: &PointCloudOf<S>,
    target: &PointCloudOf<S>,
    config: &IcpConfig<S>,
) -> Result<RegistrationResultOf<S>, IcpError> {
    if source.len() < 3 || target.len() < 3 {
        return Err(IcpError::TooFewPoints {
            source_len: source.len(),
            target_len: target.len(),
        });
    }
    let started = Instant::now();
    let nn = NearestNeighbors::build(&target.points);
    let mut current = config.init;
    let mut per_step: Vec<StepRecordOf<S>> = Vec::new();
    let mut prev_objective = S::infinity();
    for _iter in 0..config.max_iterations {
        let moved = current.apply(source);
        let matching = Matching::Hard(moved.points.iter().map(|&p| nn.nearest(p)).collect());
        // Solving from the original source under this matching is globally
        // optimal for the matching, which keeps the objective monotone.
        let solution = solve_procrustes(source, target, &matching)?;
        let previous = current;
        current = solution.transform;
        let objective = alignment_objective(source, target, &current, &matching)?;
        let increment = RigidTransformOf::compose(&current, &previous.invert());
        per_step.push(StepRecordOf {
            transform: increment,
            diagnostics: StepDiagnostics::Icp(IcpStepDiagnostics {
                objective: objective.to_f64().unwrap_or(f64::NAN),
                degenerate: solution.degenerate,
            }),
        });
        if prev_objective - objective < config.convergence_tol {
            break;
        }
        prev_objective = objective;
    }
    Ok(RegistrationResultOf {
        final_transform: current,
        per_step,
        elapsed_seconds: started.elapsed().as_secs_f64(),
    })
}
