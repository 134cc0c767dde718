//! Closed-form rigid alignment from (possibly soft) correspondences via
//! 3x3 SVD of the cross-covariance.

use thiserror::Error;

use crate::geometry::{Mat3, PointCloudOf, RigidTransformOf, Vec3};
use crate::scalar::{cast, Scalar};

#[derive(Debug, Error)]
pub enum ProcrustesError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid matching: {0}")]
    InvalidMatching(String),
}

/// Row-wise correspondence from source points to target points.
#[derive(Clone, Debug, PartialEq)]
pub enum Matching<S> {
    /// One target index per source row.
    Hard(Vec<usize>),
    /// Row-stochastic weights over targets, row-major `rows x cols`.
    Soft(SoftMatching<S>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoftMatching<S> {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<S>,
}

impl<S: Scalar> SoftMatching<S> {
    pub fn row(&self, i: usize) -> &[S] {
        &self.weights[i * self.cols..(i + 1) * self.cols]
    }
}

impl<S: Scalar> Matching<S> {
    pub fn rows(&self) -> usize {
        match self {
            Matching::Hard(idx) => idx.len(),
            Matching::Soft(m) => m.rows,
        }
    }

    /// Validates index bounds (hard) or row-stochasticity (soft) against a
    /// target of `n_targets` points.
    pub fn validate(&self, n_targets: usize) -> Result<(), ProcrustesError> {
        match self {
            Matching::Hard(idx) => {
                if let Some(&bad) = idx.iter().find(|&&i| i >= n_targets) {
                    return Err(ProcrustesError::InvalidMatching(format!(
                        "hard index {bad} out of range for {n_targets} targets"
                    )));
                }
            }
            Matching::Soft(m) => {
                if m.cols != n_targets {
                    return Err(ProcrustesError::DimensionMismatch(format!(
                        "soft matching has {} columns for {} targets",
                        m.cols, n_targets
                    )));
                }
                if m.weights.len() != m.rows * m.cols {
                    return Err(ProcrustesError::InvalidMatching(
                        "weight buffer does not match rows x cols".into(),
                    ));
                }
                let tol = cast::<S>(1e-9);
                for i in 0..m.rows {
                    let row = m.row(i);
                    if row.iter().any(|&w| w < S::zero()) {
                        return Err(ProcrustesError::InvalidMatching(format!(
                            "negative weight in row {i}"
                        )));
                    }
                    let sum: S = row.iter().copied().sum();
                    if (sum - S::one()).abs() > tol {
                        return Err(ProcrustesError::InvalidMatching(format!(
                            "row {i} sums to {sum}, expected 1"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Per-source-row mapped targets: the matched point (hard) or the
/// weighted average of targets (soft).
pub fn mapped_targets<S: Scalar>(
    matching: &Matching<S>,
    target: &PointCloudOf<S>,
) -> Result<PointCloudOf<S>, ProcrustesError> {
    matching.validate(target.len())?;
    let points = match matching {
        Matching::Hard(idx) => idx.iter().map(|&j| target.points[j]).collect(),
        Matching::Soft(m) => (0..m.rows)
            .map(|i| {
                m.row(i)
                    .iter()
                    .zip(target.points.iter())
                    .fold(Vec3::zero(), |acc, (&w, &y)| acc + y.scaled(w))
            })
            .collect(),
    };
    Ok(PointCloudOf {
        points,
        source_indices: None,
    })
}

/// Centered cross-covariance `H = sum_i (x_i - xbar)(y_i - ybar)^T`.
pub fn cross_covariance<S: Scalar>(
    source: &PointCloudOf<S>,
    mapped: &PointCloudOf<S>,
) -> Result<Mat3<S>, ProcrustesError> {
    if source.len() != mapped.len() || source.is_empty() {
        return Err(ProcrustesError::DimensionMismatch(format!(
            "source has {} points, mapped has {}",
            source.len(),
            mapped.len()
        )));
    }
    let xb = source.centroid();
    let yb = mapped.centroid();
    let mut h = Mat3::zero();
    for (x, y) in source.points.iter().zip(mapped.points.iter()) {
        h = h + Mat3::outer(*x - xb, *y - yb);
    }
    Ok(h)
}

/// Singular value decomposition of a 3x3 matrix: `h = u * diag(s) * v^T`
/// with orthogonal factors and descending nonnegative singular values.
#[derive(Clone, Copy, Debug)]
pub struct Svd3<S> {
    pub u: Mat3<S>,
    pub s: [S; 3],
    pub v: Mat3<S>,
}

impl<S: Scalar> Svd3<S> {
    pub fn reconstruct(&self) -> Mat3<S> {
        self.u * Mat3::diag(self.s[0], self.s[1], self.s[2]) * self.v.transpose()
    }
}

/// Jacobi eigendecomposition of a symmetric 3x3 matrix.
/// Returns (eigenvalues, eigenvector columns), unsorted.
fn jacobi_symmetric<S: Scalar>(a: Mat3<S>) -> ([S; 3], Mat3<S>) {
    let mut a = a.m;
    let mut v = Mat3::identity().m;
    let tol = cast::<S>(1e-14);
    let scale = {
        let fro = Mat3 { m: a }.frobenius_norm();
        if fro > S::zero() {
            fro
        } else {
            S::one()
        }
    };
    for _sweep in 0..50 {
        let off = (a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2]).sqrt();
        if off <= tol * scale {
            break;
        }
        for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            if a[p][q].abs() <= tol * scale {
                continue;
            }
            // Classic Jacobi rotation zeroing a[p][q].
            let theta = (a[q][q] - a[p][p]) / (cast::<S>(2.0) * a[p][q]);
            let t = {
                let sign = if theta >= S::zero() { S::one() } else { -S::one() };
                sign / (theta.abs() + (theta * theta + S::one()).sqrt())
            };
            let c = S::one() / (t * t + S::one()).sqrt();
            let s = t * c;
            let app = a[p][p];
            let aqq = a[q][q];
            let apq = a[p][q];
            a[p][p] = c * c * app - cast::<S>(2.0) * s * c * apq + s * s * aqq;
            a[q][q] = s * s * app + cast::<S>(2.0) * s * c * apq + c * c * aqq;
            a[p][q] = S::zero();
            a[q][p] = S::zero();
            for r in 0..3 {
                if r != p && r != q {
                    let arp = a[r][p];
                    let arq = a[r][q];
                    a[r][p] = c * arp - s * arq;
                    a[p][r] = a[r][p];
                    a[r][q] = s * arp + c * arq;
                    a[q][r] = a[r][q];
                }
            }
            for row in v.iter_mut() {
                let vp = row[p];
                let vq = row[q];
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    ([a[0][0], a[1][1], a[2][2]], Mat3 { m: v })
}

/// Orthonormalizes `cols` in place by modified Gram-Schmidt, completing
/// near-zero directions via cross products.
fn orthonormal_complete<S: Scalar>(cols: &mut [Vec3<S>; 3]) {
    let tiny = cast::<S>(1e-12);
    for i in 0..3 {
        let mut u = cols[i];
        for j in 0..i {
            u = u - cols[j].scaled(cols[j].dot(u));
        }
        let n = u.norm();
        if n > tiny {
            cols[i] = u.scaled(S::one() / n);
        } else {
            // Degenerate direction: complete orthogonally.
            cols[i] = match i {
                0 => Vec3::new(S::one(), S::zero(), S::zero()),
                1 => {
                    let axis = if cols[0].x.abs() < cast::<S>(0.9) {
                        Vec3::new(S::one(), S::zero(), S::zero())
                    } else {
                        Vec3::new(S::zero(), S::one(), S::zero())
                    };
                    cols[0].cross(axis).normalized()
                }
                _ => cols[0].cross(cols[1]).normalized(),
            };
        }
    }
}

/// SVD of a finite 3x3 matrix by Jacobi iterations on `h^T h` (tolerance
/// 1e-14, at most 50 sweeps), with the left factor recovered through `h`.
pub fn svd3<S: Scalar>(h: &Mat3<S>) -> Svd3<S> {
    let (mut eig, v_unsorted) = jacobi_symmetric(h.transpose() * *h);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig[b].partial_cmp(&eig[a]).unwrap_or(std::cmp::Ordering::Equal));
    let mut v = Mat3::zero();
    let mut s = [S::zero(); 3];
    for (dst, &src) in order.iter().enumerate() {
        if eig[src] < S::zero() {
            eig[src] = S::zero();
        }
        s[dst] = eig[src].sqrt();
        v.set_col(dst, v_unsorted.col(src));
    }
    // Right factor is orthogonal up to roundoff already; tidy it.
    let mut v_cols = [v.col(0), v.col(1), v.col(2)];
    orthonormal_complete(&mut v_cols);
    let mut v = Mat3::zero();
    for (j, c) in v_cols.iter().enumerate() {
        v.set_col(j, *c);
    }
    // u_i = H v_i / s_i where defined; Gram-Schmidt handles the rest.
    let smax = s[0].max(cast::<S>(1e-300));
    let mut u_cols = [Vec3::zero(); 3];
    for i in 0..3 {
        u_cols[i] = if s[i] > smax * cast::<S>(1e-12) {
            (*h * v.col(i)).scaled(S::one() / s[i])
        } else {
            Vec3::zero()
        };
    }
    orthonormal_complete(&mut u_cols);
    let mut u = Mat3::zero();
    for (j, c) in u_cols.iter().enumerate() {
        u.set_col(j, *c);
    }
    Svd3 { u, s, v }
}

/// Outcome of a Procrustes solve. `degenerate` flags cross-covariances of
/// rank < 2 (identical or ambiguously collinear points); the transform is
/// still the best-effort SVD solution.
#[derive(Clone, Copy, Debug)]
pub struct ProcrustesSolution<S> {
    pub transform: RigidTransformOf<S>,
    pub degenerate: bool,
}

/// Rotation from a cross-covariance: `R = V diag(1, 1, det(V U^T)) U^T`,
/// the reflection-corrected closed-form optimum. Returns the degeneracy
/// flag alongside.
pub fn rotation_from_covariance<S: Scalar>(h: &Mat3<S>) -> (Mat3<S>, bool) {
    let svd = svd3(h);
    let smax = svd.s[0].max(cast::<S>(1e-300));
    let degenerate = svd.s[1] <= smax * cast::<S>(1e-9) || svd.s[0] <= cast::<S>(1e-300);
    let d = (svd.v * svd.u.transpose()).det();
    let sign = if d >= S::zero() { S::one() } else { -S::one() };
    let r = svd.v * Mat3::diag(S::one(), S::one(), sign) * svd.u.transpose();
    (r, degenerate)
}

/// Closed-form least-squares rigid alignment for a fixed matching:
/// `R = V diag(1,1,det(VU^T)) U^T`, `t = ybar - R xbar`.
pub fn solve_procrustes<S: Scalar>(
    source: &PointCloudOf<S>,
    target: &PointCloudOf<S>,
    matching: &Matching<S>,
) -> Result<ProcrustesSolution<S>, ProcrustesError> {
    if matching.rows() != source.len() {
        return Err(ProcrustesError::DimensionMismatch(format!(
            "matching has {} rows for {} source points",
            matching.rows(),
            source.len()
        )));
    }
    let mapped = mapped_targets(matching, target)?;
    let h = cross_covariance(source, &mapped)?;
    let (rotation, degenerate) = rotation_from_covariance(&h);
    let translation = mapped.centroid() - rotation * source.centroid();
    Ok(ProcrustesSolution {
        transform: RigidTransformOf::new(rotation, translation),
        degenerate,
    })
}

/// The mean squared alignment residual
/// `E = (1/N) sum_i || R x_i + t - y_{m(x_i)} ||^2`.
pub fn alignment_objective<S: Scalar>(
    source: &PointCloudOf<S>,
    target: &PointCloudOf<S>,
    transform: &RigidTransformOf<S>,
    matching: &Matching<S>,
) -> Result<S, ProcrustesError> {
    if matching.rows() != source.len() {
        return Err(ProcrustesError::DimensionMismatch(format!(
            "matching has {} rows for {} source points",
            matching.rows(),
            source.len()
        )));
    }
    let mapped = mapped_targets(matching, target)?;
    let sum: S = source
        .points
        .iter()
        .zip(mapped.points.iter())
        .map(|(&x, &y)| (transform.apply_point(x) - y).norm_sq())
        .sum();
    Ok(sum / S::from_usize(source.len()).unwrap())
}
