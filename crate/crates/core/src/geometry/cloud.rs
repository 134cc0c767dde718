//! Point-cloud container.

use crate::geometry::vec3::Vec3;
use crate::geometry::GeometryError;
use crate::scalar::Scalar;

/// An ordered list of 3D points, optionally carrying the indices of the
/// originating cloud (set by partial views and subsampling).
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloudOf<S> {
    pub points: Vec<Vec3<S>>,
    pub source_indices: Option<Vec<usize>>,
}

impl<S: Scalar> PointCloudOf<S> {
    pub fn from_points(points: Vec<Vec3<S>>) -> Self {
        Self {
            points,
            source_indices: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3<S> {
        if self.points.is_empty() {
            return Vec3::zero();
        }
        let sum = self
            .points
            .iter()
            .fold(Vec3::zero(), |acc, &p| acc + p);
        sum.scaled(S::one() / S::from_usize(self.points.len()).unwrap())
    }

    pub fn max_norm(&self) -> S {
        self.points
            .iter()
            .map(|p| p.norm())
            .fold(S::zero(), |a, b| if b > a { b } else { a })
    }

    /// Centers the cloud at its centroid and scales it so the largest point
    /// norm is one. Degenerate clouds (all points identical) are only
    /// centered.
    pub fn normalized(&self) -> Self {
        let c = self.centroid();
        let mut points: Vec<Vec3<S>> = self.points.iter().map(|&p| p - c).collect();
        let max = points
            .iter()
            .map(|p| p.norm())
            .fold(S::zero(), |a, b| if b > a { b } else { a });
        if max > S::zero() {
            let inv = S::one() / max;
            for p in points.iter_mut() {
                *p = p.scaled(inv);
            }
        }
        Self {
            points,
            source_indices: self.source_indices.clone(),
        }
    }

    /// Checks the structural invariants: finite coordinates, and when
    /// present, source indices distinct and matching the point count.
    pub fn validate(&self) -> Result<(), GeometryError> {
        if let Some(p) = self.points.iter().find(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinitePoint {
                point: [
                    p.x.to_f64().unwrap_or(f64::NAN),
                    p.y.to_f64().unwrap_or(f64::NAN),
                    p.z.to_f64().unwrap_or(f64::NAN),
                ],
            });
        }
        if let Some(idx) = &self.source_indices {
            if idx.len() != self.points.len() {
                return Err(GeometryError::SourceIndexMismatch {
                    points: self.points.len(),
                    indices: idx.len(),
                });
            }
            let mut sorted = idx.clone();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(GeometryError::DuplicateSourceIndex);
            }
        }
        Ok(())
    }

    /// Extracts the rows named by `indices`, recording provenance.
    pub fn select(&self, indices: &[usize]) -> Self {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        let source_indices = Some(match &self.source_indices {
            Some(parent) => indices.iter().map(|&i| parent[i]).collect(),
            None => indices.to_vec(),
        });
        Self {
            points,
            source_indices,
        }
    }

    /// Flattens the coordinates row-major (`x0 y0 z0 x1 y1 z1 ...`).
    pub fn flat_coords(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.points.len() * 3);
        for p in &self.points {
            out.extend_from_slice(&p.to_array());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(points: &[[f64; 3]]) -> PointCloudOf<f64> {
        PointCloudOf::from_points(points.iter().map(|&p| Vec3::from_array(p)).collect())
    }

    #[test]
    fn normalization_centers_and_unit_scales() {
        let c = cloud(&[[2.0, 0.0, 0.0], [4.0, 0.0, 0.0]]).normalized();
        assert!((c.centroid().norm()) < 1e-15);
        assert!((c.max_norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_cloud_normalizes_without_blowup() {
        let c = cloud(&[[3.0, 3.0, 3.0], [3.0, 3.0, 3.0]]).normalized();
        assert!(c.points.iter().all(|p| p.norm() < 1e-15));
    }

    #[test]
    fn select_composes_provenance() {
        let mut c = cloud(&[[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        c.source_indices = Some(vec![10, 11, 12]);
        let s = c.select(&[2, 0]);
        assert_eq!(s.source_indices, Some(vec![12, 10]));
    }

    #[test]
    fn validate_rejects_duplicate_indices() {
        let mut c = cloud(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        c.source_indices = Some(vec![4, 4]);
        assert!(c.validate().is_err());
    }
}
