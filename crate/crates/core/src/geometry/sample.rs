//! Point-cloud downsampling and file loading.

use std::path::Path;

use crate::geometry::cloud::PointCloudOf;
use crate::geometry::mesh::read_mesh;
use crate::geometry::GeometryError;
use crate::rng::SplitRng;
use crate::scalar::Scalar;

/// Farthest-point sampling: the first point is drawn uniformly, every
/// subsequent pick maximizes its minimum distance to the chosen set
/// (ties broken by lowest index). `source_indices` name the rows of the
/// input cloud.
pub fn farthest_point_sample<S: Scalar>(
    cloud: &PointCloudOf<S>,
    n: usize,
    rng: &mut SplitRng,
) -> Result<PointCloudOf<S>, GeometryError> {
    if n > cloud.len() {
        return Err(GeometryError::TooFewPoints {
            needed: n,
            available: cloud.len(),
        });
    }
    if n == 0 {
        return Ok(cloud.select(&[]));
    }
    let first = rng.index(cloud.len());
    let mut chosen = Vec::with_capacity(n);
    chosen.push(first);
    let mut min_dist: Vec<S> = cloud
        .points
        .iter()
        .map(|&p| (p - cloud.points[first]).norm_sq())
        .collect();
    while chosen.len() < n {
        let mut best = 0;
        let mut best_d = S::neg_infinity();
        for (i, &d) in min_dist.iter().enumerate() {
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        chosen.push(best);
        let bp = cloud.points[best];
        for (i, d) in min_dist.iter_mut().enumerate() {
            let nd = (cloud.points[i] - bp).norm_sq();
            if nd < *d {
                *d = nd;
            }
        }
    }
    Ok(cloud.select(&chosen))
}

/// Loads a point cloud from an OFF or PLY file.
///
/// Meshes are area-sampled to `4 * n_points` candidates and reduced by
/// farthest-point sampling; raw point sets are reduced the same way. The
/// result is centered at its centroid and scaled to unit max norm.
pub fn load_point_cloud<S: Scalar>(
    path: &Path,
    n_points: usize,
    seed: u64,
) -> Result<PointCloudOf<S>, GeometryError> {
    let mesh = read_mesh::<S>(path)?;
    let mut rng = SplitRng::new(seed);
    cloud_from_mesh(&mesh, n_points, &mut rng)
}

/// Mesh-or-point-set to normalized `n_points` cloud (shared by file loading
/// and the builtin procedural shapes).
pub fn cloud_from_mesh<S: Scalar>(
    mesh: &crate::geometry::mesh::TriMesh<S>,
    n_points: usize,
    rng: &mut SplitRng,
) -> Result<PointCloudOf<S>, GeometryError> {
    let raw = if mesh.is_point_set() {
        PointCloudOf::from_points(mesh.vertices.clone())
    } else {
        mesh.sample_surface(4 * n_points, rng)?
    };
    if raw.len() < n_points {
        return Err(GeometryError::TooFewPoints {
            needed: n_points,
            available: raw.len(),
        });
    }
    let sampled = if raw.len() > n_points {
        farthest_point_sample(&raw, n_points, rng)?
    } else {
        raw
    };
    let mut out = sampled.normalized();
    out.source_indices = None;
    out.validate()?;
    Ok(out)
}
