//! Synthetic partial-pair generation.

use serde::{Deserialize, Serialize};

use crate::geometry::cloud::PointCloudOf;
use crate::geometry::rigid::{random_rigid, RigidTransformOf};
use crate::geometry::sample::farthest_point_sample;
use crate::geometry::vec3::Vec3;
use crate::geometry::GeometryError;
use crate::rng::{stream, SplitRng};
use crate::scalar::{cast, Scalar};

/// Recipe for one synthetic registration pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    /// Points sampled per full cloud.
    pub n_points: usize,
    /// Points retained in each partial view.
    pub n_partial: usize,
    /// Per-axis rotation bound, degrees.
    pub rot_range_deg: f64,
    /// Per-axis translation bound.
    pub trans_range: f64,
    /// Gaussian noise std.
    pub noise_sigma: f64,
    /// Absolute clip bound on each noise draw.
    pub noise_clip: f64,
    /// RNG seed for the whole pair.
    pub seed: u64,
}

impl Default for PairSpec {
    fn default() -> Self {
        Self {
            n_points: 128,
            n_partial: 96,
            rot_range_deg: 45.0,
            trans_range: 0.5,
            noise_sigma: 0.0,
            noise_clip: 0.05,
            seed: 0,
        }
    }
}

impl PairSpec {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.n_partial == 0 || self.n_partial > self.n_points {
            return Err(GeometryError::InvalidSpec(format!(
                "n_partial must be in 1..=n_points, got {} of {}",
                self.n_partial, self.n_points
            )));
        }
        if self.rot_range_deg < 0.0 || self.trans_range < 0.0 || self.noise_sigma < 0.0 || self.noise_clip < 0.0 {
            return Err(GeometryError::InvalidSpec(
                "ranges and noise parameters must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// A source/target partial pair with its generating transform.
#[derive(Clone, Debug)]
pub struct RegistrationPairOf<S> {
    pub source: PointCloudOf<S>,
    pub target: PointCloudOf<S>,
    pub ground_truth: RigidTransformOf<S>,
}

/// Crops a one-sided view: a viewpoint is drawn uniformly on the sphere of
/// radius 2 around the centroid and the `n_partial` nearest points are kept
/// (clouds are normalized to unit max norm, so the viewpoint sits outside).
pub fn partial_view<S: Scalar>(
    cloud: &PointCloudOf<S>,
    n_partial: usize,
    rng: &mut SplitRng,
) -> Result<PointCloudOf<S>, GeometryError> {
    if n_partial > cloud.len() {
        return Err(GeometryError::TooFewPoints {
            needed: n_partial,
            available: cloud.len(),
        });
    }
    let dir = loop {
        let v = Vec3::new(
            cast::<S>(rng.normal()),
            cast::<S>(rng.normal()),
            cast::<S>(rng.normal()),
        );
        let n = v.norm();
        if n > cast::<S>(1e-12) {
            break v.scaled(S::one() / n);
        }
    };
    let viewpoint = cloud.centroid() + dir.scaled(cast::<S>(2.0));
    partial_view_from(cloud, n_partial, viewpoint)
}

/// Deterministic core of [`partial_view`]: keeps the `n_partial` points
/// nearest to `viewpoint`, ties broken by lowest index.
pub fn partial_view_from<S: Scalar>(
    cloud: &PointCloudOf<S>,
    n_partial: usize,
    viewpoint: Vec3<S>,
) -> Result<PointCloudOf<S>, GeometryError> {
    if n_partial > cloud.len() {
        return Err(GeometryError::TooFewPoints {
            needed: n_partial,
            available: cloud.len(),
        });
    }
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    order.sort_by(|&a, &b| {
        let da = (cloud.points[a] - viewpoint).norm_sq();
        let db = (cloud.points[b] - viewpoint).norm_sq();
        da.partial_cmp(&db)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(n_partial);
    Ok(cloud.select(&order))
}

/// Perturbs each coordinate by an independent `N(0, sigma^2)` draw clamped
/// to `[-clip, clip]`.
pub fn add_noise<S: Scalar>(
    cloud: &PointCloudOf<S>,
    sigma: f64,
    clip: f64,
    rng: &mut SplitRng,
) -> PointCloudOf<S> {
    assert!(sigma >= 0.0 && clip >= 0.0, "noise parameters must be nonnegative");
    if sigma == 0.0 {
        return cloud.clone();
    }
    let points = cloud
        .points
        .iter()
        .map(|&p| {
            let mut out = p;
            for i in 0..3 {
                let delta = (rng.normal() * sigma).clamp(-clip, clip);
                out[i] += cast::<S>(delta);
            }
            out
        })
        .collect();
    PointCloudOf {
        points,
        source_indices: cloud.source_indices.clone(),
    }
}

/// Builds a registration pair from a full shape cloud:
/// sample X, draw a ground-truth motion, set Y = T(X), crop both views
/// independently, then add independent noise to each.
pub fn make_pair<S: Scalar>(
    shape: &PointCloudOf<S>,
    spec: &PairSpec,
) -> Result<RegistrationPairOf<S>, GeometryError> {
    spec.validate()?;
    if shape.len() < spec.n_points {
        return Err(GeometryError::TooFewPoints {
            needed: spec.n_points,
            available: shape.len(),
        });
    }
    let rng = SplitRng::new(spec.seed);
    let full_x = farthest_point_sample(shape, spec.n_points, &mut rng.child(stream::SAMPLE))?;
    let ground_truth =
        random_rigid::<S>(spec.rot_range_deg, spec.trans_range, &mut rng.child(stream::TRANSFORM));
    let full_y = ground_truth.apply(&full_x);
    let source = partial_view(&full_x, spec.n_partial, &mut rng.child(stream::CROP_SOURCE))?;
    let target = partial_view(&full_y, spec.n_partial, &mut rng.child(stream::CROP_TARGET))?;
    let source = add_noise(&source, spec.noise_sigma, spec.noise_clip, &mut rng.child(stream::NOISE_SOURCE));
    let target = add_noise(&target, spec.noise_sigma, spec.noise_clip, &mut rng.child(stream::NOISE_TARGET));
    Ok(RegistrationPairOf {
        source,
        target,
        ground_truth,
    })
}

/// The un-noised full clouds behind a pair spec, for tests and diagnostics:
/// `(X, Y)` with `Y = ground_truth(X)` point-for-point.
pub fn full_clouds<S: Scalar>(
    shape: &PointCloudOf<S>,
    spec: &PairSpec,
) -> Result<(PointCloudOf<S>, PointCloudOf<S>, RigidTransformOf<S>), GeometryError> {
    let rng = SplitRng::new(spec.seed);
    let full_x = farthest_point_sample(shape, spec.n_points, &mut rng.child(stream::SAMPLE))?;
    let ground_truth =
        random_rigid::<S>(spec.rot_range_deg, spec.trans_range, &mut rng.child(stream::TRANSFORM));
    let full_y = ground_truth.apply(&full_x);
    Ok((full_x, full_y, ground_truth))
}
