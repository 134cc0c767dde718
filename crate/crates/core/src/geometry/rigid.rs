//! Rigid-motion algebra: SO(3) rotations paired with translations.

use crate::geometry::cloud::PointCloudOf;
use crate::geometry::vec3::{Mat3, Vec3};
use crate::rng::SplitRng;
use crate::scalar::{cast, Scalar};

/// A rotation (orthonormal, det +1) plus translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransformOf<S> {
    pub rotation: Mat3<S>,
    pub translation: Vec3<S>,
}

impl<S: Scalar> RigidTransformOf<S> {
    pub fn new(rotation: Mat3<S>, translation: Vec3<S>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Mat3::identity(), Vec3::zero())
    }

    pub fn apply_point(&self, p: Vec3<S>) -> Vec3<S> {
        self.rotation * p + self.translation
    }

    /// Applies the motion to every point; provenance indices are preserved.
    pub fn apply(&self, cloud: &PointCloudOf<S>) -> PointCloudOf<S> {
        PointCloudOf {
            points: cloud.points.iter().map(|&p| self.apply_point(p)).collect(),
            source_indices: cloud.source_indices.clone(),
        }
    }

    /// `compose(second, first)` applies `first`, then `second`:
    /// `R = R2 R1`, `t = R2 t1 + t2`.
    pub fn compose(second: &Self, first: &Self) -> Self {
        Self::new(
            second.rotation * first.rotation,
            second.rotation * first.translation + second.translation,
        )
    }

    pub fn invert(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    /// The residual motion that maps the partially aligned source onto the
    /// target: composing the result with `accumulated` reproduces `total`.
    pub fn local_ground_truth(total: &Self, accumulated: &Self) -> Self {
        let rotation = total.rotation * accumulated.rotation.transpose();
        let translation = total.translation - rotation * accumulated.translation;
        Self::new(rotation, translation)
    }

    /// Validates orthonormality and unit determinant at the scalar type's
    /// tolerance.
    pub fn is_valid(&self) -> bool {
        let tol = S::rotation_tol();
        let rtr = self.rotation.transpose() * self.rotation;
        let residual = (rtr - Mat3::identity()).frobenius_norm();
        residual <= tol
            && (self.rotation.det() - S::one()).abs() <= tol
            && self.rotation.is_finite()
            && self.translation.is_finite()
    }

    /// Intrinsic Z-Y-X rotation: `R = Rz(yaw) Ry(pitch) Rx(roll)`, angles in
    /// degrees.
    pub fn rotation_from_euler_deg(yaw: S, pitch: S, roll: S) -> Mat3<S> {
        Mat3::rot_z(Mat3::deg(yaw)) * Mat3::rot_y(Mat3::deg(pitch)) * Mat3::rot_x(Mat3::deg(roll))
    }
}

/// Euler angles extracted from a rotation, plus a gimbal-lock flag.
#[derive(Clone, Copy, Debug)]
pub struct EulerAngles<S> {
    /// Rotation about z, degrees.
    pub yaw: S,
    /// Rotation about y, degrees.
    pub pitch: S,
    /// Rotation about x, degrees.
    pub roll: S,
    /// True when |pitch| is within ~1e-7 of 90 degrees and the convention
    /// can no longer separate yaw from roll; roll is pinned to zero there.
    pub gimbal_lock: bool,
}

impl<S: Scalar> EulerAngles<S> {
    pub fn to_array(self) -> [S; 3] {
        [self.yaw, self.pitch, self.roll]
    }
}

/// Extracts intrinsic Z-Y-X angles (degrees) such that
/// `Rz(yaw) Ry(pitch) Rx(roll)` reconstructs `r` away from gimbal lock.
pub fn euler_from_rotation<S: Scalar>(r: &Mat3<S>) -> EulerAngles<S> {
    let rad_to_deg = cast::<S>(180.0 / std::f64::consts::PI);
    let m = r.m;
    // R = Rz Ry Rx puts -sin(pitch) at row 2, col 0.
    let sp = -m[2][0];
    let sp = sp.min(S::one()).max(-S::one());
    let cp_sq = S::one() - sp * sp;
    let lock = cp_sq < cast::<S>(1e-14);
    if lock {
        // cos(pitch) ~ 0: yaw and roll are coupled; pin roll = 0.
        let pitch = sp.asin();
        let yaw = (-m[0][1]).atan2(m[1][1]);
        return EulerAngles {
            yaw: yaw * rad_to_deg,
            pitch: pitch * rad_to_deg,
            roll: S::zero(),
            gimbal_lock: true,
        };
    }
    let pitch = sp.asin();
    let roll = m[2][1].atan2(m[2][2]);
    let yaw = m[1][0].atan2(m[0][0]);
    EulerAngles {
        yaw: yaw * rad_to_deg,
        pitch: pitch * rad_to_deg,
        roll: roll * rad_to_deg,
        gimbal_lock: false,
    }
}

/// Draws a random rigid motion: per-axis angles uniform in
/// `[0, rot_range_deg]` composed as `Rz Ry Rx`, translation components
/// uniform in `[-trans_range, trans_range]`.
pub fn random_rigid<S: Scalar>(
    rot_range_deg: f64,
    trans_range: f64,
    rng: &mut SplitRng,
) -> RigidTransformOf<S> {
    assert!(rot_range_deg >= 0.0 && trans_range >= 0.0, "bounds must be nonnegative");
    let roll = cast::<S>(rng.uniform_in(0.0, rot_range_deg));
    let pitch = cast::<S>(rng.uniform_in(0.0, rot_range_deg));
    let yaw = cast::<S>(rng.uniform_in(0.0, rot_range_deg));
    let rotation = RigidTransformOf::rotation_from_euler_deg(yaw, pitch, roll);
    let translation = Vec3::new(
        cast::<S>(rng.uniform_in(-trans_range, trans_range)),
        cast::<S>(rng.uniform_in(-trans_range, trans_range)),
        cast::<S>(rng.uniform_in(-trans_range, trans_range)),
    );
    RigidTransformOf::new(rotation, translation)
}

#[cfg(test)]
mod tests {
    use super::*;

    type T = RigidTransformOf<f64>;

    fn random_transform(seed: u64) -> T {
        let mut rng = SplitRng::new(seed);
        random_rigid(180.0, 1.0, &mut rng)
    }

    #[test]
    fn zero_ranges_give_identity() {
        let mut rng = SplitRng::new(9);
        let t: T = random_rigid(0.0, 0.0, &mut rng);
        assert!((t.rotation - Mat3::identity()).frobenius_norm() < 1e-15);
        assert!(t.translation.norm() < 1e-15);
    }

    #[test]
    fn random_rigid_is_valid_rotation() {
        for seed in 0..1000 {
            let t = random_transform(seed);
            assert!(t.is_valid(), "seed {seed}");
            assert!((t.rotation.det() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn euler_angles_within_sampled_range() {
        for seed in 0..1000 {
            let mut rng = SplitRng::new(seed);
            let t: T = random_rigid(45.0, 0.0, &mut rng);
            let e = euler_from_rotation(&t.rotation);
            for a in e.to_array() {
                assert!((-1e-9..=45.0 + 1e-9).contains(&a), "angle {a} out of range");
            }
        }
    }

    #[test]
    fn euler_round_trip() {
        for seed in 0..1000 {
            let t = random_transform(seed);
            let e = euler_from_rotation(&t.rotation);
            let rebuilt = T::rotation_from_euler_deg(e.yaw, e.pitch, e.roll);
            assert!(
                (rebuilt - t.rotation).frobenius_norm() < 1e-9,
                "seed {seed}"
            );
        }
    }

    #[test]
    fn single_axis_euler() {
        let r = Mat3::<f64>::rot_z(Mat3::<f64>::deg(30.0));
        let e = euler_from_rotation(&r);
        assert!((e.yaw - 30.0).abs() < 1e-9);
        assert!(e.pitch.abs() < 1e-9);
        assert!(e.roll.abs() < 1e-9);
    }

    #[test]
    fn inverse_composes_to_identity() {
        for seed in 0..100 {
            let t = random_transform(seed);
            let id = T::compose(&t.invert(), &t);
            assert!((id.rotation - Mat3::identity()).frobenius_norm() < 1e-12);
            assert!(id.translation.norm() < 1e-12);
        }
    }

    #[test]
    fn double_inversion_is_identity_map() {
        let t = random_transform(3);
        let tt = t.invert().invert();
        assert!((tt.rotation - t.rotation).frobenius_norm() < 1e-12);
        assert!((tt.translation - t.translation).norm() < 1e-12);
    }

    #[test]
    fn local_ground_truth_closes_the_loop() {
        for seed in 0..1000 {
            let total = random_transform(seed);
            let acc = random_transform(seed + 10_000);
            let local = T::local_ground_truth(&total, &acc);
            let recomposed = T::compose(&local, &acc);
            assert!(
                (recomposed.rotation - total.rotation).frobenius_norm() < 1e-10,
                "seed {seed}"
            );
            assert!((recomposed.translation - total.translation).norm() < 1e-10);
        }
    }

    #[test]
    fn local_ground_truth_identity_cases() {
        let total = random_transform(77);
        let local = T::local_ground_truth(&total, &T::identity());
        assert!((local.rotation - total.rotation).frobenius_norm() < 1e-15);
        let residual = T::local_ground_truth(&total, &total);
        assert!((residual.rotation - Mat3::identity()).frobenius_norm() < 1e-10);
        assert!(residual.translation.norm() < 1e-10);
    }

    #[test]
    fn apply_then_inverse_restores_points() {
        use crate::geometry::cloud::PointCloudOf;
        let t = random_transform(5);
        let cloud = PointCloudOf::from_points(vec![
            Vec3::new(0.3, -0.2, 0.9),
            Vec3::new(-1.0, 0.4, 0.1),
        ]);
        let back = t.invert().apply(&t.apply(&cloud));
        for (a, b) in back.points.iter().zip(cloud.points.iter()) {
            assert!((*a - *b).norm() < 1e-12);
        }
    }
}
