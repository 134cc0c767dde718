//! The three training loss terms.

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::geometry::RigidTransformOf;
use crate::scalar::Scalar;

fn identity3<S: Scalar>(tape: &Tape<S>) -> Var {
    let mut t = Tensor::zeros(&[3, 3]);
    t.data[0] = S::one();
    t.data[4] = S::one();
    t.data[8] = S::one();
    tape.constant(t)
}

fn rotation_const<S: Scalar>(tape: &Tape<S>, r: &crate::geometry::Mat3<S>) -> Var {
    tape.constant(Tensor {
        shape: vec![3, 3],
        data: r.m.iter().flatten().copied().collect(),
    })
}

fn translation_const<S: Scalar>(tape: &Tape<S>, t: &crate::geometry::Vec3<S>) -> Var {
    tape.constant(Tensor {
        shape: vec![1, 3],
        data: vec![t.x, t.y, t.z],
    })
}

fn frob_sq<S: Scalar>(tape: &Tape<S>, m: Var) -> Result<Var, AutodiffError> {
    tape.reduce_sum(tape.mul(m, m)?)
}

/// `|| R_pred^T R_gt - I ||^2 + || t_pred - t_gt ||^2` against the
/// localized ground truth of this step.
pub fn rigid_motion_loss<S: Scalar>(
    tape: &Tape<S>,
    rotation: Var,
    translation: Var,
    local_gt: &RigidTransformOf<S>,
) -> Result<Var, AutodiffError> {
    let r_gt = rotation_const(tape, &local_gt.rotation);
    let prod = tape.matmul(tape.transpose_last2(rotation)?, r_gt)?;
    let rot_term = frob_sq(tape, tape.sub(prod, identity3(tape))?)?;
    let t_gt = translation_const(tape, &local_gt.translation);
    let t_diff = tape.sub(translation, t_gt)?;
    let trans_term = frob_sq(tape, t_diff)?;
    tape.add(rot_term, trans_term)
}

/// `|| R_xy R_yx - I ||^2 + || t_xy - t_yx ||^2` (the translation term
/// compares the two directions directly, as defined).
pub fn cycle_loss<S: Scalar>(
    tape: &Tape<S>,
    rot_xy: Var,
    rot_yx: Var,
    t_xy: Var,
    t_yx: Var,
) -> Result<Var, AutodiffError> {
    let prod = tape.matmul(rot_xy, rot_yx)?;
    let rot_term = frob_sq(tape, tape.sub(prod, identity3(tape))?)?;
    let trans_term = frob_sq(tape, tape.sub(t_xy, t_yx)?)?;
    tape.add(rot_term, trans_term)
}

/// `|| Psi_X - Psi_Y ||` (Euclidean norm, not squared; subgradient at 0
/// is 0 via the sqrt primitive's convention).
pub fn feature_align_loss<S: Scalar>(
    tape: &Tape<S>,
    psi_x: Var,
    psi_y: Var,
) -> Result<Var, AutodiffError> {
    let diff = tape.sub(psi_x, psi_y)?;
    tape.sqrt(frob_sq(tape, diff)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradient_check;
    use crate::geometry::{Mat3, Vec3};
    use crate::rng::SplitRng;
    use crate::RigidTransform;

    fn const_transform(tape: &Tape<f64>, t: &RigidTransform) -> (Var, Var) {
        (
            tape.constant(Tensor {
                shape: vec![3, 3],
                data: t.rotation.m.iter().flatten().copied().collect(),
            }),
            tape.constant(Tensor {
                shape: vec![1, 3],
                data: vec![t.translation.x, t.translation.y, t.translation.z],
            }),
        )
    }

    #[test]
    fn rigid_motion_loss_zero_at_truth() {
        let mut rng = SplitRng::new(1);
        let gt = crate::geometry::random_rigid(45.0, 0.5, &mut rng);
        let tape = Tape::new();
        let (r, t) = const_transform(&tape, &gt);
        let loss = rigid_motion_loss(&tape, r, t, &gt).unwrap();
        assert!(tape.scalar_value(loss).abs() < 1e-24);
    }

    #[test]
    fn rigid_motion_loss_translation_offset() {
        let gt = RigidTransform::identity();
        let pred = RigidTransform::new(Mat3::identity(), Vec3::new(0.1, 0.0, 0.0));
        let tape = Tape::new();
        let (r, t) = const_transform(&tape, &pred);
        let loss = rigid_motion_loss(&tape, r, t, &gt).unwrap();
        assert!((tape.scalar_value(loss) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn rigid_motion_loss_opposed_rotation() {
        // pred rotation = gt rotation * Rz(180): the rotation term equals
        // || Rz(180) - I ||^2 = 8.
        let mut rng = SplitRng::new(2);
        let gt = crate::geometry::random_rigid::<f64>(45.0, 0.0, &mut rng);
        let pred = RigidTransform::new(
            gt.rotation * Mat3::rot_z(Mat3::deg(180.0)),
            gt.translation,
        );
        let tape = Tape::new();
        let (r, t) = const_transform(&tape, &pred);
        let loss = rigid_motion_loss(&tape, r, t, &gt).unwrap();
        assert!(
            (tape.scalar_value(loss) - 8.0).abs() < 1e-12,
            "loss {}",
            tape.scalar_value(loss)
        );
    }

    #[test]
    fn cycle_loss_examples() {
        let tape = Tape::new();
        let id = RigidTransform::identity();
        let (r1, t1) = const_transform(&tape, &id);
        let (r2, t2) = const_transform(&tape, &id);
        let loss = cycle_loss(&tape, r1, r2, t1, t2).unwrap();
        assert_eq!(tape.scalar_value(loss), 0.0);

        // Inverse rotations with zero translations cancel.
        let mut rng = SplitRng::new(3);
        let fwd = crate::geometry::random_rigid::<f64>(90.0, 0.0, &mut rng);
        let (rf, tf) = const_transform(&tape, &RigidTransform::new(fwd.rotation, Vec3::zero()));
        let (rb, tb) = const_transform(
            &tape,
            &RigidTransform::new(fwd.rotation.transpose(), Vec3::zero()),
        );
        let loss = cycle_loss(&tape, rf, rb, tf, tb).unwrap();
        assert!(tape.scalar_value(loss) < 1e-24);

        // Opposite translations: || (1,0,0) - (-1,0,0) ||^2 = 4.
        let a = RigidTransform::new(Mat3::identity(), Vec3::new(1.0, 0.0, 0.0));
        let b = RigidTransform::new(Mat3::identity(), Vec3::new(-1.0, 0.0, 0.0));
        let (ra, ta) = const_transform(&tape, &a);
        let (rb2, tb2) = const_transform(&tape, &b);
        let loss = cycle_loss(&tape, ra, rb2, ta, tb2).unwrap();
        assert!((tape.scalar_value(loss) - 4.0).abs() < 1e-15);
    }

    #[test]
    fn feature_align_is_euclidean_norm() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::new(vec![1, 2], vec![3.0, 0.0]).unwrap());
        let b = tape.constant(Tensor::new(vec![1, 2], vec![0.0, -4.0]).unwrap());
        let loss = feature_align_loss(&tape, a, b).unwrap();
        assert!((tape.scalar_value(loss) - 5.0).abs() < 1e-15);

        let c = tape.constant(Tensor::new(vec![1, 2], vec![0.7, -0.2]).unwrap());
        let same = feature_align_loss(&tape, c, c).unwrap();
        assert_eq!(tape.scalar_value(same), 0.0);
    }

    #[test]
    fn feature_align_gradcheck_away_from_zero() {
        let mut rng = SplitRng::new(4);
        let a = Tensor::new(vec![1, 6], (0..6).map(|_| rng.uniform_in(-1.0, 1.0)).collect())
            .unwrap();
        let b = Tensor::new(vec![1, 6], (0..6).map(|_| rng.uniform_in(-1.0, 1.0)).collect())
            .unwrap();
        let err = gradient_check(
            |t, v| feature_align_loss(t, v[0], v[1]),
            &[a, b],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "err {err}");
    }

    #[test]
    fn losses_are_nonnegative_on_random_inputs() {
        let mut rng = SplitRng::new(5);
        for _ in 0..100 {
            let gt = crate::geometry::random_rigid(45.0, 0.5, &mut rng);
            let pred = crate::geometry::random_rigid(45.0, 0.5, &mut rng);
            let other = crate::geometry::random_rigid(45.0, 0.5, &mut rng);
            let tape = Tape::new();
            let (r, t) = const_transform(&tape, &pred);
            let (r2, t2) = const_transform(&tape, &other);
            let lm = rigid_motion_loss(&tape, r, t, &gt).unwrap();
            let lc = cycle_loss(&tape, r, r2, t, t2).unwrap();
            assert!(tape.scalar_value(lm) >= 0.0);
            assert!(tape.scalar_value(lc) >= 0.0);
        }
    }
}
