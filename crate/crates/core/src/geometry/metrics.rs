//! Registration error metrics over predicted vs ground-truth transforms.

use serde::{Deserialize, Serialize};

use crate::geometry::rigid::{euler_from_rotation, RigidTransformOf};
use crate::geometry::GeometryError;
use crate::scalar::Scalar;

/// MSE / RMSE / MAE / R^2 for rotation (Euler degrees, pooled per axis) and
/// translation (pooled per component).
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub mse_r: f64,
    pub rmse_r: f64,
    pub mae_r: f64,
    pub r2_r: f64,
    pub mse_t: f64,
    pub rmse_t: f64,
    pub mae_t: f64,
    pub r2_t: f64,
}

fn quartet(pred: &[f64], truth: &[f64]) -> (f64, f64, f64, f64) {
    let n = pred.len() as f64;
    let mse = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n;
    let mae = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / n;
    let truth_mean = truth.iter().sum::<f64>() / n;
    let ss_res = mse * n;
    let ss_tot = truth
        .iter()
        .map(|t| (t - truth_mean) * (t - truth_mean))
        .sum::<f64>();
    let r2 = if ss_tot == 0.0 {
        // Degenerate truth variance: perfect predictions still score 1,
        // anything else gets the -infinity sentinel.
        if ss_res == 0.0 {
            1.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        1.0 - ss_res / ss_tot
    };
    (mse, mse.sqrt(), mae, r2)
}

/// Pools per-axis Euler angles (degrees) and translation components across
/// the whole prediction set, per the evaluation protocol.
pub fn compute_metrics<S: Scalar>(
    predictions: &[RigidTransformOf<S>],
    truths: &[RigidTransformOf<S>],
) -> Result<MetricsReport, GeometryError> {
    if predictions.is_empty() || truths.is_empty() {
        return Err(GeometryError::EmptyInput);
    }
    if predictions.len() != truths.len() {
        return Err(GeometryError::LengthMismatch {
            left: predictions.len(),
            right: truths.len(),
        });
    }
    let mut pred_r = Vec::with_capacity(predictions.len() * 3);
    let mut true_r = Vec::with_capacity(predictions.len() * 3);
    let mut pred_t = Vec::with_capacity(predictions.len() * 3);
    let mut true_t = Vec::with_capacity(predictions.len() * 3);
    for (p, t) in predictions.iter().zip(truths.iter()) {
        for a in euler_from_rotation(&p.rotation).to_array() {
            pred_r.push(a.to_f64().unwrap());
        }
        for a in euler_from_rotation(&t.rotation).to_array() {
            true_r.push(a.to_f64().unwrap());
        }
        for i in 0..3 {
            pred_t.push(p.translation[i].to_f64().unwrap());
            true_t.push(t.translation[i].to_f64().unwrap());
        }
    }
    let (mse_r, rmse_r, mae_r, r2_r) = quartet(&pred_r, &true_r);
    let (mse_t, rmse_t, mae_t, r2_t) = quartet(&pred_t, &true_t);
    Ok(MetricsReport {
        mse_r,
        rmse_r,
        mae_r,
        r2_r,
        mse_t,
        rmse_t,
        mae_t,
        r2_t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rigid::random_rigid;
    use crate::geometry::vec3::Vec3;
    use crate::rng::SplitRng;

    type T = RigidTransformOf<f64>;

    #[test]
    fn perfect_predictions_score_perfectly() {
        let mut rng = SplitRng::new(1);
        let truths: Vec<T> = (0..10).map(|_| random_rigid(45.0, 0.5, &mut rng)).collect();
        let m = compute_metrics(&truths, &truths).unwrap();
        assert_eq!(m.mse_r, 0.0);
        assert_eq!(m.rmse_r, 0.0);
        assert_eq!(m.mae_r, 0.0);
        assert_eq!(m.r2_r, 1.0);
        assert_eq!(m.mse_t, 0.0);
        assert_eq!(m.r2_t, 1.0);
    }

    #[test]
    fn single_axis_error_pools_over_three_angles() {
        let truth = T::identity();
        let pred = T::new(
            crate::geometry::vec3::Mat3::rot_z(crate::geometry::vec3::Mat3::deg(3.0)),
            Vec3::zero(),
        );
        let m = compute_metrics(&[pred], &[truth]).unwrap();
        assert!((m.mae_r - 1.0).abs() < 1e-9, "mae {}", m.mae_r);
        assert!((m.mse_r - 3.0).abs() < 1e-9, "mse {}", m.mse_r);
        assert!((m.rmse_r - 3.0f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn rmse_is_sqrt_of_mse() {
        let mut rng = SplitRng::new(2);
        let truths: Vec<T> = (0..8).map(|_| random_rigid(45.0, 0.5, &mut rng)).collect();
        let preds: Vec<T> = (0..8).map(|_| random_rigid(45.0, 0.5, &mut rng)).collect();
        let m = compute_metrics(&preds, &truths).unwrap();
        assert!((m.rmse_r - m.mse_r.sqrt()).abs() < 1e-12);
        assert!((m.rmse_t - m.mse_t.sqrt()).abs() < 1e-12);
        assert!(m.mae_r <= m.rmse_r + 1e-12);
        assert!(m.mae_t <= m.rmse_t + 1e-12);
    }

    #[test]
    fn degenerate_truth_variance_uses_sentinel() {
        let truth = vec![T::identity(), T::identity()];
        let off = T::new(
            crate::geometry::vec3::Mat3::identity(),
            Vec3::new(0.1, 0.0, 0.0),
        );
        let m = compute_metrics(&[off, off], &truth).unwrap();
        assert_eq!(m.r2_t, f64::NEG_INFINITY);
        // Rotations were exact, so rotation R^2 is 1.
        assert_eq!(m.r2_r, 1.0);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(
            compute_metrics::<f64>(&[], &[]),
            Err(GeometryError::EmptyInput)
        ));
    }
}
