use super::{EvalError, Result};
use crate::geometry::RigidTransform;

/// Outcome of registering one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    pub pair_id: String,
    pub predicted: RigidTransform,
    pub ground_truth: RigidTransform,
    pub initial_chamfer: f64,
    pub final_chamfer: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
}

impl ErrorStats {
    pub fn from_residuals(residuals: impl IntoIterator<Item = f64>) -> Result<Self> {
        let (mut n, mut sq, mut abs) = (0usize, 0.0, 0.0);
        for r in residuals {
            n += 1;
            sq += r * r;
            abs += r.abs();
        }
        if n == 0 {
            return Err(EvalError::InvalidArgument("no results to score".into()));
        }
        let mse = sq / n as f64;
        Ok(Self {
            mse,
            rmse: mse.sqrt(),
            mae: abs / n as f64,
        })
    }
}

/// Maps an angle in degrees into (-180, 180].
pub fn wrap_degrees(a: f64) -> f64 {
    let w = a - 360.0 * ((a + 180.0) / 360.0).floor();
    if w <= -180.0 {
        w + 360.0
    } else {
        w
    }
}

fn canonical_degrees(t: &RigidTransform) -> [f64; 3] {
    t.canonical().unwrap_or(*t).angles_deg()
}

/// Per-axis Euler residuals in degrees, predicted minus ground truth. Both
/// transforms are first rewritten in the canonical angle range so that equal
/// rotations score zero.
pub fn rotation_residuals(r: &RegistrationResult) -> [f64; 3] {
    let p = canonical_degrees(&r.predicted);
    let g = canonical_degrees(&r.ground_truth);
    std::array::from_fn(|k| wrap_degrees(p[k] - g[k]))
}

pub fn translation_residuals(r: &RegistrationResult) -> [f64; 3] {
    std::array::from_fn(|k| r.predicted.translation[k] - r.ground_truth.translation[k])
}

/// MSE, RMSE and MAE in degrees over all pairs and the three axes.
pub fn rotation_errors(results: &[RegistrationResult]) -> Result<ErrorStats> {
    ErrorStats::from_residuals(results.iter().flat_map(rotation_residuals))
}

pub fn translation_errors(results: &[RegistrationResult]) -> Result<ErrorStats> {
    ErrorStats::from_residuals(results.iter().flat_map(translation_residuals))
}

/// Mean absolute rotation residual of a single pair, in degrees.
pub fn pair_rotation_mae(r: &RegistrationResult) -> f64 {
    rotation_residuals(r).iter().map(|v| v.abs()).sum::<f64>() / 3.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub rotation: ErrorStats,
    pub translation: ErrorStats,
}

impl MetricsRow {
    pub fn from_results(method: impl Into<String>, results: &[RegistrationResult]) -> Result<Self> {
        Ok(Self {
            method: method.into(),
            rotation: rotation_errors(results)?,
            translation: translation_errors(results)?,
        })
    }

    pub fn values(&self) -> [f64; 6] {
        [
            self.rotation.mse,
            self.rotation.rmse,
            self.rotation.mae,
            self.translation.mse,
            self.translation.rmse,
            self.translation.mae,
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(pred: RigidTransform, gt: RigidTransform) -> RegistrationResult {
        RegistrationResult {
            pair_id: "p".into(),
            predicted: pred,
            ground_truth: gt,
            initial_chamfer: 1.0,
            final_chamfer: 0.0,
            wall_time_s: 0.0,
        }
    }

    #[test]
    fn exact_is_zero() {
        let t = RigidTransform::from_degrees([10.0, 20.0, 30.0], [0.1, 0.2, 0.3]).unwrap();
        let r = [result(t, t)];
        assert_eq!(rotation_errors(&r).unwrap().mae, 0.0);
        assert_eq!(translation_errors(&r).unwrap().mse, 0.0);
    }

    #[test]
    fn worked_examples() {
        let gt = RigidTransform::from_degrees([10.0, 20.0, 30.0], [0.1, 0.0, 0.0]).unwrap();
        let pred = RigidTransform::from_degrees([12.0, 18.0, 30.0], [0.0; 3]).unwrap();
        let r = [result(pred, gt)];
        assert!((rotation_errors(&r).unwrap().mae - 4.0 / 3.0).abs() < 1e-9);
        let t = translation_errors(&r).unwrap();
        assert!((t.mae - 0.1 / 3.0).abs() < 1e-12);
        assert!((t.mse - 0.01 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn wrapping() {
        assert_eq!(wrap_degrees(180.0), 180.0);
        assert_eq!(wrap_degrees(-180.0), 180.0);
        assert!((wrap_degrees(350.0) + 10.0).abs() < 1e-12);
        assert!((wrap_degrees(-190.0) - 170.0).abs() < 1e-12);
    }

    #[test]
    fn full_turn_scores_zero() {
        let gt = RigidTransform::from_degrees([10.0, 20.0, 30.0], [0.0; 3]).unwrap();
        let pred = RigidTransform::from_degrees([370.0, 20.0, -330.0], [0.0; 3]).unwrap();
        assert!(rotation_errors(&[result(pred, gt)]).unwrap().mae < 1e-9);
    }

    #[test]
    fn empty_rejected() {
        assert!(rotation_errors(&[]).is_err());
        assert!(translation_errors(&[]).is_err());
    }
}
