//! Pose-error metrics and recall computation.

use thiserror::Error;

use crate::geometry::{so3_log, CameraPose, Rotation};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("empty result set")]
    Empty,
}

/// Angle of the relative rotation `gt * est^T`, in degrees.
pub fn rotation_error_deg(est: &Rotation, gt: &Rotation) -> f64 {
    so3_log(&gt.compose(&est.inverse())).norm().to_degrees()
}

/// Distance between camera centers, in scene units.
pub fn translation_error(est: &CameraPose, gt: &CameraPose) -> f64 {
    (est.camera_center() - gt.camera_center()).norm()
}

/// One query's pose error, as consumed by [`recall_at`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseError {
    pub rotation_deg: f64,
    pub translation: f64,
}

/// Fraction of errors below both thresholds at once.
pub fn recall_at(
    errors: &[PoseError],
    theta_deg: f64,
    d_units: f64,
) -> Result<f64, MetricsError> {
    if errors.is_empty() {
        return Err(MetricsError::Empty);
    }
    let hits = errors
        .iter()
        .filter(|e| e.rotation_deg < theta_deg && e.translation < d_units)
        .count();
    Ok(hits as f64 / errors.len() as f64)
}

/// Nearest-rank median (lower middle for even counts). The convention is
/// interpolation-free so summary values reproduce byte-for-byte.
pub fn median(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (0.5 * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank - 1])
}
