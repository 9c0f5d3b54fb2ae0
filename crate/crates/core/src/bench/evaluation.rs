use nalgebra::Matrix3;

use super::SyntheticSequence;
use crate::geom::{nearest_rotation, rotation_distance, Rotation};
use crate::pipeline::Reconstruction;

/// Errors of a reconstruction against the ground truth of a synthetic
/// sequence, after aligning the two by a global rotation and scale.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceErrors {
    /// `|f - f_gt| / f_gt`.
    pub focal_relative: f64,
    pub lambda_absolute: f64,
    /// Worst camera orientation error, degrees.
    pub max_orientation_deg: f64,
    pub mean_orientation_deg: f64,
    /// Worst camera center error, in units of the ground-truth sphere radius.
    pub max_position: f64,
    pub rms_px: f64,
    /// Scale applied to the reconstruction before measuring positions.
    pub scale: f64,
    pub cameras: usize,
}

/// Compares `recon` with `seq`. Orientations are aligned by the chordal mean
/// of `R_est^T R_gt` over all reconstructed cameras; positions additionally by
/// the least-squares scale, which no reconstruction can recover.
pub fn evaluate_reconstruction(seq: &SyntheticSequence, recon: &Reconstruction) -> SequenceErrors {
    let mut sum = Matrix3::zeros();
    for (k, p) in &recon.poses {
        sum += p.rotation.matrix().transpose() * seq.poses[*k].rotation.matrix();
    }
    // R_gt = R_est * q, so world points map as X_est = q X_gt.
    let q: Rotation = nearest_rotation(&sum);
    let orientation: Vec<f64> = recon
        .poses
        .iter()
        .map(|(k, p)| rotation_distance(&(p.rotation * q), &seq.poses[*k].rotation).to_degrees())
        .collect();
    let aligned: Vec<_> = recon
        .poses
        .iter()
        .map(|(k, p)| (q * seq.poses[*k].center, p.center))
        .collect();
    let (num, den) = aligned.iter().fold((0.0, 0.0), |(n, d), (gt, est)| {
        (n + gt.dot(est), d + est.norm_squared())
    });
    let scale = if den > 0.0 { num / den } else { 1.0 };
    let max_position = aligned
        .iter()
        .map(|(gt, est)| (gt - est * scale).norm() / gt.norm())
        .fold(0.0, f64::max);
    let n = orientation.len().max(1) as f64;
    SequenceErrors {
        focal_relative: (recon.intrinsics.focal() - seq.focal_px).abs() / seq.focal_px,
        lambda_absolute: (recon.distortion.lambda - seq.lambda).abs(),
        max_orientation_deg: orientation.iter().copied().fold(0.0, f64::max),
        mean_orientation_deg: orientation.iter().sum::<f64>() / n,
        max_position,
        rms_px: recon.rms_reprojection_error(&seq.tracks),
        scale,
        cameras: recon.poses.len(),
    }
}
