//! Reconstruction document (JSON) and point-cloud export (ASCII PLY).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use spherical_sfm::geom::{Rotation, SphericalPose};
use spherical_sfm::pipeline::Reconstruction;
use thiserror::Error;

pub const RECONSTRUCTION_VERSION: u32 = 1;
pub const RECONSTRUCTION_FILE: &str = "reconstruction.json";
pub const POINTS_FILE: &str = "points.ply";

#[derive(Debug, Error)]
pub enum ReconstructionFileError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed reconstruction document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported reconstruction format version {0}")]
    Version(u32),
    #[error("pose of frame {0} has a zero quaternion")]
    ZeroQuaternion(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicsRecord {
    pub focal_px: f64,
    pub principal_point: [f64; 2],
    /// Division-model coefficient in units of the normalized image, where
    /// coordinates are divided by `max(width, height)`.
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub frame_index: usize,
    /// World-to-camera rotation, `[w, x, y, z]`.
    pub rotation_wxyz: [f64; 4],
    pub center: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkRecord {
    pub track_id: u64,
    pub anchor: usize,
    pub bearing: [f64; 3],
    pub inverse_depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub rms_px: f64,
    pub landmarks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionDocument {
    pub format_version: u32,
    pub image_width: u32,
    pub image_height: u32,
    pub intrinsics: IntrinsicsRecord,
    pub poses: Vec<PoseRecord>,
    pub landmarks: Vec<LandmarkRecord>,
    #[serde(default)]
    pub stages: Vec<StageRecord>,
}

impl ReconstructionDocument {
    pub fn from_reconstruction(recon: &Reconstruction) -> Self {
        let poses = recon
            .poses
            .iter()
            .map(|(&frame_index, p)| {
                let q = UnitQuaternion::from_rotation_matrix(&p.rotation);
                PoseRecord {
                    frame_index,
                    rotation_wxyz: [q.w, q.i, q.j, q.k],
                    center: p.center.into(),
                }
            })
            .collect();
        let landmarks = recon
            .landmarks
            .iter()
            .map(|(&track_id, l)| LandmarkRecord {
                track_id,
                anchor: l.anchor_keyframe,
                bearing: l.bearing.into(),
                inverse_depth: l.inverse_depth,
            })
            .collect();
        let stages = recon
            .diagnostics
            .stages
            .iter()
            .map(|s| StageRecord {
                name: s.name.clone(),
                rms_px: s.rms_px,
                landmarks: s.landmarks,
            })
            .collect();
        let pp = recon.intrinsics.principal_point();
        Self {
            format_version: RECONSTRUCTION_VERSION,
            image_width: recon.frame.width,
            image_height: recon.frame.height,
            intrinsics: IntrinsicsRecord {
                focal_px: recon.intrinsics.focal(),
                principal_point: [pp.x, pp.y],
                lambda: recon.distortion.lambda,
            },
            poses,
            landmarks,
            stages,
        }
    }

    /// Poses by frame index, with quaternions renormalized.
    pub fn spherical_poses(&self) -> Result<Vec<(usize, SphericalPose)>, ReconstructionFileError> {
        self.poses
            .iter()
            .map(|p| {
                let [w, x, y, z] = p.rotation_wxyz;
                let q = Quaternion::new(w, x, y, z);
                if q.norm() == 0.0 {
                    return Err(ReconstructionFileError::ZeroQuaternion(p.frame_index));
                }
                let rotation: Rotation = UnitQuaternion::from_quaternion(q).to_rotation_matrix();
                Ok((
                    p.frame_index,
                    SphericalPose {
                        rotation,
                        center: Vector3::from(p.center),
                    },
                ))
            })
            .collect()
    }

    /// Landmarks with positive inverse depth, in world coordinates.
    pub fn finite_points(&self) -> Vec<Vector3<f64>> {
        let Ok(poses) = self.spherical_poses() else {
            return Vec::new();
        };
        let by_frame: std::collections::BTreeMap<usize, SphericalPose> =
            poses.into_iter().collect();
        self.landmarks
            .iter()
            .filter(|l| l.inverse_depth > 0.0)
            .filter_map(|l| {
                let pose = by_frame.get(&l.anchor)?;
                Some(
                    pose.center
                        + pose.rotation.inverse() * Vector3::from(l.bearing) / l.inverse_depth,
                )
            })
            .collect()
    }
}

pub fn format_ply(points: &[Vector3<f64>]) -> String {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", points.len());
    out.push_str("property double x\nproperty double y\nproperty double z\nend_header\n");
    for p in points {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    out
}

/// Writes `reconstruction.json` and `points.ply` into `dir`, creating it if
/// needed.
pub fn write_reconstruction(
    recon: &Reconstruction,
    dir: &Path,
) -> Result<Vec<PathBuf>, ReconstructionFileError> {
    std::fs::create_dir_all(dir)?;
    let doc = ReconstructionDocument::from_reconstruction(recon);
    let json_path = dir.join(RECONSTRUCTION_FILE);
    let mut json = serde_json::to_string_pretty(&doc)?;
    json.push('\n');
    std::fs::write(&json_path, json)?;
    let ply_path = dir.join(POINTS_FILE);
    std::fs::write(&ply_path, format_ply(&doc.finite_points()))?;
    Ok(vec![json_path, ply_path])
}

pub fn read_reconstruction(path: &Path) -> Result<ReconstructionDocument, ReconstructionFileError> {
    let doc: ReconstructionDocument = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if doc.format_version != RECONSTRUCTION_VERSION {
        return Err(ReconstructionFileError::Version(doc.format_version));
    }
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ply_header_counts_vertices() {
        let ply = format_ply(&[]);
        assert!(ply.starts_with("ply\nformat ascii 1.0\nelement vertex 0\n"));
        assert!(ply.ends_with("end_header\n"));
        let ply = format_ply(&[Vector3::new(1.0, 2.0, 3.5)]);
        assert!(ply.contains("element vertex 1\n"));
        assert!(ply.ends_with("end_header\n1 2 3.5\n"));
    }

    #[test]
    fn zero_quaternion_is_rejected() {
        let doc = ReconstructionDocument {
            format_version: 1,
            image_width: 10,
            image_height: 10,
            intrinsics: IntrinsicsRecord {
                focal_px: 10.0,
                principal_point: [5.0, 5.0],
                lambda: 0.0,
            },
            poses: vec![PoseRecord {
                frame_index: 4,
                rotation_wxyz: [0.0; 4],
                center: [0.0, 0.0, 1.0],
            }],
            landmarks: vec![],
            stages: vec![],
        };
        assert!(matches!(
            doc.spherical_poses(),
            Err(ReconstructionFileError::ZeroQuaternion(4))
        ));
    }
}
