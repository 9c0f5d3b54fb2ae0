//! Uncalibrated reconstruction of a spherical capture: keyframes, pairwise
//! motion graph, calibration by voting, rotation averaging, spherical pose
//! initialization, inverse-depth triangulation and the staged bundle
//! adjustment schedule.

mod bundle;
mod camera;
mod keyframes;
mod rotation_averaging;
mod structure;
mod view_graph;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::geom::{GeomError, ImageFrame, Intrinsics, RadialDistortion, SphericalPose};
use crate::tracks::TrackSet;

pub use bundle::{bundle_adjust, jacobian_check, BaConfig, BaReport, Strategy};
pub use camera::Camera;
pub use keyframes::{select_keyframes, Keyframe, MIN_KEYFRAME_OBSERVATIONS};
pub use rotation_averaging::{average_rotations, AveragingConfig};
pub use structure::{
    initialize_spherical_poses, triangulate_inverse_depth, Landmark, Triangulation,
    MIN_TRIANGULATION_ANGLE_DEG,
};
pub use view_graph::{
    build_view_graph, calibrate_sequence, keyframe_correspondences, ViewGraphConfig, ViewGraphEdge,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("track set is empty")]
    EmptyTracks,
    #[error("need at least {needed} keyframes, got {got}")]
    TooFewKeyframes { needed: usize, got: usize },
    #[error("view graph is disconnected ({components} components); keyframe {unreached} cannot be reached from the anchor")]
    DisconnectedGraph { components: usize, unreached: usize },
    #[error("calibration impossible: no keyframe pair was classified as pure rotation; the capture needs a distant region of the scene to fix the focal length")]
    CalibrationImpossible,
    #[error(
        "bundle adjustment strategy {0:?} diverged: cost rose over 5 consecutive accepted steps"
    )]
    OptimizationDiverged(Strategy),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// Stage of [`run_reconstruction`] in which an error occurred.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Keyframes,
    ViewGraph,
    Calibration,
    RotationAveraging,
    Initialization,
    Triangulation,
    BundleAdjustment,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Keyframes => "keyframes",
            Stage::ViewGraph => "view-graph",
            Stage::Calibration => "calibration",
            Stage::RotationAveraging => "rotation-averaging",
            Stage::Initialization => "initialization",
            Stage::Triangulation => "triangulation",
            Stage::BundleAdjustment => "bundle-adjustment",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{stage} stage failed: {source}")]
pub struct ReconstructionError {
    pub stage: Stage,
    #[source]
    pub source: PipelineError,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, ReconstructionError>;
}

impl<T> AtStage<T> for Result<T, PipelineError> {
    fn at(self, stage: Stage) -> Result<T, ReconstructionError> {
        self.map_err(|source| ReconstructionError { stage, source })
    }
}

/// Summary of one stage of the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct StageDiagnostics {
    pub name: String,
    pub rms_px: f64,
    pub landmarks: usize,
    /// Accepted optimizer steps (0 for non-optimizing stages).
    pub iterations: usize,
    pub filtered: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    pub stages: Vec<StageDiagnostics>,
    /// Tracks whose triangulation placed them behind the anchor camera.
    pub behind_anchor: Vec<u64>,
    pub keyframes: usize,
    pub edges: usize,
    pub rotation_edges: usize,
}

/// Poses, structure and calibration of a capture.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub frame: ImageFrame,
    pub intrinsics: Intrinsics,
    pub distortion: RadialDistortion,
    /// Keyed by keyframe (frame index).
    pub poses: BTreeMap<usize, SphericalPose>,
    /// Keyed by track id.
    pub landmarks: BTreeMap<u64, Landmark>,
    pub diagnostics: Diagnostics,
}

impl Reconstruction {
    pub fn camera(&self) -> Camera {
        Camera::new(
            self.intrinsics.normalized_focal(&self.frame),
            self.distortion,
            self.frame,
        )
    }

    /// Root mean square reprojection error in pixels over every keyframe
    /// observation of every landmark. Zero when there are no observations.
    pub fn rms_reprojection_error(&self, tracks: &TrackSet) -> f64 {
        structure::rms_reprojection(self, tracks)
    }

    /// World position of a landmark; `None` for points at infinity.
    pub fn landmark_position(&self, landmark: &Landmark) -> Option<nalgebra::Vector3<f64>> {
        let pose = self.poses.get(&landmark.anchor_keyframe)?;
        (landmark.inverse_depth > 0.0).then(|| {
            pose.center + pose.rotation.inverse() * landmark.bearing / landmark.inverse_depth
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub keyframe_ratio: f64,
    pub view_graph: ViewGraphConfig,
    pub averaging: AveragingConfig,
    pub ba: BaConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            keyframe_ratio: 0.02,
            view_graph: ViewGraphConfig::default(),
            averaging: AveragingConfig::default(),
            ba: BaConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Turns distortion estimation off throughout (pairwise models and the
    /// final intrinsics stage).
    pub fn without_distortion(mut self) -> Self {
        self.view_graph.selection.estimate_distortion = false;
        self.ba.optimize_distortion = false;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.view_graph.selection.robust.seed = seed;
        self
    }
}

fn stage_summary(
    name: &str,
    recon: &Reconstruction,
    tracks: &TrackSet,
    iterations: usize,
    filtered: usize,
) -> StageDiagnostics {
    StageDiagnostics {
        name: name.to_string(),
        rms_px: recon.rms_reprojection_error(tracks),
        landmarks: recon.landmarks.len(),
        iterations,
        filtered,
    }
}

/// Runs the whole pipeline on a track set.
///
/// Tracks that have no landmark yet are re-triangulated before every bundle
/// adjustment stage after the first.
pub fn run_reconstruction(
    tracks: &TrackSet,
    cfg: &PipelineConfig,
) -> Result<Reconstruction, ReconstructionError> {
    let strategies = cfg.ba.strategies().at(Stage::BundleAdjustment)?;
    let keyframes = select_keyframes(tracks, cfg.keyframe_ratio).at(Stage::Keyframes)?;
    log::info!("{} keyframes", keyframes.len());
    if keyframes.len() < 2 {
        return Err(PipelineError::TooFewKeyframes {
            needed: 2,
            got: keyframes.len(),
        })
        .at(Stage::Keyframes);
    }
    let frame = tracks.frame();
    let edges = build_view_graph(&keyframes, &frame, &cfg.view_graph).at(Stage::ViewGraph)?;
    let (intrinsics, distortion) = calibrate_sequence(&edges, &frame).at(Stage::Calibration)?;
    log::info!(
        "calibration: focal {:.2} px, lambda {:.4}",
        intrinsics.focal(),
        distortion.lambda
    );

    let anchor = keyframes[0].frame_index;
    let rotations =
        average_rotations(&edges, anchor, &cfg.averaging).at(Stage::RotationAveraging)?;
    let poses = initialize_spherical_poses(&rotations);
    let camera = Camera::new(intrinsics.normalized_focal(&frame), distortion, frame);
    let tri = triangulate_inverse_depth(tracks, &poses, &camera, None);

    let mut recon = Reconstruction {
        frame,
        intrinsics,
        distortion,
        poses,
        landmarks: tri.landmarks,
        diagnostics: Diagnostics {
            behind_anchor: tri.behind_anchor,
            keyframes: keyframes.len(),
            edges: edges.len(),
            rotation_edges: edges
                .iter()
                .filter(|e| e.motion.kind == crate::robust::MotionKind::PureRotation)
                .count(),
            ..Diagnostics::default()
        },
    };
    let init = stage_summary("initial", &recon, tracks, 0, 0);
    recon.diagnostics.stages.push(init);

    let mut sphere_rounds = 0;
    for (k, &strategy) in strategies.iter().enumerate() {
        if k > 0 {
            let tri = triangulate_inverse_depth(
                tracks,
                &recon.poses,
                &recon.camera(),
                Some(&recon.landmarks),
            );
            recon.landmarks.extend(tri.landmarks);
            recon.diagnostics.behind_anchor.extend(tri.behind_anchor);
        }
        let mut stage_cfg = cfg.ba.clone();
        if strategy.sphere_prior() {
            stage_cfg.sphere_prior_weight = cfg.ba.sphere_prior_weight / 10f64.powi(sphere_rounds);
            sphere_rounds += 1;
        }
        let (next, report) =
            bundle_adjust(&recon, tracks, strategy, &stage_cfg).at(Stage::BundleAdjustment)?;
        recon = next;
        let summary = stage_summary(
            &format!("{strategy:?}"),
            &recon,
            tracks,
            report.accepted_steps,
            report.filtered,
        );
        log::info!(
            "stage {}: rms {:.3} px, {} landmarks, {} steps",
            summary.name,
            summary.rms_px,
            summary.landmarks,
            summary.iterations
        );
        recon.diagnostics.stages.push(summary);
    }
    recon.diagnostics.behind_anchor.sort_unstable();
    recon.diagnostics.behind_anchor.dedup();
    Ok(recon)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_tracks_fail_at_keyframes() {
        let tracks = TrackSet::new(ImageFrame::new(640, 480), vec![]).unwrap();
        let err = run_reconstruction(&tracks, &PipelineConfig::default()).unwrap_err();
        assert_eq!(err.stage, Stage::Keyframes);
        assert_eq!(err.source, PipelineError::EmptyTracks);
        assert!(err.to_string().starts_with("keyframes"));
    }

    #[test]
    fn bad_schedule_is_rejected_before_work() {
        let tracks = TrackSet::new(ImageFrame::new(640, 480), vec![]).unwrap();
        let cfg = PipelineConfig {
            ba: BaConfig {
                schedule: "ABX".into(),
                ..BaConfig::default()
            },
            ..PipelineConfig::default()
        };
        let err = run_reconstruction(&tracks, &cfg).unwrap_err();
        assert!(matches!(err.source, PipelineError::InvalidConfig(_)));
    }
}
