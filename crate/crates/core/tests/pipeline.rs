use spherical_sfm::bench::{evaluate_reconstruction, generate_sequence, SequenceConfig};
use spherical_sfm::geom::ImageFrame;
use spherical_sfm::pipeline::{run_reconstruction, PipelineConfig, PipelineError, Stage};
use spherical_sfm::tracks::TrackSet;

#[test]
fn empty_tracks_fail_in_keyframe_selection() {
    let tracks = TrackSet::new(ImageFrame::new(640, 480), Vec::new()).unwrap();
    let err = run_reconstruction(&tracks, &PipelineConfig::default()).unwrap_err();
    assert_eq!(err.stage, Stage::Keyframes);
    assert_eq!(err.source, PipelineError::EmptyTracks);
}

#[test]
fn reconstruction_is_deterministic() {
    let seq = generate_sequence(&SequenceConfig {
        frames: 60,
        n_points: 1500,
        seed: 5,
        ..SequenceConfig::default()
    })
    .unwrap();
    let cfg = PipelineConfig::default().with_seed(3);
    let a = run_reconstruction(&seq.tracks, &cfg).unwrap();
    let b = run_reconstruction(&seq.tracks, &cfg).unwrap();
    assert_eq!(a.poses, b.poses);
    assert_eq!(a.landmarks, b.landmarks);
    assert_eq!(a.intrinsics.focal(), b.intrinsics.focal());
}

#[test]
fn non_spherical_motion_still_reconstructs() {
    // Camera centers oscillate 10% around the sphere: the sphere prior is
    // violated but strategies C and D release it. Centers of cameras that see
    // only distant points are unobservable, so positions are not checked.
    let seq = generate_sequence(&SequenceConfig {
        frames: 120,
        n_points: 2000,
        radial_wobble: 0.1,
        seed: 7,
        ..SequenceConfig::default()
    })
    .unwrap();
    let recon = run_reconstruction(&seq.tracks, &PipelineConfig::default()).unwrap();
    let e = evaluate_reconstruction(&seq, &recon);
    assert_eq!(e.cameras, seq.poses.len());
    assert!(e.focal_relative < 0.05, "{e:?}");
    assert!(e.max_orientation_deg < 0.5, "{e:?}");
    assert!(e.rms_px < 1.5, "{e:?}");
}
