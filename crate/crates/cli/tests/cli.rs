use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use nalgebra::{Vector2, Vector3};
use spherical_sfm::geom::{
    rotation_distance, ImageFrame, Intrinsics, RadialDistortion, Rotation, SphericalPose,
};
use spherical_sfm::pipeline::{Diagnostics, Landmark, Reconstruction};
use spherical_sfm_cli::recon_file::{
    read_reconstruction, write_reconstruction, POINTS_FILE, RECONSTRUCTION_FILE,
};
use spherical_sfm_cli::tracks_file::read_tracks;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spherical-sfm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ply_vertex_count(ply: &str) -> usize {
    ply.lines()
        .find_map(|l| l.strip_prefix("element vertex "))
        .unwrap()
        .parse()
        .unwrap()
}

fn sample_reconstruction(landmarks: usize) -> Reconstruction {
    let frame = ImageFrame::new(1280, 720);
    let poses: BTreeMap<usize, SphericalPose> = (0..5)
        .map(|k| {
            (
                3 * k,
                SphericalPose::from_rotation(Rotation::from_euler_angles(
                    0.01 * k as f64,
                    0.2 * k as f64 + 0.1,
                    -0.03,
                )),
            )
        })
        .collect();
    let landmarks = (0..landmarks as u64)
        .map(|id| {
            let inverse_depth = if id % 4 == 0 {
                0.0
            } else {
                0.1 + 0.01 * id as f64
            };
            (
                id,
                Landmark {
                    anchor_keyframe: 3 * (id as usize % 5),
                    bearing: Vector3::new(0.1, -0.05 * id as f64, 1.0).normalize(),
                    inverse_depth,
                },
            )
        })
        .collect();
    Reconstruction {
        frame,
        intrinsics: Intrinsics::new(1000.5, Vector2::new(640.0, 360.0)).unwrap(),
        distortion: RadialDistortion::new(-0.15),
        poses,
        landmarks,
        diagnostics: Diagnostics::default(),
    }
}

#[test]
fn reconstruction_document_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let recon = sample_reconstruction(12);
    write_reconstruction(&recon, dir.path()).unwrap();
    let doc = read_reconstruction(&dir.path().join(RECONSTRUCTION_FILE)).unwrap();
    assert_eq!(doc.intrinsics.focal_px, 1000.5);
    assert_eq!(doc.intrinsics.lambda, -0.15);
    let poses = doc.spherical_poses().unwrap();
    assert_eq!(poses.len(), recon.poses.len());
    for (k, pose) in poses {
        let original = recon.poses[&k];
        assert!(rotation_distance(&pose.rotation, &original.rotation) < 1e-9);
        assert!((pose.center - original.center).norm() < 1e-9);
    }
    for p in &doc.poses {
        let n: f64 = p.rotation_wxyz.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
    }
    for (record, (id, l)) in doc.landmarks.iter().zip(&recon.landmarks) {
        assert_eq!(record.track_id, *id);
        assert_eq!(record.inverse_depth, l.inverse_depth);
        assert_eq!(Vector3::from(record.bearing), l.bearing);
    }
    let ply = std::fs::read_to_string(dir.path().join(POINTS_FILE)).unwrap();
    let finite = recon
        .landmarks
        .values()
        .filter(|l| l.inverse_depth > 0.0)
        .count();
    assert_eq!(ply_vertex_count(&ply), finite);
    assert_eq!(
        ply.lines().skip_while(|l| *l != "end_header").count() - 1,
        finite
    );
}

#[test]
fn zero_landmarks_give_an_empty_point_cloud() {
    let dir = tempfile::tempdir().unwrap();
    write_reconstruction(&sample_reconstruction(0), dir.path()).unwrap();
    let ply = std::fs::read_to_string(dir.path().join(POINTS_FILE)).unwrap();
    assert_eq!(ply_vertex_count(&ply), 0);
    assert!(ply.ends_with("end_header\n"));
}

#[test]
fn bench_timing_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&[
        "bench",
        "timing",
        "--trials",
        "100",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("timing.csv")).unwrap();
    assert_eq!(csv.lines().count(), 101);
    assert!(dir.path().join("timing.svg").exists());
}

#[test]
fn bench_output_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        assert_eq!(
            cli(&[
                "bench",
                "stability",
                "--trials",
                "50",
                "--seed",
                "9",
                "--out",
                path(d.path())
            ])
            .status
            .code(),
            Some(0)
        );
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("stability.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn usage_errors_exit_with_one() {
    let out = cli(&["bench", "timing", "--out", "/tmp/x", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(
        cli(&["bench", "sideways", "--out", "/tmp/x"]).status.code(),
        Some(1)
    );
    assert_eq!(
        cli(&["solve-pair", "t.txt", "--frames", "3"]).status.code(),
        Some(1)
    );
}

#[test]
fn invalid_tracks_fail_in_the_tracks_stage() {
    let dir = tempfile::tempdir().unwrap();
    let tracks = dir.path().join("bad.txt");
    std::fs::write(&tracks, "sphsfm-tracks 1\nimage_width 100\nimage_height 100\nframe_count 2\ntracks\n1 0 5 5 1 500 5\n").unwrap();
    let out = cli(&[
        "reconstruct",
        path(&tracks),
        "--out",
        path(&dir.path().join("out")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("tracks stage failed") && stderr.contains("line 6"),
        "{stderr}"
    );
}

#[test]
fn pipeline_failures_name_their_stage() {
    let dir = tempfile::tempdir().unwrap();
    let tracks = dir.path().join("static.txt");
    // Two tracks that never move: too little to select keyframes from.
    std::fs::write(&tracks, "sphsfm-tracks 1\nimage_width 100\nimage_height 100\nframe_count 2\ntracks\n1 0 5 5 1 5 5\n2 0 50 50 1 50 50\n").unwrap();
    let out = cli(&[
        "reconstruct",
        path(&tracks),
        "--out",
        path(&dir.path().join("out")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("stage failed"), "{stderr}");
    assert!(!stderr.contains("tracks stage"), "{stderr}");
}

#[test]
fn synth_then_reconstruct() {
    let dir = tempfile::tempdir().unwrap();
    let tracks = dir.path().join("tracks.txt");
    let synth = [
        "synth",
        "--out",
        path(&tracks),
        "--keyframes",
        "60",
        "--points",
        "1500",
        "--seed",
        "2",
    ];
    assert_eq!(cli(&synth).status.code(), Some(0));
    let first = std::fs::read(&tracks).unwrap();
    assert_eq!(cli(&synth).status.code(), Some(0));
    assert_eq!(
        std::fs::read(&tracks).unwrap(),
        first,
        "synth output is not reproducible"
    );
    let doc = read_tracks(&tracks).unwrap();
    assert_eq!(doc.frame_count, 60);

    let pair = cli(&["solve-pair", path(&tracks), "--frames", "0,1"]);
    assert_eq!(pair.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&pair.stdout);
    assert!(
        stdout.contains("fundamental:")
            && stdout.contains("rotation:")
            && stdout.contains("selected"),
        "{stdout}"
    );

    let out_dir = dir.path().join("recon");
    let run = cli(&["reconstruct", path(&tracks), "--out", path(&out_dir)]);
    assert_eq!(
        run.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let recon = read_reconstruction(&out_dir.join(RECONSTRUCTION_FILE)).unwrap();
    assert_eq!(recon.poses.len(), 60);
    assert!((recon.intrinsics.focal_px - 1200.0).abs() / 1200.0 < 0.02);
    let ply = std::fs::read_to_string(out_dir.join(POINTS_FILE)).unwrap();
    assert_eq!(
        ply_vertex_count(&ply),
        recon
            .landmarks
            .iter()
            .filter(|l| l.inverse_depth > 0.0)
            .count()
    );
    let first_json = std::fs::read(out_dir.join(RECONSTRUCTION_FILE)).unwrap();
    assert_eq!(
        cli(&["reconstruct", path(&tracks), "--out", path(&out_dir)])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        std::fs::read(out_dir.join(RECONSTRUCTION_FILE)).unwrap(),
        first_json,
        "reconstruction is not reproducible"
    );
}
