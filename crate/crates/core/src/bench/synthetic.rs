use nalgebra::{Unit, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::BenchError;
use crate::geom::{
    distort_point, fundamental_from_essential, relative_pose_to_essential, undistort_to_plane,
    Correspondence, ImageFrame, RadialDistortion, Rotation, SphericalEssential,
    SphericalFundamental, SphericalPose,
};
use crate::tracks::{Observation, Track, TrackSet};

/// Two-view problem generator settings. Focal length and noise are in
/// pixels; `lambda_gt` is in normalized units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub rotation_range_deg: (f64, f64),
    pub n_points: usize,
    pub depth_range: (f64, f64),
    pub focal: f64,
    pub lambda_gt: f64,
    pub pixel_noise_sigma: f64,
    pub seed: u64,
    pub frame: ImageFrame,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            rotation_range_deg: (0.0, 10.0),
            n_points: 1000,
            depth_range: (6.0, 10.0),
            focal: 1200.0,
            lambda_gt: 0.0,
            pixel_noise_sigma: 0.0,
            seed: 0,
            frame: ImageFrame::new(1920, 1080),
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<(), BenchError> {
        let (r0, r1) = self.rotation_range_deg;
        let (d0, d1) = self.depth_range;
        if !(r0 >= 0.0 && r0 <= r1 && r1 < 180.0) {
            return Err(BenchError::InvalidConfig(
                "rotation range must satisfy 0 <= min <= max < 180",
            ));
        }
        if !(d0 > 0.0 && d0 <= d1 && d1.is_finite()) {
            return Err(BenchError::InvalidConfig(
                "depth range must be positive and ordered",
            ));
        }
        if !(self.focal > 0.0 && self.focal.is_finite()) {
            return Err(BenchError::InvalidConfig("focal length must be positive"));
        }
        if !(self.pixel_noise_sigma >= 0.0 && self.lambda_gt.is_finite()) {
            return Err(BenchError::InvalidConfig(
                "noise must be non-negative and lambda finite",
            ));
        }
        if self.n_points < 8 {
            return Err(BenchError::InvalidConfig("at least 8 points are required"));
        }
        if self.frame.width == 0 || self.frame.height == 0 {
            return Err(BenchError::InvalidConfig("image must be non-empty"));
        }
        Ok(())
    }

    pub fn normalized_focal(&self) -> f64 {
        self.focal / self.frame.scale()
    }
}

/// Ground truth and observations of one two-view problem. Camera 1 has the
/// identity rotation; all image quantities are in normalized coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticProblem {
    /// Relative rotation `R_2 R_1^T`.
    pub rotation: Rotation,
    /// `None` for [`generate_rotation_pair`].
    pub essential: Option<SphericalEssential>,
    pub fundamental: SphericalFundamental,
    pub lambda: f64,
    /// Normalized units.
    pub focal: f64,
    pub frame: ImageFrame,
    /// Distorted, possibly noisy.
    pub correspondences: Vec<Correspondence>,
}

impl SyntheticProblem {
    /// Correspondences undistorted with the true `lambda` and divided by the
    /// true focal length.
    pub fn calibrated_correspondences(&self) -> Vec<Correspondence> {
        let d = RadialDistortion::new(self.lambda);
        self.correspondences
            .iter()
            .filter_map(|c| c.undistorted(d).ok())
            .map(|c| c.calibrated(self.focal))
            .collect()
    }
}

/// Rotation with angle uniform in `range_deg` and axis uniform on the sphere
/// outside a 0.5 degree cone around the optical axis.
pub(crate) fn random_rotation(rng: &mut impl Rng, range_deg: (f64, f64)) -> Rotation {
    let angle = if range_deg.1 > range_deg.0 {
        rng.random_range(range_deg.0..=range_deg.1)
    } else {
        range_deg.0
    };
    let min_sin = 0.5f64.to_radians().sin();
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n < 1e-9 {
            continue;
        }
        let axis = v / n;
        if (axis.x * axis.x + axis.y * axis.y).sqrt() < min_sin {
            continue;
        }
        return Rotation::from_axis_angle(&Unit::new_unchecked(axis), angle.to_radians());
    }
}

fn noisy(
    p: Vector2<f64>,
    noise: &Option<Normal<f64>>,
    rng: &mut impl Rng,
    scale: f64,
) -> Vector2<f64> {
    match noise {
        Some(n) => p + Vector2::new(n.sample(rng), n.sample(rng)) / scale,
        None => p,
    }
}

fn generate(cfg: &SyntheticConfig, pure_rotation: bool) -> Result<SyntheticProblem, BenchError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rotation = random_rotation(&mut rng, cfg.rotation_range_deg);
    let d = RadialDistortion::new(cfg.lambda_gt);
    let f = cfg.normalized_focal();
    let frame = cfg.frame;
    let scale = frame.scale();
    let noise =
        (cfg.pixel_noise_sigma > 0.0).then(|| Normal::new(0.0, cfg.pixel_noise_sigma).unwrap());
    let e = relative_pose_to_essential(&rotation)?;
    let fundamental = fundamental_from_essential(&e, f)?;
    let essential = (!pure_rotation).then_some(e);
    let cam2 = if pure_rotation {
        SphericalPose {
            rotation,
            center: Vector3::z(),
        }
    } else {
        SphericalPose::from_rotation(rotation)
    };
    let cam1 = SphericalPose::from_rotation(Rotation::identity());

    let (w, h) = (frame.width as f64, frame.height as f64);
    let mut out = Vec::with_capacity(cfg.n_points);
    let mut attempts = 0usize;
    while out.len() < cfg.n_points {
        attempts += 1;
        if attempts > 200 * cfg.n_points {
            return Err(BenchError::InvalidConfig(
                "too few points visible in both views",
            ));
        }
        let px = Vector2::new(rng.random_range(0.0..w), rng.random_range(0.0..h));
        let depth = if cfg.depth_range.1 > cfg.depth_range.0 {
            rng.random_range(cfg.depth_range.0..cfg.depth_range.1)
        } else {
            cfg.depth_range.0
        };
        let p1 = frame.normalize(&px);
        let Ok(u1) = undistort_to_plane(&p1, d) else {
            continue;
        };
        let x_cam1 = Vector3::new(u1.x / f, u1.y / f, 1.0) * depth;
        let world = cam1.rotation.inverse() * x_cam1 + cam1.center;
        let x_cam2 = cam2.to_camera(&world);
        if x_cam2.z <= 1e-6 {
            continue;
        }
        let Ok(p2) = distort_point(
            &Vector2::new(f * x_cam2.x / x_cam2.z, f * x_cam2.y / x_cam2.z),
            d,
        ) else {
            continue;
        };
        let q1 = noisy(p1, &noise, &mut rng, scale);
        let q2 = noisy(p2, &noise, &mut rng, scale);
        if !(frame.contains(&frame.denormalize(&q1)) && frame.contains(&frame.denormalize(&q2))) {
            continue;
        }
        out.push(Correspondence::new(q1, q2));
    }
    Ok(SyntheticProblem {
        rotation,
        essential,
        fundamental,
        lambda: cfg.lambda_gt,
        focal: f,
        frame,
        correspondences: out,
    })
}

/// Two cameras on the unit sphere related by a random rotation, observing
/// points at the configured depths in front of camera 1.
pub fn generate_problem(cfg: &SyntheticConfig) -> Result<SyntheticProblem, BenchError> {
    generate(cfg, false)
}

/// Like [`generate_problem`] but both cameras share one center, so the views
/// are related by a pure rotation. `essential` is `None`; `fundamental` is
/// that of the same rotation under spherical motion and does not describe
/// the pair.
pub fn generate_rotation_pair(cfg: &SyntheticConfig) -> Result<SyntheticProblem, BenchError> {
    generate(cfg, true)
}

/// A synthetic panorama-style video: cameras yaw around the vertical axis on
/// the unit sphere, looking outward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceConfig {
    pub frames: usize,
    /// Total yaw covered by the sequence.
    pub sweep_deg: f64,
    /// Peak pitch oscillation.
    pub pitch_amplitude_deg: f64,
    /// Relative amplitude of a radial oscillation of the camera centers
    /// (0 for exact spherical motion).
    pub radial_wobble: f64,
    pub n_points: usize,
    /// Fraction of points at infinity, spread over all directions.
    pub infinite_fraction: f64,
    /// Depth range of the finite points, measured from the sphere.
    pub depth_range: (f64, f64),
    /// Azimuth intervals (degrees) containing finite points; elsewhere the
    /// scene is at infinity.
    pub near_sectors: [(f64, f64); 2],
    pub focal: f64,
    pub lambda_gt: f64,
    pub pixel_noise_sigma: f64,
    pub seed: u64,
    pub frame: ImageFrame,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self {
            frames: 120,
            sweep_deg: 360.0,
            pitch_amplitude_deg: 2.0,
            radial_wobble: 0.0,
            n_points: 4000,
            infinite_fraction: 0.3,
            depth_range: (6.0, 10.0),
            near_sectors: [(0.0, 50.0), (180.0, 230.0)],
            focal: 1200.0,
            lambda_gt: -0.2,
            pixel_noise_sigma: 0.5,
            seed: 0,
            frame: ImageFrame::new(1920, 1080),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub tracks: TrackSet,
    /// Ground-truth pose of every frame.
    pub poses: Vec<SphericalPose>,
    pub focal_px: f64,
    pub lambda: f64,
    /// World points (finite ones) and directions (infinite ones), by track id.
    pub points: Vec<(u64, Vector3<f64>, bool)>,
}

fn sequence_pose(cfg: &SequenceConfig, i: usize) -> SphericalPose {
    let s = i as f64 / cfg.frames as f64;
    let yaw = (cfg.sweep_deg * s).to_radians();
    let pitch = cfg.pitch_amplitude_deg.to_radians() * (2.0 * std::f64::consts::TAU * s).sin();
    let rotation = Rotation::from_axis_angle(&Vector3::x_axis(), pitch)
        * Rotation::from_axis_angle(&Vector3::y_axis(), yaw);
    let radius = 1.0 + cfg.radial_wobble * (3.0 * std::f64::consts::TAU * s).sin();
    let mut pose = SphericalPose::from_rotation(rotation);
    pose.center *= radius;
    pose
}

/// Generates tracks for [`SequenceConfig`].
pub fn generate_sequence(cfg: &SequenceConfig) -> Result<SyntheticSequence, BenchError> {
    if cfg.frames < 2 || cfg.n_points == 0 || !(0.0..=1.0).contains(&cfg.infinite_fraction) {
        return Err(BenchError::InvalidConfig(
            "sequence needs >= 2 frames, points, and an infinite fraction in [0, 1]",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let poses: Vec<_> = (0..cfg.frames).map(|i| sequence_pose(cfg, i)).collect();
    let frame = cfg.frame;
    let f = cfg.focal / frame.scale();
    let d = RadialDistortion::new(cfg.lambda_gt);
    let noise =
        (cfg.pixel_noise_sigma > 0.0).then(|| Normal::new(0.0, cfg.pixel_noise_sigma).unwrap());
    let sector_total: f64 = cfg.near_sectors.iter().map(|(a, b)| b - a).sum();
    let max_elev = 24f64.to_radians();

    let mut tracks = Vec::new();
    let mut points = Vec::new();
    let mut id = 0u64;
    for k in 0..cfg.n_points {
        let infinite = (k as f64) < cfg.infinite_fraction * cfg.n_points as f64;
        let azimuth = if infinite || sector_total <= 0.0 {
            rng.random_range(0.0..360.0)
        } else {
            let mut a = rng.random_range(0.0..sector_total);
            let mut out = cfg.near_sectors[0].0;
            for (lo, hi) in cfg.near_sectors {
                if a < hi - lo {
                    out = lo + a;
                    break;
                }
                a -= hi - lo;
            }
            out
        };
        let elevation: f64 = rng.random_range(-max_elev..max_elev);
        // Direction convention matches the camera yaw: the camera at yaw
        // `a` looks along R_y(a)^T z.
        let dir = Rotation::from_axis_angle(&Vector3::y_axis(), azimuth.to_radians()).inverse()
            * Rotation::from_axis_angle(&Vector3::x_axis(), -elevation)
            * Vector3::z();
        let world = if infinite {
            dir
        } else {
            dir * (1.0 + rng.random_range(cfg.depth_range.0..cfg.depth_range.1))
        };
        let mut run: Vec<Observation> = Vec::new();
        let mut finish = |run: &mut Vec<Observation>,
                          tracks: &mut Vec<Track>,
                          points: &mut Vec<(u64, Vector3<f64>, bool)>| {
            if run.len() >= 2 {
                tracks.push(Track {
                    id,
                    observations: std::mem::take(run),
                });
                points.push((id, world, infinite));
                id += 1;
            }
            run.clear();
        };
        for (i, pose) in poses.iter().enumerate() {
            let xc = if infinite {
                pose.rotation * world
            } else {
                pose.to_camera(&world)
            };
            let visible = (xc.z > 1e-6)
                .then(|| distort_point(&Vector2::new(f * xc.x / xc.z, f * xc.y / xc.z), d).ok())
                .flatten()
                .map(|p| frame.denormalize(&p))
                .map(|px| noisy(px, &noise, &mut rng, 1.0))
                .filter(|px| frame.contains(px));
            match visible {
                Some(px) => run.push(Observation {
                    frame: i,
                    position: px,
                }),
                None => finish(&mut run, &mut tracks, &mut points),
            }
        }
        finish(&mut run, &mut tracks, &mut points);
    }
    let tracks = TrackSet::new(frame, tracks).map_err(|e| BenchError::Tracks(e.to_string()))?;
    Ok(SyntheticSequence {
        tracks,
        poses,
        focal_px: cfg.focal,
        lambda: cfg.lambda_gt,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_problem_satisfies_epipolar_constraint() {
        for seed in 0..20 {
            let pb = generate_problem(&SyntheticConfig {
                seed,
                lambda_gt: -0.3,
                ..SyntheticConfig::default()
            })
            .unwrap();
            assert_eq!(pb.correspondences.len(), 1000);
            let fm = pb.fundamental.matrix();
            let d = RadialDistortion::new(pb.lambda);
            for c in &pb.correspondences {
                let u = c.undistorted(d).unwrap();
                let r = u.p_prime.push(1.0).dot(&(fm * u.p.push(1.0)));
                assert!(r.abs() < 1e-14, "{r}");
            }
        }
    }

    #[test]
    fn zero_distortion_is_identity() {
        let pb = generate_problem(&SyntheticConfig {
            seed: 1,
            lambda_gt: 0.0,
            ..SyntheticConfig::default()
        })
        .unwrap();
        for c in &pb.correspondences[..50] {
            assert_eq!(c.undistorted(RadialDistortion::NONE).unwrap(), *c);
        }
    }

    #[test]
    fn deterministic() {
        let cfg = SyntheticConfig {
            seed: 5,
            pixel_noise_sigma: 1.0,
            ..SyntheticConfig::default()
        };
        assert_eq!(
            generate_problem(&cfg).unwrap(),
            generate_problem(&cfg).unwrap()
        );
    }

    #[test]
    fn rotation_axis_avoids_optical_axis() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..2000 {
            let r = random_rotation(&mut rng, (1.0, 10.0));
            let axis = r.axis().unwrap();
            assert!(axis.z.abs() < 0.5f64.to_radians().cos());
            let a = r.angle().to_degrees();
            assert!((1.0 - 1e-9..=10.0 + 1e-9).contains(&a));
        }
    }

    #[test]
    fn invalid_config() {
        assert!(generate_problem(&SyntheticConfig {
            depth_range: (10.0, 6.0),
            ..SyntheticConfig::default()
        })
        .is_err());
        assert!(generate_problem(&SyntheticConfig {
            n_points: 3,
            ..SyntheticConfig::default()
        })
        .is_err());
    }

    #[test]
    fn sequence_is_valid_and_spherical() {
        let cfg = SequenceConfig {
            frames: 30,
            n_points: 800,
            ..SequenceConfig::default()
        };
        let seq = generate_sequence(&cfg).unwrap();
        assert_eq!(seq.poses.len(), 30);
        for p in &seq.poses {
            assert!((p.center.norm() - 1.0).abs() < 1e-12);
        }
        assert!(seq.tracks.tracks().len() > 100);
    }
}
