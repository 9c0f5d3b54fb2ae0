use std::collections::BTreeMap;

use nalgebra::{Matrix2, Vector2, Vector3};

use super::camera::Camera;
use super::Reconstruction;
use crate::geom::{Rotation, SphericalPose};
use crate::tracks::{Track, TrackSet};

/// Tracks whose rays meet at a smaller angle are placed at infinity.
pub const MIN_TRIANGULATION_ANGLE_DEG: f64 = 0.1;

/// Point parameterized by a unit bearing in its anchor camera and the inverse
/// of its distance along that bearing (0 for points at infinity).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub anchor_keyframe: usize,
    pub bearing: Vector3<f64>,
    pub inverse_depth: f64,
}

/// Homogeneous position of a landmark in the frame of camera `pose`, scaled
/// by its inverse depth so that points at infinity stay finite.
pub(crate) fn landmark_in_camera(
    l: &Landmark,
    anchor: &SphericalPose,
    pose: &SphericalPose,
) -> Vector3<f64> {
    pose.rotation
        * (l.inverse_depth * (anchor.center - pose.center) + anchor.rotation.inverse() * l.bearing)
}

/// Camera at `center = R^T z`, on the unit sphere.
pub fn initialize_spherical_poses(
    rotations: &BTreeMap<usize, Rotation>,
) -> BTreeMap<usize, SphericalPose> {
    rotations
        .iter()
        .map(|(&k, r)| (k, SphericalPose::from_rotation(*r)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Triangulation {
    pub landmarks: BTreeMap<u64, Landmark>,
    /// Tracks placed at infinity because their best depth was negative.
    pub behind_anchor: Vec<u64>,
    /// Tracks placed at infinity for lack of parallax (including tracks seen
    /// by a single keyframe).
    pub low_parallax: Vec<u64>,
}

enum Outcome {
    Finite(f64),
    LowParallax,
    Behind,
}

/// Keyframe observations of a track, in frame order.
pub(crate) fn keyframe_observations<'a>(
    track: &'a Track,
    poses: &'a BTreeMap<usize, SphericalPose>,
) -> impl Iterator<Item = (usize, Vector2<f64>)> + 'a {
    track
        .observations
        .iter()
        .filter(|o| poses.contains_key(&o.frame))
        .map(|o| (o.frame, o.position))
}

fn reprojection_cost(
    l: &Landmark,
    obs: &[(usize, Vector2<f64>)],
    poses: &BTreeMap<usize, SphericalPose>,
    camera: &Camera,
) -> f64 {
    let anchor = &poses[&l.anchor_keyframe];
    obs.iter()
        .map(
            |(k, px)| match camera.project(&landmark_in_camera(l, anchor, &poses[k])) {
                Some(p) => (p - px).norm_squared(),
                None => f64::INFINITY,
            },
        )
        .sum()
}

fn solve_depth(
    bearing: &Vector3<f64>,
    anchor_frame: usize,
    rest: &[(usize, Vector2<f64>)],
    poses: &BTreeMap<usize, SphericalPose>,
    camera: &Camera,
) -> Outcome {
    let anchor = &poses[&anchor_frame];
    let d_a = anchor.rotation.inverse() * bearing;
    // Ray with the widest angle to the anchor ray.
    let mut best: Option<(f64, Vector3<f64>, Vector3<f64>)> = None;
    for (k, px) in rest {
        let Some(b) = camera.bearing(px) else {
            continue;
        };
        let pose = &poses[k];
        let d = pose.rotation.inverse() * b;
        let angle = d_a.cross(&d).norm().atan2(d_a.dot(&d));
        if best.is_none_or(|(a, _, _)| angle > a) {
            best = Some((angle, d, pose.center));
        }
    }
    let Some((angle, d_k, c_k)) = best else {
        return Outcome::LowParallax;
    };
    if angle < MIN_TRIANGULATION_ANGLE_DEG.to_radians() {
        return Outcome::LowParallax;
    }
    let w = c_k - anchor.center;
    let m = Matrix2::new(1.0, -d_a.dot(&d_k), d_a.dot(&d_k), -1.0);
    let Some(st) = m
        .try_inverse()
        .map(|inv| inv * Vector2::new(w.dot(&d_a), w.dot(&d_k)))
    else {
        return Outcome::LowParallax;
    };
    if st.x <= 0.0 {
        return Outcome::Behind;
    }
    // One-dimensional Gauss-Newton on the inverse depth.
    let mut l = Landmark {
        anchor_keyframe: anchor_frame,
        bearing: *bearing,
        inverse_depth: 1.0 / st.x,
    };
    let mut cost = reprojection_cost(&l, rest, poses, camera);
    for _ in 0..20 {
        let (mut jtj, mut jtr) = (0.0, 0.0);
        for (k, px) in rest {
            let pose = &poses[k];
            let Some(p) = camera.project_with_jacobian(&landmark_in_camera(&l, anchor, pose))
            else {
                continue;
            };
            let j = p.d_point * (pose.rotation * (anchor.center - pose.center));
            jtj += j.norm_squared();
            jtr += j.dot(&(p.pixel - px));
        }
        if jtj <= 0.0 {
            break;
        }
        let mut step = -jtr / jtj;
        let mut accepted = false;
        for _ in 0..8 {
            let trial = Landmark {
                inverse_depth: l.inverse_depth + step,
                ..l
            };
            let c = reprojection_cost(&trial, rest, poses, camera);
            if c < cost {
                l = trial;
                accepted = cost - c > 1e-14 * cost;
                cost = c;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if l.inverse_depth < 0.0 {
        Outcome::Behind
    } else {
        Outcome::Finite(l.inverse_depth)
    }
}

/// Triangulates every track seen by at least one posed keyframe and not
/// already in `existing`.
///
/// The bearing comes from the track's first posed observation (its anchor).
/// The inverse depth is initialized by the midpoint of the anchor ray and the
/// ray at the widest angle to it, then refined by Gauss-Newton on the total
/// squared reprojection error. Tracks without enough parallax, or whose depth
/// comes out negative, are kept at infinity.
pub fn triangulate_inverse_depth(
    tracks: &TrackSet,
    poses: &BTreeMap<usize, SphericalPose>,
    camera: &Camera,
    existing: Option<&BTreeMap<u64, Landmark>>,
) -> Triangulation {
    let mut out = Triangulation::default();
    for track in tracks.tracks() {
        if existing.is_some_and(|e| e.contains_key(&track.id)) {
            continue;
        }
        let obs: Vec<(usize, Vector2<f64>)> = keyframe_observations(track, poses).collect();
        let Some(&(anchor_frame, anchor_px)) = obs.first() else {
            continue;
        };
        let Some(bearing) = camera.bearing(&anchor_px) else {
            continue;
        };
        let inverse_depth = match solve_depth(&bearing, anchor_frame, &obs[1..], poses, camera) {
            Outcome::Finite(rho) => rho,
            Outcome::LowParallax => {
                out.low_parallax.push(track.id);
                0.0
            }
            Outcome::Behind => {
                out.behind_anchor.push(track.id);
                0.0
            }
        };
        out.landmarks.insert(
            track.id,
            Landmark {
                anchor_keyframe: anchor_frame,
                bearing,
                inverse_depth,
            },
        );
    }
    out
}

pub(crate) fn rms_reprojection(recon: &Reconstruction, tracks: &TrackSet) -> f64 {
    let camera = recon.camera();
    let (mut sum, mut n) = (0.0, 0usize);
    for track in tracks.tracks() {
        let Some(l) = recon.landmarks.get(&track.id) else {
            continue;
        };
        let Some(anchor) = recon.poses.get(&l.anchor_keyframe) else {
            continue;
        };
        for (k, px) in keyframe_observations(track, &recon.poses) {
            if let Some(p) = camera.project(&landmark_in_camera(l, anchor, &recon.poses[&k])) {
                sum += (p - px).norm_squared();
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}
