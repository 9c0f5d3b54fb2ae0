use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use nalgebra::{Matrix3, Vector3};

use super::keyframes::Keyframe;
use super::PipelineError;
use crate::geom::{
    essential_from_fundamental, nearest_rotation, undistort_to_plane, Correspondence, ImageFrame,
    Intrinsics, RadialDistortion, Rotation, SphericalEssential,
};
use crate::robust::{
    kernel_vote, mlesac, select_motion_model, FundamentalEstimator, MotionKind, PairwiseMotion,
    RobustConfig, SelectionConfig,
};
use crate::solvers::decompose_spherical_essential;

/// Normalized focal length assumed for decomposing fundamental matrices when
/// no pair of the sequence gives a focal estimate (a 60 degree field of view
/// across the larger image dimension).
const FALLBACK_FOCAL: f64 = 0.866_025_403_784_438_6;

#[derive(Debug, Clone, PartialEq)]
pub struct ViewGraphConfig {
    pub selection: SelectionConfig,
    /// Keyframe index offsets that are paired (1 = consecutive keyframes).
    pub strides: Vec<usize>,
    /// Pairs sharing fewer tracks are not estimated.
    pub min_correspondences: usize,
    /// Pairs whose mean displacement is below this many pixels are dropped
    /// as degenerate.
    pub min_flow_px: f64,
    /// Worker threads for pairwise estimation; 0 uses all available cores.
    pub threads: usize,
}

impl Default for ViewGraphConfig {
    fn default() -> Self {
        Self {
            selection: SelectionConfig::default(),
            strides: vec![1, 2],
            min_correspondences: 20,
            min_flow_px: 0.5,
            threads: 0,
        }
    }
}

/// Edge between two keyframes (frame indices, `i < j`).
#[derive(Debug, Clone, PartialEq)]
pub struct ViewGraphEdge {
    pub i: usize,
    pub j: usize,
    pub motion: PairwiseMotion,
    /// `R_j R_i^T`.
    pub relative_rotation: Rotation,
    /// Number of correspondences consistent with the relative rotation.
    pub support: usize,
}

/// Tracks observed in both keyframes, as normalized correspondences.
pub fn keyframe_correspondences(
    a: &Keyframe,
    b: &Keyframe,
    frame: &ImageFrame,
) -> (Vec<u64>, Vec<Correspondence>) {
    let mut ids = Vec::new();
    let mut corrs = Vec::new();
    for (id, pa) in &a.observations {
        if let Some(pb) = b.get(*id) {
            ids.push(*id);
            corrs.push(Correspondence::new(
                frame.normalize(pa),
                frame.normalize(&pb),
            ));
        }
    }
    (ids, corrs)
}

struct PairEstimate {
    i: usize,
    j: usize,
    corrs: Vec<Correspondence>,
    motion: PairwiseMotion,
}

fn estimate_pair(
    a: &Keyframe,
    b: &Keyframe,
    frame: &ImageFrame,
    cfg: &ViewGraphConfig,
    seed: u64,
) -> Option<PairEstimate> {
    let (_, corrs) = keyframe_correspondences(a, b, frame);
    if corrs.len() < cfg.min_correspondences {
        log::debug!(
            "pair ({}, {}): {} shared tracks",
            a.frame_index,
            b.frame_index,
            corrs.len()
        );
        return None;
    }
    let flow = corrs.iter().map(|c| (c.p - c.p_prime).norm()).sum::<f64>() / corrs.len() as f64
        * frame.scale();
    if flow < cfg.min_flow_px {
        log::warn!(
            "pair ({}, {}) rejected: no apparent motion",
            a.frame_index,
            b.frame_index
        );
        return None;
    }
    let mut selection = cfg.selection.clone();
    selection.robust.seed = seed;
    match select_motion_model(&corrs, &selection) {
        Ok(motion) => Some(PairEstimate {
            i: a.frame_index,
            j: b.frame_index,
            corrs,
            motion,
        }),
        Err(e) => {
            log::warn!("pair ({}, {}) rejected: {e}", a.frame_index, b.frame_index);
            None
        }
    }
}

fn unit_bearing(
    p: &nalgebra::Vector2<f64>,
    focal: f64,
    d: RadialDistortion,
) -> Option<Vector3<f64>> {
    let u = undistort_to_plane(p, d).ok()?;
    Some(Vector3::new(u.x / focal, u.y / focal, 1.0).normalize())
}

/// Rotation best aligning the first bearings onto the second.
fn align_bearings(pairs: impl Iterator<Item = (Vector3<f64>, Vector3<f64>)>) -> Option<Rotation> {
    let mut h = Matrix3::zeros();
    let mut n = 0;
    for (b1, b2) in pairs {
        h += b2 * b1.transpose();
        n += 1;
    }
    (n >= 2).then(|| nearest_rotation(&h))
}

/// Relative rotation of a pair under a sequence calibration `(focal, d)`
/// (normalized focal). Rotation pairs align their inlier bearings directly;
/// fundamental pairs are re-estimated as essential matrices on calibrated
/// points and decomposed.
fn calibrated_rotation(
    pair: &PairEstimate,
    focal: f64,
    d: RadialDistortion,
    robust: &RobustConfig,
) -> Option<(Rotation, usize)> {
    match pair.motion.kind {
        MotionKind::PureRotation => {
            let inliers = &pair.motion.inlier_ids;
            let r = align_bearings(inliers.iter().filter_map(|&k| {
                Some((
                    unit_bearing(&pair.corrs[k].p, focal, d)?,
                    unit_bearing(&pair.corrs[k].p_prime, focal, d)?,
                ))
            }))?;
            Some((r, inliers.len()))
        }
        MotionKind::FundamentalSpherical => {
            let calibrated: Vec<Correspondence> = pair
                .corrs
                .iter()
                .filter_map(|c| c.undistorted(d).ok())
                .map(|c| c.calibrated(focal))
                .collect();
            let cfg = RobustConfig {
                inlier_noise_sigma: robust.inlier_noise_sigma / focal,
                ..robust.clone()
            };
            let fit = mlesac(
                &calibrated,
                &FundamentalEstimator {
                    estimate_distortion: false,
                },
                &cfg,
            )
            .ok()?;
            let e = SphericalEssential::from_params(fit.model.fundamental.params()).ok()?;
            let inliers: Vec<Correspondence> = fit.inliers.iter().map(|&k| calibrated[k]).collect();
            let pose = decompose_spherical_essential(&e, &inliers).ok()?;
            Some((pose.rotation, fit.inliers.len()))
        }
    }
}

/// Relative rotation from the pair's own models, used before the sequence is
/// calibrated.
fn uncalibrated_rotation(pair: &PairEstimate) -> Option<(Rotation, usize)> {
    let m = &pair.motion;
    match (m.kind, &m.f_model, &m.r_model) {
        (MotionKind::PureRotation, _, Some((r, _, _))) => Some((*r, m.inlier_ids.len())),
        (MotionKind::FundamentalSpherical, Some((f, d)), _) => {
            let e = essential_from_fundamental(f, FALLBACK_FOCAL).ok()?;
            let inliers: Vec<Correspondence> = m
                .inlier_ids
                .iter()
                .filter_map(|&k| pair.corrs[k].undistorted(*d).ok())
                .map(|c| c.calibrated(FALLBACK_FOCAL))
                .collect();
            let pose = decompose_spherical_essential(&e, &inliers).ok()?;
            Some((pose.rotation, m.inlier_ids.len()))
        }
        _ => None,
    }
}

fn run_parallel<T: Send, F: Fn(usize) -> Option<T> + Sync>(
    n: usize,
    threads: usize,
    f: F,
) -> Vec<Option<T>> {
    let threads = if threads == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        threads
    }
    .min(n.max(1));
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= n {
                    break;
                }
                let r = f(k);
                out.lock().unwrap()[k] = r;
            });
        }
    });
    out.into_inner().unwrap()
}

/// Component labels of the keyframes under the edges; returns the number of
/// components and the first keyframe not connected to the first one.
fn connectivity(keyframes: &[usize], edges: &[(usize, usize)]) -> (usize, Option<usize>) {
    let index = |f: usize| keyframes.binary_search(&f).ok();
    let mut parent: Vec<usize> = (0..keyframes.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for &(a, b) in edges {
        if let (Some(a), Some(b)) = (index(a), index(b)) {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra] = rb;
        }
    }
    let roots: Vec<usize> = (0..keyframes.len()).map(|k| find(&mut parent, k)).collect();
    let mut distinct = roots.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let unreached = roots
        .iter()
        .position(|r| *r != roots[0])
        .map(|k| keyframes[k]);
    (distinct.len(), unreached)
}

pub(crate) fn check_connected(
    keyframes: &[usize],
    edges: &[(usize, usize)],
) -> Result<(), PipelineError> {
    match connectivity(keyframes, edges) {
        (components, Some(unreached)) => Err(PipelineError::DisconnectedGraph {
            components,
            unreached,
        }),
        _ => Ok(()),
    }
}

/// Estimates the motion model of every keyframe pair at the configured
/// strides, calibrates the sequence from them when possible, and attaches a
/// relative rotation to every edge. Pairs with too few shared tracks, no
/// apparent motion, or no acceptable model are dropped.
pub fn build_view_graph(
    keyframes: &[Keyframe],
    frame: &ImageFrame,
    cfg: &ViewGraphConfig,
) -> Result<Vec<ViewGraphEdge>, PipelineError> {
    if keyframes.len() < 2 {
        return Err(PipelineError::TooFewKeyframes {
            needed: 2,
            got: keyframes.len(),
        });
    }
    if cfg.strides.is_empty() || cfg.strides.contains(&0) {
        return Err(PipelineError::InvalidConfig(
            "view graph strides must be non-empty and positive".into(),
        ));
    }
    let mut jobs = Vec::new();
    for a in 0..keyframes.len() {
        for &s in &cfg.strides {
            if a + s < keyframes.len() {
                jobs.push((a, a + s));
            }
        }
    }
    let base_seed = cfg.selection.robust.seed;
    let pairs: Vec<PairEstimate> = run_parallel(jobs.len(), cfg.threads, |k| {
        let (a, b) = jobs[k];
        estimate_pair(
            &keyframes[a],
            &keyframes[b],
            frame,
            cfg,
            base_seed.wrapping_add(k as u64),
        )
    })
    .into_iter()
    .flatten()
    .collect();

    let calibration = calibrate_motions(pairs.iter().map(|p| &p.motion)).ok();
    let robust = &cfg.selection.robust;
    let rotations = run_parallel(pairs.len(), cfg.threads, |k| match calibration {
        Some((f, d)) => calibrated_rotation(&pairs[k], f, d, robust),
        None => uncalibrated_rotation(&pairs[k]),
    });
    let mut edges = Vec::new();
    for (pair, rot) in pairs.into_iter().zip(rotations) {
        match rot {
            Some((relative_rotation, support)) => edges.push(ViewGraphEdge {
                i: pair.i,
                j: pair.j,
                motion: pair.motion,
                relative_rotation,
                support,
            }),
            None => log::warn!(
                "pair ({}, {}) dropped: no relative rotation",
                pair.i,
                pair.j
            ),
        }
    }
    let ids: Vec<usize> = keyframes.iter().map(|k| k.frame_index).collect();
    check_connected(&ids, &edges.iter().map(|e| (e.i, e.j)).collect::<Vec<_>>())?;
    Ok(edges)
}

/// `(normalized focal, distortion)` voted over pairwise motions.
fn calibrate_motions<'a>(
    motions: impl Iterator<Item = &'a PairwiseMotion> + Clone,
) -> Result<(f64, RadialDistortion), PipelineError> {
    let focals: Vec<f64> = motions
        .clone()
        .filter_map(|m| {
            m.r_model
                .as_ref()
                .filter(|_| m.kind == MotionKind::PureRotation)
        })
        .map(|r| r.1)
        .collect();
    let focal = kernel_vote(&focals, None).map_err(|_| PipelineError::CalibrationImpossible)?;
    let lambdas: Vec<f64> = motions.map(|m| m.distortion().lambda).collect();
    let lambda = kernel_vote(&lambdas, None).unwrap_or(0.0);
    Ok((focal, RadialDistortion::new(lambda)))
}

/// Sequence calibration by kernel voting: focal length over the pure-rotation
/// edges, distortion over all edges.
pub fn calibrate_sequence(
    edges: &[ViewGraphEdge],
    frame: &ImageFrame,
) -> Result<(Intrinsics, RadialDistortion), PipelineError> {
    let (focal, d) = calibrate_motions(edges.iter().map(|e| &e.motion))?;
    Ok((Intrinsics::from_normalized_focal(focal, frame)?, d))
}
