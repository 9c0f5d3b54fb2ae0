use std::collections::{BTreeMap, HashMap};
use std::ops::{AddAssign, SubAssign};

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x2, SMatrix, Vector2, Vector3};

use super::camera::Camera;
use super::structure::{keyframe_observations, landmark_in_camera, Landmark};
use super::{PipelineError, Reconstruction};
use crate::geom::{skew, Intrinsics, RadialDistortion, Rotation, SphericalPose, OPTICAL_AXIS};
use crate::tracks::TrackSet;

/// Bundle adjustment variants of the refinement schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Sphere prior, no filtering.
    A,
    /// Sphere prior, filtering.
    B,
    /// Unconstrained, filtering.
    C,
    /// Unconstrained, filtering, focal length and distortion refined.
    D,
}

impl Strategy {
    pub fn sphere_prior(self) -> bool {
        matches!(self, Strategy::A | Strategy::B)
    }

    pub fn filters(self) -> bool {
        !matches!(self, Strategy::A)
    }

    pub fn optimizes_intrinsics(self) -> bool {
        matches!(self, Strategy::D)
    }
}

impl TryFrom<char> for Strategy {
    type Error = PipelineError;

    fn try_from(c: char) -> Result<Self, Self::Error> {
        match c {
            'A' => Ok(Strategy::A),
            'B' => Ok(Strategy::B),
            'C' => Ok(Strategy::C),
            'D' => Ok(Strategy::D),
            _ => Err(PipelineError::InvalidConfig(format!(
                "unknown bundle adjustment strategy '{c}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaConfig {
    /// Weight of the squared sphere-prior residual, relative to squared
    /// reprojection residuals in normalized image units.
    pub sphere_prior_weight: f64,
    /// Landmarks with a larger reprojection error (pixels) in any
    /// observation are removed by the filtering strategies.
    pub reprojection_filter_threshold: f64,
    pub max_lm_iterations: usize,
    pub schedule: String,
    /// Huber threshold on per-observation reprojection error, pixels.
    pub huber_px: f64,
    /// Whether strategy D refines the distortion along with the focal length.
    pub optimize_distortion: bool,
}

impl Default for BaConfig {
    fn default() -> Self {
        Self {
            sphere_prior_weight: 100.0,
            reprojection_filter_threshold: 4.0,
            max_lm_iterations: 50,
            schedule: "ABABCD".into(),
            huber_px: 2.0,
            optimize_distortion: true,
        }
    }
}

impl BaConfig {
    pub fn strategies(&self) -> Result<Vec<Strategy>, PipelineError> {
        if self.schedule.is_empty() {
            return Err(PipelineError::InvalidConfig(
                "bundle adjustment schedule is empty".into(),
            ));
        }
        if !(self.sphere_prior_weight >= 0.0 && self.sphere_prior_weight.is_finite()) {
            return Err(PipelineError::InvalidConfig(format!(
                "sphere prior weight must be finite and >= 0, got {}",
                self.sphere_prior_weight
            )));
        }
        if !(self.reprojection_filter_threshold > 0.0 && self.huber_px > 0.0) {
            return Err(PipelineError::InvalidConfig(
                "filter threshold and Huber threshold must be positive".into(),
            ));
        }
        self.schedule.chars().map(Strategy::try_from).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaReport {
    /// Objective after the initial filtering.
    pub initial_cost: f64,
    /// Objective at the optimum, before the final filtering.
    pub final_cost: f64,
    pub accepted_steps: usize,
    /// Landmarks removed by filtering, before and after optimization.
    pub filtered: usize,
}

/// Scale pinning the first baseline length in the unconstrained strategies,
/// pixels per unit of length.
const GAUGE_WEIGHT: f64 = 1e3;

/// Cameras whose center information in the reduced system falls below this
/// (squared pixels per squared unit of length; a center standard deviation
/// of 1% of the radius under unit pixel noise) have their center tied to
/// their orientation for the run.
const MIN_CENTER_INFORMATION: f64 = 1e4;

struct Problem<'a> {
    strategy: Strategy,
    cfg: &'a BaConfig,
    frame: crate::geom::ImageFrame,
    frames: Vec<usize>,
    /// Landmarks and their observations `(camera slot, pixel)`.
    points: Vec<(u64, Vec<(usize, Vector2<f64>)>)>,
    n_intrinsics: usize,
    /// `(a, b, length)`: camera pairs whose distance is held fixed, one per
    /// rigid block in the unconstrained strategies.
    baselines: Vec<(usize, usize, f64)>,
    /// Cameras whose center the observations do not determine. Their center
    /// follows their orientation, `c = c0 + r (R^T - R0^T) z`, instead of
    /// being a free parameter; `r` is the radius at the start of the run.
    slaved: Vec<Option<f64>>,
}

#[derive(Clone)]
struct State {
    poses: Vec<SphericalPose>,
    landmarks: Vec<Landmark>,
    focal: f64,
    lambda: f64,
}

/// Orthonormal basis of the plane orthogonal to a unit vector.
fn tangent_basis(b: &Vector3<f64>) -> Matrix3x2<f64> {
    let axis = if b.x.abs() < 0.6 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let e1 = b.cross(&axis).normalize();
    let e2 = b.cross(&e1);
    Matrix3x2::from_columns(&[e1, e2])
}

fn huber(s: f64, k: f64) -> f64 {
    if s <= k {
        s * s
    } else {
        2.0 * k * s - k * k
    }
}

type Row2x6 = SMatrix<f64, 2, 6>;

/// Jacobian of one observation.
struct ObsJacobian {
    residual: Vector2<f64>,
    /// With respect to the observing camera `[omega, center]`; `None` when the
    /// observing camera is the anchor (no pose dependence).
    observer: Option<Row2x6>,
    anchor: Option<Row2x6>,
    landmark: SMatrix<f64, 2, 3>,
    intrinsics: SMatrix<f64, 2, 2>,
}

impl<'a> Problem<'a> {
    fn camera(&self, s: &State) -> Camera {
        Camera::new(s.focal, RadialDistortion::new(s.lambda), self.frame)
    }

    fn prior_scale(&self) -> f64 {
        self.cfg.sphere_prior_weight.sqrt() * self.frame.scale()
    }

    fn prior_residual(&self, c: &Vector3<f64>) -> Vector3<f64> {
        (c - c / c.norm()) * self.prior_scale()
    }

    fn prior_jacobian(&self, c: &Vector3<f64>) -> Matrix3<f64> {
        let n = c.norm();
        let chat = c / n;
        (Matrix3::identity() - (Matrix3::identity() - chat * chat.transpose()) / n)
            * self.prior_scale()
    }

    fn gauge_residual(&self, s: &State, (a, b, l0): (usize, usize, f64)) -> f64 {
        GAUGE_WEIGHT * self.frame.scale() * ((s.poses[b].center - s.poses[a].center).norm() - l0)
    }

    fn cost(&self, s: &State) -> Option<f64> {
        let cam = self.camera(s);
        let mut total = 0.0;
        for ((_, obs), l) in self.points.iter().zip(&s.landmarks) {
            let anchor = &s.poses[obs[0].0];
            for (k, px) in obs {
                let p = cam.project(&landmark_in_camera(l, anchor, &s.poses[*k]))?;
                total += huber((p - px).norm(), self.cfg.huber_px);
            }
        }
        if self.strategy.sphere_prior() {
            total += s
                .poses
                .iter()
                .enumerate()
                .skip(1)
                .filter(|(k, _)| self.slaved[*k].is_none())
                .map(|(_, p)| self.prior_residual(&p.center).norm_squared())
                .sum::<f64>();
        }
        Some(
            total
                + self
                    .baselines
                    .iter()
                    .map(|&g| self.gauge_residual(s, g).powi(2))
                    .sum::<f64>(),
        )
    }

    /// Reprojection residual and Jacobian of observation `(k, px)` of `l`
    /// anchored in camera `a`. Landmarks are anchored at their first
    /// observation.
    fn observation(
        &self,
        s: &State,
        cam: &Camera,
        l: &Landmark,
        a: usize,
        k: usize,
        px: &Vector2<f64>,
    ) -> Option<ObsJacobian> {
        let (pa, pk) = (&s.poses[a], &s.poses[k]);
        let x = landmark_in_camera(l, pa, pk);
        let p = cam.project_with_jacobian(&x)?;
        let basis = tangent_basis(&l.bearing);
        let rk = *pk.rotation.matrix();
        let rka = rk * pa.rotation.matrix().transpose();
        let mut landmark = SMatrix::<f64, 3, 3>::zeros();
        landmark
            .fixed_view_mut::<3, 2>(0, 0)
            .copy_from(&(rka * basis));
        let (observer, anchor) = if k == a {
            (None, None)
        } else {
            landmark.set_column(2, &(rk * (pa.center - pk.center)));
            let mut jo = SMatrix::<f64, 3, 6>::zeros();
            jo.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&x)));
            jo.fixed_view_mut::<3, 3>(0, 3)
                .copy_from(&(-l.inverse_depth * rk));
            let mut ja = SMatrix::<f64, 3, 6>::zeros();
            ja.fixed_view_mut::<3, 3>(0, 0)
                .copy_from(&(rka * skew(&l.bearing)));
            ja.fixed_view_mut::<3, 3>(0, 3)
                .copy_from(&(l.inverse_depth * rk));
            (
                Some(self.slave_columns(k, pk, p.d_point * jo)),
                Some(self.slave_columns(a, pa, p.d_point * ja)),
            )
        };
        Some(ObsJacobian {
            residual: p.pixel - px,
            observer,
            anchor,
            landmark: p.d_point * landmark,
            intrinsics: SMatrix::<f64, 2, 2>::from_columns(&[p.d_focal, p.d_lambda]),
        })
    }

    /// Derivative of a camera center with respect to `[omega, center]`. A
    /// slaved center moves with the rotation: `dc/domega = r R^T [z]x`.
    fn center_jacobian(&self, k: usize, pose: &SphericalPose) -> SMatrix<f64, 3, 6> {
        let mut j = SMatrix::<f64, 3, 6>::zeros();
        match self.slaved[k] {
            Some(r) => j
                .fixed_view_mut::<3, 3>(0, 0)
                .copy_from(&(pose.rotation.matrix().transpose() * skew(&OPTICAL_AXIS) * r)),
            None => j
                .fixed_view_mut::<3, 3>(0, 3)
                .copy_from(&Matrix3::identity()),
        }
        j
    }

    /// Folds the center columns of a slaved camera into its rotation
    /// columns.
    fn slave_columns(&self, k: usize, pose: &SphericalPose, mut j: Row2x6) -> Row2x6 {
        if self.slaved[k].is_some() {
            let jc = j.fixed_view::<2, 3>(0, 3) * self.center_jacobian(k, pose);
            j.fixed_view_mut::<2, 3>(0, 3).fill(0.0);
            j += jc;
        }
        j
    }

    fn apply(&self, s: &State, dc: &DVector<f64>, dl: &[Vector3<f64>]) -> State {
        let mut out = s.clone();
        for (k, pose) in out.poses.iter_mut().enumerate().skip(1) {
            let o = 6 * (k - 1);
            let before = pose.rotation;
            pose.rotation =
                Rotation::new(Vector3::new(dc[o], dc[o + 1], dc[o + 2])) * pose.rotation;
            match self.slaved[k] {
                Some(r) => {
                    pose.center += (pose.rotation.inverse() * OPTICAL_AXIS
                        - before.inverse() * OPTICAL_AXIS)
                        * r
                }
                None => pose.center += Vector3::new(dc[o + 3], dc[o + 4], dc[o + 5]),
            }
        }
        let io = 6 * (s.poses.len() - 1);
        if self.n_intrinsics >= 1 {
            out.focal += dc[io];
        }
        if self.n_intrinsics >= 2 {
            out.lambda += dc[io + 1];
        }
        for (l, d) in out.landmarks.iter_mut().zip(dl) {
            let basis = tangent_basis(&l.bearing);
            l.bearing = (l.bearing + basis * Vector2::new(d.x, d.y)).normalize();
            l.inverse_depth += d.z;
        }
        out
    }
}

/// Per-landmark blocks of the normal equations.
struct LandmarkBlock {
    v: Matrix3<f64>,
    g: Vector3<f64>,
    /// `(offset, rows)` of the camera-side parameter blocks and the matching
    /// rows of `W` (camera-by-landmark coupling).
    blocks: Vec<(usize, usize)>,
    w: DMatrix<f64>,
}

struct Linearization {
    u: DMatrix<f64>,
    g: DVector<f64>,
    points: Vec<LandmarkBlock>,
}

fn linearize(p: &Problem, s: &State) -> Option<Linearization> {
    let nc = 6 * (s.poses.len() - 1) + p.n_intrinsics;
    let io = 6 * (s.poses.len() - 1);
    let mut u = DMatrix::zeros(nc, nc);
    let mut g = DVector::zeros(nc);
    let cam = p.camera(s);
    let slot = |k: usize| (k > 0).then(|| 6 * (k - 1));
    let mut points = Vec::with_capacity(p.points.len());
    for ((_, obs), l) in p.points.iter().zip(&s.landmarks) {
        let a = obs[0].0;
        // Camera blocks touched by this landmark, in first-seen order.
        let mut blocks: Vec<(usize, usize)> = Vec::new();
        let mut local: HashMap<usize, usize> = HashMap::new();
        let mut rows_of = |offset: usize, rows: usize, blocks: &mut Vec<(usize, usize)>| -> usize {
            *local.entry(offset).or_insert_with(|| {
                let r = blocks.iter().map(|b| b.1).sum();
                blocks.push((offset, rows));
                r
            })
        };
        let mut wrows: Vec<(usize, usize, SMatrix<f64, 6, 3>)> = Vec::new();
        let mut v = Matrix3::zeros();
        let mut gl = Vector3::zeros();
        for (k, px) in obs {
            let j = p.observation(s, &cam, l, a, *k, px)?;
            let e = j.residual.norm();
            let w = if e <= p.cfg.huber_px {
                1.0
            } else {
                p.cfg.huber_px / e
            };
            let sw = w.sqrt();
            let r = j.residual * sw;
            let jl = j.landmark * sw;
            v += jl.transpose() * jl;
            gl += jl.transpose() * r;
            let mut cams: Vec<(usize, Row2x6)> = Vec::new();
            if let (Some(o), Some(jo)) = (slot(*k), j.observer) {
                cams.push((o, jo * sw));
            }
            if let (Some(o), Some(ja)) = (slot(a), j.anchor) {
                cams.push((o, ja * sw));
            }
            let ji = j.intrinsics.columns(0, p.n_intrinsics) * sw;
            for (x, (ox, jx)) in cams.iter().enumerate() {
                g.rows_mut(*ox, 6).add_assign(&(jx.transpose() * r));
                for (oy, jy) in &cams[x..] {
                    let block = jx.transpose() * jy;
                    u.view_mut((*ox, *oy), (6, 6)).add_assign(&block);
                    if ox != oy {
                        u.view_mut((*oy, *ox), (6, 6))
                            .add_assign(&block.transpose());
                    }
                }
                if p.n_intrinsics > 0 {
                    let block = jx.transpose() * &ji;
                    u.view_mut((*ox, io), (6, p.n_intrinsics))
                        .add_assign(&block);
                    u.view_mut((io, *ox), (p.n_intrinsics, 6))
                        .add_assign(&block.transpose());
                }
                let row = rows_of(*ox, 6, &mut blocks);
                wrows.push((row, 6, jx.transpose() * jl));
            }
            if p.n_intrinsics > 0 {
                g.rows_mut(io, p.n_intrinsics)
                    .add_assign(&(ji.transpose() * r));
                u.view_mut((io, io), (p.n_intrinsics, p.n_intrinsics))
                    .add_assign(&(ji.transpose() * &ji));
                let row = rows_of(io, p.n_intrinsics, &mut blocks);
                let mut wi = SMatrix::<f64, 6, 3>::zeros();
                wi.rows_mut(0, p.n_intrinsics)
                    .copy_from(&(ji.transpose() * jl));
                wrows.push((row, p.n_intrinsics, wi));
            }
        }
        let total: usize = blocks.iter().map(|b| b.1).sum();
        let mut wm = DMatrix::zeros(total, 3);
        for (row, n, m) in wrows {
            wm.view_mut((row, 0), (n, 3)).add_assign(&m.rows(0, n));
        }
        points.push(LandmarkBlock {
            v,
            g: gl,
            blocks,
            w: wm,
        });
    }
    if p.strategy.sphere_prior() {
        for (k, pose) in s
            .poses
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(k, _)| p.slaved[*k].is_none())
        {
            let j = p.prior_jacobian(&pose.center);
            let r = p.prior_residual(&pose.center);
            let o = 6 * (k - 1) + 3;
            u.view_mut((o, o), (3, 3)).add_assign(&(j.transpose() * j));
            g.rows_mut(o, 3).add_assign(&(j.transpose() * r));
        }
    }
    for &(a, b, l0) in &p.baselines {
        let d = s.poses[b].center - s.poses[a].center;
        let j = d.transpose() / d.norm() * GAUGE_WEIGHT * p.frame.scale();
        let r = p.gauge_residual(s, (a, b, l0));
        let rows: Vec<(usize, SMatrix<f64, 1, 6>)> = [(a, -1.0), (b, 1.0)]
            .into_iter()
            .filter_map(|(k, sign)| Some((slot(k)?, j * p.center_jacobian(k, &s.poses[k]) * sign)))
            .collect();
        for (ox, jx) in &rows {
            g.rows_mut(*ox, 6).add_assign(&(jx.transpose() * r));
            for (oy, jy) in &rows {
                u.view_mut((*ox, *oy), (6, 6))
                    .add_assign(&(jx.transpose() * jy));
            }
        }
    }
    for (k, r) in p.slaved.iter().enumerate().skip(1) {
        if r.is_some() {
            let o = 6 * (k - 1) + 3;
            for d in 0..3 {
                u[(o + d, o + d)] += 1.0;
            }
        }
    }
    Some(Linearization { u, g, points })
}

/// Damped reduced camera system `S dc = rhs` after eliminating the landmarks,
/// with the landmark block inverses for back substitution.
fn reduce(lin: &Linearization, mu: f64) -> Option<(DMatrix<f64>, DVector<f64>, Vec<Matrix3<f64>>)> {
    let nc = lin.u.nrows();
    let mut s = lin.u.clone();
    for d in 0..nc {
        s[(d, d)] += mu * lin.u[(d, d)].max(1e-9);
    }
    let mut rhs = -&lin.g;
    let mut inverses = Vec::with_capacity(lin.points.len());
    for pb in &lin.points {
        let mut v = pb.v;
        for d in 0..3 {
            v[(d, d)] += mu * pb.v[(d, d)].max(1e-9) + 1e-12;
        }
        let vinv = v.try_inverse()?;
        let t = &pb.w * vinv;
        let schur = &t * pb.w.transpose();
        let tg = &t * pb.g;
        let mut ro = 0;
        for &(ox, nx) in &pb.blocks {
            let mut co = 0;
            for &(oy, ny) in &pb.blocks {
                s.view_mut((ox, oy), (nx, ny))
                    .sub_assign(&schur.view((ro, co), (nx, ny)));
                co += ny;
            }
            rhs.rows_mut(ox, nx).add_assign(&tg.rows(ro, nx));
            ro += nx;
        }
        inverses.push(vinv);
    }
    Some((s, rhs, inverses))
}

/// Solves the damped normal equations by eliminating the landmarks.
fn solve(lin: &Linearization, mu: f64) -> Option<(DVector<f64>, Vec<Vector3<f64>>)> {
    let (s, rhs, inverses) = reduce(lin, mu)?;
    let dc = if s.nrows() == 0 {
        DVector::zeros(0)
    } else {
        s.cholesky()?.solve(&rhs)
    };
    let dl = lin
        .points
        .iter()
        .zip(&inverses)
        .map(|(pb, vinv)| {
            let mut wdc = Vector3::zeros();
            let mut ro = 0;
            for &(ox, nx) in &pb.blocks {
                wdc += pb.w.rows(ro, nx).transpose() * dc.rows(ox, nx);
                ro += nx;
            }
            vinv * (-pb.g - wdc)
        })
        .collect();
    Some((dc, dl))
}

/// Smallest eigenvalue of each camera's center block in the reduced camera
/// system, in squared pixels per squared unit of length. Small values mean
/// the observations leave the center (nearly) free.
fn center_information(lin: &Linearization, cameras: usize) -> Option<Vec<f64>> {
    let (s, _, _) = reduce(lin, 0.0)?;
    let mut info = vec![f64::INFINITY; cameras];
    for (k, v) in info.iter_mut().enumerate().skip(1) {
        let o = 6 * (k - 1) + 3;
        let block: Matrix3<f64> = s.fixed_view::<3, 3>(o, o).into();
        *v = block.symmetric_eigenvalues().min();
    }
    Some(info)
}

/// Landmarks nearer than this (inverse depth in units of the sphere radius)
/// tie the cameras observing them into one rigid block.
const RIGID_MIN_INVERSE_DEPTH: f64 = 0.02;
/// Consecutive observers must share this many such landmarks.
const RIGID_MIN_SHARED: usize = 10;

/// Non-slaved cameras grouped into blocks connected through shared finite
/// landmarks; each block sorted.
fn rigid_blocks(p: &Problem, s: &State) -> Vec<Vec<usize>> {
    let n = s.poses.len();
    let mut shared: HashMap<(usize, usize), usize> = HashMap::new();
    for ((_, obs), l) in p.points.iter().zip(&s.landmarks) {
        if l.inverse_depth < RIGID_MIN_INVERSE_DEPTH {
            continue;
        }
        let mut cams: Vec<usize> = obs
            .iter()
            .map(|o| o.0)
            .filter(|&k| p.slaved[k].is_none())
            .collect();
        cams.sort_unstable();
        for w in cams.windows(2) {
            *shared.entry((w[0], w[1])).or_default() += 1;
        }
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for (&(a, b), &c) in &shared {
        if c >= RIGID_MIN_SHARED {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for k in (0..n).filter(|&k| p.slaved[k].is_none()) {
        let root = find(&mut parent, k);
        groups.entry(root).or_default().push(k);
    }
    groups.into_values().collect()
}

/// Removes landmarks with a negative inverse depth, an unprojectable
/// observation, or an observation with reprojection error above the
/// threshold. Returns the number removed.
fn filter_landmarks(recon: &mut Reconstruction, tracks: &TrackSet, threshold: f64) -> usize {
    let camera = recon.camera();
    let by_id: HashMap<u64, &crate::tracks::Track> =
        tracks.tracks().iter().map(|t| (t.id, t)).collect();
    let before = recon.landmarks.len();
    let poses = &recon.poses;
    recon.landmarks.retain(|id, l| {
        if l.inverse_depth < 0.0 {
            return false;
        }
        let (Some(track), Some(anchor)) = (by_id.get(id), poses.get(&l.anchor_keyframe)) else {
            return false;
        };
        keyframe_observations(track, poses).all(|(k, px)| {
            camera
                .project(&landmark_in_camera(l, anchor, &poses[&k]))
                .is_some_and(|p| (p - px).norm() <= threshold)
        })
    });
    before - recon.landmarks.len()
}

/// Levenberg-Marquardt bundle adjustment over camera poses, landmarks
/// (bearing and inverse depth) and, for strategy D, the intrinsics.
///
/// Residuals are pixel reprojection errors with a Huber loss. The first
/// keyframe's pose is held fixed. Strategies A and B add a sphere prior on
/// every camera center; C and D pin the length of one baseline per rigid
/// block of cameras.
/// Filtering strategies drop outlying landmarks before and after optimizing.
pub fn bundle_adjust(
    recon: &Reconstruction,
    tracks: &TrackSet,
    strategy: Strategy,
    cfg: &BaConfig,
) -> Result<(Reconstruction, BaReport), PipelineError> {
    cfg.strategies()?;
    if recon.poses.len() < 2 {
        return Err(PipelineError::TooFewKeyframes {
            needed: 2,
            got: recon.poses.len(),
        });
    }
    let mut recon = recon.clone();
    let mut filtered = 0;
    if strategy.filters() {
        filtered += filter_landmarks(&mut recon, tracks, cfg.reprojection_filter_threshold);
    }

    let frames: Vec<usize> = recon.poses.keys().copied().collect();
    let slot: BTreeMap<usize, usize> = frames.iter().enumerate().map(|(k, f)| (*f, k)).collect();
    let camera = recon.camera();
    let by_id: HashMap<u64, &crate::tracks::Track> =
        tracks.tracks().iter().map(|t| (t.id, t)).collect();
    let mut points = Vec::new();
    let mut landmarks = Vec::new();
    for (id, l) in &recon.landmarks {
        let Some(track) = by_id.get(id) else { continue };
        let anchor = &recon.poses[&l.anchor_keyframe];
        // Anchor first; observations that cannot be projected stay out.
        let mut obs: Vec<(usize, Vector2<f64>)> = keyframe_observations(track, &recon.poses)
            .filter(|(k, _)| {
                camera
                    .project(&landmark_in_camera(l, anchor, &recon.poses[k]))
                    .is_some()
            })
            .map(|(k, px)| (slot[&k], px))
            .collect();
        obs.sort_by_key(|(k, _)| *k != slot[&l.anchor_keyframe]);
        if obs.len() < 2 || obs[0].0 != slot[&l.anchor_keyframe] {
            continue;
        }
        points.push((*id, obs));
        landmarks.push(*l);
    }
    let n_intrinsics = if strategy.optimizes_intrinsics() {
        1 + usize::from(cfg.optimize_distortion)
    } else {
        0
    };
    let poses: Vec<SphericalPose> = frames.iter().map(|f| recon.poses[f]).collect();
    let mut state = State {
        poses,
        landmarks,
        focal: camera.focal,
        lambda: camera.distortion.lambda,
    };
    let cameras = frames.len();
    let mut problem = Problem {
        strategy,
        cfg,
        frame: recon.frame,
        frames,
        points,
        n_intrinsics,
        baselines: vec![],
        slaved: vec![None; cameras],
    };
    if let Some(info) =
        linearize(&problem, &state).and_then(|lin| center_information(&lin, cameras))
    {
        for (k, v) in info.iter().enumerate().skip(1) {
            if *v < MIN_CENTER_INFORMATION {
                problem.slaved[k] = Some(state.poses[k].center.norm());
            }
        }
    }
    // Blocks of cameras held together by finite landmarks can move against
    // each other where only points at infinity link them. Each block other
    // than the anchor's has its most central camera slaved, which fixes its
    // translation; without the sphere prior, its longest baseline fixes its
    // scale.
    for block in rigid_blocks(&problem, &state) {
        let centers: Vec<Vector3<f64>> = block.iter().map(|&k| state.poses[k].center).collect();
        if block[0] != 0 {
            let mean = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
            let (k, _) = block
                .iter()
                .zip(&centers)
                .min_by(|a, b| (a.1 - mean).norm().total_cmp(&(b.1 - mean).norm()))
                .unwrap();
            problem.slaved[*k] = Some(state.poses[*k].center.norm());
        }
        if !strategy.sphere_prior() && block.len() > 1 {
            let mut best = (0, 0, 0.0);
            for a in 0..block.len() {
                for b in a + 1..block.len() {
                    let d = (centers[b] - centers[a]).norm();
                    if d > best.2 {
                        best = (block[a], block[b], d);
                    }
                }
            }
            problem.baselines.push(best);
        }
    }

    let initial_cost = problem.cost(&state).unwrap_or(f64::INFINITY);
    let mut cost = initial_cost;
    let mut mu = 1e-4;
    let mut accepted_steps = 0;
    let n_obs: usize = problem.points.iter().map(|p| p.1.len()).sum();
    for _ in 0..cfg.max_lm_iterations {
        if cost <= 1e-20 * n_obs.max(1) as f64 {
            break;
        }
        let Some(lin) = linearize(&problem, &state) else {
            break;
        };
        let mut improved = false;
        for _ in 0..10 {
            let Some((dc, dl)) = solve(&lin, mu) else {
                mu *= 10.0;
                continue;
            };
            let trial = problem.apply(&state, &dc, &dl);
            match problem.cost(&trial) {
                Some(c) if c < cost => {
                    let rel = (cost - c) / cost;
                    state = trial;
                    cost = c;
                    accepted_steps += 1;
                    mu = (mu / 3.0).max(1e-12);
                    improved = rel > 1e-10;
                    break;
                }
                _ => mu *= 10.0,
            }
        }
        if !improved {
            break;
        }
    }

    for (k, f) in problem.frames.iter().enumerate() {
        recon.poses.insert(*f, state.poses[k]);
    }
    for ((id, _), l) in problem.points.iter().zip(&state.landmarks) {
        recon.landmarks.insert(*id, *l);
    }
    if strategy.optimizes_intrinsics() {
        recon.intrinsics = Intrinsics::from_normalized_focal(state.focal, &recon.frame)?;
        recon.distortion = RadialDistortion::new(state.lambda);
    }
    if strategy.filters() {
        filtered += filter_landmarks(&mut recon, tracks, cfg.reprojection_filter_threshold);
    }
    Ok((
        recon,
        BaReport {
            initial_cost,
            final_cost: cost,
            accepted_steps,
            filtered,
        },
    ))
}

/// Largest relative difference between analytic Jacobian columns and
/// central finite differences, over `samples` random observations of `recon`
/// (with respect to both camera poses, the landmark and the intrinsics) and
/// the sphere-prior residual of every camera. `None` when no landmark has two
/// observations away from the anchor keyframe.
pub fn jacobian_check(
    recon: &Reconstruction,
    tracks: &TrackSet,
    samples: usize,
    seed: u64,
) -> Option<f64> {
    use rand::{Rng, SeedableRng};
    let cfg = BaConfig::default();
    let frames: Vec<usize> = recon.poses.keys().copied().collect();
    let poses: Vec<SphericalPose> = frames.iter().map(|f| recon.poses[f]).collect();
    let slaved = vec![None; frames.len()];
    let problem = Problem {
        strategy: Strategy::D,
        cfg: &cfg,
        frame: recon.frame,
        frames: frames.clone(),
        points: vec![],
        n_intrinsics: 2,
        baselines: vec![],
        slaved,
    };
    let base = State {
        poses,
        landmarks: vec![],
        focal: recon.camera().focal,
        lambda: recon.distortion.lambda,
    };
    let cam = problem.camera(&base);
    let blocks: Vec<_> = tracks
        .tracks()
        .iter()
        .filter_map(|t| {
            let l = *recon.landmarks.get(&t.id)?;
            let a = frames
                .binary_search(&l.anchor_keyframe)
                .ok()
                .filter(|&a| a > 0)?;
            let obs: Vec<_> = keyframe_observations(t, &recon.poses)
                .filter(|&(k, _)| k != frames[0] && k != l.anchor_keyframe)
                .collect();
            (!obs.is_empty()).then_some((l, a, obs))
        })
        .collect();
    if blocks.is_empty() {
        return None;
    }
    let column_error = |an: &[f64], fd: &[f64]| -> f64 {
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = an.iter().zip(fd).map(|(a, b)| a - b).collect();
        norm(&diff) / norm(an).max(norm(fd)).max(1e-3)
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let h = 1e-6;
    for _ in 0..samples {
        let (l, a, obs) = &blocks[rng.random_range(0..blocks.len())];
        let (kf, px) = obs[rng.random_range(0..obs.len())];
        let k = frames.binary_search(&kf).ok()?;
        let j = problem.observation(&base, &cam, l, *a, k, &px)?;
        // Parameters: observer pose (6), anchor pose (6), landmark (3),
        // intrinsics (2).
        let eval = |c: usize, step: f64| -> Option<Vector2<f64>> {
            let mut s = base.clone();
            s.landmarks = vec![*l];
            let mut dc = DVector::zeros(6 * (frames.len() - 1) + 2);
            let mut dl = Vector3::zeros();
            match c {
                0..=5 => dc[6 * (k - 1) + c] = step,
                6..=11 => dc[6 * (a - 1) + c - 6] = step,
                12..=14 => dl[c - 12] = step,
                _ => dc[6 * (frames.len() - 1) + c - 15] = step,
            }
            let s = problem.apply(&s, &dc, &[dl]);
            Some(
                problem
                    .observation(&s, &problem.camera(&s), &s.landmarks[0], *a, k, &px)?
                    .residual,
            )
        };
        let (observer, anchor) = (j.observer?, j.anchor?);
        for c in 0..17 {
            let an = match c {
                0..=5 => observer.column(c).into_owned(),
                6..=11 => anchor.column(c - 6).into_owned(),
                12..=14 => j.landmark.column(c - 12).into_owned(),
                _ => j.intrinsics.column(c - 15).into_owned(),
            };
            let fd = (eval(c, h)? - eval(c, -h)?) / (2.0 * h);
            worst = worst.max(column_error(an.as_slice(), fd.as_slice()));
        }
    }
    for pose in &base.poses {
        let an = problem.prior_jacobian(&pose.center);
        for c in 0..3 {
            let mut step = Vector3::zeros();
            step[c] = h;
            let fd = (problem.prior_residual(&(pose.center + step))
                - problem.prior_residual(&(pose.center - step)))
                / (2.0 * h);
            worst = worst.max(column_error(an.column(c).as_slice(), fd.as_slice()));
        }
    }
    Some(worst)
}
