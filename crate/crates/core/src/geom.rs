//! Camera model, one-parameter radial distortion and the structured
//! essential / fundamental matrices that arise when the camera moves on a
//! sphere while looking outward.
//!
//! Conventions used throughout the crate:
//!
//! * A camera with world-to-camera rotation `R` projects world point `X` as
//!   `x ~ K (R X - z)` with `z = [0, 0, 1]^T`, so its center is `R^T z`.
//! * Image coordinates are *normalized* before any estimation: translated by
//!   the image center and divided by `max(width, height)`. Focal length and
//!   the distortion parameter are expressed in these normalized units unless
//!   a name says otherwise (`*_px`).
//! * The relative rotation from camera `i` to camera `j` is `R_j R_i^T`.

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use thiserror::Error;

pub type Rotation = Rotation3<f64>;

/// Optical axis of a camera in its own frame.
pub const OPTICAL_AXIS: Vector3<f64> = Vector3::new(0.0, 0.0, 1.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeomError {
    #[error("point maps through infinity under the undistortion model (1 + lambda r^2 = {0})")]
    DegenerateUndistortion(f64),
    #[error("point at radius {radius} has no real distorted preimage for lambda = {lambda}")]
    NotInvertible { radius: f64, lambda: f64 },
    #[error("rotation leaves the optical axis fixed; relative translation is zero")]
    ZeroBaseline,
    #[error("focal length must be positive and finite, got {0}")]
    InvalidFocal(f64),
    #[error("matrix does not have the spherical epipolar structure (deviation {0:e})")]
    NotStructured(f64),
    #[error("matrix is zero or not finite")]
    ZeroMatrix,
    #[error("sampson error undefined: gradient magnitude {0:e} too small")]
    SampsonDegenerate(f64),
}

/// Pixel grid of an image and the normalization applied before estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageFrame {
    pub width: u32,
    pub height: u32,
}

impl ImageFrame {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    /// Normalization factor `max(width, height)`.
    pub fn scale(&self) -> f64 {
        self.width.max(self.height) as f64
    }

    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    pub fn normalize(&self, px: &Vector2<f64>) -> Vector2<f64> {
        (px - self.center()) / self.scale()
    }

    pub fn denormalize(&self, p: &Vector2<f64>) -> Vector2<f64> {
        p * self.scale() + self.center()
    }

    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x < self.width as f64 && px.y < self.height as f64
    }
}

/// Simplified pinhole intrinsics: zero skew, unit aspect ratio.
///
/// Stored in pixel units; [`Intrinsics::normalized_focal`] converts to the
/// units the solvers work in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    focal: f64,
    principal_point: Vector2<f64>,
}

impl Intrinsics {
    pub fn new(focal: f64, principal_point: Vector2<f64>) -> Result<Self, GeomError> {
        if !(focal.is_finite() && focal > 0.0) {
            return Err(GeomError::InvalidFocal(focal));
        }
        Ok(Self {
            focal,
            principal_point,
        })
    }

    /// Intrinsics with the principal point at the image center.
    pub fn centered(focal: f64, frame: &ImageFrame) -> Result<Self, GeomError> {
        Self::new(focal, frame.center())
    }

    pub fn from_normalized_focal(focal: f64, frame: &ImageFrame) -> Result<Self, GeomError> {
        Self::centered(focal * frame.scale(), frame)
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        self.focal
    }

    pub fn principal_point(&self) -> Vector2<f64> {
        self.principal_point
    }

    pub fn skew(&self) -> f64 {
        0.0
    }

    pub fn aspect(&self) -> f64 {
        1.0
    }

    pub fn normalized_focal(&self, frame: &ImageFrame) -> f64 {
        self.focal / frame.scale()
    }
}

/// `K = diag(f, f, 1)` in whatever units `focal` is given.
pub fn calibration_matrix(focal: f64) -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(focal, focal, 1.0))
}

/// One-parameter division ("undistortion") model in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RadialDistortion {
    pub lambda: f64,
}

impl RadialDistortion {
    pub const NONE: RadialDistortion = RadialDistortion { lambda: 0.0 };

    pub fn new(lambda: f64) -> Self {
        Self { lambda }
    }
}

/// Maps a distorted normalized point to the homogeneous undistorted point
/// `[x, y, 1 + lambda (x^2 + y^2)]`.
pub fn undistort_point(p: &Vector2<f64>, d: RadialDistortion) -> Result<Vector3<f64>, GeomError> {
    let w = 1.0 + d.lambda * p.norm_squared();
    if w <= 1e-12 {
        return Err(GeomError::DegenerateUndistortion(w));
    }
    Ok(Vector3::new(p.x, p.y, w))
}

/// Dehomogenized undistorted location of a distorted normalized point.
pub fn undistort_to_plane(
    p: &Vector2<f64>,
    d: RadialDistortion,
) -> Result<Vector2<f64>, GeomError> {
    let h = undistort_point(p, d)?;
    Ok(Vector2::new(h.x / h.z, h.y / h.z))
}

/// Radial factor `g` with `distorted = g * undistorted`, as a function of
/// `t = lambda * r_u^2`. Root of `t g^2 - g + 1 = 0` continuous at `t = 0`.
pub(crate) fn distortion_factor(t: f64) -> Option<f64> {
    let disc = 1.0 - 4.0 * t;
    if disc < 0.0 {
        return None;
    }
    Some(2.0 / (1.0 + disc.sqrt()))
}

/// Derivative of [`distortion_factor`] with respect to `t`.
pub(crate) fn distortion_factor_derivative(t: f64) -> f64 {
    let s = (1.0 - 4.0 * t).sqrt();
    4.0 / ((1.0 + s) * (1.0 + s) * s)
}

/// Inverse of [`undistort_to_plane`]: finds the distorted point whose
/// undistortion is `p_u`.
pub fn distort_point(p_u: &Vector2<f64>, d: RadialDistortion) -> Result<Vector2<f64>, GeomError> {
    let r2 = p_u.norm_squared();
    match distortion_factor(d.lambda * r2) {
        Some(g) => Ok(p_u * g),
        None => Err(GeomError::NotInvertible {
            radius: r2.sqrt(),
            lambda: d.lambda,
        }),
    }
}

/// A normalized image correspondence `p` (image 1) <-> `p_prime` (image 2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub p: Vector2<f64>,
    pub p_prime: Vector2<f64>,
}

impl Correspondence {
    pub fn new(p: Vector2<f64>, p_prime: Vector2<f64>) -> Self {
        Self { p, p_prime }
    }

    pub fn is_finite(&self) -> bool {
        self.p
            .iter()
            .chain(self.p_prime.iter())
            .all(|v| v.is_finite())
    }

    /// Both points undistorted with the same model.
    pub fn undistorted(&self, d: RadialDistortion) -> Result<Correspondence, GeomError> {
        Ok(Self::new(
            undistort_to_plane(&self.p, d)?,
            undistort_to_plane(&self.p_prime, d)?,
        ))
    }

    /// Both points divided by a focal length, giving calibrated coordinates.
    pub fn calibrated(&self, focal: f64) -> Correspondence {
        Self::new(self.p / focal, self.p_prime / focal)
    }
}

/// Pose of a camera constrained (softly, after refinement) to a sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalPose {
    pub rotation: Rotation,
    pub center: Vector3<f64>,
}

impl SphericalPose {
    /// Pose on the unit sphere determined by the rotation: `center = R^T z`.
    pub fn from_rotation(rotation: Rotation) -> Self {
        let center = rotation.inverse() * OPTICAL_AXIS;
        Self { rotation, center }
    }

    /// Point in camera coordinates.
    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (world - self.center)
    }
}

/// Entry layout shared by the structured essential and fundamental matrices:
///
/// ```text
/// [ a1  a2  a3 ]
/// [ a2 -a1  a4 ]
/// [ a5  a6  0  ]
/// ```
pub(crate) fn structured_matrix(a: &[f64; 6]) -> Matrix3<f64> {
    Matrix3::new(a[0], a[1], a[2], a[1], -a[0], a[3], a[4], a[5], 0.0)
}

pub(crate) fn structured_norm(a: &[f64; 6]) -> f64 {
    (2.0 * a[0] * a[0] + 2.0 * a[1] * a[1] + a[2..].iter().map(|v| v * v).sum::<f64>()).sqrt()
}

/// Unit Frobenius norm, first nonzero entry of the row-major scan positive.
pub(crate) fn canonicalize(a: &[f64; 6]) -> Result<[f64; 6], GeomError> {
    let n = structured_norm(a);
    if !(n.is_finite() && n > 0.0) {
        return Err(GeomError::ZeroMatrix);
    }
    let mut out = a.map(|v| v / n);
    // Row-major scan visits a1, a2, a3, (a2), (-a1), a4, a5, a6.
    let lead = out.iter().copied().find(|v| v.abs() > 1e-12).unwrap_or(0.0);
    if lead < 0.0 {
        out.iter_mut().for_each(|v| *v = -*v);
    }
    Ok(out)
}

fn structure_deviation(m: &Matrix3<f64>) -> f64 {
    let scale = m.norm().max(f64::MIN_POSITIVE);
    ((m[(0, 0)] + m[(1, 1)]).abs() + (m[(0, 1)] - m[(1, 0)]).abs() + m[(2, 2)].abs()) / scale
}

fn params_from_matrix(m: &Matrix3<f64>, tol: f64) -> Result<[f64; 6], GeomError> {
    let dev = structure_deviation(m);
    if dev > tol {
        return Err(GeomError::NotStructured(dev));
    }
    let a1 = 0.5 * (m[(0, 0)] - m[(1, 1)]);
    let a2 = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    Ok([a1, a2, m[(0, 2)], m[(1, 2)], m[(2, 0)], m[(2, 1)]])
}

macro_rules! structured_epipolar {
    ($name:ident) => {
        #[derive(Debug, Clone, Copy, PartialEq)]
        pub struct $name {
            params: [f64; 6],
        }

        impl $name {
            /// Builds the matrix from its six free entries, rescaled to the
            /// canonical scale and sign.
            pub fn from_params(params: [f64; 6]) -> Result<Self, GeomError> {
                Ok(Self {
                    params: canonicalize(&params)?,
                })
            }

            /// Accepts a full matrix whose zero/symmetry pattern holds to
            /// `1e-9` relative; the pattern is then imposed exactly.
            pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self, GeomError> {
                Self::from_params(params_from_matrix(m, 1e-9)?)
            }

            pub fn params(&self) -> [f64; 6] {
                self.params
            }

            pub fn matrix(&self) -> Matrix3<f64> {
                structured_matrix(&self.params)
            }

            pub fn determinant(&self) -> f64 {
                self.matrix().determinant()
            }
        }
    };
}

structured_epipolar!(SphericalEssential);
structured_epipolar!(SphericalFundamental);

/// `F = K^-T E K^-1` for `K = diag(f, f, 1)`, with `f` in the units of the
/// image coordinates the fundamental matrix will be applied to.
pub fn fundamental_from_essential(
    e: &SphericalEssential,
    focal: f64,
) -> Result<SphericalFundamental, GeomError> {
    if !(focal.is_finite() && focal > 0.0) {
        return Err(GeomError::InvalidFocal(focal));
    }
    let p = e.params;
    SphericalFundamental::from_params([
        p[0],
        p[1],
        focal * p[2],
        focal * p[3],
        focal * p[4],
        focal * p[5],
    ])
}

/// `E = K^T F K`, the inverse of [`fundamental_from_essential`].
pub fn essential_from_fundamental(
    f: &SphericalFundamental,
    focal: f64,
) -> Result<SphericalEssential, GeomError> {
    if !(focal.is_finite() && focal > 0.0) {
        return Err(GeomError::InvalidFocal(focal));
    }
    let p = f.params;
    SphericalEssential::from_params([
        p[0],
        p[1],
        p[2] / focal,
        p[3] / focal,
        p[4] / focal,
        p[5] / focal,
    ])
}

/// Translation of the second camera relative to the first for spherical
/// motion: `t = (R - I) z`.
pub fn spherical_translation(relative: &Rotation) -> Vector3<f64> {
    relative * OPTICAL_AXIS - OPTICAL_AXIS
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Essential matrix `[t]_x R` of two cameras on the unit sphere related by
/// `relative` (camera 1 at identity).
pub fn relative_pose_to_essential(relative: &Rotation) -> Result<SphericalEssential, GeomError> {
    let t = spherical_translation(relative);
    if t.norm() < 1e-12 {
        return Err(GeomError::ZeroBaseline);
    }
    let e = skew(&t) * relative.matrix();
    debug_assert!(structure_deviation(&e) * t.norm().min(1.0) < 1e-10);
    Ok(SphericalEssential {
        params: canonicalize(&params_from_matrix(&e, f64::INFINITY)?)?,
    })
}

/// First-order (Sampson) approximation of the squared distance of a
/// correspondence to the epipolar manifold of `f`.
pub fn sampson_error(f: &Matrix3<f64>, c: &Correspondence) -> Result<f64, GeomError> {
    let x = Vector3::new(c.p.x, c.p.y, 1.0);
    let xp = Vector3::new(c.p_prime.x, c.p_prime.y, 1.0);
    let fx = f * x;
    let ftxp = f.transpose() * xp;
    let denom = fx.x * fx.x + fx.y * fx.y + ftxp.x * ftxp.x + ftxp.y * ftxp.y;
    if !(denom >= 1e-20) {
        return Err(GeomError::SampsonDegenerate(denom));
    }
    let num = xp.dot(&fx);
    Ok(num * num / denom)
}

/// Frobenius distance between two matrices after both are scaled to unit norm
/// and the sign ambiguity is resolved in favor of the closer alignment.
pub fn aligned_frobenius_error(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let a = a / a.norm();
    let b = b / b.norm();
    (a - b).norm().min((a + b).norm())
}

/// Closest rotation in the Frobenius sense (orthogonal polar factor).
pub fn nearest_rotation(m: &Matrix3<f64>) -> Rotation {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    Rotation::from_matrix_unchecked(u * d * v_t)
}

/// Geodesic angle between two rotations, radians.
pub fn rotation_distance(a: &Rotation, b: &Rotation) -> f64 {
    let m = a.matrix().transpose() * b.matrix();
    let sin = 0.5
        * Vector3::new(
            m[(2, 1)] - m[(1, 2)],
            m[(0, 2)] - m[(2, 0)],
            m[(1, 0)] - m[(0, 1)],
        )
        .norm();
    let cos = 0.5 * (m.trace() - 1.0);
    sin.atan2(cos)
}

/// Axis-angle vector of a rotation. Stable for matrices that have drifted
/// slightly off SO(3), where an `acos` of the trace would give NaN.
pub fn rotation_log(r: &Rotation) -> Vector3<f64> {
    let m = r.matrix();
    let skew = 0.5
        * Vector3::new(
            m[(2, 1)] - m[(1, 2)],
            m[(0, 2)] - m[(2, 0)],
            m[(1, 0)] - m[(0, 1)],
        );
    let sin = skew.norm();
    let cos = 0.5 * (m.trace() - 1.0);
    let angle = sin.atan2(cos);
    if sin < 1e-12 && cos > 0.0 {
        return skew;
    }
    if angle > std::f64::consts::PI - 1e-6 {
        return Rotation::from_matrix(m).scaled_axis();
    }
    skew * (angle / sin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assert_structured(m: &Matrix3<f64>, tol: f64) {
        assert!((m[(0, 0)] + m[(1, 1)]).abs() < tol, "{m}");
        assert!((m[(0, 1)] - m[(1, 0)]).abs() < tol, "{m}");
        assert!(m[(2, 2)].abs() < tol, "{m}");
    }

    fn random_rotation(rng: &mut impl Rng, max_angle: f64) -> Rotation {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        Rotation::from_scaled_axis(axis * rng.random_range(0.01..max_angle))
    }

    #[test]
    fn undistort_center_is_fixed() {
        let h = undistort_point(&Vector2::zeros(), RadialDistortion::new(-0.3)).unwrap();
        assert_eq!(h, Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn undistort_identity_without_distortion() {
        let p = Vector2::new(0.31, -0.27);
        assert_eq!(
            undistort_point(&p, RadialDistortion::NONE).unwrap(),
            Vector3::new(p.x, p.y, 1.0)
        );
    }

    #[test]
    fn undistort_direct_evaluation() {
        let u = undistort_to_plane(&Vector2::new(0.5, 0.5), RadialDistortion::new(-0.2)).unwrap();
        // 1 + lambda r^2 = 1 - 0.2 * 0.5 = 0.9
        assert_relative_eq!(u.x, 0.5 / 0.9, epsilon = 1e-15);
        assert_relative_eq!(u.y, 0.5 / 0.9, epsilon = 1e-15);
        assert_relative_eq!(u.x, 0.5556, epsilon = 1e-4);
    }

    #[test]
    fn undistort_through_infinity_is_an_error() {
        let err =
            undistort_point(&Vector2::new(2.0, 0.0), RadialDistortion::new(-0.25)).unwrap_err();
        assert!(matches!(err, GeomError::DegenerateUndistortion(_)));
    }

    #[test]
    fn distort_without_distortion_and_on_axis() {
        let p = Vector2::new(0.4, 0.1);
        assert_eq!(distort_point(&p, RadialDistortion::NONE).unwrap(), p);
        for lambda in [-0.9, -0.2, 0.0, 0.4] {
            assert_eq!(
                distort_point(&Vector2::zeros(), RadialDistortion::new(lambda)).unwrap(),
                Vector2::zeros()
            );
        }
    }

    #[test]
    fn distort_reports_missing_real_root() {
        let err = distort_point(&Vector2::new(1.0, 0.0), RadialDistortion::new(0.5)).unwrap_err();
        assert!(matches!(err, GeomError::NotInvertible { .. }));
    }

    #[test]
    fn distortion_round_trip_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = RadialDistortion::new(-0.3);
        let mut max_err: f64 = 0.0;
        for _ in 0..1000 {
            let p = Vector2::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            let back = distort_point(&undistort_to_plane(&p, d).unwrap(), d).unwrap();
            max_err = max_err.max((back - p).norm());
        }
        assert!(max_err < 1e-10, "{max_err}");
    }

    #[test]
    fn fundamental_equals_essential_at_unit_focal() {
        let r = Rotation::from_euler_angles(0.03, -0.05, 0.02);
        let e = relative_pose_to_essential(&r).unwrap();
        let f = fundamental_from_essential(&e, 1.0).unwrap();
        assert_relative_eq!(f.matrix(), e.matrix(), epsilon = 1e-15);
    }

    #[test]
    fn fundamental_satisfies_pixel_epipolar_constraint() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let focal = 1200.0;
        for _ in 0..20 {
            let r = random_rotation(&mut rng, 0.2);
            let f = fundamental_from_essential(&relative_pose_to_essential(&r).unwrap(), focal)
                .unwrap()
                .matrix();
            let p1 = SphericalPose::from_rotation(Rotation::identity());
            let p2 = SphericalPose::from_rotation(r);
            for _ in 0..10 {
                let world = Vector3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(6.0..10.0),
                ) + OPTICAL_AXIS;
                let (c1, c2) = (p1.to_camera(&world), p2.to_camera(&world));
                let x1 = Vector3::new(focal * c1.x / c1.z, focal * c1.y / c1.z, 1.0);
                let x2 = Vector3::new(focal * c2.x / c2.z, focal * c2.y / c2.z, 1.0);
                let residual = x2.dot(&(f * x1)) / (x1.norm() * x2.norm());
                assert!(residual.abs() < 1e-12, "{residual}");
            }
        }
    }

    #[test]
    fn essential_fundamental_round_trip() {
        let r = Rotation::from_euler_angles(0.1, 0.02, -0.07);
        let e = relative_pose_to_essential(&r).unwrap();
        for focal in [0.5, 0.625, 1.7, 5.0] {
            let back =
                essential_from_fundamental(&fundamental_from_essential(&e, focal).unwrap(), focal)
                    .unwrap();
            assert!((back.matrix() - e.matrix()).norm() < 1e-12);
        }
    }

    #[test]
    fn essential_structure_about_x_axis() {
        let r = Rotation::from_axis_angle(&Vector3::x_axis(), 5f64.to_radians());
        let t = spherical_translation(&r);
        let e_full = skew(&t) * r.matrix();
        assert_structured(&e_full, 1e-16);
        let e = relative_pose_to_essential(&r).unwrap();
        assert_structured(&e.matrix(), 1e-16);
        assert_relative_eq!(e.matrix().norm(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn identity_rotation_has_zero_baseline() {
        assert_eq!(
            relative_pose_to_essential(&Rotation::identity()),
            Err(GeomError::ZeroBaseline)
        );
        let roll = Rotation::from_axis_angle(&Vector3::z_axis(), 0.3);
        assert_eq!(
            relative_pose_to_essential(&roll),
            Err(GeomError::ZeroBaseline)
        );
    }

    #[test]
    fn essential_epipolar_residuals_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let r = random_rotation(&mut rng, 0.3);
            let e = relative_pose_to_essential(&r).unwrap().matrix();
            let p2 = SphericalPose::from_rotation(r);
            for _ in 0..20 {
                let world = Vector3::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(6.0..10.0),
                ) + OPTICAL_AXIS;
                let c1 = world - OPTICAL_AXIS;
                let c2 = p2.to_camera(&world);
                let residual = (c2 / c2.z).dot(&(e * (c1 / c1.z)));
                assert!(residual.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sampson_error_is_scale_invariant_and_vanishes_on_exact_data() {
        let r = Rotation::from_euler_angles(0.05, 0.08, 0.01);
        let f = fundamental_from_essential(&relative_pose_to_essential(&r).unwrap(), 0.625)
            .unwrap()
            .matrix();
        let world = Vector3::new(0.7, -0.4, 8.0) + OPTICAL_AXIS;
        let c1 = world - OPTICAL_AXIS;
        let c2 = SphericalPose::from_rotation(r).to_camera(&world);
        let c = Correspondence::new(
            Vector2::new(c1.x / c1.z, c1.y / c1.z) * 0.625,
            Vector2::new(c2.x / c2.z, c2.y / c2.z) * 0.625,
        );
        assert!(sampson_error(&f, &c).unwrap() < 1e-18);

        let shifted = Correspondence::new(c.p, c.p_prime + Vector2::new(0.01, -0.02));
        let a = sampson_error(&f, &shifted).unwrap();
        let b = sampson_error(&(f * 7.0), &shifted).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }

    #[test]
    fn sampson_error_of_unit_pixel_offset() {
        // Generic geometry in pixel units; offset the second point by 1 px
        // perpendicular to its epipolar line.
        let focal = 1200.0;
        let r = Rotation::from_euler_angles(0.02, 0.09, -0.03);
        let f = fundamental_from_essential(&relative_pose_to_essential(&r).unwrap(), focal)
            .unwrap()
            .matrix();
        let world = Vector3::new(1.1, 0.5, 7.0) + OPTICAL_AXIS;
        let c1 = world - OPTICAL_AXIS;
        let c2 = SphericalPose::from_rotation(r).to_camera(&world);
        let x1 = Vector2::new(c1.x / c1.z, c1.y / c1.z) * focal;
        let x2 = Vector2::new(c2.x / c2.z, c2.y / c2.z) * focal;
        // Unit step along the gradient of x2^T F x1 in the joint (x1, x2) space.
        let l2 = f * Vector3::new(x1.x, x1.y, 1.0);
        let l1 = f.transpose() * Vector3::new(x2.x, x2.y, 1.0);
        let g = nalgebra::Vector4::new(l1.x, l1.y, l2.x, l2.y).normalize();
        let c = Correspondence::new(x1 + Vector2::new(g[0], g[1]), x2 + Vector2::new(g[2], g[3]));
        let e = sampson_error(&f, &c).unwrap();
        assert!(e > 0.5 && e < 2.0, "{e}");
    }

    #[test]
    fn sampson_error_rejects_zero_gradient() {
        let c = Correspondence::new(Vector2::zeros(), Vector2::zeros());
        assert!(matches!(
            sampson_error(&Matrix3::zeros(), &c),
            Err(GeomError::SampsonDegenerate(_))
        ));
    }

    #[test]
    fn canonical_sign_and_scale() {
        let f = SphericalFundamental::from_params([-2.0, 1.0, 0.5, 0.0, 3.0, -1.0]).unwrap();
        assert!(f.params()[0] > 0.0);
        assert_relative_eq!(f.matrix().norm(), 1.0, epsilon = 1e-15);
        let zero_lead =
            SphericalFundamental::from_params([0.0, -1.0, 0.5, 0.0, 3.0, -1.0]).unwrap();
        assert!(zero_lead.params()[1] > 0.0);
        assert_eq!(
            SphericalFundamental::from_params([0.0; 6]),
            Err(GeomError::ZeroMatrix)
        );
    }

    #[test]
    fn from_matrix_rejects_unstructured() {
        let m = Matrix3::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0);
        assert!(matches!(
            SphericalFundamental::from_matrix(&m),
            Err(GeomError::NotStructured(_))
        ));
    }

    #[test]
    fn spherical_pose_center() {
        assert_eq!(
            SphericalPose::from_rotation(Rotation::identity()).center,
            Vector3::new(0.0, 0.0, 1.0)
        );
        let r = Rotation::from_euler_angles(0.3, -1.2, 2.0);
        let pose = SphericalPose::from_rotation(r);
        assert_relative_eq!(pose.center.norm(), 1.0, epsilon = 1e-15);
        assert!(pose.to_camera(&pose.center).norm() < 1e-15);
    }

    #[test]
    fn image_frame_normalization_round_trip() {
        let frame = ImageFrame::new(1920, 1080);
        let px = Vector2::new(100.25, 1000.5);
        assert_relative_eq!(
            frame.denormalize(&frame.normalize(&px)),
            px,
            epsilon = 1e-12
        );
        assert_eq!(frame.normalize(&frame.center()), Vector2::zeros());
        let k = Intrinsics::centered(1200.0, &frame).unwrap();
        assert_relative_eq!(k.normalized_focal(&frame), 0.625);
        assert!(Intrinsics::centered(0.0, &frame).is_err());
    }

    proptest! {
        #[test]
        fn coordinate_scaling_preserves_structure(
            ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0,
            angle in 0.01f64..0.5, focal in 0.3f64..3.0, s in 0.01f64..100.0,
        ) {
            let axis = Vector3::new(ax, ay, az);
            prop_assume!(axis.norm() > 0.1);
            let r = Rotation::from_scaled_axis(axis.normalize() * angle);
            prop_assume!(spherical_translation(&r).norm() > 1e-6);
            let f = fundamental_from_essential(&relative_pose_to_essential(&r).unwrap(), focal).unwrap().matrix();
            let t = Matrix3::from_diagonal(&Vector3::new(1.0 / s, 1.0 / s, 1.0));
            let scaled = t * f * t;
            let scale = scaled.norm();
            prop_assert!((scaled[(0, 0)] + scaled[(1, 1)]).abs() <= 1e-12 * scale);
            prop_assert!((scaled[(0, 1)] - scaled[(1, 0)]).abs() <= 1e-12 * scale);
            prop_assert!(scaled[(2, 2)].abs() <= 1e-12 * scale);
        }

        #[test]
        fn essential_structure_holds_for_any_rotation(
            ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0, angle in 0.001f64..3.0,
        ) {
            let axis = Vector3::new(ax, ay, az);
            prop_assume!(axis.norm() > 0.1);
            let r = Rotation::from_scaled_axis(axis.normalize() * angle);
            prop_assume!(spherical_translation(&r).norm() > 1e-6);
            let t = spherical_translation(&r);
            let e = skew(&t) * r.matrix() / t.norm();
            prop_assert!((e[(0, 0)] + e[(1, 1)]).abs() <= 1e-12);
            prop_assert!((e[(0, 1)] - e[(1, 0)]).abs() <= 1e-12);
            prop_assert!(e[(2, 2)].abs() <= 1e-12);
            prop_assert!(e.determinant().abs() <= 1e-12);
        }

        #[test]
        fn distortion_round_trip(x in -0.6f64..0.6, y in -0.6f64..0.6, lambda in -1.0f64..0.5) {
            let p = Vector2::new(x, y);
            let r2 = p.norm_squared();
            // Invertible domain of the division model.
            prop_assume!(1.0 + lambda * r2 > 1e-3);
            prop_assume!(lambda <= 0.0 || r2 < 1.0 / lambda);
            let back = distort_point(&undistort_to_plane(&p, RadialDistortion::new(lambda)).unwrap(), RadialDistortion::new(lambda)).unwrap();
            prop_assert!((back - p).norm() < 1e-10);
        }

        #[test]
        fn essential_fundamental_round_trip_prop(
            ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0, angle in 0.01f64..0.5, focal in 0.5f64..5.0,
        ) {
            let axis = Vector3::new(ax, ay, az);
            prop_assume!(axis.norm() > 0.1);
            let r = Rotation::from_scaled_axis(axis.normalize() * angle);
            prop_assume!(spherical_translation(&r).norm() > 1e-6);
            let e = relative_pose_to_essential(&r).unwrap();
            let back = essential_from_fundamental(&fundamental_from_essential(&e, focal).unwrap(), focal).unwrap();
            prop_assert!((back.matrix() - e.matrix()).norm() < 1e-12);
        }
    }
}
