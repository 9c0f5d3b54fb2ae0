//! Relative pose solvers for cameras moving on a sphere, plus the general
//! eight-point baseline they are compared against.

mod decompose;
mod eight_point;
mod four_point;
pub(crate) mod lm;
pub mod poly;
mod refine;
mod rotation_focal;
mod six_point;

pub use decompose::{decompose_spherical_essential, RelativePose};
pub use eight_point::solve_f_8pt_general;
pub use four_point::{nullspace_basis, solve_spherical_f_4pt, NullspaceBasis};
pub use refine::refine_fundamental;
pub use rotation_focal::{
    focal_from_rotation_homography, homography_transfer_error, refine_rotation_focal_lambda,
    rotation_homography, solve_rotation_focal_lambda, HomographyEstimator, RotationFocalEstimate,
};
pub use six_point::{solve_spherical_f_lambda_6pt, GepFilter};

use nalgebra::{Matrix2, Matrix3, Vector3};
use thiserror::Error;

use crate::geom::{Correspondence, GeomError, RadialDistortion, SphericalFundamental};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("need at least {needed} correspondences, got {got}")]
    NotEnoughCorrespondences { needed: usize, got: usize },
    #[error("correspondence coordinates are not finite")]
    NonFinite,
    #[error("points are collinear in image {0}")]
    Collinear(u8),
    #[error("rank-deficient data: nullspace dimension exceeds {0}")]
    RankDeficient(usize),
    #[error(
        "degenerate configuration: every model in the solution family is singular (zero baseline)"
    )]
    Degenerate,
    #[error("no real, bounded, structure-consistent solution")]
    NoValidSolution,
    #[error("pose decomposition is ambiguous: two candidates tie")]
    AmbiguousDecomposition,
    #[error("no pose candidate places the points in front of both cameras consistently with spherical motion")]
    Cheirality,
    #[error("no positive focal length estimate for any distortion hypothesis")]
    NoValidFocal,
    #[error("insufficient inliers: {0}")]
    InsufficientInliers(usize),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// One solution of a fundamental-matrix solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalCandidate {
    pub fundamental: SphericalFundamental,
    /// Present for solvers that also estimate radial distortion.
    pub distortion: Option<RadialDistortion>,
}

impl FundamentalCandidate {
    pub fn distortion_or_none(&self) -> RadialDistortion {
        self.distortion.unwrap_or(RadialDistortion::NONE)
    }

    /// First-order distance (squared) of a distorted correspondence to the
    /// model, measured in the observed image coordinates.
    pub fn residual(&self, c: &Correspondence) -> f64 {
        distorted_sampson_error(&self.fundamental.matrix(), self.distortion_or_none(), c)
    }
}

/// Sampson error of `u'^T F u = 0` with `u = [x, y, 1 + lambda r^2]`, taken
/// with respect to the distorted coordinates. Equals
/// [`crate::geom::sampson_error`] when `lambda = 0`; infinite when undefined.
pub fn distorted_sampson_error(f: &Matrix3<f64>, d: RadialDistortion, c: &Correspondence) -> f64 {
    let (Ok(u), Ok(up)) = (
        crate::geom::undistort_point(&c.p, d),
        crate::geom::undistort_point(&c.p_prime, d),
    ) else {
        return f64::INFINITY;
    };
    let fu = f * u;
    let ftup = f.transpose() * up;
    let g = up.dot(&fu);
    let l2 = 2.0 * d.lambda;
    let gx = ftup.x + ftup.z * l2 * c.p.x;
    let gy = ftup.y + ftup.z * l2 * c.p.y;
    let gxp = fu.x + fu.z * l2 * c.p_prime.x;
    let gyp = fu.y + fu.z * l2 * c.p_prime.y;
    let denom = gx * gx + gy * gy + gxp * gxp + gyp * gyp;
    if !(denom >= 1e-20) {
        return f64::INFINITY;
    }
    g * g / denom
}

/// Candidate list returned by the fundamental-matrix solvers.
pub type SolverOutput = Vec<FundamentalCandidate>;

pub(crate) fn check_input(corrs: &[Correspondence], needed: usize) -> Result<(), SolverError> {
    if corrs.len() < needed {
        return Err(SolverError::NotEnoughCorrespondences {
            needed,
            got: corrs.len(),
        });
    }
    if !corrs.iter().all(Correspondence::is_finite) {
        return Err(SolverError::NonFinite);
    }
    if collinear(corrs.iter().map(|c| c.p)) {
        return Err(SolverError::Collinear(1));
    }
    if collinear(corrs.iter().map(|c| c.p_prime)) {
        return Err(SolverError::Collinear(2));
    }
    Ok(())
}

/// True when the scatter of the points has (numerically) no extent in some
/// direction.
pub(crate) fn collinear(points: impl Iterator<Item = nalgebra::Vector2<f64>> + Clone) -> bool {
    let n = points.clone().count() as f64;
    let mean = points
        .clone()
        .fold(nalgebra::Vector2::zeros(), |acc, p| acc + p)
        / n;
    let cov = points.fold(Matrix2::zeros(), |acc, p| {
        let d = p - mean;
        acc + d * d.transpose()
    });
    let eig = cov.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    hi <= 0.0 || lo <= 1e-12 * hi
}

/// Gradient of `det(F)` with respect to the six structured parameters.
pub(crate) fn structured_det_gradient(f: &Matrix3<f64>) -> [f64; 6] {
    let r0: Vector3<f64> = f.row(0).transpose();
    let r1: Vector3<f64> = f.row(1).transpose();
    let r2: Vector3<f64> = f.row(2).transpose();
    // Rows of the cofactor matrix.
    let c0 = r1.cross(&r2);
    let c1 = r2.cross(&r0);
    let c2 = r0.cross(&r1);
    [c0.x - c1.y, c0.y + c1.x, c0.z, c1.z, c2.x, c2.y]
}

/// Moves structured parameters onto `det(F) = 0` with a few Newton steps
/// restricted to the structured subspace; returns `None` if the projection
/// does not converge.
pub(crate) fn project_to_singular(params: [f64; 6]) -> Option<[f64; 6]> {
    let mut a = crate::geom::canonicalize(&params).ok()?;
    for _ in 0..8 {
        let m = crate::geom::structured_matrix(&a);
        let det = m.determinant();
        if det.abs() < 1e-15 {
            break;
        }
        let g = structured_det_gradient(&m);
        let gg: f64 = g.iter().map(|v| v * v).sum();
        if gg < 1e-30 {
            return None;
        }
        for k in 0..6 {
            a[k] -= det / gg * g[k];
        }
        a = crate::geom::canonicalize(&a).ok()?;
    }
    let det = crate::geom::structured_matrix(&a).determinant();
    (det.abs() < 1e-12).then_some(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn det_gradient_matches_finite_differences() {
        let a = [0.3, -0.2, 0.5, 0.1, -0.4, 0.7];
        let g = structured_det_gradient(&crate::geom::structured_matrix(&a));
        for k in 0..6 {
            let h = 1e-6;
            let (mut p, mut m) = (a, a);
            p[k] += h;
            m[k] -= h;
            let fd = (crate::geom::structured_matrix(&p).determinant()
                - crate::geom::structured_matrix(&m).determinant())
                / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-8, "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn distorted_sampson_matches_plain_sampson_without_distortion() {
        let f = crate::geom::structured_matrix(&[0.3, -0.2, 0.5, 0.1, -0.4, 0.7]);
        let c = Correspondence::new(
            nalgebra::Vector2::new(0.1, -0.2),
            nalgebra::Vector2::new(0.15, -0.18),
        );
        let a = distorted_sampson_error(&f, RadialDistortion::NONE, &c);
        let b = crate::geom::sampson_error(&f, &c).unwrap();
        assert!((a - b).abs() <= 1e-15 * b.max(1e-300));
    }

    #[test]
    fn distorted_sampson_approximates_observed_distance() {
        // Move a point perpendicular to its epipolar curve; first-order error
        // must match the squared displacement.
        let f = crate::geom::structured_matrix(&[0.3, -0.2, 0.5, 0.1, -0.4, 0.7]);
        let d = RadialDistortion::new(-0.3);
        let p = nalgebra::Vector2::new(0.12, -0.07);
        let u = crate::geom::undistort_point(&p, d).unwrap();
        let line = f * u;
        // Find p' on the curve by bisection along x.
        let g = |x: f64, y: f64| {
            crate::geom::undistort_point(&nalgebra::Vector2::new(x, y), d)
                .unwrap()
                .dot(&line)
        };
        let y0 = 0.05;
        let (mut lo, mut hi) = (-0.5, 0.5);
        assert!(g(lo, y0) * g(hi, y0) < 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(lo, y0) * g(mid, y0) <= 0.0 {
                hi = mid
            } else {
                lo = mid
            }
        }
        let on = nalgebra::Vector2::new(0.5 * (lo + hi), y0);
        let h = 1e-6;
        let grad = nalgebra::Vector2::new(
            (g(on.x + h, on.y) - g(on.x - h, on.y)) / (2.0 * h),
            (g(on.x, on.y + h) - g(on.x, on.y - h)) / (2.0 * h),
        );
        let off = on + grad.normalize() * 1e-4;
        let e = distorted_sampson_error(&f, d, &Correspondence::new(p, off));
        // The error is shared between both images, so it is at most the
        // one-sided squared displacement.
        assert!(e > 0.0 && e <= 1e-8 * 1.0001, "{e}");
        assert!(e > 0.1e-8);
    }

    #[test]
    fn singular_projection() {
        let a = [0.3, -0.2, 0.5, 0.1, -0.4, 0.7];
        let p = project_to_singular(a).unwrap();
        assert!(crate::geom::structured_matrix(&p).determinant().abs() < 1e-12);
    }
}
