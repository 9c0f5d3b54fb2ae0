use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use super::SolverError;
use crate::geom::{spherical_translation, Correspondence, Rotation, SphericalEssential};

/// Relative motion `x2 = R x1 + t` from camera 1 to camera 2 coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

/// Depths `(d1, d2)` with `d2 x2 ~ d1 R x1 + t` in the least-squares sense.
fn two_ray_depths(r: &Matrix3<f64>, t: &Vector3<f64>, c: &Correspondence) -> Option<(f64, f64)> {
    let a = r * c.p.push(1.0);
    let b = -c.p_prime.push(1.0);
    let m = Matrix2::new(a.dot(&a), a.dot(&b), a.dot(&b), b.dot(&b));
    let rhs = Vector2::new(-a.dot(t), -b.dot(t));
    let d = m.try_inverse()? * rhs;
    Some((d.x, d.y))
}

/// Largest spherical consistency residual a candidate may have and still be
/// accepted.
const MAX_SPHERICAL_RESIDUAL: f64 = 1.0;

/// Rays closer than this (radians) after rotation carry no depth sign and do
/// not vote in the cheirality test; exact points at infinity fall here.
const MIN_PARALLAX: f64 = 1e-6;

/// Recovers `(R, t)` from a spherical essential matrix and calibrated
/// correspondences (undistorted, divided by the focal length).
///
/// Of the four SVD candidates, those placing at least half of the points
/// with nonzero parallax in front of both cameras are compared by how well `t` agrees in direction
/// with the translation `(R - I) z` implied by spherical motion. The result
/// has `t` scaled to that implied length.
pub fn decompose_spherical_essential(
    e: &SphericalEssential,
    corrs: &[Correspondence],
) -> Result<RelativePose, SolverError> {
    if corrs.is_empty() {
        return Err(SolverError::NotEnoughCorrespondences { needed: 1, got: 0 });
    }
    let svd = e.matrix().svd(true, true);
    let (mut u, mut v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    // Order by descending singular value so the null direction is last.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    u = Matrix3::from_columns(&order.map(|k| u.column(k).into_owned()));
    v_t = Matrix3::from_rows(&order.map(|k| v_t.row(k).into_owned()));
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v_t.determinant() < 0.0 {
        v_t = -v_t;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let t_dir: Vector3<f64> = u.column(2).into_owned();
    let rotations = [u * w * v_t, u * w.transpose() * v_t];

    let mut accepted: Vec<(f64, Rotation, Vector3<f64>)> = Vec::new();
    for r in rotations {
        let informative: Vec<&Correspondence> = corrs
            .iter()
            .filter(|c| (r * c.p.push(1.0)).angle(&c.p_prime.push(1.0)) > MIN_PARALLAX)
            .collect();
        for sign in [1.0, -1.0] {
            let t = t_dir * sign;
            let votes = informative
                .iter()
                .filter(
                    |c| matches!(two_ray_depths(&r, &t, c), Some((d1, d2)) if d1 > 0.0 && d2 > 0.0),
                )
                .count();
            if votes == 0 || votes < informative.len().div_ceil(2) {
                continue;
            }
            let rot = Rotation::from_matrix_unchecked(r);
            let s = spherical_translation(&rot);
            let s_norm = s.norm();
            if s_norm < 1e-12 {
                continue;
            }
            let residual = (t - s / s_norm).norm();
            if residual <= MAX_SPHERICAL_RESIDUAL {
                accepted.push((residual, rot, t * s_norm));
            }
        }
    }
    accepted.sort_by(|a, b| a.0.total_cmp(&b.0));
    match accepted.as_slice() {
        [] => Err(SolverError::Cheirality),
        [a, b, ..] if (b.0 - a.0).abs() <= 1e-9 => Err(SolverError::AmbiguousDecomposition),
        [best, ..] => Ok(RelativePose {
            rotation: best.1,
            translation: best.2,
        }),
    }
}
