//! Six-point solver for the spherical fundamental matrix together with a
//! shared one-parameter radial distortion, posed as a generalized eigenvalue
//! problem `C2 f = -lambda C1 f`.

use nalgebra::{DMatrix, Matrix2, Matrix4, Matrix6, Vector2, Vector4, Vector6};

use super::four_point::epipolar_row;
use super::{check_input, project_to_singular, FundamentalCandidate, SolverError, SolverOutput};
use crate::geom::{structured_matrix, Correspondence, RadialDistortion, SphericalFundamental};

/// Acceptance rules for eigenpairs of the distortion pencil.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GepFilter {
    /// Reject eigenvalues with `|im| > max_imag_ratio * |re|`.
    pub max_imag_ratio: f64,
    /// Reject `|lambda|` above this bound (normalized units).
    pub max_abs_lambda: f64,
    /// Reject eigenvectors whose unit-norm `F` has `|det F|` above this.
    pub max_abs_det: f64,
}

impl Default for GepFilter {
    fn default() -> Self {
        Self {
            max_imag_ratio: 1e-8,
            max_abs_lambda: 10.0,
            max_abs_det: 1e-2,
        }
    }
}

/// Rows of the pencil: `(C2 row, C1 row)` such that the undistorted epipolar
/// constraint is `(C2 + lambda C1) f = 0`.
pub(crate) fn pencil_rows(c: &Correspondence) -> ([f64; 6], [f64; 6]) {
    let r2 = c.p.norm_squared();
    let r2p = c.p_prime.norm_squared();
    let (x, y) = (c.p.x, c.p.y);
    let (xp, yp) = (c.p_prime.x, c.p_prime.y);
    (
        epipolar_row(c),
        [0.0, 0.0, xp * r2, yp * r2, x * r2p, y * r2p],
    )
}

/// Null vector of a rank-3 4x4 matrix from the cofactors of its best
/// conditioned triple of rows.
fn null_vector4(n: &Matrix4<f64>) -> Vector4<f64> {
    let mut best = Vector4::zeros();
    let mut best_norm = -1.0;
    for skip in 0..4 {
        let rows: Vec<usize> = (0..4).filter(|&r| r != skip).collect();
        let v = Vector4::from_fn(|k, _| {
            let cols: Vec<usize> = (0..4).filter(|&c| c != k).collect();
            let m = nalgebra::Matrix3::from_fn(|i, j| n[(rows[i], cols[j])]);
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign * m.determinant()
        });
        let norm = v.norm();
        if norm > best_norm {
            best_norm = norm;
            best = v;
        }
    }
    best / best_norm
}

/// Newton iterations on `(A + lambda B) b = 0, v^T b = 1` starting from an
/// eigenpair estimate; returns the polished pair or the input if Newton does
/// not reduce the residual.
fn polish_eigenpair(
    a: &Matrix4<f64>,
    b: &Matrix4<f64>,
    lambda: f64,
    vec: Vector4<f64>,
) -> (f64, Vector4<f64>) {
    let v = vec;
    let (mut l, mut x) = (lambda, vec);
    let residual = |l: f64, x: &Vector4<f64>| ((a + b * l) * x).norm() / x.norm();
    let mut best = residual(l, &x);
    for _ in 0..4 {
        let m = a + b * l;
        let mut jac = nalgebra::Matrix5::<f64>::zeros();
        jac.fixed_view_mut::<4, 4>(0, 0).copy_from(&m);
        jac.fixed_view_mut::<4, 1>(0, 4).copy_from(&(b * x));
        jac.fixed_view_mut::<1, 4>(4, 0).copy_from(&v.transpose());
        let r = m * x;
        let rhs = nalgebra::Vector5::new(-r[0], -r[1], -r[2], -r[3], 1.0 - v.dot(&x));
        let Some(step) = jac.lu().solve(&rhs) else {
            break;
        };
        let nx = x + step.fixed_rows::<4>(0);
        let nl = l + step[4];
        let nr = residual(nl, &nx);
        if !(nr < best) {
            break;
        }
        best = nr;
        l = nl;
        x = nx;
    }
    (l, x / x.norm())
}

/// Eigenvalues `lambda` of the 4x4 pencil `(A + lambda B) b = 0` that pass the
/// realness and magnitude filters.
fn pencil_eigenvalues(a: &Matrix4<f64>, b: &Matrix4<f64>, filter: &GepFilter) -> Vec<f64> {
    let scale = a.norm().max(b.norm());
    let b_lu = b.lu();
    let direct = b_lu.determinant().abs() > 1e-12 * scale.powi(4);
    let m = if direct {
        match b_lu.solve(a) {
            Some(m) => m,
            None => return Vec::new(),
        }
    } else {
        match a.lu().solve(b) {
            Some(m) => m,
            None => return Vec::new(),
        }
    };
    let mut out = Vec::with_capacity(4);
    for ev in m.complex_eigenvalues().iter() {
        if !(ev.re.is_finite() && ev.im.is_finite())
            || ev.im.abs() > filter.max_imag_ratio * ev.re.abs()
        {
            continue;
        }
        let lambda = if direct {
            -ev.re
        } else if ev.re.abs() > 1e-14 {
            -1.0 / ev.re
        } else {
            continue;
        };
        if lambda.abs() <= filter.max_abs_lambda {
            out.push(lambda);
        }
    }
    out
}

/// Minimizes `||(C2 + lambda C1) f||` over unit `f` and `lambda` by
/// alternating the two closed-form partial minimizations.
fn refine_overdetermined(
    c2: &DMatrix<f64>,
    c1: &DMatrix<f64>,
    mut lambda: f64,
) -> Option<(f64, Vector6<f64>)> {
    // Compress the n x 12 system to 12 x 12 first; norms are unchanged.
    let stacked = DMatrix::from_fn(c2.nrows(), 12, |i, j| {
        if j < 6 {
            c2[(i, j)]
        } else {
            c1[(i, j - 6)]
        }
    });
    let r = stacked.qr().r();
    let r2 = r.columns(0, 6).into_owned();
    let r1 = r.columns(6, 6).into_owned();
    let mut f = Vector6::zeros();
    for _ in 0..100 {
        let m = &r2 + &r1 * lambda;
        let svd = m.svd(false, true);
        let v_t = svd.v_t?;
        let (idx, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))?;
        f = Vector6::from_fn(|k, _| v_t[(idx, k)]);
        let c1f = &r1 * f;
        let c2f = &r2 * f;
        let denom = c1f.norm_squared();
        if denom < 1e-30 {
            break;
        }
        let next = -c1f.dot(&c2f) / denom;
        let done = (next - lambda).abs() <= 1e-14 * (1.0 + lambda.abs());
        lambda = next;
        if done {
            break;
        }
    }
    lambda.is_finite().then_some((lambda, f))
}

/// Six-point solver for `(F, lambda)`. With more than six correspondences the
/// pencil is first projected onto the column space of `C2` to seed the
/// eigenvalues, then each seed is refined against the full system.
pub fn solve_spherical_f_lambda_6pt(corrs: &[Correspondence]) -> Result<SolverOutput, SolverError> {
    solve_with_filter(corrs, &GepFilter::default())
}

pub(crate) fn solve_with_filter(
    corrs: &[Correspondence],
    filter: &GepFilter,
) -> Result<SolverOutput, SolverError> {
    check_input(corrs, 6)?;
    let n = corrs.len();
    let rows: Vec<_> = corrs.iter().map(pencil_rows).collect();

    let (p2, p1, full) = if n == 6 {
        let p2 = Matrix6::from_fn(|i, j| rows[i].0[j]);
        let p1 = Matrix6::from_fn(|i, j| rows[i].1[j]);
        (p2, p1, None)
    } else {
        let c2 = DMatrix::from_fn(n, 6, |i, j| rows[i].0[j]);
        let c1 = DMatrix::from_fn(n, 6, |i, j| rows[i].1[j]);
        let qr = c2.clone().qr();
        let q = qr.q();
        let p2 = Matrix6::from_iterator(qr.r().iter().copied());
        let p1 = Matrix6::from_iterator((q.transpose() * &c1).iter().copied());
        (p2, p1, Some((c2, c1)))
    };

    // Eliminate f1, f2 (absent from C1) with an orthogonal transform.
    let qr = p2.qr();
    let qt = qr.q().transpose();
    let t2 = qt * p2;
    let t1 = qt * p1;
    let a: Matrix4<f64> = t2.fixed_view::<4, 4>(2, 2).into_owned();
    let b: Matrix4<f64> = t1.fixed_view::<4, 4>(2, 2).into_owned();
    let r_aa: Matrix2<f64> = t2.fixed_view::<2, 2>(0, 0).into_owned();
    let r_aa_inv = r_aa.try_inverse();

    let mut out: SolverOutput = Vec::new();
    for lambda in pencil_eigenvalues(&a, &b, filter) {
        let Some(r_aa_inv) = r_aa_inv else { break };
        let (lambda, bvec) = polish_eigenpair(&a, &b, lambda, null_vector4(&(a + b * lambda)));
        if lambda.abs() > filter.max_abs_lambda {
            continue;
        }
        let upper = t2.fixed_view::<2, 4>(0, 2) + t1.fixed_view::<2, 4>(0, 2) * lambda;
        let avec: Vector2<f64> = -(r_aa_inv * (upper * bvec));
        let mut f = Vector6::new(avec.x, avec.y, bvec[0], bvec[1], bvec[2], bvec[3]);
        let mut lambda = lambda;
        if let Some((c2, c1)) = &full {
            match refine_overdetermined(c2, c1, lambda) {
                Some((l, refined)) => {
                    lambda = l;
                    f = refined;
                }
                None => continue,
            }
            if lambda.abs() > filter.max_abs_lambda {
                continue;
            }
        }
        let params: [f64; 6] = std::array::from_fn(|k| f[k]);
        let Ok(unit) = crate::geom::canonicalize(&params) else {
            continue;
        };
        if !(structured_matrix(&unit).determinant().abs() <= filter.max_abs_det) {
            continue;
        }
        let Some(singular) = project_to_singular(unit) else {
            continue;
        };
        let Ok(fundamental) = SphericalFundamental::from_params(singular) else {
            continue;
        };
        let duplicate = out.iter().any(|o| {
            crate::geom::aligned_frobenius_error(&o.fundamental.matrix(), &fundamental.matrix())
                < 1e-10
                && (o.distortion_or_none().lambda - lambda).abs() < 1e-10
        });
        if !duplicate {
            out.push(FundamentalCandidate {
                fundamental,
                distortion: Some(RadialDistortion::new(lambda)),
            });
        }
    }
    if out.is_empty() {
        return Err(SolverError::NoValidSolution);
    }
    Ok(out)
}
