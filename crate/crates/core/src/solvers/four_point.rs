use nalgebra::{DMatrix, Matrix6, SMatrix};

use super::{check_input, poly::real_cubic_roots, FundamentalCandidate, SolverError, SolverOutput};
use crate::geom::{structured_matrix, Correspondence, SphericalFundamental};

/// Two structured matrices spanning the right nullspace of the stacked
/// epipolar constraints; solutions are `x F1 + (1 - x) F2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullspaceBasis {
    pub f1: [f64; 6],
    pub f2: [f64; 6],
}

impl NullspaceBasis {
    pub fn mix(&self, x: f64) -> [f64; 6] {
        std::array::from_fn(|k| x * self.f1[k] + (1.0 - x) * self.f2[k])
    }
}

/// Coefficients of `p' F p` in the six structured parameters.
pub(crate) fn epipolar_row(c: &Correspondence) -> [f64; 6] {
    let (x, y) = (c.p.x, c.p.y);
    let (xp, yp) = (c.p_prime.x, c.p_prime.y);
    [xp * x - yp * y, xp * y + yp * x, xp, yp, x, y]
}

/// Right singular vectors ordered by ascending singular value, together with
/// those singular values.
fn ascending_right_singular(corrs: &[Correspondence]) -> ([f64; 6], [[f64; 6]; 6]) {
    let (values, v_t) = if corrs.len() <= 6 {
        let mut a = Matrix6::<f64>::zeros();
        for (i, c) in corrs.iter().enumerate() {
            a.row_mut(i).copy_from_slice(&epipolar_row(c));
        }
        let svd = a.svd(false, true);
        (
            svd.singular_values.as_slice().to_vec(),
            DMatrix::from_column_slice(6, 6, svd.v_t.unwrap().as_slice()),
        )
    } else {
        let a = DMatrix::from_fn(corrs.len(), 6, |i, j| epipolar_row(&corrs[i])[j]);
        let svd = a.svd(false, true);
        (svd.singular_values.as_slice().to_vec(), svd.v_t.unwrap())
    };
    let mut order: [usize; 6] = std::array::from_fn(|i| i);
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let sv = order.map(|i| values[i]);
    let vecs = order.map(|i| std::array::from_fn(|k| v_t[(i, k)]));
    (sv, vecs)
}

/// Two-dimensional (least-squares) nullspace of the stacked constraints.
pub fn nullspace_basis(corrs: &[Correspondence]) -> Result<NullspaceBasis, SolverError> {
    check_input(corrs, 4)?;
    let (sv, vecs) = ascending_right_singular(corrs);
    if sv[2] <= 1e-10 * sv[5] {
        return Err(SolverError::RankDeficient(2));
    }
    Ok(NullspaceBasis {
        f1: vecs[0],
        f2: vecs[1],
    })
}

/// Coefficients of `det(a A + b B)` as a homogeneous cubic,
/// `[a^3, a^2 b, a b^2, b^3]`.
pub(crate) fn det_pencil_coefficients(a: &[f64; 6], b: &[f64; 6]) -> [f64; 4] {
    let ma = structured_matrix(a);
    let mb = structured_matrix(b);
    let det_cols = |c0: usize, c1: usize, c2: usize, pick: [bool; 3]| {
        let col = |k: usize, from_b: bool| {
            if from_b {
                mb.column(k).into_owned()
            } else {
                ma.column(k).into_owned()
            }
        };
        let m = SMatrix::<f64, 3, 3>::from_columns(&[
            col(c0, pick[0]),
            col(c1, pick[1]),
            col(c2, pick[2]),
        ]);
        m.determinant()
    };
    let c3 = ma.determinant();
    let c0 = mb.determinant();
    let c2 = det_cols(0, 1, 2, [true, false, false])
        + det_cols(0, 1, 2, [false, true, false])
        + det_cols(0, 1, 2, [false, false, true]);
    let c1 = det_cols(0, 1, 2, [false, true, true])
        + det_cols(0, 1, 2, [true, false, true])
        + det_cols(0, 1, 2, [true, true, false]);
    [c3, c2, c1, c0]
}

/// Four-point solver for the spherical fundamental matrix (uncalibrated,
/// shared focal length, no distortion). Accepts more than four points, in
/// which case the nullspace is the least-squares one.
///
/// Returns up to three candidates, one per real root of the singularity
/// cubic.
pub fn solve_spherical_f_4pt(corrs: &[Correspondence]) -> Result<SolverOutput, SolverError> {
    let basis = nullspace_basis(corrs)?;
    let (f1, f2) = (basis.f1, basis.f2);
    // det(a F1 + b F2) = 0 solved in whichever affine chart keeps the
    // leading coefficient largest; x F1 + (1 - x) F2 is the same family.
    let c = det_pencil_coefficients(&f1, &f2);
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale < 1e-11 {
        return Err(SolverError::Degenerate);
    }
    let mixes: Vec<(f64, f64)> = if c[0].abs() >= c[3].abs() {
        real_cubic_roots(c).into_iter().map(|a| (a, 1.0)).collect()
    } else {
        real_cubic_roots([c[3], c[2], c[1], c[0]])
            .into_iter()
            .map(|b| (1.0, b))
            .collect()
    };
    let mut out: SolverOutput = Vec::with_capacity(3);
    for (a, b) in mixes {
        let params: [f64; 6] = std::array::from_fn(|k| a * f1[k] + b * f2[k]);
        let Ok(f) = SphericalFundamental::from_params(params) else {
            continue;
        };
        if f.determinant().abs() > 1e-8 {
            continue;
        }
        let duplicate = out.iter().any(|o| {
            crate::geom::aligned_frobenius_error(&o.fundamental.matrix(), &f.matrix()) < 1e-10
        });
        if !duplicate {
            out.push(FundamentalCandidate {
                fundamental: f,
                distortion: None,
            });
        }
    }
    if out.is_empty() {
        return Err(SolverError::NoValidSolution);
    }
    Ok(out)
}
