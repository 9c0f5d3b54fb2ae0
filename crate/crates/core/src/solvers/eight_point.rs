use nalgebra::{DMatrix, Matrix3, SMatrix, Vector2};

use super::{check_input, SolverError};
use crate::geom::Correspondence;

/// Similarity taking the points to zero centroid and mean distance `sqrt(2)`.
fn hartley(points: impl Iterator<Item = Vector2<f64>> + Clone) -> Matrix3<f64> {
    let n = points.clone().count() as f64;
    let mean = points.clone().fold(Vector2::zeros(), |a, p| a + p) / n;
    let spread = points.map(|p| (p - mean).norm()).sum::<f64>() / n;
    let s = if spread > 0.0 {
        std::f64::consts::SQRT_2 / spread
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * mean.x, 0.0, s, -s * mean.y, 0.0, 0.0, 1.0)
}

/// Normalized eight-point algorithm for a general (unstructured) fundamental
/// matrix, with rank-2 projection. Returns a unit-Frobenius-norm matrix.
pub fn solve_f_8pt_general(corrs: &[Correspondence]) -> Result<Matrix3<f64>, SolverError> {
    check_input(corrs, 8)?;
    let t1 = hartley(corrs.iter().map(|c| c.p));
    let t2 = hartley(corrs.iter().map(|c| c.p_prime));
    let n = corrs.len().max(9);
    let mut a = DMatrix::<f64>::zeros(n, 9);
    for (i, c) in corrs.iter().enumerate() {
        let x = t1 * c.p.push(1.0);
        let xp = t2 * c.p_prime.push(1.0);
        for r in 0..3 {
            for k in 0..3 {
                a[(i, 3 * r + k)] = xp[r] * x[k];
            }
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(SolverError::NoValidSolution)?;
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let max = svd.singular_values[order[8]];
    if svd.singular_values[order[1]] <= 1e-12 * max {
        return Err(SolverError::RankDeficient(1));
    }
    let f = SMatrix::<f64, 3, 3>::from_fn(|r, k| v_t[(order[0], 3 * r + k)]);
    let mut f_svd = f.svd(true, true);
    let (imin, _) = f_svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    f_svd.singular_values[imin] = 0.0;
    let f = f_svd
        .recompose()
        .map_err(|_| SolverError::NoValidSolution)?;
    let f = t2.transpose() * f * t1;
    let norm = f.norm();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(SolverError::NoValidSolution);
    }
    Ok(f / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{generate_problem, SyntheticConfig};
    use crate::geom::{aligned_frobenius_error, skew, Rotation};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};

    #[test]
    fn general_motion_exact_data() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let r = Rotation::from_euler_angles(0.05, -0.08, 0.03);
        let t = Vector3::new(0.3, -0.1, 0.05);
        let corrs: Vec<_> = (0..30)
            .map(|_| {
                let x = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(4.0..8.0),
                );
                let y = r * x + t;
                Correspondence::new(
                    Vector2::new(x.x / x.z, x.y / x.z),
                    Vector2::new(y.x / y.z, y.y / y.z),
                )
            })
            .collect();
        let f = solve_f_8pt_general(&corrs).unwrap();
        for c in &corrs {
            assert!(c.p_prime.push(1.0).dot(&(f * c.p.push(1.0))).abs() < 1e-10);
        }
        let gt = skew(&t) * r.matrix();
        assert!(aligned_frobenius_error(&f, &gt) < 1e-8);
        assert!((f.norm() - 1.0).abs() < 1e-12);
        assert!(f.determinant().abs() < 1e-12);
    }

    #[test]
    fn spherical_data_gives_valid_but_unstructured_f() {
        let pb = generate_problem(&SyntheticConfig {
            seed: 5,
            lambda_gt: 0.0,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let f = solve_f_8pt_general(&pb.correspondences[..8]).unwrap();
        for c in &pb.correspondences[..8] {
            assert!(c.p_prime.push(1.0).dot(&(f * c.p.push(1.0))).abs() < 1e-9);
        }
        // Structure is not imposed, so it only holds up to numerical error.
        assert!(f[(2, 2)] != 0.0);
    }

    #[test]
    fn too_few_points() {
        let pb = generate_problem(&SyntheticConfig {
            seed: 5,
            ..SyntheticConfig::default()
        })
        .unwrap();
        assert!(matches!(
            solve_f_8pt_general(&pb.correspondences[..7]),
            Err(SolverError::NotEnoughCorrespondences { .. })
        ));
    }
}
