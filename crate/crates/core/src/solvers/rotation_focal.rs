//! Pure-rotation model: `x' ~ K R K^-1 x` on undistorted points, with the
//! focal length and distortion shared by both views.

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};

use super::SolverError;
use crate::geom::{
    calibration_matrix, distort_point, nearest_rotation, undistort_to_plane, Correspondence,
    RadialDistortion, Rotation,
};
use crate::robust::{mlesac, Estimator, RobustConfig};

/// Result of fitting the rotation model to a correspondence set.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationFocalEstimate {
    pub rotation: Rotation,
    /// Normalized units.
    pub focal: f64,
    pub distortion: RadialDistortion,
    /// Indices into the input correspondences.
    pub inliers: Vec<usize>,
    /// RMS of [`rotation_residual`] over the inliers (normalized units).
    pub inlier_rms: f64,
}

impl RotationFocalEstimate {
    pub fn inlier_count(&self) -> usize {
        self.inliers.len()
    }

    pub fn residual(&self, c: &Correspondence) -> f64 {
        rotation_residual(&self.rotation, self.focal, self.distortion, c)
    }
}

/// `K R K^-1` for `K = diag(f, f, 1)`.
pub fn rotation_homography(rotation: &Rotation, focal: f64) -> Matrix3<f64> {
    let k = calibration_matrix(focal);
    let k_inv = calibration_matrix(1.0 / focal);
    k * rotation.matrix() * k_inv
}

fn transfer(h: &Matrix3<f64>, p: &Vector2<f64>) -> Option<Vector2<f64>> {
    let q = h * p.push(1.0);
    (q.z.abs() > 1e-12).then(|| Vector2::new(q.x / q.z, q.y / q.z))
}

/// Symmetric transfer error `(|x' - Hx|^2 + |x - H^-1 x'|^2) / 4`, which has
/// the same expectation as a squared point-to-manifold distance in the joint
/// image space.
pub fn homography_transfer_error(h: &Matrix3<f64>, c: &Correspondence) -> f64 {
    let Some(h_inv) = h.try_inverse() else {
        return f64::INFINITY;
    };
    match (transfer(h, &c.p), transfer(&h_inv, &c.p_prime)) {
        (Some(a), Some(b)) => ((a - c.p_prime).norm_squared() + (b - c.p).norm_squared()) / 4.0,
        _ => f64::INFINITY,
    }
}

/// Symmetric transfer error of the rotation model measured on the observed
/// (distorted) points.
pub(crate) fn rotation_residual(
    rotation: &Rotation,
    focal: f64,
    d: RadialDistortion,
    c: &Correspondence,
) -> f64 {
    let forward = |r: &Matrix3<f64>, p: &Vector2<f64>| -> Option<Vector2<f64>> {
        let u = undistort_to_plane(p, d).ok()?;
        let ray = r * Vector3::new(u.x / focal, u.y / focal, 1.0);
        if ray.z <= 1e-12 {
            return None;
        }
        distort_point(
            &Vector2::new(focal * ray.x / ray.z, focal * ray.y / ray.z),
            d,
        )
        .ok()
    };
    let r = *rotation.matrix();
    match (forward(&r, &c.p), forward(&r.transpose(), &c.p_prime)) {
        (Some(a), Some(b)) => ((a - c.p_prime).norm_squared() + (b - c.p).norm_squared()) / 4.0,
        _ => f64::INFINITY,
    }
}

/// Direct linear transform on undistorted correspondences; `None` when the
/// points do not determine a unique homography.
fn homography_dlt(corrs: &[Correspondence]) -> Option<Matrix3<f64>> {
    let rows = (2 * corrs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, c) in corrs.iter().enumerate() {
        let (x, y) = (c.p.x, c.p.y);
        let (xp, yp) = (c.p_prime.x, c.p_prime.y);
        a.row_mut(2 * i)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, yp * x, yp * y, yp]);
        a.row_mut(2 * i + 1)
            .copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -xp * x, -xp * y, -xp]);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    if svd.singular_values[order[1]] <= 1e-10 * svd.singular_values[order[8]] {
        return None;
    }
    let h = Matrix3::from_fn(|r, k| v_t[(order[0], 3 * r + k)]);
    // det(K R K^-1) = 1; fix the scale accordingly.
    let det = h.determinant();
    if det.abs() < 1e-300 || !det.is_finite() {
        return None;
    }
    Some(h / det.cbrt())
}

/// MLESAC adapter: general homographies on undistorted points.
#[derive(Debug, Clone, Copy, Default)]
pub struct HomographyEstimator;

impl Estimator for HomographyEstimator {
    type Model = Matrix3<f64>;

    fn sample_size(&self) -> usize {
        4
    }

    fn fit_minimal(&self, sample: &[Correspondence]) -> Vec<Matrix3<f64>> {
        homography_dlt(sample).into_iter().collect()
    }

    fn fit_nonminimal(
        &self,
        data: &[Correspondence],
        _seed: &Matrix3<f64>,
    ) -> Option<Matrix3<f64>> {
        homography_dlt(data)
    }

    fn residual(&self, model: &Matrix3<f64>, c: &Correspondence) -> f64 {
        homography_transfer_error(model, c)
    }
}

/// Focal length (in the units of the homography's coordinates) of a
/// rotation-induced homography, from orthogonality and equal norm of the
/// first two columns of `K^-1 H K`.
pub fn focal_from_rotation_homography(h: &Matrix3<f64>) -> Option<f64> {
    let (h11, h12, h21, h22, h31, h32) = (
        h[(0, 0)],
        h[(0, 1)],
        h[(1, 0)],
        h[(1, 1)],
        h[(2, 0)],
        h[(2, 1)],
    );
    let scale = h.norm();
    let from_ratio = |num: f64, den: f64| -> Option<f64> {
        let f2 = num / den;
        (den.abs() > 1e-12 * scale * scale && f2.is_finite() && f2 > 0.0).then_some(f2)
    };
    let orth = from_ratio(-(h11 * h12 + h21 * h22), h31 * h32);
    let norm = from_ratio(
        h12 * h12 + h22 * h22 - h11 * h11 - h21 * h21,
        h31 * h31 - h32 * h32,
    );
    let f2 = match (orth, norm) {
        (Some(a), Some(b)) => (a * b).sqrt(),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => return None,
    };
    Some(f2.sqrt())
}

fn rotation_from_homography(h: &Matrix3<f64>, focal: f64) -> Rotation {
    nearest_rotation(&(calibration_matrix(1.0 / focal) * h * calibration_matrix(focal)))
}

fn truncated_cost(
    rotation: &Rotation,
    focal: f64,
    d: RadialDistortion,
    corrs: &[Correspondence],
    threshold: f64,
) -> f64 {
    corrs
        .iter()
        .map(|c| rotation_residual(rotation, focal, d, c).min(threshold))
        .sum()
}

/// Focal length and rotation best explaining `h` on the observed points.
/// The closed form is poorly conditioned for small rotations, so it only
/// seeds a scan over a log-spaced focal range, refined by golden section.
fn focal_search(
    h: &Matrix3<f64>,
    d: RadialDistortion,
    corrs: &[Correspondence],
    threshold: f64,
) -> Option<(Rotation, f64)> {
    const STEPS: usize = 32;
    let (lo, hi) = (0.2f64.ln(), 5.0f64.ln());
    let step = (hi - lo) / (STEPS - 1) as f64;
    let cost = |log_f: f64| {
        let f = log_f.exp();
        truncated_cost(&rotation_from_homography(h, f), f, d, corrs, threshold)
    };
    let seeds = (0..STEPS)
        .map(|k| lo + step * k as f64)
        .chain(focal_from_rotation_homography(h).map(f64::ln));
    let (mut best, mut best_cost) = (f64::NAN, f64::INFINITY);
    for x in seeds {
        let c = cost(x);
        if c < best_cost {
            (best, best_cost) = (x, c);
        }
    }
    if !best_cost.is_finite() {
        return None;
    }
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (best - step, best + step);
    let (mut x1, mut x2) = (b - ratio * (b - a), a + ratio * (b - a));
    let (mut c1, mut c2) = (cost(x1), cost(x2));
    for _ in 0..40 {
        if c1 <= c2 {
            (b, x2, c2) = (x2, x1, c1);
            x1 = b - ratio * (b - a);
            c1 = cost(x1);
        } else {
            (a, x1, c1) = (x1, x2, c2);
            x2 = a + ratio * (b - a);
            c2 = cost(x2);
        }
    }
    let (x, c) = if c1 <= c2 { (x1, c1) } else { (x2, c2) };
    let log_f = if c < best_cost { x } else { best };
    let f = log_f.exp();
    Some((rotation_from_homography(h, f), f))
}

fn inliers_and_rms(
    rotation: &Rotation,
    focal: f64,
    d: RadialDistortion,
    corrs: &[Correspondence],
    threshold: f64,
) -> (Vec<usize>, f64) {
    let mut inliers = Vec::new();
    let mut sum = 0.0;
    for (i, c) in corrs.iter().enumerate() {
        let e = rotation_residual(rotation, focal, d, c);
        if e <= threshold {
            inliers.push(i);
            sum += e;
        }
    }
    let rms = if inliers.is_empty() {
        f64::INFINITY
    } else {
        (sum / inliers.len() as f64).sqrt()
    };
    (inliers, rms)
}

/// Fits rotation, focal length and distortion to a pair assumed to be
/// related by a pure rotation. For each grid value of `lambda` the points are
/// undistorted, a homography is fitted robustly, and the focal length and
/// rotation are extracted from it. The grid value with the most inliers wins,
/// ties going to the lower inlier RMS.
pub fn solve_rotation_focal_lambda(
    corrs: &[Correspondence],
    lambda_grid: &[f64],
    cfg: &RobustConfig,
) -> Result<RotationFocalEstimate, SolverError> {
    if corrs.len() < 4 {
        return Err(SolverError::NotEnoughCorrespondences {
            needed: 4,
            got: corrs.len(),
        });
    }
    if lambda_grid.is_empty() {
        return Err(SolverError::NoValidSolution);
    }
    let threshold = cfg.truncation();
    let mut best: Option<RotationFocalEstimate> = None;
    let mut any_focal = false;
    for &lambda in lambda_grid {
        let d = RadialDistortion::new(lambda);
        let mut index = Vec::with_capacity(corrs.len());
        let mut undistorted = Vec::with_capacity(corrs.len());
        for (i, c) in corrs.iter().enumerate() {
            if let Ok(u) = c.undistorted(d) {
                index.push(i);
                undistorted.push(u);
            }
        }
        let Ok(fit) = mlesac(&undistorted, &HomographyEstimator, cfg) else {
            continue;
        };
        let Some((rotation, focal)) = focal_search(&fit.model, d, corrs, threshold) else {
            continue;
        };
        any_focal = true;
        let (inliers, inlier_rms) = inliers_and_rms(&rotation, focal, d, corrs, threshold);
        let candidate = RotationFocalEstimate {
            rotation,
            focal,
            distortion: d,
            inliers,
            inlier_rms,
        };
        let better = match &best {
            None => true,
            Some(b) => {
                candidate.inliers.len() > b.inliers.len()
                    || (candidate.inliers.len() == b.inliers.len()
                        && candidate.inlier_rms < b.inlier_rms)
            }
        };
        if better {
            best = Some(candidate);
        }
    }
    if !any_focal {
        return Err(SolverError::NoValidFocal);
    }
    let best = best.ok_or(SolverError::NoValidFocal)?;
    if best.inliers.len() < 6 {
        return Err(SolverError::InsufficientInliers(best.inliers.len()));
    }
    Ok(best)
}

fn rotation_residual_vector(
    params: &[f64; 5],
    base: &Rotation,
    corrs: &[Correspondence],
    idx: &[usize],
    out: &mut DVector<f64>,
) -> bool {
    let rotation = Rotation::new(Vector3::new(params[0], params[1], params[2])) * base;
    let (focal, d) = (params[3], RadialDistortion::new(params[4]));
    if !(focal > 0.0) {
        return false;
    }
    let r = *rotation.matrix();
    for (k, &i) in idx.iter().enumerate() {
        let c = &corrs[i];
        let map = |r: &Matrix3<f64>, p: &Vector2<f64>| -> Option<Vector2<f64>> {
            let u = undistort_to_plane(p, d).ok()?;
            let ray = r * Vector3::new(u.x / focal, u.y / focal, 1.0);
            if ray.z <= 1e-12 {
                return None;
            }
            distort_point(
                &Vector2::new(focal * ray.x / ray.z, focal * ray.y / ray.z),
                d,
            )
            .ok()
        };
        let (Some(a), Some(b)) = (map(&r, &c.p), map(&r.transpose(), &c.p_prime)) else {
            return false;
        };
        let ea = (a - c.p_prime) / 2.0;
        let eb = (b - c.p) / 2.0;
        out.fixed_rows_mut::<4>(4 * k)
            .copy_from_slice(&[ea.x, ea.y, eb.x, eb.y]);
    }
    true
}

/// Levenberg-Marquardt refinement of rotation, focal length and (optionally)
/// distortion on the current inliers, followed by re-classification of all
/// correspondences. Falls back to the input estimate when the problem is too
/// small or the refinement does not improve it.
pub fn refine_rotation_focal_lambda(
    corrs: &[Correspondence],
    estimate: &RotationFocalEstimate,
    estimate_distortion: bool,
    cfg: &RobustConfig,
) -> RotationFocalEstimate {
    let threshold = cfg.truncation();
    let mut current = estimate.clone();
    for _round in 0..2 {
        let idx = current.inliers.clone();
        if idx.len() < 6 {
            return current;
        }
        let n_params = if estimate_distortion { 5 } else { 4 };
        let base = current.rotation;
        let mut params = [0.0, 0.0, 0.0, current.focal, current.distortion.lambda];
        let mut res = DVector::zeros(4 * idx.len());
        if !rotation_residual_vector(&params, &base, corrs, &idx, &mut res) {
            return current;
        }
        let mut cost = res.norm_squared();
        let mut mu = 1e-3;
        let mut jac = DMatrix::zeros(4 * idx.len(), n_params);
        let mut plus = res.clone();
        let mut minus = res.clone();
        for _ in 0..30 {
            let mut ok = true;
            for j in 0..n_params {
                let h = 1e-7 * (1.0 + params[j].abs());
                let (mut p, mut m) = (params, params);
                p[j] += h;
                m[j] -= h;
                ok &= rotation_residual_vector(&p, &base, corrs, &idx, &mut plus);
                ok &= rotation_residual_vector(&m, &base, corrs, &idx, &mut minus);
                jac.set_column(j, &((&plus - &minus) / (2.0 * h)));
            }
            if !ok {
                break;
            }
            let jtj = jac.transpose() * &jac;
            let g = jac.transpose() * &res;
            let mut improved = false;
            for _ in 0..10 {
                let mut a = jtj.clone();
                for j in 0..n_params {
                    a[(j, j)] += mu * jtj[(j, j)].max(1e-12);
                }
                let Some(step) = a.cholesky().map(|c| c.solve(&(-&g))) else {
                    mu *= 10.0;
                    continue;
                };
                let mut trial = params;
                for j in 0..n_params {
                    trial[j] += step[j];
                }
                if rotation_residual_vector(&trial, &base, corrs, &idx, &mut plus)
                    && plus.norm_squared() < cost
                {
                    let new_cost = plus.norm_squared();
                    let rel = (cost - new_cost) / cost.max(1e-300);
                    params = trial;
                    res.copy_from(&plus);
                    cost = new_cost;
                    mu = (mu * 0.3).max(1e-12);
                    improved = rel > 1e-12;
                    break;
                }
                mu *= 10.0;
            }
            if !improved {
                break;
            }
        }
        let rotation = Rotation::new(Vector3::new(params[0], params[1], params[2])) * base;
        let d = RadialDistortion::new(params[4]);
        let (inliers, inlier_rms) = inliers_and_rms(&rotation, params[3], d, corrs, threshold);
        if inliers.len() < current.inliers.len() {
            break;
        }
        let done = inliers == current.inliers;
        current = RotationFocalEstimate {
            rotation,
            focal: params[3],
            distortion: d,
            inliers,
            inlier_rms,
        };
        if done {
            break;
        }
    }
    current
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{generate_rotation_pair, SyntheticConfig};
    use crate::geom::rotation_distance;

    fn cfg() -> RobustConfig {
        RobustConfig {
            inlier_noise_sigma: 1e-4,
            seed: 1,
            ..RobustConfig::default()
        }
    }

    fn grid() -> Vec<f64> {
        (0..=20).map(|i| -0.5 + 0.05 * i as f64).collect()
    }

    #[test]
    fn focal_from_exact_rotation_homography() {
        let r = Rotation::from_euler_angles(0.04, -0.07, 0.02);
        let f = focal_from_rotation_homography(&(rotation_homography(&r, 0.625) * 3.7)).unwrap();
        assert!((f - 0.625).abs() < 1e-10);
        assert!(focal_from_rotation_homography(&rotation_homography(
            &Rotation::from_euler_angles(0.0, 0.0, 0.3),
            0.6
        ))
        .is_none());
    }

    #[test]
    fn pure_rotation_with_distortion() {
        let sc = SyntheticConfig {
            seed: 3,
            lambda_gt: -0.2,
            rotation_range_deg: (5.0, 5.0),
            ..SyntheticConfig::default()
        };
        let pb = generate_rotation_pair(&sc).unwrap();
        let est = solve_rotation_focal_lambda(&pb.correspondences, &grid(), &cfg()).unwrap();
        assert!(
            (est.distortion.lambda + 0.2).abs() < 1e-9,
            "{}",
            est.distortion.lambda
        );
        assert!(
            (est.focal / pb.focal - 1.0).abs() < 1e-3,
            "{} vs {}",
            est.focal,
            pb.focal
        );
        assert!(rotation_distance(&est.rotation, &pb.rotation).to_degrees() < 0.05);
        assert_eq!(est.inlier_count(), pb.correspondences.len());
    }

    #[test]
    fn distortion_free_subcase() {
        let sc = SyntheticConfig {
            seed: 8,
            lambda_gt: 0.0,
            rotation_range_deg: (5.0, 5.0),
            ..SyntheticConfig::default()
        };
        let pb = generate_rotation_pair(&sc).unwrap();
        let est = solve_rotation_focal_lambda(&pb.correspondences, &[0.0], &cfg()).unwrap();
        assert!((est.focal / pb.focal - 1.0).abs() < 1e-3);
    }

    #[test]
    fn refinement_recovers_off_grid_distortion() {
        let sc = SyntheticConfig {
            seed: 5,
            lambda_gt: -0.23,
            rotation_range_deg: (6.0, 6.0),
            pixel_noise_sigma: 0.0,
            ..SyntheticConfig::default()
        };
        let pb = generate_rotation_pair(&sc).unwrap();
        let est = solve_rotation_focal_lambda(&pb.correspondences, &grid(), &cfg()).unwrap();
        let refined = refine_rotation_focal_lambda(&pb.correspondences, &est, true, &cfg());
        assert!(
            (refined.distortion.lambda + 0.23).abs() < 1e-6,
            "{}",
            refined.distortion.lambda
        );
        assert!((refined.focal / pb.focal - 1.0).abs() < 1e-6);
        assert!(rotation_distance(&refined.rotation, &pb.rotation) < 1e-7);
    }

    #[test]
    fn spherical_pair_has_fewer_rotation_inliers() {
        let near = SyntheticConfig {
            seed: 12,
            lambda_gt: 0.0,
            rotation_range_deg: (8.0, 8.0),
            pixel_noise_sigma: 0.5,
            ..SyntheticConfig::default()
        };
        let sph = crate::bench::generate_problem(&near).unwrap();
        let rot = generate_rotation_pair(&near).unwrap();
        let c = RobustConfig {
            inlier_noise_sigma: 0.5 / 1920.0,
            seed: 1,
            ..RobustConfig::default()
        };
        let a = solve_rotation_focal_lambda(&sph.correspondences, &[0.0], &c)
            .map(|e| e.inlier_count())
            .unwrap_or(0);
        let b = solve_rotation_focal_lambda(&rot.correspondences, &[0.0], &c)
            .unwrap()
            .inlier_count();
        let ra = a as f64 / sph.correspondences.len() as f64;
        let rb = b as f64 / rot.correspondences.len() as f64;
        assert!(ra < 0.8 * rb, "{ra} vs {rb}");
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(
            solve_rotation_focal_lambda(&[], &[0.0], &cfg()),
            Err(SolverError::NotEnoughCorrespondences { .. })
        ));
    }
}
