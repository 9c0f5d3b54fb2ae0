use nalgebra::{DVector, Matrix3};

use super::{lm, project_to_singular, FundamentalCandidate};
use crate::geom::{
    canonicalize, structured_matrix, undistort_point, Correspondence, RadialDistortion,
    SphericalFundamental,
};

/// Signed square root of [`super::distorted_sampson_error`].
fn signed_sampson(f: &Matrix3<f64>, d: RadialDistortion, c: &Correspondence) -> Option<f64> {
    let u = undistort_point(&c.p, d).ok()?;
    let up = undistort_point(&c.p_prime, d).ok()?;
    let fu = f * u;
    let ftup = f.transpose() * up;
    let l2 = 2.0 * d.lambda;
    let gx = ftup.x + ftup.z * l2 * c.p.x;
    let gy = ftup.y + ftup.z * l2 * c.p.y;
    let gxp = fu.x + fu.z * l2 * c.p_prime.x;
    let gyp = fu.y + fu.z * l2 * c.p_prime.y;
    let denom = gx * gx + gy * gy + gxp * gxp + gyp * gyp;
    (denom >= 1e-20).then(|| up.dot(&fu) / denom.sqrt())
}

/// Weight of the `det(F) = 0` penalty during refinement.
const DET_WEIGHT: f64 = 1e3;

/// Minimizes the Sampson error in observed coordinates over the structured
/// parameters of `F` and, if the candidate carries one, the distortion
/// parameter. The result is projected back onto `det(F) = 0`; `None` when the
/// refinement fails or does not lower the cost.
pub fn refine_fundamental(
    candidate: &FundamentalCandidate,
    corrs: &[Correspondence],
) -> Option<FundamentalCandidate> {
    if corrs.len() < 6 {
        return None;
    }
    let with_lambda = candidate.distortion.is_some();
    let mut params: Vec<f64> = candidate.fundamental.params().to_vec();
    if with_lambda {
        params.push(candidate.distortion_or_none().lambda);
    }
    let n = corrs.len();
    let residuals = |q: &[f64], out: &mut DVector<f64>| -> bool {
        let a: [f64; 6] = q[..6].try_into().unwrap();
        let Ok(a) = canonicalize(&a) else {
            return false;
        };
        let f = structured_matrix(&a);
        let d = RadialDistortion::new(if with_lambda { q[6] } else { 0.0 });
        for (k, c) in corrs.iter().enumerate() {
            match signed_sampson(&f, d, c) {
                Some(r) => out[k] = r,
                None => return false,
            }
        }
        out[n] = DET_WEIGHT * f.determinant();
        true
    };
    lm::minimize(&mut params, n + 1, 50, residuals)?;

    let a = project_to_singular(params[..6].try_into().unwrap())?;
    let refined = FundamentalCandidate {
        fundamental: SphericalFundamental::from_params(a).ok()?,
        distortion: with_lambda.then(|| RadialDistortion::new(params[6])),
    };
    let cost = |m: &FundamentalCandidate| corrs.iter().map(|c| m.residual(c)).sum::<f64>();
    (cost(&refined) < cost(candidate)).then_some(refined)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{generate_problem, SyntheticConfig};

    #[test]
    fn lowers_cost_and_recovers_distortion_under_noise() {
        let cfg = SyntheticConfig {
            seed: 2,
            lambda_gt: -0.2,
            rotation_range_deg: (3.0, 10.0),
            pixel_noise_sigma: 0.5,
            n_points: 300,
            ..SyntheticConfig::default()
        };
        let pb = generate_problem(&cfg).unwrap();
        // Start away from the truth.
        let start = FundamentalCandidate {
            fundamental: SphericalFundamental::from_params({
                let mut a = pb.fundamental.params();
                a[2] += 0.02;
                a
            })
            .unwrap(),
            distortion: Some(RadialDistortion::new(-0.35)),
        };
        let out = refine_fundamental(&start, &pb.correspondences).unwrap();
        assert!(
            (out.distortion_or_none().lambda + 0.2).abs() < 0.05,
            "{:?}",
            out.distortion
        );
        assert!(out.fundamental.determinant().abs() < 1e-12);
    }

    #[test]
    fn exact_data_is_a_fixed_point() {
        let pb = generate_problem(&SyntheticConfig {
            seed: 5,
            lambda_gt: -0.1,
            n_points: 50,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let exact = FundamentalCandidate {
            fundamental: pb.fundamental,
            distortion: Some(RadialDistortion::new(-0.1)),
        };
        // Nothing to improve on noise-free data.
        assert!(
            refine_fundamental(&exact, &pb.correspondences).is_none_or(|m| (m
                .distortion_or_none()
                .lambda
                + 0.1)
                .abs()
                < 1e-8)
        );
    }
}
