use super::{gric_score, mlesac, Estimator, GricParams, RobustConfig, RobustError};
use crate::geom::{Correspondence, RadialDistortion, Rotation, SphericalFundamental};
use crate::solvers::{
    refine_fundamental, refine_rotation_focal_lambda, solve_rotation_focal_lambda,
    solve_spherical_f_4pt, solve_spherical_f_lambda_6pt, FundamentalCandidate,
    RotationFocalEstimate,
};

/// MLESAC adapter for the spherical fundamental matrix: the six-point solver
/// when distortion is estimated, the four-point solver otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FundamentalEstimator {
    pub estimate_distortion: bool,
}

impl FundamentalEstimator {
    fn solve(&self, data: &[Correspondence]) -> Vec<FundamentalCandidate> {
        let out = if self.estimate_distortion {
            solve_spherical_f_lambda_6pt(data)
        } else {
            solve_spherical_f_4pt(data)
        };
        out.unwrap_or_default()
    }
}

impl Estimator for FundamentalEstimator {
    type Model = FundamentalCandidate;

    fn sample_size(&self) -> usize {
        if self.estimate_distortion {
            6
        } else {
            4
        }
    }

    fn fit_minimal(&self, sample: &[Correspondence]) -> Vec<FundamentalCandidate> {
        self.solve(sample)
    }

    fn fit_nonminimal(
        &self,
        data: &[Correspondence],
        seed: &FundamentalCandidate,
    ) -> Option<FundamentalCandidate> {
        refine_fundamental(seed, data)
    }

    fn residual(&self, model: &FundamentalCandidate, c: &Correspondence) -> f64 {
        model.residual(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionConfig {
    pub robust: RobustConfig,
    pub estimate_distortion: bool,
    /// Distortion hypotheses tried by the rotation model.
    pub lambda_grid: Vec<f64>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            robust: RobustConfig::default(),
            estimate_distortion: true,
            lambda_grid: (0..=15).map(|i| -1.0 + 0.1 * i as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionKind {
    FundamentalSpherical,
    PureRotation,
}

/// Both model fits for a pair, with their GRIC scores (infinite when the
/// corresponding fit failed).
#[derive(Debug, Clone, PartialEq)]
pub struct MotionComparison {
    pub fundamental: Option<(FundamentalCandidate, Vec<usize>)>,
    pub rotation: Option<RotationFocalEstimate>,
    pub gric_f: f64,
    pub gric_r: f64,
}

/// The model retained for an edge of the view graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseMotion {
    pub kind: MotionKind,
    pub f_model: Option<(SphericalFundamental, RadialDistortion)>,
    /// Rotation, normalized focal length, distortion.
    pub r_model: Option<(Rotation, f64, RadialDistortion)>,
    pub inlier_ids: Vec<usize>,
    pub gric_f: f64,
    pub gric_r: f64,
}

impl PairwiseMotion {
    pub fn distortion(&self) -> RadialDistortion {
        match (&self.f_model, &self.r_model) {
            (Some((_, d)), _) | (None, Some((_, _, d))) => *d,
            _ => RadialDistortion::NONE,
        }
    }
}

/// Fits both the spherical fundamental model and the pure-rotation model and
/// scores each with GRIC over all correspondences.
pub fn compare_motion_models(
    corrs: &[Correspondence],
    cfg: &SelectionConfig,
) -> Result<MotionComparison, RobustError> {
    cfg.robust.validate()?;
    if corrs.len() < 8 {
        return Err(RobustError::NotEnoughData {
            needed: 8,
            got: corrs.len(),
        });
    }
    let n = corrs.len();
    let sigma = cfg.robust.inlier_noise_sigma;
    let extra = usize::from(cfg.estimate_distortion);

    let est = FundamentalEstimator {
        estimate_distortion: cfg.estimate_distortion,
    };
    let fundamental = mlesac(corrs, &est, &cfg.robust)
        .ok()
        .map(|fit| (fit.model, fit.inliers));
    let gric_f = fundamental.as_ref().map_or(f64::INFINITY, |(m, _)| {
        let res: Vec<f64> = corrs.iter().map(|c| m.residual(c)).collect();
        gric_score(&res, &GricParams::torr(sigma, 3, 4 + extra, n))
    });

    let grid: &[f64] = if cfg.estimate_distortion {
        &cfg.lambda_grid
    } else {
        &[0.0]
    };
    let rotation = solve_rotation_focal_lambda(corrs, grid, &cfg.robust)
        .ok()
        .map(|e| refine_rotation_focal_lambda(corrs, &e, cfg.estimate_distortion, &cfg.robust));
    let gric_r = rotation.as_ref().map_or(f64::INFINITY, |e| {
        let res: Vec<f64> = corrs.iter().map(|c| e.residual(c)).collect();
        gric_score(&res, &GricParams::torr(sigma, 2, 4 + extra, n))
    });

    if fundamental.is_none() && rotation.is_none() {
        return Err(RobustError::NoModelFound {
            inliers: 0,
            needed: 8,
        });
    }
    Ok(MotionComparison {
        fundamental,
        rotation,
        gric_f,
        gric_r,
    })
}

impl MotionComparison {
    /// The lower-GRIC model; ties go to the fundamental matrix.
    pub fn select(self) -> PairwiseMotion {
        let (gric_f, gric_r) = (self.gric_f, self.gric_r);
        match (self.fundamental, self.rotation) {
            (_, Some(r)) if gric_r < gric_f => PairwiseMotion {
                kind: MotionKind::PureRotation,
                f_model: None,
                r_model: Some((r.rotation, r.focal, r.distortion)),
                inlier_ids: r.inliers,
                gric_f,
                gric_r,
            },
            (Some((f, inliers)), _) => PairwiseMotion {
                kind: MotionKind::FundamentalSpherical,
                f_model: Some((f.fundamental, f.distortion_or_none())),
                r_model: None,
                inlier_ids: inliers,
                gric_f,
                gric_r,
            },
            (None, Some(r)) => PairwiseMotion {
                kind: MotionKind::PureRotation,
                f_model: None,
                r_model: Some((r.rotation, r.focal, r.distortion)),
                inlier_ids: r.inliers,
                gric_f,
                gric_r,
            },
            (None, None) => unreachable!("compare_motion_models rejects pairs with no fit"),
        }
    }
}

/// Chooses between the spherical fundamental model and the pure-rotation
/// model by GRIC.
pub fn select_motion_model(
    corrs: &[Correspondence],
    cfg: &SelectionConfig,
) -> Result<PairwiseMotion, RobustError> {
    Ok(compare_motion_models(corrs, cfg)?.select())
}
