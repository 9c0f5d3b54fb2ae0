//! Robust fitting (MLESAC), model selection (GRIC) and consensus voting.

mod gric;
mod selection;
mod vote;

pub use gric::{gric_score, GricParams};
pub use selection::{
    compare_motion_models, select_motion_model, FundamentalEstimator, MotionComparison, MotionKind,
    PairwiseMotion, SelectionConfig,
};
pub use vote::{kernel_vote, silverman_bandwidth};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geom::Correspondence;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RobustError {
    #[error("need at least {needed} correspondences, got {got}")]
    NotEnoughData { needed: usize, got: usize },
    #[error("no model found: best hypothesis has {inliers} inliers, {needed} required")]
    NoModelFound { inliers: usize, needed: usize },
    #[error("kernel vote over an empty sample set")]
    EmptyInput,
    #[error("invalid robust configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustConfig {
    pub max_iterations: usize,
    /// Inlier noise level in normalized image units.
    pub inlier_noise_sigma: f64,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            inlier_noise_sigma: 1.0 / 1920.0,
            confidence: 0.999,
            seed: 0,
        }
    }
}

impl RobustConfig {
    /// Squared residual above which a datum counts as an outlier, `(2.5 sigma)^2`.
    pub fn truncation(&self) -> f64 {
        let t = 2.5 * self.inlier_noise_sigma;
        t * t
    }

    pub fn validate(&self) -> Result<(), RobustError> {
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(RobustError::InvalidConfig("confidence must lie in (0, 1)"));
        }
        if !(self.inlier_noise_sigma > 0.0 && self.inlier_noise_sigma.is_finite()) {
            return Err(RobustError::InvalidConfig("sigma must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(RobustError::InvalidConfig(
                "max_iterations must be positive",
            ));
        }
        Ok(())
    }
}

/// A model family that MLESAC can hypothesize and verify.
pub trait Estimator {
    type Model: Clone;

    fn sample_size(&self) -> usize;

    /// All models consistent with a minimal sample (possibly none).
    fn fit_minimal(&self, sample: &[Correspondence]) -> Vec<Self::Model>;

    /// Least-squares fit to a larger set; `seed` is the current best model,
    /// usable to pick among multiple solutions.
    fn fit_nonminimal(&self, data: &[Correspondence], seed: &Self::Model) -> Option<Self::Model>;

    /// Squared residual in normalized image units.
    fn residual(&self, model: &Self::Model, c: &Correspondence) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustFit<M> {
    pub model: M,
    pub inliers: Vec<usize>,
    /// Truncated-quadratic cost `sum min(e, T) / sigma^2`; lower is better.
    pub score: f64,
    pub iterations: usize,
}

/// Score and inliers of a model over all data.
pub(crate) fn score_model<E: Estimator>(
    est: &E,
    model: &E::Model,
    data: &[Correspondence],
    cfg: &RobustConfig,
) -> (f64, Vec<usize>) {
    let t = cfg.truncation();
    let s2 = cfg.inlier_noise_sigma * cfg.inlier_noise_sigma;
    let mut score = 0.0;
    let mut inliers = Vec::new();
    for (i, c) in data.iter().enumerate() {
        let e = est.residual(model, c);
        if e <= t {
            inliers.push(i);
            score += e / s2;
        } else {
            score += t / s2;
        }
    }
    (score, inliers)
}

/// Samples always drawn, however high the inlier ratio: with few outliers
/// the first hypothesis reaching full support is not necessarily accurate.
const MIN_ITERATIONS: f64 = 25.0;

fn required_iterations(inliers: usize, n: usize, sample: usize, confidence: f64) -> f64 {
    let w = inliers as f64 / n as f64;
    let p_good = w.powi(sample as i32);
    if p_good >= 1.0 {
        return 1.0;
    }
    if p_good <= 0.0 {
        return f64::INFINITY;
    }
    ((1.0 - confidence).ln() / (1.0 - p_good).ln()).ceil()
}

/// MLESAC with the truncated quadratic cost. Sample `k` is drawn from a
/// ChaCha stream selected by `k`, so results depend only on the seed and
/// the data. Each new best hypothesis is refit on its inliers and kept only
/// if the refit scores no worse.
pub fn mlesac<E: Estimator>(
    data: &[Correspondence],
    est: &E,
    cfg: &RobustConfig,
) -> Result<RobustFit<E::Model>, RobustError> {
    cfg.validate()?;
    let s = est.sample_size();
    let n = data.len();
    if n < s {
        return Err(RobustError::NotEnoughData { needed: s, got: n });
    }
    let mut best: Option<(E::Model, f64, Vec<usize>)> = None;
    let mut limit = cfg.max_iterations as f64;
    let mut iterations = 0;
    let mut sample = Vec::with_capacity(s);
    let mut k = 0u64;
    while (k as f64) < limit.min(cfg.max_iterations as f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(k);
        k += 1;
        iterations += 1;
        sample.clear();
        sample.extend(
            rand::seq::index::sample(&mut rng, n, s)
                .into_iter()
                .map(|i| data[i]),
        );
        for model in est.fit_minimal(&sample) {
            let (score, inliers) = score_model(est, &model, data, cfg);
            if best.as_ref().is_some_and(|b| score >= b.1) {
                continue;
            }
            let mut current = (model, score, inliers);
            // Local refit on the inlier set, repeated while it helps.
            for _ in 0..3 {
                if current.2.len() <= s {
                    break;
                }
                let subset: Vec<_> = current.2.iter().map(|&i| data[i]).collect();
                let Some(refit) = est.fit_nonminimal(&subset, &current.0) else {
                    break;
                };
                let (rs, ri) = score_model(est, &refit, data, cfg);
                if rs < current.1 {
                    current = (refit, rs, ri);
                } else {
                    break;
                }
            }
            limit = required_iterations(current.2.len(), n, s, cfg.confidence).max(MIN_ITERATIONS);
            best = Some(current);
        }
    }
    let needed = s + 2;
    match best {
        Some((model, score, inliers)) if inliers.len() >= needed => Ok(RobustFit {
            model,
            inliers,
            score,
            iterations,
        }),
        Some((_, _, inliers)) => Err(RobustError::NoModelFound {
            inliers: inliers.len(),
            needed,
        }),
        None => Err(RobustError::NoModelFound { inliers: 0, needed }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{generate_problem, SyntheticConfig};
    use crate::geom::aligned_frobenius_error;
    use nalgebra::Vector2;
    use rand::Rng;

    fn with_outliers(
        seed: u64,
        n: usize,
        outlier_ratio: f64,
    ) -> (
        crate::bench::SyntheticProblem,
        Vec<Correspondence>,
        Vec<bool>,
    ) {
        let pb = generate_problem(&SyntheticConfig {
            seed,
            lambda_gt: 0.0,
            n_points: 400,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
        let mut data = Vec::new();
        let mut truth = Vec::new();
        let n_out = (n as f64 * outlier_ratio).round() as usize;
        for (i, c) in pb.correspondences.iter().take(n).enumerate() {
            if i < n_out {
                let q = Vector2::new(rng.random_range(-0.5..0.5), rng.random_range(-0.28..0.28));
                data.push(Correspondence::new(c.p, q));
                truth.push(false);
            } else {
                data.push(*c);
                truth.push(true);
            }
        }
        (pb, data, truth)
    }

    #[test]
    fn planted_inliers_are_recovered() {
        let (pb, data, truth) = with_outliers(7, 200, 0.4);
        let cfg = RobustConfig {
            inlier_noise_sigma: 1e-5,
            seed: 3,
            ..RobustConfig::default()
        };
        let fit = mlesac(
            &data,
            &FundamentalEstimator {
                estimate_distortion: false,
            },
            &cfg,
        )
        .unwrap();
        assert!(
            aligned_frobenius_error(&fit.model.fundamental.matrix(), &pb.fundamental.matrix())
                < 1e-8
        );
        let true_inliers = truth.iter().filter(|&&t| t).count();
        let found = fit.inliers.iter().filter(|&&i| truth[i]).count();
        assert!(found as f64 >= 0.99 * true_inliers as f64);
    }

    #[test]
    fn all_outliers_fail() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<_> = (0..200)
            .map(|_| {
                Correspondence::new(
                    Vector2::new(rng.random_range(-0.5..0.5), rng.random_range(-0.28..0.28)),
                    Vector2::new(rng.random_range(-0.5..0.5), rng.random_range(-0.28..0.28)),
                )
            })
            .collect();
        let cfg = RobustConfig {
            inlier_noise_sigma: 1e-6,
            seed: 3,
            max_iterations: 300,
            ..RobustConfig::default()
        };
        assert!(matches!(
            mlesac(
                &data,
                &FundamentalEstimator {
                    estimate_distortion: false
                },
                &cfg
            ),
            Err(RobustError::NoModelFound { .. })
        ));
    }

    #[test]
    fn deterministic_for_seed() {
        let (_, data, _) = with_outliers(9, 150, 0.3);
        let cfg = RobustConfig {
            inlier_noise_sigma: 1e-5,
            seed: 42,
            ..RobustConfig::default()
        };
        let est = FundamentalEstimator {
            estimate_distortion: false,
        };
        let a = mlesac(&data, &est, &cfg).unwrap();
        let b = mlesac(&data, &est, &cfg).unwrap();
        assert_eq!(a, b);
    }

    /// Records every hypothesis score to check the best-so-far property.
    struct Recording<'a> {
        inner: FundamentalEstimator,
        data: &'a [Correspondence],
        cfg: RobustConfig,
        seen: std::cell::RefCell<Vec<f64>>,
    }

    impl Estimator for Recording<'_> {
        type Model = crate::solvers::FundamentalCandidate;
        fn sample_size(&self) -> usize {
            self.inner.sample_size()
        }
        fn fit_minimal(&self, sample: &[Correspondence]) -> Vec<Self::Model> {
            let out = self.inner.fit_minimal(sample);
            for m in &out {
                self.seen
                    .borrow_mut()
                    .push(score_model(&self.inner, m, self.data, &self.cfg).0);
            }
            out
        }
        fn fit_nonminimal(
            &self,
            data: &[Correspondence],
            seed: &Self::Model,
        ) -> Option<Self::Model> {
            self.inner.fit_nonminimal(data, seed)
        }
        fn residual(&self, model: &Self::Model, c: &Correspondence) -> f64 {
            self.inner.residual(model, c)
        }
    }

    #[test]
    fn returned_score_is_best_seen() {
        let (_, data, _) = with_outliers(5, 120, 0.35);
        let mut data = data;
        // Perturb so hypotheses actually differ in score.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for c in data.iter_mut() {
            c.p_prime += Vector2::new(rng.random_range(-1e-4..1e-4), rng.random_range(-1e-4..1e-4));
        }
        let cfg = RobustConfig {
            inlier_noise_sigma: 1e-4,
            seed: 5,
            ..RobustConfig::default()
        };
        let rec = Recording {
            inner: FundamentalEstimator {
                estimate_distortion: false,
            },
            data: &data,
            cfg,
            seen: Default::default(),
        };
        let fit = mlesac(&data, &rec, &cfg).unwrap();
        let min_seen = rec
            .seen
            .borrow()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        assert!(fit.score <= min_seen);
    }

    #[test]
    fn invalid_config() {
        let cfg = RobustConfig {
            confidence: 1.0,
            ..RobustConfig::default()
        };
        assert!(matches!(
            mlesac(
                &[],
                &FundamentalEstimator {
                    estimate_distortion: false
                },
                &cfg
            ),
            Err(RobustError::InvalidConfig(_))
        ));
    }
}
