use std::hint::black_box;
use std::time::Instant;

use super::{
    generate_problem, generate_rotation_pair, BenchError, Chart, ExperimentReport, SyntheticConfig,
    SyntheticProblem,
};
use crate::geom::{aligned_frobenius_error, Correspondence, RadialDistortion};
use crate::robust::{
    gric_score, select_motion_model, GricParams, MotionKind, RobustConfig, SelectionConfig,
};
use crate::solvers::{
    distorted_sampson_error, solve_f_8pt_general, solve_spherical_f_4pt,
    solve_spherical_f_lambda_6pt, FundamentalCandidate,
};

/// Distortion used for the six-point solver's problems.
const LAMBDA_6PT: f64 = -0.2;

/// Seed of trial `trial` in an experiment seeded with `seed`.
pub fn trial_seed(seed: u64, trial: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ trial
            .wrapping_mul(0xBF58_476D_1CE4_E5B9)
            .wrapping_add(trial)
}

fn problem(seed: u64, lambda: f64, sigma: f64) -> Result<SyntheticProblem, BenchError> {
    generate_problem(&SyntheticConfig {
        seed,
        lambda_gt: lambda,
        pixel_noise_sigma: sigma,
        n_points: 20,
        ..SyntheticConfig::default()
    })
}

/// The candidate that best explains a held-out correspondence.
fn pick(
    candidates: Vec<FundamentalCandidate>,
    held_out: &Correspondence,
) -> Option<FundamentalCandidate> {
    candidates
        .into_iter()
        .min_by(|a, b| a.residual(held_out).total_cmp(&b.residual(held_out)))
}

struct Outcome {
    f_error: f64,
    lambda_error: f64,
    solutions: f64,
}

fn run_4pt(pb: &SyntheticProblem) -> Outcome {
    match solve_spherical_f_4pt(&pb.correspondences[..4]) {
        Ok(c) => {
            let n = c.len() as f64;
            let best = pick(c, &pb.correspondences[4]).unwrap();
            Outcome {
                f_error: aligned_frobenius_error(
                    &best.fundamental.matrix(),
                    &pb.fundamental.matrix(),
                ),
                lambda_error: f64::NAN,
                solutions: n,
            }
        }
        Err(_) => Outcome {
            f_error: f64::NAN,
            lambda_error: f64::NAN,
            solutions: 0.0,
        },
    }
}

fn run_6pt(pb: &SyntheticProblem) -> Outcome {
    match solve_spherical_f_lambda_6pt(&pb.correspondences[..6]) {
        Ok(c) => {
            let n = c.len() as f64;
            let best = pick(c, &pb.correspondences[6]).unwrap();
            Outcome {
                f_error: aligned_frobenius_error(
                    &best.fundamental.matrix(),
                    &pb.fundamental.matrix(),
                ),
                lambda_error: (best.distortion_or_none().lambda - pb.lambda).abs()
                    / pb.lambda.abs(),
                solutions: n,
            }
        }
        Err(_) => Outcome {
            f_error: f64::NAN,
            lambda_error: f64::NAN,
            solutions: 0.0,
        },
    }
}

fn run_8pt(pb: &SyntheticProblem, n: usize) -> f64 {
    solve_f_8pt_general(&pb.correspondences[..n]).map_or(f64::NAN, |f| {
        aligned_frobenius_error(&f, &pb.fundamental.matrix())
    })
}

fn median(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values
        .map(|x| if x.is_nan() { f64::INFINITY } else { x })
        .collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn fraction_below(values: impl Iterator<Item = f64>, threshold: f64) -> f64 {
    let (mut below, mut total) = (0usize, 0usize);
    for v in values {
        total += 1;
        below += usize::from(v < threshold);
    }
    below as f64 / total.max(1) as f64
}

/// Noiseless minimal problems: four-point (with a held-out point), six-point
/// on data with distortion, and the eight-point baseline on the four-point
/// problem's data.
pub fn run_stability_experiment(trials: usize, seed: u64) -> Result<ExperimentReport, BenchError> {
    let mut rows = Vec::with_capacity(trials);
    for t in 0..trials {
        let s = trial_seed(seed, t as u64);
        let plain = problem(s, 0.0, 0.0)?;
        let distorted = problem(s ^ 0x5555, LAMBDA_6PT, 0.0)?;
        let four = run_4pt(&plain);
        let six = run_6pt(&distorted);
        let eight = run_8pt(&plain, 8);
        rows.push(vec![
            t as f64,
            four.f_error,
            eight,
            six.f_error,
            six.lambda_error,
            four.solutions,
            six.solutions,
        ]);
    }
    let col = |k: usize| rows.iter().map(move |r| r[k]);
    let m4 = median(col(1));
    let m8 = median(col(2));
    let summary = vec![
        (
            "fraction_4pt_below_1e-12".to_string(),
            fraction_below(col(1), 1e-12),
        ),
        (
            "fraction_6pt_lambda_below_1e-6".to_string(),
            fraction_below(col(4), 1e-6),
        ),
        ("median_err_4pt".to_string(), m4),
        ("median_err_8pt".to_string(), m8),
        ("median_err_6pt".to_string(), median(col(3))),
        ("median_ratio_4pt_over_8pt".to_string(), m4 / m8),
        (
            "mean_solutions_4pt".to_string(),
            col(5).sum::<f64>() / trials.max(1) as f64,
        ),
        (
            "mean_solutions_6pt".to_string(),
            col(6).sum::<f64>() / trials.max(1) as f64,
        ),
    ];
    Ok(ExperimentReport {
        name: "stability".into(),
        columns: [
            "trial",
            "err_4pt",
            "err_8pt",
            "err_6pt",
            "lambda_rel_err_6pt",
            "solutions_4pt",
            "solutions_6pt",
        ]
        .map(String::from)
        .to_vec(),
        rows,
        summary,
        chart: Chart::Histogram {
            series: ["err_4pt", "err_8pt", "err_6pt", "lambda_rel_err_6pt"]
                .map(String::from)
                .to_vec(),
            bins: 50,
        },
    })
}

/// Spearman rank correlation; ties receive their average rank.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = 0.5 * (i + j) as f64 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Minimal-plus-one estimates at each pixel noise level.
pub fn run_noise_experiment(
    levels: &[f64],
    trials: usize,
    seed: u64,
) -> Result<ExperimentReport, BenchError> {
    let mut rows = Vec::with_capacity(levels.len() * trials);
    for (li, &sigma) in levels.iter().enumerate() {
        for t in 0..trials {
            let s = trial_seed(seed, (li * trials + t) as u64);
            let plain = problem(s, 0.0, sigma)?;
            let distorted = problem(s ^ 0x5555, LAMBDA_6PT, sigma)?;
            let four = run_4pt(&plain);
            let six = run_6pt(&distorted);
            let eight = run_8pt(&plain, 9);
            rows.push(vec![
                sigma,
                t as f64,
                four.f_error,
                six.f_error,
                six.lambda_error,
                eight,
            ]);
        }
    }
    let mut summary = Vec::new();
    let names = ["err_4pt", "err_6pt", "lambda_rel_err_6pt", "err_8pt"];
    for (k, name) in names.iter().enumerate() {
        let medians: Vec<f64> = levels
            .iter()
            .map(|&sigma| median(rows.iter().filter(|r| r[0] == sigma).map(|r| r[2 + k])))
            .collect();
        for (sigma, m) in levels.iter().zip(&medians) {
            summary.push((format!("median_{name}_sigma_{sigma}"), *m));
        }
        summary.push((format!("spearman_{name}"), spearman(levels, &medians)));
    }
    Ok(ExperimentReport {
        name: "noise".into(),
        columns: [
            "sigma",
            "trial",
            "err_4pt",
            "err_6pt",
            "lambda_rel_err_6pt",
            "err_8pt",
        ]
        .map(String::from)
        .to_vec(),
        rows,
        summary,
        chart: Chart::MedianCurves {
            x: "sigma".into(),
            series: names.map(String::from).to_vec(),
        },
    })
}

/// Warm per-call runtimes in microseconds, excluding data generation. The
/// summarized mean of each solver is the median of per-batch means.
pub fn run_timing_experiment(trials: usize, seed: u64) -> Result<ExperimentReport, BenchError> {
    let mut plain = Vec::with_capacity(trials);
    let mut distorted = Vec::with_capacity(trials);
    for t in 0..trials {
        let s = trial_seed(seed, t as u64);
        plain.push(problem(s, 0.0, 0.0)?);
        distorted.push(problem(s ^ 0x5555, LAMBDA_6PT, 0.0)?);
    }
    // Warm-up.
    for pb in plain.iter().take(50) {
        black_box(solve_spherical_f_4pt(black_box(&pb.correspondences[..4])).ok());
    }
    let time = |f: &dyn Fn()| {
        let start = Instant::now();
        f();
        start.elapsed().as_secs_f64() * 1e6
    };
    let mut rows = Vec::with_capacity(trials);
    for t in 0..trials {
        let t4 = time(&|| {
            black_box(solve_spherical_f_4pt(black_box(&plain[t].correspondences[..4])).ok());
        });
        let t6 = time(&|| {
            black_box(
                solve_spherical_f_lambda_6pt(black_box(&distorted[t].correspondences[..6])).ok(),
            );
        });
        let t8 = time(&|| {
            black_box(solve_f_8pt_general(black_box(&plain[t].correspondences[..8])).ok());
        });
        rows.push(vec![t as f64, t4, t6, t8]);
    }
    let batch = 100.min(trials.max(1));
    let batch_mean_median = |k: usize| {
        median(
            rows.chunks(batch)
                .map(|c| c.iter().map(|r| r[k]).sum::<f64>() / c.len() as f64),
        )
    };
    let (m4, m6, m8) = (
        batch_mean_median(1),
        batch_mean_median(2),
        batch_mean_median(3),
    );
    let summary = vec![
        ("mean_us_4pt".to_string(), m4),
        ("mean_us_6pt".to_string(), m6),
        ("mean_us_8pt".to_string(), m8),
        ("ratio_6pt_over_4pt".to_string(), m6 / m4),
    ];
    Ok(ExperimentReport {
        name: "timing".into(),
        columns: ["trial", "time_us_4pt", "time_us_6pt", "time_us_8pt"]
            .map(String::from)
            .to_vec(),
        rows,
        summary,
        chart: Chart::Histogram {
            series: ["time_us_4pt", "time_us_6pt", "time_us_8pt"]
                .map(String::from)
                .to_vec(),
            bins: 50,
        },
    })
}

/// Pairs per trial of the model selection experiment, generated like the
/// solver experiments (rotation up to 10 degrees, 1000 points at depth
/// 6 to 10) with distortion and 0.5 px noise: one with the second camera
/// moved on the sphere, one pure rotation.
fn selection_pair(seed: u64, rotation: bool) -> Result<SyntheticProblem, BenchError> {
    let cfg = SyntheticConfig {
        seed,
        pixel_noise_sigma: SELECTION_NOISE_PX,
        lambda_gt: LAMBDA_6PT,
        ..SyntheticConfig::default()
    };
    if rotation {
        generate_rotation_pair(&cfg)
    } else {
        generate_problem(&cfg)
    }
}

const SELECTION_NOISE_PX: f64 = 0.5;

/// One model selection trial: `[trial, planted_rotation, selected_rotation,
/// gric_f, gric_r, gric_f_truth]`. The last column scores the ground-truth
/// fundamental matrix (infinite for rotation pairs, where none exists).
fn selection_trial(seed: u64, t: usize, rotation: bool) -> Result<Vec<f64>, BenchError> {
    let s = trial_seed(seed, t as u64) ^ u64::from(rotation);
    let pb = selection_pair(s, rotation)?;
    let sigma = SELECTION_NOISE_PX / pb.frame.scale();
    let cfg = SelectionConfig {
        robust: RobustConfig {
            inlier_noise_sigma: sigma,
            seed: s,
            ..RobustConfig::default()
        },
        ..SelectionConfig::default()
    };
    let (selected, gf, gr) = match select_motion_model(&pb.correspondences, &cfg) {
        Ok(m) => (
            f64::from(u8::from(m.kind == MotionKind::PureRotation)),
            m.gric_f,
            m.gric_r,
        ),
        Err(_) => (f64::NAN, f64::NAN, f64::NAN),
    };
    let truth = if rotation {
        f64::INFINITY
    } else {
        let d = RadialDistortion::new(pb.lambda);
        let res: Vec<f64> = pb
            .correspondences
            .iter()
            .map(|c| distorted_sampson_error(&pb.fundamental.matrix(), d, c))
            .collect();
        gric_score(&res, &GricParams::torr(sigma, 3, 5, res.len()))
    };
    Ok(vec![
        t as f64,
        f64::from(u8::from(rotation)),
        selected,
        gf,
        gr,
        truth,
    ])
}

/// GRIC model selection on `trials` planted pairs of each class.
///
/// Besides the accuracy per class, the summary reports how many spherical
/// pairs are separable at all: those whose ground-truth fundamental matrix
/// scores below the fitted rotation model. Small or roll-dominated
/// rotations move the camera center so little that the pair is
/// rotation-consistent within the noise.
pub fn run_model_selection_experiment(
    trials: usize,
    seed: u64,
) -> Result<ExperimentReport, BenchError> {
    let jobs: Vec<(usize, bool)> = (0..trials).flat_map(|t| [(t, false), (t, true)]).collect();
    let threads = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(jobs.len().max(1));
    let chunk = jobs.len().div_ceil(threads).max(1);
    let results: Vec<Result<Vec<f64>, BenchError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|&(t, rotation)| selection_trial(seed, t, rotation))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("selection worker panicked"))
            .collect()
    });
    let rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let fraction = |of: &[&Vec<f64>], pred: &dyn Fn(&Vec<f64>) -> bool| {
        of.iter().filter(|r| pred(r)).count() as f64 / of.len().max(1) as f64
    };
    let of_class = |class: f64| rows.iter().filter(|r| r[1] == class).collect::<Vec<_>>();
    let (spherical, rotational) = (of_class(0.0), of_class(1.0));
    let separable: Vec<&Vec<f64>> = spherical.iter().copied().filter(|r| r[5] < r[4]).collect();
    let correct = |r: &Vec<f64>| r[2] == r[1];
    Ok(ExperimentReport {
        name: "model_selection".into(),
        columns: [
            "trial",
            "planted_rotation",
            "selected_rotation",
            "gric_f",
            "gric_r",
            "gric_f_truth",
        ]
        .map(String::from)
        .to_vec(),
        summary: vec![
            (
                "accuracy_fundamental".to_string(),
                fraction(&spherical, &correct),
            ),
            (
                "accuracy_rotation".to_string(),
                fraction(&rotational, &correct),
            ),
            (
                "separable_fundamental".to_string(),
                separable.len() as f64 / spherical.len().max(1) as f64,
            ),
            (
                "accuracy_fundamental_separable".to_string(),
                fraction(&separable, &correct),
            ),
        ],
        rows,
        chart: Chart::Histogram {
            series: ["gric_f", "gric_r"].map(String::from).to_vec(),
            bins: 50,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_selection_small_run() {
        let r = run_model_selection_experiment(10, 3).unwrap();
        assert_eq!(r.rows.len(), 20);
        assert!(
            r.summary_value("accuracy_rotation").unwrap() >= 0.9,
            "{:?}",
            r.summary
        );
        assert!(
            r.summary_value("accuracy_fundamental_separable").unwrap() >= 0.9,
            "{:?}",
            r.summary
        );
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!(
            (spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 2.0, 3.0]) - 0.9486832980505138).abs()
                < 1e-12
        );
    }

    #[test]
    fn small_stability_run() {
        let r = run_stability_experiment(50, 1).unwrap();
        assert_eq!(r.rows.len(), 50);
        let frac = r
            .summary
            .iter()
            .find(|(k, _)| k == "fraction_4pt_below_1e-12")
            .unwrap()
            .1;
        assert!(frac > 0.9);
        assert_eq!(r, run_stability_experiment(50, 1).unwrap());
    }

    #[test]
    fn timing_honors_trial_count() {
        let r = run_timing_experiment(30, 2).unwrap();
        assert_eq!(r.rows.len(), 30);
    }
}
