//! Command-line front end: on-disk formats and the `spherical-sfm` commands.

pub mod recon_file;
pub mod tracks_file;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use spherical_sfm::bench::{
    emit_report, generate_sequence, run_model_selection_experiment, run_noise_experiment,
    run_stability_experiment, run_timing_experiment, SequenceConfig,
};
use spherical_sfm::geom::{rotation_log, ImageFrame};
use spherical_sfm::pipeline::{
    keyframe_correspondences, run_reconstruction, Keyframe, PipelineConfig,
};
use spherical_sfm::robust::{compare_motion_models, MotionKind, RobustConfig, SelectionConfig};
use spherical_sfm::tracks::TrackSet;

use recon_file::write_reconstruction;
use tracks_file::{read_tracks, write_tracks, TracksDocument};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "spherical-sfm",
    version,
    about = "Structure from motion for panorama-style video under spherical camera motion"
)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Experiment {
    Stability,
    Noise,
    Timing,
    Selection,
}

impl Experiment {
    fn default_trials(self) -> usize {
        match self {
            Experiment::Stability | Experiment::Timing => 10_000,
            Experiment::Noise => 1000,
            Experiment::Selection => 500,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Reconstruct cameras, calibration and structure from a tracks file.
    Reconstruct {
        tracks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Weight of the sphere prior in bundle adjustment.
        #[arg(long, default_value_t = 100.0)]
        sphere_weight: f64,
        /// Reprojection error (pixels) above which landmarks are filtered.
        #[arg(long, default_value_t = 4.0)]
        filter_px: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Assume an undistorted camera.
        #[arg(long)]
        no_distortion: bool,
        /// Bundle adjustment schedule over strategies A-D.
        #[arg(long, default_value = "ABABCD")]
        schedule: String,
        /// Inlier noise level for robust estimation, pixels.
        #[arg(long, default_value_t = 1.0)]
        sigma_px: f64,
    },
    /// Run a synthetic experiment and write its CSV and SVG.
    Bench {
        #[arg(value_enum)]
        experiment: Experiment,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the tracks of a synthetic 360 degree spherical capture.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 120)]
        keyframes: usize,
        /// Focal length, pixels.
        #[arg(long, default_value_t = 1200.0)]
        focal: f64,
        /// Distortion coefficient, normalized units.
        #[arg(long, default_value_t = -0.2, allow_hyphen_values = true)]
        lambda: f64,
        /// Pixel noise standard deviation.
        #[arg(long, default_value_t = 0.5)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4000)]
        points: usize,
        /// Total yaw of the capture, degrees.
        #[arg(long, default_value_t = 360.0)]
        sweep: f64,
    },
    /// Fit both motion models to one frame pair and print them.
    SolvePair {
        tracks: PathBuf,
        /// Two frame indices, `i,j`.
        #[arg(long, value_parser = parse_frame_pair)]
        frames: (usize, usize),
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        sigma_px: f64,
    },
}

fn parse_frame_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected 'i,j', got {s:?}"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| format!("invalid frame index {v:?}"))
    };
    let (a, b) = (parse(a)?, parse(b)?);
    if a == b {
        return Err("the two frames must differ".into());
    }
    Ok((a, b))
}

/// Failure of a command, tagged with the stage that produced it.
#[derive(Debug)]
pub struct CommandError {
    pub stage: String,
    pub message: String,
}

impl CommandError {
    fn new(stage: impl Into<String>, message: impl ToString) -> Self {
        Self {
            stage: stage.into(),
            message: message.to_string(),
        }
    }
}

impl fmt::Display for CommandError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage, self.message)
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn execute(command: Command) -> Result<(), CommandError> {
    match command {
        Command::Reconstruct {
            tracks,
            out,
            sphere_weight,
            filter_px,
            seed,
            no_distortion,
            schedule,
            sigma_px,
        } => {
            let doc = load_tracks(&tracks)?;
            let mut cfg = PipelineConfig::default().with_seed(seed);
            if no_distortion {
                cfg = cfg.without_distortion();
            }
            cfg.ba.sphere_prior_weight = sphere_weight;
            cfg.ba.reprojection_filter_threshold = filter_px;
            cfg.ba.schedule = schedule;
            cfg.view_graph.selection.robust.inlier_noise_sigma = sigma_px / doc.frame.scale();
            let recon = run_reconstruction(&doc.tracks, &cfg)
                .map_err(|e| CommandError::new(e.stage.to_string(), e.source))?;
            let paths =
                write_reconstruction(&recon, &out).map_err(|e| CommandError::new("output", e))?;
            println!(
                "{} cameras, {} landmarks, focal {:.2} px, lambda {:.4}, rms {:.3} px",
                recon.poses.len(),
                recon.landmarks.len(),
                recon.intrinsics.focal(),
                recon.distortion.lambda,
                recon.rms_reprojection_error(&doc.tracks)
            );
            print_paths(&paths);
        }
        Command::Bench {
            experiment,
            out,
            trials,
            seed,
        } => {
            let trials = trials.unwrap_or(experiment.default_trials());
            let report = match experiment {
                Experiment::Stability => run_stability_experiment(trials, seed),
                Experiment::Noise => {
                    let levels: Vec<f64> = (0..=8).map(|k| 0.25 * k as f64).collect();
                    run_noise_experiment(&levels, trials, seed)
                }
                Experiment::Timing => run_timing_experiment(trials, seed),
                Experiment::Selection => run_model_selection_experiment(trials, seed),
            }
            .map_err(|e| CommandError::new("bench", e))?;
            for (name, value) in &report.summary {
                println!("{name} {value}");
            }
            let paths = emit_report(&report, &out).map_err(|e| CommandError::new("output", e))?;
            print_paths(&paths);
        }
        Command::Synth {
            out,
            keyframes,
            focal,
            lambda,
            noise,
            seed,
            points,
            sweep,
        } => {
            let cfg = SequenceConfig {
                frames: keyframes,
                focal,
                lambda_gt: lambda,
                pixel_noise_sigma: noise,
                seed,
                n_points: points,
                sweep_deg: sweep,
                ..SequenceConfig::default()
            };
            let seq = generate_sequence(&cfg).map_err(|e| CommandError::new("synth", e))?;
            let mut doc = TracksDocument::new(seq.tracks, keyframes);
            doc.metadata = vec![
                ("source".into(), "synthetic".into()),
                ("focal_px".into(), focal.to_string()),
                ("lambda".into(), lambda.to_string()),
                ("noise_px".into(), noise.to_string()),
                ("seed".into(), seed.to_string()),
            ];
            write_tracks(&doc, &out).map_err(|e| CommandError::new("output", e))?;
            println!(
                "{} tracks over {} frames",
                doc.tracks.tracks().len(),
                keyframes
            );
            print_paths(&[out]);
        }
        Command::SolvePair {
            tracks,
            frames: (i, j),
            seed,
            sigma_px,
        } => {
            let doc = load_tracks(&tracks)?;
            let (a, b) = (
                frame_observations(&doc.tracks, i),
                frame_observations(&doc.tracks, j),
            );
            let (_, corrs) = keyframe_correspondences(&a, &b, &doc.frame);
            let cfg = SelectionConfig {
                robust: RobustConfig {
                    seed,
                    inlier_noise_sigma: sigma_px / doc.frame.scale(),
                    ..RobustConfig::default()
                },
                ..SelectionConfig::default()
            };
            let cmp = compare_motion_models(&corrs, &cfg)
                .map_err(|e| CommandError::new("solve-pair", e))?;
            print_comparison(&cmp, corrs.len(), &doc.frame);
        }
    }
    Ok(())
}

fn load_tracks(path: &Path) -> Result<TracksDocument, CommandError> {
    read_tracks(path).map_err(|e| CommandError::new("tracks", format!("{}: {e}", path.display())))
}

fn frame_observations(tracks: &TrackSet, frame_index: usize) -> Keyframe {
    let mut observations: Vec<_> = tracks
        .tracks()
        .iter()
        .filter_map(|t| t.at(frame_index).map(|o| (t.id, o.position)))
        .collect();
    observations.sort_by_key(|o| o.0);
    Keyframe {
        frame_index,
        observations,
    }
}

fn print_comparison(cmp: &spherical_sfm::robust::MotionComparison, n: usize, frame: &ImageFrame) {
    println!("correspondences {n}");
    match &cmp.fundamental {
        Some((model, inliers)) => {
            let p = model.fundamental.params();
            println!(
                "fundamental: params [{:.6e}, {:.6e}, {:.6e}, {:.6e}, {:.6e}, {:.6e}], lambda {:.4}, inliers {}, gric {:.2}",
                p[0],
                p[1],
                p[2],
                p[3],
                p[4],
                p[5],
                model.distortion_or_none().lambda,
                inliers.len(),
                cmp.gric_f
            );
        }
        None => println!("fundamental: no model"),
    }
    match &cmp.rotation {
        Some(r) => println!(
            "rotation: angle {:.4} deg, focal {:.2} px, lambda {:.4}, inliers {}, gric {:.2}",
            rotation_log(&r.rotation).norm().to_degrees(),
            r.focal * frame.scale(),
            r.distortion.lambda,
            r.inliers.len(),
            cmp.gric_r
        ),
        None => println!("rotation: no model"),
    }
    let kind = if cmp.gric_r < cmp.gric_f {
        MotionKind::PureRotation
    } else {
        MotionKind::FundamentalSpherical
    };
    println!("selected {kind:?}");
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}
