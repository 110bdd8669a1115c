//! `rpk`: synthesize scenes, generate pose pairs, train, predict, evaluate
//! and summarize.

mod config;
mod manifest;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use manifest::Run;
use rpk::dataset::{
    self, format_pairs, generate_pairs, gt_translation_stats, parse_pairs, parse_pose_file, Convention, FrameRecord,
    PairGenConfig, PosePair, Split, TranslationStats,
};
use rpk::eval::{batch_errors, report, HistogramGrids};
use rpk::geom::RelativePose;
use rpk::model::{checkpoint, predict, train, BackboneConfig, HeadVariant, Network, PoseEstimate, TrainConfig, TrainingData};
use rpk::synth::{self, SceneSpec};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "rpk", version, about = "Relative camera pose pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene: pose files, observations and landmarks.
    #[command(args_override_self = true)]
    Synth(SynthArgs),
    /// Pair frames of a Cambridge-style dataset directory.
    #[command(args_override_self = true)]
    GenPairs(GenPairsArgs),
    /// Train a network on pairs and observations.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Write relative pose predictions for pairs.
    #[command(args_override_self = true)]
    Predict(PredictArgs),
    /// Evaluate a checkpoint: medians, histograms and per-pair errors.
    #[command(args_override_self = true)]
    Eval(PredictArgs),
    /// Per-axis statistics of ground-truth relative translations.
    #[command(args_override_self = true)]
    Stats(StatsArgs),
    /// Re-run the command recorded in a manifest into a new directory.
    #[command(args_override_self = true)]
    Rerun(RerunArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
struct RunArgs {
    /// Output directory; must be empty or absent unless --force.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// File of key=value lines applied before the command-line flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
struct SynthArgs {
    #[command(flatten)]
    #[serde(flatten)]
    run: RunArgs,
    #[arg(long, default_value = "Synthetic")]
    name: String,
    /// Box side lengths in meters, `X,Y,Z`.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [40.0, 30.0, 10.0])]
    extent: Vec<f64>,
    #[arg(long, default_value_t = 32)]
    landmarks: usize,
    #[arg(long, default_value_t = 4)]
    sequences: usize,
    /// Training frames per sequence.
    #[arg(long, default_value_t = 50)]
    frames: usize,
    /// Held-out frames per sequence.
    #[arg(long, default_value_t = 12)]
    test_frames: usize,
    /// Pixel noise standard deviation, normalized image units.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 6)]
    waypoints: usize,
    #[arg(long, default_value_t = 10.0)]
    cone_half_angle: f64,
    #[arg(long, default_value_t = 20.0)]
    max_perturbation: f64,
}

#[derive(Args, Debug, Clone, Serialize)]
struct GenPairsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    run: RunArgs,
    /// A scene directory, or a directory of scene directories.
    #[arg(long)]
    dataset: PathBuf,
    /// Partners per frame.
    #[arg(long, default_value_t = 8)]
    k: usize,
    /// Maximum optical-axis angle in degrees.
    #[arg(long, default_value_t = 60.0)]
    theta_max: f64,
    /// Maximum center distance in meters (default: per-scene).
    #[arg(long)]
    d_max: Option<f64>,
    #[arg(long, default_value = "center")]
    convention: Convention,
    #[arg(long)]
    include_street: bool,
}

#[derive(Args, Debug, Clone, Serialize)]
struct DataArgs {
    /// Pose file whose line order matches the observation file.
    #[arg(long)]
    poses: PathBuf,
    #[arg(long)]
    observations: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    /// Scene name for the pose file (default: its directory name).
    #[arg(long)]
    scene: Option<String>,
    #[arg(long, default_value = "center")]
    convention: Convention,
}

#[derive(Args, Debug, Clone, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "rpnet")]
    variant: HeadVariant,
    /// Backbone hidden widths.
    #[arg(long, value_delimiter = ',', default_values_t = [256usize, 256])]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 256)]
    embedding: usize,
    /// Hidden width of the rpnet-fc head.
    #[arg(long, default_value_t = rpk::model::FC_HEAD_WIDTH)]
    head_width: usize,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Absolute pose loss weights for rpnet-plus, `A,B`.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0.3, 0.3])]
    lambda_abs: Vec<f64>,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Flip ground-truth quaternions onto the prediction's hemisphere.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    align_gt_sign: bool,
}

#[derive(Args, Debug, Clone, Serialize)]
struct PredictArgs {
    #[command(flatten)]
    #[serde(flatten)]
    run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
struct StatsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    run: RunArgs,
    /// Pair files; repeat the flag for several.
    #[arg(long, required = true)]
    pairs: Vec<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
struct RerunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RPK_LOG", "warn")).init();
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(raw: Vec<String>) -> Result<()> {
    let (argv, config_file) = config::resolve::<Cli>(raw)?;
    let cli = Cli::try_parse_from(&argv).unwrap_or_else(|e| e.exit());
    let recorded = &argv[1..];
    match &cli.command {
        Command::Synth(a) => with_run(&a.run, "synth", recorded, config_file, a, |r| synth_cmd(a, r)),
        Command::GenPairs(a) => with_run(&a.run, "gen-pairs", recorded, config_file, a, |r| gen_pairs_cmd(a, r)),
        Command::Train(a) => with_run(&a.run, "train", recorded, config_file, a, |r| train_cmd(a, r)),
        Command::Predict(a) => with_run(&a.run, "predict", recorded, config_file, a, |r| predict_cmd(a, r, false)),
        Command::Eval(a) => with_run(&a.run, "eval", recorded, config_file, a, |r| predict_cmd(a, r, true)),
        Command::Stats(a) => with_run(&a.run, "stats", recorded, config_file, a, |r| stats_cmd(a, r)),
        Command::Rerun(a) => {
            let m = manifest::load(&a.manifest)?;
            let mut argv = vec![argv[0].clone()];
            argv.extend(m.argv);
            argv.push("--out".into());
            argv.push(a.out.display().to_string());
            if a.force {
                argv.push("--force".into());
            }
            run(argv)
        }
    }
}

fn with_run<A: Serialize>(
    args: &RunArgs,
    name: &str,
    argv: &[String],
    config_file: Option<String>,
    full: &A,
    body: impl FnOnce(&mut Run) -> Result<()>,
) -> Result<()> {
    if let Some(n) = args.threads {
        if n == 0 {
            bail!("--threads must be positive");
        }
        // A second call in the same process fails harmlessly.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut run = Run::prepare(&args.out, args.force)?;
    body(&mut run)?;
    run.finish(name, argv, config_file, serde_json::to_value(full)?, args.seed)
}

fn synth_cmd(a: &SynthArgs, run: &mut Run) -> Result<()> {
    let spec = SceneSpec {
        name: a.name.clone(),
        extent: [a.extent[0], a.extent[1], a.extent[2]],
        landmarks: a.landmarks,
        sequences: a.sequences,
        frames_per_sequence: a.frames,
        test_frames_per_sequence: a.test_frames,
        noise_sigma: a.sigma,
        seed: a.run.seed,
        waypoints: a.waypoints,
        cone_half_angle_deg: a.cone_half_angle,
        max_perturbation_deg: a.max_perturbation,
    };
    let scene = synth::generate_scene(&spec)?;
    // Observation noise streams are derived from the seed, one per split.
    let obs_train = synth::observe_frames(&scene.train, &scene.landmarks, spec.noise_sigma, a.run.seed.wrapping_add(1));
    let obs_test = synth::observe_frames(&scene.test, &scene.landmarks, spec.noise_sigma, a.run.seed.wrapping_add(2));
    let dir = PathBuf::from(&spec.name);
    run.write(dir.join("dataset_train.txt"), dataset::format_pose_file(&scene.train))?;
    run.write(dir.join("dataset_test.txt"), dataset::format_pose_file(&scene.test))?;
    run.write(dir.join("observations_train.txt"), synth::format_observations(&obs_train))?;
    run.write(dir.join("observations_test.txt"), synth::format_observations(&obs_test))?;
    run.write(dir.join("landmarks.txt"), synth::format_landmarks(&scene.landmarks))?;
    log::info!("synth: {} train / {} test frames in {}", scene.train.len(), scene.test.len(), run.out.join(&dir).display());
    Ok(())
}

/// Scene directories under `root`, sorted by name; `root` itself if it holds
/// pose files.
fn scene_dirs(root: &Path, include_street: bool) -> Result<Vec<PathBuf>> {
    if root.join("dataset_train.txt").exists() || root.join("dataset_test.txt").exists() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root).with_context(|| format!("reading {}", root.display()))? {
        let path = entry?.path();
        let is_scene = path.join("dataset_train.txt").exists() || path.join("dataset_test.txt").exists();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if path.is_dir() && is_scene && (include_street || name != dataset::EXCLUDED_SCENE) {
            dirs.push(path);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        bail!("no scene directories with dataset_train.txt or dataset_test.txt under {}", root.display());
    }
    Ok(dirs)
}

#[derive(Serialize)]
struct PairStats {
    config: PairGenConfig,
    train: BTreeMap<String, dataset::PairCounts>,
    test: BTreeMap<String, dataset::PairCounts>,
}

fn gen_pairs_cmd(a: &GenPairsArgs, run: &mut Run) -> Result<()> {
    let cfg = PairGenConfig {
        pairs_per_image: a.k,
        theta_max_deg: a.theta_max,
        d_max: a.d_max,
        seed: a.run.seed,
        convention: a.convention,
    };
    cfg.validate()?;
    let mut stats = PairStats { config: cfg.clone(), train: BTreeMap::new(), test: BTreeMap::new() };
    for split in [Split::Train, Split::Test] {
        let mut frames = Vec::new();
        for dir in scene_dirs(&a.dataset, a.include_street)? {
            let file = dir.join(format!("dataset_{}.txt", split.as_str()));
            if !file.exists() {
                log::warn!("{} missing, skipping", file.display());
                continue;
            }
            run.input(&file);
            frames.extend(dataset::load_scene_split(&dir, split)?);
        }
        let set = generate_pairs(&frames, &cfg, split)?;
        log::info!("{}: {} pairs from {} frames", split.as_str(), set.pairs.len(), frames.len());
        run.write(format!("pairs_{}.txt", split.as_str()), format_pairs(&set.pairs))?;
        match split {
            Split::Train => stats.train = set.counts,
            Split::Test => stats.test = set.counts,
        }
    }
    run.write("pair_stats.json", serde_json::to_string_pretty(&stats)? + "\n")?;
    Ok(())
}

struct Loaded {
    frames: Vec<FrameRecord>,
    observations: Vec<Vec<f64>>,
    pairs: Vec<PosePair>,
}

fn load_data(d: &DataArgs, run: &mut Run) -> Result<Loaded> {
    let scene = d.scene.clone().unwrap_or_else(|| {
        d.poses
            .parent()
            .and_then(Path::file_name)
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scene".into())
    });
    run.input(&d.poses);
    let frames = parse_pose_file(&d.poses, &scene).with_context(|| format!("parsing {}", d.poses.display()))?;
    let observations: Vec<Vec<f64>> = synth::parse_observations(&run.read(&d.observations)?)
        .with_context(|| format!("parsing {}", d.observations.display()))?
        .into_iter()
        .map(|o| o.values)
        .collect();
    let pairs = parse_pairs(&run.read(&d.pairs)?, Split::Train).with_context(|| format!("parsing {}", d.pairs.display()))?;
    if pairs.is_empty() {
        return Err(rpk::Error::EmptyInput("no pairs in pair file").into());
    }
    Ok(Loaded { frames, observations, pairs })
}

fn train_cmd(a: &TrainArgs, run: &mut Run) -> Result<()> {
    let data = load_data(&a.data, run)?;
    let training = TrainingData::<f64>::from_dataset(&data.frames, &data.observations, &data.pairs, a.data.convention)?;
    let backbone = BackboneConfig {
        input_dim: training.inputs.first().map_or(0, Vec::len),
        hidden: a.hidden.clone(),
        embedding_dim: a.embedding,
        head_width: a.head_width,
    };
    let mut net = Network::<f64>::new(a.variant, backbone, a.run.seed)?;
    net.fit_input_normalization(&training.inputs)?;
    let cfg = TrainConfig {
        beta: a.beta,
        lambda_abs: [a.lambda_abs[0], a.lambda_abs[1]],
        learning_rate: a.lr,
        momentum: a.momentum,
        batch_size: a.batch_size,
        epochs: a.epochs,
        seed: a.run.seed,
        align_gt_sign: a.align_gt_sign,
        grad_clip: a.grad_clip,
    };
    log::info!("training {} ({} parameters) on {} pairs", a.variant, net.parameter_count(), training.pairs.len());
    let out = train(net, &training, &cfg)?;
    let path = run.out.join("checkpoint.bin");
    checkpoint::save(&out.network, &path)?;
    run.record_output(path);
    let mut csv = String::from("epoch,mean_loss\n");
    for (i, l) in out.loss_curve.iter().enumerate() {
        csv.push_str(&format!("{},{l}\n", i + 1));
    }
    run.write("loss.csv", csv)?;
    Ok(())
}

fn predictions_text(pairs: &[PosePair], est: &[PoseEstimate<f64>]) -> String {
    let rows: Vec<PosePair> = pairs
        .iter()
        .zip(est)
        .map(|(p, e)| PosePair { gt_relative: RelativePose::new(e.rotation, e.translation), ..p.clone() })
        .collect();
    format_pairs(&rows)
}

fn predict_cmd(a: &PredictArgs, run: &mut Run, evaluate: bool) -> Result<()> {
    run.input(&a.checkpoint);
    let net: Network<f64> = checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let data = load_data(&a.data, run)?;
    let set = TrainingData::<f64>::from_dataset(&data.frames, &data.observations, &data.pairs, a.data.convention)?;
    let idx: Vec<(usize, usize)> = set.pairs.iter().map(|p| (p.a, p.b)).collect();
    let est = predict(&net, &set.inputs, &idx)?;
    run.write("predictions.txt", predictions_text(&data.pairs, &est))?;
    if !evaluate {
        return Ok(());
    }
    let errors = batch_errors(&est, &data.pairs)?;
    let rep = report(&errors, &data.pairs, &HistogramGrids::default())?;
    run.write("metrics.json", serde_json::to_string_pretty(&rep)? + "\n")?;
    let h = &rep.overall.histograms;
    run.write("hist_rotation.csv", h.rotation_deg.to_csv())?;
    run.write("hist_translation.csv", h.translation_m.to_csv())?;
    if let Some(d) = &h.direction_deg {
        run.write("hist_direction.csv", d.to_csv())?;
    }
    let m = &rep.overall.medians;
    println!("median translation {:.4} m, rotation {:.4} deg over {} pairs", m.translation_m, m.rotation_deg, errors.len());
    Ok(())
}

#[derive(Serialize)]
struct StatsReport {
    overall: TranslationStats,
    scenes: BTreeMap<String, TranslationStats>,
}

fn stats_cmd(a: &StatsArgs, run: &mut Run) -> Result<()> {
    let mut pairs = Vec::new();
    for p in &a.pairs {
        pairs.extend(parse_pairs(&run.read(p)?, Split::Train).with_context(|| format!("parsing {}", p.display()))?);
    }
    let overall = gt_translation_stats(&pairs)?;
    let mut grouped: BTreeMap<String, Vec<PosePair>> = BTreeMap::new();
    for p in pairs {
        grouped.entry(p.scene.clone()).or_default().push(p);
    }
    let scenes = grouped
        .into_iter()
        .map(|(k, v)| Ok((k, gt_translation_stats(&v)?)))
        .collect::<rpk::Result<_>>()?;
    run.write("translation_stats.json", serde_json::to_string_pretty(&StatsReport { overall, scenes })? + "\n")?;
    Ok(())
}
