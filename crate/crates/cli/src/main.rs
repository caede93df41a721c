use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mvdp::aggregation::{ReferenceFrame, DEFAULT_PROBABILITY_THRESHOLD};
use mvdp::body::{Skeleton, DEFAULT_PART_COUNT};
use mvdp::classifier::{Classifier, OracleClassifier};
use mvdp::config::parse_key_values;
use mvdp::dataset::{
    container_path, generate_dataset, generate_walk_dataset, walk_container_path, DatasetReader, GenConfig,
};
use mvdp::evaluation::{
    default_thresholds, joint_error_csv, mean_joint_error, precision_at, precision_csv, summary_text,
    HEADLINE_THRESHOLD,
};
use mvdp::model_io::{load_classifier, save_classifier};
use mvdp::pipeline::{build_training_set, run_experiment, ExperimentReport, PoseModel, SampleSource, Timings, STAGE_NAMES};
use mvdp::regressor::{
    cross_validate, default_lambda_grid, default_smoothing_grid, Pose, RegressorModel, SmoothingConfig, TrainingSet,
};
use mvdp::stage::{Split, Stage};
use mvdp::synth::{RenderConfig, WalkSequenceSpec};
use mvdp::train::{accuracy_csv, parse_training_config, train_curriculum, StageData};

pub const PREDICTION_CSV_HEADER: &str = "frame,joint,x,y,z";
const LOCK_NAME: &str = ".mvdp.lock";

/// Multiview depth motion capture: data generation, training, inference
/// and evaluation.
#[derive(Parser, Debug)]
#[command(name = "mvdp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic dataset container and its manifest.
    GenData(GenDataArgs),
    /// Train the dense part classifier with a curriculum schedule.
    TrainClassifier(TrainClassifierArgs),
    /// Fit the pose regressor and pick ridge/smoothing settings by
    /// cross-validation.
    TrainRegressor(TrainRegressorArgs),
    /// Run the full pipeline on a dataset and write predictions.
    Run(RunArgs),
    /// Score a predictions file against groundtruth.
    Eval(EvalArgs),
    /// Time every pipeline stage.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DataKind {
    Easy,
    Inter,
    Hard,
    /// Walking sequences seen by fixed cameras.
    Walk,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long, value_enum)]
    stage: DataKind,
    /// train, validation or test
    #[arg(long, value_parser = parse_split)]
    split: Split,
    /// Number of samples; for `walk`, the number of sequences.
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 3)]
    cameras: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Image width and height in pixels.
    #[arg(long, default_value_t = 128)]
    size: usize,
    /// Gaussian depth noise in meters.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Frames per walking sequence.
    #[arg(long, default_value_t = 60)]
    walk_frames: usize,
}

#[derive(Args, Debug)]
struct TrainClassifierArgs {
    /// Directory holding `<stage>_train.mvds` and `<stage>_validation.mvds`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Optional `key = value` training config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Curriculum order, e.g. `easy,inter,hard` [default: easy,inter,hard]
    #[arg(long)]
    stages: Option<String>,
    /// Iterations per stage, one value or one per stage [default: 1000]
    #[arg(long)]
    iterations: Option<String>,
    /// Learning rate, one value or one per stage [default: 0.05]
    #[arg(long)]
    learning_rate: Option<String>,
    /// Batch size, one value or one per stage [default: 8]
    #[arg(long)]
    batch_size: Option<String>,
    /// Network input resolution S [default: 128]
    #[arg(long)]
    input_size: Option<usize>,
    /// Validation passes every N iterations; 0 logs only at stage ends [default: 0]
    #[arg(long)]
    eval_every: Option<usize>,
    /// Frames used per validation pass [default: 200]
    #[arg(long)]
    validation_frames: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainRegressorArgs {
    /// Training containers; frames of walking containers keep their
    /// sequence grouping for smoothing selection.
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// `oracle` or a classifier model file.
    #[arg(long, default_value = "oracle")]
    classifier: String,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = DEFAULT_PROBABILITY_THRESHOLD)]
    threshold: f32,
    /// Frame the features and targets are expressed in: camera0 or world.
    #[arg(long, default_value = "camera0", value_parser = parse_reference)]
    reference: ReferenceFrame,
    /// Seed for oracle label noise.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    data: PathBuf,
    /// Pose model written by `train-regressor`.
    #[arg(long)]
    regressor: PathBuf,
    /// `oracle` or a classifier model file.
    #[arg(long, default_value = "oracle")]
    classifier: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    smoothing: Toggle,
    /// Only the first N frames.
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predictions CSV (`frame,joint,x,y,z`).
    #[arg(long)]
    predictions: PathBuf,
    /// Groundtruth as a predictions-format CSV or an `.mvds` container.
    #[arg(long)]
    groundtruth: PathBuf,
    /// Directory for report files; omitted means print only.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Headline precision threshold in meters.
    #[arg(long, default_value_t = HEADLINE_THRESHOLD)]
    threshold: f64,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    data: PathBuf,
    /// Pose model; without one a ridge model is fitted on the bench frames
    /// (timings only).
    #[arg(long)]
    regressor: Option<PathBuf>,
    #[arg(long, default_value = "oracle")]
    classifier: String,
    #[arg(long, default_value_t = 100)]
    frames: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Bad input from the operator; exits with status 2.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    s.parse().map_err(|e: mvdp::Error| e.to_string())
}

fn parse_reference(s: &str) -> std::result::Result<ReferenceFrame, String> {
    s.parse().map_err(|e: mvdp::Error| e.to_string())
}

/// Exclusive claim on an output directory, released on drop.
struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(LOCK_NAME);
        let mut f = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => anyhow!(
                    "{} is locked by another mvdp process (remove {} if stale)",
                    dir.display(),
                    path.display()
                ),
                _ => anyhow!("cannot create {}: {e}", path.display()),
            })?;
        writeln!(f, "{}", std::process::id())?;
        Ok(Self { path })
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("MVDP_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| usage(format!("MVDP_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn open_dataset(path: &Path) -> Result<DatasetReader> {
    if !path.is_file() {
        return Err(usage(format!("dataset {} does not exist", path.display())));
    }
    DatasetReader::open(path).with_context(|| format!("opening {}", path.display()))
}

fn load_classifier_arg(spec: &str) -> Result<Classifier> {
    if spec == "oracle" {
        return Ok(Classifier::Oracle(OracleClassifier::exact(DEFAULT_PART_COUNT)));
    }
    let path = Path::new(spec);
    if !path.is_file() {
        return Err(usage(format!("classifier must be `oracle` or a model file; {spec} not found")));
    }
    let model = load_classifier(path).with_context(|| format!("loading classifier {spec}"))?;
    Ok(Classifier::Model(Box::new(model)))
}

fn load_pose_model(path: &Path) -> Result<PoseModel> {
    if !path.is_file() {
        return Err(usage(format!("regressor model {} does not exist", path.display())));
    }
    PoseModel::load(path).with_context(|| format!("loading {}", path.display()))
}

fn cmd_gen_data(a: GenDataArgs) -> Result<()> {
    if a.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    if a.cameras == 0 || a.cameras > 255 {
        return Err(usage("--cameras must be in 1..=255"));
    }
    if a.size < 8 || a.size > u16::MAX as usize {
        return Err(usage("--size must be at least 8"));
    }
    let _lock = OutputLock::acquire(&a.out)?;
    let config = GenConfig {
        render: RenderConfig {
            width: a.size,
            height: a.size,
            noise_sigma: a.noise,
            ..RenderConfig::default()
        },
        ..GenConfig::default()
    };
    let start = Instant::now();
    let (manifest, path) = match a.stage {
        DataKind::Walk => {
            let spec = WalkSequenceSpec {
                frames: a.walk_frames,
                n_cameras: a.cameras,
                ..WalkSequenceSpec::default()
            };
            let m = generate_walk_dataset(a.split, a.count, &spec, &a.out, a.seed, &config)?;
            (m, walk_container_path(&a.out, a.split))
        }
        kind => {
            let stage = match kind {
                DataKind::Easy => Stage::Easy,
                DataKind::Inter => Stage::Inter,
                _ => Stage::Hard,
            };
            let m = generate_dataset(stage, a.split, a.count, a.cameras, &a.out, a.seed, &config)?;
            (m, container_path(&a.out, stage, a.split))
        }
    };
    println!(
        "wrote {}: {} samples x {} cameras, {}x{}, {} joints, {} labels, {} distinct postures, seed {} ({:.1} s)",
        path.display(),
        manifest.sample_count,
        manifest.n_cameras,
        manifest.width,
        manifest.height,
        manifest.n_joints,
        manifest.n_labels,
        manifest.posture_ids.len(),
        manifest.seed,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn cmd_train_classifier(a: TrainClassifierArgs) -> Result<()> {
    let mut keys: BTreeMap<String, String> = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| usage(format!("reading {}: {e}", p.display())))?;
            parse_key_values(&text).map_err(|e| usage(e.to_string()))?
        }
        None => BTreeMap::new(),
    };
    let overrides = [
        ("stages", a.stages.clone()),
        ("iterations", a.iterations.clone()),
        ("learning_rate", a.learning_rate.clone()),
        ("batch_size", a.batch_size.clone()),
        ("input_size", a.input_size.map(|v| v.to_string())),
        ("eval_every", a.eval_every.map(|v| v.to_string())),
        ("validation_frames", a.validation_frames.map(|v| v.to_string())),
        ("seed", a.seed.map(|v| v.to_string())),
    ];
    for (k, v) in overrides {
        if let Some(v) = v {
            keys.insert(k.to_string(), v);
        }
    }
    let text: String = keys.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    let (config, schedule) = parse_training_config(&text).map_err(|e| usage(e.to_string()))?;

    let mut readers = BTreeMap::new();
    for s in &schedule.stages {
        if readers.contains_key(&s.dataset) {
            continue;
        }
        let train = open_dataset(&container_path(&a.data, s.dataset, Split::Train))?;
        let val = open_dataset(&container_path(&a.data, s.dataset, Split::Validation))?;
        readers.insert(s.dataset, (train, val));
    }
    let datasets: BTreeMap<Stage, StageData<'_>> = readers
        .iter()
        .map(|(&stage, (t, v))| (stage, StageData { train: t, validation: v }))
        .collect();

    let _lock = OutputLock::acquire(&a.out)?;
    let start = Instant::now();
    let outcome = train_curriculum(&schedule, &config, &datasets).map_err(|e| match e {
        mvdp::Error::NonFiniteLoss { iteration } => {
            anyhow!("training diverged at iteration {iteration} (non-finite loss); lower the learning rate")
        }
        e => e.into(),
    })?;
    let model_path = a.out.join("classifier.mvdm");
    save_classifier(&model_path, &outcome.model)?;
    fs::write(a.out.join("accuracy.csv"), accuracy_csv(&outcome.accuracy))?;
    let mut losses = String::from("stage,iteration,loss\n");
    for l in &outcome.losses {
        losses.push_str(&format!("{},{},{:.6}\n", l.stage, l.iteration, l.loss));
    }
    fs::write(a.out.join("loss.csv"), losses)?;
    for r in &outcome.accuracy {
        println!("{} iteration {}: validation accuracy {:.4}", r.stage, r.iteration, r.accuracy);
    }
    println!(
        "wrote {} ({} parameters, {} iterations, {:.1} s)",
        model_path.display(),
        outcome.model.param_count(),
        schedule.total_iterations(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

/// Appends `part` to `set`, renumbering sequences so that ids from
/// different containers never collide.
fn append_training_set(set: &mut TrainingSet, part: TrainingSet, next_id: &mut u32) {
    let mut remap = BTreeMap::new();
    for ((f, t), s) in part.features.into_iter().zip(part.targets).zip(part.sequences) {
        let id = *remap.entry(s).or_insert_with(|| {
            *next_id += 1;
            *next_id - 1
        });
        set.push(f, t, id);
    }
}

fn cmd_train_regressor(a: TrainRegressorArgs) -> Result<()> {
    if a.folds < 2 {
        return Err(usage("--folds must be at least 2"));
    }
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(usage("--threshold must be within [0, 1]"));
    }
    let classifier = load_classifier_arg(&a.classifier)?;
    let readers = a.data.iter().map(|p| open_dataset(p)).collect::<Result<Vec<_>>>()?;
    let _lock = OutputLock::acquire(&a.out)?;
    let cfg = mvdp::pipeline::PipelineConfig {
        n_labels: DEFAULT_PART_COUNT,
        threshold: a.threshold,
        reference: a.reference,
        seed: a.seed,
    };
    let start = Instant::now();
    let mut set = TrainingSet::default();
    let mut next_id = 0;
    for r in &readers {
        let part = build_training_set(r, &classifier, &cfg).with_context(|| format!("features of {}", r.path().display()))?;
        append_training_set(&mut set, part, &mut next_id);
    }
    println!("extracted features for {} frames ({:.1} s)", set.len(), start.elapsed().as_secs_f64());
    let cv = cross_validate(&set, &default_lambda_grid(), &default_smoothing_grid(), a.folds)?;
    fs::write(a.out.join("cv.csv"), cv.to_csv())?;
    let model = PoseModel {
        regressor: RegressorModel::fit(&set.features, &set.targets, cv.lambda)?,
        smoothing: cv.smoothing.clone(),
        threshold: a.threshold,
        reference: a.reference,
    };
    let path = a.out.join("regressor.mvdm");
    model.save(&path)?;
    println!(
        "selected lambda {:e}, smoothing window {} {:?}, cv error {:.4} m",
        cv.lambda,
        cv.smoothing.window(),
        cv.smoothing.weights(),
        cv.error
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn write_poses_csv(path: &Path, frames: &[usize], poses: &[Pose]) -> Result<()> {
    let mut w = std::io::BufWriter::new(File::create(path)?);
    writeln!(w, "{PREDICTION_CSV_HEADER}")?;
    for (f, pose) in frames.iter().zip(poses) {
        for (j, p) in pose.iter().enumerate() {
            writeln!(w, "{f},{j},{:.6},{:.6},{:.6}", p.x, p.y, p.z)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a `frame,joint,x,y,z` file into frame ids and poses.
fn read_poses_csv(path: &Path) -> Result<(Vec<usize>, Vec<Pose>)> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("reading {}: {e}", path.display())))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(PREDICTION_CSV_HEADER) {
        bail!("{}: expected header `{PREDICTION_CSV_HEADER}`", path.display());
    }
    let mut frames: Vec<usize> = Vec::new();
    let mut poses: Vec<Pose> = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || anyhow!("{}:{}: malformed row `{line}`", path.display(), n + 2);
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 5 {
            return Err(bad());
        }
        let frame: usize = cols[0].parse().map_err(|_| bad())?;
        let joint: usize = cols[1].parse().map_err(|_| bad())?;
        let mut xyz = [0.0; 3];
        for (v, c) in xyz.iter_mut().zip(&cols[2..]) {
            *v = c.parse().map_err(|_| bad())?;
        }
        if frames.last() != Some(&frame) {
            frames.push(frame);
            poses.push(Vec::new());
        }
        let pose = poses.last_mut().expect("pushed above");
        if joint != pose.len() {
            return Err(anyhow!("{}:{}: joints must be listed in order", path.display(), n + 2));
        }
        pose.push(nalgebra::Vector3::new(xyz[0], xyz[1], xyz[2]));
    }
    Ok((frames, poses))
}

fn print_timings(t: &Timings) {
    println!("{:<10} {:>10} {:>10}", "stage", "mean_ms", "p95_ms");
    for (i, name) in STAGE_NAMES.iter().enumerate() {
        println!("{name:<10} {:>10.3} {:>10.3}", t.mean_ms(i), t.p95_ms(i));
    }
    let post: f64 = mvdp::pipeline::POST_CLASSIFIER_STAGES
        .iter()
        .map(|s| t.mean_ms(Timings::stage_index(s).expect("known stage")))
        .sum();
    println!("non-classifier stages (fuse+features+predict+smooth): {post:.3} ms/frame");
}

fn print_throughput(t: &Timings) {
    let parts: Vec<String> = STAGE_NAMES
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let ms = t.mean_ms(i);
            if ms > 0.0 {
                format!("{n} {:.1}", 1e3 / ms)
            } else {
                format!("{n} inf")
            }
        })
        .collect();
    let frames = t.per_frame.len() as f64;
    println!(
        "throughput (frames/s): {}; end-to-end {:.2}",
        parts.join(", "),
        frames / (t.total_ms / 1e3).max(1e-9)
    );
}

struct Prefix<'a> {
    inner: &'a DatasetReader,
    len: usize,
}

impl SampleSource for Prefix<'_> {
    fn sample_count(&self) -> usize {
        self.len
    }
    fn sample(&self, index: usize) -> mvdp::Result<mvdp::synth::Sample> {
        self.inner.sample(index)
    }
    fn sequence(&self, index: usize) -> u32 {
        self.inner.sequence(index)
    }
}

fn report_skips(report: &ExperimentReport) {
    for (i, reason) in &report.skipped {
        eprintln!("skipped frame {i}: {reason}");
    }
    if !report.skipped.is_empty() {
        eprintln!("{} of {} frames skipped", report.skipped.len(), report.skipped.len() + report.frames.len());
    }
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let reader = open_dataset(&a.data)?;
    let mut model = load_pose_model(&a.regressor)?;
    let classifier = load_classifier_arg(&a.classifier)?;
    if a.smoothing == Toggle::Off {
        model.smoothing = SmoothingConfig::identity();
    }
    let _lock = OutputLock::acquire(&a.out)?;
    let source = Prefix {
        len: a.frames.unwrap_or(reader.len()).min(reader.len()),
        inner: &reader,
    };
    let report = run_experiment(&source, &classifier, &model.regressor, &model.smoothing, &model.pipeline_config(a.seed))?;
    report_skips(&report);
    write_poses_csv(&a.out.join("predictions.csv"), &report.frames, &report.predictions)?;
    write_poses_csv(&a.out.join("groundtruth.csv"), &report.frames, &report.groundtruth)?;
    fs::write(a.out.join("timings.csv"), report.timings.to_csv())?;
    println!("{}", summary_text(&report.joint_error, &report.precision));
    if let Some(acc) = report.dense_accuracy {
        println!("dense average per-class accuracy: {acc:.4}");
    }
    print_throughput(&report.timings);
    println!("wrote {}", a.out.join("predictions.csv").display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    if !(a.threshold > 0.0) {
        return Err(usage("--threshold must be positive"));
    }
    let (pf, preds) = read_poses_csv(&a.predictions)?;
    let (gf, gts) = if a.groundtruth.extension().is_some_and(|e| e == "mvds") {
        let r = open_dataset(&a.groundtruth)?;
        let gts = r.iter().map(|s| s.map(|s| s.joints)).collect::<mvdp::Result<Vec<_>>>()?;
        ((0..gts.len()).collect(), gts)
    } else {
        read_poses_csv(&a.groundtruth)?
    };
    // align by frame id when the predictions skip frames of a container
    let gts: Vec<Pose> = if pf != gf && pf.len() < gf.len() {
        let index: BTreeMap<usize, usize> = gf.iter().enumerate().map(|(i, &f)| (f, i)).collect();
        pf.iter()
            .map(|f| index.get(f).map(|&i| gts[i].clone()))
            .collect::<Option<_>>()
            .ok_or(mvdp::Error::CountMismatch {
                predictions: preds.len(),
                groundtruth: gts.len(),
            })?
    } else if pf != gf {
        return Err(mvdp::Error::CountMismatch {
            predictions: preds.len(),
            groundtruth: gts.len(),
        }
        .into());
    } else {
        gts
    };
    let report = mean_joint_error(&preds, &gts)?;
    let mut thresholds = default_thresholds();
    if !thresholds.iter().any(|t| (t - a.threshold).abs() < 1e-12) {
        thresholds.push(a.threshold);
        thresholds.sort_by(|x, y| x.total_cmp(y));
    }
    let curve = precision_at(&preds, &gts, &thresholds)?;
    let headline = curve.at(a.threshold).unwrap_or(0.0);
    println!("precision@{:.2} m: {headline:.4}", a.threshold);
    println!("{}", summary_text(&report, &curve));
    if let Some(out) = &a.out {
        let _lock = OutputLock::acquire(out)?;
        let skeleton = Skeleton::builtin();
        let names = skeleton.names();
        fs::write(out.join("joint_errors.csv"), joint_error_csv(&report, &names))?;
        fs::write(out.join("precision.csv"), precision_csv(&curve))?;
        fs::write(out.join("summary.txt"), summary_text(&report, &curve))?;
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    if a.frames == 0 {
        return Err(usage("--frames must be at least 1"));
    }
    let reader = open_dataset(&a.data)?;
    let classifier = load_classifier_arg(&a.classifier)?;
    let source = Prefix {
        len: a.frames.min(reader.len()),
        inner: &reader,
    };
    let model = match &a.regressor {
        Some(p) => load_pose_model(p)?,
        None => {
            let cfg = mvdp::pipeline::PipelineConfig::default();
            let set = build_training_set(&source, &classifier, &cfg)?;
            PoseModel {
                regressor: RegressorModel::fit(&set.features, &set.targets, 1.0)?,
                smoothing: SmoothingConfig::exponential(4, 0.5)?,
                threshold: cfg.threshold,
                reference: cfg.reference,
            }
        }
    };
    let _lock = match &a.out {
        Some(out) => Some(OutputLock::acquire(out)?),
        None => None,
    };
    let report = run_experiment(&source, &classifier, &model.regressor, &model.smoothing, &model.pipeline_config(0))?;
    report_skips(&report);
    println!(
        "{} frames, {} cameras, {}x{}",
        report.frames.len(),
        reader.header().n_cameras,
        reader.header().width,
        reader.header().height
    );
    print_timings(&report.timings);
    print_throughput(&report.timings);
    if let Some(out) = &a.out {
        fs::write(out.join("timings.csv"), report.timings.to_csv())?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::TrainClassifier(a) => cmd_train_classifier(a),
        Command::TrainRegressor(a) => cmd_train_regressor(a),
        Command::Run(a) => cmd_run(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
