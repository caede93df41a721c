//! End-to-end pose estimation: classify every view, fuse, summarize,
//! regress and smooth, with per-stage wall-clock accounting.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::aggregation::{extract_features, fuse, FeatureVector, FusionView, LabeledPointCloud, ReferenceFrame};
use crate::classifier::{ClassAccuracy, Classifier, ProbabilityMap};
use crate::dataset::{DatasetReader, WALK_SEQUENCE_FLAG};
use crate::error::{Error, Result};
use crate::evaluation::{default_thresholds, mean_joint_error, precision_at, JointErrorReport, PrecisionCurve};
use crate::geometry::{CameraParams, RigidTransform};
use crate::config::KeyValues;
use crate::model_io::{self, Chunk};
use crate::regressor::{
    smoothing_chunk, smoothing_from_chunk, Pose, RegressorModel, SmoothingConfig, Smoother, TrainingSet, REGRESSOR_TAG,
    SMOOTHING_TAG,
};
use crate::seed::derive_seed;
use crate::synth::Sample;

/// Indexed access to whole multiview samples and their sequence ids.
pub trait SampleSource: Sync {
    fn sample_count(&self) -> usize;
    fn sample(&self, index: usize) -> Result<Sample>;
    /// Frames with equal ids form one time-ordered sequence.
    fn sequence(&self, index: usize) -> u32 {
        index as u32
    }
}

impl SampleSource for DatasetReader {
    fn sample_count(&self) -> usize {
        self.len()
    }
    fn sample(&self, index: usize) -> Result<Sample> {
        self.read(index)
    }
    fn sequence(&self, index: usize) -> u32 {
        // walking frames share their sequence id; everything else stands alone
        self.posture_id(index)
            .ok()
            .and_then(|id| crate::dataset::walk_sequence_of(id).map(|q| q | WALK_SEQUENCE_FLAG))
            .unwrap_or(index as u32)
    }
}

impl SampleSource for [Sample] {
    fn sample_count(&self) -> usize {
        self.len()
    }
    fn sample(&self, index: usize) -> Result<Sample> {
        self.get(index)
            .cloned()
            .ok_or_else(|| Error::InsufficientData(format!("sample {index} out of range")))
    }
}

/// In-memory samples grouped into sequences.
pub struct Sequences<'a> {
    pub samples: &'a [Sample],
    pub ids: &'a [u32],
}

impl SampleSource for Sequences<'_> {
    fn sample_count(&self) -> usize {
        self.samples.len()
    }
    fn sample(&self, index: usize) -> Result<Sample> {
        self.samples.sample(index)
    }
    fn sequence(&self, index: usize) -> u32 {
        self.ids[index]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub n_labels: usize,
    pub threshold: f32,
    pub reference: ReferenceFrame,
    /// Seeds oracle label noise.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_labels: crate::body::DEFAULT_PART_COUNT,
            threshold: crate::aggregation::DEFAULT_PROBABILITY_THRESHOLD,
            reference: ReferenceFrame::default(),
            seed: 0,
        }
    }
}

pub const STAGE_NAMES: [&str; 7] = ["load", "classify", "fuse", "features", "predict", "smooth", "score"];
const LOAD: usize = 0;
const CLASSIFY: usize = 1;
const FUSE: usize = 2;
const FEATURES: usize = 3;
const PREDICT: usize = 4;
const SMOOTH: usize = 5;
const SCORE: usize = 6;

/// Milliseconds spent per stage for each frame, plus total wall clock.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Timings {
    pub per_frame: Vec<[f64; 7]>,
    pub total_ms: f64,
}

impl Timings {
    pub fn stage_index(name: &str) -> Option<usize> {
        STAGE_NAMES.iter().position(|&s| s == name)
    }

    pub fn mean_ms(&self, stage: usize) -> f64 {
        if self.per_frame.is_empty() {
            return 0.0;
        }
        self.per_frame.iter().map(|t| t[stage]).sum::<f64>() / self.per_frame.len() as f64
    }

    pub fn p95_ms(&self, stage: usize) -> f64 {
        let mut v: Vec<f64> = self.per_frame.iter().map(|t| t[stage]).collect();
        if v.is_empty() {
            return 0.0;
        }
        v.sort_by(|a, b| a.total_cmp(b));
        v[((v.len() as f64 * 0.95).ceil() as usize).clamp(1, v.len()) - 1]
    }

    pub fn stage_sum_ms(&self) -> f64 {
        self.per_frame.iter().flatten().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("stage,mean_ms,p95_ms\n");
        for (i, name) in STAGE_NAMES.iter().enumerate() {
            s.push_str(&format!("{name},{:.4},{:.4}\n", self.mean_ms(i), self.p95_ms(i)));
        }
        s
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Cloud features of one sample in its reference frame.
#[derive(Debug, Clone)]
pub struct FrameFeatures {
    pub features: FeatureVector,
    pub reference_to_world: RigidTransform,
    pub cloud: LabeledPointCloud,
    /// Dense accuracy counts against the rendered labels (learned classifier
    /// only).
    pub accuracy: ClassAccuracy,
}

fn frame_features_timed(
    sample: &Sample,
    index: usize,
    classifier: &Classifier,
    cfg: &PipelineConfig,
    times: &mut [f64; 7],
) -> Result<FrameFeatures> {
    let t = Instant::now();
    let mut maps: Vec<Option<ProbabilityMap>> = Vec::with_capacity(sample.views.len());
    let mut accuracy = ClassAccuracy::default();
    for (v, view) in sample.views.iter().enumerate() {
        match classifier.classify(view, derive_seed(cfg.seed, &[index as u64, v as u64])) {
            Ok(m) => {
                if !classifier.is_oracle() {
                    accuracy.add(&m.argmax_labels(), &view.labels)?;
                }
                maps.push(Some(m));
            }
            Err(Error::EmptyForeground) => maps.push(None),
            Err(e) => return Err(e),
        }
    }
    times[CLASSIFY] += ms_since(t);

    let t = Instant::now();
    let cameras: Vec<CameraParams> = sample.views.iter().map(|v| v.camera).collect();
    let reference_to_world = cfg.reference.resolve(&cameras)?;
    let views: Vec<FusionView<'_>> = sample
        .views
        .iter()
        .zip(&maps)
        .filter_map(|(v, m)| {
            m.as_ref().map(|m| FusionView {
                probabilities: m,
                depth: &v.depth,
                camera: &v.camera,
            })
        })
        .collect();
    let cloud = match fuse(&views, &reference_to_world, cfg.threshold) {
        Ok(c) => c,
        Err(Error::NoViews | Error::NoForegroundPoints) => LabeledPointCloud::default(),
        Err(e) => return Err(e),
    };
    times[FUSE] += ms_since(t);

    let t = Instant::now();
    let features = extract_features(&cloud, cfg.n_labels);
    times[FEATURES] += ms_since(t);
    Ok(FrameFeatures {
        features,
        reference_to_world,
        cloud,
        accuracy,
    })
}

pub fn frame_features(sample: &Sample, index: usize, classifier: &Classifier, cfg: &PipelineConfig) -> Result<FrameFeatures> {
    frame_features_timed(sample, index, classifier, cfg, &mut [0.0; 7])
}

/// Groundtruth joints expressed in a sample's reference frame.
pub fn reference_targets(sample: &Sample, reference_to_world: &RigidTransform) -> Pose {
    let inv = reference_to_world.inverse();
    sample.joints.iter().map(|j| inv.apply(j)).collect()
}

/// Regression training data for every sample of `source`, computed in
/// parallel and stored in source order.
pub fn build_training_set<S: SampleSource + ?Sized>(source: &S, classifier: &Classifier, cfg: &PipelineConfig) -> Result<TrainingSet> {
    let rows: Vec<(FeatureVector, Pose, u32)> = (0..source.sample_count())
        .into_par_iter()
        .map(|i| {
            let s = source.sample(i)?;
            let f = frame_features(&s, i, classifier, cfg)?;
            let target = reference_targets(&s, &f.reference_to_world);
            Ok((f.features, target, source.sequence(i)))
        })
        .collect::<Result<_>>()?;
    let mut set = TrainingSet::default();
    for (f, t, s) in rows {
        set.push(f, t, s);
    }
    Ok(set)
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub joint_error: JointErrorReport,
    pub precision: PrecisionCurve,
    /// Average per-class dense accuracy, pooled over all views (learned
    /// classifier only).
    pub dense_accuracy: Option<f64>,
    /// Source indices of the scored frames.
    pub frames: Vec<usize>,
    /// World-frame predictions and groundtruth for `frames`.
    pub predictions: Vec<Pose>,
    pub groundtruth: Vec<Pose>,
    pub timings: Timings,
    /// Frames that failed, with the reason. They are left out of every score.
    pub skipped: Vec<(usize, String)>,
}

/// Runs the full pipeline over `source` one frame at a time. Smoothing
/// state is kept per sequence, in world coordinates. A frame that fails is
/// recorded in `skipped` and the run continues.
pub fn run_experiment<S: SampleSource + ?Sized>(
    source: &S,
    classifier: &Classifier,
    regressor: &RegressorModel,
    smoothing: &SmoothingConfig,
    cfg: &PipelineConfig,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    let mut timings = Timings::default();
    let mut smoothers: BTreeMap<u32, Smoother> = BTreeMap::new();
    let mut predictions = Vec::with_capacity(source.sample_count());
    let mut groundtruth = Vec::with_capacity(source.sample_count());
    let mut accuracy = ClassAccuracy::default();
    let mut frames = Vec::with_capacity(source.sample_count());
    let mut skipped = Vec::new();
    for i in 0..source.sample_count() {
        let mut times = [0.0; 7];
        let mut step = || -> Result<(Pose, Pose)> {
            let t = Instant::now();
            let sample = source.sample(i)?;
            let seq = source.sequence(i);
            times[LOAD] = ms_since(t);

            let ff = frame_features_timed(&sample, i, classifier, cfg, &mut times)?;

            let t = Instant::now();
            let pose_ref = regressor.predict(&ff.features)?;
            let pose: Pose = pose_ref.iter().map(|p| ff.reference_to_world.apply(p)).collect();
            times[PREDICT] = ms_since(t);

            let t = Instant::now();
            let smoothed = smoothers
                .entry(seq)
                .or_insert_with(|| Smoother::new(smoothing.clone()))
                .push(pose)?;
            times[SMOOTH] = ms_since(t);

            let t = Instant::now();
            accuracy.merge(&ff.accuracy);
            times[SCORE] = ms_since(t);
            Ok((smoothed, sample.joints))
        };
        match step() {
            Ok((pred, gt)) => {
                predictions.push(pred);
                groundtruth.push(gt);
                frames.push(i);
                timings.per_frame.push(times);
            }
            Err(e) => skipped.push((i, e.to_string())),
        }
    }
    let t = Instant::now();
    let joint_error = mean_joint_error(&predictions, &groundtruth)?;
    let precision = precision_at(&predictions, &groundtruth, &default_thresholds())?;
    if let Some(last) = timings.per_frame.last_mut() {
        last[SCORE] += ms_since(t);
    }
    timings.total_ms = ms_since(start);
    Ok(ExperimentReport {
        joint_error,
        precision,
        dense_accuracy: if classifier.is_oracle() { None } else { accuracy.mean() },
        frames,
        predictions,
        groundtruth,
        timings,
        skipped,
    })
}

pub const PIPELINE_TAG: [u8; 4] = *b"PIPE";

/// Everything `run_experiment` needs besides the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseModel {
    pub regressor: RegressorModel,
    pub smoothing: SmoothingConfig,
    pub threshold: f32,
    pub reference: ReferenceFrame,
}

impl PoseModel {
    pub fn pipeline_config(&self, seed: u64) -> PipelineConfig {
        PipelineConfig {
            n_labels: self.regressor.n_labels,
            threshold: self.threshold,
            reference: self.reference,
            seed,
        }
    }

    pub fn to_chunks(&self) -> Vec<Chunk> {
        let text = format!("threshold = {}\nreference = {}\n", self.threshold, self.reference);
        vec![
            self.regressor.to_chunk(),
            smoothing_chunk(&self.smoothing),
            Chunk {
                tag: PIPELINE_TAG,
                payload: text.into_bytes(),
            },
        ]
    }

    pub fn from_chunks(chunks: &[Chunk]) -> Result<Self> {
        let get = |tag: [u8; 4]| {
            model_io::find(chunks, tag)
                .ok_or_else(|| Error::Format(format!("model file has no {} chunk", String::from_utf8_lossy(&tag))))
        };
        let text = std::str::from_utf8(&get(PIPELINE_TAG)?.payload).map_err(|_| Error::Format("pipeline chunk is not UTF-8".into()))?;
        let kv = KeyValues::parse(text)?;
        let threshold = kv
            .get("threshold")?
            .ok_or_else(|| Error::Format("pipeline chunk missing threshold".into()))?;
        let reference = kv
            .get("reference")?
            .ok_or_else(|| Error::Format("pipeline chunk missing reference".into()))?;
        Ok(Self {
            regressor: RegressorModel::from_chunk(get(REGRESSOR_TAG)?)?,
            smoothing: smoothing_from_chunk(get(SMOOTHING_TAG)?)?,
            threshold,
            reference,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        model_io::write_file(path, &self.to_chunks())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_chunks(&model_io::read_file(path)?)
    }
}

/// Stage names whose per-frame time is independent of the classifier.
pub const POST_CLASSIFIER_STAGES: [&str; 4] = ["fuse", "features", "predict", "smooth"];
