//! Curriculum training of the dense classifier.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;

use crate::classifier::{classify_depth, preprocess, ClassAccuracy};
use crate::config::KeyValues;
use crate::dataset::DatasetReader;
use crate::error::{Error, Result};
use crate::fcn::{encode_input, FcnConfig, FcnModel, Sgd, TrainItem};
use crate::seed::{derive_seed, rng_from};
use crate::stage::{Split, Stage};
use crate::synth::{DepthFrame, LabelFrame, Sample};

/// Indexed access to single labeled depth frames.
pub trait FrameSource: Sync {
    fn frame_count(&self) -> usize;
    fn frame(&self, index: usize) -> Result<(DepthFrame, LabelFrame)>;
}

impl FrameSource for DatasetReader {
    fn frame_count(&self) -> usize {
        self.len() * self.header().n_cameras as usize
    }

    fn frame(&self, index: usize) -> Result<(DepthFrame, LabelFrame)> {
        let n = self.header().n_cameras as usize;
        let s = self.read(index / n)?;
        let v = s.views.into_iter().nth(index % n).expect("view index in range");
        Ok((v.depth, v.labels))
    }
}

impl FrameSource for [Sample] {
    fn frame_count(&self) -> usize {
        self.iter().map(|s| s.views.len()).sum()
    }

    fn frame(&self, mut index: usize) -> Result<(DepthFrame, LabelFrame)> {
        for s in self {
            if index < s.views.len() {
                let v = &s.views[index];
                return Ok((v.depth.clone(), v.labels.clone()));
            }
            index -= s.views.len();
        }
        Err(Error::InsufficientData(format!("frame {index} out of range")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurriculumStage {
    pub dataset: Stage,
    pub iterations: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumSchedule {
    pub stages: Vec<CurriculumStage>,
}

impl CurriculumSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::InvalidConfig("schedule has no stages".into()));
        }
        for s in &self.stages {
            if s.iterations == 0 || s.batch_size == 0 {
                return Err(Error::InvalidConfig(format!("stage {} has a zero budget or batch", s.dataset)));
            }
            if !(s.learning_rate >= 0.0 && s.learning_rate.is_finite()) {
                return Err(Error::InvalidConfig(format!("stage {} has learning rate {}", s.dataset, s.learning_rate)));
            }
        }
        Ok(())
    }

    pub fn total_iterations(&self) -> usize {
        self.stages.iter().map(|s| s.iterations).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: FcnConfig,
    pub momentum: f64,
    /// Multiply the stage learning rate by `lr_gamma` every `lr_step`
    /// iterations of the stage; 0 disables decay.
    pub lr_step: usize,
    pub lr_gamma: f64,
    /// Extra validation passes every this many iterations; 0 logs only at
    /// stage boundaries.
    pub eval_every: usize,
    pub validation_frames: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: FcnConfig::default(),
            momentum: 0.9,
            lr_step: 0,
            lr_gamma: 0.1,
            eval_every: 0,
            validation_frames: 200,
            seed: 0,
        }
    }
}

/// Builds a training config and schedule from `key = value` text. Unknown
/// keys are an error so typos do not silently fall back to defaults.
pub fn parse_training_config(text: &str) -> Result<(TrainConfig, CurriculumSchedule)> {
    let kv = KeyValues::parse(text)?;
    let d = TrainConfig::default();
    let list = |key: &str| -> Result<Option<Vec<String>>> {
        Ok(kv.raw(key).map(|v| v.split(',').map(|s| s.trim().to_string()).collect()))
    };
    let channels = match list("channels")? {
        None => d.model.channels.clone(),
        Some(v) => v
            .iter()
            .map(|s| s.parse().map_err(|_| Error::Format(format!("bad channel count `{s}`"))))
            .collect::<Result<_>>()?,
    };
    let model = FcnConfig {
        input_size: kv.get_or("input_size", d.model.input_size)?,
        n_classes: kv.get_or("n_classes", d.model.n_classes)?,
        channels,
        up_kernel: kv.get_or("up_kernel", d.model.up_kernel)?,
        final_kernel: kv.get_or("final_kernel", d.model.final_kernel)?,
    };
    let config = TrainConfig {
        model,
        momentum: kv.get_or("momentum", d.momentum)?,
        lr_step: kv.get_or("lr_step", d.lr_step)?,
        lr_gamma: kv.get_or("lr_gamma", d.lr_gamma)?,
        eval_every: kv.get_or("eval_every", d.eval_every)?,
        validation_frames: kv.get_or("validation_frames", d.validation_frames)?,
        seed: kv.get_or("seed", d.seed)?,
    };
    let stages: Vec<Stage> = list("stages")?
        .unwrap_or_else(|| vec!["easy".into(), "inter".into(), "hard".into()])
        .iter()
        .map(|s| s.parse())
        .collect::<Result<_>>()?;
    let per_stage = |key: &str, default: &str| -> Result<Vec<String>> {
        let v = list(key)?.unwrap_or_else(|| vec![default.to_string()]);
        match v.len() {
            1 => Ok(vec![v[0].clone(); stages.len()]),
            n if n == stages.len() => Ok(v),
            n => Err(Error::Format(format!("`{key}` has {n} entries for {} stages", stages.len()))),
        }
    };
    let iterations = per_stage("iterations", "1000")?;
    let rates = per_stage("learning_rate", "0.05")?;
    let batches = per_stage("batch_size", "8")?;
    let num = |k: &str, s: &str| Error::Format(format!("`{k}`: cannot parse `{s}`"));
    let schedule = CurriculumSchedule {
        stages: stages
            .iter()
            .enumerate()
            .map(|(i, &dataset)| {
                Ok(CurriculumStage {
                    dataset,
                    iterations: iterations[i].parse().map_err(|_| num("iterations", &iterations[i]))?,
                    learning_rate: rates[i].parse().map_err(|_| num("learning_rate", &rates[i]))?,
                    batch_size: batches[i].parse().map_err(|_| num("batch_size", &batches[i]))?,
                })
            })
            .collect::<Result<_>>()?,
    };
    let unused = kv.unused();
    if !unused.is_empty() {
        return Err(Error::InvalidConfig(format!("unknown training keys: {}", unused.join(", "))));
    }
    config.model.validate()?;
    schedule.validate()?;
    Ok((config, schedule))
}

/// Train/validation frames of one curriculum dataset.
#[derive(Clone, Copy)]
pub struct StageData<'a> {
    pub train: &'a dyn FrameSource,
    pub validation: &'a dyn FrameSource,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyRecord {
    pub stage: Stage,
    pub iteration: usize,
    pub split: Split,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub stage: Stage,
    pub iteration: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: FcnModel<f32>,
    pub accuracy: Vec<AccuracyRecord>,
    pub losses: Vec<LossRecord>,
}

pub const ACCURACY_CSV_HEADER: &str = "stage,iteration,split,accuracy";

pub fn accuracy_csv(records: &[AccuracyRecord]) -> String {
    let mut s = String::from(ACCURACY_CSV_HEADER);
    s.push('\n');
    for r in records {
        writeln!(s, "{},{},{},{:.6}", r.stage, r.iteration, r.split, r.accuracy).unwrap();
    }
    s
}

/// Frame converted to network input in window coordinates, or `None` for
/// frames with no foreground.
pub fn training_item(depth: &DepthFrame, labels: &LabelFrame, size: usize) -> Result<Option<TrainItem<f32>>> {
    match preprocess(depth, size) {
        Ok(n) => Ok(Some(TrainItem {
            input: encode_input(&n.levels),
            labels: n.warp_labels(labels),
        })),
        Err(Error::EmptyForeground) => Ok(None),
        Err(e) => Err(e),
    }
}

const BATCH_SALT: u64 = 0xba7c_4000;
const MAX_REDRAWS: usize = 64;

fn draw_batch(
    source: &dyn FrameSource,
    size: usize,
    batch: usize,
    seed: u64,
) -> Result<Vec<TrainItem<f32>>> {
    let count = source.frame_count();
    if count == 0 {
        return Err(Error::InsufficientData("training source has no frames".into()));
    }
    let mut rng = rng_from(seed);
    let picks: Vec<Vec<usize>> = (0..batch)
        .map(|_| (0..MAX_REDRAWS).map(|_| rng.random_range(0..count)).collect())
        .collect();
    picks
        .par_iter()
        .map(|candidates| {
            for &i in candidates {
                let (d, l) = source.frame(i)?;
                if let Some(item) = training_item(&d, &l, size)? {
                    return Ok(item);
                }
            }
            Err(Error::InsufficientData("could not draw a frame with foreground".into()))
        })
        .collect()
}

/// Average per-class accuracy of `model` over up to `max_frames` frames
/// spread evenly across `source`, pooled over frames, measured in the
/// frames' own pixel grids.
pub fn evaluate_accuracy(model: &FcnModel<f32>, source: &dyn FrameSource, max_frames: usize) -> Result<f64> {
    let count = source.frame_count();
    let n = max_frames.min(count);
    if n == 0 {
        return Err(Error::InsufficientData("validation source has no frames".into()));
    }
    let parts: Vec<ClassAccuracy> = (0..n)
        .into_par_iter()
        .map(|k| {
            let (d, l) = source.frame(k * count / n)?;
            let mut acc = ClassAccuracy::default();
            match classify_depth(model, &d) {
                Ok(map) => acc.add(&map.argmax_labels(), &l)?,
                Err(Error::EmptyForeground) => {}
                Err(e) => return Err(e),
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = ClassAccuracy::default();
    for p in &parts {
        total.merge(p);
    }
    total.mean().ok_or(Error::EmptyForeground)
}

/// Runs the schedule in order, each stage fine-tuning the previous one's
/// weights. Validation accuracy of the stage's own dataset is logged at
/// every stage boundary (and every `eval_every` iterations if set).
pub fn train_curriculum(
    schedule: &CurriculumSchedule,
    config: &TrainConfig,
    datasets: &BTreeMap<Stage, StageData<'_>>,
) -> Result<TrainOutcome> {
    schedule.validate()?;
    for s in &schedule.stages {
        if !datasets.contains_key(&s.dataset) {
            return Err(Error::InsufficientData(format!("no dataset for stage {}", s.dataset)));
        }
    }
    let mut model = FcnModel::<f32>::new(config.model.clone(), derive_seed(config.seed, &[0x1417]))?;
    let mut opt = Sgd::new(model.param_count(), config.momentum);
    let size = config.model.input_size;
    let mut accuracy = Vec::new();
    let mut losses = Vec::new();
    let mut global = 0;
    for (si, stage) in schedule.stages.iter().enumerate() {
        let data = datasets[&stage.dataset];
        for it in 0..stage.iterations {
            let decays = if config.lr_step > 0 { it / config.lr_step } else { 0 };
            let lr = stage.learning_rate * config.lr_gamma.powi(decays as i32);
            let batch_seed = derive_seed(config.seed, &[BATCH_SALT, si as u64, it as u64]);
            let batch = draw_batch(data.train, size, stage.batch_size, batch_seed)?;
            let loss = opt.step(&mut model, &batch, lr).map_err(|e| match e {
                Error::NonFiniteLoss { .. } => Error::NonFiniteLoss { iteration: global },
                e => e,
            })?;
            global += 1;
            losses.push(LossRecord {
                stage: stage.dataset,
                iteration: global,
                loss,
            });
            let boundary = it + 1 == stage.iterations;
            if boundary || (config.eval_every > 0 && (it + 1) % config.eval_every == 0) {
                accuracy.push(AccuracyRecord {
                    stage: stage.dataset,
                    iteration: global,
                    split: Split::Validation,
                    accuracy: evaluate_accuracy(&model, data.validation, config.validation_frames)?,
                });
            }
        }
    }
    Ok(TrainOutcome {
        model,
        accuracy,
        losses,
    })
}
