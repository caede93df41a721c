//! Closed-form ridge regression from cloud features to joint positions,
//! temporal smoothing and cross-validated hyperparameters.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::io::Cursor;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, Vector3};

use crate::aggregation::{FeatureVector, STATS_PER_CLASS};
use crate::error::{Error, Result};
use crate::model_io::Chunk;

pub type Pose = Vec<Vector3<f64>>;

pub const REGRESSOR_TAG: [u8; 4] = *b"RIDG";
pub const SMOOTHING_TAG: [u8; 4] = *b"SMTH";

/// Relative size below which a Cholesky pivot counts as zero.
const PIVOT_TOL: f64 = 1e-12;

/// Solves `(X'X + lambda * I~) W = X'Y` where `I~` is the identity with a
/// zero at `free_column` (the unpenalized bias), by Cholesky factorization.
pub fn fit_ridge(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64, free_column: Option<usize>) -> Result<DMatrix<f64>> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::InsufficientData("empty design matrix".into()));
    }
    if y.nrows() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            actual: y.nrows(),
        });
    }
    let gram = x.tr_mul(x);
    let rhs = x.tr_mul(y);
    solve_normal(gram, &rhs, lambda, free_column)
}

fn solve_normal(mut gram: DMatrix<f64>, rhs: &DMatrix<f64>, lambda: f64, free_column: Option<usize>) -> Result<DMatrix<f64>> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!("ridge lambda {lambda} must be finite and >= 0")));
    }
    let scale = gram.diagonal().amax().max(f64::MIN_POSITIVE);
    for i in 0..gram.nrows() {
        if Some(i) != free_column {
            gram[(i, i)] += lambda;
        }
    }
    let chol = gram.cholesky().ok_or(Error::SingularSystem { lambda })?;
    let l = chol.l_dirty();
    let min_pivot = (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if !(min_pivot > PIVOT_TOL * (scale + lambda)) {
        return Err(Error::SingularSystem { lambda });
    }
    Ok(chol.solve(rhs))
}

/// Per-feature z-scoring fitted on training data. Constant features get an
/// infinite scale so they always map to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map(|r| r.len()).ok_or_else(|| Error::InsufficientData("no rows".into()))?;
        let mut mean = vec![0.0; d];
        for r in rows {
            if r.len() != d {
                return Err(Error::DimensionMismatch { expected: d, actual: r.len() });
            }
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let sd = (v / n as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (((o, x), m), s) in out.iter_mut().zip(v).zip(&self.mean).zip(&self.scale) {
            *o = (x - m) / s;
        }
    }
}

fn design_width(n_labels: usize) -> usize {
    STATS_PER_CLASS * n_labels + n_labels + 1
}

fn design_row(std: &Standardizer, f: &FeatureVector, out: &mut [f64]) {
    let nv = f.values.len();
    std.apply(&f.values, &mut out[..nv]);
    for (o, &p) in out[nv..nv + f.present.len()].iter_mut().zip(&f.present) {
        *o = if p { 1.0 } else { 0.0 };
    }
    out[nv + f.present.len()] = 1.0;
}

fn design_matrix(std: &Standardizer, features: &[&FeatureVector]) -> DMatrix<f64> {
    let d = design_width(features[0].n_labels());
    let mut row = vec![0.0; d];
    let mut x = DMatrix::zeros(features.len(), d);
    for (i, f) in features.iter().enumerate() {
        design_row(std, f, &mut row);
        for (j, &v) in row.iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    x
}

fn target_matrix(targets: &[&Pose]) -> DMatrix<f64> {
    let j = targets[0].len();
    DMatrix::from_fn(targets.len(), 3 * j, |r, c| targets[r][c / 3][c % 3])
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressorModel {
    pub n_labels: usize,
    pub n_joints: usize,
    pub lambda: f64,
    pub standardizer: Standardizer,
    /// `(24P + P + 1) x 3J`, last row is the bias.
    pub weights: DMatrix<f64>,
}

fn check_training(features: &[FeatureVector], targets: &[Pose]) -> Result<(usize, usize)> {
    if features.is_empty() {
        return Err(Error::InsufficientData("no training samples".into()));
    }
    if features.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            actual: targets.len(),
        });
    }
    let p = features[0].n_labels();
    let j = targets[0].len();
    for f in features {
        if f.n_labels() != p || f.values.len() != STATS_PER_CLASS * p {
            return Err(Error::DimensionMismatch {
                expected: STATS_PER_CLASS * p,
                actual: f.values.len(),
            });
        }
    }
    if let Some(t) = targets.iter().find(|t| t.len() != j) {
        return Err(Error::DimensionMismatch { expected: j, actual: t.len() });
    }
    Ok((p, j))
}

impl RegressorModel {
    pub fn fit(features: &[FeatureVector], targets: &[Pose], lambda: f64) -> Result<Self> {
        let (p, j) = check_training(features, targets)?;
        let rows: Vec<&[f64]> = features.iter().map(|f| f.values.as_slice()).collect();
        let standardizer = Standardizer::fit(&rows)?;
        let fr: Vec<&FeatureVector> = features.iter().collect();
        let tr: Vec<&Pose> = targets.iter().collect();
        let x = design_matrix(&standardizer, &fr);
        let weights = fit_ridge(&x, &target_matrix(&tr), lambda, Some(x.ncols() - 1))?;
        Ok(Self {
            n_labels: p,
            n_joints: j,
            lambda,
            standardizer,
            weights,
        })
    }

    pub fn design_width(&self) -> usize {
        design_width(self.n_labels)
    }

    pub fn predict(&self, f: &FeatureVector) -> Result<Pose> {
        if f.n_labels() != self.n_labels || f.values.len() != STATS_PER_CLASS * self.n_labels {
            return Err(Error::DimensionMismatch {
                expected: STATS_PER_CLASS * self.n_labels,
                actual: f.values.len(),
            });
        }
        let mut row = vec![0.0; self.design_width()];
        design_row(&self.standardizer, f, &mut row);
        let mut out = vec![Vector3::zeros(); self.n_joints];
        for (r, &x) in row.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (j, o) in out.iter_mut().enumerate() {
                for a in 0..3 {
                    o[a] += x * self.weights[(r, 3 * j + a)];
                }
            }
        }
        Ok(out)
    }

    pub fn to_chunk(&self) -> Chunk {
        let mut p = Vec::new();
        p.write_u32::<LE>(self.n_labels as u32).unwrap();
        p.write_u32::<LE>(self.n_joints as u32).unwrap();
        p.write_f64::<LE>(self.lambda).unwrap();
        for v in self.standardizer.mean.iter().chain(&self.standardizer.scale) {
            p.write_f64::<LE>(*v).unwrap();
        }
        for r in 0..self.weights.nrows() {
            for c in 0..self.weights.ncols() {
                p.write_f64::<LE>(self.weights[(r, c)]).unwrap();
            }
        }
        Chunk {
            tag: REGRESSOR_TAG,
            payload: p,
        }
    }

    pub fn from_chunk(chunk: &Chunk) -> Result<Self> {
        let mut r = Cursor::new(&chunk.payload);
        let n_labels = r.read_u32::<LE>()? as usize;
        let n_joints = r.read_u32::<LE>()? as usize;
        let lambda = r.read_f64::<LE>()?;
        let f = STATS_PER_CLASS * n_labels;
        let (rows, cols) = (design_width(n_labels), 3 * n_joints);
        let expected = 4 + 4 + 8 + 8 * (2 * f + rows * cols);
        if chunk.payload.len() != expected {
            return Err(Error::Format(format!(
                "regressor chunk has {} bytes, expected {expected}",
                chunk.payload.len()
            )));
        }
        let mut read = |n: usize| -> Result<Vec<f64>> {
            let mut v = vec![0.0; n];
            r.read_f64_into::<LE>(&mut v)?;
            Ok(v)
        };
        let mean = read(f)?;
        let scale = read(f)?;
        let w = read(rows * cols)?;
        Ok(Self {
            n_labels,
            n_joints,
            lambda,
            standardizer: Standardizer { mean, scale },
            weights: DMatrix::from_row_slice(rows, cols, &w),
        })
    }
}

/// Convex weights `lambda_0..lambda_K` over the current and K previous
/// estimates; `lambda_0` weighs the newest frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingConfig {
    weights: Vec<f64>,
}

impl SmoothingConfig {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidSmoothing(format!("weights {weights:?} must be nonempty and nonnegative")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidSmoothing(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self { weights })
    }

    pub fn identity() -> Self {
        Self { weights: vec![1.0] }
    }

    /// `lambda_j` proportional to `alpha^j` for `j = 0..=window`.
    pub fn exponential(window: usize, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidSmoothing(format!("decay {alpha} outside (0, 1]")));
        }
        let raw: Vec<f64> = (0..=window).map(|j| alpha.powi(j as i32)).collect();
        let sum: f64 = raw.iter().sum();
        let mut weights: Vec<f64> = raw.iter().map(|w| w / sum).collect();
        // put the rounding residue on the newest frame so the sum is exact
        let residue = 1.0 - weights.iter().sum::<f64>();
        weights[0] += residue;
        Self::new(weights)
    }

    pub fn window(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Weighted average of the newest `K+1` entries of `history` (oldest
/// first). With fewer frames the available weights are renormalized.
pub fn smooth(history: &[Pose], cfg: &SmoothingConfig) -> Result<Pose> {
    let newest = history.last().ok_or_else(|| Error::InsufficientData("empty pose history".into()))?;
    let n = cfg.weights.len().min(history.len());
    let total: f64 = cfg.weights[..n].iter().sum();
    let mut out = vec![Vector3::zeros(); newest.len()];
    for (j, w) in cfg.weights[..n].iter().enumerate() {
        let pose = &history[history.len() - 1 - j];
        if pose.len() != out.len() {
            return Err(Error::DimensionMismatch {
                expected: out.len(),
                actual: pose.len(),
            });
        }
        for (o, p) in out.iter_mut().zip(pose) {
            *o += p * (w / total);
        }
    }
    Ok(out)
}

/// Streaming smoother keeping the last `K+1` estimates of one sequence.
#[derive(Debug, Clone)]
pub struct Smoother {
    cfg: SmoothingConfig,
    history: VecDeque<Pose>,
}

impl Smoother {
    pub fn new(cfg: SmoothingConfig) -> Self {
        Self {
            history: VecDeque::with_capacity(cfg.weights.len()),
            cfg,
        }
    }

    pub fn push(&mut self, pose: Pose) -> Result<Pose> {
        if self.history.len() == self.cfg.weights.len() {
            self.history.pop_front();
        }
        self.history.push_back(pose);
        smooth(self.history.make_contiguous(), &self.cfg)
    }

    pub fn reset(&mut self) {
        self.history.clear();
    }
}

/// Smooths every sequence of `poses` independently. `sequences[i]` names
/// the sequence of frame `i`; frames of a sequence appear in time order.
pub fn smooth_sequences(poses: &[Pose], sequences: &[u32], cfg: &SmoothingConfig) -> Result<Vec<Pose>> {
    let mut smoothers: BTreeMap<u32, Smoother> = BTreeMap::new();
    poses
        .iter()
        .zip(sequences)
        .map(|(p, s)| {
            smoothers
                .entry(*s)
                .or_insert_with(|| Smoother::new(cfg.clone()))
                .push(p.clone())
        })
        .collect()
}

pub fn smoothing_chunk(cfg: &SmoothingConfig) -> Chunk {
    let mut p = Vec::new();
    p.write_u32::<LE>(cfg.weights.len() as u32).unwrap();
    for w in &cfg.weights {
        p.write_f64::<LE>(*w).unwrap();
    }
    Chunk {
        tag: SMOOTHING_TAG,
        payload: p,
    }
}

pub fn smoothing_from_chunk(chunk: &Chunk) -> Result<SmoothingConfig> {
    let mut r = Cursor::new(&chunk.payload);
    let n = r.read_u32::<LE>()? as usize;
    if chunk.payload.len() != 4 + 8 * n {
        return Err(Error::Format("smoothing chunk length mismatch".into()));
    }
    let mut w = vec![0.0; n];
    r.read_f64_into::<LE>(&mut w)?;
    SmoothingConfig::new(w)
}

/// Mean Euclidean joint error over all frames and joints.
pub fn mean_error(preds: &[Pose], gts: &[Pose]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, g) in preds.iter().zip(gts) {
        for (a, b) in p.iter().zip(g) {
            sum += (a - b).norm();
            n += 1;
        }
    }
    sum / n.max(1) as f64
}

/// `count` ridge parameters log-spaced over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    (0..count)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(1e-4, 1e3, 8)
}

pub fn default_smoothing_grid() -> Vec<SmoothingConfig> {
    let mut grid = vec![SmoothingConfig::identity()];
    for k in [2, 4, 8] {
        for alpha in [0.3, 0.5, 0.7, 0.9] {
            grid.push(SmoothingConfig::exponential(k, alpha).expect("valid decay"));
        }
    }
    grid
}

/// Training data for cross-validation. Frames sharing a sequence id are
/// kept in the same fold and smoothed in the given order.
#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    pub features: Vec<FeatureVector>,
    pub targets: Vec<Pose>,
    pub sequences: Vec<u32>,
}

impl TrainingSet {
    pub fn push(&mut self, features: FeatureVector, target: Pose, sequence: u32) {
        self.features.push(features);
        self.targets.push(target);
        self.sequences.push(sequence);
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Fold of each frame: distinct sequence ids in ascending order are dealt
    /// round-robin to `folds` folds.
    pub fn fold_assignment(&self, folds: usize) -> Vec<usize> {
        let ids: Vec<u32> = {
            let mut v = self.sequences.clone();
            v.sort_unstable();
            v.dedup();
            v
        };
        let index: BTreeMap<u32, usize> = ids.iter().enumerate().map(|(i, &s)| (s, i % folds)).collect();
        self.sequences.iter().map(|s| index[s]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvRow {
    pub lambda: f64,
    pub smoothing: SmoothingConfig,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub lambda: f64,
    pub smoothing: SmoothingConfig,
    pub error: f64,
    pub rows: Vec<CvRow>,
}

pub const CV_CSV_HEADER: &str = "lambda,window,weights,cv_error";

impl CvResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CV_CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let w: Vec<String> = r.smoothing.weights.iter().map(|w| format!("{w:.6}")).collect();
            writeln!(s, "{:e},{},{},{:.9}", r.lambda, r.smoothing.window(), w.join(";"), r.error).unwrap();
        }
        s
    }
}

/// Out-of-fold predictions for each lambda in `lambdas`. The standardizer is
/// refitted on each training fold.
pub fn out_of_fold_predictions(set: &TrainingSet, lambdas: &[f64], folds: usize) -> Result<Vec<Vec<Pose>>> {
    let (_, n_joints) = check_training(&set.features, &set.targets)?;
    if set.sequences.len() != set.len() {
        return Err(Error::DimensionMismatch {
            expected: set.len(),
            actual: set.sequences.len(),
        });
    }
    let assignment = set.fold_assignment(folds);
    let mut out = vec![vec![Vec::new(); set.len()]; lambdas.len()];
    for fold in 0..folds {
        let (train, test): (Vec<usize>, Vec<usize>) = (0..set.len()).partition(|&i| assignment[i] != fold);
        if train.is_empty() || test.is_empty() {
            return Err(Error::InsufficientData(format!("fold {fold} is empty")));
        }
        let rows: Vec<&[f64]> = train.iter().map(|&i| set.features[i].values.as_slice()).collect();
        let std = Standardizer::fit(&rows)?;
        let ftr: Vec<&FeatureVector> = train.iter().map(|&i| &set.features[i]).collect();
        let ttr: Vec<&Pose> = train.iter().map(|&i| &set.targets[i]).collect();
        let x = design_matrix(&std, &ftr);
        let gram = x.tr_mul(&x);
        let rhs = x.tr_mul(&target_matrix(&ttr));
        let fte: Vec<&FeatureVector> = test.iter().map(|&i| &set.features[i]).collect();
        let xte = design_matrix(&std, &fte);
        for (li, &lambda) in lambdas.iter().enumerate() {
            let w = solve_normal(gram.clone(), &rhs, lambda, Some(x.ncols() - 1))?;
            let pred = &xte * &w;
            for (r, &i) in test.iter().enumerate() {
                out[li][i] = (0..n_joints)
                    .map(|j| Vector3::new(pred[(r, 3 * j)], pred[(r, 3 * j + 1)], pred[(r, 3 * j + 2)]))
                    .collect();
            }
        }
    }
    Ok(out)
}

/// k-fold cross-validation over the ridge and smoothing grids. Folds split
/// by sequence; the pair with the lowest mean joint error wins, ties going
/// to the larger lambda, then the shorter window.
pub fn cross_validate(
    set: &TrainingSet,
    lambdas: &[f64],
    smoothing: &[SmoothingConfig],
    folds: usize,
) -> Result<CvResult> {
    if lambdas.is_empty() || smoothing.is_empty() {
        return Err(Error::InsufficientData("empty hyperparameter grid".into()));
    }
    if folds < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 folds, got {folds}")));
    }
    let distinct = {
        let mut v = set.sequences.clone();
        v.sort_unstable();
        v.dedup();
        v.len()
    };
    if distinct < folds {
        return Err(Error::InsufficientData(format!("{distinct} sequences cannot fill {folds} folds")));
    }
    let preds = out_of_fold_predictions(set, lambdas, folds)?;
    let mut rows = Vec::new();
    for (li, &lambda) in lambdas.iter().enumerate() {
        for cfg in smoothing {
            let smoothed = smooth_sequences(&preds[li], &set.sequences, cfg)?;
            rows.push(CvRow {
                lambda,
                smoothing: cfg.clone(),
                error: mean_error(&smoothed, &set.targets),
            });
        }
    }
    let best = rows
        .iter()
        .min_by(|a, b| {
            a.error
                .total_cmp(&b.error)
                .then(b.lambda.total_cmp(&a.lambda))
                .then(a.smoothing.window().cmp(&b.smoothing.window()))
        })
        .expect("nonempty grid");
    Ok(CvResult {
        lambda: best.lambda,
        smoothing: best.smoothing.clone(),
        error: best.error,
        rows: rows.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn randn(r: usize, c: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from(seed);
        DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn identity_design_examples() {
        let x = DMatrix::<f64>::identity(5, 5);
        let y = randn(5, 3, 1);
        let w = fit_ridge(&x, &y, 0.0, None).unwrap();
        assert!((&w - &y).amax() < 1e-12);
        let w = fit_ridge(&x, &y, 0.5, None).unwrap();
        assert!((&w - &y / 1.5).amax() < 1e-12);
    }

    #[test]
    fn singular_without_regularization() {
        let mut x = randn(10, 4, 2);
        let c0 = x.column(0).clone_owned();
        x.set_column(3, &c0);
        let y = randn(10, 2, 3);
        assert!(matches!(fit_ridge(&x, &y, 0.0, None), Err(Error::SingularSystem { .. })));
        assert!(fit_ridge(&x, &y, 1e-3, None).is_ok());
    }

    #[test]
    fn optimality_and_monotone_residual() {
        let x = randn(60, 8, 4);
        let y = randn(60, 3, 5);
        let mut last = 0.0;
        for lambda in [0.0, 0.1, 1.0, 10.0, 100.0] {
            let w = fit_ridge(&x, &y, lambda, Some(7)).unwrap();
            let mut reg = w.clone();
            reg.row_mut(7).fill(0.0);
            let g = x.transpose() * (&x * &w - &y) + reg * lambda;
            assert!(g.amax() <= 1e-8 * (x.transpose() * &y).amax());
            let res = (&x * &w - &y).norm();
            assert!(res >= last - 1e-12);
            last = res;
        }
    }

    #[test]
    fn smoothing_examples() {
        let a: Pose = vec![Vector3::new(2.0, 4.0, 6.0)];
        let b: Pose = vec![Vector3::zeros()];
        let half = SmoothingConfig::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(smooth(&[b.clone(), a.clone()], &half).unwrap()[0], Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(smooth(&[b.clone(), a.clone()], &SmoothingConfig::identity()).unwrap(), a);
        // a single frame renormalizes to itself
        assert_eq!(smooth(&[a.clone()], &half).unwrap(), a);
        let cfg = SmoothingConfig::exponential(8, 0.7).unwrap();
        assert!((cfg.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!((smooth(&vec![a.clone(); 12], &cfg).unwrap()[0] - a[0]).norm() < 1e-12);
        assert!(SmoothingConfig::new(vec![0.5, 0.6]).is_err());
        assert!(SmoothingConfig::new(vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn smoothing_chunk_round_trip() {
        let cfg = SmoothingConfig::exponential(4, 0.5).unwrap();
        assert_eq!(smoothing_from_chunk(&smoothing_chunk(&cfg)).unwrap(), cfg);
    }

    #[test]
    fn default_grids() {
        let g = default_lambda_grid();
        assert_eq!(g.len(), 8);
        assert!((g[0] - 1e-4).abs() < 1e-18 && (g[7] - 1e3).abs() < 1e-9);
        assert_eq!(default_smoothing_grid().len(), 13);
    }
}
