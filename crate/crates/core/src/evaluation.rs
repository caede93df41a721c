//! Joint-error and precision metrics and their CSV forms.

use std::fmt::Write as _;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::regressor::Pose;

#[derive(Debug, Clone, PartialEq)]
pub struct JointErrorReport {
    pub per_joint_mean: Vec<f64>,
    /// Population standard deviation over frames.
    pub per_joint_std: Vec<f64>,
    pub overall_mean: f64,
    pub sample_count: usize,
}

fn check_aligned(preds: &[Pose], gts: &[Pose]) -> Result<usize> {
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(Error::CountMismatch {
            predictions: preds.len(),
            groundtruth: gts.len(),
        });
    }
    let j = gts[0].len();
    for (p, g) in preds.iter().zip(gts) {
        if p.len() != j || g.len() != j {
            return Err(Error::DimensionMismatch {
                expected: j,
                actual: if p.len() != j { p.len() } else { g.len() },
            });
        }
    }
    Ok(j)
}

pub fn mean_joint_error(preds: &[Pose], gts: &[Pose]) -> Result<JointErrorReport> {
    let j = check_aligned(preds, gts)?;
    let n = preds.len() as f64;
    let mut sum = vec![0.0; j];
    let mut sq = vec![0.0; j];
    for (p, g) in preds.iter().zip(gts) {
        for k in 0..j {
            let e = (p[k] - g[k]).norm();
            sum[k] += e;
            sq[k] += e * e;
        }
    }
    let per_joint_mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let per_joint_std = sq
        .iter()
        .zip(&per_joint_mean)
        .map(|(s, m)| (s / n - m * m).max(0.0).sqrt())
        .collect();
    Ok(JointErrorReport {
        overall_mean: per_joint_mean.iter().sum::<f64>() / j as f64,
        per_joint_mean,
        per_joint_std,
        sample_count: preds.len(),
    })
}

/// Fraction of all joint predictions within each threshold, pooled over
/// joints and frames. A prediction exactly at the threshold counts.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionCurve {
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
}

impl PrecisionCurve {
    pub fn at(&self, threshold: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&t| (t - threshold).abs() < 1e-12)
            .map(|i| self.precision[i])
    }
}

pub fn precision_at(preds: &[Pose], gts: &[Pose], thresholds: &[f64]) -> Result<PrecisionCurve> {
    check_aligned(preds, gts)?;
    if thresholds.windows(2).any(|w| w[1] <= w[0]) || thresholds.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::InvalidConfig("thresholds must be nonnegative and strictly ascending".into()));
    }
    let mut errors: Vec<f64> = preds
        .iter()
        .zip(gts)
        .flat_map(|(p, g)| p.iter().zip(g).map(|(a, b)| (a - b).norm()))
        .collect();
    errors.sort_by(|a, b| a.total_cmp(b));
    let total = errors.len() as f64;
    let precision = thresholds
        .iter()
        .map(|&t| errors.partition_point(|&e| e <= t) as f64 / total)
        .collect();
    Ok(PrecisionCurve {
        thresholds: thresholds.to_vec(),
        precision,
    })
}

pub const HEADLINE_THRESHOLD: f64 = 0.10;

/// 0.02 m to 0.20 m in 0.01 m steps.
pub fn default_thresholds() -> Vec<f64> {
    (2..=20).map(|c| c as f64 / 100.0).collect()
}

/// Per-joint mean of a set of poses.
pub fn mean_pose(poses: &[Pose]) -> Result<Pose> {
    let first = poses.first().ok_or_else(|| Error::InsufficientData("no poses".into()))?;
    let mut out = vec![Vector3::zeros(); first.len()];
    for p in poses {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    Ok(out.into_iter().map(|v| v / poses.len() as f64).collect())
}

pub const JOINT_ERROR_CSV_HEADER: &str = "joint,name,mean_error_m,std_error_m";
pub const PRECISION_CSV_HEADER: &str = "threshold_m,precision";

pub fn joint_error_csv(report: &JointErrorReport, names: &[&str]) -> String {
    let mut s = String::from(JOINT_ERROR_CSV_HEADER);
    s.push('\n');
    for (j, (m, sd)) in report.per_joint_mean.iter().zip(&report.per_joint_std).enumerate() {
        let name = names.get(j).copied().unwrap_or("");
        writeln!(s, "{j},{name},{m:.6},{sd:.6}").unwrap();
    }
    s
}

pub fn precision_csv(curve: &PrecisionCurve) -> String {
    let mut s = String::from(PRECISION_CSV_HEADER);
    s.push('\n');
    for (t, p) in curve.thresholds.iter().zip(&curve.precision) {
        writeln!(s, "{t:.3},{p:.6}").unwrap();
    }
    s
}

pub fn summary_text(report: &JointErrorReport, curve: &PrecisionCurve) -> String {
    let mut s = String::new();
    writeln!(s, "frames: {}", report.sample_count).unwrap();
    writeln!(s, "mean joint error: {:.4} m", report.overall_mean).unwrap();
    if let Some(p) = curve.at(HEADLINE_THRESHOLD) {
        writeln!(s, "precision@{:.2} m: {:.4}", HEADLINE_THRESHOLD, p).unwrap();
    }
    s
}
