//! Fusion of per-camera probability maps into one labeled point cloud and
//! the fixed per-class statistics feature vector.

use std::io::Write;

use nalgebra::{Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::classifier::ProbabilityMap;
use crate::error::{Error, Result};
use crate::geometry::{backproject, sym_eigenvalues, CameraParams, RigidTransform, SymMat3};
use crate::synth::{dequantize, DepthFrame, SENTINEL};

pub const DEFAULT_PROBABILITY_THRESHOLD: f32 = 0.3;
pub const STATS_PER_CLASS: usize = 24;

/// Names of the 24 per-class entries, in storage order.
pub const FEATURE_LAYOUT: [&str; STATS_PER_CLASS] = [
    "median_x", "median_y", "median_z",
    "cov_xx", "cov_xy", "cov_xz", "cov_yx", "cov_yy", "cov_yz", "cov_zx", "cov_zy", "cov_zz",
    "eig_0", "eig_1", "eig_2",
    "std_x", "std_y", "std_z",
    "min_x", "min_y", "min_z",
    "max_x", "max_y", "max_z",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint {
    pub position: Vector3<f64>,
    pub label: u8,
    pub probability: f32,
    pub camera: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledPointCloud {
    pub points: Vec<LabeledPoint>,
}

/// Frame the fused cloud is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReferenceFrame {
    World,
    #[default]
    Camera0,
}

impl ReferenceFrame {
    /// Pose of the reference frame in world coordinates.
    pub fn resolve(&self, cameras: &[CameraParams]) -> Result<RigidTransform> {
        match self {
            ReferenceFrame::World => Ok(RigidTransform::identity()),
            ReferenceFrame::Camera0 => cameras.first().map(|c| c.camera_to_world).ok_or(Error::NoViews),
        }
    }
}

impl std::fmt::Display for ReferenceFrame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReferenceFrame::World => "world",
            ReferenceFrame::Camera0 => "camera0",
        })
    }
}

impl std::str::FromStr for ReferenceFrame {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "world" => Ok(Self::World),
            "camera0" | "camera" => Ok(Self::Camera0),
            other => Err(Error::InvalidConfig(format!("unknown reference frame `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FusionView<'a> {
    pub probabilities: &'a ProbabilityMap,
    pub depth: &'a DepthFrame,
    pub camera: &'a CameraParams,
}

/// Backprojects every foreground-classified pixel whose top probability
/// reaches `threshold` and maps it into the frame whose world pose is
/// `reference_to_world`.
pub fn fuse(views: &[FusionView<'_>], reference_to_world: &RigidTransform, threshold: f32) -> Result<LabeledPointCloud> {
    if views.is_empty() {
        return Err(Error::NoViews);
    }
    let world_to_ref = reference_to_world.inverse();
    let per_view: Vec<Vec<LabeledPoint>> = views
        .par_iter()
        .enumerate()
        .map(|(cam, v)| {
            let (w, h) = (v.depth.width, v.depth.height);
            if v.probabilities.width != w || v.probabilities.height != h {
                return Err(Error::ShapeMismatch {
                    expected: format!("{w}x{h}"),
                    actual: format!("{}x{}", v.probabilities.width, v.probabilities.height),
                });
            }
            let mut pts = Vec::new();
            for y in 0..h {
                for x in 0..w {
                    let level = v.depth.at(x, y);
                    if level == SENTINEL {
                        continue;
                    }
                    let (label, p) = v.probabilities.argmax(y * w + x);
                    if label == 0 || p < threshold {
                        continue;
                    }
                    let z = dequantize(level).expect("non-sentinel level");
                    let world = backproject(Vector2::new(x as f64, y as f64), z, v.camera)?;
                    pts.push(LabeledPoint {
                        position: world_to_ref.apply(&world),
                        label,
                        probability: p,
                        camera: cam,
                    });
                }
            }
            Ok(pts)
        })
        .collect::<Result<_>>()?;
    let points: Vec<LabeledPoint> = per_view.into_iter().flatten().collect();
    if points.is_empty() {
        return Err(Error::NoForegroundPoints);
    }
    Ok(LabeledPointCloud { points })
}

/// Writes one `x y z label prob cam` line per point.
pub fn write_cloud(cloud: &LabeledPointCloud, mut out: impl Write) -> std::io::Result<()> {
    for p in &cloud.points {
        writeln!(
            out,
            "{:.6} {:.6} {:.6} {} {:.4} {}",
            p.position.x, p.position.y, p.position.z, p.label, p.probability, p.camera
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassStats {
    pub present: bool,
    pub count: usize,
    pub median: [f64; 3],
    pub covariance: SymMat3,
    pub eigenvalues: [f64; 3],
    pub std: [f64; 3],
    pub min: [f64; 3],
    pub max: [f64; 3],
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl ClassStats {
    /// Statistics of a point set; an empty set gives the absent (all-zero)
    /// entry. Covariance is centered on the mean and divided by the count.
    pub fn from_points(points: &[Vector3<f64>]) -> Self {
        let n = points.len();
        if n == 0 {
            return Self::default();
        }
        let mean = points.iter().sum::<Vector3<f64>>() / n as f64;
        let mut cov = Matrix3::zeros();
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for p in points {
            let d = p - mean;
            cov += d * d.transpose();
            for a in 0..3 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        let covariance = SymMat3::from_matrix(&(cov / n as f64));
        let mut med = [0.0; 3];
        let mut buf = Vec::with_capacity(n);
        for (a, m) in med.iter_mut().enumerate() {
            buf.clear();
            buf.extend(points.iter().map(|p| p[a]));
            *m = median(&mut buf);
        }
        let std = [covariance.xx.max(0.0).sqrt(), covariance.yy.max(0.0).sqrt(), covariance.zz.max(0.0).sqrt()];
        Self {
            present: true,
            count: n,
            median: med,
            covariance,
            eigenvalues: sym_eigenvalues(&covariance),
            std,
            min,
            max,
        }
    }

    /// The 24 entries in [`FEATURE_LAYOUT`] order.
    pub fn to_array(&self) -> [f64; STATS_PER_CLASS] {
        let mut out = [0.0; STATS_PER_CLASS];
        out[0..3].copy_from_slice(&self.median);
        let c = self.covariance.to_array();
        for r in 0..3 {
            out[3 + 3 * r..6 + 3 * r].copy_from_slice(&c[r]);
        }
        out[12..15].copy_from_slice(&self.eigenvalues);
        out[15..18].copy_from_slice(&self.std);
        out[18..21].copy_from_slice(&self.min);
        out[21..24].copy_from_slice(&self.max);
        out
    }
}

pub fn class_statistics(cloud: &LabeledPointCloud, class: u8) -> ClassStats {
    let pts: Vec<Vector3<f64>> = cloud.points.iter().filter(|p| p.label == class).map(|p| p.position).collect();
    ClassStats::from_points(&pts)
}

/// `24 * n_labels` statistics for classes `1..=n_labels` plus one presence
/// flag per class.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub present: Vec<bool>,
}

impl FeatureVector {
    pub fn n_labels(&self) -> usize {
        self.present.len()
    }

    pub fn class(&self, label: u8) -> &[f64] {
        let i = label as usize - 1;
        &self.values[i * STATS_PER_CLASS..(i + 1) * STATS_PER_CLASS]
    }

    pub fn empty(n_labels: usize) -> Self {
        Self {
            values: vec![0.0; STATS_PER_CLASS * n_labels],
            present: vec![false; n_labels],
        }
    }
}

pub fn extract_features(cloud: &LabeledPointCloud, n_labels: usize) -> FeatureVector {
    let mut groups: Vec<Vec<Vector3<f64>>> = vec![Vec::new(); n_labels];
    for p in &cloud.points {
        if (1..=n_labels).contains(&(p.label as usize)) {
            groups[p.label as usize - 1].push(p.position);
        }
    }
    let mut f = FeatureVector::empty(n_labels);
    for (i, g) in groups.iter().enumerate() {
        let s = ClassStats::from_points(g);
        f.present[i] = s.present;
        f.values[i * STATS_PER_CLASS..(i + 1) * STATS_PER_CLASS].copy_from_slice(&s.to_array());
    }
    f
}
