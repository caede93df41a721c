//! Depth preprocessing, per-pixel probability maps and the two classifier
//! back-ends (groundtruth oracle and learned network).

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::fcn::{encode_input, FcnModel, TARGET_DEPTH};
use crate::seed::rng_from;
use crate::synth::{dequantize, DepthFrame, LabelFrame, View, MAX_LEVEL, QUANT_STEP, SENTINEL};

/// Margin in window pixels for a window of `size` (30 px at 250 px).
pub fn margin_for(size: usize) -> usize {
    (30.0 * size as f64 / 250.0).round() as usize
}

/// Affine map from original frame pixels to window pixels,
/// `u = scale * x + offset_x`, `v = scale * y + offset_y`, plus the integer
/// depth-level shift applied to foreground pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowTransform {
    pub scale: f64,
    pub offset_x: f64,
    pub offset_y: f64,
    pub level_shift: i32,
    pub source_width: usize,
    pub source_height: usize,
}

impl WindowTransform {
    pub fn forward(&self, x: f64, y: f64) -> (f64, f64) {
        (self.scale * x + self.offset_x, self.scale * y + self.offset_y)
    }

    pub fn inverse(&self, u: f64, v: f64) -> (f64, f64) {
        ((u - self.offset_x) / self.scale, (v - self.offset_y) / self.scale)
    }

    /// Depth shift in meters added to every foreground pixel.
    pub fn depth_shift(&self) -> f64 {
        self.level_shift as f64 * QUANT_STEP
    }

    /// Nearest source pixel read by window pixel `(u, v)`.
    pub fn source_pixel(&self, u: usize, v: usize) -> Option<(usize, usize)> {
        let (x, y) = self.inverse(u as f64, v as f64);
        let (x, y) = (x.round(), y.round());
        (x >= 0.0 && y >= 0.0 && (x as usize) < self.source_width && (y as usize) < self.source_height)
            .then_some((x as usize, y as usize))
    }

    /// Window pixel an original pixel maps to, if it lands inside the window.
    pub fn window_pixel(&self, x: usize, y: usize, size: usize) -> Option<(usize, usize)> {
        let (u, v) = self.forward(x as f64, y as f64);
        let (u, v) = (u.round(), v.round());
        (u >= 0.0 && v >= 0.0 && (u as usize) < size && (v as usize) < size).then_some((u as usize, v as usize))
    }
}

/// Square depth window with the person centered, scaled to fill the window
/// minus a margin, and moved to a mean depth of 1.60 m.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedDepthImage {
    pub size: usize,
    pub margin: usize,
    pub levels: Vec<u8>,
    pub transform: WindowTransform,
}

impl NormalizedDepthImage {
    pub fn foreground_count(&self) -> usize {
        self.levels.iter().filter(|&&l| l != SENTINEL).count()
    }

    /// Mean dequantized foreground depth.
    pub fn mean_depth(&self) -> Option<f64> {
        mean_depth(&self.levels)
    }

    /// Resamples a label frame through the same window transform.
    pub fn warp_labels(&self, labels: &LabelFrame) -> Vec<u8> {
        let t = &self.transform;
        let mut out = vec![0u8; self.size * self.size];
        for v in 0..self.size {
            for u in 0..self.size {
                if let Some((x, y)) = t.source_pixel(u, v) {
                    out[v * self.size + u] = labels.at(x, y);
                }
            }
        }
        out
    }
}

fn mean_depth(levels: &[u8]) -> Option<f64> {
    let (sum, n) = levels
        .iter()
        .filter_map(|&l| dequantize(l))
        .fold((0.0, 0usize), |(s, n), z| (s + z, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn preprocess(depth: &DepthFrame, size: usize) -> Result<NormalizedDepthImage> {
    let (w, h) = (depth.width, depth.height);
    let mut bbox = (usize::MAX, usize::MAX, 0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            if depth.at(x, y) != SENTINEL {
                bbox = (bbox.0.min(x), bbox.1.min(y), bbox.2.max(x), bbox.3.max(y));
            }
        }
    }
    let mean = mean_depth(&depth.levels).ok_or(Error::EmptyForeground)?;
    let level_shift = ((TARGET_DEPTH - mean) / QUANT_STEP).round() as i32;
    let margin = margin_for(size);
    let extent = (bbox.2 - bbox.0 + 1).max(bbox.3 - bbox.1 + 1) as f64;
    let scale = (size as f64 - 2.0 * margin as f64).max(1.0) / extent;
    let center = (size as f64 - 1.0) / 2.0;
    // Integer offsets keep a unit-scale window an exact pixel shift.
    let transform = WindowTransform {
        scale,
        offset_x: (center - scale * (bbox.0 + bbox.2) as f64 / 2.0).round(),
        offset_y: (center - scale * (bbox.1 + bbox.3) as f64 / 2.0).round(),
        level_shift,
        source_width: w,
        source_height: h,
    };
    let mut levels = vec![SENTINEL; size * size];
    for v in 0..size {
        for u in 0..size {
            if let Some((x, y)) = transform.source_pixel(u, v) {
                let l = depth.at(x, y);
                if l != SENTINEL {
                    levels[v * size + u] = (l as i32 + level_shift).clamp(0, MAX_LEVEL as i32) as u8;
                }
            }
        }
    }
    Ok(NormalizedDepthImage {
        size,
        margin,
        levels,
        transform,
    })
}

/// Per-pixel distribution over `channels` classes (class 0 = background),
/// stored pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl ProbabilityMap {
    pub fn one_hot(labels: &LabelFrame, channels: usize) -> Self {
        let mut data = vec![0.0; labels.labels.len() * channels];
        for (i, &l) in labels.labels.iter().enumerate() {
            data[i * channels + l as usize] = 1.0;
        }
        Self {
            width: labels.width,
            height: labels.height,
            channels,
            data,
        }
    }

    pub fn pixel(&self, index: usize) -> &[f32] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    /// Most probable class at pixel `index` and its probability; ties go to
    /// the lower class id.
    pub fn argmax(&self, index: usize) -> (u8, f32) {
        let p = self.pixel(index);
        let mut best = 0;
        for c in 1..p.len() {
            if p[c] > p[best] {
                best = c;
            }
        }
        (best as u8, p[best])
    }

    pub fn argmax_labels(&self) -> LabelFrame {
        LabelFrame {
            width: self.width,
            height: self.height,
            labels: (0..self.width * self.height).map(|i| self.argmax(i).0).collect(),
        }
    }
}

/// Replays groundtruth labels, replacing each foreground label by a uniform
/// draw from `1..=n_labels` with probability `noise_rate`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleClassifier {
    pub n_labels: usize,
    pub noise_rate: f64,
}

impl OracleClassifier {
    pub fn exact(n_labels: usize) -> Self {
        Self { n_labels, noise_rate: 0.0 }
    }

    pub fn classify(&self, labels: &LabelFrame, seed: u64) -> Result<ProbabilityMap> {
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::InvalidConfig(format!("noise rate {} outside [0, 1]", self.noise_rate)));
        }
        if labels.labels.iter().all(|&l| l == 0) {
            return Err(Error::EmptyForeground);
        }
        if self.noise_rate == 0.0 {
            return Ok(ProbabilityMap::one_hot(labels, self.n_labels + 1));
        }
        let mut rng = rng_from(seed);
        let mut noisy = labels.clone();
        for l in noisy.labels.iter_mut().filter(|l| **l != 0) {
            if rng.random_bool(self.noise_rate) {
                *l = rng.random_range(1..=self.n_labels as u8);
            }
        }
        Ok(ProbabilityMap::one_hot(&noisy, self.n_labels + 1))
    }
}

/// Runs the network on a frame and maps the result back to the frame's own
/// pixel grid. Pixels that are background in the frame or fall outside the
/// window get background probability 1.
pub fn classify_depth(model: &FcnModel<f32>, depth: &DepthFrame) -> Result<ProbabilityMap> {
    let size = model.config().input_size;
    let channels = model.config().n_classes;
    let norm = preprocess(depth, size)?;
    let probs = model.forward(&encode_input::<f32>(&norm.levels))?;
    let plane = size * size;
    let mut data = vec![0.0f32; depth.levels.len() * channels];
    for y in 0..depth.height {
        for x in 0..depth.width {
            let i = y * depth.width + x;
            let out = &mut data[i * channels..(i + 1) * channels];
            match (depth.at(x, y) != SENTINEL)
                .then(|| norm.transform.window_pixel(x, y, size))
                .flatten()
            {
                Some((u, v)) => {
                    for (c, o) in out.iter_mut().enumerate() {
                        *o = probs[c * plane + v * size + u];
                    }
                }
                None => out[0] = 1.0,
            }
        }
    }
    Ok(ProbabilityMap {
        width: depth.width,
        height: depth.height,
        channels,
        data,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Oracle(OracleClassifier),
    Model(Box<FcnModel<f32>>),
}

impl Classifier {
    /// Probability map for one view; `seed` only drives oracle label noise.
    pub fn classify(&self, view: &View, seed: u64) -> Result<ProbabilityMap> {
        match self {
            Classifier::Oracle(o) => o.classify(&view.labels, seed),
            Classifier::Model(m) => classify_depth(m, &view.depth),
        }
    }

    pub fn is_oracle(&self) -> bool {
        matches!(self, Classifier::Oracle(_))
    }
}

/// Pooled per-class recall counts. Background is not a class here.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassAccuracy {
    counts: BTreeMap<u8, (u64, u64)>,
}

impl ClassAccuracy {
    pub fn add(&mut self, pred: &LabelFrame, gt: &LabelFrame) -> Result<()> {
        if pred.width != gt.width || pred.height != gt.height {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", gt.width, gt.height),
                actual: format!("{}x{}", pred.width, pred.height),
            });
        }
        self.add_raw(&pred.labels, &gt.labels);
        Ok(())
    }

    pub fn add_raw(&mut self, pred: &[u8], gt: &[u8]) {
        for (&p, &g) in pred.iter().zip(gt) {
            if g != 0 {
                let e = self.counts.entry(g).or_default();
                e.0 += (p == g) as u64;
                e.1 += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &ClassAccuracy) {
        for (&k, &(c, t)) in &other.counts {
            let e = self.counts.entry(k).or_default();
            e.0 += c;
            e.1 += t;
        }
    }

    pub fn recall(&self, class: u8) -> Option<f64> {
        self.counts.get(&class).map(|&(c, t)| c as f64 / t as f64)
    }

    /// Mean recall over classes that occur in the groundtruth.
    pub fn mean(&self) -> Option<f64> {
        (!self.counts.is_empty())
            .then(|| self.counts.values().map(|&(c, t)| c as f64 / t as f64).sum::<f64>() / self.counts.len() as f64)
    }
}

/// Mean per-class recall of `pred` over the foreground classes present in `gt`.
pub fn avg_per_class_accuracy(pred: &LabelFrame, gt: &LabelFrame) -> Result<f64> {
    let mut acc = ClassAccuracy::default();
    acc.add(pred, gt)?;
    acc.mean().ok_or(Error::EmptyForeground)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::quantize;

    fn blob(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize, z: f64) -> (DepthFrame, LabelFrame) {
        let mut d = DepthFrame::background(w, h);
        let mut l = LabelFrame::background(w, h);
        for y in y0..=y1 {
            for x in x0..=x1 {
                d.levels[y * w + x] = quantize(z + 0.01 * ((x + y) % 3) as f64);
                l.labels[y * w + x] = 1 + ((x / 3 + y / 5) % 4) as u8;
            }
        }
        (d, l)
    }

    #[test]
    fn centered_fitting_frame_is_an_identity_transform() {
        let s = 128;
        let m = margin_for(s);
        assert_eq!(m, 15);
        // bbox of exactly s - 2m pixels centered on (s-1)/2
        let mut d = DepthFrame::background(s, s);
        for y in m..s - m {
            for x in m..s - m {
                d.levels[y * s + x] = quantize(TARGET_DEPTH);
            }
        }
        let n = preprocess(&d, s).unwrap();
        assert_eq!(n.transform.scale, 1.0);
        assert_eq!((n.transform.offset_x, n.transform.offset_y), (0.0, 0.0));
        assert_eq!(n.transform.level_shift, 0);
        assert_eq!(n.levels, d.levels);
    }

    #[test]
    fn far_person_is_moved_to_target_depth() {
        let (d, _) = blob(64, 64, 20, 10, 30, 50, 3.2);
        let n = preprocess(&d, 64).unwrap();
        assert!((n.transform.depth_shift() + 1.6).abs() <= QUANT_STEP / 2.0);
        assert!((n.mean_depth().unwrap() - TARGET_DEPTH).abs() <= QUANT_STEP / 2.0);
    }

    #[test]
    fn upscaled_window_round_trips_foreground_pixels() {
        let (d, _) = blob(64, 64, 20, 10, 30, 40, 2.5);
        let n = preprocess(&d, 64).unwrap();
        assert!(n.transform.scale >= 1.0);
        let mut back = std::collections::BTreeSet::new();
        for v in 0..64 {
            for u in 0..64 {
                if n.levels[v * 64 + u] != SENTINEL {
                    back.insert(n.transform.source_pixel(u, v).unwrap());
                }
            }
        }
        let orig: std::collections::BTreeSet<_> =
            (0..64 * 64).filter(|&i| d.levels[i] != SENTINEL).map(|i| (i % 64, i / 64)).collect();
        assert_eq!(back, orig);
        for &(x, y) in &orig {
            let (u, v) = n.transform.window_pixel(x, y, 64).unwrap();
            assert_eq!(n.transform.source_pixel(u, v), Some((x, y)));
        }
    }

    #[test]
    fn empty_frame_is_rejected() {
        let d = DepthFrame::background(32, 32);
        assert!(matches!(preprocess(&d, 32), Err(Error::EmptyForeground)));
    }

    #[test]
    fn warped_labels_share_support_with_depth() {
        let (d, l) = blob(64, 48, 5, 3, 60, 40, 2.0);
        let n = preprocess(&d, 32).unwrap();
        let wl = n.warp_labels(&l);
        for (a, b) in n.levels.iter().zip(&wl) {
            assert_eq!(*a == SENTINEL, *b == 0);
        }
    }

    #[test]
    fn oracle_endpoints() {
        let (_, l) = blob(40, 40, 5, 5, 34, 34, 2.0);
        let exact = OracleClassifier::exact(43).classify(&l, 1).unwrap();
        assert_eq!(exact.argmax_labels(), l);
        let noisy = OracleClassifier { n_labels: 43, noise_rate: 1.0 }.classify(&l, 1).unwrap();
        let labels = noisy.argmax_labels();
        let mut hist = [0usize; 44];
        for (&p, &g) in labels.labels.iter().zip(&l.labels) {
            assert_eq!(p == 0, g == 0);
            hist[p as usize] += 1;
        }
        // 900 draws over 43 labels: every label appears and none dominates
        assert!(hist[1..].iter().all(|&c| c > 0 && c < 60), "{hist:?}");
    }

    #[test]
    fn per_class_accuracy_examples() {
        let (_, gt) = blob(20, 20, 2, 2, 17, 17, 2.0);
        assert_eq!(avg_per_class_accuracy(&gt, &gt).unwrap(), 1.0);
        let bg = LabelFrame::background(20, 20);
        assert_eq!(avg_per_class_accuracy(&bg, &gt).unwrap(), 0.0);
        assert!(matches!(avg_per_class_accuracy(&gt, &bg), Err(Error::EmptyForeground)));
        let small = LabelFrame::background(10, 10);
        assert!(matches!(avg_per_class_accuracy(&small, &gt), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn random_prediction_on_two_balanced_classes_scores_half() {
        let mut rng = rng_from(5);
        let n = 100 * 100;
        let gt: Vec<u8> = (0..n).map(|i| 1 + (i % 2) as u8).collect();
        let pred: Vec<u8> = (0..n).map(|_| rng.random_range(1..=2)).collect();
        let mut acc = ClassAccuracy::default();
        acc.add_raw(&pred, &gt);
        assert!((acc.mean().unwrap() - 0.5).abs() < 0.05);
    }

    #[test]
    fn classify_depth_returns_frame_sized_normalized_maps() {
        let cfg = crate::fcn::FcnConfig { input_size: 32, ..Default::default() };
        let model = FcnModel::<f32>::new(cfg, 3).unwrap();
        let (d, _) = blob(48, 40, 10, 5, 30, 35, 2.7);
        let map = classify_depth(&model, &d).unwrap();
        assert_eq!((map.width, map.height, map.channels), (48, 40, 44));
        for i in 0..48 * 40 {
            let s: f32 = map.pixel(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
            if d.levels[i] == SENTINEL {
                assert_eq!(map.pixel(i)[0], 1.0);
            }
        }
    }
}
