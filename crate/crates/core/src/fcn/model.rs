use rand::Rng;
use rayon::prelude::*;

use super::ops::{
    maxpool2, maxpool2_backward, relu_backward, relu_inplace, softmax, softmax_cross_entropy, ConvShape, UpShape,
};
use super::real::Real;
use crate::error::{Error, Result};
use crate::seed::rng_from;
use crate::synth::{dequantize, SENTINEL};

/// Mean depth the preprocessor moves every person to, in meters.
pub const TARGET_DEPTH: f64 = 1.60;
/// Input value fed to the network for background pixels.
pub const BACKGROUND_INPUT: f64 = 2.0;
const INPUT_SCALE: f64 = 0.5;
/// Scoring layers start small so initial predictions are near uniform.
const SCORE_INIT_GAIN: f64 = 0.1;

/// Network topology. `channels[b]` is the width of conv block `b`; each
/// block is two 3x3 convolutions with ReLU followed by 2x2 max pooling. A 1x1
/// head at the last block's stride is upsampled 2x by a learned transposed
/// convolution, summed with a 1x1 projection of the previous block, and
/// upsampled to full resolution by a final learned transposed convolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FcnConfig {
    pub input_size: usize,
    pub n_classes: usize,
    pub channels: Vec<usize>,
    pub up_kernel: usize,
    pub final_kernel: usize,
}

impl Default for FcnConfig {
    fn default() -> Self {
        Self {
            input_size: 128,
            n_classes: crate::body::DEFAULT_PART_COUNT + 1,
            channels: vec![16, 32, 64, 96],
            up_kernel: 4,
            final_kernel: 9,
        }
    }
}

impl FcnConfig {
    pub fn blocks(&self) -> usize {
        self.channels.len()
    }

    /// Stride of the coarse head.
    pub fn head_stride(&self) -> usize {
        1 << self.blocks()
    }

    /// Upsampling factor of the final transposed convolution.
    pub fn final_stride(&self) -> usize {
        1 << (self.blocks() - 1)
    }

    pub fn up_crop(&self) -> usize {
        (self.up_kernel - 2) / 2
    }

    pub fn final_crop(&self) -> usize {
        (self.final_kernel - self.final_stride()) / 2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.blocks() < 2 || self.blocks() > 8 {
            return bad(format!("need 2..=8 conv blocks, got {}", self.blocks()));
        }
        if self.channels.contains(&0) {
            return bad("channel counts must be positive".into());
        }
        if self.n_classes < 2 || self.n_classes > 256 {
            return bad(format!("class count {} out of 2..=256", self.n_classes));
        }
        if self.input_size == 0 || self.input_size % self.head_stride() != 0 {
            return bad(format!(
                "input size {} must be a positive multiple of {}",
                self.input_size,
                self.head_stride()
            ));
        }
        if self.up_kernel < 2 {
            return bad(format!("up kernel {} must be at least 2", self.up_kernel));
        }
        if self.final_kernel % 2 == 0 || self.final_kernel < self.final_stride() {
            return bad(format!(
                "final kernel {} must be odd and at least {}",
                self.final_kernel,
                self.final_stride()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Slot {
    offset: usize,
    weights: usize,
    biases: usize,
}

impl Slot {
    fn w<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.offset..self.offset + self.weights]
    }
    fn b<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.offset + self.weights..self.offset + self.weights + self.biases]
    }
    fn split_mut<'a, T>(&self, p: &'a mut [T]) -> (&'a mut [T], &'a mut [T]) {
        p[self.offset..self.offset + self.weights + self.biases].split_at_mut(self.weights)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    convs: Vec<(ConvShape, Slot)>,
    head: (ConvShape, Slot),
    tap: (ConvShape, Slot),
    up: (UpShape, Slot),
    last: (UpShape, Slot),
    total: usize,
}

impl Layout {
    fn new(cfg: &FcnConfig) -> Self {
        let mut total = 0;
        let mut slot = |weights: usize, biases: usize| {
            let s = Slot { offset: total, weights, biases };
            total += weights + biases;
            s
        };
        let mut convs = Vec::new();
        let mut size = cfg.input_size;
        let mut cin = 1;
        for &c in &cfg.channels {
            for input in [cin, c] {
                let shape = ConvShape { cin: input, cout: c, kernel: 3, h: size, w: size };
                convs.push((shape, slot(shape.weight_len(), c)));
            }
            cin = c;
            size /= 2;
        }
        let b = cfg.blocks();
        let k = cfg.n_classes;
        let head = ConvShape { cin: cfg.channels[b - 1], cout: k, kernel: 1, h: size, w: size };
        let head = (head, slot(head.weight_len(), k));
        let tap = ConvShape { cin: cfg.channels[b - 2], cout: k, kernel: 1, h: 2 * size, w: 2 * size };
        let tap = (tap, slot(tap.weight_len(), k));
        let up = UpShape { cin: k, cout: k, kernel: cfg.up_kernel, stride: 2, crop: cfg.up_crop(), h: size, w: size };
        let up = (up, slot(up.weight_len(), k));
        let last = UpShape {
            cin: k,
            cout: k,
            kernel: cfg.final_kernel,
            stride: cfg.final_stride(),
            crop: cfg.final_crop(),
            h: 2 * size,
            w: 2 * size,
        };
        let last = (last, slot(last.weight_len(), k));
        Self { convs, head, tap, up, last, total }
    }
}

struct BlockCache<T> {
    r1: Vec<T>,
    r2: Vec<T>,
    pooled: Vec<T>,
    idx: Vec<u32>,
}

struct Cache<T> {
    input: Vec<T>,
    blocks: Vec<BlockCache<T>>,
    head: Vec<T>,
    fused: Vec<T>,
    logits: Vec<T>,
}

/// Fully-convolutional per-pixel classifier with all parameters in one flat
/// vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FcnModel<T: Real = f32> {
    config: FcnConfig,
    layout: Layout,
    params: Vec<T>,
}

/// Maps quantized levels to network input values.
pub fn encode_input<T: Real>(levels: &[u8]) -> Vec<T> {
    levels
        .iter()
        .map(|&l| match dequantize(l) {
            Some(z) if l != SENTINEL => T::from_f64((z - TARGET_DEPTH) / INPUT_SCALE),
            _ => T::from_f64(BACKGROUND_INPUT),
        })
        .collect()
}

fn bilinear(k: usize, stride: usize, t: usize) -> f64 {
    let center = (k as f64 - 1.0) / 2.0;
    (1.0 - (t as f64 - center).abs() / stride as f64).max(0.0)
}

impl<T: Real> FcnModel<T> {
    /// He-style uniform init scaled by fan-in for convolutions (damped for the
    /// 1x1 scoring layers); upsampling
    /// kernels start as per-class bilinear interpolation. Biases start at 0.
    pub fn new(config: FcnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![T::ZERO; layout.total];
        let mut rng = rng_from(seed);
        let scoring = layout.convs.len();
        for (i, (shape, slot)) in layout.convs.iter().chain([&layout.head, &layout.tap]).enumerate() {
            let fan_in = (shape.cin * shape.kernel * shape.kernel) as f64;
            let gain = if i >= scoring { SCORE_INIT_GAIN } else { 1.0 };
            let a = gain * (6.0 / fan_in).sqrt();
            for w in &mut params[slot.offset..slot.offset + slot.weights] {
                *w = T::from_f64(rng.random_range(-a..a));
            }
        }
        for (shape, slot) in [&layout.up, &layout.last] {
            let k = shape.kernel;
            for c in 0..shape.cin {
                for ty in 0..k {
                    for tx in 0..k {
                        let v = bilinear(k, shape.stride, ty) * bilinear(k, shape.stride, tx);
                        params[slot.offset + c * shape.cout * k * k + (c * k + ty) * k + tx] = T::from_f64(v);
                    }
                }
            }
        }
        Ok(Self { config, layout, params })
    }

    pub fn zeros(config: FcnConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let params = vec![T::ZERO; layout.total];
        Ok(Self { config, layout, params })
    }

    pub fn from_params(config: FcnConfig, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", layout.total),
                actual: format!("{} parameters", params.len()),
            });
        }
        Ok(Self { config, layout, params })
    }

    pub fn config(&self) -> &FcnConfig {
        &self.config
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn cast<U: Real>(&self) -> FcnModel<U> {
        FcnModel {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|p| U::from_f64(p.to_f64())).collect(),
        }
    }

    fn check_input(&self, input: &[T]) -> Result<()> {
        let s = self.config.input_size;
        if input.len() != s * s {
            return Err(Error::ShapeMismatch {
                expected: format!("{s}x{s} input"),
                actual: format!("{} values", input.len()),
            });
        }
        Ok(())
    }

    fn encoder(&self, input: &[T]) -> Vec<BlockCache<T>> {
        let p = &self.params;
        let mut blocks: Vec<BlockCache<T>> = Vec::with_capacity(self.config.blocks());
        for b in 0..self.config.blocks() {
            let x = if b == 0 { input } else { &blocks[b - 1].pooled };
            let (s1, w1) = &self.layout.convs[2 * b];
            let (s2, w2) = &self.layout.convs[2 * b + 1];
            let mut r1 = s1.forward(w1.w(p), w1.b(p), x);
            relu_inplace(&mut r1);
            let mut r2 = s2.forward(w2.w(p), w2.b(p), &r1);
            relu_inplace(&mut r2);
            let (pooled, idx) = maxpool2(&r2, s2.cout, s2.h, s2.w);
            blocks.push(BlockCache { r1, r2, pooled, idx });
        }
        blocks
    }

    fn forward_cached(&self, input: &[T]) -> Cache<T> {
        let p = &self.params;
        let blocks = self.encoder(input);
        let nb = blocks.len();
        let (hs, hw) = &self.layout.head;
        let head = hs.forward(hw.w(p), hw.b(p), &blocks[nb - 1].pooled);
        let (us, uw) = &self.layout.up;
        let mut fused = us.forward(uw.w(p), uw.b(p), &head);
        let (ts, tw) = &self.layout.tap;
        for (f, t) in fused.iter_mut().zip(ts.forward(tw.w(p), tw.b(p), &blocks[nb - 2].pooled)) {
            *f += t;
        }
        let (ls, lw) = &self.layout.last;
        let logits = ls.forward(lw.w(p), lw.b(p), &fused);
        Cache {
            input: input.to_vec(),
            blocks,
            head,
            fused,
            logits,
        }
    }

    /// Class scores of the coarse head before any fusion, `n_classes x
    /// (S/stride)^2`.
    pub fn coarse(&self, input: &[T]) -> Result<Vec<T>> {
        self.check_input(input)?;
        let p = &self.params;
        let blocks = self.encoder(input);
        let (hs, hw) = &self.layout.head;
        Ok(hs.forward(hw.w(p), hw.b(p), &blocks[blocks.len() - 1].pooled))
    }

    pub fn logits(&self, input: &[T]) -> Result<Vec<T>> {
        self.check_input(input)?;
        Ok(self.forward_cached(input).logits)
    }

    /// Per-pixel class probabilities, channel-major `n_classes x S x S`.
    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        Ok(softmax(&self.logits(input)?, self.config.n_classes))
    }

    /// Cross-entropy summed over pixels and multiplied by `scale`, with its
    /// gradient with respect to every parameter.
    pub fn loss_and_grad(&self, input: &[T], labels: &[u8], scale: T) -> Result<(f64, Vec<T>)> {
        self.check_input(input)?;
        if labels.len() != input.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} labels", input.len()),
                actual: format!("{} labels", labels.len()),
            });
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= self.config.n_classes) {
            return Err(Error::InvalidConfig(format!(
                "label {l} out of range for {} classes",
                self.config.n_classes
            )));
        }
        let cache = self.forward_cached(input);
        let (loss, dlogits) = softmax_cross_entropy(&cache.logits, self.config.n_classes, labels, scale);
        Ok((loss, self.backward(&cache, &dlogits)))
    }

    fn backward(&self, cache: &Cache<T>, dlogits: &[T]) -> Vec<T> {
        let p = &self.params;
        let mut g = vec![T::ZERO; p.len()];
        let nb = cache.blocks.len();

        let (ls, lw) = &self.layout.last;
        let (dw, db) = lw.split_mut(&mut g);
        let dfused = ls.backward(lw.w(p), &cache.fused, dlogits, dw, db);

        let (us, uw) = &self.layout.up;
        let (dw, db) = uw.split_mut(&mut g);
        let dhead = us.backward(uw.w(p), &cache.head, &dfused, dw, db);

        let (ts, tw) = &self.layout.tap;
        let (dw, db) = tw.split_mut(&mut g);
        let dtap = ts
            .backward(tw.w(p), &cache.blocks[nb - 2].pooled, &dfused, dw, db, true)
            .expect("input gradient requested");

        let (hs, hw) = &self.layout.head;
        let (dw, db) = hw.split_mut(&mut g);
        let mut dpool = hs
            .backward(hw.w(p), &cache.blocks[nb - 1].pooled, &dhead, dw, db, true)
            .expect("input gradient requested");

        for b in (0..nb).rev() {
            let bc = &cache.blocks[b];
            let mut dr2 = maxpool2_backward(&dpool, &bc.idx, bc.r2.len());
            relu_backward(&bc.r2, &mut dr2);
            let (s2, w2) = &self.layout.convs[2 * b + 1];
            let (dw, db) = w2.split_mut(&mut g);
            let mut dr1 = s2.backward(w2.w(p), &bc.r1, &dr2, dw, db, true).expect("input gradient requested");
            relu_backward(&bc.r1, &mut dr1);
            let (s1, w1) = &self.layout.convs[2 * b];
            let x = if b == 0 { &cache.input } else { &cache.blocks[b - 1].pooled };
            let (dw, db) = w1.split_mut(&mut g);
            if let Some(dx) = s1.backward(w1.w(p), x, &dr1, dw, db, b > 0) {
                dpool = dx;
                if b - 1 == nb - 2 {
                    for (d, t) in dpool.iter_mut().zip(&dtap) {
                        *d += *t;
                    }
                }
            }
        }
        g
    }
}

/// One training example: encoded input and per-pixel class labels.
#[derive(Debug, Clone)]
pub struct TrainItem<T: Real = f32> {
    pub input: Vec<T>,
    pub labels: Vec<u8>,
}

/// Mini-batch gradient descent with classical momentum.
#[derive(Debug, Clone)]
pub struct Sgd<T: Real = f32> {
    pub momentum: T,
    velocity: Vec<T>,
    pub iteration: u64,
}

impl<T: Real> Sgd<T> {
    pub fn new(param_count: usize, momentum: f64) -> Self {
        Self {
            momentum: T::from_f64(momentum),
            velocity: vec![T::ZERO; param_count],
            iteration: 0,
        }
    }

    /// Mean per-pixel cross-entropy over the whole batch, then one update.
    /// Per-example gradients are computed in parallel and summed in batch
    /// order, so the result does not depend on thread count.
    pub fn step(&mut self, model: &mut FcnModel<T>, batch: &[TrainItem<T>], lr: f64) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InsufficientData("empty batch".into()));
        }
        if self.velocity.len() != model.param_count() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", self.velocity.len()),
                actual: format!("{} parameters", model.param_count()),
            });
        }
        let pixels: usize = batch.iter().map(|b| b.labels.len()).sum();
        let scale = T::from_f64(1.0 / pixels as f64);
        let parts: Vec<(f64, Vec<T>)> = batch
            .par_iter()
            .map(|item| model.loss_and_grad(&item.input, &item.labels, scale))
            .collect::<Result<_>>()?;
        let mut loss = 0.0;
        let mut grad = vec![T::ZERO; model.param_count()];
        for (l, g) in &parts {
            loss += l;
            for (a, &b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { iteration: self.iteration as usize });
        }
        let lr = T::from_f64(lr);
        for ((p, v), &g) in model.params.iter_mut().zip(&mut self.velocity).zip(&grad) {
            *v = self.momentum * *v - lr * g;
            *p += *v;
        }
        self.iteration += 1;
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fcn::ops::tests::{random, rel_err};

    pub(crate) fn tiny() -> FcnConfig {
        FcnConfig {
            input_size: 8,
            n_classes: 3,
            channels: vec![2, 3],
            up_kernel: 4,
            final_kernel: 3,
        }
    }

    #[test]
    fn default_topology_is_valid() {
        let cfg = FcnConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.head_stride(), 16);
        assert_eq!(cfg.final_stride(), 8);
        assert_eq!(cfg.final_crop(), 0);
        assert_eq!(cfg.up_crop(), 1);
        let bad = FcnConfig { final_kernel: 8, ..FcnConfig::default() };
        assert!(bad.validate().is_err());
        let bad = FcnConfig { input_size: 120, ..FcnConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_model_is_uniform() {
        let cfg = FcnConfig { input_size: 32, ..FcnConfig::default() };
        let m = FcnModel::<f32>::zeros(cfg.clone()).unwrap();
        let p = m.forward(&vec![0.3; 32 * 32]).unwrap();
        assert_eq!(p.len(), cfg.n_classes * 32 * 32);
        for v in p {
            assert!((v - 1.0 / cfg.n_classes as f32).abs() < 1e-7);
        }
    }

    #[test]
    fn output_is_normalized_and_shape_checked() {
        let cfg = FcnConfig { input_size: 32, channels: vec![4, 6, 8], final_kernel: 5, ..FcnConfig::default() };
        let m = FcnModel::<f64>::new(cfg.clone(), 9).unwrap();
        let x = random(32 * 32, 3);
        let p = m.forward(&x).unwrap();
        for px in 0..32 * 32 {
            let s: f64 = (0..cfg.n_classes).map(|c| p[c * 1024 + px]).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        assert!(matches!(m.forward(&x[..100]), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn whole_network_gradient_matches_finite_differences() {
        let m = FcnModel::<f64>::new(tiny(), 4).unwrap();
        let x = random(64, 5);
        let labels: Vec<u8> = (0..64).map(|i| (i * 7 % 3) as u8).collect();
        let (_, g) = m.loss_and_grad(&x, &labels, 1.0 / 64.0).unwrap();
        let eps = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..m.param_count() {
            let mut mp = m.clone();
            mp.params[i] += eps;
            let hi = mp.loss_and_grad(&x, &labels, 1.0 / 64.0).unwrap().0;
            mp.params[i] -= 2.0 * eps;
            let lo = mp.loss_and_grad(&x, &labels, 1.0 / 64.0).unwrap().0;
            worst = worst.max(rel_err(g[i], (hi - lo) / (2.0 * eps)));
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn zero_learning_rate_leaves_model_unchanged() {
        let mut m = FcnModel::<f32>::new(tiny(), 1).unwrap();
        let before = m.clone();
        let mut opt = Sgd::new(m.param_count(), 0.9);
        let item = TrainItem { input: vec![0.5f32; 64], labels: vec![1; 64] };
        opt.step(&mut m, &[item.clone(), item], 0.0).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn overfits_a_single_batch() {
        let cfg = FcnConfig { input_size: 16, n_classes: 3, channels: vec![4, 6], up_kernel: 4, final_kernel: 5 };
        let mut m = FcnModel::<f32>::new(cfg, 2).unwrap();
        let mut opt = Sgd::new(m.param_count(), 0.9);
        // two images of a bright disc and a dark bar on background
        let batch: Vec<TrainItem> = (0..2)
            .map(|s| {
                let (cx, cy) = (5.0 + 4.0 * s as f32, 6.0);
                let mut input = vec![2.0f32; 256];
                let mut labels = vec![0u8; 256];
                for y in 0..16 {
                    for x in 0..16 {
                        let i = y * 16 + x;
                        if (x as f32 - cx).powi(2) + (y as f32 - cy).powi(2) < 9.0 {
                            input[i] = -0.4;
                            labels[i] = 1;
                        } else if (11..14).contains(&y) && (2..14).contains(&x) {
                            input[i] = 0.3;
                            labels[i] = 2;
                        }
                    }
                }
                TrainItem { input, labels }
            })
            .collect();
        let first = opt.step(&mut m, &batch, 0.05).unwrap();
        let mut last = first;
        for _ in 0..199 {
            last = opt.step(&mut m, &batch, 0.05).unwrap();
        }
        assert!(last < 0.1 * first, "loss {first} -> {last}");
    }

    #[test]
    fn casting_round_trips_through_f64() {
        let m = FcnModel::<f32>::new(tiny(), 3).unwrap();
        assert_eq!(m.cast::<f64>().cast::<f32>(), m);
    }
}
