//! Depth and part-label rendering by analytic ray casting against capsules,
//! and the per-sample generation procedure.

use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::body::{gait_posture, pose_character, Character, PosedGeometry, PosturePool};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, CameraParams};
use crate::seed::{derive_seed, rng_from};

/// Nearest representable depth (meters).
pub const DEPTH_MIN: f64 = 0.5;
/// Farthest representable depth (meters).
pub const DEPTH_MAX: f64 = 8.0;
/// Highest valid depth level; levels `0..=MAX_LEVEL` span `[DEPTH_MIN, DEPTH_MAX]`.
pub const MAX_LEVEL: u8 = 254;
/// Background / invalid depth code.
pub const SENTINEL: u8 = 255;
/// Depth resolution of one level (meters).
pub const QUANT_STEP: f64 = (DEPTH_MAX - DEPTH_MIN) / MAX_LEVEL as f64;

pub fn quantize(z: f64) -> u8 {
    let level = ((z - DEPTH_MIN) / QUANT_STEP).round();
    level.clamp(0.0, MAX_LEVEL as f64) as u8
}

pub fn dequantize(level: u8) -> Option<f64> {
    (level != SENTINEL).then(|| DEPTH_MIN + level as f64 * QUANT_STEP)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthFrame {
    pub width: usize,
    pub height: usize,
    pub levels: Vec<u8>,
}

impl DepthFrame {
    pub fn background(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            levels: vec![SENTINEL; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.levels[y * self.width + x]
    }

    pub fn foreground_count(&self) -> usize {
        self.levels.iter().filter(|&&l| l != SENTINEL).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelFrame {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
}

impl LabelFrame {
    pub fn background(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }
}

/// Interval description of camera placement around the character.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraRange {
    /// Radians, half-open `[lo, hi)` within `[-pi, pi)`.
    pub azimuth: (f64, f64),
    /// Meters from the target point.
    pub distance: (f64, f64),
    /// Radians above the horizontal plane.
    pub elevation: (f64, f64),
    /// Half-width (meters) of the uniform jitter on the look-at point.
    pub target_jitter: f64,
}

impl Default for CameraRange {
    fn default() -> Self {
        Self {
            azimuth: (-PI, PI),
            distance: (1.5, 4.0),
            elevation: (-15f64.to_radians(), 30f64.to_radians()),
            target_jitter: 0.1,
        }
    }
}

impl CameraRange {
    pub fn fixed(azimuth: f64, distance: f64, elevation: f64) -> Self {
        Self {
            azimuth: (azimuth, azimuth),
            distance: (distance, distance),
            elevation: (elevation, elevation),
            target_jitter: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |(lo, hi): (f64, f64)| lo <= hi && lo.is_finite() && hi.is_finite();
        let ok = ordered(self.azimuth)
            && ordered(self.distance)
            && ordered(self.elevation)
            && self.azimuth.0 >= -PI
            && self.azimuth.1 <= PI
            && self.distance.0 > 0.0
            && self.distance.1 < DEPTH_MAX
            && self.elevation.0 > -PI / 2.0
            && self.elevation.1 < PI / 2.0
            && self.target_jitter >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidCamera(format!("invalid camera range {self:?}")))
        }
    }
}

fn draw(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Places a camera at a random azimuth/elevation/distance around `target`,
/// looking at a jittered copy of `target`.
pub fn sample_camera(
    range: &CameraRange,
    intrinsics: &CameraIntrinsics,
    target: Vector3<f64>,
    seed: u64,
) -> Result<CameraParams> {
    range.validate()?;
    let mut rng = rng_from(seed);
    let azimuth = draw(&mut rng, range.azimuth);
    let elevation = draw(&mut rng, range.elevation);
    let distance = draw(&mut rng, range.distance);
    let j = range.target_jitter;
    let jitter = Vector3::new(
        draw(&mut rng, (-j, j)),
        draw(&mut rng, (-j, j)),
        draw(&mut rng, (-j, j)),
    );
    let eye = target
        + distance
            * Vector3::new(
                elevation.cos() * azimuth.cos(),
                elevation.cos() * azimuth.sin(),
                elevation.sin(),
            );
    CameraParams::look_at(*intrinsics, eye, target + jitter)
}

/// Distance along the unit ray `dir` from `origin` to the first entry into
/// the capsule `(a, b, radius)`, if any.
pub fn ray_capsule(origin: &Vector3<f64>, dir: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>, radius: f64) -> Option<f64> {
    let ba = b - a;
    let oa = origin - a;
    let baba = ba.dot(&ba);
    let bard = ba.dot(dir);
    let baoa = ba.dot(&oa);
    let rdoa = dir.dot(&oa);
    let oaoa = oa.dot(&oa);
    let r2 = radius * radius;
    let mut best = f64::INFINITY;

    let qa = baba - bard * bard;
    if qa > 1e-12 * baba.max(1e-300) {
        let qb = baba * rdoa - baoa * bard;
        let qc = baba * oaoa - baoa * baoa - r2 * baba;
        let h = qb * qb - qa * qc;
        if h >= 0.0 {
            let t = (-qb - h.sqrt()) / qa;
            let y = baoa + t * bard;
            if t > 0.0 && y > 0.0 && y < baba {
                best = t;
            }
        }
    }
    for center in [a, b] {
        let oc = origin - center;
        let hb = dir.dot(&oc);
        let c = oc.dot(&oc) - r2;
        let h = hb * hb - c;
        if h >= 0.0 {
            let t = -hb - h.sqrt();
            if t > 0.0 && t < best {
                best = t;
            }
        }
    }
    best.is_finite().then_some(best)
}

/// Renders quantized depth and part labels of `geometry` seen from `cam`.
/// Capsule radii are inflated by `clothing_factor` for the depth image; each
/// hit pixel carries the skin label of the capsule it hit.
pub fn render(geometry: &PosedGeometry, cam: &CameraParams, clothing_factor: f64) -> (DepthFrame, LabelFrame) {
    let z = render_exact(geometry, cam, clothing_factor);
    let k = &cam.intrinsics;
    let mut depth = DepthFrame::background(k.width, k.height);
    let mut labels = LabelFrame::background(k.width, k.height);
    for (i, hit) in z.iter().enumerate() {
        if let Some((zc, label)) = hit {
            depth.levels[i] = quantize(*zc);
            labels.labels[i] = *label;
        }
    }
    (depth, labels)
}

/// Like [`render`] with additive Gaussian depth noise of `sigma` meters
/// before quantization.
pub fn render_noisy(
    geometry: &PosedGeometry,
    cam: &CameraParams,
    clothing_factor: f64,
    sigma: f64,
    seed: u64,
) -> (DepthFrame, LabelFrame) {
    if sigma <= 0.0 {
        return render(geometry, cam, clothing_factor);
    }
    let noise = Normal::new(0.0, sigma).expect("finite sigma");
    let mut rng = rng_from(seed);
    let z = render_exact(geometry, cam, clothing_factor);
    let k = &cam.intrinsics;
    let mut depth = DepthFrame::background(k.width, k.height);
    let mut labels = LabelFrame::background(k.width, k.height);
    for (i, hit) in z.iter().enumerate() {
        if let Some((zc, label)) = hit {
            depth.levels[i] = quantize(zc + noise.sample(&mut rng));
            labels.labels[i] = *label;
        }
    }
    (depth, labels)
}

/// Unquantized camera-space depth and label of the nearest hit per pixel.
pub fn render_exact(geometry: &PosedGeometry, cam: &CameraParams, clothing_factor: f64) -> Vec<Option<(f64, u8)>> {
    let k = &cam.intrinsics;
    let (w, h) = (k.width, k.height);
    let world_to_cam = cam.camera_to_world.inverse();
    let origin = cam.position();
    // best[i] = (distance along unit ray, camera z, label)
    let mut best: Vec<Option<(f64, f64, u8)>> = vec![None; w * h];

    for cap in &geometry.capsules {
        let radius = cap.radius * clothing_factor;
        let Some((x0, x1, y0, y1)) = capsule_pixel_bounds(&world_to_cam.apply(&cap.a), &world_to_cam.apply(&cap.b), radius, k)
        else {
            continue;
        };
        for y in y0..=y1 {
            for x in x0..=x1 {
                let ray_cam = k.ray(Vector2::new(x as f64, y as f64));
                let norm = ray_cam.norm();
                let dir = cam.camera_to_world.apply_vector(&(ray_cam / norm));
                if let Some(t) = ray_capsule(&origin, &dir, &cap.a, &cap.b, radius) {
                    let slot = &mut best[y * w + x];
                    if slot.is_none_or(|(bt, _, _)| t < bt) {
                        *slot = Some((t, t / norm, cap.label));
                    }
                }
            }
        }
    }
    best.into_iter().map(|b| b.map(|(_, z, l)| (z, l))).collect()
}

/// Inclusive pixel rectangle covering a camera-space capsule, or `None` when
/// it is entirely behind the camera or off-screen.
fn capsule_pixel_bounds(
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    radius: f64,
    k: &CameraIntrinsics,
) -> Option<(usize, usize, usize, usize)> {
    let lo = a.inf(b).add_scalar(-radius);
    let hi = a.sup(b).add_scalar(radius);
    if hi.z <= 0.0 {
        return None;
    }
    let full = (0, k.width - 1, 0, k.height - 1);
    if lo.z <= 1e-6 {
        return Some(full);
    }
    let (mut umin, mut umax, mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for cx in [lo.x, hi.x] {
        for cy in [lo.y, hi.y] {
            for cz in [lo.z, hi.z] {
                let u = k.focal_x * cx / cz + k.principal_x;
                let v = k.focal_y * cy / cz + k.principal_y;
                umin = umin.min(u);
                umax = umax.max(u);
                vmin = vmin.min(v);
                vmax = vmax.max(v);
            }
        }
    }
    let clamp = |v: f64, max: usize| v.clamp(0.0, max as f64);
    if umax < 0.0 || vmax < 0.0 || umin > (k.width - 1) as f64 || vmin > (k.height - 1) as f64 {
        return None;
    }
    Some((
        clamp(umin.floor(), k.width - 1) as usize,
        clamp(umax.ceil(), k.width - 1) as usize,
        clamp(vmin.floor(), k.height - 1) as usize,
        clamp(vmax.ceil(), k.height - 1) as usize,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub depth: DepthFrame,
    pub labels: LabelFrame,
    pub camera: CameraParams,
}

/// One multiview sample: all views share one posed character.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub views: Vec<View>,
    pub posture_id: u32,
    pub character_id: u16,
    /// Groundtruth joints in the world frame (meters).
    pub joints: Vec<Vector3<f64>>,
}

/// Rendering parameters shared by every view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view (radians).
    pub fov: f64,
    /// Gaussian depth noise (meters); zero disables it.
    pub noise_sigma: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            fov: 70f64.to_radians(),
            noise_sigma: 0.0,
        }
    }
}

impl RenderConfig {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::from_fov(self.fov, self.width, self.height)
    }
}

/// Everything one draw of the sampling procedure needs.
#[derive(Debug, Clone, Copy)]
pub struct SampleSpec<'a> {
    pub characters: &'a [Character],
    pub cameras: &'a CameraRange,
    pub postures: &'a PosturePool,
    /// Posture ids eligible for this draw.
    pub posture_ids: &'a [u32],
    pub n_cameras: usize,
    pub render: RenderConfig,
}

/// Draws a character, `n` camera placements and a posture (in that order),
/// then renders every view.
pub fn sample(spec: &SampleSpec<'_>, seed: u64) -> Result<Sample> {
    if spec.characters.is_empty() {
        return Err(Error::EmptyPool("character"));
    }
    if spec.posture_ids.is_empty() {
        return Err(Error::EmptyPool("posture"));
    }
    if spec.n_cameras == 0 {
        return Err(Error::InvalidCamera("at least one camera is required".into()));
    }
    let mut rng = rng_from(seed);
    let character = &spec.characters[rng.random_range(0..spec.characters.len())];
    let camera_seeds: Vec<u64> = (0..spec.n_cameras).map(|_| rng.random()).collect();
    let posture_id = spec.posture_ids[rng.random_range(0..spec.posture_ids.len())];
    let noise_seed: u64 = rng.random();

    let posture = spec.postures.get(posture_id);
    let geometry = pose_character(character, &posture)?;
    let intrinsics = spec.render.intrinsics()?;
    let target = geometry.joint_centroid();
    let views = camera_seeds
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let camera = sample_camera(spec.cameras, &intrinsics, target, s)?;
            let (depth, labels) = render_noisy(
                &geometry,
                &camera,
                character.clothing_factor,
                spec.render.noise_sigma,
                derive_seed(noise_seed, &[i as u64]),
            );
            Ok(View { depth, labels, camera })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Sample {
        views,
        posture_id,
        character_id: character.id,
        joints: geometry.joint_positions,
    })
}

/// A walking sequence seen by fixed cameras.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkSequenceSpec {
    pub frames: usize,
    pub fps: f64,
    /// Gait cycles per second.
    pub cadence: f64,
    /// Gait amplitude in `[0, 1]` (walk to run).
    pub amplitude: f64,
    pub n_cameras: usize,
}

impl Default for WalkSequenceSpec {
    fn default() -> Self {
        Self {
            frames: 60,
            fps: 30.0,
            cadence: 0.9,
            amplitude: 0.6,
            n_cameras: 3,
        }
    }
}

/// Renders consecutive frames of an in-place gait cycle. Cameras are drawn
/// once from `range` around the first frame and stay fixed.
pub fn render_walk_sequence(
    character: &Character,
    pool: &PosturePool,
    range: &CameraRange,
    render_cfg: &RenderConfig,
    spec: &WalkSequenceSpec,
    seed: u64,
) -> Result<Vec<Sample>> {
    let mut rng = rng_from(seed);
    let phase0 = rng.random_range(0.0..2.0 * PI);
    let intrinsics = render_cfg.intrinsics()?;
    let first = pose_character(character, &gait_posture(&pool.limits, phase0, spec.amplitude))?;
    let target = first.joint_centroid();
    let cameras = (0..spec.n_cameras)
        .map(|_| sample_camera(range, &intrinsics, target, rng.random()))
        .collect::<Result<Vec<_>>>()?;
    let noise_seed: u64 = rng.random();
    (0..spec.frames)
        .map(|f| {
            let phase = phase0 + 2.0 * PI * spec.cadence * f as f64 / spec.fps;
            let geometry = pose_character(character, &gait_posture(&pool.limits, phase, spec.amplitude))?;
            let views = cameras
                .iter()
                .enumerate()
                .map(|(i, cam)| {
                    let (depth, labels) = render_noisy(
                        &geometry,
                        cam,
                        character.clothing_factor,
                        render_cfg.noise_sigma,
                        derive_seed(noise_seed, &[f as u64, i as u64]),
                    );
                    View {
                        depth,
                        labels,
                        camera: *cam,
                    }
                })
                .collect();
            Ok(Sample {
                views,
                posture_id: u32::MAX,
                character_id: character.id,
                joints: geometry.joint_positions,
            })
        })
        .collect()
}
