//! The `MVDS` dataset container and curriculum dataset generation.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! magic "MVDS" | version u32 = 1
//! header: stage u8 | n_cameras u8 | width u16 | height u16 | n_joints u16 | n_labels u16 | sample_count u32
//! per sample:
//!   posture_id u32 | character_id u16
//!   per camera: fx fy cx cy f64 | width u16 | height u16 | camera_to_world 12 x f64 (row-major 3x4)
//!               depth u8[w*h] | label u8[w*h]
//!   joints f64[3*J] (world, meters)
//! ```
//!
//! Every record has the same size, so samples are randomly addressable.
//! A plain-text `key = value` manifest sits next to each container.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;
use rayon::prelude::*;

use crate::body::{build_character_pool, Character, PosturePool, DEFAULT_PART_COUNT};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, CameraParams, RigidTransform};
use crate::seed::derive_seed;
use crate::stage::{Split, Stage};
use crate::synth::{render_walk_sequence, sample, CameraRange, DepthFrame, LabelFrame, RenderConfig, Sample, SampleSpec, View, WalkSequenceSpec};

pub const MAGIC: &[u8; 4] = b"MVDS";
pub const VERSION: u32 = 1;
const PREAMBLE_LEN: u64 = 4 + 4 + 1 + 1 + 2 + 2 + 2 + 2 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub stage: Stage,
    pub n_cameras: u8,
    pub width: u16,
    pub height: u16,
    pub n_joints: u16,
    pub n_labels: u16,
    pub sample_count: u32,
}

impl DatasetHeader {
    pub fn record_len(&self) -> u64 {
        let pixels = self.width as u64 * self.height as u64;
        let camera = 4 * 8 + 2 * 2 + 12 * 8 + 2 * pixels;
        4 + 2 + self.n_cameras as u64 * camera + 3 * 8 * self.n_joints as u64
    }

    fn write(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LE>(VERSION)?;
        w.write_u8(self.stage.code())?;
        w.write_u8(self.n_cameras)?;
        w.write_u16::<LE>(self.width)?;
        w.write_u16::<LE>(self.height)?;
        w.write_u16::<LE>(self.n_joints)?;
        w.write_u16::<LE>(self.n_labels)?;
        w.write_u32::<LE>(self.sample_count)?;
        Ok(())
    }

    fn read(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let version = r.read_u32::<LE>()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let code = r.read_u8()?;
        let stage = Stage::from_code(code).ok_or_else(|| Error::Format(format!("bad stage code {code}")))?;
        Ok(Self {
            stage,
            n_cameras: r.read_u8()?,
            width: r.read_u16::<LE>()?,
            height: r.read_u16::<LE>()?,
            n_joints: r.read_u16::<LE>()?,
            n_labels: r.read_u16::<LE>()?,
            sample_count: r.read_u32::<LE>()?,
        })
    }
}

pub fn write_sample(w: &mut impl Write, header: &DatasetHeader, s: &Sample) -> Result<()> {
    if s.views.len() != header.n_cameras as usize || s.joints.len() != header.n_joints as usize {
        return Err(Error::ShapeMismatch {
            expected: format!("{} views, {} joints", header.n_cameras, header.n_joints),
            actual: format!("{} views, {} joints", s.views.len(), s.joints.len()),
        });
    }
    w.write_u32::<LE>(s.posture_id)?;
    w.write_u16::<LE>(s.character_id)?;
    for v in &s.views {
        let k = &v.camera.intrinsics;
        if k.width != header.width as usize || k.height != header.height as usize {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", header.width, header.height),
                actual: format!("{}x{}", k.width, k.height),
            });
        }
        for x in [k.focal_x, k.focal_y, k.principal_x, k.principal_y] {
            w.write_f64::<LE>(x)?;
        }
        w.write_u16::<LE>(k.width as u16)?;
        w.write_u16::<LE>(k.height as u16)?;
        for x in v.camera.camera_to_world.to_row_major() {
            w.write_f64::<LE>(x)?;
        }
        w.write_all(&v.depth.levels)?;
        w.write_all(&v.labels.labels)?;
    }
    for j in &s.joints {
        for c in j.iter() {
            w.write_f64::<LE>(*c)?;
        }
    }
    Ok(())
}

fn read_sample(r: &mut impl Read, header: &DatasetHeader) -> Result<Sample> {
    let posture_id = r.read_u32::<LE>()?;
    let character_id = r.read_u16::<LE>()?;
    let mut views = Vec::with_capacity(header.n_cameras as usize);
    for _ in 0..header.n_cameras {
        let mut k = [0.0; 4];
        for x in &mut k {
            *x = r.read_f64::<LE>()?;
        }
        let width = r.read_u16::<LE>()? as usize;
        let height = r.read_u16::<LE>()? as usize;
        let mut extr = [0.0; 12];
        for x in &mut extr {
            *x = r.read_f64::<LE>()?;
        }
        let intrinsics = CameraIntrinsics::new(k[0], k[1], k[2], k[3], width, height)?;
        let camera = CameraParams::new(intrinsics, RigidTransform::from_row_major(&extr)?)?;
        let mut levels = vec![0u8; width * height];
        r.read_exact(&mut levels)?;
        let mut labels = vec![0u8; width * height];
        r.read_exact(&mut labels)?;
        views.push(View {
            depth: DepthFrame { width, height, levels },
            labels: LabelFrame { width, height, labels },
            camera,
        });
    }
    let joints = (0..header.n_joints)
        .map(|_| Ok(Vector3::new(r.read_f64::<LE>()?, r.read_f64::<LE>()?, r.read_f64::<LE>()?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Sample {
        views,
        posture_id,
        character_id,
        joints,
    })
}

/// Writes a whole container from in-memory samples.
pub fn write_container(path: &Path, header: &DatasetHeader, samples: &[Sample]) -> Result<()> {
    if samples.len() != header.sample_count as usize {
        return Err(Error::Format(format!(
            "header declares {} samples, got {}",
            header.sample_count,
            samples.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    header.write(&mut w)?;
    for s in samples {
        write_sample(&mut w, header, s)?;
    }
    w.flush()?;
    Ok(())
}

/// Random-access reader over a container file. Safe to share across threads.
#[derive(Debug)]
pub struct DatasetReader {
    file: Mutex<File>,
    header: DatasetHeader,
    path: PathBuf,
}

impl DatasetReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = File::open(&path)?;
        let header = DatasetHeader::read(&mut file)?;
        let expected = PREAMBLE_LEN + header.record_len() * header.sample_count as u64;
        let actual = file.metadata()?.len();
        if actual != expected {
            return Err(Error::Format(format!(
                "{}: expected {expected} bytes, found {actual}",
                path.display()
            )));
        }
        Ok(Self {
            file: Mutex::new(file),
            header,
            path,
        })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.header.sample_count as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn read(&self, index: usize) -> Result<Sample> {
        if index >= self.len() {
            return Err(Error::Format(format!("sample {index} out of range ({})", self.len())));
        }
        let record = self.header.record_len();
        let mut buf = vec![0u8; record as usize];
        {
            let mut f = self.file.lock().expect("reader lock poisoned");
            f.seek(SeekFrom::Start(PREAMBLE_LEN + record * index as u64))?;
            f.read_exact(&mut buf)?;
        }
        read_sample(&mut buf.as_slice(), &self.header)
    }

    /// Stored posture id of one sample, without decoding its images.
    pub fn posture_id(&self, index: usize) -> Result<u32> {
        if index >= self.len() {
            return Err(Error::Format(format!("sample {index} out of range ({})", self.len())));
        }
        let mut f = self.file.lock().expect("reader lock poisoned");
        f.seek(SeekFrom::Start(PREAMBLE_LEN + self.header.record_len() * index as u64))?;
        Ok(f.read_u32::<LE>()?)
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<Sample>> + '_ {
        (0..self.len()).map(move |i| self.read(i))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub stage: Stage,
    pub split: Split,
    pub sample_count: usize,
    pub n_cameras: usize,
    pub width: usize,
    pub height: usize,
    pub n_joints: usize,
    pub n_labels: usize,
    pub seed: u64,
    pub posture_ids: BTreeSet<u32>,
    /// Frames per sequence for walking-sequence containers.
    pub sequence_frames: Option<usize>,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let ids: Vec<String> = self.posture_ids.iter().map(|i| i.to_string()).collect();
        let mut text = format!(
            "format = MVDS\nversion = {VERSION}\nstage = {}\nsplit = {}\nsample_count = {}\ncamera_count = {}\n\
             width = {}\nheight = {}\nn_joints = {}\nn_labels = {}\nseed = {}\nposture_ids = {}\n",
            self.stage,
            self.split,
            self.sample_count,
            self.n_cameras,
            self.width,
            self.height,
            self.n_joints,
            self.n_labels,
            self.seed,
            ids.join(",")
        );
        if let Some(f) = self.sequence_frames {
            text.push_str(&format!("sequence_frames = {f}\n"));
        }
        text
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kv = crate::config::parse_key_values(text)?;
        let get = |k: &str| kv.get(k).ok_or_else(|| Error::Format(format!("manifest missing {k}")));
        let num = |k: &str| -> Result<u64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Format(format!("manifest {k} is not an integer")))
        };
        let posture_ids = get("posture_ids")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.trim().parse::<u32>().map_err(|_| Error::Format(format!("bad posture id {s}"))))
            .collect::<Result<BTreeSet<u32>>>()?;
        Ok(Self {
            stage: get("stage")?.parse()?,
            split: get("split")?.parse()?,
            sample_count: num("sample_count")? as usize,
            n_cameras: num("camera_count")? as usize,
            width: num("width")? as usize,
            height: num("height")? as usize,
            n_joints: num("n_joints")? as usize,
            n_labels: num("n_labels")? as usize,
            seed: num("seed")?,
            posture_ids,
            sequence_frames: match kv.get("sequence_frames") {
                Some(_) => Some(num("sequence_frames")? as usize),
                None => None,
            },
        })
    }
}

pub fn container_path(dir: &Path, stage: Stage, split: Split) -> PathBuf {
    dir.join(format!("{stage}_{split}.mvds"))
}

pub fn manifest_path(dir: &Path, stage: Stage, split: Split) -> PathBuf {
    dir.join(format!("{stage}_{split}.manifest"))
}

/// Generation settings beyond the stage/split/count/seed selectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    pub render: RenderConfig,
    pub cameras: CameraRange,
    pub walk_run_postures: u32,
    pub general_postures: u32,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            render: RenderConfig::default(),
            cameras: CameraRange::default(),
            walk_run_postures: PosturePool::DEFAULT_WALK_RUN,
            general_postures: PosturePool::DEFAULT_GENERAL,
        }
    }
}

impl GenConfig {
    pub fn posture_pool(&self, seed: u64) -> PosturePool {
        PosturePool {
            walk_run_count: self.walk_run_postures,
            general_count: self.general_postures,
            ..PosturePool::new(seed)
        }
    }
}

/// Posture ids of `stage` that belong to `split`.
pub fn split_posture_ids(pool: &PosturePool, stage: Stage, split: Split) -> Vec<u32> {
    pool.id_range(stage).filter(|&id| Split::of_posture(id) == split).collect()
}

/// Everything needed to draw samples for one stage and split.
pub struct StageSampler {
    pub stage: Stage,
    pub split: Split,
    pub seed: u64,
    pub characters: Vec<Character>,
    pub pool: PosturePool,
    pub posture_ids: Vec<u32>,
    pub config: GenConfig,
}

impl StageSampler {
    pub fn new(stage: Stage, split: Split, seed: u64, config: GenConfig) -> Self {
        let pool = config.posture_pool(seed);
        let posture_ids = split_posture_ids(&pool, stage, split);
        Self {
            stage,
            split,
            seed,
            characters: build_character_pool(stage, seed),
            pool,
            posture_ids,
            config,
        }
    }

    pub fn sample_seed(&self, index: u64) -> u64 {
        derive_seed(self.seed, &[self.stage.code() as u64, self.split as u64, index])
    }

    pub fn draw(&self, index: u64, n_cameras: usize) -> Result<Sample> {
        let spec = SampleSpec {
            characters: &self.characters,
            cameras: &self.config.cameras,
            postures: &self.pool,
            posture_ids: &self.posture_ids,
            n_cameras,
            render: self.config.render,
        };
        sample(&spec, self.sample_seed(index))
    }
}

const WRITE_CHUNK: usize = 64;

/// Renders `count` samples of `stage`/`split` into `out_dir` and writes the
/// container plus its manifest. Output bytes depend only on the arguments.
pub fn generate_dataset(
    stage: Stage,
    split: Split,
    count: usize,
    n_cameras: usize,
    out_dir: &Path,
    seed: u64,
    config: &GenConfig,
) -> Result<DatasetManifest> {
    if count == 0 {
        return Err(Error::InsufficientData("sample count must be at least 1".into()));
    }
    if n_cameras == 0 || n_cameras > u8::MAX as usize {
        return Err(Error::InvalidCamera(format!("camera count {n_cameras} out of 1..=255")));
    }
    if count > u32::MAX as usize {
        return Err(Error::InsufficientData(format!("sample count {count} exceeds u32")));
    }
    fs::create_dir_all(out_dir)?;
    let sampler = StageSampler::new(stage, split, seed, *config);
    let n_joints = sampler.characters[0].skeleton.len();
    let header = DatasetHeader {
        stage,
        n_cameras: n_cameras as u8,
        width: config.render.width as u16,
        height: config.render.height as u16,
        n_joints: n_joints as u16,
        n_labels: DEFAULT_PART_COUNT as u16,
        sample_count: count as u32,
    };
    let path = container_path(out_dir, stage, split);
    let tmp = path.with_extension("mvds.partial");
    let mut w = BufWriter::new(File::create(&tmp)?);
    header.write(&mut w)?;
    let mut posture_ids = BTreeSet::new();
    for start in (0..count).step_by(WRITE_CHUNK) {
        let end = (start + WRITE_CHUNK).min(count);
        let chunk: Vec<Sample> = (start..end)
            .into_par_iter()
            .map(|i| sampler.draw(i as u64, n_cameras))
            .collect::<Result<_>>()?;
        for s in &chunk {
            posture_ids.insert(s.posture_id);
            write_sample(&mut w, &header, s)?;
        }
    }
    w.flush()?;
    drop(w);
    fs::rename(&tmp, &path)?;
    let manifest = DatasetManifest {
        stage,
        split,
        sample_count: count,
        n_cameras,
        width: config.render.width,
        height: config.render.height,
        n_joints,
        n_labels: DEFAULT_PART_COUNT,
        seed,
        posture_ids,
        sequence_frames: None,
    };
    fs::write(manifest_path(out_dir, stage, split), manifest.to_text())?;
    Ok(manifest)
}

/// Posture ids of walking-sequence frames carry this bit plus the sequence
/// index, so sequence membership survives a round trip through a container.
pub const WALK_SEQUENCE_FLAG: u32 = 1 << 31;
const WALK_SALT: u64 = 0x3a1c;

pub fn walk_container_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("walk_{split}.mvds"))
}

pub fn walk_manifest_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("walk_{split}.manifest"))
}

/// Sequence id of a stored posture id, if the frame is part of a walking
/// sequence.
pub fn walk_sequence_of(posture_id: u32) -> Option<u32> {
    (posture_id & WALK_SEQUENCE_FLAG != 0).then_some(posture_id & !WALK_SEQUENCE_FLAG)
}

/// Renders `sequences` walking sequences of one hard-pool character each,
/// drawn per sequence, into one container. Frames are stored in time order.
pub fn generate_walk_dataset(
    split: Split,
    sequences: usize,
    spec: &WalkSequenceSpec,
    out_dir: &Path,
    seed: u64,
    config: &GenConfig,
) -> Result<DatasetManifest> {
    if sequences == 0 || spec.frames == 0 {
        return Err(Error::InsufficientData("need at least one sequence of one frame".into()));
    }
    if spec.n_cameras == 0 || spec.n_cameras > u8::MAX as usize {
        return Err(Error::InvalidCamera(format!("camera count {} out of 1..=255", spec.n_cameras)));
    }
    let count = sequences
        .checked_mul(spec.frames)
        .filter(|&c| c <= u32::MAX as usize && sequences < WALK_SEQUENCE_FLAG as usize)
        .ok_or_else(|| Error::InsufficientData("walking dataset too large".into()))?;
    fs::create_dir_all(out_dir)?;
    let characters = build_character_pool(Stage::Hard, seed);
    let pool = config.posture_pool(seed);
    let n_joints = characters[0].skeleton.len();
    let header = DatasetHeader {
        stage: Stage::Hard,
        n_cameras: spec.n_cameras as u8,
        width: config.render.width as u16,
        height: config.render.height as u16,
        n_joints: n_joints as u16,
        n_labels: DEFAULT_PART_COUNT as u16,
        sample_count: count as u32,
    };
    let path = walk_container_path(out_dir, split);
    let tmp = path.with_extension("mvds.partial");
    let mut w = BufWriter::new(File::create(&tmp)?);
    header.write(&mut w)?;
    let mut posture_ids = BTreeSet::new();
    for q in 0..sequences {
        let s = derive_seed(seed, &[WALK_SALT, split as u64, q as u64]);
        let character = &characters[(s % characters.len() as u64) as usize];
        let frames = render_walk_sequence(character, &pool, &config.cameras, &config.render, spec, s)?;
        let id = WALK_SEQUENCE_FLAG | q as u32;
        posture_ids.insert(id);
        for mut f in frames {
            f.posture_id = id;
            write_sample(&mut w, &header, &f)?;
        }
    }
    w.flush()?;
    drop(w);
    fs::rename(&tmp, &path)?;
    let manifest = DatasetManifest {
        stage: Stage::Hard,
        split,
        sample_count: count,
        n_cameras: spec.n_cameras,
        width: config.render.width,
        height: config.render.height,
        n_joints,
        n_labels: DEFAULT_PART_COUNT,
        seed,
        posture_ids,
        sequence_frames: Some(spec.frames),
    };
    fs::write(walk_manifest_path(out_dir, split), manifest.to_text())?;
    Ok(manifest)
}
