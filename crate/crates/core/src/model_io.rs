//! `MVDM` chunked model container.
//!
//! ```text
//! magic "MVDM" | version u32 = 1 | chunk_count u32
//! per chunk: tag [u8; 4] | payload_len u64 | payload
//! ```
//!
//! Little-endian throughout. Readers skip chunk tags they do not know.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::fcn::{FcnConfig, FcnModel};

pub const MAGIC: &[u8; 4] = b"MVDM";
pub const VERSION: u32 = 1;
pub const CLASSIFIER_TAG: [u8; 4] = *b"FCN1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub tag: [u8; 4],
    pub payload: Vec<u8>,
}

pub fn encode(chunks: &[Chunk]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u32::<LE>(VERSION).unwrap();
    out.write_u32::<LE>(chunks.len() as u32).unwrap();
    for c in chunks {
        out.extend_from_slice(&c.tag);
        out.write_u64::<LE>(c.payload.len() as u64).unwrap();
        out.extend_from_slice(&c.payload);
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Chunk>> {
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("model file too short".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad model magic {magic:?}")));
    }
    let version = r.read_u32::<LE>()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let count = r.read_u32::<LE>()?;
    let mut chunks = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut tag = [0u8; 4];
        r.read_exact(&mut tag)?;
        let len = r.read_u64::<LE>()?;
        let remaining = bytes.len() as u64 - r.position();
        if len > remaining {
            return Err(Error::Format(format!("chunk {tag:?} claims {len} bytes, {remaining} left")));
        }
        let mut payload = vec![0u8; len as usize];
        r.read_exact(&mut payload)?;
        chunks.push(Chunk { tag, payload });
    }
    if r.position() != bytes.len() as u64 {
        return Err(Error::Format("trailing bytes after last chunk".into()));
    }
    Ok(chunks)
}

pub fn write_file(path: &Path, chunks: &[Chunk]) -> Result<()> {
    let tmp = path.with_extension("partial");
    fs::File::create(&tmp)?.write_all(&encode(chunks))?;
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<Chunk>> {
    decode(&fs::read(path)?)
}

pub fn find<'a>(chunks: &'a [Chunk], tag: [u8; 4]) -> Option<&'a Chunk> {
    chunks.iter().find(|c| c.tag == tag)
}

pub fn classifier_chunk(model: &FcnModel<f32>) -> Chunk {
    let cfg = model.config();
    let mut p = Vec::new();
    for v in [cfg.input_size, cfg.n_classes, cfg.blocks()] {
        p.write_u32::<LE>(v as u32).unwrap();
    }
    for &c in &cfg.channels {
        p.write_u32::<LE>(c as u32).unwrap();
    }
    p.write_u32::<LE>(cfg.up_kernel as u32).unwrap();
    p.write_u32::<LE>(cfg.final_kernel as u32).unwrap();
    p.write_u64::<LE>(model.param_count() as u64).unwrap();
    for &w in model.params() {
        p.write_f32::<LE>(w).unwrap();
    }
    Chunk {
        tag: CLASSIFIER_TAG,
        payload: p,
    }
}

pub fn classifier_from_chunk(chunk: &Chunk) -> Result<FcnModel<f32>> {
    let mut r = Cursor::new(&chunk.payload);
    let mut u = || -> Result<usize> { Ok(r.read_u32::<LE>()? as usize) };
    let input_size = u()?;
    let n_classes = u()?;
    let blocks = u()?;
    if blocks > 16 {
        return Err(Error::Format(format!("implausible block count {blocks}")));
    }
    let channels = (0..blocks).map(|_| u()).collect::<Result<Vec<_>>>()?;
    let up_kernel = u()?;
    let final_kernel = u()?;
    let cfg = FcnConfig {
        input_size,
        n_classes,
        channels,
        up_kernel,
        final_kernel,
    };
    let n = r.read_u64::<LE>()? as usize;
    if r.position() as usize + 4 * n != chunk.payload.len() {
        return Err(Error::Format("classifier chunk length does not match parameter count".into()));
    }
    let mut params = vec![0f32; n];
    r.read_f32_into::<LE>(&mut params)?;
    FcnModel::from_params(cfg, params)
}

pub fn save_classifier(path: &Path, model: &FcnModel<f32>) -> Result<()> {
    write_file(path, &[classifier_chunk(model)])
}

pub fn load_classifier(path: &Path) -> Result<FcnModel<f32>> {
    let chunks = read_file(path)?;
    let c = find(&chunks, CLASSIFIER_TAG)
        .ok_or_else(|| Error::Format(format!("{} has no classifier chunk", path.display())))?;
    classifier_from_chunk(c)
}
