//! On-disk policy cache.
//!
//! A cache file holds the solved value tables of one grid:
//!
//! ```text
//! magic "LEGBLCV1" | key (32 bytes) | body | SHA-256 of everything before
//! ```
//!
//! The key is the SHA-256 of every solver-relevant parameter, so changing β,
//! γ or the solver settings never reuses stale tables. All numbers are
//! little-endian; `f64`s are stored bit-exact.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use legible_core::experiment::{Environment, ExperimentConfig, PlannerValues};
use legible_core::planner::{GoalValues, MaskValues};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MAGIC: &[u8; 8] = b"LEGBLCV1";
const FORMAT: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("cache file {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cache file {0}: checksum mismatch")]
    Checksum(PathBuf),
    #[error("cache file {0}: not a policy cache")]
    Magic(PathBuf),
    #[error("cache file {0}: built for different parameters")]
    Key(PathBuf),
    #[error("cache file {0}: truncated or malformed body")]
    Malformed(PathBuf),
}

#[derive(Serialize)]
struct KeyFields<'a> {
    format: u32,
    environment: &'a str,
    side: u8,
    gamma: u64,
    beta: u64,
    tol: u64,
    max_iters: usize,
    step_limit: u32,
    /// Foraging candidate cells descend from the master seed.
    layout_seed: Option<u64>,
    allow_large: bool,
}

/// Content hash of every parameter the tables of `side` depend on.
pub fn cache_key(config: &ExperimentConfig, side: u8) -> [u8; 32] {
    let fields = KeyFields {
        format: FORMAT,
        environment: config.environment.name(),
        side,
        gamma: config.gamma.to_bits(),
        beta: config.beta.to_bits(),
        tol: config.tol.to_bits(),
        max_iters: config.max_iters,
        step_limit: config.step_limit,
        layout_seed: (config.environment == Environment::Foraging).then_some(config.master_seed),
        allow_large: config.allow_large,
    };
    let json = serde_json::to_vec(&fields).expect("plain struct serializes");
    Sha256::digest(&json).into()
}

pub fn cache_path(dir: &Path, config: &ExperimentConfig, side: u8) -> PathBuf {
    let key = hex::encode(&cache_key(config, side)[..8]);
    dir.join(format!("{}-{side}-{key}.bin", config.environment.name()))
}

fn put_u32(out: &mut Vec<u8>, x: u32) {
    out.extend_from_slice(&x.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    out.extend_from_slice(&(xs.len() as u64).to_le_bytes());
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode(key: &[u8; 32], values: &PlannerValues) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(key);
    match values {
        PlannerValues::Foraging(masks) => {
            out.push(0);
            put_u32(&mut out, masks.len() as u32);
            for m in masks {
                put_u32(&mut out, m.mask);
                put_u32(&mut out, m.goals.len() as u32);
                for g in &m.goals {
                    put_u32(&mut out, g.goal as u32);
                    put_f64s(&mut out, &g.joint);
                    match &g.legible {
                        Some(l) => {
                            out.push(1);
                            put_f64s(&mut out, l);
                        }
                        None => out.push(0),
                    }
                }
            }
        }
        PlannerValues::Pursuit(v) => {
            out.push(1);
            put_f64s(&mut out, v);
        }
    }
    let sum = Sha256::digest(&out);
    out.extend_from_slice(&sum);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.buf.len() < n {
            return None;
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Some(head)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self) -> Option<Vec<f64>> {
        let n = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")) as usize;
        let raw = self.take(n.checked_mul(8)?)?;
        Some(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

fn decode_body(r: &mut Reader) -> Option<PlannerValues> {
    match r.u8()? {
        0 => {
            let n = r.u32()?;
            let mut masks = Vec::new();
            for _ in 0..n {
                let mask = r.u32()?;
                let ng = r.u32()?;
                let mut goals = Vec::new();
                for _ in 0..ng {
                    let goal = r.u32()? as usize;
                    let joint = r.f64s()?;
                    let legible = match r.u8()? {
                        0 => None,
                        1 => Some(r.f64s()?),
                        _ => return None,
                    };
                    goals.push(GoalValues { goal, joint, legible });
                }
                masks.push(MaskValues { mask, goals });
            }
            Some(PlannerValues::Foraging(masks))
        }
        1 => Some(PlannerValues::Pursuit(r.f64s()?)),
        _ => None,
    }
}

/// Verifies and decodes a cache image. `path` only labels errors.
pub fn decode(bytes: &[u8], key: &[u8; 32], path: &Path) -> Result<PlannerValues, CacheError> {
    if bytes.len() < MAGIC.len() + 32 + 32 {
        return Err(CacheError::Malformed(path.into()));
    }
    let (data, sum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(data).as_slice() != sum {
        return Err(CacheError::Checksum(path.into()));
    }
    if &data[..MAGIC.len()] != MAGIC {
        return Err(CacheError::Magic(path.into()));
    }
    if &data[MAGIC.len()..MAGIC.len() + 32] != key {
        return Err(CacheError::Key(path.into()));
    }
    let mut r = Reader {
        buf: &data[MAGIC.len() + 32..],
    };
    match decode_body(&mut r) {
        Some(v) if r.buf.is_empty() => Ok(v),
        _ => Err(CacheError::Malformed(path.into())),
    }
}

/// Loads the tables for `side`; `Ok(None)` when no cache file exists.
pub fn load(dir: &Path, config: &ExperimentConfig, side: u8) -> Result<Option<PlannerValues>, CacheError> {
    let path = cache_path(dir, config, side);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(source) => return Err(CacheError::Io { path, source }),
    };
    decode(&bytes, &cache_key(config, side), &path).map(Some)
}

/// Writes atomically through a temporary sibling file.
pub fn store(dir: &Path, config: &ExperimentConfig, side: u8, values: &PlannerValues) -> Result<PathBuf, CacheError> {
    let path = cache_path(dir, config, side);
    let io = |source| CacheError::Io { path: path.clone(), source };
    fs::create_dir_all(dir).map_err(io)?;
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(&encode(&cache_key(config, side), values)).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, &path).map_err(io)?;
    Ok(path)
}
