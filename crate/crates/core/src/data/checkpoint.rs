//! Checkpoint persistence: a binary parameter blob plus a JSON sidecar
//! with the configuration hash, seed, and stage metadata. Loads refuse
//! architecture mismatches via the hash and per-entry shape checks.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::cycaug::{CoverKind, CycAugArch, Direction, GeneratorNet};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::pose::{PoseNet, PoseNetConfig};

const MAGIC: &[u8; 4] = b"TPK1";

/// Sidecar metadata; `extra` carries the full stage configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    pub epoch: usize,
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// FNV-1a over the canonical JSON of a config; hex string.
pub fn hash_config<T: Serialize>(cfg: &T) -> String {
    let text = serde_json::to_string(cfg).expect("config serializes");
    let mut h = 0xcbf29ce484222325u64;
    for b in text.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

fn blob_path(base: &Path) -> PathBuf {
    base.with_extension("ckpt")
}

fn meta_path(base: &Path) -> PathBuf {
    base.with_extension("json")
}

/// Writes `<base>.ckpt` (parameters) and `<base>.json` (metadata).
pub fn save_checkpoint(base: &Path, store: &ParamStore, meta: &CheckpointMeta) -> Result<PathBuf> {
    if let Some(parent) = base.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let blob = blob_path(base);
    let entries = store.export();
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, arr) in &entries {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.extend_from_slice(&(arr.ndim() as u32).to_le_bytes());
        for d in arr.shape() {
            buf.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in arr.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(&blob).map_err(|e| Error::io(&blob, e))?;
    f.write_all(&buf).map_err(|e| Error::io(&blob, e))?;

    let meta_file = meta_path(base);
    let text = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::Json { path: meta_file.clone(), reason: e.to_string() })?;
    std::fs::write(&meta_file, text).map_err(|e| Error::io(&meta_file, e))?;
    Ok(blob)
}

/// Reads the sidecar metadata of `<base>`.
pub fn read_meta(base: &Path) -> Result<CheckpointMeta> {
    let path = meta_path(base);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json { path, reason: e.to_string() })
}

fn read_blob(base: &Path) -> Result<Vec<(String, ArrayD<f64>)>> {
    let path = blob_path(base);
    let mut bytes = Vec::new();
    std::fs::File::open(&path)
        .map_err(|e| Error::io(&path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(&path, e))?;
    let fail = |reason: &str| Error::CheckpointIncompatible(format!("{}: {reason}", path.display()));

    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(fail("bad magic"));
    }
    let mut at = 4usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if at + n > bytes.len() {
            return Err(Error::CheckpointIncompatible(format!("{}: truncated blob", path.display())));
        }
        let s = &bytes[at..at + n];
        at += n;
        Ok(s)
    };
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(name_len)?.to_vec()).map_err(|_| fail("bad name"))?;
        let ndim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = take(numel * 8)?;
        let values: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let arr = ArrayD::from_shape_vec(IxDyn(&shape), values).map_err(|_| fail("bad shape"))?;
        entries.push((name, arr));
    }
    Ok(entries)
}

/// Restores parameters into a freshly-built store, verifying the config
/// hash recorded in the sidecar.
pub fn load_checkpoint_into(
    base: &Path,
    store: &mut ParamStore,
    expected_hash: &str,
) -> Result<CheckpointMeta> {
    let meta = read_meta(base)?;
    if meta.config_hash != expected_hash {
        return Err(Error::CheckpointIncompatible(format!(
            "config hash {} does not match expected {expected_hash}",
            meta.config_hash
        )));
    }
    let entries = read_blob(base)?;
    store
        .import(&entries)
        .map_err(Error::CheckpointIncompatible)?;
    Ok(meta)
}

// ---------------------------------------------------------------------
// Pose checkpoints
// ---------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct PoseExtra {
    config: PoseNetConfig,
    #[serde(default)]
    stats: serde_json::Value,
}

/// Saves a pose network; the sidecar embeds the full architecture config.
pub fn save_pose_checkpoint(
    base: &Path,
    net: &PoseNet,
    seed: u64,
    epoch: usize,
    stats: serde_json::Value,
) -> Result<PathBuf> {
    let meta = CheckpointMeta {
        kind: "pose".into(),
        config_hash: hash_config(&net.cfg),
        seed,
        epoch,
        extra: serde_json::to_value(PoseExtra { config: net.cfg.clone(), stats })
            .expect("pose extra serializes"),
    };
    save_checkpoint(base, &net.store, &meta)
}

/// Rebuilds a pose network from `<base>.{ckpt,json}`.
pub fn load_pose_checkpoint(base: &Path) -> Result<(PoseNet, CheckpointMeta)> {
    let meta = read_meta(base)?;
    if meta.kind != "pose" {
        return Err(Error::CheckpointIncompatible(format!(
            "expected a pose checkpoint, found kind {}",
            meta.kind
        )));
    }
    let extra: PoseExtra = serde_json::from_value(meta.extra.clone())
        .map_err(|e| Error::CheckpointIncompatible(format!("bad pose sidecar: {e}")))?;
    let mut net = PoseNet::new(&extra.config, 0)?;
    load_checkpoint_into(base, &mut net.store, &hash_config(&extra.config))?;
    Ok((net, meta))
}

// ---------------------------------------------------------------------
// Generator checkpoints
// ---------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct GeneratorExtra {
    direction: Direction,
    target_domain: CoverKind,
    arch: CycAugArch,
    train_dims: Option<(usize, usize)>,
    iteration: usize,
}

/// Saves a translation generator with its sidecar
/// {direction, target_domain, iteration, config hash}.
pub fn save_generator_checkpoint(
    base: &Path,
    gen: &GeneratorNet,
    seed: u64,
    epoch: usize,
    iteration: usize,
) -> Result<PathBuf> {
    let extra = GeneratorExtra {
        direction: gen.direction,
        target_domain: gen.target_domain,
        arch: gen.arch().clone(),
        train_dims: gen.train_dims,
        iteration,
    };
    let meta = CheckpointMeta {
        kind: "generator".into(),
        config_hash: hash_config(gen.arch()),
        seed,
        epoch,
        extra: serde_json::to_value(extra).expect("generator extra serializes"),
    };
    save_checkpoint(base, &gen.store, &meta)
}

/// Rebuilds a generator from `<base>.{ckpt,json}`.
pub fn load_generator_checkpoint(base: &Path) -> Result<(GeneratorNet, CheckpointMeta)> {
    let meta = read_meta(base)?;
    if meta.kind != "generator" {
        return Err(Error::CheckpointIncompatible(format!(
            "expected a generator checkpoint, found kind {}",
            meta.kind
        )));
    }
    let extra: GeneratorExtra = serde_json::from_value(meta.extra.clone())
        .map_err(|e| Error::CheckpointIncompatible(format!("bad generator sidecar: {e}")))?;
    let mut gen = GeneratorNet::new(extra.direction, extra.target_domain, &extra.arch, 0);
    gen.train_dims = extra.train_dims;
    load_checkpoint_into(base, &mut gen.store, &hash_config(&extra.arch))?;
    Ok((gen, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::Backbone;

    fn scratch(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("thermopose-ckpt-{}-{name}", std::process::id()));
        std::fs::remove_dir_all(&dir).ok();
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn pose_checkpoint_round_trip_is_byte_exact() {
        let dir = scratch("pose");
        let cfg = PoseNetConfig::toy(Backbone::Hourglass);
        let net = PoseNet::new(&cfg, 5).unwrap();
        let base = dir.join("teacher");
        save_pose_checkpoint(&base, &net, 5, 7, serde_json::json!({"val": 61.5})).unwrap();

        let (restored, meta) = load_pose_checkpoint(&base).unwrap();
        assert_eq!(restored.store.content_hash(), net.store.content_hash());
        assert_eq!(meta.epoch, 7);
        assert_eq!(meta.seed, 5);
        assert_eq!(meta.extra["stats"]["val"], 61.5);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn architecture_mismatch_is_incompatible() {
        let dir = scratch("mismatch");
        let net = PoseNet::new(&PoseNetConfig::toy(Backbone::Hourglass), 5).unwrap();
        let base = dir.join("m");
        save_pose_checkpoint(&base, &net, 0, 0, serde_json::Value::Null).unwrap();

        // build a different architecture and try to restore into it
        let mut other = PoseNet::new(
            &PoseNetConfig { channels: 12, ..PoseNetConfig::toy(Backbone::Hourglass) },
            0,
        )
        .unwrap();
        let err = load_checkpoint_into(&base, &mut other.store, &hash_config(&other.cfg)).unwrap_err();
        assert!(matches!(err, Error::CheckpointIncompatible(_)));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn generator_checkpoint_round_trip() {
        let dir = scratch("gen");
        let arch = CycAugArch::toy();
        let mut gen = GeneratorNet::new(Direction::UncoverToCover, CoverKind::Thick, &arch, 9);
        gen.train_dims = Some((64, 48));
        let base = dir.join("g_thick");
        save_generator_checkpoint(&base, &gen, 9, 3, 120).unwrap();

        let (restored, meta) = load_generator_checkpoint(&base).unwrap();
        assert_eq!(restored.store.content_hash(), gen.store.content_hash());
        assert_eq!(restored.train_dims, Some((64, 48)));
        assert_eq!(restored.target_domain, CoverKind::Thick);
        assert_eq!(meta.extra["iteration"], 120);
        std::fs::remove_dir_all(&dir).ok();
    }
}
