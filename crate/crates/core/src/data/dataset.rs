//! Dataset directory: `manifest.json` plus `records.bin`, a sequence of
//! `[u32 length][u32 crc32][bincode record]` entries (little endian).

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{generate_sample, BuildingSample, DataError, DatasetConfig};
use crate::sampling::mix_seed;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.bin";

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub count: usize,
    pub config: DatasetConfig,
    pub splits: Splits,
    pub total_cells: usize,
    /// Share of exterior cells over the whole dataset.
    pub exterior_fraction: f64,
    pub records_crc32: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub samples: Vec<BuildingSample>,
}

impl Dataset {
    pub fn get(&self, id: u64) -> Option<&BuildingSample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Samples of a split in split order.
    pub fn split(&self, ids: &[u64]) -> Vec<&BuildingSample> {
        ids.iter().filter_map(|&id| self.get(id)).collect()
    }
}

/// 80/10/10 partition of `ids` after a seeded shuffle.
pub fn split_ids(ids: &[u64], seed: u64) -> Splits {
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5711)));
    let n = shuffled.len();
    let n_train = (n as f64 * 0.8).round() as usize;
    let n_val = ((n as f64 * 0.1).round() as usize).min(n - n_train);
    let test = shuffled.split_off(n_train + n_val);
    let val = shuffled.split_off(n_train);
    Splits {
        train: shuffled,
        val,
        test,
    }
}

/// Builds every sample of `cfg`; ids are `0..count`.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Dataset, DataError> {
    let ids: Vec<u64> = (0..cfg.count as u64).collect();
    #[cfg(feature = "parallel")]
    let samples: Result<Vec<_>, _> = {
        use rayon::prelude::*;
        ids.par_iter().map(|&id| generate_sample(id, cfg)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let samples: Result<Vec<_>, _> = ids.iter().map(|&id| generate_sample(id, cfg)).collect();
    let samples = samples?;
    let total_cells: usize = samples.iter().map(|s| s.labels.len()).sum();
    let exterior = samples
        .iter()
        .flat_map(|s| &s.labels)
        .filter(|&&l| l == 0)
        .count();
    let exterior_fraction = exterior as f64 / total_cells.max(1) as f64;
    log::info!(
        "generated {} buildings, {total_cells} cells, {:.1}% exterior",
        samples.len(),
        100.0 * exterior_fraction
    );
    Ok(Dataset {
        manifest: Manifest {
            format_version: FORMAT_VERSION,
            count: samples.len(),
            config: cfg.clone(),
            splits: split_ids(&ids, cfg.seed),
            total_cells,
            exterior_fraction,
            records_crc32: 0,
        },
        samples,
    })
}

fn encode(sample: &BuildingSample) -> Result<Vec<u8>, DataError> {
    bincode::serialize(sample).map_err(|e| DataError::Format(e.to_string()))
}

/// Writes the manifest and record file; returns the manifest as written.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<Manifest, DataError> {
    fs::create_dir_all(dir)?;
    let mut hasher = crc32fast::Hasher::new();
    let mut w = BufWriter::new(File::create(dir.join(RECORDS_FILE))?);
    for s in &dataset.samples {
        let payload = encode(s)?;
        let len = u32::try_from(payload.len())
            .map_err(|_| DataError::Format("record exceeds 4 GiB".into()))?;
        let mut head = [0u8; 8];
        head[..4].copy_from_slice(&len.to_le_bytes());
        head[4..].copy_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        hasher.update(&head);
        hasher.update(&payload);
        w.write_all(&head)?;
        w.write_all(&payload)?;
    }
    w.flush()?;
    let manifest = Manifest {
        count: dataset.samples.len(),
        records_crc32: hasher.finalize(),
        ..dataset.manifest.clone()
    };
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_vec_pretty(&manifest).map_err(|e| DataError::Format(e.to_string()))?,
    )?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, DataError> {
    let raw = fs::read(dir.join(MANIFEST_FILE))?;
    let value: serde_json::Value =
        serde_json::from_slice(&raw).map_err(|e| DataError::Format(format!("manifest: {e}")))?;
    let found = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .unwrap_or(0) as u32;
    if found != FORMAT_VERSION {
        return Err(DataError::VersionMismatch {
            found,
            expected: FORMAT_VERSION,
        });
    }
    serde_json::from_value(value).map_err(|e| DataError::Format(format!("manifest: {e}")))
}

/// Reads and verifies every record.
pub fn read_dataset(dir: &Path) -> Result<Dataset, DataError> {
    let manifest = read_manifest(dir)?;
    let bytes = fs::read(dir.join(RECORDS_FILE))?;
    let mut samples = Vec::with_capacity(manifest.count);
    let mut pos = 0usize;
    for index in 0..manifest.count {
        let corrupt = DataError::CorruptRecord { index };
        let head = bytes
            .get(pos..pos + 8)
            .ok_or(DataError::CorruptRecord { index })?;
        let len = u32::from_le_bytes(head[..4].try_into().expect("4 bytes")) as usize;
        let crc = u32::from_le_bytes(head[4..].try_into().expect("4 bytes"));
        let payload = bytes
            .get(pos + 8..pos + 8 + len)
            .ok_or(DataError::CorruptRecord { index })?;
        if crc32fast::hash(payload) != crc {
            return Err(corrupt);
        }
        let sample: BuildingSample =
            bincode::deserialize(payload).map_err(|_| DataError::CorruptRecord { index })?;
        samples.push(sample);
        pos += 8 + len;
    }
    if pos != bytes.len() {
        return Err(DataError::CorruptRecord {
            index: manifest.count,
        });
    }
    Ok(Dataset { manifest, samples })
}
