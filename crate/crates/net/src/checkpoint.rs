//! Versioned single-file checkpoints.
//!
//! Layout (little endian): 8-byte magic `DCUNET\0\x01`, `u32` format
//! version, `u64` metadata length, UTF-8 JSON metadata, `u64` weight
//! count, then the `f32` weights. The metadata carries a SHA-256 of the
//! weight bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{NetError, Result};
use crate::train::{TrainConfig, TrainingHistory};
use crate::unet::{ModelSpec, Unet};

pub const MAGIC: &[u8; 8] = b"DCUNET\0\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset_sha256: String,
    pub code_version: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Metadata {
    spec: ModelSpec,
    config: TrainConfig,
    history: TrainingHistory,
    provenance: Provenance,
    weights_sha256: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub config: TrainConfig,
    pub history: TrainingHistory,
    pub provenance: Provenance,
    pub weights: Vec<f32>,
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn weight_bytes(weights: &[f32]) -> Vec<u8> {
    weights.iter().flat_map(|w| w.to_le_bytes()).collect()
}

impl Checkpoint {
    pub fn new(model: &Unet<f32>, config: TrainConfig, history: TrainingHistory, provenance: Provenance) -> Self {
        Self {
            spec: model.spec().clone(),
            config,
            history,
            provenance,
            weights: model.flat_params(),
        }
    }

    /// Rebuilds the network.
    pub fn model(&self) -> Result<Unet<f32>> {
        let mut m = Unet::new(self.spec.clone(), 0)?;
        m.set_flat_params(&self.weights)
            .map_err(|e| NetError::CorruptCheckpoint(e.to_string()))?;
        Ok(m)
    }

    /// Trainable additive offsets stored in the checkpoint.
    pub fn offset_param_count(&self) -> Result<usize> {
        Ok(self.model()?.offset_param_count())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = weight_bytes(&self.weights);
        let meta = Metadata {
            spec: self.spec.clone(),
            config: self.config.clone(),
            history: self.history.clone(),
            provenance: self.provenance.clone(),
            weights_sha256: hex(&Sha256::digest(&bytes)),
        };
        let json = serde_json::to_vec_pretty(&meta)?;
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        w.write_all(&(self.weights.len() as u64).to_le_bytes())?;
        w.write_all(&bytes)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(NetError::MissingCheckpoint(path.to_path_buf()));
        }
        let mut data = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut data)?;
        parse(&data)
    }

    /// Loads and checks that the stored topology equals `expected`.
    pub fn load_expecting(path: &Path, expected: &ModelSpec) -> Result<Self> {
        let ckpt = Self::load(path)?;
        if &ckpt.spec != expected {
            return Err(NetError::SpecMismatch {
                expected: format!("{expected:?}"),
                found: format!("{:?}", ckpt.spec),
            });
        }
        Ok(ckpt)
    }
}

fn parse(data: &[u8]) -> Result<Checkpoint> {
    let corrupt = |m: &str| NetError::CorruptCheckpoint(m.to_string());
    let mut rest = data;
    let mut take = |n: usize| -> Result<&[u8]> {
        if rest.len() < n {
            return Err(corrupt("truncated file"));
        }
        let (head, tail) = rest.split_at(n);
        rest = tail;
        Ok(head)
    };
    if take(8)? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(corrupt(&format!("unsupported format version {version}")));
    }
    let json_len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let meta: Metadata = serde_json::from_slice(take(json_len)?)
        .map_err(|e| NetError::CorruptCheckpoint(format!("metadata: {e}")))?;
    let n = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let bytes = take(n.checked_mul(4).ok_or_else(|| corrupt("weight count overflow"))?)?;
    if !rest.is_empty() {
        return Err(corrupt("trailing bytes"));
    }
    if hex(&Sha256::digest(bytes)) != meta.weights_sha256 {
        return Err(corrupt("weight checksum mismatch"));
    }
    let weights: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    if n != meta.spec.analytic_param_count() {
        return Err(corrupt(&format!(
            "{n} weights stored, spec needs {}",
            meta.spec.analytic_param_count()
        )));
    }
    Ok(Checkpoint {
        spec: meta.spec,
        config: meta.config,
        history: meta.history,
        provenance: meta.provenance,
        weights,
    })
}
