//! Checkpoint files: a versioned magic header, a JSON manifest naming every
//! parameter block with its shape plus the seed/step/config, then raw
//! little-endian f32 blocks in manifest order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NeuralError, Shape, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"BEVF0001";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub step: u64,
    #[serde(default)]
    pub config: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    seed: u64,
    step: u64,
    config: serde_json::Value,
    entries: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: [usize; 4],
}

pub fn save_checkpoint(
    path: &Path,
    meta: &CheckpointMeta,
    params: &[(String, &Tensor)],
) -> Result<(), NeuralError> {
    let manifest = Manifest {
        seed: meta.seed,
        step: meta.step,
        config: meta.config.clone(),
        entries: params
            .iter()
            .map(|(name, t)| Entry { name: name.clone(), shape: t.shape.0 })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest)
        .map_err(|e| NeuralError::Checkpoint(format!("manifest encode: {e}")))?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(CHECKPOINT_MAGIC)?;
    f.write_all(&(json.len() as u32).to_le_bytes())?;
    f.write_all(&json)?;
    for (_, t) in params {
        for v in &t.data {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointMeta, Vec<(String, Tensor)>), NeuralError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(NeuralError::Checkpoint(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(CHECKPOINT_MAGIC),
        )));
    }
    let mut len_bytes = [0u8; 4];
    f.read_exact(&mut len_bytes)?;
    let json_len = u32::from_le_bytes(len_bytes) as usize;
    let mut json = vec![0u8; json_len];
    f.read_exact(&mut json)?;
    let manifest: Manifest = serde_json::from_slice(&json)
        .map_err(|e| NeuralError::Checkpoint(format!("manifest decode: {e}")))?;
    let mut params = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let shape = Shape(entry.shape);
        let mut data = vec![0.0f32; shape.numel()];
        let mut buf = [0u8; 4];
        for v in data.iter_mut() {
            f.read_exact(&mut buf)?;
            *v = f32::from_le_bytes(buf);
        }
        params.push((entry.name.clone(), Tensor::from_vec(shape, data)));
    }
    Ok((
        CheckpointMeta { seed: manifest.seed, step: manifest.step, config: manifest.config },
        params,
    ))
}
