//! Self-describing checkpoint container.
//!
//! Layout: 8-byte magic, u32 LE format version, u32 LE metadata length,
//! JSON metadata (config, step, seed, parameter count, optimizer
//! presence), then little-endian f32 blobs: parameters, and when an
//! optimizer was saved, its first and second moments.

use super::train::Adam;
use super::{MaskNet, MaskNetConfig, ModelError};
use serde::{Deserialize, Serialize};
use std::path::Path;

const MAGIC: &[u8; 8] = b"SSEPCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    config: MaskNetConfig,
    step: u64,
    seed: u64,
    param_count: u64,
    has_optimizer: bool,
    optimizer_t: u64,
}

/// A reconstructed checkpoint: the network in eval mode, optimizer state
/// when the file carried one, and the seed recorded at save time.
#[derive(Debug)]
pub struct LoadedCheckpoint {
    pub net: MaskNet<f32>,
    pub optimizer: Option<Adam<f32>>,
    pub seed: u64,
}

pub fn save_checkpoint(
    net: &MaskNet<f32>,
    optimizer: Option<&Adam<f32>>,
    seed: u64,
    path: &Path,
) -> Result<(), ModelError> {
    let meta = CheckpointMeta {
        config: net.config().clone(),
        step: net.step(),
        seed,
        param_count: net.parameters().len() as u64,
        has_optimizer: optimizer.is_some(),
        optimizer_t: optimizer.map_or(0, Adam::timestep),
    };
    let meta_bytes = serde_json::to_vec(&meta)?;
    let mut out = Vec::with_capacity(16 + meta_bytes.len() + 4 * net.parameters().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta_bytes);
    write_f32s(&mut out, net.parameters());
    if let Some(opt) = optimizer {
        write_f32s(&mut out, opt.first_moment());
        write_f32s(&mut out, opt.second_moment());
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint, ModelError> {
    let bytes = std::fs::read(path)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };

    if cur.take(8)? != MAGIC {
        return Err(ModelError::CheckpointParse("bad magic; not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(ModelError::CheckpointParse(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let meta_len = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes")) as usize;
    let meta: CheckpointMeta = serde_json::from_slice(cur.take(meta_len)?)
        .map_err(|e| ModelError::CheckpointParse(format!("metadata: {e}")))?;

    let params = cur.take_f32s(meta.param_count as usize)?;
    let net = MaskNet::from_parts(meta.config, params, meta.step)?;
    let optimizer = if meta.has_optimizer {
        let m = cur.take_f32s(meta.param_count as usize)?;
        let v = cur.take_f32s(meta.param_count as usize)?;
        Some(Adam::from_parts(m, v, meta.optimizer_t)?)
    } else {
        None
    };
    if cur.pos != bytes.len() {
        return Err(ModelError::CheckpointParse(format!(
            "{} trailing bytes after checkpoint payload",
            bytes.len() - cur.pos
        )));
    }
    Ok(LoadedCheckpoint { net, optimizer, seed: meta.seed })
}

fn write_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.bytes.len() {
            return Err(ModelError::CheckpointParse(format!(
                "file truncated: wanted {n} bytes at offset {}, have {}",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn take_f32s(&mut self, count: usize) -> Result<Vec<f32>, ModelError> {
        let raw = self.take(4 * count)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_net() -> MaskNet<f32> {
        let config = MaskNetConfig {
            input_bins: 12,
            recurrent_layers: 2,
            hidden_units_per_direction: 4,
            bidirectional: true,
            dropout_probability: 0.2,
        };
        let mut net = MaskNet::new(config, 909).unwrap();
        net.step = 17;
        net
    }

    fn stepped_optimizer(net: &MaskNet<f32>) -> Adam<f32> {
        let mut opt = Adam::new(net.parameters().len());
        let grads: Vec<f32> = (0..net.parameters().len()).map(|i| (i as f32).sin()).collect();
        let mut params = net.parameters().to_vec();
        opt.step(&mut params, &grads, 1e-3).unwrap();
        opt
    }

    #[test]
    fn round_trip_restores_everything_bit_for_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let net = small_net();
        let opt = stepped_optimizer(&net);
        save_checkpoint(&net, Some(&opt), 4242, &path).unwrap();

        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.seed, 4242);
        assert_eq!(loaded.net.config(), net.config());
        assert_eq!(loaded.net.step(), 17);
        let bits = |xs: &[f32]| xs.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(loaded.net.parameters()), bits(net.parameters()));
        let restored = loaded.optimizer.unwrap();
        assert_eq!(restored.timestep(), opt.timestep());
        assert_eq!(bits(restored.first_moment()), bits(opt.first_moment()));
        assert_eq!(bits(restored.second_moment()), bits(opt.second_moment()));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input = Array2::from_shape_fn((9, 12), |_| rng.random_range(0.0f32..1.0));
        let a = net.forward(&input).unwrap();
        let b = loaded.net.forward(&input).unwrap();
        assert_eq!(bits(a.as_slice().unwrap()), bits(b.as_slice().unwrap()));
    }

    #[test]
    fn optimizer_is_optional() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let net = small_net();
        save_checkpoint(&net, None, 0, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert!(loaded.optimizer.is_none());
        assert_eq!(loaded.net.parameters(), net.parameters());
    }

    #[test]
    fn altered_config_is_incompatible() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let net = small_net();
        save_checkpoint(&net, None, 0, &path).unwrap();

        // bump input_bins in the metadata without touching the blobs
        let mut bytes = std::fs::read(&path).unwrap();
        let needle = b"\"input_bins\":12";
        let replacement = b"\"input_bins\":13";
        let at = bytes
            .windows(needle.len())
            .position(|w| w == needle)
            .expect("metadata should contain input_bins");
        bytes[at..at + needle.len()].copy_from_slice(replacement);
        std::fs::write(&path, bytes).unwrap();

        match load_checkpoint(&path) {
            Err(ModelError::IncompatibleCheckpoint(_)) => {}
            other => panic!("expected incompatible checkpoint, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let net = small_net();
        save_checkpoint(&net, Some(&stepped_optimizer(&net)), 1, &path).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        for keep in [5, 14, bytes.len() - 10] {
            std::fs::write(&path, &bytes[..keep]).unwrap();
            match load_checkpoint(&path) {
                Err(ModelError::CheckpointParse(_)) => {}
                other => panic!("expected parse error at {keep} bytes, got {other:?}"),
            }
        }
    }

    #[test]
    fn wrong_magic_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        std::fs::write(&path, b"NOTACKPTxxxxxxxxxxxx").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(ModelError::CheckpointParse(_))));
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let net = small_net();
        save_checkpoint(&net, None, 0, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.extend_from_slice(&[0u8; 3]);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(ModelError::CheckpointParse(_))));
    }
}
