//! Single-file model checkpoints.
//!
//! Layout: the magic `VLCK`, a little-endian `u32` format version, a `u64`
//! byte length followed by the JSON header, then the six network blobs in
//! model order, each in the core crate's binary network encoding.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use vluci::nn::Mlp;
use vluci::vluci::{VluciConfig, VluciModel};

use crate::error::{LabError, Result};

const MAGIC: &[u8; 4] = b"VLCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: VluciConfig,
    pub trained: bool,
    /// Seed of the 80/20 split the model was trained on.
    pub split_seed: u64,
}

pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: VluciModel,
}

pub fn encode(model: &VluciModel, header: &CheckpointHeader) -> Vec<u8> {
    let json = serde_json::to_vec(header).expect("header serialises");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for net in model.nets() {
        net.encode(&mut out);
    }
    out
}

fn corrupt(path: &Path, what: impl Into<String>) -> LabError {
    LabError::Data(format!("{}: {}", path.display(), what.into()))
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(corrupt(path, "not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(corrupt(path, format!("unsupported checkpoint version {version}")));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let json = bytes.get(16..16 + len).ok_or_else(|| corrupt(path, "truncated header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(json).map_err(|e| corrupt(path, format!("bad header: {e}")))?;
    let mut rest = &bytes[16 + len..];
    let mut nets = Vec::with_capacity(6);
    for _ in 0..6 {
        let (net, used) = Mlp::decode(rest).map_err(|e| corrupt(path, e.to_string()))?;
        nets.push(net);
        rest = &rest[used..];
    }
    if !rest.is_empty() {
        return Err(corrupt(path, "trailing bytes after the last network"));
    }
    let nets: [Mlp; 6] = nets.try_into().expect("six networks");
    let model = VluciModel::from_nets(nets, header.trained).map_err(|e| corrupt(path, e.to_string()))?;
    if model.cu_dim() != header.config.cu_dim {
        return Err(corrupt(path, "latent dimension disagrees with the stored config"));
    }
    Ok(Checkpoint { header, model })
}

pub fn save(path: &Path, model: &VluciModel, header: &CheckpointHeader) -> Result<()> {
    fs::write(path, encode(model, header)).map_err(LabError::io(path))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(LabError::io(path))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let cfg = VluciConfig { pred_t_hidden: vec![3], gen_hidden: vec![2], ..Default::default() };
        let model = VluciModel::new(&cfg, 4).unwrap();
        let header = CheckpointHeader { config: cfg, trained: true, split_seed: 9 };
        let bytes = encode(&model, &header);
        let back = decode(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.header, header);
        assert!(back.model.is_trained());
        for (a, b) in back.model.nets().iter().zip(model.nets()) {
            assert_eq!(a.params(), b.params());
            assert_eq!(a.layer_dims(), b.layer_dims());
        }
        assert_eq!(encode(&back.model, &back.header), bytes);
    }

    #[test]
    fn damaged_files_are_rejected() {
        let cfg = VluciConfig::default();
        let model = VluciModel::zeroed(&cfg, 2).unwrap();
        let bytes = encode(&model, &CheckpointHeader { config: cfg, trained: false, split_seed: 0 });
        let p = Path::new("mem");
        assert!(decode(&bytes[..bytes.len() - 1], p).is_err());
        assert!(decode(&[bytes.as_slice(), &[0]].concat(), p).is_err());
        assert!(decode(b"NOPE", p).is_err());
        let mut wrong = bytes.clone();
        wrong[4] = 7;
        assert!(decode(&wrong, p).is_err());
    }
}
