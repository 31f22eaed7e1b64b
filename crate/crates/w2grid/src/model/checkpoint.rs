//! Binary checkpoint container. Layout:
//!
//! ```text
//! magic "W2GRID1"
//! u32 header length, JSON header {config, labels, vocab}
//! u32 tensor count
//! per tensor: u32 name length, name, u32 ndim, u64 dims..., f64 data (LE)
//! ```
//!
//! Tensors are written in the fixed parameter order, so a load followed by
//! a save reproduces the file byte for byte.

use super::config::ModelConfig;
use super::params::ModelParams;
use crate::numerics::Tensor;
use crate::types::LabelSet;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 7] = b"W2GRID1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("header error: {0}")]
    Header(#[from] serde_json::Error),
}

/// Everything needed to run inference: hyper-parameters, the label set,
/// the token vocabulary (id order), and the trained weights.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub labels: LabelSet,
    pub vocab: Vec<String>,
    pub params: ModelParams,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    labels: LabelSet,
    vocab: Vec<String>,
}

fn write_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    let header = serde_json::to_vec(&Header {
        config: ckpt.config.clone(),
        labels: ckpt.labels.clone(),
        vocab: ckpt.vocab.clone(),
    })?;
    write_u32(&mut w, header.len() as u32)?;
    w.write_all(&header)?;
    let named = ckpt.params.named();
    write_u32(&mut w, named.len() as u32)?;
    for (name, t) in named {
        write_u32(&mut w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        write_u32(&mut w, t.shape.len() as u32)?;
        for &d in &t.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let hlen = read_u32(&mut r)? as usize;
    let mut hbytes = vec![0u8; hlen];
    r.read_exact(&mut hbytes)?;
    let header: Header = serde_json::from_slice(&hbytes)?;
    header
        .config
        .validate()
        .map_err(CheckpointError::Malformed)?;
    let count = read_u32(&mut r)? as usize;
    let mut tensors = Vec::with_capacity(count);
    let mut names = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = read_u32(&mut r)? as usize;
        let mut nbytes = vec![0u8; nlen];
        r.read_exact(&mut nbytes)?;
        let name = String::from_utf8(nbytes)
            .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?;
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = vec![0.0f64; numel];
        let mut b = [0u8; 8];
        for v in &mut data {
            r.read_exact(&mut b)?;
            *v = f64::from_le_bytes(b);
        }
        names.push(name);
        tensors.push(Tensor::from_vec(&shape, data));
    }
    let expected = ModelParams::init(&header.config, &mut crate::numerics::Rng::new(0));
    let expected_named = expected.named();
    if names.len() != expected_named.len() {
        return Err(CheckpointError::Malformed(format!(
            "expected {} tensors, found {}",
            expected_named.len(),
            names.len()
        )));
    }
    for (i, (want, _)) in expected_named.iter().enumerate() {
        if &names[i] != want {
            return Err(CheckpointError::Malformed(format!(
                "tensor {i}: expected {want:?}, found {:?}",
                names[i]
            )));
        }
        if tensors[i].shape != expected_named[i].1.shape {
            return Err(CheckpointError::Malformed(format!(
                "tensor {want:?}: shape {:?} does not match the config's {:?}",
                tensors[i].shape, expected_named[i].1.shape
            )));
        }
    }
    let params = ModelParams::from_ordered(&header.config, &tensors);
    Ok(Checkpoint { config: header.config, labels: header.labels, vocab: header.vocab, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn sample() -> Checkpoint {
        let config = ModelConfig {
            vocab_size: 5,
            d_word: 4,
            d_h: 6,
            d_ed: 3,
            d_et: 3,
            d_c: 4,
            d_biaffine: 4,
            d_pred_hidden: 4,
            relation_count: 4,
            dropout: 0.1,
            ..Default::default()
        };
        let params = ModelParams::init(&config, &mut Rng::new(42));
        Checkpoint {
            config,
            labels: LabelSet::new(["Disease", "Symptom"]).unwrap(),
            vocab: vec!["<pad>".into(), "<unk>".into(), "a".into(), "b".into(), "c".into()],
            params,
        }
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let ckpt = sample();
        save_checkpoint(&p1, &ckpt).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        assert_eq!(loaded.config, ckpt.config);
        assert_eq!(loaded.labels, ckpt.labels);
        assert_eq!(loaded.vocab, ckpt.vocab);
        for ((n1, t1), (n2, t2)) in ckpt.params.named().iter().zip(loaded.params.named()) {
            assert_eq!(*n1, n2);
            assert_eq!(t1.shape, t2.shape);
            assert_eq!(t1.data, t2.data);
        }
        save_checkpoint(&p2, &loaded).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk");
        std::fs::write(&p, b"NOTACKPTxxxxxxxxxxx").unwrap();
        assert!(matches!(load_checkpoint(&p), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trunc.ckpt");
        save_checkpoint(&p, &sample()).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_checkpoint(&p).is_err());
    }

    #[test]
    fn shape_mismatch_against_config_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.ckpt");
        let mut ckpt = sample();
        // Claim a larger vocabulary than the embedding table provides.
        ckpt.config.vocab_size = 99;
        save_checkpoint(&p, &ckpt).unwrap();
        let err = load_checkpoint(&p).unwrap_err();
        assert!(matches!(err, CheckpointError::Malformed(_)), "{err}");
    }
}
