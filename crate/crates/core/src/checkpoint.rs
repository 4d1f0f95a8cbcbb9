//! Binary checkpoint container.
//!
//! Layout: magic `FLWF`, format version (u32 LE), header length (u32 LE),
//! UTF-8 JSON header, then a little-endian f32 payload holding the declared
//! tensors in order. Loading a saved file reproduces values bit-exactly at
//! 32-bit precision.

use crate::align::ReflowPair;
use crate::error::{Error, Result};
use crate::nnet::{Activation, CondTable, Layer, TimeEmbed, VectorFieldParams};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"FLWF";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to rebuild the network around the payload.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NetDescriptor {
    pub data_dim: usize,
    pub activations: Vec<Activation>,
    pub time_freqs: Vec<f64>,
    pub n_conds: usize,
    pub cond_dim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeaderBody {
    Params { net: NetDescriptor },
    ReflowPairs { n: usize, data_dim: usize, teacher_nfe: usize, ys: Vec<Option<usize>> },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointHeader {
    pub body: HeaderBody,
    /// Tensor names and shapes, in payload order.
    pub shapes: Vec<(String, Vec<usize>)>,
    pub seed: u64,
    pub step: u64,
}

impl CheckpointHeader {
    fn declared_values(&self) -> usize {
        self.shapes.iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

fn write_container<W: Write>(mut w: W, header: &CheckpointHeader, values: &[f64]) -> Result<()> {
    let header_json = serde_json::to_vec(header).map_err(|e| Error::HeaderParse(e.to_string()))?;
    w.write_all(&MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(header_json.len() as u32).to_le_bytes())?;
    w.write_all(&header_json)?;
    for &v in values {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_container<R: Read>(mut r: R) -> Result<(CheckpointHeader, Vec<f64>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::MagicMismatch { found: magic });
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { expected: FORMAT_VERSION, found: version });
    }
    r.read_exact(&mut word)?;
    let header_len = u32::from_le_bytes(word) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|_| Error::TruncatedPayload { expected: header_len, found: 0 })?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::HeaderParse(e.to_string()))?;

    let declared = header.declared_values();
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != declared * 4 {
        if payload.len() % 4 != 0 || payload.len() < declared * 4 {
            return Err(Error::TruncatedPayload { expected: declared * 4, found: payload.len() });
        }
        return Err(Error::PayloadLengthMismatch { declared, actual: payload.len() / 4 });
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((header, values))
}

/// Serialize network parameters.
pub fn save_checkpoint(
    path: &Path,
    params: &VectorFieldParams,
    seed: u64,
    step: u64,
) -> Result<()> {
    let header = CheckpointHeader {
        body: HeaderBody::Params {
            net: NetDescriptor {
                data_dim: params.data_dim(),
                activations: params.activations().to_vec(),
                time_freqs: params.time().freqs().to_vec(),
                n_conds: params.n_conds(),
                cond_dim: params.cond().map_or(0, |c| c.dim()),
            },
        },
        shapes: params
            .named_tensors()
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect(),
        seed,
        step,
    };
    let file = std::fs::File::create(path)?;
    write_container(std::io::BufWriter::new(file), &header, &params.flat())
}

/// Load network parameters saved by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(VectorFieldParams, CheckpointHeader)> {
    let file = std::fs::File::open(path)?;
    let (header, values) = read_container(std::io::BufReader::new(file))?;
    let HeaderBody::Params { net } = &header.body else {
        return Err(Error::HeaderParse("checkpoint does not hold network parameters".to_string()));
    };

    let mut layers = Vec::new();
    let mut cond_table: Option<Tensor> = None;
    let mut off = 0;
    let mut pending_weight: Option<Tensor> = None;
    for (name, shape) in &header.shapes {
        let n: usize = shape.iter().product();
        let tensor = Tensor::from_vec(shape.clone(), values[off..off + n].to_vec())?;
        off += n;
        if name == "cond_embed" {
            cond_table = Some(tensor);
        } else if name.ends_with(".weight") {
            pending_weight = Some(tensor);
        } else if name.ends_with(".bias") {
            let weight = pending_weight.take().ok_or_else(|| {
                Error::HeaderParse(format!("bias {name} without a preceding weight"))
            })?;
            layers.push(Layer { weight, bias: tensor });
        } else {
            return Err(Error::HeaderParse(format!("unknown tensor name {name:?}")));
        }
    }

    let time = TimeEmbed::from_freqs(net.time_freqs.clone())?;
    let cond = match (net.n_conds, cond_table) {
        (0, None) => None,
        (n, Some(table)) if n > 0 => Some(CondTable::from_table(n, net.cond_dim, table)?),
        _ => {
            return Err(Error::HeaderParse(
                "condition table presence disagrees with descriptor".to_string(),
            ))
        }
    };
    let params = VectorFieldParams::new(net.data_dim, layers, net.activations.clone(), time, cond)?;
    Ok((params, header))
}

/// Serialize a reflow pair dataset in the same container format: the
/// payload is the x0 matrix then the x1 matrix, row-major.
pub fn save_pairs(path: &Path, pairs: &[ReflowPair], seed: u64) -> Result<()> {
    let Some(first) = pairs.first() else {
        return Err(Error::contract("no pairs to save".to_string()));
    };
    let d = first.x0.len();
    let n = pairs.len();
    let mut values = Vec::with_capacity(2 * n * d);
    for p in pairs {
        values.extend_from_slice(p.x0.data());
    }
    for p in pairs {
        values.extend_from_slice(p.x1_hat.data());
    }
    let header = CheckpointHeader {
        body: HeaderBody::ReflowPairs {
            n,
            data_dim: d,
            teacher_nfe: first.teacher_nfe,
            ys: pairs.iter().map(|p| p.y).collect(),
        },
        shapes: vec![("x0".to_string(), vec![n, d]), ("x1_hat".to_string(), vec![n, d])],
        seed,
        step: 0,
    };
    let file = std::fs::File::create(path)?;
    write_container(std::io::BufWriter::new(file), &header, &values)
}

pub fn load_pairs(path: &Path) -> Result<(Vec<ReflowPair>, CheckpointHeader)> {
    let file = std::fs::File::open(path)?;
    let (header, values) = read_container(std::io::BufReader::new(file))?;
    let HeaderBody::ReflowPairs { n, data_dim, teacher_nfe, ys } = &header.body else {
        return Err(Error::HeaderParse("file does not hold a pair dataset".to_string()));
    };
    let (n, d) = (*n, *data_dim);
    if ys.len() != n {
        return Err(Error::HeaderParse("condition list length disagrees with n".to_string()));
    }
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let x0 = Tensor::from_vec(vec![d], values[i * d..(i + 1) * d].to_vec())?;
        let x1 = Tensor::from_vec(vec![d], values[(n + i) * d..(n + i + 1) * d].to_vec())?;
        pairs.push(ReflowPair::new(x0, x1, ys[i], *teacher_nfe)?);
    }
    Ok((pairs, header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::NetConfig;
    use crate::rng::CounterRng;

    fn params() -> VectorFieldParams {
        let cfg = NetConfig { data_dim: 2, hidden: vec![8, 8], n_conds: 2, ..NetConfig::default() };
        VectorFieldParams::init(&cfg, &mut CounterRng::new(31)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact_at_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.flwf");
        let p = params();
        save_checkpoint(&path, &p, 31, 100).unwrap();
        let (loaded, header) = load_checkpoint(&path).unwrap();
        assert_eq!(header.seed, 31);
        assert_eq!(header.step, 100);
        for (a, b) in p.flat().iter().zip(loaded.flat()) {
            assert_eq!(*a as f32, b as f32);
        }
        // Saving the loaded params reproduces the file byte-for-byte.
        let path2 = dir.path().join("model2.flwf");
        save_checkpoint(&path2, &loaded, 31, 100).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn magic_flip_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.flwf");
        save_checkpoint(&path, &params(), 0, 0).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] ^= 0xFF;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::MagicMismatch { .. })));
    }

    #[test]
    fn version_bump_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.flwf");
        save_checkpoint(&path, &params(), 0, 0).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 99;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::VersionMismatch { found: 99, .. })
        ));
    }

    #[test]
    fn truncation_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.flwf");
        save_checkpoint(&path, &params(), 0, 0).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::TruncatedPayload { .. })));
    }

    #[test]
    fn extra_payload_is_a_length_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.flwf");
        save_checkpoint(&path, &params(), 0, 0).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::PayloadLengthMismatch { .. })));
    }

    #[test]
    fn garbled_header_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.flwf");
        save_checkpoint(&path, &params(), 0, 0).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[13] = b'~';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::HeaderParse(_))));
    }

    #[test]
    fn pair_dataset_round_trip() {
        use crate::align::ReflowPair;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.flwf");
        let mut rng = CounterRng::new(9);
        let pairs: Vec<ReflowPair> = (0..5)
            .map(|i| {
                let x0 = Tensor::vector(&[rng.next_gaussian(), rng.next_gaussian()]);
                let x1 = Tensor::vector(&[rng.next_gaussian(), rng.next_gaussian()]);
                ReflowPair::new(x0, x1, if i % 2 == 0 { Some(i % 3) } else { None }, 7).unwrap()
            })
            .collect();
        save_pairs(&path, &pairs, 9).unwrap();
        let (loaded, header) = load_pairs(&path).unwrap();
        assert_eq!(loaded.len(), 5);
        assert_eq!(header.seed, 9);
        for (a, b) in pairs.iter().zip(&loaded) {
            assert_eq!(a.y, b.y);
            assert_eq!(a.teacher_nfe, b.teacher_nfe);
            for (x, y) in a.x0.data().iter().zip(b.x0.data()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }
}
