//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "DCKP" | u32 version | u32 json_len | json_len bytes of UTF-8 JSON
//! u32 tensor_count
//! per tensor: u16 name_len | name | u8 kind (0 parameter, 1 buffer)
//!             | u32 ndim | ndim × u32 dims | prod(dims) × f32
//! ```
//!
//! The JSON header echoes `{"net": NetConfig, "train": TrainConfig | null,
//! "global_step": u64}`. Parameters are stored before buffers, each in
//! network order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::error::{CheckpointError, Error, Result};
use crate::net::{build_network, InterpolationNetwork, NetConfig, ParamStore};
use crate::seqdata::{read_file, write_atomic};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub net: NetConfig,
    pub train: Option<TrainConfig>,
    pub global_step: u64,
    pub format_version: u32,
    pub params: ParamStore<f32>,
    pub buffers: ParamStore<f32>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    net: NetConfig,
    train: Option<TrainConfig>,
    global_step: u64,
}

impl Checkpoint {
    pub fn from_network(
        net: &InterpolationNetwork<f32>,
        train: Option<TrainConfig>,
        global_step: u64,
    ) -> Self {
        Checkpoint {
            net: net.config().clone(),
            train,
            global_step,
            format_version: CHECKPOINT_VERSION,
            params: net.params().clone(),
            buffers: net.buffers().clone(),
        }
    }

    /// Rebuild the network this checkpoint was taken from.
    pub fn to_network(&self) -> Result<InterpolationNetwork<f32>> {
        let mut net = build_network(&self.net, 0)?;
        self.restore_into(&mut net)?;
        Ok(net)
    }

    /// Copy the stored state into `net`, which must have the same
    /// architecture. `net` is untouched on error.
    pub fn restore_into(&self, net: &mut InterpolationNetwork<f32>) -> Result<()> {
        let fields = net.config().diff(&self.net);
        if !fields.is_empty() {
            return Err(Error::ArchitectureMismatch(format!(
                "checkpoint and network differ in {}",
                fields.join(", ")
            )));
        }
        let same_layout = |a: &ParamStore<f32>, b: &ParamStore<f32>| {
            a.segments().len() == b.segments().len()
                && a.segments()
                    .iter()
                    .zip(b.segments())
                    .all(|(x, y)| x.name == y.name && x.shape == y.shape)
        };
        if !same_layout(net.params(), &self.params) || !same_layout(net.buffers(), &self.buffers) {
            return Err(Error::ArchitectureMismatch(
                "checkpoint tensors do not match the network layout".into(),
            ));
        }
        net.load_state(self.params.values(), self.buffers.values())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            net: self.net.clone(),
            train: self.train.clone(),
            global_step: self.global_step,
        })
        .expect("config serializes");
        let mut out = Vec::with_capacity(16 + header.len() + 4 * (self.params.len() + self.buffers.len()));
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&self.format_version.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        let count = self.params.segments().len() + self.buffers.segments().len();
        out.extend_from_slice(&(count as u32).to_le_bytes());
        for (kind, store) in [(0u8, &self.params), (1u8, &self.buffers)] {
            for seg in store.segments() {
                out.extend_from_slice(&(seg.name.len() as u16).to_le_bytes());
                out.extend_from_slice(seg.name.as_bytes());
                out.push(kind);
                out.extend_from_slice(&(seg.shape.len() as u32).to_le_bytes());
                for &d in &seg.shape {
                    out.extend_from_slice(&(d as u32).to_le_bytes());
                }
                for v in &store.values()[seg.range()] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let json_len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(json_len)?)
            .map_err(|e| CheckpointError::Corrupt(format!("config header: {e}")))?;
        let count = r.u32()?;
        let mut params = ParamStore::default();
        let mut buffers = ParamStore::default();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| CheckpointError::Corrupt("tensor name is not UTF-8".into()))?
                .to_string();
            let kind = r.take(1)?[0];
            let ndim = r.u32()? as usize;
            if ndim > 8 {
                return Err(CheckpointError::Corrupt(format!("tensor {name} has {ndim} dims")));
            }
            let shape = (0..ndim)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| CheckpointError::Corrupt(format!("tensor {name} is too large")))?;
            let data = r.take(len.checked_mul(4).ok_or_else(|| {
                CheckpointError::Corrupt(format!("tensor {name} is too large"))
            })?)?;
            let mut values = data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
            let store = match kind {
                0 => &mut params,
                1 => &mut buffers,
                k => return Err(CheckpointError::Corrupt(format!("unknown tensor kind {k}"))),
            };
            store.push(name, shape, || values.next().expect("sized above"));
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Corrupt(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            net: header.net,
            train: header.train,
            global_step: header.global_step,
            format_version: version,
            params,
            buffers,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CheckpointError::Corrupt(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Written to a temporary file and renamed into place.
pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &ckpt.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let bytes = read_file(path.as_ref())?;
    Ok(Checkpoint::from_bytes(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Mode;
    use ndarray::Array3;

    fn small() -> NetConfig {
        NetConfig {
            in_channels: 1,
            base_width: 4,
            depth: 2,
            se_reduction: 2,
            use_batchnorm: true,
        }
    }

    #[test]
    fn bytes_roundtrip_is_bit_exact() {
        let net = build_network::<f32>(&small(), 3).unwrap();
        let ckpt = Checkpoint::from_network(&net, Some(TrainConfig::default()), 17);
        let back = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
        assert_eq!(back, ckpt);
        let bits = |s: &ParamStore<f32>| s.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.params), bits(net.params()));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let net = build_network::<f32>(&small(), 3).unwrap();
        let mut bytes = Checkpoint::from_network(&net, None, 0).to_bytes();
        bytes[4] = 9;
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert_eq!(err.to_string(), "unsupported checkpoint version 9");
    }

    #[test]
    fn corruption_is_distinct_from_version() {
        let net = build_network::<f32>(&small(), 3).unwrap();
        let bytes = Checkpoint::from_network(&net, None, 0).to_bytes();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(CheckpointError::Corrupt(_))
        ));
        assert!(matches!(Checkpoint::from_bytes(b"NOPE"), Err(CheckpointError::BadMagic)));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(Checkpoint::from_bytes(&extra), Err(CheckpointError::Corrupt(_))));
    }

    #[test]
    fn restored_network_interpolates_identically() {
        let mut net = build_network::<f32>(&small(), 4).unwrap();
        net.params_mut().values_mut()[0] += 0.25;
        net.buffers_mut().values_mut()[1] = 0.5;
        net.set_mode(Mode::Eval);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&Checkpoint::from_network(&net, None, 0), &path).unwrap();
        let mut back = load_checkpoint(&path).unwrap().to_network().unwrap();
        back.set_mode(Mode::Eval);
        let pair = crate::net::FramePair {
            f1: Array3::from_shape_fn((1, 8, 8), |(_, i, j)| (i * j) as f32 / 10.0),
            f2: Array3::from_shape_fn((1, 8, 8), |(_, i, j)| (i + j) as f32 / 10.0),
        };
        assert_eq!(net.interpolate(&pair).unwrap(), back.interpolate(&pair).unwrap());
    }

    #[test]
    fn mismatched_architecture_names_fields() {
        let net = build_network::<f32>(&small(), 0).unwrap();
        let ckpt = Checkpoint::from_network(&net, None, 0);
        let mut other = build_network::<f32>(&NetConfig { base_width: 8, depth: 3, ..small() }, 0).unwrap();
        let before = other.params().clone();
        let err = ckpt.restore_into(&mut other).unwrap_err().to_string();
        assert!(err.contains("base_width") && err.contains("depth"), "{err}");
        assert_eq!(other.params(), &before);
    }
}
