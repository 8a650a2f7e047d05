//! Checkpoint serialization.
//!
//! Little-endian binary: magic `PANT`, u32 version = 1, u32 entry count;
//! per entry a u16 name length, the UTF-8 name, u8 rank, one u32 extent per
//! rank and the raw 32-bit floats; then a u32-length-prefixed UTF-8 JSON
//! blob holding the network configuration (plus the training noise level,
//! when known, for mismatch warnings).

use crate::error::{Error, Result};
use crate::network::{NetworkConfig, ParamStore};
use crate::tensor::{Elem, Tensor};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 4] = b"PANT";
const VERSION: u32 = 1;

/// Versioned parameter store plus the architecture that produced it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub store: ParamStore,
    pub config: NetworkConfig,
    /// Noise standard deviation (0-255 units) the model was trained for.
    pub train_sigma: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct MetaBlob {
    network: NetworkConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train_sigma: Option<f64>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e: std::io::Error| Error::io(path, e);

        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.store.len() as u32).to_le_bytes())
            .map_err(io)?;
        for (name, tensor) in self.store.iter() {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u16).to_le_bytes()).map_err(io)?;
            w.write_all(bytes).map_err(io)?;
            let shape = tensor.shape();
            w.write_all(&[4u8]).map_err(io)?;
            for e in shape {
                w.write_all(&(e as u32).to_le_bytes()).map_err(io)?;
            }
            for &v in tensor.data() {
                w.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
            }
        }
        let meta = MetaBlob {
            network: self.config.clone(),
            train_sigma: self.train_sigma,
        };
        let json = serde_json::to_vec(&meta)
            .map_err(|e| Error::Config(format!("cannot serialize config: {e}")))?;
        w.write_all(&(json.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&json).map_err(io)?;
        w.flush().map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut cur = 0usize;
        let take = |cur: &mut usize, n: usize| -> Result<&[u8]> {
            if *cur + n > bytes.len() {
                return Err(Error::format(path, "truncated checkpoint"));
            }
            let s = &bytes[*cur..*cur + n];
            *cur += n;
            Ok(s)
        };
        let read_u32 = |cur: &mut usize| -> Result<u32> {
            Ok(u32::from_le_bytes(take(cur, 4)?.try_into().unwrap()))
        };

        if take(&mut cur, 4)? != MAGIC {
            return Err(Error::format(path, "bad magic (not a PANT checkpoint)"));
        }
        let version = read_u32(&mut cur)?;
        if version != VERSION {
            return Err(Error::format(
                path,
                format!("unsupported checkpoint version {version}"),
            ));
        }
        let count = read_u32(&mut cur)? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(take(&mut cur, 2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(take(&mut cur, name_len)?)
                .map_err(|_| Error::format(path, "parameter name is not UTF-8"))?
                .to_string();
            let rank = take(&mut cur, 1)?[0] as usize;
            if rank == 0 || rank > 4 {
                return Err(Error::format(path, format!("bad tensor rank {rank}")));
            }
            let mut extents = [1usize; 4];
            // Ranks below 4 fill trailing extents with 1.
            for e in extents.iter_mut().take(rank) {
                *e = read_u32(&mut cur)? as usize;
            }
            let len: usize = extents.iter().product();
            let mut data = Vec::with_capacity(len);
            let raw = take(&mut cur, len * 4)?;
            for chunk in raw.chunks_exact(4) {
                data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as Elem);
            }
            store.insert(name, Tensor::from_vec(extents, data)?);
        }
        let json_len = read_u32(&mut cur)? as usize;
        let json = take(&mut cur, json_len)?;
        let meta: MetaBlob = serde_json::from_slice(json)
            .map_err(|e| Error::format(path, format!("bad config blob: {e}")))?;
        Ok(Checkpoint {
            store,
            config: meta.network,
            train_sigma: meta.train_sigma,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{count_params, init_params};

    #[test]
    fn roundtrip_preserves_store_and_config() {
        let cfg = NetworkConfig {
            in_channels: 3,
            feature_channels: 8,
            num_blocks: 2,
            attention_positions: vec![1],
            attention: crate::attention::PyramidAttentionConfig {
                scales: vec![1.0, 0.6],
                patch_size: 3,
                embed_channels: 4,
                feature_channels: 8,
            },
        };
        let store = init_params(&cfg, 42).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.pant");
        let ckpt = Checkpoint {
            store,
            config: cfg.clone(),
            train_sigma: Some(30.0),
        };
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.train_sigma, Some(30.0));
        assert_eq!(back.config.num_blocks, cfg.num_blocks);
        assert_eq!(back.store.len(), ckpt.store.len());
        assert_eq!(back.store.num_scalars(), count_params(&cfg));
        for ((n1, t1), (n2, t2)) in ckpt.store.iter().zip(back.store.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            #[cfg(not(feature = "f64"))]
            assert_eq!(t1.data(), t2.data());
        }
    }

    #[test]
    fn header_layout_is_exact() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::from_vec([1, 1, 1, 2], vec![1.0, -2.0]).unwrap());
        let ckpt = Checkpoint {
            store,
            config: NetworkConfig::default(),
            train_sigma: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.pant");
        ckpt.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"PANT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u16::from_le_bytes(bytes[12..14].try_into().unwrap()), 1);
        assert_eq!(bytes[14], b'w');
        assert_eq!(bytes[15], 4); // rank
        let extents: Vec<u32> = (0..4)
            .map(|i| u32::from_le_bytes(bytes[16 + 4 * i..20 + 4 * i].try_into().unwrap()))
            .collect();
        assert_eq!(extents, vec![1, 1, 1, 2]);
        let v0 = f32::from_le_bytes(bytes[32..36].try_into().unwrap());
        let v1 = f32::from_le_bytes(bytes[36..40].try_into().unwrap());
        assert_eq!((v0, v1), (1.0, -2.0));
        // JSON trailer is length-prefixed and parses as an object with the
        // network config.
        let json_len = u32::from_le_bytes(bytes[40..44].try_into().unwrap()) as usize;
        let blob: serde_json::Value =
            serde_json::from_slice(&bytes[44..44 + json_len]).unwrap();
        assert_eq!(blob["network"]["num_blocks"], 80);
        assert_eq!(44 + json_len, bytes.len());
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.pant");
        std::fs::write(&path, b"JUNKxxxxxxx").unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            Checkpoint::load("/does/not/exist.pant"),
            Err(Error::Io { .. })
        ));
    }
}
