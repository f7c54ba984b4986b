//! `.rfpm` checkpoints.
//!
//! ```text
//! 0   magic "RFPM"
//! 4   u32 format version
//! 8   u32 layer count
//! 12  u32 reserved
//! 16  u64 JSON block length
//! 24  u64 parameter count
//! 32  u64 optimizer state count (0 or the parameter count)
//! 40  reserved, zero-filled to 64
//! 64  JSON {config, meta}
//!     parameters as f32, layer by layer, weights before biases
//!     optimizer state, same layout
//!     u32 CRC32 of everything above
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::NetworkConfig;
use super::network::{LayerParams, Network};
use super::train::{NetworkModel, TrainingMeta};
use crate::error::{Error, Result};
use crate::fsutil::{self, Reader};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"RFPM";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 64;

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: NetworkConfig,
    meta: TrainingMeta,
}

impl NetworkModel<f32> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&Manifest {
            config: self.config().clone(),
            meta: self.meta.clone(),
        })?;
        let n_params = self.net.num_parameters();
        let mut out = Vec::with_capacity(HEADER_LEN + json.len() + 8 * n_params + 4);
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config().layers.len() as u32).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&(n_params as u64).to_le_bytes());
        out.extend_from_slice(&(n_params as u64).to_le_bytes());
        out.resize(HEADER_LEN, 0);
        out.extend_from_slice(&json);
        for layers in [self.net.params(), self.opt_state.as_slice()] {
            for p in layers {
                for v in p.weight.iter().chain(&p.bias) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                needed: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let mut r = Reader::new(bytes);
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic {
                expected: CHECKPOINT_MAGIC,
                found: magic,
            });
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let n_layers = r.u32()? as usize;
        r.u32()?;
        let json_len = r.u64()? as usize;
        let n_params = r.u64()? as usize;
        let n_opt = r.u64()? as usize;
        r.take(HEADER_LEN - r.position())?;
        let expected = json_len
            .checked_add(n_params.saturating_add(n_opt).saturating_mul(4))
            .and_then(|v| v.checked_add(HEADER_LEN + 4))
            .ok_or_else(|| Error::Malformed("header sizes overflow".into()))?;
        if bytes.len() < expected {
            return Err(Error::Truncated {
                needed: expected,
                found: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(Error::Malformed(format!(
                "{} trailing bytes",
                bytes.len() - expected
            )));
        }
        fsutil::verify_crc(bytes)?;

        let manifest: Manifest = serde_json::from_slice(r.take(json_len)?)?;
        if manifest.config.layers.len() != n_layers {
            return Err(Error::Malformed(format!(
                "header lists {n_layers} layers, config has {}",
                manifest.config.layers.len()
            )));
        }
        let template = Network::<f32>::zeros(manifest.config.clone())?;
        if template.num_parameters() != n_params || (n_opt != 0 && n_opt != n_params) {
            return Err(Error::Malformed(format!(
                "config needs {} parameters, file stores {n_params}",
                template.num_parameters()
            )));
        }
        let read_layers = |r: &mut Reader| -> Result<Vec<LayerParams<f32>>> {
            template
                .params()
                .iter()
                .map(|t| {
                    let mut p = t.zeros_like();
                    for v in p.weight.iter_mut().chain(p.bias.iter_mut()) {
                        *v = r.f32()?;
                    }
                    Ok(p)
                })
                .collect()
        };
        let params = read_layers(&mut r)?;
        let net = Network::from_params(manifest.config, params)?;
        let mut model = NetworkModel::from_network(net);
        if n_opt != 0 {
            model.opt_state = read_layers(&mut r)?;
        }
        model.meta = manifest.meta;
        Ok(model)
    }
}

pub fn save_checkpoint(path: &Path, model: &NetworkModel<f32>) -> Result<()> {
    fsutil::write_atomic_bytes(path, &model.to_bytes()?)
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkModel<f32>> {
    NetworkModel::from_bytes(&fsutil::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Target;

    fn model() -> NetworkModel<f32> {
        let cfg = NetworkConfig::conv_dense(32, [3, 2], [4, 3], Some(2), [8, 6, 4]);
        let mut m = NetworkModel::new(cfg, 5).unwrap();
        m.meta.target = Some(Target::GainImbalance);
        m.meta.epochs_trained = 3;
        for (i, s) in m.opt_state.iter_mut().enumerate() {
            s.weight.iter_mut().for_each(|v| *v = 0.25 + i as f32);
        }
        m
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let bytes = m.to_bytes().unwrap();
        let back = NetworkModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn errors_are_classified() {
        let bytes = model().to_bytes().unwrap();
        let mut v = bytes.clone();
        v[4] = 2;
        assert!(matches!(
            NetworkModel::from_bytes(&v),
            Err(Error::VersionMismatch { found: 2, .. })
        ));
        let mut c = bytes.clone();
        let last = c.len() - 10;
        c[last] ^= 0x40;
        assert!(matches!(NetworkModel::from_bytes(&c), Err(Error::Checksum { .. })));
        assert!(matches!(
            NetworkModel::from_bytes(&bytes[..bytes.len() / 2]),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(NetworkModel::from_bytes(b""), Err(Error::Truncated { .. })));
    }
}
