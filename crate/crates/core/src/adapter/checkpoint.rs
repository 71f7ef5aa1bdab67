//! JSON checkpoint envelope.
//!
//! ```json
//! {"version": 1,
//!  "config": {"h": 8, "d": 6, "r": 3, "n": 3, "alpha": 6.0, "dropout_p": 0.0},
//!  "tensors": [{"name": "W0", "rows": 6, "cols": 8, "data_b64": "..."}, ...]}
//! ```
//!
//! Tensor names are `W0`, `A`, `B.0` .. `B.{n-1}`, `Wr`. Payloads are row-major
//! little-endian `f64` bytes in standard base64 with padding.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{ILoRAConfig, ILoRALayer, ParamId};
use crate::error::{Error, Result};
use crate::numkit::Matrix;

pub const CHECKPOINT_VERSION: u64 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Envelope {
    version: u64,
    config: ILoRAConfig,
    tensors: Vec<TensorRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    rows: usize,
    cols: usize,
    data_b64: String,
}

fn encode(name: String, m: &Matrix) -> TensorRecord {
    let mut bytes = Vec::with_capacity(m.as_slice().len() * 8);
    for v in m.as_slice() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    TensorRecord {
        name,
        rows: m.rows(),
        cols: m.cols(),
        data_b64: STANDARD.encode(bytes),
    }
}

fn decode(record: &TensorRecord, expected: (usize, usize)) -> Result<Matrix> {
    if (record.rows, record.cols) != expected {
        return Err(Error::CheckpointShape {
            name: record.name.clone(),
            found: (record.rows, record.cols),
            expected,
        });
    }
    let bytes = STANDARD
        .decode(record.data_b64.as_bytes())
        .map_err(|e| Error::CheckpointEncoding {
            name: record.name.clone(),
            reason: e.to_string(),
        })?;
    let want = expected.0 * expected.1 * 8;
    if bytes.len() != want {
        return Err(Error::CheckpointEncoding {
            name: record.name.clone(),
            reason: format!("payload is {} bytes, expected {want}", bytes.len()),
        });
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Matrix::from_vec(expected.0, expected.1, data)
}

impl ILoRALayer {
    pub fn to_checkpoint_json(&self) -> String {
        let mut tensors = vec![encode("W0".into(), &self.w0)];
        for id in self.param_ids() {
            tensors.push(encode(id.to_string(), self.param(id)));
        }
        let env = Envelope {
            version: CHECKPOINT_VERSION,
            config: self.config,
            tensors,
        };
        serde_json::to_string_pretty(&env).expect("checkpoint serializes")
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        // Read the version first so a future layout reports a version error,
        // not a schema error.
        let probe: serde_json::Value = serde_json::from_str(text)?;
        if let Some(found) = probe.get("version").and_then(|v| v.as_u64()) {
            if found != CHECKPOINT_VERSION {
                return Err(Error::CheckpointVersion {
                    found,
                    expected: CHECKPOINT_VERSION,
                });
            }
        }
        let env: Envelope = serde_json::from_value(probe)?;
        let cfg = env.config;
        cfg.validate()?;

        let find = |name: &str| {
            env.tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::CheckpointMissing(name.to_string()))
        };
        let w0 = decode(find("W0")?, (cfg.d, cfg.h))?;
        let a = decode(find("A")?, (cfg.r, cfg.h))?;
        let b = (0..cfg.n)
            .map(|i| decode(find(&ParamId::B(i).to_string())?, (cfg.d, cfg.r)))
            .collect::<Result<Vec<_>>>()?;
        let wr = decode(find("Wr")?, (cfg.n, cfg.r))?;
        ILoRALayer::from_parts(cfg, w0, a, b, wr)
    }
}

pub fn save_checkpoint(layer: &ILoRALayer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, layer.to_checkpoint_json()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ILoRALayer> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ILoRALayer::from_checkpoint_json(&text)
}
