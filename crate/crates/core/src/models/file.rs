//! Self-describing model file.
//!
//! ```text
//! offset  size  content
//! 0       8     magic "BILMODEL"
//! 8       4     format version, u32 little-endian
//! 12      8     header length H, u64 little-endian
//! 20      H     JSON header (UTF-8)
//! 20+H    ...   tensor data, f64 little-endian, row-major
//! ```
//!
//! The header records the model kind and rates, training hyperparameters,
//! channel ranges, and for every network its role, period, shape and the
//! name and shape of each tensor in payload order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelSpec, NetRole, TrainedNet};
use crate::config::ModelParams;
use crate::error::{Error, Result};
use crate::nnet::{NetworkParams, NetworkShape};
use crate::signal::ChannelRange;

pub const MODEL_MAGIC: &[u8; 8] = b"BILMODEL";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct NetHeader {
    role: NetRole,
    period_ms: f64,
    shape: NetworkShape,
    input_range: ChannelRange,
    output_range: ChannelRange,
    tensors: Vec<TensorHeader>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    train: ModelParams,
    master_range: ChannelRange,
    networks: Vec<NetHeader>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(format!("corrupt model file: {}", msg.into()))
}

impl Model {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            spec: self.spec,
            train: self.train.clone(),
            master_range: self.master_range.clone(),
            networks: self
                .nets
                .iter()
                .map(|n| NetHeader {
                    role: n.role,
                    period_ms: n.period_ms,
                    shape: n.params.shape(),
                    input_range: n.input_range.clone(),
                    output_range: n.output_range.clone(),
                    tensors: n
                        .params
                        .tensors()
                        .into_iter()
                        .map(|(name, shape, _)| TensorHeader { name, shape })
                        .collect(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("model header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + 8 * self.num_params());
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for n in &self.nets {
            for (_, _, data) in n.params.tensors() {
                for v in data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MODEL_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != MODEL_VERSION {
            return Err(Error::Version {
                found: version.to_string(),
                expected: MODEL_VERSION.to_string(),
            });
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| corrupt("header truncated"))?;
        let header: Header = serde_json::from_slice(body)?;
        header.spec.validate()?;
        let mut pos = 20 + hlen;
        let mut nets = Vec::with_capacity(header.networks.len());
        for nh in header.networks {
            let mut params = NetworkParams::zeros(&nh.shape);
            let expected: Vec<(String, Vec<usize>)> =
                params.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
            if expected.len() != nh.tensors.len()
                || expected.iter().zip(&nh.tensors).any(|(e, t)| e.0 != t.name || e.1 != t.shape)
            {
                return Err(corrupt("tensor list does not match the network shape"));
            }
            for slot in params.tensors_mut() {
                let need = slot.len() * 8;
                let raw = bytes.get(pos..pos + need).ok_or_else(|| corrupt("tensor data truncated"))?;
                for (v, chunk) in slot.iter_mut().zip(raw.chunks_exact(8)) {
                    *v = f64::from_le_bytes(chunk.try_into().unwrap());
                }
                pos += need;
            }
            nh.input_range.validate()?;
            nh.output_range.validate()?;
            nets.push(TrainedNet {
                role: nh.role,
                period_ms: nh.period_ms,
                params,
                input_range: nh.input_range,
                output_range: nh.output_range,
            });
        }
        if pos != bytes.len() {
            return Err(corrupt(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Model { spec: header.spec, nets, master_range: header.master_range, train: header.train })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::models::ModelKind;

    fn model() -> Model {
        let cfg = Config::default();
        let spec = ModelSpec::new(ModelKind::Md, &cfg).unwrap();
        let shape = NetworkShape { input: 9, hidden: vec![3, 2], output: 9 };
        let range = ChannelRange::new(vec![-1.0; 9], (0..9).map(|i| i as f64 + 0.5).collect()).unwrap();
        let awkward = ChannelRange::new((0..9).map(|i| -(i as f64 + 1.0) / 3.0).collect(), (0..9).map(|i| 0.1 * 7f64.powi(i)).collect()).unwrap();
        let net = |role, seed| TrainedNet {
            role,
            period_ms: 20.0,
            params: NetworkParams::init(&shape, seed),
            input_range: range.clone(),
            output_range: range.clone(),
        };
        Model {
            spec,
            nets: vec![net(NetRole::High, 1), net(NetRole::Low, 2)],
            master_range: awkward,
            train: cfg.model,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..8], MODEL_MAGIC);
        let back = Model::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn payload_size_matches_parameters() {
        let m = model();
        let bytes = m.to_bytes();
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 20 + hlen + 8 * m.num_params());
        let header: serde_json::Value = serde_json::from_slice(&bytes[20..20 + hlen]).unwrap();
        assert_eq!(header["spec"]["kind"], "md");
        assert_eq!(header["networks"][0]["tensors"][0]["name"], "lstm0.w_x");
    }

    #[test]
    fn damaged_files_are_rejected() {
        let bytes = model().to_bytes();
        assert!(Model::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut v = bytes.clone();
        v[8] = 9;
        assert!(matches!(Model::from_bytes(&v), Err(Error::Version { .. })));
        let mut v = bytes;
        v[0] = b'X';
        assert!(Model::from_bytes(&v).is_err());
    }
}
