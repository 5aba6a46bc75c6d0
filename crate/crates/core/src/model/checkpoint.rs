use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, MelNorm, TrainingConfig, VcModel};
use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::nn::{num_params, tensor_specs, Adam, Params};

const MAGIC: &[u8; 4] = b"PVCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const MEL_MEAN: &str = "buffer.mel_mean";
const MEL_STD: &str = "buffer.mel_std";

/// Model parameters, optimizer moments and the configuration they were
/// trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: VcModel,
    pub optimizer: Adam,
    /// Epochs completed.
    pub epoch: usize,
    pub training: TrainingConfig,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigBlock {
    model: ModelConfig,
    training: TrainingConfig,
}

struct Block {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn write_block(w: &mut Writer, name: &str, shape: &[usize], data: &[f64]) {
    w.str(name);
    w.u32(shape.len() as u32);
    for &d in shape {
        w.u32(d as u32);
    }
    w.f32s(data.iter().copied());
}

fn read_block(r: &mut Reader) -> Result<Block> {
    let name = r.str()?;
    let ndim = r.u32()? as usize;
    if ndim > 4 {
        return Err(Error::Format(format!("block {name} has {ndim} dimensions")));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(r.u32()? as usize);
    }
    let n = shape.iter().product();
    let data = r.f32s(n)?;
    Ok(Block { name, shape, data })
}

fn expect_block(r: &mut Reader, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
    let b = read_block(r)?;
    if b.name != name || b.shape != shape {
        return Err(Error::Format(format!(
            "expected block {name} {shape:?}, found {} {:?}",
            b.name, b.shape
        )));
    }
    Ok(b.data)
}

impl Checkpoint {
    /// Canonical JSON of the model and training configuration (sorted keys).
    pub fn config_json(&self) -> String {
        let value = serde_json::to_value(ConfigBlock {
            model: self.model.config.clone(),
            training: self.training.clone(),
        })
        .expect("config serializes");
        value.to_string()
    }

    pub fn fingerprint(&self) -> [u8; 32] {
        Sha256::digest(self.config_json().as_bytes()).into()
    }

    pub fn fingerprint_hex(&self) -> String {
        self.fingerprint().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.bytes(&self.fingerprint());
        w.str(&self.config_json());
        w.u64(self.epoch as u64);
        w.u64(self.optimizer.step);
        for v in [self.optimizer.beta1, self.optimizer.beta2, self.optimizer.eps] {
            w.u64(v.to_bits());
        }

        let specs = tensor_specs(&self.model);
        w.u32(specs.len() as u32 + 2);
        self.model.visit("", &mut |name, shape, data| write_block(&mut w, name, shape, data));
        let n_mels = self.model.mel_norm.mean.len();
        write_block(&mut w, MEL_MEAN, &[n_mels], self.model.mel_norm.mean.as_slice().unwrap());
        write_block(&mut w, MEL_STD, &[n_mels], self.model.mel_norm.std.as_slice().unwrap());

        w.u32(2 * specs.len() as u32);
        for (moments, tag) in [(&self.optimizer.m, "m"), (&self.optimizer.v, "v")] {
            let mut pos = 0;
            for (name, shape) in &specs {
                let n: usize = shape.iter().product();
                write_block(&mut w, &format!("adam.{tag}.{name}"), shape, &moments[pos..pos + n]);
                pos += n;
            }
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let stored: [u8; 32] = r.take(32)?.try_into().unwrap();
        let json = r.str()?;
        let block: ConfigBlock =
            serde_json::from_str(&json).map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
        let epoch = r.u64()? as usize;
        let step = r.u64()?;
        let beta1 = f64::from_bits(r.u64()?);
        let beta2 = f64::from_bits(r.u64()?);
        let eps = f64::from_bits(r.u64()?);

        let mut model = VcModel::init(&block.model, 0)?;
        let specs = tensor_specs(&model);
        let n_blocks = r.u32()? as usize;
        if n_blocks != specs.len() + 2 {
            return Err(Error::Format(format!(
                "checkpoint has {n_blocks} parameter blocks, model needs {}",
                specs.len() + 2
            )));
        }
        let mut flat = Vec::with_capacity(num_params(&model));
        for (name, shape) in &specs {
            flat.extend(expect_block(&mut r, name, shape)?);
        }
        crate::nn::unflatten(&mut model, &flat);
        let n_mels = block.model.n_mels;
        model.mel_norm = MelNorm {
            mean: Array1::from(expect_block(&mut r, MEL_MEAN, &[n_mels])?),
            std: Array1::from(expect_block(&mut r, MEL_STD, &[n_mels])?),
        };

        let n_opt = r.u32()? as usize;
        if n_opt != 2 * specs.len() {
            return Err(Error::Format(format!("checkpoint has {n_opt} optimizer blocks")));
        }
        let mut moments = [Vec::with_capacity(flat.len()), Vec::with_capacity(flat.len())];
        for (k, tag) in ["m", "v"].into_iter().enumerate() {
            for (name, shape) in &specs {
                moments[k].extend(expect_block(&mut r, &format!("adam.{tag}.{name}"), shape)?);
            }
        }
        r.finish()?;
        let [m, v] = moments;
        let ckpt = Checkpoint {
            model,
            optimizer: Adam {
                beta1,
                beta2,
                eps,
                m,
                v,
                step,
            },
            epoch,
            training: block.training,
        };
        if ckpt.fingerprint() != stored {
            return Err(Error::Format("checkpoint fingerprint does not match its configuration".into()));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.encode())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&read_file(path.as_ref())?)
    }
}
