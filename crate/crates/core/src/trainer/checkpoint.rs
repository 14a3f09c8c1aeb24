//! Checkpoint persistence.
//!
//! Layout (little-endian):
//! ```text
//! "TDPT-CKPT1"                         magic, 10 bytes
//! u32 version
//! u32 num_layers, dim, num_heads, ffn_factor, c_max, f_max
//! u64 train step
//! [u8; 32] corpus digest
//! u32 tensor count, then per tensor: str name, u32 len, f32 values[len]
//! u64 optimizer step, f32 m[total], f32 v[total]
//! ```

use std::io::{Read, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use super::optim::AdamState;
use crate::batcher::CorpusEntry;
use crate::error::{Error, Result};
use crate::net::{ModelConfig, ModelParams};
use crate::table_store::write_prepared;

pub const CHECKPOINT_MAGIC: &[u8; 10] = b"TDPT-CKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams<f32>,
    pub optimizer: AdamState<f32>,
    pub step: u64,
    pub corpus_digest: [u8; 32],
}

impl Checkpoint {
    pub fn fresh(params: ModelParams<f32>, corpus_digest: [u8; 32]) -> Self {
        let n = params.count();
        Checkpoint {
            config: params.config.clone(),
            params,
            optimizer: AdamState::new(n),
            step: 0,
            corpus_digest,
        }
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e: std::io::Error| Error::Format(e.to_string());
        w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
        w.write_u32::<LE>(CHECKPOINT_VERSION).map_err(io)?;
        let c = &self.config;
        for v in [c.num_layers, c.dim, c.num_heads, c.ffn_factor, c.c_max, c.f_max] {
            w.write_u32::<LE>(v as u32).map_err(io)?;
        }
        w.write_u64::<LE>(self.step).map_err(io)?;
        w.write_all(&self.corpus_digest).map_err(io)?;
        let tensors = self.params.tensors();
        w.write_u32::<LE>(tensors.len() as u32).map_err(io)?;
        for (name, _, data) in tensors {
            w.write_u32::<LE>(name.len() as u32).map_err(io)?;
            w.write_all(name.as_bytes()).map_err(io)?;
            w.write_u32::<LE>(data.len() as u32).map_err(io)?;
            for v in data {
                w.write_f32::<LE>(*v).map_err(io)?;
            }
        }
        w.write_u64::<LE>(self.optimizer.step).map_err(io)?;
        for v in self.optimizer.m.iter().chain(&self.optimizer.v) {
            w.write_f32::<LE>(*v).map_err(io)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let io = |e: std::io::Error| Error::Format(format!("truncated checkpoint: {e}"));
        let mut magic = [0u8; 10];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let version = r.read_u32::<LE>().map_err(io)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = r.read_u32::<LE>().map_err(io)? as usize;
        }
        let config = ModelConfig {
            num_layers: dims[0],
            dim: dims[1],
            num_heads: dims[2],
            ffn_factor: dims[3],
            c_max: dims[4],
            f_max: dims[5],
        };
        config.validate().map_err(|e| Error::Format(e.to_string()))?;
        let step = r.read_u64::<LE>().map_err(io)?;
        let mut corpus_digest = [0u8; 32];
        r.read_exact(&mut corpus_digest).map_err(io)?;
        let mut params = ModelParams::<f32>::zeros(&config);
        let count = r.read_u32::<LE>().map_err(io)? as usize;
        let mut slots = params.tensors_mut();
        if count != slots.len() {
            return Err(Error::Format(format!("{count} tensors, config implies {}", slots.len())));
        }
        for (name, _, dst) in slots.iter_mut() {
            let len = r.read_u32::<LE>().map_err(io)? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf).map_err(io)?;
            if buf != name.as_bytes() {
                return Err(Error::Format(format!("expected tensor {name}")));
            }
            let n = r.read_u32::<LE>().map_err(io)? as usize;
            if n != dst.len() {
                return Err(Error::Format(format!("tensor {name} has {n} values, expected {}", dst.len())));
            }
            r.read_f32_into::<LE>(dst).map_err(io)?;
        }
        drop(slots);
        let total = params.count();
        let opt_step = r.read_u64::<LE>().map_err(io)?;
        let mut m = vec![0f32; total];
        let mut v = vec![0f32; total];
        r.read_f32_into::<LE>(&mut m).map_err(io)?;
        r.read_f32_into::<LE>(&mut v).map_err(io)?;
        Ok(Checkpoint {
            config,
            params,
            optimizer: AdamState { m, v, step: opt_step },
            step,
            corpus_digest,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        buf
    }
}

/// SHA-256 over the binary serialization of every corpus table, in order.
pub fn corpus_digest(corpus: &[CorpusEntry]) -> [u8; 32] {
    let mut h = Sha256::new();
    for e in corpus {
        let mut buf = Vec::new();
        write_prepared(&e.table, &mut buf).expect("writing to memory");
        h.update((buf.len() as u64).to_le_bytes());
        h.update(&buf);
    }
    h.finalize().into()
}
