//! `PNET1` checkpoint container.
//!
//! ```text
//! "PNET1" | u32 format version | u8 scalar width
//! u32 len | ModelConfig as JSON
//! u32 count | tensors   (trainable, fixed order)
//! u32 count | tensors   (batch-norm running mean, running var per layer)
//! adam: f64 beta1 beta2 eps base_lr decay | u64 decay_every | u64 step
//!       u32 count | first moments | u32 count | second moments
//! u64 epoch | u64 seed
//! tensor = u32 rank | u32 dims... | little-endian scalars
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::config::ModelConfig;
use super::model::ModelParams;
use super::optim::{AdamHyper, AdamState};

pub const MAGIC: &[u8; 5] = b"PNET1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub params: ModelParams<T>,
    pub adam: AdamState<T>,
    /// Number of completed epochs.
    pub epoch: u64,
    pub seed: u64,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn tensor<T: Scalar>(&mut self, t: &Tensor<T>) {
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u32(d as u32);
        }
        for &v in t.data() {
            v.write_le(&mut self.0);
        }
    }
    fn tensors<T: Scalar>(&mut self, ts: &[&Tensor<T>]) {
        self.u32(ts.len() as u32);
        for t in ts {
            self.tensor(t);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated: needed {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn tensor<T: Scalar>(&mut self) -> Result<Tensor<T>> {
        let rank = self.u32()? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Checkpoint(format!("implausible tensor rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| self.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let width = T::DTYPE_TAG as usize;
        let bytes = self.take(
            len.checked_mul(width)
                .ok_or_else(|| Error::Checkpoint("tensor size overflow".into()))?,
        )?;
        let data = bytes.chunks_exact(width).map(T::read_le).collect();
        Tensor::from_vec(&shape, data).map_err(|e| Error::Checkpoint(e.to_string()))
    }
    fn tensors<T: Scalar>(&mut self) -> Result<Vec<Tensor<T>>> {
        let n = self.u32()? as usize;
        (0..n).map(|_| self.tensor()).collect()
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION);
        w.0.push(T::DTYPE_TAG);
        let cfg = serde_json::to_vec(self.params.config()).expect("config serialises");
        w.u32(cfg.len() as u32);
        w.0.extend_from_slice(&cfg);
        w.tensors(&self.params.trainable());
        w.tensors(&self.params.buffers());
        let h = self.adam.hyper;
        for v in [h.beta1, h.beta2, h.eps, h.base_lr, h.decay] {
            w.f64(v);
        }
        w.u64(h.decay_every as u64);
        w.u64(self.adam.step);
        w.tensors(&self.adam.first.iter().collect::<Vec<_>>());
        w.tensors(&self.adam.second.iter().collect::<Vec<_>>());
        w.u64(self.epoch);
        w.u64(self.seed);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint(
                "bad magic, not a PNET1 checkpoint".into(),
            ));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} unsupported (expected {FORMAT_VERSION})"
            )));
        }
        let tag = r.u8()?;
        if tag != T::DTYPE_TAG {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {tag}-byte scalars, loader expects {}",
                T::DTYPE_TAG
            )));
        }
        let n = r.u32()? as usize;
        let config: ModelConfig = serde_json::from_slice(r.take(n)?)
            .map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
        let trainable = r.tensors()?;
        let buffers = r.tensors()?;
        let params = ModelParams::from_parts(&config, trainable, buffers)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let hyper = AdamHyper {
            beta1: r.f64()?,
            beta2: r.f64()?,
            eps: r.f64()?,
            base_lr: r.f64()?,
            decay: r.f64()?,
            decay_every: r.u64()? as usize,
        };
        let step = r.u64()?;
        let first: Vec<Tensor<T>> = r.tensors()?;
        let second: Vec<Tensor<T>> = r.tensors()?;
        let shapes_ok = first.len() == params.trainable().len()
            && second.len() == first.len()
            && params
                .trainable()
                .iter()
                .zip(first.iter().zip(&second))
                .all(|(p, (m, v))| p.shape() == m.shape() && p.shape() == v.shape());
        if !shapes_ok {
            return Err(Error::Checkpoint(
                "optimizer moments do not match parameters".into(),
            ));
        }
        let epoch = r.u64()?;
        let seed = r.u64()?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            params,
            adam: AdamState {
                hyper,
                step,
                first,
                second,
            },
            epoch,
            seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
