//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "HDYN" | u32 version | u64 len | config text (UTF-8)
//! u64 step | rng: [u8; 32] seed, u64 stream, u128 word position
//! u64 tensor count
//! per tensor: u64 len | name (UTF-8) | u64 rank | u64 dims[rank] | f64 data[prod(dims)]
//! ```
//!
//! Model parameters are stored under `param/` and non-trainable state
//! (normalisers) under `aux/`.

use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::model::Model;

use super::config::ExperimentConfig;
use super::train::build_model;

pub const MAGIC: &[u8; 4] = b"HDYN";
pub const VERSION: u32 = 1;
const PARAM: &str = "param/";
const AUX: &str = "aux/";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn of(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut r = ChaCha8Rng::from_seed(self.seed);
        r.set_stream(self.stream);
        r.set_word_pos(self.word_pos);
        r
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config: String,
    pub step: u64,
    pub rng: RngState,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_model(model: &dyn Model, cfg: &ExperimentConfig, step: u64, rng: &ChaCha8Rng) -> Self {
        let mut tensors = Vec::new();
        for (name, t) in model.params().iter() {
            tensors.push((format!("{PARAM}{name}"), t.clone()));
        }
        for (name, t) in model.aux_state().iter() {
            tensors.push((format!("{AUX}{name}"), t.clone()));
        }
        Self {
            version: VERSION,
            config: cfg.to_text(),
            step,
            rng: RngState::of(rng),
            tensors,
        }
    }

    pub fn config(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::parse(&self.config)
    }

    /// Rebuilds the model described by the stored config and loads every
    /// stored tensor into it. Missing, extra or misshapen tensors are errors.
    pub fn model(&self) -> Result<Box<dyn Model>> {
        let cfg = self.config()?;
        let mut model = build_model(&cfg)?;
        let mut aux = ParamSet::new();
        let mut seen = 0;
        for (name, t) in &self.tensors {
            if let Some(p) = name.strip_prefix(PARAM) {
                let slot = model
                    .params_mut()
                    .get_mut(p)
                    .ok_or_else(|| Error::Format(format!("unexpected tensor {name}")))?;
                if slot.shape() != t.shape() {
                    return Err(Error::Format(format!(
                        "tensor {name}: shape {:?}, model expects {:?}",
                        t.shape(),
                        slot.shape()
                    )));
                }
                *slot = t.clone();
                seen += 1;
            } else if let Some(a) = name.strip_prefix(AUX) {
                aux.insert(a, t.clone());
            } else {
                return Err(Error::Format(format!("tensor {name} has no known prefix")));
            }
        }
        if seen != model.params().len() {
            return Err(Error::Format(format!(
                "checkpoint has {seen} parameter tensors, model has {}",
                model.params().len()
            )));
        }
        model.load_aux_state(&aux)?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&self.version.to_le_bytes());
        put_str(&mut b, &self.config);
        b.extend_from_slice(&self.step.to_le_bytes());
        b.extend_from_slice(&self.rng.seed);
        b.extend_from_slice(&self.rng.stream.to_le_bytes());
        b.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        b.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut b, name);
            b.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
            for &d in t.shape() {
                b.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                b.extend_from_slice(&x.to_le_bytes());
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { b: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let config = r.string()?;
        let step = r.u64()?;
        let seed: [u8; 32] = r.array()?;
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.array()?);
        let n = r.u64()?;
        let mut tensors = Vec::new();
        for _ in 0..n {
            let name = r.string()?;
            let rank = r.u64()? as usize;
            if rank > 8 {
                return Err(Error::Format(format!("tensor {name}: rank {rank} too large")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&l| l.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| Error::Format(format!("tensor {name}: truncated payload")))?;
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                data.push(f64::from_le_bytes(r.array()?));
            }
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if r.remaining() != 0 {
            return Err(Error::Format("trailing bytes after last tensor".into()));
        }
        Ok(Self {
            version,
            config,
            step,
            rng: RngState { seed, stream, word_pos },
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn put_str(b: &mut Vec<u8>, s: &str) {
    b.extend_from_slice(&(s.len() as u64).to_le_bytes());
    b.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.b.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Format("unexpected end of checkpoint".into()));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u64()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format("string is not UTF-8".into()))
    }
}
