//! Binary checkpoints. All integers and floats little-endian, in order:
//!
//! 1. magic `ZVQM`, `u32` version, `u8` variant tag (1 IN-WAE, 2 SVQ-WAE)
//! 2. `u32` length + JSON of the [`ModelConfig`]
//! 3. `u64` seed, `u64` step, `u8` codebook-initialized flag
//! 4. `u32` count, then per parameter: `u32` name length, name, `u32`
//!    rank, `u32` dims, `f32` values
//! 5. the same layout for buffers (`speaker_ref.<id>` reference codes)
//! 6. Adam: `u64` step count, `f64` learning rate, β₁, β₂, ε, then per
//!    parameter its first and second moments as `f32`

use std::path::Path;

use crate::numerics::{AdamConfig, AdamState, ParamSet, Tensor};

use super::config::ModelConfig;
use super::model::Model;
use super::{ModelError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ZVQM";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }
    fn f32s(&mut self, v: &[f32]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn tensor(&mut self, name: &str, t: &Tensor) {
        self.bytes(name.as_bytes());
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u32(d as u32);
        }
        self.f32s(t.data());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            ModelError::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| ModelError::Checkpoint("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let name = String::from_utf8(self.bytes()?.to_vec())
            .map_err(|_| ModelError::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = self.u32()? as usize;
        let shape = (0..rank).map(|_| Ok(self.u32()? as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().product();
        let data = self.f32s(n)?;
        Ok((name, Tensor::new(shape, data)?))
    }
}

impl Model {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.u8(self.config.variant.tag());
        w.bytes(&serde_json::to_vec(&self.config).expect("config serializes"));
        w.u64(self.seed);
        w.u64(self.step);
        w.u8(self.codebook_initialized as u8);
        w.u32(self.params.len() as u32);
        for (name, t) in self.params.iter() {
            w.tensor(name, t);
        }
        let refs: Vec<(usize, &Vec<f32>)> = self
            .speaker_refs
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.as_ref().map(|r| (i, r)))
            .collect();
        w.u32(refs.len() as u32);
        for (i, r) in refs {
            let t = Tensor::new(vec![r.len()], r.clone()).expect("non-empty reference");
            w.tensor(&format!("speaker_ref.{i}"), &t);
        }
        let a = &self.adam;
        w.u64(a.step_count);
        for v in [a.config.learning_rate, a.config.beta1, a.config.beta2, a.config.epsilon] {
            w.f64(v);
        }
        for (m, v) in a.first_moment.iter().zip(&a.second_moment) {
            w.f32s(m);
            w.f32s(v);
        }
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(ModelError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
        }
        let tag = r.u8()?;
        let config: ModelConfig = serde_json::from_slice(r.bytes()?)?;
        if config.variant.tag() != tag {
            return Err(ModelError::Checkpoint("variant tag disagrees with config".into()));
        }
        config.validate()?;
        let seed = r.u64()?;
        let step = r.u64()?;
        let codebook_initialized = r.u8()? != 0;

        let layout = super::network::parameter_layout(&config);
        let n = r.u32()? as usize;
        if n != layout.len() {
            return Err(ModelError::Checkpoint(format!(
                "{n} parameters stored, configuration defines {}",
                layout.len()
            )));
        }
        let mut params = ParamSet::new();
        for (want_name, want_shape) in &layout {
            let (name, t) = r.tensor()?;
            if &name != want_name || t.shape() != want_shape.as_slice() {
                return Err(ModelError::Checkpoint(format!(
                    "expected `{want_name}` {want_shape:?}, found `{name}` {:?}",
                    t.shape()
                )));
            }
            params.insert(name, t)?;
        }

        let mut speaker_refs = vec![None; config.decoder.n_speakers];
        for _ in 0..r.u32()? {
            let (name, t) = r.tensor()?;
            let id = name
                .strip_prefix("speaker_ref.")
                .and_then(|s| s.parse::<usize>().ok())
                .filter(|&i| i < speaker_refs.len())
                .ok_or_else(|| ModelError::Checkpoint(format!("unexpected buffer `{name}`")))?;
            speaker_refs[id] = Some(t.into_data());
        }

        let step_count = r.u64()?;
        let adam_cfg = AdamConfig {
            learning_rate: r.f64()?,
            beta1: r.f64()?,
            beta2: r.f64()?,
            epsilon: r.f64()?,
        };
        let mut first_moment = Vec::with_capacity(params.len());
        let mut second_moment = Vec::with_capacity(params.len());
        for t in params.tensors() {
            first_moment.push(r.f32s(t.numel())?);
            second_moment.push(r.f32s(t.numel())?);
        }
        if r.pos != buf.len() {
            return Err(ModelError::Checkpoint(format!(
                "{} trailing bytes",
                buf.len() - r.pos
            )));
        }
        let mut config = config;
        config.adam = adam_cfg;
        Ok(Model {
            config,
            params,
            adam: AdamState {
                config: adam_cfg,
                step_count,
                first_moment,
                second_moment,
            },
            step,
            seed,
            codebook_initialized,
            speaker_refs,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
