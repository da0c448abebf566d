//! Self-describing checkpoint archive.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic    "JICDCKPT"     8 bytes
//! version  u16 = 1
//! dtype    u8             0 = f32, 1 = f64
//! config   profile u8, C u32, i u32, width u32, hyper u32, attention u8
//! model_id u64            FNV-1a over the parameter section
//! flags    u8             bit 0: training state present
//! params   u32 count, then entries
//! train?   lambda f64, task_weight f64, seed u64, lr f64, step u64,
//!          epoch u64, factor f64, patience u32, min_rel f64, best f64,
//!          bad u32, then two entry blocks (first/second Adam moments)
//! ```
//!
//! Entry: `u16 name_len, name, u8 ndim, u32 dims.., raw element bytes`.
//! Round-trips are bit-exact, so resumed training reproduces the
//! uninterrupted trajectory.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use ndarray::{ArrayD, IxDyn};
use thiserror::Error;

use crate::model::{ModelConfig, ModelError, ParamSet, Profile};
use crate::scalar::{c, Scalar};
use crate::train::{PlateauSchedule, TrainState};

pub const CKPT_MAGIC: [u8; 8] = *b"JICDCKPT";
pub const CKPT_VERSION: u16 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("bad magic; not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u16),
    #[error("checkpoint element type tag {file} does not match the runtime type tag {runtime}")]
    DtypeMismatch { file: u8, runtime: u8 },
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Extra state carried by checkpoints written during training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSnapshot<F: Scalar> {
    pub lambda: f64,
    pub task_weight: f64,
    pub seed: u64,
    pub state: TrainState<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<F: Scalar> {
    pub config: ModelConfig,
    pub params: ParamSet<F>,
    pub train: Option<TrainSnapshot<F>>,
}

fn dtype_tag<F: Scalar>() -> u8 {
    if core::mem::size_of::<F>() == 4 {
        0
    } else {
        1
    }
}

fn profile_tag(p: Profile) -> u8 {
    match p {
        Profile::Paper => 0,
        Profile::Toy => 1,
        Profile::Custom => 2,
    }
}

fn profile_from(tag: u8) -> Result<Profile, CheckpointError> {
    Ok(match tag {
        0 => Profile::Paper,
        1 => Profile::Toy,
        2 => Profile::Custom,
        _ => return Err(CheckpointError::Corrupt("unknown profile tag")),
    })
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn write_entries<F: Scalar>(out: &mut Vec<u8>, entries: &BTreeMap<String, ArrayD<F>>) {
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, arr) in entries {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(arr.ndim() as u8);
        for &d in arr.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        if dtype_tag::<F>() == 0 {
            for &v in arr.iter() {
                out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        } else {
            for &v in arr.iter() {
                out.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated(self.bytes.len()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn entries<F: Scalar>(&mut self) -> Result<BTreeMap<String, ArrayD<F>>, CheckpointError> {
        let count = self.u32()? as usize;
        let mut map = BTreeMap::new();
        for _ in 0..count {
            let name_len = self.u16()? as usize;
            let name = core::str::from_utf8(self.take(name_len)?)
                .map_err(|_| CheckpointError::Corrupt("non-utf8 parameter name"))?
                .to_string();
            let ndim = self.u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            let mut len = 1usize;
            for _ in 0..ndim {
                let d = self.u32()? as usize;
                shape.push(d);
                len = len.saturating_mul(d);
            }
            let elem = if dtype_tag::<F>() == 0 { 4 } else { 8 };
            let raw = self.take(len * elem)?;
            let mut data = Vec::with_capacity(len);
            if elem == 4 {
                for chunk in raw.chunks_exact(4) {
                    data.push(c::<F>(f32::from_le_bytes(chunk.try_into().unwrap()) as f64));
                }
            } else {
                for chunk in raw.chunks_exact(8) {
                    data.push(c::<F>(f64::from_le_bytes(chunk.try_into().unwrap())));
                }
            }
            let arr = ArrayD::from_shape_vec(IxDyn(&shape), data)
                .map_err(|_| CheckpointError::Corrupt("entry shape/data mismatch"))?;
            map.insert(name, arr);
        }
        Ok(map)
    }
}

impl<F: Scalar> Checkpoint<F> {
    pub fn new(config: ModelConfig, params: ParamSet<F>) -> Self {
        Self { config, params, train: None }
    }

    /// Identity of the parameter set: hash of the serialized param section.
    pub fn model_id(&self) -> u64 {
        let mut section = Vec::new();
        let entries: BTreeMap<String, ArrayD<F>> =
            self.params.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        write_entries(&mut section, &entries);
        fnv1a64(&section)
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut param_section = Vec::new();
        let entries: BTreeMap<String, ArrayD<F>> =
            self.params.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        write_entries(&mut param_section, &entries);
        let model_id = fnv1a64(&param_section);

        let mut out = Vec::new();
        out.extend_from_slice(&CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        out.push(dtype_tag::<F>());
        out.push(profile_tag(self.config.profile));
        out.extend_from_slice(&(self.config.total_channels as u32).to_le_bytes());
        out.extend_from_slice(&(self.config.base_channels as u32).to_le_bytes());
        out.extend_from_slice(&(self.config.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.config.hyper_channels as u32).to_le_bytes());
        out.push(self.config.use_attention as u8);
        out.extend_from_slice(&model_id.to_le_bytes());
        out.push(self.train.is_some() as u8);
        out.extend_from_slice(&param_section);
        if let Some(t) = &self.train {
            out.extend_from_slice(&t.lambda.to_le_bytes());
            out.extend_from_slice(&t.task_weight.to_le_bytes());
            out.extend_from_slice(&t.seed.to_le_bytes());
            out.extend_from_slice(&t.state.lr.to_le_bytes());
            out.extend_from_slice(&t.state.step.to_le_bytes());
            out.extend_from_slice(&t.state.epoch.to_le_bytes());
            out.extend_from_slice(&t.state.schedule.factor.to_le_bytes());
            out.extend_from_slice(&t.state.schedule.patience.to_le_bytes());
            out.extend_from_slice(&t.state.schedule.min_rel_improvement.to_le_bytes());
            out.extend_from_slice(&t.state.schedule.best.to_le_bytes());
            out.extend_from_slice(&t.state.schedule.bad_epochs.to_le_bytes());
            write_entries(&mut out, &t.state.m);
            write_entries(&mut out, &t.state.v);
        }
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CKPT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u16()?;
        if version != CKPT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let file_dtype = r.u8()?;
        if file_dtype != dtype_tag::<F>() {
            return Err(CheckpointError::DtypeMismatch {
                file: file_dtype,
                runtime: dtype_tag::<F>(),
            });
        }
        let profile = profile_from(r.u8()?)?;
        let total_channels = r.u32()? as usize;
        let base_channels = r.u32()? as usize;
        let width = r.u32()? as usize;
        let hyper_channels = r.u32()? as usize;
        let use_attention = r.u8()? != 0;
        let stored_model_id = r.u64()?;
        let has_train = r.u8()? != 0;

        let param_start = r.pos;
        let entries = r.entries::<F>()?;
        let param_section = &bytes[param_start..r.pos];
        if fnv1a64(param_section) != stored_model_id {
            return Err(CheckpointError::Corrupt("model id does not match parameters"));
        }
        let config = ModelConfig {
            profile,
            total_channels,
            base_channels,
            width,
            hyper_channels,
            use_attention,
        };
        let mut params = ParamSet::new();
        for (k, v) in entries {
            params.insert(&k, v);
        }
        params.validate_against(&config)?;

        let train = if has_train {
            let lambda = r.f64()?;
            let task_weight = r.f64()?;
            let seed = r.u64()?;
            let lr = r.f64()?;
            let step = r.u64()?;
            let epoch = r.u64()?;
            let factor = r.f64()?;
            let patience = r.u32()?;
            let min_rel = r.f64()?;
            let best = r.f64()?;
            let bad = r.u32()?;
            let m = r.entries::<F>()?;
            let v = r.entries::<F>()?;
            Some(TrainSnapshot {
                lambda,
                task_weight,
                seed,
                state: TrainState {
                    step,
                    epoch,
                    lr,
                    schedule: PlateauSchedule {
                        factor,
                        patience,
                        min_rel_improvement: min_rel,
                        best,
                        bad_epochs: bad,
                    },
                    m,
                    v,
                },
            })
        } else {
            None
        };
        Ok(Self { config, params, train })
    }
}
