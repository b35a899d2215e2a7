//! Binary model checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic   8 bytes  b"TICACKPT"
//! version u32      currently 1
//! dtype   u8       1 = f32, 2 = f64
//! config  u32 len + serde_json of ModelConfig
//! params  u32 count, then per entry:
//!         name (u16 len + utf8), group u8, norm_affine u8,
//!         ndim u8, dims u32 x ndim, raw element data
//! states  u32 count, then per entry:
//!         name (u16 len + utf8), channels u32,
//!         running mean data, running var data
//! ```
//!
//! Write followed by read reproduces every tensor bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, ArrayD, IxDyn};
use thiserror::Error;

use crate::elem::{Dtype, Elem};
use crate::model::params::ParamGroup;
use crate::model::{ModelConfig, SegModel};

const MAGIC: &[u8; 8] = b"TICACKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    BadVersion(u32),
    #[error("checkpoint dtype {found:?} does not match requested {requested:?}")]
    DtypeMismatch { found: u8, requested: Dtype },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("config json: {0}")]
    Config(#[from] serde_json::Error),
    #[error("model rebuild: {0}")]
    Model(#[from] crate::model::ModelError),
}

fn write_name<W: Write>(w: &mut W, name: &str) -> std::io::Result<()> {
    w.write_u16::<LittleEndian>(name.len() as u16)?;
    w.write_all(name.as_bytes())
}

fn read_name<R: Read>(r: &mut R) -> Result<String, CheckpointError> {
    let len = r.read_u16::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| CheckpointError::Malformed(e.to_string()))
}

fn write_tensor<F: Elem, W: Write>(w: &mut W, t: &ArrayD<F>) -> std::io::Result<()> {
    w.write_u8(t.ndim() as u8)?;
    for &d in t.shape() {
        w.write_u32::<LittleEndian>(d as u32)?;
    }
    let data = t.as_slice().expect("tensors are standard layout");
    F::write_slice(w, data)
}

fn read_tensor<F: Elem, R: Read>(r: &mut R) -> Result<ArrayD<F>, CheckpointError> {
    let ndim = r.read_u8()? as usize;
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(r.read_u32::<LittleEndian>()? as usize);
    }
    let len = dims.iter().product();
    let data = F::read_vec(r, len)?;
    ArrayD::from_shape_vec(IxDyn(&dims), data)
        .map_err(|e| CheckpointError::Malformed(e.to_string()))
}

/// Serialize a model to checkpoint bytes.
pub fn to_bytes<F: Elem>(model: &SegModel<F>) -> Result<Vec<u8>, CheckpointError> {
    let mut w = Vec::new();
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u8(F::DTYPE.code())?;
    let cfg = serde_json::to_vec(&model.cfg)?;
    w.write_u32::<LittleEndian>(cfg.len() as u32)?;
    w.write_all(&cfg)?;

    w.write_u32::<LittleEndian>(model.params().len() as u32)?;
    for e in model.params().iter() {
        write_name(&mut w, &e.name)?;
        w.write_u8(e.group.code())?;
        w.write_u8(e.norm_affine as u8)?;
        write_tensor(&mut w, &e.value)?;
    }

    w.write_u32::<LittleEndian>(model.bn_states().len() as u32)?;
    for s in model.bn_states() {
        write_name(&mut w, &s.name)?;
        w.write_u32::<LittleEndian>(s.mean.len() as u32)?;
        F::write_slice(&mut w, s.mean.as_slice().expect("contiguous"))?;
        F::write_slice(&mut w, s.var.as_slice().expect("contiguous"))?;
    }
    Ok(w)
}

/// Deserialize a model from checkpoint bytes.
pub fn from_bytes<F: Elem>(bytes: &[u8]) -> Result<SegModel<F>, CheckpointError> {
    let mut r = bytes;
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let dtype = r.read_u8()?;
    if Dtype::from_code(dtype) != Some(F::DTYPE) {
        return Err(CheckpointError::DtypeMismatch { found: dtype, requested: F::DTYPE });
    }
    let cfg_len = r.read_u32::<LittleEndian>()? as usize;
    let mut cfg_buf = vec![0u8; cfg_len];
    r.read_exact(&mut cfg_buf)?;
    let cfg: ModelConfig = serde_json::from_slice(&cfg_buf)?;

    // rebuild the architecture, then overwrite every tensor by name
    let mut model = SegModel::<F>::new(cfg, 0)?;

    let n_params = r.read_u32::<LittleEndian>()? as usize;
    if n_params != model.params().len() {
        return Err(CheckpointError::Malformed(format!(
            "parameter count {n_params} does not match architecture ({})",
            model.params().len()
        )));
    }
    for _ in 0..n_params {
        let name = read_name(&mut r)?;
        let group = ParamGroup::from_code(r.read_u8()?)
            .ok_or_else(|| CheckpointError::Malformed(format!("bad group tag for {name}")))?;
        let norm_affine = r.read_u8()? != 0;
        let value = read_tensor::<F, _>(&mut r)?;
        let entry = model
            .params_mut()
            .iter_mut()
            .find(|e| e.name == name)
            .ok_or_else(|| CheckpointError::Malformed(format!("unknown parameter {name}")))?;
        if entry.group != group
            || entry.norm_affine != norm_affine
            || entry.value.shape() != value.shape()
        {
            return Err(CheckpointError::Malformed(format!(
                "parameter {name} does not match the architecture"
            )));
        }
        entry.value = value;
    }

    let n_states = r.read_u32::<LittleEndian>()? as usize;
    if n_states != model.bn_states().len() {
        return Err(CheckpointError::Malformed(format!(
            "state count {n_states} does not match architecture ({})",
            model.bn_states().len()
        )));
    }
    for _ in 0..n_states {
        let name = read_name(&mut r)?;
        let ch = r.read_u32::<LittleEndian>()? as usize;
        let mean = Array1::from_vec(F::read_vec(&mut r, ch)?);
        let var = Array1::from_vec(F::read_vec(&mut r, ch)?);
        let state = model
            .bn_states_mut()
            .iter_mut()
            .find(|s| s.name == name)
            .ok_or_else(|| CheckpointError::Malformed(format!("unknown state {name}")))?;
        if state.mean.len() != ch {
            return Err(CheckpointError::Malformed(format!(
                "state {name} has wrong channel count"
            )));
        }
        state.mean = mean;
        state.var = var;
    }
    Ok(model)
}

pub fn save<F: Elem>(model: &SegModel<F>, path: &Path) -> Result<(), CheckpointError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    let bytes = to_bytes(model)?;
    w.write_all(&bytes)?;
    Ok(())
}

pub fn load<F: Elem>(path: &Path) -> Result<SegModel<F>, CheckpointError> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, SegModel};

    fn tiny() -> SegModel<f32> {
        let cfg = ModelConfig {
            widths: [4, 4, 8, 8],
            decoder_width: 4,
            input_size: (16, 16),
            ..ModelConfig::default()
        };
        SegModel::new(cfg, 42).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut model = tiny();
        // perturb running stats so they are not the initial values
        let x = ndarray::Array4::from_elem((2, 1, 16, 16), 0.7f32);
        let _ = model.forward(&x, crate::model::Mode::Train).unwrap();

        let bytes = to_bytes(&model).unwrap();
        let loaded = from_bytes::<f32>(&bytes).unwrap();
        let bytes2 = to_bytes(&loaded).unwrap();
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn wrong_dtype_is_rejected() {
        let model = tiny();
        let bytes = to_bytes(&model).unwrap();
        assert!(matches!(
            from_bytes::<f64>(&bytes),
            Err(CheckpointError::DtypeMismatch { .. })
        ));
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let model = tiny();
        let mut bytes = to_bytes(&model).unwrap();
        bytes[0] = b'X';
        assert!(matches!(from_bytes::<f32>(&bytes), Err(CheckpointError::BadMagic)));
    }
}
