//! Floating-point element abstraction.
//!
//! The numeric core is generic over `f32`/`f64`: production runs use `f32`,
//! finite-difference gradient checks instantiate the same code with `f64`.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::NdFloat;

/// Element dtype tag stored in checkpoint files.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Dtype::F32),
            2 => Some(Dtype::F64),
            _ => None,
        }
    }
}

/// Scalar element type of all tensors in the pipeline.
pub trait Elem: NdFloat {
    const DTYPE: Dtype;

    fn of(x: f64) -> Self;
    fn to_f64(self) -> f64;

    fn write_slice<W: Write>(w: &mut W, data: &[Self]) -> std::io::Result<()>;
    fn read_vec<R: Read>(r: &mut R, len: usize) -> std::io::Result<Vec<Self>>;
}

impl Elem for f32 {
    const DTYPE: Dtype = Dtype::F32;

    #[inline(always)]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }

    fn write_slice<W: Write>(w: &mut W, data: &[Self]) -> std::io::Result<()> {
        for &v in data {
            w.write_f32::<LittleEndian>(v)?;
        }
        Ok(())
    }

    fn read_vec<R: Read>(r: &mut R, len: usize) -> std::io::Result<Vec<Self>> {
        let mut out = vec![0.0f32; len];
        r.read_f32_into::<LittleEndian>(&mut out)?;
        Ok(out)
    }
}

impl Elem for f64 {
    const DTYPE: Dtype = Dtype::F64;

    #[inline(always)]
    fn of(x: f64) -> Self {
        x
    }

    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }

    fn write_slice<W: Write>(w: &mut W, data: &[Self]) -> std::io::Result<()> {
        for &v in data {
            w.write_f64::<LittleEndian>(v)?;
        }
        Ok(())
    }

    fn read_vec<R: Read>(r: &mut R, len: usize) -> std::io::Result<Vec<Self>> {
        let mut out = vec![0.0f64; len];
        r.read_f64_into::<LittleEndian>(&mut out)?;
        Ok(out)
    }
}
