//! Checkpoint format: a 16-byte header (`SLFL`, version, width code, value
//! count) followed by the values as little-endian IEEE-754 single precision in
//! declaration order.

use crate::error::{Error, Result};
use crate::nn::{param_shapes, LayerSpec, ParamSet, Scalar, Tensor};
use crate::slim::{Segment, SegmentTag};

pub const MAGIC: &[u8; 4] = b"SLFL";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WidthCode {
    Full = 0,
    Lh = 1,
    Rh = 2,
}

impl WidthCode {
    fn from_u32(x: u32) -> Result<Self> {
        match x {
            0 => Ok(WidthCode::Full),
            1 => Ok(WidthCode::Lh),
            2 => Ok(WidthCode::Rh),
            other => Err(Error::Checkpoint(format!("unknown width code {other}"))),
        }
    }
}

impl From<SegmentTag> for WidthCode {
    fn from(tag: SegmentTag) -> Self {
        match tag {
            SegmentTag::Lh => WidthCode::Lh,
            SegmentTag::Rh => WidthCode::Rh,
        }
    }
}

fn encode(values: impl ExactSizeIterator<Item = f32>, code: WidthCode) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + values.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(code as u32).to_le_bytes());
    out.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn serialize_params<T: Scalar>(params: &ParamSet<T>) -> Vec<u8> {
    let flat: Vec<f32> =
        params.tensors.iter().flat_map(|t| t.data.iter().map(|&v| v.to_f64() as f32)).collect();
    encode(flat.into_iter(), WidthCode::Full)
}

pub fn serialize_segment<T: Scalar>(segment: &Segment<T>) -> Vec<u8> {
    let flat: Vec<f32> = segment.values.iter().map(|&v| v.to_f64() as f32).collect();
    encode(flat.into_iter(), segment.tag.into())
}

/// Parse a checkpoint into its width code and flat values.
pub fn deserialize(bytes: &[u8]) -> Result<(WidthCode, Vec<f32>)> {
    if bytes.len() < 16 {
        return Err(Error::Checkpoint("shorter than the 16-byte header".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let word = |off: usize| u32::from_le_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]]);
    let version = word(4);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let code = WidthCode::from_u32(word(8))?;
    let count = word(12) as usize;
    if bytes.len() != 16 + count * 4 {
        return Err(Error::Checkpoint(format!(
            "payload holds {} bytes, header promises {}",
            bytes.len() - 16,
            count * 4
        )));
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((code, values))
}

/// Reshape a full-width flat value stream into the parameter set for `specs`.
pub fn params_from_values(specs: &[LayerSpec], values: &[f32]) -> Result<ParamSet<f32>> {
    let shapes = param_shapes(specs);
    let expected: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    if values.len() != expected {
        return Err(Error::Checkpoint(format!(
            "{} values for specs expecting {expected}",
            values.len()
        )));
    }
    let mut cursor = 0;
    let tensors = shapes
        .into_iter()
        .map(|shape| {
            let n: usize = shape.iter().product();
            let t = Tensor::new(shape, values[cursor..cursor + n].to_vec());
            cursor += n;
            t
        })
        .collect();
    Ok(ParamSet { tensors })
}
