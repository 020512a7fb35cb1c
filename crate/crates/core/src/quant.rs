//! Block-wise absmax quantization of frozen weights.
//!
//! Entries are grouped into blocks of `block_size` consecutive row-major
//! values. Each block stores one `f64` scale `absmax / qmax` and one signed
//! integer code per entry, `round(entry * qmax / absmax)` with rounding half
//! away from zero. The code range is symmetric, `[-qmax, qmax]` with
//! `qmax = 2^(bits-1) - 1`, so zero is exactly representable and every
//! reconstructed entry is within half a step of the original.

use rand::Rng;
use thiserror::Error;

use crate::codec::{CodecError, Reader, Writer};
use crate::lora::{adapter_path, LoraAdapter, LoraError};
use crate::tensor::{Matrix, TensorError};

pub const DEFAULT_BLOCK_SIZE: usize = 64;

/// Serialized header: rows, cols (u64 each), bit width (u8), block size (u64).
pub const HEADER_BYTES: usize = 8 + 8 + 1 + 8;

#[derive(Debug, Error)]
pub enum QuantError {
    #[error("unsupported bit width {0}; expected 4 or 8")]
    BitWidth(u8),
    #[error("block size must be at least 1")]
    BlockSize,
    #[error("non-finite entry at index {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Lora(#[from] LoraError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BitWidth {
    Four,
    Eight,
}

impl BitWidth {
    pub fn bits(self) -> u8 {
        match self {
            BitWidth::Four => 4,
            BitWidth::Eight => 8,
        }
    }

    /// Largest code magnitude.
    pub fn qmax(self) -> i8 {
        match self {
            BitWidth::Four => 7,
            BitWidth::Eight => 127,
        }
    }
}

impl TryFrom<u8> for BitWidth {
    type Error = QuantError;

    fn try_from(bits: u8) -> Result<Self, Self::Error> {
        match bits {
            4 => Ok(BitWidth::Four),
            8 => Ok(BitWidth::Eight),
            other => Err(QuantError::BitWidth(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMatrix {
    rows: usize,
    cols: usize,
    bit_width: BitWidth,
    block_size: usize,
    codes: Vec<i8>,
    scales: Vec<f64>,
}

impl QuantizedMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn bit_width(&self) -> BitWidth {
        self.bit_width
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn codes(&self) -> &[i8] {
        &self.codes
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn num_blocks(&self) -> usize {
        self.scales.len()
    }

    /// Quantization step of block `b` (the scale). Half of it bounds the
    /// round-trip error of every entry in the block.
    pub fn step(&self, block: usize) -> f64 {
        self.scales[block]
    }

    /// Storage footprint: header, packed codes, and one `f64` per block.
    pub fn memory_bytes(&self) -> usize {
        packed_len(self.codes.len(), self.bit_width) + self.scales.len() * 8 + HEADER_BYTES
    }

    /// Codes packed at `bit_width` bits each; for 4 bits the first code of
    /// every pair sits in the low nibble.
    pub fn packed_codes(&self) -> Vec<u8> {
        match self.bit_width {
            BitWidth::Eight => self.codes.iter().map(|&c| c as u8).collect(),
            BitWidth::Four => self
                .codes
                .chunks(2)
                .map(|pair| {
                    let lo = (pair[0] as u8) & 0x0F;
                    let hi = pair.get(1).map_or(0, |&c| (c as u8) & 0x0F);
                    lo | (hi << 4)
                })
                .collect(),
        }
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        w.u64(self.rows as u64);
        w.u64(self.cols as u64);
        w.u8(self.bit_width.bits());
        w.u64(self.block_size as u64);
        w.bytes(&self.packed_codes());
        w.u64(self.scales.len() as u64);
        for s in &self.scales {
            w.f64(*s);
        }
    }

    pub(crate) fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let rows = r.usize()?;
        let cols = r.usize()?;
        let bit_width =
            BitWidth::try_from(r.u8()?).map_err(|e| CodecError::Invalid(e.to_string()))?;
        let block_size = r.usize()?;
        if block_size == 0 {
            return Err(CodecError::Invalid("block size 0".into()));
        }
        let n = rows * cols;
        let packed = r.bytes()?;
        if packed.len() != packed_len(n, bit_width) {
            return Err(CodecError::Invalid(format!(
                "expected {} packed code bytes, found {}",
                packed_len(n, bit_width),
                packed.len()
            )));
        }
        let codes = unpack_codes(packed, n, bit_width);
        let qmax = bit_width.qmax();
        if codes.iter().any(|c| c.abs() > qmax) {
            return Err(CodecError::Invalid("code outside symmetric range".into()));
        }
        let nblocks = r.usize()?;
        if nblocks != n.div_ceil(block_size) {
            return Err(CodecError::Invalid("block count mismatch".into()));
        }
        let scales = (0..nblocks).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        if scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(CodecError::Invalid("negative or non-finite scale".into()));
        }
        Ok(Self {
            rows,
            cols,
            bit_width,
            block_size,
            codes,
            scales,
        })
    }
}

fn packed_len(n: usize, bits: BitWidth) -> usize {
    (n * bits.bits() as usize).div_ceil(8)
}

fn unpack_codes(packed: &[u8], n: usize, bits: BitWidth) -> Vec<i8> {
    match bits {
        BitWidth::Eight => packed.iter().map(|&b| b as i8).collect(),
        BitWidth::Four => {
            let sign_extend = |nib: u8| ((nib << 4) as i8) >> 4;
            let mut out = Vec::with_capacity(n);
            for &byte in packed {
                out.push(sign_extend(byte & 0x0F));
                if out.len() < n {
                    out.push(sign_extend(byte >> 4));
                }
            }
            out.truncate(n);
            out
        }
    }
}

/// Quantizes `w` block by block.
pub fn quantize_blockwise(
    w: &Matrix,
    bit_width: BitWidth,
    block_size: usize,
) -> Result<QuantizedMatrix, QuantError> {
    if block_size == 0 {
        return Err(QuantError::BlockSize);
    }
    if let Some(i) = w.data().iter().position(|v| !v.is_finite()) {
        return Err(QuantError::NonFinite(i));
    }
    let (codes, scales) = quantize_slice(w.data(), bit_width, block_size);
    Ok(QuantizedMatrix {
        rows: w.rows(),
        cols: w.cols(),
        bit_width,
        block_size,
        codes,
        scales,
    })
}

/// Block-wise absmax quantization of a flat slice.
pub(crate) fn quantize_slice(data: &[f64], bit_width: BitWidth, block_size: usize) -> (Vec<i8>, Vec<f64>) {
    let qmax = f64::from(bit_width.qmax());
    let mut codes = Vec::with_capacity(data.len());
    let mut scales = Vec::with_capacity(data.len().div_ceil(block_size));
    for block in data.chunks(block_size) {
        let absmax = block.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if absmax == 0.0 {
            scales.push(0.0);
            codes.extend(std::iter::repeat_n(0, block.len()));
            continue;
        }
        scales.push(absmax / qmax);
        // `f64::round` rounds half away from zero.
        codes.extend(
            block
                .iter()
                .map(|&v| (v * qmax / absmax).round().clamp(-qmax, qmax) as i8),
        );
    }
    (codes, scales)
}

pub(crate) fn dequantize_slice(codes: &[i8], scales: &[f64], block_size: usize) -> Vec<f64> {
    codes
        .iter()
        .enumerate()
        .map(|(i, &c)| f64::from(c) * scales[i / block_size])
        .collect()
}

/// `code * scale` for every entry, restoring the original shape.
pub fn dequantize(q: &QuantizedMatrix) -> Matrix {
    let data = dequantize_slice(&q.codes, &q.scales, q.block_size);
    Matrix::from_vec(q.rows, q.cols, data).expect("quantized matrix is well formed")
}

/// `dequantize(Q) x + (alpha / r) B (A drop(x))`. The quantized base never
/// changes; only the adapter is trainable.
pub fn quantized_lora_forward<R: Rng + ?Sized>(
    q: &QuantizedMatrix,
    adapter: &LoraAdapter,
    x: &Matrix,
    train_rng: Option<&mut R>,
) -> Result<Matrix, QuantError> {
    let w0 = dequantize(q);
    if w0.shape() != adapter.weight_shape() {
        return Err(TensorError::ShapeMismatch {
            op: "quantized_lora",
            left: w0.shape(),
            right: adapter.weight_shape(),
        }
        .into());
    }
    let base = w0.matmul(x)?;
    let path = adapter_path(adapter, x, train_rng)?;
    Ok(base.add(&path)?)
}
