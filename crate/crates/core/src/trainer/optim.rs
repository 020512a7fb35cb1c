//! AdamW with full-precision or block-quantized 8-bit moment storage.
//!
//! The 8-bit variant keeps the first moment and the square root of the
//! second moment as signed 8-bit absmax block codes. Storing `sqrt(v)`
//! rather than `v` halves its dynamic range, and on load every `sqrt(v)` is
//! floored at half its block's step so a small entry sharing a block with a
//! large one never divides by (nearly) zero.
//!
//! Codes are rounded stochastically. With round-to-nearest, the per-step
//! change of a slowly moving moment is often below half a step and is lost
//! every time, so the stored value stalls. The dither comes from a hash of
//! the step counter and entry index, which keeps runs reproducible without
//! carrying RNG state.

use serde::{Deserialize, Serialize};

use crate::codec::{CodecError, Reader, Writer};
use crate::quant::dequantize_slice;
use crate::tensor::{Matrix, TensorError};

use super::TrainError;

pub const STATE_BLOCK_SIZE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Moments {
    Full {
        m: Vec<f64>,
        v: Vec<f64>,
    },
    Quantized {
        m_codes: Vec<i8>,
        m_scales: Vec<f64>,
        r_codes: Vec<i8>,
        r_scales: Vec<f64>,
    },
}

/// Moments and step counter for one parameter matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamState {
    rows: usize,
    cols: usize,
    step: u64,
    moments: Moments,
}

impl ParamState {
    pub fn new(rows: usize, cols: usize, eight_bit: bool) -> Self {
        let n = rows * cols;
        let moments = if eight_bit {
            let blocks = n.div_ceil(STATE_BLOCK_SIZE);
            Moments::Quantized {
                m_codes: vec![0; n],
                m_scales: vec![0.0; blocks],
                r_codes: vec![0; n],
                r_scales: vec![0.0; blocks],
            }
        } else {
            Moments::Full {
                m: vec![0.0; n],
                v: vec![0.0; n],
            }
        };
        Self {
            rows,
            cols,
            step: 0,
            moments,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self.moments, Moments::Quantized { .. })
    }

    /// Bytes of moment storage.
    pub fn memory_bytes(&self) -> usize {
        state_bytes(self.rows * self.cols, self.is_quantized())
    }

    /// Current first and second moments in full precision.
    pub fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.moments {
            Moments::Full { m, v } => (m.clone(), v.clone()),
            Moments::Quantized {
                m_codes,
                m_scales,
                r_codes,
                r_scales,
            } => {
                let m = dequantize_slice(m_codes, m_scales, STATE_BLOCK_SIZE);
                let v = dequantize_slice(r_codes, r_scales, STATE_BLOCK_SIZE)
                    .iter()
                    .enumerate()
                    .map(|(i, r)| {
                        let s = r_scales[i / STATE_BLOCK_SIZE];
                        r.max(0.5 * s).powi(2)
                    })
                    .collect();
                (m, v)
            }
        }
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        w.u64(self.rows as u64);
        w.u64(self.cols as u64);
        w.u64(self.step);
        let f64s = |w: &mut Writer, xs: &[f64]| xs.iter().for_each(|x| w.f64(*x));
        let i8s = |w: &mut Writer, xs: &[i8]| xs.iter().for_each(|x| w.u8(*x as u8));
        match &self.moments {
            Moments::Full { m, v } => {
                w.u8(0);
                f64s(w, m);
                f64s(w, v);
            }
            Moments::Quantized {
                m_codes,
                m_scales,
                r_codes,
                r_scales,
            } => {
                w.u8(1);
                i8s(w, m_codes);
                f64s(w, m_scales);
                i8s(w, r_codes);
                f64s(w, r_scales);
            }
        }
    }

    pub(crate) fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let rows = r.usize()?;
        let cols = r.usize()?;
        let step = r.u64()?;
        let n = rows * cols;
        let blocks = n.div_ceil(STATE_BLOCK_SIZE);
        let f64s = |r: &mut Reader<'_>, k: usize| (0..k).map(|_| r.f64()).collect::<Result<Vec<_>, _>>();
        let i8s = |r: &mut Reader<'_>, k: usize| {
            (0..k)
                .map(|_| r.u8().map(|b| b as i8))
                .collect::<Result<Vec<_>, _>>()
        };
        let moments = match r.u8()? {
            0 => Moments::Full {
                m: f64s(r, n)?,
                v: f64s(r, n)?,
            },
            1 => Moments::Quantized {
                m_codes: i8s(r, n)?,
                m_scales: f64s(r, blocks)?,
                r_codes: i8s(r, n)?,
                r_scales: f64s(r, blocks)?,
            },
            t => return Err(CodecError::Invalid(format!("unknown moment tag {t}"))),
        };
        Ok(Self {
            rows,
            cols,
            step,
            moments,
        })
    }
}

/// Moment storage for `n` parameters.
pub fn state_bytes(n: usize, eight_bit: bool) -> usize {
    if eight_bit {
        2 * n + 2 * 8 * n.div_ceil(STATE_BLOCK_SIZE)
    } else {
        2 * 8 * n
    }
}

/// One AdamW update with bias correction and decoupled weight decay.
/// Non-finite gradients are rejected before anything is modified.
pub fn adamw_step(
    state: &mut ParamState,
    param: &mut Matrix,
    grad: &Matrix,
    hp: &AdamW,
) -> Result<(), TrainError> {
    let shape = (state.rows, state.cols);
    for (what, other) in [("param", param.shape()), ("grad", grad.shape())] {
        if other != shape {
            return Err(TensorError::ShapeMismatch {
                op: if what == "param" { "adamw_param" } else { "adamw_grad" },
                left: shape,
                right: other,
            }
            .into());
        }
    }
    if !grad.is_finite() {
        return Err(TrainError::NonFinite {
            step: state.step as usize + 1,
        });
    }
    let (mut m, mut v) = state.moments();
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    for (i, (p, &g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
        let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + hp.eps);
        *p -= hp.lr * (update + hp.weight_decay * *p);
    }
    state.moments = match state.moments {
        Moments::Full { .. } => Moments::Full { m, v },
        Moments::Quantized { .. } => {
            let r: Vec<f64> = v.iter().map(|x| x.sqrt()).collect();
            let (m_codes, m_scales) = quantize_dithered(&m, state.step, 0);
            let (r_codes, r_scales) = quantize_dithered(&r, state.step, 1);
            Moments::Quantized {
                m_codes,
                m_scales,
                r_codes,
                r_scales,
            }
        }
    };
    Ok(())
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform in `[0, 1)`, a pure function of its arguments.
fn dither(step: u64, stream: u64, index: usize) -> f64 {
    let h = splitmix64(step ^ splitmix64(stream ^ splitmix64(index as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// 8-bit absmax block quantization with stochastic rounding.
fn quantize_dithered(data: &[f64], step: u64, stream: u64) -> (Vec<i8>, Vec<f64>) {
    let mut codes = Vec::with_capacity(data.len());
    let mut scales = Vec::with_capacity(data.len().div_ceil(STATE_BLOCK_SIZE));
    for (b, block) in data.chunks(STATE_BLOCK_SIZE).enumerate() {
        let absmax = block.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if absmax == 0.0 {
            scales.push(0.0);
            codes.extend(std::iter::repeat_n(0, block.len()));
            continue;
        }
        scales.push(absmax / 127.0);
        codes.extend(block.iter().enumerate().map(|(i, &v)| {
            let u = dither(step, stream, b * STATE_BLOCK_SIZE + i);
            (v * 127.0 / absmax + u).floor().clamp(-127.0, 127.0) as i8
        }));
    }
    (codes, scales)
}

/// Mean of equally shaped micro-batch gradients.
pub fn accumulate(micro: &[Matrix]) -> Result<Matrix, TrainError> {
    let first = micro.first().ok_or(TrainError::EmptyAccumulation)?;
    let mut sum = first.clone();
    for g in &micro[1..] {
        sum.add_assign(g)?;
    }
    Ok(sum.scale(1.0 / micro.len() as f64))
}
