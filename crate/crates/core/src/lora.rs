//! Low-rank adapters.
//!
//! A frozen weight `W0` (`d x k`) is adapted by a trainable pair
//! `A` (`r x k`) and `B` (`d x r`):
//!
//! ```text
//! y = W0 x + (alpha / r) * B (A drop(x))
//! ```
//!
//! `A` starts Gaussian (std 0.02) and `B` starts at zero, so a fresh adapter
//! leaves the base model untouched. Dropout is applied to the adapter input
//! only, with inverted scaling, and only in training mode.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, Reader, Writer};
use crate::tensor::{Matrix, Tape, TensorError, Var};

pub const DEFAULT_RANK: usize = 32;
pub const DEFAULT_ALPHA: f64 = 64.0;
pub const DEFAULT_DROPOUT: f64 = 0.05;
pub const INIT_STD: f64 = 0.02;

const ADAPTER_MAGIC: &[u8; 4] = b"LLAD";
const ADAPTER_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LoraError {
    #[error("rank {rank} must be in 1..={max} for a {d}x{k} weight")]
    Rank {
        rank: usize,
        d: usize,
        k: usize,
        max: usize,
    },
    #[error("dropout probability {0} outside [0, 1)")]
    Dropout(f64),
    #[error("alpha must be finite and positive, got {0}")]
    Alpha(f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Hyper-parameters shared by every adapter of a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub dropout: f64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self {
            rank: DEFAULT_RANK,
            alpha: DEFAULT_ALPHA,
            dropout: DEFAULT_DROPOUT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    /// `r x k`
    pub a: Matrix,
    /// `d x r`
    pub b: Matrix,
    pub rank: usize,
    pub alpha: f64,
    pub dropout: f64,
    pub target: String,
}

impl LoraAdapter {
    /// Creates an adapter for a `d x k` weight.
    pub fn init<R: Rng + ?Sized>(
        d: usize,
        k: usize,
        config: LoraConfig,
        target: impl Into<String>,
        rng: &mut R,
    ) -> Result<Self, LoraError> {
        let LoraConfig {
            rank,
            alpha,
            dropout,
        } = config;
        let max = d.min(k);
        if rank == 0 || rank > max {
            return Err(LoraError::Rank { rank, d, k, max });
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(LoraError::Dropout(dropout));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(LoraError::Alpha(alpha));
        }
        Ok(Self {
            a: Matrix::randn(rank, k, INIT_STD, rng),
            b: Matrix::zeros(d, rank),
            rank,
            alpha,
            dropout,
            target: target.into(),
        })
    }

    /// Multiplier applied to `B A`.
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// `(d, k)` of the weight this adapter attaches to.
    pub fn weight_shape(&self) -> (usize, usize) {
        (self.b.rows(), self.a.cols())
    }

    pub fn num_params(&self) -> usize {
        self.a.len() + self.b.len()
    }

    /// `(alpha / r) * B A`.
    pub fn delta(&self) -> Result<Matrix, LoraError> {
        Ok(self.b.matmul(&self.a)?.scale(self.scaling()))
    }

    fn check_weight(&self, w0: &Matrix) -> Result<(), LoraError> {
        if w0.shape() != self.weight_shape() {
            return Err(TensorError::ShapeMismatch {
                op: "lora",
                left: w0.shape(),
                right: self.weight_shape(),
            }
            .into());
        }
        Ok(())
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        w.str(&self.target);
        w.u64(self.rank as u64);
        w.f64(self.alpha);
        w.f64(self.dropout);
        w.matrix(&self.a);
        w.matrix(&self.b);
    }

    pub(crate) fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let target = r.str()?.to_string();
        let rank = r.usize()?;
        let alpha = r.f64()?;
        let dropout = r.f64()?;
        let a = r.matrix()?;
        let b = r.matrix()?;
        if a.rows() != rank || b.cols() != rank {
            return Err(CodecError::Invalid(format!(
                "adapter {target}: rank {rank} inconsistent with A {:?} / B {:?}",
                a.shape(),
                b.shape()
            )));
        }
        Ok(Self {
            a,
            b,
            rank,
            alpha,
            dropout,
            target,
        })
    }

    /// Serializes to the standalone adapter checkpoint format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.magic(ADAPTER_MAGIC, ADAPTER_VERSION);
        self.encode(&mut w);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LoraError> {
        let mut r = Reader::new(bytes);
        let version = r.magic(ADAPTER_MAGIC)?;
        if version != ADAPTER_VERSION {
            return Err(CodecError::Version(version).into());
        }
        let adapter = Self::decode(&mut r)?;
        r.expect_end()?;
        Ok(adapter)
    }

    pub fn save(&self, path: &Path) -> Result<(), LoraError> {
        std::fs::write(path, self.to_bytes()).map_err(CodecError::from)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LoraError> {
        let bytes = std::fs::read(path).map_err(CodecError::from)?;
        Self::from_bytes(&bytes)
    }
}

/// Builds an adapter from an explicit seed with the given hyper-parameters.
pub fn lora_init(
    d: usize,
    k: usize,
    rank: usize,
    alpha: f64,
    dropout: f64,
    seed: u64,
) -> Result<LoraAdapter, LoraError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LoraAdapter::init(
        d,
        k,
        LoraConfig {
            rank,
            alpha,
            dropout,
        },
        "adapter",
        &mut rng,
    )
}

/// Inverted-dropout mask: zero with probability `p`, `1 / (1 - p)` otherwise.
pub fn dropout_mask<R: Rng + ?Sized>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Matrix {
    let keep = 1.0 / (1.0 - p);
    let data = (0..rows * cols)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    Matrix::from_vec(rows, cols, data).expect("mask shape")
}

/// `W0 x + (alpha / r) B (A drop(x))`. Dropout is drawn from `train_rng`
/// when given; `None` means evaluation mode.
pub fn lora_forward<R: Rng + ?Sized>(
    w0: &Matrix,
    adapter: &LoraAdapter,
    x: &Matrix,
    train_rng: Option<&mut R>,
) -> Result<Matrix, LoraError> {
    adapter.check_weight(w0)?;
    let base = w0.matmul(x)?;
    let path = adapter_path(adapter, x, train_rng)?;
    Ok(base.add(&path)?)
}

/// The adapter contribution `(alpha / r) B (A drop(x))` alone.
pub fn adapter_path<R: Rng + ?Sized>(
    adapter: &LoraAdapter,
    x: &Matrix,
    train_rng: Option<&mut R>,
) -> Result<Matrix, LoraError> {
    let ax = match train_rng {
        Some(rng) if adapter.dropout > 0.0 => {
            let mask = dropout_mask(x.rows(), x.cols(), adapter.dropout, rng);
            adapter.a.matmul(&x.zip_map(&mask, |v, m| v * m))?
        }
        _ => adapter.a.matmul(x)?,
    };
    Ok(adapter.b.matmul(&ax)?.scale(adapter.scaling()))
}

/// `W0 + (alpha / r) B A`.
pub fn lora_merge(w0: &Matrix, adapter: &LoraAdapter) -> Result<Matrix, LoraError> {
    adapter.check_weight(w0)?;
    Ok(w0.add(&adapter.delta()?)?)
}

/// Trainable and frozen parameter counts for a `d x k` weight with rank `r`.
pub fn lora_param_count(d: usize, k: usize, r: usize) -> (usize, usize) {
    (r * k + d * r, d * k)
}

/// Tape handles of one attached adapter.
#[derive(Debug, Clone, Copy)]
pub struct AdapterVars {
    pub a: Var,
    pub b: Var,
}

/// Records `base_out + (alpha / r) B (A drop(x))` on the tape, where
/// `base_out` is the already-recorded frozen product `W0 x`.
pub fn lora_on_tape<R: Rng + ?Sized>(
    tape: &mut Tape<'_>,
    adapter: &LoraAdapter,
    vars: AdapterVars,
    base_out: Var,
    x: Var,
    train_rng: Option<&mut R>,
) -> Result<Var, TensorError> {
    let input = match train_rng {
        Some(rng) if adapter.dropout > 0.0 => {
            let (rows, cols) = tape.value(x).shape();
            let mask = tape.input(dropout_mask(rows, cols, adapter.dropout, rng));
            tape.mul(x, mask)?
        }
        _ => x,
    };
    let ax = tape.matmul(vars.a, input)?;
    let bax = tape.matmul(vars.b, ax)?;
    let scaled = tape.scale(bax, adapter.scaling())?;
    tape.add(base_out, scaled)
}

#[cfg(test)]
mod tests {
    use super::*;

    type NoRng = ChaCha8Rng;

    fn eval(w0: &Matrix, ad: &LoraAdapter, x: &Matrix) -> Matrix {
        lora_forward::<NoRng>(w0, ad, x, None).unwrap()
    }

    #[test]
    fn init_is_neutral() {
        let ad = lora_init(8, 8, 2, 4.0, 0.05, 1).unwrap();
        assert!(ad.b.data().iter().all(|&v| v == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w0 = Matrix::randn(8, 8, 1.0, &mut rng);
        let x = Matrix::randn(8, 3, 1.0, &mut rng);
        assert!(eval(&w0, &ad, &x).bit_eq(&w0.matmul(&x).unwrap()));
        // Even in training mode dropout only touches the zero path.
        let mut drop_rng = ChaCha8Rng::seed_from_u64(9);
        let train = lora_forward(&w0, &ad, &x, Some(&mut drop_rng)).unwrap();
        assert!(train.bit_eq(&w0.matmul(&x).unwrap()));
    }

    #[test]
    fn init_rejects_bad_rank() {
        assert!(matches!(
            lora_init(8, 8, 0, 1.0, 0.0, 0),
            Err(LoraError::Rank { rank: 0, .. })
        ));
        assert!(matches!(
            lora_init(4, 6, 5, 1.0, 0.0, 0),
            Err(LoraError::Rank { max: 4, .. })
        ));
        assert!(matches!(
            lora_init(4, 6, 2, 1.0, 1.0, 0),
            Err(LoraError::Dropout(_))
        ));
    }

    #[test]
    fn effective_scale_is_alpha_over_rank() {
        let ad = lora_init(4, 6, 2, 4.0, 0.0, 0).unwrap();
        assert_eq!(ad.scaling(), 2.0);
        let default = LoraConfig::default();
        assert_eq!(default.alpha / default.rank as f64, 2.0);
    }

    #[test]
    fn hand_computed_adapter_path() {
        let w0 = Matrix::zeros(2, 2);
        let ad = LoraAdapter {
            a: Matrix::from_rows(&[&[1.0, 0.0]]),
            b: Matrix::from_rows(&[&[1.0], &[0.0]]),
            rank: 1,
            alpha: 1.0,
            dropout: 0.0,
            target: "t".into(),
        };
        let y = eval(&w0, &ad, &Matrix::column(&[2.0, 5.0]));
        assert_eq!(y, Matrix::column(&[2.0, 0.0]));
    }

    #[test]
    fn eval_mode_is_repeatable() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ad = lora_init(5, 4, 2, 8.0, 0.3, 3).unwrap();
        ad.b = Matrix::randn(5, 2, 1.0, &mut rng);
        let w0 = Matrix::randn(5, 4, 1.0, &mut rng);
        let x = Matrix::randn(4, 2, 1.0, &mut rng);
        assert!(eval(&w0, &ad, &x).bit_eq(&eval(&w0, &ad, &x)));
    }

    #[test]
    fn merge_with_zero_b_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w0 = Matrix::randn(4, 4, 1.0, &mut rng);
        let ad = lora_init(4, 4, 2, 64.0, 0.05, 4).unwrap();
        assert!(lora_merge(&w0, &ad).unwrap().bit_eq(&w0));
    }

    #[test]
    fn merge_matches_direct_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w0 = Matrix::randn(4, 4, 1.0, &mut rng);
        let mut ad = lora_init(4, 4, 2, 3.0, 0.0, 5).unwrap();
        ad.b = Matrix::randn(4, 2, 1.0, &mut rng);
        let x = Matrix::randn(4, 1, 1.0, &mut rng);
        let merged = lora_merge(&w0, &ad).unwrap();
        let diff = merged.matmul(&x).unwrap().max_abs_diff(&eval(&w0, &ad, &x)).unwrap();
        assert!(diff < 1e-10);

        // Independent route: entry-wise triple loop for (alpha/r) B A.
        let s = ad.alpha / ad.rank as f64;
        let recovered = merged.sub(&w0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let mut acc = 0.0;
                for t in 0..2 {
                    acc += ad.b.get(i, t) * ad.a.get(t, j);
                }
                assert!((recovered.get(i, j) - s * acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let ad = lora_init(4, 6, 2, 1.0, 0.0, 0).unwrap();
        assert!(lora_merge(&Matrix::zeros(6, 4), &ad).is_err());
        assert!(lora_forward::<NoRng>(&Matrix::zeros(4, 6), &ad, &Matrix::zeros(4, 1), None).is_err());
    }

    #[test]
    fn param_counts() {
        assert_eq!(lora_param_count(8, 8, 2), (32, 64));
        assert_eq!(lora_param_count(4, 4, 4), (32, 16));
        let (t, f) = lora_param_count(1024, 1024, 32);
        assert_eq!((t, f), (65_536, 1_048_576));
        assert!((t as f64 / f as f64 - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn dropout_expectation_matches_eval_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut ad = lora_init(3, 4, 2, 4.0, 0.05, 1).unwrap();
        ad.b = Matrix::randn(3, 2, 1.0, &mut rng);
        let x = Matrix::uniform(4, 1, 0.5, 1.5, &mut rng);
        let eval_path = adapter_path::<NoRng>(&ad, &x, None).unwrap();
        let draws = 10_000;
        let mut acc = Matrix::zeros(3, 1);
        let mut drop_rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..draws {
            acc.add_assign(&adapter_path(&ad, &x, Some(&mut drop_rng)).unwrap())
                .unwrap();
        }
        let mean = acc.scale(1.0 / draws as f64);
        for i in 0..3 {
            let rel = (mean.get(i, 0) - eval_path.get(i, 0)).abs() / eval_path.get(i, 0).abs();
            assert!(rel < 0.02, "row {i}: rel {rel}");
        }
    }

    #[test]
    fn adapter_file_round_trips_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut ad = lora_init(6, 5, 3, 64.0, 0.05, 2).unwrap();
        ad.b = Matrix::randn(6, 3, 1.0, &mut rng);
        ad.target = "layers.1.v_proj".into();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("adapter.bin");
        ad.save(&path).unwrap();
        let back = LoraAdapter::load(&path).unwrap();
        assert!(back.a.bit_eq(&ad.a) && back.b.bit_eq(&ad.b));
        assert_eq!(back, ad);
        let mut bad = ad.to_bytes();
        bad[0] = b'X';
        assert!(LoraAdapter::from_bytes(&bad).is_err());
    }

    #[test]
    fn tape_path_matches_direct_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut ad = lora_init(5, 4, 2, 4.0, 0.0, 1).unwrap();
        ad.b = Matrix::randn(5, 2, 1.0, &mut rng);
        let w0 = Matrix::randn(5, 4, 1.0, &mut rng);
        let x = Matrix::randn(4, 3, 1.0, &mut rng);
        let mut tape = Tape::new();
        let wv = tape.constant(&w0);
        let xv = tape.constant(&x);
        let vars = AdapterVars {
            a: tape.param(&ad.a),
            b: tape.param(&ad.b),
        };
        let base = tape.matmul(wv, xv).unwrap();
        let y = lora_on_tape::<NoRng>(&mut tape, &ad, vars, base, xv, None).unwrap();
        assert!(tape.value(y).max_abs_diff(&eval(&w0, &ad, &x)).unwrap() < 1e-14);
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(wv).is_none());
        assert_eq!(grads.get(vars.a).unwrap().shape(), ad.a.shape());
        assert_eq!(grads.get(vars.b).unwrap().shape(), ad.b.shape());
    }
}
