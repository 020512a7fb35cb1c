//! Dense matrices and a reverse-mode gradient tape, sized for the toy
//! transformer and its low-rank adapters. Everything runs in `f64`.

mod matrix;
mod tape;

pub use matrix::{gemm, Matrix};
pub use tape::{Gradients, OpKind, Tape, Var};

pub(crate) use tape::sigmoid;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {}x{} vs {}x{}", left.0, left.1, right.0, right.1)]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{rows}x{cols} matrix needs {} entries, got {len}", rows * cols)]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{0} needs at least one input")]
    Empty(&'static str),
    #[error("backward needs a 1x1 loss, got {}x{}", .0.0, .0.1)]
    NonScalarLoss((usize, usize)),
    #[error("finite-difference step {0} outside (0, 1e-2]")]
    BadEpsilon(f64),
    #[error("function is not deterministic (two evaluations at the same point differ)")]
    NonDeterministic,
}

/// `W * x`: a plain, bias-free linear map applied to a batch of column
/// vectors.
pub fn linear_forward(weight: &Matrix, x: &Matrix) -> Result<Matrix, TensorError> {
    weight.matmul(x)
}

/// Compares reverse-mode gradients of `f` against central differences.
///
/// `f` receives a fresh tape with one trainable leaf per entry of `params`
/// and must return a scalar node. Returns the maximum over all parameter
/// entries of `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(f: F, params: &[Matrix], epsilon: f64) -> Result<f64, TensorError>
where
    F: for<'t> Fn(&mut Tape<'t>, &[Var]) -> Result<Var, TensorError>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(TensorError::BadEpsilon(epsilon));
    }
    if params.is_empty() {
        return Ok(0.0);
    }

    let eval = |ps: &[Matrix]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p)).collect();
        let loss = f(&mut tape, &vars)?;
        tape.value(loss)
            .scalar()
            .ok_or(TensorError::NonScalarLoss(tape.value(loss).shape()))
    };

    let first = eval(params)?;
    let second = eval(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::NonDeterministic);
    }

    let analytic: Vec<Option<Matrix>> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
        let loss = f(&mut tape, &vars)?;
        let mut grads = tape.backward(loss)?;
        vars.iter().map(|v| grads.take(*v)).collect()
    };

    let mut work: Vec<Matrix> = params.to_vec();
    let mut worst: f64 = 0.0;
    for (pi, param) in params.iter().enumerate() {
        for idx in 0..param.len() {
            let orig = param.data()[idx];
            work[pi].data_mut()[idx] = orig + epsilon;
            let up = eval(&work)?;
            work[pi].data_mut()[idx] = orig - epsilon;
            let down = eval(&work)?;
            work[pi].data_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let a = analytic[pi].as_ref().map_or(0.0, |g| g.data()[idx]);
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}
