use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

use super::tape::Tape;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

/// Affine layer `act(x Wᵀ + b)` applied to each row of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T: Scalar> {
    /// `out × in`
    pub weight: Matrix<T>,
    /// `1 × out`
    pub bias: Matrix<T>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads<T: Scalar> {
    pub weight: Matrix<T>,
    pub bias: Matrix<T>,
    pub input: Matrix<T>,
}

/// Forward pass on `input` (`batch × in`) and the exact reverse pass for
/// `upstream` (`batch × out`).
pub fn dense_forward_backward<T: Scalar>(
    layer: &DenseLayer<T>,
    input: &Matrix<T>,
    upstream: &Matrix<T>,
) -> Result<(Matrix<T>, DenseGrads<T>)> {
    let (out_dim, in_dim) = layer.weight.shape();
    if layer.bias.shape() != (1, out_dim) || input.cols() != in_dim {
        return Err(Error::Dimension(format!(
            "weight {:?}, bias {:?}, input {:?}",
            layer.weight.shape(),
            layer.bias.shape(),
            input.shape()
        )));
    }
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone());
    let w = tape.leaf(layer.weight.clone());
    let b = tape.leaf(layer.bias.clone());
    let pre = tape.matmul_nt(x, w)?;
    let mut out = tape.add_row_bias(pre, b)?;
    if layer.activation == Activation::Relu {
        out = tape.relu(out)?;
    }
    let grads = tape.backward(out, upstream)?;
    Ok((
        tape.value(out).clone(),
        DenseGrads {
            weight: grads.wrt(w),
            bias: grads.wrt(b),
            input: grads.wrt(x),
        },
    ))
}
