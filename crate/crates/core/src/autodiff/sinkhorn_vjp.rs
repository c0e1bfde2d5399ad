use crate::error::{Error, Result};
use crate::matrix::{DoublyStochasticMatrix, LogitsMatrix, Matrix, DEFAULT_DS_TOL};
use crate::scalar::Scalar;
use crate::sinkhorn::SinkhornConfig;

use super::tape::{Tape, Var};

/// Recorded forward pass of `S^L(X/τ)`, ready for vector-Jacobian products.
#[derive(Debug, Clone)]
pub struct SinkhornTrace<T: Scalar> {
    tape: Tape<T>,
    input: Var,
    output: Var,
    cfg: SinkhornConfig,
}

pub fn sinkhorn_forward<T: Scalar>(x: &LogitsMatrix<T>, cfg: &SinkhornConfig) -> Result<SinkhornTrace<T>> {
    let mut tape = Tape::new();
    let input = tape.leaf(x.matrix().clone());
    let (_, output) = tape.sinkhorn(input, cfg)?;
    Ok(SinkhornTrace {
        tape,
        input,
        output,
        cfg: *cfg,
    })
}

impl<T: Scalar> SinkhornTrace<T> {
    pub fn config(&self) -> &SinkhornConfig {
        &self.cfg
    }

    pub fn output(&self) -> DoublyStochasticMatrix<T> {
        DoublyStochasticMatrix::unchecked(self.tape.value(self.output).clone(), T::of(DEFAULT_DS_TOL))
    }

    /// `∂⟨upstream, S^L(X/τ)⟩ / ∂X`. `cfg` must be the configuration the
    /// trace was recorded with.
    pub fn vjp(&self, upstream: &Matrix<T>, cfg: &SinkhornConfig) -> Result<Matrix<T>> {
        if cfg != &self.cfg {
            return Err(Error::Tape(format!(
                "trace recorded with {:?}, asked to differentiate with {:?}",
                self.cfg, cfg
            )));
        }
        Ok(self.tape.backward(self.output, upstream)?.wrt(self.input))
    }
}

/// Forward and reverse pass in one call.
pub fn sinkhorn_vjp<T: Scalar>(
    x: &LogitsMatrix<T>,
    upstream: &Matrix<T>,
    cfg: &SinkhornConfig,
) -> Result<Matrix<T>> {
    sinkhorn_forward(x, cfg)?.vjp(upstream, cfg)
}
