//! Reverse-mode differentiation through the unrolled Sinkhorn iteration and
//! the small dense networks built on it, plus finite-difference checks.

mod dense;
mod gate;
mod gradcheck;
mod sinkhorn_vjp;
mod tape;

pub use dense::{dense_forward_backward, Activation, DenseGrads, DenseLayer};
pub use gate::{run_gradient_gate, GateRow, GATE_STEP, SORTNET_FLOOR};
pub use gradcheck::{central_difference, finite_diff_check, finite_diff_check_floor, GradCheck, REL_FLOOR};
pub use sinkhorn_vjp::{sinkhorn_forward, sinkhorn_vjp, SinkhornTrace};
pub use tape::{Gradients, Tape, Var};
