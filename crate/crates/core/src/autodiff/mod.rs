//! Dense tensors, a reverse-mode tape, Adam, gradient checking and parameter
//! checkpoints.

mod adam;
mod checkpoint;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use checkpoint::Checkpoint;
pub use gradcheck::{check_param_gradients, finite_diff_check, FdReport};
pub use params::{Gradients, ParamId, ParamStore};
pub use tape::{log_sum_exp, sigmoid, softmax, Tape, Var};
pub use tensor::Tensor;
