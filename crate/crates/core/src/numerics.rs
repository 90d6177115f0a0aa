//! Dense 64-bit arithmetic, the Adam optimizer, softmax cross-entropy over an
//! output slice, and a central-difference gradient oracle.

mod adam;
mod gradcheck;
mod loss;
mod matrix;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use gradcheck::{central_difference, finite_diff_check, relative_error};
pub use loss::softmax_xent_slice;
pub use matrix::Matrix;
