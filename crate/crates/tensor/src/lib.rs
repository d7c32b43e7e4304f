//! Dense f64 tensors and a define-by-run reverse-mode differentiation tape.
//!
//! Values live in [`Tensor`]s; a [`Tape`] records every operation applied to
//! them and hands back [`Var`] handles. Calling [`Tape::backward`] on a scalar
//! handle yields the gradient of every trainable leaf.
//!
//! ```
//! use tensor::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.param(Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap());
//! let sq = tape.mul(x, x).unwrap();
//! let y = tape.sum(sq);
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0, 1.0]);
//! ```

pub mod error;
pub mod gradcheck;
mod kernels;
mod ops;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_at, probe_at, relative_error, Probe, DEFAULT_EPS};
pub use ops::sigmoid;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
