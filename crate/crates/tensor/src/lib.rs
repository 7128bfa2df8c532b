//! Dense `f64` tensors with tape-based reverse-mode automatic
//! differentiation.
//!
//! Build a graph by placing [`Tensor`]s on a [`Tape`] and chaining ops;
//! every op returns a [`Var`] handle. [`Tape::backward`] on a scalar
//! populates gradients for all grad-enabled ancestors. Model parameters
//! live in a [`ParamStore`] and are bound onto a fresh tape per step;
//! [`Adam`] consumes the accumulated gradients.
//!
//! ```
//! use attnfid_tensor::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0), true);
//! let y = tape.mul(x, x).unwrap();
//! tape.backward(y).unwrap();
//! assert_eq!(tape.grad(x).unwrap().item(), 6.0);
//! ```

mod error;
mod gemm;
pub mod gradcheck;
mod ops;
mod optim;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use ops::{sigmoid, BCE_EPS, LEAKY_SLOPE};
pub use optim::{Adam, AdamConfig, Bound, Param, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
