//! A small dense tensor engine with define-by-run reverse-mode
//! differentiation, sized for desk-scale image networks.
//!
//! All values are `f64`. Ops are recorded on a [`Tape`] as they run;
//! [`Tape::backward`] sweeps it once in reverse. [`gradcheck`] verifies any
//! scalar function built from these ops against central differences.
//!
//! ```
//! use sfae_autodiff::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
//! let loss = x.mul(x).unwrap().sum_all().unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
//! ```

mod error;
pub mod gradcheck;
mod ops;
pub mod par;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{gradcheck, CoordCheck, GradCheckOptions, GradCheckReport};
pub use ops::elementwise::{selu, sigmoid, softmax, SELU_ALPHA, SELU_LAMBDA};
pub use par::ExecMode;
pub use tape::{
    conv2d, instance_norm, layer_norm, BinaryKind, Conv2dParams, CustomOp, Gradients, ReduceKind,
    Tape, UnaryKind, Var,
};
pub use tensor::{broadcast_shapes, flat_index, strides, Tensor};
