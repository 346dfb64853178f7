//! Reverse-mode differentiation substrate for small convolutional detectors:
//! a define-by-run tape over dense 4-D tensors, the handful of operations the
//! aggregation/enhancement cells and the detector head need, named parameter
//! storage with channel slicing for weight-shared sub-networks, SGD/Adam,
//! and a versioned weight checkpoint format.
//!
//! Training typically runs in `f32`; gradient checks instantiate the same
//! graph code in `f64`.

pub mod check;
pub mod checkpoint;
pub mod error;
pub mod init;
pub mod kernels;
pub mod optim;
pub mod scalar;
pub mod seed;
pub mod store;
pub mod tape;
pub mod tensor;

pub use error::{AutodiffError, Result};
pub use scalar::Scalar;
pub use store::{Binder, GradEntry, GradMap, ParamStore, SliceSpec};
pub use tape::{Tape, ValueId};
pub use tensor::{Shape, Tensor};
