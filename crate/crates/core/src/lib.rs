//! Dynamic U-Net segmentation kit.
//!
//! A self-contained dense-tensor engine with tape-based reverse-mode
//! differentiation, a modulated deformable convolution, the three
//! dynamically calibrated layers (convolution, downsampling, upsampling),
//! config-driven assembly of six encoder-decoder variants, and a synthetic
//! segmentation training harness with finite-difference gradient checking.

pub mod bench;
pub mod calib;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod network;
pub mod ops;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::{Precision, Scalar};
pub use tape::{Tape, ValueId};
pub use tensor::{LabelMap, Shape, Tensor};
