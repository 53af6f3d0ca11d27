//! Online video deblurring with a spatio-temporal recurrent residual network
//! and dynamic temporal blending.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is pure
//! computation: tensors and reverse-mode differentiation, blur-pair
//! synthesis from high-speed footage, the three network variants, the
//! training objective and optimizer, and strictly-online stream
//! evaluation. File formats, timing and the command line live in the
//! `vdeblur` crate.
//!
//! The `std` feature enables runtime CPU feature detection in the
//! matrix-multiply kernels and adds [`stream::InstantClock`].

#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod autodiff;
pub mod conv;
mod error;
pub mod gradcheck;
pub mod model;
pub mod scalar;
pub mod stream;
pub mod synth;
pub mod tensor;
pub mod train;

pub use autodiff::{Tape, Var};
pub use conv::ConvSpec;
pub use error::{Error, Result};
pub use model::{ModelConfig, ModelParams, RecurrentState, Variant};
pub use scalar::Scalar;
pub use stream::{psnr, EvalReport, StreamSession};
pub use synth::{BlurPair, Frame, FrameSequence, SynthConfig};
pub use tensor::{Shape, Tensor};
pub use train::{AdamConfig, LossConfig, OptimState, PairedSequence, TrainBatch};
