//! Kernel preference visualization for 3D convolutional networks.
//!
//! The crate splits a kernel's preferred input into a static texture and a
//! sequence of per-frame deformation fields:
//!
//! 1. [`stage1`] optimizes a video that maximally activates one kernel.
//! 2. [`stage2`] fits a [`StaticFactor`] and a [`DeformationSequence`] whose
//!    bilinear warps reconstruct that video.
//! 3. [`flow`] turns the deformation fields into HSV motion images.
//!
//! Every differentiable primitive carries a hand-written backward pass, so
//! the crate needs nothing beyond `alloc`.

#![no_std]
#![forbid(unsafe_code)]
// `!(x > 0.0)` style checks are there to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod fft;
pub mod flow;
pub mod loss;
pub mod net;
pub mod optim;
pub mod rng;
pub mod stage1;
pub mod stage2;
pub mod tensor;
pub mod warp;

pub use error::{Error, ParamStats, Result};
pub use net::{KernelRef, NetworkAdapter, ReferenceNet, Tap};
pub use rng::RandomSource;
pub use tensor::{DeformationSequence, FeatureMap, StaticFactor, VideoTensor};

/// Toolkit version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
