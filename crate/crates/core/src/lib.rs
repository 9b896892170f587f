#![cfg_attr(not(feature = "std"), no_std)]

//! Mask-sequence-conditioned latent video diffusion at desk scale.
//!
//! The crate is split along the data flow of the system:
//!
//! - [`synthkit`] renders synthetic `<video, condition code, mask sequence>`
//!   triplets and provides the mask extraction, editing and union operators.
//! - [`codec`] is the invertible latent codec (space-time-to-depth) that also
//!   encodes mask sequences into motion features.
//! - [`diffusion`] holds the noise schedule, forward noising, loss and the
//!   ancestral sampler.
//! - [`denoiser`] is the noise predictor with its three conditioning paths,
//!   low-rank adapters and hand-written backward pass.
//! - [`trainer`] optimizes adapters with the diffusion + consistency loss.
//! - [`longgen`] chains clips into long videos.
//! - [`maskeval`] computes the mask mIoU metric.
//!
//! Everything here is pure computation over `alloc`; file formats and the
//! command line live in the companion `maskmotion` crate.

extern crate alloc;

pub mod codec;
pub mod denoiser;
pub mod diffusion;
mod error;
pub mod linalg;
pub mod longgen;
pub mod maskeval;
pub mod rng;
pub mod synthkit;
mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Latent, MaskSequence, MotionFeatures, Video};
