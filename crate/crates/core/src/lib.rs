//! Keyframe-based text-to-motion generation toolkit.
//!
//! The pipeline has three trained stages plus supporting machinery:
//!
//! * [`motion`] — redundant motion representation (root velocities, local
//!   positions/velocities, 6D rotations, foot contacts), forward kinematics,
//!   and file formats.
//! * [`select`] — keyframe selection: uniform spacing, two dynamic programs
//!   (maximum dispersion, minimum interpolation error), and a greedy
//!   interval variant.
//! * [`interp`] — linear and spherical-linear infilling between keyframes.
//! * [`nn`] — reverse-mode autodiff tensors, transformer blocks, Adam, and
//!   checkpointing; everything generic over the scalar type.
//! * [`vae`] — transformer VAE that compresses K keyframes (plus their
//!   indices) into a short sequence of latent tokens.
//! * [`diffusion`] — latent DDPM/DDIM with a parallel skip-transformer
//!   denoiser and classifier-free guidance.
//! * [`mmae`] — residual-conditioned masked motion autoencoder that infills
//!   full sequences from keyframes.
//! * [`metrics`] — FID, diversity, multimodality, MMD, R-precision, MPJPE,
//!   and PA-MPJPE with repeat-evaluation confidence intervals.
//! * [`features`] — deterministic text and motion feature extractors.
//! * [`synth`] — seeded synthetic motion families for tests and demos.
//!
//! All numeric code is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below pin the default double-precision instantiations.

pub mod diffusion;
pub mod error;
pub mod features;
pub mod interp;
pub mod metrics;
pub mod mmae;
pub mod motion;
pub mod nn;
pub mod real;
pub mod rng;
pub mod select;
pub mod synth;
pub mod vae;

pub use error::{Error, Result};
pub use real::{real, Real};

/// Double-precision motion sequence, the default working type.
pub type MotionSequence64 = motion::MotionSequence<f64>;
/// Single-precision motion sequence, matching on-disk storage.
pub type MotionSequence32 = motion::MotionSequence<f32>;
/// Double-precision skeleton.
pub type Skeleton64 = motion::Skeleton<f64>;
