//! Preference-aligned diffusion on a synthetic task.
//!
//! The crate trains a small conditional denoising diffusion model on a toy
//! "event sequence" signal task, synthesises a preference dataset from the
//! model's own generations, fine-tunes it with the diffusion form of direct
//! preference optimisation, and measures the effect with objective metrics.

pub mod augment;
pub mod config;
pub mod denoiser;
pub mod diffusion;
pub mod dpo;
pub mod error;
pub mod evalsuite;
pub mod optim;
pub mod par;
pub mod pipeline;
pub mod preference;
pub mod rng;
pub mod schedule;
pub mod toyworld;
pub mod trainer;

pub use error::{Error, Result};
