//! Volumetric 4D sequence modeling.
//!
//! The crate covers the full pipeline from colored mesh sequences to
//! generated ones: SDF grids and mesh extraction ([`geometry`]), a small
//! reverse-mode autodiff engine ([`autodiff`]), shape and color latent
//! codecs ([`shape_codec`], [`color_codec`]), the keyframe matrix
//! representation ([`matrix4d`]), a latent diffusion denoiser with
//! classifier-free guidance ([`diffusion`]), point-cloud and color metrics
//! ([`metrics`]), and the orchestration layer ([`pipeline`]) with its
//! synthetic dataset generator ([`synth`]).

pub mod autodiff;
pub mod color_codec;
pub mod diffusion;
pub mod embedding;
pub mod error;
pub mod geometry;
pub mod matrix4d;
pub mod metrics;
pub mod pipeline;
pub mod shape_codec;
pub mod synth;

pub use error::{Error, Result};
