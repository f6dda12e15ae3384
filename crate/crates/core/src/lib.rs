//! A desk-scale laboratory for attribute binding in text-conditioned
//! diffusion: a toy text encoder with attention tracing, attention
//! contribution analysis, logit reweighting, embedding optimization,
//! linear projection adapters and a switch-off sampler, all over a synthetic
//! two-object scene world with an exact composition scorer.

pub mod checkpoint;
pub mod contrib;
pub mod correct;
pub mod diffusion;
pub mod encoder;
pub mod error;
pub mod evalkit;
pub mod numkit;
pub mod pipeline;
pub mod plot;
pub mod reweight;
pub mod synthworld;

pub use error::{Error, Result};
pub use numkit::{Real, Rng, Tensor};
