//! Toy transformer text encoder with full attention tracing and optional
//! additive logit bias.

mod forward;
mod params;

pub use forward::{encode, encode_backward, encode_with_tape, AttentionTrace, BiasMatrix, EncoderTape, LayerTrace};
pub use params::{EncoderConfig, EncoderLayer, EncoderParams};

use crate::diffusion::{train_diffusion, DenoiserParams, DiffusionTrainConfig, EncoderMode, NoiseSchedule, TrainLog};
use crate::synthworld::Sample;
use crate::Result;

/// Trains encoder and denoiser end to end on the noise-prediction loss.
pub fn train_encoder_jointly(
    corpus: &[Sample],
    encoder_init: &EncoderParams,
    denoiser_init: &DenoiserParams,
    schedule: &NoiseSchedule,
    config: &DiffusionTrainConfig,
) -> Result<(EncoderParams, DenoiserParams, TrainLog)> {
    let mut enc = encoder_init.clone();
    let mut den = denoiser_init.clone();
    let log = train_diffusion(corpus, EncoderMode::Joint(&mut enc), &mut den, schedule, config)?;
    Ok((enc, den, log))
}

#[cfg(test)]
mod tests;
