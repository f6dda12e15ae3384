//! Pixel-space conditional diffusion over 16x16 scenes.

mod denoiser;
mod sampler;
mod schedule;
mod train;

pub use denoiser::{
    denoiser_backward, denoiser_forward, denoiser_forward_with_tape, patchify, time_embedding, unpatchify,
    CrossAttnMaps, DenoiserBlock, DenoiserConfig, DenoiserParams, DenoiserTape,
};
pub use sampler::{
    sample, sample_many, write_cross_attn_csv, EmbeddingSchedule, SampleOutput, SwitchOff, SwitchOffPolicy,
};
pub use schedule::{add_noise, noise_with_alpha_bar, NoiseSchedule};
pub use train::{
    fixed_batch_loss, heldout_loss, mse_and_grad, noisy_example, to_model_space, NoisyExample, train_diffusion, DiffusionTrainConfig, EncoderMode, TrainLog};

/// Trains a denoiser against a fixed encoder.
pub fn train_denoiser(
    corpus: &[crate::synthworld::Sample],
    encoder: &crate::encoder::EncoderParams,
    denoiser_init: &DenoiserParams,
    schedule: &NoiseSchedule,
    config: &DiffusionTrainConfig,
) -> crate::Result<(DenoiserParams, TrainLog)> {
    let mut den = denoiser_init.clone();
    let log = train_diffusion(corpus, EncoderMode::Frozen(encoder), &mut den, schedule, config)?;
    Ok((den, log))
}
