//! A frozen encoder + denoiser pair and the generation variants compared in
//! experiments.

use rayon::prelude::*;

use crate::correct::ProjectionParams;
use crate::diffusion::{
    sample, DenoiserConfig, DenoiserParams, DiffusionTrainConfig, NoiseSchedule, SampleOutput, SwitchOff, SwitchOffPolicy, TrainLog,
};
use crate::encoder::{encode, train_encoder_jointly, BiasMatrix, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::evalkit::{composition_score, CompositionScore};
use crate::reweight::{build_bias_matrix, ReweightParams};
use crate::synthworld::{make_prompt, Image, PromptTemplate, Sample, SceneSpec};
use crate::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Pipeline {
    pub encoder: EncoderParams,
    pub denoiser: DenoiserParams,
    pub schedule: NoiseSchedule,
}

/// How a prompt is turned into conditioning.
#[derive(Clone, Debug, PartialEq)]
pub enum Variant {
    Baseline,
    Reweight(ReweightParams),
    Projection(ProjectionParams),
    /// Projection for `t > round(fraction * T)`, original embedding after.
    SwitchOff(ProjectionParams, f64),
}

impl Variant {
    pub fn tag(&self) -> String {
        match self {
            Variant::Baseline => "baseline".into(),
            Variant::Reweight(_) => "+reweight".into(),
            Variant::Projection(p) => format!("+{}", p.kind.label()),
            Variant::SwitchOff(p, f) => format!("+{}+SwitchOff@{f}", p.kind.label()),
        }
    }
}

/// Seed of image `k` of prompt `i`; identical across variants so
/// comparisons are paired.
pub fn image_seed(base: u64, prompt: usize, k: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((prompt as u64) << 20 | k as u64)
}

/// Joint encoder + denoiser training from fresh initializations.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub encoder: EncoderConfig,
    pub denoiser: DenoiserConfig,
    pub train: DiffusionTrainConfig,
    pub init_seed: u64,
}

impl PretrainConfig {
    pub fn new(steps: usize, causal: bool, seed: u64) -> Self {
        Self {
            encoder: EncoderConfig {
                causal,
                ..EncoderConfig::default()
            },
            denoiser: DenoiserConfig::default(),
            train: DiffusionTrainConfig::with_steps(steps, seed.wrapping_add(2)),
            init_seed: seed,
        }
    }
}

pub fn pretrain(corpus: &[Sample], schedule: &NoiseSchedule, config: &PretrainConfig) -> Result<(Pipeline, TrainLog)> {
    let enc = EncoderParams::init(&config.encoder, config.init_seed)?;
    let den = DenoiserParams::init(&config.denoiser, config.init_seed)?;
    let (enc, den, log) = train_encoder_jointly(corpus, &enc, &den, schedule, &config.train)?;
    Ok((Pipeline::new(enc, den, schedule.clone())?, log))
}

enum Conditioning {
    Fixed(Tensor),
    Switch(Tensor, Tensor, SwitchOffPolicy),
}

impl Pipeline {
    pub fn new(encoder: EncoderParams, denoiser: DenoiserParams, schedule: NoiseSchedule) -> Result<Self> {
        if encoder.config.d != denoiser.config.text_dim {
            return Err(Error::Shape(format!(
                "encoder width {} does not match denoiser text width {}",
                encoder.config.d, denoiser.config.text_dim
            )));
        }
        Ok(Self {
            encoder,
            denoiser,
            schedule,
        })
    }

    pub fn embed(&self, prompt: &PromptTemplate, bias: Option<&BiasMatrix>) -> Result<Tensor> {
        Ok(encode(&self.encoder, &prompt.tokens, bias)?.0)
    }

    fn conditioning(&self, variant: &Variant, prompt: &PromptTemplate) -> Result<Conditioning> {
        Ok(match variant {
            Variant::Baseline => Conditioning::Fixed(self.embed(prompt, None)?),
            Variant::Reweight(p) => {
                let bias = build_bias_matrix(prompt, p, prompt.len())?;
                Conditioning::Fixed(self.embed(prompt, Some(&bias))?)
            }
            Variant::Projection(p) => Conditioning::Fixed(p.apply(&self.embed(prompt, None)?)?),
            Variant::SwitchOff(p, fraction) => {
                let c = self.embed(prompt, None)?;
                let projected = p.apply(&c)?;
                Conditioning::Switch(c, projected, SwitchOffPolicy::from_fraction(*fraction, &self.schedule)?)
            }
        })
    }

    /// One image (and the maps at `record` timesteps) for `prompt`.
    pub fn generate(&self, variant: &Variant, prompt: &PromptTemplate, seed: u64, record: &[usize]) -> Result<SampleOutput> {
        match self.conditioning(variant, prompt)? {
            Conditioning::Fixed(c) => sample(&self.denoiser, &c, seed, &self.schedule, record),
            Conditioning::Switch(original, projected, policy) => {
                let sched = SwitchOff {
                    original: &original,
                    projected: &projected,
                    policy,
                };
                sample(&self.denoiser, &sched, seed, &self.schedule, record)
            }
        }
    }

    /// Images for every `(scene, k)` with `k < seeds`, scene-major order.
    pub fn generate_set(&self, variant: &Variant, scenes: &[SceneSpec], seeds: usize, base_seed: u64) -> Result<Vec<Image>> {
        let prompts = scenes.iter().map(make_prompt).collect::<Result<Vec<_>>>()?;
        let conds = prompts
            .iter()
            .map(|p| self.conditioning(variant, p))
            .collect::<Result<Vec<_>>>()?;
        let jobs: Vec<(usize, usize)> = (0..scenes.len()).flat_map(|i| (0..seeds).map(move |k| (i, k))).collect();
        jobs.par_iter()
            .map(|&(i, k)| {
                let seed = image_seed(base_seed, i, k);
                let out = match &conds[i] {
                    Conditioning::Fixed(c) => sample(&self.denoiser, c, seed, &self.schedule, &[])?,
                    Conditioning::Switch(original, projected, policy) => {
                        let sched = SwitchOff {
                            original,
                            projected,
                            policy: *policy,
                        };
                        sample(&self.denoiser, &sched, seed, &self.schedule, &[])?
                    }
                };
                Ok(out.image)
            })
            .collect()
    }

    /// Composition scores for [`Pipeline::generate_set`].
    pub fn evaluate(&self, variant: &Variant, scenes: &[SceneSpec], seeds: usize, base_seed: u64) -> Result<Evaluation> {
        let images = self.generate_set(variant, scenes, seeds, base_seed)?;
        let scores = images
            .iter()
            .enumerate()
            .map(|(n, img)| composition_score(img, &scenes[n / seeds]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Evaluation {
            seeds,
            scores,
            images,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub seeds: usize,
    /// Scene-major, `seeds` per scene.
    pub scores: Vec<CompositionScore>,
    pub images: Vec<Image>,
}

impl Evaluation {
    pub fn mean(&self) -> f64 {
        mean(self.scores.iter().map(|s| s.value))
    }

    /// Mean over scenes selected by `keep(scene_index)`.
    pub fn mean_where(&self, keep: impl Fn(usize) -> bool) -> (f64, usize) {
        let vals: Vec<f64> = self
            .scores
            .iter()
            .enumerate()
            .filter(|(n, _)| keep(n / self.seeds))
            .map(|(_, s)| s.value)
            .collect();
        (mean(vals.iter().copied()), vals.len())
    }
}

pub(crate) fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}
