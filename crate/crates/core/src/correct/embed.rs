//! Per-prompt optimization of the text embedding itself, optionally limited
//! to a subset of token positions.

use super::train::LossRow;
use crate::diffusion::{denoiser_backward, denoiser_forward_with_tape, noisy_example, DenoiserParams, NoiseSchedule};
use crate::encoder::{encode, EncoderParams};
use crate::error::{Error, Result};
use crate::numkit::{AdamConfig, AdamState, Real, Rng, Tensor};
use crate::synthworld::{Image, PromptTemplate};

/// Which token positions may change.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenMask {
    pub mask: Vec<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskPreset {
    Adjectives,
    Nouns,
    AdjectivesNouns,
    All,
}

impl MaskPreset {
    pub const ALL: [MaskPreset; 4] = [Self::Adjectives, Self::Nouns, Self::AdjectivesNouns, Self::All];

    pub fn name(self) -> &'static str {
        match self {
            Self::Adjectives => "adjectives",
            Self::Nouns => "nouns",
            Self::AdjectivesNouns => "adjectives+nouns",
            Self::All => "all",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown token mask preset {s:?}")))
    }
}

impl TokenMask {
    pub fn all(n: usize) -> Self {
        Self { mask: vec![true; n] }
    }

    pub fn none(n: usize) -> Self {
        Self { mask: vec![false; n] }
    }

    /// Mask built from the prompt's attribute/object slots.
    pub fn preset(prompt: &PromptTemplate, preset: MaskPreset) -> Self {
        let mut mask = vec![false; prompt.len()];
        let sl = &prompt.slots;
        let adjectives = [sl.a1, sl.a2];
        let nouns = [sl.o1, sl.o2];
        let chosen: Vec<Option<usize>> = match preset {
            MaskPreset::Adjectives => adjectives.to_vec(),
            MaskPreset::Nouns => nouns.to_vec(),
            MaskPreset::AdjectivesNouns => adjectives.into_iter().chain(nouns).collect(),
            MaskPreset::All => return Self::all(prompt.len()),
        };
        for i in chosen.into_iter().flatten() {
            mask[i] = true;
        }
        Self { mask }
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn is_superset_of(&self, other: &TokenMask) -> bool {
        self.len() == other.len() && self.mask.iter().zip(&other.mask).all(|(&a, &b)| a || !b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbedOptConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for EmbedOptConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            batch: 4,
            lr: 1e-2,
            seed: 0,
        }
    }
}

/// A fixed noisy example for the embedding objective.
#[derive(Clone, Debug)]
pub struct EmbedExample<R = f32> {
    pub x_t: Tensor<R>,
    pub eps: Tensor<R>,
    pub t: usize,
}

/// Sum over `examples` of the mean squared noise error under embedding `c`,
/// divided by the number of examples, and its gradient with respect to `c`.
pub fn embedding_objective<R: Real>(
    c: &Tensor<R>,
    denoiser: &DenoiserParams<R>,
    examples: &[EmbedExample<R>],
) -> Result<(f64, Tensor<R>)> {
    if examples.is_empty() {
        return Err(Error::Empty("embedding objective batch"));
    }
    let mut scratch = denoiser.zeros_like();
    let mut dc = Tensor::zeros(c.dims());
    let mut loss = 0.0;
    let norm = (examples.len() * examples[0].eps.len()) as f64;
    for ex in examples {
        let (eps_hat, tape) = denoiser_forward_with_tape(denoiser, &ex.x_t, c, ex.t)?;
        let mut g = Tensor::zeros(ex.eps.dims());
        for ((gv, &a), &b) in g.data_mut().iter_mut().zip(eps_hat.data()).zip(ex.eps.data()) {
            let d = a - b;
            loss += d.as_f64() * d.as_f64();
            *gv = R::of(2.0 / norm) * d;
        }
        dc.add_assign(&denoiser_backward(denoiser, &tape, c, &g, &mut scratch));
    }
    Ok((loss / norm, dc))
}

/// Examples drawn with `Rng::stream(seed, i)`, cycling through `images`.
pub fn embedding_examples(images: &[Image], count: usize, seed: u64, schedule: &NoiseSchedule) -> Result<Vec<EmbedExample>> {
    if images.is_empty() {
        return Err(Error::Empty("images for embedding optimization"));
    }
    (0..count)
        .map(|i| {
            let mut rng = Rng::stream(seed, i as u64);
            let ex = noisy_example(&mut rng, images[i % images.len()].data(), schedule)?;
            Ok(EmbedExample {
                x_t: ex.x_t,
                eps: ex.eps,
                t: ex.t,
            })
        })
        .collect()
}

/// Adam on the embedding starting from `c0`; rows outside `mask` never move.
pub fn optimize_embedding_from(
    c0: &Tensor,
    images: &[Image],
    denoiser: &DenoiserParams,
    schedule: &NoiseSchedule,
    config: &EmbedOptConfig,
    mask: &TokenMask,
) -> Result<(Tensor, Vec<LossRow>)> {
    if images.is_empty() {
        return Err(Error::Empty("images for embedding optimization"));
    }
    if mask.len() != c0.rows() {
        return Err(Error::Shape(format!(
            "token mask has {} entries for {} tokens",
            mask.len(),
            c0.rows()
        )));
    }
    if config.batch == 0 {
        return Err(Error::Config("embedding optimization needs a positive batch".into()));
    }
    let mut c = c0.clone();
    let mut opt = AdamState::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        &[&c],
    );
    let mut rows = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut rng = Rng::stream(config.seed, step as u64 + 1);
        let batch: Vec<EmbedExample> = (0..config.batch)
            .map(|_| {
                let img = &images[rng.below(images.len())];
                noisy_example(&mut rng, img.data(), schedule).map(|ex| EmbedExample {
                    x_t: ex.x_t,
                    eps: ex.eps,
                    t: ex.t,
                })
            })
            .collect::<Result<_>>()?;
        let (loss, mut dc) = embedding_objective(&c, denoiser, &batch)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        for (i, &m) in mask.mask.iter().enumerate() {
            if !m {
                dc.row_mut(i).fill(0.0);
            }
        }
        rows.push(LossRow {
            step,
            loss,
            lr: config.lr,
        });
        opt.step(&mut [&mut c], &[&dc])?;
    }
    Ok((c, rows))
}

/// Optimizes the encoder output for `prompt` towards `images`.
pub fn optimize_embedding(
    encoder: &EncoderParams,
    prompt: &PromptTemplate,
    images: &[Image],
    denoiser: &DenoiserParams,
    schedule: &NoiseSchedule,
    config: &EmbedOptConfig,
    mask: &TokenMask,
) -> Result<(Tensor, Vec<LossRow>)> {
    let (c0, _) = encode(encoder, &prompt.tokens, None)?;
    optimize_embedding_from(&c0, images, denoiser, schedule, config, mask)
}
