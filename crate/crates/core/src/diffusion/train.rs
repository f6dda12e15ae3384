//! Minibatch Adam on the noise-prediction objective, optionally
//! backpropagating into the text encoder.

use super::denoiser::{denoiser_backward, denoiser_forward_with_tape, DenoiserParams};
use super::schedule::{noise_with_alpha_bar, NoiseSchedule};
use crate::encoder::{encode, encode_backward, encode_with_tape, EncoderParams};
use crate::error::{Error, Result};
use crate::numkit::{AdamConfig, AdamState, MultiStepLr, ParamSet, Rng, Tensor};
use crate::synthworld::{Sample, PIXELS};

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: MultiStepLr,
    /// Rescale the summed gradient when its global norm exceeds this.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for DiffusionTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 8,
            lr: MultiStepLr {
                base: 2e-3,
                milestones: vec![1400, 1800],
                gamma: 0.3,
            },
            clip_norm: Some(1.0),
            seed: 0,
        }
    }
}

impl DiffusionTrainConfig {
    /// `steps` of batch 8 at lr 2e-3, decayed x0.3 at 70% and 90%.
    pub fn with_steps(steps: usize, seed: u64) -> Self {
        Self {
            steps,
            lr: MultiStepLr {
                base: 2e-3,
                milestones: vec![steps * 7 / 10, steps * 9 / 10],
                gamma: 0.3,
            },
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lr.base > 0.0 && self.lr.base.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr.base)));
        }
        Ok(())
    }
}

/// Encoder either held fixed or optimized together with the denoiser.
pub enum EncoderMode<'a> {
    Frozen(&'a EncoderParams),
    Joint(&'a mut EncoderParams),
}

#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    /// Mean minibatch loss of each step.
    pub losses: Vec<f64>,
}

/// Model-space target: pixels in `[0, 1]` mapped to `[-1, 1]`.
pub fn to_model_space(pixels: &[f32]) -> Tensor {
    Tensor::from_vec(&[pixels.len()], pixels.iter().map(|&v| 2.0 * v - 1.0).collect())
}

struct Draw {
    t: usize,
    eps: Tensor,
}

fn draw(rng: &mut Rng, schedule: &NoiseSchedule) -> Draw {
    let t = 1 + rng.below(schedule.t_max());
    Draw {
        t,
        eps: rng.normal_tensor(&[PIXELS], 1.0),
    }
}

/// Mean squared error over all values and its gradient scaled by `scale`
/// (pass `1 / (values * batch)` for a batch mean).
pub fn mse_and_grad(eps_hat: &Tensor, eps: &Tensor, scale: f32) -> (f64, Tensor) {
    let n = eps.len() as f64;
    let mut loss = 0.0;
    let g = eps_hat
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&a, &b)| {
            let d = a - b;
            loss += (d as f64) * (d as f64);
            2.0 * d * scale
        })
        .collect();
    (loss / n, Tensor::from_vec(eps.dims(), g))
}

fn clip<P: ParamSet<f32>>(grads: &mut P, extra: Option<&mut EncoderParams>, max_norm: f64) {
    let mut sq: f64 = grads.tensors().iter().map(|t| t.sum_sq() as f64).sum();
    if let Some(e) = extra.as_deref() {
        sq += e.tensors().iter().map(|t| t.sum_sq() as f64).sum::<f64>();
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = (max_norm / norm) as f32;
        for t in grads.tensors_mut() {
            t.scale(s);
        }
        if let Some(e) = extra {
            for t in e.tensors_mut() {
                t.scale(s);
            }
        }
    }
}

/// Trains `denoiser` in place. Every step draws `batch` samples uniformly
/// with replacement, a uniform timestep and fresh noise per sample, all from
/// `Rng::stream(seed, step + 1)`. A non-finite loss aborts with
/// [`Error::Diverged`].
pub fn train_diffusion(
    corpus: &[Sample],
    mut encoder: EncoderMode<'_>,
    denoiser: &mut DenoiserParams,
    schedule: &NoiseSchedule,
    config: &DiffusionTrainConfig,
) -> Result<TrainLog> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    let adam_cfg = AdamConfig {
        lr: config.lr.base,
        ..AdamConfig::default()
    };
    let mut den_opt = AdamState::for_set(adam_cfg.clone(), denoiser);
    let mut enc_opt = match &encoder {
        EncoderMode::Joint(e) => Some(AdamState::for_set(adam_cfg, &**e)),
        EncoderMode::Frozen(_) => None,
    };
    let mut log = TrainLog::default();
    let scale = 1.0 / (PIXELS * config.batch) as f32;
    for step in 0..config.steps {
        let mut rng = Rng::stream(config.seed, step as u64 + 1);
        let mut den_grads = denoiser.zeros_like();
        let mut enc_grads = match &encoder {
            EncoderMode::Joint(e) => Some(e.zeros_like()),
            EncoderMode::Frozen(_) => None,
        };
        let mut loss = 0.0;
        for _ in 0..config.batch {
            let sample = &corpus[rng.below(corpus.len())];
            let d = draw(&mut rng, schedule);
            let x0 = to_model_space(sample.image.data());
            let xt = noise_with_alpha_bar(&x0, &d.eps, schedule.alpha_bar(d.t))?;
            let tokens = &sample.caption.tokens;
            let (c, enc_tape) = match &encoder {
                EncoderMode::Frozen(e) => (encode(e, tokens, None)?.0, None),
                EncoderMode::Joint(e) => {
                    let (c, tape) = encode_with_tape(e, tokens, None)?;
                    (c, Some(tape))
                }
            };
            let (eps_hat, tape) = denoiser_forward_with_tape(denoiser, &xt, &c, d.t)?;
            let (l, g) = mse_and_grad(&eps_hat, &d.eps, scale);
            let dc = denoiser_backward(denoiser, &tape, &c, &g, &mut den_grads);
            if let (EncoderMode::Joint(e), Some(tape), Some(eg)) = (&encoder, enc_tape, enc_grads.as_mut()) {
                encode_backward(e, &tape, &dc, eg);
            }
            loss += l;
        }
        loss /= config.batch as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        log.losses.push(loss);
        if let Some(max) = config.clip_norm {
            clip(&mut den_grads, enc_grads.as_mut(), max);
        }
        let lr = config.lr.lr_at(step);
        den_opt.set_lr(lr);
        den_opt.step_set(denoiser, &den_grads)?;
        if let (EncoderMode::Joint(e), Some(opt), Some(g)) = (&mut encoder, enc_opt.as_mut(), enc_grads.as_ref()) {
            opt.set_lr(lr);
            opt.step_set(&mut **e, g)?;
        }
    }
    Ok(log)
}

/// Mean noise-prediction loss over `samples` with timestep and noise fixed
/// by `(seed, index)`, so repeated calls compare like with like. `embed`
/// supplies the conditioning for each sample.
pub fn fixed_batch_loss<F>(
    samples: &[Sample],
    denoiser: &DenoiserParams,
    schedule: &NoiseSchedule,
    seed: u64,
    mut embed: F,
) -> Result<f64>
where
    F: FnMut(&Sample) -> Result<Tensor>,
{
    if samples.is_empty() {
        return Err(Error::Empty("held-out batch"));
    }
    let mut total = 0.0;
    for (i, s) in samples.iter().enumerate() {
        let mut rng = Rng::stream(seed, i as u64);
        let d = draw(&mut rng, schedule);
        let x0 = to_model_space(s.image.data());
        let xt = noise_with_alpha_bar(&x0, &d.eps, schedule.alpha_bar(d.t))?;
        let c = embed(s)?;
        let (eps_hat, _) = denoiser_forward_with_tape(denoiser, &xt, &c, d.t)?;
        total += mse_and_grad(&eps_hat, &d.eps, 1.0).0;
    }
    Ok(total / samples.len() as f64)
}

/// [`fixed_batch_loss`] with plain encoder embeddings.
pub fn heldout_loss(
    samples: &[Sample],
    encoder: &EncoderParams,
    denoiser: &DenoiserParams,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<f64> {
    fixed_batch_loss(samples, denoiser, schedule, seed, |s| Ok(encode(encoder, &s.caption.tokens, None)?.0))
}

/// One noisy training example: the target noise and `x_t` at `t`.
pub struct NoisyExample {
    pub t: usize,
    pub eps: Tensor,
    pub x_t: Tensor,
}

/// Draws `t` uniformly in `1..=T` and fresh noise for `image`.
pub fn noisy_example(rng: &mut Rng, image: &[f32], schedule: &NoiseSchedule) -> Result<NoisyExample> {
    let d = draw(rng, schedule);
    let x0 = to_model_space(image);
    let x_t = noise_with_alpha_bar(&x0, &d.eps, schedule.alpha_bar(d.t))?;
    Ok(NoisyExample { t: d.t, eps: d.eps, x_t })
}
