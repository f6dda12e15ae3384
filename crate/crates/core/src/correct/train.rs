//! Adapter training against a frozen encoder and denoiser.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use super::projection::{projection_backward, ProjectionKind, ProjectionParams};
use super::embed::EmbedExample;
use crate::diffusion::{denoiser_backward, denoiser_forward_with_tape, noisy_example, DenoiserParams, NoiseSchedule};
use crate::encoder::{encode, EncoderParams};
use crate::error::{Error, Result};
use crate::numkit::{AdamConfig, AdamState, MultiStepLr, Real, Rng, Tensor};
use crate::synthworld::Sample;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Decay points as fractions of `steps`.
    pub decay_at: Vec<f64>,
    pub gamma: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// 3000 steps, batch 4, lr 1e-3, x0.1 at 40% and 64%.
    pub fn desk() -> Self {
        Self {
            steps: 3000,
            batch: 4,
            lr: 1e-3,
            decay_at: vec![0.4, 0.64],
            gamma: 0.1,
            seed: 0,
        }
    }

    /// 25000 steps, batch 4, lr 1e-5, x0.1 at steps 10000 and 16000.
    pub fn full() -> Self {
        Self {
            steps: 25_000,
            lr: 1e-5,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("projection training needs a positive batch".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.decay_at.iter().any(|&f| !(f > 0.0 && f < 1.0)) {
            return Err(Error::Config("decay points must lie strictly inside the run".into()));
        }
        Ok(())
    }

    pub fn milestones(&self) -> Vec<usize> {
        self.decay_at
            .iter()
            .map(|f| (f * self.steps as f64).round() as usize)
            .collect()
    }

    pub fn schedule(&self) -> MultiStepLr {
        MultiStepLr {
            base: self.lr,
            milestones: self.milestones(),
            gamma: self.gamma,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

pub fn write_loss_csv(path: &Path, rows: &[LossRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,loss,lr")?;
    for r in rows {
        writeln!(f, "{},{},{}", r.step, r.loss, r.lr)?;
    }
    f.flush()?;
    Ok(())
}

/// Caches frozen-encoder outputs per distinct caption.
pub(crate) struct EmbeddingCache<'a> {
    encoder: &'a EncoderParams,
    cache: HashMap<Vec<u16>, Tensor>,
}

impl<'a> EmbeddingCache<'a> {
    pub(crate) fn new(encoder: &'a EncoderParams) -> Self {
        Self {
            encoder,
            cache: HashMap::new(),
        }
    }

    pub(crate) fn get(&mut self, tokens: &[u16]) -> Result<&Tensor> {
        if !self.cache.contains_key(tokens) {
            let (c, _) = encode(self.encoder, tokens, None)?;
            self.cache.insert(tokens.to_vec(), c);
        }
        Ok(&self.cache[tokens])
    }
}

/// Mean squared noise error over `(embedding, example)` pairs with the
/// adapter applied to each embedding, and its gradient with respect to `W`
/// and `b`. The denoiser is only read.
pub fn projection_objective<R: Real>(
    proj: &ProjectionParams<R>,
    denoiser: &DenoiserParams<R>,
    batch: &[(Tensor<R>, EmbedExample<R>)],
) -> Result<(f64, ProjectionParams<R>)> {
    if batch.is_empty() {
        return Err(Error::Empty("projection objective batch"));
    }
    let mut grads = ProjectionParams::zeros(proj.kind, proj.s, proj.width())?;
    // Frozen-model gradients land here and are dropped.
    let mut scratch = denoiser.zeros_like();
    let norm = (batch.len() * batch[0].1.eps.len()) as f64;
    let mut loss = 0.0;
    for (c, ex) in batch {
        let cp = proj.apply(c)?;
        let (eps_hat, tape) = denoiser_forward_with_tape(denoiser, &ex.x_t, &cp, ex.t)?;
        let mut g = Tensor::zeros(ex.eps.dims());
        for ((gv, &a), &b) in g.data_mut().iter_mut().zip(eps_hat.data()).zip(ex.eps.data()) {
            let d = a - b;
            loss += d.as_f64() * d.as_f64();
            *gv = R::of(2.0 / norm) * d;
        }
        let dcp = denoiser_backward(denoiser, &tape, &cp, &g, &mut scratch);
        projection_backward(proj, c, &dcp, &mut grads);
    }
    Ok((loss / norm, grads))
}

/// Trains a zero-initialized adapter of `kind` (window radius `s`) on the
/// noise-prediction loss with encoder and denoiser held fixed. Only `W` and
/// `b` are updated; a per-step loss curve is returned. Zero steps return
/// the identity adapter.
pub fn train_projection(
    kind: ProjectionKind,
    s: usize,
    corpus: &[Sample],
    encoder: &EncoderParams,
    denoiser: &DenoiserParams,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
) -> Result<(ProjectionParams, Vec<LossRow>)> {
    let init = ProjectionParams::zeros(kind, s, encoder.config.d)?;
    train_projection_from(init, corpus, encoder, denoiser, schedule, config)
}

/// Continues training from `init`.
pub fn train_projection_from(
    init: ProjectionParams,
    corpus: &[Sample],
    encoder: &EncoderParams,
    denoiser: &DenoiserParams,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
) -> Result<(ProjectionParams, Vec<LossRow>)> {
    config.validate()?;
    init.validate()?;
    if init.width() != denoiser.config.text_dim || init.width() != encoder.config.d {
        return Err(Error::Shape(format!(
            "projection width {} does not match encoder {} / denoiser {}",
            init.width(),
            encoder.config.d,
            denoiser.config.text_dim
        )));
    }
    if corpus.is_empty() {
        return Err(Error::Empty("projection training corpus"));
    }
    let mut proj = init;
    let lr = config.schedule();
    let mut opt = AdamState::for_set(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        &proj,
    );
    let mut cache = EmbeddingCache::new(encoder);
    let mut rows = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut rng = Rng::stream(config.seed, step as u64 + 1);
        let mut batch = Vec::with_capacity(config.batch);
        for _ in 0..config.batch {
            let sample = &corpus[rng.below(corpus.len())];
            let ex = noisy_example(&mut rng, sample.image.data(), schedule)?;
            let c = cache.get(&sample.caption.tokens)?.clone();
            batch.push((
                c,
                EmbedExample {
                    x_t: ex.x_t,
                    eps: ex.eps,
                    t: ex.t,
                },
            ));
        }
        let (loss, grads) = projection_objective(&proj, denoiser, &batch)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        let rate = lr.lr_at(step);
        rows.push(LossRow { step, loss, lr: rate });
        opt.set_lr(rate);
        opt.step_set(&mut proj, &grads)?;
    }
    Ok((proj, rows))
}
