//! DDPM ancestral sampling with a per-timestep choice of text embedding.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use super::denoiser::{denoiser_forward, CrossAttnMaps, DenoiserParams};
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::numkit::{Rng, Tensor};
use crate::synthworld::{Image, PIXELS};

/// Supplies the conditioning embedding for each reverse step.
pub trait EmbeddingSchedule: Sync {
    fn at(&self, t: usize) -> &Tensor;
}

impl EmbeddingSchedule for Tensor {
    fn at(&self, _t: usize) -> &Tensor {
        self
    }
}

/// Threshold timestep: steps `t >= tau` use the projected embedding, later
/// steps the original one. `tau = T + 1` never projects, `tau = 0` always does.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SwitchOffPolicy {
    pub tau: usize,
}

impl SwitchOffPolicy {
    pub fn new(tau: usize, schedule: &NoiseSchedule) -> Result<Self> {
        if tau > schedule.t_max() + 1 {
            return Err(Error::OutOfRange {
                what: "switch-off threshold",
                value: format!("{tau} (valid 0..={})", schedule.t_max() + 1),
            });
        }
        Ok(Self { tau })
    }

    /// Projects while `t > round(fraction * T)`, so 1.0 never projects and
    /// 0.0 always does.
    pub fn from_fraction(fraction: f64, schedule: &NoiseSchedule) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::OutOfRange {
                what: "switch-off fraction",
                value: fraction.to_string(),
            });
        }
        Self::new((fraction * schedule.t_max() as f64).round() as usize + 1, schedule)
    }

    pub fn uses_projection(&self, t: usize) -> bool {
        t >= self.tau
    }
}

pub struct SwitchOff<'a> {
    pub original: &'a Tensor,
    pub projected: &'a Tensor,
    pub policy: SwitchOffPolicy,
}

impl EmbeddingSchedule for SwitchOff<'_> {
    fn at(&self, t: usize) -> &Tensor {
        if self.policy.uses_projection(t) {
            self.projected
        } else {
            self.original
        }
    }
}

#[derive(Clone, Debug)]
pub struct SampleOutput {
    pub image: Image,
    /// Cross-attention maps at each requested timestep, in descending `t`.
    pub maps: Vec<(usize, CrossAttnMaps)>,
}

/// Draws one image. Noise comes from `Rng::new(seed)`; the result is clamped
/// to `[0, 1]` only after the final step. Maps are kept for timesteps listed
/// in `record`.
pub fn sample(
    denoiser: &DenoiserParams,
    embeddings: &impl EmbeddingSchedule,
    seed: u64,
    schedule: &NoiseSchedule,
    record: &[usize],
) -> Result<SampleOutput> {
    let mut rng = Rng::new(seed);
    let mut x: Tensor = rng.normal_tensor(&[PIXELS], 1.0);
    let mut maps = Vec::new();
    for t in (1..=schedule.t_max()).rev() {
        let (eps, m) = denoiser_forward(denoiser, &x, embeddings.at(t), t)?;
        if record.contains(&t) {
            maps.push((t, m));
        }
        let beta = schedule.beta(t);
        let alpha = 1.0 - beta;
        let ab = schedule.alpha_bar(t);
        let c_eps = (beta / (1.0 - ab).sqrt()) as f32;
        let inv = (1.0 / alpha.sqrt()) as f32;
        for (xv, &e) in x.data_mut().iter_mut().zip(eps.data()) {
            *xv = inv * (*xv - c_eps * e);
        }
        if t > 1 {
            let sigma = schedule.posterior_variance(t).sqrt();
            let z: Tensor = rng.normal_tensor(&[PIXELS], sigma);
            x.add_assign(&z);
        }
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("sampler produced non-finite pixels".into()));
    }
    let data = x.data().iter().map(|&v| ((v + 1.0) * 0.5).clamp(0.0, 1.0)).collect();
    Ok(SampleOutput {
        image: Image::from_vec(data)?,
        maps,
    })
}

/// Samples every `(embedding schedule, seed)` job in parallel; output order
/// matches `jobs`.
pub fn sample_many<E: EmbeddingSchedule>(
    denoiser: &DenoiserParams,
    jobs: &[(E, u64)],
    schedule: &NoiseSchedule,
) -> Result<Vec<Image>> {
    jobs.par_iter()
        .map(|(e, seed)| sample(denoiser, e, *seed, schedule, &[]).map(|o| o.image))
        .collect()
}

/// Writes one CSV per (block, timestep): `patch,token,weight` rows.
pub fn write_cross_attn_csv(dir: &Path, prefix: &str, maps: &[(usize, CrossAttnMaps)]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (t, m) in maps {
        for (b, w) in m.blocks.iter().enumerate() {
            let path = dir.join(format!("{prefix}_block{b}_t{t}.csv"));
            let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
            writeln!(f, "patch,token,weight")?;
            for i in 0..w.rows() {
                for (j, v) in w.row(i).iter().enumerate() {
                    writeln!(f, "{i},{j},{v}")?;
                }
            }
        }
    }
    Ok(())
}
