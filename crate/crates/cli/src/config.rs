//! Line-based `key = value` run configuration with a fixed schema.

use std::collections::BTreeMap;
use std::path::Path;

use compbind::correct::{MaskPreset, TrainConfig};
use compbind::diffusion::{DenoiserConfig, DiffusionTrainConfig, NoiseSchedule};
use compbind::encoder::EncoderConfig;
use compbind::numkit::MultiStepLr;
use compbind::pipeline::PretrainConfig;
use compbind::synthworld::CorpusConfig;

use crate::Invalid;

#[derive(Clone, Copy)]
enum Kind {
    U,
    F,
    B,
    Mask,
}

/// Every accepted key with its default and value type.
const SCHEMA: &[(&str, &str, Kind)] = &[
    ("corpus.n_samples", "20000", Kind::U),
    ("corpus.p_corrupt", "0.5", Kind::F),
    ("corpus.single_fraction", "0.3", Kind::F),
    ("encoder.causal", "true", Kind::B),
    ("encoder.layers", "4", Kind::U),
    ("encoder.heads", "4", Kind::U),
    ("diffusion.t_max", "200", Kind::U),
    ("diffusion.beta_start", "0.0001", Kind::F),
    ("diffusion.beta_end", "0.02", Kind::F),
    ("diffusion.steps", "20000", Kind::U),
    ("diffusion.batch", "8", Kind::U),
    ("diffusion.lr", "0.002", Kind::F),
    ("diffusion.cross_heads", "1", Kind::U),
    ("proj.s", "2", Kind::U),
    ("proj.steps", "3000", Kind::U),
    ("proj.batch", "4", Kind::U),
    ("proj.lr", "0.001", Kind::F),
    ("proj.gamma", "0.1", Kind::F),
    ("eval.seeds", "8", Kind::U),
    ("eval.tuning_seeds", "4", Kind::U),
    ("eval.reference_size", "512", Kind::U),
    ("eval.tau", "0.8", Kind::F),
    ("eval.embed_steps", "300", Kind::U),
    ("eval.embed_lr", "0.01", Kind::F),
    ("eval.mask", "all", Kind::Mask),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: SCHEMA.iter().map(|&(k, v, _)| (k, v.to_string())).collect(),
        }
    }
}

impl RunConfig {
    /// Defaults overridden by `text`. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, Invalid> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Invalid(format!("config line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Invalid> {
        let text = std::fs::read_to_string(path).map_err(|e| Invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), Invalid> {
        let k = SCHEMA
            .iter()
            .map(|&(k, _, _)| k)
            .find(|&k| k == key)
            .ok_or_else(|| Invalid(format!("unknown config key `{key}`")))?;
        self.values.insert(k, value.to_string());
        Ok(())
    }

    /// Canonical text: every key in schema order.
    pub fn to_text(&self) -> String {
        SCHEMA.iter().map(|&(k, _, _)| format!("{k} = {}\n", self.values[k])).collect()
    }

    fn raw(&self, key: &str) -> &str {
        &self.values[key]
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T, Invalid> {
        self.raw(key)
            .parse()
            .map_err(|_| Invalid(format!("config key `{key}` has invalid value `{}`", self.raw(key))))
    }

    pub fn usize(&self, key: &str) -> Result<usize, Invalid> {
        self.get(key)
    }

    pub fn f64(&self, key: &str) -> Result<f64, Invalid> {
        let v: f64 = self.get(key)?;
        if !v.is_finite() {
            return Err(Invalid(format!("config key `{key}` must be finite")));
        }
        Ok(v)
    }

    /// Parses every typed key once so errors surface before any work starts.
    fn check(&self) -> Result<(), Invalid> {
        for &(k, _, kind) in SCHEMA {
            match kind {
                Kind::U => drop(self.usize(k)?),
                Kind::F => drop(self.f64(k)?),
                Kind::B => drop(self.get::<bool>(k)?),
                Kind::Mask => drop(self.mask()?),
            }
        }
        self.corpus(0)?.validate().map_err(invalid)?;
        self.schedule()?;
        let tau = self.f64("eval.tau")?;
        if !(0.0..=1.0).contains(&tau) {
            return Err(Invalid(format!("eval.tau {tau} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn corpus(&self, seed: u64) -> Result<CorpusConfig, Invalid> {
        Ok(CorpusConfig {
            n_samples: self.usize("corpus.n_samples")?,
            p_corrupt: self.f64("corpus.p_corrupt")?,
            single_fraction: self.f64("corpus.single_fraction")?,
            seed,
        })
    }

    pub fn schedule(&self) -> Result<NoiseSchedule, Invalid> {
        NoiseSchedule::linear(
            self.usize("diffusion.t_max")?,
            self.f64("diffusion.beta_start")?,
            self.f64("diffusion.beta_end")?,
        )
        .map_err(invalid)
    }

    pub fn pretrain(&self, seed: u64) -> Result<PretrainConfig, Invalid> {
        let steps = self.usize("diffusion.steps")?;
        let mut cfg = PretrainConfig::new(steps, self.get("encoder.causal")?, seed);
        cfg.encoder = EncoderConfig {
            layers: self.usize("encoder.layers")?,
            heads: self.usize("encoder.heads")?,
            ..cfg.encoder
        };
        cfg.denoiser = DenoiserConfig {
            cross_heads: self.usize("diffusion.cross_heads")?,
            ..cfg.denoiser
        };
        cfg.train = DiffusionTrainConfig {
            batch: self.usize("diffusion.batch")?,
            lr: MultiStepLr {
                base: self.f64("diffusion.lr")?,
                ..cfg.train.lr
            },
            ..cfg.train
        };
        cfg.encoder.validate().map_err(invalid)?;
        cfg.denoiser.validate().map_err(invalid)?;
        cfg.train.validate().map_err(invalid)?;
        Ok(cfg)
    }

    pub fn projection(&self, seed: u64) -> Result<TrainConfig, Invalid> {
        let cfg = TrainConfig {
            steps: self.usize("proj.steps")?,
            batch: self.usize("proj.batch")?,
            lr: self.f64("proj.lr")?,
            gamma: self.f64("proj.gamma")?,
            seed,
            ..TrainConfig::desk()
        };
        cfg.validate().map_err(invalid)?;
        Ok(cfg)
    }

    pub fn mask(&self) -> Result<MaskPreset, Invalid> {
        MaskPreset::parse(self.raw("eval.mask")).map_err(invalid)
    }
}

pub fn invalid(e: compbind::Error) -> Invalid {
    Invalid(e.to_string())
}
