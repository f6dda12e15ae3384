use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numkit::Rng;
use crate::synthworld::image::{render_scene, Image, PIXELS};
use crate::synthworld::scene::{ObjectSpec, SceneSpec};
use crate::synthworld::vocab::{make_prompt, PromptTemplate, Slots, NO_SLOT};

pub const DATASET_MAGIC: &[u8; 4] = b"CBD1";

/// Seed of the fixed shuffle that carves evaluation prompts out of the
/// distinct-colour pair set.
const SPLIT_SEED: u64 = 0x5_eed0_fb1d;
pub const HELDOUT_COUNT: usize = 64;
pub const TUNING_COUNT: usize = 5;

fn split_order() -> Vec<SceneSpec> {
    let mut all = SceneSpec::distinct_color_pairs();
    Rng::new(SPLIT_SEED).shuffle(&mut all);
    all
}

/// The 64 two-object scenes never shown during training.
pub fn heldout_scenes() -> Vec<SceneSpec> {
    split_order().into_iter().take(HELDOUT_COUNT).collect()
}

/// Five training-split scenes used to tune reweighting parameters.
pub fn tuning_scenes() -> Vec<SceneSpec> {
    split_order()
        .into_iter()
        .skip(HELDOUT_COUNT)
        .take(TUNING_COUNT)
        .collect()
}

/// Two-object scenes available to training corpora.
pub fn training_pairs() -> Vec<SceneSpec> {
    split_order().into_iter().skip(HELDOUT_COUNT).collect()
}

/// All 24 single-object scenes.
pub fn single_scenes() -> Vec<SceneSpec> {
    ObjectSpec::all().map(SceneSpec::single).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusConfig {
    pub n_samples: usize,
    /// Probability that a two-object caption has its colours swapped.
    pub p_corrupt: f64,
    pub single_fraction: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_samples: 20_000,
            p_corrupt: 0.5,
            single_fraction: 0.3,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config("corpus.n_samples must be positive".into()));
        }
        for (name, p) in [("p_corrupt", self.p_corrupt), ("single_fraction", self.single_fraction)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("corpus.{name} = {p} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("n_samples", self.n_samples.to_string()),
            ("p_corrupt", self.p_corrupt.to_string()),
            ("single_fraction", self.single_fraction.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub caption: PromptTemplate,
    /// Whether the caption was mis-bound on purpose (not stored on disk).
    pub corrupted: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub samples: Vec<Sample>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn corrupted_fraction(&self) -> f64 {
        let pairs = self.samples.iter().filter(|s| s.caption.slots.a2.is_some()).count();
        let bad = self.samples.iter().filter(|s| s.corrupted).count();
        bad as f64 / pairs.max(1) as f64
    }
}

/// Sample `i` draws from substream `i` of the corpus seed, so generation
/// order and thread count do not affect the result.
pub fn gen_corpus(config: &CorpusConfig) -> Result<Corpus> {
    config.validate()?;
    let pairs = training_pairs();
    let singles = single_scenes();
    let samples = (0..config.n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = Rng::stream(config.seed, i as u64);
            let scene = if rng.bernoulli(config.single_fraction) {
                singles[rng.below(singles.len())]
            } else {
                pairs[rng.below(pairs.len())]
            };
            let corrupted = scene.is_pair() && rng.bernoulli(config.p_corrupt);
            let described = if corrupted {
                scene.with_colors_swapped()
            } else {
                scene
            };
            Ok(Sample {
                image: render_scene(&scene),
                caption: make_prompt(&described)?,
                corrupted,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { samples })
}

fn put_u16(w: &mut impl Write, v: u16) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

/// Write a `CBD1` dataset and its `.manifest` sidecar.
pub fn write_corpus(path: &Path, corpus: &Corpus, config: &CorpusConfig) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&(corpus.len() as u32).to_le_bytes())?;
    for s in &corpus.samples {
        put_u16(&mut w, s.caption.tokens.len() as u16)?;
        for &t in &s.caption.tokens {
            put_u16(&mut w, t)?;
        }
        for slot in s.caption.slots.as_array() {
            put_u16(&mut w, slot.map_or(NO_SLOT, |p| p as u16))?;
        }
        for &v in s.image.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    let mut manifest = String::new();
    for (k, v) in config.entries() {
        manifest.push_str(&format!("corpus.{k}={v}\n"));
    }
    manifest.push_str(&format!("samples={}\n", corpus.len()));
    fs::write(manifest_path(path), manifest)?;
    Ok(())
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".manifest");
    PathBuf::from(p)
}

fn get_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

/// Read a `CBD1` dataset. The corruption flag is not persisted and reads
/// back as `false`.
pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Format(format!("{} is not a CBD1 dataset", path.display())));
    }
    let mut n = [0u8; 4];
    r.read_exact(&mut n)?;
    let n = u32::from_le_bytes(n) as usize;
    let mut samples = Vec::with_capacity(n);
    let mut buf = vec![0u8; PIXELS * 4];
    for _ in 0..n {
        let len = get_u16(&mut r)? as usize;
        let tokens = (0..len).map(|_| get_u16(&mut r)).collect::<Result<Vec<_>>>()?;
        let mut slot = [None; 4];
        for s in slot.iter_mut() {
            let v = get_u16(&mut r)?;
            *s = (v != NO_SLOT).then_some(v as usize);
        }
        let slots = Slots {
            a1: slot[0],
            o1: slot[1],
            a2: slot[2],
            o2: slot[3],
        };
        r.read_exact(&mut buf)?;
        let data = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        samples.push(Sample {
            image: Image::from_vec(data)?,
            caption: PromptTemplate::new(tokens, slots)?,
            corrupted: false,
        });
    }
    Ok(Corpus { samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_are_disjoint_and_sized() {
        let held = heldout_scenes();
        let tune = tuning_scenes();
        let train = training_pairs();
        assert_eq!(held.len(), HELDOUT_COUNT);
        assert_eq!(tune.len(), TUNING_COUNT);
        assert_eq!(train.len(), 504 - HELDOUT_COUNT);
        assert!(held.iter().all(|h| !train.contains(h)));
        assert!(tune.iter().all(|t| train.contains(t)));
    }

    #[test]
    fn corruption_swaps_colours_only() {
        let cfg = CorpusConfig {
            n_samples: 200,
            p_corrupt: 1.0,
            single_fraction: 0.0,
            seed: 3,
        };
        let c = gen_corpus(&cfg).unwrap();
        assert!(c.samples.iter().all(|s| s.corrupted));
        assert_eq!(c.corrupted_fraction(), 1.0);
    }

    #[test]
    fn binomial_fraction_at_half() {
        let cfg = CorpusConfig {
            n_samples: 10_000,
            p_corrupt: 0.5,
            single_fraction: 0.0,
            seed: 99,
        };
        // sd of the fraction is 0.005; +-0.02 is a 4-sigma band
        let f = gen_corpus(&cfg).unwrap().corrupted_fraction();
        assert!((f - 0.5).abs() <= 0.02, "{f}");
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            CorpusConfig { n_samples: 0, ..Default::default() },
            CorpusConfig { p_corrupt: 1.5, ..Default::default() },
            CorpusConfig { single_fraction: -0.1, ..Default::default() },
        ];
        for cfg in bad {
            assert!(gen_corpus(&cfg).is_err());
        }
    }

    #[test]
    fn file_round_trip_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CorpusConfig {
            n_samples: 50,
            seed: 5,
            ..Default::default()
        };
        let a = gen_corpus(&cfg).unwrap();
        let b = gen_corpus(&cfg).unwrap();
        assert_eq!(a, b);
        let pa = dir.path().join("a.cbd");
        let pb = dir.path().join("b.cbd");
        write_corpus(&pa, &a, &cfg).unwrap();
        write_corpus(&pb, &b, &cfg).unwrap();
        assert_eq!(fs::read(&pa).unwrap(), fs::read(&pb).unwrap());
        let back = read_corpus(&pa).unwrap();
        assert_eq!(back.len(), 50);
        for (x, y) in back.samples.iter().zip(&a.samples) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.caption, y.caption);
        }
        let manifest = fs::read_to_string(manifest_path(&pa)).unwrap();
        assert!(manifest.contains("corpus.p_corrupt=0.5"));
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.cbd");
        fs::write(&p, b"NOPE\0\0\0\0").unwrap();
        assert!(matches!(read_corpus(&p), Err(Error::Format(_))));
    }
}
