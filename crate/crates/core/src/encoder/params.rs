use crate::error::{Error, Result};
use crate::numkit::{ParamSet, Real, Rng, Tensor};
use crate::synthworld::{MAX_LEN, VOCAB_SIZE};

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub vocab: usize,
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub max_len: usize,
    pub mlp_ratio: usize,
    /// Token `i` attends only to tokens `j <= i`.
    pub causal: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab: VOCAB_SIZE,
            d: 32,
            heads: 4,
            layers: 4,
            max_len: MAX_LEN,
            mlp_ratio: 4,
            causal: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::Config(format!(
                "encoder width {} is not divisible by {} heads",
                self.d, self.heads
            )));
        }
        if self.layers == 0 || self.vocab == 0 || self.max_len == 0 || self.mlp_ratio == 0 {
            return Err(Error::Config("encoder sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }
}

/// Weights of one pre-norm transformer block. Attention projections hold all
/// heads side by side: head `h` owns columns `h*d_h..(h+1)*d_h` of `wq`, `wk`,
/// `wv` and rows `h*d_h..(h+1)*d_h` of `wo`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer<R = f32> {
    pub ln1_g: Tensor<R>,
    pub ln1_b: Tensor<R>,
    pub wq: Tensor<R>,
    pub wk: Tensor<R>,
    pub wv: Tensor<R>,
    pub wo: Tensor<R>,
    pub ln2_g: Tensor<R>,
    pub ln2_b: Tensor<R>,
    pub w1: Tensor<R>,
    pub b1: Tensor<R>,
    pub w2: Tensor<R>,
    pub b2: Tensor<R>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<R = f32> {
    pub config: EncoderConfig,
    pub tok_emb: Tensor<R>,
    pub pos_emb: Tensor<R>,
    pub layers: Vec<EncoderLayer<R>>,
    pub lnf_g: Tensor<R>,
    pub lnf_b: Tensor<R>,
}

impl<R: Real> EncoderParams<R> {
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::stream(seed, 0xe7c0);
        let d = config.d;
        let hidden = d * config.mlp_ratio;
        let w = |rng: &mut Rng, i: usize, o: usize, gain: f64| {
            rng.normal_tensor(&[i, o], gain / (i as f64).sqrt())
        };
        let resid_gain = 1.0 / (2.0 * config.layers as f64).sqrt();
        let layers = (0..config.layers)
            .map(|_| EncoderLayer {
                ln1_g: Tensor::full(&[d], R::one()),
                ln1_b: Tensor::zeros(&[d]),
                wq: w(&mut rng, d, d, 1.0),
                wk: w(&mut rng, d, d, 1.0),
                wv: w(&mut rng, d, d, 1.0),
                wo: w(&mut rng, d, d, resid_gain),
                ln2_g: Tensor::full(&[d], R::one()),
                ln2_b: Tensor::zeros(&[d]),
                w1: w(&mut rng, d, hidden, 1.0),
                b1: Tensor::zeros(&[hidden]),
                w2: w(&mut rng, hidden, d, resid_gain),
                b2: Tensor::zeros(&[d]),
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            tok_emb: rng.normal_tensor(&[config.vocab, d], 1.0),
            pos_emb: rng.normal_tensor(&[config.max_len, d], 0.5),
            layers,
            lnf_g: Tensor::full(&[d], R::one()),
            lnf_b: Tensor::zeros(&[d]),
        })
    }

    /// Same architecture, every tensor zero (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero();
        z
    }

    pub fn cast<S: Real>(&self) -> EncoderParams<S> {
        EncoderParams {
            config: self.config.clone(),
            tok_emb: self.tok_emb.cast(),
            pos_emb: self.pos_emb.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| EncoderLayer {
                    ln1_g: l.ln1_g.cast(),
                    ln1_b: l.ln1_b.cast(),
                    wq: l.wq.cast(),
                    wk: l.wk.cast(),
                    wv: l.wv.cast(),
                    wo: l.wo.cast(),
                    ln2_g: l.ln2_g.cast(),
                    ln2_b: l.ln2_b.cast(),
                    w1: l.w1.cast(),
                    b1: l.b1.cast(),
                    w2: l.w2.cast(),
                    b2: l.b2.cast(),
                })
                .collect(),
            lnf_g: self.lnf_g.cast(),
            lnf_b: self.lnf_b.cast(),
        }
    }
}

impl<R: Real> ParamSet<R> for EncoderParams<R> {
    fn named(&self) -> Vec<(String, &Tensor<R>)> {
        let mut out = vec![
            ("enc.tok_emb".to_string(), &self.tok_emb),
            ("enc.pos_emb".to_string(), &self.pos_emb),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            for (n, t) in [
                ("ln1_g", &l.ln1_g),
                ("ln1_b", &l.ln1_b),
                ("wq", &l.wq),
                ("wk", &l.wk),
                ("wv", &l.wv),
                ("wo", &l.wo),
                ("ln2_g", &l.ln2_g),
                ("ln2_b", &l.ln2_b),
                ("w1", &l.w1),
                ("b1", &l.b1),
                ("w2", &l.w2),
                ("b2", &l.b2),
            ] {
                out.push((format!("enc.l{i}.{n}"), t));
            }
        }
        out.push(("enc.lnf_g".into(), &self.lnf_g));
        out.push(("enc.lnf_b".into(), &self.lnf_b));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<R>> {
        let mut out = vec![&mut self.tok_emb, &mut self.pos_emb];
        for l in &mut self.layers {
            out.extend([
                &mut l.ln1_g,
                &mut l.ln1_b,
                &mut l.wq,
                &mut l.wk,
                &mut l.wv,
                &mut l.wo,
                &mut l.ln2_g,
                &mut l.ln2_b,
                &mut l.w1,
                &mut l.b1,
                &mut l.w2,
                &mut l.b2,
            ]);
        }
        out.push(&mut self.lnf_g);
        out.push(&mut self.lnf_b);
        out
    }
}
