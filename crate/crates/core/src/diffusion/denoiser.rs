//! Patch-transformer noise predictor conditioned on text embeddings through
//! one cross-attention per block.

use crate::error::{Error, Result};
use crate::numkit::nn::{self, AttnMask, LayerNormCache};
use crate::numkit::{ParamSet, Real, Rng, Tensor};
use crate::synthworld::{CANVAS, CHANNELS};

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserConfig {
    pub patch: usize,
    pub width: usize,
    pub blocks: usize,
    pub self_heads: usize,
    pub cross_heads: usize,
    pub mlp_ratio: usize,
    /// Width of the conditioning text embeddings.
    pub text_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            patch: 4,
            width: 64,
            blocks: 2,
            self_heads: 4,
            cross_heads: 1,
            mlp_ratio: 2,
            text_dim: 32,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || CANVAS % self.patch != 0 {
            return Err(Error::Config(format!("patch size {} must divide {CANVAS}", self.patch)));
        }
        for (what, heads) in [("self", self.self_heads), ("cross", self.cross_heads)] {
            if heads == 0 || self.width % heads != 0 {
                return Err(Error::Config(format!(
                    "denoiser width {} not divisible by {heads} {what}-attention heads",
                    self.width
                )));
            }
        }
        if self.width % 2 != 0 || self.blocks == 0 || self.mlp_ratio == 0 || self.text_dim == 0 {
            return Err(Error::Config("denoiser sizes must be positive and width even".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        CANVAS / self.patch
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * CHANNELS
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserBlock<R = f32> {
    pub ln1_g: Tensor<R>,
    pub ln1_b: Tensor<R>,
    pub sa_wq: Tensor<R>,
    pub sa_wk: Tensor<R>,
    pub sa_wv: Tensor<R>,
    pub sa_wo: Tensor<R>,
    pub ln2_g: Tensor<R>,
    pub ln2_b: Tensor<R>,
    pub ca_wq: Tensor<R>,
    pub ca_wk: Tensor<R>,
    pub ca_wv: Tensor<R>,
    pub ca_wo: Tensor<R>,
    pub ln3_g: Tensor<R>,
    pub ln3_b: Tensor<R>,
    pub w1: Tensor<R>,
    pub b1: Tensor<R>,
    pub w2: Tensor<R>,
    pub b2: Tensor<R>,
}

impl<R: Real> DenoiserBlock<R> {
    fn tensors(&self) -> [(&'static str, &Tensor<R>); 18] {
        [
            ("ln1_g", &self.ln1_g),
            ("ln1_b", &self.ln1_b),
            ("sa_wq", &self.sa_wq),
            ("sa_wk", &self.sa_wk),
            ("sa_wv", &self.sa_wv),
            ("sa_wo", &self.sa_wo),
            ("ln2_g", &self.ln2_g),
            ("ln2_b", &self.ln2_b),
            ("ca_wq", &self.ca_wq),
            ("ca_wk", &self.ca_wk),
            ("ca_wv", &self.ca_wv),
            ("ca_wo", &self.ca_wo),
            ("ln3_g", &self.ln3_g),
            ("ln3_b", &self.ln3_b),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor<R>; 18] {
        [
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.sa_wq,
            &mut self.sa_wk,
            &mut self.sa_wv,
            &mut self.sa_wo,
            &mut self.ln2_g,
            &mut self.ln2_b,
            &mut self.ca_wq,
            &mut self.ca_wk,
            &mut self.ca_wv,
            &mut self.ca_wo,
            &mut self.ln3_g,
            &mut self.ln3_b,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserParams<R = f32> {
    pub config: DenoiserConfig,
    pub patch_w: Tensor<R>,
    pub patch_b: Tensor<R>,
    pub pos: Tensor<R>,
    pub time_w: Tensor<R>,
    pub time_b: Tensor<R>,
    pub blocks: Vec<DenoiserBlock<R>>,
    pub lnf_g: Tensor<R>,
    pub lnf_b: Tensor<R>,
    pub head_w: Tensor<R>,
    pub head_b: Tensor<R>,
}

impl<R: Real> DenoiserParams<R> {
    /// Random initialization with a zero output head, so `eps_hat == 0`
    /// until training moves the head.
    pub fn init(config: &DenoiserConfig, seed: u64) -> Result<Self> {
        let mut p = Self::init_random_head(config, seed)?;
        p.head_w.fill(R::zero());
        p.head_b.fill(R::zero());
        Ok(p)
    }

    /// Random initialization including the output head.
    pub fn init_random_head(config: &DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::stream(seed, 0xd3e0);
        let w = config.width;
        let hidden = w * config.mlp_ratio;
        let mat = |rng: &mut Rng, i: usize, o: usize, gain: f64| rng.normal_tensor(&[i, o], gain / (i as f64).sqrt());
        let resid = 1.0 / (3.0 * config.blocks as f64).sqrt();
        let ones = || Tensor::full(&[w], R::one());
        let blocks = (0..config.blocks)
            .map(|_| DenoiserBlock {
                ln1_g: ones(),
                ln1_b: Tensor::zeros(&[w]),
                sa_wq: mat(&mut rng, w, w, 1.0),
                sa_wk: mat(&mut rng, w, w, 1.0),
                sa_wv: mat(&mut rng, w, w, 1.0),
                sa_wo: mat(&mut rng, w, w, resid),
                ln2_g: ones(),
                ln2_b: Tensor::zeros(&[w]),
                ca_wq: mat(&mut rng, w, w, 1.0),
                ca_wk: mat(&mut rng, config.text_dim, w, 1.0),
                ca_wv: mat(&mut rng, config.text_dim, w, 1.0),
                ca_wo: mat(&mut rng, w, w, resid),
                ln3_g: ones(),
                ln3_b: Tensor::zeros(&[w]),
                w1: mat(&mut rng, w, hidden, 1.0),
                b1: Tensor::zeros(&[hidden]),
                w2: mat(&mut rng, hidden, w, resid),
                b2: Tensor::zeros(&[w]),
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            patch_w: mat(&mut rng, config.patch_dim(), w, 1.0),
            patch_b: Tensor::zeros(&[w]),
            pos: rng.normal_tensor(&[config.num_patches(), w], 0.5),
            time_w: mat(&mut rng, w, w, 1.0),
            time_b: Tensor::zeros(&[w]),
            blocks,
            lnf_g: ones(),
            lnf_b: Tensor::zeros(&[w]),
            head_w: mat(&mut rng, w, config.patch_dim(), 1.0),
            head_b: Tensor::zeros(&[config.patch_dim()]),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero();
        z
    }

    pub fn cast<S: Real>(&self) -> DenoiserParams<S> {
        let mut out = DenoiserParams::<S>::init(&self.config, 0).expect("config already validated");
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            *dst = src.cast();
        }
        out
    }
}

impl<R: Real> ParamSet<R> for DenoiserParams<R> {
    fn named(&self) -> Vec<(String, &Tensor<R>)> {
        let mut out = vec![
            ("den.patch_w".to_string(), &self.patch_w),
            ("den.patch_b".to_string(), &self.patch_b),
            ("den.pos".to_string(), &self.pos),
            ("den.time_w".to_string(), &self.time_w),
            ("den.time_b".to_string(), &self.time_b),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(b.tensors().into_iter().map(|(n, t)| (format!("den.b{i}.{n}"), t)));
        }
        out.extend([
            ("den.lnf_g".to_string(), &self.lnf_g),
            ("den.lnf_b".to_string(), &self.lnf_b),
            ("den.head_w".to_string(), &self.head_w),
            ("den.head_b".to_string(), &self.head_b),
        ]);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<R>> {
        let mut out = vec![
            &mut self.patch_w,
            &mut self.patch_b,
            &mut self.pos,
            &mut self.time_w,
            &mut self.time_b,
        ];
        for b in &mut self.blocks {
            out.extend(b.tensors_mut());
        }
        out.extend([&mut self.lnf_g, &mut self.lnf_b, &mut self.head_w, &mut self.head_b]);
        out
    }
}

/// Sinusoidal embedding of timestep `t` (`1 x width`).
pub fn time_embedding<R: Real>(t: usize, width: usize) -> Tensor<R> {
    let half = width / 2;
    let mut e = Tensor::zeros(&[1, width]);
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let a = t as f64 * freq;
        e.data_mut()[i] = R::of(a.sin());
        e.data_mut()[half + i] = R::of(a.cos());
    }
    e
}

/// Image (`16*16*3`, channels last) to patch rows (`patches x patch_dim`).
pub fn patchify<R: Real>(x: &Tensor<R>, cfg: &DenoiserConfig) -> Tensor<R> {
    let (p, g) = (cfg.patch, cfg.grid());
    let mut out = Tensor::zeros(&[cfg.num_patches(), cfg.patch_dim()]);
    for pr in 0..g {
        for pc in 0..g {
            let row = out.row_mut(pr * g + pc);
            let mut k = 0;
            for r in 0..p {
                for c in 0..p {
                    let base = ((pr * p + r) * CANVAS + pc * p + c) * CHANNELS;
                    row[k..k + CHANNELS].copy_from_slice(&x.data()[base..base + CHANNELS]);
                    k += CHANNELS;
                }
            }
        }
    }
    out
}

pub fn unpatchify<R: Real>(patches: &Tensor<R>, cfg: &DenoiserConfig) -> Tensor<R> {
    let (p, g) = (cfg.patch, cfg.grid());
    let mut out = Tensor::zeros(&[CANVAS * CANVAS * CHANNELS]);
    for pr in 0..g {
        for pc in 0..g {
            let row = patches.row(pr * g + pc);
            let mut k = 0;
            for r in 0..p {
                for c in 0..p {
                    let base = ((pr * p + r) * CANVAS + pc * p + c) * CHANNELS;
                    out.data_mut()[base..base + CHANNELS].copy_from_slice(&row[k..k + CHANNELS]);
                    k += CHANNELS;
                }
            }
        }
    }
    out
}

/// Head-averaged cross-attention weights (`patches x tokens`) per block.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossAttnMaps<R = f32> {
    pub blocks: Vec<Tensor<R>>,
}

struct BlockCache<R> {
    ln1: LayerNormCache<R>,
    a: Tensor<R>,
    sq: Tensor<R>,
    sk: Tensor<R>,
    sv: Tensor<R>,
    sprobs: Vec<Tensor<R>>,
    sz: Tensor<R>,
    ln2: LayerNormCache<R>,
    b: Tensor<R>,
    cq: Tensor<R>,
    ck: Tensor<R>,
    cv: Tensor<R>,
    cprobs: Vec<Tensor<R>>,
    cz: Tensor<R>,
    ln3: LayerNormCache<R>,
    e: Tensor<R>,
    m_pre: Tensor<R>,
    m_act: Tensor<R>,
}

pub struct DenoiserTape<R = f32> {
    patches: Tensor<R>,
    temb: Tensor<R>,
    blocks: Vec<BlockCache<R>>,
    lnf: LayerNormCache<R>,
    y: Tensor<R>,
}

impl<R: Real> DenoiserTape<R> {
    pub fn maps(&self) -> CrossAttnMaps<R> {
        CrossAttnMaps {
            blocks: self.blocks.iter().map(|b| head_mean(&b.cprobs)).collect(),
        }
    }
}

fn head_mean<R: Real>(probs: &[Tensor<R>]) -> Tensor<R> {
    let mut m = probs[0].clone();
    for p in &probs[1..] {
        m.add_assign(p);
    }
    m.scale(R::one() / R::of(probs.len() as f64));
    m
}

fn add_rows<R: Real>(x: &mut Tensor<R>, row: &[R]) {
    for i in 0..x.rows() {
        for (v, &r) in x.row_mut(i).iter_mut().zip(row) {
            *v += r;
        }
    }
}

/// Noise prediction for `x_t` (model space, `16*16*3`) under embeddings
/// `c` (`n x text_dim`) at timestep `t`, with the tape for backward.
pub fn denoiser_forward_with_tape<R: Real>(
    params: &DenoiserParams<R>,
    x_t: &Tensor<R>,
    c: &Tensor<R>,
    t: usize,
) -> Result<(Tensor<R>, DenoiserTape<R>)> {
    let cfg = &params.config;
    if c.dims().len() != 2 || c.cols() != cfg.text_dim {
        return Err(Error::Shape(format!(
            "text embeddings {:?} do not have width {}",
            c.dims(),
            cfg.text_dim
        )));
    }
    if x_t.len() != CANVAS * CANVAS * CHANNELS {
        return Err(Error::Shape(format!("x_t has {} values", x_t.len())));
    }
    let patches = patchify(x_t, cfg);
    let temb = time_embedding::<R>(t, cfg.width);
    let tvec = nn::linear(&temb, &params.time_w, Some(&params.time_b));
    let mut h = nn::linear(&patches, &params.patch_w, Some(&params.patch_b));
    h.add_assign(&params.pos);
    add_rows(&mut h, tvec.data());
    let mut caches = Vec::with_capacity(params.blocks.len());
    for blk in &params.blocks {
        let (a, ln1) = nn::layer_norm(&h, &blk.ln1_g, &blk.ln1_b);
        let sq = nn::linear(&a, &blk.sa_wq, None);
        let sk = nn::linear(&a, &blk.sa_wk, None);
        let sv = nn::linear(&a, &blk.sa_wv, None);
        let (sz, sprobs) = nn::attention(&sq, &sk, &sv, cfg.self_heads, AttnMask::default());
        h.add_assign(&nn::linear(&sz, &blk.sa_wo, None));

        let (b, ln2) = nn::layer_norm(&h, &blk.ln2_g, &blk.ln2_b);
        let cq = nn::linear(&b, &blk.ca_wq, None);
        let ck = nn::linear(c, &blk.ca_wk, None);
        let cv = nn::linear(c, &blk.ca_wv, None);
        let (cz, cprobs) = nn::attention(&cq, &ck, &cv, cfg.cross_heads, AttnMask::default());
        h.add_assign(&nn::linear(&cz, &blk.ca_wo, None));

        let (e, ln3) = nn::layer_norm(&h, &blk.ln3_g, &blk.ln3_b);
        let m_pre = nn::linear(&e, &blk.w1, Some(&blk.b1));
        let m_act = nn::gelu(&m_pre);
        h.add_assign(&nn::linear(&m_act, &blk.w2, Some(&blk.b2)));
        caches.push(BlockCache {
            ln1,
            a,
            sq,
            sk,
            sv,
            sprobs,
            sz,
            ln2,
            b,
            cq,
            ck,
            cv,
            cprobs,
            cz,
            ln3,
            e,
            m_pre,
            m_act,
        });
    }
    let (y, lnf) = nn::layer_norm(&h, &params.lnf_g, &params.lnf_b);
    let out = nn::linear(&y, &params.head_w, Some(&params.head_b));
    let eps = unpatchify(&out, cfg);
    Ok((
        eps,
        DenoiserTape {
            patches,
            temb,
            blocks: caches,
            lnf,
            y,
        },
    ))
}

/// `eps_hat` and the cross-attention maps of this call.
pub fn denoiser_forward<R: Real>(
    params: &DenoiserParams<R>,
    x_t: &Tensor<R>,
    c: &Tensor<R>,
    t: usize,
) -> Result<(Tensor<R>, CrossAttnMaps<R>)> {
    let (eps, tape) = denoiser_forward_with_tape(params, x_t, c, t)?;
    Ok((eps, tape.maps()))
}

/// Backpropagates `d_eps` (same layout as the prediction). Parameter
/// gradients accumulate into `grads`; the gradient with respect to the text
/// embeddings is returned.
pub fn denoiser_backward<R: Real>(
    params: &DenoiserParams<R>,
    tape: &DenoiserTape<R>,
    c: &Tensor<R>,
    d_eps: &Tensor<R>,
    grads: &mut DenoiserParams<R>,
) -> Tensor<R> {
    let cfg = &params.config;
    let dout = patchify(d_eps, cfg);
    let dy = nn::linear_backward(&tape.y, &params.head_w, &dout, &mut grads.head_w, Some(&mut grads.head_b));
    let mut dh = nn::layer_norm_backward(&tape.lnf, &params.lnf_g, &dy, &mut grads.lnf_g, &mut grads.lnf_b);
    let mut dc = Tensor::zeros(c.dims());
    for bi in (0..params.blocks.len()).rev() {
        let blk = &params.blocks[bi];
        let g = &mut grads.blocks[bi];
        let k = &tape.blocks[bi];

        let dm_act = nn::linear_backward(&k.m_act, &blk.w2, &dh, &mut g.w2, Some(&mut g.b2));
        let dm_pre = nn::gelu_backward(&k.m_pre, &dm_act);
        let de = nn::linear_backward(&k.e, &blk.w1, &dm_pre, &mut g.w1, Some(&mut g.b1));
        dh.add_assign(&nn::layer_norm_backward(&k.ln3, &blk.ln3_g, &de, &mut g.ln3_g, &mut g.ln3_b));

        let dcz = nn::linear_backward(&k.cz, &blk.ca_wo, &dh, &mut g.ca_wo, None);
        let (dcq, dck, dcv) = nn::attention_backward(&k.cq, &k.ck, &k.cv, &k.cprobs, &dcz);
        let db = nn::linear_backward(&k.b, &blk.ca_wq, &dcq, &mut g.ca_wq, None);
        dc.add_assign(&nn::linear_backward(c, &blk.ca_wk, &dck, &mut g.ca_wk, None));
        dc.add_assign(&nn::linear_backward(c, &blk.ca_wv, &dcv, &mut g.ca_wv, None));
        dh.add_assign(&nn::layer_norm_backward(&k.ln2, &blk.ln2_g, &db, &mut g.ln2_g, &mut g.ln2_b));

        let dsz = nn::linear_backward(&k.sz, &blk.sa_wo, &dh, &mut g.sa_wo, None);
        let (dsq, dsk, dsv) = nn::attention_backward(&k.sq, &k.sk, &k.sv, &k.sprobs, &dsz);
        let mut da = nn::linear_backward(&k.a, &blk.sa_wq, &dsq, &mut g.sa_wq, None);
        da.add_assign(&nn::linear_backward(&k.a, &blk.sa_wk, &dsk, &mut g.sa_wk, None));
        da.add_assign(&nn::linear_backward(&k.a, &blk.sa_wv, &dsv, &mut g.sa_wv, None));
        dh.add_assign(&nn::layer_norm_backward(&k.ln1, &blk.ln1_g, &da, &mut g.ln1_g, &mut g.ln1_b));
    }
    // input embedding: h = patches W + b + pos + tvec
    nn::linear_backward_params(&tape.patches, &dh, &mut grads.patch_w, Some(&mut grads.patch_b));
    grads.pos.add_assign(&dh);
    let mut dtvec = Tensor::zeros(&[1, cfg.width]);
    for i in 0..dh.rows() {
        for (a, &b) in dtvec.data_mut().iter_mut().zip(dh.row(i)) {
            *a += b;
        }
    }
    nn::linear_backward_params(&tape.temb, &dtvec, &mut grads.time_w, Some(&mut grads.time_b));
    dc
}
